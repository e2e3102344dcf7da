//! Result rows and their CSV/JSON encodings.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `mode` | experiment mode of the row |
//! | `grid_index` | index into `lambda_grid` (autoencoder) or `mu_grid` (superposition); 0 for coset |
//! | `code_index` | index of the sampled baseline code, empty for autoencoder rows |
//! | `lambda` | `lambda_1` for autoencoder rows, `mu` for superposition rows, empty for coset |
//! | `ebn0_db` | evaluation Eb/N0 |
//! | `seed` | Monte Carlo seed of this row |
//! | `code_digest` | digest of the code (training config or codebook text) |
//! | `total_trials`, `message_errors`, `ci_limited` | run totals |
//! | `pe_i`, `ci_lo_i`, `ci_hi_i`, `trials_i`, `errors_i` | per class, `i = 1..C` |
//!
//! Floats are written with 10 significant digits.

use std::io::{Read, Write};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use uep_core::montecarlo::ErrorProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub pe: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: String,
    pub grid_index: usize,
    pub code_index: Option<usize>,
    pub lambda: Option<f64>,
    pub ebn0_db: f64,
    pub seed: u64,
    pub code_digest: String,
    pub total_trials: u64,
    pub message_errors: u64,
    pub ci_limited: bool,
    pub classes: Vec<ClassResult>,
}

impl ResultRow {
    pub fn from_profile(
        mode: &str,
        grid_index: usize,
        code_index: Option<usize>,
        lambda: Option<f64>,
        seed: u64,
        code_digest: &str,
        profile: &ErrorProfile,
    ) -> Self {
        let classes = profile
            .classes
            .iter()
            .map(|c| {
                let (ci_lo, ci_hi) = c.wilson();
                ClassResult {
                    pe: c.estimate(),
                    ci_lo,
                    ci_hi,
                    trials: c.trials,
                    errors: c.errors,
                }
            })
            .collect();
        Self {
            mode: mode.to_string(),
            grid_index,
            code_index,
            lambda,
            ebn0_db: profile.ebn0_db,
            seed,
            code_digest: code_digest.to_string(),
            total_trials: profile.total_trials,
            message_errors: profile.message_errors,
            ci_limited: profile.ci_limited,
            classes,
        }
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.pe).collect()
    }

    pub fn is_ae(&self) -> bool {
        self.mode.starts_with("ae_")
    }
}

const FIXED: [&str; 10] = [
    "mode",
    "grid_index",
    "code_index",
    "lambda",
    "ebn0_db",
    "seed",
    "code_digest",
    "total_trials",
    "message_errors",
    "ci_limited",
];

const PER_CLASS: [&str; 5] = ["pe", "ci_lo", "ci_hi", "trials", "errors"];

pub fn csv_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    for i in 1..=num_classes {
        h.extend(PER_CLASS.iter().map(|p| format!("{p}_{i}")));
    }
    h
}

fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9e}")
    } else {
        format!("{v}")
    }
}

/// Writes the header and one record per row. Every row must have
/// `num_classes` classes.
pub fn emit_csv(rows: &[ResultRow], num_classes: usize, w: impl Write) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(csv_header(num_classes))?;
    for row in rows {
        if row.classes.len() != num_classes {
            bail!("row has {} classes, header {num_classes}", row.classes.len());
        }
        let mut rec = vec![
            row.mode.clone(),
            row.grid_index.to_string(),
            row.code_index.map(|i| i.to_string()).unwrap_or_default(),
            row.lambda.map(fmt_float).unwrap_or_default(),
            fmt_float(row.ebn0_db),
            row.seed.to_string(),
            row.code_digest.clone(),
            row.total_trials.to_string(),
            row.message_errors.to_string(),
            row.ci_limited.to_string(),
        ];
        for c in &row.classes {
            rec.extend([
                fmt_float(c.pe),
                fmt_float(c.ci_lo),
                fmt_float(c.ci_hi),
                c.trials.to_string(),
                c.errors.to_string(),
            ]);
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_csv(r: impl Read) -> anyhow::Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < FIXED.len() || header[..FIXED.len()] != FIXED {
        bail!("unexpected CSV header {header:?}");
    }
    let extra = header.len() - FIXED.len();
    if !extra.is_multiple_of(PER_CLASS.len()) {
        bail!("per-class columns are incomplete");
    }
    let num_classes = extra / PER_CLASS.len();
    if header != csv_header(num_classes) {
        bail!("unexpected CSV header {header:?}");
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("record {}", line + 1);
        let f = |i: usize| -> anyhow::Result<f64> { Ok(rec[i].parse::<f64>()?) };
        let u = |i: usize| -> anyhow::Result<u64> { Ok(rec[i].parse::<u64>()?) };
        let opt = |i: usize| (!rec[i].is_empty()).then(|| rec[i].to_string());
        let mut classes = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let b = FIXED.len() + c * PER_CLASS.len();
            classes.push(ClassResult {
                pe: f(b).with_context(ctx)?,
                ci_lo: f(b + 1).with_context(ctx)?,
                ci_hi: f(b + 2).with_context(ctx)?,
                trials: u(b + 3).with_context(ctx)?,
                errors: u(b + 4).with_context(ctx)?,
            });
        }
        rows.push(ResultRow {
            mode: rec[0].to_string(),
            grid_index: rec[1].parse().with_context(ctx)?,
            code_index: opt(2).map(|s| s.parse()).transpose().with_context(ctx)?,
            lambda: opt(3).map(|s| s.parse()).transpose().with_context(ctx)?,
            ebn0_db: f(4).with_context(ctx)?,
            seed: u(5).with_context(ctx)?,
            code_digest: rec[6].to_string(),
            total_trials: u(7).with_context(ctx)?,
            message_errors: u(8).with_context(ctx)?,
            ci_limited: rec[9].parse().with_context(ctx)?,
            classes,
        });
    }
    Ok(rows)
}

pub fn read_csv_file(path: &std::path::Path) -> anyhow::Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_csv(file).with_context(|| format!("while reading {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pe: f64) -> ResultRow {
        ResultRow {
            mode: "baseline_superposition".into(),
            grid_index: 2,
            code_index: Some(17),
            lambda: Some(0.5),
            ebn0_db: 5.0,
            seed: 42,
            code_digest: "00ff".into(),
            total_trials: 1000,
            message_errors: 12,
            ci_limited: false,
            classes: vec![
                ClassResult { pe, ci_lo: 0.01, ci_hi: 0.3, trials: 1000, errors: 5 },
                ClassResult { pe: 0.012, ci_lo: 0.005, ci_hi: 0.02, trials: 1000, errors: 12 },
            ],
        }
    }

    #[test]
    fn zero_rows_give_header_only() {
        let mut buf = Vec::new();
        emit_csv(&[], 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("mode,grid_index,code_index,lambda,ebn0_db"));
        assert!(text.trim_end().ends_with("errors_2"));
        assert!(parse_csv(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let rows = vec![row(0.005), row(1.0 / 3.0)];
        let mut buf = Vec::new();
        emit_csv(&rows, 2, &mut buf).unwrap();
        let back = parse_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!((back[1].classes[0].pe - 1.0 / 3.0).abs() < 1e-10);
        let mut again = Vec::new();
        emit_csv(&back, 2, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn ten_significant_digits() {
        assert_eq!(fmt_float(1.0 / 3.0), "3.333333333e-1");
        assert_eq!(fmt_float(0.0), "0.000000000e0");
    }

    #[test]
    fn empty_optionals_survive() {
        let mut r = row(0.1);
        r.code_index = None;
        r.lambda = None;
        let mut buf = Vec::new();
        emit_csv(&[r.clone()], 2, &mut buf).unwrap();
        assert_eq!(parse_csv(buf.as_slice()).unwrap(), vec![r]);
    }

    #[test]
    fn class_count_mismatch_rejected() {
        assert!(emit_csv(&[row(0.1)], 3, Vec::new()).is_err());
    }
}
