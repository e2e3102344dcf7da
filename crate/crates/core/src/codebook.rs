//! Materialized encoder mappings and their plain-text exchange format.
//!
//! ```text
//! # uep-codebook v1
//! M 16
//! n 7
//! partition message_wise 8 8
//! provenance coset 3f2a91c0d4e5b6a7
//! <M lines of n space-separated floats, 17 significant digits>
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::uep::ClassPartition;

pub const CODEBOOK_MAGIC: &str = "# uep-codebook v1";

/// Tolerance on `|x|^2 == n` for emitted codewords.
pub const ENERGY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TrainedAe,
    Coset,
    Superposition,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::TrainedAe => "trained_ae",
            Provenance::Coset => "coset",
            Provenance::Superposition => "superposition",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "trained_ae" => Some(Provenance::TrainedAe),
            "coset" => Some(Provenance::Coset),
            "superposition" => Some(Provenance::Superposition),
            _ => None,
        }
    }
}

/// `M x n` table of codewords with its class structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub codewords: Matrix,
    pub partition: ClassPartition,
    pub provenance: Provenance,
    /// Digest of the configuration that produced the codebook.
    pub digest: String,
}

impl Codebook {
    pub fn new(
        codewords: Matrix,
        partition: ClassPartition,
        provenance: Provenance,
        digest: impl Into<String>,
    ) -> Result<Self> {
        if codewords.rows() != partition.num_messages() {
            return Err(Error::Dimension(format!(
                "{} codewords for a partition of {} messages",
                codewords.rows(),
                partition.num_messages()
            )));
        }
        if codewords.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("codebook contains non-finite values".into()));
        }
        Ok(Self {
            codewords,
            partition,
            provenance,
            digest: digest.into(),
        })
    }

    pub fn messages(&self) -> usize {
        self.codewords.rows()
    }

    pub fn block_length(&self) -> usize {
        self.codewords.cols()
    }

    pub fn codeword(&self, m: usize) -> &[f64] {
        self.codewords.row(m)
    }

    pub fn energies(&self) -> Vec<f64> {
        self.codewords
            .iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect()
    }

    /// Largest `| |x|^2 - n |` over all rows.
    pub fn max_energy_deviation(&self) -> f64 {
        let n = self.block_length() as f64;
        self.energies()
            .into_iter()
            .map(|e| (e - n).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_energy(&self, tol: f64) -> Result<()> {
        let dev = self.max_energy_deviation();
        if dev > tol {
            return Err(Error::Config(format!(
                "codeword energy deviates from n by {dev:e} (> {tol:e})"
            )));
        }
        Ok(())
    }

    /// Short hex digest of the serialized codebook.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        crate::autoencoder::hex_prefix(&h.finalize())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CODEBOOK_MAGIC}");
        let _ = writeln!(out, "M {}", self.messages());
        let _ = writeln!(out, "n {}", self.block_length());
        let _ = writeln!(out, "partition {}", self.partition.descriptor());
        let _ = writeln!(out, "provenance {} {}", self.provenance.name(), self.digest);
        for row in self.codewords.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "codebook",
            detail,
        };
        let mut lines = r.lines();
        let mut next = |label: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad(format!("missing {label}")))?
                .map_err(Error::from)
        };
        if next("header")?.trim() != CODEBOOK_MAGIC {
            return Err(bad("bad magic line".into()));
        }
        let field = |line: String, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key} ...`, got {line:?}")))
        };
        let messages: usize = field(next("M")?, "M")?
            .trim()
            .parse()
            .map_err(|e| bad(format!("M: {e}")))?;
        let n: usize = field(next("n")?, "n")?
            .trim()
            .parse()
            .map_err(|e| bad(format!("n: {e}")))?;
        let partition = ClassPartition::parse_descriptor(&field(next("partition")?, "partition")?)?;
        let prov_line = field(next("provenance")?, "provenance")?;
        let mut prov_parts = prov_line.split_whitespace();
        let provenance = prov_parts
            .next()
            .and_then(Provenance::parse)
            .ok_or_else(|| bad(format!("unknown provenance in {prov_line:?}")))?;
        let digest = prov_parts.next().unwrap_or("").to_string();
        let mut data = Vec::with_capacity(messages * n);
        for row in 0..messages {
            let line = next("codeword row")?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(format!("row {row}: {e}"))))
                .collect::<Result<_>>()?;
            if values.len() != n {
                return Err(bad(format!("row {row} has {} values, expected {n}", values.len())));
            }
            data.extend(values);
        }
        Self::new(Matrix::from_vec(messages, n, data)?, partition, provenance, digest)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }
}
