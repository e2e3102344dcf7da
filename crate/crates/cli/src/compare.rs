//! Dominance comparison between autoencoder curves and baseline scatter.

use serde::Serialize;
use uep_core::montecarlo::{dominates, pareto_indices};

use crate::output::ResultRow;

/// Estimates below this are clamped before taking logs for distances.
pub const LOG_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub grid_index: usize,
    pub lambda: Option<f64>,
    pub estimates: Vec<f64>,
    pub on_frontier: bool,
    /// Some baseline point dominates this one.
    pub dominated: bool,
    /// Baseline frontier point closest in log-error space.
    pub nearest_baseline: Option<Vec<f64>>,
    pub dominates_nearest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrReport {
    pub ebn0_db: f64,
    pub points: Vec<PointReport>,
    pub baseline_points: usize,
    pub baseline_frontier: Vec<Vec<f64>>,
    /// No autoencoder frontier point is dominated by a baseline point.
    pub frontier_undominated: bool,
    pub dominating_nearest: usize,
    /// The autoencoder frontier dominates the baseline frontier.
    pub dominates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub per_snr: Vec<SnrReport>,
}

fn log_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.max(LOG_FLOOR).log10() - y.max(LOG_FLOOR).log10();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Baseline point nearest to `p` in log10 space; ties go to the earlier point.
pub fn nearest<'a>(p: &[f64], candidates: &'a [Vec<f64>]) -> Option<&'a Vec<f64>> {
    let mut best: Option<(&Vec<f64>, f64)> = None;
    for c in candidates {
        let d = log_distance(p, c);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.map(|(c, _)| c)
}

/// Set-level dominance: no point of `a` is dominated by a point of `b`, and
/// every point of `b` is dominated by some point of `a`. An empty `b` is
/// dominated vacuously.
pub fn set_dominates(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let safe = a.iter().all(|p| !b.iter().any(|q| dominates(q, p)));
    safe && b.iter().all(|q| a.iter().any(|p| dominates(p, q)))
}

/// Compares rows grouped by evaluation SNR. Autoencoder rows are taken from
/// `ae_rows` and baseline rows from `baseline_rows`, each filtered by mode
/// prefix; a side with no rows of its kind is used unfiltered.
pub fn compare_frontiers(ae_rows: &[ResultRow], baseline_rows: &[ResultRow]) -> DominanceReport {
    let pick = |rows: &[ResultRow], ae: bool| -> Vec<ResultRow> {
        let filtered: Vec<ResultRow> = rows.iter().filter(|r| r.is_ae() == ae).cloned().collect();
        if filtered.is_empty() {
            rows.to_vec()
        } else {
            filtered
        }
    };
    let ae = pick(ae_rows, true);
    let base = pick(baseline_rows, false);
    let mut snrs: Vec<f64> = ae.iter().map(|r| r.ebn0_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    let per_snr = snrs
        .into_iter()
        .map(|snr| {
            let a: Vec<&ResultRow> = ae.iter().filter(|r| r.ebn0_db == snr).collect();
            let b: Vec<Vec<f64>> = base.iter().filter(|r| r.ebn0_db == snr).map(ResultRow::estimates).collect();
            snr_report(snr, &a, &b)
        })
        .collect();
    DominanceReport { per_snr }
}

fn snr_report(ebn0_db: f64, ae: &[&ResultRow], baseline: &[Vec<f64>]) -> SnrReport {
    let ae_pts: Vec<Vec<f64>> = ae.iter().map(|r| r.estimates()).collect();
    let ae_front = pareto_indices(&ae_pts);
    let base_front: Vec<Vec<f64>> = pareto_indices(baseline).into_iter().map(|i| baseline[i].clone()).collect();
    let points: Vec<PointReport> = ae
        .iter()
        .zip(&ae_pts)
        .enumerate()
        .map(|(i, (row, p))| {
            let near = nearest(p, &base_front).cloned();
            PointReport {
                grid_index: row.grid_index,
                lambda: row.lambda,
                estimates: p.clone(),
                on_frontier: ae_front.contains(&i),
                dominated: baseline.iter().any(|q| dominates(q, p)),
                dominates_nearest: near.as_ref().is_some_and(|q| dominates(p, q)),
                nearest_baseline: near,
            }
        })
        .collect();
    let front_pts: Vec<Vec<f64>> = ae_front.iter().map(|&i| ae_pts[i].clone()).collect();
    SnrReport {
        ebn0_db,
        frontier_undominated: points.iter().filter(|p| p.on_frontier).all(|p| !p.dominated),
        dominating_nearest: points.iter().filter(|p| p.dominates_nearest).count(),
        dominates: set_dominates(&front_pts, &base_front),
        baseline_points: baseline.len(),
        baseline_frontier: base_front,
        points,
    }
}
