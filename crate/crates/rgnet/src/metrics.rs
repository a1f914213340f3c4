//! Grounding recall, retrieval recall, oracle-grounding evaluation, and the
//! metrics report container.

use serde::{Deserialize, Serialize};

use crate::temporal::{coverage_fraction, interval_iou, Moment, ScoredMoment, TimeInterval};

/// One grounding-recall cell: `R{k}@{theta}` as a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingCell {
    pub k: usize,
    pub theta: f64,
    pub pct: f64,
}

/// One retrieval-recall cell: `R@{k}` as a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCell {
    pub k: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub grounding: Vec<GroundingCell>,
    pub retrieval: Vec<RetrievalCell>,
    pub oracle_grounding: Vec<GroundingCell>,
    pub num_queries: usize,
}

impl MetricsReport {
    pub fn grounding_at(&self, k: usize, theta: f64) -> Option<f64> {
        self.grounding
            .iter()
            .find(|c| c.k == k && (c.theta - theta).abs() < 1e-9)
            .map(|c| c.pct)
    }

    pub fn retrieval_at(&self, k: usize) -> Option<f64> {
        self.retrieval.iter().find(|c| c.k == k).map(|c| c.pct)
    }

    pub fn oracle_at(&self, k: usize, theta: f64) -> Option<f64> {
        self.oracle_grounding
            .iter()
            .find(|c| c.k == k && (c.theta - theta).abs() < 1e-9)
            .map(|c| c.pct)
    }

    /// Aligned plain-text table, one row per section.
    pub fn to_table_string(&self) -> String {
        let mut out = format!("Metrics over {} queries\n", self.num_queries);
        let mut line = String::from("  Proposal Retrieval ");
        for c in &self.retrieval {
            line.push_str(&format!("R@{:<3} {:6.2}   ", c.k, c.pct));
        }
        out.push_str(line.trim_end());
        out.push('\n');
        let mut line = String::from("  Grounding          ");
        for c in &self.grounding {
            line.push_str(&format!("R{}@{:<4} {:6.2}   ", c.k, c.theta, c.pct));
        }
        out.push_str(line.trim_end());
        out.push('\n');
        let mut line = String::from("  Oracle Grounding   ");
        for c in &self.oracle_grounding {
            line.push_str(&format!("R{}@{:<4} {:6.2}   ", c.k, c.theta, c.pct));
        }
        out.push_str(line.trim_end());
        out.push('\n');
        out
    }
}

/// Percentage of queries whose top-`k` predictions contain one with
/// `IoU(prediction, gt) > theta` (strict, per the metric definition).
/// Queries with no predictions count as misses.
pub fn recall_at_k_iou(
    predictions: &[Vec<ScoredMoment>],
    gts: &[Moment],
    k: usize,
    theta: f64,
) -> f64 {
    assert_eq!(predictions.len(), gts.len());
    assert!(k >= 1);
    if gts.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(gts)
        .filter(|(preds, gt)| {
            let gt_iv = gt.interval();
            preds
                .iter()
                .take(k)
                .any(|p| interval_iou(&p.moment.interval(), &gt_iv) > theta)
        })
        .count();
    100.0 * hits as f64 / gts.len() as f64
}

/// Percentage of queries where some top-`k` retrieved window covers at least
/// half of the ground-truth moment span.
pub fn retrieval_recall_at_k(
    ranked_windows: &[Vec<TimeInterval>],
    gts: &[Moment],
    k: usize,
) -> f64 {
    assert_eq!(ranked_windows.len(), gts.len());
    if gts.is_empty() {
        return 0.0;
    }
    let hits = ranked_windows
        .iter()
        .zip(gts)
        .filter(|(windows, gt)| {
            let gt_iv = gt.interval();
            windows
                .iter()
                .take(k)
                .any(|w| coverage_fraction(&gt_iv, w).map(|c| c >= 0.5).unwrap_or(false))
        })
        .count();
    100.0 * hits as f64 / gts.len() as f64
}

/// Index of the window with maximal GT coverage; ties go to the earlier
/// window.
pub fn oracle_window_index(windows: &[TimeInterval], gt: &Moment) -> Option<usize> {
    let gt_iv = gt.interval();
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in windows.iter().enumerate() {
        let cov = coverage_fraction(&gt_iv, w).unwrap_or(0.0);
        match best {
            Some((_, c)) if cov <= c => {}
            _ => best = Some((i, cov)),
        }
    }
    best.map(|(i, _)| i)
}

/// Oracle grounding: decode only the max-coverage window per query, then run
/// the grounding recall grid on those predictions. `decode(query, window)`
/// supplies the ranked moments for one proposal window.
pub fn oracle_grounding_eval<F>(
    windows_per_query: &[Vec<TimeInterval>],
    gts: &[Moment],
    ks: &[usize],
    thetas: &[f64],
    mut decode: F,
) -> Vec<GroundingCell>
where
    F: FnMut(usize, usize) -> Vec<ScoredMoment>,
{
    let predictions: Vec<Vec<ScoredMoment>> = windows_per_query
        .iter()
        .zip(gts)
        .enumerate()
        .map(|(q, (windows, gt))| {
            oracle_window_index(windows, gt)
                .map(|w| decode(q, w))
                .unwrap_or_default()
        })
        .collect();
    let mut cells = Vec::new();
    for &k in ks {
        for &theta in thetas {
            cells.push(GroundingCell {
                k,
                theta,
                pct: recall_at_k_iou(&predictions, gts, k, theta),
            });
        }
    }
    cells
}
