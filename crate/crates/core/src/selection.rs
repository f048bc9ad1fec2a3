//! Median probability model selection and the selection / estimation /
//! coverage metrics used by the simulation harness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::debias::CredibleBand;
use crate::design::GroupSpec;
use crate::error::{Error, Result};
use crate::projection::ProjectionResult;

#[derive(Debug, Clone, PartialEq)]
pub struct MpmSelection {
    /// Selected groups, 0-based and increasing.
    pub groups: Vec<usize>,
    pub frequencies: Vec<f64>,
    /// For a selected group, the mean of `β*_k` over the draws in which it
    /// is nonzero; zero elsewhere.
    pub estimate: DVector<f64>,
}

/// Selects group `k` iff the fraction of draws with `β*_k ≠ 0` is strictly
/// above `threshold`.
pub fn mpm_select(results: &[ProjectionResult], groups: &GroupSpec, threshold: f64) -> Result<MpmSelection> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("median probability model needs at least one draw".into()));
    }
    let p = groups.num_columns();
    let d = results.len() as f64;
    let mut frequencies = Vec::with_capacity(groups.num_groups());
    let mut estimate = DVector::zeros(p);
    let mut selected = Vec::new();
    for (k, range) in groups.ranges().iter().enumerate() {
        let mut sum = DVector::zeros(range.len());
        let mut count = 0usize;
        for r in results {
            let block = r.beta_star.rows(range.start, range.len());
            if block.iter().any(|v| *v != 0.0) {
                count += 1;
                sum += block;
            }
        }
        let freq = count as f64 / d;
        frequencies.push(freq);
        if freq > threshold {
            selected.push(k);
            estimate.rows_mut(range.start, range.len()).copy_from(&(sum / count as f64));
        }
    }
    Ok(MpmSelection { groups: selected, frequencies, estimate })
}

/// Stacks vectors of length `p` as the rows of a matrix.
pub fn stack_rows<'a>(rows: impl Iterator<Item = &'a DVector<f64>>, p: usize) -> DMatrix<f64> {
    let rows: Vec<_> = rows.map(|r| r.transpose()).collect();
    if rows.is_empty() {
        return DMatrix::zeros(0, p);
    }
    DMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `NaN` when no band was supplied or the class is empty.
    pub signal_coverage: f64,
    pub noise_coverage: f64,
    pub signal_length: f64,
    pub noise_length: f64,
    pub selected: Vec<usize>,
}

impl MetricsReport {
    /// Metric name/value pairs in a fixed order, for long-format tables.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mse", self.mse),
            ("tp", self.tp as f64),
            ("fp", self.fp as f64),
            ("fn", self.fn_ as f64),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("signal_coverage", self.signal_coverage),
            ("noise_coverage", self.noise_coverage),
            ("signal_length", self.signal_length),
            ("noise_length", self.noise_length),
        ]
    }
}

/// F1 from the counts; zero when nothing is selected or nothing is right.
pub fn f1_score(tp: usize, selected: usize, s0: usize) -> (f64, f64, f64) {
    let precision = if selected == 0 { 0.0 } else { tp as f64 / selected as f64 };
    let recall = if s0 == 0 { 0.0 } else { tp as f64 / s0 as f64 };
    let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

/// Metrics of a point estimate, a selected group set and (optionally) a
/// credible band against the truth. `s0` is the true support (0-based groups).
pub fn compute_metrics(
    selected: &[usize],
    estimate: &DVector<f64>,
    beta0: &DVector<f64>,
    s0: &[usize],
    band: Option<&CredibleBand>,
) -> Result<MetricsReport> {
    if estimate.len() != beta0.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {} but the truth has {}",
            estimate.len(),
            beta0.len()
        )));
    }
    let mse = (estimate - beta0).norm_squared();
    let tp = selected.iter().filter(|k| s0.contains(k)).count();
    let fp = selected.len() - tp;
    let fn_ = s0.iter().filter(|k| !selected.contains(k)).count();
    let (precision, recall, f1) = f1_score(tp, selected.len(), s0.len());

    let (mut signal_coverage, mut noise_coverage) = (f64::NAN, f64::NAN);
    let (mut signal_length, mut noise_length) = (f64::NAN, f64::NAN);
    if let Some(band) = band {
        if band.lower.len() != beta0.len() {
            return Err(Error::DimensionMismatch("band and truth lengths differ".into()));
        }
        let (mut sc, mut sn, mut sl) = (0usize, 0usize, 0.0);
        let (mut nc, mut nn, mut nl) = (0usize, 0usize, 0.0);
        for (j, &b) in beta0.iter().enumerate() {
            let hit = band.contains(j, b);
            if b != 0.0 {
                sn += 1;
                sc += hit as usize;
                sl += band.length(j);
            } else {
                nn += 1;
                nc += hit as usize;
                nl += band.length(j);
            }
        }
        if sn > 0 {
            signal_coverage = sc as f64 / sn as f64;
            signal_length = sl / sn as f64;
        }
        if nn > 0 {
            noise_coverage = nc as f64 / nn as f64;
            noise_length = nl / nn as f64;
        }
    }
    Ok(MetricsReport {
        mse,
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
        signal_coverage,
        noise_coverage,
        signal_length,
        noise_length,
        selected: selected.to_vec(),
    })
}
