//! B-spline expansion of additive models into grouped designs, and
//! recovery of the component functions from projected draws.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::debias::quantile_sorted;
use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineOutput};

pub const DEFAULT_BASIS_COUNT: usize = 8;
pub const DEFAULT_DEGREE: usize = 3;

/// Basis of one variable: `basis_count = interior knots + degree + 1`,
/// boundary knots repeated `degree + 1` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasisSpec {
    pub basis_count: usize,
    pub degree: usize,
    /// Full knot vector, length `basis_count + degree + 1`.
    pub knots: Vec<f64>,
}

impl SplineBasisSpec {
    pub fn new(basis_count: usize, degree: usize, knots: Vec<f64>) -> Result<Self> {
        let spec = Self { basis_count, degree, knots };
        spec.validate()?;
        Ok(spec)
    }

    /// Clamped knot vector on `[lo, hi]` with the given interior knots.
    pub fn clamped(lo: f64, hi: f64, interior: &[f64], degree: usize) -> Result<Self> {
        let mut knots = vec![lo; degree + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        Self::new(interior.len() + degree + 1, degree, knots)
    }

    /// Equally spaced interior knots on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, basis_count: usize, degree: usize) -> Result<Self> {
        check_count(basis_count, degree)?;
        let m = basis_count - degree - 1;
        let interior: Vec<f64> = (1..=m).map(|i| lo + (hi - lo) * i as f64 / (m + 1) as f64).collect();
        Self::clamped(lo, hi, &interior, degree)
    }

    /// Boundary knots at the sample extremes, interior knots at the
    /// empirical `i/(m+1)` quantiles.
    pub fn from_quantiles(x: &[f64], basis_count: usize, degree: usize) -> Result<Self> {
        check_count(basis_count, degree)?;
        let mut sorted = x.to_vec();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariate contains non-finite values".into()));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < degree + 2 {
            return Err(Error::InvalidArgument(format!(
                "variable has {} distinct values; a degree-{degree} basis needs at least {}",
                distinct.len(),
                degree + 2
            )));
        }
        let m = basis_count - degree - 1;
        let interior: Vec<f64> = (1..=m).map(|i| quantile_sorted(&sorted, i as f64 / (m + 1) as f64)).collect();
        Self::clamped(sorted[0], sorted[sorted.len() - 1], &interior, degree)
    }

    pub fn validate(&self) -> Result<()> {
        check_count(self.basis_count, self.degree)?;
        let t = &self.knots;
        if t.len() != self.basis_count + self.degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "knot vector has length {}, expected {}",
                t.len(),
                self.basis_count + self.degree + 1
            )));
        }
        if t.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidArgument("knots must be non-decreasing".into()));
        }
        let d = self.degree;
        let clamped_left = t[..=d].iter().all(|v| *v == t[0]);
        let clamped_right = t[t.len() - d - 1..].iter().all(|v| *v == t[t.len() - 1]);
        if !clamped_left || !clamped_right || !(t[0] < t[t.len() - 1]) {
            return Err(Error::InvalidArgument("boundary knots need multiplicity degree + 1 on a non-empty range".into()));
        }
        Ok(())
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Knot span `μ` with `t_μ ≤ x < t_{μ+1}`; the right endpoint belongs
    /// to the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let (d, b) = (self.degree, self.basis_count);
        if x >= self.knots[b] {
            let mut mu = b - 1;
            while self.knots[mu] == self.knots[mu + 1] {
                mu -= 1;
            }
            return mu;
        }
        // Largest μ in [d, b-1] with t_μ ≤ x.
        let (mut lo, mut hi) = (d, b);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Values of the `degree + 1` non-zero basis functions `B_{μ−d..=μ}` at `x`
    /// (Cox–de Boor triangle).
    fn nonzero(&self, mu: usize, x: f64, out: &mut [f64]) {
        let (d, t) = (self.degree, &self.knots);
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        out[0] = 1.0;
        for j in 1..=d {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }
}

fn check_count(basis_count: usize, degree: usize) -> Result<()> {
    if basis_count < degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "basis count {basis_count} is below degree + 1 = {}",
            degree + 1
        )));
    }
    Ok(())
}

/// `len(x) × basis_count` matrix of basis evaluations.
pub fn bspline_basis(x: &[f64], spec: &SplineBasisSpec) -> Result<DMatrix<f64>> {
    let (lo, hi) = (spec.lower(), spec.upper());
    let mut out = DMatrix::zeros(x.len(), spec.basis_count);
    let mut vals = vec![0.0; spec.degree + 1];
    for (i, &v) in x.iter().enumerate() {
        if !(lo <= v && v <= hi) {
            return Err(Error::OutOfRange { value: v, lo, hi });
        }
        let mu = spec.span(v);
        spec.nonzero(mu, v, &mut vals);
        for (r, val) in vals.iter().enumerate() {
            out[(i, mu - spec.degree + r)] = *val;
        }
    }
    Ok(out)
}

/// `max(⌈n^{1/(2α+1)}⌉, degree + 1)`: the basis count suggested by a
/// smoothness index `α`.
pub fn theoretical_basis_count(n: usize, alpha: f64, degree: usize) -> usize {
    let b = (n as f64).powf(1.0 / (2.0 * alpha + 1.0)).ceil() as usize;
    b.max(degree + 1)
}

/// Grouped spline design built from raw covariates.
#[derive(Debug, Clone)]
pub struct AdditiveExpansion {
    /// Centered basis columns; group `k` is variable `k`.
    pub design: GroupedDesign,
    pub specs: Vec<SplineBasisSpec>,
    /// Training means subtracted from each basis column.
    pub basis_means: DVector<f64>,
}

impl AdditiveExpansion {
    pub fn num_variables(&self) -> usize {
        self.specs.len()
    }

    pub fn basis_count(&self) -> usize {
        self.specs[0].basis_count
    }

    /// Centered basis of variable `k` at arbitrary points, using the
    /// training column means.
    pub fn basis_at(&self, k: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut b = bspline_basis(x, &self.specs[k])?;
        let start = k * self.basis_count();
        for (j, mut col) in b.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.basis_means[start + j]);
        }
        Ok(b)
    }
}

/// Expands each column of `x_raw` into `basis_count` centered B-spline
/// columns with knots at empirical quantiles.
pub fn expand_additive_design(x_raw: &DMatrix<f64>, basis_count: usize, degree: usize) -> Result<AdditiveExpansion> {
    let (n, k) = x_raw.shape();
    if k == 0 {
        return Err(Error::InvalidArgument("no covariates to expand".into()));
    }
    check_count(basis_count, degree)?;
    let mut specs = Vec::with_capacity(k);
    let mut x = DMatrix::zeros(n, k * basis_count);
    for v in 0..k {
        let col: Vec<f64> = x_raw.column(v).iter().copied().collect();
        let spec = SplineBasisSpec::from_quantiles(&col, basis_count, degree)
            .map_err(|e| Error::InvalidArgument(format!("variable {}: {e}", v + 1)))?;
        let b = bspline_basis(&col, &spec)?;
        x.columns_mut(v * basis_count, basis_count).copy_from(&b);
        specs.push(spec);
    }
    let basis_means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(-basis_means[j]);
    }
    let design = GroupedDesign::new(x, GroupSpec::uniform(k, basis_count)?)?;
    Ok(AdditiveExpansion { design, specs, basis_means })
}

/// Pointwise band of one component on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBand {
    /// 0-based variable index.
    pub variable: usize,
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ComponentRecovery {
    /// Per variable, the `D × n` matrix of `f*_k` at the sample points.
    pub at_samples: Vec<DMatrix<f64>>,
    pub bands: Vec<ComponentBand>,
}

impl ComponentRecovery {
    /// `D × n` matrix of `Σ_k f*_k` at the sample points.
    pub fn total(&self) -> DMatrix<f64> {
        let mut t = self.at_samples[0].clone();
        for m in &self.at_samples[1..] {
            t += m;
        }
        t
    }
}

/// Evaluates every variable's component for every draw. `draws` is `D × p`
/// on the scale of `expansion.design` (centered, not standardized). Bands
/// cover `1 − alpha` pointwise on `grid_len` equally spaced points of each
/// variable's knot range.
pub fn recover_components(
    expansion: &AdditiveExpansion,
    draws: &DMatrix<f64>,
    grid_len: usize,
    alpha: f64,
) -> Result<ComponentRecovery> {
    let b = expansion.basis_count();
    if draws.ncols() != expansion.design.p() {
        return Err(Error::DimensionMismatch(format!(
            "draws have {} columns but the expansion has {}",
            draws.ncols(),
            expansion.design.p()
        )));
    }
    if draws.nrows() == 0 || grid_len < 2 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument("need draws, a grid of at least 2 points and alpha in (0, 1)".into()));
    }
    let mut at_samples = Vec::with_capacity(expansion.num_variables());
    let mut bands = Vec::with_capacity(expansion.num_variables());
    let mut buf = vec![0.0; draws.nrows()];
    for (k, spec) in expansion.specs.iter().enumerate() {
        let coef = draws.columns(k * b, b);
        let basis = expansion.design.group_block(k);
        at_samples.push(coef * basis.transpose());

        let (lo, hi) = (spec.lower(), spec.upper());
        let grid: Vec<f64> =
            (0..grid_len).map(|g| (lo + (hi - lo) * g as f64 / (grid_len - 1) as f64).min(hi)).collect();
        let on_grid = coef * expansion.basis_at(k, &grid)?.transpose();
        let (mut lower, mut median, mut upper) = (vec![], vec![], vec![]);
        for col in on_grid.column_iter() {
            buf.copy_from_slice(col.as_slice());
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lower.push(quantile_sorted(&buf, alpha / 2.0));
            median.push(quantile_sorted(&buf, 0.5));
            upper.push(quantile_sorted(&buf, 1.0 - alpha / 2.0));
        }
        bands.push(ComponentBand { variable: k, grid, lower, median, upper });
    }
    Ok(ComponentRecovery { at_samples, bands })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryError {
    pub per_draw: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// `n⁻¹Σ_i(Σ_k f*_k(x_{ik}) − f⁰(x_i))²` per draw. `total` is the `D × n`
/// matrix from [`ComponentRecovery::total`]; `f0` should be centered to
/// match the centered components.
pub fn additive_recovery_error(total: &DMatrix<f64>, f0: &DVector<f64>) -> Result<RecoveryError> {
    if total.ncols() != f0.len() || total.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} sample columns against {} truth values",
            total.ncols(),
            f0.len()
        )));
    }
    let n = f0.len() as f64;
    let per_draw: Vec<f64> =
        total.row_iter().map(|r| r.iter().zip(f0.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).collect();
    let mut sorted = per_draw.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = per_draw.iter().sum::<f64>() / per_draw.len() as f64;
    Ok(RecoveryError { median: quantile_sorted(&sorted, 0.5), mean, per_draw })
}

/// CSV `variable,x,lower,median,upper[,truth]` with 1-based variables.
pub fn write_component_bands_csv<W: Write>(
    out: &mut W,
    bands: &[ComponentBand],
    truth: Option<&dyn Fn(usize, f64) -> f64>,
) -> io::Result<()> {
    match truth {
        Some(_) => writeln!(out, "variable,x,lower,median,upper,truth")?,
        None => writeln!(out, "variable,x,lower,median,upper")?,
    }
    for band in bands {
        for (g, &x) in band.grid.iter().enumerate() {
            write!(out, "{},{},{},{},{}", band.variable + 1, x, band.lower[g], band.median[g], band.upper[g])?;
            match truth {
                Some(f) => writeln!(out, ",{}", f(band.variable, x))?,
                None => writeln!(out)?,
            }
        }
    }
    Ok(())
}

/// Expansion, pipeline output and recovered components of one additive fit.
#[derive(Debug, Clone)]
pub struct AdditiveRun {
    pub expansion: AdditiveExpansion,
    pub output: PipelineOutput,
    pub recovery: ComponentRecovery,
}

/// Expands `x_raw`, runs the pipeline on the spline design and evaluates
/// the projected components.
pub fn fit_additive(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    basis_count: usize,
    degree: usize,
    config: &PipelineConfig,
    grid_len: usize,
) -> Result<AdditiveRun> {
    let expansion = expand_additive_design(x_raw, basis_count, degree)?;
    let output = run_pipeline(&expansion.design, y, config)?;
    let draws = output.projected_original();
    let recovery = recover_components(&expansion, &draws, grid_len, config.alpha)?;
    Ok(AdditiveRun { expansion, output, recovery })
}
