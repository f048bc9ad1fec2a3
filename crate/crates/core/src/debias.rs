//! Debiasing of group LASSO projections.
//!
//! `Θ̂` is assembled from nodewise group LASSO regressions of every column
//! of group `g` on the remaining groups. With `C_g` the `p × p_g` matrix
//! that has the identity on the rows of `G_g` and `−Γ_g` elsewhere, the
//! residuals are `R_g = X C_g`, `T_g² = n⁻¹X_{G_g}ᵀR_g` and the rows of `Θ̂`
//! belonging to `G_g` are `(T_g⁻²)ᵀC_gᵀ`. This makes every diagonal block
//! of `Θ̂Σ̂ − I` vanish.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Error, Result};
use crate::posterior::{PosteriorDraws, RidgePosterior};
use crate::projection::{
    cross_validate_lambda, lambda_grid, lambda_max, BlockSolver, PenaltyConfig, ProjectionResult, SolverOptions,
};

/// Tolerance on `2n⁻¹X_{−g}ᵀR_g = K_gΛ_g`.
pub const KKT_IDENTITY_TOL: f64 = 1e-6;

/// One nodewise regression `X_{G_g}^{(l)} ~ X_{−g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodewiseFit {
    pub gamma: DVector<f64>,
    pub lambda: f64,
    pub residual: DVector<f64>,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// How the nodewise penalty levels `λ_g^l` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodewiseLambda {
    /// The same λ for every regression.
    Fixed(f64),
    /// One λ per group.
    PerGroup(Vec<f64>),
    /// Cross-validated over `grid_len` log-spaced values from the
    /// regression's `λ_max` down to `grid_ratio·λ_max`. With
    /// `per_column = false` the λ chosen for the first column of a group is
    /// shared by the rest of the group.
    Cv { folds: usize, grid_len: usize, grid_ratio: f64, seed: u64, per_column: bool },
}

impl Default for NodewiseLambda {
    fn default() -> Self {
        NodewiseLambda::Cv { folds: 5, grid_len: 10, grid_ratio: 0.05, seed: 0, per_column: false }
    }
}

/// Nodewise regressions for one group share the reduced design.
struct NodewiseProblem {
    reduced: GroupedDesign,
}

impl NodewiseProblem {
    fn new(design: &GroupedDesign, g: usize) -> Result<Self> {
        let groups = design.groups();
        let sizes: Vec<usize> = (0..groups.num_groups()).filter(|&k| k != g).map(|k| groups.size(k)).collect();
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("nodewise regression needs at least two groups".into()));
        }
        let reduced = GroupedDesign::new(design.without_group(g), GroupSpec::from_sizes(&sizes)?)?;
        Ok(Self { reduced })
    }

    fn fit(&self, solver: &BlockSolver<'_>, column: &DVector<f64>, lambda: f64, opts: &SolverOptions) -> Result<NodewiseFit> {
        let res = solver.solve(column, &PenaltyConfig::group_lasso(lambda), opts, None)?;
        let residual = column - self.reduced.x() * &res.beta_star;
        Ok(NodewiseFit {
            gamma: res.beta_star,
            lambda,
            residual,
            kkt_residual: res.kkt_residual,
            converged: res.converged,
        })
    }
}

/// Group LASSO of column `l` of group `g` on the other groups.
pub fn fit_nodewise(
    design: &GroupedDesign,
    g: usize,
    l: usize,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<NodewiseFit> {
    if g >= design.num_groups() || l >= design.groups().size(g) {
        return Err(Error::InvalidArgument(format!("no column {l} in group {g}")));
    }
    let problem = NodewiseProblem::new(design, g)?;
    let solver = BlockSolver::new(&problem.reduced);
    let column = design.group_block(g).column(l).clone_owned();
    let fit = problem.fit(&solver, &column, lambda, opts)?;
    if !fit.converged {
        return Err(Error::NotConverged { iterations: opts.max_iter, kkt_residual: fit.kkt_residual });
    }
    Ok(fit)
}

/// Nodewise pieces for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNodewise {
    /// `(p − p_g) × p_g`; column `l` is `γ_g^l`.
    pub gamma: DMatrix<f64>,
    /// `n × p_g`; column `l` is the residual of regression `l`.
    pub residuals: DMatrix<f64>,
    /// `T_g² = n⁻¹X_{G_g}ᵀR_g`.
    pub t_sq: DMatrix<f64>,
    /// Diagonal of `Λ_g`.
    pub lambdas: Vec<f64>,
    /// `(p − p_g) × p_g` subgradients `K_g`: `√p_k γ_k/‖γ_k‖` on active
    /// groups and the residual-implied vector on inactive ones.
    pub kappa: DMatrix<f64>,
    pub t_sq_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaHat {
    pub theta: DMatrix<f64>,
    pub groups: Vec<GroupNodewise>,
    /// Largest entry of `|2n⁻¹X_{−g}ᵀR_g − K_gΛ_g|` over all groups.
    pub kkt_identity_residual: f64,
}

impl ThetaHat {
    /// `Θ̂Σ̂`.
    pub fn times_gram(&self, design: &GroupedDesign) -> DMatrix<f64> {
        let x = design.x();
        (&self.theta * x.transpose()) * x / design.n() as f64
    }

    /// Predicted `(j, k)` block of `Θ̂Σ̂ − I` for `j ≠ k`:
    /// `½ (T_j⁻²)ᵀ Λ_j K_{j,k}ᵀ`.
    pub fn off_diagonal_block(&self, spec: &GroupSpec, j: usize, k: usize) -> Result<DMatrix<f64>> {
        let gj = &self.groups[j];
        let t_inv = gj
            .t_sq
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("T² of group {}", j + 1)))?;
        let offset = reduced_offset(spec, j, k);
        let kjk = gj.kappa.rows(offset, spec.size(k));
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&gj.lambdas));
        Ok(t_inv.transpose() * lam * kjk.transpose() * 0.5)
    }
}

/// Row offset of group `k` inside the reduced design without group `j`.
fn reduced_offset(spec: &GroupSpec, j: usize, k: usize) -> usize {
    let start = spec.range(k).start;
    if k > j {
        start - spec.size(j)
    } else {
        start
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn nodewise_group(
    design: &GroupedDesign,
    g: usize,
    schedule: &NodewiseLambda,
    opts: &SolverOptions,
) -> Result<GroupNodewise> {
    let n = design.n();
    let spec = design.groups();
    let pg = spec.size(g);
    let problem = NodewiseProblem::new(design, g)?;
    let solver = BlockSolver::new(&problem.reduced);
    let block = design.group_block(g);
    let template = PenaltyConfig::group_lasso(1.0);

    let cv_lambda = |col: &DVector<f64>, folds: usize, len: usize, ratio: f64, seed: u64| -> Result<f64> {
        let lm = lambda_max(&problem.reduced, col, &template);
        if lm <= 0.0 {
            return Ok(1.0);
        }
        let grid = lambda_grid(lm, len, ratio);
        Ok(cross_validate_lambda(&problem.reduced, col, &template, folds, Some(&grid), seed, opts)?.lambda)
    };

    let mut lambdas = Vec::with_capacity(pg);
    for l in 0..pg {
        let lam = match schedule {
            NodewiseLambda::Fixed(v) => *v,
            NodewiseLambda::PerGroup(v) => v[g],
            NodewiseLambda::Cv { folds, grid_len, grid_ratio, seed, per_column } => {
                if l == 0 || *per_column {
                    let col = block.column(l).clone_owned();
                    cv_lambda(&col, *folds, *grid_len, *grid_ratio, seed.wrapping_add((g * 7919 + l) as u64))?
                } else {
                    lambdas[0]
                }
            }
        };
        if !(lam > 0.0) {
            return Err(Error::InvalidArgument(format!("nodewise λ must be positive, got {lam}")));
        }
        lambdas.push(lam);
    }

    let q = design.p() - pg;
    let mut gamma = DMatrix::zeros(q, pg);
    let mut residuals = DMatrix::zeros(n, pg);
    let mut kappa = DMatrix::zeros(q, pg);
    let reduced_spec = problem.reduced.groups();
    let mut warm: Option<DVector<f64>> = None;
    for l in 0..pg {
        let col = block.column(l).clone_owned();
        let res = solver.solve(&col, &PenaltyConfig::group_lasso(lambdas[l]), opts, warm.as_ref())?;
        if !res.converged {
            return Err(Error::NotConverged { iterations: res.iterations, kkt_residual: res.kkt_residual });
        }
        let resid = &col - problem.reduced.x() * &res.beta_star;
        let implied = problem.reduced.x().tr_mul(&resid) * (2.0 / (n as f64 * lambdas[l]));
        for k in 0..reduced_spec.num_groups() {
            let r = reduced_spec.range(k);
            let gk = res.beta_star.rows(r.start, r.len());
            let norm = gk.norm();
            let kap = if norm > 0.0 {
                gk * ((r.len() as f64).sqrt() / norm)
            } else {
                implied.rows(r.start, r.len()).clone_owned()
            };
            kappa.view_mut((r.start, l), (r.len(), 1)).copy_from(&kap);
        }
        gamma.set_column(l, &res.beta_star);
        residuals.set_column(l, &resid);
        warm = Some(res.beta_star);
    }
    let t_sq = block.tr_mul(&residuals) / n as f64;
    let t_sq_condition = condition_number(&t_sq);
    if !t_sq_condition.is_finite() || t_sq_condition > 1e12 {
        return Err(Error::Singular(format!("T² of group {} (condition {t_sq_condition:.3e})", g + 1)));
    }
    Ok(GroupNodewise { gamma, residuals, t_sq, lambdas, kappa, t_sq_condition })
}

/// Builds `Θ̂` from nodewise regressions and checks the KKT identity
/// `2n⁻¹X_{−g}ᵀR_g = K_gΛ_g` for every group.
pub fn build_theta_hat(design: &GroupedDesign, schedule: &NodewiseLambda, opts: &SolverOptions) -> Result<ThetaHat> {
    let spec = design.groups();
    let k_total = spec.num_groups();
    let p = design.p();
    let n = design.n() as f64;
    if let NodewiseLambda::PerGroup(v) = schedule {
        if v.len() != k_total {
            return Err(Error::InvalidArgument(format!("{} nodewise λ values for {k_total} groups", v.len())));
        }
    }
    let fits: Vec<GroupNodewise> = (0..k_total)
        .into_par_iter()
        .map(|g| nodewise_group(design, g, schedule, opts))
        .collect::<Result<_>>()?;

    let mut theta = DMatrix::zeros(p, p);
    let mut identity_residual: f64 = 0.0;
    for (g, fit) in fits.iter().enumerate() {
        let range = spec.range(g);
        let pg = range.len();
        let t_inv = fit
            .t_sq
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("T² of group {}", g + 1)))?;
        // C_g: identity on G_g, −Γ_g elsewhere.
        let mut c = DMatrix::zeros(p, pg);
        c.view_mut((range.start, 0), (pg, pg)).fill_with_identity();
        let before = range.start;
        if before > 0 {
            c.view_mut((0, 0), (before, pg)).copy_from(&(-fit.gamma.rows(0, before)));
        }
        let after = p - range.end;
        if after > 0 {
            c.view_mut((range.end, 0), (after, pg)).copy_from(&(-fit.gamma.rows(before, after)));
        }
        let rows = t_inv.transpose() * c.transpose();
        theta.view_mut((range.start, 0), (pg, p)).copy_from(&rows);

        let reduced = design.without_group(g);
        let lhs = reduced.tr_mul(&fit.residuals) * (2.0 / n);
        let rhs = &fit.kappa * DMatrix::from_diagonal(&DVector::from_column_slice(&fit.lambdas));
        identity_residual = identity_residual.max((lhs - rhs).amax());
    }
    if identity_residual > KKT_IDENTITY_TOL {
        return Err(Error::KktViolation { residual: identity_residual, tolerance: KKT_IDENTITY_TOL });
    }
    Ok(ThetaHat { theta, groups: fits, kkt_identity_residual: identity_residual })
}

/// `β** = β* + n⁻¹Θ̂Xᵀ(Xβ − Xβ*)`.
pub fn debias_draw(
    theta: &ThetaHat,
    design: &GroupedDesign,
    beta_draw: &DVector<f64>,
    beta_star: &DVector<f64>,
) -> DVector<f64> {
    let x = design.x();
    let fitted_gap = x * (beta_draw - beta_star);
    beta_star + &theta.theta * x.tr_mul(&fitted_gap) / design.n() as f64
}

/// `Δ = (Θ̂Σ̂ − I)(β* − β⁰)`, available when the truth is known.
pub fn debias_remainder(theta_gram: &DMatrix<f64>, beta_star: &DVector<f64>, beta0: &DVector<f64>) -> DVector<f64> {
    let diff = beta_star - beta0;
    theta_gram * &diff - diff
}

/// `β̂ᴰᴳᴸ = β̂ᴳᴸ + n⁻¹Θ̂Xᵀ(y − Xβ̂ᴳᴸ)`.
pub fn debiased_gl_estimator(
    design: &GroupedDesign,
    y: &DVector<f64>,
    beta_gl: &DVector<f64>,
    theta: &ThetaHat,
) -> DVector<f64> {
    let x = design.x();
    beta_gl + &theta.theta * x.tr_mul(&(y - x * beta_gl)) / design.n() as f64
}

/// Debiased projection draws plus the quantities needed to compare them to
/// their normal limit.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedEnsemble {
    /// `D × p`, one debiased draw per row.
    pub beta_dd: DMatrix<f64>,
    /// `D × K` norms `‖Δ_k‖` when the truth was supplied.
    pub correction_norms: Option<DMatrix<f64>>,
}

impl DebiasedEnsemble {
    /// Debiases every projected draw. `truth` enables the `Δ` diagnostics.
    pub fn new(
        theta: &ThetaHat,
        design: &GroupedDesign,
        draws: &PosteriorDraws,
        projected: &[ProjectionResult],
        truth: Option<&DVector<f64>>,
    ) -> Result<Self> {
        if draws.len() != projected.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} draws but {} projections",
                draws.len(),
                projected.len()
            )));
        }
        let p = design.p();
        let m = theta.times_gram(design);
        let spec = design.groups();
        let rows: Vec<(DVector<f64>, Option<Vec<f64>>)> = (0..draws.len())
            .into_par_iter()
            .map(|i| {
                let star = &projected[i].beta_star;
                let dd = star + &m * (draws.draw(i) - star);
                let norms = truth.map(|b0| {
                    let delta = debias_remainder(&m, star, b0);
                    (0..spec.num_groups()).map(|k| delta.rows(spec.range(k).start, spec.size(k)).norm()).collect()
                });
                (dd, norms)
            })
            .collect();
        let mut beta_dd = DMatrix::zeros(rows.len(), p);
        let mut norms = truth.map(|_| DMatrix::zeros(rows.len(), spec.num_groups()));
        for (i, (dd, nk)) in rows.into_iter().enumerate() {
            beta_dd.set_row(i, &dd.transpose());
            if let (Some(mat), Some(v)) = (norms.as_mut(), nk) {
                for (k, val) in v.into_iter().enumerate() {
                    mat[(i, k)] = val;
                }
            }
        }
        Ok(Self { beta_dd, correction_norms: norms })
    }

    pub fn len(&self) -> usize {
        self.beta_dd.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_dd.nrows() == 0
    }

    /// Posterior mean of the debiased draws.
    pub fn mean(&self) -> DVector<f64> {
        DVector::from_iterator(self.beta_dd.ncols(), self.beta_dd.column_iter().map(|c| c.mean()))
    }
}

/// Coordinatewise equal-tailed credible intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleBand {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Zero-based fractional order-statistic positions `(D − 1)q` used for
    /// the lower and upper quantiles.
    pub lower_position: f64,
    pub upper_position: f64,
}

impl CredibleBand {
    pub fn contains(&self, j: usize, value: f64) -> bool {
        self.lower[j] <= value && value <= self.upper[j]
    }

    pub fn length(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    /// CSV with columns `coordinate,lower,upper` and, when the truth is
    /// given, `covered`.
    pub fn write_csv<W: Write>(&self, out: &mut W, truth: Option<&DVector<f64>>) -> io::Result<()> {
        match truth {
            Some(_) => writeln!(out, "coordinate,lower,upper,covered")?,
            None => writeln!(out, "coordinate,lower,upper")?,
        }
        for j in 0..self.lower.len() {
            match truth {
                Some(t) => writeln!(out, "{},{},{},{}", j + 1, self.lower[j], self.upper[j], self.contains(j, t[j]) as u8)?,
                None => writeln!(out, "{},{},{}", j + 1, self.lower[j], self.upper[j])?,
            }
        }
        Ok(())
    }
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-coordinate `(α/2, 1 − α/2)` quantiles of the rows of `draws`.
pub fn credible_intervals(draws: &DMatrix<f64>, alpha: f64) -> Result<CredibleBand> {
    let d = draws.nrows();
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws for a credible band, got {d}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (ql, qu) = (alpha / 2.0, 1.0 - alpha / 2.0);
    let mut lower = Vec::with_capacity(draws.ncols());
    let mut upper = Vec::with_capacity(draws.ncols());
    let mut buf = vec![0.0; d];
    for col in draws.column_iter() {
        buf.copy_from_slice(col.as_slice());
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(quantile_sorted(&buf, ql));
        upper.push(quantile_sorted(&buf, qu));
    }
    Ok(CredibleBand {
        level: 1.0 - alpha,
        lower,
        upper,
        lower_position: (d - 1) as f64 * ql,
        upper_position: (d - 1) as f64 * qu,
    })
}

/// Comparison of the standardized debiased draws `√n(β** − c)/σ` with the
/// normal limit `N(m, V̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvmReport {
    /// Predicted mean `m = √n Θ̂Σ̂(β̂ᴿ − c)/σ`.
    pub predicted_mean: Vec<f64>,
    /// Diagonal of `V̂ = n⁻¹Θ̂XᵀH(a_n)XΘ̂ᵀ`.
    pub predicted_var: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    pub empirical_var: Vec<f64>,
    /// `|empirical − predicted mean|` in Monte Carlo standard errors.
    pub mean_discrepancy: Vec<f64>,
    pub max_mean_discrepancy: f64,
    /// Largest `|empirical/predicted variance − 1|`.
    pub max_var_ratio_error: f64,
}

pub fn bvm_diagnostic(
    ensemble: &DebiasedEnsemble,
    theta: &ThetaHat,
    design: &GroupedDesign,
    post: &RidgePosterior,
    center: &DVector<f64>,
) -> BvmReport {
    let n = design.n() as f64;
    let sigma = post.sigma();
    let m = theta.times_gram(design);
    let scale = n.sqrt() / sigma;
    let predicted_mean: Vec<f64> = ((&m * (post.mean() - center)) * scale).iter().copied().collect();
    let mf = &m * post.cov_factor();
    let predicted_var: Vec<f64> = mf.row_iter().map(|r| r.norm_squared() * n / (sigma * sigma)).collect();

    let d = ensemble.len() as f64;
    let mut empirical_mean = Vec::with_capacity(center.len());
    let mut empirical_var = Vec::with_capacity(center.len());
    let mut mean_discrepancy = Vec::with_capacity(center.len());
    let mut max_var_ratio_error: f64 = 0.0;
    for (j, col) in ensemble.beta_dd.column_iter().enumerate() {
        let z: Vec<f64> = col.iter().map(|v| (v - center[j]) * scale).collect();
        let mean = z.iter().sum::<f64>() / d;
        let var = if d > 1.0 { z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d - 1.0) } else { 0.0 };
        let se = (var.max(predicted_var[j]) / d).sqrt();
        let gap = (mean - predicted_mean[j]).abs();
        let disc = if se > 0.0 {
            gap / se
        } else if gap <= 1e-12 * (1.0 + predicted_mean[j].abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        if predicted_var[j] > 0.0 {
            max_var_ratio_error = max_var_ratio_error.max((var / predicted_var[j] - 1.0).abs());
        } else if var > 1e-24 {
            max_var_ratio_error = f64::INFINITY;
        }
        empirical_mean.push(mean);
        empirical_var.push(var);
        mean_discrepancy.push(disc);
    }
    let max_mean_discrepancy = mean_discrepancy.iter().copied().fold(0.0, f64::max);
    BvmReport {
        predicted_mean,
        predicted_var,
        empirical_mean,
        empirical_var,
        mean_discrepancy,
        max_mean_discrepancy,
        max_var_ratio_error,
    }
}

/// Writes `Θ̂` as headerless CSV for auditing.
pub fn write_theta_csv<W: Write>(out: &mut W, theta: &ThetaHat) -> io::Result<()> {
    crate::posterior::write_rows(out, &theta.theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::normal_stream;

    fn random_design(n: usize, sizes: &[usize], seed: u64) -> GroupedDesign {
        let p: usize = sizes.iter().sum();
        let z = normal_stream(seed, 3, n * p);
        let x = DMatrix::from_column_slice(n, p, z.as_slice());
        GroupedDesign::new(x, GroupSpec::from_sizes(sizes).unwrap()).unwrap().standardize().unwrap()
    }

    #[test]
    fn quantile_type7() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&s, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn identical_draws_give_zero_width() {
        let m = DMatrix::from_fn(10, 2, |_, j| j as f64 + 0.5);
        let band = credible_intervals(&m, 0.05).unwrap();
        assert_eq!(band.lower, vec![0.5, 1.5]);
        assert_eq!(band.upper, vec![0.5, 1.5]);
        assert!(credible_intervals(&m.rows(0, 1).clone_owned(), 0.05).is_err());
        assert!(credible_intervals(&m, 1.0).is_err());
    }

    #[test]
    fn interquartile_band() {
        let z = normal_stream(1, 0, 501);
        let m = DMatrix::from_column_slice(501, 1, z.as_slice());
        let band = credible_intervals(&m, 0.5).unwrap();
        let mut sorted: Vec<f64> = z.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = quantile_sorted(&sorted, 0.5);
        assert!(band.lower[0] < med && med < band.upper[0]);
    }

    #[test]
    fn debias_is_identity_when_projection_does_nothing() {
        let d = random_design(40, &[2, 2, 2], 5);
        let theta = build_theta_hat(&d, &NodewiseLambda::Fixed(0.1), &SolverOptions::default()).unwrap();
        let b = normal_stream(2, 0, 6);
        assert!((debias_draw(&theta, &d, &b, &b) - &b).amax() == 0.0);
    }

    #[test]
    fn diagonal_blocks_vanish_and_offdiagonal_formula_holds() {
        let d = random_design(60, &[2, 3, 1, 2], 7);
        let theta = build_theta_hat(&d, &NodewiseLambda::Fixed(0.15), &SolverOptions::default()).unwrap();
        let m = theta.times_gram(&d) - DMatrix::identity(d.p(), d.p());
        let spec = d.groups();
        for j in 0..spec.num_groups() {
            let rj = spec.range(j);
            for k in 0..spec.num_groups() {
                let rk = spec.range(k);
                let block = m.view((rj.start, rk.start), (rj.len(), rk.len()));
                if j == k {
                    assert!(block.amax() < 1e-8, "diagonal block {j}: {}", block.amax());
                } else {
                    let formula = theta.off_diagonal_block(spec, j, k).unwrap();
                    assert!((block - formula).amax() < 1e-6, "block ({j},{k})");
                }
            }
        }
    }

    #[test]
    fn orthogonal_design_gives_identity() {
        // Hadamard columns: Σ̂ = I.
        let h = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0],
        );
        let d = GroupedDesign::new(h, GroupSpec::from_sizes(&[1, 2]).unwrap()).unwrap();
        let theta = build_theta_hat(&d, &NodewiseLambda::Fixed(0.1), &SolverOptions::default()).unwrap();
        assert!((theta.theta.clone() - DMatrix::identity(3, 3)).amax() < 1e-8);
        let fit = fit_nodewise(&d, 1, 0, 0.1, &SolverOptions::default()).unwrap();
        assert_eq!(fit.gamma.amax(), 0.0);
        assert_eq!(fit.residual, d.group_block(1).column(0).clone_owned());
    }

    #[test]
    fn dgl_fixed_point_and_ols_limit() {
        let d = random_design(50, &[2, 2], 9);
        let theta = build_theta_hat(&d, &NodewiseLambda::Fixed(0.1), &SolverOptions::default()).unwrap();
        let b = normal_stream(4, 0, 4);
        let y = d.x() * &b;
        assert!((debiased_gl_estimator(&d, &y, &b, &theta) - &b).amax() < 1e-12);

        // exact inverse in place of Θ̂ reproduces OLS
        let mut exact = theta.clone();
        exact.theta = d.gram().try_inverse().unwrap();
        let noisy = &y + normal_stream(5, 0, 50) * 0.3;
        let ols = (d.x().tr_mul(d.x())).try_inverse().unwrap() * d.x().tr_mul(&noisy);
        let start = DVector::from_vec(vec![0.3, 0.0, -0.2, 0.1]);
        let dgl = debiased_gl_estimator(&d, &noisy, &start, &exact);
        assert!((dgl - ols).amax() < 1e-10);
    }

    #[test]
    fn nodewise_threshold() {
        let d = random_design(40, &[2, 2, 2], 11);
        let fit = fit_nodewise(&d, 0, 1, 100.0, &SolverOptions::default()).unwrap();
        assert_eq!(fit.gamma.amax(), 0.0);
        assert!(fit_nodewise(&d, 0, 2, 0.1, &SolverOptions::default()).is_err());
    }
}
