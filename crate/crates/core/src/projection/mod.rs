//! Sparse projection of posterior draws.
//!
//! Each draw `β` is mapped to
//! `β* = argmin_u n⁻¹‖Xβ − Xu‖² + Σ_k 𝒫(‖u_k‖)`
//! by cyclic block coordinate descent in group order. Every block update is
//! an exact block minimizer, computed in the eigenbasis of the block Gram
//! matrix `n⁻¹X_{G_k}ᵀX_{G_k}`.

mod cv;
mod penalty;

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{GroupSpec, GroupedDesign};
use crate::error::{Error, Result};
use crate::posterior::PosteriorDraws;

pub use cv::{
    cross_validate_lambda, default_grid_ratio, lambda_grid, lambda_max, CvResult, DEFAULT_FOLDS, DEFAULT_GRID_LEN,
    DEFAULT_GRID_RATIO, HIGH_DIM_GRID_RATIO,
};
pub use penalty::{
    group_soft_threshold, scad_derivative, scad_value, PenaltyConfig, PenaltyKind, DEFAULT_SCAD_TAU,
};

use penalty::{block_objective, BlockQuadratic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Bound on both the relative block change and the KKT residual.
    pub tol: f64,
    /// Cap on coordinate sweeps (full or active-set).
    pub max_iter: usize,
    /// Keep the objective value after every sweep.
    pub record_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 10_000, record_objective: false }
    }
}

/// Output of one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub beta_star: DVector<f64>,
    /// Zero-based indices of groups with `‖β*_k‖ > 0`.
    pub active_groups: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

struct BlockEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

/// Block coordinate descent solver bound to one design. The per-group
/// eigendecompositions are computed once and reused across targets.
pub struct BlockSolver<'a> {
    design: &'a GroupedDesign,
    blocks: Vec<BlockEigen>,
}

impl<'a> BlockSolver<'a> {
    pub fn new(design: &'a GroupedDesign) -> Self {
        let n = design.n() as f64;
        let blocks = (0..design.num_groups())
            .map(|k| {
                let xk = design.group_block(k);
                let mut a = xk.tr_mul(&xk) / n;
                a.fill_upper_triangle_with_lower_triangle();
                let eig = SymmetricEigen::new(a);
                let scale = eig.eigenvalues.amax().max(1.0);
                let values = eig
                    .eigenvalues
                    .iter()
                    .map(|&v| if v <= 1e-12 * scale { 0.0 } else { v })
                    .collect();
                BlockEigen { values, vectors: eig.eigenvectors }
            })
            .collect();
        Self { design, blocks }
    }

    pub fn design(&self) -> &GroupedDesign {
        self.design
    }

    /// Minimizes `n⁻¹‖target − Xu‖² + Σ 𝒫(‖u_k‖)`.
    ///
    /// Running out of iterations is not an error: the last iterate is
    /// returned with `converged = false`.
    pub fn solve(
        &self,
        target: &DVector<f64>,
        penalty: &PenaltyConfig,
        opts: &SolverOptions,
        init: Option<&DVector<f64>>,
    ) -> Result<ProjectionResult> {
        let d = self.design;
        let (n, p) = (d.n(), d.p());
        let groups = d.groups();
        penalty.validate(groups)?;
        if target.len() != n {
            return Err(Error::DimensionMismatch(format!("target has length {} but n = {n}", target.len())));
        }
        let mut u = match init {
            Some(v) if v.len() == p => v.clone(),
            Some(v) => {
                return Err(Error::DimensionMismatch(format!("initial point has length {} but p = {p}", v.len())))
            }
            None => DVector::zeros(p),
        };
        let k_total = groups.num_groups();
        let levels: Vec<f64> = (0..k_total).map(|k| penalty.level(k, groups.size(k))).collect();
        let free: Vec<usize> = (0..k_total).filter(|&k| !penalty.excluded(k)).collect();
        for k in (0..k_total).filter(|&k| penalty.excluded(k)) {
            u.rows_mut(groups.range(k).start, groups.size(k)).fill(0.0);
        }

        let mut resid = target - d.x() * &u;
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        let mut scratch = Scratch::new(groups.max_size());

        'outer: while iterations < opts.max_iter {
            let change = self.sweep(&free, &levels, penalty, &mut u, &mut resid, &mut scratch);
            iterations += 1;
            if opts.record_objective {
                trace.push(objective_from_residual(&resid, &u, groups, penalty, &levels));
            }
            if change < opts.tol {
                resid = target - d.x() * &u;
                kkt = kkt_from_residual(d, &resid, &u, penalty, &levels);
                if kkt < opts.tol {
                    converged = true;
                    break 'outer;
                }
            }
            loop {
                let active: Vec<usize> = free
                    .iter()
                    .copied()
                    .filter(|&k| u.rows(groups.range(k).start, groups.size(k)).iter().any(|v| *v != 0.0))
                    .collect();
                if active.is_empty() || iterations >= opts.max_iter {
                    break;
                }
                let change = self.sweep(&active, &levels, penalty, &mut u, &mut resid, &mut scratch);
                iterations += 1;
                if opts.record_objective {
                    trace.push(objective_from_residual(&resid, &u, groups, penalty, &levels));
                }
                if change < opts.tol {
                    break;
                }
            }
        }
        if !converged {
            resid = target - d.x() * &u;
            kkt = kkt_from_residual(d, &resid, &u, penalty, &levels);
        }
        let objective = objective_from_residual(&resid, &u, groups, penalty, &levels);
        Ok(ProjectionResult {
            active_groups: active_groups(&u, groups),
            beta_star: u,
            objective,
            iterations,
            kkt_residual: kkt,
            converged,
            objective_trace: trace,
        })
    }

    /// One pass over `order`; returns the largest relative block change.
    fn sweep(
        &self,
        order: &[usize],
        levels: &[f64],
        penalty: &PenaltyConfig,
        u: &mut DVector<f64>,
        resid: &mut DVector<f64>,
        s: &mut Scratch,
    ) -> f64 {
        let d = self.design;
        let n = d.n() as f64;
        let mut max_change: f64 = 0.0;
        for &k in order {
            let range = d.groups().range(k);
            let size = range.len();
            let xk = d.group_block(k);
            let block = &self.blocks[k];
            let grad = xk.tr_mul(resid) / n;
            let uk = u.rows(range.start, size).clone_owned();
            let u_eig = block.vectors.tr_mul(&uk);
            let g_eig = block.vectors.tr_mul(&grad);
            let c = &mut s.c[..size];
            for i in 0..size {
                c[i] = if block.values[i] == 0.0 { 0.0 } else { g_eig[i] + block.values[i] * u_eig[i] };
            }
            let q = BlockQuadratic { eigenvalues: &block.values, c };
            let next = &mut s.next[..size];
            match penalty.kind {
                PenaltyKind::GroupScad => {
                    q.scad_minimizer(levels[k], penalty.tau, next);
                    let current = block_objective(&q, u_eig.as_slice(), penalty, levels[k]);
                    if block_objective(&q, next, penalty, levels[k]) > current {
                        continue;
                    }
                }
                _ if levels[k] == 0.0 => q.scad_minimizer(0.0, penalty.tau, next),
                _ => q.lasso_minimizer(levels[k], next),
            }
            let new_uk = &block.vectors * DVector::from_column_slice(next);
            let delta = &new_uk - &uk;
            let delta_norm = delta.norm();
            if delta_norm == 0.0 {
                continue;
            }
            resid.gemv(-1.0, &xk, &delta, 1.0);
            u.rows_mut(range.start, size).copy_from(&new_uk);
            max_change = max_change.max(delta_norm / new_uk.norm().max(1.0));
        }
        max_change
    }
}

struct Scratch {
    c: Vec<f64>,
    next: Vec<f64>,
}

impl Scratch {
    fn new(size: usize) -> Self {
        Self { c: vec![0.0; size], next: vec![0.0; size] }
    }
}

fn active_groups(u: &DVector<f64>, groups: &GroupSpec) -> Vec<usize> {
    (0..groups.num_groups())
        .filter(|&k| u.rows(groups.range(k).start, groups.size(k)).norm() > 0.0)
        .collect()
}

fn objective_from_residual(
    resid: &DVector<f64>,
    u: &DVector<f64>,
    groups: &GroupSpec,
    penalty: &PenaltyConfig,
    levels: &[f64],
) -> f64 {
    let loss = resid.norm_squared() / resid.len() as f64;
    let pen: f64 = (0..groups.num_groups())
        .map(|k| {
            let r = u.rows(groups.range(k).start, groups.size(k)).norm();
            if penalty.excluded(k) {
                if r == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                penalty.value(r, levels[k])
            }
        })
        .sum();
    loss + pen
}

fn kkt_from_residual(
    design: &GroupedDesign,
    resid: &DVector<f64>,
    u: &DVector<f64>,
    penalty: &PenaltyConfig,
    levels: &[f64],
) -> f64 {
    let groups = design.groups();
    let n = design.n() as f64;
    let mut worst: f64 = 0.0;
    for k in 0..groups.num_groups() {
        if penalty.excluded(k) {
            continue;
        }
        let range = groups.range(k);
        let grad = design.group_block(k).tr_mul(resid) * (2.0 / n);
        let uk = u.rows(range.start, range.len());
        let norm = uk.norm();
        let violation = if norm > 0.0 {
            (grad - uk * (penalty.derivative(norm, levels[k]) / norm)).norm()
        } else {
            (grad.norm() - levels[k]).max(0.0)
        };
        worst = worst.max(violation);
    }
    worst
}

/// Projection objective `n⁻¹‖target − Xu‖² + Σ 𝒫(‖u_k‖)`.
pub fn objective(design: &GroupedDesign, target: &DVector<f64>, u: &DVector<f64>, penalty: &PenaltyConfig) -> f64 {
    let groups = design.groups();
    let levels: Vec<f64> = (0..groups.num_groups()).map(|k| penalty.level(k, groups.size(k))).collect();
    objective_from_residual(&(target - design.x() * u), u, groups, penalty, &levels)
}

/// Largest KKT violation over groups for `u` as a minimizer of the
/// projection problem with the given target. For active groups this is
/// `‖(2/n)X_kᵀ(target − Xu) − 𝒫′(‖u_k‖)u_k/‖u_k‖‖`, for inactive groups
/// `(‖(2/n)X_kᵀ(target − Xu)‖ − 𝒫′(0⁺))₊`.
pub fn kkt_residual(design: &GroupedDesign, target: &DVector<f64>, u: &DVector<f64>, penalty: &PenaltyConfig) -> f64 {
    let groups = design.groups();
    let levels: Vec<f64> = (0..groups.num_groups()).map(|k| penalty.level(k, groups.size(k))).collect();
    kkt_from_residual(design, &(target - design.x() * u), u, penalty, &levels)
}

/// KKT residual of a projection of the draw `beta` (target `Xβ`) under the
/// group LASSO map.
pub fn kkt_residual_group_lasso(
    design: &GroupedDesign,
    beta: &DVector<f64>,
    lambda: f64,
    result: &ProjectionResult,
) -> f64 {
    kkt_residual(design, &(design.x() * beta), &result.beta_star, &PenaltyConfig::group_lasso(lambda))
}

/// Solves the penalized least-squares problem for an arbitrary target.
pub fn solve_penalized_ls(
    design: &GroupedDesign,
    target: &DVector<f64>,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    BlockSolver::new(design).solve(target, penalty, opts, None)
}

/// Projects a single coefficient vector: target `Xβ`.
pub fn project(
    design: &GroupedDesign,
    beta: &DVector<f64>,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    solve_penalized_ls(design, &(design.x() * beta), penalty, opts)
}

/// Projects every draw with a shared λ. Each draw is warm-started from the
/// projection of the draw average, so results do not depend on the order in
/// which draws are processed. Non-converged draws are kept and flagged.
pub fn project_draws(
    design: &GroupedDesign,
    draws: &PosteriorDraws,
    penalty: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<Vec<ProjectionResult>> {
    if draws.p() != design.p() {
        return Err(Error::DimensionMismatch(format!("draws have {} columns, design has {}", draws.p(), design.p())));
    }
    if draws.is_empty() {
        return Ok(Vec::new());
    }
    let solver = BlockSolver::new(design);
    let m = draws.matrix();
    let avg = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()));
    let start = solver.solve(&(design.x() * &avg), penalty, opts, None)?;
    (0..draws.len())
        .into_par_iter()
        .map(|i| {
            let target = design.x() * draws.draw(i);
            solver.solve(&target, penalty, opts, Some(&start.beta_star))
        })
        .collect()
}

/// Group LASSO regression of `y` on `X`.
pub fn fit_group_lasso(
    design: &GroupedDesign,
    y: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<ProjectionResult> {
    solve_penalized_ls(design, y, &PenaltyConfig::group_lasso(lambda), opts)
}

/// `w_k = 1/‖β̂ᴳᴸ_k‖`; groups with a zero initial estimate get an infinite
/// weight and are excluded from the adaptive fit.
pub fn adaptive_weights(beta_gl: &DVector<f64>, groups: &GroupSpec) -> Vec<f64> {
    (0..groups.num_groups())
        .map(|k| {
            let norm = beta_gl.rows(groups.range(k).start, groups.size(k)).norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Per-group selection frequencies across an ensemble.
pub fn selection_frequencies(results: &[ProjectionResult], num_groups: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_groups];
    for r in results {
        for &k in &r.active_groups {
            counts[k] += 1;
        }
    }
    let total = results.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

/// Summary written alongside an exported projected ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub lambda: f64,
    pub kind: PenaltyKind,
    pub tau: f64,
    pub draws: usize,
    pub converged: usize,
    pub max_kkt_residual: f64,
    pub mean_iterations: f64,
    pub selection_frequencies: Vec<f64>,
}

impl EnsembleSummary {
    pub fn new(penalty: &PenaltyConfig, results: &[ProjectionResult], num_groups: usize) -> Self {
        Self {
            lambda: penalty.lambda,
            kind: penalty.kind,
            tau: penalty.tau,
            draws: results.len(),
            converged: results.iter().filter(|r| r.converged).count(),
            max_kkt_residual: results.iter().map(|r| r.kkt_residual).fold(0.0, f64::max),
            mean_iterations: results.iter().map(|r| r.iterations as f64).sum::<f64>()
                / results.len().max(1) as f64,
            selection_frequencies: selection_frequencies(results, num_groups),
        }
    }
}

/// Writes projected draws as CSV, one row per draw.
pub fn write_ensemble_csv<W: Write>(out: &mut W, results: &[ProjectionResult]) -> io::Result<()> {
    let p = results.first().map_or(0, |r| r.beta_star.len());
    let header: Vec<String> = (1..=p).map(|j| format!("beta_{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for r in results {
        let row: Vec<String> = r.beta_star.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
