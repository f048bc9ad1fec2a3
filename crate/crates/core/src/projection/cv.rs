//! K-fold cross-validation of the penalty level.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BlockSolver, PenaltyConfig, SolverOptions};
use crate::design::GroupedDesign;
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_LEN: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
/// Grid floor when `n ≤ p`, where fits near `λ → 0` interpolate.
pub const HIGH_DIM_GRID_RATIO: f64 = 0.05;

/// `λ_min/λ_max` of the default grid: `0.05` when `n ≤ p`, `1e-3` otherwise.
pub fn default_grid_ratio(n: usize, p: usize) -> f64 {
    if n <= p {
        HIGH_DIM_GRID_RATIO
    } else {
        DEFAULT_GRID_RATIO
    }
}

/// Smallest λ at which every (non-excluded) group is zero:
/// `max_k 2‖n⁻¹X_kᵀy‖ / (level_k/λ)`.
pub fn lambda_max(design: &GroupedDesign, y: &DVector<f64>, template: &PenaltyConfig) -> f64 {
    let n = design.n() as f64;
    let unit = template.with_lambda(1.0);
    let groups = design.groups();
    (0..groups.num_groups())
        .filter(|&k| !unit.excluded(k))
        .map(|k| {
            let grad = design.group_block(k).tr_mul(y).norm() * 2.0 / n;
            let level = unit.level(k, groups.size(k));
            if level > 0.0 {
                grad / level
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// `len` log-spaced values from `λ_max` down to `ratio·λ_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * ratio).ln());
    (0..len).map(|i| (hi + (lo - hi) * i as f64 / (len - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out squared prediction error per grid value.
    pub errors: Vec<f64>,
    pub folds: usize,
}

/// Selects λ by `folds`-fold cross-validation of the penalized fit of `y`
/// on `X`. Fold membership comes from a seeded shuffle. When `grid` is
/// `None`, `DEFAULT_GRID_LEN` log-spaced values from `λ_max` down to
/// `default_grid_ratio(n, p)·λ_max` are used.
pub fn cross_validate_lambda(
    design: &GroupedDesign,
    y: &DVector<f64>,
    template: &PenaltyConfig,
    folds: usize,
    grid: Option<&[f64]>,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvResult> {
    let n = design.n();
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("y has length {} but n = {n}", y.len())));
    }
    if n / folds < 2 {
        return Err(Error::InvalidArgument(format!("{n} rows cannot fill {folds} folds with at least 2 rows each")));
    }
    template.with_lambda(0.0).validate(design.groups())?;
    let mut grid: Vec<f64> = match grid {
        Some(g) if g.is_empty() => return Err(Error::InvalidArgument("empty λ grid".into())),
        Some(g) => g.to_vec(),
        None => {
            let lm = lambda_max(design, y, template);
            if lm <= 0.0 {
                return Err(Error::InvalidArgument("λ_max is zero: the response is orthogonal to X".into()));
            }
            lambda_grid(lm, DEFAULT_GRID_LEN, default_grid_ratio(n, design.p()))
        }
    };
    if grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidArgument("λ grid values must be positive".into()));
    }
    // Warm starts run from large to small λ.
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if grid.len() == 1 {
        return Ok(CvResult { lambda: grid[0], errors: vec![f64::NAN], grid, folds });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }

    let mut sse = vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
        let x_train = design.x().select_rows(train.iter());
        let train_design = GroupedDesign::new(x_train, design.groups().clone())?;
        let y_train = y.select_rows(train.iter());
        let x_test = design.x().select_rows(test.iter());
        let y_test = y.select_rows(test.iter());
        let solver = BlockSolver::new(&train_design);
        let mut warm: Option<DVector<f64>> = None;
        for (g, &lam) in grid.iter().enumerate() {
            let fit = solver.solve(&y_train, &template.with_lambda(lam), opts, warm.as_ref())?;
            let pred = &x_test * &fit.beta_star;
            sse[g] += (&y_test - pred).norm_squared();
            warm = Some(fit.beta_star);
        }
    }
    let errors: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let best = errors
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc })
        .0;
    Ok(CvResult { lambda: grid[best], grid, errors, folds })
}
