//! Conjugate Gaussian posterior of the regression coefficients and
//! reproducible sampling from it.
//!
//! With prior `β ~ N(0, σ²a⁻¹I)` the posterior is
//! `N(β̂ᴿ, σ²(XᵀX + aI)⁻¹)` with `β̂ᴿ = (XᵀX + aI)⁻¹Xᵀy`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::GroupedDesign;
use crate::error::{Error, Result};

/// How the noise scale is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaMode {
    /// Ridge residual variance `‖y − Xβ̂ᴿ‖² / max(n − df, 1)`.
    Auto,
    Fixed(f64),
}

/// Linear system used for the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveForm {
    /// `(XᵀX + aI_p) β = Xᵀy`.
    Primal,
    /// `β = Xᵀ(XXᵀ + aI_n)⁻¹y`, cheaper when `p > n`.
    Dual,
}

#[derive(Debug, Clone)]
pub struct RidgePosterior {
    mean: DVector<f64>,
    /// `F` with `FFᵀ = σ²(XᵀX + aI)⁻¹`.
    cov_factor: DMatrix<f64>,
    lower_triangular: bool,
    sigma: f64,
    a_n: f64,
    df: f64,
}

impl RidgePosterior {
    /// Assembles a posterior from explicit pieces. Used for degenerate test
    /// fixtures and for reloading exported runs.
    pub fn from_parts(mean: DVector<f64>, cov_factor: DMatrix<f64>, sigma: f64, a_n: f64) -> Result<Self> {
        let p = mean.len();
        if cov_factor.shape() != (p, p) {
            return Err(Error::DimensionMismatch(format!(
                "covariance factor is {:?}, expected ({p}, {p})",
                cov_factor.shape()
            )));
        }
        let lower_triangular = (0..p).all(|i| (i + 1..p).all(|j| cov_factor[(i, j)] == 0.0));
        Ok(Self { mean, cov_factor, lower_triangular, sigma, a_n, df: f64::NAN })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov_factor(&self) -> &DMatrix<f64> {
        &self.cov_factor
    }

    /// Whether the stored factor is the lower-triangular Cholesky-type factor
    /// (false only after the eigendecomposition fallback).
    pub fn is_lower_triangular(&self) -> bool {
        self.lower_triangular
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn a_n(&self) -> f64 {
        self.a_n
    }

    /// `trace(H(a_n))`, the effective degrees of freedom of the ridge fit.
    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    /// `Xβ̂ᴿ`.
    pub fn predictive_mean(&self, design: &GroupedDesign) -> DVector<f64> {
        design.x() * &self.mean
    }
}

/// Ridge solution `(XᵀX + aI)⁻¹Xᵀy` by either the primal or the dual system.
pub fn ridge_mean(x: &DMatrix<f64>, y: &DVector<f64>, a_n: f64, form: SolveForm) -> Result<DVector<f64>> {
    match form {
        SolveForm::Primal => {
            let mut a = x.tr_mul(x);
            a.fill_upper_triangle_with_lower_triangle();
            for i in 0..a.nrows() {
                a[(i, i)] += a_n;
            }
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::Singular("XᵀX + aI".into()))?;
            Ok(chol.solve(&x.tr_mul(y)))
        }
        SolveForm::Dual => {
            let mut k = x * x.transpose();
            for i in 0..k.nrows() {
                k[(i, i)] += a_n;
            }
            let chol = k
                .cholesky()
                .ok_or_else(|| Error::Singular("XXᵀ + aI".into()))?;
            Ok(x.tr_mul(&chol.solve(y)))
        }
    }
}

/// Fits the conjugate posterior of β given the design and response.
pub fn fit_ridge_posterior(
    design: &GroupedDesign,
    y: &DVector<f64>,
    a_n: f64,
    sigma: SigmaMode,
) -> Result<RidgePosterior> {
    let x = design.x();
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("y has length {} but the design has {n} rows", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "response".into(), row: i + 1, col: 1 });
    }
    if !(a_n > 0.0) || !a_n.is_finite() {
        return Err(Error::InvalidArgument(format!("a_n must be positive, got {a_n}")));
    }
    if let SigmaMode::Fixed(s) = sigma {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {s}")));
        }
    }

    let form = if p > n { SolveForm::Dual } else { SolveForm::Primal };
    let mean = ridge_mean(x, y, a_n, form)?;

    let mut a = x.tr_mul(x);
    a.fill_upper_triangle_with_lower_triangle();
    for i in 0..p {
        a[(i, i)] += a_n;
    }
    let (unit_factor, lower_triangular) = match inverse_lower_factor(&a) {
        Some(f) => (f, true),
        None => (inverse_sqrt_eigen(a, 1e-12), false),
    };

    // trace(H) = trace(A⁻¹XᵀX) = p − a·trace(A⁻¹)
    let trace_inv = unit_factor.norm_squared();
    let df = (p as f64 - a_n * trace_inv).clamp(0.0, n.min(p) as f64);

    let sigma = match sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Auto => {
            let resid = y - x * &mean;
            let dof = (n as f64 - df).max(1.0);
            (resid.norm_squared() / dof).sqrt()
        }
    };
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(
            "estimated sigma is zero; supply a fixed sigma".into(),
        ));
    }

    Ok(RidgePosterior { mean, cov_factor: unit_factor * sigma, lower_triangular, sigma, a_n, df })
}

/// Lower-triangular `F` with `FFᵀ = A⁻¹`.
///
/// With `J` the reversal permutation and `JAJ = MMᵀ`, we have
/// `A⁻¹ = (J M⁻ᵀ J)(J M⁻ᵀ J)ᵀ` and `J M⁻ᵀ J` is lower triangular.
fn inverse_lower_factor(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = a.nrows();
    let rev = DMatrix::from_fn(p, p, |i, j| a[(p - 1 - i, p - 1 - j)]);
    let m = rev.cholesky()?.unpack();
    let m_inv = m.solve_lower_triangular(&DMatrix::identity(p, p))?;
    if m_inv.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_fn(p, p, |i, j| m_inv[(p - 1 - j, p - 1 - i)]))
}

/// Symmetric `A^{-1/2}` with eigenvalues floored at `floor`.
fn inverse_sqrt_eigen(a: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a);
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor).sqrt()),
    );
    let q = &eig.eigenvectors;
    let mut qs = q.clone();
    for (j, s) in scaled.iter().enumerate() {
        qs.column_mut(j).scale_mut(*s);
    }
    qs * q.transpose()
}

/// `D` draws from the posterior, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    draws: DMatrix<f64>,
    seed: u64,
}

impl PosteriorDraws {
    pub fn from_matrix(draws: DMatrix<f64>, seed: u64) -> Self {
        Self { draws, seed }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn p(&self) -> usize {
        self.draws.ncols()
    }

    pub fn draw(&self, i: usize) -> DVector<f64> {
        self.draws.row(i).transpose()
    }

    /// Writes the draws as CSV with header `beta_1..beta_p`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.p()).map(|j| format!("beta_{j}")).collect();
        writeln!(out, "{}", header.join(","))?;
        write_rows(out, &self.draws)
    }
}

pub(crate) fn write_rows<W: Write>(out: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Metadata written next to exported draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsSidecar {
    pub seed: u64,
    #[serde(rename = "D")]
    pub d: usize,
    pub a_n: f64,
    pub sigma: f64,
}

/// Standard normal vector from the substream `(seed, index)`.
pub(crate) fn normal_stream(seed: u64, index: u64, len: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(&mut rng)))
}

/// Draws `count` samples `β̂ᴿ + F z_i`, where `z_i` comes from the ChaCha
/// substream `i` of `seed`. Output does not depend on thread scheduling.
pub fn sample_posterior(post: &RidgePosterior, count: usize, seed: u64) -> Result<PosteriorDraws> {
    if count == 0 {
        return Err(Error::InvalidArgument("draw count must be at least 1".into()));
    }
    let p = post.p();
    let rows: Vec<DVector<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let z = normal_stream(seed, i as u64, p);
            &post.mean + &post.cov_factor * z
        })
        .collect();
    let mut draws = DMatrix::zeros(count, p);
    for (i, r) in rows.iter().enumerate() {
        draws.set_row(i, &r.transpose());
    }
    Ok(PosteriorDraws { draws, seed })
}
