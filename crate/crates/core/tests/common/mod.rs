//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparseproj::design::{GroupSpec, GroupedDesign};
use sparseproj::projection::{PenaltyConfig, PenaltyKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn random_sizes(rng: &mut ChaCha8Rng, k: usize, max_size: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(1..=max_size)).collect()
}

pub fn design(x: DMatrix<f64>, sizes: &[usize]) -> GroupedDesign {
    GroupedDesign::new(x, GroupSpec::from_sizes(sizes).unwrap()).unwrap()
}

/// Design with `n⁻¹XᵀX = I` (requires `n ≥ p`).
pub fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, sizes: &[usize]) -> GroupedDesign {
    let p = sizes.iter().sum();
    let q = normal_matrix(rng, n, p).qr().q();
    design(q * (n as f64).sqrt(), sizes)
}

fn group_levels(penalty: &PenaltyConfig, sizes: &[usize]) -> Vec<f64> {
    sizes.iter().enumerate().map(|(k, &s)| penalty.level(k, s)).collect()
}

fn block_ranges(sizes: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect()
}

/// Penalty of one block of norm `r` at threshold level `t`, written out
/// from the definitions.
pub fn block_penalty(kind: PenaltyKind, r: f64, t: f64, tau: f64) -> f64 {
    match kind {
        PenaltyKind::GroupScad => {
            if r <= t {
                t * r
            } else if r <= tau * t {
                (2.0 * tau * t * r - r * r - t * t) / (2.0 * (tau - 1.0))
            } else {
                t * t * (tau + 1.0) / 2.0
            }
        }
        _ if t.is_infinite() => {
            if r == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        _ => t * r,
    }
}

/// `n⁻¹‖target − Xu‖² + Σ_k 𝒫(‖u_k‖)`.
pub fn reference_objective(
    x: &DMatrix<f64>,
    sizes: &[usize],
    target: &DVector<f64>,
    u: &DVector<f64>,
    penalty: &PenaltyConfig,
) -> f64 {
    let n = x.nrows() as f64;
    let levels = group_levels(penalty, sizes);
    let fit = (target - x * u).norm_squared() / n;
    let pen: f64 = block_ranges(sizes)
        .into_iter()
        .zip(&levels)
        .map(|(r, &t)| block_penalty(penalty.kind, u.rows(r.start, r.len()).norm(), t, penalty.tau))
        .sum();
    fit + pen
}

/// Radial proximal step: `argmin_ρ (ρ − b)²/(2s) + 𝒫(ρ)`, evaluated over
/// the closed-form stationary points of every piece.
fn radial_prox(kind: PenaltyKind, b: f64, s: f64, t: f64, tau: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    match kind {
        PenaltyKind::GroupScad => {
            let mut cands = vec![0.0, t, tau * t, b, (b - s * t).clamp(0.0, t), b.max(tau * t)];
            let curv = 1.0 / s - 1.0 / (tau - 1.0);
            if curv > 0.0 {
                cands.push(((b / s - tau * t / (tau - 1.0)) / curv).clamp(t, tau * t));
            }
            let f = |r: f64| (r - b).powi(2) / (2.0 * s) + block_penalty(kind, r, t, tau);
            cands.into_iter().filter(|r| *r >= 0.0).fold((f64::INFINITY, 0.0), |best, r| {
                let v = f(r);
                if v < best.0 {
                    (v, r)
                } else {
                    best
                }
            })
            .1
        }
        _ => (b - s * t).max(0.0),
    }
}

/// Proximal gradient descent on the projection objective from `start`,
/// step `1/L` with `L = 2λ_max(n⁻¹XᵀX)`.
pub fn proximal_gradient(
    x: &DMatrix<f64>,
    sizes: &[usize],
    target: &DVector<f64>,
    penalty: &PenaltyConfig,
    start: DVector<f64>,
    iterations: usize,
) -> DVector<f64> {
    let n = x.nrows() as f64;
    let gram = x.tr_mul(x) / n;
    let lip = 2.0 * jacobi_eigenvalues(&gram).into_iter().fold(0.0, f64::max);
    let step = 1.0 / lip;
    let xty = x.tr_mul(target) / n;
    let levels = group_levels(penalty, sizes);
    let ranges = block_ranges(sizes);
    let mut u = start;
    for _ in 0..iterations {
        let grad = (&gram * &u - &xty) * 2.0;
        let v = &u - grad * step;
        let mut next = DVector::zeros(u.len());
        for (r, &t) in ranges.iter().zip(&levels) {
            let block = v.rows(r.start, r.len());
            let b = block.norm();
            let rho = radial_prox(penalty.kind, b, step, t, penalty.tau);
            if b > 0.0 && rho > 0.0 {
                next.rows_mut(r.start, r.len()).copy_from(&(block * (rho / b)));
            }
        }
        let change = (&next - &u).amax();
        u = next;
        if change < 1e-15 {
            break;
        }
    }
    u
}

/// Best proximal-gradient solution over several starting points.
pub fn proximal_oracle(
    x: &DMatrix<f64>,
    sizes: &[usize],
    target: &DVector<f64>,
    penalty: &PenaltyConfig,
    rng: &mut ChaCha8Rng,
) -> (DVector<f64>, f64) {
    let p = x.ncols();
    let mut starts = vec![DVector::zeros(p)];
    if let Some(ls) = x.clone().svd(true, true).solve(target, 1e-12).ok() {
        starts.push(ls);
    }
    for _ in 0..4 {
        starts.push(normal_vector(rng, p) * 2.0);
    }
    starts
        .into_iter()
        .map(|s| {
            let u = proximal_gradient(x, sizes, target, penalty, s, 200_000);
            let obj = reference_objective(x, sizes, target, &u, penalty);
            (u, obj)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Ordinary lasso `n⁻¹‖target − Xu‖² + λΣ|u_j|` by cyclic scalar
/// soft-thresholding.
pub fn scalar_lasso_cd(x: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut u: DVector<f64> = DVector::zeros(p);
    let mut r = target.clone();
    let diag: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / n).collect();
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for j in 0..p {
            let c = x.column(j).dot(&r) / n + diag[j] * u[j];
            let half = lambda / 2.0;
            let new = if c > half {
                (c - half) / diag[j]
            } else if c < -half {
                (c + half) / diag[j]
            } else {
                0.0
            };
            let delta = new - u[j];
            if delta != 0.0 {
                r.axpy(-delta, &x.column(j), 1.0);
                u[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change < 1e-15 {
            break;
        }
    }
    u
}

/// Cox–de Boor recursion for `B_{i,d}(x)` on `knots`, with the right
/// endpoint assigned to the last non-degenerate span.
pub fn de_boor(i: usize, d: usize, x: f64, knots: &[f64]) -> f64 {
    if d == 0 {
        let hi = *knots.last().unwrap();
        let last = (0..knots.len() - 1).rev().find(|&j| knots[j] < knots[j + 1]).unwrap();
        return if knots[i] <= x && x < knots[i + 1] || (x == hi && i == last) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let left = knots[i + d] - knots[i];
    if left > 0.0 {
        v += (x - knots[i]) / left * de_boor(i, d - 1, x, knots);
    }
    let right = knots[i + d + 1] - knots[i + 1];
    if right > 0.0 {
        v += (knots[i + d + 1] - x) / right * de_boor(i + 1, d - 1, x, knots);
    }
    v
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut a = a.clone();
    let n = a.nrows();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}
