//! Solver, debiasing, sampler and basis outputs checked against independent
//! reference implementations.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sparseproj::additive::{bspline_basis, SplineBasisSpec};
use sparseproj::debias::{build_theta_hat, NodewiseLambda};
use sparseproj::posterior::{fit_ridge_posterior, sample_posterior, SigmaMode};
use sparseproj::projection::{
    adaptive_weights, fit_group_lasso, group_soft_threshold, kkt_residual, lambda_max, objective, project,
    solve_penalized_ls, PenaltyConfig, SolverOptions,
};

fn tight() -> SolverOptions {
    SolverOptions { tol: 1e-12, max_iter: 100_000, record_objective: false }
}

fn sparse_beta(rng: &mut rand_chacha::ChaCha8Rng, sizes: &[usize]) -> DVector<f64> {
    let mut beta = DVector::zeros(sizes.iter().sum());
    let mut start = 0;
    for &s in sizes {
        if rng.random_bool(0.5) {
            for j in start..start + s {
                beta[j] = rng.random_range(-2.0..2.0);
            }
        }
        start += s;
    }
    beta
}

#[test]
fn kkt_certificate_for_every_penalty() {
    let mut rng = rng(11);
    for _ in 0..25 {
        let k = rng.random_range(1..=10);
        let sizes = random_sizes(&mut rng, k, 10);
        let n = rng.random_range(20..=200);
        let d = design(normal_matrix(&mut rng, n, sizes.iter().sum()), &sizes);
        let beta = sparse_beta(&mut rng, &sizes);
        let target = d.x() * &beta + normal_vector(&mut rng, n) * 0.5;
        let lmax = lambda_max(&d, &target, &PenaltyConfig::group_lasso(1.0));
        let lambda = lmax * rng.random_range(0.02..0.8);
        let opts = SolverOptions::default();

        let gl = fit_group_lasso(&d, &target, lambda, &opts).unwrap();
        let penalties = [
            PenaltyConfig::group_lasso(lambda),
            PenaltyConfig::group_scad(lambda, 3.7),
            PenaltyConfig::adaptive(lambda, adaptive_weights(&gl.beta_star, d.groups())),
        ];
        for pen in &penalties {
            let res = solve_penalized_ls(&d, &target, pen, &opts).unwrap();
            let kkt = kkt_residual(&d, &target, &res.beta_star, pen);
            assert!(kkt <= 1e-6, "{:?}: kkt {kkt}", pen.kind);
        }
    }
}

#[test]
fn orthonormal_design_has_closed_form() {
    let mut rng = rng(12);
    for _ in 0..10 {
        let sizes = random_sizes(&mut rng, 6, 5);
        let n = 80;
        let d = orthonormal_design(&mut rng, n, &sizes);
        let beta = normal_vector(&mut rng, d.p()) * 1.5;
        let lambda = rng.random_range(0.1..1.0);

        let gl = project(&d, &beta, &PenaltyConfig::group_lasso(lambda), &tight()).unwrap();
        let scad = project(&d, &beta, &PenaltyConfig::group_scad(lambda, 3.7), &tight()).unwrap();
        for (k, r) in d.groups().ranges().iter().enumerate() {
            let block = beta.rows(r.start, r.len()).clone_owned();
            let root = (r.len() as f64).sqrt();
            let expected = group_soft_threshold(&block, lambda * root / 2.0);
            let got = gl.beta_star.rows(r.start, r.len());
            assert!((got - &expected).amax() <= 1e-8, "group {k}");
            if block.norm() > 3.7 * lambda * root {
                assert!((scad.beta_star.rows(r.start, r.len()) - &block).amax() <= 1e-8, "scad group {k}");
            }
        }
    }
}

#[test]
fn no_worse_than_proximal_gradient_on_small_problems() {
    let mut rng = rng(13);
    for _ in 0..10 {
        let k = rng.random_range(1..=3);
        let sizes = random_sizes(&mut rng, k, 2);
        let p: usize = sizes.iter().sum();
        let n = rng.random_range(4..=30);
        let x = normal_matrix(&mut rng, n, p);
        let d = design(x.clone(), &sizes);
        let target = normal_vector(&mut rng, n) * 2.0;
        let lambda = lambda_max(&d, &target, &PenaltyConfig::group_lasso(1.0)) * rng.random_range(0.05..0.9);
        let gl = fit_group_lasso(&d, &target, lambda, &tight()).unwrap();
        for pen in [
            PenaltyConfig::group_lasso(lambda),
            PenaltyConfig::group_scad(lambda, 3.7),
            PenaltyConfig::adaptive(lambda, adaptive_weights(&gl.beta_star, d.groups())),
        ] {
            let res = solve_penalized_ls(&d, &target, &pen, &tight()).unwrap();
            let ours = reference_objective(&x, &sizes, &target, &res.beta_star, &pen);
            assert!((ours - objective(&d, &target, &res.beta_star, &pen)).abs() < 1e-10);
            let (_, oracle) = proximal_oracle(&x, &sizes, &target, &pen, &mut rng);
            assert!(ours <= oracle + 1e-7, "{:?}: {ours} vs oracle {oracle}", pen.kind);
        }
    }
}

#[test]
fn singleton_groups_reduce_to_scalar_lasso() {
    let mut rng = rng(14);
    for _ in 0..10 {
        let p = rng.random_range(2..=20);
        let n = rng.random_range(p + 5..=100);
        let x = normal_matrix(&mut rng, n, p);
        let d = design(x.clone(), &vec![1; p]);
        let target = normal_vector(&mut rng, n) * 2.0;
        let lambda = lambda_max(&d, &target, &PenaltyConfig::group_lasso(1.0)) * rng.random_range(0.05..0.9);
        let res = fit_group_lasso(&d, &target, lambda, &tight()).unwrap();
        let reference = scalar_lasso_cd(&x, &target, lambda);
        assert!((&res.beta_star - &reference).amax() <= 1e-8);
    }
}

#[test]
fn theta_hat_identity_recomputed_independently() {
    let mut rng = rng(15);
    for _ in 0..4 {
        let sizes = random_sizes(&mut rng, 5, 3);
        let n = 60;
        let d = design(normal_matrix(&mut rng, n, sizes.iter().sum()), &sizes).standardize().unwrap();
        let theta = build_theta_hat(&d, &NodewiseLambda::default(), &SolverOptions::default()).unwrap();
        let tg = theta.times_gram(&d) - DMatrix::identity(d.p(), d.p());
        let spec = d.groups();
        for (g, r) in spec.ranges().iter().enumerate() {
            assert!(tg.view((r.start, r.start), (r.len(), r.len())).amax() <= 1e-8);

            let fit = &theta.groups[g];
            let others = d.without_group(g);
            let resid = d.group_block(g) - &others * &fit.gamma;
            assert!((&resid - &fit.residuals).amax() < 1e-10);
            let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&fit.lambdas));
            let gap = others.tr_mul(&resid) * (2.0 / n as f64) - &fit.kappa * lam;
            assert!(gap.amax() <= 1e-6, "identity gap {}", gap.amax());

            // κ is a valid subgradient of Σ√p_k‖γ_k‖ at γ.
            let mut offset = 0;
            for k in (0..spec.num_groups()).filter(|&k| k != g) {
                let sk = spec.size(k);
                let root = (sk as f64).sqrt();
                for l in 0..fit.gamma.ncols() {
                    let gk = fit.gamma.view((offset, l), (sk, 1));
                    let kk = fit.kappa.view((offset, l), (sk, 1));
                    if gk.norm() > 0.0 {
                        assert!((kk - gk * (root / gk.norm())).amax() < 1e-6);
                    } else {
                        assert!(kk.norm() <= root + 1e-6);
                    }
                }
                offset += sk;
            }
        }
    }
}

#[test]
fn sampler_reproduces_mean_and_covariance() {
    let mut rng = rng(16);
    let n = 40;
    let x = normal_matrix(&mut rng, n, 2);
    let d = design(x, &[1, 1]);
    let y = d.x() * DVector::from_vec(vec![1.0, -0.5]) + normal_vector(&mut rng, n);
    let post = fit_ridge_posterior(&d, &y, 1.0 / n as f64, SigmaMode::Fixed(1.0)).unwrap();
    let count = 20_000;
    let draws = sample_posterior(&post, count, 7).unwrap();
    let m = draws.matrix();
    let cov = post.covariance();
    let tol = 4.0 / (count as f64).sqrt();
    let means: Vec<f64> = (0..2).map(|j| m.column(j).mean()).collect();
    for j in 0..2 {
        assert!(((means[j] - post.mean()[j]) / cov[(j, j)].sqrt()).abs() <= tol);
        for k in 0..2 {
            let c = m.column(j).iter().zip(m.column(k).iter()).map(|(a, b)| (a - means[j]) * (b - means[k])).sum::<f64>()
                / (count - 1) as f64;
            assert!(((c - cov[(j, k)]) / (cov[(j, j)] * cov[(k, k)]).sqrt()).abs() <= tol);
        }
    }
}

#[test]
fn spline_basis_matches_recursion() {
    let mut rng = rng(17);
    for degree in 0..=4 {
        let mut interior: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..2.0)).collect();
        interior.sort_by(f64::total_cmp);
        let spec = SplineBasisSpec::clamped(-1.0, 2.0, &interior, degree).unwrap();
        let mut xs: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..=2.0)).collect();
        xs.extend([-1.0, 2.0]);
        xs.extend(interior.iter().copied());
        let b = bspline_basis(&xs, &spec).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert!((b.row(i).sum() - 1.0).abs() <= 1e-12);
            for j in 0..spec.basis_count {
                let r = de_boor(j, degree, x, &spec.knots);
                assert!((b[(i, j)] - r).abs() <= 1e-12, "degree {degree}, x {x}, j {j}");
            }
        }
    }
}
