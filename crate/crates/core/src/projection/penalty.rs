//! Group penalties and their exact block minimizers.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::GroupSpec;
use crate::error::{Error, Result};

pub const DEFAULT_SCAD_TAU: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    GroupLasso,
    GroupScad,
    AdaptiveGroupLasso,
}

impl PenaltyKind {
    pub fn short_name(self) -> &'static str {
        match self {
            PenaltyKind::GroupLasso => "gl",
            PenaltyKind::GroupScad => "gscad",
            PenaltyKind::AdaptiveGroupLasso => "agl",
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gl" | "group_lasso" => Ok(PenaltyKind::GroupLasso),
            "gscad" | "group_scad" => Ok(PenaltyKind::GroupScad),
            "agl" | "adaptive_group_lasso" => Ok(PenaltyKind::AdaptiveGroupLasso),
            other => Err(Error::InvalidArgument(format!("unknown penalty '{other}'"))),
        }
    }
}

/// Penalty family, tuning parameter and family-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    /// SCAD concavity parameter; must exceed 2.
    pub tau: f64,
    /// Per-group adaptive weights. `f64::INFINITY` excludes a group.
    pub weights: Option<Vec<f64>>,
    /// Scale the SCAD knots by `√p_k` like the group LASSO threshold.
    pub scad_group_scale: bool,
}

impl PenaltyConfig {
    pub fn group_lasso(lambda: f64) -> Self {
        Self {
            kind: PenaltyKind::GroupLasso,
            lambda,
            tau: DEFAULT_SCAD_TAU,
            weights: None,
            scad_group_scale: true,
        }
    }

    pub fn group_scad(lambda: f64, tau: f64) -> Self {
        Self { kind: PenaltyKind::GroupScad, tau, ..Self::group_lasso(lambda) }
    }

    pub fn adaptive(lambda: f64, weights: Vec<f64>) -> Self {
        Self { kind: PenaltyKind::AdaptiveGroupLasso, weights: Some(weights), ..Self::group_lasso(lambda) }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn validate(&self, groups: &GroupSpec) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        match self.kind {
            PenaltyKind::GroupScad if !(self.tau > 2.0) => {
                Err(Error::InvalidArgument(format!("SCAD requires tau > 2, got {}", self.tau)))
            }
            PenaltyKind::AdaptiveGroupLasso => match &self.weights {
                None => Err(Error::InvalidArgument("adaptive penalty requires weights".into())),
                Some(w) if w.len() != groups.num_groups() => Err(Error::InvalidArgument(format!(
                    "{} adaptive weights for {} groups",
                    w.len(),
                    groups.num_groups()
                ))),
                Some(w) if w.iter().any(|v| v.is_nan() || *v < 0.0) => {
                    Err(Error::InvalidArgument("adaptive weights must be non-negative".into()))
                }
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Whether group `k` is fixed at zero (infinite adaptive weight).
    pub fn excluded(&self, k: usize) -> bool {
        matches!(self.kind, PenaltyKind::AdaptiveGroupLasso)
            && self.weights.as_ref().is_some_and(|w| w[k].is_infinite())
    }

    /// The per-group threshold level: the slope of the penalty at zero.
    pub fn level(&self, k: usize, size: usize) -> f64 {
        let root = (size as f64).sqrt();
        match self.kind {
            PenaltyKind::GroupLasso => self.lambda * root,
            PenaltyKind::GroupScad if self.scad_group_scale => self.lambda * root,
            PenaltyKind::GroupScad => self.lambda,
            PenaltyKind::AdaptiveGroupLasso => {
                let w = self.weights.as_ref().map_or(1.0, |w| w[k]);
                if w == 0.0 {
                    0.0
                } else {
                    self.lambda * root * w
                }
            }
        }
    }

    /// Penalty value `𝒫(r)` for a block of norm `r` at threshold level `t`.
    pub fn value(&self, r: f64, t: f64) -> f64 {
        match self.kind {
            PenaltyKind::GroupScad => scad_value(r, t, self.tau),
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

    /// Derivative `𝒫′(r)` for `r > 0`.
    pub fn derivative(&self, r: f64, t: f64) -> f64 {
        match self.kind {
            PenaltyKind::GroupScad => scad_derivative(r, t, self.tau),
            _ => t,
        }
    }
}

/// SCAD penalty with knots `t` and `τt`.
pub fn scad_value(r: f64, t: f64, tau: f64) -> f64 {
    let r = r.abs();
    if r <= t {
        t * r
    } else if r <= tau * t {
        (2.0 * tau * t * r - r * r - t * t) / (2.0 * (tau - 1.0))
    } else {
        t * t * (tau + 1.0) / 2.0
    }
}

/// `P′(r) = t·1(r ≤ t) + (τt − r)₊/(τ − 1)·1(r > t)`.
pub fn scad_derivative(r: f64, t: f64, tau: f64) -> f64 {
    if r <= t {
        t
    } else {
        (tau * t - r).max(0.0) / (tau - 1.0)
    }
}

/// `(1 − t/‖v‖)₊ v`; the zero vector when `‖v‖ ≤ t`.
pub fn group_soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= t {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - t / norm)
    }
}

/// A block quadratic `uᵀAu − 2cᵀu` expressed in the eigenbasis of `A`.
/// Directions with a vanishing eigenvalue carry no linear term.
pub(crate) struct BlockQuadratic<'a> {
    pub eigenvalues: &'a [f64],
    pub c: &'a [f64],
}

impl BlockQuadratic<'_> {
    fn value(&self, u: &[f64]) -> f64 {
        self.eigenvalues
            .iter()
            .zip(self.c)
            .zip(u)
            .map(|((d, c), u)| d * u * u - 2.0 * c * u)
            .sum()
    }

    /// `u(ν) = (A + νI)⁻¹c`.
    fn ridge_point(&self, nu: f64, out: &mut [f64]) {
        for ((o, d), c) in out.iter_mut().zip(self.eigenvalues).zip(self.c) {
            *o = if *c == 0.0 { 0.0 } else { c / (d + nu) };
        }
    }

    fn ridge_norm(&self, nu: f64) -> f64 {
        self.eigenvalues
            .iter()
            .zip(self.c)
            .filter(|(_, c)| **c != 0.0)
            .map(|(d, c)| (c / (d + nu)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn c_norm(&self) -> f64 {
        self.c.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Minimizer of `uᵀAu − 2cᵀu + t‖u‖` (`t > 0`), written to `out`.
    /// Solves `Σ c_i²/(d_i r + t/2)² = 1` for `r = ‖u‖` by safeguarded
    /// Newton iteration on a convex decreasing function.
    pub fn lasso_minimizer(&self, t: f64, out: &mut [f64]) {
        if 2.0 * self.c_norm() <= t {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let half = 0.5 * t;
        let secular = |r: f64| -> (f64, f64) {
            let mut g = -1.0;
            let mut dg = 0.0;
            for (d, c) in self.eigenvalues.iter().zip(self.c) {
                if *c == 0.0 {
                    continue;
                }
                let den = d * r + half;
                g += c * c / (den * den);
                dg -= 2.0 * c * c * d / (den * den * den);
            }
            (g, dg)
        };
        // Upper bracket: with d_min the smallest eigenvalue carrying mass,
        // g(r) ≤ ‖c‖²/(d_min r + t/2)² − 1.
        let d_min = self
            .eigenvalues
            .iter()
            .zip(self.c)
            .filter(|(_, c)| **c != 0.0)
            .map(|(d, _)| *d)
            .fold(f64::INFINITY, f64::min);
        let mut lo = 0.0;
        let mut hi = ((self.c_norm() - half) / d_min).max(0.0);
        if !hi.is_finite() {
            hi = f64::MAX;
        }
        let mut r = 0.0;
        for _ in 0..200 {
            let (g, dg) = secular(r);
            if g > 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let mut next = if dg < 0.0 { r - g / dg } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - r).abs();
            r = next;
            if step <= 1e-13 * r.max(1e-300) || hi - lo <= 1e-14 * hi {
                break;
            }
        }
        for ((o, d), c) in out.iter_mut().zip(self.eigenvalues).zip(self.c) {
            *o = if *c == 0.0 { 0.0 } else { c * r / (d * r + half) };
        }
    }

    /// Global minimizer of `uᵀAu − 2cᵀu + SCAD(‖u‖; t, τ)`.
    ///
    /// Any minimizer satisfies `u = (A + νI)⁻¹c` with `ν = P′(r)/(2r) ≥ 0`,
    /// so candidates are zero, the stationary point of each SCAD segment,
    /// and the unpenalized minimizer. The best candidate by objective wins.
    pub fn scad_minimizer(&self, t: f64, tau: f64, out: &mut [f64]) {
        let len = out.len();
        let mut best_val = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        if t == 0.0 {
            self.ridge_point(0.0, out);
            return;
        }
        if 2.0 * self.c_norm() <= t {
            // no stationary point on the linear segment
            let mut cand = vec![0.0; len];
            self.consider_middle_and_flat(t, tau, &mut cand, &mut best_val, out);
            return;
        }
        let mut cand = vec![0.0; len];
        self.lasso_minimizer(t, &mut cand);
        let r = norm(&cand);
        if r <= t {
            let v = self.value(&cand) + t * r;
            if v < best_val {
                best_val = v;
                out.copy_from_slice(&cand);
            }
        }
        self.consider_middle_and_flat(t, tau, &mut cand, &mut best_val, out);
    }

    fn consider_middle_and_flat(&self, t: f64, tau: f64, cand: &mut [f64], best: &mut f64, out: &mut [f64]) {
        // Flat segment: the unpenalized block minimizer.
        self.ridge_point(0.0, cand);
        let r_max = norm(cand);
        if r_max > tau * t {
            let v = self.value(cand) + scad_value(r_max, t, tau);
            if v < *best {
                *best = v;
                out.copy_from_slice(cand);
            }
        }
        // Middle segment t < r ≤ τt: roots of ψ(r) = ‖u(ν(r))‖ − r with
        // ν(r) = (τt − r)/(2(τ − 1)r).
        let lo = t;
        let hi = (tau * t).min(r_max);
        if hi <= lo {
            return;
        }
        let nu = |r: f64| (tau * t - r) / (2.0 * (tau - 1.0) * r);
        let psi = |r: f64| self.ridge_norm(nu(r)) - r;
        const GRID: usize = 64;
        let mut prev_r = lo;
        let mut prev = psi(lo);
        for i in 1..=GRID {
            let r = lo + (hi - lo) * i as f64 / GRID as f64;
            let cur = psi(r);
            if prev == 0.0 || prev.signum() != cur.signum() {
                let root = if prev == 0.0 { prev_r } else { bisect(&psi, prev_r, r, prev) };
                self.ridge_point(nu(root), cand);
                let v = self.value(cand) + scad_value(norm(cand), t, tau);
                if v < *best {
                    *best = v;
                    out.copy_from_slice(cand);
                }
            }
            prev_r = r;
            prev = cur;
        }
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, fa: f64) -> f64 {
    let sa = fa.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == sa {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 1e-15 * b.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (a + b)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Value of the block objective in the eigenbasis; exposed for the solver's
/// acceptance test.
pub(crate) fn block_objective(q: &BlockQuadratic<'_>, u: &[f64], penalty: &PenaltyConfig, t: f64) -> f64 {
    q.value(u) + penalty.value(norm(u), t)
}
