//! Design matrices with a contiguous group partition of the columns.
//!
//! Groups are stored internally as zero-based half-open column ranges. File
//! formats and the public constructors that take `(start, end)` pairs use the
//! one-based inclusive convention.

use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous, ordered, disjoint partition of the columns `0..p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    ranges: Vec<Range<usize>>,
    names: Vec<String>,
}

impl GroupSpec {
    /// Builds a partition from one-based inclusive `(start, end)` pairs and
    /// checks that the ranges tile `1..=p` exactly.
    pub fn from_one_based(bounds: &[(usize, usize)], p: usize) -> Result<Self> {
        let names = (1..=bounds.len()).map(|k| format!("g{k}")).collect();
        Self::from_named_one_based(bounds, names, p)
    }

    pub fn from_named_one_based(
        bounds: &[(usize, usize)],
        names: Vec<String>,
        p: usize,
    ) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidGroups("no groups given".into()));
        }
        if names.len() != bounds.len() {
            return Err(Error::InvalidGroups("one name per group required".into()));
        }
        let mut ranges = Vec::with_capacity(bounds.len());
        let mut next = 1usize;
        for (k, &(start, end)) in bounds.iter().enumerate() {
            if start == 0 || end < start {
                return Err(Error::InvalidGroups(format!(
                    "group {} has invalid range ({start}, {end})",
                    k + 1
                )));
            }
            if start < next {
                return Err(Error::InvalidGroups(format!(
                    "group {} overlaps the previous group at column {start}",
                    k + 1
                )));
            }
            if start > next {
                return Err(Error::InvalidGroups(format!(
                    "columns {next}..{} are not covered by any group",
                    start - 1
                )));
            }
            ranges.push(start - 1..end);
            next = end + 1;
        }
        if next - 1 != p {
            if next - 1 < p {
                return Err(Error::InvalidGroups(format!(
                    "columns {next}..{p} are not covered by any group"
                )));
            }
            return Err(Error::InvalidGroups(format!(
                "groups cover {} columns but the design has {p}",
                next - 1
            )));
        }
        Ok(Self { ranges, names })
    }

    /// Consecutive groups with the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut bounds = Vec::with_capacity(sizes.len());
        let mut start = 1;
        for &s in sizes {
            if s == 0 {
                return Err(Error::InvalidGroups("group of size zero".into()));
            }
            bounds.push((start, start + s - 1));
            start += s;
        }
        Self::from_one_based(&bounds, start - 1)
    }

    /// `k` groups of identical width `size`.
    pub fn uniform(k: usize, size: usize) -> Result<Self> {
        Self::from_sizes(&vec![size; k])
    }

    pub fn num_groups(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_columns(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.ranges[k].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn size(&self, k: usize) -> usize {
        self.ranges[k].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    pub fn min_size(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).min().unwrap_or(0)
    }

    pub fn max_size(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Group owning column `j`.
    pub fn group_of(&self, j: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&j))
    }

    /// One-based inclusive bounds, as written to files.
    pub fn one_based_bounds(&self) -> Vec<(usize, usize)> {
        self.ranges.iter().map(|r| (r.start + 1, r.end)).collect()
    }

    /// Column indices of the groups in `set`, in group order.
    pub fn columns_of(&self, set: &[usize]) -> Vec<usize> {
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.iter().flat_map(|&k| self.range(k)).collect()
    }
}

/// Computes the column permutation that makes arbitrary group labels
/// contiguous. Returns `(perm, spec)` where column `perm[j]` of the input
/// becomes column `j` of the permuted design. Groups are ordered by first
/// appearance and columns keep their relative order within a group.
pub fn contiguous_permutation(labels: &[usize]) -> Result<(Vec<usize>, GroupSpec)> {
    if labels.is_empty() {
        return Err(Error::InvalidGroups("no columns".into()));
    }
    let mut order: Vec<usize> = Vec::new();
    for &l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    let mut perm = Vec::with_capacity(labels.len());
    let mut sizes = Vec::with_capacity(order.len());
    for &g in &order {
        let before = perm.len();
        perm.extend(labels.iter().enumerate().filter(|(_, &l)| l == g).map(|(j, _)| j));
        sizes.push(perm.len() - before);
    }
    Ok((perm, GroupSpec::from_sizes(&sizes)?))
}

/// An `n × p` design matrix together with its group partition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign {
    x: DMatrix<f64>,
    groups: GroupSpec,
    column_means: DVector<f64>,
    column_scales: DVector<f64>,
}

impl GroupedDesign {
    pub fn new(x: DMatrix<f64>, groups: GroupSpec) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 {
            return Err(Error::DimensionMismatch(format!("need at least 2 rows, got {n}")));
        }
        if groups.num_columns() != p {
            return Err(Error::DimensionMismatch(format!(
                "design has {p} columns but groups cover {}",
                groups.num_columns()
            )));
        }
        for j in 0..p {
            for i in 0..n {
                if !x[(i, j)].is_finite() {
                    return Err(Error::NonFinite { what: "design".into(), row: i + 1, col: j + 1 });
                }
            }
        }
        Ok(Self {
            x,
            groups,
            column_means: DVector::zeros(p),
            column_scales: DVector::from_element(p, 1.0),
        })
    }

    /// Centers every column and rescales it to `n⁻¹‖x_j‖² = 1`. The applied
    /// means and scales compose with any previously recorded ones so that
    /// `original = standardized * scale + mean` keeps holding.
    pub fn standardize(&self) -> Result<Self> {
        let (n, p) = self.x.shape();
        let mut x = self.x.clone();
        let mut means = self.column_means.clone();
        let mut scales = self.column_scales.clone();
        for j in 0..p {
            let mut col = x.column_mut(j);
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let ss = col.norm_squared() / n as f64;
            let max_abs = self.x.column(j).amax();
            if ss <= 1e-24 * (1.0 + max_abs * max_abs) {
                return Err(Error::ConstantColumn(j + 1));
            }
            let scale = ss.sqrt();
            col /= scale;
            means[j] += mean * scales[j];
            scales[j] *= scale;
        }
        Ok(Self { x, groups: self.groups.clone(), column_means: means, column_scales: scales })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn groups(&self) -> &GroupSpec {
        &self.groups
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.num_groups()
    }

    pub fn column_scales(&self) -> &DVector<f64> {
        &self.column_scales
    }

    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    /// `X_{G_k}`.
    pub fn group_block(&self, k: usize) -> DMatrixView<'_, f64> {
        let r = self.groups.range(k);
        self.x.columns(r.start, r.len())
    }

    /// `X_{-g}`: the design with group `g` removed.
    pub fn without_group(&self, g: usize) -> DMatrix<f64> {
        let r = self.groups.range(g);
        self.x.clone().remove_columns(r.start, r.len())
    }

    /// Columns of the groups in `set`, in group order.
    pub fn select_groups(&self, set: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(self.groups.columns_of(set).iter())
    }

    /// Maps coefficients on the standardized scale back to the original
    /// column scale.
    pub fn to_original_scale(&self, beta: &DVector<f64>) -> DVector<f64> {
        beta.component_div(&self.column_scales)
    }

    /// `Σ̂ = n⁻¹XᵀX`.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = self.x.tr_mul(&self.x) / self.n() as f64;
        g.fill_upper_triangle_with_lower_triangle();
        g
    }

    /// Smallest eigenvalue of `n⁻¹X_SᵀX_S` for the groups in `set`.
    pub fn restricted_eigenvalue(&self, set: &[usize]) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("group set S is empty".into()));
        }
        check_group_indices(set, self.num_groups())?;
        let xs = self.select_groups(set);
        let mut g = xs.tr_mul(&xs) / self.n() as f64;
        g.fill_upper_triangle_with_lower_triangle();
        let eig = SymmetricEigen::new(g);
        Ok(eig.eigenvalues.min())
    }

    /// `max_{k ∉ S0} ‖X_{G_k}ᵀ X_{S0} (X_{S0}ᵀ X_{S0})⁻¹‖₂`. The condition holds
    /// when the value is below one.
    pub fn irrepresentability_statistic(&self, s0: &[usize]) -> Result<f64> {
        if s0.is_empty() {
            return Err(Error::InvalidArgument("group set S0 is empty".into()));
        }
        check_group_indices(s0, self.num_groups())?;
        let xs = self.select_groups(s0);
        let mut gram_s = xs.tr_mul(&xs);
        gram_s.fill_upper_triangle_with_lower_triangle();
        let chol = gram_s
            .cholesky()
            .ok_or_else(|| Error::Singular("X_S0ᵀX_S0 is not invertible".into()))?;
        let rcond = {
            let d = chol.l_dirty().diagonal();
            let (lo, hi) = (d.min(), d.max());
            (lo / hi).powi(2)
        };
        if !(rcond > 1e-14) {
            return Err(Error::Singular("X_S0ᵀX_S0 is numerically singular".into()));
        }
        let mut stat: f64 = 0.0;
        for k in (0..self.num_groups()).filter(|k| !s0.contains(k)) {
            // (X_kᵀ X_S) (X_Sᵀ X_S)⁻¹, transposed for the solve.
            let cross = xs.tr_mul(&self.group_block(k));
            let m = chol.solve(&cross).transpose();
            stat = stat.max(spectral_norm(&m, 1e-10, 10 * self.p()));
        }
        Ok(stat)
    }
}

/// Block-wise orthonormal reparametrization of a design: group `k` is
/// replaced by `Q_k = X_k M_k` with `n⁻¹Q_kᵀQ_k = I`, where `M_k = V D^{−1/2}`
/// over the eigenpairs of `n⁻¹X_kᵀX_k` above a relative floor. Coefficients
/// map back as `β_k = M_k θ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupOrthonormalization {
    pub design: GroupedDesign,
    /// `p_k × r_k` maps, one per group.
    pub maps: Vec<DMatrix<f64>>,
    pub original_groups: GroupSpec,
}

/// Relative eigenvalue floor below which a group direction is dropped.
pub const ORTHONORMAL_RANK_TOL: f64 = 1e-10;

impl GroupOrthonormalization {
    /// `β = Mθ` for one coefficient vector of the reduced design.
    pub fn to_original(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.original_groups.num_columns());
        for (k, m) in self.maps.iter().enumerate() {
            let r = self.design.groups().range(k);
            let o = self.original_groups.range(k);
            beta.rows_mut(o.start, o.len()).copy_from(&(m * theta.rows(r.start, r.len())));
        }
        beta
    }

    /// Row-wise `β = Mθ` for a `D × q` matrix of draws.
    pub fn rows_to_original(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut beta = DMatrix::zeros(theta.nrows(), self.original_groups.num_columns());
        for (k, m) in self.maps.iter().enumerate() {
            let r = self.design.groups().range(k);
            let o = self.original_groups.range(k);
            beta.columns_mut(o.start, o.len()).copy_from(&(theta.columns(r.start, r.len()) * m.transpose()));
        }
        beta
    }
}

/// Orthonormalizes every group of `design` (columns are used as given, so
/// center them first when an intercept is absorbed elsewhere).
pub fn orthonormalize_groups(design: &GroupedDesign) -> Result<GroupOrthonormalization> {
    let n = design.n() as f64;
    let mut maps = Vec::with_capacity(design.num_groups());
    let mut blocks = Vec::with_capacity(design.num_groups());
    for k in 0..design.num_groups() {
        let xk = design.group_block(k);
        let mut gram = xk.tr_mul(&xk) / n;
        gram.fill_upper_triangle_with_lower_triangle();
        let eig = SymmetricEigen::new(gram);
        let top = eig.eigenvalues.max();
        let keep: Vec<usize> =
            (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > ORTHONORMAL_RANK_TOL * top.max(0.0)).collect();
        if keep.is_empty() || !(top > 0.0) {
            return Err(Error::Singular(format!("group {} has no non-null direction", k + 1)));
        }
        let mut m = DMatrix::zeros(xk.ncols(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            m.set_column(c, &(eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
        }
        blocks.push(xk * &m);
        maps.push(m);
    }
    let sizes: Vec<usize> = maps.iter().map(|m| m.ncols()).collect();
    let mut x = DMatrix::zeros(design.n(), sizes.iter().sum());
    let mut start = 0;
    for b in &blocks {
        x.columns_mut(start, b.ncols()).copy_from(b);
        start += b.ncols();
    }
    Ok(GroupOrthonormalization {
        design: GroupedDesign::new(x, GroupSpec::from_sizes(&sizes)?)?,
        maps,
        original_groups: design.groups().clone(),
    })
}

fn check_group_indices(set: &[usize], k: usize) -> Result<()> {
    match set.iter().find(|&&g| g >= k) {
        Some(g) => Err(Error::InvalidArgument(format!("group index {g} out of range 0..{k}"))),
        None => Ok(()),
    }
}

/// Largest singular value by power iteration on `MᵀM`.
pub(crate) fn spectral_norm(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let mtm = m.tr_mul(m);
    // Deterministic start with no zero entries; avoids being orthogonal to
    // the leading eigenvector in all but measure-zero cases.
    let mut v = DVector::from_fn(mtm.nrows(), |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    let norm = v.norm();
    v /= norm;
    let mut eig = 0.0;
    for _ in 0..max_iter.max(1) {
        let w = &mtm * &v;
        let w_norm = w.norm();
        if w_norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / w_norm;
        if (next - eig).abs() <= tol * next.abs().max(1e-300) {
            eig = next;
            break;
        }
        eig = next;
    }
    eig.max(0.0).sqrt()
}
