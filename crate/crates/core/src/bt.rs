//! Finite-horizon balanced truncation and time-varying Hankel singular values.
//!
//! Balancing is done pointwise: at each node the gramians are factored,
//! the factor product is decomposed by an SVD and the leading `r` directions
//! are kept. Singular vectors are only defined up to sign (or rotation inside
//! a cluster of equal singular values), so each node is aligned with the
//! previous one to keep the projections continuous in time.

use nalgebra::{DMatrix, DVector};

use crate::dle::{gramians, GramianBundle};
use crate::error::{Error, Result};
use crate::ltv::{reduce_projection, ArForm, LtvSystem, ReducedOrderModel, ReductionMethod};
use crate::timegrid::{MatrixTrajectory, TimeGrid};

/// Relative tolerance below which a negative gramian eigenvalue is treated
/// as roundoff and clamped to zero.
const PSD_TOL: f64 = 1e-8;

/// Singular values closer than this (relative to `σ₁`) form one cluster.
const CLUSTER_TOL: f64 = 1e-8;

/// Hankel singular values `σ₁(t) ≥ … ≥ σ_n(t) ≥ 0` at every node.
#[derive(Clone, Debug)]
pub struct HsvTrajectory {
    grid: TimeGrid,
    sigma: Vec<DVector<f64>>,
}

impl HsvTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Singular values at node `k`, descending.
    pub fn at(&self, k: usize) -> &DVector<f64> {
        &self.sigma[k]
    }

    pub fn order(&self) -> usize {
        self.sigma[0].len()
    }

    /// `min_k σ_i(t_k) / σ_j(t_k)` over nodes `k0..=k1` (0-based indices).
    pub fn min_ratio(&self, i: usize, j: usize, k0: usize, k1: usize) -> f64 {
        (k0..=k1)
            .map(|k| self.sigma[k][i] / self.sigma[k][j])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Symmetric square-root factor `M = F Fᵀ`, clamping small negative
/// eigenvalues. Fails when `M` is clearly indefinite.
fn psd_factor(m: &DMatrix<f64>, what: &str, node: usize, t: f64) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale - 1e-300 {
        return Err(Error::Domain(format!(
            "{what} is not positive semidefinite at node {node} (t = {t}): eigenvalue {min:e}"
        )));
    }
    let mut f = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

/// Thin SVD with singular values sorted descending.
fn sorted_svd(m: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.svd(true, true);
    let (u, s, vt) = (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| vt.row(i).transpose())
            .collect::<Vec<_>>(),
    );
    let s = DVector::from_iterator(s.len(), order.iter().map(|&i| s[i]));
    (u, s, v)
}

fn check_gramian_pair(p: &MatrixTrajectory, q: &MatrixTrajectory) -> Result<()> {
    p.check_same_grid(q)?;
    let n = p.rows();
    if p.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::dim(format!(
            "gramians must be square and equal-sized, got {:?} and {:?}",
            p.shape(),
            q.shape()
        )));
    }
    Ok(())
}

pub fn hankel_singular_values(p: &MatrixTrajectory, q: &MatrixTrajectory) -> Result<HsvTrajectory> {
    check_gramian_pair(p, q)?;
    let grid = *p.grid();
    let sigma = (0..grid.len())
        .map(|k| {
            let t = grid.point(k);
            let r = psd_factor(p.at(k), "P", k, t)?;
            let l = psd_factor(q.at(k), "Q", k, t)?;
            Ok(sorted_svd(l.transpose() * r).1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HsvTrajectory { grid, sigma })
}

/// Rotates the columns of `cur` by the orthonormal `Ω` maximizing
/// `Tr((cur Ω)ᵀ prev)`. `cur` may carry more columns than `prev`, in which
/// case `Ω` also selects the subspace closest to `prev`.
pub fn align_subspaces(prev: &DMatrix<f64>, cur: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(prev.nrows(), cur.nrows(), "align_subspaces: row mismatch");
    assert!(
        cur.ncols() >= prev.ncols(),
        "align_subspaces: too few columns"
    );
    let (u, _, v) = sorted_svd(cur.transpose() * prev);
    let k = prev.ncols();
    cur * u.columns(0, k) * v.transpose()
}

#[derive(Clone, Debug)]
pub struct BtOptions {
    /// Include the `-W_rᵀ dV_r/dt` term in `A_r`.
    pub derivative_correction: bool,
    pub ar_form: ArForm,
}

impl Default for BtOptions {
    fn default() -> Self {
        BtOptions {
            derivative_correction: true,
            ar_form: ArForm::SubtractDv,
        }
    }
}

/// Balanced truncation to order `r` with `ε`-regularized gramians.
pub fn balanced_truncation(sys: &LtvSystem, r: usize, eps: f64) -> Result<ReducedOrderModel> {
    let gb = gramians(sys, eps, eps)?;
    balanced_truncation_with(sys, &gb, r, &BtOptions::default())
}

/// Balanced truncation from precomputed gramians.
pub fn balanced_truncation_with(
    sys: &LtvSystem,
    gb: &GramianBundle,
    r: usize,
    opts: &BtOptions,
) -> Result<ReducedOrderModel> {
    let n = sys.order();
    if r == 0 || r > n {
        return Err(Error::Domain(format!(
            "reduced order must be in 1..={n}, got {r}"
        )));
    }
    check_gramian_pair(&gb.p, &gb.q)?;
    gb.p.check_same_grid(sys.a())?;
    if gb.p.rows() != n {
        return Err(Error::dim(format!(
            "gramians are {}x{}, system order is {n}",
            gb.p.rows(),
            gb.p.rows()
        )));
    }
    let grid = *sys.grid();
    let mut vr = Vec::with_capacity(grid.len());
    let mut wr = Vec::with_capacity(grid.len());
    let mut prev: Option<DMatrix<f64>> = None;
    for k in 0..grid.len() {
        let t = grid.point(k);
        let rf = psd_factor(gb.p.at(k), "P", k, t)?;
        let lf = psd_factor(gb.q.at(k), "Q", k, t)?;
        let (u, s, v) = sorted_svd(lf.transpose() * &rf);
        if !(s[r - 1] > 1e-14 * s[0].max(f64::MIN_POSITIVE)) {
            return Err(Error::Degenerate {
                node: k,
                t,
                msg: format!(
                    "rank of the factor product is below {r} (σ_{r} = {:e})",
                    s[r - 1]
                ),
            });
        }
        // Stacked [V_r; W_r] with every column of the cluster reaching index r.
        let cluster = |i: usize| (s[i] - s[i + 1]).abs() < CLUSTER_TOL * s[0];
        let mut width = r;
        while width < n && cluster(width - 1) {
            width += 1;
        }
        let mut stacked = DMatrix::zeros(2 * n, width);
        for j in 0..width {
            let scale = 1.0 / s[j].sqrt();
            stacked
                .view_mut((0, j), (n, 1))
                .copy_from(&(&rf * v.column(j) * scale));
            stacked
                .view_mut((n, j), (n, 1))
                .copy_from(&(&lf * u.column(j) * scale));
        }
        let aligned = match &prev {
            None => stacked.columns(0, r).into_owned(),
            Some(p) => align_clusters(p, &stacked, &s, r),
        };
        vr.push(aligned.rows(0, n).into_owned());
        wr.push(aligned.rows(n, n).into_owned());
        prev = Some(aligned);
    }
    let vr = MatrixTrajectory::from_samples(grid, vr)?;
    let wr = MatrixTrajectory::from_samples(grid, wr)?;
    let red = if opts.derivative_correction {
        reduce_projection(sys, &vr, &wr, opts.ar_form)?
    } else {
        reduce_without_correction(sys, &vr, &wr)?
    };
    Ok(ReducedOrderModel {
        sys: red,
        vr,
        wr,
        method: ReductionMethod::BalancedTruncation,
        iterations: 0,
    })
}

/// Aligns each cluster of (near-)equal singular values separately so that
/// rotations never mix directions with different singular values.
fn align_clusters(
    prev: &DMatrix<f64>,
    stacked: &DMatrix<f64>,
    s: &DVector<f64>,
    r: usize,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(stacked.nrows(), r);
    let mut i = 0;
    while i < r {
        let mut end = i + 1;
        while end < stacked.ncols() && (s[end - 1] - s[end]).abs() < CLUSTER_TOL * s[0] {
            end += 1;
        }
        let keep = end.min(r) - i;
        let cur = stacked.columns(i, end - i).into_owned();
        let target = prev.columns(i, keep).into_owned();
        out.columns_mut(i, keep)
            .copy_from(&align_subspaces(&target, &cur));
        i += keep;
    }
    out
}

fn reduce_without_correction(
    sys: &LtvSystem,
    vr: &MatrixTrajectory,
    wr: &MatrixTrajectory,
) -> Result<LtvSystem> {
    let grid = *sys.grid();
    let ar = (0..grid.len())
        .map(|k| wr.at(k).transpose() * sys.a().at(k) * vr.at(k))
        .collect();
    let br = (0..grid.len())
        .map(|k| wr.at(k).transpose() * sys.b().at(k))
        .collect();
    let cr = (0..grid.len()).map(|k| sys.c().at(k) * vr.at(k)).collect();
    LtvSystem::new(
        MatrixTrajectory::from_samples(grid, ar)?,
        MatrixTrajectory::from_samples(grid, br)?,
        MatrixTrajectory::from_samples(grid, cr)?,
    )
}
