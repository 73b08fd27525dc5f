//! Two-sided iteration for finite-horizon H2-optimal reduction (TSIA).
//!
//! Each iteration solves the coupling equations for the current reduced
//! model, builds the projections `V_r = X P_r⁻¹`, `W_r = Y Q_r⁻¹` and
//! reassembles the reduced model from them. A fixed point satisfies the
//! first-order optimality conditions: the functional gradients of `J`
//! vanish there.

use nalgebra::DMatrix;

use crate::dle::{
    coupling_backward, coupling_forward, coupling_via_adjoint, reachability_gramian, CouplingBundle,
};
use crate::error::{Error, Result};
use crate::h2norm::h2_error_sq_reach;
use crate::ltv::{
    biorthogonality_defect, reduce_projection, simulate, ArForm, LtvSystem, ReducedOrderModel,
    ReductionMethod, SignalTrajectory,
};
use crate::ode::rk4_forward;
use crate::timegrid::{simpson, MatrixTrajectory};

/// Functional derivatives of `J` with respect to `A_r`, `B_r`, `C_r`.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    pub d_ar: MatrixTrajectory,
    pub d_br: MatrixTrajectory,
    pub d_cr: MatrixTrajectory,
}

impl GradientBundle {
    pub fn restrict(&self, k0: usize, k1: usize) -> Result<Self> {
        Ok(GradientBundle {
            d_ar: self.d_ar.restrict(k0, k1)?,
            d_br: self.d_br.restrict(k0, k1)?,
            d_cr: self.d_cr.restrict(k0, k1)?,
        })
    }

    /// Directional derivative `∫ Tr(∂J/∂A_rᵀ ΔA_r + ∂J/∂B_rᵀ ΔB_r + ∂J/∂C_rᵀ ΔC_r) dt`.
    pub fn pairing(
        &self,
        d_ar: &MatrixTrajectory,
        d_br: &MatrixTrajectory,
        d_cr: &MatrixTrajectory,
    ) -> Result<f64> {
        let pairs = [(&self.d_ar, d_ar), (&self.d_br, d_br), (&self.d_cr, d_cr)];
        let mut total = 0.0;
        for (g, d) in pairs {
            g.check_same_grid(d)?;
            if g.shape() != d.shape() {
                return Err(Error::dim(format!(
                    "direction is {:?}, gradient is {:?}",
                    d.shape(),
                    g.shape()
                )));
            }
            let values: Vec<f64> = g
                .samples()
                .iter()
                .zip(d.samples())
                .map(|(a, b)| a.dot(b))
                .collect();
            total += simpson(g.grid().step(), &values);
        }
        Ok(total)
    }
}

/// `∂J/∂A_r = 2(Q_r P_r - Yᵀ X)`, `∂J/∂B_r = 2(Q_r B_r - Yᵀ B)`,
/// `∂J/∂C_r = 2(C_r P_r - C X)`, node by node.
pub fn functional_gradients(
    sys: &LtvSystem,
    red: &LtvSystem,
    cb: &CouplingBundle,
) -> Result<GradientBundle> {
    sys.check_io_compatible(red)?;
    let (n, r) = (sys.order(), red.order());
    for (name, m, shape) in [
        ("X", &cb.x, (n, r)),
        ("Y", &cb.y, (n, r)),
        ("P_r", &cb.pr, (r, r)),
        ("Q_r", &cb.qr, (r, r)),
    ] {
        m.check_same_grid(sys.a())?;
        if m.shape() != shape {
            return Err(Error::dim(format!(
                "{name} is {:?}, expected {shape:?}",
                m.shape()
            )));
        }
    }
    let grid = *sys.grid();
    let mut d_ar = Vec::with_capacity(grid.len());
    let mut d_br = Vec::with_capacity(grid.len());
    let mut d_cr = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (x, y, pr, qr) = (cb.x.at(k), cb.y.at(k), cb.pr.at(k), cb.qr.at(k));
        let yt = y.transpose();
        d_ar.push((qr * pr - &yt * x) * 2.0);
        d_br.push((qr * red.b().at(k) - &yt * sys.b().at(k)) * 2.0);
        d_cr.push((red.c().at(k) * pr - sys.c().at(k) * x) * 2.0);
    }
    Ok(GradientBundle {
        d_ar: MatrixTrajectory::from_samples(grid, d_ar)?,
        d_br: MatrixTrajectory::from_samples(grid, d_br)?,
        d_cr: MatrixTrajectory::from_samples(grid, d_cr)?,
    })
}

/// Time-integrated Frobenius norms `sqrt(∫ ||·||_F² dt)` of the three gradients.
pub fn optimality_residuals(grads: &GradientBundle) -> [f64; 3] {
    [
        grads.d_ar.l2_frobenius(),
        grads.d_br.l2_frobenius(),
        grads.d_cr.l2_frobenius(),
    ]
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SolveKind {
    Plain,
    Regularized,
    /// `M = 0` and `Rhs = 0`, as at a zero initial condition.
    Vanishing,
}

/// Solves `M S = Rhsᵀ` for symmetric `M`, returning `Rhs M⁻¹`. Adds `λ I`
/// with escalating `λ` when `M` is too ill-conditioned.
fn right_solve_spd(
    rhs: &DMatrix<f64>,
    m: &DMatrix<f64>,
    cond_limit: f64,
    node: usize,
    t: f64,
) -> Result<(DMatrix<f64>, SolveKind)> {
    let sym = (m + m.transpose()) * 0.5;
    let r = sym.nrows();
    let eig = sym.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.amax());
    let solve = |mat: &DMatrix<f64>| {
        mat.clone()
            .cholesky()
            .map(|c| c.solve(&rhs.transpose()).transpose())
    };
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Degenerate {
            node,
            t,
            msg: "reduced gramian has non-finite entries".into(),
        });
    }
    if lo > 0.0 && hi / lo <= cond_limit {
        if let Some(s) = solve(&sym) {
            return Ok((s, SolveKind::Plain));
        }
    }
    if hi == 0.0 {
        if rhs.norm() == 0.0 {
            return Ok((DMatrix::zeros(rhs.nrows(), r), SolveKind::Vanishing));
        }
        return Err(Error::Degenerate {
            node,
            t,
            msg: "reduced gramian vanishes while the coupling term does not".into(),
        });
    }
    let mut lambda = hi * 1e-12;
    while lambda <= hi {
        let shifted = &sym + DMatrix::identity(r, r) * lambda;
        if (hi + lambda) / (lo + lambda) <= cond_limit {
            if let Some(s) = solve(&shifted) {
                return Ok((s, SolveKind::Regularized));
            }
        }
        lambda *= 10.0;
    }
    Err(Error::Degenerate {
        node,
        t,
        msg: format!("reduced gramian stays ill-conditioned (eigenvalues {lo:e} .. {hi:e})"),
    })
}

/// Projections from one coupling solve.
#[derive(Clone, Debug)]
pub struct ProjectionUpdate {
    pub vr: MatrixTrajectory,
    pub wr: MatrixTrajectory,
    /// Nodes where `P_r` or `Q_r` needed Tikhonov regularization.
    pub regularized_nodes: Vec<usize>,
}

/// `V_r = X P_r⁻¹`, `W_r = Y Q_r⁻¹` node by node.
pub fn projection_update(
    x: &MatrixTrajectory,
    pr: &MatrixTrajectory,
    y: &MatrixTrajectory,
    qr: &MatrixTrajectory,
    cond_limit: f64,
) -> Result<ProjectionUpdate> {
    for m in [pr, y, qr] {
        x.check_same_grid(m)?;
    }
    let r = pr.rows();
    if pr.shape() != (r, r) || qr.shape() != (r, r) || x.cols() != r || y.shape() != x.shape() {
        return Err(Error::dim(format!(
            "inconsistent shapes X {:?}, P_r {:?}, Y {:?}, Q_r {:?}",
            x.shape(),
            pr.shape(),
            y.shape(),
            qr.shape()
        )));
    }
    let grid = *x.grid();
    let mut vr = Vec::with_capacity(grid.len());
    let mut wr = Vec::with_capacity(grid.len());
    let mut regularized_nodes = Vec::new();
    let mut vanishing_v = Vec::new();
    let mut vanishing_w = Vec::new();
    for k in 0..grid.len() {
        let t = grid.point(k);
        let (v, kv) = right_solve_spd(x.at(k), pr.at(k), cond_limit, k, t)?;
        let (w, kw) = right_solve_spd(y.at(k), qr.at(k), cond_limit, k, t)?;
        if kv != SolveKind::Plain || kw != SolveKind::Plain {
            regularized_nodes.push(k);
        }
        if kv == SolveKind::Vanishing {
            vanishing_v.push(k);
        }
        if kw == SolveKind::Vanishing {
            vanishing_w.push(k);
        }
        vr.push(v);
        wr.push(w);
    }
    fill_vanishing(&mut vr, &vanishing_v)?;
    fill_vanishing(&mut wr, &vanishing_w)?;
    Ok(ProjectionUpdate {
        vr: MatrixTrajectory::from_samples(grid, vr)?,
        wr: MatrixTrajectory::from_samples(grid, wr)?,
        regularized_nodes,
    })
}

/// Replaces the `0/0` samples at an end of the grid by their limit, linearly
/// extrapolated from the two nearest regular nodes.
fn fill_vanishing(samples: &mut [DMatrix<f64>], nodes: &[usize]) -> Result<()> {
    let last = samples.len() - 1;
    for &k in nodes {
        let regular = |j: &usize| !nodes.contains(j);
        let (a, b) = if k < samples.len() / 2 {
            let mut inward = (k + 1..=last).filter(regular);
            (inward.next(), inward.next())
        } else {
            let mut inward = (0..k).rev().filter(regular);
            (inward.next(), inward.next())
        };
        let (Some(a), Some(b)) = (a, b) else {
            return Err(Error::Degenerate {
                node: k,
                t: f64::NAN,
                msg: "reduced gramian vanishes on most of the grid".into(),
            });
        };
        // Nodes are uniformly spaced: value at k from the line through a and b.
        let w = (k as f64 - a as f64) / (b as f64 - a as f64);
        samples[k] = &samples[a] * (1.0 - w) + &samples[b] * w;
    }
    Ok(())
}

/// `W_r` obtained by forward solves on the modified adjoints, then reversed
/// in time: `W_r(t) = W_rma(Ti - t)`.
pub fn wr_via_adjoint(
    sys: &LtvSystem,
    red: &LtvSystem,
    eps_r: f64,
    cond_limit: f64,
) -> Result<MatrixTrajectory> {
    let (x_ma, pr_ma) = coupling_via_adjoint(sys, red, eps_r)?;
    let upd = projection_update(&x_ma, &pr_ma, &x_ma, &pr_ma, cond_limit)?;
    Ok(upd.vr.reverse())
}

/// Coupling solutions with `Y`, `Q_r` taken either from backward solves or
/// from forward solves on the modified adjoints.
pub fn coupling_bundle(
    sys: &LtvSystem,
    red: &LtvSystem,
    eps_r: f64,
    via_adjoint: bool,
) -> Result<CouplingBundle> {
    if !(eps_r >= 0.0) {
        return Err(Error::Domain(format!(
            "regularization must be non-negative, got {eps_r}"
        )));
    }
    let (x, pr) = coupling_forward(sys, red, eps_r)?;
    let (y, qr) = if via_adjoint {
        let (x_ma, pr_ma) = coupling_via_adjoint(sys, red, eps_r)?;
        (x_ma.reverse(), pr_ma.reverse())
    } else {
        coupling_backward(sys, red, eps_r)?
    };
    Ok(CouplingBundle { pr, qr, x, y })
}

#[derive(Clone, Debug)]
pub struct TsiaOptions {
    pub max_iterations: usize,
    /// Stop when `|δ_k - δ_{k-1}| / max(1, δ_k)` drops below this.
    pub stop_tol: f64,
    /// Stop after this many consecutive increases of `δ`.
    pub patience: usize,
    /// Regularization of the full reachability gramian used for the `J` estimate.
    pub eps: f64,
    /// Initial value `εr I` of the reduced gramians `P_r`, `Q_r`.
    pub eps_r: f64,
    /// Sub-horizon `[t_start, t_end]` (grid nodes) on which the probe input
    /// is applied, `δ` is measured and residuals are integrated. The whole
    /// grid when absent.
    pub horizon: Option<(f64, f64)>,
    pub ar_form: ArForm,
    /// Input on the horizon; a unit step in every channel when absent.
    pub probe_input: Option<SignalTrajectory>,
    pub cond_limit: f64,
    /// Take `Y`, `Q_r` from the modified-adjoint forward solves.
    pub adjoint_path: bool,
}

impl Default for TsiaOptions {
    fn default() -> Self {
        TsiaOptions {
            max_iterations: 50,
            stop_tol: 1e-4,
            patience: 5,
            eps: 0.0,
            eps_r: 0.0,
            horizon: None,
            ar_form: ArForm::SubtractDv,
            probe_input: None,
            cond_limit: 1e12,
            adjoint_path: true,
        }
    }
}

impl TsiaOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Domain(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        if !(self.eps >= 0.0 && self.eps_r >= 0.0) {
            return Err(Error::Domain("regularization must be non-negative".into()));
        }
        if !(self.cond_limit > 1.0) {
            return Err(Error::Domain(format!(
                "cond_limit must exceed 1, got {}",
                self.cond_limit
            )));
        }
        Ok(())
    }
}

/// Measurements taken on the model of one iteration (iteration 0 is the
/// initial model).
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `||y - y_r||_{L2}` on the horizon.
    pub delta: f64,
    /// `delta / ||y||_{L2}`.
    pub delta_rel: f64,
    pub j: f64,
    pub residual_ar: f64,
    pub residual_br: f64,
    pub residual_cr: f64,
    /// `max_t ||W_rᵀ V_r - I||_F` on the horizon.
    pub biorthogonality_defect: f64,
    /// Nodes regularized while building this model's projections.
    pub regularized_nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Diverging,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct TsiaTrace {
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub stop_reason: StopReason,
}

impl TsiaTrace {
    pub fn best(&self) -> &IterationRecord {
        &self.records[self.best_iteration]
    }

    pub fn initial(&self) -> &IterationRecord {
        &self.records[0]
    }
}

/// Everything derived from one coupling solve of a reduced model.
struct Assessment {
    cb: CouplingBundle,
    record: IterationRecord,
}

struct Runner<'a> {
    sys: &'a LtvSystem,
    opts: &'a TsiaOptions,
    p_full: MatrixTrajectory,
    window: (usize, usize),
    probe: SignalTrajectory,
    y_full: SignalTrajectory,
    y_norm: f64,
}

impl<'a> Runner<'a> {
    fn new(sys: &'a LtvSystem, opts: &'a TsiaOptions) -> Result<Self> {
        let grid = *sys.grid();
        let window = match opts.horizon {
            None => (0, grid.n_steps()),
            Some((t0, t1)) => (grid.require_node(t0)?, grid.require_node(t1)?),
        };
        let inner = sys.restrict(window.0, window.1)?;
        let probe = match &opts.probe_input {
            Some(u) => {
                if u.grid() != inner.grid() || u.dim() != sys.inputs() {
                    return Err(Error::dim(format!(
                        "probe input must be {}-dimensional on the horizon grid {:?}",
                        sys.inputs(),
                        inner.grid()
                    )));
                }
                u.clone()
            }
            None => SignalTrajectory::unit_step(*inner.grid(), sys.inputs()),
        };
        let y_full = simulate(&inner, &probe, &nalgebra::DVector::zeros(sys.order()))?;
        let y_norm = y_full.l2_norm();
        Ok(Runner {
            sys,
            opts,
            p_full: reachability_gramian(sys, opts.eps),
            window,
            probe,
            y_full,
            y_norm,
        })
    }

    fn output_error(&self, red: &LtvSystem) -> Result<f64> {
        let inner = red.restrict(self.window.0, self.window.1)?;
        let yr = simulate(&inner, &self.probe, &nalgebra::DVector::zeros(red.order()))?;
        self.y_full.l2_distance(&yr)
    }

    fn assess(
        &self,
        rom: &ReducedOrderModel,
        iteration: usize,
        regularized: usize,
    ) -> Result<Assessment> {
        let red = &rom.sys;
        let cb = coupling_bundle(self.sys, red, self.opts.eps_r, self.opts.adjoint_path)?;
        let grads =
            functional_gradients(self.sys, red, &cb)?.restrict(self.window.0, self.window.1)?;
        let [residual_ar, residual_br, residual_cr] = optimality_residuals(&grads);
        let j = h2_error_sq_reach(self.sys, red, &self.p_full, &cb.x, &cb.pr)?;
        let delta = self.output_error(red)?;
        let record = IterationRecord {
            iteration,
            delta,
            delta_rel: if self.y_norm > 0.0 {
                delta / self.y_norm
            } else {
                delta
            },
            j,
            residual_ar,
            residual_br,
            residual_cr,
            biorthogonality_defect: biorthogonality_defect(
                &rom.vr,
                &rom.wr,
                self.window.0,
                self.window.1,
            ),
            regularized_nodes: regularized,
        };
        Ok(Assessment { cb, record })
    }

    fn update(&self, cb: &CouplingBundle, iteration: usize) -> Result<(ReducedOrderModel, usize)> {
        let upd = projection_update(&cb.x, &cb.pr, &cb.y, &cb.qr, self.opts.cond_limit)?;
        let sys = reduce_projection(self.sys, &upd.vr, &upd.wr, self.opts.ar_form)?;
        Ok((
            ReducedOrderModel {
                sys,
                vr: upd.vr,
                wr: upd.wr,
                method: ReductionMethod::Tsia,
                iterations: iteration,
            },
            upd.regularized_nodes.len(),
        ))
    }
}

fn check_init(sys: &LtvSystem, init: &ReducedOrderModel) -> Result<()> {
    sys.check_io_compatible(&init.sys)?;
    if init.order() == 0 || init.order() >= sys.order() {
        return Err(Error::Domain(format!(
            "reduced order must be in 1..{}, got {}",
            sys.order(),
            init.order()
        )));
    }
    Ok(())
}

/// One TSIA step: the model rebuilt from the coupling solutions of `rom`.
pub fn tsia_step(
    sys: &LtvSystem,
    rom: &ReducedOrderModel,
    opts: &TsiaOptions,
) -> Result<ReducedOrderModel> {
    opts.validate()?;
    sys.check_io_compatible(&rom.sys)?;
    let cb = coupling_bundle(sys, &rom.sys, opts.eps_r, opts.adjoint_path)?;
    let upd = projection_update(&cb.x, &cb.pr, &cb.y, &cb.qr, opts.cond_limit)?;
    Ok(ReducedOrderModel {
        sys: reduce_projection(sys, &upd.vr, &upd.wr, opts.ar_form)?,
        vr: upd.vr,
        wr: upd.wr,
        method: ReductionMethod::Tsia,
        iterations: rom.iterations + 1,
    })
}

/// Runs TSIA from `init` and returns the iterate with the smallest `δ`
/// together with the per-iteration trace.
pub fn tsia_reduce(
    sys: &LtvSystem,
    init: &ReducedOrderModel,
    opts: &TsiaOptions,
) -> Result<(ReducedOrderModel, TsiaTrace)> {
    opts.validate()?;
    check_init(sys, init)?;
    let runner = Runner::new(sys, opts)?;
    let with_context = |iteration: usize| {
        move |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        }
    };

    let mut current = init.clone();
    let mut assessment = runner.assess(&current, 0, 0).map_err(with_context(0))?;
    let mut records = vec![assessment.record.clone()];
    let mut best = (0, current.clone());
    let mut increases = 0;
    let mut stop_reason = StopReason::MaxIterations;

    for it in 1..=opts.max_iterations {
        let (next, regularized) = runner
            .update(&assessment.cb, it)
            .map_err(with_context(it))?;
        current = next;
        assessment = runner
            .assess(&current, it, regularized)
            .map_err(with_context(it))?;
        let delta = assessment.record.delta;
        let prev = records[it - 1].delta;
        records.push(assessment.record.clone());
        if delta < records[best.0].delta {
            best = (it, current.clone());
        }
        increases = if delta > prev { increases + 1 } else { 0 };
        if (delta - prev).abs() / delta.max(1.0) < opts.stop_tol {
            stop_reason = StopReason::Converged;
            break;
        }
        if increases >= opts.patience {
            stop_reason = StopReason::Diverging;
            break;
        }
    }
    let (best_iteration, mut rom) = best;
    rom.iterations = best_iteration;
    Ok((
        rom,
        TsiaTrace {
            records,
            best_iteration,
            stop_reason,
        },
    ))
}

/// First-order STM perturbation `Δ₁φ_r(t, t0)` caused by `ΔA_r`, from the
/// variational equation `d(Δ₁φ)/dt = A_r Δ₁φ + ΔA_r φ_r`, `Δ₁φ(t0) = 0`.
pub fn stm_perturbation_first_order(
    red: &LtvSystem,
    d_ar: &MatrixTrajectory,
) -> Result<MatrixTrajectory> {
    d_ar.check_same_grid(red.a())?;
    let r = red.order();
    if d_ar.shape() != (r, r) {
        return Err(Error::dim(format!(
            "perturbation is {:?}, reduced order is {r}",
            d_ar.shape()
        )));
    }
    let grid = *red.grid();
    let a = red.a();
    let mut start = DMatrix::zeros(2 * r, r);
    start.view_mut((0, 0), (r, r)).fill_with_identity();
    let states = rk4_forward(&grid, 0, start, |t, s| {
        let at = a.value_at(t);
        let phi = s.rows(0, r);
        let dphi = s.rows(r, r);
        let mut out = DMatrix::zeros(2 * r, r);
        out.view_mut((0, 0), (r, r)).copy_from(&(&at * phi));
        out.view_mut((r, 0), (r, r))
            .copy_from(&(&at * dphi + d_ar.value_at(t) * phi));
        out
    });
    MatrixTrajectory::from_samples(
        grid,
        states
            .into_iter()
            .map(|s| s.rows(r, r).into_owned())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::balanced_truncation;
    use crate::dle::{coupling, gramians};
    use crate::ltv::{stm, StmSpan};
    use crate::random::{random_stable_system, RandomSystemSpec};
    use crate::timegrid::TimeGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn j_of(sys: &LtvSystem, red: &LtvSystem, p: &MatrixTrajectory) -> f64 {
        let (x, pr) = coupling_forward(sys, red, 0.0).unwrap();
        h2_error_sq_reach(sys, red, p, &x, &pr).unwrap()
    }

    fn smooth_direction(
        g: TimeGrid,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> MatrixTrajectory {
        let c0 = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let c1 = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let w = rng.gen_range(0.5..3.0);
        MatrixTrajectory::from_fn(g, move |t| &c0 + &c1 * (w * t).cos())
    }

    fn plus(base: &MatrixTrajectory, dir: &MatrixTrajectory, h: f64) -> MatrixTrajectory {
        let (b, d) = (base.clone(), dir.clone());
        MatrixTrajectory::from_fn(*base.grid(), move |t| b.value_at(t) + d.value_at(t) * h)
    }

    #[test]
    fn gradients_vanish_for_the_full_model() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(3, 1, 2), 3);
        let cb = coupling(&sys, &sys, 0.0).unwrap();
        let grads = functional_gradients(&sys, &sys, &cb).unwrap();
        for r in optimality_residuals(&grads) {
            assert!(r < 1e-8, "{r}");
        }
    }

    #[test]
    fn zero_io_reduced_model_gradients() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(3, 1, 1), 4);
        let red = LtvSystem::new(
            MatrixTrajectory::constant(g, DMatrix::from_element(1, 1, -1.0)),
            MatrixTrajectory::zeros(g, 1, 1),
            MatrixTrajectory::zeros(g, 1, 1),
        )
        .unwrap();
        let cb = coupling(&sys, &red, 0.0).unwrap();
        let grads = functional_gradients(&sys, &red, &cb).unwrap();
        for k in [0, 77, 200] {
            let expect_b = cb.y.at(k).transpose() * sys.b().at(k) * -2.0;
            let expect_c = sys.c().at(k) * cb.x.at(k) * -2.0;
            assert!((grads.d_br.at(k) - expect_b).norm() < 1e-15);
            assert!((grads.d_cr.at(k) - expect_c).norm() < 1e-15);
        }
        assert_eq!(
            optimality_residuals(&GradientBundle {
                d_ar: MatrixTrajectory::zeros(g, 1, 1),
                d_br: MatrixTrajectory::zeros(g, 1, 1),
                d_cr: MatrixTrajectory::zeros(g, 1, 1),
            }),
            [0.0; 3]
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(3, 1, 1), 11);
        let red = random_stable_system(g, &RandomSystemSpec::new(1, 1, 1), 12);
        let p = reachability_gramian(&sys, 0.0);
        let cb = coupling(&sys, &red, 0.0).unwrap();
        let grads = functional_gradients(&sys, &red, &cb).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-4;
        for _ in 0..4 {
            let da = smooth_direction(g, 1, 1, &mut rng);
            let db = smooth_direction(g, 1, 1, &mut rng);
            let dc = smooth_direction(g, 1, 1, &mut rng);
            let shifted = |s: f64| {
                LtvSystem::new(
                    plus(red.a(), &da, s),
                    plus(red.b(), &db, s),
                    plus(red.c(), &dc, s),
                )
                .unwrap()
            };
            let fd = (j_of(&sys, &shifted(h), &p) - j_of(&sys, &shifted(-h), &p)) / (2.0 * h);
            let an = grads.pairing(&da, &db, &dc).unwrap();
            assert!(
                (fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()),
                "fd {fd} vs {an}"
            );
        }
    }

    #[test]
    fn projection_update_trivial_cases() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let vc = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let pr = MatrixTrajectory::from_fn(g, |t| DMatrix::from_element(1, 1, 1.0 + t));
        let vc2 = vc.clone();
        let x = MatrixTrajectory::from_fn(g, move |t| &vc2 * (1.0 + t));
        let eye = MatrixTrajectory::constant(g, DMatrix::identity(1, 1));
        let upd = projection_update(&x, &pr, &x, &eye, 1e12).unwrap();
        for k in 0..g.len() {
            assert!((upd.vr.at(k) - &vc).norm() < 1e-14);
            assert_eq!(upd.wr.at(k), x.at(k));
        }
        assert!(upd.regularized_nodes.is_empty());
    }

    #[test]
    fn ill_conditioned_gramian_gets_regularized() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let pr = MatrixTrajectory::constant(
            g,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-14])),
        );
        let x = MatrixTrajectory::constant(g, DMatrix::from_element(3, 2, 1.0));
        let upd = projection_update(&x, &pr, &x, &pr, 1e12).unwrap();
        assert_eq!(upd.regularized_nodes, vec![0, 1, 2, 3, 4]);
        assert!(upd.vr.at(0).iter().all(|v| v.is_finite()));

        let zero = MatrixTrajectory::zeros(g, 2, 2);
        let err = projection_update(&x, &zero, &x, &zero, 1e12).unwrap_err();
        assert!(matches!(err, Error::Degenerate { node: 0, .. }));
    }

    #[test]
    fn adjoint_path_matches_backward_solve() {
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(4, 2, 1), 21);
        let red = random_stable_system(g, &RandomSystemSpec::new(2, 2, 1), 22);
        let eps_r = 0.01;
        let direct = coupling_bundle(&sys, &red, eps_r, false).unwrap();
        let upd = projection_update(&direct.x, &direct.pr, &direct.y, &direct.qr, 1e12).unwrap();
        let via = wr_via_adjoint(&sys, &red, eps_r, 1e12).unwrap();
        assert!(upd.wr.max_distance(&via) < 1e-6);
    }

    #[test]
    fn decoupled_dominant_block_is_a_fixed_point() {
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let sys = LtvSystem::new(
            MatrixTrajectory::from_fn(g, |t| {
                DMatrix::from_row_slice(2, 2, &[-1.0 + 0.3 * t.sin(), 0.0, 0.0, -3.0])
            }),
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_row_slice(2, 1, &[1.0 + 0.2 * t, 0.0])),
            MatrixTrajectory::constant(g, DMatrix::from_row_slice(1, 2, &[0.8, 0.0])),
        )
        .unwrap();
        let block = LtvSystem::new(
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_element(1, 1, -1.0 + 0.3 * t.sin())),
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_element(1, 1, 1.0 + 0.2 * t)),
            MatrixTrajectory::constant(g, DMatrix::from_element(1, 1, 0.8)),
        )
        .unwrap();
        let e = MatrixTrajectory::constant(g, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
        let init = ReducedOrderModel {
            sys: block,
            vr: e.clone(),
            wr: e,
            method: ReductionMethod::Tsia,
            iterations: 0,
        };
        let opts = TsiaOptions {
            max_iterations: 1,
            eps: 0.0,
            eps_r: 0.0,
            horizon: Some((0.25, 0.75)),
            ..TsiaOptions::default()
        };
        let (_, trace) = tsia_reduce(&sys, &init, &opts).unwrap();
        let (r0, r1) = (&trace.records[0], &trace.records[1]);
        assert!(r0.delta < 1e-12 && r1.delta < 1e-8, "{r0:?} {r1:?}");
        assert!(r0.j.abs() < 1e-8 && r1.j.abs() < 1e-8);
        for (a, b) in [
            (r0.residual_ar, r1.residual_ar),
            (r0.residual_br, r1.residual_br),
            (r0.residual_cr, r1.residual_cr),
        ] {
            assert!(a < 1e-8 && (a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn tsia_improves_on_balanced_truncation() {
        let g = TimeGrid::new(0.0, 2.0, 400).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(3, 1, 1), 31);
        let init = balanced_truncation(&sys, 1, 0.001).unwrap();
        let opts = TsiaOptions {
            max_iterations: 15,
            eps: 0.001,
            eps_r: 0.001,
            horizon: Some((0.5, 1.5)),
            ..TsiaOptions::default()
        };
        let (rom, trace) = tsia_reduce(&sys, &init, &opts).unwrap();
        assert_eq!(rom.order(), 1);
        let best = trace.best();
        assert!(best.delta <= trace.initial().delta);
        assert!(trace.records.iter().all(|r| r.delta >= 0.0 && r.j >= -1e-9));
        let min = trace
            .records
            .iter()
            .map(|r| r.delta)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.delta, min);
    }

    #[test]
    fn invalid_options_and_orders() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(2, 1, 1), 1);
        let init = balanced_truncation(&sys, 1, 0.01).unwrap();
        let bad = TsiaOptions {
            max_iterations: 0,
            ..TsiaOptions::default()
        };
        assert!(matches!(
            tsia_reduce(&sys, &init, &bad),
            Err(Error::Domain(_))
        ));
        let full = balanced_truncation(&sys, 2, 0.01).unwrap();
        assert!(matches!(
            tsia_reduce(&sys, &full, &TsiaOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn stm_perturbation_zero_direction() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let red = random_stable_system(g, &RandomSystemSpec::new(2, 1, 1), 2);
        let d = stm_perturbation_first_order(&red, &MatrixTrajectory::zeros(g, 2, 2)).unwrap();
        assert!(d.samples().iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn stm_perturbation_matches_central_differences() {
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let red = random_stable_system(g, &RandomSystemSpec::new(2, 1, 1), 41);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let da = smooth_direction(g, 2, 2, &mut rng);
        let first = stm_perturbation_first_order(&red, &da).unwrap();
        let h = 1e-5;
        let phi = |s: f64| {
            let moved =
                LtvSystem::new(plus(red.a(), &da, s), red.b().clone(), red.c().clone()).unwrap();
            stm(&moved, 0.0, StmSpan::Forward).unwrap()
        };
        let (up, down) = (phi(h), phi(-h));
        for k in (0..g.len()).step_by(40) {
            let fd = (up.at(k) - down.at(k)) / (2.0 * h);
            assert!(
                (&fd - first.at(k)).norm() <= 1e-6 * fd.norm().max(1e-12),
                "node {k}"
            );
        }
    }

    #[test]
    fn stm_perturbation_is_the_exponential_frechet_derivative() {
        let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -2.0]);
        let da = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.4, 0.3]);
        let red = LtvSystem::new(
            MatrixTrajectory::constant(g, a.clone()),
            MatrixTrajectory::constant(g, DMatrix::from_element(2, 1, 1.0)),
            MatrixTrajectory::constant(g, DMatrix::from_element(1, 2, 1.0)),
        )
        .unwrap();
        let first =
            stm_perturbation_first_order(&red, &MatrixTrajectory::constant(g, da.clone())).unwrap();
        // ∫₀¹ e^{A T (1-s)} ΔA T e^{A T s} ds by composite Simpson.
        let frechet = |t: f64| {
            let m = 2000;
            let f = |s: f64| (&a * (t * (1.0 - s))).exp() * &da * t * (&a * (t * s)).exp();
            let mut acc = f(0.0) + f(1.0);
            for i in 1..m {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += f(i as f64 / m as f64) * w;
            }
            acc / (3.0 * m as f64)
        };
        for k in [40, 200, 400] {
            let expected = frechet(g.point(k));
            assert!((first.at(k) - &expected).norm() <= 1e-6 * expected.norm());
        }
    }

    #[test]
    fn gramian_bundle_is_consistent_with_both_paths() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let sys = random_stable_system(g, &RandomSystemSpec::new(3, 1, 1), 51);
        let gb = gramians(&sys, 0.0, 0.0).unwrap();
        let cb = coupling_bundle(&sys, &sys, 0.0, true).unwrap();
        assert!(cb.qr.max_distance(&gb.q) < 1e-8 * gb.q.at(0).norm());
    }
}
