//! Measured residuals of the structural identities between a system, its
//! adjoints, their gramians and the H2-error evaluators. Each function
//! returns the worst residual it saw; callers compare against tolerances.
//!
//! Matrix residuals are relative: `||a - b||_F / (1 + ||b||_F)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dle::{
    coupling, coupling_forward, coupling_via_adjoint, gramians, reachability_gramian,
};
use crate::error::Result;
use crate::h2norm::{h2_error_report, h2_error_sq_reach, H2ErrorReport};
use crate::ltv::{adjoint, modified_adjoint, stm_at_node, LtvSystem, StmSpan};
use crate::timegrid::MatrixTrajectory;
use crate::tsia::functional_gradients;

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

/// Worst node-wise relative distance between `a(t)` and `b(Ti - t)`.
pub fn reversal_residual(a: &MatrixTrajectory, b: &MatrixTrajectory) -> f64 {
    let g = a.grid();
    (0..g.len())
        .map(|k| rel(a.at(k), b.at(g.mirror(k))))
        .fold(0.0, f64::max)
}

/// How the adjoint realization is built; `SignFlipped` is a deliberately
/// wrong adjoint for fault-injection runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointBuild {
    Correct,
    SignFlipped,
}

fn build_adjoint(sys: &LtvSystem, how: AdjointBuild) -> LtvSystem {
    let adj = adjoint(sys);
    match how {
        AdjointBuild::Correct => adj,
        AdjointBuild::SignFlipped => {
            LtvSystem::new(adj.a().scale(-1.0), adj.b().clone(), adj.c().clone())
                .expect("same shapes")
        }
    }
}

/// STM relations `φ_a(t,τ) = φ(τ,t)ᵀ` and `φ_ma(t,τ) = φ(Ti-τ, Ti-t)ᵀ` at
/// `pairs` random node pairs. Returns the two worst residuals.
pub fn stm_adjoint_residuals(
    sys: &LtvSystem,
    pairs: usize,
    seed: u64,
    how: AdjointBuild,
) -> (f64, f64) {
    let g = *sys.grid();
    let adj = build_adjoint(sys, how);
    let ma = match how {
        AdjointBuild::Correct => modified_adjoint(sys),
        AdjointBuild::SignFlipped => {
            let m = modified_adjoint(sys);
            LtvSystem::new(m.a().scale(-1.0), m.b().clone(), m.c().clone()).expect("same shapes")
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_a, mut worst_ma) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let kt = rng.gen_range(0..g.len());
        let ktau = rng.gen_range(0..g.len());
        let phi_a = stm_at_node(&adj, ktau, StmSpan::Full);
        let phi_from_t = stm_at_node(sys, kt, StmSpan::Full);
        worst_a = worst_a.max(rel(phi_a.at(kt), &phi_from_t.at(ktau).transpose()));

        let phi_ma = stm_at_node(&ma, ktau, StmSpan::Full);
        let phi_from_mt = stm_at_node(sys, g.mirror(kt), StmSpan::Full);
        worst_ma = worst_ma.max(rel(
            phi_ma.at(kt),
            &phi_from_mt.at(g.mirror(ktau)).transpose(),
        ));
    }
    (worst_a, worst_ma)
}

/// `P_ma(t) = Q(Ti-t)` and `Q_ma(t) = P(Ti-t)` with the same regularization.
pub fn gramian_reversal_residuals(sys: &LtvSystem, eps: f64) -> Result<(f64, f64)> {
    let gb = gramians(sys, eps, eps)?;
    let gma = gramians(&modified_adjoint(sys), eps, eps)?;
    Ok((
        reversal_residual(&gma.p, &gb.q),
        reversal_residual(&gma.q, &gb.p),
    ))
}

/// `X_ma(t) = Y(Ti-t)` and `P_rma(t) = Q_r(Ti-t)` with zero initial values.
pub fn coupling_reversal_residuals(sys: &LtvSystem, red: &LtvSystem) -> Result<(f64, f64)> {
    let cb = coupling(sys, red, 0.0)?;
    let (x_ma, pr_ma) = coupling_via_adjoint(sys, red, 0.0)?;
    Ok((
        reversal_residual(&x_ma, &cb.y),
        reversal_residual(&pr_ma, &cb.qr),
    ))
}

/// The three gramian-based evaluations of `J` (and optionally brute force),
/// all with zero regularization.
pub fn h2_agreement(
    sys: &LtvSystem,
    red: &LtvSystem,
    tau_stride: Option<usize>,
) -> Result<H2ErrorReport> {
    h2_error_report(sys, red, 0.0, 0.0, tau_stride)
}

/// `red` with `A_r + s ΔA_r`, `B_r + s ΔB_r`, `C_r + s ΔC_r`, evaluated
/// through the analytic/interpolating rules of both operands.
pub fn perturbed(red: &LtvSystem, dir: &[MatrixTrajectory; 3], s: f64) -> LtvSystem {
    let shift = |base: &MatrixTrajectory, d: &MatrixTrajectory| {
        let (b, d) = (base.clone(), d.clone());
        MatrixTrajectory::from_fn(*base.grid(), move |t| b.value_at(t) + d.value_at(t) * s)
    };
    LtvSystem::new(
        shift(red.a(), &dir[0]),
        shift(red.b(), &dir[1]),
        shift(red.c(), &dir[2]),
    )
    .expect("perturbation keeps shapes")
}

/// Reduced system keeping the first `r` state coordinates:
/// `A[:r,:r]`, `B[:r,:]`, `C[:,:r]`, with the evaluation rules of `sys`.
pub fn leading_state_truncation(sys: &LtvSystem, r: usize) -> Result<LtvSystem> {
    if r == 0 || r > sys.order() {
        return Err(crate::Error::Domain(format!(
            "reduced order must be in 1..={}, got {r}",
            sys.order()
        )));
    }
    let g = *sys.grid();
    let block = |m: &MatrixTrajectory, rows: Option<usize>, cols: Option<usize>| {
        let m = m.clone();
        MatrixTrajectory::from_fn(g, move |t| {
            let v = m.value_at(t);
            let (nr, nc) = (rows.unwrap_or(v.nrows()), cols.unwrap_or(v.ncols()));
            v.view((0, 0), (nr, nc)).into_owned()
        })
    };
    LtvSystem::new(
        block(sys.a(), Some(r), Some(r)),
        block(sys.b(), Some(r), None),
        block(sys.c(), None, Some(r)),
    )
}

/// Smooth random direction `D0 + D1 cos(ω t)` of the given shape.
pub fn random_direction(
    grid: crate::TimeGrid,
    rows: usize,
    cols: usize,
    rng: &mut ChaCha8Rng,
) -> MatrixTrajectory {
    let d0 = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let d1 = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let w = rng.gen_range(0.5..3.0);
    MatrixTrajectory::from_fn(grid, move |t| &d0 + &d1 * (w * t).cos())
}

/// `J` from the reachability form with zero regularization.
pub fn h2_error_sq(sys: &LtvSystem, red: &LtvSystem, p: &MatrixTrajectory) -> Result<f64> {
    let (x, pr) = coupling_forward(sys, red, 0.0)?;
    h2_error_sq_reach(sys, red, p, &x, &pr)
}

/// Relative gap between central differences of `J` (step `h`) and the
/// gradient pairing, worst over `directions` random directions.
pub fn gradient_fd_residual(
    sys: &LtvSystem,
    red: &LtvSystem,
    directions: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let p = reachability_gramian(sys, 0.0);
    let cb = coupling(sys, red, 0.0)?;
    let grads = functional_gradients(sys, red, &cb)?;
    let g = *sys.grid();
    let (r, m, q) = (red.order(), red.inputs(), red.outputs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let dir = [
            random_direction(g, r, r, &mut rng),
            random_direction(g, r, m, &mut rng),
            random_direction(g, q, r, &mut rng),
        ];
        let up = h2_error_sq(sys, &perturbed(red, &dir, h), &p)?;
        let down = h2_error_sq(sys, &perturbed(red, &dir, -h), &p)?;
        let fd = (up - down) / (2.0 * h);
        let an = grads.pairing(&dir[0], &dir[1], &dir[2])?;
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Largest gradient norm at `red = sys`, relative to `1 + ||P||`.
pub fn full_order_gradient_residual(sys: &LtvSystem) -> Result<f64> {
    let cb = coupling(sys, sys, 0.0)?;
    let grads = functional_gradients(sys, sys, &cb)?;
    let scale = 1.0 + cb.pr.l2_frobenius() + cb.qr.l2_frobenius();
    let worst = [&grads.d_ar, &grads.d_br, &grads.d_cr]
        .iter()
        .flat_map(|g| g.samples().iter().map(|m| m.norm()))
        .fold(0.0, f64::max);
    Ok(worst / scale)
}
