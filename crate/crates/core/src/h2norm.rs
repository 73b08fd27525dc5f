//! Squared finite-horizon H2 error `J = ∫∫_{τ ≤ t} ||h(t,τ) - h_r(t,τ)||_F² dτ dt`
//! between a full and a reduced system, evaluated from reachability gramians,
//! from observability gramians, from the modified-adjoint pair, or by brute
//! force from impulse responses.

use nalgebra::DMatrix;

use crate::dle::{coupling, coupling_via_adjoint, gramians, reachability_gramian};
use crate::error::{Error, Result};
use crate::ltv::{impulse_response_at_node, modified_adjoint, LtvSystem};
use crate::timegrid::{simpson, MatrixTrajectory};

fn check_shapes(
    what: &str,
    traj: &MatrixTrajectory,
    grid_ref: &LtvSystem,
    shape: (usize, usize),
) -> Result<()> {
    traj.check_same_grid(grid_ref.a())?;
    if traj.shape() != shape {
        return Err(Error::dim(format!(
            "{what} is {:?}, expected {shape:?}",
            traj.shape()
        )));
    }
    Ok(())
}

fn integrate_nodes(sys: &LtvSystem, f: impl Fn(usize) -> f64) -> f64 {
    let values: Vec<f64> = (0..sys.grid().len()).map(f).collect();
    simpson(sys.grid().step(), &values)
}

/// `Tr(M N Mᵀ)` without forming the product's off-diagonal blocks twice.
fn sandwich_trace(m: &DMatrix<f64>, mid: &DMatrix<f64>, right: &DMatrix<f64>) -> f64 {
    (m * mid * right.transpose()).trace()
}

/// `∫ Tr(C P Cᵀ - 2 C X C_rᵀ + C_r P_r C_rᵀ) dt`.
pub fn h2_error_sq_reach(
    sys: &LtvSystem,
    red: &LtvSystem,
    p: &MatrixTrajectory,
    x: &MatrixTrajectory,
    pr: &MatrixTrajectory,
) -> Result<f64> {
    sys.check_io_compatible(red)?;
    let (n, r) = (sys.order(), red.order());
    check_shapes("P", p, sys, (n, n))?;
    check_shapes("X", x, sys, (n, r))?;
    check_shapes("P_r", pr, sys, (r, r))?;
    let (c, cr) = (sys.c(), red.c());
    Ok(integrate_nodes(sys, |k| {
        sandwich_trace(c.at(k), p.at(k), c.at(k)) - 2.0 * sandwich_trace(c.at(k), x.at(k), cr.at(k))
            + sandwich_trace(cr.at(k), pr.at(k), cr.at(k))
    }))
}

/// `∫ Tr(Bᵀ Q B - 2 Bᵀ Y B_r + B_rᵀ Q_r B_r) dt`.
pub fn h2_error_sq_obs(
    sys: &LtvSystem,
    red: &LtvSystem,
    q: &MatrixTrajectory,
    y: &MatrixTrajectory,
    qr: &MatrixTrajectory,
) -> Result<f64> {
    sys.check_io_compatible(red)?;
    let (n, r) = (sys.order(), red.order());
    check_shapes("Q", q, sys, (n, n))?;
    check_shapes("Y", y, sys, (n, r))?;
    check_shapes("Q_r", qr, sys, (r, r))?;
    let (b, br) = (sys.b(), red.b());
    Ok(integrate_nodes(sys, |k| {
        let bt = b.at(k).transpose();
        let brt = br.at(k).transpose();
        sandwich_trace(&bt, q.at(k), &bt) - 2.0 * sandwich_trace(&bt, y.at(k), &brt)
            + sandwich_trace(&brt, qr.at(k), &brt)
    }))
}

/// The reachability-form integral evaluated on the modified adjoints:
/// `∫ Tr(C_ma P_ma C_maᵀ - 2 C_ma X_ma C_rmaᵀ + C_rma P_rma C_rmaᵀ) dt`.
pub fn h2_error_sq_adjoint(
    sys: &LtvSystem,
    red: &LtvSystem,
    pma: &MatrixTrajectory,
    xma: &MatrixTrajectory,
    prma: &MatrixTrajectory,
) -> Result<f64> {
    sys.check_io_compatible(red)?;
    let sys_ma = modified_adjoint(sys);
    let red_ma = modified_adjoint(red);
    h2_error_sq_reach(&sys_ma, &red_ma, pma, xma, prma)
}

/// Brute-force double integral from impulse responses, with the outer `τ`
/// integral sampled on every `tau_stride`-th node (plus the last node).
/// Both integrals use Simpson's rule.
pub fn h2_error_bruteforce(sys: &LtvSystem, red: &LtvSystem, tau_stride: usize) -> Result<f64> {
    sys.check_io_compatible(red)?;
    if tau_stride == 0 {
        return Err(Error::Domain("tau_stride must be at least 1".into()));
    }
    let grid = *sys.grid();
    let n = grid.n_steps();
    let mut taus: Vec<usize> = (0..=n).step_by(tau_stride).collect();
    if *taus.last().unwrap() != n {
        taus.push(n);
    }
    let inner: Vec<f64> = taus
        .iter()
        .map(|&k| {
            let h = impulse_response_at_node(sys, k);
            let hr = impulse_response_at_node(red, k);
            let sq: Vec<f64> = (k..=n)
                .map(|j| (h.at(j) - hr.at(j)).norm_squared())
                .collect();
            simpson(grid.step(), &sq)
        })
        .collect();
    // uniform part by Simpson, a shorter final gap by the trapezoid
    let uniform = if n.is_multiple_of(tau_stride) {
        inner.len()
    } else {
        inner.len() - 1
    };
    let mut total = simpson(grid.step() * tau_stride as f64, &inner[..uniform]);
    if uniform < inner.len() {
        let dt = grid.point(n) - grid.point(taus[uniform - 1]);
        total += 0.5 * dt * (inner[uniform - 1] + inner[uniform]);
    }
    Ok(total)
}

/// All evaluations of `J` for one pair of systems.
#[derive(Clone, Debug)]
pub struct H2ErrorReport {
    pub j_reach: f64,
    pub j_obs: f64,
    pub j_adjoint: f64,
    pub j_bruteforce: Option<f64>,
    /// Largest pairwise `|a - b| / (1 + max(|a|, |b|))` over the values present.
    pub agreement: f64,
}

impl H2ErrorReport {
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.j_reach, self.j_obs, self.j_adjoint];
        v.extend(self.j_bruteforce);
        v
    }
}

fn pairwise_agreement(values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let (a, b) = (values[i], values[j]);
            worst = worst.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));
        }
    }
    worst
}

/// Solves every DLE needed and evaluates `J` all three ways (and by brute
/// force when `tau_stride` is given). `eps` regularizes the full gramians,
/// `eps_r` the reduced ones.
pub fn h2_error_report(
    sys: &LtvSystem,
    red: &LtvSystem,
    eps: f64,
    eps_r: f64,
    tau_stride: Option<usize>,
) -> Result<H2ErrorReport> {
    let gb = gramians(sys, eps, eps)?;
    let cb = coupling(sys, red, eps_r)?;
    let j_reach = h2_error_sq_reach(sys, red, &gb.p, &cb.x, &cb.pr)?;
    let j_obs = h2_error_sq_obs(sys, red, &gb.q, &cb.y, &cb.qr)?;
    let pma = reachability_gramian(&modified_adjoint(sys), eps);
    let (xma, prma) = coupling_via_adjoint(sys, red, eps_r)?;
    let j_adjoint = h2_error_sq_adjoint(sys, red, &pma, &xma, &prma)?;
    let j_bruteforce = tau_stride
        .map(|s| h2_error_bruteforce(sys, red, s))
        .transpose()?;
    let mut report = H2ErrorReport {
        j_reach,
        j_obs,
        j_adjoint,
        j_bruteforce,
        agreement: 0.0,
    };
    report.agreement = pairwise_agreement(&report.values());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timegrid::TimeGrid;

    fn scalar_sys(g: TimeGrid, a: f64, b: f64, c: f64) -> LtvSystem {
        let k = |v: f64| MatrixTrajectory::constant(g, DMatrix::from_element(1, 1, v));
        LtvSystem::new(k(a), k(b), k(c)).unwrap()
    }

    fn two_state(g: TimeGrid) -> LtvSystem {
        LtvSystem::new(
            MatrixTrajectory::from_fn(g, |t| {
                DMatrix::from_row_slice(2, 2, &[-1.0 + 0.3 * t.sin(), 0.4, -0.2 * t, -2.0])
            }),
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_row_slice(2, 1, &[1.0, t.cos()])),
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_row_slice(1, 2, &[1.0 + 0.5 * t, -0.7])),
        )
        .unwrap()
    }

    fn one_state(g: TimeGrid) -> LtvSystem {
        LtvSystem::new(
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_element(1, 1, -1.5 + 0.2 * t)),
            MatrixTrajectory::from_fn(g, |t| DMatrix::from_element(1, 1, 0.8 + 0.1 * t)),
            MatrixTrajectory::constant(g, DMatrix::from_element(1, 1, 0.9)),
        )
        .unwrap()
    }

    // ∫₀¹∫₀ᵗ e^{-2(t-τ)} dτ dt
    const SCALAR_J: f64 = 0.283_833_820_809_153_2;

    #[test]
    fn scalar_reference_value() {
        let exact = 0.5 - (1.0 - (-2.0f64).exp()) / 4.0;
        assert!((exact - SCALAR_J).abs() < 1e-15);
    }

    #[test]
    fn identical_systems_have_zero_error() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let sys = two_state(g);
        let rep = h2_error_report(&sys, &sys, 0.0, 0.0, Some(10)).unwrap();
        for v in rep.values() {
            assert!(v.abs() < 1e-9, "{rep:?}");
        }
        assert_eq!(h2_error_bruteforce(&sys, &sys, 3).unwrap(), 0.0);
    }

    #[test]
    fn zero_output_reduced_model_gives_system_norm() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let sys = scalar_sys(g, -1.0, 1.0, 1.0);
        let red_c0 = scalar_sys(g, -1.0, 1.0, 0.0);
        let gb = gramians(&sys, 0.0, 0.0).unwrap();
        let cb = coupling(&sys, &red_c0, 0.0).unwrap();
        let j = h2_error_sq_reach(&sys, &red_c0, &gb.p, &cb.x, &cb.pr).unwrap();
        assert!((j - SCALAR_J).abs() < 1e-6);

        let red_b0 = scalar_sys(g, -1.0, 0.0, 1.0);
        let cb = coupling(&sys, &red_b0, 0.0).unwrap();
        let j = h2_error_sq_obs(&sys, &red_b0, &gb.q, &cb.y, &cb.qr).unwrap();
        assert!((j - SCALAR_J).abs() < 1e-6);

        let jb = h2_error_bruteforce(&sys, &red_c0, 4).unwrap();
        assert!((jb - SCALAR_J).abs() < 1e-4);
    }

    #[test]
    fn three_forms_and_bruteforce_agree() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let sys = two_state(g);
        let red = one_state(g);
        let rep = h2_error_report(&sys, &red, 0.0, 0.0, Some(4)).unwrap();
        let j = rep.j_reach;
        assert!(j > 1e-3);
        assert!((rep.j_reach - rep.j_obs).abs() <= 1e-5 * (1.0 + j));
        assert!((rep.j_obs - rep.j_adjoint).abs() <= 1e-6 * (1.0 + j));
        assert!((rep.j_bruteforce.unwrap() - j).abs() <= 1e-4 * (1.0 + j));
        assert!(rep.agreement <= 1e-4);
    }

    #[test]
    fn dimension_errors() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let sys = two_state(g);
        let red = one_state(g);
        let wrong = MatrixTrajectory::zeros(g, 3, 3);
        let x = MatrixTrajectory::zeros(g, 2, 1);
        let pr = MatrixTrajectory::zeros(g, 1, 1);
        assert!(matches!(
            h2_error_sq_reach(&sys, &red, &wrong, &x, &pr),
            Err(Error::Dimension(_))
        ));
        assert!(h2_error_bruteforce(&sys, &red, 0).is_err());
    }
}
