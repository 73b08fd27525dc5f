//! Differential Lyapunov / Sylvester equations for gramians and the coupling
//! matrices between a full and a reduced system.
//!
//! Forward equations have the form `X' = F X + X Gᵀ + H` from `X(t0)`.
//! Backward equations `-X' = Fᵀ X + X G + H` from `X(tf)` are solved by the
//! substitution `s = Ti - t`, which turns them into forward equations with
//! time-reversed, transposed coefficients on the same grid.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ltv::{modified_adjoint, LtvSystem};
use crate::ode::rk4_forward;
use crate::timegrid::{MatrixTrajectory, TimeGrid};

/// Forcing term `L(t) R(t)ᵀ`, or a plain matrix trajectory.
enum Forcing<'a> {
    Outer(&'a MatrixTrajectory, &'a MatrixTrajectory),
    Plain(&'a MatrixTrajectory),
}

impl Forcing<'_> {
    fn value_at(&self, t: f64) -> DMatrix<f64> {
        match self {
            Forcing::Outer(l, r) => l.value_at(t) * r.value_at(t).transpose(),
            Forcing::Plain(h) => h.value_at(t),
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn forward_solve(
    f: &MatrixTrajectory,
    g: &MatrixTrajectory,
    forcing: Forcing<'_>,
    x0: DMatrix<f64>,
    symmetric: bool,
) -> MatrixTrajectory {
    let grid = *f.grid();
    let rhs = |t: f64, x: &DMatrix<f64>| {
        f.value_at(t) * x + x * g.value_at(t).transpose() + forcing.value_at(t)
    };
    let samples = if symmetric {
        symmetric_rk4(&grid, x0, rhs)
    } else {
        rk4_forward(&grid, 0, x0, rhs)
    };
    MatrixTrajectory::from_samples(grid, samples).expect("one sample per node")
}

/// RK4 with `(X + Xᵀ)/2` applied after every step.
fn symmetric_rk4<F>(grid: &TimeGrid, x0: DMatrix<f64>, mut rhs: F) -> Vec<DMatrix<f64>>
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let h = grid.step();
    let mut out = Vec::with_capacity(grid.len());
    let mut y = symmetrize(x0);
    for k in 0..grid.n_steps() {
        let t = grid.point(k);
        let tm = t + 0.5 * h;
        let k1 = rhs(t, &y);
        let k2 = rhs(tm, &(&y + &k1 * (0.5 * h)));
        let k3 = rhs(tm, &(&y + &k2 * (0.5 * h)));
        let k4 = rhs(grid.point(k + 1), &(&y + &k3 * h));
        let next = symmetrize(&y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0));
        out.push(std::mem::replace(&mut y, next));
    }
    out.push(y);
    out
}

fn check_sylvester_dims(
    f: &MatrixTrajectory,
    g: &MatrixTrajectory,
    h: (usize, usize),
    x: (usize, usize),
) -> Result<()> {
    f.check_same_grid(g)?;
    let (a, b) = (f.rows(), g.rows());
    if f.cols() != a || g.cols() != b || h != (a, b) || x != (a, b) {
        return Err(Error::dim(format!(
            "Sylvester data: F {:?}, G {:?}, H {h:?}, X {x:?}",
            f.shape(),
            g.shape()
        )));
    }
    Ok(())
}

/// Solves `X' = F X + X Gᵀ + H` forward from `X(t0) = x0`.
pub fn solve_forward_sylvester(
    f: &MatrixTrajectory,
    g: &MatrixTrajectory,
    h: &MatrixTrajectory,
    x0: &DMatrix<f64>,
) -> Result<MatrixTrajectory> {
    check_sylvester_dims(f, g, h.shape(), x0.shape())?;
    f.check_same_grid(h)?;
    Ok(forward_solve(f, g, Forcing::Plain(h), x0.clone(), false))
}

/// Solves `-X' = Fᵀ X + X G + H` backward from `X(tf) = xf`.
pub fn solve_backward_sylvester(
    f: &MatrixTrajectory,
    g: &MatrixTrajectory,
    h: &MatrixTrajectory,
    xf: &DMatrix<f64>,
) -> Result<MatrixTrajectory> {
    check_sylvester_dims(f, g, h.shape(), xf.shape())?;
    f.check_same_grid(h)?;
    let fr = f.reverse().transpose();
    let gr = g.reverse().transpose();
    let hr = h.reverse();
    Ok(forward_solve(&fr, &gr, Forcing::Plain(&hr), xf.clone(), false).reverse())
}

/// Backward solve with forcing `L Rᵀ`; `symmetric` for Lyapunov equations.
fn backward_outer(
    f: &MatrixTrajectory,
    g: &MatrixTrajectory,
    l: &MatrixTrajectory,
    r: &MatrixTrajectory,
    xf: DMatrix<f64>,
    symmetric: bool,
) -> MatrixTrajectory {
    let fr = f.reverse().transpose();
    let gr = g.reverse().transpose();
    let lr = l.reverse();
    let rr = r.reverse();
    forward_solve(&fr, &gr, Forcing::Outer(&lr, &rr), xf, symmetric).reverse()
}

/// Reachability gramian: `P' = A P + P Aᵀ + B Bᵀ`, `P(t0) = eps I`.
pub fn reachability_gramian(sys: &LtvSystem, eps: f64) -> MatrixTrajectory {
    let n = sys.order();
    forward_solve(
        sys.a(),
        sys.a(),
        Forcing::Outer(sys.b(), sys.b()),
        DMatrix::identity(n, n) * eps,
        true,
    )
}

/// Observability gramian: `-Q' = Aᵀ Q + Q A + Cᵀ C`, `Q(tf) = eps I`.
pub fn observability_gramian(sys: &LtvSystem, eps: f64) -> MatrixTrajectory {
    let n = sys.order();
    let ct = sys.c().transpose();
    backward_outer(
        sys.a(),
        sys.a(),
        &ct,
        &ct,
        DMatrix::identity(n, n) * eps,
        true,
    )
}

/// Reachability and observability gramians of one system.
#[derive(Clone, Debug)]
pub struct GramianBundle {
    pub p: MatrixTrajectory,
    pub q: MatrixTrajectory,
    pub eps_p: f64,
    pub eps_q: f64,
}

impl GramianBundle {
    pub fn grid(&self) -> &TimeGrid {
        self.p.grid()
    }
}

pub fn gramians(sys: &LtvSystem, eps_p: f64, eps_q: f64) -> Result<GramianBundle> {
    if !(eps_p >= 0.0 && eps_q >= 0.0) {
        return Err(Error::Domain(format!(
            "regularization must be non-negative, got {eps_p}, {eps_q}"
        )));
    }
    Ok(GramianBundle {
        p: reachability_gramian(sys, eps_p),
        q: observability_gramian(sys, eps_q),
        eps_p,
        eps_q,
    })
}

/// Reduced gramians and cross gramians between a full and a reduced system.
#[derive(Clone, Debug)]
pub struct CouplingBundle {
    pub pr: MatrixTrajectory,
    pub qr: MatrixTrajectory,
    pub x: MatrixTrajectory,
    pub y: MatrixTrajectory,
}

/// `X' = A X + X A_rᵀ + B B_rᵀ` from zero and
/// `P_r' = A_r P_r + P_r A_rᵀ + B_r B_rᵀ` from `eps_r I`.
pub fn coupling_forward(
    sys: &LtvSystem,
    red: &LtvSystem,
    eps_r: f64,
) -> Result<(MatrixTrajectory, MatrixTrajectory)> {
    sys.check_io_compatible(red)?;
    let (n, r) = (sys.order(), red.order());
    let x = forward_solve(
        sys.a(),
        red.a(),
        Forcing::Outer(sys.b(), red.b()),
        DMatrix::zeros(n, r),
        false,
    );
    let pr = reachability_gramian(red, eps_r);
    Ok((x, pr))
}

/// `-Y' = Aᵀ Y + Y A_r + Cᵀ C_r` and `-Q_r' = A_rᵀ Q_r + Q_r A_r + C_rᵀ C_r`
/// backward from `Y(tf) = 0`, `Q_r(tf) = eps_r I`.
pub fn coupling_backward(
    sys: &LtvSystem,
    red: &LtvSystem,
    eps_r: f64,
) -> Result<(MatrixTrajectory, MatrixTrajectory)> {
    sys.check_io_compatible(red)?;
    let (n, r) = (sys.order(), red.order());
    let ct = sys.c().transpose();
    let crt = red.c().transpose();
    let y = backward_outer(sys.a(), red.a(), &ct, &crt, DMatrix::zeros(n, r), false);
    let qr = observability_gramian(red, eps_r);
    Ok((y, qr))
}

pub fn coupling(sys: &LtvSystem, red: &LtvSystem, eps_r: f64) -> Result<CouplingBundle> {
    if !(eps_r >= 0.0) {
        return Err(Error::Domain(format!(
            "regularization must be non-negative, got {eps_r}"
        )));
    }
    let (x, pr) = coupling_forward(sys, red, eps_r)?;
    let (y, qr) = coupling_backward(sys, red, eps_r)?;
    Ok(CouplingBundle { pr, qr, x, y })
}

/// `X_ma` and `P_rma` from the modified adjoints of `sys` and `red`, both
/// solved forward: `X_ma(t0) = 0`, `P_rma(t0) = eps_r I`. Reversed in time
/// they equal `Y` and `Q_r`.
pub fn coupling_via_adjoint(
    sys: &LtvSystem,
    red: &LtvSystem,
    eps_r: f64,
) -> Result<(MatrixTrajectory, MatrixTrajectory)> {
    sys.check_io_compatible(red)?;
    let sys_ma = modified_adjoint(sys);
    let red_ma = modified_adjoint(red);
    let (n, r) = (sys.order(), red.order());
    let x_ma = forward_solve(
        sys_ma.a(),
        red_ma.a(),
        Forcing::Outer(sys_ma.b(), red_ma.b()),
        DMatrix::zeros(n, r),
        false,
    );
    let pr_ma = reachability_gramian(&red_ma, eps_r);
    Ok((x_ma, pr_ma))
}
