//! Continuous-time LTV systems `x' = A(t)x + B(t)u`, `y = C(t)x`: simulation,
//! state-transition matrices, impulse responses, adjoints and Petrov-Galerkin
//! projection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{rk4_backward, rk4_forward};
use crate::timegrid::{trapz, MatrixTrajectory, TimeGrid};

/// Realization `(A, B, C)` on one grid, with `A` n×n, `B` n×m and `C` p×n.
#[derive(Clone, Debug)]
pub struct LtvSystem {
    a: MatrixTrajectory,
    b: MatrixTrajectory,
    c: MatrixTrajectory,
}

impl LtvSystem {
    pub fn new(a: MatrixTrajectory, b: MatrixTrajectory, c: MatrixTrajectory) -> Result<Self> {
        a.check_same_grid(&b)?;
        a.check_same_grid(&c)?;
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::dim(format!("A must be square, got {:?}", a.shape())));
        }
        if b.rows() != n {
            return Err(Error::dim(format!(
                "B must have {n} rows, got {}",
                b.rows()
            )));
        }
        if c.cols() != n {
            return Err(Error::dim(format!(
                "C must have {n} columns, got {}",
                c.cols()
            )));
        }
        Ok(LtvSystem { a, b, c })
    }

    pub fn a(&self) -> &MatrixTrajectory {
        &self.a
    }

    pub fn b(&self) -> &MatrixTrajectory {
        &self.b
    }

    pub fn c(&self) -> &MatrixTrajectory {
        &self.c
    }

    pub fn grid(&self) -> &TimeGrid {
        self.a.grid()
    }

    /// State dimension `n`.
    pub fn order(&self) -> usize {
        self.a.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }

    /// The same realization on nodes `k0..=k1`.
    pub fn restrict(&self, k0: usize, k1: usize) -> Result<LtvSystem> {
        LtvSystem::new(
            self.a.restrict(k0, k1)?,
            self.b.restrict(k0, k1)?,
            self.c.restrict(k0, k1)?,
        )
    }

    /// Restriction to the sub-horizon `[t_start, t_end]`, both grid nodes.
    pub fn restrict_to(&self, t_start: f64, t_end: f64) -> Result<LtvSystem> {
        let k0 = self.grid().require_node(t_start)?;
        let k1 = self.grid().require_node(t_end)?;
        self.restrict(k0, k1)
    }

    pub(crate) fn check_io_compatible(&self, other: &LtvSystem) -> Result<()> {
        self.a.check_same_grid(&other.a)?;
        if self.inputs() != other.inputs() || self.outputs() != other.outputs() {
            return Err(Error::dim(format!(
                "systems have (m, p) = ({}, {}) and ({}, {})",
                self.inputs(),
                self.outputs(),
                other.inputs(),
                other.outputs()
            )));
        }
        Ok(())
    }
}

fn column_matrix(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// A vector signal sampled on a grid (inputs, states, outputs).
#[derive(Clone, Debug)]
pub struct SignalTrajectory {
    inner: MatrixTrajectory,
}

impl SignalTrajectory {
    pub fn from_values(grid: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        let samples = values.iter().map(column_matrix).collect();
        Ok(SignalTrajectory {
            inner: MatrixTrajectory::from_samples(grid, samples)?,
        })
    }

    /// Analytic signal; `f` must return vectors of length `dim`.
    pub fn from_fn<F>(grid: TimeGrid, f: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        SignalTrajectory {
            inner: MatrixTrajectory::from_fn(grid, move |t| column_matrix(&f(t))),
        }
    }

    pub fn from_trajectory(inner: MatrixTrajectory) -> Result<Self> {
        if inner.cols() != 1 {
            return Err(Error::dim(format!(
                "signals are column trajectories, got {:?}",
                inner.shape()
            )));
        }
        Ok(SignalTrajectory { inner })
    }

    pub fn constant(grid: TimeGrid, v: DVector<f64>) -> Self {
        SignalTrajectory {
            inner: MatrixTrajectory::constant(grid, column_matrix(&v)),
        }
    }

    /// `u(t) = 1` in every channel over the whole grid.
    pub fn unit_step(grid: TimeGrid, dim: usize) -> Self {
        Self::constant(grid, DVector::from_element(dim, 1.0))
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self::constant(grid, DVector::zeros(dim))
    }

    pub fn grid(&self) -> &TimeGrid {
        self.inner.grid()
    }

    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn len(&self) -> usize {
        self.grid().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, k: usize) -> DVector<f64> {
        self.inner.at(k).column(0).into_owned()
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.inner.eval(t)?.column(0).into_owned())
    }

    pub fn as_trajectory(&self) -> &MatrixTrajectory {
        &self.inner
    }

    pub fn restrict(&self, k0: usize, k1: usize) -> Result<Self> {
        Ok(SignalTrajectory {
            inner: self.inner.restrict(k0, k1)?,
        })
    }

    /// Channel `i` over all nodes.
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.inner.samples().iter().map(|s| s[(i, 0)]).collect()
    }

    /// `||self||_{L2}` by the trapezoidal rule.
    pub fn l2_norm(&self) -> f64 {
        self.inner.l2_frobenius()
    }

    /// `||self - other||_{L2}` by the trapezoidal rule.
    pub fn l2_distance(&self, other: &SignalTrajectory) -> Result<f64> {
        self.check_compatible(other)?;
        let sq: Vec<f64> = self
            .inner
            .samples()
            .iter()
            .zip(other.inner.samples())
            .map(|(a, b)| (a - b).norm_squared())
            .collect();
        Ok(trapz(self.grid().step(), &sq).max(0.0).sqrt())
    }

    /// Largest pointwise Euclidean distance over the nodes.
    pub fn max_abs_distance(&self, other: &SignalTrajectory) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.inner.max_distance(&other.inner))
    }

    fn check_compatible(&self, other: &SignalTrajectory) -> Result<()> {
        self.inner.check_same_grid(&other.inner)?;
        if self.dim() != other.dim() {
            return Err(Error::dim(format!(
                "signal dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Which way the reduced state matrix is assembled from a projection pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ArForm {
    /// `A_r = W_rᵀ (A V_r - dV_r/dt)`
    #[default]
    SubtractDv,
    /// `A_r = (W_rᵀ A + dW_rᵀ/dt) V_r`
    AddDw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReductionMethod {
    BalancedTruncation,
    Tsia,
}

/// A reduced system together with the projection pair that produced it.
#[derive(Clone, Debug)]
pub struct ReducedOrderModel {
    pub sys: LtvSystem,
    pub vr: MatrixTrajectory,
    pub wr: MatrixTrajectory,
    pub method: ReductionMethod,
    pub iterations: usize,
}

impl ReducedOrderModel {
    pub fn order(&self) -> usize {
        self.sys.order()
    }

    /// `max_t ||W_rᵀ V_r - I||_F` over nodes `k0..=k1`.
    pub fn biorthogonality_defect(&self, k0: usize, k1: usize) -> f64 {
        biorthogonality_defect(&self.vr, &self.wr, k0, k1)
    }

    /// Restriction of the model and its projections to nodes `k0..=k1`.
    pub fn restrict(&self, k0: usize, k1: usize) -> Result<Self> {
        Ok(ReducedOrderModel {
            sys: self.sys.restrict(k0, k1)?,
            vr: self.vr.restrict(k0, k1)?,
            wr: self.wr.restrict(k0, k1)?,
            method: self.method,
            iterations: self.iterations,
        })
    }
}

pub(crate) fn biorthogonality_defect(
    vr: &MatrixTrajectory,
    wr: &MatrixTrajectory,
    k0: usize,
    k1: usize,
) -> f64 {
    let r = vr.cols();
    let eye = DMatrix::<f64>::identity(r, r);
    (k0..=k1)
        .map(|k| (wr.at(k).transpose() * vr.at(k) - &eye).norm())
        .fold(0.0, f64::max)
}

/// Adjoint system `x_a' = -Aᵀ x_a - Cᵀ u_a`, `y_a = Bᵀ x_a`, stored on the
/// original grid (it is meant to run from `tf` back to `t0`).
pub fn adjoint(sys: &LtvSystem) -> LtvSystem {
    LtvSystem::new(
        sys.a.transpose().scale(-1.0),
        sys.c.transpose().scale(-1.0),
        sys.b.transpose(),
    )
    .expect("adjoint preserves consistency")
}

/// Modified adjoint: `A_ma(t) = A(Ti-t)ᵀ`, `B_ma(t) = C(Ti-t)ᵀ`,
/// `C_ma(t) = B(Ti-t)ᵀ`, running forward on the same grid.
pub fn modified_adjoint(sys: &LtvSystem) -> LtvSystem {
    LtvSystem::new(
        sys.a.reverse().transpose(),
        sys.c.reverse().transpose(),
        sys.b.reverse().transpose(),
    )
    .expect("modified adjoint preserves consistency")
}

/// Which part of `t -> φ(t, τ)` to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StmSpan {
    /// Only `t ≥ τ`; samples before `τ` are left at zero.
    Forward,
    /// All nodes; `t < τ` by integrating backward from `τ`.
    Full,
}

/// State-transition matrix `φ(t, τ)` as a trajectory in `t`, for a node `τ`.
pub fn stm(sys: &LtvSystem, tau: f64, span: StmSpan) -> Result<MatrixTrajectory> {
    let k = sys.grid().require_node(tau)?;
    Ok(stm_at_node(sys, k, span))
}

pub(crate) fn stm_at_node(sys: &LtvSystem, k: usize, span: StmSpan) -> MatrixTrajectory {
    let n = sys.order();
    let grid = *sys.grid();
    let a = &sys.a;
    let eye = DMatrix::identity(n, n);
    let fwd = rk4_forward(&grid, k, eye.clone(), |t, y| a.value_at(t) * y);
    let mut samples = match span {
        StmSpan::Forward => vec![DMatrix::zeros(n, n); k],
        StmSpan::Full => {
            let mut b = rk4_backward(&grid, k, eye, |t, y| a.value_at(t) * y);
            b.pop();
            b
        }
    };
    samples.extend(fwd);
    MatrixTrajectory::from_samples(grid, samples).expect("one sample per node")
}

/// Simulates from `x(t0) = x0`; returns the output `y = C x` at every node.
pub fn simulate(
    sys: &LtvSystem,
    u: &SignalTrajectory,
    x0: &DVector<f64>,
) -> Result<SignalTrajectory> {
    simulate_with_states(sys, u, x0).map(|(_, y)| y)
}

/// Like [`simulate`], also returning the state trajectory.
pub fn simulate_with_states(
    sys: &LtvSystem,
    u: &SignalTrajectory,
    x0: &DVector<f64>,
) -> Result<(SignalTrajectory, SignalTrajectory)> {
    if u.grid() != sys.grid() {
        return Err(Error::Domain("input and system grids differ".into()));
    }
    if u.dim() != sys.inputs() {
        return Err(Error::Domain(format!(
            "input has dimension {}, system expects {}",
            u.dim(),
            sys.inputs()
        )));
    }
    if x0.len() != sys.order() {
        return Err(Error::Domain(format!(
            "initial state has dimension {}, system order is {}",
            x0.len(),
            sys.order()
        )));
    }
    let grid = *sys.grid();
    let states = rk4_forward(&grid, 0, column_matrix(x0), |t, x| {
        sys.a.value_at(t) * x + sys.b.value_at(t) * u.inner.value_at(t)
    });
    let outputs = states
        .iter()
        .enumerate()
        .map(|(k, x)| (sys.c.at(k) * x).column(0).into_owned())
        .collect();
    let states = states
        .into_iter()
        .map(|x| x.column(0).into_owned())
        .collect();
    Ok((
        SignalTrajectory::from_values(grid, states)?,
        SignalTrajectory::from_values(grid, outputs)?,
    ))
}

/// Impulse response `h(t, τ)`: zero for `t < τ`, `C(t) φ(t, τ) B(τ)` after.
pub fn impulse_response(sys: &LtvSystem, tau: f64) -> Result<MatrixTrajectory> {
    let k = sys.grid().require_node(tau)?;
    Ok(impulse_response_at_node(sys, k))
}

pub(crate) fn impulse_response_at_node(sys: &LtvSystem, k: usize) -> MatrixTrajectory {
    let grid = *sys.grid();
    let a = &sys.a;
    // propagate φ(t, τ) B(τ) directly
    let z = rk4_forward(&grid, k, sys.b.at(k).clone(), |t, y| a.value_at(t) * y);
    let mut samples = vec![DMatrix::zeros(sys.outputs(), sys.inputs()); k];
    samples.extend(z.iter().enumerate().map(|(i, zi)| sys.c.at(k + i) * zi));
    MatrixTrajectory::from_samples(grid, samples).expect("one sample per node")
}

/// Petrov-Galerkin reduction `B_r = W_rᵀ B`, `C_r = C V_r` and `A_r` per
/// `form`, with node derivatives of the projections.
pub fn reduce_projection(
    sys: &LtvSystem,
    vr: &MatrixTrajectory,
    wr: &MatrixTrajectory,
    form: ArForm,
) -> Result<LtvSystem> {
    vr.check_same_grid(sys.a())?;
    wr.check_same_grid(sys.a())?;
    let n = sys.order();
    if vr.rows() != n || wr.rows() != n || vr.cols() != wr.cols() {
        return Err(Error::dim(format!(
            "projections must both be {n}xr, got {:?} and {:?}",
            vr.shape(),
            wr.shape()
        )));
    }
    let len = sys.grid().len();
    let mut ar = Vec::with_capacity(len);
    match form {
        ArForm::SubtractDv => {
            let dv = vr.differentiate();
            for k in 0..len {
                ar.push(wr.at(k).transpose() * (sys.a.at(k) * vr.at(k) - dv.at(k)));
            }
        }
        ArForm::AddDw => {
            let dwt = wr.transpose().differentiate();
            for k in 0..len {
                ar.push((wr.at(k).transpose() * sys.a.at(k) + dwt.at(k)) * vr.at(k));
            }
        }
    }
    let br = (0..len)
        .map(|k| wr.at(k).transpose() * sys.b.at(k))
        .collect();
    let cr = (0..len).map(|k| sys.c.at(k) * vr.at(k)).collect();
    let grid = *sys.grid();
    LtvSystem::new(
        MatrixTrajectory::from_samples(grid, ar)?,
        MatrixTrajectory::from_samples(grid, br)?,
        MatrixTrajectory::from_samples(grid, cr)?,
    )
}
