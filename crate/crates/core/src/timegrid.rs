//! Uniform time grids and matrix-valued trajectories sampled on them.
//!
//! Every quantity in the crate (system matrices, gramians, projections,
//! signals) lives on a [`TimeGrid`]. Trajectories keep one sample per node and
//! an evaluation rule used between nodes: either piecewise-linear
//! interpolation of the samples or an analytic function of time. The RK4
//! integrators step node to node and only need off-node values at half steps.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Uniform grid `t0, t0 + h, ..., tf` with `n_steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    tf: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() || !tf.is_finite() || tf <= t0 {
            return Err(Error::Domain(format!(
                "time grid needs t0 < tf, got [{t0}, {tf}]"
            )));
        }
        if n_steps < 2 {
            return Err(Error::Domain(format!(
                "time grid needs at least 2 steps, got {n_steps}"
            )));
        }
        Ok(TimeGrid { t0, tf, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.tf - self.t0) / self.n_steps as f64
    }

    /// `Ti = t0 + tf`; `t -> Ti - t` maps the grid onto itself.
    pub fn reversal_time(&self) -> f64 {
        self.t0 + self.tf
    }

    /// Time of node `k`. The last node is `tf` itself.
    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            self.tf
        } else {
            self.t0 + k as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Node index `n_steps - k`, the image of node `k` under time reversal.
    pub fn mirror(&self, k: usize) -> usize {
        self.n_steps - k
    }

    /// Index of the node at time `t`, if `t` lies on the grid.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let h = self.step();
        let x = (t - self.t0) / h;
        let k = x.round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        if (t - self.point(k)).abs() <= 1e-9 * h {
            Some(k)
        } else {
            None
        }
    }

    /// Like [`node_index`](Self::node_index) but an error when `t` is off-grid.
    pub fn require_node(&self, t: f64) -> Result<usize> {
        self.node_index(t).ok_or_else(|| {
            Error::Domain(format!(
                "t = {t} is not a node of the grid [{}, {}] / {}",
                self.t0, self.tf, self.n_steps
            ))
        })
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-12 * (self.tf - self.t0);
        t >= self.t0 - slack && t <= self.tf + slack
    }

    /// The sub-grid spanned by nodes `k0..=k1`.
    pub fn sub_grid(&self, k0: usize, k1: usize) -> Result<TimeGrid> {
        if k1 > self.n_steps || k0 + 2 > k1 {
            return Err(Error::Domain(format!(
                "sub-grid nodes {k0}..={k1} invalid for a grid with {} steps",
                self.n_steps
            )));
        }
        TimeGrid::new(self.point(k0), self.point(k1), k1 - k0)
    }

    /// Locates `t` as `(k, w)` with `t = (1 - w) t_k + w t_{k+1}`, `k < n_steps`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let x = (t - self.t0) / self.step();
        let k = (x.floor().max(0.0) as usize).min(self.n_steps - 1);
        let w = (x - k as f64).clamp(0.0, 1.0);
        (k, w)
    }
}

/// Shared analytic matrix function of time.
pub type AnalyticFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// How a trajectory is evaluated off the grid nodes.
#[derive(Clone)]
pub enum EvalRule {
    PiecewiseLinear,
    Analytic(AnalyticFn),
}

impl fmt::Debug for EvalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalRule::PiecewiseLinear => f.write_str("PiecewiseLinear"),
            EvalRule::Analytic(_) => f.write_str("Analytic(..)"),
        }
    }
}

/// A matrix-valued function of time sampled on a [`TimeGrid`].
#[derive(Clone, Debug)]
pub struct MatrixTrajectory {
    grid: TimeGrid,
    rows: usize,
    cols: usize,
    samples: Vec<DMatrix<f64>>,
    rule: EvalRule,
}

impl MatrixTrajectory {
    /// Piecewise-linear trajectory through the given node samples.
    pub fn from_samples(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::dim(format!(
                "expected {} samples, got {}",
                grid.len(),
                samples.len()
            )));
        }
        let (rows, cols) = samples[0].shape();
        if let Some(k) = samples.iter().position(|s| s.shape() != (rows, cols)) {
            return Err(Error::dim(format!(
                "sample {k} is {:?}, expected {rows}x{cols}",
                samples[k].shape()
            )));
        }
        Ok(MatrixTrajectory {
            grid,
            rows,
            cols,
            samples,
            rule: EvalRule::PiecewiseLinear,
        })
    }

    /// Analytic trajectory; samples are `f` evaluated at the nodes.
    pub fn from_fn<F>(grid: TimeGrid, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::from_analytic(grid, Arc::new(f))
    }

    pub fn from_analytic(grid: TimeGrid, f: AnalyticFn) -> Self {
        let samples: Vec<_> = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        let (rows, cols) = samples[0].shape();
        MatrixTrajectory {
            grid,
            rows,
            cols,
            samples,
            rule: EvalRule::Analytic(f),
        }
    }

    pub fn constant(grid: TimeGrid, m: DMatrix<f64>) -> Self {
        Self::from_fn(grid, move |_| m.clone())
    }

    pub fn zeros(grid: TimeGrid, rows: usize, cols: usize) -> Self {
        Self::constant(grid, DMatrix::zeros(rows, cols))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rule(&self) -> &EvalRule {
        &self.rule
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.rule, EvalRule::Analytic(_))
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<DMatrix<f64>> {
        self.samples
    }

    /// Sample at node `k`.
    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.samples[k]
    }

    /// Value at time `t`; exact sample on nodes.
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        if !self.grid.contains(t) {
            return Err(Error::Domain(format!(
                "t = {t} outside [{}, {}]",
                self.grid.t0(),
                self.grid.tf()
            )));
        }
        if let Some(k) = self.grid.node_index(t) {
            return Ok(self.samples[k].clone());
        }
        Ok(self.value_at(t))
    }

    /// Unchecked evaluation used on integrator hot paths.
    pub(crate) fn value_at(&self, t: f64) -> DMatrix<f64> {
        match &self.rule {
            EvalRule::Analytic(f) => f(t),
            EvalRule::PiecewiseLinear => {
                let (k, w) = self.grid.locate(t);
                if w == 0.0 {
                    self.samples[k].clone()
                } else if w == 1.0 {
                    self.samples[k + 1].clone()
                } else {
                    &self.samples[k] * (1.0 - w) + &self.samples[k + 1] * w
                }
            }
        }
    }

    /// `out(t) = in(Ti - t)`; sample `k` of the result is sample `n_steps - k`.
    pub fn reverse(&self) -> Self {
        let samples = self.samples.iter().rev().cloned().collect();
        let rule = match &self.rule {
            EvalRule::PiecewiseLinear => EvalRule::PiecewiseLinear,
            EvalRule::Analytic(f) => {
                let f = Arc::clone(f);
                let ti = self.grid.reversal_time();
                EvalRule::Analytic(Arc::new(move |t| f(ti - t)))
            }
        };
        MatrixTrajectory {
            grid: self.grid,
            rows: self.rows,
            cols: self.cols,
            samples,
            rule,
        }
    }

    pub fn transpose(&self) -> Self {
        let samples = self.samples.iter().map(|s| s.transpose()).collect();
        let rule = match &self.rule {
            EvalRule::PiecewiseLinear => EvalRule::PiecewiseLinear,
            EvalRule::Analytic(f) => {
                let f = Arc::clone(f);
                EvalRule::Analytic(Arc::new(move |t| f(t).transpose()))
            }
        };
        MatrixTrajectory {
            grid: self.grid,
            rows: self.cols,
            cols: self.rows,
            samples,
            rule,
        }
    }

    /// `s * M(t)`, keeping the evaluation rule.
    pub fn scale(&self, s: f64) -> Self {
        let samples = self.samples.iter().map(|m| m * s).collect();
        let rule = match &self.rule {
            EvalRule::PiecewiseLinear => EvalRule::PiecewiseLinear,
            EvalRule::Analytic(f) => {
                let f = Arc::clone(f);
                EvalRule::Analytic(Arc::new(move |t| f(t) * s))
            }
        };
        MatrixTrajectory {
            grid: self.grid,
            rows: self.rows,
            cols: self.cols,
            samples,
            rule,
        }
    }

    /// Restriction to nodes `k0..=k1`, keeping the evaluation rule.
    pub fn restrict(&self, k0: usize, k1: usize) -> Result<Self> {
        let grid = self.grid.sub_grid(k0, k1)?;
        Ok(MatrixTrajectory {
            grid,
            rows: self.rows,
            cols: self.cols,
            samples: self.samples[k0..=k1].to_vec(),
            rule: self.rule.clone(),
        })
    }

    /// Sample-wise map; the result is piecewise-linear.
    pub fn map<F>(&self, f: F) -> Self
    where
        F: FnMut(&DMatrix<f64>) -> DMatrix<f64>,
    {
        let samples: Vec<_> = self.samples.iter().map(f).collect();
        MatrixTrajectory::from_samples(self.grid, samples).expect("map preserves sample count")
    }

    /// Sample-wise combination of two trajectories on the same grid.
    pub fn zip_map<F>(&self, other: &MatrixTrajectory, mut f: F) -> Result<Self>
    where
        F: FnMut(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    {
        self.check_same_grid(other)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| f(a, b))
            .collect();
        MatrixTrajectory::from_samples(self.grid, samples)
    }

    pub(crate) fn check_same_grid(&self, other: &MatrixTrajectory) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::dim(format!(
                "trajectories live on different grids: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Node-wise derivative: central differences inside, three-point
    /// one-sided second-order stencils at both ends.
    pub fn differentiate(&self) -> Self {
        let n = self.grid.n_steps();
        let h = self.grid.step();
        let s = &self.samples;
        let mut out = Vec::with_capacity(n + 1);
        out.push((&s[0] * -3.0 + &s[1] * 4.0 - &s[2]) / (2.0 * h));
        for k in 1..n {
            out.push((&s[k + 1] - &s[k - 1]) / (2.0 * h));
        }
        out.push((&s[n] * 3.0 - &s[n - 1] * 4.0 + &s[n - 2]) / (2.0 * h));
        MatrixTrajectory::from_samples(self.grid, out).expect("same sample count")
    }

    /// Composite trapezoidal rule of a 1x1 trajectory over the whole grid.
    pub fn integrate_trapz(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::dim(format!(
                "trapezoid integral needs a scalar trajectory, got {}x{}",
                self.rows, self.cols
            )));
        }
        let values: Vec<f64> = self.samples.iter().map(|s| s[(0, 0)]).collect();
        Ok(trapz(self.grid.step(), &values))
    }

    /// `sqrt(∫ ||M(t)||_F^2 dt)` by the trapezoidal rule.
    pub fn l2_frobenius(&self) -> f64 {
        let values: Vec<f64> = self.samples.iter().map(|s| s.norm_squared()).collect();
        trapz(self.grid.step(), &values).max(0.0).sqrt()
    }

    /// Largest node-wise Frobenius distance to `other`.
    pub fn max_distance(&self, other: &MatrixTrajectory) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Composite trapezoidal rule on uniformly spaced values.
pub fn trapz(step: f64, values: &[f64]) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        len => {
            let inner: f64 = values[1..len - 1].iter().sum();
            step * (0.5 * (values[0] + values[len - 1]) + inner)
        }
    }
}

/// Composite Simpson rule on uniformly spaced values; an even number of
/// points closes with Simpson's 3/8 rule on the last three intervals, two
/// points fall back to the trapezoid.
pub fn simpson(step: f64, values: &[f64]) -> f64 {
    let len = values.len();
    if len < 3 {
        return trapz(step, values);
    }
    let simpson_odd = |v: &[f64]| {
        let mut acc = v[0] + v[v.len() - 1];
        for (i, x) in v.iter().enumerate().take(v.len() - 1).skip(1) {
            acc += if i % 2 == 1 { 4.0 * x } else { 2.0 * x };
        }
        acc * step / 3.0
    };
    if len % 2 == 1 {
        return simpson_odd(values);
    }
    let tail = &values[len - 4..];
    let three_eighths = 3.0 * step / 8.0 * (tail[0] + 3.0 * tail[1] + 3.0 * tail[2] + tail[3]);
    let head = if len > 4 {
        simpson_odd(&values[..len - 3])
    } else {
        0.0
    };
    head + three_eighths
}
