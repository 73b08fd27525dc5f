//! Classical fixed-step RK4 on matrix states, stepping node to node.

use nalgebra::DMatrix;

use crate::timegrid::TimeGrid;

/// Integrates `dY/dt = rhs(t, Y)` forward from node `start` to the last
/// node. Element `i` of the result is the state at node `start + i`.
pub(crate) fn rk4_forward<F>(
    grid: &TimeGrid,
    start: usize,
    y0: DMatrix<f64>,
    mut rhs: F,
) -> Vec<DMatrix<f64>>
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let h = grid.step();
    let mut out = Vec::with_capacity(grid.len() - start);
    let mut y = y0;
    for k in start..grid.n_steps() {
        let t = grid.point(k);
        let tm = t + 0.5 * h;
        let tn = grid.point(k + 1);
        let k1 = rhs(t, &y);
        let k2 = rhs(tm, &(&y + &k1 * (0.5 * h)));
        let k3 = rhs(tm, &(&y + &k2 * (0.5 * h)));
        let k4 = rhs(tn, &(&y + &k3 * h));
        let next = &y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        out.push(std::mem::replace(&mut y, next));
    }
    out.push(y);
    out
}

/// Integrates backward in time from node `start` down to node 0. Element `k`
/// of the result is the state at node `k`.
pub(crate) fn rk4_backward<F>(
    grid: &TimeGrid,
    start: usize,
    y0: DMatrix<f64>,
    mut rhs: F,
) -> Vec<DMatrix<f64>>
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let h = -grid.step();
    let mut out = Vec::with_capacity(start + 1);
    let mut y = y0;
    for k in (1..=start).rev() {
        let t = grid.point(k);
        let tm = t + 0.5 * h;
        let tn = grid.point(k - 1);
        let k1 = rhs(t, &y);
        let k2 = rhs(tm, &(&y + &k1 * (0.5 * h)));
        let k3 = rhs(tm, &(&y + &k2 * (0.5 * h)));
        let k4 = rhs(tn, &(&y + &k3 * h));
        let next = &y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        out.push(std::mem::replace(&mut y, next));
    }
    out.push(y);
    out.reverse();
    out
}
