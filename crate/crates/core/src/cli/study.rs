//! The reduction pipeline shared by `reduce` and `reproduce-paper`:
//! gramians and Hankel singular values on the computation grid, balanced
//! truncation there, then TSIA on the horizon starting from the truncated
//! model.

use nalgebra::DVector;

use crate::bt::{balanced_truncation_with, hankel_singular_values, BtOptions, HsvTrajectory};
use crate::dle::{gramians, GramianBundle};
use crate::error::Result;
use crate::ltv::{simulate, LtvSystem, ReducedOrderModel, SignalTrajectory};
use crate::tsia::{tsia_reduce, TsiaTrace};

use super::config::SystemConfig;

/// Output errors of one reduced model against the full system.
#[derive(Clone, Copy, Debug)]
pub struct OutputErrors {
    /// `||y - y_r||_{L2}` on the horizon.
    pub l2: f64,
    pub l2_rel: f64,
    /// `∫ |y - y_r|² dt`.
    pub l2_sq: f64,
    pub max_abs: f64,
}

fn output_errors(y: &SignalTrajectory, yr: &SignalTrajectory) -> Result<OutputErrors> {
    let l2 = y.l2_distance(yr)?;
    let norm = y.l2_norm();
    Ok(OutputErrors {
        l2,
        l2_rel: if norm > 0.0 { l2 / norm } else { l2 },
        l2_sq: l2 * l2,
        max_abs: y.max_abs_distance(yr)?,
    })
}

/// Full system, gramians and balanced truncation on the computation grid,
/// plus the system restricted to the horizon.
pub struct Baseline {
    pub sys: LtvSystem,
    pub gramians: GramianBundle,
    pub hsv: HsvTrajectory,
    /// Horizon node range on the computation grid.
    pub window: (usize, usize),
    pub inner: LtvSystem,
    /// Balanced truncation restricted to the horizon.
    pub bt: ReducedOrderModel,
}

pub fn baseline(cfg: &SystemConfig, order: usize) -> Result<Baseline> {
    let sys = cfg.system()?;
    let gb = gramians(&sys, cfg.eps, cfg.eps)?;
    let hsv = hankel_singular_values(&gb.p, &gb.q)?;
    let window = cfg.horizon_nodes()?;
    let bt = balanced_truncation_with(&sys, &gb, order, &BtOptions::default())?
        .restrict(window.0, window.1)?;
    let inner = sys.restrict(window.0, window.1)?;
    Ok(Baseline {
        sys,
        gramians: gb,
        hsv,
        window,
        inner,
        bt,
    })
}

pub struct Study {
    pub base: Baseline,
    pub tsia: ReducedOrderModel,
    pub trace: TsiaTrace,
    pub probe: SignalTrajectory,
    pub y: SignalTrajectory,
    pub y_bt: SignalTrajectory,
    pub y_tsia: SignalTrajectory,
    pub bt_errors: OutputErrors,
    pub tsia_errors: OutputErrors,
}

impl Study {
    /// `min_t σ1(t)/σ2(t)` on the horizon.
    pub fn hsv_min_ratio(&self) -> f64 {
        self.base
            .hsv
            .min_ratio(0, 1, self.base.window.0, self.base.window.1)
    }
}

pub fn run_study(cfg: &SystemConfig, order: usize) -> Result<Study> {
    let base = baseline(cfg, order)?;
    let mut opts = cfg.tsia_options();
    opts.eps = cfg.eps;
    let probe = cfg.probe_on(*base.inner.grid());
    opts.probe_input = Some(probe.clone());
    let (tsia, trace) = tsia_reduce(&base.inner, &base.bt, &opts)?;
    let sim = |s: &LtvSystem| simulate(s, &probe, &DVector::zeros(s.order()));
    let y = sim(&base.inner)?;
    let y_bt = sim(&base.bt.sys)?;
    let y_tsia = sim(&tsia.sys)?;
    let bt_errors = output_errors(&y, &y_bt)?;
    let tsia_errors = output_errors(&y, &y_tsia)?;
    Ok(Study {
        base,
        tsia,
        trace,
        probe,
        y,
        y_bt,
        y_tsia,
        bt_errors,
        tsia_errors,
    })
}
