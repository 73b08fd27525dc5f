//! System definition files.
//!
//! A config is TOML with matrix entries given as expression strings in `t`:
//!
//! ```toml
//! [system]
//! n = 2
//! m = 1
//! p = 1
//! A = [["t", "2*exp(-t)"], ["1", "t*exp(-t)"]]
//! B = [["1"], ["1"]]
//! C = [["1", "1"]]
//!
//! [horizon]
//! t0 = 0.0
//! tf = 2.0
//! padding = [-0.5, 2.5]   # optional, wider gramian horizon
//! n_steps = 3000          # steps of the padded grid when padding is set
//! ```
//!
//! plus optional `[reduction]`, `[probe]` and `[tsia]` tables.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::{parse, ExprMatrix};
use crate::ltv::{ArForm, LtvSystem, SignalTrajectory};
use crate::timegrid::{MatrixTrajectory, TimeGrid};
use crate::tsia::TsiaOptions;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    horizon: RawHorizon,
    #[serde(default)]
    reduction: RawReduction,
    #[serde(default)]
    probe: RawProbe,
    #[serde(default)]
    tsia: RawTsia,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: usize,
    m: usize,
    p: usize,
    #[serde(rename = "A", default)]
    a: Vec<Vec<String>>,
    #[serde(rename = "B", default)]
    b: Vec<Vec<String>>,
    #[serde(rename = "C", default)]
    c: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHorizon {
    t0: f64,
    tf: f64,
    padding: Option<[f64; 2]>,
    n_steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawReduction {
    order: usize,
    eps: f64,
    eps_r: f64,
}

impl Default for RawReduction {
    fn default() -> Self {
        RawReduction {
            order: 1,
            eps: 0.001,
            eps_r: 0.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawProbe {
    kind: String,
    u: Vec<String>,
}

impl Default for RawProbe {
    fn default() -> Self {
        RawProbe {
            kind: "step".into(),
            u: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTsia {
    max_iterations: usize,
    stop_tol: f64,
    patience: usize,
    ar_form: String,
    cond_limit: f64,
    adjoint_path: bool,
}

impl Default for RawTsia {
    fn default() -> Self {
        let d = TsiaOptions::default();
        RawTsia {
            max_iterations: d.max_iterations,
            stop_tol: d.stop_tol,
            patience: d.patience,
            ar_form: "subtract-dv".into(),
            cond_limit: d.cond_limit,
            adjoint_path: d.adjoint_path,
        }
    }
}

/// Input applied on the horizon.
#[derive(Clone, Debug)]
pub enum ProbeInput {
    /// `u(t) = 1` in every channel.
    Step,
    /// One expression per input channel.
    Expression(ExprMatrix),
}

#[derive(Clone, Debug)]
pub struct TsiaSettings {
    pub max_iterations: usize,
    pub stop_tol: f64,
    pub patience: usize,
    pub ar_form: ArForm,
    pub cond_limit: f64,
    pub adjoint_path: bool,
}

/// A validated system definition.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub a: ExprMatrix,
    pub b: ExprMatrix,
    pub c: ExprMatrix,
    pub t0: f64,
    pub tf: f64,
    pub padding: Option<(f64, f64)>,
    pub n_steps: usize,
    pub eps: f64,
    pub eps_r: f64,
    pub order: usize,
    pub probe: ProbeInput,
    pub tsia: TsiaSettings,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_matrix(name: &str, rows: &[Vec<String>], nr: usize, nc: usize) -> Result<ExprMatrix> {
    let mut entries = Vec::with_capacity(nr * nc);
    for i in 0..nr {
        for j in 0..nc {
            let src = rows
                .get(i)
                .and_then(|row| row.get(j))
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| {
                    config_err(format!(
                        "missing entry {name}[{i}][{j}] ({name} must be {nr}x{nc})"
                    ))
                })?;
            let e =
                parse(src).map_err(|e| config_err(format!("{name}[{i}][{j}] = \"{src}\": {e}")))?;
            entries.push(e);
        }
    }
    for (i, row) in rows.iter().enumerate() {
        if i >= nr || row.len() > nc {
            return Err(config_err(format!(
                "{name} has extra entries beyond {nr}x{nc} (row {i})"
            )));
        }
    }
    ExprMatrix::new(nr, nc, entries)
}

fn parse_ar_form(s: &str) -> Result<ArForm> {
    match s {
        "subtract-dv" => Ok(ArForm::SubtractDv),
        "add-dw" => Ok(ArForm::AddDw),
        other => Err(config_err(format!(
            "tsia.ar_form must be \"subtract-dv\" or \"add-dw\", got \"{other}\""
        ))),
    }
}

impl SystemConfig {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| config_err(e.to_string()))?;
        let s = &raw.system;
        if s.n == 0 || s.m == 0 || s.p == 0 {
            return Err(config_err(
                "system.n, system.m and system.p must be positive",
            ));
        }
        let probe = match raw.probe.kind.as_str() {
            "step" => ProbeInput::Step,
            "expression" => {
                if raw.probe.u.len() != s.m {
                    return Err(config_err(format!(
                        "probe.u needs {} expressions, got {}",
                        s.m,
                        raw.probe.u.len()
                    )));
                }
                let rows: Vec<Vec<String>> = raw.probe.u.iter().map(|e| vec![e.clone()]).collect();
                ProbeInput::Expression(parse_matrix("probe.u", &rows, s.m, 1)?)
            }
            other => {
                return Err(config_err(format!(
                    "probe.kind must be \"step\" or \"expression\", got \"{other}\""
                )))
            }
        };
        let cfg = SystemConfig {
            n: s.n,
            m: s.m,
            p: s.p,
            a: parse_matrix("A", &s.a, s.n, s.n)?,
            b: parse_matrix("B", &s.b, s.n, s.m)?,
            c: parse_matrix("C", &s.c, s.p, s.n)?,
            t0: raw.horizon.t0,
            tf: raw.horizon.tf,
            padding: raw.horizon.padding.map(|[a, b]| (a, b)),
            n_steps: raw.horizon.n_steps,
            eps: raw.reduction.eps,
            eps_r: raw.reduction.eps_r,
            order: raw.reduction.order,
            probe,
            tsia: TsiaSettings {
                max_iterations: raw.tsia.max_iterations,
                stop_tol: raw.tsia.stop_tol,
                patience: raw.tsia.patience,
                ar_form: parse_ar_form(&raw.tsia.ar_form)?,
                cond_limit: raw.tsia.cond_limit,
                adjoint_path: raw.tsia.adjoint_path,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every cross-field constraint and that all expressions can be
    /// evaluated on the computation grid (nodes and half steps).
    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.tf.is_finite() && self.t0 < self.tf) {
            return Err(config_err(format!(
                "horizon needs t0 < tf, got [{}, {}]",
                self.t0, self.tf
            )));
        }
        if let Some((a, b)) = self.padding {
            if !(a <= self.t0 && b >= self.tf) {
                return Err(config_err(format!(
                    "padding [{a}, {b}] must contain the horizon [{}, {}]",
                    self.t0, self.tf
                )));
            }
        }
        if self.order == 0 || self.order >= self.n {
            return Err(config_err(format!(
                "reduction.order must be in 1..{} for n = {}, got {}",
                self.n, self.n, self.order
            )));
        }
        if !(self.eps >= 0.0 && self.eps_r >= 0.0) {
            return Err(config_err(
                "reduction.eps and reduction.eps_r must be non-negative",
            ));
        }
        let grid = self.grid()?;
        self.horizon_nodes()?;
        let h = grid.step();
        for k in 0..grid.len() {
            for t in [grid.point(k), grid.point(k) + 0.5 * h] {
                if k == grid.n_steps() && t > grid.tf() {
                    continue;
                }
                for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
                    m.eval(t).map_err(|e| {
                        config_err(format!("{name} cannot be evaluated at t = {t}: {e}"))
                    })?;
                }
                if let ProbeInput::Expression(u) = &self.probe {
                    u.eval(t).map_err(|e| {
                        config_err(format!("probe.u cannot be evaluated at t = {t}: {e}"))
                    })?;
                }
            }
        }
        Ok(())
    }

    /// The computation grid: the padded interval when set, else the horizon.
    pub fn grid(&self) -> Result<TimeGrid> {
        let (a, b) = self.padding.unwrap_or((self.t0, self.tf));
        TimeGrid::new(a, b, self.n_steps).map_err(|e| config_err(format!("horizon.n_steps: {e}")))
    }

    /// Node indices of `t0` and `tf` on the computation grid.
    pub fn horizon_nodes(&self) -> Result<(usize, usize)> {
        let g = self.grid()?;
        let find = |t: f64| {
            g.node_index(t).ok_or_else(|| {
                config_err(format!(
                    "horizon endpoint {t} is not a node of the grid [{}, {}] with {} steps",
                    g.t0(),
                    g.tf(),
                    g.n_steps()
                ))
            })
        };
        let (k0, k1) = (find(self.t0)?, find(self.tf)?);
        if k1 < k0 + 2 {
            return Err(config_err("horizon must span at least 2 grid steps"));
        }
        Ok((k0, k1))
    }

    /// The system on the computation grid.
    pub fn system(&self) -> Result<LtvSystem> {
        let g = self.grid()?;
        let traj = |m: &ExprMatrix| {
            let m = Arc::new(m.clone());
            let (r, c) = (m.rows(), m.cols());
            MatrixTrajectory::from_fn(g, move |t| {
                m.eval(t)
                    .unwrap_or_else(|_| DMatrix::from_element(r, c, f64::NAN))
            })
        };
        LtvSystem::new(traj(&self.a), traj(&self.b), traj(&self.c))
    }

    /// The probe input on `grid`.
    pub fn probe_on(&self, grid: TimeGrid) -> SignalTrajectory {
        match &self.probe {
            ProbeInput::Step => SignalTrajectory::unit_step(grid, self.m),
            ProbeInput::Expression(u) => {
                let u = u.clone();
                let m = self.m;
                SignalTrajectory::from_fn(grid, move |t| {
                    u.eval(t)
                        .map(|v| v.column(0).into_owned())
                        .unwrap_or_else(|_| DVector::from_element(m, f64::NAN))
                })
            }
        }
    }

    pub fn tsia_options(&self) -> TsiaOptions {
        TsiaOptions {
            max_iterations: self.tsia.max_iterations,
            stop_tol: self.tsia.stop_tol,
            patience: self.tsia.patience,
            eps: 0.0,
            eps_r: self.eps_r,
            horizon: None,
            ar_form: self.tsia.ar_form,
            probe_input: None,
            cond_limit: self.tsia.cond_limit,
            adjoint_path: self.tsia.adjoint_path,
        }
    }
}

pub fn load_config(path: &Path) -> Result<SystemConfig> {
    let src = std::fs::read_to_string(path)?;
    SystemConfig::from_toml_str(&src)
}
