//! The `ltv-mor` command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! breakdown, 4 failed checks (`verify`, `reproduce-paper`).

pub mod config;
pub mod output;
pub mod study;
pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::bt::HsvTrajectory;
use crate::checks::AdjointBuild;
use crate::dle::gramians;
use crate::error::{Error, Result};
use crate::ltv::{simulate_with_states, ReducedOrderModel};
use crate::tsia::TsiaTrace;
use config::{load_config, SystemConfig};
use output::{signals_table, trajectories_table, Summary, Table};
use study::{baseline, run_study, Study};

pub const TWO_STATE_EXAMPLE: &str = include_str!("../../configs/two_state_example.toml");

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Bands checked by `reproduce-paper`.
pub const DELTA_REL_BAND: (f64, f64) = (0.0005, 0.003);
pub const BEST_ITERATION_BAND: (usize, usize) = (5, 20);

#[derive(Parser, Debug)]
#[command(
    name = "ltv-mor",
    version,
    about = "Finite-horizon model order reduction for LTV systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// System definition (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the number of grid steps.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Override the gramian regularization.
    #[arg(long, value_name = "E")]
    eps: Option<f64>,
    /// Override the padded gramian horizon.
    #[arg(long, num_args = 2, value_names = ["T0", "T1"], allow_negative_numbers = true)]
    pad: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Bt,
    Tsia,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the full system on the horizon with the probe input.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the state trajectory.
        #[arg(long)]
        states: bool,
    },
    /// Reachability and observability gramians on the computation grid.
    Gramians {
        #[command(flatten)]
        common: Common,
    },
    /// Hankel singular values on the computation grid.
    Hsv {
        #[command(flatten)]
        common: Common,
    },
    /// Reduce by balanced truncation or TSIA.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, value_name = "R")]
        order: Option<usize>,
    },
    /// Check the adjoint, gramian, H2 and gradient identities.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Rerun the two-state example end to end and check it.
    ReproducePaper {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        e if e.is_degeneracy() => EXIT_DEGENERATE,
        Error::Iteration { .. } => EXIT_DEGENERATE,
        _ => EXIT_INVALID,
    }
}

fn load(common: &Common, default: Option<&str>) -> Result<SystemConfig> {
    let mut cfg = match (&common.config, default) {
        (Some(path), _) => load_config(path)?,
        (None, Some(src)) => SystemConfig::from_toml_str(src)?,
        (None, None) => return Err(Error::Config("--config is required".into())),
    };
    if let Some(n) = common.steps {
        cfg.n_steps = n;
    }
    if let Some(e) = common.eps {
        cfg.eps = e;
    }
    if let Some(p) = &common.pad {
        cfg.padding = Some((p[0], p[1]));
    }
    if common.steps.is_some() || common.eps.is_some() || common.pad.is_some() {
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate { common, states } => cmd_simulate(&common, states),
        Command::Gramians { common } => cmd_gramians(&common),
        Command::Hsv { common } => cmd_hsv(&common),
        Command::Reduce {
            common,
            method,
            order,
        } => cmd_reduce(&common, method, order),
        Command::Verify {
            common,
            seed,
            corrupt_adjoint,
        } => cmd_verify(&common, seed, corrupt_adjoint),
        Command::ReproducePaper { common } => cmd_reproduce_paper(&common),
    }
}

fn cmd_simulate(common: &Common, with_states: bool) -> Result<i32> {
    let cfg = load(common, None)?;
    let (k0, k1) = cfg.horizon_nodes()?;
    let sys = cfg.system()?.restrict(k0, k1)?;
    let u = cfg.probe_on(*sys.grid());
    let (x, y) = simulate_with_states(&sys, &u, &DVector::zeros(sys.order()))?;
    let table = if with_states {
        signals_table(&[("y", &y), ("x", &x)])
    } else {
        signals_table(&[("y", &y)])
    };
    let path = out_dir(common)?.join("outputs.csv");
    table.write(&path)?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_gramians(common: &Common) -> Result<i32> {
    let cfg = load(common, None)?;
    let sys = cfg.system()?;
    let gb = gramians(&sys, cfg.eps, cfg.eps)?;
    let path = out_dir(common)?.join("gramians.csv");
    trajectories_table(sys.grid(), &[("p", &gb.p), ("q", &gb.q)]).write(&path)?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn hsv_table(hsv: &HsvTrajectory) -> Table {
    let n = hsv.order();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("sigma_{i}")));
    let mut table = Table::new(&header);
    for k in 0..hsv.grid().len() {
        let mut row = vec![hsv.grid().point(k)];
        row.extend(hsv.at(k).iter());
        table.push(&row);
    }
    table
}

fn cmd_hsv(common: &Common) -> Result<i32> {
    let cfg = load(common, None)?;
    let sys = cfg.system()?;
    let gb = gramians(&sys, cfg.eps, cfg.eps)?;
    let hsv = crate::bt::hankel_singular_values(&gb.p, &gb.q)?;
    let path = out_dir(common)?.join("hsv.csv");
    hsv_table(&hsv).write(&path)?;
    if hsv.order() >= 2 {
        let (k0, k1) = cfg.horizon_nodes()?;
        println!(
            "min sigma_1/sigma_2 on horizon = {:.10e}",
            hsv.min_ratio(0, 1, k0, k1)
        );
    }
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn trace_table(trace: &TsiaTrace) -> Table {
    let mut table = Table::new(&[
        "iteration",
        "delta",
        "delta_rel",
        "j",
        "residual_ar",
        "residual_br",
        "residual_cr",
        "biorthogonality_defect",
    ]);
    for r in &trace.records {
        table.push_labeled(
            r.iteration,
            &[
                r.delta,
                r.delta_rel,
                r.j,
                r.residual_ar,
                r.residual_br,
                r.residual_cr,
                r.biorthogonality_defect,
            ],
        );
    }
    table
}

fn write_model(dir: &Path, rom: &ReducedOrderModel) -> Result<()> {
    let s = &rom.sys;
    trajectories_table(s.grid(), &[("ar", s.a()), ("br", s.b()), ("cr", s.c())])
        .write(&dir.join("reduced.csv"))?;
    trajectories_table(s.grid(), &[("v", &rom.vr), ("w", &rom.wr)])
        .write(&dir.join("projections.csv"))?;
    Ok(())
}

fn cmd_reduce(common: &Common, method: Method, order: Option<usize>) -> Result<i32> {
    let mut cfg = load(common, None)?;
    if let Some(r) = order {
        cfg.order = r;
        cfg.validate()?;
    }
    let dir = out_dir(common)?;
    match method {
        Method::Bt => {
            let base = baseline(&cfg, cfg.order)?;
            write_model(dir, &base.bt)?;
            println!(
                "balanced truncation to order {} written to {}",
                cfg.order,
                dir.display()
            );
        }
        Method::Tsia => {
            let study = run_study(&cfg, cfg.order)?;
            write_model(dir, &study.tsia)?;
            trace_table(&study.trace).write(&dir.join("trace.csv"))?;
            let best = study.trace.best();
            println!(
                "tsia: best iteration {} of {} ({:?}), delta {:.6e}, relative {:.6e}",
                best.iteration,
                study.trace.records.len() - 1,
                study.trace.stop_reason,
                best.delta,
                best.delta_rel
            );
            println!("written to {}", dir.display());
        }
    }
    Ok(EXIT_OK)
}

fn cmd_verify(common: &Common, seed: u64, corrupt_adjoint: bool) -> Result<i32> {
    let cfg = load(common, None)?;
    let sys = cfg.system()?;
    let how = if corrupt_adjoint {
        AdjointBuild::SignFlipped
    } else {
        AdjointBuild::Correct
    };
    let results = verify::verify_system(&sys, cfg.order, cfg.eps, how, seed)?;
    let mut failed = 0;
    for r in &results {
        println!("{}", r.line());
        failed += usize::from(!r.passed());
    }
    println!(
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    );
    Ok(if failed == 0 {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

/// Pass/fail lines for the reproduction thresholds.
pub fn reproduction_checks(study: &Study) -> Vec<(String, bool)> {
    let best = study.trace.best();
    let ratio = study.hsv_min_ratio();
    vec![
        (
            format!(
                "relative delta {:.6e} in [{}, {}]",
                best.delta_rel, DELTA_REL_BAND.0, DELTA_REL_BAND.1
            ),
            (DELTA_REL_BAND.0..=DELTA_REL_BAND.1).contains(&best.delta_rel),
        ),
        (
            format!(
                "best iteration {} in [{}, {}]",
                best.iteration, BEST_ITERATION_BAND.0, BEST_ITERATION_BAND.1
            ),
            (BEST_ITERATION_BAND.0..=BEST_ITERATION_BAND.1).contains(&best.iteration),
        ),
        (
            format!("min sigma_1/sigma_2 on horizon {ratio:.6e} > 1"),
            ratio > 1.0,
        ),
        (
            format!(
                "max error tsia {:.6e} < bt {:.6e}",
                study.tsia_errors.max_abs, study.bt_errors.max_abs
            ),
            study.tsia_errors.max_abs < study.bt_errors.max_abs,
        ),
        (
            format!(
                "squared L2 error tsia {:.6e} < bt {:.6e}",
                study.tsia_errors.l2_sq, study.bt_errors.l2_sq
            ),
            study.tsia_errors.l2_sq < study.bt_errors.l2_sq,
        ),
    ]
}

fn cmd_reproduce_paper(common: &Common) -> Result<i32> {
    let started = Instant::now();
    let cfg = load(common, Some(TWO_STATE_EXAMPLE))?;
    let study = run_study(&cfg, cfg.order)?;
    let dir = out_dir(common)?;

    hsv_table(&study.base.hsv).write(&dir.join("hsv.csv"))?;
    signals_table(&[
        ("y", &study.y),
        ("y_bt", &study.y_bt),
        ("y_tsia", &study.y_tsia),
    ])
    .write(&dir.join("outputs.csv"))?;
    let grid = *study.y.grid();
    let mut errors = Table::new(&["t", "abs_error_bt", "abs_error_tsia"]);
    for k in 0..grid.len() {
        let y = study.y.value(k);
        errors.push(&[
            grid.point(k),
            (&y - study.y_bt.value(k)).amax(),
            (&y - study.y_tsia.value(k)).amax(),
        ]);
    }
    errors.write(&dir.join("abs_errors.csv"))?;
    trace_table(&study.trace).write(&dir.join("trace.csv"))?;

    let best = study.trace.best();
    let mut summary = Summary::default();
    summary.num("delta_tsia", best.delta_rel);
    summary.num("delta_tsia_abs", best.delta);
    summary.int("best_iteration", best.iteration);
    summary.int("iterations_run", study.trace.records.len() - 1);
    summary.text("stop_reason", &format!("{:?}", study.trace.stop_reason));
    summary.num("delta_bt", study.bt_errors.l2_rel);
    summary.num("delta_bt_abs", study.bt_errors.l2);
    summary.num("max_abs_error_bt", study.bt_errors.max_abs);
    summary.num("max_abs_error_tsia", study.tsia_errors.max_abs);
    summary.num("l2_sq_error_bt", study.bt_errors.l2_sq);
    summary.num("l2_sq_error_tsia", study.tsia_errors.l2_sq);
    summary.num("hsv_min_ratio", study.hsv_min_ratio());
    summary.write(&dir.join("summary.txt"))?;
    print!("{}", summary.as_str());

    let checks = reproduction_checks(&study);
    for (line, ok) in &checks {
        println!("{} {line}", if *ok { "PASS" } else { "FAIL" });
    }
    println!("elapsed {:.2} s", started.elapsed().as_secs_f64());
    Ok(if checks.iter().all(|(_, ok)| *ok) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
