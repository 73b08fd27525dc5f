//! Acceptance suite. Prints one PASS/FAIL line per criterion with the
//! measured values and exits nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltv_mor::checks::{
    coupling_reversal_residuals, gradient_fd_residual, gramian_reversal_residuals, h2_agreement,
    perturbed, random_direction, stm_adjoint_residuals, AdjointBuild,
};
use ltv_mor::cli::config::SystemConfig;
use ltv_mor::cli::study::run_study;
use ltv_mor::cli::TWO_STATE_EXAMPLE;
use ltv_mor::ltv::{stm, StmSpan};
use ltv_mor::random::{random_stable_system, RandomSystemSpec};
use ltv_mor::tsia::{stm_perturbation_first_order, tsia_reduce};
use ltv_mor::{LtvSystem, MatrixTrajectory, TimeGrid};

// 1
const DELTA_BAND: (f64, f64) = (0.0005, 0.003);
const BEST_ITERATION_BAND: (usize, usize) = (5, 20);
const REPRODUCE_SECONDS: f64 = 60.0;
// 3
const HSV_MIN_RATIO: f64 = 1133.9522630863157;
const HSV_MIN_RATIO_REL_TOL: f64 = 1e-8;
// 4
const RANDOM_SYSTEMS: usize = 20;
const H2_FORMS_TOL: f64 = 1e-5;
const H2_BRUTEFORCE_TOL: f64 = 1e-4;
const BRUTEFORCE_STRIDE: usize = 2;
const H2_SECONDS: f64 = 120.0;
// 5, 6
const DUALITY_SYSTEMS: usize = 10;
const DUALITY_TOL: f64 = 1e-6;
const STM_PAIRS: usize = 50;
const STM_TOL: f64 = 1e-6;
// 7
const GRADIENT_DIRECTIONS: usize = 10;
const GRADIENT_STEP: f64 = 1e-4;
const GRADIENT_TOL: f64 = 1e-3;
const STM_PERTURBATION_STEP: f64 = 1e-5;
const STM_PERTURBATION_TOL: f64 = 1e-6;
const FRECHET_TOL: f64 = 1e-6;
// 8
const CONVERGED_ITERATIONS: usize = 200;
const RESIDUAL_RATIO_TOL: f64 = 1e-3;
const BIORTHOGONALITY_TOL: f64 = 1e-4;
// 9
const RK4_STEPS: [usize; 3] = [500, 1000, 2000];
const RK4_MIN_ORDER: f64 = 3.8;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn example_config() -> SystemConfig {
    SystemConfig::from_toml_str(TWO_STATE_EXAMPLE).expect("shipped config is valid")
}

fn criterion_1_reproduction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_ltv-mor"))
        .args(["reproduce-paper", "--out"])
        .arg(dir.path())
        .output()
        .expect("binary runs");
    let seconds = started.elapsed().as_secs_f64();
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap_or_default();
    let field = |key: &str| {
        summary
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .map(str::to_string)
    };
    let delta: f64 = field("delta_tsia")
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    let best: usize = field("best_iteration")
        .and_then(|v| v.parse().ok())
        .unwrap_or(usize::MAX);
    let passed = status.status.success()
        && (DELTA_BAND.0..=DELTA_BAND.1).contains(&delta)
        && (BEST_ITERATION_BAND.0..=BEST_ITERATION_BAND.1).contains(&best)
        && seconds < REPRODUCE_SECONDS;
    outcome(
        passed,
        format!(
            "delta_tsia {delta:.4e} in [{}, {}], best iteration {best} in [{}, {}], exit {:?}, {seconds:.2} s < {REPRODUCE_SECONDS} s",
            DELTA_BAND.0, DELTA_BAND.1, BEST_ITERATION_BAND.0, BEST_ITERATION_BAND.1,
            status.status.code()
        ),
    )
}

fn criteria_2_3() -> (Outcome, Outcome) {
    let cfg = example_config();
    let study = run_study(&cfg, cfg.order).expect("example study runs");
    let (bt, ts) = (study.bt_errors, study.tsia_errors);
    let c2 = outcome(
        ts.max_abs < bt.max_abs && ts.l2_sq < bt.l2_sq,
        format!(
            "max |y - y_r|: tsia {:.4e} < bt {:.4e}; ∫|y - y_r|²: tsia {:.4e} < bt {:.4e}",
            ts.max_abs, bt.max_abs, ts.l2_sq, bt.l2_sq
        ),
    );
    let (k0, k1) = study.base.window;
    let all_separated = (k0..=k1).all(|k| {
        let s = study.base.hsv.at(k);
        s[0] > s[1]
    });
    let ratio = study.hsv_min_ratio();
    let rel = (ratio - HSV_MIN_RATIO).abs() / HSV_MIN_RATIO;
    let c3 = outcome(
        all_separated && ratio > 1.0 && rel <= HSV_MIN_RATIO_REL_TOL,
        format!(
            "sigma_1 > sigma_2 at all {} horizon nodes: {all_separated}; min ratio {ratio:.10e} vs pinned {HSV_MIN_RATIO:.10e} (rel {rel:.1e} <= {HSV_MIN_RATIO_REL_TOL:.0e})",
            k1 - k0 + 1
        ),
    );
    (c2, c3)
}

/// Full and reduced random pair for system `i`: `n` in 2..=4, `r < n`.
fn random_pair(grid: TimeGrid, i: usize) -> (LtvSystem, LtvSystem) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
    let n = rng.gen_range(2..=4);
    let r = rng.gen_range(1..n);
    let m = rng.gen_range(1..=2);
    let p = rng.gen_range(1..=2);
    let sys = random_stable_system(grid, &RandomSystemSpec::new(n, m, p), 2000 + i as u64);
    let red = random_stable_system(grid, &RandomSystemSpec::new(r, m, p), 3000 + i as u64);
    (sys, red)
}

fn criterion_4_h2_forms() -> Outcome {
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let started = Instant::now();
    let (mut worst_forms, mut worst_bf) = (0.0f64, 0.0f64);
    for i in 0..RANDOM_SYSTEMS {
        let (sys, red) = random_pair(grid, i);
        let rep = h2_agreement(&sys, &red, Some(BRUTEFORCE_STRIDE)).expect("J evaluates");
        let forms = [rep.j_reach, rep.j_obs, rep.j_adjoint];
        let scale = 1.0 + rep.j_reach.abs();
        for a in 0..3 {
            for b in a + 1..3 {
                worst_forms = worst_forms.max((forms[a] - forms[b]).abs() / scale);
            }
            worst_bf = worst_bf.max((forms[a] - rep.j_bruteforce.unwrap()).abs() / scale);
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    outcome(
        worst_forms <= H2_FORMS_TOL && worst_bf <= H2_BRUTEFORCE_TOL && seconds < H2_SECONDS,
        format!(
            "{RANDOM_SYSTEMS} systems: forms {worst_forms:.2e} <= {H2_FORMS_TOL:.0e}·(1+J), brute force {worst_bf:.2e} <= {H2_BRUTEFORCE_TOL:.0e}·(1+J), {seconds:.2} s < {H2_SECONDS} s"
        ),
    )
}

fn criterion_5_duality() -> Outcome {
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let mut worst = [0.0f64; 4];
    for i in 0..DUALITY_SYSTEMS {
        let (sys, red) = random_pair(grid, 100 + i);
        let (p, q) = gramian_reversal_residuals(&sys, 0.01).unwrap();
        let (x, pr) = coupling_reversal_residuals(&sys, &red).unwrap();
        for (w, v) in worst.iter_mut().zip([p, q, x, pr]) {
            *w = w.max(v);
        }
    }
    outcome(
        worst.iter().all(|&w| w <= DUALITY_TOL),
        format!(
            "{DUALITY_SYSTEMS} systems: P_ma/Q {:.1e}, Q_ma/P {:.1e}, X_ma/Y {:.1e}, P_rma/Q_r {:.1e} <= {DUALITY_TOL:.0e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn criterion_6_adjoint_stm() -> Outcome {
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let (mut wa, mut wma) = (0.0f64, 0.0f64);
    for i in 0..DUALITY_SYSTEMS {
        let (sys, _) = random_pair(grid, 200 + i);
        let (a, ma) = stm_adjoint_residuals(&sys, STM_PAIRS, i as u64, AdjointBuild::Correct);
        wa = wa.max(a);
        wma = wma.max(ma);
    }
    outcome(
        wa <= STM_TOL && wma <= STM_TOL,
        format!("{DUALITY_SYSTEMS} systems x {STM_PAIRS} pairs: adjoint {wa:.1e}, modified adjoint {wma:.1e} <= {STM_TOL:.0e}"),
    )
}

fn criterion_7_gradients() -> Outcome {
    let grid = TimeGrid::new(0.0, 1.0, 300).unwrap();
    let sys = random_stable_system(grid, &RandomSystemSpec::new(3, 1, 1), 71);
    let red = random_stable_system(grid, &RandomSystemSpec::new(1, 1, 1), 72);
    let fd = gradient_fd_residual(&sys, &red, GRADIENT_DIRECTIONS, GRADIENT_STEP, 73).unwrap();

    // first-order STM perturbation against central differences
    let red2 = random_stable_system(grid, &RandomSystemSpec::new(2, 1, 1), 74);
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let dir = [
        random_direction(grid, 2, 2, &mut rng),
        MatrixTrajectory::zeros(grid, 2, 1),
        MatrixTrajectory::zeros(grid, 1, 2),
    ];
    let first = stm_perturbation_first_order(&red2, &dir[0]).unwrap();
    let h = STM_PERTURBATION_STEP;
    let up = stm(&perturbed(&red2, &dir, h), 0.0, StmSpan::Forward).unwrap();
    let down = stm(&perturbed(&red2, &dir, -h), 0.0, StmSpan::Forward).unwrap();
    let lemma = (1..grid.len())
        .map(|k| {
            let fd = (up.at(k) - down.at(k)) / (2.0 * h);
            (&fd - first.at(k)).norm() / fd.norm()
        })
        .fold(0.0, f64::max);

    // constant matrices: Fréchet derivative of the exponential by quadrature
    let a = DMatrix::from_row_slice(2, 2, &[-0.8, 0.6, -0.4, -1.5]);
    let da = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.5, 0.1]);
    let red_c = LtvSystem::new(
        MatrixTrajectory::constant(grid, a.clone()),
        MatrixTrajectory::constant(grid, DMatrix::from_element(2, 1, 1.0)),
        MatrixTrajectory::constant(grid, DMatrix::from_element(1, 2, 1.0)),
    )
    .unwrap();
    let pert = stm_perturbation_first_order(&red_c, &MatrixTrajectory::constant(grid, da.clone()))
        .unwrap();
    let frechet = |t: f64| {
        let m = 2000;
        let f = |s: f64| (&a * (t * (1.0 - s))).exp() * &da * t * (&a * (t * s)).exp();
        let mut acc = f(0.0) + f(1.0);
        for i in 1..m {
            acc += f(i as f64 / m as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc / (3.0 * m as f64)
    };
    let corollary = (1..grid.len())
        .step_by(10)
        .map(|k| {
            let expected = frechet(grid.point(k));
            (pert.at(k) - &expected).norm() / expected.norm()
        })
        .fold(0.0, f64::max);

    outcome(
        fd <= GRADIENT_TOL && lemma <= STM_PERTURBATION_TOL && corollary <= FRECHET_TOL,
        format!(
            "3->1 gradient vs FD {fd:.2e} <= {GRADIENT_TOL:.0e} ({GRADIENT_DIRECTIONS} dirs, h {GRADIENT_STEP:.0e}); STM perturbation {lemma:.2e} <= {STM_PERTURBATION_TOL:.0e}; exponential Fréchet {corollary:.2e} <= {FRECHET_TOL:.0e}"
        ),
    )
}

fn criterion_8_fixed_point() -> Outcome {
    let cfg = example_config();
    let base = ltv_mor::cli::study::baseline(&cfg, cfg.order).unwrap();
    let mut opts = cfg.tsia_options();
    opts.eps = cfg.eps;
    opts.max_iterations = CONVERGED_ITERATIONS;
    opts.stop_tol = f64::MIN_POSITIVE;
    opts.patience = usize::MAX;
    let (_, trace) = tsia_reduce(&base.inner, &base.bt, &opts).unwrap();
    let init = trace.initial();
    let last = trace.records.last().unwrap();
    let ratios = [
        last.residual_ar / init.residual_ar,
        last.residual_br / init.residual_br,
        last.residual_cr / init.residual_cr,
    ];
    outcome(
        ratios.iter().all(|&r| r < RESIDUAL_RATIO_TOL) && last.biorthogonality_defect <= BIORTHOGONALITY_TOL,
        format!(
            "after {} iterations residual ratios A_r {:.2e}, B_r {:.2e}, C_r {:.2e} < {RESIDUAL_RATIO_TOL:.0e}; max ||W_rᵀV_r - I|| {:.2e} <= {BIORTHOGONALITY_TOL:.0e}",
            last.iteration, ratios[0], ratios[1], ratios[2], last.biorthogonality_defect
        ),
    )
}

fn observed_orders(
    tf: f64,
    a: impl Fn(f64) -> f64 + Copy + Send + Sync + 'static,
    exact: f64,
) -> Vec<f64> {
    let errors: Vec<f64> = RK4_STEPS
        .iter()
        .map(|&n| {
            let g = TimeGrid::new(0.0, tf, n).unwrap();
            let k = |v: f64| MatrixTrajectory::constant(g, DMatrix::from_element(1, 1, v));
            let sys = LtvSystem::new(
                MatrixTrajectory::from_fn(g, move |t| DMatrix::from_element(1, 1, a(t))),
                k(1.0),
                k(1.0),
            )
            .unwrap();
            let phi = stm(&sys, 0.0, StmSpan::Forward).unwrap();
            (phi.at(n)[(0, 0)] - exact).abs() / exact
        })
        .collect();
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn criterion_9_rk4_order() -> Outcome {
    let constant = observed_orders(1.0, |_| 10.0, 10.0f64.exp());
    let ramp = observed_orders(2.0, |t| t, 2.0f64.exp());
    let min = constant
        .iter()
        .chain(&ramp)
        .fold(f64::INFINITY, |a, &b| a.min(b));
    outcome(
        min >= RK4_MIN_ORDER,
        format!(
            "A = 10 on [0,1]: orders {:.3}, {:.3}; A = t on [0,2]: orders {:.3}, {:.3} (>= {RK4_MIN_ORDER})",
            constant[0], constant[1], ramp[0], ramp[1]
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let (c2, c3) = criteria_2_3();
    let results = [
        (
            "1 two-state example reproduction",
            criterion_1_reproduction(),
        ),
        ("2 tsia beats balanced truncation", c2),
        ("3 hankel singular value separation", c3),
        ("4 h2 error evaluators agree", criterion_4_h2_forms()),
        ("5 gramian duality", criterion_5_duality()),
        ("6 adjoint stm relations", criterion_6_adjoint_stm()),
        ("7 gradient correctness", criterion_7_gradients()),
        ("8 fixed-point residuals", criterion_8_fixed_point()),
        ("9 rk4 order", criterion_9_rk4_order()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
