//! Runnable identity checks on a configured system.

use crate::checks::{
    coupling_reversal_residuals, full_order_gradient_residual, gradient_fd_residual,
    gramian_reversal_residuals, h2_agreement, leading_state_truncation, stm_adjoint_residuals,
    AdjointBuild,
};
use crate::error::Result;
use crate::ltv::LtvSystem;

pub const STM_PAIRS: usize = 50;
pub const IDENTITY_TOL: f64 = 1e-6;
pub const H2_FORMS_TOL: f64 = 1e-5;
pub const H2_BRUTEFORCE_TOL: f64 = 1e-4;
pub const BRUTEFORCE_STRIDE: usize = 4;
pub const GRADIENT_DIRECTIONS: usize = 10;
pub const GRADIENT_STEP: f64 = 1e-4;
pub const GRADIENT_TOL: f64 = 1e-3;
pub const FULL_ORDER_GRADIENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub residual: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual <= self.tol
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<32} residual {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.residual,
            self.tol
        )
    }
}

fn check(name: &'static str, residual: f64, tol: f64) -> CheckResult {
    // NaN never passes
    let residual = if residual.is_nan() {
        f64::INFINITY
    } else {
        residual
    };
    CheckResult {
        name,
        residual,
        tol,
    }
}

/// Runs every identity check on `sys`. Checks that need a reduced system
/// use the truncation to the first `order` states.
pub fn verify_system(
    sys: &LtvSystem,
    order: usize,
    eps: f64,
    how: AdjointBuild,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let (adj, ma) = stm_adjoint_residuals(sys, STM_PAIRS, seed, how);
    out.push(check("adjoint stm transpose", adj, IDENTITY_TOL));
    out.push(check("modified adjoint stm reversal", ma, IDENTITY_TOL));

    let (p, q) = gramian_reversal_residuals(sys, eps)?;
    out.push(check("adjoint reachability gramian", p, IDENTITY_TOL));
    out.push(check("adjoint observability gramian", q, IDENTITY_TOL));

    let red = leading_state_truncation(sys, order)?;
    let (x, pr) = coupling_reversal_residuals(sys, &red)?;
    out.push(check("adjoint cross gramian", x, IDENTITY_TOL));
    out.push(check("adjoint reduced gramian", pr, IDENTITY_TOL));

    let report = h2_agreement(sys, &red, Some(BRUTEFORCE_STRIDE))?;
    let forms = [report.j_reach, report.j_obs, report.j_adjoint];
    let scale = 1.0 + report.j_reach.abs();
    let spread = forms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - forms.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    out.push(check("h2 error forms agree", spread / scale, H2_FORMS_TOL));
    let bf = report.j_bruteforce.unwrap_or(f64::NAN);
    let bf_gap = forms.iter().map(|j| (j - bf).abs()).fold(0.0, f64::max);
    out.push(check(
        "h2 error vs impulse responses",
        bf_gap / scale,
        H2_BRUTEFORCE_TOL,
    ));

    let fd = gradient_fd_residual(sys, &red, GRADIENT_DIRECTIONS, GRADIENT_STEP, seed)?;
    out.push(check("gradient vs finite differences", fd, GRADIENT_TOL));
    out.push(check(
        "gradients vanish at full order",
        full_order_gradient_residual(sys)?,
        FULL_ORDER_GRADIENT_TOL,
    ));
    Ok(out)
}
