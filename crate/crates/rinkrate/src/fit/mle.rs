//! Proximal-gradient ascent on the penalized log-likelihood, plus the
//! first-order optimality check used to audit fitted solutions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::design::{Design, Side};
use crate::error::{Error, Result};
use crate::likelihood::{gradient, total_loglik, Coefficients};
use crate::shrinkage::{GroupShrinkage, Penalty};

use super::{count_nonzero, FitOptions, FitReport};

/// Largest-allowed stationarity residual for smooth (quadratically
/// penalized) coordinates and unpenalized intercepts. Convergence is
/// declared on relative objective change, so the gradient floor scales like
/// the square root of the objective's rounding noise; 1e-4 is attainable on
/// event logs up to a few hundred thousand rows.
pub const SMOOTH_KKT_TOL: f64 = 1e-4;
/// Largest-allowed subgradient residual for soft-thresholded coordinates.
pub const L1_KKT_TOL: f64 = 1e-4;

/// Closed-form starting point: zero coefficients and intercepts set from
/// per-state goal counts with a half-goal guard against empty cells.
fn default_init(design: &Design) -> Coefficients {
    let mut coeffs = Coefficients::with_intercepts(design.n_predictors(), -7.3);
    let tallies = design.state_tallies();
    for s in 0..3 {
        let exposure = tallies.exposure_s[s];
        if exposure > 0.0 {
            coeffs.home_intercepts[s] = ((tallies.home_goals[s] as f64 + 0.5) / exposure).ln();
            coeffs.away_intercepts[s] = ((tallies.away_goals[s] as f64 + 0.5) / exposure).ln();
        }
    }
    coeffs
}

fn mask_gradient(g: &mut Coefficients, opts: &FitOptions) {
    if opts.freeze_intercepts {
        g.home_intercepts = [0.0; 3];
        g.away_intercepts = [0.0; 3];
    }
    for &p in &opts.frozen {
        g.set_omega(p, 0.0);
        g.set_delta(p, 0.0);
    }
}

/// Inner product of the masked gradient with the step and the squared step
/// norm, over intercepts and both coefficient sides.
fn step_stats(x: &Coefficients, cand: &Coefficients, g: &Coefficients) -> (f64, f64) {
    let mut g_dot_d = 0.0;
    let mut d_sq = 0.0;
    for s in 0..3 {
        let dh = cand.home_intercepts[s] - x.home_intercepts[s];
        let da = cand.away_intercepts[s] - x.away_intercepts[s];
        g_dot_d += g.home_intercepts[s] * dh + g.away_intercepts[s] * da;
        d_sq += dh * dh + da * da;
    }
    for ((cx, cc), cg) in x.coef().iter().zip(cand.coef()).zip(g.coef()) {
        let dw = cc.omega - cx.omega;
        let dd = cc.delta - cx.delta;
        g_dot_d += cg.omega * dw + cg.delta * dd;
        d_sq += dw * dw + dd * dd;
    }
    (g_dot_d, d_sq)
}

/// Maximize log-likelihood plus shrinkage log-density by proximal-gradient
/// ascent with a backtracking (halving) step size. Intercepts are never
/// penalized; goaltender scoring effects stay exactly zero; predictors in
/// `opts.frozen` keep their initial values bit-for-bit. Returns the best
/// iterate with a warning instead of failing when the iteration budget runs
/// out before the relative objective change drops below `opts.tolerance`.
pub fn fit_penalized(
    design: &Design,
    shrinkage: &GroupShrinkage,
    opts: &FitOptions,
    init: Option<&Coefficients>,
) -> Result<FitReport> {
    let start = Instant::now();
    opts.validate(design)?;
    shrinkage.validate_for(design)?;

    let mut x = match init {
        Some(c) => {
            if c.n_predictors() != design.n_predictors() {
                return Err(Error::Config(format!(
                    "initial coefficients cover {} predictors, design has {}",
                    c.n_predictors(),
                    design.n_predictors()
                )));
            }
            for p in 0..design.n_predictors() as u32 {
                if design.omega_constrained(p) && c.omega(p) != 0.0 {
                    return Err(Error::Config(format!(
                        "initial scoring effect for '{}' must be zero",
                        design.predictor(p).label
                    )));
                }
            }
            c.clone()
        }
        None => default_init(design),
    };

    let objective_of = |c: &Coefficients, ll: f64| ll + shrinkage.total_log_density(design, c);
    let mut ll = total_loglik(design, &x);
    let mut objective = objective_of(&x, ll);
    if !objective.is_finite() {
        return Err(Error::numerical("fit_penalized", format!("nonfinite starting objective {objective}")));
    }
    let mut trace = vec![objective];

    // The curvature of the likelihood with respect to an intercept is the
    // expected goal count, so seed the step near its inverse and let
    // backtracking correct from there.
    let tallies = design.state_tallies();
    let total_goals: u64 = tallies.home_goals.iter().chain(&tallies.away_goals).sum();
    let mut step = 1.0 / (1.0 + total_goals as f64);

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iterations {
        iterations += 1;
        let mut g = gradient(design, &x);
        mask_gradient(&mut g, opts);

        let (cand, cand_ll, backtracks) = loop {
            let mut cand = x.clone();
            cand.add_scaled(&g, step);
            shrinkage.apply_prox(design, &mut cand, step);
            for &p in &opts.frozen {
                cand.set_omega(p, x.omega(p));
                cand.set_delta(p, x.delta(p));
            }
            let cand_ll = total_loglik(design, &cand);
            let (g_dot_d, d_sq) = step_stats(&x, &cand, &g);
            let slack = 1e-12 * (1.0 + ll.abs());
            if cand_ll.is_finite() && cand_ll >= ll + g_dot_d - d_sq / (2.0 * step) - slack {
                break (cand, cand_ll, 0);
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::numerical(
                    "fit_penalized",
                    "backtracking step collapsed; the objective may be ill-conditioned",
                ));
            }
        };
        let _ = backtracks;

        let new_objective = objective_of(&cand, cand_ll);
        if !new_objective.is_finite() {
            return Err(Error::numerical("fit_penalized", format!("nonfinite objective {new_objective}")));
        }
        let change = new_objective - objective;
        x = cand;
        ll = cand_ll;
        objective = new_objective;
        trace.push(objective);
        step = (step * 1.3).min(1e8);
        if change.abs() <= opts.tolerance * (1.0 + objective.abs()) {
            converged = true;
            break;
        }
    }

    let warning = if converged {
        None
    } else {
        Some(format!("no convergence within {} iterations; returning the best iterate", opts.max_iterations))
    };
    let nonzero_coefficients = count_nonzero(design, &x, None, &opts.frozen);
    Ok(FitReport {
        objective,
        loglik: ll,
        iterations,
        converged,
        warning,
        objective_trace: trace,
        nonzero_coefficients,
        wall_time_s: start.elapsed().as_secs_f64(),
        shrinkage: shrinkage.clone(),
        coefficients: x,
    })
}

/// First-order optimality audit of a fitted solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Largest |d loglik / d intercept| over the six unfrozen intercepts.
    pub max_intercept_gradient: f64,
    /// Largest stationarity residual on quadratically penalized coordinates.
    pub max_smooth_violation: f64,
    /// Largest subgradient residual on nonzero soft-thresholded coordinates.
    pub max_active_violation: f64,
    /// Largest excess of |gradient| over lambda on zeroed coordinates.
    pub max_inactive_excess: f64,
    pub pass: bool,
}

/// Check the stationarity conditions the optimizer is supposed to satisfy:
/// near-zero gradients on intercepts and quadratic coordinates, subgradient
/// balance on active soft-thresholded coordinates, and gradient magnitudes
/// under lambda on inactive ones. Frozen predictors are exempt.
pub fn kkt_check(
    design: &Design,
    shrinkage: &GroupShrinkage,
    coeffs: &Coefficients,
    opts: &FitOptions,
) -> Result<KktReport> {
    shrinkage.validate_for(design)?;
    let g = gradient(design, coeffs);

    let mut max_intercept = 0.0f64;
    if !opts.freeze_intercepts {
        for s in 0..3 {
            max_intercept = max_intercept
                .max(g.home_intercepts[s].abs())
                .max(g.away_intercepts[s].abs());
        }
    }

    let mut max_smooth = 0.0f64;
    let mut max_active = 0.0f64;
    let mut max_inactive = 0.0f64;
    for p in 0..design.n_predictors() as u32 {
        if opts.frozen.contains(&p) {
            continue;
        }
        let group = design.predictor(p).group;
        for side in [Side::Offense, Side::Defense] {
            if side == Side::Offense && design.omega_constrained(p) {
                continue;
            }
            let (value, grad) = match side {
                Side::Offense => (coeffs.omega(p), g.omega(p)),
                Side::Defense => (coeffs.delta(p), g.delta(p)),
            };
            match shrinkage.require(group, side)? {
                Penalty::L2 { sigma2 } => {
                    max_smooth = max_smooth.max((grad - value / sigma2).abs());
                }
                Penalty::L1 { lambda } => {
                    if value != 0.0 {
                        max_active = max_active.max((grad - lambda * value.signum()).abs());
                    } else {
                        max_inactive = max_inactive.max(grad.abs() - lambda);
                    }
                }
                Penalty::L1L2 { lambda, sigma2 } => {
                    if value != 0.0 {
                        max_active =
                            max_active.max((grad - value / sigma2 - lambda * value.signum()).abs());
                    } else {
                        max_inactive = max_inactive.max(grad.abs() - lambda);
                    }
                }
            }
        }
    }
    let max_inactive_excess = max_inactive.max(0.0);
    let pass = max_intercept <= SMOOTH_KKT_TOL
        && max_smooth <= SMOOTH_KKT_TOL
        && max_active <= L1_KKT_TOL
        && max_inactive_excess <= L1_KKT_TOL;
    Ok(KktReport {
        max_intercept_gradient: max_intercept,
        max_smooth_violation: max_smooth,
        max_active_violation: max_active,
        max_inactive_excess,
        pass,
    })
}
