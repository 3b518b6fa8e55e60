//! Metropolis-within-Gibbs chains over coefficients, intercepts, and
//! shrinkage strengths.
//!
//! Each sweep walks every predictor's offense/defense pair and every score
//! state's intercept pair with random-walk proposals, then redraws each
//! group's penalty exactly on a discretized grid. Likelihood changes are
//! evaluated incrementally from cached per-interval linear sums, so a block
//! touching a player costs only that player's intervals rather than a full
//! pass over the data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AcceptanceStats, Diagnostics, HyperGrid, McmcOptions, PosteriorSamples};
use crate::design::{Design, Group, RowIndex, Side};
use crate::error::{Error, Result};
use crate::events::Outcome;
use crate::likelihood::{event_loglik, linear_sums, total_loglik, Coefficients};
use crate::numeric::{autocorrelation, effective_sample_size, log_sum_exp, sample_sd};
use crate::shrinkage::{
    log_jacobian_total_to_natural, GroupShrinkage, HyperPriors, Penalty, ShrinkFamily,
};

const LN_2PI: f64 = 1.8378770664093453;
/// Variance of the zero-centered normal prior on every score-state intercept.
const INTERCEPT_PRIOR_VAR: f64 = 100.0;
/// Sweeps per step-size adaptation window during burn-in.
const ADAPT_WINDOW: u32 = 25;
/// Acceptance band the burn-in adaptation steers each block into.
const ACCEPT_LO: f64 = 0.2;
const ACCEPT_HI: f64 = 0.4;
/// Start-of-chain jitter applied to coefficients so chains take distinct
/// paths from a shared initialization.
const START_JITTER: f64 = 0.02;

/// Log posterior density (up to a constant) of one complete parameter state:
/// tempered likelihood, coefficient priors under the given penalties, the
/// intercept prior, and the hyperprior of the penalties themselves.
pub fn log_posterior(
    design: &Design,
    coeffs: &Coefficients,
    shrink: &GroupShrinkage,
    priors: &HyperPriors,
    likelihood_power: f64,
) -> f64 {
    let lik = if likelihood_power > 0.0 {
        likelihood_power * total_loglik(design, coeffs)
    } else {
        0.0
    };
    let mut lp = lik + shrink.total_log_density(design, coeffs) + intercept_log_prior(coeffs);
    for (group, side) in design.groups_present() {
        let pen = shrink
            .get(group, side)
            .unwrap_or_else(|| panic!("missing shrinkage for {}/{}", group.token(), side.token()));
        lp += priors.log_density(pen);
    }
    lp
}

fn intercept_log_prior(coeffs: &Coefficients) -> f64 {
    let mut acc = 0.0;
    for k in 0..3 {
        for c in [coeffs.home_intercepts[k], coeffs.away_intercepts[k]] {
            acc += -0.5 * (LN_2PI + INTERCEPT_PRIOR_VAR.ln()) - c * c / (2.0 * INTERCEPT_PRIOR_VAR);
        }
    }
    acc
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi / lo).ln();
    (0..n).map(|i| lo * (span * i as f64 / (n - 1) as f64).exp()).collect()
}

fn lin_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Joint log prior density of a whole group's coefficients from sufficient
/// statistics. Equals the sum of [`Penalty::log_density`] over the group,
/// which lets the hyperparameter grid be evaluated in constant time per
/// point regardless of group size.
fn group_log_density(pen: &Penalty, n: f64, sum_abs: f64, sum_sq: f64) -> f64 {
    match *pen {
        Penalty::L1 { lambda } => n * (0.5 * lambda).ln() - lambda * sum_abs,
        Penalty::L2 { sigma2 } => -0.5 * n * (LN_2PI + sigma2.ln()) - sum_sq / (2.0 * sigma2),
        Penalty::L1L2 { lambda, sigma2 } => {
            let sigma = sigma2.sqrt();
            let log_norm = 0.5 * (8.0 * std::f64::consts::PI * sigma2).ln()
                + 0.5 * sigma2 * lambda * lambda
                + crate::numeric::ln_normal_sf(sigma * lambda);
            -lambda * sum_abs - sum_sq / (2.0 * sigma2) - n * log_norm
        }
    }
}

/// Log of the density transform from the natural shrinkage parameters to a
/// grid coordinate: the change-of-variables Jacobian plus the log-spaced
/// cell width in `s` (proportional to `s`; the `f` spacing is uniform).
fn log_grid_measure(family: ShrinkFamily, s: f64, f: f64) -> f64 {
    let jacobian = match family {
        ShrinkFamily::L1 => 0.5 * std::f64::consts::LN_2,
        ShrinkFamily::L2 => std::f64::consts::LN_2 - 3.0 * s.ln(),
        ShrinkFamily::L1L2 => log_jacobian_total_to_natural(s, f),
    };
    jacobian + s.ln()
}

/// Exact Gibbs draw of one group's penalty given its coefficients,
/// discretized onto the (total shrinkage, sparsity fraction) grid. The pure
/// families only use the `s` axis. Errors when every grid point underflows,
/// which means the coefficients are far outside anything the grid covers.
pub fn hyper_grid_draw(
    family: ShrinkFamily,
    n: usize,
    sum_abs: f64,
    sum_sq: f64,
    priors: &HyperPriors,
    grid: &HyperGrid,
    rng: &mut impl Rng,
) -> Result<Penalty> {
    let s_vals = log_spaced(grid.s_lo, grid.s_hi, grid.points);
    let f_vals = match family {
        ShrinkFamily::L1 => vec![1.0],
        ShrinkFamily::L2 => vec![0.0],
        ShrinkFamily::L1L2 => lin_spaced(grid.f_lo, grid.f_hi, grid.points),
    };
    let mut coords = Vec::with_capacity(s_vals.len() * f_vals.len());
    let mut log_w = Vec::with_capacity(coords.capacity());
    for &s in &s_vals {
        for &f in &f_vals {
            let pen = Penalty::from_total(family, s, f);
            let lw = priors.log_density(&pen)
                + log_grid_measure(family, s, f)
                + group_log_density(&pen, n as f64, sum_abs, sum_sq);
            coords.push((s, f));
            log_w.push(lw);
        }
    }
    let total = log_sum_exp(&log_w);
    if !total.is_finite() {
        return Err(Error::numerical(
            "hyper_grid",
            format!(
                "all {} grid points have zero posterior weight (n={n}, sum_abs={sum_abs:.3e}, sum_sq={sum_sq:.3e})",
                log_w.len()
            ),
        ));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = coords.len() - 1;
    for (i, lw) in log_w.iter().enumerate() {
        acc += (lw - total).exp();
        if u <= acc {
            chosen = i;
            break;
        }
    }
    let (s, f) = coords[chosen];
    Ok(Penalty::from_total(family, s, f))
}

/// Metropolis decision for a log acceptance ratio. `exponent` tempers the
/// ratio: 1 targets the posterior, anything else a flattened or sharpened
/// version of it, which is useful as a deliberate negative control.
fn accept(rng: &mut ChaCha8Rng, delta: f64, exponent: f64) -> bool {
    if delta.is_nan() {
        return false;
    }
    if delta >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < exponent * delta
}

/// Per-block random-walk scale with burn-in-only adaptation.
#[derive(Debug, Clone)]
struct StepControl {
    step: f64,
    accepts: u64,
    attempts: u64,
    window_accepts: u32,
    window_attempts: u32,
}

impl StepControl {
    fn new(step: f64) -> StepControl {
        StepControl { step, accepts: 0, attempts: 0, window_accepts: 0, window_attempts: 0 }
    }

    fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.window_attempts += 1;
            self.window_accepts += u32::from(accepted);
            if self.window_attempts == ADAPT_WINDOW {
                let rate = f64::from(self.window_accepts) / f64::from(self.window_attempts);
                if rate < ACCEPT_LO {
                    self.step *= 0.6;
                } else if rate > ACCEPT_HI {
                    self.step *= 1.6;
                }
                self.step = self.step.clamp(1e-6, 20.0);
                self.window_accepts = 0;
                self.window_attempts = 0;
            }
        } else {
            self.attempts += 1;
            self.accepts += u64::from(accepted);
        }
    }
}

fn rate(accepts: u64, attempts: u64) -> f64 {
    if attempts == 0 {
        0.0
    } else {
        accepts as f64 / attempts as f64
    }
}

/// Row facts pulled out of the design once so the hot loops index flat
/// arrays instead of re-materializing row views.
struct RowData {
    outcomes: Vec<Outcome>,
    durations: Vec<f64>,
    by_state: [Vec<u32>; 3],
}

fn collect_rows(design: &Design) -> RowData {
    let n = design.n_rows();
    let mut outcomes = Vec::with_capacity(n);
    let mut durations = Vec::with_capacity(n);
    let mut by_state: [Vec<u32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, row) in design.rows().enumerate() {
        outcomes.push(row.outcome);
        durations.push(row.duration_s);
        by_state[row.state.index()].push(i as u32);
    }
    RowData { outcomes, durations, by_state }
}

/// Zero coefficients with each state's intercept started at its crude
/// empirical log rate, so chains begin within likelihood range of the data.
fn default_init(design: &Design) -> Coefficients {
    let mut coeffs = Coefficients::zeros(design.n_predictors());
    let t = design.state_tallies();
    for k in 0..3 {
        let exposure = t.exposure_s[k].max(1.0);
        coeffs.home_intercepts[k] = ((t.home_goals[k] as f64).max(0.5) / exposure).ln();
        coeffs.away_intercepts[k] = ((t.away_goals[k] as f64).max(0.5) / exposure).ln();
    }
    coeffs
}

/// Everything chains share read-only.
struct SamplerContext<'a> {
    design: &'a Design,
    rows: RowData,
    index: RowIndex,
    groups: Vec<Group>,
    constrained: Vec<bool>,
    group_sides: Vec<(Group, Side)>,
    families: Vec<ShrinkFamily>,
    members: BTreeMap<Group, Vec<u32>>,
    priors: &'a HyperPriors,
    opts: &'a McmcOptions,
}

struct ChainRun {
    draws: Vec<Coefficients>,
    hyper_draws: Vec<GroupShrinkage>,
    log_posterior: Vec<f64>,
    coef_steps: Vec<StepControl>,
    intercept_steps: [StepControl; 3],
}

struct ChainState<'a> {
    ctx: &'a SamplerContext<'a>,
    rng: ChaCha8Rng,
    coeffs: Coefficients,
    shrink: GroupShrinkage,
    use_lik: bool,
    sums_h: Vec<f64>,
    sums_a: Vec<f64>,
    row_ll: Vec<f64>,
    ll: f64,
    coef_steps: Vec<StepControl>,
    intercept_steps: [StepControl; 3],
    scratch: Vec<(u32, f64, f64, f64)>,
}

impl<'a> ChainState<'a> {
    fn new(
        ctx: &'a SamplerContext<'a>,
        shrink: &GroupShrinkage,
        init: Option<&Coefficients>,
        chain: usize,
    ) -> ChainState<'a> {
        let opts = ctx.opts;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(chain as u64 + 1);
        let mut coeffs = match init {
            Some(c) => c.clone(),
            None => default_init(ctx.design),
        };
        for p in 0..ctx.design.n_predictors() as u32 {
            if !ctx.constrained[p as usize] {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                coeffs.set_omega(p, coeffs.omega(p) + START_JITTER * z);
            }
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            coeffs.set_delta(p, coeffs.delta(p) + START_JITTER * z);
        }
        if opts.sample_intercepts {
            for k in 0..3 {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                coeffs.home_intercepts[k] += START_JITTER * z;
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                coeffs.away_intercepts[k] += START_JITTER * z;
            }
        }
        let coef_steps = (0..ctx.design.n_predictors())
            .map(|p| {
                let touches = ctx.index.count(p as u32) as f64;
                StepControl::new(opts.initial_step / (1.0 + touches / 100.0).sqrt())
            })
            .collect();
        let intercept_steps = std::array::from_fn(|k| {
            let touches = ctx.rows.by_state[k].len() as f64;
            StepControl::new(opts.initial_step / (1.0 + touches / 100.0).sqrt())
        });
        let mut state = ChainState {
            ctx,
            rng,
            coeffs,
            shrink: shrink.clone(),
            use_lik: opts.likelihood_power > 0.0,
            sums_h: Vec::new(),
            sums_a: Vec::new(),
            row_ll: Vec::new(),
            ll: 0.0,
            coef_steps,
            intercept_steps,
            scratch: Vec::new(),
        };
        state.refresh_cache();
        state
    }

    /// Rebuild the cached linear predictors (state intercept plus on-ice
    /// coefficient sums), per-row log-likelihoods, and their total from
    /// scratch, washing out accumulated float drift.
    fn refresh_cache(&mut self) {
        if !self.use_lik {
            return;
        }
        let (h, a) = linear_sums(self.ctx.design, &self.coeffs);
        self.sums_h = h;
        self.sums_a = a;
        for k in 0..3 {
            for &r in &self.ctx.rows.by_state[k] {
                self.sums_h[r as usize] += self.coeffs.home_intercepts[k];
                self.sums_a[r as usize] += self.coeffs.away_intercepts[k];
            }
        }
        let n = self.ctx.rows.outcomes.len();
        self.row_ll.resize(n, 0.0);
        let mut total = 0.0;
        for r in 0..n {
            let v = event_loglik(
                self.sums_h[r].exp(),
                self.sums_a[r].exp(),
                self.ctx.rows.outcomes[r],
                self.ctx.rows.durations[r],
            );
            self.row_ll[r] = v;
            total += v;
        }
        self.ll = total;
    }

    fn coefficient_block(&mut self, p: u32, adapting: bool) {
        let ctx = self.ctx;
        let constrained = ctx.constrained[p as usize];
        let group = ctx.groups[p as usize];
        let step = self.coef_steps[p as usize].step;
        let dw = if constrained {
            0.0
        } else {
            step * self.rng.sample::<f64, _>(rand_distr::StandardNormal)
        };
        let dd = step * self.rng.sample::<f64, _>(rand_distr::StandardNormal);

        let w0 = self.coeffs.omega(p);
        let d0 = self.coeffs.delta(p);
        let mut delta = 0.0;
        if !constrained {
            let pen = self.shrink.get(group, Side::Offense).expect("validated shrinkage");
            delta += pen.log_density(w0 + dw) - pen.log_density(w0);
        }
        let pen = self.shrink.get(group, Side::Defense).expect("validated shrinkage");
        delta += pen.log_density(d0 + dd) - pen.log_density(d0);

        let mut dll = 0.0;
        if self.use_lik {
            self.scratch.clear();
            for (r, is_home) in ctx.index.rows_of(p) {
                let ri = r as usize;
                // a player's scoring coefficient drives their own team's
                // clock and their defensive one drives the opponent's
                let (bh, ba) = if is_home { (dw, dd) } else { (dd, dw) };
                let nh = self.sums_h[ri] + bh;
                let na = self.sums_a[ri] + ba;
                let nll =
                    event_loglik(nh.exp(), na.exp(), ctx.rows.outcomes[ri], ctx.rows.durations[ri]);
                dll += nll - self.row_ll[ri];
                self.scratch.push((r, nh, na, nll));
            }
            delta += ctx.opts.likelihood_power * dll;
        }

        let accepted = accept(&mut self.rng, delta, ctx.opts.acceptance_exponent);
        if accepted {
            if !constrained {
                self.coeffs.set_omega(p, w0 + dw);
            }
            self.coeffs.set_delta(p, d0 + dd);
            if self.use_lik {
                self.ll += dll;
                for &(r, nh, na, nll) in &self.scratch {
                    let ri = r as usize;
                    self.sums_h[ri] = nh;
                    self.sums_a[ri] = na;
                    self.row_ll[ri] = nll;
                }
            }
        }
        self.coef_steps[p as usize].record(accepted, adapting);
    }

    fn intercept_block(&mut self, k: usize, adapting: bool) {
        let ctx = self.ctx;
        let step = self.intercept_steps[k].step;
        let dh = step * self.rng.sample::<f64, _>(rand_distr::StandardNormal);
        let da = step * self.rng.sample::<f64, _>(rand_distr::StandardNormal);
        let h0 = self.coeffs.home_intercepts[k];
        let a0 = self.coeffs.away_intercepts[k];

        let mut delta = -((h0 + dh) * (h0 + dh) - h0 * h0 + (a0 + da) * (a0 + da) - a0 * a0)
            / (2.0 * INTERCEPT_PRIOR_VAR);
        let mut dll = 0.0;
        if self.use_lik {
            self.scratch.clear();
            for &r in &ctx.rows.by_state[k] {
                let ri = r as usize;
                let nh = self.sums_h[ri] + dh;
                let na = self.sums_a[ri] + da;
                let nll =
                    event_loglik(nh.exp(), na.exp(), ctx.rows.outcomes[ri], ctx.rows.durations[ri]);
                dll += nll - self.row_ll[ri];
                self.scratch.push((r, nh, na, nll));
            }
            delta += ctx.opts.likelihood_power * dll;
        }

        let accepted = accept(&mut self.rng, delta, ctx.opts.acceptance_exponent);
        if accepted {
            self.coeffs.home_intercepts[k] = h0 + dh;
            self.coeffs.away_intercepts[k] = a0 + da;
            if self.use_lik {
                self.ll += dll;
                for &(r, nh, na, nll) in &self.scratch {
                    let ri = r as usize;
                    self.sums_h[ri] = nh;
                    self.sums_a[ri] = na;
                    self.row_ll[ri] = nll;
                }
            }
        }
        self.intercept_steps[k].record(accepted, adapting);
    }

    fn hyper_sweep(&mut self) -> Result<()> {
        let ctx = self.ctx;
        for (i, &(group, side)) in ctx.group_sides.iter().enumerate() {
            let mut n = 0usize;
            let mut sum_abs = 0.0;
            let mut sum_sq = 0.0;
            for &p in &ctx.members[&group] {
                let x = match side {
                    Side::Offense => {
                        if ctx.constrained[p as usize] {
                            continue;
                        }
                        self.coeffs.omega(p)
                    }
                    Side::Defense => self.coeffs.delta(p),
                };
                n += 1;
                sum_abs += x.abs();
                sum_sq += x * x;
            }
            let pen = hyper_grid_draw(
                ctx.families[i],
                n,
                sum_abs,
                sum_sq,
                ctx.priors,
                &ctx.opts.grid,
                &mut self.rng,
            )
            .map_err(|e| match e {
                Error::Numerical { message, .. } => Error::numerical(
                    "hyper_grid",
                    format!("{}/{} group: {message}", group.token(), side.token()),
                ),
                other => other,
            })?;
            self.shrink.set(group, side, pen);
        }
        Ok(())
    }

    /// Log posterior of the current state, from the cached likelihood total.
    fn current_log_posterior(&self) -> f64 {
        let ctx = self.ctx;
        let mut lp = ctx.opts.likelihood_power * self.ll
            + self.shrink.total_log_density(ctx.design, &self.coeffs)
            + intercept_log_prior(&self.coeffs);
        for &(group, side) in &ctx.group_sides {
            let pen = self.shrink.get(group, side).expect("validated shrinkage");
            lp += ctx.priors.log_density(pen);
        }
        lp
    }

    fn run(mut self) -> Result<ChainRun> {
        let opts = self.ctx.opts;
        let total_sweeps = opts.burn_in + opts.keep * opts.thin;
        let mut draws = Vec::with_capacity(opts.keep);
        let mut hyper_draws = Vec::with_capacity(opts.keep);
        let mut log_posterior = Vec::with_capacity(opts.keep);
        for sweep in 0..total_sweeps {
            let adapting = sweep < opts.burn_in;
            if opts.sample_intercepts {
                for k in 0..3 {
                    self.intercept_block(k, adapting);
                }
            }
            for p in 0..self.ctx.design.n_predictors() as u32 {
                self.coefficient_block(p, adapting);
            }
            if opts.sample_hypers {
                self.hyper_sweep()?;
            }
            if self.use_lik && (sweep + 1) % opts.refresh_every == 0 {
                self.refresh_cache();
            }
            if sweep >= opts.burn_in && (sweep - opts.burn_in) % opts.thin == 0 {
                draws.push(self.coeffs.clone());
                hyper_draws.push(self.shrink.clone());
                log_posterior.push(self.current_log_posterior());
            }
        }
        Ok(ChainRun {
            draws,
            hyper_draws,
            log_posterior,
            coef_steps: self.coef_steps,
            intercept_steps: self.intercept_steps,
        })
    }
}

/// Run `options.n_chains` independent chains and pool their kept draws.
///
/// `shrink` fixes each group's penalty family and provides the starting
/// strengths; `init` optionally warm-starts the coefficients (for example at
/// a penalized optimum). Chains are deterministic given the options: the
/// same seed reproduces every draw bit for bit.
pub fn run_chains(
    design: &Design,
    shrink: &GroupShrinkage,
    priors: &HyperPriors,
    options: &McmcOptions,
    init: Option<&Coefficients>,
) -> Result<PosteriorSamples> {
    options.validate()?;
    priors.validate()?;
    shrink.validate_for(design)?;
    if design.n_rows() == 0 {
        return Err(Error::Config("design has no intervals to sample from".into()));
    }
    if let Some(c) = init {
        if c.n_predictors() != design.n_predictors() {
            return Err(Error::Config(format!(
                "initial coefficients cover {} predictors but the design has {}",
                c.n_predictors(),
                design.n_predictors()
            )));
        }
    }

    let group_sides: Vec<(Group, Side)> = design.groups_present().into_iter().collect();
    let families: Vec<ShrinkFamily> = group_sides
        .iter()
        .map(|&(g, s)| shrink.get(g, s).expect("validated shrinkage").family())
        .collect();
    let mut members: BTreeMap<Group, Vec<u32>> = BTreeMap::new();
    for &(group, _) in &group_sides {
        members.entry(group).or_insert_with(|| design.predictors_in_group(group));
    }
    let ctx = SamplerContext {
        design,
        rows: collect_rows(design),
        index: design.row_index(),
        groups: design.predictors().iter().map(|p| p.group).collect(),
        constrained: (0..design.n_predictors() as u32).map(|p| design.omega_constrained(p)).collect(),
        group_sides,
        families,
        members,
        priors,
        opts: options,
    };

    let mut runs = Vec::with_capacity(options.n_chains);
    for chain in 0..options.n_chains {
        runs.push(ChainState::new(&ctx, shrink, init, chain).run()?);
    }

    let n_predictors = design.n_predictors();
    let mut draws = Vec::with_capacity(options.n_chains * options.keep);
    let mut hyper_draws = Vec::with_capacity(draws.capacity());
    let mut log_posterior = Vec::with_capacity(draws.capacity());
    for run in &mut runs {
        draws.append(&mut run.draws);
        hyper_draws.append(&mut run.hyper_draws);
        log_posterior.append(&mut run.log_posterior);
    }

    let mut coefficient_blocks = Vec::with_capacity(n_predictors);
    let mut total_accepts = 0u64;
    let mut total_attempts = 0u64;
    for p in 0..n_predictors {
        let accepts: u64 = runs.iter().map(|r| r.coef_steps[p].accepts).sum();
        let attempts: u64 = runs.iter().map(|r| r.coef_steps[p].attempts).sum();
        coefficient_blocks.push(rate(accepts, attempts));
        total_accepts += accepts;
        total_attempts += attempts;
    }
    let intercept_blocks = std::array::from_fn(|k| {
        let accepts: u64 = runs.iter().map(|r| r.intercept_steps[k].accepts).sum();
        let attempts: u64 = runs.iter().map(|r| r.intercept_steps[k].attempts).sum();
        total_accepts += accepts;
        total_attempts += attempts;
        rate(accepts, attempts)
    });
    let acceptance = AcceptanceStats {
        coefficient_blocks,
        intercept_blocks,
        overall: rate(total_accepts, total_attempts),
    };

    let diagnostics = compute_diagnostics(
        design,
        &draws,
        &log_posterior,
        options.n_chains,
        options.keep,
        acceptance.overall,
    );

    Ok(PosteriorSamples {
        labels: design.predictors().iter().map(|p| p.label.clone()).collect(),
        groups: ctx.groups,
        omega_free: ctx.constrained.iter().map(|&c| !c).collect(),
        hyper_keys: ctx.group_sides,
        draws,
        hyper_draws,
        log_posterior,
        n_chains: options.n_chains,
        kept_per_chain: options.keep,
        acceptance,
        diagnostics,
        options: options.clone(),
    })
}

/// Effective sample size and lag-1 autocorrelation of one series. A frozen
/// series carries a single draw of information and counts as fully
/// autocorrelated.
fn mixing(xs: &[f64]) -> (f64, f64) {
    if sample_sd(xs) == 0.0 {
        return (1.0, 1.0);
    }
    (effective_sample_size(xs), autocorrelation(xs, 1))
}

fn compute_diagnostics(
    design: &Design,
    draws: &[Coefficients],
    log_posterior: &[f64],
    n_chains: usize,
    keep: usize,
    overall_acceptance: f64,
) -> Diagnostics {
    let mut min_ess = f64::INFINITY;
    let mut max_lag1 = f64::NEG_INFINITY;
    let mut n_params = 0usize;
    let mut slow_params = 0usize;
    let mut series = vec![0.0; keep];
    for p in 0..design.n_predictors() as u32 {
        for side in [Side::Offense, Side::Defense] {
            if side == Side::Offense && design.omega_constrained(p) {
                continue;
            }
            let mut ess_total = 0.0;
            let mut param_lag1 = f64::NEG_INFINITY;
            for chain in 0..n_chains {
                for (i, d) in draws[chain * keep..(chain + 1) * keep].iter().enumerate() {
                    series[i] = match side {
                        Side::Offense => d.omega(p),
                        Side::Defense => d.delta(p),
                    };
                }
                let (ess, lag1) = mixing(&series);
                ess_total += ess;
                param_lag1 = param_lag1.max(lag1);
            }
            min_ess = min_ess.min(ess_total);
            max_lag1 = max_lag1.max(param_lag1);
            n_params += 1;
            slow_params += usize::from(param_lag1 > 0.1);
        }
    }
    let mut lp_ess = 0.0;
    let mut lp_lag1 = f64::NEG_INFINITY;
    for chain in 0..n_chains {
        let (ess, lag1) = mixing(&log_posterior[chain * keep..(chain + 1) * keep]);
        lp_ess += ess;
        lp_lag1 = lp_lag1.max(lag1);
    }

    let mut warnings = Vec::new();
    if max_lag1 > 0.995 {
        warnings.push(format!(
            "slowest coefficient chain is nearly frozen (max lag-1 autocorrelation {max_lag1:.3}); lengthen burn_in or lower initial_step"
        ));
    }
    if min_ess < 50.0 {
        warnings.push(format!(
            "smallest coefficient effective sample size is {min_ess:.0}; run longer chains or keep more draws"
        ));
    }
    if !(0.05..=0.70).contains(&overall_acceptance) {
        warnings.push(format!(
            "overall acceptance rate {overall_acceptance:.2} is outside [0.05, 0.70]; step adaptation may not have settled"
        ));
    }
    if n_params > 0 && slow_params as f64 > 0.05 * n_params as f64 {
        warnings.push(format!(
            "{slow_params} of {n_params} coefficient chains keep lag-1 autocorrelation above 0.1 after thinning; increase thin or keep more draws"
        ));
    }
    Diagnostics {
        min_coefficient_ess: min_ess,
        max_coefficient_lag1: max_lag1,
        log_posterior_ess: lp_ess,
        log_posterior_lag1: lp_lag1,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, ModelSpec};
    use crate::events::{Position, Roster, ScoreState, ShiftEvent};
    use crate::mcmc::{summarize_series, HyperGrid, McmcOptions};
    use crate::numeric::{adaptive_simpson, ks_statistic_uniform};
    use crate::shrinkage::log_inv_gamma_pdf;
    use crate::simulate::{synthetic_league, LeagueRecipe, PlantedCoef, ShiftLaw, TeamPlan};
    use approx::assert_relative_eq;

    #[test]
    fn group_density_matches_the_per_coefficient_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..40).map(|_| 2.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let n = xs.len() as f64;
        let s1: f64 = xs.iter().map(|x| x.abs()).sum();
        let s2: f64 = xs.iter().map(|x| x * x).sum();
        for pen in [
            Penalty::L1 { lambda: 3.2 },
            Penalty::L2 { sigma2: 0.4 },
            Penalty::L1L2 { lambda: 1.1, sigma2: 2.0 },
        ] {
            let direct: f64 = xs.iter().map(|&x| pen.log_density(x)).sum();
            let pooled = group_log_density(&pen, n, s1, s2);
            assert_relative_eq!(direct, pooled, max_relative = 1e-12);
        }
    }

    #[test]
    fn hyper_draws_match_the_conjugate_closed_form() {
        // With a normal prior on the coefficients the grid draw has a known
        // continuous answer: sigma^2 | x is inverse-gamma with shape a + n/2
        // and scale b + sum(x^2)/2.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<f64> = (0..16).map(|_| 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let s1: f64 = xs.iter().map(|x| x.abs()).sum();
        let s2: f64 = xs.iter().map(|x| x * x).sum();
        let priors = HyperPriors::default();
        let grid = HyperGrid { points: 1001, ..HyperGrid::default() };

        let n_draws = 16_000;
        let mut draws = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            match hyper_grid_draw(ShrinkFamily::L2, xs.len(), s1, s2, &priors, &grid, &mut rng).unwrap() {
                Penalty::L2 { sigma2 } => draws.push(sigma2),
                other => panic!("expected an L2 draw, got {other:?}"),
            }
        }

        let shape = priors.sigma2_shape + xs.len() as f64 / 2.0;
        let scale = priors.sigma2_scale + s2 / 2.0;
        let dens = |x: f64| log_inv_gamma_pdf(x, shape, scale).exp();
        // closed-form CDF evaluated once per grid atom, integrating segment
        // by segment in ascending sigma^2 order
        let mut support: Vec<f64> = log_spaced(grid.s_lo, grid.s_hi, grid.points)
            .iter()
            .map(|s| 1.0 / (s * s))
            .collect();
        support.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut cdf = Vec::with_capacity(support.len());
        let mut acc = adaptive_simpson(&dens, 1e-9, support[0], 1e-12);
        cdf.push(acc);
        for j in 1..support.len() {
            acc += adaptive_simpson(&dens, support[j - 1], support[j], 1e-12);
            cdf.push(acc);
        }
        let pit: Vec<f64> = draws
            .iter()
            .map(|d| {
                let j = support.binary_search_by(|x| x.partial_cmp(d).unwrap()).unwrap();
                cdf[j]
            })
            .collect();

        let d = ks_statistic_uniform(&pit);
        assert!(d < 0.03, "grid draw deviates from the conjugate posterior: KS {d:.4}");
        let mean_draw = crate::numeric::mean(&draws);
        let mean_exact = scale / (shape - 1.0);
        assert_relative_eq!(mean_draw, mean_exact, max_relative = 0.02);
    }

    #[test]
    fn doubling_the_grid_no_longer_moves_the_draws() {
        let priors = HyperPriors::default();
        let coarse = HyperGrid { points: 101, ..HyperGrid::default() };
        let fine = HyperGrid { points: 201, ..HyperGrid::default() };
        let mut mean_lambda = [0.0f64; 2];
        for (slot, grid) in [(0, &coarse), (1, &fine)] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut total = 0.0;
            let n_draws = 30_000;
            for _ in 0..n_draws {
                match hyper_grid_draw(ShrinkFamily::L1, 24, 6.0, 3.0, &priors, grid, &mut rng).unwrap() {
                    Penalty::L1 { lambda } => total += lambda,
                    other => panic!("expected an L1 draw, got {other:?}"),
                }
            }
            mean_lambda[slot] = total / n_draws as f64;
        }
        let shift = (mean_lambda[0] - mean_lambda[1]).abs() / mean_lambda[1];
        assert!(shift < 0.01, "grid resolution still matters: relative shift {shift:.4}");
    }

    #[test]
    fn underflowing_grid_is_reported_with_the_group() {
        let priors = HyperPriors::default();
        let grid = HyperGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = hyper_grid_draw(ShrinkFamily::L2, 4, 1e308, f64::INFINITY, &priors, &grid, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
        assert!(err.to_string().contains("zero posterior weight"), "{err}");

        // through the full sampler the failing group is named
        let recipe = LeagueRecipe::new(2, 4, 10, 8);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 1.0 });
        let mut init = league.team_baseline();
        init.set_omega(0, 1e200);
        let opts = McmcOptions { n_chains: 1, burn_in: 10, keep: 5, ..Default::default() };
        let err = run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, Some(&init))
            .unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
        let msg = err.to_string();
        assert!(msg.contains("zero posterior weight"), "{msg}");
        assert!(msg.contains('/'), "{msg}");
    }

    /// Four hand-written intervals between two teams, all tied, with frozen
    /// intercepts and fixed penalties. The posterior then factorizes into
    /// two independent two-dimensional blocks, and the (home scoring, away
    /// defending) block can be integrated on a grid and compared to the
    /// chain's empirical distribution in total variation.
    fn two_team_fixture() -> (Vec<ShiftEvent>, Roster) {
        let home: Vec<String> = (1..=5).map(|i| format!("H{i}")).collect();
        let away: Vec<String> = (1..=5).map(|i| format!("V{i}")).collect();
        let mut roster = Roster::new();
        for id in home.iter().chain(away.iter()) {
            roster.insert(id.clone(), id.clone(), Position::Defense);
        }
        roster.insert("HG", "HG", Position::Goaltender);
        roster.insert("VG", "VG", Position::Goaltender);
        let outcomes = [Outcome::HomeGoal, Outcome::AwayGoal, Outcome::NoGoal, Outcome::HomeGoal];
        let events = outcomes
            .iter()
            .map(|&o| ShiftEvent {
                season: "2024".into(),
                game_id: "G1".into(),
                duration_s: 600.0,
                outcome: o,
                home_team: "AAA".into(),
                away_team: "BBB".into(),
                score_state: ScoreState::Tied,
                home_skaters: home.clone(),
                away_skaters: away.clone(),
                home_goalie: "HG".into(),
                away_goalie: "VG".into(),
            })
            .collect();
        (events, roster)
    }

    fn tv_against_two_param_oracle(exponent: f64, keep: usize) -> f64 {
        let (events, roster) = two_team_fixture();
        let design = build_design(&events, &roster, ModelSpec::Teams).unwrap();
        let shrink = GroupShrinkage::uniform_for(&design, Penalty::L2 { sigma2: 0.5 });
        let mut init = Coefficients::zeros(design.n_predictors());
        let base = (1.0f64 / 600.0).ln();
        for k in 0..3 {
            init.home_intercepts[k] = base;
            init.away_intercepts[k] = base;
        }
        let opts = McmcOptions {
            n_chains: 1,
            burn_in: 3000,
            keep,
            thin: 8,
            seed: 17,
            acceptance_exponent: exponent,
            sample_hypers: false,
            sample_intercepts: false,
            ..Default::default()
        };
        let samples =
            run_chains(&design, &shrink, &HyperPriors::default(), &opts, Some(&init)).unwrap();
        let a = samples.index_of("AAA").unwrap();
        let b = samples.index_of("BBB").unwrap();
        let omegas = samples.series(a, Side::Offense);
        let deltas = samples.series(b, Side::Defense);

        // two home goals over 2400 tied seconds, and exp(base + w + d) * 2400
        // collapses to 4 e^(w + d); the L2 prior with variance 1/2 adds the
        // quadratic
        let log_unnorm = |w: f64, d: f64| {
            let u = w + d;
            2.0 * u - 4.0 * u.exp() - w * w - d * d
        };
        let nb = 15;
        let (lo, hi) = (-3.0, 3.0);
        let width = (hi - lo) / nb as f64;
        let mut oracle = vec![0.0f64; nb * nb];
        let refine = 12;
        for i in 0..nb {
            for j in 0..nb {
                let mut cell = 0.0;
                for a in 0..refine {
                    for b in 0..refine {
                        let w = lo + (i as f64 + (a as f64 + 0.5) / refine as f64) * width;
                        let d = lo + (j as f64 + (b as f64 + 0.5) / refine as f64) * width;
                        cell += log_unnorm(w, d).exp();
                    }
                }
                oracle[i * nb + j] = cell;
            }
        }
        let total: f64 = oracle.iter().sum();
        for v in &mut oracle {
            *v /= total;
        }
        let mut empirical = vec![0.0f64; nb * nb];
        for (w, d) in omegas.iter().zip(deltas.iter()) {
            let i = (((w - lo) / width).floor() as isize).clamp(0, nb as isize - 1) as usize;
            let j = (((d - lo) / width).floor() as isize).clamp(0, nb as isize - 1) as usize;
            empirical[i * nb + j] += 1.0;
        }
        for v in &mut empirical {
            *v /= omegas.len() as f64;
        }
        0.5 * oracle
            .iter()
            .zip(empirical.iter())
            .map(|(o, e)| (o - e).abs())
            .sum::<f64>()
    }

    #[test]
    fn kept_draws_match_an_enumerable_posterior() {
        let tv = tv_against_two_param_oracle(1.0, 200_000);
        assert!(tv < 0.02, "chain disagrees with the integrated posterior: TV {tv:.4}");
    }

    #[test]
    fn tempered_acceptance_is_detectably_wrong() {
        // the same oracle must flag a sampler whose acceptance rule was
        // deliberately broken, otherwise the check above proves nothing
        let tv = tv_against_two_param_oracle(0.3, 50_000);
        assert!(tv > 0.10, "tempered chain looked correct: TV {tv:.4}");
    }

    #[test]
    fn prior_only_chains_reproduce_the_marginal_prior() {
        let mut recipe = LeagueRecipe::new(2, 6, 10, 42);
        recipe.model = ModelSpec::Players { include_teams: false };
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 1.0 });
        let opts = McmcOptions {
            n_chains: 2,
            burn_in: 200,
            keep: 1500,
            thin: 5,
            seed: 99,
            likelihood_power: 0.0,
            sample_intercepts: false,
            grid: HyperGrid { points: 161, ..HyperGrid::default() },
            ..Default::default()
        };
        let samples =
            run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, None).unwrap();

        // with the likelihood off, every free coefficient is marginally a
        // scale mixture of normals over the inverse-gamma hyperprior: a
        // Student t with 4 degrees of freedom and scale 1/2, whose CDF is
        // closed-form through s = x / sqrt(1 + x^2)
        let mut pit = Vec::new();
        for p in 0..samples.n_predictors() as u32 {
            for side in [Side::Offense, Side::Defense] {
                if side == Side::Offense && !samples.omega_free[p as usize] {
                    continue;
                }
                for x in samples.series(p, side) {
                    let s = x / (1.0 + x * x).sqrt();
                    pit.push(0.5 + 0.75 * s - 0.25 * s * s * s);
                }
            }
        }
        let d = ks_statistic_uniform(&pit);
        assert!(d < 0.02, "prior marginal mismatch: KS {d:.4} over {} draws", pit.len());
    }

    #[test]
    fn same_seed_reproduces_every_draw() {
        let recipe = LeagueRecipe::new(2, 10, 20, 31);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.5 });
        let opts = McmcOptions { n_chains: 2, burn_in: 40, keep: 30, seed: 6, ..Default::default() };
        let priors = HyperPriors::default();
        let first = run_chains(&league.design, &shrink, &priors, &opts, None).unwrap();
        let second = run_chains(&league.design, &shrink, &priors, &opts, None).unwrap();
        assert_eq!(first.log_posterior, second.log_posterior);
        assert_eq!(first.draws.len(), second.draws.len());
        for (a, b) in first.draws.iter().zip(second.draws.iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(first.acceptance, second.acceptance);
    }

    #[test]
    fn goaltenders_never_get_a_scoring_coefficient() {
        let recipe = LeagueRecipe::new(2, 12, 20, 44);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.5 });
        let opts = McmcOptions { n_chains: 1, burn_in: 60, keep: 80, seed: 2, ..Default::default() };
        let samples =
            run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, None).unwrap();
        let mut checked = 0;
        for p in 0..samples.n_predictors() as u32 {
            if samples.groups[p as usize] != Group::Goaltender {
                continue;
            }
            checked += 1;
            assert!(!samples.omega_free[p as usize]);
            assert!(samples.series(p, Side::Offense).iter().all(|&x| x == 0.0));
            // the defensive side still moves
            assert!(samples.acceptance.coefficient_blocks[p as usize] > 0.0);
            assert!(sample_sd(&samples.series(p, Side::Defense)) > 0.0);
        }
        assert_eq!(checked, 4);
    }

    #[test]
    fn stored_log_posterior_matches_a_fresh_recompute() {
        let recipe = LeagueRecipe::new(2, 20, 30, 77);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.5 });
        let priors = HyperPriors::default();
        let opts = McmcOptions { n_chains: 1, burn_in: 50, keep: 25, seed: 12, ..Default::default() };
        let samples = run_chains(&league.design, &shrink, &priors, &opts, None).unwrap();
        for i in [0usize, 7, 24] {
            let fresh = log_posterior(
                &league.design,
                &samples.draws[i],
                &samples.hyper_draws[i],
                &priors,
                opts.likelihood_power,
            );
            assert_relative_eq!(samples.log_posterior[i], fresh, max_relative = 1e-8);
        }
    }

    #[test]
    fn planted_signal_is_recovered() {
        // Position-group indicator sums are collinear with the intercept
        // (some center is always on the ice), so individual levels are only
        // pinned down by the zero-centered prior. The likelihood-identified
        // quantity is the within-position contrast, and that is what a
        // planted scorer must visibly shift. Two centers per team make the
        // contrast a clean head-to-head split of the team's scoring clock;
        // leaner rosters and longer shifts concentrate goals on each player.
        let mut recipe = LeagueRecipe::new(2, 160, 60, 4242);
        recipe.team_plan =
            TeamPlan { centers: 2, left_wings: 2, right_wings: 2, defense: 3, goalies: 1 };
        recipe.shift_law = ShiftLaw { median_s: 40.0, sigma: 0.35 };
        recipe.planted.push(PlantedCoef { label: "T01C1".into(), omega: 0.4, delta: 0.0 });
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.25 });
        let opts = McmcOptions { n_chains: 2, burn_in: 500, keep: 300, seed: 7, ..Default::default() };
        let samples =
            run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, None).unwrap();
        let star = samples.index_of("T01C1").unwrap();
        let partner = samples.index_of("T01C2").unwrap();
        let diff: Vec<f64> = samples
            .series(star, Side::Offense)
            .iter()
            .zip(samples.series(partner, Side::Offense))
            .map(|(a, b)| a - b)
            .collect();
        let s = summarize_series(&diff);
        assert!((s.mean - 0.4).abs() < 0.2, "contrast mean {:.3} too far from 0.4", s.mean);
        assert!(s.lo95 <= 0.4 && 0.4 <= s.hi95, "interval [{:.3}, {:.3}] misses 0.4", s.lo95, s.hi95);
        assert!(s.lo95 > 0.0, "planted scorer not clearly ahead: lo95 {:.3}", s.lo95);
    }

    #[test]
    fn frozen_chain_warns_but_still_returns() {
        let recipe = LeagueRecipe::new(2, 6, 12, 3);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.5 });
        // no burn-in means no adaptation, and a giant step means near-zero
        // acceptance: most series never move at all
        let opts = McmcOptions {
            n_chains: 1,
            burn_in: 0,
            keep: 60,
            initial_step: 500.0,
            seed: 5,
            ..Default::default()
        };
        let samples =
            run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, None).unwrap();
        assert!(samples.acceptance.overall < 0.05);
        assert!(!samples.diagnostics.warnings.is_empty());
        assert!(
            samples.diagnostics.warnings.iter().any(|w| w.contains("frozen")),
            "{:?}",
            samples.diagnostics.warnings
        );
    }

    #[test]
    fn bookkeeping_matches_the_request() {
        let recipe = LeagueRecipe::new(2, 8, 15, 19);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.5 });
        let opts = McmcOptions {
            n_chains: 3,
            burn_in: 30,
            keep: 17,
            thin: 3,
            seed: 23,
            ..Default::default()
        };
        let samples =
            run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, None).unwrap();
        assert_eq!(samples.n_kept(), 51);
        assert_eq!(samples.kept_per_chain, 17);
        assert_eq!(samples.chain_slice(2).len(), 17);
        assert_eq!(samples.hyper_draws.len(), 51);
        assert_eq!(samples.log_posterior.len(), 51);
        let labels: Vec<String> =
            league.design.predictors().iter().map(|p| p.label.clone()).collect();
        assert_eq!(samples.labels, labels);

        // mismatched warm start is refused up front
        let bad = Coefficients::zeros(3);
        let err = run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, Some(&bad))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

