//! Rank-based self-check of the whole inference stack.
//!
//! Repeatedly draw a truth from the model's own prior, simulate a league
//! from it, run the sampler on the simulated data, and record where the
//! truth ranks inside the posterior draws. When prior, simulator, and
//! sampler agree, every rank is uniform; a bug in any of the three shows up
//! as a non-uniform rank histogram for the parameters it touches.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_chains, McmcOptions};
use crate::design::Side;
use crate::error::{Error, Result};
use crate::numeric::{ks_pvalue, ks_statistic_uniform};
use crate::shrinkage::{GroupShrinkage, HyperPriors};
use crate::simulate::{synthetic_league, LeagueRecipe, PlantedCoef};

/// RNG stream reserved for drawing replication truths, separate from both
/// the simulator's game streams and the sampler's chain streams.
const TRUTH_STREAM: u64 = 0xC0FFEE;
/// Seed perturbation keeping sampler randomness disjoint from the
/// simulator's randomness within each replication.
const CHAIN_SEED_SALT: u64 = 0x6d63_6d63;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Number of simulate-then-fit replications.
    pub reps: usize,
    pub seed: u64,
    /// Family-wise false-alarm rate; split across parameters by Bonferroni.
    pub alpha: f64,
    /// Sampler settings used inside each replication.
    pub mcmc: McmcOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            reps: 50,
            seed: 0,
            alpha: 0.05,
            mcmc: McmcOptions { n_chains: 1, burn_in: 200, keep: 200, thin: 2, ..Default::default() },
        }
    }
}

/// Rank-uniformity verdict for one scalar parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterCalibration {
    pub label: String,
    /// Kolmogorov-Smirnov distance of the rank sample from uniform.
    pub ks: f64,
    pub p_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub reps: usize,
    pub alpha: f64,
    /// Bonferroni share of `alpha` each parameter was tested at.
    pub per_parameter_alpha: f64,
    pub parameters: Vec<ParameterCalibration>,
    pub passed: bool,
}

impl CalibrationReport {
    pub fn failing(&self) -> Vec<&ParameterCalibration> {
        self.parameters.iter().filter(|p| !p.passed).collect()
    }
}

/// Run the simulate/fit/rank loop and test every coefficient and shrinkage
/// strength for rank uniformity.
///
/// The recipe fixes the league shape; its coefficient laws and planted
/// effects are ignored because each replication plants a fresh truth drawn
/// from `priors` and the penalty families in `shrink`. Passing is evidence
/// the sampler targets the distribution the simulator generates from.
pub fn validate_posterior_quantiles(
    recipe: &LeagueRecipe,
    shrink: &GroupShrinkage,
    priors: &HyperPriors,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    opts.mcmc.validate()?;
    priors.validate()?;
    if opts.reps < 20 {
        return Err(Error::Config(format!(
            "rank calibration needs at least 20 replications to say anything; got {}",
            opts.reps
        )));
    }
    if !(0.0 < opts.alpha && opts.alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be inside (0, 1); got {}", opts.alpha)));
    }
    if !opts.mcmc.sample_hypers {
        return Err(Error::Config(
            "rank calibration draws truths from the hyperprior, so the sampler must have sample_hypers enabled".into(),
        ));
    }
    if opts.mcmc.likelihood_power != 1.0 || opts.mcmc.acceptance_exponent != 1.0 {
        return Err(Error::Config(
            "rank calibration requires an untempered sampler (likelihood_power = 1, acceptance_exponent = 1)".into(),
        ));
    }

    // probe league: fixes the predictor labels, groups, and hyper keys that
    // every replication must reproduce
    let probe = synthetic_league(recipe)?;
    if !probe.design.pair_meta().is_empty() {
        return Err(Error::Config(
            "pair indicators are re-selected from each simulated league, so their ranks cannot be aligned; calibrate a player or team design".into(),
        ));
    }
    shrink.validate_for(&probe.design)?;
    let predictors: Vec<(String, crate::design::Group, bool)> = probe
        .design
        .predictors()
        .iter()
        .enumerate()
        .map(|(p, pred)| {
            (pred.label.clone(), pred.group, !probe.design.omega_constrained(p as u32))
        })
        .collect();
    let hyper_keys: Vec<_> = probe.design.groups_present().into_iter().collect();

    let mut ranks: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rep in 0..opts.reps {
        let rep_seed = opts.seed.wrapping_add(1 + rep as u64);
        let mut truth_rng = ChaCha8Rng::seed_from_u64(rep_seed);
        truth_rng.set_stream(TRUTH_STREAM);

        let mut rep_shrink = GroupShrinkage::new();
        let mut hyper_truth = Vec::with_capacity(hyper_keys.len());
        for &(group, side) in &hyper_keys {
            let family = shrink.require(group, side)?.family();
            let pen = priors.sample(family, &mut truth_rng);
            hyper_truth.push(pen.total_shrinkage().0);
            rep_shrink.set(group, side, pen);
        }
        let mut planted = Vec::with_capacity(predictors.len());
        for (label, group, omega_free) in &predictors {
            let omega = if *omega_free {
                rep_shrink.require(*group, Side::Offense)?.sample(&mut truth_rng)
            } else {
                0.0
            };
            let delta = rep_shrink.require(*group, Side::Defense)?.sample(&mut truth_rng);
            planted.push(PlantedCoef { label: label.clone(), omega, delta });
        }

        let mut rep_recipe = recipe.clone();
        rep_recipe.seed = rep_seed;
        rep_recipe.laws = Vec::new();
        rep_recipe.planted = planted.clone();
        rep_recipe.planted_pairs = Vec::new();
        let league = synthetic_league(&rep_recipe)?;

        let mut mcmc = opts.mcmc.clone();
        mcmc.seed = rep_seed ^ CHAIN_SEED_SALT;
        let samples = run_chains(&league.design, &rep_shrink, priors, &mcmc, None)?;

        let n = samples.n_kept() as f64;
        for (truth, (label, _, omega_free)) in planted.iter().zip(predictors.iter()) {
            let p = samples.index_of(label).ok_or_else(|| {
                Error::Config(format!(
                    "{label} never appeared on the ice in replication {rep}; increase shifts_per_game"
                ))
            })?;
            if *omega_free {
                let below =
                    samples.series(p, Side::Offense).iter().filter(|&&x| x < truth.omega).count();
                ranks
                    .entry(format!("{label}/offense"))
                    .or_default()
                    .push((below as f64 + 0.5) / (n + 1.0));
            }
            let below =
                samples.series(p, Side::Defense).iter().filter(|&&x| x < truth.delta).count();
            ranks
                .entry(format!("{label}/defense"))
                .or_default()
                .push((below as f64 + 0.5) / (n + 1.0));
        }
        for (&(group, side), &truth_s) in hyper_keys.iter().zip(hyper_truth.iter()) {
            let below = samples
                .hyper_series(group, side)
                .iter()
                .filter(|pen| pen.total_shrinkage().0 < truth_s)
                .count();
            ranks
                .entry(format!("{}/{} shrinkage", group.token(), side.token()))
                .or_default()
                .push((below as f64 + 0.5) / (n + 1.0));
        }
    }

    let per_parameter_alpha = opts.alpha / ranks.len() as f64;
    let parameters: Vec<ParameterCalibration> = ranks
        .into_iter()
        .map(|(label, u)| {
            let ks = ks_statistic_uniform(&u);
            let p_value = ks_pvalue(ks, u.len());
            ParameterCalibration { label, ks, p_value, passed: p_value >= per_parameter_alpha }
        })
        .collect();
    let passed = parameters.iter().all(|p| p.passed);
    Ok(CalibrationReport { reps: opts.reps, alpha: opts.alpha, per_parameter_alpha, parameters, passed })
}
