//! Posterior sampling for the lineup rating model.
//!
//! Penalized fitting returns one point estimate; this module walks the whole
//! posterior instead. Coefficients move in small random-walk Metropolis
//! blocks (the offense/defense pair of one predictor at a time, or the
//! home/away intercept pair of one score state), while the per-group
//! shrinkage strengths are refreshed every sweep by exact Gibbs draws on a
//! discretized hyperparameter grid. Several independent chains run from
//! jittered starts; the kept draws, acceptance rates, and mixing diagnostics
//! come back in a [`PosteriorSamples`], which [`summarize_posterior`] reduces
//! to per-predictor means and credible intervals.

mod calibrate;
mod sampler;
mod storage;

pub use calibrate::{
    validate_posterior_quantiles, CalibrationOptions, CalibrationReport, ParameterCalibration,
};
pub use sampler::{hyper_grid_draw, log_posterior, run_chains};
pub use storage::{load_samples, save_samples};

use serde::{Deserialize, Serialize};

use crate::design::{Group, Side};
use crate::error::{Error, Result};
use crate::events::ScoreState;
use crate::likelihood::Coefficients;
use crate::numeric::{mean, quantile, sample_sd};
use crate::shrinkage::{GroupShrinkage, Penalty, ShrinkFamily};

/// Discretization of the shrinkage hyperparameters used by the Gibbs step.
///
/// The total-shrinkage axis `s` is log-spaced between `s_lo` and `s_hi`. The
/// sparsity-fraction axis `f` is linear between `f_lo` and `f_hi` and only
/// matters for the combined family; the pure families pin it to a boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub points: usize,
    pub s_lo: f64,
    pub s_hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            points: 101,
            s_lo: 0.05,
            s_hi: 50.0,
            f_lo: 0.005,
            f_hi: 0.995,
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points < 3 {
            return Err(Error::Config(format!(
                "hyperparameter grid needs at least 3 points, got {}",
                self.points
            )));
        }
        if !(self.s_lo.is_finite() && self.s_hi.is_finite() && self.s_lo > 0.0 && self.s_lo < self.s_hi) {
            return Err(Error::Config(format!(
                "total-shrinkage grid range must satisfy 0 < s_lo < s_hi, got [{}, {}]",
                self.s_lo, self.s_hi
            )));
        }
        if !(self.f_lo > 0.0 && self.f_lo < self.f_hi && self.f_hi < 1.0) {
            return Err(Error::Config(format!(
                "sparsity grid range must satisfy 0 < f_lo < f_hi < 1, got [{}, {}]",
                self.f_lo, self.f_hi
            )));
        }
        Ok(())
    }
}

/// Knobs for [`run_chains`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    /// Independent chains, each on its own random stream.
    pub n_chains: usize,
    /// Sweeps discarded before keeping draws. Step-size adaptation runs only
    /// during this phase, so the kept portion is a fixed-kernel chain.
    pub burn_in: usize,
    /// Draws kept per chain.
    pub keep: usize,
    /// Keep every `thin`-th sweep after burn-in.
    pub thin: usize,
    pub seed: u64,
    /// Starting random-walk scale; each block then adapts its own step
    /// during burn-in.
    pub initial_step: f64,
    /// Cached per-row linear sums are rebuilt from scratch this often to
    /// keep float drift out of long runs.
    pub refresh_every: usize,
    /// Power applied to the Metropolis acceptance ratio. 1 targets the
    /// posterior itself; any other value deliberately targets a tempered
    /// distribution instead, which makes this a negative control for
    /// calibration checks.
    pub acceptance_exponent: f64,
    /// Power on the likelihood term: 1 is the posterior, 0 samples the prior
    /// alone, intermediate values give a tempered path between them.
    pub likelihood_power: f64,
    /// Redraw the group shrinkage strengths each sweep. Turn off to sample
    /// with the penalties held fixed at their initial values.
    pub sample_hypers: bool,
    /// Sample the per-state intercepts. Turn off to freeze them at the
    /// initial values, e.g. when they are pinned to a known baseline.
    pub sample_intercepts: bool,
    pub grid: HyperGrid,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            n_chains: 4,
            burn_in: 400,
            keep: 500,
            thin: 1,
            seed: 0,
            initial_step: 0.25,
            refresh_every: 200,
            acceptance_exponent: 1.0,
            likelihood_power: 1.0,
            sample_hypers: true,
            sample_intercepts: true,
            grid: HyperGrid::default(),
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.keep == 0 {
            return Err(Error::Config("keep must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.refresh_every == 0 {
            return Err(Error::Config("refresh_every must be at least 1".into()));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::Config(format!(
                "initial_step must be positive and finite, got {}",
                self.initial_step
            )));
        }
        if !(self.acceptance_exponent.is_finite() && self.acceptance_exponent > 0.0) {
            return Err(Error::Config(format!(
                "acceptance_exponent must be positive and finite, got {}",
                self.acceptance_exponent
            )));
        }
        if !(self.likelihood_power.is_finite() && self.likelihood_power >= 0.0) {
            return Err(Error::Config(format!(
                "likelihood_power must be non-negative and finite, got {}",
                self.likelihood_power
            )));
        }
        self.grid.validate()
    }
}

/// Post-burn-in acceptance rates, averaged over chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    /// One rate per predictor block, index-aligned with the design.
    pub coefficient_blocks: Vec<f64>,
    /// One rate per score-state intercept block.
    pub intercept_blocks: [f64; 3],
    pub overall: f64,
}

/// Mixing summary of the kept draws. Poor mixing lands in `warnings`; it
/// never fails the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest per-coefficient effective sample size, summed over chains.
    pub min_coefficient_ess: f64,
    /// Largest per-coefficient lag-1 autocorrelation across chains. A frozen
    /// series counts as 1.
    pub max_coefficient_lag1: f64,
    pub log_posterior_ess: f64,
    pub log_posterior_lag1: f64,
    pub warnings: Vec<String>,
}

/// Everything a sampling run produces: kept coefficient and hyperparameter
/// draws (all chains concatenated, chain-major), their log posterior, and
/// bookkeeping about how the chains behaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// Predictor labels, index-aligned with each draw.
    pub labels: Vec<String>,
    pub groups: Vec<Group>,
    /// False where the scoring coefficient is pinned to zero (goaltenders).
    pub omega_free: Vec<bool>,
    /// The shrinkage groups the design actually contains, in stable order.
    pub hyper_keys: Vec<(Group, Side)>,
    pub draws: Vec<Coefficients>,
    pub hyper_draws: Vec<GroupShrinkage>,
    pub log_posterior: Vec<f64>,
    pub n_chains: usize,
    pub kept_per_chain: usize,
    pub acceptance: AcceptanceStats,
    pub diagnostics: Diagnostics,
    pub options: McmcOptions,
}

impl PosteriorSamples {
    pub fn n_kept(&self) -> usize {
        self.draws.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == label).map(|i| i as u32)
    }

    /// Kept draws of one chain.
    pub fn chain_slice(&self, chain: usize) -> &[Coefficients] {
        let lo = chain * self.kept_per_chain;
        &self.draws[lo..lo + self.kept_per_chain]
    }

    /// All kept draws of one coefficient, chains concatenated.
    pub fn series(&self, p: u32, side: Side) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| match side {
                Side::Offense => d.omega(p),
                Side::Defense => d.delta(p),
            })
            .collect()
    }

    /// All kept draws of a predictor's net rating (offense minus defense).
    pub fn net_series(&self, p: u32) -> Vec<f64> {
        self.draws.iter().map(|d| d.net(p)).collect()
    }

    pub fn home_intercept_series(&self, state: ScoreState) -> Vec<f64> {
        self.draws.iter().map(|d| d.home_intercepts[state.index()]).collect()
    }

    pub fn away_intercept_series(&self, state: ScoreState) -> Vec<f64> {
        self.draws.iter().map(|d| d.away_intercepts[state.index()]).collect()
    }

    /// All kept draws of one group's shrinkage penalty.
    pub fn hyper_series(&self, group: Group, side: Side) -> Vec<Penalty> {
        self.hyper_draws
            .iter()
            .filter_map(|s| s.get(group, side).cloned())
            .collect()
    }

    /// Posterior mean of every coefficient and intercept.
    pub fn posterior_mean(&self) -> Coefficients {
        let refs: Vec<&Coefficients> = self.draws.iter().collect();
        Coefficients::mean_of(&refs)
    }
}

/// Location and spread of one scalar's posterior draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    /// 2.5% quantile.
    pub lo95: f64,
    /// 97.5% quantile.
    pub hi95: f64,
}

pub fn summarize_series(xs: &[f64]) -> SummaryStats {
    SummaryStats {
        mean: mean(xs),
        sd: sample_sd(xs),
        median: quantile(xs, 0.5),
        lo95: quantile(xs, 0.025),
        hi95: quantile(xs, 0.975),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub label: String,
    pub group: Group,
    /// Absent where the scoring coefficient is pinned to zero.
    pub offense: Option<SummaryStats>,
    pub defense: SummaryStats,
    pub net: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptSummary {
    pub state: ScoreState,
    pub home: SummaryStats,
    pub away: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSummary {
    pub group: Group,
    pub side: Side,
    pub family: ShrinkFamily,
    /// Draws of the total shrinkage strength `s`.
    pub total: SummaryStats,
    /// Draws of the sparsity fraction `f` (constant for pure families).
    pub sparsity: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub parameters: Vec<ParameterSummary>,
    pub intercepts: Vec<InterceptSummary>,
    pub hypers: Vec<HyperSummary>,
}

impl PosteriorSummary {
    pub fn parameter(&self, label: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.label == label)
    }
}

/// Reduce kept draws to per-predictor, per-intercept, and per-group interval
/// summaries.
pub fn summarize_posterior(samples: &PosteriorSamples) -> PosteriorSummary {
    let mut parameters = Vec::with_capacity(samples.n_predictors());
    for p in 0..samples.n_predictors() as u32 {
        let offense = if samples.omega_free[p as usize] {
            Some(summarize_series(&samples.series(p, Side::Offense)))
        } else {
            None
        };
        parameters.push(ParameterSummary {
            label: samples.labels[p as usize].clone(),
            group: samples.groups[p as usize],
            offense,
            defense: summarize_series(&samples.series(p, Side::Defense)),
            net: summarize_series(&samples.net_series(p)),
        });
    }
    let intercepts = ScoreState::ALL
        .iter()
        .map(|&state| InterceptSummary {
            state,
            home: summarize_series(&samples.home_intercept_series(state)),
            away: summarize_series(&samples.away_intercept_series(state)),
        })
        .collect();
    let hypers = samples
        .hyper_keys
        .iter()
        .map(|&(group, side)| {
            let pens = samples.hyper_series(group, side);
            let coords: Vec<(f64, f64)> = pens.iter().map(|p| p.total_shrinkage()).collect();
            let s: Vec<f64> = coords.iter().map(|c| c.0).collect();
            let f: Vec<f64> = coords.iter().map(|c| c.1).collect();
            HyperSummary {
                group,
                side,
                family: pens[0].family(),
                total: summarize_series(&s),
                sparsity: summarize_series(&f),
            }
        })
        .collect();
    PosteriorSummary {
        n_draws: samples.n_kept(),
        parameters,
        intercepts,
        hypers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summary_stats_reduce_a_known_series() {
        let xs: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = summarize_series(&xs);
        assert_relative_eq!(s.mean, 50.0, epsilon = 1e-12);
        assert_relative_eq!(s.median, 50.0, epsilon = 1e-12);
        assert_relative_eq!(s.lo95, 2.5, epsilon = 1e-12);
        assert_relative_eq!(s.hi95, 97.5, epsilon = 1e-12);
        assert_relative_eq!(s.sd, 29.300170647967224, epsilon = 1e-9);
    }

    #[test]
    fn bad_options_are_rejected() {
        let ok = McmcOptions::default();
        assert!(ok.validate().is_ok());
        for bad in [
            McmcOptions { n_chains: 0, ..ok.clone() },
            McmcOptions { keep: 0, ..ok.clone() },
            McmcOptions { thin: 0, ..ok.clone() },
            McmcOptions { refresh_every: 0, ..ok.clone() },
            McmcOptions { initial_step: 0.0, ..ok.clone() },
            McmcOptions { initial_step: f64::NAN, ..ok.clone() },
            McmcOptions { acceptance_exponent: 0.0, ..ok.clone() },
            McmcOptions { likelihood_power: -0.5, ..ok.clone() },
            McmcOptions {
                grid: HyperGrid { points: 2, ..HyperGrid::default() },
                ..ok.clone()
            },
            McmcOptions {
                grid: HyperGrid { s_lo: -1.0, ..HyperGrid::default() },
                ..ok.clone()
            },
            McmcOptions {
                grid: HyperGrid { f_hi: 1.5, ..HyperGrid::default() },
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
