//! Penalized maximum-likelihood fitting and the applied selection pipelines
//! built on it: penalty paths with warm starts, cross-validated penalty
//! choice, the MVP/LVP emergence cascade, and pair-chemistry selection.

mod cascade;
mod mle;
mod path;
mod pairs;

pub use cascade::{mvp_cascade, CascadeOptions, CellKind, MvpCell, MvpTable, TeamCells};
pub use mle::{fit_penalized, kkt_check, KktReport};
pub use path::{cv_select, penalty_path, CvPoint, CvReport, PathPoint, PenaltyPath};
pub use pairs::{pair_selection, PairSelection, SelectedPair};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::design::{Design, Group, Side};
use crate::error::{Error, Result};
use crate::likelihood::Coefficients;
use crate::shrinkage::GroupShrinkage;

/// Optimizer controls. `tolerance` is on the relative objective change per
/// iteration; predictors in `frozen` keep their initial coefficients
/// bit-for-bit, and `freeze_intercepts` pins the six baseline log-rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    #[serde(default)]
    pub frozen: BTreeSet<u32>,
    #[serde(default)]
    pub freeze_intercepts: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 5000,
            tolerance: 1e-8,
            frozen: BTreeSet::new(),
            freeze_intercepts: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self, design: &Design) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if let Some(&p) = self.frozen.iter().next_back() {
            if p as usize >= design.n_predictors() {
                return Err(Error::Config(format!(
                    "frozen predictor {p} is out of range for a design with {} predictors",
                    design.n_predictors()
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub coefficients: Coefficients,
    /// Penalized objective: log-likelihood plus the shrinkage log-density.
    pub objective: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    /// Objective after each accepted iteration, starting from the initial point.
    pub objective_trace: Vec<f64>,
    /// Count of free coefficient entries (both sides) that are exactly nonzero.
    pub nonzero_coefficients: usize,
    /// Not serialized: timing would make otherwise-identical runs produce
    /// different bytes, breaking reproducibility comparisons.
    #[serde(skip)]
    pub wall_time_s: f64,
    pub shrinkage: GroupShrinkage,
}

/// Count exactly-nonzero free coefficient entries, optionally restricted to
/// a set of group-sides (`None` counts everything unfrozen).
pub fn count_nonzero(
    design: &Design,
    coeffs: &Coefficients,
    targets: Option<&[(Group, Side)]>,
    frozen: &BTreeSet<u32>,
) -> usize {
    let mut count = 0;
    for p in 0..design.n_predictors() as u32 {
        if frozen.contains(&p) {
            continue;
        }
        let group = design.predictor(p).group;
        for side in [Side::Offense, Side::Defense] {
            if side == Side::Offense && design.omega_constrained(p) {
                continue;
            }
            if let Some(ts) = targets {
                if !ts.contains(&(group, side)) {
                    continue;
                }
            }
            let value = match side {
                Side::Offense => coeffs.omega(p),
                Side::Defense => coeffs.delta(p),
            };
            count += (value != 0.0) as usize;
        }
    }
    count
}
