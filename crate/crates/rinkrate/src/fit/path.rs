//! Lasso paths fitted strictest-to-loosest with warm starts, and penalty
//! selection by held-out likelihood.

use serde::{Deserialize, Serialize};

use crate::design::{build_design, Design, Group, ModelSpec, Side};
use crate::error::{Error, Result};
use crate::events::{DataSplit, Roster, ShiftEvent};
use crate::likelihood::{total_loglik, transfer_coefficients, Coefficients};
use crate::shrinkage::{GroupShrinkage, Penalty};

use super::{count_nonzero, fit_penalized, FitOptions, FitReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    /// Nonzero coefficient entries among the targeted group-sides.
    pub nonzero: usize,
    pub report: FitReport,
}

/// A sequence of fits at strictly decreasing soft-threshold strengths, each
/// warm-started from the previous solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPath {
    pub targets: Vec<(Group, Side)>,
    pub points: Vec<PathPoint>,
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Config("penalty path needs at least one lambda".into()));
    }
    for w in lambdas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Config(format!(
                "path lambdas must be strictly decreasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Config("path lambdas must be positive and finite".into()));
    }
    Ok(())
}

/// Fit the design at every lambda, strictest first, warm-starting each fit
/// from the previous solution. The targeted group-sides get a pure
/// soft-threshold penalty of the current strength; everything else keeps
/// its penalty from `base`.
pub fn penalty_path(
    design: &Design,
    base: &GroupShrinkage,
    targets: &[(Group, Side)],
    lambdas: &[f64],
    opts: &FitOptions,
    init: Option<&Coefficients>,
) -> Result<PenaltyPath> {
    check_lambdas(lambdas)?;
    if targets.is_empty() {
        return Err(Error::Config("penalty path needs at least one target group-side".into()));
    }
    let present = design.groups_present();
    for &(group, side) in targets {
        if !present.contains(&(group, side)) {
            return Err(Error::Config(format!(
                "target group {group:?}/{side:?} has no predictors in this design"
            )));
        }
    }

    let mut points = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Coefficients> = init.cloned();
    for &lambda in lambdas {
        let mut shrinkage = base.clone();
        for &(group, side) in targets {
            shrinkage.set(group, side, Penalty::L1 { lambda });
        }
        let report = fit_penalized(design, &shrinkage, opts, warm.as_ref())?;
        warm = Some(report.coefficients.clone());
        let nonzero = count_nonzero(design, &report.coefficients, Some(targets), &opts.frozen);
        points.push(PathPoint { lambda, nonzero, report });
    }
    Ok(PenaltyPath { targets: targets.to_vec(), points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub heldout_loglik: f64,
    pub heldout_deviance: f64,
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub selected_lambda: f64,
    pub selected_index: usize,
    pub points: Vec<CvPoint>,
    pub n_train_events: usize,
    pub n_test_events: usize,
    #[serde(skip)]
    pub path: Option<PenaltyPath>,
}

/// Index of the winning candidate: highest held-out log-likelihood, ties
/// resolved toward the earlier (stricter) lambda.
pub(crate) fn select_best(points: &[CvPoint]) -> usize {
    let mut best = 0;
    for (i, point) in points.iter().enumerate().skip(1) {
        if point.heldout_loglik > points[best].heldout_loglik {
            best = i;
        }
    }
    best
}

/// Choose a soft-threshold strength by game-level cross-validation: fit the
/// path on the training games and score every candidate on the withheld
/// games. Held-out designs can contain players the training fit never saw;
/// those carry zero effect when scoring.
#[allow(clippy::too_many_arguments)]
pub fn cv_select(
    events: &[ShiftEvent],
    roster: &Roster,
    model: ModelSpec,
    base: Penalty,
    targets: &[(Group, Side)],
    lambdas: &[f64],
    split: &DataSplit,
    opts: &FitOptions,
) -> Result<CvReport> {
    let (train, test) = split.partition(events);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split leaves {} training and {} test events; both sides must be non-empty",
            train.len(),
            test.len()
        )));
    }
    let train_design = build_design(&train, roster, model)?;
    let test_design = build_design(&test, roster, model)?;
    let shrinkage = GroupShrinkage::uniform_for(&train_design, base);
    let path = penalty_path(&train_design, &shrinkage, targets, lambdas, opts, None)?;

    let points: Vec<CvPoint> = path
        .points
        .iter()
        .map(|point| {
            let transferred = transfer_coefficients(&train_design, &point.report.coefficients, &test_design);
            let heldout_loglik = total_loglik(&test_design, &transferred);
            CvPoint {
                lambda: point.lambda,
                heldout_loglik,
                heldout_deviance: -2.0 * heldout_loglik,
                nonzero: point.nonzero,
            }
        })
        .collect();
    let selected_index = select_best(&points);
    Ok(CvReport {
        selected_lambda: points[selected_index].lambda,
        selected_index,
        n_train_events: train.len(),
        n_test_events: test.len(),
        points,
        path: Some(path),
    })
}
