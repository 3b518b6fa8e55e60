//! Pair-chemistry selection: keep individual penalties fixed, sweep a
//! soft-threshold path over the pair effects, pick the strength by held-out
//! likelihood, and refit on everything at the winner.

use serde::{Deserialize, Serialize};

use crate::design::{build_design, Group, ModelSpec, Side};
use crate::error::{Error, Result};
use crate::events::{DataSplit, Roster, ShiftEvent};
use crate::likelihood::{total_loglik, transfer_coefficients};
use crate::shrinkage::{GroupShrinkage, Penalty};

use super::path::select_best;
use super::{fit_penalized, penalty_path, CvPoint, FitOptions, FitReport};

const PAIR_TARGETS: [(Group, Side); 2] =
    [(Group::Pair, Side::Offense), (Group::Pair, Side::Defense)];

/// A pair kept by the final fit (either side nonzero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPair {
    pub label: String,
    pub first: String,
    pub second: String,
    pub omega: f64,
    pub delta: f64,
    /// Net chemistry: scoring boost minus leakiness, `omega - delta`.
    pub rating: f64,
    pub shared_seconds: f64,
    pub shared_shifts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSelection {
    pub selected_lambda: f64,
    pub points: Vec<CvPoint>,
    /// Surviving pairs, best net rating first.
    pub pairs: Vec<SelectedPair>,
    /// Nonzero pair coefficient entries (offense and defense counted
    /// separately); at most twice `unique_pairs`.
    pub nonzero_pair_parameters: usize,
    pub unique_pairs: usize,
    pub fit: FitReport,
}

/// Select pair chemistries. Individual and team effects keep the penalties
/// in `individual` throughout; pair effects ride a soft-threshold path over
/// `lambdas` fitted on the training games, each candidate is scored on the
/// withheld games, and ties go to the stricter penalty. The winning strength
/// is then refit on the full event log, warm-started from the winning
/// training solution.
pub fn pair_selection(
    events: &[ShiftEvent],
    roster: &Roster,
    model: ModelSpec,
    individual: &GroupShrinkage,
    lambdas: &[f64],
    split: &DataSplit,
    opts: &FitOptions,
) -> Result<PairSelection> {
    if !matches!(model, ModelSpec::PlayersPlusPairs { .. }) {
        return Err(Error::Config("pair selection needs a model with pair predictors".into()));
    }
    let full_design = build_design(events, roster, model)?;
    if full_design.pair_meta().is_empty() {
        return Err(Error::Config(
            "the model enumerated no pairs; raise pair_count or supply more events".into(),
        ));
    }

    let (train, test) = split.partition(events);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "split leaves {} training and {} test events; both sides must be non-empty",
            train.len(),
            test.len()
        )));
    }
    let train_design = build_design(&train, roster, model)?;
    if train_design.pair_meta().is_empty() {
        return Err(Error::Config("the training games enumerate no pairs; use a larger split".into()));
    }
    let test_design = build_design(&test, roster, model)?;

    let path = penalty_path(&train_design, individual, &PAIR_TARGETS, lambdas, opts, None)?;
    let points: Vec<CvPoint> = path
        .points
        .iter()
        .map(|point| {
            let transferred =
                transfer_coefficients(&train_design, &point.report.coefficients, &test_design);
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
    let selected_lambda = points[selected_index].lambda;

    let mut shrinkage = individual.clone();
    for &(group, side) in &PAIR_TARGETS {
        shrinkage.set(group, side, Penalty::L1 { lambda: selected_lambda });
    }
    let warm = transfer_coefficients(
        &train_design,
        &path.points[selected_index].report.coefficients,
        &full_design,
    );
    let fit = fit_penalized(&full_design, &shrinkage, opts, Some(&warm))?;

    let mut pairs = Vec::new();
    let mut nonzero_pair_parameters = 0;
    for meta in full_design.pair_meta() {
        let omega = fit.coefficients.omega(meta.predictor);
        let delta = fit.coefficients.delta(meta.predictor);
        nonzero_pair_parameters += (omega != 0.0) as usize + (delta != 0.0) as usize;
        if omega != 0.0 || delta != 0.0 {
            pairs.push(SelectedPair {
                label: full_design.predictor(meta.predictor).label.clone(),
                first: meta.first.clone(),
                second: meta.second.clone(),
                omega,
                delta,
                rating: omega - delta,
                shared_seconds: meta.shared_seconds,
                shared_shifts: meta.shared_shifts,
            });
        }
    }
    pairs.sort_by(|a, b| b.rating.partial_cmp(&a.rating).expect("pair ratings are finite"));
    let unique_pairs = pairs.len();

    Ok(PairSelection {
        selected_lambda,
        points,
        pairs,
        nonzero_pair_parameters,
        unique_pairs,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::PredictorKind;
    use crate::events::split_by_game;
    use crate::simulate::{
        synthetic_league, LeagueRecipe, PlantedCoef, PlantedPair, SyntheticLeague, TeamPlan,
    };

    // Two clubs with a strong planted chemistry on the T01D1/T01D2 duo and
    // a planted individual star at center. Bench depth matters here: with
    // fewer than five defensemen (two dressed per shift), a pairing
    // indicator coincides with a linear combination of individual and team
    // effects plus at most one other pairing, so no fit could single out
    // the planted duo. Five break every such tie.
    fn chemistry_league(seed: u64) -> SyntheticLeague {
        let mut recipe = LeagueRecipe::new(2, 350, 120, seed);
        recipe.team_plan =
            TeamPlan { centers: 3, left_wings: 3, right_wings: 3, defense: 5, goalies: 1 };
        recipe.model = ModelSpec::PlayersPlusPairs { include_teams: true, pair_count: 200 };
        recipe.planted = vec![PlantedCoef { label: "T01C1".into(), omega: 0.5, delta: 0.0 }];
        recipe.planted_pairs =
            vec![PlantedPair { first: "T01D1".into(), second: "T01D2".into(), omega: 1.0, delta: 0.0 }];
        synthetic_league(&recipe).unwrap()
    }

    #[test]
    fn planted_chemistry_is_the_first_pair_on_the_path() {
        let league = chemistry_league(42);
        let base = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 1.0 });
        let path = penalty_path(
            &league.design,
            &base,
            &PAIR_TARGETS,
            &[1e4, 64.0, 32.0, 16.0],
            &FitOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(path.points[0].nonzero, 0, "an extreme penalty should zero every pair");
        let first = path
            .points
            .iter()
            .find(|p| p.nonzero > 0)
            .expect("some pair should emerge by the loose end of the path");
        let planted = league
            .design
            .pair_meta()
            .iter()
            .find(|m| m.first == "T01D1" && m.second == "T01D2")
            .expect("planted pair enumerated")
            .predictor;
        let coeffs = &first.report.coefficients;
        assert!(coeffs.omega(planted) > 0.0, "planted pair zero at its emergence point");
        for meta in league.design.pair_meta() {
            if meta.predictor != planted {
                assert!(
                    coeffs.omega(planted) > coeffs.omega(meta.predictor).abs(),
                    "{} out-rated the planted pair at emergence",
                    meta.first
                );
            }
        }
    }

    #[test]
    fn selection_refits_on_everything_and_reports_coherent_counts() {
        let league = chemistry_league(43);
        let individual = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 1.0 });
        let split = split_by_game(&league.events, 0.75, 7).unwrap();
        let lambdas = [1e4, 64.0, 32.0, 16.0, 8.0, 4.0];
        let sel = pair_selection(
            &league.events,
            &league.roster,
            ModelSpec::PlayersPlusPairs { include_teams: true, pair_count: 90 },
            &individual,
            &lambdas,
            &split,
            &FitOptions::default(),
        )
        .unwrap();

        assert_eq!(sel.points.len(), lambdas.len());
        let best = sel.points.iter().map(|p| p.heldout_loglik).fold(f64::NEG_INFINITY, f64::max);
        let at_selected = sel
            .points
            .iter()
            .find(|p| p.lambda == sel.selected_lambda)
            .expect("selected lambda comes from the candidate grid");
        assert_eq!(at_selected.heldout_loglik, best);

        // Counting identity: each surviving pair contributes one or two
        // nonzero parameter entries.
        assert_eq!(sel.unique_pairs, sel.pairs.len());
        assert!(sel.nonzero_pair_parameters >= sel.unique_pairs);
        assert!(sel.nonzero_pair_parameters <= 2 * sel.unique_pairs);
        assert!(sel.unique_pairs <= league.design.pair_meta().len());

        // The planted duo survives selection and tops the chemistry table.
        assert!(!sel.pairs.is_empty(), "selection kept no pairs at all");
        assert_eq!((sel.pairs[0].first.as_str(), sel.pairs[0].second.as_str()), ("T01D1", "T01D2"));
        assert!(sel.pairs[0].rating > 0.3, "planted chemistry rated only {}", sel.pairs[0].rating);
        assert!(sel.pairs[0].shared_seconds > 0.0);
        assert!(sel.pairs.windows(2).all(|w| w[0].rating >= w[1].rating));

        // Pair credit must not cannibalize the planted individual star. The
        // planted duo's own members are exempt: whatever chemistry the pair
        // term does not soak up legitimately lands on their individual
        // coefficients.
        let star = league.design.index_of("T01C1").unwrap();
        for p in league.design.predictors_of_kind(PredictorKind::Player) {
            let label = &league.design.predictor(p).label;
            if p != star && label != "T01D1" && label != "T01D2" {
                assert!(
                    sel.fit.coefficients.net(star) > sel.fit.coefficients.net(p),
                    "{label} out-rates the planted star"
                );
            }
        }
    }

    #[test]
    fn models_without_pair_predictors_are_rejected() {
        let recipe = LeagueRecipe::new(2, 6, 20, 3);
        let league = synthetic_league(&recipe).unwrap();
        let individual = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 1.0 });
        let split = split_by_game(&league.events, 0.5, 1).unwrap();
        let opts = FitOptions::default();

        let plain = pair_selection(
            &league.events,
            &league.roster,
            ModelSpec::Players { include_teams: true },
            &individual,
            &[8.0],
            &split,
            &opts,
        );
        assert!(matches!(plain.unwrap_err(), Error::Config(_)));

        let zero_budget = pair_selection(
            &league.events,
            &league.roster,
            ModelSpec::PlayersPlusPairs { include_teams: true, pair_count: 0 },
            &individual,
            &[8.0],
            &split,
            &opts,
        );
        assert!(matches!(zero_budget.unwrap_err(), Error::Config(_)));
    }
}
