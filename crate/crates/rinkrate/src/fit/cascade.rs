//! The MVP/LVP emergence cascade: refit at steadily loosening soft-threshold
//! strengths with team effects and baselines pinned, and record, per team,
//! the first player to surface in each superlative cell.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::design::{Design, PredictorKind};
use crate::error::{Error, Result};
use crate::events::ShiftEvent;
use crate::likelihood::Coefficients;
use crate::shrinkage::{GroupShrinkage, Penalty};

use super::{fit_penalized, FitOptions};

/// The six superlative cells tracked per team. Offense ranks scoring
/// effects, defense ranks suppression effects (negative is good), total
/// ranks the net rating omega minus delta; LVP cells mirror the signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    MvpOffense,
    MvpDefense,
    MvpTotal,
    LvpOffense,
    LvpDefense,
    LvpTotal,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [
        CellKind::MvpOffense,
        CellKind::MvpDefense,
        CellKind::MvpTotal,
        CellKind::LvpOffense,
        CellKind::LvpDefense,
        CellKind::LvpTotal,
    ];

    pub fn token(self) -> &'static str {
        match self {
            CellKind::MvpOffense => "mvp_offense",
            CellKind::MvpDefense => "mvp_defense",
            CellKind::MvpTotal => "mvp_total",
            CellKind::LvpOffense => "lvp_offense",
            CellKind::LvpDefense => "lvp_defense",
            CellKind::LvpTotal => "lvp_total",
        }
    }

    /// The ranking value of a player for this cell, oriented so larger is
    /// more qualifying; `None` when the player does not qualify (wrong sign
    /// or exactly zero).
    fn score(self, omega: f64, delta: f64) -> Option<f64> {
        let signed = match self {
            CellKind::MvpOffense => omega,
            CellKind::LvpOffense => -omega,
            CellKind::MvpDefense => -delta,
            CellKind::LvpDefense => delta,
            CellKind::MvpTotal => omega - delta,
            CellKind::LvpTotal => delta - omega,
        };
        (signed > 0.0).then_some(signed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvpCell {
    pub player: String,
    /// The player's relative rating for this cell at emergence (omega,
    /// delta, or net, with its natural sign).
    pub value: f64,
    pub emergence_lambda: f64,
    /// Ratings this small at emergence are indistinguishable from noise.
    pub weak: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamCells {
    pub team: String,
    pub cells: BTreeMap<CellKind, MvpCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvpTable {
    pub teams: Vec<TeamCells>,
    pub refits: usize,
    pub final_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOptions {
    pub lambda_start: f64,
    pub step: f64,
    /// Emergence ratings below this magnitude are flagged weak.
    pub weak_rating: f64,
    pub fit: FitOptions,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions { lambda_start: 8.0, step: 0.25, weak_rating: 0.05, fit: FitOptions::default() }
    }
}

/// Each player's team, inferred from appearances (most frequent side wins,
/// ties broken lexicographically).
fn team_membership(events: &[ShiftEvent]) -> BTreeMap<String, String> {
    let mut counts: HashMap<(String, String), u64> = HashMap::new();
    for e in events {
        for id in e.home_skaters.iter().chain(std::iter::once(&e.home_goalie)) {
            *counts.entry((id.clone(), e.home_team.clone())).or_insert(0) += 1;
        }
        for id in e.away_skaters.iter().chain(std::iter::once(&e.away_goalie)) {
            *counts.entry((id.clone(), e.away_team.clone())).or_insert(0) += 1;
        }
    }
    let mut best: BTreeMap<String, (String, u64)> = BTreeMap::new();
    let mut sorted: Vec<_> = counts.into_iter().collect();
    sorted.sort();
    for ((player, team), n) in sorted {
        match best.get(&player) {
            Some((_, m)) if *m >= n => {}
            _ => {
                best.insert(player, (team, n));
            }
        }
    }
    best.into_iter().map(|(p, (t, _))| (p, t)).collect()
}

/// Walk the penalty down from `lambda_start` in `step` decrements, refitting
/// player effects with team coefficients and baselines held at `frozen`'s
/// values, and fill each team's six superlative cells with the first player
/// to show a qualifying nonzero rating (largest magnitude wins the cell at
/// its emergence penalty). Stops once every cell is filled; reaching a
/// non-positive penalty with unfilled cells is an error naming them.
pub fn mvp_cascade(
    design: &Design,
    events: &[ShiftEvent],
    frozen: &Coefficients,
    options: &CascadeOptions,
) -> Result<MvpTable> {
    if !(options.lambda_start > 0.0 && options.step > 0.0) {
        return Err(Error::Config("cascade needs a positive starting penalty and step".into()));
    }
    let players = design.predictors_of_kind(PredictorKind::Player);
    if players.is_empty() {
        return Err(Error::Config("cascade needs a design with player effects".into()));
    }
    if !design.pair_meta().is_empty() {
        return Err(Error::Config("cascade operates on individual effects; drop pair predictors".into()));
    }

    let membership = team_membership(events);
    let mut by_team: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for &p in &players {
        let label = &design.predictor(p).label;
        let team = membership.get(label).ok_or_else(|| {
            Error::Config(format!("player '{label}' never appears in the supplied events"))
        })?;
        by_team.entry(team.clone()).or_default().push(p);
    }

    let mut fit_opts = options.fit.clone();
    fit_opts.frozen = design.predictors_of_kind(PredictorKind::Team).into_iter().collect();
    fit_opts.freeze_intercepts = true;

    let mut cells: BTreeMap<String, BTreeMap<CellKind, MvpCell>> =
        by_team.keys().map(|t| (t.clone(), BTreeMap::new())).collect();
    let n_cells_total = 6 * by_team.len();
    let mut n_filled = 0usize;

    let mut lambda = options.lambda_start;
    let mut warm = frozen.clone();
    let mut refits = 0usize;
    loop {
        let shrinkage = GroupShrinkage::uniform_for(design, Penalty::L1 { lambda });
        let report = fit_penalized(design, &shrinkage, &fit_opts, Some(&warm))?;
        warm = report.coefficients;
        refits += 1;

        for (team, roster) in &by_team {
            let team_cells = cells.get_mut(team).expect("team present");
            for kind in CellKind::ALL {
                if team_cells.contains_key(&kind) {
                    continue;
                }
                let mut best: Option<(f64, u32)> = None;
                for &p in roster {
                    let omega = warm.omega(p);
                    let delta = warm.delta(p);
                    if let Some(score) = kind.score(omega, delta) {
                        if best.map(|(s, _)| score > s).unwrap_or(true) {
                            best = Some((score, p));
                        }
                    }
                }
                if let Some((score, p)) = best {
                    let value = match kind {
                        CellKind::MvpOffense | CellKind::LvpOffense => warm.omega(p),
                        CellKind::MvpDefense | CellKind::LvpDefense => warm.delta(p),
                        CellKind::MvpTotal | CellKind::LvpTotal => warm.net(p),
                    };
                    team_cells.insert(
                        kind,
                        MvpCell {
                            player: design.predictor(p).label.clone(),
                            value,
                            emergence_lambda: lambda,
                            weak: score < options.weak_rating,
                        },
                    );
                    n_filled += 1;
                }
            }
        }

        if n_filled == n_cells_total {
            break;
        }
        lambda -= options.step;
        if lambda <= 0.0 {
            let mut missing = Vec::new();
            for (team, team_cells) in &cells {
                for kind in CellKind::ALL {
                    if !team_cells.contains_key(&kind) {
                        missing.push(format!("{team}:{}", kind.token()));
                    }
                }
            }
            return Err(Error::numerical(
                "mvp_cascade",
                format!("penalty grid exhausted with unfilled cells: {}", missing.join(", ")),
            ));
        }
    }

    Ok(MvpTable {
        teams: cells
            .into_iter()
            .map(|(team, cells)| TeamCells { team, cells })
            .collect(),
        refits,
        final_lambda: lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::ModelSpec;
    use crate::simulate::{synthetic_league, LeagueRecipe, PlantedCoef, SyntheticLeague};

    fn cascade_fit_options() -> FitOptions {
        FitOptions { tolerance: 1e-10, max_iterations: 8000, ..FitOptions::default() }
    }

    // A league small enough that no null player's evidence reaches the top
    // of the default penalty grid, so only a planted star can surface there.
    fn starred_league(seed: u64, star_omega: f64) -> SyntheticLeague {
        let mut recipe = LeagueRecipe::new(3, 90, 60, seed);
        recipe.planted = vec![PlantedCoef { label: "T01C1".into(), omega: star_omega, delta: 0.0 }];
        synthetic_league(&recipe).unwrap()
    }

    #[test]
    fn planted_star_emerges_first_as_offense_mvp() {
        let league = starred_league(1001, 1.0);
        let options = CascadeOptions { fit: cascade_fit_options(), ..CascadeOptions::default() };
        let table = mvp_cascade(&league.design, &league.events, &league.team_baseline(), &options)
            .unwrap();
        let team1 = table.teams.iter().find(|t| t.team == "T01").unwrap();
        let cell = &team1.cells[&CellKind::MvpOffense];
        assert_eq!(cell.player, "T01C1");
        assert!(!cell.weak, "a planted star should not be flagged weak");
        assert!(cell.value > 0.1, "star emerged at rating {}", cell.value);
        assert!(cell.emergence_lambda >= 6.0, "star emerged late, at {}", cell.emergence_lambda);
        // The star also tops the team's net-rating cell.
        assert_eq!(team1.cells[&CellKind::MvpTotal].player, "T01C1");
        // Emergence order: the star surfaces no later than anyone else on T01.
        for kind in CellKind::ALL {
            assert!(cell.emergence_lambda >= team1.cells[&kind].emergence_lambda);
        }
    }

    #[test]
    fn null_league_fills_late_and_weak() {
        // Enough exposure that a coefficient crossing zero between two
        // consecutive penalty steps moves only a hair's breadth.
        let recipe = LeagueRecipe::new(3, 100, 60, 77);
        let league = synthetic_league(&recipe).unwrap();
        let options = CascadeOptions {
            lambda_start: 12.0,
            fit: cascade_fit_options(),
            ..CascadeOptions::default()
        };
        let table = mvp_cascade(&league.design, &league.events, &league.team_baseline(), &options)
            .unwrap();
        assert_eq!(table.teams.len(), 3);
        let mut cells = 0;
        let mut weak = 0;
        for team in &table.teams {
            assert_eq!(team.cells.len(), 6);
            for cell in team.cells.values() {
                cells += 1;
                weak += cell.weak as usize;
                assert!(
                    cell.emergence_lambda < options.lambda_start,
                    "null player {} emerged at the very top of the grid",
                    cell.player
                );
            }
        }
        assert!(weak * 6 >= cells * 5, "only {weak}/{cells} null cells flagged weak");
    }

    #[test]
    fn stronger_planting_means_no_later_emergence() {
        let options = CascadeOptions { fit: cascade_fit_options(), ..CascadeOptions::default() };
        let mut emergence = Vec::new();
        for star in [1.0, 0.35] {
            let league = starred_league(909, star);
            let table =
                mvp_cascade(&league.design, &league.events, &league.team_baseline(), &options)
                    .unwrap();
            let team1 = table.teams.iter().find(|t| t.team == "T01").unwrap();
            emergence.push(team1.cells[&CellKind::MvpOffense].emergence_lambda);
        }
        assert!(emergence[0] >= emergence[1], "emergence penalties {emergence:?}");
    }

    #[test]
    fn exhausted_grid_reports_the_unfilled_cells() {
        let recipe = LeagueRecipe::new(2, 8, 30, 5);
        let league = synthetic_league(&recipe).unwrap();
        // Start low with a huge step: one refit at a strength nothing clears.
        let options = CascadeOptions {
            lambda_start: 50.0,
            step: 50.0,
            fit: cascade_fit_options(),
            ..CascadeOptions::default()
        };
        let err = mvp_cascade(&league.design, &league.events, &league.team_baseline(), &options)
            .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("unfilled"), "unexpected error: {message}");
        assert!(message.contains("T01") || message.contains("T02"));
    }

    #[test]
    fn score_only_design_is_rejected() {
        let recipe = LeagueRecipe { model: ModelSpec::ScoreOnly, ..LeagueRecipe::new(2, 5, 20, 9) };
        let league = synthetic_league(&recipe).unwrap();
        let frozen = Coefficients::with_intercepts(league.design.n_predictors(), -7.3);
        let err = mvp_cascade(&league.design, &league.events, &frozen, &CascadeOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn goalies_can_take_defense_cells_but_never_offense() {
        let mut recipe = LeagueRecipe::new(2, 120, 60, 660);
        recipe.planted = vec![PlantedCoef { label: "T01G1".into(), omega: 0.0, delta: -0.6 }];
        let league = synthetic_league(&recipe).unwrap();
        let options = CascadeOptions { fit: cascade_fit_options(), ..CascadeOptions::default() };
        let table = mvp_cascade(&league.design, &league.events, &league.team_baseline(), &options)
            .unwrap();
        let team1 = table.teams.iter().find(|t| t.team == "T01").unwrap();
        assert_eq!(team1.cells[&CellKind::MvpDefense].player, "T01G1");
        assert!(team1.cells[&CellKind::MvpDefense].value < 0.0);
        for kind in [CellKind::MvpOffense, CellKind::LvpOffense] {
            assert_ne!(team1.cells[&kind].player, "T01G1", "{kind:?} went to a goaltender");
        }
    }
}
