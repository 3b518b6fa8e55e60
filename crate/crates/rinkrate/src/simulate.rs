//! Generative side of the model: sample single competing-clock events,
//! replay shift schedules under fixed coefficients, synthesize whole leagues
//! with known truth, and run posterior-predictive checks.
//!
//! Every entry point is deterministic given its seed. Games get independent
//! generator streams split from the seed, so simulation parallelizes over
//! games without changing output.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, Design, Group, ModelSpec, PredictorKind, Side};
use crate::error::{Error, Result};
use crate::events::{Outcome, Position, Roster, ScoreState, ShiftEvent};
use crate::likelihood::Coefficients;
use crate::numeric::quantile;

/// Draw one censored competing-exponentials outcome: two goal clocks with
/// rates `lambda_h`, `lambda_a` race the substitution time `censor_s`.
/// Returns the outcome and the observed (possibly censored) duration.
pub fn sample_event<R: Rng + ?Sized>(
    rng: &mut R,
    lambda_h: f64,
    lambda_a: f64,
    censor_s: f64,
) -> (Outcome, f64) {
    assert!(censor_s > 0.0 && censor_s.is_finite(), "censor time must be positive");
    let t_home = exponential_draw(rng, lambda_h);
    let t_away = exponential_draw(rng, lambda_a);
    if censor_s <= t_home && censor_s <= t_away {
        (Outcome::NoGoal, censor_s)
    } else if t_home < t_away {
        (Outcome::HomeGoal, t_home)
    } else {
        (Outcome::AwayGoal, t_away)
    }
}

fn exponential_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Personnel, score state, and censor time for one shift to be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTemplate {
    pub home_skaters: Vec<String>,
    pub away_skaters: Vec<String>,
    pub home_goalie: String,
    pub away_goalie: String,
    pub state: ScoreState,
    pub censor_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTemplate {
    pub season: String,
    pub game_id: String,
    pub home_team: String,
    pub away_team: String,
    pub shifts: Vec<ShiftTemplate>,
}

/// An ordered set of games with per-shift personnel templates. Typically
/// built from withheld real events so replicates reuse the observed
/// deployment patterns and censor times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShiftSchedule {
    pub games: Vec<GameTemplate>,
}

impl ShiftSchedule {
    /// Rebuild the schedule carried by a set of events, preserving event
    /// order within each game and first-appearance order across games.
    pub fn from_events(events: &[ShiftEvent]) -> ShiftSchedule {
        let mut order: HashMap<(String, String), usize> = HashMap::new();
        let mut games: Vec<GameTemplate> = Vec::new();
        for e in events {
            let key = e.game_key();
            let slot = *order.entry(key).or_insert_with(|| {
                games.push(GameTemplate {
                    season: e.season.clone(),
                    game_id: e.game_id.clone(),
                    home_team: e.home_team.clone(),
                    away_team: e.away_team.clone(),
                    shifts: Vec::new(),
                });
                games.len() - 1
            });
            games[slot].shifts.push(ShiftTemplate {
                home_skaters: e.home_skaters.clone(),
                away_skaters: e.away_skaters.clone(),
                home_goalie: e.home_goalie.clone(),
                away_goalie: e.away_goalie.clone(),
                state: e.score_state,
                censor_s: e.duration_s,
            });
        }
        ShiftSchedule { games }
    }

    pub fn n_shifts(&self) -> usize {
        self.games.iter().map(|g| g.shifts.len()).sum()
    }
}

/// Coefficient lookup keyed by label, flattened from a design so the
/// simulator prices shifts the same way the likelihood does: intercepts by
/// score state, team and player effects by on-ice membership, pair effects
/// when both members skate together on one side.
struct EffectTable {
    by_label: HashMap<String, (f64, f64)>,
    pairs: HashMap<(String, String), (f64, f64)>,
    home_intercepts: [f64; 3],
    away_intercepts: [f64; 3],
}

impl EffectTable {
    fn from_design(design: &Design, coeffs: &Coefficients) -> EffectTable {
        let mut by_label = HashMap::new();
        let mut pairs = HashMap::new();
        for (p, pred) in design.predictors().iter().enumerate() {
            let p = p as u32;
            match pred.kind {
                PredictorKind::Team | PredictorKind::Player => {
                    by_label.insert(pred.label.clone(), (coeffs.omega(p), coeffs.delta(p)));
                }
                PredictorKind::Pair => {}
            }
        }
        for meta in design.pair_meta() {
            let key = pair_key(&meta.first, &meta.second);
            pairs.insert(key, (coeffs.omega(meta.predictor), coeffs.delta(meta.predictor)));
        }
        EffectTable {
            by_label,
            pairs,
            home_intercepts: coeffs.home_intercepts,
            away_intercepts: coeffs.away_intercepts,
        }
    }

    /// Log-rates (home, away) for one shift's personnel and score state.
    fn shift_log_rates(
        &self,
        home_team: &str,
        away_team: &str,
        home_on_ice: &[&str],
        away_on_ice: &[&str],
        state: ScoreState,
    ) -> (f64, f64) {
        let mut home_sum = self.home_intercepts[state.index()];
        let mut away_sum = self.away_intercepts[state.index()];
        let mut add = |label: &str, is_home: bool| {
            if let Some(&(omega, delta)) = self.by_label.get(label) {
                if is_home {
                    home_sum += omega;
                    away_sum += delta;
                } else {
                    away_sum += omega;
                    home_sum += delta;
                }
            }
        };
        add(home_team, true);
        add(away_team, false);
        for &p in home_on_ice {
            add(p, true);
        }
        for &p in away_on_ice {
            add(p, false);
        }
        if !self.pairs.is_empty() {
            for (side, is_home) in [(home_on_ice, true), (away_on_ice, false)] {
                for i in 0..side.len() {
                    for j in i + 1..side.len() {
                        if let Some(&(omega, delta)) = self.pairs.get(&pair_key(side[i], side[j])) {
                            if is_home {
                                home_sum += omega;
                                away_sum += delta;
                            } else {
                                away_sum += omega;
                                home_sum += delta;
                            }
                        }
                    }
                }
            }
        }
        (home_sum, away_sum)
    }
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Sample one event per template under fixed coefficients. Labels absent
/// from the design carry no effect, so a score-only design replays a
/// schedule on intercepts alone. Deterministic given the seed, with one
/// generator stream per game.
pub fn simulate_schedule(
    schedule: &ShiftSchedule,
    design: &Design,
    coeffs: &Coefficients,
    seed: u64,
) -> Result<Vec<ShiftEvent>> {
    let table = EffectTable::from_design(design, coeffs);
    let per_game: Vec<Vec<ShiftEvent>> = schedule
        .games
        .par_iter()
        .enumerate()
        .map(|(g, game)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64 + 1);
            let mut events = Vec::with_capacity(game.shifts.len());
            for shift in &game.shifts {
                let home_refs: Vec<&str> = shift
                    .home_skaters
                    .iter()
                    .map(String::as_str)
                    .chain(std::iter::once(shift.home_goalie.as_str()))
                    .collect();
                let away_refs: Vec<&str> = shift
                    .away_skaters
                    .iter()
                    .map(String::as_str)
                    .chain(std::iter::once(shift.away_goalie.as_str()))
                    .collect();
                let (h, a) = table.shift_log_rates(
                    &game.home_team,
                    &game.away_team,
                    &home_refs,
                    &away_refs,
                    shift.state,
                );
                let (outcome, duration) = sample_event(&mut rng, h.exp(), a.exp(), shift.censor_s);
                let event = ShiftEvent {
                    season: game.season.clone(),
                    game_id: game.game_id.clone(),
                    duration_s: duration,
                    outcome,
                    home_team: game.home_team.clone(),
                    away_team: game.away_team.clone(),
                    score_state: shift.state,
                    home_skaters: shift.home_skaters.clone(),
                    away_skaters: shift.away_skaters.clone(),
                    home_goalie: shift.home_goalie.clone(),
                    away_goalie: shift.away_goalie.clone(),
                };
                event.validate().map_err(|m| {
                    Error::data(&format!("schedule game {}", game.game_id), None, m)
                })?;
                events.push(event);
            }
            Ok(events)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_game.into_iter().flatten().collect())
}

/// Law for drawing one group-side's true coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CoefLaw {
    Zero,
    Gaussian { sd: f64 },
    Laplace { scale: f64 },
    SpikeSlab { zero_prob: f64, sd: f64 },
}

impl CoefLaw {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            CoefLaw::Zero => 0.0,
            CoefLaw::Gaussian { sd } => sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
            CoefLaw::Laplace { scale } => {
                let u: f64 = rng.random();
                let mag = -(1.0 - u).ln() * scale;
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            CoefLaw::SpikeSlab { zero_prob, sd } => {
                if rng.random::<f64>() < zero_prob {
                    0.0
                } else {
                    sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }
            }
        }
    }

    fn validate(self) -> Result<()> {
        let ok = match self {
            CoefLaw::Zero => true,
            CoefLaw::Gaussian { sd } => sd.is_finite() && sd >= 0.0,
            CoefLaw::Laplace { scale } => scale.is_finite() && scale >= 0.0,
            CoefLaw::SpikeSlab { zero_prob, sd } => {
                (0.0..=1.0).contains(&zero_prob) && sd.is_finite() && sd >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid coefficient law {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLaw {
    pub group: Group,
    pub side: Side,
    #[serde(flatten)]
    pub law: CoefLaw,
}

/// Log-normal shift-length law, parameterized by its median. The default is
/// calibrated so that at baseline scoring rates roughly 98% of shifts end
/// goalless, matching the event mix of real play-by-play data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftLaw {
    pub median_s: f64,
    pub sigma: f64,
}

impl Default for ShiftLaw {
    fn default() -> Self {
        ShiftLaw { median_s: 12.4, sigma: 0.35 }
    }
}

impl ShiftLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.median_s * (self.sigma * z).exp()
    }
}

/// Roster sizes per team.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamPlan {
    pub centers: usize,
    pub left_wings: usize,
    pub right_wings: usize,
    pub defense: usize,
    pub goalies: usize,
}

impl Default for TeamPlan {
    fn default() -> Self {
        TeamPlan { centers: 4, left_wings: 4, right_wings: 4, defense: 6, goalies: 2 }
    }
}

impl TeamPlan {
    pub fn players_per_team(&self) -> usize {
        self.centers + self.left_wings + self.right_wings + self.defense + self.goalies
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCoef {
    pub label: String,
    pub omega: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub first: String,
    pub second: String,
    pub omega: f64,
    pub delta: f64,
}

/// Everything needed to fabricate a league with known truth: roster shape,
/// schedule size, shift-length law, intercepts, per-group coefficient laws,
/// and explicit planted effects layered on top of the random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueRecipe {
    pub n_teams: usize,
    #[serde(default)]
    pub team_plan: TeamPlan,
    pub n_games: usize,
    pub shifts_per_game: usize,
    #[serde(default)]
    pub shift_law: ShiftLaw,
    pub home_intercepts: [f64; 3],
    pub away_intercepts: [f64; 3],
    #[serde(default)]
    pub laws: Vec<GroupLaw>,
    #[serde(default)]
    pub planted: Vec<PlantedCoef>,
    #[serde(default)]
    pub planted_pairs: Vec<PlantedPair>,
    pub model: ModelSpec,
    pub seed: u64,
}

impl LeagueRecipe {
    /// A recipe with baseline intercepts, default roster shape and shift
    /// law, all-zero true coefficients, and a player-effects design.
    pub fn new(n_teams: usize, n_games: usize, shifts_per_game: usize, seed: u64) -> LeagueRecipe {
        LeagueRecipe {
            n_teams,
            team_plan: TeamPlan::default(),
            n_games,
            shifts_per_game,
            shift_law: ShiftLaw::default(),
            home_intercepts: [-7.3; 3],
            away_intercepts: [-7.3; 3],
            laws: Vec::new(),
            planted: Vec::new(),
            planted_pairs: Vec::new(),
            model: ModelSpec::Players { include_teams: true },
            seed,
        }
    }

    fn law_for(&self, group: Group, side: Side) -> CoefLaw {
        self.laws
            .iter()
            .rev()
            .find(|gl| gl.group == group && gl.side == side)
            .map(|gl| gl.law)
            .unwrap_or(CoefLaw::Zero)
    }

    fn validate(&self) -> Result<()> {
        if self.n_teams < 2 {
            return Err(Error::Config("a league needs at least two teams".into()));
        }
        if self.shifts_per_game == 0 {
            return Err(Error::Config("shifts_per_game must be positive".into()));
        }
        let p = &self.team_plan;
        if p.centers < 1 || p.left_wings < 1 || p.right_wings < 1 || p.defense < 2 || p.goalies < 1 {
            return Err(Error::Config(
                "team plan cannot field a full-strength lineup (need 1 C, 1 L, 1 R, 2 D, 1 G)".into(),
            ));
        }
        if !(self.shift_law.median_s > 0.0 && self.shift_law.median_s.is_finite())
            || !(self.shift_law.sigma >= 0.0 && self.shift_law.sigma.is_finite())
        {
            return Err(Error::Config("shift-length law needs a positive median and nonnegative sigma".into()));
        }
        for side in [self.home_intercepts, self.away_intercepts] {
            if side.iter().any(|r| !r.is_finite()) {
                return Err(Error::Config("intercepts must be finite".into()));
            }
        }
        for gl in &self.laws {
            if gl.group == Group::Pair {
                return Err(Error::Config(
                    "pair effects are planted explicitly via planted_pairs, not drawn from a law".into(),
                ));
            }
            gl.law.validate()?;
        }
        if !self.planted_pairs.is_empty() && !matches!(self.model, ModelSpec::PlayersPlusPairs { .. }) {
            return Err(Error::Config("planted_pairs requires a model with pair predictors".into()));
        }
        Ok(())
    }
}

/// A fabricated league: the event log, the roster behind it, the design the
/// recipe's model implies, and the true coefficients indexed by that design.
#[derive(Debug, Clone)]
pub struct SyntheticLeague {
    pub events: Vec<ShiftEvent>,
    pub roster: Roster,
    pub design: Design,
    pub truth: Coefficients,
}

impl SyntheticLeague {
    /// The truth with every individual effect zeroed: intercepts and team
    /// coefficients survive. This is the natural anchor for workflows that
    /// hold the league-level structure fixed while re-estimating players.
    pub fn team_baseline(&self) -> Coefficients {
        let mut out = Coefficients::zeros(self.design.n_predictors());
        out.home_intercepts = self.truth.home_intercepts;
        out.away_intercepts = self.truth.away_intercepts;
        for p in self.design.predictors_of_kind(PredictorKind::Team) {
            out.set_omega(p, self.truth.omega(p));
            out.set_delta(p, self.truth.delta(p));
        }
        out
    }
}

struct TeamRoster {
    name: String,
    centers: Vec<String>,
    left_wings: Vec<String>,
    right_wings: Vec<String>,
    defense: Vec<String>,
    goalies: Vec<String>,
}

/// Fabricate a league: build rosters, draw true coefficients from the
/// recipe's laws (goaltender scoring effects stay pinned at zero), plant the
/// requested effects, then simulate every game with uniformly random
/// position-legal lines and score states that evolve with the simulated
/// goals. Returns the events together with the truth that generated them.
pub fn synthetic_league(recipe: &LeagueRecipe) -> Result<SyntheticLeague> {
    recipe.validate()?;
    let mut roster = Roster::new();
    let mut teams: Vec<TeamRoster> = Vec::with_capacity(recipe.n_teams);
    for t in 0..recipe.n_teams {
        let name = format!("T{:02}", t + 1);
        let plan = &recipe.team_plan;
        let slot = |prefix: &str, count: usize, pos: Position, roster: &mut Roster| -> Vec<String> {
            (1..=count)
                .map(|j| {
                    let id = format!("{name}{prefix}{j}");
                    roster.insert(id.clone(), id.clone(), pos);
                    id
                })
                .collect()
        };
        teams.push(TeamRoster {
            centers: slot("C", plan.centers, Position::Center, &mut roster),
            left_wings: slot("L", plan.left_wings, Position::LeftWing, &mut roster),
            right_wings: slot("R", plan.right_wings, Position::RightWing, &mut roster),
            defense: slot("D", plan.defense, Position::Defense, &mut roster),
            goalies: slot("G", plan.goalies, Position::Goaltender, &mut roster),
            name,
        });
    }

    let want_teams = matches!(
        recipe.model,
        ModelSpec::Teams
            | ModelSpec::Players { include_teams: true }
            | ModelSpec::PlayersPlusPairs { include_teams: true, .. }
    );
    let want_players = matches!(
        recipe.model,
        ModelSpec::Players { .. } | ModelSpec::PlayersPlusPairs { .. }
    );

    // Truth draws use stream zero; per-game simulation uses streams 1..=G.
    let mut truth_rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    truth_rng.set_stream(0);
    let mut truth_map: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    if want_teams {
        for team in &teams {
            let omega = recipe.law_for(Group::Team, Side::Offense).draw(&mut truth_rng);
            let delta = recipe.law_for(Group::Team, Side::Defense).draw(&mut truth_rng);
            truth_map.insert(team.name.clone(), (omega, delta));
        }
    }
    if want_players {
        for (id, info) in roster.iter() {
            let group = Group::from_position(info.position);
            // Goaltender scoring effects are structurally zero so ratings
            // stay identified; only their suppression side is drawn.
            let omega = if group == Group::Goaltender {
                0.0
            } else {
                recipe.law_for(group, Side::Offense).draw(&mut truth_rng)
            };
            let delta = recipe.law_for(group, Side::Defense).draw(&mut truth_rng);
            truth_map.insert(id.clone(), (omega, delta));
        }
    }
    for planted in &recipe.planted {
        let entry = truth_map.get_mut(&planted.label).ok_or_else(|| {
            Error::Config(format!(
                "planted label '{}' is not a team or player the model tracks",
                planted.label
            ))
        })?;
        *entry = (planted.omega, planted.delta);
        if roster.position(&planted.label) == Some(Position::Goaltender) && planted.omega != 0.0 {
            return Err(Error::Config(format!(
                "goaltender '{}' cannot carry a scoring effect",
                planted.label
            )));
        }
    }

    let mut pair_truth: HashMap<(String, String), (f64, f64)> = HashMap::new();
    for pp in &recipe.planted_pairs {
        for member in [&pp.first, &pp.second] {
            match roster.position(member) {
                None => {
                    return Err(Error::Config(format!("planted pair member '{member}' is not on any roster")))
                }
                Some(Position::Goaltender) => {
                    return Err(Error::Config(format!("goaltender '{member}' cannot join a pair")))
                }
                Some(_) => {}
            }
        }
        pair_truth.insert(pair_key(&pp.first, &pp.second), (pp.omega, pp.delta));
    }

    let table = EffectTable {
        by_label: truth_map.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        pairs: pair_truth.clone(),
        home_intercepts: recipe.home_intercepts,
        away_intercepts: recipe.away_intercepts,
    };

    let n = recipe.n_teams;
    let per_game: Vec<Vec<ShiftEvent>> = (0..recipe.n_games)
        .into_par_iter()
        .map(|g| {
            let home = g % n;
            let offset = 1 + (g / n) % (n - 1);
            let away = (home + offset) % n;
            let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
            rng.set_stream(g as u64 + 1);
            simulate_one_game(recipe, &table, &teams[home], &teams[away], g, &mut rng)
        })
        .collect();
    let events: Vec<ShiftEvent> = per_game.into_iter().flatten().collect();

    let design = build_design(&events, &roster, recipe.model)?;
    let mut truth = Coefficients::zeros(design.n_predictors());
    truth.home_intercepts = recipe.home_intercepts;
    truth.away_intercepts = recipe.away_intercepts;
    for (label, &(omega, delta)) in &truth_map {
        if let Some(p) = design.index_of(label) {
            truth.set_omega(p, omega);
            truth.set_delta(p, delta);
        }
    }
    for pp in &recipe.planted_pairs {
        let key = pair_key(&pp.first, &pp.second);
        let meta = design
            .pair_meta()
            .iter()
            .find(|m| pair_key(&m.first, &m.second) == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "planted pair '{}+{}' was not among the enumerated candidates; raise pair_count",
                    pp.first, pp.second
                ))
            })?;
        truth.set_omega(meta.predictor, pp.omega);
        truth.set_delta(meta.predictor, pp.delta);
    }
    Ok(SyntheticLeague { events, roster, design, truth })
}

fn simulate_one_game(
    recipe: &LeagueRecipe,
    table: &EffectTable,
    home: &TeamRoster,
    away: &TeamRoster,
    game_index: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ShiftEvent> {
    let home_goalie = home.goalies[rng.random_range(0..home.goalies.len())].clone();
    let away_goalie = away.goalies[rng.random_range(0..away.goalies.len())].clone();
    let mut home_score = 0u32;
    let mut away_score = 0u32;
    let mut events = Vec::with_capacity(recipe.shifts_per_game);
    for _ in 0..recipe.shifts_per_game {
        let home_skaters = sample_line(home, rng);
        let away_skaters = sample_line(away, rng);
        let state = ScoreState::from_score(home_score, away_score);
        let censor = recipe.shift_law.draw(rng);
        let home_refs: Vec<&str> = home_skaters
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(home_goalie.as_str()))
            .collect();
        let away_refs: Vec<&str> = away_skaters
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(away_goalie.as_str()))
            .collect();
        let (h, a) = table.shift_log_rates(&home.name, &away.name, &home_refs, &away_refs, state);
        let (outcome, duration) = sample_event(rng, h.exp(), a.exp(), censor);
        match outcome {
            Outcome::HomeGoal => home_score += 1,
            Outcome::AwayGoal => away_score += 1,
            Outcome::NoGoal => {}
        }
        events.push(ShiftEvent {
            season: "S1".into(),
            game_id: format!("G{:06}", game_index + 1),
            duration_s: duration,
            outcome,
            home_team: home.name.clone(),
            away_team: away.name.clone(),
            score_state: state,
            home_skaters,
            away_skaters,
            home_goalie: home_goalie.clone(),
            away_goalie: away_goalie.clone(),
        });
    }
    events
}

/// Uniformly random position-legal line: one center, one winger per flank,
/// two distinct defensemen.
fn sample_line(team: &TeamRoster, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut line = Vec::with_capacity(5);
    line.push(team.centers[rng.random_range(0..team.centers.len())].clone());
    line.push(team.left_wings[rng.random_range(0..team.left_wings.len())].clone());
    line.push(team.right_wings[rng.random_range(0..team.right_wings.len())].clone());
    let d = team.defense.len();
    let i = rng.random_range(0..d);
    let mut j = rng.random_range(0..d - 1);
    if j >= i {
        j += 1;
    }
    line.push(team.defense[i].clone());
    line.push(team.defense[j].clone());
    line
}

/// Goals scored by each team across a set of events.
pub fn team_goal_totals(events: &[ShiftEvent]) -> BTreeMap<String, u64> {
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for e in events {
        totals.entry(e.home_team.clone()).or_insert(0);
        totals.entry(e.away_team.clone()).or_insert(0);
        match e.outcome {
            Outcome::HomeGoal => *totals.get_mut(&e.home_team).unwrap() += 1,
            Outcome::AwayGoal => *totals.get_mut(&e.away_team).unwrap() += 1,
            Outcome::NoGoal => {}
        }
    }
    totals
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamInterval {
    pub team: String,
    pub observed: u64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

/// Result of a posterior-predictive comparison on a withheld schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveCheck {
    pub teams: Vec<TeamInterval>,
    pub covered_fraction: f64,
    pub verdict: bool,
    pub n_simulations: usize,
}

/// Replay a withheld schedule under each posterior draw (each simulated
/// `replicates_per_draw` times) and compare 95% intervals of per-team goal
/// totals against the observed totals. The verdict is positive when at
/// least 80% of the intervals cover — individual 95% intervals are expected
/// to miss about one team in twenty even under a perfectly specified model,
/// so the aggregate threshold is deliberately lenient.
pub fn posterior_predictive_check(
    design: &Design,
    draws: &[&Coefficients],
    withheld: &[ShiftEvent],
    replicates_per_draw: usize,
    seed: u64,
) -> Result<PredictiveCheck> {
    if draws.is_empty() || replicates_per_draw == 0 {
        return Err(Error::numerical("posterior_predictive_check", "no draws or replicates requested"));
    }
    if withheld.is_empty() {
        return Err(Error::data("withheld schedule", None, "no events to check against"));
    }
    if matches!(
        design.spec(),
        ModelSpec::Players { .. } | ModelSpec::PlayersPlusPairs { .. }
    ) {
        for e in withheld {
            for id in e
                .home_skaters
                .iter()
                .chain(e.away_skaters.iter())
                .chain([&e.home_goalie, &e.away_goalie])
            {
                if design.index_of(id).is_none() {
                    return Err(Error::Config(format!(
                        "withheld schedule references player '{id}' absent from the fitted design"
                    )));
                }
            }
        }
    }

    let schedule = ShiftSchedule::from_events(withheld);
    let observed = team_goal_totals(withheld);
    let mut per_team_sims: BTreeMap<String, Vec<f64>> =
        observed.keys().map(|t| (t.clone(), Vec::new())).collect();
    let n_simulations = draws.len() * replicates_per_draw;
    for (d, coeffs) in draws.iter().enumerate() {
        for r in 0..replicates_per_draw {
            let sim_index = (d * replicates_per_draw + r) as u64;
            let sim_seed = seed ^ sim_index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
            let events = simulate_schedule(&schedule, design, coeffs, sim_seed)?;
            for (team, goals) in team_goal_totals(&events) {
                per_team_sims.get_mut(&team).expect("same teams").push(goals as f64);
            }
        }
    }

    let mut teams = Vec::with_capacity(observed.len());
    let mut covered = 0usize;
    for (team, sims) in &per_team_sims {
        let lo = quantile(sims, 0.025);
        let hi = quantile(sims, 0.975);
        let obs = observed[team];
        let inside = lo <= obs as f64 && obs as f64 <= hi;
        covered += inside as usize;
        teams.push(TeamInterval { team: team.clone(), observed: obs, lo, hi, covered: inside });
    }
    let covered_fraction = covered as f64 / teams.len() as f64;
    Ok(PredictiveCheck {
        teams,
        covered_fraction,
        verdict: covered_fraction >= 0.8,
        n_simulations,
    })
}

/// One row of a saved truth table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub label: String,
    pub omega: f64,
    pub delta: f64,
}

/// Write the true coefficients behind a synthetic league as CSV
/// (label, omega, delta), one row per predictor in design order.
pub fn write_truth<W: std::io::Write>(writer: W, design: &Design, truth: &Coefficients) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (p, pred) in design.predictors().iter().enumerate() {
        w.serialize(TruthRow {
            label: pred.label.clone(),
            omega: truth.omega(p as u32),
            delta: truth.delta(p as u32),
        })
        .map_err(|e| Error::data("truth", None, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::data("truth", None, e.to_string()))?;
    Ok(())
}

pub fn save_truth(path: &std::path::Path, design: &Design, truth: &Coefficients) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_truth(std::io::BufWriter::new(file), design, truth)
}

pub fn load_truth(path: &std::path::Path) -> Result<Vec<TruthRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<TruthRow>().enumerate() {
        rows.push(rec.map_err(|e| Error::data(&path.display().to_string(), Some(i as u64 + 2), e.to_string()))?);
    }
    Ok(rows)
}
