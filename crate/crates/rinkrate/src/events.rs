//! Shift-interval event store: typed records for 5-on-5 substitution
//! intervals, CSV ingest/emit with line-level validation, outcome tallies,
//! and the deterministic game-level train/test split.
//!
//! An event is one maximal stretch of play with a fixed set of ten skaters
//! and two goaltenders on the ice. It ends when somebody scores or when any
//! substitution, stoppage, or period break censors the interval. `outcome`
//! records which side scored (if either); `duration_s` is the interval
//! length in seconds.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENTS_HEADER: [&str; 11] = [
    "season",
    "game_id",
    "duration_s",
    "outcome",
    "home_team",
    "away_team",
    "score_state",
    "home_skaters",
    "away_skaters",
    "home_goalie",
    "away_goalie",
];

pub const ROSTER_HEADER: [&str; 3] = ["player_id", "name", "position"];

/// Who scored to end the interval, if anyone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    AwayGoal,
    NoGoal,
    HomeGoal,
}

impl Outcome {
    pub fn to_i8(self) -> i8 {
        match self {
            Outcome::AwayGoal => -1,
            Outcome::NoGoal => 0,
            Outcome::HomeGoal => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Outcome::AwayGoal),
            0 => Some(Outcome::NoGoal),
            1 => Some(Outcome::HomeGoal),
            _ => None,
        }
    }
}

/// Score situation at the start of the interval, from the home side's view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreState {
    HomeLeading,
    Tied,
    HomeTrailing,
}

impl ScoreState {
    pub const ALL: [ScoreState; 3] = [ScoreState::HomeLeading, ScoreState::Tied, ScoreState::HomeTrailing];

    /// Stable index used for per-state intercept arrays.
    pub fn index(self) -> usize {
        match self {
            ScoreState::HomeLeading => 0,
            ScoreState::Tied => 1,
            ScoreState::HomeTrailing => 2,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ScoreState::HomeLeading => "LEAD",
            ScoreState::Tied => "TIED",
            ScoreState::HomeTrailing => "TRAIL",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "LEAD" => Some(ScoreState::HomeLeading),
            "TIED" => Some(ScoreState::Tied),
            "TRAIL" => Some(ScoreState::HomeTrailing),
            _ => None,
        }
    }

    /// State implied by a (home, away) goal tally.
    pub fn from_score(home_goals: u32, away_goals: u32) -> Self {
        match home_goals.cmp(&away_goals) {
            std::cmp::Ordering::Greater => ScoreState::HomeLeading,
            std::cmp::Ordering::Equal => ScoreState::Tied,
            std::cmp::Ordering::Less => ScoreState::HomeTrailing,
        }
    }
}

impl fmt::Display for ScoreState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    Center,
    LeftWing,
    RightWing,
    Defense,
    Goaltender,
}

impl Position {
    pub const SKATERS: [Position; 4] = [
        Position::Center,
        Position::LeftWing,
        Position::RightWing,
        Position::Defense,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Position::Center => "C",
            Position::LeftWing => "L",
            Position::RightWing => "R",
            Position::Defense => "D",
            Position::Goaltender => "G",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "C" => Some(Position::Center),
            "L" => Some(Position::LeftWing),
            "R" => Some(Position::RightWing),
            "D" => Some(Position::Defense),
            "G" => Some(Position::Goaltender),
            _ => None,
        }
    }

    pub fn is_forward(self) -> bool {
        matches!(self, Position::Center | Position::LeftWing | Position::RightWing)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One substitution interval. Invariants enforced at parse/build time:
/// positive finite duration, exactly five distinct skaters per side, a
/// goaltender per side, and no player appearing twice anywhere on the ice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEvent {
    pub season: String,
    pub game_id: String,
    pub duration_s: f64,
    pub outcome: Outcome,
    pub home_team: String,
    pub away_team: String,
    pub score_state: ScoreState,
    pub home_skaters: Vec<String>,
    pub away_skaters: Vec<String>,
    pub home_goalie: String,
    pub away_goalie: String,
}

impl ShiftEvent {
    /// Composite key identifying the game this interval belongs to.
    pub fn game_key(&self) -> (String, String) {
        (self.season.clone(), self.game_id.clone())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(format!("duration_s must be positive and finite, got {}", self.duration_s));
        }
        if self.home_team.is_empty() || self.away_team.is_empty() {
            return Err("team labels must be non-empty".into());
        }
        if self.home_team == self.away_team {
            return Err(format!("home and away team are both '{}'", self.home_team));
        }
        for (side, skaters, goalie) in [
            ("home", &self.home_skaters, &self.home_goalie),
            ("away", &self.away_skaters, &self.away_goalie),
        ] {
            if skaters.len() != 5 {
                return Err(format!("{side} side lists {} skaters, expected exactly 5", skaters.len()));
            }
            if skaters.iter().any(|s| s.is_empty()) {
                return Err(format!("{side} side has an empty skater id"));
            }
            if goalie.is_empty() {
                return Err(format!("{side} goalie id is empty"));
            }
            let uniq: BTreeSet<&String> = skaters.iter().collect();
            if uniq.len() != skaters.len() {
                return Err(format!("{side} skaters contain a duplicate id"));
            }
            if skaters.contains(goalie) {
                return Err(format!("{side} goalie '{goalie}' also listed as a skater"));
            }
        }
        let mut all: Vec<&String> = self.home_skaters.iter().chain(self.away_skaters.iter()).collect();
        all.push(&self.home_goalie);
        all.push(&self.away_goalie);
        let uniq: BTreeSet<&String> = all.iter().copied().collect();
        if uniq.len() != all.len() {
            return Err("a player id appears on both sides of the same interval".into());
        }
        Ok(())
    }
}

/// Player metadata table keyed by player id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    players: std::collections::BTreeMap<String, PlayerInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerInfo {
    pub name: String,
    pub position: Position,
}

impl Roster {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, name: impl Into<String>, position: Position) {
        self.players.insert(id.into(), PlayerInfo { name: name.into(), position });
    }

    pub fn get(&self, id: &str) -> Option<&PlayerInfo> {
        self.players.get(id)
    }

    pub fn position(&self, id: &str) -> Option<Position> {
        self.players.get(id).map(|p| p.position)
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PlayerInfo)> {
        self.players.iter()
    }
}

/// Outcome tallies over a set of events, mirroring the usual data-summary
/// table (away goals / censored / home goals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub away_goals: u64,
    pub no_goals: u64,
    pub home_goals: u64,
}

impl EventCounts {
    pub fn from_counts(away_goals: u64, no_goals: u64, home_goals: u64) -> Self {
        EventCounts { away_goals, no_goals, home_goals }
    }

    pub fn total(&self) -> u64 {
        self.away_goals + self.no_goals + self.home_goals
    }

    /// Percentages (away, none, home) of the total, rounded to two decimals.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let total = self.total() as f64;
        let pct = |c: u64| (c as f64 / total * 100.0 * 100.0).round() / 100.0;
        (pct(self.away_goals), pct(self.no_goals), pct(self.home_goals))
    }
}

pub fn summarize(events: &[ShiftEvent]) -> EventCounts {
    let mut counts = EventCounts::from_counts(0, 0, 0);
    for e in events {
        match e.outcome {
            Outcome::AwayGoal => counts.away_goals += 1,
            Outcome::NoGoal => counts.no_goals += 1,
            Outcome::HomeGoal => counts.home_goals += 1,
        }
    }
    counts
}

/// Game-level train/test partition. Games are shuffled with a seeded
/// generator, so the same (events, fraction, seed) triple always produces
/// the same split, and no game's events straddle the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_fraction: f64,
    pub seed: u64,
    train: BTreeSet<(String, String)>,
    test: BTreeSet<(String, String)>,
}

impl DataSplit {
    pub fn n_train_games(&self) -> usize {
        self.train.len()
    }

    pub fn n_test_games(&self) -> usize {
        self.test.len()
    }

    pub fn is_train(&self, event: &ShiftEvent) -> bool {
        self.train.contains(&event.game_key())
    }

    /// Clone events into (train, test) vectors preserving input order.
    pub fn partition(&self, events: &[ShiftEvent]) -> (Vec<ShiftEvent>, Vec<ShiftEvent>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for e in events {
            if self.is_train(e) {
                train.push(e.clone());
            } else {
                test.push(e.clone());
            }
        }
        (train, test)
    }
}

/// Split games into train/test with `round(train_fraction * n_games)` games
/// in train. The distinct game list is sorted before the seeded shuffle, so
/// the split is independent of event order.
pub fn split_by_game(events: &[ShiftEvent], train_fraction: f64, seed: u64) -> Result<DataSplit> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train_fraction must lie in [0,1], got {train_fraction}"
        )));
    }
    let mut games: Vec<(String, String)> = events
        .iter()
        .map(ShiftEvent::game_key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    games.shuffle(&mut rng);
    let n_train = (train_fraction * games.len() as f64).round() as usize;
    let train: BTreeSet<_> = games[..n_train].iter().cloned().collect();
    let test: BTreeSet<_> = games[n_train..].iter().cloned().collect();
    Ok(DataSplit { train_fraction, seed, train, test })
}

fn data_err(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::data(path, Some(line), message)
}

/// Parse events CSV from any reader. `source` names the input in errors.
pub fn parse_events<R: Read>(source: &str, reader: R) -> Result<Vec<ShiftEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr
            .headers()
            .map_err(|e| data_err(source, 1, format!("cannot read header: {e}")))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != EVENTS_HEADER {
            return Err(data_err(
                source,
                1,
                format!("unexpected header {:?}, expected {:?}", got.join(","), EVENTS_HEADER.join(",")),
            ));
        }
    }
    let mut events = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| data_err(source, line, format!("malformed CSV record: {e}")))?;
        if record.len() != EVENTS_HEADER.len() {
            return Err(data_err(
                source,
                line,
                format!("expected {} fields, got {}", EVENTS_HEADER.len(), record.len()),
            ));
        }
        let field = |idx: usize| record.get(idx).unwrap_or_default().to_string();
        let duration_s: f64 = record[2]
            .parse()
            .map_err(|_| data_err(source, line, format!("duration_s '{}' is not a number", &record[2])))?;
        let outcome_raw: i8 = record[3]
            .parse()
            .map_err(|_| data_err(source, line, format!("outcome '{}' is not an integer", &record[3])))?;
        let outcome = Outcome::from_i8(outcome_raw)
            .ok_or_else(|| data_err(source, line, format!("outcome must be -1, 0, or 1, got {outcome_raw}")))?;
        let score_state = ScoreState::from_token(&record[6])
            .ok_or_else(|| data_err(source, line, format!("score_state must be LEAD, TIED, or TRAIL, got '{}'", &record[6])))?;
        let split_ids = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(';').map(str::to_string).collect()
            }
        };
        let event = ShiftEvent {
            season: field(0),
            game_id: field(1),
            duration_s,
            outcome,
            home_team: field(4),
            away_team: field(5),
            score_state,
            home_skaters: split_ids(&record[7]),
            away_skaters: split_ids(&record[8]),
            home_goalie: field(9),
            away_goalie: field(10),
        };
        event.validate().map_err(|msg| data_err(source, line, msg))?;
        events.push(event);
    }
    Ok(events)
}

pub fn load_events(path: &Path) -> Result<Vec<ShiftEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(&path.display().to_string(), std::io::BufReader::new(file))
}

fn write_err(label: &str, e: impl std::fmt::Display) -> Error {
    Error::Data { path: label.to_string(), line: None, message: format!("write failed: {e}") }
}

pub fn write_events<W: Write>(writer: W, events: &[ShiftEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENTS_HEADER).map_err(|e| write_err("events csv", e))?;
    for e in events {
        w.write_record([
            e.season.as_str(),
            e.game_id.as_str(),
            &e.duration_s.to_string(),
            &e.outcome.to_i8().to_string(),
            e.home_team.as_str(),
            e.away_team.as_str(),
            e.score_state.token(),
            &e.home_skaters.join(";"),
            &e.away_skaters.join(";"),
            e.home_goalie.as_str(),
            e.away_goalie.as_str(),
        ])
        .map_err(|e| write_err("events csv", e))?;
    }
    w.flush().map_err(|e| write_err("events csv", e))?;
    Ok(())
}

pub fn save_events(path: &Path, events: &[ShiftEvent]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(std::io::BufWriter::new(file), events)
}

pub fn write_roster<W: Write>(writer: W, roster: &Roster) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROSTER_HEADER).map_err(|e| write_err("roster csv", e))?;
    for (id, info) in roster.iter() {
        w.write_record([id.as_str(), info.name.as_str(), info.position.token()])
            .map_err(|e| write_err("roster csv", e))?;
    }
    w.flush().map_err(|e| write_err("roster csv", e))?;
    Ok(())
}

pub fn save_roster(path: &Path, roster: &Roster) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_roster(std::io::BufWriter::new(file), roster)
}

pub fn load_roster(path: &Path) -> Result<Roster> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_roster(&path.display().to_string(), std::io::BufReader::new(file))
}

pub fn parse_roster<R: Read>(source: &str, reader: R) -> Result<Roster> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr
            .headers()
            .map_err(|e| data_err(source, 1, format!("cannot read header: {e}")))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ROSTER_HEADER {
            return Err(data_err(
                source,
                1,
                format!("unexpected header {:?}, expected {:?}", got.join(","), ROSTER_HEADER.join(",")),
            ));
        }
    }
    let mut roster = Roster::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| data_err(source, line, format!("malformed CSV record: {e}")))?;
        if record.len() != ROSTER_HEADER.len() {
            return Err(data_err(
                source,
                line,
                format!("expected {} fields, got {}", ROSTER_HEADER.len(), record.len()),
            ));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(data_err(source, line, "player_id is empty"));
        }
        if roster.get(&id).is_some() {
            return Err(data_err(source, line, format!("duplicate player_id '{id}'")));
        }
        let position = Position::from_token(&record[2])
            .ok_or_else(|| data_err(source, line, format!("position must be one of C/L/R/D/G, got '{}'", &record[2])))?;
        roster.insert(id, record[1].to_string(), position);
    }
    Ok(roster)
}
