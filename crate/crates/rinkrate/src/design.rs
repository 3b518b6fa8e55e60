//! Sparse design construction: maps shift events onto dense predictor
//! indices (teams, players, player pairs), with deterministic registry
//! ordering, pooling-group bookkeeping, and the pair co-occurrence machinery.
//!
//! Registry order is fixed regardless of event order: teams sorted by label,
//! then players sorted by id, then pairs in rank order. Row index lists are
//! sorted ascending, and appending pair predictors never shifts base indices.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Outcome, Position, Roster, ScoreState, ShiftEvent};

/// Which coefficient of a predictor a penalty or hyperparameter applies to:
/// `Offense` is the scoring coefficient, `Defense` the opponent-suppression
/// coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Offense,
    Defense,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Offense, Side::Defense];

    pub fn token(self) -> &'static str {
        match self {
            Side::Offense => "offense",
            Side::Defense => "defense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Team,
    Player,
    Pair,
}

/// Pooling group a predictor's coefficients are shrunk within. Skaters pool
/// by position; goaltenders form their own defense-only group; teams and
/// pairs each pool together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Team,
    Center,
    LeftWing,
    RightWing,
    Defense,
    Goaltender,
    Pair,
}

impl Group {
    pub fn from_position(p: Position) -> Group {
        match p {
            Position::Center => Group::Center,
            Position::LeftWing => Group::LeftWing,
            Position::RightWing => Group::RightWing,
            Position::Defense => Group::Defense,
            Position::Goaltender => Group::Goaltender,
        }
    }

    /// Coefficient sides this group actually has. Goaltenders never get a
    /// scoring coefficient: their offense entry is pinned to zero.
    pub fn sides(self) -> &'static [Side] {
        match self {
            Group::Goaltender => &[Side::Defense],
            _ => &Side::BOTH,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Group::Team => "team",
            Group::Center => "center",
            Group::LeftWing => "left_wing",
            Group::RightWing => "right_wing",
            Group::Defense => "defense",
            Group::Goaltender => "goaltender",
            Group::Pair => "pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub label: String,
    pub kind: PredictorKind,
    pub group: Group,
}

/// Which effects the design encodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Intercepts only (score-state and venue effects).
    ScoreOnly,
    /// One predictor per team.
    Teams,
    /// One predictor per player, optionally with team predictors as well.
    Players { include_teams: bool },
    /// Player predictors plus the top `pair_count` co-occurring pairs.
    PlayersPlusPairs { include_teams: bool, pair_count: usize },
}

/// A pair candidate: two players ranked by how often they share the ice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub first: String,
    pub second: String,
    pub shared_shifts: u64,
    pub shared_seconds: f64,
}

impl PairCandidate {
    pub fn label(&self) -> String {
        format!("{}+{}", self.first, self.second)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub predictor: u32,
    pub first: String,
    pub second: String,
    pub shared_shifts: u64,
    pub shared_seconds: f64,
}

/// One event row resolved to predictor indices. Index lists are sorted,
/// disjoint across sides, and contain at most a handful of entries (five
/// skaters, a goaltender, optionally a team and a few pairs per side).
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub home: &'a [u32],
    pub away: &'a [u32],
    pub duration_s: f64,
    pub outcome: Outcome,
    pub state: ScoreState,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct RowStore {
    home_ptr: Vec<u32>,
    home_idx: Vec<u32>,
    away_ptr: Vec<u32>,
    away_idx: Vec<u32>,
    duration: Vec<f64>,
    outcome: Vec<i8>,
    state: Vec<u8>,
}

impl RowStore {
    fn with_capacity(rows: usize) -> Self {
        let mut s = RowStore::default();
        s.home_ptr.reserve(rows + 1);
        s.away_ptr.reserve(rows + 1);
        s.home_ptr.push(0);
        s.away_ptr.push(0);
        s.duration.reserve(rows);
        s.outcome.reserve(rows);
        s.state.reserve(rows);
        s
    }

    fn push(&mut self, home: &[u32], away: &[u32], duration_s: f64, outcome: Outcome, state: ScoreState) {
        self.home_idx.extend_from_slice(home);
        self.away_idx.extend_from_slice(away);
        self.home_ptr.push(self.home_idx.len() as u32);
        self.away_ptr.push(self.away_idx.len() as u32);
        self.duration.push(duration_s);
        self.outcome.push(outcome.to_i8());
        self.state.push(state.index() as u8);
    }

    fn len(&self) -> usize {
        self.duration.len()
    }
}

/// Per-predictor index of the rows it appears on, used by samplers that
/// re-evaluate only the affected likelihood terms.
#[derive(Debug, Clone)]
pub struct RowIndex {
    ptr: Vec<u32>,
    rows: Vec<u32>,
    /// 0 = predictor is on the home side of that row, 1 = away side.
    home: Vec<bool>,
}

impl RowIndex {
    /// Rows predictor `p` appears on, as (row, is_home_side).
    pub fn rows_of(&self, p: u32) -> impl Iterator<Item = (u32, bool)> + '_ {
        let lo = self.ptr[p as usize] as usize;
        let hi = self.ptr[p as usize + 1] as usize;
        self.rows[lo..hi].iter().copied().zip(self.home[lo..hi].iter().copied())
    }

    pub fn count(&self, p: u32) -> usize {
        (self.ptr[p as usize + 1] - self.ptr[p as usize]) as usize
    }
}

/// Per-state goal and exposure tallies, indexed by `ScoreState::index()`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StateTallies {
    pub home_goals: [u64; 3],
    pub away_goals: [u64; 3],
    pub exposure_s: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    spec: ModelSpec,
    predictors: Vec<Predictor>,
    by_label: HashMap<String, u32>,
    pair_meta: Vec<PairMeta>,
    rows: RowStore,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignSummary {
    pub rows: usize,
    pub predictors: usize,
    pub teams: usize,
    pub players: usize,
    pub pairs: usize,
    pub nonzero_entries: usize,
    pub free_coefficients: usize,
    pub groups: Vec<String>,
}

impl Design {
    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }

    pub fn predictor(&self, p: u32) -> &Predictor {
        &self.predictors[p as usize]
    }

    pub fn predictors(&self) -> &[Predictor] {
        &self.predictors
    }

    pub fn index_of(&self, label: &str) -> Option<u32> {
        self.by_label.get(label).copied()
    }

    /// Predictors whose scoring coefficient is structurally pinned to zero.
    pub fn omega_constrained(&self, p: u32) -> bool {
        self.predictors[p as usize].group == Group::Goaltender
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        let h = self.rows.home_ptr[i] as usize..self.rows.home_ptr[i + 1] as usize;
        let a = self.rows.away_ptr[i] as usize..self.rows.away_ptr[i + 1] as usize;
        RowView {
            home: &self.rows.home_idx[h],
            away: &self.rows.away_idx[a],
            duration_s: self.rows.duration[i],
            outcome: Outcome::from_i8(self.rows.outcome[i]).expect("stored outcome is valid"),
            state: ScoreState::ALL[self.rows.state[i] as usize],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = RowView<'_>> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn pair_meta(&self) -> &[PairMeta] {
        &self.pair_meta
    }

    /// Pooling groups present in this design, with the sides each carries.
    pub fn groups_present(&self) -> BTreeSet<(Group, Side)> {
        let mut set = BTreeSet::new();
        for p in &self.predictors {
            for &side in p.group.sides() {
                set.insert((p.group, side));
            }
        }
        set
    }

    pub fn predictors_in_group(&self, group: Group) -> Vec<u32> {
        (0..self.n_predictors() as u32)
            .filter(|&p| self.predictors[p as usize].group == group)
            .collect()
    }

    pub fn predictors_of_kind(&self, kind: PredictorKind) -> Vec<u32> {
        (0..self.n_predictors() as u32)
            .filter(|&p| self.predictors[p as usize].kind == kind)
            .collect()
    }

    /// Count of free coefficient slots: two per predictor except the pinned
    /// goaltender scoring entries.
    pub fn free_coefficient_count(&self) -> usize {
        2 * self.n_predictors()
            - self
                .predictors
                .iter()
                .filter(|p| p.group == Group::Goaltender)
                .count()
    }

    pub fn total_exposure_s(&self) -> f64 {
        self.rows.duration.iter().sum()
    }

    pub fn state_tallies(&self) -> StateTallies {
        let mut t = StateTallies::default();
        for i in 0..self.n_rows() {
            let s = self.rows.state[i] as usize;
            t.exposure_s[s] += self.rows.duration[i];
            match self.rows.outcome[i] {
                1 => t.home_goals[s] += 1,
                -1 => t.away_goals[s] += 1,
                _ => {}
            }
        }
        t
    }

    /// Build the reverse index from predictors to the rows they appear on.
    pub fn row_index(&self) -> RowIndex {
        let np = self.n_predictors();
        let mut counts = vec![0u32; np + 1];
        for i in 0..self.n_rows() {
            let v = self.row(i);
            for &p in v.home.iter().chain(v.away.iter()) {
                counts[p as usize + 1] += 1;
            }
        }
        for i in 0..np {
            counts[i + 1] += counts[i];
        }
        let ptr = counts.clone();
        let mut cursor = counts;
        let total = *ptr.last().unwrap_or(&0) as usize;
        let mut rows = vec![0u32; total];
        let mut home = vec![false; total];
        for i in 0..self.n_rows() {
            let v = self.row(i);
            for &p in v.home {
                let at = cursor[p as usize] as usize;
                rows[at] = i as u32;
                home[at] = true;
                cursor[p as usize] += 1;
            }
            for &p in v.away {
                let at = cursor[p as usize] as usize;
                rows[at] = i as u32;
                home[at] = false;
                cursor[p as usize] += 1;
            }
        }
        RowIndex { ptr, rows, home }
    }

    pub fn summary(&self) -> DesignSummary {
        let count_kind = |k: PredictorKind| self.predictors.iter().filter(|p| p.kind == k).count();
        DesignSummary {
            rows: self.n_rows(),
            predictors: self.n_predictors(),
            teams: count_kind(PredictorKind::Team),
            players: count_kind(PredictorKind::Player),
            pairs: count_kind(PredictorKind::Pair),
            nonzero_entries: self.rows.home_idx.len() + self.rows.away_idx.len(),
            free_coefficients: self.free_coefficient_count(),
            groups: self
                .groups_present()
                .into_iter()
                .map(|(g, s)| format!("{}/{}", g.token(), s.token()))
                .collect(),
        }
    }

    /// Append pair predictors and extend every row where both members skate
    /// on the same side. Base predictor indices never move; new indices are
    /// appended past the current registry, keeping row lists sorted.
    pub fn attach_pairs(&mut self, pairs: &[PairCandidate]) -> Result<()> {
        // Validate the whole batch before touching the design.
        let mut members: Vec<(u32, u32)> = Vec::with_capacity(pairs.len());
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for cand in pairs {
            let label = cand.label();
            if self.by_label.contains_key(&label) || !seen.insert(label.clone()) {
                return Err(Error::Config(format!("pair '{label}' already attached")));
            }
            let a = self.index_of(&cand.first).ok_or_else(|| {
                Error::Config(format!("pair member '{}' is not a registered player", cand.first))
            })?;
            let b = self.index_of(&cand.second).ok_or_else(|| {
                Error::Config(format!("pair member '{}' is not a registered player", cand.second))
            })?;
            members.push((a.min(b), a.max(b)));
        }

        let mut member_to_pair: HashMap<(u32, u32), u32> = HashMap::new();
        for (cand, &(a, b)) in pairs.iter().zip(&members) {
            let label = cand.label();
            let idx = self.predictors.len() as u32;
            self.predictors.push(Predictor {
                label: label.clone(),
                kind: PredictorKind::Pair,
                group: Group::Pair,
            });
            self.by_label.insert(label, idx);
            self.pair_meta.push(PairMeta {
                predictor: idx,
                first: cand.first.clone(),
                second: cand.second.clone(),
                shared_shifts: cand.shared_shifts,
                shared_seconds: cand.shared_seconds,
            });
            member_to_pair.insert((a, b), idx);
        }

        let old = std::mem::take(&mut self.rows);
        let mut rows = RowStore::with_capacity(old.len());
        let mut scratch: Vec<u32> = Vec::new();
        for i in 0..old.len() {
            let h = old.home_ptr[i] as usize..old.home_ptr[i + 1] as usize;
            let a = old.away_ptr[i] as usize..old.away_ptr[i + 1] as usize;
            let mut home: Vec<u32> = old.home_idx[h].to_vec();
            let mut away: Vec<u32> = old.away_idx[a].to_vec();
            for side in [&mut home, &mut away] {
                scratch.clear();
                let players: Vec<u32> = side
                    .iter()
                    .copied()
                    .filter(|&p| self.predictors[p as usize].kind == PredictorKind::Player)
                    .collect();
                for x in 0..players.len() {
                    for y in x + 1..players.len() {
                        let key = (players[x].min(players[y]), players[x].max(players[y]));
                        if let Some(&pair) = member_to_pair.get(&key) {
                            scratch.push(pair);
                        }
                    }
                }
                scratch.sort_unstable();
                side.extend_from_slice(&scratch);
            }
            rows.push(
                &home,
                &away,
                old.duration[i],
                Outcome::from_i8(old.outcome[i]).expect("stored outcome is valid"),
                ScoreState::ALL[old.state[i] as usize],
            );
        }
        self.rows = rows;
        Ok(())
    }
}

/// Count same-side co-occurrence for every eligible pair (both forwards or
/// both defensemen; goaltenders never pair) and return the top `k` by shared
/// shift count, ties broken by lexicographic pair label.
pub fn enumerate_pairs(events: &[ShiftEvent], roster: &Roster, k: usize) -> Result<Vec<PairCandidate>> {
    let mut tally: BTreeMap<(String, String), (u64, f64)> = BTreeMap::new();
    for e in events {
        for skaters in [&e.home_skaters, &e.away_skaters] {
            for i in 0..skaters.len() {
                for j in i + 1..skaters.len() {
                    let (a, b) = if skaters[i] <= skaters[j] {
                        (&skaters[i], &skaters[j])
                    } else {
                        (&skaters[j], &skaters[i])
                    };
                    let pa = roster.position(a).ok_or_else(|| {
                        Error::data("roster", None, format!("skater '{a}' in events is missing from the roster"))
                    })?;
                    let pb = roster.position(b).ok_or_else(|| {
                        Error::data("roster", None, format!("skater '{b}' in events is missing from the roster"))
                    })?;
                    if pa == Position::Goaltender || pb == Position::Goaltender {
                        return Err(Error::data(
                            "roster",
                            None,
                            format!("goaltender '{}' is listed as a skater", if pa == Position::Goaltender { a } else { b }),
                        ));
                    }
                    let eligible = (pa.is_forward() && pb.is_forward())
                        || (pa == Position::Defense && pb == Position::Defense);
                    if !eligible {
                        continue;
                    }
                    let entry = tally.entry((a.clone(), b.clone())).or_insert((0, 0.0));
                    entry.0 += 1;
                    entry.1 += e.duration_s;
                }
            }
        }
    }
    let mut candidates: Vec<PairCandidate> = tally
        .into_iter()
        .map(|((first, second), (shifts, seconds))| PairCandidate {
            first,
            second,
            shared_shifts: shifts,
            shared_seconds: seconds,
        })
        .collect();
    candidates.sort_by(|x, y| {
        y.shared_shifts
            .cmp(&x.shared_shifts)
            .then_with(|| x.first.cmp(&y.first))
            .then_with(|| x.second.cmp(&y.second))
    });
    candidates.truncate(k);
    Ok(candidates)
}

/// Resolve events against a roster into a sparse design for the given model.
pub fn build_design(events: &[ShiftEvent], roster: &Roster, spec: ModelSpec) -> Result<Design> {
    let include_teams = match spec {
        ModelSpec::ScoreOnly | ModelSpec::Teams => false,
        ModelSpec::Players { include_teams } => include_teams,
        ModelSpec::PlayersPlusPairs { include_teams, .. } => include_teams,
    };
    let want_teams = include_teams || matches!(spec, ModelSpec::Teams);
    let want_players = matches!(
        spec,
        ModelSpec::Players { .. } | ModelSpec::PlayersPlusPairs { .. }
    );

    let mut predictors: Vec<Predictor> = Vec::new();
    let mut by_label: HashMap<String, u32> = HashMap::new();
    if want_teams {
        let teams: BTreeSet<&String> = events
            .iter()
            .flat_map(|e| [&e.home_team, &e.away_team])
            .collect();
        for t in teams {
            by_label.insert(t.clone(), predictors.len() as u32);
            predictors.push(Predictor { label: t.clone(), kind: PredictorKind::Team, group: Group::Team });
        }
    }
    if want_players {
        let mut ids: BTreeSet<&String> = BTreeSet::new();
        for e in events {
            ids.extend(e.home_skaters.iter());
            ids.extend(e.away_skaters.iter());
            ids.insert(&e.home_goalie);
            ids.insert(&e.away_goalie);
        }
        for id in ids {
            let info = roster.get(id).ok_or_else(|| {
                Error::data("roster", None, format!("player '{id}' in events is missing from the roster"))
            })?;
            by_label.insert(id.clone(), predictors.len() as u32);
            predictors.push(Predictor {
                label: id.clone(),
                kind: PredictorKind::Player,
                group: Group::from_position(info.position),
            });
        }
    }

    let mut rows = RowStore::with_capacity(events.len());
    let mut home: Vec<u32> = Vec::with_capacity(8);
    let mut away: Vec<u32> = Vec::with_capacity(8);
    for e in events {
        home.clear();
        away.clear();
        if want_teams {
            home.push(by_label[&e.home_team]);
            away.push(by_label[&e.away_team]);
        }
        if want_players {
            for id in e.home_skaters.iter().chain(std::iter::once(&e.home_goalie)) {
                home.push(by_label[id]);
            }
            for id in e.away_skaters.iter().chain(std::iter::once(&e.away_goalie)) {
                away.push(by_label[id]);
            }
        }
        home.sort_unstable();
        away.sort_unstable();
        rows.push(&home, &away, e.duration_s, e.outcome, e.score_state);
    }

    let mut design = Design {
        spec,
        predictors,
        by_label,
        pair_meta: Vec::new(),
        rows,
    };
    if let ModelSpec::PlayersPlusPairs { pair_count, .. } = spec {
        let pairs = enumerate_pairs(events, roster, pair_count)?;
        design.attach_pairs(&pairs)?;
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::parse_events;

    fn fixture() -> (Vec<ShiftEvent>, Roster) {
        let csv = "\
season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie
2008,G1,40,0,NYR,PIT,TIED,hC1;hL1;hR1;hD1;hD2,aC1;aL1;aR1;aD1;aD2,hG,aG
2008,G1,20,1,NYR,PIT,TIED,hC1;hL1;hR1;hD1;hD2,aC1;aL1;aR1;aD1;aD2,hG,aG
2008,G2,30,-1,PIT,NYR,LEAD,aC1;aL1;aR1;aD1;aD2,hC1;hL1;hR1;hD1;hD2,aG,hG
2008,G2,25,0,PIT,NYR,TRAIL,aC1;aL1;aR1;aD1;aD3,hC1;hL1;hR1;hD1;hD2,aG,hG
";
        let events = parse_events("test", csv.as_bytes()).unwrap();
        let mut roster = Roster::new();
        for (id, pos) in [
            ("hC1", Position::Center),
            ("hL1", Position::LeftWing),
            ("hR1", Position::RightWing),
            ("hD1", Position::Defense),
            ("hD2", Position::Defense),
            ("hG", Position::Goaltender),
            ("aC1", Position::Center),
            ("aL1", Position::LeftWing),
            ("aR1", Position::RightWing),
            ("aD1", Position::Defense),
            ("aD2", Position::Defense),
            ("aD3", Position::Defense),
            ("aG", Position::Goaltender),
        ] {
            roster.insert(id, id, pos);
        }
        (events, roster)
    }

    #[test]
    fn score_only_design_has_no_predictors() {
        let (events, roster) = fixture();
        let d = build_design(&events, &roster, ModelSpec::ScoreOnly).unwrap();
        assert_eq!(d.n_predictors(), 0);
        assert_eq!(d.n_rows(), 4);
        assert!(d.row(0).home.is_empty() && d.row(0).away.is_empty());
        assert_eq!(d.row(0).duration_s, 40.0);
        assert_eq!(d.free_coefficient_count(), 0);
    }

    #[test]
    fn teams_design_registers_sorted_teams() {
        let (events, roster) = fixture();
        let d = build_design(&events, &roster, ModelSpec::Teams).unwrap();
        assert_eq!(d.n_predictors(), 2);
        assert_eq!(d.predictor(0).label, "NYR");
        assert_eq!(d.predictor(1).label, "PIT");
        // Game G2 is hosted by PIT.
        assert_eq!(d.row(2).home, &[1]);
        assert_eq!(d.row(2).away, &[0]);
        assert_eq!(d.groups_present().len(), 2);
    }

    #[test]
    fn players_design_orders_teams_then_players() {
        let (events, roster) = fixture();
        let d = build_design(&events, &roster, ModelSpec::Players { include_teams: true }).unwrap();
        assert_eq!(d.predictor(0).kind, PredictorKind::Team);
        assert_eq!(d.predictor(1).kind, PredictorKind::Team);
        let labels: Vec<&str> = d.predictors()[2..].iter().map(|p| p.label.as_str()).collect();
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(labels, sorted, "players must be registered in id order");
        assert_eq!(d.n_predictors(), 2 + 13);
        // Each side: team + five skaters + goalie = 7 sorted entries.
        let row = d.row(0);
        assert_eq!(row.home.len(), 7);
        assert!(row.home.windows(2).all(|w| w[0] < w[1]));
        assert!(row.home.iter().all(|p| !row.away.contains(p)));
        // Goaltenders are the only omega-constrained predictors.
        let goalie = d.index_of("hG").unwrap();
        assert!(d.omega_constrained(goalie));
        assert!(!d.omega_constrained(d.index_of("hC1").unwrap()));
        assert_eq!(d.free_coefficient_count(), 2 * 15 - 2);
    }

    #[test]
    fn unknown_player_is_a_data_error() {
        let (events, roster) = fixture();
        let mut trimmed = Roster::new();
        for (id, info) in roster.iter().filter(|(id, _)| id.as_str() != "aD3") {
            trimmed.insert(id.clone(), info.name.clone(), info.position);
        }
        let err = build_design(&events, &trimmed, ModelSpec::Players { include_teams: false }).unwrap_err();
        assert!(err.to_string().contains("aD3"), "error should name the player: {err}");
    }

    #[test]
    fn registry_is_independent_of_event_order() {
        let (events, roster) = fixture();
        let spec = ModelSpec::Players { include_teams: true };
        let a = build_design(&events, &roster, spec).unwrap();
        let mut reversed = events.clone();
        reversed.reverse();
        let b = build_design(&reversed, &roster, spec).unwrap();
        assert_eq!(a.predictors(), b.predictors());
        let n = events.len();
        for i in 0..n {
            let ra = a.row(i);
            let rb = b.row(n - 1 - i);
            assert_eq!(ra.home, rb.home);
            assert_eq!(ra.away, rb.away);
        }
    }

    #[test]
    fn pair_enumeration_counts_and_filters() {
        let (events, roster) = fixture();
        let pairs = enumerate_pairs(&events, &roster, 1000).unwrap();
        // Per side per event: C(3 forwards, 2) + C(2 defense, 2) = 4 eligible pairs,
        // and no forward-defense mixtures at all.
        assert!(pairs.iter().all(|p| {
            let fa = roster.position(&p.first).unwrap().is_forward();
            let fb = roster.position(&p.second).unwrap().is_forward();
            fa == fb
        }));
        let top = &pairs[0];
        // Home forwards shared all four shifts (they also appear as away side in G2).
        assert_eq!(top.shared_shifts, 4);
        // Ties are ordered by label, so the first top-count pair is the
        // lexicographically smallest one.
        let tied: Vec<&PairCandidate> = pairs.iter().filter(|p| p.shared_shifts == 4).collect();
        for w in tied.windows(2) {
            assert!((w[0].first.clone(), w[0].second.clone()) <= (w[1].first.clone(), w[1].second.clone()));
        }
        // hD1+hD2 shared all 4 shifts; aD1+aD2 only 3 (aD3 replaced aD2 once).
        let find = |a: &str, b: &str| pairs.iter().find(|p| p.first == a && p.second == b).unwrap();
        assert_eq!(find("hD1", "hD2").shared_shifts, 4);
        assert_eq!(find("aD1", "aD2").shared_shifts, 3);
        assert_eq!(find("aD1", "aD3").shared_shifts, 1);
        assert_eq!(find("hD1", "hD2").shared_seconds, 115.0);
    }

    #[test]
    fn attach_pairs_appends_without_moving_base_indices() {
        let (events, roster) = fixture();
        let mut d = build_design(&events, &roster, ModelSpec::Players { include_teams: false }).unwrap();
        let base_labels: Vec<String> = d.predictors().iter().map(|p| p.label.clone()).collect();
        let n_base = d.n_predictors();
        let pairs = enumerate_pairs(&events, &roster, 3).unwrap();
        d.attach_pairs(&pairs).unwrap();
        assert_eq!(d.n_predictors(), n_base + 3);
        for (i, label) in base_labels.iter().enumerate() {
            assert_eq!(&d.predictor(i as u32).label, label);
        }
        assert_eq!(d.pair_meta().len(), 3);
        // Pair indices appear only on rows where both members share a side,
        // and row lists stay sorted.
        let pair_pred = d.pair_meta()[0].predictor;
        let (first, second) = (d.pair_meta()[0].first.clone(), d.pair_meta()[0].second.clone());
        let fi = d.index_of(&first).unwrap();
        let si = d.index_of(&second).unwrap();
        for row in d.rows() {
            for side in [row.home, row.away] {
                assert!(side.windows(2).all(|w| w[0] < w[1]));
                let has_pair = side.contains(&pair_pred);
                let has_both = side.contains(&fi) && side.contains(&si);
                assert_eq!(has_pair, has_both);
            }
        }
    }

    #[test]
    fn players_plus_pairs_spec_builds_in_one_shot() {
        let (events, roster) = fixture();
        let d = build_design(
            &events,
            &roster,
            ModelSpec::PlayersPlusPairs { include_teams: false, pair_count: 5 },
        )
        .unwrap();
        assert_eq!(d.pair_meta().len(), 5);
        let s = d.summary();
        assert_eq!(s.pairs, 5);
        assert_eq!(s.players, 13);
        assert_eq!(s.teams, 0);
        assert!(s.groups.contains(&"pair/offense".to_string()));
        assert!(s.groups.contains(&"goaltender/defense".to_string()));
        assert!(!s.groups.contains(&"goaltender/offense".to_string()));
    }

    #[test]
    fn row_index_inverts_the_rows() {
        let (events, roster) = fixture();
        let d = build_design(&events, &roster, ModelSpec::Players { include_teams: true }).unwrap();
        let idx = d.row_index();
        for p in 0..d.n_predictors() as u32 {
            for (row, is_home) in idx.rows_of(p) {
                let v = d.row(row as usize);
                if is_home {
                    assert!(v.home.contains(&p));
                } else {
                    assert!(v.away.contains(&p));
                }
            }
        }
        // Every appearance is indexed: total index size equals total nnz.
        let total: usize = (0..d.n_predictors() as u32).map(|p| idx.count(p)).sum();
        assert_eq!(total, d.summary().nonzero_entries);
        // aD2 sits out the last event (aD3 takes that shift).
        assert_eq!(idx.count(d.index_of("hD1").unwrap()), 4);
        assert_eq!(idx.count(d.index_of("aD2").unwrap()), 3);
    }

    #[test]
    fn state_tallies_accumulate_by_state() {
        let (events, roster) = fixture();
        let d = build_design(&events, &roster, ModelSpec::ScoreOnly).unwrap();
        let t = d.state_tallies();
        let tied = ScoreState::Tied.index();
        let lead = ScoreState::HomeLeading.index();
        let trail = ScoreState::HomeTrailing.index();
        assert_eq!(t.home_goals[tied], 1);
        assert_eq!(t.away_goals[lead], 1);
        assert_eq!(t.exposure_s[tied], 60.0);
        assert_eq!(t.exposure_s[lead], 30.0);
        assert_eq!(t.exposure_s[trail], 25.0);
    }
}
