//! Censored competing-clocks likelihood. Each interval races two exponential
//! goal clocks (home and away) against a censoring time `t`:
//!
//! ```text
//! lambda_h = exp( r_h[state] + sum_{p on home ice} omega_p + sum_{p on away ice} delta_p )
//! lambda_a = exp( r_a[state] + sum_{p on away ice} omega_p + sum_{p on home ice} delta_p )
//!
//! loglik   = I(home goal) * ln lambda_h
//!          + I(away goal) * ln lambda_a
//!          - (lambda_h + lambda_a) * T          with T = observed duration
//! ```
//!
//! `omega` is a scoring coefficient (raises its own side's clock), `delta` a
//! suppression coefficient (enters the opposing side's clock, so negative
//! values mean stronger defense). The log-likelihood is concave in all
//! coefficients jointly.
//!
//! Sums over rows are chunked at a fixed size and combined in chunk order,
//! so totals and gradients are bit-identical across thread counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Design, RowView};
use crate::events::Outcome;

/// Fixed row-chunk size for parallel reductions. Partial sums are computed
/// sequentially within a chunk and combined in chunk order, which keeps the
/// result independent of the number of worker threads.
const CHUNK_ROWS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoefPair {
    pub omega: f64,
    pub delta: f64,
}

/// Full coefficient vector for a design: six score-state intercepts plus an
/// (omega, delta) pair per predictor. Also reused as the gradient container,
/// since the gradient lives in the same space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub home_intercepts: [f64; 3],
    pub away_intercepts: [f64; 3],
    coef: Vec<CoefPair>,
}

impl Coefficients {
    pub fn zeros(n_predictors: usize) -> Self {
        Coefficients {
            home_intercepts: [0.0; 3],
            away_intercepts: [0.0; 3],
            coef: vec![CoefPair::default(); n_predictors],
        }
    }

    /// Zero coefficients with every intercept set to `log_rate`.
    pub fn with_intercepts(n_predictors: usize, log_rate: f64) -> Self {
        let mut c = Self::zeros(n_predictors);
        c.home_intercepts = [log_rate; 3];
        c.away_intercepts = [log_rate; 3];
        c
    }

    pub fn n_predictors(&self) -> usize {
        self.coef.len()
    }

    pub fn coef(&self) -> &[CoefPair] {
        &self.coef
    }

    pub fn omega(&self, p: u32) -> f64 {
        self.coef[p as usize].omega
    }

    pub fn delta(&self, p: u32) -> f64 {
        self.coef[p as usize].delta
    }

    pub fn set_omega(&mut self, p: u32, v: f64) {
        self.coef[p as usize].omega = v;
    }

    pub fn set_delta(&mut self, p: u32, v: f64) {
        self.coef[p as usize].delta = v;
    }

    /// Net rating: scoring minus suppression, so defense-heavy contributors
    /// with negative delta gain from both halves.
    pub fn net(&self, p: u32) -> f64 {
        self.coef[p as usize].omega - self.coef[p as usize].delta
    }

    /// self += scale * other, over every slot including intercepts.
    pub fn add_scaled(&mut self, other: &Coefficients, scale: f64) {
        assert_eq!(self.coef.len(), other.coef.len());
        for i in 0..3 {
            self.home_intercepts[i] += scale * other.home_intercepts[i];
            self.away_intercepts[i] += scale * other.away_intercepts[i];
        }
        for (a, b) in self.coef.iter_mut().zip(&other.coef) {
            a.omega += scale * b.omega;
            a.delta += scale * b.delta;
        }
    }

    pub fn max_abs_difference(&self, other: &Coefficients) -> f64 {
        assert_eq!(self.coef.len(), other.coef.len());
        let mut d = 0.0f64;
        for i in 0..3 {
            d = d.max((self.home_intercepts[i] - other.home_intercepts[i]).abs());
            d = d.max((self.away_intercepts[i] - other.away_intercepts[i]).abs());
        }
        for (a, b) in self.coef.iter().zip(&other.coef) {
            d = d.max((a.omega - b.omega).abs()).max((a.delta - b.delta).abs());
        }
        d
    }

    /// Coefficient-wise mean of several draws (used for plug-in deviance).
    pub fn mean_of(draws: &[&Coefficients]) -> Coefficients {
        assert!(!draws.is_empty());
        let mut acc = Coefficients::zeros(draws[0].n_predictors());
        for d in draws {
            acc.add_scaled(d, 1.0);
        }
        let w = 1.0 / draws.len() as f64;
        for i in 0..3 {
            acc.home_intercepts[i] *= w;
            acc.away_intercepts[i] *= w;
        }
        for c in acc.coef.iter_mut() {
            c.omega *= w;
            c.delta *= w;
        }
        acc
    }
}

/// Linear predictor sums for one row, excluding intercepts:
/// home exponent gets home omegas + away deltas, away exponent the mirror.
#[inline]
pub fn linear_parts(coef: &[CoefPair], row: &RowView<'_>) -> (f64, f64) {
    let mut home_sum = 0.0;
    let mut away_sum = 0.0;
    for &p in row.home {
        let c = coef[p as usize];
        home_sum += c.omega;
        away_sum += c.delta;
    }
    for &p in row.away {
        let c = coef[p as usize];
        away_sum += c.omega;
        home_sum += c.delta;
    }
    (home_sum, away_sum)
}

/// Goal rates (per second) for one row.
#[inline]
pub fn rates(coeffs: &Coefficients, row: &RowView<'_>) -> (f64, f64) {
    let (hs, asum) = linear_parts(&coeffs.coef, row);
    let s = row.state.index();
    (
        (coeffs.home_intercepts[s] + hs).exp(),
        (coeffs.away_intercepts[s] + asum).exp(),
    )
}

/// Log-density of one observed interval under competing exponential clocks
/// censored at the interval end.
#[inline]
pub fn event_loglik(lambda_h: f64, lambda_a: f64, outcome: Outcome, duration_s: f64) -> f64 {
    let goal_term = match outcome {
        Outcome::HomeGoal => lambda_h.ln(),
        Outcome::AwayGoal => lambda_a.ln(),
        Outcome::NoGoal => 0.0,
    };
    goal_term - (lambda_h + lambda_a) * duration_s
}

/// Total log-likelihood over a design; bit-reproducible across thread counts.
pub fn total_loglik(design: &Design, coeffs: &Coefficients) -> f64 {
    let n = design.n_rows();
    if n == 0 {
        return 0.0;
    }
    let n_chunks = n.div_ceil(CHUNK_ROWS);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK_ROWS;
            let hi = ((c + 1) * CHUNK_ROWS).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                let row = design.row(i);
                let (lh, la) = rates(coeffs, &row);
                acc += event_loglik(lh, la, row.outcome, row.duration_s);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Exact gradient of the total log-likelihood, in coefficient space.
/// Structurally pinned entries (goaltender omegas) are zeroed so downstream
/// updates never move them. Deterministic across thread counts.
pub fn gradient(design: &Design, coeffs: &Coefficients) -> Coefficients {
    let n = design.n_rows();
    let np = design.n_predictors();
    let n_chunks = n.div_ceil(CHUNK_ROWS).max(1);
    let partials: Vec<Coefficients> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = Coefficients::zeros(np);
            let lo = c * CHUNK_ROWS;
            let hi = ((c + 1) * CHUNK_ROWS).min(n);
            for i in lo..hi {
                let row = design.row(i);
                let (lh, la) = rates(coeffs, &row);
                let s = row.state.index();
                let factor_h = match row.outcome {
                    Outcome::HomeGoal => 1.0,
                    _ => 0.0,
                } - lh * row.duration_s;
                let factor_a = match row.outcome {
                    Outcome::AwayGoal => 1.0,
                    _ => 0.0,
                } - la * row.duration_s;
                g.home_intercepts[s] += factor_h;
                g.away_intercepts[s] += factor_a;
                for &p in row.home {
                    let cp = &mut g.coef[p as usize];
                    cp.omega += factor_h;
                    cp.delta += factor_a;
                }
                for &p in row.away {
                    let cp = &mut g.coef[p as usize];
                    cp.omega += factor_a;
                    cp.delta += factor_h;
                }
            }
            g
        })
        .collect();
    let mut total = Coefficients::zeros(np);
    for part in &partials {
        total.add_scaled(part, 1.0);
    }
    for p in 0..np as u32 {
        if design.omega_constrained(p) {
            total.set_omega(p, 0.0);
        }
    }
    total
}

/// Central finite-difference gradient, for diagnostics and validation runs.
/// Matches `gradient`'s convention of zeroing structurally pinned entries.
pub fn finite_difference_gradient(design: &Design, coeffs: &Coefficients, h: f64) -> Coefficients {
    let np = design.n_predictors();
    let mut g = Coefficients::zeros(np);
    let mut probe = coeffs.clone();
    let central = |probe: &mut Coefficients, get_set: &mut dyn FnMut(&mut Coefficients, f64), base: f64| -> f64 {
        get_set(probe, base + h);
        let up = total_loglik(design, probe);
        get_set(probe, base - h);
        let down = total_loglik(design, probe);
        get_set(probe, base);
        (up - down) / (2.0 * h)
    };
    for s in 0..3 {
        let base = coeffs.home_intercepts[s];
        g.home_intercepts[s] = central(&mut probe, &mut |c, v| c.home_intercepts[s] = v, base);
        let base = coeffs.away_intercepts[s];
        g.away_intercepts[s] = central(&mut probe, &mut |c, v| c.away_intercepts[s] = v, base);
    }
    for p in 0..np as u32 {
        if !design.omega_constrained(p) {
            let base = coeffs.omega(p);
            g.set_omega(p, central(&mut probe, &mut |c, v| c.set_omega(p, v), base));
        }
        let base = coeffs.delta(p);
        g.set_delta(p, central(&mut probe, &mut |c, v| c.set_delta(p, v), base));
    }
    g
}

/// Per-row linear predictor sums for the whole design, used to seed
/// incremental samplers.
pub fn linear_sums(design: &Design, coeffs: &Coefficients) -> (Vec<f64>, Vec<f64>) {
    let n = design.n_rows();
    let mut home = vec![0.0; n];
    let mut away = vec![0.0; n];
    for i in 0..n {
        let (h, a) = linear_parts(coeffs.coef(), &design.row(i));
        home[i] = h;
        away[i] = a;
    }
    (home, away)
}

/// Re-index coefficients fitted against one design onto another by predictor
/// label. Predictors absent from the source keep a zero effect; intercepts
/// carry over unchanged. Used to score held-out designs, whose predictor set
/// can differ from the training design's.
pub fn transfer_coefficients(
    from: &Design,
    coeffs: &Coefficients,
    to: &Design,
) -> Coefficients {
    let mut out = Coefficients::zeros(to.n_predictors());
    out.home_intercepts = coeffs.home_intercepts;
    out.away_intercepts = coeffs.away_intercepts;
    for (p, pred) in to.predictors().iter().enumerate() {
        if let Some(q) = from.index_of(&pred.label) {
            out.set_omega(p as u32, coeffs.omega(q));
            out.set_delta(p as u32, coeffs.delta(q));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, Design, ModelSpec};
    use crate::events::{parse_events, Position, Roster, ScoreState, ShiftEvent};
    use approx::assert_relative_eq;
    use rand::prelude::*;

    const BASE: f64 = -7.3;

    fn one_event_design(outcome: i8, duration: f64) -> Design {
        let csv = format!(
            "season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie\n\
             2008,G1,{duration},{outcome},H,A,TIED,h1;h2;h3;h4;h5,a1;a2;a3;a4;a5,hg,ag\n"
        );
        let events = parse_events("test", csv.as_bytes()).unwrap();
        build_design(&events, &Roster::new(), ModelSpec::ScoreOnly).unwrap()
    }

    #[test]
    fn baseline_rate_is_about_two_and_a_half_goals_per_hour() {
        let lambda = BASE.exp();
        assert_relative_eq!(lambda, 6.755387751938441e-4, max_relative = 1e-12);
        assert_relative_eq!(lambda * 3600.0, 2.43, max_relative = 2e-3);
    }

    #[test]
    fn censored_event_loglik_matches_closed_form() {
        let d = one_event_design(0, 40.0);
        let c = Coefficients::with_intercepts(0, BASE);
        let ll = total_loglik(&d, &c);
        // -(lambda_h + lambda_a) * 40 with both rates at exp(-7.3).
        assert_relative_eq!(ll, -0.05404310201550753, max_relative = 1e-12);
    }

    #[test]
    fn goal_event_adds_the_log_rate() {
        let d = one_event_design(1, 40.0);
        let c = Coefficients::with_intercepts(0, BASE);
        assert_relative_eq!(total_loglik(&d, &c), -7.354043102015507, max_relative = 1e-12);
        let d = one_event_design(-1, 40.0);
        assert_relative_eq!(total_loglik(&d, &c), -7.354043102015507, max_relative = 1e-12);
    }

    #[test]
    fn intercept_gradient_matches_hand_value() {
        let d = one_event_design(0, 40.0);
        let c = Coefficients::with_intercepts(0, BASE);
        let g = gradient(&d, &c);
        // d/dr_h = I(home goal) - lambda_h * T = -exp(-7.3)*40.
        assert_relative_eq!(
            g.home_intercepts[ScoreState::Tied.index()],
            -0.027021551007753766,
            max_relative = 1e-12
        );
        assert_eq!(g.home_intercepts[ScoreState::HomeLeading.index()], 0.0);
    }

    fn random_instance(rng: &mut impl Rng, n_events: usize, n_players_side: usize) -> (Design, Coefficients) {
        let mut roster = Roster::new();
        for side in ["h", "a"] {
            for k in 0..n_players_side {
                let pos = match k % 5 {
                    0 => Position::Center,
                    1 => Position::LeftWing,
                    2 => Position::RightWing,
                    _ => Position::Defense,
                };
                let id = format!("{side}{k:02}");
                roster.insert(&id, &id, pos);
            }
            let id = format!("{side}G");
            roster.insert(&id, &id, Position::Goaltender);
        }
        let mut events = Vec::new();
        for i in 0..n_events {
            let mut home: Vec<String> = Vec::new();
            let mut pool: Vec<usize> = (0..n_players_side).collect();
            for _ in 0..5 {
                let at = rng.random_range(0..pool.len());
                home.push(format!("h{:02}", pool.swap_remove(at)));
            }
            let mut away: Vec<String> = Vec::new();
            let mut pool: Vec<usize> = (0..n_players_side).collect();
            for _ in 0..5 {
                let at = rng.random_range(0..pool.len());
                away.push(format!("a{:02}", pool.swap_remove(at)));
            }
            let r: f64 = rng.random();
            let outcome = if r < 0.05 {
                1
            } else if r < 0.10 {
                -1
            } else {
                0
            };
            let state = ["LEAD", "TIED", "TRAIL"][rng.random_range(0..3)];
            events.push(ShiftEvent {
                season: "S".into(),
                game_id: format!("G{}", i / 50),
                duration_s: 1.0 + 60.0 * rng.random::<f64>(),
                outcome: crate::events::Outcome::from_i8(outcome).unwrap(),
                home_team: "H".into(),
                away_team: "A".into(),
                score_state: ScoreState::from_token(state).unwrap(),
                home_skaters: home,
                away_skaters: away,
                home_goalie: "hG".into(),
                away_goalie: "aG".into(),
            });
        }
        let design = build_design(&events, &roster, ModelSpec::Players { include_teams: true }).unwrap();
        let mut coeffs = Coefficients::with_intercepts(design.n_predictors(), BASE);
        for s in 0..3 {
            coeffs.home_intercepts[s] += 0.3 * (rng.random::<f64>() - 0.5);
            coeffs.away_intercepts[s] += 0.3 * (rng.random::<f64>() - 0.5);
        }
        for p in 0..design.n_predictors() as u32 {
            if !design.omega_constrained(p) {
                coeffs.set_omega(p, 0.4 * (rng.random::<f64>() - 0.5));
            }
            coeffs.set_delta(p, 0.4 * (rng.random::<f64>() - 0.5));
        }
        (design, coeffs)
    }

    #[test]
    fn exact_gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let (design, coeffs) = random_instance(&mut rng, 200, 9);
            let exact = gradient(&design, &coeffs);
            let numeric = finite_difference_gradient(&design, &coeffs, 1e-5);
            let scale = 1.0f64.max(exact_abs_max(&exact));
            assert!(
                exact.max_abs_difference(&numeric) / scale < 1e-6,
                "gradient mismatch beyond tolerance"
            );
        }
    }

    fn exact_abs_max(c: &Coefficients) -> f64 {
        let zero = Coefficients::zeros(c.n_predictors());
        c.max_abs_difference(&zero)
    }

    #[test]
    fn goalie_omega_gradient_is_pinned_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (design, coeffs) = random_instance(&mut rng, 100, 7);
        let g = gradient(&design, &coeffs);
        let goalie = design.index_of("hG").unwrap();
        assert_eq!(g.omega(goalie), 0.0);
        assert_ne!(g.delta(goalie), 0.0);
    }

    #[test]
    fn loglik_is_concave_along_random_segments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let (design, a) = random_instance(&mut rng, 150, 8);
            let mut b = a.clone();
            for p in 0..design.n_predictors() as u32 {
                if !design.omega_constrained(p) {
                    b.set_omega(p, a.omega(p) + 0.6 * (rng.random::<f64>() - 0.5));
                }
                b.set_delta(p, a.delta(p) + 0.6 * (rng.random::<f64>() - 0.5));
            }
            let mut mid = a.clone();
            mid.add_scaled(&b, 1.0);
            let half = {
                let mut m = Coefficients::zeros(design.n_predictors());
                m.add_scaled(&mid, 0.5);
                m
            };
            let lhs = total_loglik(&design, &half);
            let rhs = 0.5 * (total_loglik(&design, &a) + total_loglik(&design, &b));
            assert!(lhs >= rhs - 1e-9, "midpoint value {lhs} below chord {rhs}");
        }
    }

    #[test]
    fn totals_are_bit_identical_across_thread_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let (design, coeffs) = random_instance(&mut rng, 20_000, 12);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| total_loglik(&design, &coeffs));
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| total_loglik(&design, &coeffs));
        assert_eq!(single.to_bits(), four.to_bits());
        let g1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| gradient(&design, &coeffs));
        let g4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| gradient(&design, &coeffs));
        assert_eq!(g1.max_abs_difference(&g4), 0.0);
    }

    #[test]
    fn home_intercept_shift_trades_exactly_against_home_only_team_coefficients() {
        // Teams that only ever host: adding c to the tied home intercept and
        // subtracting c from each hosting team's omega leaves every rate,
        // hence the total log-likelihood, unchanged.
        let header = "season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie";
        let mut lines = vec![header.to_string()];
        for (i, (h, a)) in [("H1", "A1"), ("H1", "A2"), ("H2", "A1"), ("H2", "A2")]
            .iter()
            .enumerate()
        {
            lines.push(format!(
                "2008,G{i},{},{},{h},{a},TIED,x1;x2;x3;x4;x5,y1;y2;y3;y4;y5,xg,yg",
                20 + 5 * i,
                [0, 1, -1, 0][i]
            ));
        }
        let events = parse_events("test", lines.join("\n").as_bytes()).unwrap();
        let design = build_design(&events, &Roster::new(), ModelSpec::Teams).unwrap();
        let mut coeffs = Coefficients::with_intercepts(design.n_predictors(), BASE);
        for p in 0..design.n_predictors() as u32 {
            coeffs.set_omega(p, 0.1 * (p as f64 + 1.0));
            coeffs.set_delta(p, -0.05 * (p as f64 + 1.0));
        }
        let before = total_loglik(&design, &coeffs);
        let shift = 0.37;
        let mut moved = coeffs.clone();
        moved.home_intercepts[ScoreState::Tied.index()] += shift;
        for label in ["H1", "H2"] {
            let p = design.index_of(label).unwrap();
            moved.set_omega(p, coeffs.omega(p) - shift);
        }
        let after = total_loglik(&design, &moved);
        assert_relative_eq!(before, after, max_relative = 1e-12);
    }
}
