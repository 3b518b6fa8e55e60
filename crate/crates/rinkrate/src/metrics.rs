//! Model comparison and derived ratings: DIC, held-out deviance, per-player
//! goal contributions above average, probability-of-best summaries, and the
//! per-draw variance decomposition by pooling group.

use serde::{Deserialize, Serialize};

use crate::design::{Design, Group, Side};
use crate::error::{Error, Result};
use crate::likelihood::{total_loglik, Coefficients};
use crate::numeric::quantile;
use crate::shrinkage::GroupShrinkage;

/// Deviance, the doubled negative log-likelihood. Exactly zero on an empty
/// design (an empty product of densities).
pub fn deviance(design: &Design, coeffs: &Coefficients) -> f64 {
    if design.n_rows() == 0 {
        return 0.0;
    }
    -2.0 * total_loglik(design, coeffs)
}

/// Held-out deviance at fixed coefficients (typically a posterior mean or a
/// penalized MLE), evaluated on a design built from withheld games.
pub fn oos_deviance(design: &Design, coeffs: &Coefficients) -> f64 {
    deviance(design, coeffs)
}

/// Deviance Information Criterion summary. Lower is better; the effective
/// parameter count measures how much the posterior actually moved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub effective_parameters: f64,
    pub dic: f64,
    pub scope: String,
}

pub fn dic_from_deviances(deviances: &[f64], deviance_at_mean: f64, scope: &str) -> Result<DicReport> {
    if deviances.is_empty() {
        return Err(Error::numerical("dic", "no posterior draws supplied"));
    }
    let mean_deviance = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let effective_parameters = mean_deviance - deviance_at_mean;
    let dic = mean_deviance + effective_parameters;
    if !dic.is_finite() {
        return Err(Error::numerical("dic", format!("nonfinite DIC from mean deviance {mean_deviance}")));
    }
    Ok(DicReport {
        mean_deviance,
        deviance_at_mean,
        effective_parameters,
        dic,
        scope: scope.to_string(),
    })
}

/// DIC over retained posterior draws, with the plug-in deviance evaluated at
/// the coefficient-wise posterior mean.
pub fn dic(design: &Design, draws: &[Coefficients], scope: &str) -> Result<DicReport> {
    if draws.is_empty() {
        return Err(Error::numerical("dic", "no posterior draws supplied"));
    }
    let deviances: Vec<f64> = draws.iter().map(|c| deviance(design, c)).collect();
    let refs: Vec<&Coefficients> = draws.iter().collect();
    let mean_coeffs = Coefficients::mean_of(&refs);
    dic_from_deviances(&deviances, deviance(design, &mean_coeffs), scope)
}

/// How the suppression half of a goal contribution is combined with the
/// scoring half. `Added` reproduces published contribution tables (a good
/// defender's prevented goals count in their favor); `LiteralSubtracted`
/// subtracts the same quantity instead, for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppedConvention {
    #[default]
    Added,
    LiteralSubtracted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalContribution {
    /// Goals scored above an average player's rate over the same seconds.
    pub scored: f64,
    /// Goals prevented relative to an average player (positive is good).
    pub stopped: f64,
    /// Combined contribution per the chosen convention.
    pub net: f64,
}

/// Net goal contribution of a player with scoring effect `omega` and
/// suppression effect `delta` over `seconds` of ice time, against a baseline
/// log-rate `r_base` (about -7.3, i.e. 2.4 goals per team-hour).
pub fn g_net(omega: f64, delta: f64, seconds: f64, r_base: f64, convention: StoppedConvention) -> GoalContribution {
    let base = r_base.exp();
    let scored = ((r_base + omega).exp() - base) * seconds;
    let stopped = ((r_base - delta).exp() - base) * seconds;
    let net = match convention {
        StoppedConvention::Added => scored + stopped,
        StoppedConvention::LiteralSubtracted => scored - stopped,
    };
    GoalContribution { scored, stopped, net }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionInput {
    pub label: String,
    pub omega: f64,
    pub delta: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    pub rank: usize,
    pub label: String,
    pub omega: f64,
    pub delta: f64,
    pub seconds: f64,
    pub scored: f64,
    pub stopped: f64,
    pub net: f64,
}

/// Rank players by net goal contribution, best first; ties keep input order.
pub fn contribution_table(
    inputs: &[ContributionInput],
    r_base: f64,
    convention: StoppedConvention,
) -> Vec<ContributionRow> {
    let mut rows: Vec<ContributionRow> = inputs
        .iter()
        .map(|inp| {
            let c = g_net(inp.omega, inp.delta, inp.seconds, r_base, convention);
            ContributionRow {
                rank: 0,
                label: inp.label.clone(),
                omega: inp.omega,
                delta: inp.delta,
                seconds: inp.seconds,
                scored: c.scored,
                stopped: c.stopped,
                net: c.net,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.net.partial_cmp(&a.net).expect("finite contributions"));
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

/// Probability that each entity attains the maximum value, across draws.
/// `draws[d][k]` is entity `k`'s value in draw `d`. Draw-level ties split
/// the credit equally, so the output always sums to one.
pub fn prob_best(draws: &[Vec<f64>]) -> Vec<f64> {
    assert!(!draws.is_empty(), "prob_best needs at least one draw");
    let n_entities = draws[0].len();
    let mut wins = vec![0.0f64; n_entities];
    for draw in draws {
        assert_eq!(draw.len(), n_entities, "ragged draw matrix");
        let max = draw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let top: Vec<usize> = (0..n_entities).filter(|&k| draw[k] == max).collect();
        let share = 1.0 / top.len() as f64;
        for k in top {
            wins[k] += share;
        }
    }
    let n = draws.len() as f64;
    wins.iter_mut().for_each(|w| *w /= n);
    wins
}

/// Central-interval summary of one scalar's draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub median: f64,
    pub lo50: f64,
    pub hi50: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl IntervalSummary {
    pub fn from_draws(xs: &[f64]) -> IntervalSummary {
        IntervalSummary {
            median: quantile(xs, 0.5),
            lo50: quantile(xs, 0.25),
            hi50: quantile(xs, 0.75),
            lo95: quantile(xs, 0.025),
            hi95: quantile(xs, 0.975),
        }
    }
}

/// Posterior variability of one pooling group-side: the spread (standard
/// deviation across member coefficients, recomputed per draw) and the
/// sparsity fraction of that group's shrinkage prior per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilitySummary {
    pub group: Group,
    pub side: Side,
    pub members: usize,
    pub spread: IntervalSummary,
    pub laplace_fraction: IntervalSummary,
}

/// Decompose coefficient variability by pooling group and side. Each retained
/// draw contributes one spread value (the standard deviation of that draw's
/// member coefficients) and one sparsity fraction (from that draw's shrinkage
/// parameters via the total-shrinkage reparameterization).
pub fn variance_decomposition(
    design: &Design,
    coeff_draws: &[Coefficients],
    shrink_draws: &[GroupShrinkage],
) -> Result<Vec<VariabilitySummary>> {
    if coeff_draws.is_empty() || coeff_draws.len() != shrink_draws.len() {
        return Err(Error::numerical(
            "variance_decomposition",
            format!(
                "need matching non-empty draws, got {} coefficient and {} shrinkage draws",
                coeff_draws.len(),
                shrink_draws.len()
            ),
        ));
    }
    let mut out = Vec::new();
    for (group, side) in design.groups_present() {
        let members: Vec<u32> = design
            .predictors_in_group(group)
            .into_iter()
            .filter(|&p| side == Side::Defense || !design.omega_constrained(p))
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut spreads = Vec::with_capacity(coeff_draws.len());
        let mut fractions = Vec::with_capacity(coeff_draws.len());
        for (coeffs, shrink) in coeff_draws.iter().zip(shrink_draws) {
            let values: Vec<f64> = members
                .iter()
                .map(|&p| match side {
                    Side::Offense => coeffs.omega(p),
                    Side::Defense => coeffs.delta(p),
                })
                .collect();
            spreads.push(crate::numeric::sample_sd(&values));
            let penalty = shrink.require(group, side)?;
            fractions.push(penalty.total_shrinkage().1);
        }
        out.push(VariabilitySummary {
            group,
            side,
            members: members.len(),
            spread: IntervalSummary::from_draws(&spreads),
            laplace_fraction: IntervalSummary::from_draws(&fractions),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, ModelSpec};
    use crate::events::{parse_events, Position, Roster};
    use crate::shrinkage::Penalty;
    use approx::assert_relative_eq;

    const R_BASE: f64 = -7.3;

    #[test]
    fn dic_arithmetic_matches_hand_example() {
        let report = dic_from_deviances(&[100.0, 104.0], 101.0, "in_sample").unwrap();
        assert_eq!(report.mean_deviance, 102.0);
        assert_eq!(report.effective_parameters, 1.0);
        assert_eq!(report.dic, 103.0);
        // The identity DIC = 2*mean - plug-in holds by construction.
        assert_eq!(report.dic, 2.0 * report.mean_deviance - report.deviance_at_mean);
        assert!(dic_from_deviances(&[], 0.0, "x").is_err());
    }

    fn tiny_design() -> Design {
        let csv = "\
season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie
2008,G1,40,0,NYR,PIT,TIED,h1;h2;h3;h4;h5,a1;a2;a3;a4;a5,hg,ag
2008,G1,25,1,NYR,PIT,TIED,h1;h2;h3;h4;h5,a1;a2;a3;a4;a5,hg,ag
";
        let events = parse_events("inline", csv.as_bytes()).unwrap();
        build_design(&events, &Roster::new(), ModelSpec::Teams).unwrap()
    }

    #[test]
    fn identical_draws_have_zero_effective_parameters() {
        let design = tiny_design();
        let c = Coefficients::with_intercepts(design.n_predictors(), R_BASE);
        let report = dic(&design, &[c.clone(), c.clone(), c], "in_sample").unwrap();
        assert_relative_eq!(report.effective_parameters, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.dic, report.deviance_at_mean, max_relative = 1e-12);
    }

    #[test]
    fn empty_test_set_has_exactly_zero_deviance() {
        let events = parse_events(
            "inline",
            "season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie\n".as_bytes(),
        )
        .unwrap();
        let design = build_design(&events, &Roster::new(), ModelSpec::ScoreOnly).unwrap();
        let c = Coefficients::with_intercepts(0, R_BASE);
        assert_eq!(oos_deviance(&design, &c).to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn contribution_fixtures_land_within_half_a_percent() {
        // Goaltender with a strong suppression effect and heavy minutes.
        let lundqvist = g_net(0.0, -0.186, 928_100.0, R_BASE, StoppedConvention::Added);
        assert_relative_eq!(lundqvist.stopped, 127.80, max_relative = 5e-3);
        assert_eq!(lundqvist.scored, 0.0);
        // Two-way forward: strong scoring, slightly negative suppression.
        let datsyuk = g_net(0.392, -0.0711, 320_200.0, R_BASE, StoppedConvention::Added);
        assert_relative_eq!(datsyuk.scored, 103.70, max_relative = 5e-3);
        assert_relative_eq!(datsyuk.stopped, 15.93, max_relative = 5e-3);
        // High-scoring forward who leaks goals the other way.
        let crosby = g_net(0.474, 0.0855, 240_400.0, R_BASE, StoppedConvention::Added);
        assert_relative_eq!(crosby.scored, 98.37, max_relative = 5e-3);
        assert_relative_eq!(crosby.stopped, -13.32, max_relative = 5e-3);
        assert_relative_eq!(crosby.net, crosby.scored + crosby.stopped, max_relative = 1e-12);
    }

    #[test]
    fn zero_effects_contribute_nothing() {
        let c = g_net(0.0, 0.0, 1e6, R_BASE, StoppedConvention::Added);
        assert_eq!((c.scored, c.stopped, c.net), (0.0, 0.0, 0.0));
    }

    #[test]
    fn literal_convention_flips_the_stopped_sign_in_the_net() {
        let added = g_net(0.2, -0.1, 1e5, R_BASE, StoppedConvention::Added);
        let literal = g_net(0.2, -0.1, 1e5, R_BASE, StoppedConvention::LiteralSubtracted);
        assert_eq!(added.scored, literal.scored);
        assert_eq!(added.stopped, literal.stopped);
        assert_relative_eq!(literal.net, added.scored - added.stopped, max_relative = 1e-12);
    }

    #[test]
    fn net_contribution_is_monotone_in_each_effect() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..20 {
            let omega = -0.5 + 0.05 * k as f64;
            let c = g_net(omega, 0.1, 5e5, R_BASE, StoppedConvention::Added);
            assert!(c.net > prev);
            prev = c.net;
        }
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let delta = -0.5 + 0.05 * k as f64;
            let c = g_net(0.1, delta, 5e5, R_BASE, StoppedConvention::Added);
            assert!(c.net < prev);
            prev = c.net;
        }
    }

    #[test]
    fn small_effects_linearize_to_rate_times_net_rating() {
        let t = 3.6e5;
        let base = R_BASE.exp();
        // Opposite-signed pairs (scorer who also suppresses): the linear
        // approximation through the net rating is good to 2.6% relative.
        for &omega in &[0.01, 0.03, 0.05] {
            for &delta in &[-0.05, -0.02, -0.005] {
                let c = g_net(omega, delta, t, R_BASE, StoppedConvention::Added);
                let linear = base * (omega - delta) * t;
                assert_relative_eq!(c.net, linear, max_relative = 0.026);
            }
        }
        // Arbitrary sign mixes obey the absolute second-order bound.
        for &omega in &[-0.05, -0.01, 0.0, 0.02, 0.05] {
            for &delta in &[-0.05, 0.0, 0.01, 0.05] {
                let c = g_net(omega, delta, t, R_BASE, StoppedConvention::Added);
                let linear = base * (omega - delta) * t;
                let bound = 0.026 * base * (omega.abs() + delta.abs()) * t;
                assert!((c.net - linear).abs() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn contribution_table_ranks_by_net_descending() {
        let inputs = vec![
            ContributionInput { label: "mid".into(), omega: 0.1, delta: 0.0, seconds: 1e5 },
            ContributionInput { label: "star".into(), omega: 0.4, delta: -0.1, seconds: 1e5 },
            ContributionInput { label: "drag".into(), omega: -0.2, delta: 0.2, seconds: 1e5 },
        ];
        let rows = contribution_table(&inputs, R_BASE, StoppedConvention::Added);
        let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, vec!["star", "mid", "drag"]);
        assert_eq!(rows[0].rank, 1);
        assert_eq!(rows[2].rank, 3);
        assert!(rows[0].net > rows[1].net && rows[1].net > rows[2].net);
    }

    #[test]
    fn prob_best_splits_ties_and_sums_to_one() {
        assert_eq!(prob_best(&[vec![3.0]]), vec![1.0]);
        // Mirrored ratings across two draws: a coin flip.
        let p = prob_best(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(p, vec![0.5, 0.5]);
        // A three-way tie in one of two draws splits that draw's credit.
        let p = prob_best(&[vec![2.0, 2.0, 2.0], vec![0.0, 1.0, -1.0]]);
        assert_relative_eq!(p[0], 1.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(p[1], 1.0 / 6.0 + 0.5, max_relative = 1e-12);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn variance_decomposition_reports_groups_with_their_fractions() {
        let csv = "\
season,game_id,duration_s,outcome,home_team,away_team,score_state,home_skaters,away_skaters,home_goalie,away_goalie
2008,G1,40,0,NYR,PIT,TIED,hC;hL;hR;hD1;hD2,aC;aL;aR;aD1;aD2,hG,aG
";
        let events = parse_events("inline", csv.as_bytes()).unwrap();
        let mut roster = Roster::new();
        for (id, pos) in [
            ("hC", Position::Center),
            ("hL", Position::LeftWing),
            ("hR", Position::RightWing),
            ("hD1", Position::Defense),
            ("hD2", Position::Defense),
            ("hG", Position::Goaltender),
            ("aC", Position::Center),
            ("aL", Position::LeftWing),
            ("aR", Position::RightWing),
            ("aD1", Position::Defense),
            ("aD2", Position::Defense),
            ("aG", Position::Goaltender),
        ] {
            roster.insert(id, id, pos);
        }
        let design = build_design(&events, &roster, ModelSpec::Players { include_teams: false }).unwrap();
        let mut coeffs = Coefficients::zeros(design.n_predictors());
        for p in 0..design.n_predictors() as u32 {
            coeffs.set_delta(p, 0.1 * p as f64);
        }
        let shrink = GroupShrinkage::uniform_for(&design, Penalty::L1 { lambda: 2.0 });
        let draws = vec![coeffs.clone(), coeffs];
        let shrinks = vec![shrink.clone(), shrink];
        let out = variance_decomposition(&design, &draws, &shrinks).unwrap();
        // Goaltenders appear once (defense side only).
        let goalie_rows: Vec<_> = out.iter().filter(|v| v.group == Group::Goaltender).collect();
        assert_eq!(goalie_rows.len(), 1);
        assert_eq!(goalie_rows[0].side, Side::Defense);
        assert_eq!(goalie_rows[0].members, 2);
        // Constant draws give zero-width intervals; deltas vary, omegas are all zero.
        let defense_off = out
            .iter()
            .find(|v| v.group == Group::Defense && v.side == Side::Offense)
            .unwrap();
        assert_eq!(defense_off.spread.median, 0.0);
        let defense_def = out
            .iter()
            .find(|v| v.group == Group::Defense && v.side == Side::Defense)
            .unwrap();
        assert!(defense_def.spread.median > 0.0);
        assert_eq!(defense_def.spread.lo95, defense_def.spread.hi95);
        // Pure Laplace shrinkage sits at sparsity fraction one.
        assert_eq!(defense_def.laplace_fraction.median, 1.0);
        let bad = variance_decomposition(&design, &draws, &[]);
        assert!(bad.is_err());
    }
}
