//! The eight subcommand bodies. Each one reads what it needs, writes its
//! outputs under the run directory, registers everything in the manifest,
//! and prints a short human summary to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::{build_design, Design, ModelSpec, PredictorKind};
use crate::error::{Error, Result};
use crate::events::{
    load_events, load_roster, split_by_game, summarize, EventCounts, Roster, ScoreState, ShiftEvent,
};
use crate::fit::{fit_penalized, kkt_check, mvp_cascade, pair_selection};
use crate::likelihood::{finite_difference_gradient, gradient, transfer_coefficients, Coefficients};
use crate::mcmc::{
    run_chains, save_samples, summarize_posterior, validate_posterior_quantiles, CalibrationReport,
};
use crate::metrics::{deviance, dic, contribution_table, oos_deviance, ContributionInput, DicReport};
use crate::shrinkage::{GroupShrinkage, Penalty};
use crate::simulate::{sample_event, synthetic_league, team_goal_totals};

use super::config::{ManifestBuilder, RunConfig};

fn kind_token(kind: PredictorKind) -> &'static str {
    match kind {
        PredictorKind::Team => "team",
        PredictorKind::Player => "player",
        PredictorKind::Pair => "pair",
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numerical("json", e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_fail(path: &Path, e: impl ToString) -> Error {
    Error::data(&path.display().to_string(), None, e.to_string())
}

/// Seconds of ice time per predictor: summed shift durations over the rows
/// where it appears on either side.
fn exposure_seconds(design: &Design) -> Vec<f64> {
    let durations: Vec<f64> = design.rows().map(|r| r.duration_s).collect();
    let index = design.row_index();
    (0..design.n_predictors() as u32)
        .map(|p| index.rows_of(p).map(|(row, _)| durations[row as usize]).sum())
        .collect()
}

#[derive(Serialize)]
struct CoefficientRow<'a> {
    label: &'a str,
    group: &'a str,
    kind: &'a str,
    omega: f64,
    delta: f64,
    net: f64,
    seconds: f64,
}

fn write_coefficients_csv(path: &Path, design: &Design, coeffs: &Coefficients) -> Result<()> {
    let seconds = exposure_seconds(design);
    let mut w = csv_writer(path)?;
    for (p, pred) in design.predictors().iter().enumerate() {
        let p = p as u32;
        w.serialize(CoefficientRow {
            label: &pred.label,
            group: pred.group.token(),
            kind: kind_token(pred.kind),
            omega: coeffs.omega(p),
            delta: coeffs.delta(p),
            net: coeffs.net(p),
            seconds: seconds[p as usize],
        })
        .map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| csv_fail(path, e))
}

fn write_intercepts_csv(path: &Path, coeffs: &Coefficients) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["state", "home", "away"]).map_err(|e| csv_fail(path, e))?;
    for state in ScoreState::ALL {
        let k = state.index();
        w.write_record([
            state.token().to_string(),
            coeffs.home_intercepts[k].to_string(),
            coeffs.away_intercepts[k].to_string(),
        ])
        .map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| csv_fail(path, e))
}

// ---------------------------------------------------------------- summarize

pub fn cmd_summarize(cfg: &RunConfig, counts: Option<(u64, u64, u64)>) -> Result<()> {
    let (counts, source) = match counts {
        Some((away, none, home)) => (EventCounts::from_counts(away, none, home), None),
        None => {
            let path = cfg.events_path()?;
            (summarize(&load_events(path)?), Some(path.to_path_buf()))
        }
    };
    if counts.total() == 0 {
        return Err(Error::data("events", None, "no events to summarize"));
    }
    let (pct_away, pct_none, pct_home) = counts.percentages();
    println!("{:<12} {:>12} {:>8}", "outcome", "events", "percent");
    println!("{:<12} {:>12} {:>8.2}", "away_goal", counts.away_goals, pct_away);
    println!("{:<12} {:>12} {:>8.2}", "no_goal", counts.no_goals, pct_none);
    println!("{:<12} {:>12} {:>8.2}", "home_goal", counts.home_goals, pct_home);
    println!("{:<12} {:>12} {:>8.2}", "total", counts.total(), 100.0);

    if cfg.run.out.is_some() {
        let out = prepare_out(cfg)?;
        let mut manifest = ManifestBuilder::new("summarize", cfg);
        if let Some(path) = &source {
            manifest.input("events", path)?;
        }
        let summary_path = out.join("summary.json");
        write_json(
            &summary_path,
            &serde_json::json!({
                "away_goals": counts.away_goals,
                "no_goals": counts.no_goals,
                "home_goals": counts.home_goals,
                "total": counts.total(),
                "percent": { "away": pct_away, "none": pct_none, "home": pct_home },
            }),
        )?;
        manifest.output("summary", &summary_path);
        manifest.write(&out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------- fit

struct LoadedData {
    events: Vec<ShiftEvent>,
    roster: Roster,
}

fn load_inputs(cfg: &RunConfig, manifest: &mut ManifestBuilder) -> Result<LoadedData> {
    let events_path = cfg.events_path()?;
    let roster_path = cfg.roster_path()?;
    manifest.input("events", events_path)?;
    manifest.input("roster", roster_path)?;
    Ok(LoadedData { events: load_events(events_path)?, roster: load_roster(roster_path)? })
}

/// Train/test partition per the fit section; the test half is `None` when
/// the whole log trains.
fn partition(cfg: &RunConfig, events: &[ShiftEvent]) -> Result<(Vec<ShiftEvent>, Option<Vec<ShiftEvent>>)> {
    match cfg.split() {
        Some((fraction, seed)) => {
            let split = split_by_game(events, fraction, seed)?;
            let (train, test) = split.partition(events);
            Ok((train, Some(test)))
        }
        None => Ok((events.to_vec(), None)),
    }
}

fn heldout_deviance(
    train_design: &Design,
    coeffs: &Coefficients,
    test: &[ShiftEvent],
    roster: &Roster,
    model: ModelSpec,
) -> Result<(f64, usize)> {
    let test_design = build_design(test, roster, model)?;
    let transferred = transfer_coefficients(train_design, coeffs, &test_design);
    Ok((oos_deviance(&test_design, &transferred), test.len()))
}

#[derive(Serialize)]
struct FitMetrics {
    mode: String,
    n_train_events: usize,
    n_test_events: Option<usize>,
    train_deviance: f64,
    heldout_deviance: Option<f64>,
    dic: Option<DicReport>,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let mut manifest = ManifestBuilder::new("fit", cfg);
    let data = load_inputs(cfg, &mut manifest)?;
    let model = cfg.model.resolve()?;
    let (train, test) = partition(cfg, &data.events)?;
    let design = build_design(&train, &data.roster, model)?;
    let shrink = GroupShrinkage::uniform_for(&design, cfg.shrinkage.penalty()?);
    let fit_opts = cfg.fit.options();

    let (point, metrics) = match cfg.fit.mode.as_str() {
        "mle" => {
            let report = fit_penalized(&design, &shrink, &fit_opts, None)?;
            let kkt = kkt_check(&design, &shrink, &report.coefficients, &fit_opts)?;
            let report_path = out.join("fit_report.json");
            write_json(&report_path, &serde_json::json!({ "fit": &report, "kkt": &kkt }))?;
            manifest.output("fit_report", &report_path);
            println!(
                "mle: objective {:.4} after {} iterations ({}), {} nonzero coefficients, kkt {}",
                report.objective,
                report.iterations,
                if report.converged { "converged" } else { "budget exhausted" },
                report.nonzero_coefficients,
                if kkt.pass { "clean" } else { "violated" },
            );
            if !kkt.pass {
                println!(
                    "warning: stationarity residuals above tolerance (intercepts {:.1e}, smooth {:.1e}, active {:.1e}, inactive {:.1e}); tighten [fit] tolerance",
                    kkt.max_intercept_gradient,
                    kkt.max_smooth_violation,
                    kkt.max_active_violation,
                    kkt.max_inactive_excess,
                );
            }
            if let Some(w) = &report.warning {
                println!("warning: {w}");
            }
            let train_deviance = deviance(&design, &report.coefficients);
            (report.coefficients, FitMetrics {
                mode: "mle".into(),
                n_train_events: train.len(),
                n_test_events: None,
                train_deviance,
                heldout_deviance: None,
                dic: None,
            })
        }
        "mcmc" => {
            let loose = GroupShrinkage::uniform_for(&design, cfg.shrinkage.loose_penalty()?);
            let warm = fit_penalized(&design, &loose, &fit_opts, None)?;
            let mcmc_opts = cfg.mcmc.options(cfg.run.seed);
            let priors = cfg.priors.priors();
            let samples = run_chains(&design, &shrink, &priors, &mcmc_opts, Some(&warm.coefficients))?;

            let samples_dir = out.join("samples");
            fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
            save_samples(&samples, &samples_dir)?;
            for name in ["draws.bin", "meta.json", "summary.csv"] {
                manifest.output("samples", &samples_dir.join(name));
            }
            let posterior_path = out.join("posterior.json");
            write_json(&posterior_path, &summarize_posterior(&samples))?;
            manifest.output("posterior", &posterior_path);

            println!(
                "mcmc: {} chains x {} kept (thin {}), acceptance {:.2}, min coefficient ESS {:.0}",
                samples.n_chains,
                samples.kept_per_chain,
                samples.options.thin,
                samples.acceptance.overall,
                samples.diagnostics.min_coefficient_ess,
            );
            for w in &samples.diagnostics.warnings {
                println!("warning: {w}");
            }
            let mean = samples.posterior_mean();
            let dic_report = dic(&design, &samples.draws, "training events")?;
            let train_deviance = deviance(&design, &mean);
            (mean, FitMetrics {
                mode: "mcmc".into(),
                n_train_events: train.len(),
                n_test_events: None,
                train_deviance,
                heldout_deviance: None,
                dic: Some(dic_report),
            })
        }
        other => return Err(Error::Config(format!("unknown fit mode '{other}'; expected mle or mcmc"))),
    };

    let mut metrics = metrics;
    if let Some(test) = &test {
        let (dev, n) = heldout_deviance(&design, &point, test, &data.roster, model)?;
        metrics.heldout_deviance = Some(dev);
        metrics.n_test_events = Some(n);
        println!("held-out deviance {dev:.2} over {n} withheld events");
    }

    let coeff_path = out.join("coefficients.csv");
    write_coefficients_csv(&coeff_path, &design, &point)?;
    manifest.output("coefficients", &coeff_path);
    let intercept_path = out.join("intercepts.csv");
    write_intercepts_csv(&intercept_path, &point)?;
    manifest.output("intercepts", &intercept_path);
    let metrics_path = out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    manifest.output("metrics", &metrics_path);
    manifest.write(&out)?;
    println!("train deviance {:.2} over {} events; outputs in {}", metrics.train_deviance, train.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------ compare

#[derive(Serialize)]
struct ComparisonRow {
    model: String,
    predictors: usize,
    free_coefficients: usize,
    train_deviance: f64,
    heldout_deviance: f64,
    heldout_per_event: f64,
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let mut manifest = ManifestBuilder::new("compare", cfg);
    let data = load_inputs(cfg, &mut manifest)?;

    let fraction = if cfg.fit.split_fraction < 1.0 { cfg.fit.split_fraction } else { 0.8 };
    let seed = cfg.fit.split_seed.unwrap_or(cfg.run.seed);
    let split = split_by_game(&data.events, fraction, seed)?;
    let (train, test) = split.partition(&data.events);
    if test.is_empty() {
        return Err(Error::Config("the split withheld no games; lower split_fraction".into()));
    }

    let specs: [(&str, ModelSpec); 3] = [
        ("score_only", ModelSpec::ScoreOnly),
        ("teams", ModelSpec::Teams),
        ("players", ModelSpec::Players { include_teams: true }),
    ];
    let penalty = cfg.shrinkage.penalty()?;
    let fit_opts = cfg.fit.options();
    let mut rows = Vec::with_capacity(3);
    for (name, spec) in specs {
        let design = build_design(&train, &data.roster, spec)?;
        let shrink = GroupShrinkage::uniform_for(&design, penalty);
        let report = fit_penalized(&design, &shrink, &fit_opts, None)?;
        let (heldout, n_test) = heldout_deviance(&design, &report.coefficients, &test, &data.roster, spec)?;
        rows.push(ComparisonRow {
            model: name.to_string(),
            predictors: design.n_predictors(),
            free_coefficients: design.free_coefficient_count(),
            train_deviance: deviance(&design, &report.coefficients),
            heldout_deviance: heldout,
            heldout_per_event: heldout / n_test as f64,
        });
    }

    let csv_path = out.join("comparison.csv");
    let mut w = csv_writer(&csv_path)?;
    for row in &rows {
        w.serialize(row).map_err(|e| csv_fail(&csv_path, e))?;
    }
    w.flush().map_err(|e| csv_fail(&csv_path, e))?;
    manifest.output("comparison", &csv_path);
    let json_path = out.join("comparison.json");
    write_json(
        &json_path,
        &serde_json::json!({
            "train_events": train.len(),
            "test_events": test.len(),
            "split_fraction": fraction,
            "split_seed": seed,
            "models": &rows,
        }),
    )?;
    manifest.output("comparison", &json_path);
    manifest.write(&out)?;

    println!("{:<12} {:>10} {:>16} {:>18}", "model", "predictors", "train_deviance", "heldout_deviance");
    for row in &rows {
        println!(
            "{:<12} {:>10} {:>16.2} {:>18.2}",
            row.model, row.predictors, row.train_deviance, row.heldout_deviance
        );
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.heldout_deviance.partial_cmp(&b.heldout_deviance).expect("finite deviance"))
        .expect("three rows");
    println!("best held-out fit: {} ({} withheld events)", best.model, test.len());
    Ok(())
}

// ---------------------------------------------------------------------- mvp

/// Smallest penalty on the cascade's grid that keeps every player effect at
/// exactly zero: the largest score-gradient magnitude at the frozen
/// baseline, nudged up and snapped to a multiple of `step`.
fn emergence_start(design: &Design, frozen: &Coefficients, step: f64) -> f64 {
    let g = gradient(design, frozen);
    let mut threshold: f64 = 0.0;
    for p in design.predictors_of_kind(PredictorKind::Player) {
        if !design.omega_constrained(p) {
            threshold = threshold.max(g.omega(p).abs());
        }
        threshold = threshold.max(g.delta(p).abs());
    }
    (threshold * 1.02 / step).ceil().max(1.0) * step
}

pub fn cmd_mvp(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let mut manifest = ManifestBuilder::new("mvp", cfg);
    let data = load_inputs(cfg, &mut manifest)?;

    let model = match cfg.model.resolve()? {
        spec @ ModelSpec::Players { .. } => spec,
        _ => ModelSpec::Players { include_teams: true },
    };
    let design = build_design(&data.events, &data.roster, model)?;

    // Baseline: intercepts and team effects from a teams-only fit, held
    // frozen while the cascade re-tightens the player penalty.
    let teams_design = build_design(&data.events, &data.roster, ModelSpec::Teams)?;
    let teams_shrink = GroupShrinkage::uniform_for(&teams_design, cfg.shrinkage.penalty()?);
    let fit_opts = cfg.fit.options();
    let baseline = fit_penalized(&teams_design, &teams_shrink, &fit_opts, None)?;
    let frozen = transfer_coefficients(&teams_design, &baseline.coefficients, &design);

    let lambda_start = match cfg.mvp.lambda_start {
        Some(l) => l,
        None => emergence_start(&design, &frozen, cfg.mvp.step),
    };
    println!("cascade starts at penalty {lambda_start:.2}, stepping down by {:.2}", cfg.mvp.step);
    let table = mvp_cascade(&design, &data.events, &frozen, &cfg.mvp.options(lambda_start, fit_opts))?;

    let csv_path = out.join("mvp.csv");
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["team", "cell", "player", "value", "emergence_lambda", "weak"])
        .map_err(|e| csv_fail(&csv_path, e))?;
    for team in &table.teams {
        for (kind, cell) in &team.cells {
            w.write_record([
                team.team.clone(),
                kind.token().to_string(),
                cell.player.clone(),
                cell.value.to_string(),
                cell.emergence_lambda.to_string(),
                cell.weak.to_string(),
            ])
            .map_err(|e| csv_fail(&csv_path, e))?;
        }
    }
    w.flush().map_err(|e| csv_fail(&csv_path, e))?;
    manifest.output("mvp", &csv_path);
    let json_path = out.join("mvp.json");
    write_json(&json_path, &table)?;
    manifest.output("mvp", &json_path);
    manifest.write(&out)?;

    println!(
        "cascade filled {} cells over {} refits (final penalty {:.2})",
        table.teams.iter().map(|t| t.cells.len()).sum::<usize>(),
        table.refits,
        table.final_lambda,
    );
    for team in &table.teams {
        for (kind, cell) in &team.cells {
            println!(
                "{:<6} {:<12} {:<12} {:>8.3} at lambda {:.2}{}",
                team.team,
                kind.token(),
                cell.player,
                cell.value,
                cell.emergence_lambda,
                if cell.weak { "  (weak)" } else { "" },
            );
        }
    }
    Ok(())
}

// -------------------------------------------------------------------- pairs

pub fn cmd_pairs(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let mut manifest = ManifestBuilder::new("pairs", cfg);
    let data = load_inputs(cfg, &mut manifest)?;

    let model = match cfg.model.resolve()? {
        spec @ ModelSpec::PlayersPlusPairs { .. } => spec,
        _ => ModelSpec::PlayersPlusPairs {
            include_teams: cfg.model.include_teams,
            pair_count: cfg.model.pair_count,
        },
    };
    let full_design = build_design(&data.events, &data.roster, model)?;
    let individual = GroupShrinkage::uniform_for(&full_design, cfg.shrinkage.penalty()?);
    let lambdas = cfg.pairs.lambda_path()?;

    let fraction = if cfg.fit.split_fraction < 1.0 { cfg.fit.split_fraction } else { 0.8 };
    let seed = cfg.fit.split_seed.unwrap_or(cfg.run.seed);
    let split = split_by_game(&data.events, fraction, seed)?;

    let selection =
        pair_selection(&data.events, &data.roster, model, &individual, &lambdas, &split, &cfg.fit.options())?;

    let csv_path = out.join("pairs.csv");
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["rank", "pair", "first", "second", "omega", "delta", "rating", "shared_seconds", "shared_shifts"])
        .map_err(|e| csv_fail(&csv_path, e))?;
    for (i, pair) in selection.pairs.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            pair.label.clone(),
            pair.first.clone(),
            pair.second.clone(),
            pair.omega.to_string(),
            pair.delta.to_string(),
            pair.rating.to_string(),
            pair.shared_seconds.to_string(),
            pair.shared_shifts.to_string(),
        ])
        .map_err(|e| csv_fail(&csv_path, e))?;
    }
    w.flush().map_err(|e| csv_fail(&csv_path, e))?;
    manifest.output("pairs", &csv_path);
    let json_path = out.join("pair_selection.json");
    write_json(&json_path, &selection)?;
    manifest.output("pairs", &json_path);
    manifest.write(&out)?;

    println!(
        "selected lambda {:.4}: {} distinct pairs nonzero ({} coefficient entries)",
        selection.selected_lambda, selection.unique_pairs, selection.nonzero_pair_parameters,
    );
    for (i, pair) in selection.pairs.iter().take(10).enumerate() {
        println!(
            "{:>3}. {:<24} rating {:>7.3} over {:>9.0} shared seconds",
            i + 1,
            pair.label,
            pair.rating,
            pair.shared_seconds,
        );
    }
    Ok(())
}

// --------------------------------------------------------------------- gnet

fn read_coefficient_table(path: &Path) -> Result<Vec<ContributionInput>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader.headers().map_err(|e| csv_fail(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let label_col = col("label")
        .or_else(|| col("player"))
        .ok_or_else(|| Error::data(&path.display().to_string(), Some(1), "no 'label' or 'player' column"))?;
    let need = |name: &str| {
        col(name).ok_or_else(|| {
            Error::data(&path.display().to_string(), Some(1), format!("no '{name}' column"))
        })
    };
    let omega_col = need("omega")?;
    let delta_col = need("delta")?;
    let seconds_col = need("seconds")?;

    let mut inputs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| Error::data(&path.display().to_string(), Some(line), e.to_string()))?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse().map_err(|_| {
                Error::data(&path.display().to_string(), Some(line), format!("bad {name} value '{raw}'"))
            })
        };
        inputs.push(ContributionInput {
            label: record.get(label_col).unwrap_or("").to_string(),
            omega: field(omega_col, "omega")?,
            delta: field(delta_col, "delta")?,
            seconds: field(seconds_col, "seconds")?,
        });
    }
    if inputs.is_empty() {
        return Err(Error::data(&path.display().to_string(), None, "no coefficient rows"));
    }
    Ok(inputs)
}

pub fn cmd_gnet(cfg: &RunConfig) -> Result<()> {
    let table_path = cfg
        .inputs
        .coefficients
        .as_deref()
        .ok_or_else(|| Error::Usage("no coefficient table; set [inputs] coefficients or pass --coefficients".into()))?;
    let inputs = read_coefficient_table(table_path)?;
    let convention = cfg.gnet.convention()?;
    if !(cfg.gnet.r_base.is_finite() && cfg.gnet.r_base < 0.0) {
        return Err(Error::Config(format!(
            "r_base must be a negative finite log-rate, got {}",
            cfg.gnet.r_base
        )));
    }
    let rows = contribution_table(&inputs, cfg.gnet.r_base, convention);

    println!("{:>4} {:<16} {:>9} {:>9} {:>10} {:>9} {:>9} {:>9}", "rank", "label", "omega", "delta", "seconds", "scored", "stopped", "net");
    for row in rows.iter().take(10) {
        println!(
            "{:>4} {:<16} {:>9.3} {:>9.3} {:>10.0} {:>9.2} {:>9.2} {:>9.2}",
            row.rank, row.label, row.omega, row.delta, row.seconds, row.scored, row.stopped, row.net
        );
    }
    if rows.len() > 10 {
        println!("... {} more rows", rows.len() - 10);
    }

    if cfg.run.out.is_some() {
        let out = prepare_out(cfg)?;
        let mut manifest = ManifestBuilder::new("gnet", cfg);
        manifest.input("coefficients", table_path)?;
        let csv_path = out.join("gnet.csv");
        let mut w = csv_writer(&csv_path)?;
        for row in &rows {
            w.serialize(row).map_err(|e| csv_fail(&csv_path, e))?;
        }
        w.flush().map_err(|e| csv_fail(&csv_path, e))?;
        manifest.output("gnet", &csv_path);
        let json_path = out.join("gnet.json");
        write_json(&json_path, &rows)?;
        manifest.output("gnet", &json_path);
        manifest.write(&out)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let model = cfg.model.resolve()?;
    let recipe = cfg.simulate.recipe(model, cfg.run.seed);
    let league = synthetic_league(&recipe)?;

    let mut manifest = ManifestBuilder::new("simulate", cfg);
    let events_path = out.join("events.csv");
    crate::events::save_events(&events_path, &league.events)?;
    manifest.output("events", &events_path);
    let roster_path = out.join("roster.csv");
    crate::events::save_roster(&roster_path, &league.roster)?;
    manifest.output("roster", &roster_path);
    let truth_path = out.join("truth.csv");
    crate::simulate::save_truth(&truth_path, &league.design, &league.truth)?;
    manifest.output("truth", &truth_path);
    manifest.write(&out)?;

    let counts = summarize(&league.events);
    let (pct_away, pct_none, pct_home) = counts.percentages();
    println!(
        "simulated {} teams, {} games, {} events ({} predictors)",
        recipe.n_teams,
        recipe.n_games,
        league.events.len(),
        league.design.n_predictors(),
    );
    println!(
        "outcomes: {:.2}% away goals, {:.2}% censored, {:.2}% home goals",
        pct_away, pct_none, pct_home
    );
    let goals = team_goal_totals(&league.events);
    let top: Vec<String> = goals.iter().take(4).map(|(t, g)| format!("{t} {g}")).collect();
    println!("goals by team: {}", top.join(", "));
    println!("events, roster, and truth written to {}", out.display());
    Ok(())
}

// ----------------------------------------------------------------- validate

#[derive(Serialize)]
struct CheckResult {
    name: String,
    passed: bool,
    detail: String,
}

fn check_line(check: &CheckResult) {
    println!("{} {}: {}", if check.passed { "ok  " } else { "FAIL" }, check.name, check.detail);
}

/// Shrinkage log-densities must integrate to one; spot-checks random
/// settings of every family, including strongly spike-dominated combined
/// penalties.
fn check_density_normalization(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_726d);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let lambda = (-1.5 + 4.0 * rng.random::<f64>()).exp();
        let sigma2 = (-2.5 + 4.0 * rng.random::<f64>()).exp();
        let penalty = match i % 4 {
            0 => Penalty::L1 { lambda },
            1 => Penalty::L2 { sigma2 },
            // Every fourth case forces sigma*lambda far into the regime
            // where the combined normalizer is numerically delicate.
            2 => Penalty::L1L2 { lambda: 12.0 / sigma2.sqrt(), sigma2 },
            _ => Penalty::L1L2 { lambda, sigma2 },
        };
        let half = crate::numeric::adaptive_simpson(&|x| penalty.log_density(x).exp(), 0.0, 60.0, 1e-10);
        worst = worst.max((2.0 * half - 1.0).abs());
    }
    CheckResult {
        name: "density-normalization".into(),
        passed: worst <= 1e-6,
        detail: format!("max |integral - 1| = {worst:.2e} over 20 settings"),
    }
}

/// The analytic gradient must agree with central finite differences on a
/// small synthetic league.
fn check_gradient(seed: u64) -> CheckResult {
    let mut recipe = crate::simulate::LeagueRecipe::new(2, 6, 40, seed ^ 0x67726164);
    recipe.team_plan = crate::simulate::TeamPlan { centers: 1, left_wings: 1, right_wings: 1, defense: 2, goalies: 1 };
    let league = match synthetic_league(&recipe) {
        Ok(l) => l,
        Err(e) => {
            return CheckResult { name: "gradient".into(), passed: false, detail: e.to_string() }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67726164);
    let mut coeffs = Coefficients::with_intercepts(league.design.n_predictors(), -6.5);
    for p in 0..league.design.n_predictors() as u32 {
        if !league.design.omega_constrained(p) {
            coeffs.set_omega(p, 0.3 * rng.random::<f64>() - 0.15);
        }
        coeffs.set_delta(p, 0.3 * rng.random::<f64>() - 0.15);
    }
    let exact = gradient(&league.design, &coeffs);
    let approx = finite_difference_gradient(&league.design, &coeffs, 1e-5);
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        for (a, b) in [
            (exact.home_intercepts[k], approx.home_intercepts[k]),
            (exact.away_intercepts[k], approx.away_intercepts[k]),
        ] {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    for p in 0..league.design.n_predictors() as u32 {
        worst = worst.max((exact.omega(p) - approx.omega(p)).abs() / approx.omega(p).abs().max(1.0));
        worst = worst.max((exact.delta(p) - approx.delta(p)).abs() / approx.delta(p).abs().max(1.0));
    }
    CheckResult {
        name: "gradient".into(),
        passed: worst <= 1e-6,
        detail: format!("max relative gap to central differences = {worst:.2e}"),
    }
}

/// Empirical goal shares and mean durations from the event sampler must
/// match the censored competing-exponentials law.
fn check_simulator_law(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73696d75);
    let settings: [(f64, f64, f64); 3] =
        [(1.4e-3, 0.7e-3, 25.0), (0.7e-3, 1.4e-3, 45.0), (2.0e-3, 2.0e-3, 600.0)];
    let n = 100_000usize;
    let mut worst_z: f64 = 0.0;
    for (lh, la, censor) in settings {
        let total = lh + la;
        let goal_mass = 1.0 - (-total * censor).exp();
        let p_home = lh / total * goal_mass;
        let mut home_goals = 0usize;
        let mut duration_sum = 0.0;
        for _ in 0..n {
            let (outcome, t) = sample_event(&mut rng, lh, la, censor);
            home_goals += usize::from(outcome == crate::events::Outcome::HomeGoal);
            duration_sum += t;
        }
        let p_hat = home_goals as f64 / n as f64;
        let se = (p_home * (1.0 - p_home) / n as f64).sqrt();
        worst_z = worst_z.max((p_hat - p_home).abs() / se);
        // T = min(goal clock, censor): E[T] = integral of the survival
        // curve up to the censor time. The variance is bounded by censor^2,
        // giving a conservative z.
        let expected_t = goal_mass / total;
        let t_hat = duration_sum / n as f64;
        let se_t = censor / (n as f64).sqrt();
        worst_z = worst_z.max((t_hat - expected_t).abs() / se_t);
    }
    CheckResult {
        name: "simulator-law".into(),
        passed: worst_z <= 4.0,
        detail: format!("max |z| = {worst_z:.2} against the closed-form law over 3 settings"),
    }
}

fn check_calibration(cfg: &RunConfig) -> Result<(CheckResult, CalibrationReport)> {
    let mut recipe = crate::simulate::LeagueRecipe::new(
        cfg.validate.teams,
        cfg.validate.games,
        cfg.validate.shifts_per_game,
        cfg.run.seed,
    );
    recipe.team_plan =
        crate::simulate::TeamPlan { centers: 1, left_wings: 1, right_wings: 1, defense: 2, goalies: 1 };
    recipe.model = ModelSpec::Players { include_teams: false };
    let probe = synthetic_league(&recipe)?;
    let shrink = GroupShrinkage::uniform_for(&probe.design, cfg.shrinkage.penalty()?);
    let report = validate_posterior_quantiles(
        &recipe,
        &shrink,
        &cfg.priors.priors(),
        &cfg.validate.options(cfg.run.seed),
    )?;
    let failing = report.failing().len();
    let check = CheckResult {
        name: "posterior-quantiles".into(),
        passed: report.passed,
        detail: format!(
            "{} of {} parameters uniform over {} replications (alpha {})",
            report.parameters.len() - failing,
            report.parameters.len(),
            report.reps,
            report.alpha,
        ),
    };
    Ok((check, report))
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.run.seed;
    let mut checks = vec![
        check_density_normalization(seed),
        check_gradient(seed),
        check_simulator_law(seed),
    ];
    for check in &checks {
        check_line(check);
    }
    let mut calibration = None;
    if cfg.validate.skip_calibration {
        println!("skip posterior-quantiles: disabled in [validate]");
    } else {
        let (check, report) = check_calibration(cfg)?;
        check_line(&check);
        checks.push(check);
        calibration = Some(report);
    }

    let passed = checks.iter().all(|c| c.passed);
    if cfg.run.out.is_some() {
        let out = prepare_out(cfg)?;
        let mut manifest = ManifestBuilder::new("validate", cfg);
        let path = out.join("validation.json");
        write_json(&path, &serde_json::json!({ "passed": passed, "checks": &checks, "calibration": &calibration }))?;
        manifest.output("validation", &path);
        manifest.write(&out)?;
    }
    if !passed {
        let names: Vec<&str> =
            checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(Error::numerical("validate", format!("failed checks: {}", names.join(", "))));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
