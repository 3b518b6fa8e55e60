//! On-disk layout for posterior sample sets.
//!
//! A saved run is a directory with three files:
//!
//! * `draws.bin` — every kept draw as little-endian `f64`, one row per draw
//!   in a fixed column order (intercepts, then each predictor's pair, then
//!   each group's penalty parameters, then the log posterior),
//! * `meta.json` — the sidecar naming those columns plus labels, chain
//!   layout, acceptance statistics, diagnostics, and the options used,
//! * `summary.csv` — per-parameter posterior summaries for spreadsheets.
//!
//! `draws.bin` stores the penalties in their natural parameters so a
//! round trip reproduces the samples bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{summarize_posterior, AcceptanceStats, Diagnostics, McmcOptions, PosteriorSamples};
use crate::design::{Group, Side};
use crate::error::{Error, Result};
use crate::events::ScoreState;
use crate::likelihood::Coefficients;
use crate::shrinkage::{GroupShrinkage, Penalty, ShrinkFamily};

const FORMAT_VERSION: u32 = 1;
const DRAWS_FILE: &str = "draws.bin";
const META_FILE: &str = "meta.json";
const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    labels: Vec<String>,
    groups: Vec<Group>,
    omega_free: Vec<bool>,
    hyper_keys: Vec<(Group, Side, ShrinkFamily)>,
    n_draws: usize,
    n_chains: usize,
    kept_per_chain: usize,
    columns: Vec<String>,
    acceptance: AcceptanceStats,
    diagnostics: Diagnostics,
    options: McmcOptions,
}

fn column_names(sidecar: &Sidecar) -> Vec<String> {
    let mut cols = Vec::with_capacity(7 + 2 * sidecar.labels.len() + 2 * sidecar.hyper_keys.len());
    for state in ScoreState::ALL {
        cols.push(format!("home_intercept:{}", state.token()));
    }
    for state in ScoreState::ALL {
        cols.push(format!("away_intercept:{}", state.token()));
    }
    for label in &sidecar.labels {
        cols.push(format!("{label}:omega"));
        cols.push(format!("{label}:delta"));
    }
    for (group, side, _) in &sidecar.hyper_keys {
        cols.push(format!("{}/{}:lambda", group.token(), side.token()));
        cols.push(format!("{}/{}:sigma2", group.token(), side.token()));
    }
    cols.push("log_posterior".into());
    cols
}

fn penalty_slots(pen: &Penalty) -> (f64, f64) {
    match *pen {
        Penalty::L1 { lambda } => (lambda, 0.0),
        Penalty::L2 { sigma2 } => (0.0, sigma2),
        Penalty::L1L2 { lambda, sigma2 } => (lambda, sigma2),
    }
}

fn penalty_from_slots(family: ShrinkFamily, lambda: f64, sigma2: f64) -> Penalty {
    match family {
        ShrinkFamily::L1 => Penalty::L1 { lambda },
        ShrinkFamily::L2 => Penalty::L2 { sigma2 },
        ShrinkFamily::L1L2 => Penalty::L1L2 { lambda, sigma2 },
    }
}

/// Write a sample set into `dir`, creating the directory if needed.
pub fn save_samples(samples: &PosteriorSamples, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        labels: samples.labels.clone(),
        groups: samples.groups.clone(),
        omega_free: samples.omega_free.clone(),
        hyper_keys: samples
            .hyper_keys
            .iter()
            .map(|&(g, s)| {
                let family = samples.hyper_draws[0]
                    .get(g, s)
                    .expect("hyper draws cover every key")
                    .family();
                (g, s, family)
            })
            .collect(),
        n_draws: samples.n_kept(),
        n_chains: samples.n_chains,
        kept_per_chain: samples.kept_per_chain,
        columns: Vec::new(),
        acceptance: samples.acceptance.clone(),
        diagnostics: samples.diagnostics.clone(),
        options: samples.options.clone(),
    };
    let mut sidecar = sidecar;
    sidecar.columns = column_names(&sidecar);

    let n_cols = sidecar.columns.len();
    let mut bytes = Vec::with_capacity(8 * n_cols * samples.n_kept());
    for (i, draw) in samples.draws.iter().enumerate() {
        let mut row = Vec::with_capacity(n_cols);
        row.extend_from_slice(&draw.home_intercepts);
        row.extend_from_slice(&draw.away_intercepts);
        for p in 0..samples.n_predictors() as u32 {
            row.push(draw.omega(p));
            row.push(draw.delta(p));
        }
        for &(g, s, _) in &sidecar.hyper_keys {
            let pen = samples.hyper_draws[i].get(g, s).expect("hyper draws cover every key");
            let (lambda, sigma2) = penalty_slots(pen);
            row.push(lambda);
            row.push(sigma2);
        }
        row.push(samples.log_posterior[i]);
        debug_assert_eq!(row.len(), n_cols);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let draws_path = dir.join(DRAWS_FILE);
    fs::write(&draws_path, &bytes).map_err(|e| Error::io(&draws_path, e))?;

    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::data(&meta_path.display().to_string(), None, e.to_string()))?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

    write_summary(samples, &dir.join(SUMMARY_FILE))
}

fn write_summary(samples: &PosteriorSamples, path: &Path) -> Result<()> {
    let summary = summarize_posterior(samples);
    let mut out = Vec::new();
    writeln!(out, "label,group,side,mean,sd,median,lo95,hi95").expect("vec write");
    let mut row = |label: &str, group: &str, side: &str, s: &super::SummaryStats| {
        writeln!(
            out,
            "{label},{group},{side},{:.9},{:.9},{:.9},{:.9},{:.9}",
            s.mean, s.sd, s.median, s.lo95, s.hi95
        )
        .expect("vec write");
    };
    for p in &summary.parameters {
        if let Some(off) = &p.offense {
            row(&p.label, p.group.token(), "offense", off);
        }
        row(&p.label, p.group.token(), "defense", &p.defense);
        row(&p.label, p.group.token(), "net", &p.net);
    }
    for i in &summary.intercepts {
        row(i.state.token(), "intercept", "home", &i.home);
        row(i.state.token(), "intercept", "away", &i.away);
    }
    for h in &summary.hypers {
        let label = format!("{}:{}", h.group.token(), h.side.token());
        row(&label, "shrinkage", "total", &h.total);
        row(&label, "shrinkage", "sparsity", &h.sparsity);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a sample set previously written by [`save_samples`].
pub fn load_samples(dir: &Path) -> Result<PosteriorSamples> {
    let meta_path = dir.join(META_FILE);
    let json = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&json)
        .map_err(|e| Error::data(&meta_path.display().to_string(), None, e.to_string()))?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::data(
            &meta_path.display().to_string(),
            None,
            format!(
                "sample format version {} is not supported (expected {FORMAT_VERSION})",
                sidecar.format_version
            ),
        ));
    }
    let n_cols = 6 + 2 * sidecar.labels.len() + 2 * sidecar.hyper_keys.len() + 1;
    if sidecar.columns.len() != n_cols {
        return Err(Error::data(
            &meta_path.display().to_string(),
            None,
            format!("sidecar lists {} columns but implies {n_cols}", sidecar.columns.len()),
        ));
    }

    let draws_path = dir.join(DRAWS_FILE);
    let bytes = fs::read(&draws_path).map_err(|e| Error::io(&draws_path, e))?;
    let expected = 8 * n_cols * sidecar.n_draws;
    if bytes.len() != expected {
        return Err(Error::data(
            &draws_path.display().to_string(),
            None,
            format!(
                "draw file holds {} bytes but the sidecar implies {expected} ({} draws of {n_cols} columns)",
                bytes.len(),
                sidecar.n_draws
            ),
        ));
    }

    let n_predictors = sidecar.labels.len();
    let mut draws = Vec::with_capacity(sidecar.n_draws);
    let mut hyper_draws = Vec::with_capacity(sidecar.n_draws);
    let mut log_posterior = Vec::with_capacity(sidecar.n_draws);
    for d in 0..sidecar.n_draws {
        let mut vals = bytes[8 * n_cols * d..8 * n_cols * (d + 1)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut next = || vals.next().expect("column count checked");
        let mut coeffs = Coefficients::zeros(n_predictors);
        for k in 0..3 {
            coeffs.home_intercepts[k] = next();
        }
        for k in 0..3 {
            coeffs.away_intercepts[k] = next();
        }
        for p in 0..n_predictors as u32 {
            coeffs.set_omega(p, next());
            coeffs.set_delta(p, next());
        }
        let mut shrink = GroupShrinkage::new();
        for &(g, s, family) in &sidecar.hyper_keys {
            let lambda = next();
            let sigma2 = next();
            shrink.set(g, s, penalty_from_slots(family, lambda, sigma2));
        }
        log_posterior.push(next());
        draws.push(coeffs);
        hyper_draws.push(shrink);
    }

    Ok(PosteriorSamples {
        labels: sidecar.labels,
        groups: sidecar.groups,
        omega_free: sidecar.omega_free,
        hyper_keys: sidecar.hyper_keys.iter().map(|&(g, s, _)| (g, s)).collect(),
        draws,
        hyper_draws,
        log_posterior,
        n_chains: sidecar.n_chains,
        kept_per_chain: sidecar.kept_per_chain,
        acceptance: sidecar.acceptance,
        diagnostics: sidecar.diagnostics,
        options: sidecar.options,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::run_chains;
    use crate::shrinkage::HyperPriors;
    use crate::simulate::{synthetic_league, LeagueRecipe};

    fn small_samples() -> PosteriorSamples {
        let recipe = LeagueRecipe::new(2, 6, 12, 11);
        let league = synthetic_league(&recipe).unwrap();
        let shrink = GroupShrinkage::uniform_for(&league.design, Penalty::L2 { sigma2: 0.5 });
        let opts = McmcOptions { n_chains: 2, burn_in: 20, keep: 15, seed: 9, ..Default::default() };
        run_chains(&league.design, &shrink, &HyperPriors::default(), &opts, None).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_draw() {
        let samples = small_samples();
        let dir = tempfile::tempdir().unwrap();
        save_samples(&samples, dir.path()).unwrap();
        let loaded = load_samples(dir.path()).unwrap();
        assert_eq!(samples, loaded);

        let csv = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "label,group,side,mean,sd,median,lo95,hi95");
        assert!(csv.lines().count() > samples.n_predictors() * 2);
    }

    #[test]
    fn truncated_draw_file_is_a_data_error() {
        let samples = small_samples();
        let dir = tempfile::tempdir().unwrap();
        save_samples(&samples, dir.path()).unwrap();
        let path = dir.path().join(DRAWS_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_samples(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Data { .. }), "{err}");
        assert!(err.to_string().contains("implies"), "{err}");
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let err = load_samples(Path::new("/nonexistent/samples")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn future_format_versions_are_refused() {
        let samples = small_samples();
        let dir = tempfile::tempdir().unwrap();
        save_samples(&samples, dir.path()).unwrap();
        let meta = dir.path().join(META_FILE);
        let text = std::fs::read_to_string(&meta).unwrap();
        std::fs::write(&meta, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        let err = load_samples(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
