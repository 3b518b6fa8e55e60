//! Run configuration and the reproducibility manifest.
//!
//! Every command reads a single TOML file (sections of `key = value`) plus a
//! handful of flags that override file values. The resolved configuration is
//! echoed into the output directory alongside a `manifest.json` recording the
//! command, crate version, master seed, input digests, and output digests, so
//! a finished run documents exactly how to reproduce itself.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::fit::{CascadeOptions, FitOptions};
use crate::mcmc::{CalibrationOptions, McmcOptions};
use crate::metrics::StoppedConvention;
use crate::shrinkage::{HyperPriors, Penalty, ShrinkFamily};
use crate::simulate::{LeagueRecipe, PlantedCoef, PlantedPair, ShiftLaw, TeamPlan};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsSection {
    pub events: Option<PathBuf>,
    pub roster: Option<PathBuf>,
    /// Coefficient table consumed by the goal-contribution command.
    pub coefficients: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// One of `score_only`, `teams`, `players`, `players_plus_pairs`.
    pub spec: String,
    pub include_teams: bool,
    /// Shared-shift pairs enumerated per team when the spec includes pairs.
    pub pair_count: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { spec: "players".into(), include_teams: true, pair_count: 50 }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self.spec.as_str() {
            "score_only" => Ok(ModelSpec::ScoreOnly),
            "teams" => Ok(ModelSpec::Teams),
            "players" => Ok(ModelSpec::Players { include_teams: self.include_teams }),
            "players_plus_pairs" => Ok(ModelSpec::PlayersPlusPairs {
                include_teams: self.include_teams,
                pair_count: self.pair_count,
            }),
            other => Err(Error::Config(format!(
                "unknown model spec '{other}'; expected score_only, teams, players, or players_plus_pairs"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShrinkageSection {
    /// One of `l1`, `l2`, `l1l2`.
    pub family: String,
    pub lambda: f64,
    pub sigma2: f64,
}

impl Default for ShrinkageSection {
    fn default() -> Self {
        ShrinkageSection { family: "l2".into(), lambda: 1.0, sigma2: 1.0 }
    }
}

impl ShrinkageSection {
    pub fn family(&self) -> Result<ShrinkFamily> {
        match self.family.as_str() {
            "l1" => Ok(ShrinkFamily::L1),
            "l2" => Ok(ShrinkFamily::L2),
            "l1l2" => Ok(ShrinkFamily::L1L2),
            other => Err(Error::Config(format!(
                "unknown shrinkage family '{other}'; expected l1, l2, or l1l2"
            ))),
        }
    }

    pub fn penalty(&self) -> Result<Penalty> {
        let p = match self.family()? {
            ShrinkFamily::L1 => Penalty::L1 { lambda: self.lambda },
            ShrinkFamily::L2 => Penalty::L2 { sigma2: self.sigma2 },
            ShrinkFamily::L1L2 => Penalty::L1L2 { lambda: self.lambda, sigma2: self.sigma2 },
        };
        p.validate()?;
        Ok(p)
    }

    /// A very weak penalty of the same family, used to initialize samplers
    /// near the lightly-penalized maximum-likelihood solution.
    pub fn loose_penalty(&self) -> Result<Penalty> {
        Ok(match self.family()? {
            ShrinkFamily::L1 => Penalty::L1 { lambda: 1e-3 },
            ShrinkFamily::L2 => Penalty::L2 { sigma2: 100.0 },
            ShrinkFamily::L1L2 => Penalty::L1L2 { lambda: 1e-3, sigma2: 100.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// `mle` or `mcmc`.
    pub mode: String,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Fraction of games used for training; 1.0 fits on everything and
    /// skips held-out scoring.
    pub split_fraction: f64,
    /// Seed for the game-level split; the master seed when absent.
    pub split_seed: Option<u64>,
}

impl Default for FitSection {
    fn default() -> Self {
        let defaults = FitOptions::default();
        FitSection {
            mode: "mle".into(),
            max_iterations: defaults.max_iterations,
            // Tighter than the library default: command-line fits are
            // judged on stationarity residuals, which keep shrinking well
            // after the objective has flattened to 1e-8 relative.
            tolerance: 1e-13,
            split_fraction: 1.0,
            split_seed: None,
        }
    }
}

impl FitSection {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            frozen: BTreeSet::new(),
            freeze_intercepts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub chains: usize,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub initial_step: f64,
    pub grid_points: usize,
    pub sample_intercepts: bool,
    pub sample_hypers: bool,
}

impl Default for McmcSection {
    fn default() -> Self {
        let defaults = McmcOptions::default();
        McmcSection {
            chains: defaults.n_chains,
            burn_in: defaults.burn_in,
            keep: defaults.keep,
            thin: defaults.thin,
            initial_step: defaults.initial_step,
            grid_points: defaults.grid.points,
            sample_intercepts: defaults.sample_intercepts,
            sample_hypers: defaults.sample_hypers,
        }
    }
}

impl McmcSection {
    pub fn options(&self, seed: u64) -> McmcOptions {
        let mut opts = McmcOptions {
            n_chains: self.chains,
            burn_in: self.burn_in,
            keep: self.keep,
            thin: self.thin,
            seed,
            initial_step: self.initial_step,
            sample_intercepts: self.sample_intercepts,
            sample_hypers: self.sample_hypers,
            ..Default::default()
        };
        opts.grid.points = self.grid_points;
        opts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsSection {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for PriorsSection {
    fn default() -> Self {
        let defaults = HyperPriors::default();
        PriorsSection {
            lambda_shape: defaults.lambda_shape,
            lambda_rate: defaults.lambda_rate,
            sigma2_shape: defaults.sigma2_shape,
            sigma2_scale: defaults.sigma2_scale,
        }
    }
}

impl PriorsSection {
    pub fn priors(&self) -> HyperPriors {
        HyperPriors {
            lambda_shape: self.lambda_shape,
            lambda_rate: self.lambda_rate,
            sigma2_shape: self.sigma2_shape,
            sigma2_scale: self.sigma2_scale,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; 0 leaves the pool at its default width.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub teams: usize,
    pub games: usize,
    pub shifts_per_game: usize,
    pub shift_median_s: f64,
    pub shift_sigma: f64,
    pub home_intercept: f64,
    pub away_intercept: f64,
    pub centers: usize,
    pub left_wings: usize,
    pub right_wings: usize,
    pub defense: usize,
    pub goalies: usize,
    pub planted: Vec<PlantedCoef>,
    pub planted_pairs: Vec<PlantedPair>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let plan = TeamPlan::default();
        let law = ShiftLaw::default();
        SimulateSection {
            teams: 4,
            games: 60,
            shifts_per_game: 300,
            shift_median_s: law.median_s,
            shift_sigma: law.sigma,
            home_intercept: -7.3,
            away_intercept: -7.3,
            centers: plan.centers,
            left_wings: plan.left_wings,
            right_wings: plan.right_wings,
            defense: plan.defense,
            goalies: plan.goalies,
            planted: Vec::new(),
            planted_pairs: Vec::new(),
        }
    }
}

impl SimulateSection {
    pub fn recipe(&self, model: ModelSpec, seed: u64) -> LeagueRecipe {
        let mut recipe = LeagueRecipe::new(self.teams, self.games, self.shifts_per_game, seed);
        recipe.team_plan = TeamPlan {
            centers: self.centers,
            left_wings: self.left_wings,
            right_wings: self.right_wings,
            defense: self.defense,
            goalies: self.goalies,
        };
        recipe.shift_law = ShiftLaw { median_s: self.shift_median_s, sigma: self.shift_sigma };
        recipe.home_intercepts = [self.home_intercept; 3];
        recipe.away_intercepts = [self.away_intercept; 3];
        recipe.planted = self.planted.clone();
        recipe.planted_pairs = self.planted_pairs.clone();
        recipe.model = model;
        recipe
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnetSection {
    /// Baseline log goal rate per second; exp(-7.3) is about 2.4 goals per
    /// team-hour.
    pub r_base: f64,
    /// `added` counts prevented goals in a player's favor;
    /// `literal_subtracted` subtracts them instead.
    pub convention: String,
}

impl Default for GnetSection {
    fn default() -> Self {
        GnetSection { r_base: -7.3, convention: "added".into() }
    }
}

impl GnetSection {
    pub fn convention(&self) -> Result<StoppedConvention> {
        match self.convention.as_str() {
            "added" => Ok(StoppedConvention::Added),
            "literal_subtracted" => Ok(StoppedConvention::LiteralSubtracted),
            other => Err(Error::Config(format!(
                "unknown contribution convention '{other}'; expected added or literal_subtracted"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvpSection {
    /// Starting penalty for the cascade. When absent it is sized from the
    /// data so that every player effect starts at exactly zero.
    pub lambda_start: Option<f64>,
    pub step: f64,
    pub weak_rating: f64,
}

impl Default for MvpSection {
    fn default() -> Self {
        let defaults = CascadeOptions::default();
        MvpSection {
            lambda_start: None,
            step: defaults.step,
            weak_rating: defaults.weak_rating,
        }
    }
}

impl MvpSection {
    pub fn options(&self, lambda_start: f64, fit: FitOptions) -> CascadeOptions {
        CascadeOptions {
            lambda_start,
            step: self.step,
            weak_rating: self.weak_rating,
            fit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    /// Explicit candidate penalties, strongest first; generated from the
    /// range below when empty.
    pub lambdas: Vec<f64>,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_count: usize,
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection { lambdas: Vec::new(), lambda_lo: 0.05, lambda_hi: 4.0, lambda_count: 12 }
    }
}

impl PairsSection {
    pub fn lambda_path(&self) -> Result<Vec<f64>> {
        if !self.lambdas.is_empty() {
            if self.lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                return Err(Error::Config("every candidate lambda must be positive and finite".into()));
            }
            return Ok(self.lambdas.clone());
        }
        if !(self.lambda_lo > 0.0 && self.lambda_lo < self.lambda_hi && self.lambda_hi.is_finite()) {
            return Err(Error::Config(format!(
                "lambda range must satisfy 0 < lambda_lo < lambda_hi, got [{}, {}]",
                self.lambda_lo, self.lambda_hi
            )));
        }
        if self.lambda_count < 2 {
            return Err(Error::Config("lambda_count must be at least 2".into()));
        }
        let (lo, hi) = (self.lambda_lo.ln(), self.lambda_hi.ln());
        let n = self.lambda_count;
        Ok((0..n)
            .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub reps: usize,
    pub alpha: f64,
    pub teams: usize,
    pub games: usize,
    pub shifts_per_game: usize,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    /// Skip the replicated rank-calibration stage and run only the fast
    /// deterministic checks.
    pub skip_calibration: bool,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            reps: 24,
            alpha: 0.01,
            teams: 2,
            games: 30,
            shifts_per_game: 25,
            burn_in: 150,
            keep: 150,
            thin: 2,
            skip_calibration: false,
        }
    }
}

impl ValidateSection {
    pub fn options(&self, seed: u64) -> CalibrationOptions {
        let mut opts = CalibrationOptions { reps: self.reps, seed, alpha: self.alpha, ..Default::default() };
        opts.mcmc.burn_in = self.burn_in;
        opts.mcmc.keep = self.keep;
        opts.mcmc.thin = self.thin;
        opts
    }
}

/// Everything a run needs, resolved from the config file and flag overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputsSection,
    pub model: ModelSection,
    pub shrinkage: ShrinkageSection,
    pub fit: FitSection,
    pub mcmc: McmcSection,
    pub priors: PriorsSection,
    pub run: RunSection,
    pub simulate: SimulateSection,
    pub gnet: GnetSection,
    pub mvp: MvpSection,
    pub pairs: PairsSection,
    pub validate: ValidateSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn events_path(&self) -> Result<&Path> {
        self.inputs
            .events
            .as_deref()
            .ok_or_else(|| Error::Usage("no events file; set [inputs] events or pass --events".into()))
    }

    pub fn roster_path(&self) -> Result<&Path> {
        self.inputs
            .roster
            .as_deref()
            .ok_or_else(|| Error::Usage("no roster file; set [inputs] roster or pass --roster".into()))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.run
            .out
            .as_deref()
            .ok_or_else(|| Error::Usage("no output directory; set [run] out or pass --out".into()))
    }

    /// Train/test split from the fit section, or `None` at fraction 1.
    pub fn split(&self) -> Option<(f64, u64)> {
        (self.fit.split_fraction < 1.0)
            .then_some((self.fit.split_fraction, self.fit.split_seed.unwrap_or(self.run.seed)))
    }
}

/// One input or output file as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// The reproducibility record written at the end of every run. Re-running
/// the embedded configuration must reproduce every listed output digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub threads: usize,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok((hex, bytes.len() as u64))
}

fn record(role: &str, path: &Path) -> Result<FileRecord> {
    let (sha256, bytes) = sha256_file(path)?;
    Ok(FileRecord { role: role.into(), path: path.display().to_string(), sha256, bytes })
}

/// Collects the files a command touches, then writes `manifest.json` and the
/// resolved `config.toml` into the output directory.
pub struct ManifestBuilder {
    command: String,
    config: RunConfig,
    inputs: Vec<FileRecord>,
    outputs: Vec<(String, PathBuf)>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(record(role, path)?);
        Ok(())
    }

    /// Register an output file already written under the run directory.
    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.push((role.to_string(), path.to_path_buf()));
    }

    pub fn write(self, out_dir: &Path) -> Result<()> {
        let config_path = out_dir.join("config.toml");
        fs::write(&config_path, self.config.to_toml()).map_err(|e| Error::io(&config_path, e))?;

        let mut outputs = Vec::with_capacity(self.outputs.len());
        for (role, path) in &self.outputs {
            let rec = record(role, path)?;
            let rel = path.strip_prefix(out_dir).unwrap_or(path);
            outputs.push(FileRecord { path: rel.display().to_string(), ..rec });
        }
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: self.config.run.seed,
            threads: self.config.run.threads,
            config: self.config,
            inputs: self.inputs,
            outputs,
        };
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}
