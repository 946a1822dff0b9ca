//! Command-line surface. Every run writes its artifacts plus a
//! `manifest.json` into `--out`; `replay` re-runs a manifest.

mod commands;
mod manifest;
mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::modes::{ScoreSource, DEFAULT_BANDWIDTH, DEFAULT_ITERATIONS};
use crate::sampling::{NesRank, Sampler, DEFAULT_NMS_THRESHOLD};
use crate::scenarios::Archetype;

pub use manifest::{RunManifest, SeedSource};

pub const SEED_ENV: &str = "NASHMODES_SEED";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: crate::Error,
    },

    #[error(transparent)]
    Lib(#[from] crate::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 2,
            CliError::Io(_) | CliError::Lib(crate::Error::Io(_)) => 3,
            CliError::Input { source: crate::Error::Io(_), .. } => 3,
            CliError::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 3,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Verification(_) => "verification",
            _ if self.exit_code() == 3 => "io",
            _ => "invalid_input",
        }
    }

    /// One-line machine-readable report for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "kind": self.kind(), "code": self.exit_code(), "message": self.to_string() }
        })
        .to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, Parser)]
#[command(name = "nashmodes", version, about = "Equilibrium-aware trajectory analysis on small dynamic games")]
pub struct Cli {
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Run seed; falls back to NASHMODES_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for scene-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate scenarios into <out>/scenarios/<archetype>/<seed>.json.
    Gen(GenArgs),
    /// Dump the soft equilibrium of a game.
    Solve(SolveArgs),
    /// Fit an advantage model to rollouts of a game's equilibrium.
    IrlFit(IrlFitArgs),
    /// Check partition unity and the cross-entropy identity.
    Verify(VerifyArgs),
    /// Mean Shift modes and coverage histograms of a sample set.
    Modes(ModesArgs),
    /// Select a subset of samples with FPS, NMS or NES.
    Sample(SampleArgs),
    /// Train toy predictors over a coverage weight sweep.
    Train(TrainArgs),
    /// Mode coverage and semantic diversity per sampler.
    Eval(EvalArgs),
    /// Render a scene and coverage curves as SVG.
    Plot(PlotArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Solve(_) => "solve",
            Command::IrlFit(_) => "irl-fit",
            Command::Verify(_) => "verify",
            Command::Modes(_) => "modes",
            Command::Sample(_) => "sample",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Plot(_) => "plot",
            Command::Replay(_) => "replay",
        }
    }
}

/// Which game to analyze. With no flag the chicken fixture is used.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct GameInput {
    /// Built-in game fixture (`chicken`).
    #[arg(long, conflicts_with_all = ["scenario", "game_file"])]
    pub game: Option<String>,
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "game_file")]
    pub scenario: Option<PathBuf>,
    /// Game JSON file.
    #[arg(long)]
    pub game_file: Option<PathBuf>,
    /// Initial state for `--game-file`.
    #[arg(long, default_value_t = 0)]
    pub initial_state: usize,
}

/// Where samples come from.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct SampleInput {
    /// Sample set JSON file.
    #[arg(long, conflicts_with_all = ["fixture", "scenario"])]
    pub samples: Option<PathBuf>,
    /// Built-in sample fixture (`three-modes`).
    #[arg(long, conflicts_with = "scenario")]
    pub fixture: Option<String>,
    /// Scenario JSON file; its most likely trajectories become the samples.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Number of trajectories taken from a scenario.
    #[arg(long, default_value_t = 64)]
    pub top: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ModeArgs {
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value = "yield")]
    pub archetype: Archetype,
    /// Number of consecutive seeds starting at the run seed.
    #[arg(long, default_value_t = 10)]
    pub count: u64,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: GameInput,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct IrlFitArgs {
    #[command(flatten)]
    pub input: GameInput,
    #[arg(long, default_value_t = 50_000)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub input: GameInput,
    #[arg(long, default_value_t = 100_000)]
    pub rollouts: usize,
    /// Allowed |Z − 1|.
    #[arg(long, default_value_t = 1e-9)]
    pub unity_tolerance: f64,
    /// Allowed cross-entropy gap in Monte-Carlo standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
    /// Spread of the randomly perturbed model.
    #[arg(long, default_value_t = 1.0)]
    pub perturbation: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ModesArgs {
    #[command(flatten)]
    pub input: SampleInput,
    #[command(flatten)]
    pub modes: ModeArgs,
    /// Temperature of the ideal histogram.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Scores behind the empirical histogram.
    #[arg(long, default_value = "advantage")]
    pub source: ScoreSource,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub input: SampleInput,
    #[command(flatten)]
    pub modes: ModeArgs,
    #[arg(long, default_value = "nes")]
    pub sampler: Sampler,
    /// Suppression radius in meters for NMS and the NES fallback.
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 6)]
    pub count: usize,
    /// FPS only: restrict to the k highest-weighted samples.
    #[arg(long)]
    pub prefilter_top: Option<usize>,
    #[arg(long, default_value = "advantage", value_parser = parse_rank)]
    pub rank: NesRank,
}

/// Scenarios are loaded from `--scenarios` or generated from the run seed.
#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ScenarioSet {
    /// Directory searched recursively for scenario JSON files.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long, default_value = "yield")]
    pub archetype: Archetype,
    /// Scenarios generated when no directory is given.
    #[arg(long, default_value_t = 10)]
    pub num_scenarios: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub set: ScenarioSet,
    /// Coverage weights to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,1,10,100")]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    pub components: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub set: ScenarioSet,
    #[command(flatten)]
    pub modes: ModeArgs,
    /// Trajectories per scenario entering the candidate pool.
    #[arg(long, default_value_t = 64)]
    pub top: usize,
    #[arg(long, default_value_t = 6)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct PlotArgs {
    /// Scenario JSON file; a yield scenario is generated from the run seed when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub modes: ModeArgs,
    #[arg(long, default_value_t = 32)]
    pub top: usize,
    /// Largest sample count on the coverage curves.
    #[arg(long, default_value_t = 8)]
    pub max_count: usize,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Compare the replayed outputs byte for byte with the recorded ones.
    #[arg(long)]
    pub check: bool,
}

fn parse_rank(s: &str) -> std::result::Result<NesRank, String> {
    match s {
        "advantage" => Ok(NesRank::Advantage),
        "weight" => Ok(NesRank::Weight),
        other => Err(format!("unknown rank `{other}`, expected advantage or weight")),
    }
}

/// Resolved run settings shared by every command.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub out: PathBuf,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub jobs: Option<usize>,
}

fn resolve_seed(flag: Option<u64>) -> CliResult<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(|s| (s, SeedSource::Env))
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok((0, SeedSource::Default)),
    }
}

/// Parses and runs one command line, returning the written manifest.
pub fn run<I, T>(args: I) -> CliResult<Option<RunManifest>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string().trim_end().to_string()))?;
    run_cli(cli)
}

pub fn run_cli(cli: Cli) -> CliResult<Option<RunManifest>> {
    let (seed, seed_source) = resolve_seed(cli.seed)?;
    let ctx = RunContext { out: cli.out, seed, seed_source, jobs: cli.jobs };
    if let Command::Replay(r) = &cli.command {
        return manifest::replay(&ctx, r).map(Some);
    }
    execute(&ctx, &cli.command).map(Some)
}

/// Runs `command` inside a pool capped at `--jobs` and records the manifest.
pub(crate) fn execute(ctx: &RunContext, command: &Command) -> CliResult<RunManifest> {
    if ctx.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let started = std::time::Instant::now();
    std::fs::create_dir_all(&ctx.out)?;
    let run = || commands::dispatch(ctx, command);
    let report = match ctx.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let manifest = RunManifest::new(ctx, command, report.inputs, report.outputs, started.elapsed().as_secs_f64());
    manifest.write(&ctx.out.join(MANIFEST_FILE))?;
    if let Some(failure) = report.failure {
        return Err(CliError::Verification(failure));
    }
    Ok(manifest)
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Binary entry point: errors go to stderr as one JSON line.
pub fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    match Cli::try_parse_from(&args) {
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            ExitCode::SUCCESS
        }
        Err(e) => fail(&CliError::Usage(e.to_string().trim_end().to_string())),
        Ok(cli) => match run_cli(cli) {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => fail(&e),
        },
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code())
}
