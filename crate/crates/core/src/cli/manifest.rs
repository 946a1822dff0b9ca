use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{execute, write_atomic, CliError, CliResult, Command, ReplayArgs, RunContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Env,
    Default,
}

/// Everything needed to reproduce a run. Output paths are relative to the
/// directory holding the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: Command,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub jobs: Option<usize>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub(crate) fn new(
        ctx: &RunContext,
        command: &Command,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        wall_clock_s: f64,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.name().to_string(),
            config: command.clone(),
            seed: ctx.seed,
            seed_source: ctx.seed_source,
            jobs: ctx.jobs,
            inputs,
            outputs,
            wall_clock_s,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(crate::Error::from)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let input = |source: crate::Error| CliError::Input { path: path.to_path_buf(), source };
        let text = std::fs::read_to_string(path).map_err(|e| input(e.into()))?;
        serde_json::from_str(&text).map_err(|e| input(e.into()))
    }
}

/// Re-runs a recorded command with its recorded seed into the current
/// `--out`. With `check`, every recorded output must come back byte-identical.
pub(crate) fn replay(ctx: &RunContext, args: &ReplayArgs) -> CliResult<RunManifest> {
    let recorded = RunManifest::load(&args.manifest)?;
    if matches!(recorded.config, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    let origin = args.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    // read before running, the replay may target the same directory
    let originals = if args.check {
        recorded
            .outputs
            .iter()
            .map(|p| std::fs::read(origin.join(p)).map(|b| (p.clone(), b)))
            .collect::<std::io::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let replay_ctx = RunContext {
        out: ctx.out.clone(),
        seed: recorded.seed,
        seed_source: recorded.seed_source,
        jobs: ctx.jobs.or(recorded.jobs),
    };
    let manifest = execute(&replay_ctx, &recorded.config)?;
    if args.check {
        if manifest.outputs != recorded.outputs {
            return Err(CliError::Verification("replay produced a different set of outputs".into()));
        }
        let differing: Vec<String> = originals
            .iter()
            .filter(|(p, bytes)| std::fs::read(ctx.out.join(p)).map_or(true, |b| &b != bytes))
            .map(|(p, _)| p.display().to_string())
            .collect();
        if !differing.is_empty() {
            return Err(CliError::Verification(format!("replayed outputs differ: {}", differing.join(", "))));
        }
        println!("replay identical: {} outputs", originals.len());
    }
    Ok(manifest)
}
