use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::svg::{coverage_svg, scene_svg, SceneTrack};
use super::{
    write_atomic, CliError, CliResult, Command, EvalArgs, GameInput, GenArgs, IrlFitArgs, ModesArgs, PlotArgs,
    RunContext, SampleArgs, SampleInput, ScenarioSet, SolveArgs, TrainArgs, VerifyArgs,
};
use crate::diversity::{diversity_metrics, mode_coverage_count, LabelerConfig};
use crate::game::{chicken, cumulative_advantage, enumerate_trajectories, solve_soft_equilibrium, SolverConfig, TabularGame};
use crate::irl::{
    fit_advantage_model, verify_cross_entropy_equivalence, verify_partition_unity, AdvantageModel, CrossEntropyCheck,
    FitConfig, Representation, TrajectoryDataset, VisitCounts,
};
use crate::modes::{analyze_modes, empirical_histogram, ideal_histogram, kl_divergence, ModeSet, SampleSet};
use crate::predictor::{train_toy_predictor, TrainConfig};
use crate::sampling::{fps, nes, nms, NesRank, Sampler, SelectionResult};
use crate::scenarios::{generate_batch, generate_scenario, load_scenario, Archetype, LaneParams, Scenario};
use crate::track::JointTrack;

/// What a command read and wrote, and whether a check failed.
#[derive(Default)]
pub(crate) struct Report {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub failure: Option<String>,
}

impl Report {
    fn input(&mut self, path: &Path) {
        self.inputs.push(std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()));
    }

    fn write(&mut self, ctx: &RunContext, rel: impl Into<PathBuf>, bytes: &[u8]) -> CliResult<()> {
        let rel = rel.into();
        write_atomic(&ctx.out.join(&rel), bytes)?;
        self.outputs.push(rel);
        Ok(())
    }

    fn json(&mut self, ctx: &RunContext, rel: &str, value: &impl Serialize) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(crate::Error::from)?;
        text.push('\n');
        self.write(ctx, rel, text.as_bytes())
    }

    fn csv<R: Serialize>(&mut self, ctx: &RunContext, rel: &str, rows: &[R]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.write(ctx, rel, &bytes)
    }
}

pub(crate) fn dispatch(ctx: &RunContext, command: &Command) -> CliResult<Report> {
    let mut report = Report::default();
    match command {
        Command::Gen(a) => gen(ctx, a, &mut report)?,
        Command::Solve(a) => solve(ctx, a, &mut report)?,
        Command::IrlFit(a) => irl_fit(ctx, a, &mut report)?,
        Command::Verify(a) => verify(ctx, a, &mut report)?,
        Command::Modes(a) => modes(ctx, a, &mut report)?,
        Command::Sample(a) => sample(ctx, a, &mut report)?,
        Command::Train(a) => train(ctx, a, &mut report)?,
        Command::Eval(a) => eval(ctx, a, &mut report)?,
        Command::Plot(a) => plot(ctx, a, &mut report)?,
        Command::Replay(_) => return Err(CliError::Usage("replay cannot be nested".into())),
    }
    Ok(report)
}

fn read_scenario(path: &Path, report: &mut Report) -> CliResult<Scenario> {
    report.input(path);
    load_scenario(path).map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

/// A game, its initial state and the solver settings that suit it.
struct LoadedGame {
    game: TabularGame,
    x0: usize,
    solver: SolverConfig,
}

fn load_game(input: &GameInput, report: &mut Report) -> CliResult<LoadedGame> {
    if let Some(path) = &input.scenario {
        let s = read_scenario(path, report)?;
        return Ok(LoadedGame { x0: s.initial_state, game: s.game, solver: crate::scenarios::scenario_solver() });
    }
    if let Some(path) = &input.game_file {
        report.input(path);
        let game = TabularGame::load(path).map_err(|source| CliError::Input { path: path.clone(), source })?;
        if input.initial_state >= game.num_states() {
            return Err(CliError::Usage(format!(
                "initial state {} outside the game's {} states",
                input.initial_state,
                game.num_states()
            )));
        }
        return Ok(LoadedGame { game, x0: input.initial_state, solver: SolverConfig::default() });
    }
    match input.game.as_deref().unwrap_or("chicken") {
        "chicken" => Ok(LoadedGame { game: chicken(), x0: 0, solver: SolverConfig::default() }),
        other => Err(CliError::Usage(format!("unknown game fixture `{other}`, expected chicken"))),
    }
}

/// Three well-separated endpoint clusters of four samples each. The first
/// cluster holds the heaviest weights, and its members sit 3 m apart.
pub fn three_mode_fixture() -> SampleSet {
    let centers = [[40.0, 0.0], [0.0, 40.0], [-40.0, 0.0]];
    let offsets = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]];
    let mut tracks = Vec::new();
    let mut scores = Vec::new();
    for (m, c) in centers.iter().enumerate() {
        for (s, o) in offsets.iter().enumerate() {
            let end = [c[0] + o[0], c[1] + o[1]];
            let rows = (1..=4).map(|t| vec![[end[0] * t as f64 / 4.0, end[1] * t as f64 / 4.0]]).collect();
            tracks.push(JointTrack::new(1.0, rows).expect("fixture track"));
            scores.push(-(m as f64) - 0.1 * s as f64);
        }
    }
    let logits = scores.iter().map(|s| 3.0 * s).collect();
    SampleSet::new(tracks, scores, logits).expect("fixture samples")
}

/// The `top` most likely joint trajectories of a scenario, scored by their
/// cumulative advantage; the logits equal the scores.
pub fn scenario_samples(scenario: &Scenario, top: usize) -> CliResult<SampleSet> {
    if top == 0 {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    let eq = scenario.solve()?;
    let all = enumerate_trajectories(&scenario.game, scenario.initial_state, scenario.params.enumeration_cap)?;
    let mut scored = all
        .into_iter()
        .map(|tau| cumulative_advantage(&eq, &tau).map(|a| (a, tau)))
        .collect::<crate::Result<Vec<_>>>()?;
    // stable sort keeps enumeration order among ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(top);
    let tracks = scored
        .iter()
        .map(|(_, tau)| JointTrack::full(tau, scenario.game.dt))
        .collect::<crate::Result<Vec<_>>>()?;
    let scores: Vec<f64> = scored.iter().map(|(a, _)| *a).collect();
    Ok(SampleSet::new(tracks, scores.clone(), scores)?)
}

fn load_samples(input: &SampleInput, report: &mut Report) -> CliResult<SampleSet> {
    if let Some(path) = &input.samples {
        report.input(path);
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input { path: path.clone(), source: e.into() })?;
        let raw: SampleSet = serde_json::from_str(&text)
            .map_err(|e| CliError::Input { path: path.clone(), source: e.into() })?;
        return Ok(SampleSet::new(raw.tracks, raw.scores, raw.logits)?);
    }
    if let Some(path) = &input.scenario {
        let s = read_scenario(path, report)?;
        return scenario_samples(&s, input.top);
    }
    match input.fixture.as_deref().unwrap_or("three-modes") {
        "three-modes" => Ok(three_mode_fixture()),
        other => Err(CliError::Usage(format!("unknown sample fixture `{other}`, expected three-modes"))),
    }
}

fn load_scenario_set(ctx: &RunContext, set: &ScenarioSet, report: &mut Report) -> CliResult<Vec<Scenario>> {
    let Some(dir) = &set.scenarios else {
        let seeds: Vec<u64> = (0..set.num_scenarios).map(|k| ctx.seed + k).collect();
        return Ok(generate_batch(set.archetype, &LaneParams::default(), &seeds)?);
    };
    let mut files = Vec::new();
    collect_json(dir, &mut files).map_err(|e| CliError::Input { path: dir.clone(), source: e.into() })?;
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no scenario files under {}", dir.display())));
    }
    files.iter().map(|f| read_scenario(f, report)).collect()
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

fn gen(ctx: &RunContext, a: &GenArgs, report: &mut Report) -> CliResult<()> {
    let params = LaneParams { horizon: a.horizon.unwrap_or(LaneParams::default().horizon), ..LaneParams::default() };
    let seeds: Vec<u64> = (0..a.count).map(|k| ctx.seed + k).collect();
    for s in generate_batch(a.archetype, &params, &seeds)? {
        let mut text = serde_json::to_string(&s).map_err(crate::Error::from)?;
        text.push('\n');
        report.write(ctx, Path::new("scenarios").join(s.relative_path()), text.as_bytes())?;
    }
    println!("generated {} {} scenarios", seeds.len(), a.archetype);
    Ok(())
}

fn solve(ctx: &RunContext, a: &SolveArgs, report: &mut Report) -> CliResult<()> {
    let g = load_game(&a.input, report)?;
    let eq = solve_soft_equilibrium(&g.game, &g.solver)?;
    let values = (0..g.game.agents).map(|i| eq.value(0, i, g.x0)).collect::<crate::Result<Vec<_>>>()?;
    println!("{}: converged {}, initial values {values:?}", g.game.id, eq.converged());
    report.json(
        ctx,
        "equilibrium.json",
        &serde_json::json!({
            "game_id": g.game.id,
            "initial_state": g.x0,
            "converged": eq.converged(),
            "initial_values": values,
            "equilibrium": eq,
        }),
    )
}

#[derive(Serialize)]
struct IrlReport {
    game_id: String,
    rollouts: usize,
    initial_loss: f64,
    final_loss: f64,
    visited_cells: usize,
    /// Largest total-variation distance to the equilibrium policy over visited (t, agent, state).
    max_tv: f64,
}

fn irl_fit(ctx: &RunContext, a: &IrlFitArgs, report: &mut Report) -> CliResult<()> {
    let g = load_game(&a.input, report)?;
    let eq = solve_soft_equilibrium(&g.game, &g.solver)?;
    let data = TrajectoryDataset::from_rollouts(&eq, &g.game, g.x0, a.rollouts, ctx.seed);
    let repr = Representation::tabular_for(&g.game);
    let counts = VisitCounts::from_dataset(&repr, &data)?;
    let cfg = FitConfig { learning_rate: a.learning_rate, steps: a.steps, init_seed: ctx.seed };
    let fit = fit_advantage_model(repr, &data, &cfg)?;
    let model = fit.model();
    let (mut visited, mut max_tv) = (0, 0.0f64);
    for t in 0..g.game.horizon {
        for i in 0..g.game.agents {
            for x in 0..g.game.num_states() {
                if counts.visits(t, i, x) == 0 {
                    continue;
                }
                visited += 1;
                let learned = model.policy_row(t, i, x)?;
                let truth = eq.policy_row(t, i, x)?;
                let tv = 0.5 * learned.iter().zip(&truth).map(|(p, q)| (p - q).abs()).sum::<f64>();
                max_tv = max_tv.max(tv);
            }
        }
    }
    let summary = IrlReport {
        game_id: g.game.id.clone(),
        rollouts: a.rollouts,
        initial_loss: fit.loss_curve[0],
        final_loss: *fit.loss_curve.last().expect("loss curve"),
        visited_cells: visited,
        max_tv,
    };
    println!("fitted {} on {} rollouts: max TV {:.6} over {visited} visited cells", g.game.id, a.rollouts, max_tv);
    report.json(ctx, "irl_model.json", &fit)?;
    report.json(ctx, "irl_report.json", &summary)
}

#[derive(Serialize)]
struct CrossEntropyLine {
    model: &'static str,
    check: CrossEntropyCheck,
    gap: f64,
    allowed: f64,
    pass: bool,
}

fn verify(ctx: &RunContext, a: &VerifyArgs, report: &mut Report) -> CliResult<()> {
    let g = load_game(&a.input, report)?;
    let eq = solve_soft_equilibrium(&g.game, &g.solver)?;
    let z = verify_partition_unity(&eq, &g.game, g.x0)?;
    let unity_pass = (z - 1.0).abs() <= a.unity_tolerance;
    println!(
        "Z={z:.9} |Z-1|={:.3e} tol={:.1e} {}",
        (z - 1.0).abs(),
        a.unity_tolerance,
        verdict(unity_pass)
    );

    let truth = AdvantageModel::from_equilibrium(&eq);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x9E37_79B9_7F4A_7C15);
    let perturbed_theta = truth.theta.iter().map(|v| v + a.perturbation * (2.0 * rng.gen::<f64>() - 1.0)).collect();
    let perturbed = AdvantageModel::new(truth.repr.clone(), perturbed_theta)?;
    let mut lines = Vec::new();
    for (k, (name, model)) in [("true", &truth), ("perturbed", &perturbed)].into_iter().enumerate() {
        let check = verify_cross_entropy_equivalence(&eq, model, &g.game, g.x0, a.rollouts, ctx.seed + k as u64)?;
        let gap = (check.lhs - check.rhs).abs();
        let allowed = a.sigmas * check.stderr;
        let pass = gap <= allowed;
        println!(
            "cross-entropy {name}: lhs={:.6} rhs={:.6} |Δ|={gap:.3e} {}σ={allowed:.3e} {}",
            check.lhs,
            check.rhs,
            a.sigmas,
            verdict(pass)
        );
        lines.push(CrossEntropyLine { model: name, check, gap, allowed, pass });
    }
    report.json(
        ctx,
        "verify.json",
        &serde_json::json!({
            "game_id": g.game.id,
            "partition": { "z": z, "tolerance": a.unity_tolerance, "pass": unity_pass },
            "cross_entropy": lines,
        }),
    )?;
    let mut failed = Vec::new();
    if !unity_pass {
        failed.push(format!("partition sum {z}"));
    }
    failed.extend(lines.iter().filter(|l| !l.pass).map(|l| format!("{} model cross-entropy gap {}", l.model, l.gap)));
    if !failed.is_empty() {
        report.failure = Some(failed.join("; "));
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn modes(ctx: &RunContext, a: &ModesArgs, report: &mut Report) -> CliResult<()> {
    let samples = load_samples(&a.input, report)?;
    let ms = analyze_modes(&samples, a.modes.bandwidth, a.modes.iterations)?;
    let q_star = ideal_histogram(&ms, &samples.scores, a.rho)?;
    let q = empirical_histogram(&samples, &ms.labels, ms.len(), a.source)?;
    let kl = kl_divergence(&q, &q_star)?;
    println!("{} samples, {} modes, KL(q‖q*) = {kl:.6}", samples.len(), ms.len());
    report.json(
        ctx,
        "modes.json",
        &serde_json::json!({
            "samples": samples.len(),
            "bandwidth": a.modes.bandwidth,
            "iterations": a.modes.iterations,
            "source": a.source,
            "rho": a.rho,
            "modes": ms,
            "q": q,
            "q_star": q_star,
            "kl": kl,
        }),
    )
}

fn select(
    samples: &SampleSet,
    ms: &ModeSet,
    sampler: Sampler,
    count: usize,
    threshold: f64,
    prefilter_top: Option<usize>,
    rank: NesRank,
) -> CliResult<SelectionResult> {
    Ok(match sampler {
        Sampler::Fps => fps(samples, count, prefilter_top)?,
        Sampler::Nms => nms(samples, threshold, count)?,
        Sampler::Nes => nes(samples, &ms.labels, count, threshold, rank)?,
    })
}

fn sample(ctx: &RunContext, a: &SampleArgs, report: &mut Report) -> CliResult<()> {
    let samples = load_samples(&a.input, report)?;
    let ms = analyze_modes(&samples, a.modes.bandwidth, a.modes.iterations)?;
    let sel = select(&samples, &ms, a.sampler, a.count, a.threshold, a.prefilter_top, a.rank)?;
    let labels: Vec<usize> = sel.indices.iter().map(|&k| ms.labels[k]).collect();
    let covered = mode_coverage_count(&sel.indices, &ms.labels)?;
    println!("{:?} picked {:?}, covering {covered} of {} modes", a.sampler, sel.indices, ms.len());
    report.json(
        ctx,
        "samples.json",
        &serde_json::json!({
            "sampler": a.sampler,
            "count": a.count,
            "threshold": a.threshold,
            "selection": sel,
            "labels": labels,
            "modes_total": ms.len(),
            "modes_covered": covered,
        }),
    )
}

fn train(ctx: &RunContext, a: &TrainArgs, report: &mut Report) -> CliResult<()> {
    if a.gamma.is_empty() {
        return Err(CliError::Usage("--gamma needs at least one value".into()));
    }
    let scenarios = load_scenario_set(ctx, &a.set, report)?;
    let cfg = TrainConfig {
        steps: a.steps,
        learning_rate: a.learning_rate,
        components: a.components,
        rho: a.rho,
        bandwidth: a.bandwidth,
        seed: ctx.seed,
        ..TrainConfig::default()
    };
    let outcomes = train_toy_predictor(&scenarios, &cfg, &a.gamma)?;
    let rows: Vec<_> = outcomes.iter().map(|o| o.metrics.clone()).collect();
    for r in &rows {
        println!("{} γ={} n_modes={} minADE={:.4} kl={:.4}", r.scenario_id, r.gamma, r.n_modes, r.min_ade, r.kl);
    }
    report.csv(ctx, "metrics.csv", &rows)?;
    let runs: Vec<_> = outcomes
        .iter()
        .map(|o| {
            serde_json::json!({
                "scenario_id": o.metrics.scenario_id,
                "gamma": o.metrics.gamma,
                "q": o.q,
                "q_star": o.q_star,
                "final_loss": o.loss_curve.last(),
                "prediction": o.prediction,
            })
        })
        .collect();
    report.json(ctx, "train.json", &runs)
}

#[derive(Serialize)]
struct EvalRow {
    scenario_id: String,
    sampler: Sampler,
    count: usize,
    modes: usize,
    n_modes: usize,
    #[serde(rename = "H_util")]
    h_util: f64,
    #[serde(rename = "H_yield")]
    h_yield: f64,
    #[serde(rename = "H_follow")]
    h_follow: f64,
    #[serde(rename = "H_ttc")]
    h_ttc: f64,
}

fn eval(ctx: &RunContext, a: &EvalArgs, report: &mut Report) -> CliResult<()> {
    let scenarios = load_scenario_set(ctx, &a.set, report)?;
    let per_scene: Vec<Vec<EvalRow>> = scenarios
        .par_iter()
        .map(|s| -> CliResult<Vec<EvalRow>> {
            let samples = scenario_samples(s, a.top)?;
            let ms = analyze_modes(&samples, a.modes.bandwidth, a.modes.iterations)?;
            [Sampler::Fps, Sampler::Nms, Sampler::Nes]
                .into_iter()
                .map(|sampler| {
                    let sel = select(&samples, &ms, sampler, a.count, a.threshold, None, NesRank::Advantage)?;
                    let d = diversity_metrics(&samples, &sel.indices, &LabelerConfig::default())?;
                    Ok(EvalRow {
                        scenario_id: s.id.clone(),
                        sampler,
                        count: a.count,
                        modes: ms.len(),
                        n_modes: mode_coverage_count(&sel.indices, &ms.labels)?,
                        h_util: d.h_util,
                        h_yield: d.h_yield,
                        h_follow: d.h_follow,
                        h_ttc: d.h_ttc,
                    })
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let rows: Vec<EvalRow> = per_scene.into_iter().flatten().collect();
    for r in &rows {
        println!("{} {:?}: {} of {} modes", r.scenario_id, r.sampler, r.n_modes, r.modes);
    }
    report.csv(ctx, "eval.csv", &rows)
}

fn plot(ctx: &RunContext, a: &PlotArgs, report: &mut Report) -> CliResult<()> {
    let scenario = match &a.scenario {
        Some(p) => read_scenario(p, report)?,
        None => generate_scenario(Archetype::Yield, &LaneParams::default(), ctx.seed)?,
    };
    let samples = scenario_samples(&scenario, a.top)?;
    let ms = analyze_modes(&samples, a.modes.bandwidth, a.modes.iterations)?;
    let weights = samples.weights();
    let tracks: Vec<SceneTrack> = samples
        .tracks
        .iter()
        .enumerate()
        .map(|(k, t)| SceneTrack {
            agents: (0..t.agents()).map(|i| t.agent_path(i)).collect(),
            label: ms.labels[k],
            weight: weights[k],
        })
        .collect();
    let gt = JointTrack::full(&scenario.ground_truth, scenario.game.dt)?;
    let gt_paths: Vec<Vec<[f64; 2]>> = (0..gt.agents()).map(|i| gt.agent_path(i)).collect();
    report.write(ctx, "scene.svg", scene_svg(&scenario.id, &scenario.map, &tracks, &gt_paths).as_bytes())?;

    let counts: Vec<usize> = (1..=a.max_count.max(1)).collect();
    let mut curves = Vec::new();
    for sampler in [Sampler::Fps, Sampler::Nms, Sampler::Nes] {
        let ys = counts
            .iter()
            .map(|&c| {
                let sel = select(&samples, &ms, sampler, c, a.threshold, None, NesRank::Advantage)?;
                Ok(mode_coverage_count(&sel.indices, &ms.labels)?)
            })
            .collect::<CliResult<Vec<usize>>>()?;
        curves.push((sampler, ys));
    }
    report.write(ctx, "coverage.svg", coverage_svg(&counts, &curves, ms.len()).as_bytes())?;
    println!("rendered {} with {} samples in {} modes", scenario.id, samples.len(), ms.len());
    Ok(())
}
