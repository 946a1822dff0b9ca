use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{analyze_joint, joint_assembly, total_loss, GmmPrediction, ModeAnalysis, TrackScorer, TrainConfig};
use crate::diversity::{diversity_metrics, mode_coverage_count, LabelerConfig};
use crate::error::{Error, Result};
use crate::game::{cumulative_advantage, enumerate_all_trajectories, JointTrajectory, SoftEquilibrium, TabularGame};
use crate::modes::weight_coverage_kl_and_grad;
use crate::scenarios::Scenario;
use crate::track::{average_displacement, dist, JointTrack};

/// Scores a track by snapping it onto the game and summing the equilibrium
/// advantages along the snapped trajectory.
pub struct GameScorer<'a> {
    pub game: &'a TabularGame,
    pub eq: &'a SoftEquilibrium,
    pub x0: usize,
}

impl GameScorer<'_> {
    /// Greedy projection: at each step take the joint control whose successor
    /// positions are nearest the track's positions at that step.
    pub fn project(&self, track: &JointTrack) -> Result<JointTrajectory> {
        if track.len() != self.game.horizon || track.agents() != self.game.agents {
            return Err(Error::Dimension(format!(
                "track is {}x{}, game expects {}x{}",
                track.len(),
                track.agents(),
                self.game.horizon,
                self.game.agents
            )));
        }
        let joints = self.game.joint_table();
        let mut x = self.x0;
        let mut controls = Vec::with_capacity(track.len());
        for row in &track.positions {
            let mut best = (f64::INFINITY, 0);
            for j in 0..joints.len() {
                let next = &self.game.states[self.game.next_state(x, j)];
                let d: f64 = next.0.iter().zip(row).map(|(a, p)| dist(a.position(), *p)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            controls.push(joints[best.1].clone());
            x = self.game.next_state(x, best.1);
        }
        JointTrajectory::from_controls(self.game, self.x0, &controls)
    }
}

impl TrackScorer for GameScorer<'_> {
    fn score(&self, track: &JointTrack) -> Result<f64> {
        cumulative_advantage(self.eq, &self.project(track)?)
    }
}

/// Components start at the K most likely equilibrium trajectories plus noise,
/// with identical, rank-ordered logits for every agent.
pub fn initial_prediction(
    game: &TabularGame,
    eq: &SoftEquilibrium,
    x0: usize,
    cfg: &TrainConfig,
) -> Result<GmmPrediction> {
    let mut all = enumerate_all_trajectories(eq, game, x0)?;
    if all.len() < cfg.components {
        return Err(Error::InvalidArgument(format!(
            "{} components requested but the game has {} trajectories",
            cfg.components,
            all.len()
        )));
    }
    // stable sort keeps enumeration order among equal probabilities
    all.sort_by(|a, b| b.1.total_cmp(&a.1));
    let noise = Normal::new(0.0, cfg.init_noise.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tracks = all[..cfg.components]
        .iter()
        .map(|(tau, _)| JointTrack::future(tau, game.dt))
        .collect::<Result<Vec<_>>>()?;
    let mu = (0..game.agents)
        .map(|i| {
            tracks
                .iter()
                .map(|tr| {
                    tr.agent_path(i)
                        .into_iter()
                        .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let log_sigma = vec![vec![cfg.init_sigma.ln(); cfg.components]; game.agents];
    let logits = vec![(0..cfg.components).map(|k| -0.1 * k as f64).collect(); game.agents];
    GmmPrediction::new(game.dt, mu, log_sigma, logits)
}

/// Smallest weight-sorted prefix whose mass reaches `mass`.
pub fn nucleus_selection(weights: &[f64], mass: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut acc = 0.0;
    let mut out = Vec::new();
    for k in order {
        out.push(k);
        acc += weights[k];
        if acc >= mass - 1e-12 {
            break;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub scenario_id: String,
    pub gamma: f64,
    #[serde(rename = "minADE_m")]
    pub min_ade: f64,
    pub kl: f64,
    pub n_modes: usize,
    #[serde(rename = "H_util")]
    pub h_util: f64,
    #[serde(rename = "H_yield")]
    pub h_yield: f64,
    #[serde(rename = "H_follow")]
    pub h_follow: f64,
    #[serde(rename = "H_ttc")]
    pub h_ttc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub prediction: GmmPrediction,
    pub metrics: TrainMetrics,
    pub loss_curve: Vec<f64>,
    /// Final per-mode predictor mass and its target.
    pub q: Vec<f64>,
    pub q_star: Vec<f64>,
    pub analysis: ModeAnalysis,
}

fn evaluate(
    scenario_id: &str,
    pred: &GmmPrediction,
    gt: &JointTrack,
    scorer: &dyn TrackScorer,
    cfg: &TrainConfig,
) -> Result<(TrainMetrics, ModeAnalysis, Vec<f64>)> {
    let joint = joint_assembly(pred)?;
    let analysis = analyze_joint(&joint, scorer, cfg)?;
    let cov = weight_coverage_kl_and_grad(&joint.logits, &analysis.modes.labels, &analysis.q_star)?;
    let selection = nucleus_selection(&joint.weights(), cfg.nucleus);
    let n_modes = mode_coverage_count(&selection, &analysis.modes.labels)?;
    let min_ade = joint
        .tracks
        .iter()
        .map(|t| average_displacement(t, gt))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let samples = joint.into_sample_set(analysis.scores.clone())?;
    let div = diversity_metrics(&samples, &selection, &LabelerConfig::default())?;
    let metrics = TrainMetrics {
        scenario_id: scenario_id.to_string(),
        gamma: cfg.gamma,
        min_ade,
        kl: cov.loss,
        n_modes,
        h_util: div.h_util,
        h_yield: div.h_yield,
        h_follow: div.h_follow,
        h_ttc: div.h_ttc,
    };
    Ok((metrics, analysis, cov.q.0))
}

/// Adam from `init`; log-σ is projected back above the floor after each step.
/// Adam's per-coordinate scaling keeps one learning rate usable across the
/// whole γ sweep.
pub fn train_prediction(
    scenario_id: &str,
    init: GmmPrediction,
    gt: &JointTrack,
    scorer: &dyn TrackScorer,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let floor = cfg.sigma_floor.ln();
    let mut pred = init;
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let n = pred.to_params().len();
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    for step in 0..cfg.steps {
        let b = total_loss(&pred, gt, scorer, cfg)?;
        if !b.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss diverged at step {step} (accuracy {}, classification {}, coverage {})",
                b.accuracy, b.classification, b.coverage
            )));
        }
        loss_curve.push(b.total);
        let g = b.grad.flatten();
        let (c1, c2) = (1.0 - b1.powi(step as i32 + 1), 1.0 - b2.powi(step as i32 + 1));
        let mut params = pred.to_params();
        for k in 0..n {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            params[k] -= cfg.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
        pred = pred.with_params(&params)?;
        for ls in pred.log_sigma.iter_mut().flatten() {
            *ls = ls.max(floor);
        }
    }
    let (metrics, analysis, q) = evaluate(scenario_id, &pred, gt, scorer, cfg)?;
    Ok(TrainOutcome { prediction: pred, metrics, loss_curve, q, q_star: analysis.q_star.0.clone(), analysis })
}

pub fn train_on_scenario(scenario: &Scenario, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let eq = scenario.solve()?;
    let scorer = GameScorer { game: &scenario.game, eq: &eq, x0: scenario.initial_state };
    let init = initial_prediction(&scenario.game, &eq, scenario.initial_state, cfg)?;
    train_prediction(&scenario.id, init, &scenario.ground_truth_track()?, &scorer, cfg)
}

/// Trains every (scenario, γ) pair in parallel; results come back ordered by
/// scenario, then by γ as given.
pub fn train_toy_predictor(scenarios: &[Scenario], cfg: &TrainConfig, gammas: &[f64]) -> Result<Vec<TrainOutcome>> {
    if scenarios.is_empty() {
        return Err(Error::Empty("scenarios"));
    }
    let jobs: Vec<(usize, f64)> = (0..scenarios.len()).flat_map(|s| gammas.iter().map(move |&g| (s, g))).collect();
    jobs.par_iter()
        .map(|&(s, gamma)| train_on_scenario(&scenarios[s], &TrainConfig { gamma, ..cfg.clone() }))
        .collect()
}
