//! Maximum-entropy inverse reinforcement learning over tabular games.
//!
//! An [`AdvantageModel`] parameterizes Q̄ and derives `V = logsumexp Q̄`, so
//! `exp A` is a normalized policy for every parameter value. Fitting
//! minimizes the mean negative per-step log-likelihood of the data by plain
//! gradient descent on sufficient statistics (visit counts).

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    cumulative_advantage, enumerate_trajectories, rollouts, AdvantageSource, JointTrajectory, SoftEquilibrium,
    TabularGame, DEFAULT_ENUMERATION_CAP,
};
use crate::numeric::{logsumexp, softmax};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    /// One Q̄ entry per (step, agent, state, control).
    Tabular {
        horizon: usize,
        num_states: usize,
        control_counts: Vec<usize>,
    },
    /// Q̄ⁱ(x, u) = θᵀ φ(i, x, u), shared across steps.
    Linear {
        horizon: usize,
        num_states: usize,
        control_counts: Vec<usize>,
        /// `features[agent][state][control]`, each of length `dim`.
        features: Vec<Vec<Vec<Vec<f64>>>>,
        dim: usize,
    },
}

impl Representation {
    pub fn tabular_for(game: &TabularGame) -> Self {
        Representation::Tabular {
            horizon: game.horizon,
            num_states: game.num_states(),
            control_counts: game.control_counts(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Representation::Tabular { horizon, .. } | Representation::Linear { horizon, .. } => *horizon,
        }
    }

    pub fn num_states(&self) -> usize {
        match self {
            Representation::Tabular { num_states, .. } | Representation::Linear { num_states, .. } => *num_states,
        }
    }

    pub fn control_counts(&self) -> &[usize] {
        match self {
            Representation::Tabular { control_counts, .. } | Representation::Linear { control_counts, .. } => {
                control_counts
            }
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Representation::Tabular { horizon, num_states, control_counts } => {
                horizon * num_states * control_counts.iter().sum::<usize>()
            }
            Representation::Linear { dim, .. } => *dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Representation::Linear { num_states, control_counts, features, dim, .. } = self {
            if features.len() != control_counts.len() {
                return Err(Error::Dimension("feature table agent count".into()));
            }
            for (i, per_agent) in features.iter().enumerate() {
                if per_agent.len() != *num_states {
                    return Err(Error::Dimension(format!("feature table of agent {i} has wrong state count")));
                }
                for row in per_agent {
                    if row.len() != control_counts[i] || row.iter().any(|f| f.len() != *dim) {
                        return Err(Error::Dimension(format!("feature table of agent {i} has wrong shape")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageModel {
    pub repr: Representation,
    pub theta: Vec<f64>,
}

impl AdvantageModel {
    pub fn new(repr: Representation, theta: Vec<f64>) -> Result<Self> {
        repr.validate()?;
        if theta.len() != repr.num_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, representation needs {}",
                theta.len(),
                repr.num_params()
            )));
        }
        Ok(Self { repr, theta })
    }

    /// Constant Q̄: every policy uniform.
    pub fn uniform(repr: Representation) -> Result<Self> {
        let n = repr.num_params();
        Self::new(repr, vec![0.0; n])
    }

    pub fn random(repr: Representation, seed: u64, scale: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..repr.num_params()).map(|_| scale * (rng.gen::<f64>() * 2.0 - 1.0)).collect();
        Self::new(repr, theta)
    }

    /// Tabular model holding the equilibrium's Q̄ tables.
    pub fn from_equilibrium(eq: &SoftEquilibrium) -> Self {
        let counts: Vec<usize> = (0..eq.agents).map(|i| eq.n_controls(i)).collect();
        let theta = eq
            .tables
            .iter()
            .flat_map(|step| step.iter().flat_map(|tab| tab.q_bar.iter().copied()))
            .collect();
        AdvantageModel {
            repr: Representation::Tabular { horizon: eq.horizon, num_states: eq.num_states, control_counts: counts },
            theta,
        }
    }

    pub fn agents(&self) -> usize {
        self.repr.control_counts().len()
    }

    /// Offset of the tabular block for `(t, i, x)`.
    fn tabular_offset(&self, t: usize, i: usize, x: usize) -> usize {
        let counts = self.repr.control_counts();
        let per_step: usize = counts.iter().sum::<usize>() * self.repr.num_states();
        let before_agent: usize = counts[..i].iter().sum::<usize>() * self.repr.num_states();
        t * per_step + before_agent + x * counts[i]
    }

    fn check(&self, t: usize, i: usize, x: usize) -> Result<()> {
        if t >= self.repr.horizon() {
            return Err(Error::out_of_range("step", t, self.repr.horizon()));
        }
        if i >= self.agents() {
            return Err(Error::out_of_range("agent", i, self.agents()));
        }
        if x >= self.repr.num_states() {
            return Err(Error::out_of_range("state", x, self.repr.num_states()));
        }
        Ok(())
    }

    pub fn q_bar_row(&self, t: usize, i: usize, x: usize) -> Result<Vec<f64>> {
        self.check(t, i, x)?;
        Ok(match &self.repr {
            Representation::Tabular { control_counts, .. } => {
                let o = self.tabular_offset(t, i, x);
                self.theta[o..o + control_counts[i]].to_vec()
            }
            Representation::Linear { features, .. } => features[i][x]
                .iter()
                .map(|phi| phi.iter().zip(&self.theta).map(|(f, w)| f * w).sum())
                .collect(),
        })
    }

    pub fn policy_row(&self, t: usize, i: usize, x: usize) -> Result<Vec<f64>> {
        Ok(softmax(&self.q_bar_row(t, i, x)?))
    }
}

impl AdvantageSource for AdvantageModel {
    fn horizon(&self) -> usize {
        self.repr.horizon()
    }

    fn agents(&self) -> usize {
        AdvantageModel::agents(self)
    }

    fn advantage(&self, t: usize, agent: usize, state: usize, control: usize) -> Result<f64> {
        let row = self.q_bar_row(t, agent, state)?;
        if control >= row.len() {
            return Err(Error::out_of_range("control", control, row.len()));
        }
        Ok(row[control] - logsumexp(&row))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub game_id: String,
    pub seed: u64,
    pub trajectories: Vec<JointTrajectory>,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    game_id: String,
    seed: u64,
    index: usize,
    trajectory: JointTrajectory,
}

impl TrajectoryDataset {
    /// Rollouts of an equilibrium; provenance records the game and seed.
    pub fn from_rollouts(eq: &SoftEquilibrium, game: &TabularGame, x0: usize, n: usize, seed: u64) -> Self {
        Self {
            game_id: game.id.clone(),
            seed,
            trajectories: rollouts(eq, game, x0, n, seed),
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (index, trajectory) in self.trajectories.iter().enumerate() {
            let line = DatasetLine { game_id: self.game_id.clone(), seed: self.seed, index, trajectory: trajectory.clone() };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut out = TrajectoryDataset { game_id: String::new(), seed: 0, trajectories: Vec::new() };
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DatasetLine = serde_json::from_str(&line)?;
            if out.trajectories.is_empty() {
                out.game_id = rec.game_id;
                out.seed = rec.seed;
            }
            out.trajectories.push(rec.trajectory);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Visit counts `c[t][i][x][u]`: the sufficient statistics of the IRL loss.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitCounts {
    pub horizon: usize,
    pub num_states: usize,
    pub control_counts: Vec<usize>,
    pub trajectories: usize,
    counts: Vec<Vec<Vec<Vec<u64>>>>,
}

impl VisitCounts {
    pub fn from_dataset(repr: &Representation, data: &TrajectoryDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("trajectory dataset"));
        }
        let horizon = repr.horizon();
        let num_states = repr.num_states();
        let control_counts = repr.control_counts().to_vec();
        let empty = || -> Vec<Vec<Vec<Vec<u64>>>> {
            (0..horizon)
                .map(|_| control_counts.iter().map(|&n| vec![vec![0u64; n]; num_states]).collect())
                .collect()
        };
        let agents = control_counts.len();
        let counts = data
            .trajectories
            .par_iter()
            .try_fold(empty, |mut acc, tau| {
                if tau.len() != horizon {
                    return Err(Error::Dimension(format!("trajectory length {} differs from horizon {horizon}", tau.len())));
                }
                for (t, step) in tau.steps.iter().enumerate() {
                    if step.state >= num_states || step.controls.0.len() != agents {
                        return Err(Error::Dimension(format!("step {t} does not fit the model shape")));
                    }
                    for (i, &u) in step.controls.0.iter().enumerate() {
                        if u >= control_counts[i] {
                            return Err(Error::out_of_range("control", u, control_counts[i]));
                        }
                        acc[t][i][step.state][u] += 1;
                    }
                }
                Ok(acc)
            })
            .try_reduce(empty, |mut a, b| {
                for (at, bt) in a.iter_mut().zip(b) {
                    for (ai, bi) in at.iter_mut().zip(bt) {
                        for (ax, bx) in ai.iter_mut().zip(bi) {
                            for (au, bu) in ax.iter_mut().zip(bx) {
                                *au += bu;
                            }
                        }
                    }
                }
                Ok(a)
            })?;
        Ok(Self { horizon, num_states, control_counts, trajectories: data.len(), counts })
    }

    pub fn get(&self, t: usize, i: usize, x: usize, u: usize) -> u64 {
        self.counts[t][i][x][u]
    }

    pub fn visits(&self, t: usize, i: usize, x: usize) -> u64 {
        self.counts[t][i][x].iter().sum()
    }
}

/// Loss and gradient with respect to θ.
pub fn irl_loss_and_grad(model: &AdvantageModel, counts: &VisitCounts) -> Result<(f64, Vec<f64>)> {
    let agents = model.agents();
    let norm = (counts.trajectories * counts.horizon * agents) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.theta.len()];
    for t in 0..counts.horizon {
        for i in 0..agents {
            for x in 0..counts.num_states {
                let visits = counts.visits(t, i, x);
                if visits == 0 {
                    continue;
                }
                let q = model.q_bar_row(t, i, x)?;
                let v = logsumexp(&q);
                let pi = softmax(&q);
                for (u, (&qu, &pu)) in q.iter().zip(&pi).enumerate() {
                    let c = counts.get(t, i, x, u) as f64;
                    loss -= c * (qu - v) / norm;
                    // d(−A)/dQ̄ = π − one-hot, weighted by visits
                    let g = (visits as f64 * pu - c) / norm;
                    match &model.repr {
                        Representation::Tabular { .. } => grad[model.tabular_offset(t, i, x) + u] += g,
                        Representation::Linear { features, .. } => {
                            for (gk, f) in grad.iter_mut().zip(&features[i][x][u]) {
                                *gk += g * f;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// −E_{τ∼𝒟}[(1/TI) Σ_t Σ_i Aⁱ_θ(x_t, u_tⁱ)].
pub fn irl_loss(model: &AdvantageModel, data: &TrajectoryDataset) -> Result<f64> {
    let counts = VisitCounts::from_dataset(&model.repr, data)?;
    Ok(irl_loss_and_grad(model, &counts)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub init_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, steps: 20_000, init_seed: 0 }
    }
}

/// Fitted model as saved to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub repr: Representation,
    pub theta: Vec<f64>,
    pub game_id: String,
    /// Loss before the first step and after every step.
    pub loss_curve: Vec<f64>,
}

impl FittedModel {
    pub fn model(&self) -> AdvantageModel {
        AdvantageModel { repr: self.repr.clone(), theta: self.theta.clone() }
    }
}

/// Gradient descent from a small random initialization drawn with `init_seed`.
pub fn fit_advantage_model(repr: Representation, data: &TrajectoryDataset, config: &FitConfig) -> Result<FittedModel> {
    let init = AdvantageModel::random(repr, config.init_seed, 0.01)?;
    fit_advantage_model_from(init, data, config)
}

pub fn fit_advantage_model_from(
    mut model: AdvantageModel,
    data: &TrajectoryDataset,
    config: &FitConfig,
) -> Result<FittedModel> {
    let counts = VisitCounts::from_dataset(&model.repr, data)?;
    let mut curve = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let (loss, grad) = irl_loss_and_grad(&model, &counts)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("IRL loss {loss} at step {step}")));
        }
        curve.push(loss);
        if step == config.steps {
            break;
        }
        for (w, g) in model.theta.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
    }
    Ok(FittedModel { repr: model.repr, theta: model.theta, game_id: data.game_id.clone(), loss_curve: curve })
}

/// Σ_τ exp A(τ) over every trajectory from `x0`; equals 1 for any source
/// whose per-step advantages are log-normalized.
pub fn verify_partition_unity<S: AdvantageSource + ?Sized>(source: &S, game: &TabularGame, x0: usize) -> Result<f64> {
    let all = enumerate_trajectories(game, x0, DEFAULT_ENUMERATION_CAP)?;
    let mut total = 0.0;
    for tau in &all {
        total += cumulative_advantage(source, tau)?.exp();
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropyCheck {
    /// T·I·ℒ_IRL on rollouts of the true equilibrium.
    pub lhs: f64,
    /// Exact H(p, q_θ) by enumeration.
    pub rhs: f64,
    /// Monte-Carlo standard error of `lhs`.
    pub stderr: f64,
    /// Exact H(p).
    pub entropy: f64,
    pub samples: usize,
}

impl CrossEntropyCheck {
    pub fn within(&self, sigmas: f64) -> bool {
        (self.lhs - self.rhs).abs() <= sigmas * self.stderr
    }
}

pub fn verify_cross_entropy_equivalence<S: AdvantageSource + Sync + ?Sized>(
    truth: &SoftEquilibrium,
    model: &S,
    game: &TabularGame,
    x0: usize,
    n_samples: usize,
    seed: u64,
) -> Result<CrossEntropyCheck> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let all = enumerate_trajectories(game, x0, DEFAULT_ENUMERATION_CAP)?;
    let mut rhs = 0.0;
    let mut entropy = 0.0;
    for tau in &all {
        let lp = cumulative_advantage(truth, tau)?;
        let p = lp.exp();
        if p > 0.0 {
            rhs -= p * cumulative_advantage(model, tau)?;
            entropy -= p * lp;
        }
    }
    let data = rollouts(truth, game, x0, n_samples, seed);
    let values: Vec<f64> = data
        .par_iter()
        .map(|tau| cumulative_advantage(model, tau).map(|a| -a))
        .collect::<Result<_>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(CrossEntropyCheck { lhs: mean, rhs, stderr: (var / n).sqrt(), entropy, samples: n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{chicken, solve_soft_equilibrium, SolverConfig};

    fn chicken_eq() -> (TabularGame, SoftEquilibrium) {
        let g = chicken();
        let eq = solve_soft_equilibrium(&g, &SolverConfig::default()).unwrap();
        (g, eq)
    }

    #[test]
    fn single_step_loss_is_negative_log_policy() {
        let game = crate::game::random_game(
            &crate::game::RandomGameSpec { agents: 1, controls: vec![3], horizon: 1, states: 2 },
            1,
        );
        let model = AdvantageModel::random(Representation::tabular_for(&game), 4, 1.0).unwrap();
        let tau = JointTrajectory::from_controls(&game, 1, &[vec![2]]).unwrap();
        let data = TrajectoryDataset { game_id: game.id.clone(), seed: 0, trajectories: vec![tau] };
        let loss = irl_loss(&model, &data).unwrap();
        let p = model.policy_row(0, 0, 1).unwrap()[2];
        assert!((loss + p.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_loss_is_log_control_count() {
        let (game, eq) = chicken_eq();
        let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 200, 1);
        let model = AdvantageModel::uniform(Representation::tabular_for(&game)).unwrap();
        assert!((irl_loss(&model, &data).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let game = chicken();
        let data = TrajectoryDataset { game_id: "x".into(), seed: 0, trajectories: vec![] };
        let model = AdvantageModel::uniform(Representation::tabular_for(&game)).unwrap();
        assert!(matches!(irl_loss(&model, &data), Err(Error::Empty(_))));
        let cfg = FitConfig { steps: 3, ..FitConfig::default() };
        assert!(fit_advantage_model(Representation::tabular_for(&game), &data, &cfg).is_err());
    }

    #[test]
    fn equilibrium_model_reproduces_equilibrium_advantages() {
        let (_, eq) = chicken_eq();
        let model = AdvantageModel::from_equilibrium(&eq);
        for t in 0..2 {
            for i in 0..2 {
                for x in 0..9 {
                    for u in 0..2 {
                        let a = AdvantageSource::advantage(&model, t, i, x, u).unwrap();
                        assert!((a - eq.advantage(t, i, x, u).unwrap()).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fit_from_truth_is_monotone() {
        let (game, eq) = chicken_eq();
        let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 2_000, 5);
        let cfg = FitConfig { steps: 500, ..FitConfig::default() };
        let fit = fit_advantage_model_from(AdvantageModel::from_equilibrium(&eq), &data, &cfg).unwrap();
        for w in fit.loss_curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (game, eq) = chicken_eq();
        let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 5, 3);
        let mut buf = Vec::new();
        data.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 5);
        assert_eq!(TrajectoryDataset::read_jsonl(&buf[..]).unwrap(), data);
    }
}
