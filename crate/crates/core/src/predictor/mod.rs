//! Toy trajectory predictor: per-agent Gaussian mixtures over trajectories,
//! optimized directly with the accuracy, classification and coverage losses.

mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{
    analyze_modes, ideal_histogram, weight_coverage_kl_and_grad, Histogram, ModeSet, SampleSet, DEFAULT_BANDWIDTH,
    DEFAULT_ITERATIONS,
};
use crate::numeric::{argmin, log_softmax, softmax};
use crate::track::{dist, JointTrack};

pub use train::{
    initial_prediction, nucleus_selection, train_on_scenario, train_prediction, train_toy_predictor, GameScorer, TrainMetrics,
    TrainOutcome,
};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Per-agent K-component trajectory mixture with isotropic per-component σ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmPrediction {
    pub dt: f64,
    /// `mu[i][k][t]`, meters.
    pub mu: Vec<Vec<Vec<[f64; 2]>>>,
    /// `log_sigma[i][k]`.
    pub log_sigma: Vec<Vec<f64>>,
    /// `logits[i][k]`; weights are their per-agent softmax.
    pub logits: Vec<Vec<f64>>,
}

/// Gradient with the same layout as [`GmmPrediction`].
#[derive(Clone, Debug, PartialEq)]
pub struct GmmGradient {
    pub mu: Vec<Vec<Vec<[f64; 2]>>>,
    pub log_sigma: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl GmmGradient {
    pub fn zeros_like(p: &GmmPrediction) -> Self {
        Self {
            mu: p.mu.iter().map(|a| a.iter().map(|c| vec![[0.0; 2]; c.len()]).collect()).collect(),
            log_sigma: p.log_sigma.iter().map(|a| vec![0.0; a.len()]).collect(),
            logits: p.logits.iter().map(|a| vec![0.0; a.len()]).collect(),
        }
    }

    fn add_scaled(&mut self, other: &GmmGradient, c: f64) {
        for (a, b) in self.mu.iter_mut().flatten().flatten().zip(other.mu.iter().flatten().flatten()) {
            a[0] += c * b[0];
            a[1] += c * b[1];
        }
        for (a, b) in self.log_sigma.iter_mut().flatten().zip(other.log_sigma.iter().flatten()) {
            *a += c * b;
        }
        for (a, b) in self.logits.iter_mut().flatten().zip(other.logits.iter().flatten()) {
            *a += c * b;
        }
    }

    /// Same order as [`GmmPrediction::to_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mu.iter().flatten().flatten().flat_map(|p| [p[0], p[1]]).collect();
        v.extend(self.log_sigma.iter().flatten());
        v.extend(self.logits.iter().flatten());
        v
    }
}

impl GmmPrediction {
    pub fn new(
        dt: f64,
        mu: Vec<Vec<Vec<[f64; 2]>>>,
        log_sigma: Vec<Vec<f64>>,
        logits: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let p = Self { dt, mu, log_sigma, logits };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let agents = self.mu.len();
        if agents == 0 {
            return Err(Error::Empty("prediction agents"));
        }
        let k = self.mu[0].len();
        if k == 0 {
            return Err(Error::Empty("prediction components"));
        }
        let t = self.mu[0][0].len();
        if t == 0 {
            return Err(Error::Empty("prediction horizon"));
        }
        if self.log_sigma.len() != agents || self.logits.len() != agents {
            return Err(Error::Dimension("per-agent tables disagree on agent count".into()));
        }
        for i in 0..agents {
            if self.mu[i].len() != k || self.log_sigma[i].len() != k || self.logits[i].len() != k {
                return Err(Error::Dimension(format!("agent {i} does not have {k} components")));
            }
            if self.mu[i].iter().any(|c| c.len() != t) {
                return Err(Error::Dimension(format!("agent {i} has a component with horizon other than {t}")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if self.to_params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction parameter".into()));
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.mu.len()
    }

    pub fn components(&self) -> usize {
        self.mu[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.mu[0][0].len()
    }

    pub fn weights(&self, agent: usize) -> Vec<f64> {
        softmax(&self.logits[agent])
    }

    pub fn sigma(&self, agent: usize, k: usize) -> f64 {
        self.log_sigma[agent][k].exp()
    }

    /// Flat parameter vector: means, then log-σ, then logits.
    pub fn to_params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mu.iter().flatten().flatten().flat_map(|p| [p[0], p[1]]).collect();
        v.extend(self.log_sigma.iter().flatten());
        v.extend(self.logits.iter().flatten());
        v
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let n = self.to_params().len();
        if params.len() != n {
            return Err(Error::Dimension(format!("{} parameters, expected {n}", params.len())));
        }
        let mut it = params.iter().copied();
        for p in out.mu.iter_mut().flatten().flatten() {
            p[0] = it.next().unwrap_or_default();
            p[1] = it.next().unwrap_or_default();
        }
        for v in out.log_sigma.iter_mut().flatten().chain(out.logits.iter_mut().flatten()) {
            *v = it.next().unwrap_or_default();
        }
        Ok(out)
    }

    /// Track of one storage index for every agent.
    pub fn component_track(&self, k: usize) -> Result<JointTrack> {
        let rows = (0..self.horizon()).map(|t| (0..self.agents()).map(|i| self.mu[i][k][t]).collect()).collect();
        JointTrack::new(self.dt, rows)
    }

    fn check_target(&self, gt: &JointTrack) -> Result<()> {
        if gt.len() != self.horizon() || gt.agents() != self.agents() {
            return Err(Error::Dimension(format!(
                "ground truth is {}x{}, prediction is {}x{}",
                gt.len(),
                gt.agents(),
                self.horizon(),
                self.agents()
            )));
        }
        Ok(())
    }
}

/// Storage index whose endpoints are closest to the ground truth on average over agents.
pub fn closest_component(pred: &GmmPrediction, gt: &JointTrack) -> Result<usize> {
    pred.check_target(gt)?;
    let last = pred.horizon() - 1;
    let d: Vec<f64> = (0..pred.components())
        .map(|k| (0..pred.agents()).map(|i| dist(pred.mu[i][k][last], gt.positions[last][i])).sum::<f64>())
        .collect();
    Ok(argmin(&d).expect("components non-empty"))
}

/// Negative mean (over agents) cumulative log-likelihood of the ground truth
/// under component `k_hat`, weight included at every timestep.
pub fn accuracy_loss_and_grad(pred: &GmmPrediction, gt: &JointTrack, k_hat: usize) -> Result<(f64, GmmGradient)> {
    pred.check_target(gt)?;
    if k_hat >= pred.components() {
        return Err(Error::out_of_range("component", k_hat, pred.components()));
    }
    let agents = pred.agents() as f64;
    let horizon = pred.horizon() as f64;
    let mut grad = GmmGradient::zeros_like(pred);
    let mut loss = 0.0;
    for i in 0..pred.agents() {
        let log_w = log_softmax(&pred.logits[i]);
        let w = softmax(&pred.logits[i]);
        let ls = pred.log_sigma[i][k_hat];
        let var = (2.0 * ls).exp();
        let mut ll = 0.0;
        let mut d_ls = 0.0;
        for t in 0..pred.horizon() {
            let m = pred.mu[i][k_hat][t];
            let o = gt.positions[t][i];
            let d2 = (o[0] - m[0]).powi(2) + (o[1] - m[1]).powi(2);
            ll += log_w[k_hat] - LN_2PI - 2.0 * ls - d2 / (2.0 * var);
            grad.mu[i][k_hat][t] = [(m[0] - o[0]) / (var * agents), (m[1] - o[1]) / (var * agents)];
            d_ls += 2.0 - d2 / var;
        }
        loss -= ll / agents;
        grad.log_sigma[i][k_hat] = d_ls / agents;
        for (j, g) in grad.logits[i].iter_mut().enumerate() {
            *g = -horizon * (f64::from(u8::from(j == k_hat)) - w[j]) / agents;
        }
    }
    Ok((loss, grad))
}

pub fn accuracy_loss(pred: &GmmPrediction, gt: &JointTrack) -> Result<f64> {
    let k = closest_component(pred, gt)?;
    Ok(accuracy_loss_and_grad(pred, gt, k)?.0)
}

/// −log w of component `k_hat`, averaged over agents.
pub fn classification_loss_and_grad(pred: &GmmPrediction, k_hat: usize) -> Result<(f64, GmmGradient)> {
    if k_hat >= pred.components() {
        return Err(Error::out_of_range("component", k_hat, pred.components()));
    }
    let agents = pred.agents() as f64;
    let mut grad = GmmGradient::zeros_like(pred);
    let mut loss = 0.0;
    for i in 0..pred.agents() {
        let log_w = log_softmax(&pred.logits[i]);
        loss -= log_w[k_hat] / agents;
        for (j, g) in grad.logits[i].iter_mut().enumerate() {
            *g = -(f64::from(u8::from(j == k_hat)) - log_w[j].exp()) / agents;
        }
    }
    Ok((loss, grad))
}

pub fn classification_loss(pred: &GmmPrediction, k_hat: usize) -> Result<f64> {
    Ok(classification_loss_and_grad(pred, k_hat)?.0)
}

/// Joint samples built by pairing each agent's components of equal weight rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSamples {
    /// `perms[i][r]`: storage index of agent i's rank-r component.
    pub perms: Vec<Vec<usize>>,
    pub tracks: Vec<JointTrack>,
    /// Σ_i log w of the paired components.
    pub logits: Vec<f64>,
}

impl JointSamples {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn into_sample_set(self, scores: Vec<f64>) -> Result<SampleSet> {
        SampleSet::new(self.tracks, scores, self.logits)
    }
}

/// Sorts each agent's components by weight (descending, ties to the lower
/// index) and concatenates equal ranks. The sort is held fixed when
/// differentiating.
pub fn joint_assembly(pred: &GmmPrediction) -> Result<JointSamples> {
    pred.validate()?;
    let k = pred.components();
    let log_w: Vec<Vec<f64>> = pred.logits.iter().map(|z| log_softmax(z)).collect();
    let perms: Vec<Vec<usize>> = log_w
        .iter()
        .map(|lw| {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| lw[b].total_cmp(&lw[a]).then(a.cmp(&b)));
            order
        })
        .collect();
    let mut tracks = Vec::with_capacity(k);
    let mut logits = Vec::with_capacity(k);
    for r in 0..k {
        let rows = (0..pred.horizon())
            .map(|t| (0..pred.agents()).map(|i| pred.mu[i][perms[i][r]][t]).collect())
            .collect();
        tracks.push(JointTrack::new(pred.dt, rows)?);
        logits.push((0..pred.agents()).map(|i| log_w[i][perms[i][r]]).sum());
    }
    Ok(JointSamples { perms, tracks, logits })
}

/// Pulls a gradient on joint logits back to the marginal logits.
pub fn joint_logit_backprop(pred: &GmmPrediction, joint: &JointSamples, d_joint: &[f64]) -> GmmGradient {
    let mut grad = GmmGradient::zeros_like(pred);
    let total: f64 = d_joint.iter().sum();
    for i in 0..pred.agents() {
        let w = pred.weights(i);
        for (j, g) in grad.logits[i].iter_mut().enumerate() {
            *g = -total * w[j];
        }
        for (r, d) in d_joint.iter().enumerate() {
            grad.logits[i][joint.perms[i][r]] += d;
        }
    }
    grad
}

/// Scores a joint track, e.g. by the cumulative game advantage of its projection.
pub trait TrackScorer {
    fn score(&self, track: &JointTrack) -> Result<f64>;
}

impl<F: Fn(&JointTrack) -> f64> TrackScorer for F {
    fn score(&self, track: &JointTrack) -> Result<f64> {
        Ok(self(track))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Components per agent.
    pub components: usize,
    /// Shape parameter of the ideal histogram.
    pub rho: f64,
    pub bandwidth: f64,
    pub iterations: usize,
    /// Weight mass kept when counting covered modes.
    pub nucleus: f64,
    /// Std-dev of the noise added to initial component means, meters.
    pub init_noise: f64,
    pub init_sigma: f64,
    pub sigma_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 10.0,
            learning_rate: 0.05,
            steps: 400,
            seed: 0,
            components: 6,
            rho: 1.0,
            bandwidth: DEFAULT_BANDWIDTH,
            iterations: DEFAULT_ITERATIONS,
            nucleus: 0.9,
            init_noise: 0.3,
            init_sigma: 1.0,
            sigma_floor: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument("loss coefficients must be finite and non-negative".into()));
        }
        if !(self.learning_rate > 0.0) || self.components == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument("learning rate, components and iterations must be positive".into()));
        }
        if !(self.nucleus > 0.0 && self.nucleus <= 1.0) {
            return Err(Error::InvalidArgument(format!("nucleus mass must be in (0, 1], got {}", self.nucleus)));
        }
        if !(self.sigma_floor > 0.0 && self.bandwidth > 0.0) {
            return Err(Error::InvalidArgument("sigma floor and bandwidth must be positive".into()));
        }
        Ok(())
    }
}

/// Mode structure of the joint samples, held fixed while differentiating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAnalysis {
    pub modes: ModeSet,
    pub scores: Vec<f64>,
    pub q_star: Histogram,
}

pub fn analyze_joint(joint: &JointSamples, scorer: &dyn TrackScorer, cfg: &TrainConfig) -> Result<ModeAnalysis> {
    let scores = joint.tracks.iter().map(|t| scorer.score(t)).collect::<Result<Vec<_>>>()?;
    let samples = joint.clone().into_sample_set(scores.clone())?;
    let modes = analyze_modes(&samples, cfg.bandwidth, cfg.iterations)?;
    let q_star = ideal_histogram(&modes, &scores, cfg.rho)?;
    Ok(ModeAnalysis { modes, scores, q_star })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub accuracy: f64,
    pub classification: f64,
    pub coverage: f64,
    pub k_hat: usize,
    pub grad: GmmGradient,
    pub modes: Option<ModeAnalysis>,
    /// Per-mode predictor mass.
    pub q: Option<Histogram>,
}

/// α·accuracy + β·classification + γ·coverage with analytic gradients, using
/// the given mode structure for the coverage term.
pub fn total_loss_with_modes(
    pred: &GmmPrediction,
    gt: &JointTrack,
    modes: Option<&ModeAnalysis>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let k_hat = closest_component(pred, gt)?;
    let (acc, g_acc) = accuracy_loss_and_grad(pred, gt, k_hat)?;
    let (cls, g_cls) = classification_loss_and_grad(pred, k_hat)?;
    let mut grad = GmmGradient::zeros_like(pred);
    grad.add_scaled(&g_acc, cfg.alpha);
    grad.add_scaled(&g_cls, cfg.beta);
    let mut total = cfg.alpha * acc + cfg.beta * cls;
    let mut coverage = 0.0;
    let mut q = None;
    if cfg.gamma != 0.0 {
        let analysis = modes.ok_or_else(|| Error::InvalidArgument("coverage term needs a mode analysis".into()))?;
        let joint = joint_assembly(pred)?;
        let cov = weight_coverage_kl_and_grad(&joint.logits, &analysis.modes.labels, &analysis.q_star)?;
        coverage = cov.loss;
        total += cfg.gamma * coverage;
        grad.add_scaled(&joint_logit_backprop(pred, &joint, &cov.grad_scores), cfg.gamma);
        q = Some(cov.q);
    }
    Ok(LossBreakdown {
        total,
        accuracy: acc,
        classification: cls,
        coverage,
        k_hat,
        grad,
        modes: modes.cloned(),
        q,
    })
}

/// Full loss: assembles joint samples, scores them, finds modes and evaluates
/// every term. With γ = 0 the mode pipeline is skipped.
pub fn total_loss(
    pred: &GmmPrediction,
    gt: &JointTrack,
    scorer: &dyn TrackScorer,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if cfg.gamma == 0.0 {
        return total_loss_with_modes(pred, gt, None, cfg);
    }
    let analysis = analyze_joint(&joint_assembly(pred)?, scorer, cfg)?;
    total_loss_with_modes(pred, gt, Some(&analysis), cfg)
}
