//! Equilibrium enumeration over a candidate set: restricted Mean Shift, nearest
//! mode classification, and the ideal/empirical mode histograms with the KL
//! coverage loss.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmin, log_softmax, softmax};
use crate::track::{trajectory_distance, JointTrack};

pub const DEFAULT_BANDWIDTH: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 10;

/// KL terms whose q mass falls below this are dropped.
const KL_FLOOR: f64 = 1e-300;

/// K weighted candidate joint tracks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub tracks: Vec<JointTrack>,
    /// Cumulative advantage of each sample.
    pub scores: Vec<f64>,
    /// Predictor weight logits. Only their softmax matters.
    pub logits: Vec<f64>,
}

impl SampleSet {
    pub fn new(tracks: Vec<JointTrack>, scores: Vec<f64>, logits: Vec<f64>) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::Empty("sample set"));
        }
        if scores.len() != tracks.len() || logits.len() != tracks.len() {
            return Err(Error::Dimension(format!(
                "{} tracks, {} scores, {} logits",
                tracks.len(),
                scores.len(),
                logits.len()
            )));
        }
        if let Some(k) = scores.iter().chain(&logits).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample score/logit entry {k}")));
        }
        let agents = tracks[0].agents();
        if tracks.iter().any(|t| t.agents() != agents) {
            return Err(Error::Dimension("samples disagree on agent count".into()));
        }
        Ok(Self { tracks, scores, logits })
    }

    /// Uniform predictor weights.
    pub fn with_scores(tracks: Vec<JointTrack>, scores: Vec<f64>) -> Result<Self> {
        let logits = vec![0.0; tracks.len()];
        Self::new(tracks, scores, logits)
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Normalized predictor weights.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn distance_matrix(&self) -> Vec<Vec<f64>> {
        let k = self.len();
        let mut d = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a + 1..k {
                // agent counts are checked in `new`
                let v = trajectory_distance(&self.tracks[a], &self.tracks[b]).unwrap_or(f64::INFINITY);
                d[a][b] = v;
                d[b][a] = v;
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    /// Sample indices of the representatives, ascending.
    pub representatives: Vec<usize>,
    pub rep_scores: Vec<f64>,
    /// Mode index of every sample.
    pub labels: Vec<usize>,
    /// Whether every representative was a fixed point of the ascent.
    pub converged: bool,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Same representatives, labels replaced by nearest-representative classification.
    pub fn reclassified(&self, samples: &SampleSet) -> Result<Self> {
        let labels = classify_modes(samples, &self.representatives)?;
        Ok(Self { labels, ..self.clone() })
    }
}

/// One ascent step for every sample: the highest-scoring sample strictly inside
/// the bandwidth ball.
fn ascent_map(dists: &[Vec<f64>], scores: &[f64], bandwidth: f64) -> Vec<usize> {
    let k = scores.len();
    (0..k)
        .map(|a| {
            let mut best = a;
            for j in 0..k {
                if dists[a][j] < bandwidth && (scores[j] > scores[best] || (scores[j] == scores[best] && j < best)) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Restricted Mean Shift by argmax pointer ascent.
///
/// Each sample starts anchored at itself and repeatedly jumps to the best
/// sample within `bandwidth` of its current anchor. The distinct final anchors
/// become the representatives. If `iterations` is too small for some chain to
/// settle, representatives still label themselves and `converged` is false.
pub fn mean_shift_modes(samples: &SampleSet, bandwidth: f64, iterations: usize) -> Result<ModeSet> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("mean shift needs at least one iteration".into()));
    }
    let dists = samples.distance_matrix();
    let step = ascent_map(&dists, &samples.scores, bandwidth);
    let mut anchor: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..iterations {
        let next: Vec<usize> = anchor.iter().map(|&a| step[a]).collect();
        if next == anchor {
            break;
        }
        anchor = next;
    }

    let mut representatives = anchor.clone();
    representatives.sort_unstable();
    representatives.dedup();
    let converged = representatives.iter().all(|&r| step[r] == r);
    let mode_of = |s: usize| representatives.binary_search(&s).ok();
    let labels = (0..samples.len())
        .map(|k| mode_of(k).unwrap_or_else(|| mode_of(anchor[k]).expect("anchor is a representative")))
        .collect();
    let rep_scores = representatives.iter().map(|&r| samples.scores[r]).collect();
    Ok(ModeSet { representatives, rep_scores, labels, converged })
}

/// Nearest representative by endpoint distance, ties to the lowest mode index.
pub fn classify_modes(samples: &SampleSet, reps: &[usize]) -> Result<Vec<usize>> {
    if reps.is_empty() {
        return Err(Error::Empty("representatives"));
    }
    if let Some(&r) = reps.iter().find(|&&r| r >= samples.len()) {
        return Err(Error::out_of_range("representative", r, samples.len()));
    }
    samples
        .tracks
        .iter()
        .map(|t| {
            let d = reps
                .iter()
                .map(|&r| trajectory_distance(t, &samples.tracks[r]))
                .collect::<Result<Vec<_>>>()?;
            Ok(argmin(&d).expect("reps non-empty"))
        })
        .collect()
}

/// Probability vector over modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Histogram(pub Vec<f64>);

impl Histogram {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Empty("histogram"));
        }
        if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("histogram logit".into()));
        }
        Ok(Self(softmax(logits)))
    }

    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("histogram"));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("not a probability vector (sum {sum})")));
        }
        Ok(Self(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

fn check_labels(labels: &[usize], n_samples: usize, n_modes: usize) -> Result<()> {
    if labels.len() != n_samples {
        return Err(Error::Dimension(format!("{} labels for {} samples", labels.len(), n_samples)));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_modes) {
        return Err(Error::out_of_range("mode label", l, n_modes));
    }
    Ok(())
}

/// Per-mode logit ρ·max of member scores, softmaxed.
pub fn ideal_histogram(modes: &ModeSet, scores: &[f64], rho: f64) -> Result<Histogram> {
    let m = modes.len();
    if m == 0 {
        return Err(Error::Empty("mode set"));
    }
    check_labels(&modes.labels, scores.len(), m)?;
    let mut best = vec![f64::NEG_INFINITY; m];
    for (&l, &s) in modes.labels.iter().zip(scores) {
        best[l] = best[l].max(s);
    }
    if let Some(e) = best.iter().position(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::InvalidArgument(format!("mode {e} has no assigned samples")));
    }
    // ρ = 0 must give an exactly uniform histogram
    let logits: Vec<f64> = best.iter().map(|&b| if rho == 0.0 { 0.0 } else { rho * b }).collect();
    Histogram::from_logits(&logits)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Cumulative game advantage of each sample.
    #[default]
    Advantage,
    /// Normalized predictor weight of each sample.
    PredictorWeight,
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advantage" => Ok(Self::Advantage),
            "predictor_weight" | "predictor-weight" | "weight" => Ok(Self::PredictorWeight),
            other => Err(Error::InvalidArgument(format!("unknown score source `{other}`"))),
        }
    }
}

impl ScoreSource {
    pub fn scores(self, samples: &SampleSet) -> Vec<f64> {
        match self {
            Self::Advantage => samples.scores.clone(),
            Self::PredictorWeight => samples.weights(),
        }
    }
}

/// Per-mode sums of `scores`; empty modes get 0.
pub fn mode_sums(scores: &[f64], labels: &[usize], n_modes: usize) -> Result<Vec<f64>> {
    check_labels(labels, scores.len(), n_modes)?;
    let mut sums = vec![0.0; n_modes];
    for (&l, &s) in labels.iter().zip(scores) {
        sums[l] += s;
    }
    Ok(sums)
}

/// Advantage source: softmax of per-mode score sums (empty modes get logit 0).
/// Predictor-weight source: per-mode sums of the normalized weights.
pub fn empirical_histogram(
    samples: &SampleSet,
    labels: &[usize],
    n_modes: usize,
    source: ScoreSource,
) -> Result<Histogram> {
    if n_modes == 0 {
        return Err(Error::Empty("mode set"));
    }
    match source {
        ScoreSource::Advantage => Histogram::from_logits(&mode_sums(&samples.scores, labels, n_modes)?),
        ScoreSource::PredictorWeight => Ok(Histogram(mode_sums(&samples.weights(), labels, n_modes)?)),
    }
}

/// KL(q ‖ q*) for strictly positive q given by its logits.
pub fn kl_divergence(q: &Histogram, q_star: &Histogram) -> Result<f64> {
    if q.len() != q_star.len() {
        return Err(Error::Dimension(format!("histograms of size {} and {}", q.len(), q_star.len())));
    }
    Ok(q.0
        .iter()
        .zip(&q_star.0)
        .filter(|(qm, _)| **qm >= KL_FLOOR)
        .map(|(qm, qs)| qm * (qm.ln() - qs.ln()))
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageLoss {
    pub loss: f64,
    pub q: Histogram,
    /// d loss / d mode logit. For the weight form, the per-mode factor that
    /// multiplies each sample's weight.
    pub grad_logits: Vec<f64>,
    /// d loss / d sample input (score or logit).
    pub grad_scores: Vec<f64>,
}

/// KL(q ‖ q*) where q is the softmax of per-mode score sums. q* is a constant.
pub fn coverage_kl_and_grad(scores: &[f64], labels: &[usize], q_star: &Histogram) -> Result<CoverageLoss> {
    let m = q_star.len();
    let logits = mode_sums(scores, labels, m)?;
    let log_q = log_softmax(&logits);
    let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();
    let log_qs: Vec<f64> = q_star.0.iter().map(|v| v.ln()).collect();
    let mut loss = 0.0;
    for j in 0..m {
        if q[j] >= KL_FLOOR {
            loss += q[j] * (log_q[j] - log_qs[j]);
        }
    }
    let grad_logits: Vec<f64> = (0..m)
        .map(|j| if q[j] >= KL_FLOOR { q[j] * (log_q[j] - log_qs[j] - loss) } else { 0.0 })
        .collect();
    let grad_scores = labels.iter().map(|&l| grad_logits[l]).collect();
    Ok(CoverageLoss { loss, q: Histogram(q), grad_logits, grad_scores })
}

/// KL(q ‖ q*) where q_m is the total softmax weight of the samples in mode m.
/// The gradient is with respect to the sample logits.
pub fn weight_coverage_kl_and_grad(logits: &[f64], labels: &[usize], q_star: &Histogram) -> Result<CoverageLoss> {
    let m = q_star.len();
    let w = softmax(logits);
    let q = mode_sums(&w, labels, m)?;
    let log_qs: Vec<f64> = q_star.0.iter().map(|v| v.ln()).collect();
    let mut loss = 0.0;
    for j in 0..m {
        if q[j] >= KL_FLOOR {
            loss += q[j] * (q[j].ln() - log_qs[j]);
        }
    }
    let grad_logits: Vec<f64> =
        (0..m).map(|j| if q[j] >= KL_FLOOR { q[j].ln() - log_qs[j] - loss } else { 0.0 }).collect();
    let grad_scores = labels.iter().zip(&w).map(|(&l, &wk)| wk * grad_logits[l]).collect();
    Ok(CoverageLoss { loss, q: Histogram(q), grad_logits, grad_scores })
}

/// Coverage loss for either score source. Gradients are with respect to the
/// sample scores (advantage) or the sample logits (predictor weight).
pub fn coverage_loss(samples: &SampleSet, labels: &[usize], q_star: &Histogram, source: ScoreSource) -> Result<CoverageLoss> {
    match source {
        ScoreSource::Advantage => coverage_kl_and_grad(&samples.scores, labels, q_star),
        ScoreSource::PredictorWeight => weight_coverage_kl_and_grad(&samples.logits, labels, q_star),
    }
}

/// Mean Shift followed by nearest-representative relabeling.
pub fn analyze_modes(samples: &SampleSet, bandwidth: f64, iterations: usize) -> Result<ModeSet> {
    mean_shift_modes(samples, bandwidth, iterations)?.reclassified(samples)
}
