//! Semantic diversity: interaction labelers (utility bins, yield, follow,
//! time-to-collision), label entropy and the network-yield filter.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::SampleSet;
use crate::numeric::entropy;
use crate::track::{dist, JointTrack};

pub const DEFAULT_PROXIMITY_RADIUS: f64 = 2.0;
pub const DEFAULT_TTC_THRESHOLD: f64 = 3.0;
/// Contact shorter than this reads as a yield, longer as following.
pub const FOLLOW_MIN_SECONDS: f64 = 1.0;
const UTILITY_BINS: usize = 10;
/// Yield and follow counts are binned as 0, 1, 2+.
const COUNT_BINS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    UtilityBin,
    YieldCount,
    FollowCount,
    TtcCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticLabel {
    pub category: Category,
    pub bin: usize,
    /// Width of the one-hot encoding.
    pub width: usize,
}

impl SemanticLabel {
    pub fn new(category: Category, bin: usize, width: usize) -> Result<Self> {
        if bin >= width {
            return Err(Error::out_of_range("label bin", bin, width));
        }
        Ok(Self { category, bin, width })
    }

    pub fn one_hot(&self) -> Vec<u8> {
        (0..self.width).map(|b| u8::from(b == self.bin)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerConfig {
    pub proximity_radius: f64,
    pub ttc_threshold: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self { proximity_radius: DEFAULT_PROXIMITY_RADIUS, ttc_threshold: DEFAULT_TTC_THRESHOLD }
    }
}

/// Entropy in nats of the weight mass per label, using one global normalizer.
pub fn semantic_entropy(labels: &[usize], weights: &[f64]) -> Result<f64> {
    if labels.len() != weights.len() {
        return Err(Error::Dimension(format!("{} labels for {} weights", labels.len(), weights.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let z: f64 = weights.iter().sum();
    if z == 0.0 {
        return Err(Error::InvalidArgument("all weights are zero".into()));
    }
    let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
    for (&l, &w) in labels.iter().zip(weights) {
        *mass.entry(l).or_default() += w;
    }
    let q: Vec<f64> = mass.values().map(|m| m / z).collect();
    Ok(entropy(&q))
}

/// Bins the Boltzmann probability exp(A) of a joint sample into tenths.
pub fn label_utility_bin(log_prob: f64) -> SemanticLabel {
    let p = if log_prob.is_nan() { 0.0 } else { log_prob.exp().clamp(0.0, 1.0) };
    let bin = ((UTILITY_BINS as f64 * p).floor() as usize).min(UTILITY_BINS - 1);
    SemanticLabel { category: Category::UtilityBin, bin, width: UTILITY_BINS }
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let s = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + s * dx, a[1] + s * dy])
}

/// Distance from `p` to the polyline through `path`.
fn point_polyline(p: [f64; 2], path: &[[f64; 2]]) -> f64 {
    match path {
        [] => f64::INFINITY,
        [only] => dist(p, *only),
        _ => path.windows(2).map(|w| point_segment(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInteraction {
    /// Agent i yields to agent j.
    pub yield_ij: bool,
    pub yield_ji: bool,
    pub follow: bool,
}

/// Labels one agent pair from their paths sampled every `dt` seconds.
///
/// The traces touch at time t when either agent's current position lies within
/// `radius` of the other agent's path swept so far. Contact that starts and ends
/// inside the window and lasts under a second is a yield by whichever agent
/// reaches the shared region later; contact lasting a second or more is following.
pub fn label_yield_follow(
    path_i: &[[f64; 2]],
    path_j: &[[f64; 2]],
    radius: f64,
    dt: f64,
) -> Result<PairInteraction> {
    if path_i.len() != path_j.len() {
        return Err(Error::Dimension(format!("path lengths {} and {}", path_i.len(), path_j.len())));
    }
    if !(radius > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument("radius and dt must be positive".into()));
    }
    let n = path_i.len();
    let contact: Vec<bool> = (0..n)
        .map(|t| {
            point_polyline(path_i[t], &path_j[..=t]) < radius || point_polyline(path_j[t], &path_i[..=t]) < radius
        })
        .collect();
    let (Some(first), Some(last)) = (contact.iter().position(|&c| c), contact.iter().rposition(|&c| c)) else {
        return Ok(PairInteraction::default());
    };
    let span = (last - first) as f64 * dt;
    if span >= FOLLOW_MIN_SECONDS - 1e-9 {
        return Ok(PairInteraction { follow: true, ..Default::default() });
    }
    if first == 0 || last == n - 1 {
        return Ok(PairInteraction::default());
    }
    // first time each agent comes within reach of the other's whole path
    let arrival = |a: &[[f64; 2]], b: &[[f64; 2]]| (0..n).find(|&t| point_polyline(a[t], b) < radius);
    match (arrival(path_i, path_j), arrival(path_j, path_i)) {
        (Some(ai), Some(aj)) if ai > aj => Ok(PairInteraction { yield_ij: true, ..Default::default() }),
        (Some(ai), Some(aj)) if aj > ai => Ok(PairInteraction { yield_ji: true, ..Default::default() }),
        _ => Ok(PairInteraction::default()),
    }
}

/// Directed yield edges; `(i, j)` means i yields to j.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YieldGraph {
    pub edges: BTreeSet<(usize, usize)>,
}

pub fn yield_graph_and_filter(
    edges: impl IntoIterator<Item = (usize, usize)>,
    k: usize,
) -> Result<(YieldGraph, bool)> {
    let mut graph = YieldGraph::default();
    for (i, j) in edges {
        if i == j {
            return Err(Error::InvalidArgument(format!("self-yield edge on agent {i}")));
        }
        graph.edges.insert((i, j));
    }
    let passes = graph.edges.len() >= k;
    Ok((graph, passes))
}

/// All pairwise interactions of a joint track.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackInteractions {
    pub yields: YieldGraph,
    pub follows: BTreeSet<(usize, usize)>,
}

pub fn track_interactions(track: &JointTrack, radius: f64) -> Result<TrackInteractions> {
    let n = track.agents();
    let paths: Vec<Vec<[f64; 2]>> = (0..n).map(|i| track.agent_path(i)).collect();
    let mut out = TrackInteractions::default();
    for i in 0..n {
        for j in i + 1..n {
            let pair = label_yield_follow(&paths[i], &paths[j], radius, track.dt)?;
            if pair.yield_ij {
                out.yields.edges.insert((i, j));
            }
            if pair.yield_ji {
                out.yields.edges.insert((j, i));
            }
            if pair.follow {
                out.follows.insert((i, j));
            }
        }
    }
    Ok(out)
}

pub fn label_yield_count(track: &JointTrack, radius: f64) -> Result<SemanticLabel> {
    let n = track_interactions(track, radius)?.yields.edges.len();
    SemanticLabel::new(Category::YieldCount, n.min(COUNT_BINS - 1), COUNT_BINS)
}

pub fn label_follow_count(track: &JointTrack, radius: f64) -> Result<SemanticLabel> {
    let n = track_interactions(track, radius)?.follows.len();
    SemanticLabel::new(Category::FollowCount, n.min(COUNT_BINS - 1), COUNT_BINS)
}

/// Smallest time-to-collision between two agents over the track, or infinity
/// if they never close in.
pub fn pair_min_ttc(track: &JointTrack, i: usize, j: usize) -> f64 {
    let mut best = f64::INFINITY;
    for t in 0..track.len().saturating_sub(1) {
        let (a0, a1) = (track.positions[t][i], track.positions[t + 1][i]);
        let (b0, b1) = (track.positions[t][j], track.positions[t + 1][j]);
        let p = [b0[0] - a0[0], b0[1] - a0[1]];
        let v = [
            (b1[0] - b0[0] - (a1[0] - a0[0])) / track.dt,
            (b1[1] - b0[1] - (a1[1] - a0[1])) / track.dt,
        ];
        let gap = p[0].hypot(p[1]);
        if gap == 0.0 {
            return 0.0;
        }
        let closing = -(p[0] * v[0] + p[1] * v[1]) / gap;
        if closing > 0.0 {
            best = best.min(gap / closing);
        }
    }
    best
}

/// Number of agents taking part in any pair whose TTC drops below the threshold.
pub fn ttc_agent_count(track: &JointTrack, threshold: f64) -> usize {
    let n = track.agents();
    let mut involved = vec![false; n];
    for i in 0..n {
        for j in i + 1..n {
            if pair_min_ttc(track, i, j) < threshold {
                involved[i] = true;
                involved[j] = true;
            }
        }
    }
    involved.iter().filter(|&&b| b).count()
}

pub fn label_ttc(track: &JointTrack, threshold: f64) -> SemanticLabel {
    let width = track.agents() + 1;
    SemanticLabel { category: Category::TtcCount, bin: ttc_agent_count(track, threshold), width }
}

/// Distinct mode labels among the selected samples.
pub fn mode_coverage_count(selection: &[usize], labels: &[usize]) -> Result<usize> {
    if selection.is_empty() {
        return Err(Error::Empty("selection"));
    }
    let mut seen = BTreeSet::new();
    for &k in selection {
        let l = labels.get(k).ok_or_else(|| Error::out_of_range("selected sample", k, labels.len()))?;
        seen.insert(*l);
    }
    Ok(seen.len())
}

/// The four semantic entropies of a final selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityMetrics {
    pub h_util: f64,
    pub h_yield: f64,
    pub h_follow: f64,
    pub h_ttc: f64,
}

/// Labels every selected sample and measures entropy of the selection's
/// predictor weight over each label family.
pub fn diversity_metrics(samples: &SampleSet, selection: &[usize], cfg: &LabelerConfig) -> Result<DiversityMetrics> {
    if selection.is_empty() {
        return Err(Error::Empty("selection"));
    }
    let all = samples.weights();
    let mut weights = Vec::new();
    let (mut util, mut yld, mut fol, mut ttc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &k in selection {
        let track = samples.tracks.get(k).ok_or_else(|| Error::out_of_range("selected sample", k, samples.len()))?;
        weights.push(all[k]);
        util.push(label_utility_bin(samples.scores[k]).bin);
        let inter = track_interactions(track, cfg.proximity_radius)?;
        yld.push(inter.yields.edges.len().min(COUNT_BINS - 1));
        fol.push(inter.follows.len().min(COUNT_BINS - 1));
        ttc.push(label_ttc(track, cfg.ttc_threshold).bin);
    }
    Ok(DiversityMetrics {
        h_util: semantic_entropy(&util, &weights)?,
        h_yield: semantic_entropy(&yld, &weights)?,
        h_follow: semantic_entropy(&fol, &weights)?,
        h_ttc: semantic_entropy(&ttc, &weights)?,
    })
}
