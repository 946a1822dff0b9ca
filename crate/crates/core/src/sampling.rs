//! Final-sample selection: farthest point sampling, non-maximum suppression and
//! non-equilibrium suppression.

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::SampleSet;

pub const DEFAULT_NMS_THRESHOLD: f64 = 2.5;
pub const WIDE_NMS_THRESHOLD: f64 = 10.0;

/// Which rule admitted a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pick {
    /// First FPS pick, the highest-weighted sample.
    Seed,
    Farthest,
    Nms,
    /// Re-admitted after suppression exhausted the pool.
    NmsFallback,
    /// Best sample of a not-yet-covered mode.
    Equilibrium,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub tags: Vec<Pick>,
}

impl SelectionResult {
    fn push(&mut self, k: usize, tag: Pick) {
        self.indices.push(k);
        self.tags.push(tag);
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.contains(&k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Fps,
    Nms,
    Nes,
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fps" => Ok(Self::Fps),
            "nms" => Ok(Self::Nms),
            "nes" => Ok(Self::Nes),
            other => Err(Error::InvalidArgument(format!("unknown sampler `{other}`"))),
        }
    }
}

/// Ranking key inside a mode for NES.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NesRank {
    #[default]
    Advantage,
    Weight,
}

/// Indices sorted by descending key, ties to the lowest index.
fn descending(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Farthest point sampling seeded with the highest-weighted sample.
///
/// Each later pick maximizes its minimum distance to the current selection.
/// Ties prefer the higher weight, then the lower index.
pub fn fps(samples: &SampleSet, count: usize, prefilter_top: Option<usize>) -> Result<SelectionResult> {
    check_count(count)?;
    let w = samples.weights();
    let by_weight = descending(&w);
    let pool: Vec<usize> = match prefilter_top {
        Some(0) => return Err(Error::InvalidArgument("prefilter must keep at least one sample".into())),
        Some(top) => by_weight.iter().copied().take(top).collect(),
        None => by_weight,
    };
    let d = samples.distance_matrix();
    let mut out = SelectionResult::default();
    out.push(pool[0], Pick::Seed);
    let mut min_d: Vec<f64> = pool.iter().map(|&k| d[pool[0]][k]).collect();
    let mut taken = vec![false; pool.len()];
    taken[0] = true;
    while out.len() < count.min(pool.len()) {
        // pool is weight-sorted, so scanning in pool order settles ties correctly
        let mut best: Option<usize> = None;
        for p in 0..pool.len() {
            if taken[p] {
                continue;
            }
            match best {
                Some(b) if min_d[p] <= min_d[b] => {}
                _ => best = Some(p),
            }
        }
        let p = best.expect("pool not exhausted");
        taken[p] = true;
        out.push(pool[p], Pick::Farthest);
        for q in 0..pool.len() {
            min_d[q] = min_d[q].min(d[pool[p]][pool[q]]);
        }
    }
    Ok(out)
}

/// Weight-ordered suppression pass over `order`, continuing an existing selection.
fn suppress_and_fill(
    d: &[Vec<f64>],
    order: &[usize],
    threshold: f64,
    count: usize,
    out: &mut SelectionResult,
) {
    let k = d.len();
    let mut suppressed = vec![false; k];
    for &s in &out.indices {
        for j in 0..k {
            if d[s][j] < threshold {
                suppressed[j] = true;
            }
        }
    }
    for &c in order {
        if out.len() >= count {
            return;
        }
        if suppressed[c] || out.contains(c) {
            continue;
        }
        out.push(c, Pick::Nms);
        for j in 0..k {
            if d[c][j] < threshold {
                suppressed[j] = true;
            }
        }
    }
    for &c in order {
        if out.len() >= count {
            return;
        }
        if !out.contains(c) {
            out.push(c, Pick::NmsFallback);
        }
    }
}

/// Non-maximum suppression on predictor weights with weight-ordered fallback.
pub fn nms(samples: &SampleSet, threshold: f64, count: usize) -> Result<SelectionResult> {
    check_count(count)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    let order = descending(&samples.weights());
    let mut out = SelectionResult::default();
    suppress_and_fill(&samples.distance_matrix(), &order, threshold, count, &mut out);
    Ok(out)
}

/// Non-equilibrium suppression.
///
/// Visits modes from the strongest to the weakest (a mode's strength is its
/// best rank key) and takes each mode's best sample. Once every mode is
/// represented, the remaining slots are filled by NMS around the picks.
pub fn nes(
    samples: &SampleSet,
    labels: &[usize],
    count: usize,
    nms_threshold: f64,
    rank: NesRank,
) -> Result<SelectionResult> {
    check_count(count)?;
    if labels.len() != samples.len() {
        return Err(Error::Dimension(format!("{} labels for {} samples", labels.len(), samples.len())));
    }
    if !(nms_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {nms_threshold}")));
    }
    let weights = samples.weights();
    let keys = match rank {
        NesRank::Advantage => &samples.scores,
        NesRank::Weight => &weights,
    };
    let n_modes = labels.iter().max().map_or(0, |m| m + 1);
    let mut best: Vec<Option<usize>> = vec![None; n_modes];
    for (k, &l) in labels.iter().enumerate() {
        match best[l] {
            Some(b) if keys[k] <= keys[b] => {}
            _ => best[l] = Some(k),
        }
    }
    let mut modes: Vec<(usize, usize)> = best.iter().enumerate().filter_map(|(m, b)| b.map(|b| (m, b))).collect();
    modes.sort_by(|a, b| keys[b.1].partial_cmp(&keys[a.1]).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));

    let mut out = SelectionResult::default();
    for &(_, k) in modes.iter().take(count) {
        out.push(k, Pick::Equilibrium);
    }
    let order = descending(&weights);
    suppress_and_fill(&samples.distance_matrix(), &order, nms_threshold, count, &mut out);
    Ok(out)
}
