//! Continuous joint tracks: per-timestep planar positions of every agent.
//!
//! Distances, mode analysis, sampling and the interaction labelers all work on
//! tracks rather than on tabular trajectories, so predictor outputs and game
//! rollouts share one representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{JointState, JointTrajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrack {
    /// Seconds between consecutive rows.
    pub dt: f64,
    /// `positions[t][i]` in meters.
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl JointTrack {
    pub fn new(dt: f64, positions: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Empty("track"));
        }
        let agents = positions[0].len();
        if agents == 0 {
            return Err(Error::Empty("track agents"));
        }
        if positions.iter().any(|row| row.len() != agents) {
            return Err(Error::Dimension("track rows disagree on agent count".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if positions.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("track position".into()));
        }
        Ok(Self { dt, positions })
    }

    fn from_states<'a>(states: impl Iterator<Item = &'a JointState>, dt: f64) -> Result<Self> {
        let positions = states.map(|s| s.0.iter().map(|a| a.position()).collect()).collect();
        Self::new(dt, positions)
    }

    /// Every visited state, from the initial one through the terminal one.
    pub fn full(tau: &JointTrajectory, dt: f64) -> Result<Self> {
        let states = tau.steps.iter().map(|s| &s.joint_state).chain(std::iter::once(&tau.terminal));
        Self::from_states(states, dt)
    }

    /// Only the states reached after each control, i.e. what a forecaster predicts.
    pub fn future(tau: &JointTrajectory, dt: f64) -> Result<Self> {
        Self::from_states(tau.future_states(), dt)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.positions[0].len()
    }

    pub fn endpoint(&self, agent: usize) -> [f64; 2] {
        self.positions[self.len() - 1][agent]
    }

    /// Path of one agent over time.
    pub fn agent_path(&self, agent: usize) -> Vec<[f64; 2]> {
        self.positions.iter().map(|row| row[agent]).collect()
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean over agents of the Euclidean distance between endpoints.
pub fn trajectory_distance(a: &JointTrack, b: &JointTrack) -> Result<f64> {
    if a.agents() != b.agents() {
        return Err(Error::Dimension(format!("agent count {} vs {}", a.agents(), b.agents())));
    }
    let n = a.agents();
    Ok((0..n).map(|i| dist(a.endpoint(i), b.endpoint(i))).sum::<f64>() / n as f64)
}

/// Mean over agents and timesteps of the displacement between two equally long tracks.
pub fn average_displacement(a: &JointTrack, b: &JointTrack) -> Result<f64> {
    if a.agents() != b.agents() || a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "track shapes {}x{} vs {}x{}",
            a.len(),
            a.agents(),
            b.len(),
            b.agents()
        )));
    }
    let total: f64 = a
        .positions
        .iter()
        .zip(&b.positions)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(p, q)| dist(*p, *q)))
        .sum();
    Ok(total / (a.len() * a.agents()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn endpoints(points: &[[f64; 2]]) -> JointTrack {
        JointTrack::new(1.0, vec![points.to_vec()]).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = endpoints(&[[0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(trajectory_distance(&a, &a).unwrap(), 0.0);
        let b = endpoints(&[[3.0, 4.0], [4.0, 5.0]]);
        assert!((trajectory_distance(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        let c = endpoints(&[[0.0, 0.0], [11.0, 1.0]]);
        assert!((trajectory_distance(&a, &c).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn agent_mismatch_is_an_error() {
        let a = endpoints(&[[0.0, 0.0]]);
        let b = endpoints(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(trajectory_distance(&a, &b).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(JointTrack::new(1.0, vec![vec![[0.0, 0.0]], vec![]]).is_err());
        assert!(JointTrack::new(0.0, vec![vec![[0.0, 0.0]]]).is_err());
    }

    #[test]
    fn chicken_tracks() {
        let game = crate::game::chicken();
        let tau = JointTrajectory::from_controls(&game, 0, &[vec![0, 1], vec![0, 0]]).unwrap();
        let full = JointTrack::full(&tau, 1.0).unwrap();
        let fut = JointTrack::future(&tau, 1.0).unwrap();
        assert_eq!(full.len(), 3);
        assert_eq!(fut.len(), 2);
        assert_eq!(full.positions[1..], fut.positions[..]);
    }
}
