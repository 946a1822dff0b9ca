//! Finite-state, finite-control dynamic games and their exact maximum-entropy
//! (soft) equilibria.
//!
//! A [`TabularGame`] is time-invariant: time-varying dynamics or rewards are
//! expressed by augmenting the state with the step index. Joint controls are
//! flattened row-major with agent 0 as the slowest-varying digit.

mod fixtures;
mod solve;
mod trajectory;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fixtures::{chicken, random_game, singleton_control_game, zero_reward_game, RandomGameSpec};
pub use solve::{advantage_and_policy, solve_soft_equilibrium, AgentTable, ConvergenceWarning, SoftEquilibrium, SolverConfig};
pub use trajectory::{
    cumulative_advantage, enumerate_all_trajectories, enumerate_trajectories, enumeration_count, rollout, rollouts,
    trajectory_log_prob, AdvantageSource, JointTrajectory, Step, DEFAULT_ENUMERATION_CAP,
};

/// Planar kinematic record of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// m/s
    pub speed: f64,
    /// radians
    pub heading: f64,
}

impl AgentState {
    pub fn new(x: f64, y: f64, speed: f64, heading: f64) -> Self {
        Self { x, y, speed, heading }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.speed.is_finite() && self.heading.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointState(pub Vec<AgentState>);

impl JointState {
    pub fn agents(&self) -> usize {
        self.0.len()
    }
}

/// One control index per agent.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointControl(pub Vec<usize>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularGame {
    #[serde(default)]
    pub id: String,
    pub agents: usize,
    pub horizon: usize,
    /// Seconds per step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub states: Vec<JointState>,
    /// Control names, one list per agent.
    pub controls: Vec<Vec<String>>,
    /// `transitions[state][joint]` is the successor state index.
    pub transitions: Vec<Vec<usize>>,
    /// `rewards[agent][state][joint]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
}

fn default_dt() -> f64 {
    1.0
}

impl TabularGame {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn control_counts(&self) -> Vec<usize> {
        self.controls.iter().map(Vec::len).collect()
    }

    pub fn num_joint_controls(&self) -> usize {
        self.controls.iter().map(Vec::len).product()
    }

    pub fn joint_index(&self, controls: &[usize]) -> Result<usize> {
        if controls.len() != self.agents {
            return Err(Error::Dimension(format!(
                "joint control has {} entries, game has {} agents",
                controls.len(),
                self.agents
            )));
        }
        let mut j = 0;
        for (&u, set) in controls.iter().zip(&self.controls) {
            if u >= set.len() {
                return Err(Error::out_of_range("control", u, set.len()));
            }
            j = j * set.len() + u;
        }
        Ok(j)
    }

    pub fn decode_joint(&self, mut j: usize) -> Vec<usize> {
        let mut out = vec![0; self.agents];
        for i in (0..self.agents).rev() {
            let n = self.controls[i].len();
            out[i] = j % n;
            j /= n;
        }
        out
    }

    /// All joint controls in flattened order.
    pub fn joint_table(&self) -> Vec<Vec<usize>> {
        (0..self.num_joint_controls()).map(|j| self.decode_joint(j)).collect()
    }

    pub fn next_state(&self, state: usize, joint: usize) -> usize {
        self.transitions[state][joint]
    }

    pub fn reward(&self, agent: usize, state: usize, joint: usize) -> f64 {
        self.rewards[agent][state][joint]
    }

    pub fn state_index_of(&self, s: &JointState) -> Option<usize> {
        self.states.iter().position(|x| x == s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGame(m));
        if self.agents == 0 {
            return bad("agent count must be positive".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.states.is_empty() {
            return bad("state set is empty".into());
        }
        if self.controls.len() != self.agents {
            return bad(format!("{} control sets for {} agents", self.controls.len(), self.agents));
        }
        if let Some(i) = self.controls.iter().position(Vec::is_empty) {
            return bad(format!("agent {i} has no controls"));
        }
        for (s, st) in self.states.iter().enumerate() {
            if st.agents() != self.agents {
                return bad(format!("state {s} has {} agents, expected {}", st.agents(), self.agents));
            }
            if !st.0.iter().all(AgentState::is_finite) {
                return bad(format!("state {s} has non-finite coordinates"));
            }
        }
        let n = self.num_states();
        let jc = self.num_joint_controls();
        if self.transitions.len() != n {
            return bad(format!("transition table has {} rows, expected {n}", self.transitions.len()));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if row.len() != jc {
                return bad(format!("transition row {s} has {} entries, expected {jc}", row.len()));
            }
            if let Some(&t) = row.iter().find(|&&t| t >= n) {
                return bad(format!("transition from state {s} leads to unknown state {t}"));
            }
        }
        if self.rewards.len() != self.agents {
            return bad(format!("reward table has {} agents, expected {}", self.rewards.len(), self.agents));
        }
        for (i, per_agent) in self.rewards.iter().enumerate() {
            if per_agent.len() != n {
                return bad(format!("agent {i} reward table has {} states, expected {n}", per_agent.len()));
            }
            for (s, row) in per_agent.iter().enumerate() {
                if row.len() != jc {
                    return bad(format!("agent {i} reward row {s} has {} entries, expected {jc}", row.len()));
                }
                if !row.iter().all(|r| r.is_finite()) {
                    return bad(format!("agent {i} has a non-finite reward at state {s}"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let game: TabularGame = serde_json::from_str(s)?;
        game.validate()?;
        Ok(game)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
