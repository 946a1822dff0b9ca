use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{JointControl, JointState, SoftEquilibrium, TabularGame};
use crate::error::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub joint_state: JointState,
    pub controls: JointControl,
}

/// `((x₁,u₁),…,(x_T,u_T))` plus the state reached after the last control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub steps: Vec<Step>,
    pub terminal_state: usize,
    pub terminal: JointState,
}

impl JointTrajectory {
    /// Expands a control sequence through the game dynamics.
    pub fn from_controls(game: &TabularGame, x0: usize, controls: &[Vec<usize>]) -> Result<Self> {
        if x0 >= game.num_states() {
            return Err(Error::out_of_range("state", x0, game.num_states()));
        }
        let mut steps = Vec::with_capacity(controls.len());
        let mut x = x0;
        for u in controls {
            let j = game.joint_index(u)?;
            steps.push(Step {
                state: x,
                joint_state: game.states[x].clone(),
                controls: JointControl(u.clone()),
            });
            x = game.next_state(x, j);
        }
        Ok(Self {
            steps,
            terminal_state: x,
            terminal: game.states[x].clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.terminal.agents()
    }

    /// Joint states after each control, `x₂ … x_{T+1}`.
    pub fn future_states(&self) -> impl Iterator<Item = &JointState> {
        self.steps.iter().skip(1).map(|s| &s.joint_state).chain(std::iter::once(&self.terminal))
    }

    pub fn control_sequence(&self) -> Vec<Vec<usize>> {
        self.steps.iter().map(|s| s.controls.0.clone()).collect()
    }

    /// Checks that the trajectory follows the game's dynamics exactly.
    pub fn check(&self, game: &TabularGame) -> Result<()> {
        if self.steps.len() != game.horizon {
            return Err(Error::Dynamics {
                step: self.steps.len(),
                reason: format!("length {} differs from horizon {}", self.steps.len(), game.horizon),
            });
        }
        let mut expected: Option<usize> = None;
        for (t, step) in self.steps.iter().enumerate() {
            if step.state >= game.num_states() {
                return Err(Error::Dynamics { step: t, reason: format!("unknown state {}", step.state) });
            }
            if let Some(e) = expected {
                if e != step.state {
                    return Err(Error::Dynamics { step: t, reason: format!("expected state {e}, found {}", step.state) });
                }
            }
            if step.joint_state != game.states[step.state] {
                return Err(Error::Dynamics { step: t, reason: "joint state does not match its index".into() });
            }
            let j = game
                .joint_index(&step.controls.0)
                .map_err(|e| Error::Dynamics { step: t, reason: e.to_string() })?;
            expected = Some(game.next_state(step.state, j));
        }
        if expected != Some(self.terminal_state) || self.terminal != game.states[self.terminal_state] {
            return Err(Error::Dynamics { step: game.horizon, reason: "terminal state mismatch".into() });
        }
        Ok(())
    }
}

/// Anything that assigns a per-agent advantage `Aⁱ_t(x, u)`.
pub trait AdvantageSource {
    fn horizon(&self) -> usize;
    fn agents(&self) -> usize;
    fn advantage(&self, t: usize, agent: usize, state: usize, control: usize) -> Result<f64>;
}

impl AdvantageSource for SoftEquilibrium {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn agents(&self) -> usize {
        self.agents
    }

    fn advantage(&self, t: usize, agent: usize, state: usize, control: usize) -> Result<f64> {
        SoftEquilibrium::advantage(self, t, agent, state, control)
    }
}

impl<S: AdvantageSource + ?Sized> AdvantageSource for &S {
    fn horizon(&self) -> usize {
        (**self).horizon()
    }

    fn agents(&self) -> usize {
        (**self).agents()
    }

    fn advantage(&self, t: usize, agent: usize, state: usize, control: usize) -> Result<f64> {
        (**self).advantage(t, agent, state, control)
    }
}

/// A(τ) = Σ_t Σ_i Aⁱ(x_t, u_tⁱ).
pub fn cumulative_advantage<S: AdvantageSource + ?Sized>(source: &S, tau: &JointTrajectory) -> Result<f64> {
    if tau.len() != source.horizon() {
        return Err(Error::Dimension(format!(
            "trajectory length {} differs from horizon {}",
            tau.len(),
            source.horizon()
        )));
    }
    let mut total = 0.0;
    for (t, step) in tau.steps.iter().enumerate() {
        if step.controls.0.len() != source.agents() {
            return Err(Error::Dimension(format!(
                "step {t} has {} controls for {} agents",
                step.controls.0.len(),
                source.agents()
            )));
        }
        for (i, &u) in step.controls.0.iter().enumerate() {
            total += source.advantage(t, i, step.state, u)?;
        }
    }
    Ok(total)
}

/// log p(τ) = Σ_t Σ_i log πⁱ(u_tⁱ | x_t).
pub fn trajectory_log_prob(eq: &SoftEquilibrium, game: &TabularGame, tau: &JointTrajectory) -> Result<f64> {
    tau.check(game)?;
    let mut total = 0.0;
    for (t, step) in tau.steps.iter().enumerate() {
        for (i, &u) in step.controls.0.iter().enumerate() {
            total += eq.policy(t, i, step.state, u)?.ln();
        }
    }
    Ok(total)
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Samples each agent's control independently from its equilibrium policy.
pub fn rollout(eq: &SoftEquilibrium, game: &TabularGame, x0: usize, seed: u64) -> JointTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(game.horizon);
    let mut x = x0;
    for t in 0..game.horizon {
        let controls: Vec<usize> = (0..game.agents)
            .map(|i| {
                let row = eq.policy_row(t, i, x).expect("rollout indices are in range");
                sample_index(&mut rng, &row)
            })
            .collect();
        let j = game.joint_index(&controls).expect("sampled controls are in range");
        steps.push(Step {
            state: x,
            joint_state: game.states[x].clone(),
            controls: JointControl(controls),
        });
        x = game.next_state(x, j);
    }
    JointTrajectory {
        steps,
        terminal_state: x,
        terminal: game.states[x].clone(),
    }
}

/// Per-rollout seed derived from a base seed; rollouts are independent of
/// thread scheduling.
fn derive_seed(base: u64, k: u64) -> u64 {
    let mut z = base ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rollouts(eq: &SoftEquilibrium, game: &TabularGame, x0: usize, n: usize, seed: u64) -> Vec<JointTrajectory> {
    (0..n as u64)
        .into_par_iter()
        .map(|k| rollout(eq, game, x0, derive_seed(seed, k)))
        .collect()
}

pub fn enumeration_count(game: &TabularGame) -> f64 {
    (game.num_joint_controls() as f64).powi(game.horizon as i32)
}

/// Every joint control sequence of length T expanded through the dynamics,
/// in lexicographic order of flattened joint controls.
pub fn enumerate_trajectories(game: &TabularGame, x0: usize, cap: usize) -> Result<Vec<JointTrajectory>> {
    game.validate()?;
    if x0 >= game.num_states() {
        return Err(Error::out_of_range("state", x0, game.num_states()));
    }
    let count = enumeration_count(game);
    if count > cap as f64 {
        return Err(Error::EnumerationCap { count, cap });
    }
    let joints = game.joint_table();
    let jc = joints.len();
    let total = count as usize;
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; game.horizon];
    for _ in 0..total {
        let controls: Vec<Vec<usize>> = digits.iter().map(|&j| joints[j].clone()).collect();
        out.push(JointTrajectory::from_controls(game, x0, &controls)?);
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < jc {
                break;
            }
            *d = 0;
        }
    }
    Ok(out)
}

/// All trajectories from `x0` with their exact equilibrium log-probabilities.
pub fn enumerate_all_trajectories(
    eq: &SoftEquilibrium,
    game: &TabularGame,
    x0: usize,
) -> Result<Vec<(JointTrajectory, f64)>> {
    enumerate_trajectories(game, x0, DEFAULT_ENUMERATION_CAP)?
        .into_iter()
        .map(|tau| {
            let lp = cumulative_advantage(eq, &tau)?;
            Ok((tau, lp))
        })
        .collect()
}
