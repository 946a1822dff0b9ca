use serde::{Deserialize, Serialize};

use super::TabularGame;
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, softmax};

/// Fixed-point iterations below this residual stop early.
const EXACT_RESIDUAL: f64 = 1e-15;
const MIN_DAMPING: f64 = 1.0 / 1024.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Rounds of the coupled best-response iteration per (step, state).
    pub inner_iters: usize,
    /// Residual above which a non-convergence warning is recorded.
    pub tolerance: f64,
    /// Initial relaxation step of the policy update; halved whenever the
    /// residual grows.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            inner_iters: 50,
            tolerance: 1e-9,
            damping: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn with_inner_iters(self, inner_iters: usize) -> Self {
        Self { inner_iters, ..self }
    }
}

/// Per-agent tables at one step, indexed `[state * n_controls + control]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTable {
    pub n_controls: usize,
    pub q_bar: Vec<f64>,
    pub value: Vec<f64>,
    pub advantage: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceWarning {
    pub step: usize,
    pub state: usize,
    pub residual: f64,
}

/// Exact soft-equilibrium tables for every step, agent and state.
///
/// The policy is never stored separately: `π = exp(A)` with `A = Q̄ − V` and
/// `V = logsumexp Q̄`, so every row is normalized by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftEquilibrium {
    pub game_id: String,
    pub horizon: usize,
    pub agents: usize,
    pub num_states: usize,
    /// `tables[step][agent]`
    pub tables: Vec<Vec<AgentTable>>,
    pub max_residual: f64,
    pub warnings: Vec<ConvergenceWarning>,
}

impl SoftEquilibrium {
    fn table(&self, t: usize, i: usize, x: usize) -> Result<&AgentTable> {
        if t >= self.horizon {
            return Err(Error::out_of_range("step", t, self.horizon));
        }
        if i >= self.agents {
            return Err(Error::out_of_range("agent", i, self.agents));
        }
        if x >= self.num_states {
            return Err(Error::out_of_range("state", x, self.num_states));
        }
        Ok(&self.tables[t][i])
    }

    fn cell(&self, t: usize, i: usize, x: usize, u: usize) -> Result<(&AgentTable, usize)> {
        let tab = self.table(t, i, x)?;
        if u >= tab.n_controls {
            return Err(Error::out_of_range("control", u, tab.n_controls));
        }
        Ok((tab, x * tab.n_controls + u))
    }

    pub fn q_bar(&self, t: usize, i: usize, x: usize, u: usize) -> Result<f64> {
        let (tab, k) = self.cell(t, i, x, u)?;
        Ok(tab.q_bar[k])
    }

    pub fn value(&self, t: usize, i: usize, x: usize) -> Result<f64> {
        Ok(self.table(t, i, x)?.value[x])
    }

    pub fn advantage(&self, t: usize, i: usize, x: usize, u: usize) -> Result<f64> {
        let (tab, k) = self.cell(t, i, x, u)?;
        Ok(tab.advantage[k])
    }

    pub fn policy(&self, t: usize, i: usize, x: usize, u: usize) -> Result<f64> {
        Ok(self.advantage(t, i, x, u)?.exp())
    }

    pub fn policy_row(&self, t: usize, i: usize, x: usize) -> Result<Vec<f64>> {
        let tab = self.table(t, i, x)?;
        let n = tab.n_controls;
        Ok(tab.advantage[x * n..(x + 1) * n].iter().map(|a| a.exp()).collect())
    }

    pub fn n_controls(&self, i: usize) -> usize {
        self.tables[0][i].n_controls
    }

    pub fn converged(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// `(Aⁱ(x,u), exp Aⁱ(x,u))` at step `t`.
pub fn advantage_and_policy(eq: &SoftEquilibrium, t: usize, i: usize, x: usize, u: usize) -> Result<(f64, f64)> {
    let a = eq.advantage(t, i, x, u)?;
    Ok((a, a.exp()))
}

/// Backward induction over the horizon; at each (step, state) the coupled
/// Boltzmann policies are found by relaxed simultaneous best-response
/// iteration starting from uniform policies.
pub fn solve_soft_equilibrium(game: &TabularGame, config: &SolverConfig) -> Result<SoftEquilibrium> {
    game.validate()?;
    if config.inner_iters == 0 {
        return Err(Error::InvalidArgument("inner_iters must be at least 1".into()));
    }
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return Err(Error::InvalidArgument(format!("damping must lie in (0, 1], got {}", config.damping)));
    }
    let n_agents = game.agents;
    let n_states = game.num_states();
    let counts = game.control_counts();
    let joints = game.joint_table();

    let mut tables: Vec<Vec<AgentTable>> = Vec::with_capacity(game.horizon);
    let mut warnings = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut next_value: Vec<Vec<f64>> = vec![vec![0.0; n_states]; n_agents];

    for t in (0..game.horizon).rev() {
        let mut step: Vec<AgentTable> = counts
            .iter()
            .map(|&n| AgentTable {
                n_controls: n,
                q_bar: vec![0.0; n_states * n],
                value: vec![0.0; n_states],
                advantage: vec![0.0; n_states * n],
            })
            .collect();

        for x in 0..n_states {
            // Continuation payoff of each joint control for each agent.
            let payoff: Vec<Vec<f64>> = (0..n_agents)
                .map(|i| {
                    (0..joints.len())
                        .map(|j| game.reward(i, x, j) + next_value[i][game.next_state(x, j)])
                        .collect()
                })
                .collect();
            let (q_bar, residual) = coupled_fixed_point(&payoff, &joints, &counts, config);
            max_residual = max_residual.max(residual);
            if residual > config.tolerance {
                warnings.push(ConvergenceWarning { step: t, state: x, residual });
            }
            for (i, q) in q_bar.into_iter().enumerate() {
                let v = logsumexp(&q);
                let n = counts[i];
                let tab = &mut step[i];
                tab.value[x] = v;
                for (u, qu) in q.into_iter().enumerate() {
                    tab.q_bar[x * n + u] = qu;
                    tab.advantage[x * n + u] = qu - v;
                }
            }
        }
        next_value = step.iter().map(|tab| tab.value.clone()).collect();
        tables.push(step);
    }
    tables.reverse();
    warnings.sort_by_key(|w| (w.step, w.state));

    Ok(SoftEquilibrium {
        game_id: game.id.clone(),
        horizon: game.horizon,
        agents: n_agents,
        num_states: n_states,
        tables,
        max_residual,
        warnings,
    })
}

/// Q̄ⁱ(u) = E_{u¬ⁱ∼π¬ⁱ}[payoffⁱ(u, u¬ⁱ)].
fn expected_q(payoff: &[Vec<f64>], joints: &[Vec<usize>], counts: &[usize], policies: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = counts.iter().map(|&n| vec![0.0; n]).collect();
    for (j, controls) in joints.iter().enumerate() {
        for (i, qi) in q.iter_mut().enumerate() {
            let others: f64 = controls
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(k, &u)| policies[k][u])
                .product();
            qi[controls[i]] += others * payoff[i][j];
        }
    }
    q
}

fn coupled_fixed_point(
    payoff: &[Vec<f64>],
    joints: &[Vec<usize>],
    counts: &[usize],
    config: &SolverConfig,
) -> (Vec<Vec<f64>>, f64) {
    let mut policies: Vec<Vec<f64>> = counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect();
    let mut eta = config.damping;
    let mut previous = f64::INFINITY;
    for _ in 0..config.inner_iters {
        let q = expected_q(payoff, joints, counts, &policies);
        let best: Vec<Vec<f64>> = q.iter().map(|qi| softmax(qi)).collect();
        let residual = max_change(&best, &policies);
        if residual > previous {
            eta = (eta * 0.5).max(MIN_DAMPING);
        }
        previous = residual;
        for (pi, bi) in policies.iter_mut().zip(&best) {
            for (p, b) in pi.iter_mut().zip(bi) {
                *p += eta * (b - *p);
            }
        }
        if residual < EXACT_RESIDUAL {
            break;
        }
    }
    let q = expected_q(payoff, joints, counts, &policies);
    let best: Vec<Vec<f64>> = q.iter().map(|qi| softmax(qi)).collect();
    let residual = max_change(&best, &policies);
    (q, residual)
}

fn max_change(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
