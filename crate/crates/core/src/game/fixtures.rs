use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentState, JointState, TabularGame};

const GO: usize = 0;
const CELL: f64 = 5.0;

/// Two agents approach a shared conflict cell; each chooses `go` or `wait`
/// for two steps. Going pays +1, except that both going into the conflict
/// cell together costs −5 each. Waiting pays 0.
///
/// State index is `3·p₁ + p₂` with per-agent positions 0 (before the cell),
/// 1 (in the cell) and 2 (past it); the initial state is 0.
pub fn chicken() -> TabularGame {
    let positions = 3usize;
    let mut states = Vec::new();
    for p1 in 0..positions {
        for p2 in 0..positions {
            states.push(JointState(vec![
                AgentState::new((p1 as f64 - 1.0) * CELL, 0.0, 0.0, 0.0),
                AgentState::new(0.0, (p2 as f64 - 1.0) * CELL, 0.0, std::f64::consts::FRAC_PI_2),
            ]));
        }
    }
    let step = |p: usize, u: usize| if u == GO { (p + 1).min(positions - 1) } else { p };
    let mut transitions = vec![vec![0; 4]; states.len()];
    let mut rewards = vec![vec![vec![0.0; 4]; states.len()]; 2];
    for p1 in 0..positions {
        for p2 in 0..positions {
            let x = p1 * positions + p2;
            for u1 in 0..2 {
                for u2 in 0..2 {
                    let j = u1 * 2 + u2;
                    let (n1, n2) = (step(p1, u1), step(p2, u2));
                    transitions[x][j] = n1 * positions + n2;
                    let conflict = u1 == GO && u2 == GO && n1 == 1 && n2 == 1;
                    for (i, u) in [u1, u2].into_iter().enumerate() {
                        rewards[i][x][j] = match (conflict, u == GO) {
                            (true, _) => -5.0,
                            (false, true) => 1.0,
                            (false, false) => 0.0,
                        };
                    }
                }
            }
        }
    }
    TabularGame {
        id: "chicken".into(),
        agents: 2,
        horizon: 2,
        dt: 1.0,
        states,
        controls: vec![vec!["go".into(), "wait".into()]; 2],
        transitions,
        rewards,
    }
}

/// Single agent on a 3-state ring with all rewards zero.
pub fn zero_reward_game(horizon: usize, n_controls: usize) -> TabularGame {
    let n = 3;
    TabularGame {
        id: "zero-reward".into(),
        agents: 1,
        horizon,
        dt: 1.0,
        states: (0..n).map(|s| JointState(vec![AgentState::new(s as f64, 0.0, 0.0, 0.0)])).collect(),
        controls: vec![(0..n_controls).map(|u| format!("u{u}")).collect()],
        transitions: (0..n).map(|s| (0..n_controls).map(|u| (s + u) % n).collect()).collect(),
        rewards: vec![vec![vec![0.0; n_controls]; n]],
    }
}

/// Every agent has exactly one control; two states alternate.
pub fn singleton_control_game(agents: usize, horizon: usize) -> TabularGame {
    let states = (0..2)
        .map(|s| JointState((0..agents).map(|i| AgentState::new(s as f64, i as f64, 1.0, 0.0)).collect()))
        .collect();
    TabularGame {
        id: "singleton".into(),
        agents,
        horizon,
        dt: 1.0,
        states,
        controls: vec![vec!["stay".into()]; agents],
        transitions: vec![vec![1], vec![0]],
        rewards: vec![vec![vec![0.5], vec![-1.0]]; agents],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomGameSpec {
    pub agents: usize,
    pub controls: Vec<usize>,
    pub horizon: usize,
    pub states: usize,
}

impl Default for RandomGameSpec {
    fn default() -> Self {
        Self {
            agents: 2,
            controls: vec![2, 3],
            horizon: 3,
            states: 6,
        }
    }
}

/// Random transitions, rewards uniform in [−2, 2] and random planar states.
pub fn random_game(spec: &RandomGameSpec, seed: u64) -> TabularGame {
    assert_eq!(spec.controls.len(), spec.agents, "one control count per agent");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jc: usize = spec.controls.iter().product();
    let states = (0..spec.states)
        .map(|_| {
            JointState(
                (0..spec.agents)
                    .map(|_| {
                        AgentState::new(
                            rng.gen_range(-50.0..50.0),
                            rng.gen_range(-50.0..50.0),
                            rng.gen_range(0.0..15.0),
                            rng.gen_range(-3.1..3.1),
                        )
                    })
                    .collect(),
            )
        })
        .collect();
    let transitions = (0..spec.states)
        .map(|_| (0..jc).map(|_| rng.gen_range(0..spec.states)).collect())
        .collect();
    let rewards = (0..spec.agents)
        .map(|_| {
            (0..spec.states)
                .map(|_| (0..jc).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    TabularGame {
        id: format!("random-{seed}"),
        agents: spec.agents,
        horizon: spec.horizon,
        dt: 1.0,
        states,
        controls: spec
            .controls
            .iter()
            .map(|&n| (0..n).map(|u| format!("u{u}")).collect())
            .collect(),
        transitions,
        rewards,
    }
}
