//! Synthetic interaction scenarios built as small lane games.
//!
//! Every agent drives along a straight lane divided into cells and chooses
//! between `go` (advance one cell) and `stop` each step. Because the games are
//! tabular, every scenario admits exact solving and enumeration.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    enumerate_trajectories, enumeration_count, rollout, solve_soft_equilibrium, AgentState, JointState,
    JointTrajectory, SoftEquilibrium, SolverConfig, TabularGame, DEFAULT_ENUMERATION_CAP,
};
use crate::track::{trajectory_distance, JointTrack};

pub const SCHEMA_VERSION: u32 = 1;
/// Longest horizon that keeps exhaustive enumeration cheap.
pub const MAX_HORIZON: usize = 8;
pub const GO: usize = 0;
pub const STOP: usize = 1;

/// Probability above which a single joint trajectory counts as a mode.
const MODE_PROBABILITY: f64 = 0.2;
const MIN_MODE_SEPARATION: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Yield,
    Follow,
    LowTtc,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Yield, Archetype::Follow, Archetype::LowTtc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Yield => "yield",
            Self::Follow => "follow",
            Self::LowTtc => "low_ttc",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yield" => Ok(Self::Yield),
            "follow" => Ok(Self::Follow),
            "low_ttc" | "low-ttc" => Ok(Self::LowTtc),
            other => Err(Error::UnknownArchetype(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneParams {
    pub horizon: usize,
    /// Meters per cell.
    pub cell_length: f64,
    pub dt: f64,
    /// Cells each agent spends inside the shared region.
    pub zone_cells: usize,
    /// Cells between each agent's start and its conflict zone.
    pub distances: [usize; 2],
    /// Reward per cell advanced.
    pub progress: f64,
    /// Cost of pulling away after a stop.
    pub restart_cost: f64,
    pub collision_cost: f64,
    /// Cost for the first agent to claim the crossing ahead of the second.
    /// Calibrated from the seed when absent.
    pub right_of_way: Option<f64>,
    /// Share of first-agent-goes-first outcomes targeted by calibration.
    pub mode_ratio: Option<f64>,
    pub enumeration_cap: usize,
}

impl Default for LaneParams {
    fn default() -> Self {
        Self {
            horizon: 8,
            cell_length: 4.0,
            dt: 1.0,
            zone_cells: 3,
            distances: [1, 2],
            progress: 4.0,
            restart_cost: 2.0,
            collision_cost: 20.0,
            right_of_way: None,
            mode_ratio: None,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl LaneParams {
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return bad(format!("horizon must be in 1..={MAX_HORIZON}, got {}", self.horizon));
        }
        if !(self.cell_length > 0.0 && self.dt > 0.0) {
            return bad("cell length and dt must be positive".into());
        }
        if self.zone_cells == 0 {
            return bad("zone must span at least one cell".into());
        }
        if let Some(r) = self.mode_ratio {
            if !(0.0..=1.0).contains(&r) || r == 0.0 || r == 1.0 {
                return bad(format!("mode ratio must lie strictly between 0 and 1, got {r}"));
            }
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.horizon + 1
    }
}

/// Solver settings used for scenario games; the crossing decision needs a
/// long fixed-point run to settle.
pub fn scenario_solver() -> SolverConfig {
    SolverConfig::default().with_inner_iters(400)
}

/// Straight lane in world coordinates.
#[derive(Clone, Copy, Debug)]
struct Lane {
    /// World position of cell 0.
    origin: [f64; 2],
    heading: f64,
}

impl Lane {
    fn at(&self, cell: usize, moving: bool, p: &LaneParams) -> AgentState {
        let s = cell as f64 * p.cell_length;
        let speed = if moving { p.cell_length / p.dt } else { 0.0 };
        AgentState::new(
            self.origin[0] + s * self.heading.cos(),
            self.origin[1] + s * self.heading.sin(),
            speed,
            self.heading,
        )
    }

    fn polyline(&self, p: &LaneParams) -> Vec<[f64; 2]> {
        let end = self.at(p.cells() - 1, false, p);
        vec![self.origin, [end.x, end.y]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cell {
    cell: usize,
    moving: bool,
}

/// Two-agent lane game. `reward(agent, before, controls, after)`.
fn lane_game(
    id: &str,
    p: &LaneParams,
    lanes: [Lane; 2],
    reward: impl Fn(usize, &[Cell; 2], &[usize; 2], &[Cell; 2]) -> f64,
) -> TabularGame {
    let l = p.cells();
    let per_agent = 2 * l;
    let decode = |s: usize| -> [Cell; 2] {
        let one = |k: usize| Cell { cell: k / 2, moving: k % 2 == 1 };
        [one(s / per_agent), one(s % per_agent)]
    };
    let encode = |c: &[Cell; 2]| -> usize {
        let one = |c: Cell| c.cell * 2 + usize::from(c.moving);
        one(c[0]) * per_agent + one(c[1])
    };
    let n = per_agent * per_agent;
    let step = |c: Cell, u: usize| if u == GO { Cell { cell: (c.cell + 1).min(l - 1), moving: true } } else { Cell { cell: c.cell, moving: false } };

    let mut states = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for s in 0..n {
        let before = decode(s);
        states.push(JointState(
            (0..2).map(|i| lanes[i].at(before[i].cell, before[i].moving, p)).collect(),
        ));
        let mut row = Vec::with_capacity(4);
        let mut r = [Vec::with_capacity(4), Vec::with_capacity(4)];
        for u0 in 0..2 {
            for u1 in 0..2 {
                let u = [u0, u1];
                let after = [step(before[0], u0), step(before[1], u1)];
                row.push(encode(&after));
                for (i, ri) in r.iter_mut().enumerate() {
                    ri.push(reward(i, &before, &u, &after));
                }
            }
        }
        transitions.push(row);
        for (i, ri) in r.into_iter().enumerate() {
            rewards[i].push(ri);
        }
    }
    TabularGame {
        id: id.to_string(),
        agents: 2,
        horizon: p.horizon,
        dt: p.dt,
        states,
        controls: vec![vec!["go".into(), "stop".into()]; 2],
        transitions,
        rewards: rewards.into(),
    }
}

/// Both agents at cell 0, already moving.
fn start_index(p: &LaneParams) -> usize {
    2 * p.cells() + 1
}

fn motion_reward(p: &LaneParams, progress: f64, before: Cell, u: usize) -> f64 {
    if u == GO {
        progress - if before.moving { 0.0 } else { p.restart_cost }
    } else {
        0.0
    }
}

/// Perpendicular lanes crossing at the origin, the middle of both zones.
fn yield_lanes(p: &LaneParams) -> [Lane; 2] {
    let [d0, d1] = p.distances;
    let half = (p.zone_cells / 2) as f64 * p.cell_length;
    [
        Lane { origin: [-(d0 as f64) * p.cell_length - half, 0.0], heading: 0.0 },
        Lane { origin: [0.0, -(d1 as f64) * p.cell_length - half], heading: FRAC_PI_2 },
    ]
}

fn follow_gap(p: &LaneParams) -> usize {
    p.distances[1].max(1) + p.zone_cells
}

/// One lane, the leader starting `follow_gap` cells ahead.
fn follow_lanes(p: &LaneParams) -> [Lane; 2] {
    [
        Lane { origin: [0.0, 0.0], heading: 0.0 },
        Lane { origin: [follow_gap(p) as f64 * p.cell_length, 0.0], heading: 0.0 },
    ]
}

/// Opposing lanes 3.5 m apart; the agents pass each other mid-horizon.
fn low_ttc_lanes(p: &LaneParams) -> [Lane; 2] {
    let span = p.horizon as f64 * p.cell_length;
    [
        Lane { origin: [-span / 2.0 - p.cell_length, 0.0], heading: 0.0 },
        Lane { origin: [span / 2.0 + p.cell_length, 3.5], heading: std::f64::consts::PI },
    ]
}

fn yield_game(id: &str, p: &LaneParams, w: f64) -> TabularGame {
    let [d0, d1] = p.distances;
    let lanes = yield_lanes(p);
    let in_zone = move |i: usize, c: Cell| c.cell >= p.distances[i] && c.cell < p.distances[i] + p.zone_cells;
    let p2 = p.clone();
    lane_game(id, p, lanes, move |i, before, u, after| {
        let mut r = motion_reward(&p2, p2.progress, before[i], u[i]);
        if in_zone(0, after[0]) && in_zone(1, after[1]) {
            r -= p2.collision_cost;
        }
        let claims = !in_zone(0, before[0]) && before[0].cell < d0 && in_zone(0, after[0]);
        if i == 0 && claims && before[1].cell < d1 {
            r -= w;
        }
        r
    })
}

fn follow_game(id: &str, p: &LaneParams) -> TabularGame {
    let gap = follow_gap(p);
    let lanes = follow_lanes(p);
    let p2 = p.clone();
    // the leader is hesitant, the follower keen
    lane_game(id, p, lanes, move |i, before, u, after| {
        let progress = if i == 0 { p2.progress } else { 0.25 * p2.progress };
        let mut r = motion_reward(&p2, progress, before[i], u[i]);
        if after[0].cell + 1 >= after[1].cell + gap {
            r -= p2.collision_cost;
        }
        r
    })
}

fn low_ttc_game(id: &str, p: &LaneParams) -> TabularGame {
    let lanes = low_ttc_lanes(p);
    let p2 = p.clone();
    lane_game(id, p, lanes, move |i, before, u, _| motion_reward(&p2, p2.progress, before[i], u[i]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    pub archetype: Archetype,
    pub seed: u64,
    pub params: LaneParams,
    pub game: TabularGame,
    pub initial_state: usize,
    pub initial: JointState,
    pub ground_truth: JointTrajectory,
    /// Lane center lines for rendering, meters.
    pub map: Vec<Vec<[f64; 2]>>,
}

impl Scenario {
    pub fn solve(&self) -> Result<SoftEquilibrium> {
        solve_soft_equilibrium(&self.game, &scenario_solver())
    }

    /// Positions after each step of the ground truth, the forecasting target.
    pub fn ground_truth_track(&self) -> Result<JointTrack> {
        JointTrack::future(&self.ground_truth, self.game.dt)
    }

    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(self.archetype.as_str()).join(format!("{}.json", self.seed))
    }
}

fn scenario_id(archetype: Archetype, seed: u64) -> String {
    format!("{archetype}-{seed}")
}

fn lanes_for(archetype: Archetype, p: &LaneParams) -> Vec<Vec<[f64; 2]>> {
    let lanes = match archetype {
        Archetype::Yield => yield_lanes(p),
        Archetype::Follow => follow_lanes(p),
        Archetype::LowTtc => low_ttc_lanes(p),
    };
    lanes.iter().map(|l| l.polyline(p)).collect()
}

/// Probability that the first agent takes the crossing at the first step.
fn first_claim_probability(p: &LaneParams, w: f64) -> Result<f64> {
    let game = yield_game("calibration", p, w);
    let eq = solve_soft_equilibrium(&game, &scenario_solver())?;
    eq.policy(0, 0, start_index(p), GO)
}

/// Bisection on the right-of-way cost so the first agent claims the crossing
/// with probability `target`.
pub fn calibrate_right_of_way(p: &LaneParams, target: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0f64, 4.0 * (p.collision_cost + p.progress * p.horizon as f64));
    let f_lo = first_claim_probability(p, lo)?;
    let f_hi = first_claim_probability(p, hi)?;
    if !(f_lo > target && f_hi < target) {
        return Err(Error::Generation(format!(
            "claim probability spans [{f_hi:.4}, {f_lo:.4}], cannot reach {target:.4}"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if first_claim_probability(p, mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Joint trajectories whose exact probability exceeds the mode threshold.
pub fn dominant_trajectories(
    game: &TabularGame,
    eq: &SoftEquilibrium,
    x0: usize,
    cap: usize,
) -> Result<Vec<(JointTrajectory, f64)>> {
    let mut out = Vec::new();
    for tau in enumerate_trajectories(game, x0, cap)? {
        let lp = crate::game::cumulative_advantage(eq, &tau)?;
        if lp.exp() > MODE_PROBABILITY {
            out.push((tau, lp.exp()));
        }
    }
    Ok(out)
}

fn verify_two_modes(game: &TabularGame, eq: &SoftEquilibrium, x0: usize, cap: usize) -> Result<()> {
    let modes = dominant_trajectories(game, eq, x0, cap)?;
    if modes.len() != 2 {
        return Err(Error::Generation(format!(
            "expected two dominant trajectories, found {}",
            modes.len()
        )));
    }
    let a = JointTrack::full(&modes[0].0, game.dt)?;
    let b = JointTrack::full(&modes[1].0, game.dt)?;
    let sep = trajectory_distance(&a, &b)?;
    if sep <= MIN_MODE_SEPARATION {
        return Err(Error::Generation(format!("dominant trajectories only {sep:.2} m apart")));
    }
    Ok(())
}

fn ground_truth_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0x6A09_E667_F3BC_C909
}

pub fn generate_scenario(archetype: Archetype, params: &LaneParams, seed: u64) -> Result<Scenario> {
    params.check()?;
    let mut p = params.clone();
    let id = scenario_id(archetype, seed);
    let game = match archetype {
        Archetype::Yield => {
            let ratio = *p.mode_ratio.get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                0.4 + 0.2 * rng.gen::<f64>()
            });
            let w = match p.right_of_way {
                Some(w) => w,
                None => calibrate_right_of_way(&p, ratio)?,
            };
            p.right_of_way = Some(w);
            yield_game(&id, &p, w)
        }
        Archetype::Follow => follow_game(&id, &p),
        Archetype::LowTtc => low_ttc_game(&id, &p),
    };
    let count = enumeration_count(&game);
    if count > p.enumeration_cap as f64 {
        return Err(Error::EnumerationCap { count, cap: p.enumeration_cap });
    }
    let x0 = start_index(&p);
    let eq = solve_soft_equilibrium(&game, &scenario_solver())?;
    if archetype == Archetype::Yield {
        verify_two_modes(&game, &eq, x0, p.enumeration_cap)?;
    }
    let ground_truth = rollout(&eq, &game, x0, ground_truth_seed(seed));
    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        id,
        archetype,
        seed,
        map: lanes_for(archetype, &p),
        params: p,
        initial: game.states[x0].clone(),
        game,
        initial_state: x0,
        ground_truth,
    })
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string(scenario)?)?;
    Ok(())
}

/// Writes into `<root>/<archetype>/<seed>.json` and returns the path.
pub fn save_scenario_in(scenario: &Scenario, root: impl AsRef<Path>) -> Result<PathBuf> {
    let path = root.as_ref().join(scenario.relative_path());
    save_scenario(scenario, &path)?;
    Ok(path)
}

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        other => {
            return Err(Error::InvalidArgument(format!("unsupported scenario schema version {other:?}")));
        }
    }
    if let Some(tag) = value.get("archetype").and_then(|v| v.as_str()) {
        tag.parse::<Archetype>()?;
    }
    let s: Scenario = serde_json::from_value(value)?;
    s.game.validate()?;
    s.ground_truth.check(&s.game)?;
    if s.initial_state >= s.game.num_states() {
        return Err(Error::out_of_range("initial state", s.initial_state, s.game.num_states()));
    }
    Ok(s)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    scenario_from_json(&std::fs::read_to_string(path)?)
}

/// Scenarios of one archetype for consecutive seeds, generated in parallel.
pub fn generate_batch(archetype: Archetype, params: &LaneParams, seeds: &[u64]) -> Result<Vec<Scenario>> {
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| generate_scenario(archetype, params, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_state_is_moving_at_cell_zero() {
        let p = LaneParams::default();
        let g = yield_game("t", &p, 0.0);
        let s = &g.states[start_index(&p)];
        assert!(s.0.iter().all(|a| a.speed > 0.0));
        assert_eq!(g.states.len(), (2 * p.cells()).pow(2));
        g.validate().unwrap();
    }

    #[test]
    fn archetype_tags() {
        assert_eq!("low_ttc".parse::<Archetype>().unwrap(), Archetype::LowTtc);
        match "merge".parse::<Archetype>() {
            Err(Error::UnknownArchetype(t)) => assert_eq!(t, "merge"),
            other => panic!("{other:?}"),
        }
    }
}
