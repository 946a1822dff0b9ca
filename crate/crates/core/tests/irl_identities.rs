mod common;

use common::{central_diff, oracle_sequence_probs, rel_err, shannon};
use nashmodes::game::{
    chicken, random_game, singleton_control_game, solve_soft_equilibrium, AdvantageSource, RandomGameSpec,
    SolverConfig,
};
use nashmodes::irl::{
    fit_advantage_model, irl_loss, irl_loss_and_grad, verify_cross_entropy_equivalence, verify_partition_unity,
    AdvantageModel, FitConfig, Representation, TrajectoryDataset, VisitCounts,
};
use nashmodes::Result;

/// Adds a constant to V, i.e. subtracts it from every advantage.
struct ValueOffset<S>(S, f64);

impl<S: AdvantageSource> AdvantageSource for ValueOffset<S> {
    fn horizon(&self) -> usize {
        self.0.horizon()
    }
    fn agents(&self) -> usize {
        self.0.agents()
    }
    fn advantage(&self, t: usize, i: usize, x: usize, u: usize) -> Result<f64> {
        Ok(self.0.advantage(t, i, x, u)? - self.1)
    }
}

#[test]
fn tabular_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let game = random_game(&RandomGameSpec { agents: 2, controls: vec![3, 2], horizon: 3, states: 4 }, seed);
        let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
        let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 300, seed);
        let repr = Representation::tabular_for(&game);
        let model = AdvantageModel::random(repr.clone(), seed + 100, 1.0).unwrap();
        let counts = VisitCounts::from_dataset(&repr, &data).unwrap();
        let (_, grad) = irl_loss_and_grad(&model, &counts).unwrap();
        let mut f = |theta: &[f64]| {
            let m = AdvantageModel::new(repr.clone(), theta.to_vec()).unwrap();
            irl_loss_and_grad(&m, &counts).unwrap().0
        };
        for k in 0..grad.len() {
            let fd = central_diff(&mut f, &model.theta, k, 1e-5);
            if grad[k].abs() < 1e-9 && fd.abs() < 1e-9 {
                continue;
            }
            assert!(rel_err(grad[k], fd) < 1e-6, "seed {seed} k {k}: {} vs {fd}", grad[k]);
        }
    }
}

#[test]
fn linear_gradient_matches_finite_differences() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 500, 8);
    let dim = 3;
    let features: Vec<Vec<Vec<Vec<f64>>>> = (0..2)
        .map(|i| {
            (0..9)
                .map(|x| (0..2).map(|u| (0..dim).map(|d| ((i + 2 * x + 3 * u + d) % 5) as f64 * 0.3 - 0.5).collect()).collect())
                .collect()
        })
        .collect();
    let repr = Representation::Linear { horizon: 2, num_states: 9, control_counts: vec![2, 2], features, dim };
    let model = AdvantageModel::new(repr.clone(), vec![0.4, -0.7, 0.2]).unwrap();
    let counts = VisitCounts::from_dataset(&repr, &data).unwrap();
    let (_, grad) = irl_loss_and_grad(&model, &counts).unwrap();
    let mut f = |theta: &[f64]| {
        let m = AdvantageModel::new(repr.clone(), theta.to_vec()).unwrap();
        irl_loss_and_grad(&m, &counts).unwrap().0
    };
    for k in 0..dim {
        let fd = central_diff(&mut f, &model.theta, k, 1e-5);
        assert!(rel_err(grad[k], fd) < 1e-6, "{} vs {fd}", grad[k]);
    }
}

#[test]
fn partition_unity_for_equilibrium_and_models() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    assert!((verify_partition_unity(&eq, &game, 0).unwrap() - 1.0).abs() < 1e-9);

    let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 1_000, 3);
    let cfg = FitConfig { steps: 200, learning_rate: 0.5, init_seed: 9 };
    let fitted = fit_advantage_model(Representation::tabular_for(&game), &data, &cfg).unwrap().model();
    assert!((verify_partition_unity(&fitted, &game, 0).unwrap() - 1.0).abs() < 1e-9);
    let wild = AdvantageModel::random(Representation::tabular_for(&game), 1, 25.0).unwrap();
    assert!((verify_partition_unity(&wild, &game, 0).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn corrupted_value_breaks_partition_unity_by_the_predicted_factor() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    let corrupted = ValueOffset(&eq, 0.1);
    let z = verify_partition_unity(&corrupted, &game, 0).unwrap();
    // every one of the T·I = 4 advantage terms drops by 0.1
    let expected = (-0.1f64 * 4.0).exp();
    assert!((z - expected).abs() < 1e-9, "{z} vs {expected}");
    assert!((z - 1.0).abs() > 0.1);
}

#[test]
fn cross_entropy_matches_entropy_for_true_model() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    let check = verify_cross_entropy_equivalence(&eq, &eq, &game, 0, 100_000, 77).unwrap();
    let h = shannon(&oracle_sequence_probs(&game, 0));
    assert!((check.rhs - h).abs() < 1e-9);
    assert!((check.entropy - h).abs() < 1e-9);
    assert!(check.within(3.0), "{check:?}");
}

#[test]
fn irl_loss_of_truth_on_own_rollouts_is_scaled_entropy() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 100_000, 31);
    let model = AdvantageModel::from_equilibrium(&eq);
    let loss = irl_loss(&model, &data).unwrap();
    let h = shannon(&oracle_sequence_probs(&game, 0));
    let per: Vec<f64> = data
        .trajectories
        .iter()
        .map(|tau| -nashmodes::game::cumulative_advantage(&model, tau).unwrap() / 4.0)
        .collect();
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let se = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((loss - h / 4.0).abs() <= 3.0 * se, "{loss} vs {}", h / 4.0);
}

#[test]
fn mismatched_model_has_larger_cross_entropy() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    for seed in 0..5 {
        let model = AdvantageModel::random(Representation::tabular_for(&game), seed, 2.0).unwrap();
        let check = verify_cross_entropy_equivalence(&eq, &model, &game, 0, 20_000, seed).unwrap();
        assert!(check.rhs >= check.entropy - 1e-12);
        assert!(check.within(4.0), "{check:?}");
    }
}

#[test]
fn deterministic_game_has_zero_cross_entropy() {
    let game = singleton_control_game(2, 3);
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    let check = verify_cross_entropy_equivalence(&eq, &eq, &game, 0, 100, 1).unwrap();
    assert_eq!(check.lhs, 0.0);
    assert_eq!(check.rhs, 0.0);
}

#[test]
fn recovered_policy_is_close_at_visited_states() {
    let game = chicken();
    let eq = solve_soft_equilibrium(&game, &SolverConfig::default()).unwrap();
    let data = TrajectoryDataset::from_rollouts(&eq, &game, 0, 50_000, 12);
    let repr = Representation::tabular_for(&game);
    let counts = VisitCounts::from_dataset(&repr, &data).unwrap();
    let fit = fit_advantage_model(repr, &data, &FitConfig::default()).unwrap();
    let model = fit.model();
    for t in 0..2 {
        for i in 0..2 {
            for x in 0..9 {
                if counts.visits(t, i, x) == 0 {
                    continue;
                }
                let learned = model.policy_row(t, i, x).unwrap();
                let truth = eq.policy_row(t, i, x).unwrap();
                let tv = 0.5 * learned.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>();
                assert!(tv <= 0.02, "t={t} i={i} x={x} tv={tv}");
            }
        }
    }
}
