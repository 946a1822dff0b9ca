use nashmodes::diversity::{
    label_follow_count, label_ttc, label_yield_count, label_yield_follow, pair_min_ttc, track_interactions,
    ttc_agent_count,
};
use nashmodes::track::JointTrack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.5;

fn sampled(n: usize, f: impl Fn(f64) -> [f64; 2]) -> Vec<[f64; 2]> {
    (0..n).map(|k| f(k as f64 * DT)).collect()
}

fn joint(paths: &[Vec<[f64; 2]>]) -> JointTrack {
    let n = paths[0].len();
    JointTrack::new(DT, (0..n).map(|t| paths.iter().map(|p| p[t]).collect()).collect()).unwrap()
}

/// j drives north through the origin at t = 2 s. i creeps east, then crosses
/// the origin at t = 5 s and spends 0.5 s within reach of j's trace.
fn crossing() -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let j = sampled(21, |t| [0.0, -20.0 + 10.0 * t]);
    let i = sampled(21, |t| {
        let x = if t <= 4.5 { -30.0 + (28.5 / 4.5) * t } else { -1.5 + 3.0 * (t - 4.5) / 0.5 };
        [x, 0.0]
    });
    (i, j)
}

#[test]
fn parallel_lanes_do_not_interact() {
    let a = sampled(21, |t| [5.0 * t, 0.0]);
    let b = sampled(21, |t| [5.0 * t, 20.0]);
    let r = label_yield_follow(&a, &b, 2.0, DT).unwrap();
    assert!(!r.yield_ij && !r.yield_ji && !r.follow);
}

#[test]
fn crossing_later_arrival_yields() {
    let (i, j) = crossing();
    // hand-derived: i at x = -1.5 (t = 4.5) and x = 0 (t = 5) lies on j's trace, nowhere else
    let r = label_yield_follow(&i, &j, 2.0, DT).unwrap();
    assert!(r.yield_ij);
    assert!(!r.yield_ji);
    assert!(!r.follow);
    let swapped = label_yield_follow(&j, &i, 2.0, DT).unwrap();
    assert!(swapped.yield_ji && !swapped.yield_ij);

    let track = joint(&[i, j]);
    let inter = track_interactions(&track, 2.0).unwrap();
    assert_eq!(inter.yields.edges.iter().copied().collect::<Vec<_>>(), vec![(0, 1)]);
    assert_eq!(label_yield_count(&track, 2.0).unwrap().bin, 1);
    assert_eq!(label_follow_count(&track, 2.0).unwrap().bin, 0);
}

#[test]
fn merge_and_trail_is_following() {
    // j holds the lane at 5 m/s; i merges in from a ramp 16 m behind, trails
    // for 3 s and then peels off to the south
    let j = sampled(21, |t| [10.0 + 5.0 * t, 0.0]);
    let i = sampled(21, |t| {
        if t < 2.0 {
            [5.0 * t - 6.0, -8.0 + 4.0 * t]
        } else if t <= 5.0 {
            [4.0 + 5.0 * (t - 2.0), 0.0]
        } else {
            [19.0 + 5.0 * (t - 5.0), -6.0 * (t - 5.0)]
        }
    });
    let r = label_yield_follow(&i, &j, 2.0, DT).unwrap();
    assert!(r.follow);
    assert!(!r.yield_ij && !r.yield_ji);
}

#[test]
fn head_on_pair_has_two_second_ttc() {
    // gap 20 m at t = 0, each at 5 m/s toward the other
    let a = sampled(3, |t| [5.0 * t, 0.0]);
    let b = sampled(3, |t| [20.0 - 5.0 * t, 0.0]);
    let track = joint(&[a, b]);
    // second step: gap 15 m at the same closing speed
    assert!((pair_min_ttc(&track, 0, 1) - 1.5).abs() < 1e-12);
    let first_step = JointTrack::new(DT, track.positions[..2].to_vec()).unwrap();
    assert!((pair_min_ttc(&first_step, 0, 1) - 2.0).abs() < 1e-12);
    assert_eq!(ttc_agent_count(&first_step, 3.0), 2);
    assert_eq!(label_ttc(&first_step, 3.0).bin, 2);
    assert_eq!(label_ttc(&first_step, 3.0).width, 3);
}

#[test]
fn static_agents_have_no_ttc_events() {
    let a = sampled(5, |_| [0.0, 0.0]);
    let b = sampled(5, |_| [50.0, 0.0]);
    assert_eq!(ttc_agent_count(&joint(&[a, b]), 3.0), 0);
}

#[test]
fn three_agent_merge_counts_only_the_closing_pair() {
    // agents 0 and 1 close at 10 m/s from 15 m apart (TTC 1.5 s); agent 2 drives away
    let a = sampled(4, |t| [10.0 * t, 0.0]);
    let b = sampled(4, |t| [15.0 + 0.0 * t, 0.0]);
    let c = sampled(4, |t| [0.0, 40.0 + 10.0 * t]);
    let track = joint(&[a, b, c]);
    let first_step = JointTrack::new(DT, track.positions[..2].to_vec()).unwrap();
    assert!((pair_min_ttc(&first_step, 0, 1) - 1.5).abs() < 1e-9);
    // gaps 15, 10, 5 m over the three steps
    assert!((pair_min_ttc(&track, 0, 1) - 0.5).abs() < 1e-9);
    assert!(pair_min_ttc(&track, 0, 2) > 3.0);
    assert_eq!(ttc_agent_count(&track, 3.0), 2);
}

#[test]
fn yield_is_never_mutual() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for _ in 0..500 {
        let n = rng.gen_range(2..12);
        let mut walk = |start: [f64; 2]| {
            let mut p = start;
            (0..n)
                .map(|_| {
                    p = [p[0] + rng.gen_range(-4.0..4.0), p[1] + rng.gen_range(-4.0..4.0)];
                    p
                })
                .collect::<Vec<_>>()
        };
        let a = walk([0.0, 0.0]);
        let b = walk([3.0, 3.0]);
        let r = label_yield_follow(&a, &b, 2.0, DT).unwrap();
        assert!(!(r.yield_ij && r.yield_ji));
        assert!(!(r.follow && (r.yield_ij || r.yield_ji)));
    }
}

#[test]
fn length_mismatch_is_an_error() {
    assert!(label_yield_follow(&[[0.0, 0.0]], &[], 2.0, DT).is_err());
}
