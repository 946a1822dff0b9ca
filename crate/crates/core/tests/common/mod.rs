//! Independent oracles shared by the integration suites. Nothing here calls
//! into the solver, the Mean Shift routine or the loss implementations.
#![allow(dead_code)]

use nashmodes::game::TabularGame;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Exact soft equilibrium of a two-agent, two-control game at `(t, x)`,
/// computed by plain recursion over the remaining control sequences.
#[derive(Clone, Copy, Debug)]
pub struct OracleCell {
    /// `q_bar[agent][control]`
    pub q_bar: [[f64; 2]; 2],
    pub value: [f64; 2],
    /// Probability of control 0 for each agent.
    pub p0: [f64; 2],
}

/// Solves `p = σ(a + b·p)` by bisection; unique for `b ≤ 0`.
fn symmetric_root(a: f64, b: f64) -> f64 {
    assert!(b <= 0.0, "symmetric oracle needs a decreasing response");
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - sigmoid(a + b * mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn oracle_cell(game: &TabularGame, t: usize, x: usize) -> OracleCell {
    assert_eq!(game.agents, 2);
    assert!(game.controls.iter().all(|c| c.len() == 2));
    // m[i][u1][u2]
    let mut m = [[[0.0; 2]; 2]; 2];
    for u1 in 0..2 {
        for u2 in 0..2 {
            let j = u1 * 2 + u2;
            let next = game.transitions[x][j];
            let cont = if t + 1 == game.horizon { [0.0, 0.0] } else { oracle_cell(game, t + 1, next).value };
            for i in 0..2 {
                m[i][u1][u2] = game.rewards[i][x][j] + cont[i];
            }
        }
    }
    // Q̄¹(0) − Q̄¹(1) = a1 + b1·p2, Q̄²(0) − Q̄²(1) = a2 + b2·p1.
    let a1 = m[0][0][1] - m[0][1][1];
    let b1 = (m[0][0][0] - m[0][1][0]) - a1;
    let a2 = m[1][1][0] - m[1][1][1];
    let b2 = (m[1][0][0] - m[1][0][1]) - a2;
    let eps = 1e-12;
    let (p1, p2) = if b1.abs() < eps && b2.abs() < eps {
        (sigmoid(a1), sigmoid(a2))
    } else if b1.abs() < eps {
        let p1 = sigmoid(a1);
        (p1, sigmoid(a2 + b2 * p1))
    } else if b2.abs() < eps {
        let p2 = sigmoid(a2);
        (sigmoid(a1 + b1 * p2), p2)
    } else if (a1 - a2).abs() < eps && (b1 - b2).abs() < eps {
        let p = symmetric_root(a1, b1);
        (p, p)
    } else {
        panic!("oracle handles decoupled or symmetric coupled cells only (t={t}, x={x})");
    };
    let q1 = [
        p2 * m[0][0][0] + (1.0 - p2) * m[0][0][1],
        p2 * m[0][1][0] + (1.0 - p2) * m[0][1][1],
    ];
    let q2 = [
        p1 * m[1][0][0] + (1.0 - p1) * m[1][1][0],
        p1 * m[1][0][1] + (1.0 - p1) * m[1][1][1],
    ];
    let v = [lse2(q1[0], q1[1]), lse2(q2[0], q2[1])];
    OracleCell {
        q_bar: [q1, q2],
        value: v,
        p0: [(q1[0] - v[0]).exp(), (q2[0] - v[1]).exp()],
    }
}

/// Exact probability of each of the `4^T` joint control sequences from `x0`,
/// in lexicographic order of flattened joint controls.
pub fn oracle_sequence_probs(game: &TabularGame, x0: usize) -> Vec<f64> {
    let total = 4usize.pow(game.horizon as u32);
    (0..total)
        .map(|code| {
            let mut digits = vec![0usize; game.horizon];
            let mut c = code;
            for d in digits.iter_mut().rev() {
                *d = c % 4;
                c /= 4;
            }
            let mut x = x0;
            let mut p = 1.0;
            for (t, &j) in digits.iter().enumerate() {
                let cell = oracle_cell(game, t, x);
                let (u1, u2) = (j / 2, j % 2);
                let pa = if u1 == 0 { cell.p0[0] } else { 1.0 - cell.p0[0] };
                let pb = if u2 == 0 { cell.p0[1] } else { 1.0 - cell.p0[1] };
                p *= pa * pb;
                x = game.transitions[x][j];
            }
            p
        })
        .collect()
}

pub fn shannon(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Central finite difference of `f` along coordinate `k`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Mean endpoint distance between two samples given as per-agent endpoints.
pub fn endpoint_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum::<f64>()
        / n
}

/// Fixed points of the argmax-in-ball map, found by following every chain
/// to its end. Returns (sorted fixed points, fixed point reached from each sample).
pub fn mean_shift_oracle(endpoints: &[Vec<[f64; 2]>], scores: &[f64], b: f64) -> (Vec<usize>, Vec<usize>) {
    let k = endpoints.len();
    let jump = |a: usize| -> usize {
        let ball: Vec<usize> = (0..k).filter(|&j| endpoint_distance(&endpoints[a], &endpoints[j]) < b).collect();
        let top = ball.iter().map(|&j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
        *ball.iter().find(|&&j| scores[j] == top).unwrap()
    };
    let reached: Vec<usize> = (0..k)
        .map(|start| {
            let mut cur = start;
            for _ in 0..=k {
                let nxt = jump(cur);
                if nxt == cur {
                    return cur;
                }
                cur = nxt;
            }
            panic!("pointer chain longer than K");
        })
        .collect();
    let mut fixed: Vec<usize> = (0..k).filter(|&j| jump(j) == j).filter(|j| reached.contains(j)).collect();
    fixed.sort_unstable();
    (fixed, reached)
}

/// Brute-force nearest representative, lowest index on ties.
pub fn nearest_oracle(endpoints: &[Vec<[f64; 2]>], reps: &[usize]) -> Vec<usize> {
    endpoints
        .iter()
        .map(|e| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (m, &r) in reps.iter().enumerate() {
                let d = endpoint_distance(e, &endpoints[r]);
                if d < best_d {
                    best_d = d;
                    best = m;
                }
            }
            best
        })
        .collect()
}
