mod common;

use std::collections::BTreeSet;

use common::endpoint_distance;
use nashmodes::modes::SampleSet;
use nashmodes::sampling::{fps, nes, nms, NesRank, Pick};
use nashmodes::track::JointTrack;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn build(endpoints: &[Vec<[f64; 2]>], logits: &[f64], scores: &[f64]) -> SampleSet {
    let tracks = endpoints.iter().map(|e| JointTrack::new(1.0, vec![e.clone()]).unwrap()).collect();
    SampleSet::new(tracks, scores.to_vec(), logits.to_vec()).unwrap()
}

fn on_line(xs: &[f64]) -> Vec<Vec<[f64; 2]>> {
    xs.iter().map(|&x| vec![[x, 0.0], [x, 3.0]]).collect()
}

fn covered(sel: &[usize], labels: &[usize]) -> usize {
    sel.iter().map(|&k| labels[k]).collect::<BTreeSet<_>>().len()
}

#[test]
fn fps_matches_brute_force_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let endpoints: Vec<Vec<[f64; 2]>> =
            (0..12).map(|_| (0..2).map(|_| [rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0)]).collect()).collect();
        // coarse logits force weight ties
        let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(0..4) as f64).collect();
        let s = build(&endpoints, &logits, &[0.0; 12]);
        let got = fps(&s, 12, None).unwrap();

        let mut sel: Vec<usize> = Vec::new();
        let first = (0..12).fold(0, |b, k| if logits[k] > logits[b] { k } else { b });
        sel.push(first);
        while sel.len() < 12 {
            let mut best: Option<(f64, f64, usize)> = None;
            for k in (0..12).filter(|k| !sel.contains(k)) {
                let m = sel.iter().map(|&j| endpoint_distance(&endpoints[k], &endpoints[j])).fold(f64::INFINITY, f64::min);
                let better = match best {
                    None => true,
                    Some((bm, bw, bk)) => m > bm || (m == bm && (logits[k] > bw || (logits[k] == bw && k < bk))),
                };
                if better {
                    best = Some((m, logits[k], k));
                }
            }
            sel.push(best.unwrap().2);
        }
        assert_eq!(got.indices, sel);
    }
}

#[test]
fn nms_picks_are_separated_before_fallback() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let k = rng.gen_range(1..20);
        let endpoints: Vec<Vec<[f64; 2]>> = (0..k).map(|_| vec![[rng.gen_range(0.0..15.0), rng.gen_range(0.0..15.0)]]).collect();
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s = build(&endpoints, &logits, &vec![0.0; k]);
        let count = rng.gen_range(1..=k + 2);
        let r = nms(&s, 2.5, count).unwrap();
        assert_eq!(r.len(), count.min(k));
        let uniq: BTreeSet<_> = r.indices.iter().collect();
        assert_eq!(uniq.len(), r.len());
        let primary: Vec<usize> = r.indices.iter().zip(&r.tags).filter(|(_, t)| **t == Pick::Nms).map(|(i, _)| *i).collect();
        for a in 0..primary.len() {
            for b in a + 1..primary.len() {
                assert!(endpoint_distance(&endpoints[primary[a]], &endpoints[primary[b]]) >= 2.5);
            }
        }
        // fallback only after the NMS picks
        if let Some(f) = r.tags.iter().position(|t| *t == Pick::NmsFallback) {
            assert!(r.tags[f..].iter().all(|t| *t == Pick::NmsFallback));
        }
    }
}

#[test]
fn nes_covers_every_mode_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let k = rng.gen_range(1..24);
        let m = rng.gen_range(1..=k.min(6));
        // every mode gets at least one sample
        let mut labels: Vec<usize> = (0..k).map(|j| if j < m { j } else { rng.gen_range(0..m) }).collect();
        for j in (1..k).rev() {
            labels.swap(j, rng.gen_range(0..=j));
        }
        let endpoints: Vec<Vec<[f64; 2]>> = (0..k).map(|_| vec![[rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)]]).collect();
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(-6.0..0.0)).collect();
        let s = build(&endpoints, &logits, &scores);
        let count = rng.gen_range(m..=k);
        for rank in [NesRank::Advantage, NesRank::Weight] {
            let r = nes(&s, &labels, count, 2.5, rank).unwrap();
            assert_eq!(r.len(), count);
            assert_eq!(covered(&r.indices, &labels), m);
            assert!(r.tags[..m].iter().all(|t| *t == Pick::Equilibrium));
        }
    }
}

#[test]
fn nms_misses_an_equilibrium_that_nes_keeps() {
    // modes A = {0,1}, B = {2,3}, C = {4,5}; A's two samples are 3 m apart
    let endpoints = on_line(&[0.0, 3.0, 20.0, 21.0, 40.0, 41.0]);
    let logits = [3.0, 2.5, 2.0, 1.0, 0.5, 0.0];
    let scores = [-0.2, -0.4, -0.6, -0.9, -1.2, -1.5];
    let labels = [0, 0, 1, 1, 2, 2];
    let s = build(&endpoints, &logits, &scores);

    let by_nms = nms(&s, 2.5, 3).unwrap();
    assert_eq!(by_nms.indices, vec![0, 1, 2]);
    assert_eq!(covered(&by_nms.indices, &labels), 2);

    let by_nes = nes(&s, &labels, 3, 2.5, NesRank::Advantage).unwrap();
    assert_eq!(by_nes.indices, vec![0, 2, 4]);
    assert_eq!(covered(&by_nes.indices, &labels), 3);
}

#[test]
fn nms_threshold_failure_cases() {
    // two equilibria 15 m apart, the first carrying most of the weight
    let endpoints = on_line(&[0.0, 3.0, 15.0, 16.0]);
    let logits = [2.0, 1.8, 0.5, 0.2];
    let labels = [0, 0, 1, 1];
    let s = build(&endpoints, &logits, &[0.0; 4]);

    let small = nms(&s, 2.5, 2).unwrap();
    assert_eq!(small.indices, vec![0, 1]);
    assert_eq!(covered(&small.indices, &labels), 1);

    let large = nms(&s, 30.0, 2).unwrap();
    let primary: Vec<usize> = large.indices.iter().zip(&large.tags).filter(|(_, t)| **t == Pick::Nms).map(|(i, _)| *i).collect();
    assert_eq!(primary, vec![0]);
    assert_eq!(large.tags[1], Pick::NmsFallback);
}

#[test]
fn selectors_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let endpoints: Vec<Vec<[f64; 2]>> = (0..10).map(|_| vec![[rng.gen_range(0.0..20.0), 0.0]]).collect();
    let logits = vec![0.0; 10];
    let scores = vec![-1.0; 10];
    let labels: Vec<usize> = (0..10).map(|j| j % 3).collect();
    let s = build(&endpoints, &logits, &scores);
    assert_eq!(fps(&s, 5, None).unwrap(), fps(&s, 5, None).unwrap());
    assert_eq!(nms(&s, 2.5, 5).unwrap(), nms(&s, 2.5, 5).unwrap());
    let a = nes(&s, &labels, 5, 2.5, NesRank::Advantage).unwrap();
    // all ties: lowest index within each mode, modes in index order
    assert_eq!(&a.indices[..3], &[0, 1, 2]);
    assert_eq!(a, nes(&s, &labels, 5, 2.5, NesRank::Advantage).unwrap());
}
