//! Brute-force reference loops are kept deliberately naive.
#![allow(clippy::needless_range_loop, clippy::manual_find)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use replaylab_core::metrics::{gaussian_w2, path_length, reach_time, regions_visited, sliced_wd, w2_1d, MIN_DWELL};
use replaylab_core::process::Trajectory;
use replaylab_core::rng::{normal, rng_from_seed, uniform, SimRng};

fn sorted_sample_w2(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    (x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

#[test]
fn gaussian_w2_agrees_with_sorted_samples_in_1d() {
    let mut rng = rng_from_seed(31);
    for _ in 0..5 {
        let (m1, s1) = (uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.2, 2.0));
        let (m2, s2) = (uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.2, 2.0));
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| m1 + s1 * normal(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| m2 + s2 * normal(&mut rng)).collect();
        let empirical = sorted_sample_w2(x.clone(), y.clone());
        let closed = gaussian_w2(
            &DVector::from_element(1, m1),
            &DMatrix::from_element(1, 1, s1 * s1),
            &DVector::from_element(1, m2),
            &DMatrix::from_element(1, 1, s2 * s2),
        )
        .unwrap();
        assert!((empirical - closed).abs() <= 0.05 * closed, "{empirical} vs {closed}");
        // equal sizes: the merged-quantile distance is the sorted-sample distance
        assert!((w2_1d(&x, &y).unwrap() - empirical).abs() < 1e-9);
    }
}

#[test]
fn sliced_distance_of_a_set_to_itself_is_zero() {
    let mut rng = rng_from_seed(32);
    let a = DMatrix::from_fn(200, 6, |_, _| normal(&mut rng));
    assert_eq!(sliced_wd(&a, &a, 64, 9).unwrap(), 0.0);
}

fn random_path(rng: &mut SimRng) -> Trajectory {
    let len = rng.random_range(20..=200);
    let step = uniform(rng, 0.01, 0.1);
    let mut states = DMatrix::zeros(len, 2);
    states[(0, 0)] = uniform(rng, -0.2, 1.2);
    states[(0, 1)] = uniform(rng, -0.2, 1.0);
    for t in 1..len {
        for j in 0..2 {
            states[(t, j)] = states[(t - 1, j)] + step * normal(rng);
        }
    }
    Trajectory { dt: 1.0, states, label: None }
}

fn dist(p: &Trajectory, t: usize, q: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..q.len() {
        let d = p.states[(t, j)] - q[j];
        s += d * d;
    }
    s.sqrt()
}

fn brute_reach(p: &Trajectory, start: &[f64], end: &[f64], frac: f64) -> Option<usize> {
    let mut span = 0.0;
    for j in 0..start.len() {
        span += (end[j] - start[j]) * (end[j] - start[j]);
    }
    let tol = frac * span.sqrt();
    for t in 0..p.states.nrows() {
        if dist(p, t, end) <= tol {
            return Some(t);
        }
    }
    None
}

fn brute_length(p: &Trajectory) -> f64 {
    let mut total = 0.0;
    for t in 1..p.states.nrows() {
        let mut s = 0.0;
        for j in 0..p.states.ncols() {
            let d = p.states[(t, j)] - p.states[(t - 1, j)];
            s += d * d;
        }
        total += s.sqrt();
    }
    total
}

fn brute_regions(p: &Trajectory, ends: &[[f64; 2]], min_dwell: usize) -> usize {
    let labels: Vec<usize> = (0..p.states.nrows())
        .map(|t| {
            let ds: Vec<f64> = ends.iter().map(|e| dist(p, t, e)).collect();
            let best = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            ds.iter().position(|&d| d == best).unwrap()
        })
        .collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &l in &labels {
        match runs.last_mut() {
            Some((r, len)) if *r == l => *len += 1,
            _ => runs.push((l, 1)),
        }
    }
    let mut kept: Vec<usize> = runs.iter().filter(|r| r.1 >= min_dwell).map(|r| r.0).collect();
    kept.dedup();
    kept.len()
}

#[test]
fn path_metrics_match_brute_force_references() {
    let mut rng = rng_from_seed(33);
    let ends = [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
    let end_vecs: Vec<DVector<f64>> = ends.iter().map(|e| DVector::from_row_slice(e)).collect();
    for case in 0..100 {
        let p = random_path(&mut rng);
        let a = rng.random_range(0..3);
        let b = (a + rng.random_range(1..3)) % 3;
        let frac = uniform(&mut rng, 0.05, 0.5);
        let got = reach_time(&p, &end_vecs[a], &end_vecs[b], frac).unwrap();
        assert_eq!(got, brute_reach(&p, &ends[a], &ends[b], frac), "case {case}");
        assert_eq!(path_length(&p), brute_length(&p), "case {case}");
        let dwell = rng.random_range(1..=MIN_DWELL * 2);
        assert_eq!(regions_visited(&p, &end_vecs, dwell).unwrap(), brute_regions(&p, &ends, dwell), "case {case}");
    }
}
