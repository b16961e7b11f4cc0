#![allow(clippy::needless_range_loop)]

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use replaylab_core::rng::{normal_matrix, normal_vector, rng_from_seed, uniform};
use replaylab_core::rnn::{Activation, RnnParams};
use replaylab_core::train::{bptt_grads, training_noise, Sample};

/// Scalar reference loss: per sample, per step, per unit, no matrix helpers.
fn naive_loss(p: &RnnParams, batch: &[Sample], noise_seed: u64) -> f64 {
    let n = p.w_rec.nrows();
    let m = p.w_in.ncols();
    let d = p.d_out.nrows();
    let horizon = batch[0].targets.nrows();
    let noise = training_noise(noise_seed, horizon - 1, n, batch.len(), p.sigma_r);
    let kappa = if p.leak_enabled { p.kappa } else { 0.0 };
    let mut total = 0.0;
    for (j, s) in batch.iter().enumerate() {
        let mut r: Vec<f64> = s.init.iter().copied().collect();
        for t in 0..horizon {
            if t > 0 {
                let mut next = vec![0.0; n];
                for i in 0..n {
                    let mut z = noise[t - 1][(i, j)];
                    for k in 0..n {
                        z += p.w_rec[(i, k)] * r[k];
                    }
                    for k in 0..m {
                        z += p.w_in[(i, k)] * s.inputs[(t - 1, k)];
                    }
                    next[i] = kappa * r[i] + p.activation.apply(z);
                }
                r = next;
            }
            for o in 0..d {
                let mut y = 0.0;
                for k in 0..n {
                    y += p.d_out[(o, k)] * r[k];
                }
                total += (y - s.targets[(t, o)]).powi(2);
            }
        }
    }
    total / (batch.len() * horizon * d) as f64
}

fn check(got: f64, fd: f64, what: &str) {
    let err = (got - fd).abs();
    let scale = got.abs().max(fd.abs());
    assert!(err <= 1e-4 * scale || err < 1e-9, "{what}: analytic {got:e} vs numeric {fd:e}");
}

fn fd_matrix<F>(p: &RnnParams, batch: &[Sample], seed: u64, pick: F, analytic: &DMatrix<f64>, what: &str)
where
    F: Fn(&mut RnnParams) -> &mut DMatrix<f64>,
{
    let h = 1e-5;
    for idx in 0..analytic.len() {
        let mut up = p.clone();
        pick(&mut up)[idx] += h;
        let mut dn = p.clone();
        pick(&mut dn)[idx] -= h;
        let fd = (naive_loss(&up, batch, seed) - naive_loss(&dn, batch, seed)) / (2.0 * h);
        check(analytic[idx], fd, &format!("{what}[{idx}]"));
    }
}

#[test]
fn bptt_matches_central_differences_for_every_activation() {
    let started = Instant::now();
    let acts = [Activation::Relu, Activation::LeakyRelu(0.01), Activation::Tanh, Activation::Linear];
    let mut rng = rng_from_seed(21);
    for (a, act) in acts.iter().enumerate() {
        for rep in 0..3 {
            let n = rng.random_range(2..=8);
            let m = rng.random_range(1..=3);
            let d = rng.random_range(1..=2);
            let horizon = rng.random_range(2..=10);
            let params = RnnParams {
                w_rec: normal_matrix(&mut rng, n, n) * (0.6 / (n as f64).sqrt()),
                w_in: normal_matrix(&mut rng, n, m) * 0.5,
                d_out: normal_matrix(&mut rng, d, n) * 0.5,
                kappa: uniform(&mut rng, 0.2, 0.8),
                sigma_r: 0.1,
                activation: *act,
                leak_enabled: true,
            };
            let batch: Vec<Sample> = (0..3)
                .map(|_| Sample {
                    inputs: normal_matrix(&mut rng, horizon, m),
                    targets: normal_matrix(&mut rng, horizon, d),
                    init: normal_vector(&mut rng, n) * 0.5,
                })
                .collect();
            let seed = 100 + (a * 10 + rep) as u64;
            let (g, loss) = bptt_grads(&params, &batch, seed).unwrap();
            let naive = naive_loss(&params, &batch, seed);
            assert!((loss - naive).abs() <= 1e-12 * naive.max(1.0), "loss {loss} vs naive {naive}");

            fd_matrix(&params, &batch, seed, |p| &mut p.w_rec, &g.w_rec, "w_rec");
            fd_matrix(&params, &batch, seed, |p| &mut p.w_in, &g.w_in, "w_in");
            fd_matrix(&params, &batch, seed, |p| &mut p.d_out, &g.d_out, "d_out");
            let h = 1e-5;
            let mut up = params.clone();
            up.kappa += h;
            let mut dn = params.clone();
            dn.kappa -= h;
            let fd = (naive_loss(&up, &batch, seed) - naive_loss(&dn, &batch, seed)) / (2.0 * h);
            check(g.kappa, fd, "kappa");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn one_step_linear_readout_gradient_is_hand_derivable() {
    let params = RnnParams {
        w_rec: DMatrix::zeros(2, 2),
        w_in: DMatrix::zeros(2, 1),
        d_out: DMatrix::from_row_slice(1, 2, &[0.5, -1.0]),
        kappa: 0.0,
        sigma_r: 0.0,
        activation: Activation::Linear,
        leak_enabled: false,
    };
    let r = DVector::from_vec(vec![1.0, 2.0]);
    let s = 0.25;
    let batch = vec![Sample { inputs: DMatrix::zeros(1, 1), targets: DMatrix::from_element(1, 1, s), init: r.clone() }];
    let (g, _) = bptt_grads(&params, &batch, 0).unwrap();
    let resid = (&params.d_out * &r)[0] - s;
    for k in 0..2 {
        assert!((g.d_out[(0, k)] - 2.0 * resid * r[k]).abs() < 1e-15);
    }
}
