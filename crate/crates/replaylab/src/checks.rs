//! Numbered acceptance checks. `verify` runs the fast ones; the acceptance target runs
//! all of them, including the ones that train networks.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use replaylab_core::linalg::sym_eigenvalues;
use replaylab_core::metrics::{
    gaussian_w2, path_length, reach_time, regions_visited, sliced_wd, summarize_paths, trajectory_distribution_distance, DistanceMode, MIN_DWELL,
};
use replaylab_core::place::{decode, encode, PlaceCellMap, DEFAULT_CELLS};
use replaylab_core::process::{EnvironmentSpec, OuParams, Trajectory};
use replaylab_core::replay::{
    adaptation_second_order_residual, analytic_ou_replay, generate_replay, printed_second_order_rhs, AdaptationSystem, SecondOrderForm,
};
use replaylab_core::rng::{normal, normal_matrix, normal_vector, rng_from_seed, uniform, SimRng};
use replaylab_core::rnn::{rollout, Activation, DynamicsConfig, NetState, RnnParams};
use replaylab_core::score::{gaussian_score, leakage_matrix, ou_score, wiener_score, ScoreContext, StationaryGaussian};
use replaylab_core::train::{bptt_grads, forward_loss, Sample};
use replaylab_core::{DMatrix, DVector};

use crate::pipeline::{self, mean_path_reach, Model, ReplayOptions, ReplaySource, TrainOptions};
use crate::tasks::TaskName;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

fn result(id: usize, name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult { id, name, passed: true, detail },
        Err(detail) => CheckResult { id, name, passed: false, detail },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn int(rng: &mut SimRng, lo: usize, hi: usize) -> usize {
    (lo + (uniform(rng, 0.0, (hi - lo + 1) as f64) as usize)).min(hi)
}

fn err_str<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---- 1: analytic OU replay ----

pub fn analytic_ou_directions() -> Result<String, String> {
    let started = Instant::now();
    let p = OuParams::reference_1d();
    let mu = p.mu[0];
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let run = |cfg: DynamicsConfig| analytic_ou_replay(&p, p.sigma_s, &cfg, 1000, p.horizon, seed).map_err(err_str);
        let over = mean_path_reach(&run(DynamicsConfig::default())?, mu, 0.1).map_err(err_str)?;
        let under = mean_path_reach(&run(DynamicsConfig::with_modifiers(0.0, 0.5))?, mu, 0.1).map_err(err_str)?;
        let adapt = mean_path_reach(&run(DynamicsConfig { tau_a: 100.0, ..DynamicsConfig::with_modifiers(1.0, 1.0) })?, mu, 0.1).map_err(err_str)?;
        let t = |h: Option<usize>| h.unwrap_or(p.horizon);
        ensure(t(under.0) < t(over.0), || format!("seed {seed}: underdamped reach {} not below overdamped {}", t(under.0), t(over.0)))?;
        ensure(adapt.1 > over.1, || format!("seed {seed}: adapted final error {:.4} not above overdamped {:.4}", adapt.1, over.1))?;
        lines.push(format!("seed {seed}: reach {}/{} err {:.3}/{:.3}", t(under.0), t(over.0), adapt.1, over.1));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} ({secs:.1}s)", lines.join("; ")))
}

// ---- 2-4: score oracles ----

fn random_psd(rng: &mut SimRng, d: usize, rank: usize) -> DMatrix<f64> {
    let f = normal_matrix(rng, d, rank);
    &f * f.transpose()
}

pub fn leakage_spectrum() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = rng_from_seed(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for case in 0..1000 {
        let d = int(&mut rng, 1, 4);
        let n = int(&mut rng, d, 8);
        let dmat = normal_matrix(&mut rng, d, n);
        let a = uniform(&mut rng, 1e-3, 1.0);
        let ctx = ScoreContext::new(&dmat, a).map_err(err_str)?;
        let rank = int(&mut rng, 1, d);
        let cov = random_psd(&mut rng, d, rank);
        let eig = |c: DMatrix<f64>| -> Result<Vec<f64>, String> {
            let g = StationaryGaussian { mean: DVector::zeros(d), cov: c };
            let l = leakage_matrix(0.0, &g, &ctx).map_err(err_str)?;
            let mut e: Vec<f64> = sym_eigenvalues(&((&l + l.transpose()) * 0.5)).iter().copied().collect();
            e.sort_by(f64::total_cmp);
            Ok(e)
        };
        let e1 = eig(cov.clone())?;
        let e2 = eig(cov * 10.0)?;
        for (&x, &y) in e1.iter().zip(&e2) {
            ensure(x > 0.0 && x <= 1.0 + 1e-10, || format!("case {case}: eigenvalue {x}"))?;
            ensure(y <= x + 1e-10, || format!("case {case}: {y} > {x} after scaling"))?;
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.1}s"))?;
    Ok(format!("1000 cases, eigenvalues in [{lo:.2e}, {hi:.6}] ({secs:.2}s)"))
}

pub fn ou_score_limits() -> Result<String, String> {
    let p = OuParams::reference_1d();
    let a = p.sigma_s * p.sigma_s * p.dt;
    let mut worst: f64 = 0.0;
    for r in [-1.0, 0.0, 0.3, 2.5, 5.0, 7.5] {
        // t -> 0: the state is still the initial N(0, sigma_0^2)
        let short = ou_score(r, 1e-9 / p.theta, &p, a).map_err(err_str)?;
        let want_short = -a / (a + p.sigma_0 * p.sigma_0) * r;
        // t -> inf: the stationary N(mu, sigma_s^2 / 2 theta)
        let long = ou_score(r, 30.0 / p.theta, &p, a).map_err(err_str)?;
        let want_long = -a / (a + p.sigma_s * p.sigma_s / (2.0 * p.theta)) * (r - p.mu[0]);
        worst = worst.max((short - want_short).abs()).max((long - want_long).abs());
    }
    ensure(worst < 1e-9, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.1e}"))
}

fn log_normal_density(x: &DVector<f64>, m: &DVector<f64>, k: &DMatrix<f64>) -> f64 {
    let lu = k.clone().lu();
    let diff = x - m;
    let sol = lu.solve(&diff).expect("covariance is positive definite");
    -0.5 * (diff.dot(&sol) + lu.determinant().ln())
}

fn rel_close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(got.abs()).max(1e-3)
}

pub fn score_finite_differences() -> Result<String, String> {
    let mut rng = rng_from_seed(4);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut track = |got: f64, fd: f64, what: &str| -> Result<(), String> {
        worst = worst.max((got - fd).abs() / fd.abs().max(got.abs()).max(1e-3));
        ensure(rel_close(got, fd, 1e-6), || format!("{what}: {got} vs {fd}"))
    };
    for case in 0..100 {
        let d = int(&mut rng, 1, 3);
        let n = int(&mut rng, d, 6);
        let dmat = normal_matrix(&mut rng, d, n);
        let a = uniform(&mut rng, 0.05, 1.0);
        let ctx = ScoreContext::new(&dmat, a).map_err(err_str)?;
        let target = StationaryGaussian { mean: normal_vector(&mut rng, d), cov: random_psd(&mut rng, d, d) + DMatrix::identity(d, d) * 0.05 };
        let r = normal_vector(&mut rng, n);
        let m = &ctx.d_pinv * &target.mean;
        let k = DMatrix::identity(n, n) * a + &ctx.d_pinv * &target.cov * ctx.d_pinv.transpose();
        let got = gaussian_score(&r, 0.0, &target, &ctx).map_err(err_str)?;
        for i in 0..n {
            let (mut up, mut dn) = (r.clone(), r.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = a * (log_normal_density(&up, &m, &k) - log_normal_density(&dn, &m, &k)) / (2.0 * h);
            track(got[i], fd, &format!("gaussian case {case}"))?;
        }
    }
    for case in 0..100 {
        let p = OuParams::scalar(uniform(&mut rng, 0.2, 5.0), uniform(&mut rng, -5.0, 5.0), uniform(&mut rng, 0.05, 1.0), uniform(&mut rng, 0.05, 1.0), 0.02, 100);
        let (a, t, r) = (uniform(&mut rng, 1e-3, 0.5), uniform(&mut rng, 0.0, 3.0), uniform(&mut rng, -6.0, 6.0));
        let e = (-p.theta * t).exp();
        let mean = p.mu[0] * (1.0 - e);
        let var = a + p.sigma_s.powi(2) / (2.0 * p.theta) * (1.0 - e * e) + p.sigma_0.powi(2) * e;
        let logp = |x: f64| -0.5 * (x - mean).powi(2) / var;
        let fd = a * (logp(r + h) - logp(r - h)) / (2.0 * h);
        track(ou_score(r, t, &p, a).map_err(err_str)?, fd, &format!("ou case {case}"))?;
    }
    for case in 0..100 {
        let (s, a, t, r) = (uniform(&mut rng, 0.05, 2.0), uniform(&mut rng, 1e-3, 0.5), uniform(&mut rng, 0.0, 5.0), uniform(&mut rng, -3.0, 3.0));
        let var = s * s * t + a;
        let logp = |x: f64| -0.5 * x * x / var;
        let fd = a * (logp(r + h) - logp(r - h)) / (2.0 * h);
        track(wiener_score(r, t, s, a).map_err(err_str)?, fd, &format!("wiener case {case}"))?;
    }
    Ok(format!("300 evaluations, max relative error {worst:.1e}"))
}

// ---- 5: BPTT ----

pub fn bptt_finite_differences() -> Result<String, String> {
    let started = Instant::now();
    let acts = [Activation::Relu, Activation::LeakyRelu(0.01), Activation::Tanh, Activation::Linear];
    let mut rng = rng_from_seed(5);
    let h = 1e-5;
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for (ai, act) in acts.iter().enumerate() {
        for rep in 0..3 {
            let (n, m, d, horizon) = (int(&mut rng, 2, 8), int(&mut rng, 1, 3), int(&mut rng, 1, 2), int(&mut rng, 2, 10));
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
                .map(|_| Sample { inputs: normal_matrix(&mut rng, horizon, m), targets: normal_matrix(&mut rng, horizon, d), init: normal_vector(&mut rng, n) * 0.5 })
                .collect();
            let seed = (ai * 10 + rep) as u64;
            let (g, _) = bptt_grads(&params, &batch, seed).map_err(err_str)?;
            let loss = |p: &RnnParams| forward_loss(p, &batch, seed).map_err(err_str);
            let mut compare = |got: f64, up: RnnParams, dn: RnnParams, what: String| -> Result<(), String> {
                let fd = (loss(&up)? - loss(&dn)?) / (2.0 * h);
                let err = (got - fd).abs();
                let scale = got.abs().max(fd.abs());
                if scale > 1e-9 {
                    worst = worst.max(err / scale);
                }
                checked += 1;
                ensure(err <= 1e-4 * scale || err < 1e-9, || format!("{act:?} {what}: {got:e} vs {fd:e}"))
            };
            type Pick = fn(&mut RnnParams) -> &mut DMatrix<f64>;
            let picks: [(&str, Pick, &DMatrix<f64>); 3] = [("w_rec", |p| &mut p.w_rec, &g.w_rec), ("w_in", |p| &mut p.w_in, &g.w_in), ("d_out", |p| &mut p.d_out, &g.d_out)];
            for (name, pick, grad) in picks {
                for i in 0..grad.len() {
                    let (mut up, mut dn) = (params.clone(), params.clone());
                    pick(&mut up)[i] += h;
                    pick(&mut dn)[i] -= h;
                    compare(grad[i], up, dn, format!("{name}[{i}]"))?;
                }
            }
            let (mut up, mut dn) = (params.clone(), params.clone());
            up.kappa += h;
            dn.kappa -= h;
            compare(g.kappa, up, dn, "kappa".into())?;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{checked} partials, max relative error {worst:.1e} ({secs:.2}s)"))
}

// ---- 10: second-order equivalence ----

pub fn second_order_equivalence() -> Result<String, String> {
    let g = StationaryGaussian { mean: DVector::from_vec(vec![0.5, -0.3]), cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6]) };
    let res = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| adaptation_second_order_residual(&g, 0.4, 1.0, 2.0, dt, 4.0, 3, SecondOrderForm::Derived).map_err(err_str))
        .collect::<Result<Vec<f64>, String>>()?;
    let ratios: Vec<f64> = res.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(ratios.iter().all(|r| (1.5..=2.5).contains(r)), || format!("residuals {res:?}"))?;
    let mut rng = rng_from_seed(10);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let target = StationaryGaussian { mean: DVector::from_element(1, uniform(&mut rng, -2.0, 2.0)), cov: DMatrix::from_element(1, 1, uniform(&mut rng, 0.1, 3.0)) };
        let (a, b_a, tau) = (uniform(&mut rng, 0.01, 1.0), uniform(&mut rng, 0.0, 2.0), uniform(&mut rng, 1.0, 200.0));
        let sys = AdaptationSystem::new(&target, a, b_a, tau, SecondOrderForm::AsPrinted).map_err(err_str)?;
        let r = DVector::from_element(1, uniform(&mut rng, -3.0, 3.0));
        let dr = DVector::from_element(1, uniform(&mut rng, -3.0, 3.0));
        let lhs = printed_second_order_rhs(&target, a, b_a, tau, &r, &dr).map_err(err_str)?[0];
        worst = worst.max((lhs - sys.rhs(&r, &dr)[0]).abs() / lhs.abs().max(1.0));
    }
    ensure(worst <= 1e-12, || format!("substitution mismatch {worst:e}"))?;
    Ok(format!("residual ratios {:.3}, {:.3}; substitution error {worst:.1e}", ratios[0], ratios[1]))
}

// ---- 11: metric oracles ----

fn sorted_sample_w2(mut x: Vec<f64>, mut y: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    (x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt()
}

fn brute_reach(p: &Trajectory, start: &[f64; 2], end: &[f64; 2], frac: f64) -> Option<usize> {
    let tol = frac * ((end[0] - start[0]).powi(2) + (end[1] - start[1]).powi(2)).sqrt();
    (0..p.len()).find(|&t| ((p.states[(t, 0)] - end[0]).powi(2) + (p.states[(t, 1)] - end[1]).powi(2)).sqrt() <= tol)
}

fn brute_length(p: &Trajectory) -> f64 {
    let mut total = 0.0;
    for t in 1..p.len() {
        total += ((p.states[(t, 0)] - p.states[(t - 1, 0)]).powi(2) + (p.states[(t, 1)] - p.states[(t - 1, 1)]).powi(2)).sqrt();
    }
    total
}

fn brute_regions(p: &Trajectory, ends: &[[f64; 2]], dwell: usize) -> usize {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for t in 0..p.len() {
        let ds: Vec<f64> = ends.iter().map(|e| ((p.states[(t, 0)] - e[0]).powi(2) + (p.states[(t, 1)] - e[1]).powi(2)).sqrt()).collect();
        let best = ds.iter().copied().fold(f64::INFINITY, f64::min);
        let l = ds.iter().position(|&d| d == best).expect("nonempty");
        match runs.last_mut() {
            Some((r, len)) if *r == l => *len += 1,
            _ => runs.push((l, 1)),
        }
    }
    let mut kept: Vec<usize> = runs.iter().filter(|r| r.1 >= dwell).map(|r| r.0).collect();
    kept.dedup();
    kept.len()
}

pub fn metric_oracles() -> Result<String, String> {
    let mut rng = rng_from_seed(11);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let (m1, s1, m2, s2) = (uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.2, 2.0), uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.2, 2.0));
        let x: Vec<f64> = (0..100_000).map(|_| m1 + s1 * normal(&mut rng)).collect();
        let y: Vec<f64> = (0..100_000).map(|_| m2 + s2 * normal(&mut rng)).collect();
        let emp = sorted_sample_w2(x, y);
        let closed = gaussian_w2(&DVector::from_element(1, m1), &DMatrix::from_element(1, 1, s1 * s1), &DVector::from_element(1, m2), &DMatrix::from_element(1, 1, s2 * s2))
            .map_err(err_str)?;
        worst = worst.max((emp - closed).abs() / closed);
        ensure((emp - closed).abs() <= 0.05 * closed, || format!("W2 {emp} vs {closed}"))?;
    }
    let a = DMatrix::from_fn(200, 6, |_, _| normal(&mut rng));
    let self_wd = sliced_wd(&a, &a, 64, 1).map_err(err_str)?;
    ensure(self_wd == 0.0, || format!("sliced_wd(A, A) = {self_wd}"))?;

    let ends = [[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]];
    let end_vecs: Vec<DVector<f64>> = ends.iter().map(|e| DVector::from_row_slice(e)).collect();
    for case in 0..100 {
        let len = int(&mut rng, 20, 200);
        let step = uniform(&mut rng, 0.01, 0.1);
        let mut states = DMatrix::zeros(len, 2);
        states[(0, 0)] = uniform(&mut rng, -0.2, 1.2);
        states[(0, 1)] = uniform(&mut rng, -0.2, 1.0);
        for t in 1..len {
            for j in 0..2 {
                states[(t, j)] = states[(t - 1, j)] + step * normal(&mut rng);
            }
        }
        let p = Trajectory { dt: 1.0, states, label: None };
        let i = int(&mut rng, 0, 2);
        let j = (i + int(&mut rng, 1, 2)) % 3;
        let frac = uniform(&mut rng, 0.05, 0.5);
        let dwell = int(&mut rng, 1, 2 * MIN_DWELL);
        let reach = reach_time(&p, &end_vecs[i], &end_vecs[j], frac).map_err(err_str)?;
        ensure(reach == brute_reach(&p, &ends[i], &ends[j], frac), || format!("case {case}: reach_time"))?;
        ensure(path_length(&p) == brute_length(&p), || format!("case {case}: path_length"))?;
        let regions = regions_visited(&p, &end_vecs, dwell).map_err(err_str)?;
        ensure(regions == brute_regions(&p, &ends, dwell), || format!("case {case}: regions_visited"))?;
    }
    Ok(format!("W2 max relative gap {:.2}%, sliced self-distance 0, 100 paths exact", 100.0 * worst))
}

// ---- 12: modifiers off ----

pub fn modifiers_off_bitwise() -> Result<String, String> {
    let mut rng = rng_from_seed(12);
    let acts = [Activation::Relu, Activation::LeakyRelu(0.01), Activation::Tanh, Activation::Linear];
    for case in 0..100 {
        let n = int(&mut rng, 2, 24);
        let p = RnnParams {
            w_rec: normal_matrix(&mut rng, n, n) * (0.45 / (n as f64).sqrt()),
            w_in: normal_matrix(&mut rng, n, 2),
            d_out: normal_matrix(&mut rng, 2, n),
            kappa: uniform(&mut rng, 0.0, 0.5),
            sigma_r: uniform(&mut rng, 0.0, 0.3),
            activation: acts[case % 4],
            leak_enabled: true,
        };
        let r0 = normal_vector(&mut rng, n);
        let seed = 1000 + case as u64;
        let got = rollout(&p, &NetState::at(r0.clone()), None, 60, &DynamicsConfig::with_modifiers(0.0, 1.0), seed).map_err(err_str)?.hidden;
        let mut noise_rng = rng_from_seed(seed);
        let mut r = r0;
        for k in 1..60 {
            let xi = normal_vector(&mut noise_rng, n) * p.sigma_r;
            let z = &p.w_rec * &r + xi;
            let mut f = &r * p.kappa;
            f.zip_apply(&z, |fi, zi| *fi += p.activation.apply(zi));
            r = f;
            for i in 0..n {
                ensure(got[(k, i)].to_bits() == r[i].to_bits(), || format!("case {case} step {k}: {} vs {}", got[(k, i)], r[i]))?;
            }
        }
    }
    Ok("100 nets, 60 steps, bitwise equal".into())
}

// ---- 13: place decoding ----

pub fn place_round_trip() -> Result<String, String> {
    let env = EnvironmentSpec::rat_box();
    let map = PlaceCellMap::random(&env, DEFAULT_CELLS, 13).map_err(err_str)?;
    let mut rng = rng_from_seed(113);
    let (lo, hi) = (map.lo[0] + 0.05 * (map.hi[0] - map.lo[0]), map.hi[0] - 0.05 * (map.hi[0] - map.lo[0]));
    let pts = DMatrix::from_fn(1000, 2, |_, _| uniform(&mut rng, lo, hi));
    let act = encode(&map, &pts).map_err(err_str)?;
    let mut worst: f64 = 0.0;
    for t in 0..pts.nrows() {
        let p = decode(&map, &act.row(t).transpose()).map_err(err_str)?;
        worst = worst.max(((p[0] - pts[(t, 0)]).powi(2) + (p[1] - pts[(t, 1)]).powi(2)).sqrt());
    }
    ensure(worst < 1e-3, || format!("max error {worst:e}"))?;
    Ok(format!("1000 points, max error {worst:.1e}"))
}

// ---- 14: determinism ----

fn tree_bytes(root: &std::path::Path) -> std::io::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(root).expect("under root").to_path_buf(), std::fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Runs a tiny generate -> train -> replay -> report pipeline into `dir`.
pub fn tiny_pipeline(dir: &std::path::Path) -> crate::Result<()> {
    pipeline::generate(TaskName::Tmaze, 20, 3, dir)?;
    let mut o = TrainOptions::new(TaskName::Tmaze, 3);
    o.scale = 0.002;
    o.batch_size = 8;
    let (model, _) = pipeline::train_to_dir(&o, dir)?;
    let mut r = ReplayOptions::maze_defaults(vec![1, 2]);
    r.b_a = vec![0.0, 1.0];
    r.lambda_v = vec![1.0, 0.7];
    r.n = 40;
    r.jobs = 2;
    pipeline::replay_to_dir(&ReplaySource::Model(model), "tiny", &r, &dir.join("replay"))?;
    pipeline::report_to_dir(&dir.join("replay"), &dir.join("awake"), &dir.join("report"))?;
    Ok(())
}

pub fn end_to_end_determinism() -> Result<String, String> {
    let base = std::env::temp_dir().join(format!("replaylab-determinism-{}", std::process::id()));
    let (a, b) = (base.join("a"), base.join("b"));
    let outcome = (|| {
        tiny_pipeline(&a).map_err(err_str)?;
        tiny_pipeline(&b).map_err(err_str)?;
        let (ta, tb) = (tree_bytes(&a).map_err(err_str)?, tree_bytes(&b).map_err(err_str)?);
        ensure(!ta.is_empty(), || "no CSV files written".into())?;
        ensure(ta.len() == tb.len(), || format!("{} vs {} files", ta.len(), tb.len()))?;
        for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
            ensure(pa == pb && ba == bb, || format!("{} differs", pa.display()))?;
        }
        Ok(format!("{} CSV files byte-identical across two runs", ta.len()))
    })();
    let _ = std::fs::remove_dir_all(&base);
    outcome
}

// ---- 6-9: trained networks ----

/// Scale and seeds for the checks that train networks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSetup {
    pub seeds: Vec<u64>,
    pub tmaze_scale: f64,
    pub triangle_scale: f64,
    /// Replays per cell.
    pub n: usize,
    /// Where trained checkpoints are cached; training is deterministic, so a cached
    /// checkpoint equals a retrained one.
    pub cache: Option<PathBuf>,
}

impl Default for TrainedSetup {
    fn default() -> Self {
        TrainedSetup { seeds: vec![0, 1, 2], tmaze_scale: 0.1, triangle_scale: 1.0, n: 600, cache: None }
    }
}

fn cached_train(opts: &TrainOptions, cache: Option<&PathBuf>, tag: &str) -> crate::Result<(Model, Option<f64>)> {
    let final_k = opts.task.curriculum(opts.scale, opts.mask_k).last().map(|s| s.k).unwrap_or(1);
    if let Some(dir) = cache {
        let ckpt = dir.join(format!("{tag}.ckpt"));
        let loss_file = dir.join(format!("{tag}.loss.csv"));
        if ckpt.exists() && loss_file.exists() {
            let log = crate::formats::read_loss_log(&loss_file)?;
            return Ok((pipeline::load_model(&ckpt)?, log.final_loss(final_k, 100)));
        }
        let (model, log) = pipeline::train_model(opts)?;
        pipeline::save_model(&model, &ckpt, Some(opts))?;
        crate::formats::write_loss_log(&loss_file, &log)?;
        return Ok((model, log.final_loss(final_k, 100)));
    }
    let (model, log) = pipeline::train_model(opts)?;
    Ok((model, log.final_loss(final_k, 100)))
}

fn cache_tag(o: &TrainOptions) -> String {
    format!("{}_s{}_x{}_leak{}_{}_sr{}", o.task, o.seed, o.scale, u8::from(o.leak), o.activation.token().replace(':', "-"), o.sigma_r)
}

pub fn leak_ablation(setup: &TrainedSetup) -> Result<String, String> {
    let started = Instant::now();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    let mut cached = 0;
    for &seed in &setup.seeds {
        for leak in [true, false] {
            let mut o = TrainOptions::new(TaskName::Tmaze, seed);
            o.scale = setup.tmaze_scale;
            o.leak = leak;
            cached += usize::from(setup.cache.as_ref().is_some_and(|d| d.join(format!("{}.ckpt", cache_tag(&o))).exists()));
            let (_, loss) = cached_train(&o, setup.cache.as_ref(), &cache_tag(&o)).map_err(err_str)?;
            let loss = loss.ok_or("no k=3 epochs logged")?;
            if leak { with.push(loss) } else { without.push(loss) }
        }
    }
    let (a, b) = (with.iter().sum::<f64>() / with.len() as f64, without.iter().sum::<f64>() / without.len() as f64);
    let secs = started.elapsed().as_secs_f64();
    ensure(a <= b, || format!("leak {a:.5} > no leak {b:.5}"))?;
    ensure(secs < 900.0, || format!("took {secs:.0}s"))?;
    let timing = if cached > 0 { format!("{secs:.0}s, {cached} of {} runs cached", 2 * setup.seeds.len()) } else { format!("{secs:.0}s") };
    Ok(format!("final k=3 loss: leak {a:.5} <= no leak {b:.5} ({timing})"))
}

/// Replay statistics of trained triangle nets, one entry per seed.
pub struct TriangleSweep {
    pub cells: Vec<(f64, f64)>,
    /// Per seed, per cell: (median reach, wd, regions at the exploration horizon).
    pub stats: Vec<Vec<Option<(f64, f64, f64)>>>,
}

impl TriangleSweep {
    fn mean(&self, b_a: f64, lambda_v: f64, pick: fn(&(f64, f64, f64)) -> f64) -> Option<f64> {
        let i = self.cells.iter().position(|&c| c == (b_a, lambda_v))?;
        let vals: Vec<f64> = self.stats.iter().map(|s| s[i].as_ref().map(pick)).collect::<Option<Vec<f64>>>()?;
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Per-seed values of one statistic as `[a, b, c]`, `-` for a diverged seed.
    fn per_seed(&self, b_a: f64, lambda_v: f64, pick: fn(&(f64, f64, f64)) -> f64) -> String {
        let Some(i) = self.cells.iter().position(|&c| c == (b_a, lambda_v)) else { return String::new() };
        let vals: Vec<String> = self.stats.iter().map(|s| s[i].as_ref().map_or("-".into(), |x| format!("{:.3}", pick(x)))).collect();
        format!("[{}]", vals.join(", "))
    }
}

pub fn triangle_sweep(setup: &TrainedSetup) -> crate::Result<TriangleSweep> {
    let cells = vec![(0.0, 1.0), (0.0, 0.7), (1.0, 1.0), (1.0, 0.7)];
    let task = TaskName::Triangle;
    let env = task.env();
    let awake = pipeline::awake_paths(task, 100, 12345)?;
    let mut stats = Vec::new();
    for &seed in &setup.seeds {
        let mut o = TrainOptions::new(task, seed);
        o.scale = setup.triangle_scale;
        let (model, _) = cached_train(&o, setup.cache.as_ref(), &cache_tag(&o))?;
        let mut per_cell = Vec::new();
        for &(b_a, lambda_v) in &cells {
            let cfg = DynamicsConfig::with_modifiers(b_a, lambda_v);
            let short = generate_replay(&model.params, &env, &model.tags, &cfg, setup.n, 100, 1000 + seed);
            let long = generate_replay(&model.params, &env, &model.tags, &cfg, setup.n / 2, task.exploration_horizon(), 2000 + seed);
            per_cell.push(match (short, long) {
                (Ok(s), Ok(l)) => {
                    let reach = summarize_paths(&s, &env)?.median_reach;
                    let wd = trajectory_distribution_distance(&awake, &s, DistanceMode::PerDirectionGaussian)?;
                    let regions = summarize_paths(&l, &env)?.mean_regions;
                    Some((reach, wd, regions))
                }
                (Err(replaylab_core::Error::Divergence { .. }), _) | (_, Err(replaylab_core::Error::Divergence { .. })) => None,
                (Err(e), _) | (_, Err(e)) => return Err(e.into()),
            });
        }
        stats.push(per_cell);
    }
    Ok(TriangleSweep { cells, stats })
}

fn need(v: Option<f64>, what: &str) -> Result<f64, String> {
    v.ok_or_else(|| format!("{what}: some seed diverged"))
}

pub fn temporal_compression(s: &TriangleSweep) -> Result<String, String> {
    let base = need(s.mean(0.0, 1.0, |x| x.0), "b_a=0 lv=1")?;
    let under = need(s.mean(0.0, 0.7, |x| x.0), "b_a=0 lv=0.7")?;
    let adapt = need(s.mean(1.0, 1.0, |x| x.0), "b_a=1 lv=1")?;
    ensure(under < base, || format!("median reach lv=0.7 {under:.1} not below lv=1 {base:.1}"))?;
    ensure(adapt > base, || format!("median reach b_a=1 {adapt:.1} not above b_a=0 {base:.1}"))?;
    Ok(format!("median reach: lv=0.7 {under:.1} < base {base:.1} < b_a=1 {adapt:.1}"))
}

pub fn fidelity(s: &TriangleSweep) -> Result<String, String> {
    let under = need(s.mean(1.0, 0.7, |x| x.1), "b_a=1 lv=0.7")?;
    let over = need(s.mean(1.0, 1.0, |x| x.1), "b_a=1 lv=1")?;
    let seeds = format!("per seed lv=0.7 {} lv=1 {}", s.per_seed(1.0, 0.7, |x| x.1), s.per_seed(1.0, 1.0, |x| x.1));
    ensure(under < over, || format!("wd lv=0.7 {under:.4} not below lv=1 {over:.4}; {seeds}"))?;
    Ok(format!("wd at b_a=1: lv=0.7 {under:.4} < lv=1 {over:.4}; {seeds}"))
}

pub fn exploration(s: &TriangleSweep) -> Result<String, String> {
    let base = need(s.mean(0.0, 1.0, |x| x.2), "b_a=0 lv=1")?;
    let adapt = need(s.mean(1.0, 1.0, |x| x.2), "b_a=1 lv=1")?;
    let both = need(s.mean(1.0, 0.7, |x| x.2), "b_a=1 lv=0.7")?;
    let seeds = format!("per seed b_a=1 lv=1 {} lv=0.7 {}", s.per_seed(1.0, 1.0, |x| x.2), s.per_seed(1.0, 0.7, |x| x.2));
    ensure(adapt >= base, || format!("regions b_a=1 {adapt:.3} below b_a=0 {base:.3}; {seeds}"))?;
    ensure(both >= adapt - 0.1, || format!("regions lv=0.7,b_a=1 {both:.3} below {:.3} (b_a=0 {base:.3}); {seeds}", adapt - 0.1))?;
    Ok(format!("regions (T=400): b_a=0 {base:.3} <= b_a=1 {adapt:.3}; with lv=0.7 {both:.3}"))
}

// ---- runners ----

/// Checks that need no training beyond a few epochs.
pub fn run_fast() -> Vec<CheckResult> {
    vec![
        result(1, "analytic OU replay directions", analytic_ou_directions()),
        result(2, "leakage spectrum", leakage_spectrum()),
        result(3, "OU score limits", ou_score_limits()),
        result(4, "score finite differences", score_finite_differences()),
        result(5, "BPTT finite differences", bptt_finite_differences()),
        result(10, "second-order equivalence", second_order_equivalence()),
        result(11, "metric oracles", metric_oracles()),
        result(12, "modifier-off reduction", modifiers_off_bitwise()),
        result(13, "place decoding round trip", place_round_trip()),
        result(14, "end-to-end determinism", end_to_end_determinism()),
    ]
}

/// Every check, in numeric order. `report` is called as each result arrives.
pub fn run_all(setup: &TrainedSetup, mut report: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut push = |r: CheckResult| {
        report(&r);
        out.push(r);
    };
    push(result(1, "analytic OU replay directions", analytic_ou_directions()));
    push(result(2, "leakage spectrum", leakage_spectrum()));
    push(result(3, "OU score limits", ou_score_limits()));
    push(result(4, "score finite differences", score_finite_differences()));
    push(result(5, "BPTT finite differences", bptt_finite_differences()));
    push(result(6, "leak ablation (T-maze)", leak_ablation(setup)));
    match triangle_sweep(setup) {
        Ok(s) => {
            push(result(7, "temporal compression", temporal_compression(&s)));
            push(result(8, "fidelity under underdamping", fidelity(&s)));
            push(result(9, "exploration", exploration(&s)));
        }
        Err(e) => {
            for (id, name) in [(7, "temporal compression"), (8, "fidelity under underdamping"), (9, "exploration")] {
                push(result(id, name, Err(format!("triangle sweep failed: {e}"))));
            }
        }
    }
    push(result(10, "second-order equivalence", second_order_equivalence()));
    push(result(11, "metric oracles", metric_oracles()));
    push(result(12, "modifier-off reduction", modifiers_off_bitwise()));
    push(result(13, "place decoding round trip", place_round_trip()));
    push(result(14, "end-to-end determinism", end_to_end_determinism()));
    out
}
