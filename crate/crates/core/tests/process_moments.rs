use nalgebra::DVector;
use replaylab_core::process::{
    ou_euler_moments, ou_exact_moments, simulate_ou_with, simulate_wiener, Integrator, OuParams, Trajectory,
};

const PATHS: usize = 20_000;

fn sample_moments(trajs: &[Trajectory], k: usize) -> (f64, f64) {
    let xs: Vec<f64> = trajs.iter().map(|t| t.states[(k, 0)]).collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Mean within 5 standard errors, variance within 5 standard errors of a Gaussian sample variance.
fn assert_moments(got: (f64, f64), mean: f64, var: f64, what: &str) {
    let n = PATHS as f64;
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    assert!((got.0 - mean).abs() < 5.0 * se_mean, "{what}: mean {} vs {mean}", got.0);
    assert!((got.1 - var).abs() < 5.0 * se_var, "{what}: var {} vs {var}", got.1);
}

#[test]
fn exact_transition_matches_continuous_marginals() {
    let p = OuParams::reference_1d();
    let trajs = simulate_ou_with(&p, PATHS, 3, Integrator::ExactTransition).unwrap();
    for k in [0, 1, 10, 50, 99] {
        let (m, v) = ou_exact_moments(k as f64 * p.dt, &p).unwrap();
        assert_moments(sample_moments(&trajs, k), m[0], v, &format!("step {k}"));
    }
}

#[test]
fn euler_chain_matches_its_discrete_moments() {
    let p = OuParams::scalar(3.0, -1.0, 0.5, 0.3, 0.05, 60);
    let trajs = simulate_ou_with(&p, PATHS, 4, Integrator::EulerMaruyama).unwrap();
    for k in [0, 5, 30, 59] {
        let (m, v) = ou_euler_moments(k, &p).unwrap();
        assert_moments(sample_moments(&trajs, k), m[0], v, &format!("step {k}"));
    }
}

#[test]
fn euler_moments_approach_exact_ones_as_dt_shrinks() {
    let t = 0.5;
    let mut gaps = Vec::new();
    for dt in [0.01, 0.005, 0.0025] {
        let p = OuParams::scalar(2.0, 5.0, 0.1, 0.2, dt, 10);
        let k = (t / dt).round() as usize;
        let (me, ve) = ou_euler_moments(k, &p).unwrap();
        let (mx, vx) = ou_exact_moments(t, &p).unwrap();
        gaps.push((me[0] - mx[0]).abs() + (ve - vx).abs());
    }
    assert!(gaps[1] < gaps[0] && gaps[2] < gaps[1], "{gaps:?}");
}

#[test]
fn wiener_variance_grows_linearly() {
    let (sigma, dt) = (0.7, 0.01);
    let trajs = simulate_wiener(sigma, dt, 101, PATHS, 5).unwrap();
    for k in [1, 25, 100] {
        let var = sigma * sigma * dt * k as f64;
        assert_moments(sample_moments(&trajs, k), 0.0, var, &format!("step {k}"));
    }
}

#[test]
fn multivariate_paths_are_independent_per_coordinate() {
    let p = OuParams { mu: DVector::from_vec(vec![1.0, -2.0]), ..OuParams::reference_1d() };
    let trajs = simulate_ou_with(&p, 4000, 6, Integrator::ExactTransition).unwrap();
    let k = 60;
    let xs: Vec<(f64, f64)> = trajs.iter().map(|t| (t.states[(k, 0)], t.states[(k, 1)])).collect();
    let n = xs.len() as f64;
    let (mx, my) = xs.iter().fold((0.0, 0.0), |a, x| (a.0 + x.0 / n, a.1 + x.1 / n));
    let cov = xs.iter().map(|x| (x.0 - mx) * (x.1 - my)).sum::<f64>() / (n - 1.0);
    let (_, v) = ou_exact_moments(k as f64 * p.dt, &p).unwrap();
    assert!(cov.abs() < 5.0 * v / n.sqrt(), "cross covariance {cov}");
}
