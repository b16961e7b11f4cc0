use nalgebra::{DMatrix, DVector};
use rand::Rng;
use replaylab_core::process::OuParams;
use replaylab_core::rng::{normal_matrix, normal_vector, rng_from_seed, uniform, SimRng};
use replaylab_core::score::{gaussian_score, leakage_matrix, ou_score, wiener_score, ScoreContext, StationaryGaussian};

fn random_psd(rng: &mut SimRng, d: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, d, d);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.05
}

/// log N(x; m, K), computed through LU rather than Cholesky.
fn log_density(x: &DVector<f64>, m: &DVector<f64>, k: &DMatrix<f64>) -> f64 {
    let lu = k.clone().lu();
    let det = lu.determinant();
    let diff = x - m;
    let sol = lu.solve(&diff).unwrap();
    let n = x.len() as f64;
    -0.5 * (diff.dot(&sol) + det.ln() + n * (2.0 * std::f64::consts::PI).ln())
}

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(got.abs()).max(1e-3)
}

#[test]
fn gaussian_score_matches_finite_differences_of_the_density() {
    let mut rng = rng_from_seed(11);
    for case in 0..100 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(d..=6);
        let dmat = normal_matrix(&mut rng, d, n);
        let a = uniform(&mut rng, 0.05, 1.0);
        let ctx = ScoreContext::new(&dmat, a).unwrap();
        let target = StationaryGaussian { mean: normal_vector(&mut rng, d), cov: random_psd(&mut rng, d) };
        let r = normal_vector(&mut rng, n);

        let p = &ctx.d_pinv;
        let m = p * &target.mean;
        let k = DMatrix::identity(n, n) * a + p * &target.cov * p.transpose();
        let got = gaussian_score(&r, 0.0, &target, &ctx).unwrap();
        let h = 1e-5;
        for i in 0..n {
            let mut up = r.clone();
            let mut dn = r.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = a * (log_density(&up, &m, &k) - log_density(&dn, &m, &k)) / (2.0 * h);
            assert!(close(got[i], fd, 1e-6), "case {case} coord {i}: {} vs {fd}", got[i]);
        }
    }
}

fn ou_log_density(r: f64, t: f64, p: &OuParams, a: f64) -> f64 {
    let th = p.theta;
    let m = p.mu[0] * (1.0 - (-th * t).exp());
    let v = a + p.sigma_s.powi(2) / (2.0 * th) * (1.0 - (-2.0 * th * t).exp()) + p.sigma_0.powi(2) * (-th * t).exp();
    -0.5 * (r - m).powi(2) / v - 0.5 * v.ln()
}

#[test]
fn ou_score_matches_finite_differences() {
    let mut rng = rng_from_seed(12);
    for case in 0..100 {
        let p = OuParams::scalar(
            uniform(&mut rng, 0.2, 5.0),
            uniform(&mut rng, -5.0, 5.0),
            uniform(&mut rng, 0.05, 1.0),
            uniform(&mut rng, 0.05, 1.0),
            0.02,
            100,
        );
        let a = uniform(&mut rng, 1e-3, 0.5);
        let t = uniform(&mut rng, 0.0, 3.0);
        let r = uniform(&mut rng, -6.0, 6.0);
        let h = 1e-5;
        let fd = a * (ou_log_density(r + h, t, &p, a) - ou_log_density(r - h, t, &p, a)) / (2.0 * h);
        let got = ou_score(r, t, &p, a).unwrap();
        assert!(close(got, fd, 1e-6), "case {case}: {got} vs {fd}");
    }
}

#[test]
fn wiener_score_matches_finite_differences() {
    let mut rng = rng_from_seed(13);
    for case in 0..100 {
        let s = uniform(&mut rng, 0.05, 2.0);
        let a = uniform(&mut rng, 1e-3, 0.5);
        let t = uniform(&mut rng, 0.0, 5.0);
        let r = uniform(&mut rng, -3.0, 3.0);
        let logp = |x: f64| {
            let v = s * s * t + a;
            -0.5 * x * x / v - 0.5 * v.ln()
        };
        let h = 1e-5;
        let fd = a * (logp(r + h) - logp(r - h)) / (2.0 * h);
        let got = wiener_score(r, t, s, a).unwrap();
        assert!(close(got, fd, 1e-6), "case {case}: {got} vs {fd}");
    }
}

fn sorted_eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut e: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

#[test]
fn leakage_eigenvalues_lie_in_unit_interval_and_shrink_with_covariance() {
    let mut rng = rng_from_seed(14);
    for case in 0..1000 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(d..=8);
        let dmat = normal_matrix(&mut rng, d, n);
        let a = uniform(&mut rng, 1e-3, 1.0);
        let ctx = ScoreContext::new(&dmat, a).unwrap();
        // Rank-deficient covariances are allowed; PSD is all that is needed.
        let rank = rng.random_range(1..=d);
        let f = normal_matrix(&mut rng, d, rank);
        let cov = &f * f.transpose();
        let small = StationaryGaussian { mean: DVector::zeros(d), cov: cov.clone() };
        let large = StationaryGaussian { mean: DVector::zeros(d), cov: cov * 10.0 };
        let e1 = sorted_eigs(&leakage_matrix(0.0, &small, &ctx).unwrap());
        let e2 = sorted_eigs(&leakage_matrix(0.0, &large, &ctx).unwrap());
        for (&x, &y) in e1.iter().zip(&e2) {
            assert!(x > 0.0 && x <= 1.0 + 1e-10, "case {case}: eigenvalue {x}");
            assert!(y <= x + 1e-10, "case {case}: {y} > {x} after scaling");
        }
    }
}

#[test]
fn ou_score_short_time_limit() {
    let p = OuParams::reference_1d();
    let a = 0.1f64.powi(2) * 0.02;
    let t = 1e-9 / p.theta;
    for r in [-1.0, 0.3, 2.5] {
        let want = -a / (a + p.sigma_0 * p.sigma_0) * r;
        let got = ou_score(r, t, &p, a).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn ou_score_long_time_limit() {
    let p = OuParams::reference_1d();
    let a = 0.1f64.powi(2) * 0.02;
    let t = 30.0 / p.theta;
    for r in [-1.0, 4.0, 7.5] {
        let want = -a / (a + p.sigma_s * p.sigma_s / (2.0 * p.theta)) * (r - p.mu[0]);
        let got = ou_score(r, t, &p, a).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
