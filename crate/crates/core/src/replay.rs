//! Quiescent replay from trained networks, analytic OU replay, and the second-order
//! view of adaptation.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{param, shape, Error, Result};
use crate::linalg::pseudo_inverse;
use crate::place::{decode_trajectory, encode, PlaceCellMap};
use crate::process::{EnvKind, EnvironmentSpec, OuParams, Trajectory};
use crate::rng::{derive_seed, normal, normal_vector, rng_from_seed, uniform};
use crate::rnn::{apply_modifiers, init_hidden, jitter_state, rollout, DynamicsConfig, NetState, RnnParams, TagSpec};
use crate::score::{ou_score, StationaryGaussian};

/// Relative size of the isotropic perturbation added to replay start states.
pub const INIT_JITTER: f64 = 0.1;

fn path_rng_seeds(seed: u64, i: usize) -> (u64, u64) {
    let base = derive_seed(seed, i as u64);
    (derive_seed(base, 1), derive_seed(base, 2))
}

/// Input-free rollouts from tagged start states. Each path picks its direction uniformly;
/// the label records it. Time is measured in network steps (`dt = 1`).
pub fn generate_replay(
    params: &RnnParams,
    env: &EnvironmentSpec,
    tags: &TagSpec,
    cfg: &DynamicsConfig,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let ndir = env.directions().len();
    if ndir == 0 {
        return Err(Error::UnsupportedEnvironment(format!("{:?} has no start states with directions", env.kind)));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (init_seed, noise_seed) = path_rng_seeds(seed, i);
        let mut rng = rng_from_seed(init_seed);
        let dir = rng.random_range(0..ndir);
        let mut state = init_hidden(env, dir, params, tags)?;
        jitter_state(&mut state, INIT_JITTER, &mut rng);
        let ro = rollout(params, &state, None, horizon, cfg, noise_seed)?;
        out.push(Trajectory { dt: 1.0, states: ro.decoded, label: Some(dir) });
    }
    Ok(out)
}

/// Replay for networks that read out place-cell activity. Start states are the least-squares
/// embedding `D^+ a(p0)` of a uniform start position; outputs are decoded back to 2D.
pub fn generate_place_replay(
    params: &RnnParams,
    env: &EnvironmentSpec,
    map: &PlaceCellMap,
    cfg: &DynamicsConfig,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if env.kind != EnvKind::Box {
        return Err(Error::UnsupportedEnvironment("place replay needs a box arena".into()));
    }
    if params.output_size() != map.len() {
        return Err(shape(format!("read-out has {} units, map has {} cells", params.output_size(), map.len())));
    }
    let d_pinv = pseudo_inverse(&params.d_out);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (init_seed, noise_seed) = path_rng_seeds(seed, i);
        let mut rng = rng_from_seed(init_seed);
        let p0 = DMatrix::from_row_slice(1, 2, &[uniform(&mut rng, map.lo[0], map.hi[0]), uniform(&mut rng, map.lo[1], map.hi[1])]);
        let a0 = encode(map, &p0)?.row(0).transpose();
        let mut state = NetState::at(&d_pinv * a0);
        jitter_state(&mut state, INIT_JITTER, &mut rng);
        let ro = rollout(params, &state, None, horizon, cfg, noise_seed)?;
        out.push(Trajectory { dt: 1.0, states: decode_trajectory(map, &ro.decoded)?, label: None });
    }
    Ok(out)
}

/// Grid of modifiers and seeds to sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub b_a: Vec<f64>,
    pub lambda_v: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub horizon: usize,
    pub tau_a: f64,
    pub noise_gain: f64,
}

impl SweepSpec {
    /// b_a in {0, 0.5, 1} by lambda_v in {1, 0.9, 0.8, 0.7}.
    pub fn maze_grid(seeds: Vec<u64>, n: usize, horizon: usize) -> Self {
        SweepSpec {
            b_a: alloc::vec![0.0, 0.5, 1.0],
            lambda_v: alloc::vec![1.0, 0.9, 0.8, 0.7],
            seeds,
            n,
            horizon,
            tau_a: 100.0,
            noise_gain: 1.0,
        }
    }

    pub fn config(&self, b_a: f64, lambda_v: f64) -> DynamicsConfig {
        DynamicsConfig { b_a, lambda_v, tau_a: self.tau_a, noise_gain: self.noise_gain, ..DynamicsConfig::default() }
    }

    /// Cells in b_a-major, then lambda_v, then seed order.
    pub fn cells(&self) -> Vec<(f64, f64, u64)> {
        let mut out = Vec::new();
        for &b in &self.b_a {
            for &l in &self.lambda_v {
                for &s in &self.seeds {
                    out.push((b, l, s));
                }
            }
        }
        out
    }
}

/// One sweep cell. Divergence is recorded, not raised.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCell {
    pub b_a: f64,
    pub lambda_v: f64,
    pub seed: u64,
    pub outcome: Result<Vec<Trajectory>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySet {
    pub cells: Vec<ReplayCell>,
}

impl ReplaySet {
    pub fn get(&self, b_a: f64, lambda_v: f64, seed: u64) -> Option<&ReplayCell> {
        self.cells.iter().find(|c| c.b_a == b_a && c.lambda_v == lambda_v && c.seed == seed)
    }
}

/// Runs every cell with `generator(cfg, seed)`. The same seed is reused across modifier
/// settings so cells differ only in their dynamics.
pub fn run_sweep_with<F>(spec: &SweepSpec, mut generator: F) -> Result<ReplaySet>
where
    F: FnMut(&DynamicsConfig, u64) -> Result<Vec<Trajectory>>,
{
    let mut cells = Vec::new();
    for (b_a, lambda_v, seed) in spec.cells() {
        let cfg = spec.config(b_a, lambda_v);
        cfg.validate()?;
        let outcome = match generator(&cfg, seed) {
            Err(e @ Error::Divergence { .. }) => Err(e),
            Err(e) => return Err(e),
            Ok(v) => Ok(v),
        };
        cells.push(ReplayCell { b_a, lambda_v, seed, outcome });
    }
    Ok(ReplaySet { cells })
}

pub fn run_sweep(params: &RnnParams, env: &EnvironmentSpec, tags: &TagSpec, spec: &SweepSpec) -> Result<ReplaySet> {
    run_sweep_with(spec, |cfg, seed| generate_replay(params, env, tags, cfg, spec.n, spec.horizon, seed))
}

/// Replay of the 1D OU process driven by the exact score, with identity read-out.
/// `r(0) ~ N(0, sigma_0^2 + a)` with `a = sigma_r^2 dt`; per-step noise is
/// `noise_gain * sigma_r * sqrt(dt) * N(0, 1)`.
pub fn analytic_ou_replay(p: &OuParams, sigma_r: f64, cfg: &DynamicsConfig, n: usize, horizon: usize, seed: u64) -> Result<Vec<Trajectory>> {
    p.validate()?;
    cfg.validate()?;
    if p.dim() != 1 {
        return Err(shape("analytic replay is defined for the scalar OU process"));
    }
    if !(sigma_r > 0.0 && sigma_r.is_finite()) {
        return Err(param("sigma_r must be > 0"));
    }
    if horizon < 1 {
        return Err(param("horizon must be >= 1"));
    }
    let a = sigma_r * sigma_r * p.dt;
    let noise_scale = cfg.noise_gain * sigma_r * libm::sqrt(p.dt);
    let init_sd = libm::sqrt(p.sigma_0 * p.sigma_0 + a);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let mut state = NetState::at(DVector::from_element(1, init_sd * normal(&mut rng)));
        let mut states = DMatrix::zeros(horizon, 1);
        states[(0, 0)] = state.r[0];
        for k in 0..horizon - 1 {
            let r = state.r[0];
            let drift = ou_score(r, k as f64 * p.dt, p, a)?;
            let f = DVector::from_element(1, r + drift + noise_scale * normal(&mut rng));
            state = apply_modifiers(&state, f, cfg);
            if !state.r[0].is_finite() || state.r[0].abs() > crate::rnn::DIVERGENCE_NORM {
                return Err(Error::Divergence { step: k + 1 });
            }
            states[(k + 1, 0)] = state.r[0];
        }
        out.push(Trajectory { dt: p.dt, states, label: None });
    }
    Ok(out)
}

/// `x'' = (A + D) x' + (BC - AD) x - D m` for `x' = A x + B y + m`, `y' = C x + D y`,
/// with `D` a multiple of the identity.
pub fn coupled_second_order_rhs(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    m: &DVector<f64>,
    x: &DVector<f64>,
    dx: &DVector<f64>,
) -> DVector<f64> {
    (a + d) * dx + (b * c - a * d) * x - d * m
}

/// Which closed form to compare adaptation dynamics against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondOrderForm {
    /// Substitution `C = (b_a / tau_a) I`, `D = -(1 / tau_a) I`, which follows from
    /// `c' = (-c + b_a r) / tau_a`. Exact up to discretization error.
    Derived,
    /// Substitution `C = -(1 / tau_a) I`, `D = (b_a / tau_a) I` as it appears in the
    /// published derivation. Differs from the true dynamics by `((1 + b_a) / tau_a)(r - c)`.
    AsPrinted,
}

/// Coefficients of `r' = A r - c + m`, `c' = C r + D c` for a stationary Gaussian target.
pub struct AdaptationSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub m: DVector<f64>,
}

impl AdaptationSystem {
    pub fn new(target: &StationaryGaussian, sigma_r2_dt: f64, b_a: f64, tau_a: f64, form: SecondOrderForm) -> Result<Self> {
        let n = target.mean.len();
        if target.cov.shape() != (n, n) {
            return Err(shape("covariance must be n x n"));
        }
        if !(tau_a > 0.0) || !(sigma_r2_dt > 0.0) {
            return Err(param("tau_a and sigma_r^2 dt must be > 0"));
        }
        let prec = target.cov.clone().cholesky().ok_or_else(|| param("covariance must be positive definite"))?.inverse();
        let a = &prec * (-sigma_r2_dt);
        let m = &prec * &target.mean * sigma_r2_dt;
        let id = DMatrix::<f64>::identity(n, n);
        let (c, d) = match form {
            SecondOrderForm::Derived => (&id * (b_a / tau_a), &id * (-1.0 / tau_a)),
            SecondOrderForm::AsPrinted => (&id * (-1.0 / tau_a), &id * (b_a / tau_a)),
        };
        Ok(AdaptationSystem { a, b: -id, c, d, m })
    }

    pub fn rhs(&self, x: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
        coupled_second_order_rhs(&self.a, &self.b, &self.c, &self.d, &self.m, x, dx)
    }
}

/// Integrates noise-free adaptation dynamics with forward Euler (step `dt`, total time
/// `horizon`) from a seeded random start, then returns the largest infinity-norm gap
/// between the central second difference of `r` and the chosen second-order form.
#[allow(clippy::too_many_arguments)]
pub fn adaptation_second_order_residual(
    target: &StationaryGaussian,
    sigma_r2_dt: f64,
    b_a: f64,
    tau_a: f64,
    dt: f64,
    horizon: f64,
    seed: u64,
    form: SecondOrderForm,
) -> Result<f64> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(param("dt and horizon must be > 0"));
    }
    let steps = libm::round(horizon / dt) as usize;
    if steps < 2 {
        return Err(param("horizon must span at least two steps"));
    }
    let sys = AdaptationSystem::new(target, sigma_r2_dt, b_a, tau_a, form)?;
    let true_sys = AdaptationSystem::new(target, sigma_r2_dt, b_a, tau_a, SecondOrderForm::Derived)?;
    let n = target.mean.len();
    let mut rng = rng_from_seed(seed);
    let mut r = &target.mean + normal_vector(&mut rng, n);
    let mut c = normal_vector(&mut rng, n) * 0.1;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(r.clone());
    for _ in 0..steps {
        let dr = &true_sys.a * &r - &c + &true_sys.m;
        let dc = &true_sys.c * &r + &true_sys.d * &c;
        r += dr * dt;
        c += dc * dt;
        path.push(r.clone());
    }
    let mut worst: f64 = 0.0;
    for k in 1..steps {
        let acc = (&path[k + 1] - &path[k] * 2.0 + &path[k - 1]) / (dt * dt);
        let vel = (&path[k + 1] - &path[k - 1]) / (2.0 * dt);
        worst = worst.max((acc - sys.rhs(&path[k], &vel)).amax());
    }
    Ok(worst)
}

/// The printed second-order equation written out term by term:
/// `(b_a/tau_a I - a S^-1) r' + (1/tau_a I + (b_a/tau_a) a S^-1) r - (b_a/tau_a) a S^-1 mu`.
pub fn printed_second_order_rhs(
    target: &StationaryGaussian,
    sigma_r2_dt: f64,
    b_a: f64,
    tau_a: f64,
    r: &DVector<f64>,
    dr: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = target.mean.len();
    let prec = target.cov.clone().cholesky().ok_or_else(|| param("covariance must be positive definite"))?.inverse();
    let id = DMatrix::<f64>::identity(n, n);
    let k = b_a / tau_a;
    let damping = &id * k - &prec * sigma_r2_dt;
    let stiffness = &id * (1.0 / tau_a) + &prec * (k * sigma_r2_dt);
    Ok(damping * dr + stiffness * r - &prec * &target.mean * (k * sigma_r2_dt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_target() -> StationaryGaussian {
        StationaryGaussian { mean: DVector::from_vec(vec![0.0]), cov: DMatrix::from_element(1, 1, 1.0) }
    }

    #[test]
    fn derived_form_residual_halves_with_dt() {
        let g = scalar_target();
        let r1 = adaptation_second_order_residual(&g, 0.5, 1.0, 2.0, 1e-2, 5.0, 1, SecondOrderForm::Derived).unwrap();
        let r2 = adaptation_second_order_residual(&g, 0.5, 1.0, 2.0, 5e-3, 5.0, 1, SecondOrderForm::Derived).unwrap();
        let ratio = r1 / r2;
        assert!((1.5..=2.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn printed_form_does_not_vanish() {
        let g = scalar_target();
        let r = adaptation_second_order_residual(&g, 0.5, 1.0, 2.0, 1e-3, 5.0, 1, SecondOrderForm::AsPrinted).unwrap();
        assert!(r > 1e-2);
    }

    #[test]
    fn analytic_replay_without_noise_tracks_the_mean_from_below() {
        let p = OuParams::scalar(2.0, 5.0, 0.1, 0.0, 0.02, 100);
        let cfg = DynamicsConfig { noise_gain: 0.0, ..DynamicsConfig::default() };
        let path = &analytic_ou_replay(&p, 0.1, &cfg, 1, 100, 0).unwrap()[0];
        // row 1 snaps onto m(0) = 0 since var(0) = 0
        for k in 2..100 {
            assert!(path.states[(k, 0)] >= path.states[(k - 1, 0)]);
            let (m, _) = crate::score::ou_moments(k as f64 * 0.02, &p).unwrap();
            assert!(path.states[(k, 0)] <= m[0]);
        }
    }

    #[test]
    fn sweep_cells_share_seeds() {
        let spec = SweepSpec::maze_grid(vec![7, 8], 1, 5);
        assert_eq!(spec.cells().len(), 24);
        assert_eq!(spec.cells()[0], (0.0, 1.0, 7));
    }
}
