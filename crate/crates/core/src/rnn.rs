//! Noisy leaky RNN with optional adaptation and momentum.
//!
//! Base map: `f(r) = kappa r + phi(W_r r + W_in u + xi)`, `xi ~ N(0, sigma_r^2 I)`.
//! One step with adaptation `c` and velocity `v`:
//!
//! ```text
//! dr  = f(r) - r
//! c+  = c + (-c + b_a r) / tau_a
//! v+  = (1 - lambda_v) v + dr
//! r+  = r - c + v+
//! ```
//!
//! `b_a = 0`, `lambda_v = 1` and zero `c`, `v` reduce this exactly to `r+ = f(r)`.

use alloc::format;
use alloc::string::{String, ToString};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{param, shape, Error, Result};
use crate::linalg::{project_null, pseudo_inverse, rank};
use crate::process::EnvironmentSpec;
use crate::rng::{derive_seed, normal, normal_matrix, normal_vector, rng_from_seed};

/// Hidden states with norm above this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e6;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Linear,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_RELU_SLOPE)
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Tanh => libm::tanh(x),
            Activation::Linear => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(x);
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    /// Whitespace-free token, e.g. `relu`, `leaky_relu:0.01`.
    pub fn token(self) -> String {
        match self {
            Activation::Relu => "relu".to_string(),
            Activation::LeakyRelu(a) => format!("leaky_relu:{a}"),
            Activation::Tanh => "tanh".to_string(),
            Activation::Linear => "linear".to_string(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            "leaky_relu" => Ok(Activation::leaky()),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|a| a.is_finite())
                    .ok_or_else(|| param(format!("unknown activation `{s}`")))?;
                Ok(Activation::LeakyRelu(slope))
            }
        }
    }
}

/// Architecture and initialisation for a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub hidden: usize,
    pub activation: Activation,
    pub sigma_r: f64,
    pub leak_enabled: bool,
    pub kappa_init: f64,
    /// Recurrent weights start as `N(0, rec_gain^2 / n)`.
    pub rec_gain: f64,
    /// Input weights start as `N(0, in_gain^2 / m)`.
    pub in_gain: f64,
    /// Read-out weights start as `N(0, out_gain^2 / n)`.
    pub out_gain: f64,
}

impl NetSpec {
    pub fn new(hidden: usize, sigma_r: f64, leak_enabled: bool) -> Self {
        NetSpec {
            hidden,
            activation: Activation::leaky(),
            sigma_r,
            leak_enabled,
            kappa_init: 0.5,
            rec_gain: 0.5,
            in_gain: 0.1,
            out_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    /// n x n
    pub w_rec: DMatrix<f64>,
    /// n x m
    pub w_in: DMatrix<f64>,
    /// d x n
    pub d_out: DMatrix<f64>,
    pub kappa: f64,
    pub sigma_r: f64,
    pub activation: Activation,
    pub leak_enabled: bool,
}

impl RnnParams {
    pub fn init(spec: &NetSpec, input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if spec.hidden == 0 || output_dim == 0 {
            return Err(param("hidden and output sizes must be positive"));
        }
        let n = spec.hidden;
        let mut rng = rng_from_seed(seed);
        let w_rec = normal_matrix(&mut rng, n, n) * (spec.rec_gain / libm::sqrt(n as f64));
        let w_in = normal_matrix(&mut rng, n, input_dim) * (spec.in_gain / libm::sqrt(input_dim.max(1) as f64));
        let d_out = normal_matrix(&mut rng, output_dim, n) * (spec.out_gain / libm::sqrt(n as f64));
        let p = RnnParams {
            w_rec,
            w_in,
            d_out,
            kappa: if spec.leak_enabled { spec.kappa_init.clamp(0.0, 1.0) } else { 0.0 },
            sigma_r: spec.sigma_r,
            activation: spec.activation,
            leak_enabled: spec.leak_enabled,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn hidden_size(&self) -> usize {
        self.w_rec.nrows()
    }

    pub fn input_size(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.d_out.nrows()
    }

    /// Leak coefficient actually used in the base map.
    pub fn effective_kappa(&self) -> f64 {
        if self.leak_enabled {
            self.kappa
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hidden_size();
        if self.w_rec.ncols() != n || self.w_in.nrows() != n || self.d_out.ncols() != n {
            return Err(shape(format!(
                "inconsistent shapes: W_r {:?}, W_in {:?}, D {:?}",
                self.w_rec.shape(),
                self.w_in.shape(),
                self.d_out.shape()
            )));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(param(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return Err(param(format!("sigma_r must be finite and >= 0, got {}", self.sigma_r)));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        if !finite(&self.w_rec) || !finite(&self.w_in) || !finite(&self.d_out) {
            return Err(param("weights must be finite"));
        }
        Ok(())
    }

    /// `kappa r + phi(W_r r + W_in u + xi)`; `u = None` means no input drive.
    pub fn base_map(&self, r: &DVector<f64>, input: Option<&DVector<f64>>, xi: &DVector<f64>) -> DVector<f64> {
        let mut z = &self.w_rec * r;
        if let Some(u) = input {
            z += &self.w_in * u;
        }
        z += xi;
        let act = self.activation;
        let k = self.effective_kappa();
        let mut f = r * k;
        f.zip_apply(&z, |fi, zi| *fi += act.apply(zi));
        f
    }

    pub fn decode(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.d_out * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseInjection {
    /// Noise enters the activation argument, as during training.
    #[default]
    PreActivation,
    /// Noise is added to `f` after the nonlinearity.
    Additive,
}

/// Replay modifiers. `tau_a` must be positive; `b_a = 0` disables adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsConfig {
    pub b_a: f64,
    pub tau_a: f64,
    pub lambda_v: f64,
    pub noise: NoiseInjection,
    /// Multiplies the injected noise; 1 by default, `sqrt(2)` for a Langevin-style discretization.
    pub noise_gain: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig { b_a: 0.0, tau_a: 100.0, lambda_v: 1.0, noise: NoiseInjection::PreActivation, noise_gain: 1.0 }
    }
}

impl DynamicsConfig {
    pub fn with_modifiers(b_a: f64, lambda_v: f64) -> Self {
        DynamicsConfig { b_a, lambda_v, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_a >= 0.0 && self.b_a.is_finite()) {
            return Err(param(format!("b_a must be finite and >= 0, got {}", self.b_a)));
        }
        if !(self.tau_a > 0.0 && self.tau_a.is_finite()) {
            return Err(param(format!("tau_a must be > 0, got {}", self.tau_a)));
        }
        if !(self.lambda_v > 0.0 && self.lambda_v <= 1.0) {
            return Err(param(format!("lambda_v must lie in (0, 1], got {}", self.lambda_v)));
        }
        if !(self.noise_gain >= 0.0 && self.noise_gain.is_finite()) {
            return Err(param("noise_gain must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Hidden state, adaptation current and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub r: DVector<f64>,
    pub c: DVector<f64>,
    pub v: DVector<f64>,
}

impl NetState {
    pub fn at(r: DVector<f64>) -> Self {
        let n = r.len();
        NetState { r, c: DVector::zeros(n), v: DVector::zeros(n) }
    }
}

/// Applies the momentum/adaptation update to a proposed increment `dr`.
///
/// `r+ = r - c + v+` is evaluated as `r + dr + ((1 - lambda_v) v - c)`, which is the same
/// expression and returns `r + dr` untouched when the modifiers are off.
pub fn apply_modifiers(state: &NetState, f: DVector<f64>, cfg: &DynamicsConfig) -> NetState {
    let keep = 1.0 - cfg.lambda_v;
    let dr = &f - &state.r;
    let c_next = &state.c + (-&state.c + &state.r * cfg.b_a) / cfg.tau_a;
    let carried = &state.v * keep;
    let v_next = &carried + &dr;
    let r_next = f + (carried - &state.c);
    NetState { r: r_next, c: c_next, v: v_next }
}

/// One update with pre-drawn noise (already scaled by `sigma_r`).
pub fn step(params: &RnnParams, state: &NetState, input: Option<&DVector<f64>>, noise: &DVector<f64>, cfg: &DynamicsConfig) -> Result<NetState> {
    let n = params.hidden_size();
    if state.r.len() != n || state.c.len() != n || state.v.len() != n || noise.len() != n {
        return Err(shape(format!("state and noise must have length {n}")));
    }
    if let Some(u) = input {
        if u.len() != params.input_size() {
            return Err(shape(format!("input has length {}, expected {}", u.len(), params.input_size())));
        }
    }
    let f = match cfg.noise {
        NoiseInjection::PreActivation => params.base_map(&state.r, input, noise),
        NoiseInjection::Additive => params.base_map(&state.r, input, &DVector::zeros(n)) + noise,
    };
    Ok(apply_modifiers(state, f, cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// T x n, row 0 is the initial state.
    pub hidden: DMatrix<f64>,
    /// T x d read-out.
    pub decoded: DMatrix<f64>,
}

fn diverged(r: &DVector<f64>) -> bool {
    r.iter().any(|x| !x.is_finite()) || r.norm() > DIVERGENCE_NORM
}

/// Runs `horizon - 1` steps. Input row `k` drives the transition into row `k + 1`.
/// Noise: `noise_gain * sigma_r * N(0, I)`, one vector per step from `seed`.
pub fn rollout(
    params: &RnnParams,
    init: &NetState,
    inputs: Option<&DMatrix<f64>>,
    horizon: usize,
    cfg: &DynamicsConfig,
    seed: u64,
) -> Result<Rollout> {
    params.validate()?;
    cfg.validate()?;
    let n = params.hidden_size();
    if horizon < 1 {
        return Err(param("horizon must be >= 1"));
    }
    if init.r.len() != n {
        return Err(shape(format!("initial state has length {}, expected {n}", init.r.len())));
    }
    if let Some(u) = inputs {
        if u.ncols() != params.input_size() || u.nrows() + 1 < horizon {
            return Err(shape(format!("inputs are {:?}, need >= {} rows of width {}", u.shape(), horizon - 1, params.input_size())));
        }
    }
    let mut rng = rng_from_seed(seed);
    let scale = cfg.noise_gain * params.sigma_r;
    let mut hidden = DMatrix::zeros(horizon, n);
    hidden.row_mut(0).copy_from(&init.r.transpose());
    let mut state = init.clone();
    for k in 0..horizon - 1 {
        let noise = normal_vector(&mut rng, n) * scale;
        let u = inputs.map(|m| m.row(k).transpose());
        state = step(params, &state, u.as_ref(), &noise, cfg)?;
        if diverged(&state.r) {
            return Err(Error::Divergence { step: k + 1 });
        }
        hidden.row_mut(k + 1).copy_from(&state.r.transpose());
    }
    let decoded = &hidden * params.d_out.transpose();
    Ok(Rollout { hidden, decoded })
}

/// How direction tags are drawn: raw vectors come from `seed`, and each tag is rescaled
/// to `scale * |D^+ (end - start)|` after projection onto the null space of `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagSpec {
    pub seed: u64,
    pub scale: f64,
}

impl TagSpec {
    pub fn new(seed: u64) -> Self {
        TagSpec { seed, scale: 0.5 }
    }
}

/// Null-space tag for a direction given the current read-out and its pseudo-inverse.
pub fn tag_vector(d_out: &DMatrix<f64>, d_pinv: &DMatrix<f64>, env: &EnvironmentSpec, direction_id: usize, tags: &TagSpec) -> Result<DVector<f64>> {
    let dir = env.direction(direction_id)?;
    let n = d_out.ncols();
    let mut rng = rng_from_seed(derive_seed(tags.seed, 0x7A6 + direction_id as u64));
    let raw = normal_vector(&mut rng, n);
    let projected = project_null(d_out, d_pinv, &raw);
    let norm = projected.norm();
    let end = dir.waypoints.last().unwrap_or(&env.endpoints[dir.end]);
    let target = tags.scale * (d_pinv * (end - &env.endpoints[dir.start])).norm();
    if norm <= 1e-12 * raw.norm().max(1.0) {
        return Ok(DVector::zeros(n));
    }
    Ok(projected * (target / norm))
}

/// Requires `D` to have full row rank.
pub fn check_readout_rank(d_out: &DMatrix<f64>) -> Result<()> {
    let required = d_out.nrows();
    let got = rank(d_out);
    if got < required {
        return Err(Error::RankDeficient { rank: got, required });
    }
    Ok(())
}

/// Start state for replay along `direction_id`: `D^+ start + tag`, zero `c` and `v`.
pub fn init_hidden(env: &EnvironmentSpec, direction_id: usize, params: &RnnParams, tags: &TagSpec) -> Result<NetState> {
    check_readout_rank(&params.d_out)?;
    if env.dim() != params.output_size() {
        return Err(shape(format!("environment is {}-D but the read-out is {}-D", env.dim(), params.output_size())));
    }
    let d_pinv = pseudo_inverse(&params.d_out);
    let dir = env.direction(direction_id)?;
    let tag = tag_vector(&params.d_out, &d_pinv, env, direction_id, tags)?;
    Ok(NetState::at(&d_pinv * &env.endpoints[dir.start] + tag))
}

/// Adds isotropic noise with total expected norm `rel * |r|`.
pub fn jitter_state<R: Rng + ?Sized>(state: &mut NetState, rel: f64, rng: &mut R) {
    let n = state.r.len();
    let per = rel * state.r.norm() / libm::sqrt(n as f64);
    for x in state.r.iter_mut() {
        *x += per * normal(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> RnnParams {
        RnnParams::init(&NetSpec::new(6, 0.1, true), 2, 2, seed).unwrap()
    }

    #[test]
    fn activation_tokens_round_trip() {
        for a in [Activation::Relu, Activation::leaky(), Activation::Tanh, Activation::Linear, Activation::LeakyRelu(0.2)] {
            assert_eq!(Activation::parse(&a.token()).unwrap(), a);
        }
        assert!(Activation::parse("sigmoid").is_err());
    }

    #[test]
    fn step_matches_reference_order() {
        let p = small_net(1);
        let mut rng = rng_from_seed(9);
        let state = NetState { r: normal_vector(&mut rng, 6), c: normal_vector(&mut rng, 6), v: normal_vector(&mut rng, 6) };
        let xi = normal_vector(&mut rng, 6) * 0.1;
        let u = normal_vector(&mut rng, 2);
        let cfg = DynamicsConfig { b_a: 0.7, tau_a: 5.0, lambda_v: 0.6, ..Default::default() };
        let got = step(&p, &state, Some(&u), &xi, &cfg).unwrap();

        let f = p.base_map(&state.r, Some(&u), &xi);
        let dr = &f - &state.r;
        let c = &state.c + (-&state.c + 0.7 * &state.r) / 5.0;
        let v = 0.4 * &state.v + &dr;
        let r = &state.r - &state.c + &v;
        assert!((got.r - r).amax() < 1e-12);
        assert!((got.c - c).amax() < 1e-15);
        assert!((got.v - v).amax() < 1e-15);
    }

    #[test]
    fn modifiers_off_is_the_base_map() {
        let p = small_net(2);
        let mut rng = rng_from_seed(3);
        let r = normal_vector(&mut rng, 6);
        let xi = normal_vector(&mut rng, 6);
        let got = step(&p, &NetState::at(r.clone()), None, &xi, &DynamicsConfig::default()).unwrap();
        assert_eq!(got.r, p.base_map(&r, None, &xi));
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = small_net(4);
        p.w_rec = DMatrix::identity(6, 6) * 50.0;
        p.activation = Activation::Linear;
        let init = NetState::at(DVector::from_element(6, 1.0));
        let err = rollout(&p, &init, None, 50, &DynamicsConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn init_decodes_to_start_and_tags_are_invisible() {
        let p = RnnParams::init(&NetSpec::new(20, 0.1, true), 2, 2, 5).unwrap();
        let env = EnvironmentSpec::triangle();
        for dir in 0..6 {
            let s = init_hidden(&env, dir, &p, &TagSpec::new(11)).unwrap();
            let start = &env.endpoints[env.direction(dir).unwrap().start];
            assert!((p.decode(&s.r) - start).norm() < 1e-10);
        }
        let a = init_hidden(&env, 0, &p, &TagSpec::new(11)).unwrap();
        let b = init_hidden(&env, 3, &p, &TagSpec::new(11)).unwrap();
        assert!((a.r - b.r).norm() > 1e-3);
    }

    #[test]
    fn rank_deficient_readout_is_rejected() {
        let mut p = small_net(6);
        p.d_out = DMatrix::from_row_slice(2, 6, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let err = init_hidden(&EnvironmentSpec::tmaze(), 0, &p, &TagSpec::new(0)).unwrap_err();
        assert_eq!(err, Error::RankDeficient { rank: 1, required: 2 });
    }
}
