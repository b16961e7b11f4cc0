//! Path generators: 1D OU and Wiener processes, piecewise-OU task paths on the T-maze
//! and triangle, and reflecting velocity-OU random walks in a box.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{param, shape, Error, Result};
use crate::rng::{derive_seed, normal, rng_from_seed, uniform, SimRng};

/// A sampled path: `states` is T x d, row k is the state at time `k * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: DMatrix<f64>,
    pub label: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    /// Row-major flattening, length T * d.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.states.len());
        for row in self.states.row_iter() {
            out.extend(row.iter().copied());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    EulerMaruyama,
    /// Samples the exact OU transition density over each step.
    ExactTransition,
}

/// OU process `ds = theta (mu - s) dt + sigma_s dW`, `s(0) ~ N(0, sigma_0^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuParams {
    pub theta: f64,
    pub mu: DVector<f64>,
    pub sigma_s: f64,
    pub sigma_0: f64,
    pub dt: f64,
    /// Number of rows per trajectory.
    pub horizon: usize,
}

impl OuParams {
    pub fn scalar(theta: f64, mu: f64, sigma_s: f64, sigma_0: f64, dt: f64, horizon: usize) -> Self {
        OuParams { theta, mu: DVector::from_element(1, mu), sigma_s, sigma_0, dt, horizon }
    }

    /// The 1D setting used for the analytic replay figures.
    pub fn reference_1d() -> Self {
        OuParams::scalar(2.0, 5.0, 0.1, 0.2, 0.02, 100)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(param(format!("theta must be finite and >= 0, got {}", self.theta)));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_s.is_finite()) {
            return Err(param(format!("sigma_s must be finite and >= 0, got {}", self.sigma_s)));
        }
        if !(self.sigma_0 >= 0.0 && self.sigma_0.is_finite()) {
            return Err(param(format!("sigma_0 must be finite and >= 0, got {}", self.sigma_0)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(param(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.horizon < 1 {
            return Err(param("horizon must be >= 1"));
        }
        if self.mu.iter().any(|x| !x.is_finite()) {
            return Err(param("mu must be finite"));
        }
        Ok(())
    }
}

/// Exact continuous-time marginal of the OU process started from `N(0, sigma_0^2)`.
/// Returns the mean vector and the per-coordinate variance.
pub fn ou_exact_moments(t: f64, p: &OuParams) -> Result<(DVector<f64>, f64)> {
    p.validate()?;
    if t < 0.0 {
        return Err(param("t must be >= 0"));
    }
    let decay = -libm::expm1(-p.theta * t);
    let mean = &p.mu * decay;
    let s2 = p.sigma_s * p.sigma_s;
    let spread = if p.theta == 0.0 { t } else { -libm::expm1(-2.0 * p.theta * t) / (2.0 * p.theta) };
    let var = s2 * spread + p.sigma_0 * p.sigma_0 * libm::exp(-2.0 * p.theta * t);
    Ok((mean, var))
}

/// Moments of the Euler-Maruyama chain after `k` steps, per coordinate.
pub fn ou_euler_moments(k: usize, p: &OuParams) -> Result<(DVector<f64>, f64)> {
    p.validate()?;
    let a = 1.0 - p.theta * p.dt;
    let mut mean = DVector::zeros(p.dim());
    let mut var = p.sigma_0 * p.sigma_0;
    for _ in 0..k {
        mean = &mean * a + &p.mu * (p.theta * p.dt);
        var = a * a * var + p.sigma_s * p.sigma_s * p.dt;
    }
    Ok((mean, var))
}

struct OuStepper {
    theta: f64,
    sigma_s: f64,
    dt: f64,
    integrator: Integrator,
}

impl OuStepper {
    fn step(&self, s: f64, target: f64, rng: &mut SimRng) -> f64 {
        let eta = normal(rng);
        match self.integrator {
            Integrator::EulerMaruyama => {
                s + self.theta * (target - s) * self.dt + self.sigma_s * libm::sqrt(self.dt) * eta
            }
            Integrator::ExactTransition => {
                let decay = libm::exp(-self.theta * self.dt);
                let spread = if self.theta == 0.0 {
                    self.dt
                } else {
                    -libm::expm1(-2.0 * self.theta * self.dt) / (2.0 * self.theta)
                };
                target + (s - target) * decay + self.sigma_s * libm::sqrt(spread) * eta
            }
        }
    }
}

/// Simulates `n` independent OU paths with Euler-Maruyama steps.
pub fn simulate_ou(p: &OuParams, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    simulate_ou_with(p, n, seed, Integrator::EulerMaruyama)
}

pub fn simulate_ou_with(p: &OuParams, n: usize, seed: u64, integrator: Integrator) -> Result<Vec<Trajectory>> {
    p.validate()?;
    let stepper = OuStepper { theta: p.theta, sigma_s: p.sigma_s, dt: p.dt, integrator };
    let d = p.dim();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let mut states = DMatrix::zeros(p.horizon, d);
        for j in 0..d {
            states[(0, j)] = p.sigma_0 * normal(&mut rng);
        }
        for k in 1..p.horizon {
            for j in 0..d {
                states[(k, j)] = stepper.step(states[(k - 1, j)], p.mu[j], &mut rng);
            }
        }
        out.push(Trajectory { dt: p.dt, states, label: None });
    }
    Ok(out)
}

/// Scalar Brownian paths with `s(0) = 0`.
pub fn simulate_wiener(sigma_s: f64, dt: f64, horizon: usize, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if !(sigma_s >= 0.0 && sigma_s.is_finite()) {
        return Err(param("sigma_s must be finite and >= 0"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(param("dt must be > 0"));
    }
    if horizon < 1 {
        return Err(param("horizon must be >= 1"));
    }
    let scale = sigma_s * libm::sqrt(dt);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let mut states = DMatrix::zeros(horizon, 1);
        for k in 1..horizon {
            states[(k, 0)] = states[(k - 1, 0)] + scale * normal(&mut rng);
        }
        out.push(Trajectory { dt, states, label: None });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    /// One-dimensional segment from 0 to a goal.
    Line,
    TMaze,
    Triangle,
    /// Open 2D arena for random walks.
    Box,
}

/// One traversal: leave `start`, pass each waypoint in order, finish at `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub start: usize,
    pub end: usize,
    pub waypoints: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    /// Task-relevant points (start states and goals).
    pub endpoints: Vec<DVector<f64>>,
    pub bounds: Option<(DVector<f64>, DVector<f64>)>,
}

fn pt(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y])
}

impl EnvironmentSpec {
    pub fn line(goal: f64) -> Self {
        EnvironmentSpec {
            kind: EnvKind::Line,
            endpoints: vec![DVector::zeros(1), DVector::from_element(1, goal)],
            bounds: None,
        }
    }

    /// Start (0,0), junction (0,1), arm ends (-1,1) and (1,1).
    pub fn tmaze() -> Self {
        EnvironmentSpec {
            kind: EnvKind::TMaze,
            endpoints: vec![pt(0.0, 0.0), pt(-1.0, 1.0), pt(1.0, 1.0)],
            bounds: None,
        }
    }

    pub fn tmaze_junction() -> DVector<f64> {
        pt(0.0, 1.0)
    }

    /// Equilateral triangle A=(0,0), B=(1,0), C=(0.5, sqrt(3)/2).
    pub fn triangle() -> Self {
        EnvironmentSpec {
            kind: EnvKind::Triangle,
            endpoints: vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(0.5, libm::sqrt(3.0) / 2.0)],
            bounds: None,
        }
    }

    pub fn open_box(lo: [f64; 2], hi: [f64; 2]) -> Self {
        EnvironmentSpec {
            kind: EnvKind::Box,
            endpoints: Vec::new(),
            bounds: Some((pt(lo[0], lo[1]), pt(hi[0], hi[1]))),
        }
    }

    /// The default arena for the rat tasks.
    pub fn rat_box() -> Self {
        Self::open_box([-1.0, -1.0], [1.0, 1.0])
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            EnvKind::Line => 1,
            _ => 2,
        }
    }

    /// Ordered traversals. Triangle: AB, BC, CA, AC, CB, BA. T-maze: left, right.
    pub fn directions(&self) -> Vec<Direction> {
        match self.kind {
            EnvKind::Line => vec![Direction { start: 0, end: 1, waypoints: vec![self.endpoints[1].clone()] }],
            EnvKind::TMaze => (1..=2)
                .map(|arm| Direction {
                    start: 0,
                    end: arm,
                    waypoints: vec![Self::tmaze_junction(), self.endpoints[arm].clone()],
                })
                .collect(),
            EnvKind::Triangle => [(0, 1), (1, 2), (2, 0), (0, 2), (2, 1), (1, 0)]
                .iter()
                .map(|&(s, e)| Direction { start: s, end: e, waypoints: vec![self.endpoints[e].clone()] })
                .collect(),
            EnvKind::Box => Vec::new(),
        }
    }

    pub fn direction(&self, id: usize) -> Result<Direction> {
        self.directions()
            .into_iter()
            .nth(id)
            .ok_or_else(|| param(format!("direction {id} does not exist for {:?}", self.kind)))
    }

    pub fn side_length(&self) -> Option<f64> {
        self.bounds.as_ref().map(|(lo, hi)| (hi - lo).max())
    }
}

/// Piecewise-OU paths along every direction of `env`: the target switches through the
/// waypoints with the horizon split evenly. `p.mu` is ignored.
/// Output is direction-major, each path labelled with its direction index.
pub fn generate_task_paths(env: &EnvironmentSpec, p: &OuParams, n_per_direction: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let ndir = env.directions().len();
    if ndir == 0 {
        return Err(Error::UnsupportedEnvironment(format!("{:?} has no directed paths", env.kind)));
    }
    let mut out = Vec::with_capacity(ndir * n_per_direction);
    for di in 0..ndir {
        for i in 0..n_per_direction {
            out.push(task_path(env, di, p, derive_seed(seed, ((di as u64) << 32) | i as u64))?);
        }
    }
    Ok(out)
}

/// A single piecewise-OU path along direction `direction_id`.
pub fn task_path(env: &EnvironmentSpec, direction_id: usize, p: &OuParams, seed: u64) -> Result<Trajectory> {
    p.validate()?;
    if env.directions().is_empty() {
        return Err(Error::UnsupportedEnvironment(format!("{:?} has no directed paths", env.kind)));
    }
    let dir = env.direction(direction_id)?;
    let stepper = OuStepper { theta: p.theta, sigma_s: p.sigma_s, dt: p.dt, integrator: Integrator::EulerMaruyama };
    let d = env.dim();
    let start = &env.endpoints[dir.start];
    let legs = dir.waypoints.len();
    let mut rng = rng_from_seed(seed);
    let mut states = DMatrix::zeros(p.horizon, d);
    for j in 0..d {
        states[(0, j)] = start[j] + p.sigma_0 * normal(&mut rng);
    }
    let steps = p.horizon.saturating_sub(1).max(1);
    for k in 1..p.horizon {
        let leg = ((k - 1) * legs / steps).min(legs - 1);
        let target = &dir.waypoints[leg];
        for j in 0..d {
            states[(k, j)] = stepper.step(states[(k - 1, j)], target[j], &mut rng);
        }
    }
    Ok(Trajectory { dt: p.dt, states, label: Some(direction_id) })
}

/// Velocity-OU random walk with specular reflection at the walls.
/// `center_pull = 0` is the unbiased walk.
#[derive(Debug, Clone, PartialEq)]
pub struct RatWalkParams {
    pub dt: f64,
    pub horizon: usize,
    /// Velocity autocorrelation time.
    pub tau_v: f64,
    /// Stationary per-axis speed standard deviation.
    pub speed: f64,
    /// Spring constant pulling velocity towards the arena center.
    pub center_pull: f64,
}

impl RatWalkParams {
    pub fn unbiased() -> Self {
        RatWalkParams { dt: 0.02, horizon: 100, tau_v: 0.5, speed: 0.5, center_pull: 0.0 }
    }

    pub fn biased() -> Self {
        RatWalkParams { center_pull: 4.0, ..Self::unbiased() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.tau_v > 0.0) || !(self.speed >= 0.0) || !(self.center_pull >= 0.0) {
            return Err(param("rat walk needs dt > 0, tau_v > 0, speed >= 0, center_pull >= 0"));
        }
        if self.horizon < 1 {
            return Err(param("horizon must be >= 1"));
        }
        Ok(())
    }
}

fn reflect(mut x: f64, mut v: f64, lo: f64, hi: f64) -> (f64, f64) {
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
            v = -v;
        } else if x > hi {
            x = 2.0 * hi - x;
            v = -v;
        } else {
            return (x, v);
        }
    }
    (x.clamp(lo, hi), v)
}

/// Random walks starting uniformly inside the box of `env`.
pub fn generate_rat_walk(env: &EnvironmentSpec, p: &RatWalkParams, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    p.validate()?;
    let (lo, hi) = match (&env.kind, &env.bounds) {
        (EnvKind::Box, Some(b)) => b,
        _ => return Err(Error::UnsupportedEnvironment(format!("random walks need a bounded box, got {:?}", env.kind))),
    };
    if lo.len() != 2 || hi.len() != 2 || (0..2).any(|j| !(hi[j] > lo[j]) || !lo[j].is_finite() || !hi[j].is_finite()) {
        return Err(Error::UnsupportedEnvironment("box bounds must be finite with hi > lo".into()));
    }
    let center = (lo + hi) * 0.5;
    let kick = p.speed * libm::sqrt(2.0 * p.dt / p.tau_v);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed(seed, i as u64));
        let mut states = DMatrix::zeros(p.horizon, 2);
        let mut pos = [uniform(&mut rng, lo[0], hi[0]), uniform(&mut rng, lo[1], hi[1])];
        let mut vel = [p.speed * normal(&mut rng), p.speed * normal(&mut rng)];
        states[(0, 0)] = pos[0];
        states[(0, 1)] = pos[1];
        for k in 1..p.horizon {
            for j in 0..2 {
                let eta = normal(&mut rng);
                vel[j] += (-vel[j] / p.tau_v + p.center_pull * (center[j] - pos[j])) * p.dt + kick * eta;
                let (x, v) = reflect(pos[j] + vel[j] * p.dt, vel[j], lo[j], hi[j]);
                pos[j] = x;
                vel[j] = v;
                states[(k, j)] = x;
            }
        }
        out.push(Trajectory { dt: p.dt, states, label: None });
    }
    Ok(out)
}

/// Forward-difference velocities `(s[k+1] - s[k]) / dt`; the last row repeats the one before.
pub fn velocities(traj: &Trajectory) -> Result<DMatrix<f64>> {
    let t = traj.len();
    if t < 2 {
        return Err(shape("velocities need at least 2 rows"));
    }
    let d = traj.dim();
    let mut v = DMatrix::zeros(t, d);
    for k in 0..t - 1 {
        for j in 0..d {
            v[(k, j)] = (traj.states[(k + 1, j)] - traj.states[(k, j)]) / traj.dt;
        }
    }
    for j in 0..d {
        v[(t - 1, j)] = v[(t - 2, j)];
    }
    Ok(v)
}
