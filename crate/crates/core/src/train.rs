//! Backpropagation through time with Adam and masked-input curricula.
//!
//! Noise is sampled once per batch from a seed and held fixed, so the loss is a
//! deterministic function of the parameters and its gradient is the pathwise gradient.
//! One epoch is one Adam step on a freshly sampled batch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{param, shape, Error, Result};
use crate::linalg::pseudo_inverse;
use crate::place::{encode, PlaceCellMap};
use crate::process::{generate_rat_walk, task_path, velocities, EnvironmentSpec, OuParams, RatWalkParams};
use crate::rng::{derive_seed, normal_matrix, rng_from_seed};
use crate::rnn::{tag_vector, NetSpec, RnnParams, TagSpec, DIVERGENCE_NORM};

/// One training path before masking.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPath {
    /// T x m
    pub inputs: DMatrix<f64>,
    /// T x d
    pub targets: DMatrix<f64>,
    /// Direction index for tagged tasks.
    pub direction: Option<usize>,
}

/// Source of training paths.
pub trait PathTask {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Environment whose directions the tags refer to, if any.
    fn tagged_env(&self) -> Option<&EnvironmentSpec>;
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<TaskPath>>;
}

/// Velocity in, position out, on a maze with directed paths.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeTask {
    pub env: EnvironmentSpec,
    pub ou: OuParams,
}

impl PathTask for MazeTask {
    fn input_dim(&self) -> usize {
        self.env.dim()
    }
    fn output_dim(&self) -> usize {
        self.env.dim()
    }
    fn tagged_env(&self) -> Option<&EnvironmentSpec> {
        Some(&self.env)
    }
    /// Directions cycle through the batch so every batch is balanced.
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<TaskPath>> {
        let ndir = self.env.directions().len();
        if ndir == 0 {
            return Err(Error::UnsupportedEnvironment(format!("{:?} has no directed paths", self.env.kind)));
        }
        (0..n)
            .map(|b| {
                let dir = b % ndir;
                let path = task_path(&self.env, dir, &self.ou, derive_seed(seed, b as u64))?;
                Ok(TaskPath { inputs: velocities(&path)?, targets: path.states, direction: Some(dir) })
            })
            .collect()
    }
}

/// Velocity in, place-cell activity out, for random walks in a box.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceTask {
    pub env: EnvironmentSpec,
    pub walk: RatWalkParams,
    pub map: PlaceCellMap,
}

impl PathTask for PlaceTask {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        self.map.len()
    }
    fn tagged_env(&self) -> Option<&EnvironmentSpec> {
        None
    }
    fn sample(&self, n: usize, seed: u64) -> Result<Vec<TaskPath>> {
        generate_rat_walk(&self.env, &self.walk, n, seed)?
            .into_iter()
            .map(|p| Ok(TaskPath { inputs: velocities(&p)?, targets: encode(&self.map, &p.states)?, direction: None }))
            .collect()
    }
}

/// Keeps input row `t` iff `t % k == 0`; other rows become zero.
pub fn mask_inputs(inputs: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(param("mask period k must be >= 1"));
    }
    let mut out = inputs.clone();
    for t in 0..out.nrows() {
        if t % k != 0 {
            out.row_mut(t).fill(0.0);
        }
    }
    Ok(out)
}

/// A masked path with its initial hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub init: DVector<f64>,
}

/// Builds samples for the current parameters: `r0 = D^+ s(0) + tag`.
pub fn prepare_batch(params: &RnnParams, paths: &[TaskPath], env: Option<&EnvironmentSpec>, tags: &TagSpec, k: usize) -> Result<Vec<Sample>> {
    let d_pinv = pseudo_inverse(&params.d_out);
    let mut tag_cache: Vec<Option<DVector<f64>>> = Vec::new();
    paths
        .iter()
        .map(|p| {
            let mut init = &d_pinv * p.targets.row(0).transpose();
            if let (Some(env), Some(dir)) = (env, p.direction) {
                if tag_cache.len() <= dir {
                    tag_cache.resize(dir + 1, None);
                }
                if tag_cache[dir].is_none() {
                    tag_cache[dir] = Some(tag_vector(&params.d_out, &d_pinv, env, dir, tags)?);
                }
                init += tag_cache[dir].as_ref().expect("filled above");
            }
            Ok(Sample { inputs: mask_inputs(&p.inputs, k)?, targets: p.targets.clone(), init })
        })
        .collect()
}

/// Gradients with the same shapes as [`RnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w_rec: DMatrix<f64>,
    pub w_in: DMatrix<f64>,
    pub d_out: DMatrix<f64>,
    pub kappa: f64,
}

impl Grads {
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.w_rec.norm_squared() + self.w_in.norm_squared() + self.d_out.norm_squared() + self.kappa * self.kappa)
    }

    fn is_finite(&self) -> bool {
        self.kappa.is_finite() && [&self.w_rec, &self.w_in, &self.d_out].iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    fn scale(&mut self, s: f64) {
        self.w_rec *= s;
        self.w_in *= s;
        self.d_out *= s;
        self.kappa *= s;
    }
}

/// Per-step noise matrices (n x B), `sigma_r * N(0, 1)`, drawn in step order.
pub fn training_noise(noise_seed: u64, steps: usize, n: usize, batch: usize, sigma_r: f64) -> Vec<DMatrix<f64>> {
    let mut rng = rng_from_seed(noise_seed);
    (0..steps).map(|_| normal_matrix(&mut rng, n, batch) * sigma_r).collect()
}

struct Stacked {
    horizon: usize,
    inputs: Vec<DMatrix<f64>>,
    targets: Vec<DMatrix<f64>>,
    init: DMatrix<f64>,
}

fn stack(params: &RnnParams, batch: &[Sample]) -> Result<Stacked> {
    let b = batch.len();
    if b == 0 {
        return Err(param("empty batch"));
    }
    let (n, m, d) = (params.hidden_size(), params.input_size(), params.output_size());
    let horizon = batch[0].targets.nrows();
    if horizon < 1 {
        return Err(shape("paths need at least one row"));
    }
    for s in batch {
        if s.targets.shape() != (horizon, d) || s.inputs.shape() != (horizon, m) || s.init.len() != n {
            return Err(shape(format!(
                "sample shapes inputs {:?}, targets {:?}, init {} do not match T={horizon}, m={m}, d={d}, n={n}",
                s.inputs.shape(),
                s.targets.shape(),
                s.init.len()
            )));
        }
    }
    let inputs = (0..horizon).map(|t| DMatrix::from_fn(m, b, |i, j| batch[j].inputs[(t, i)])).collect();
    let targets = (0..horizon).map(|t| DMatrix::from_fn(d, b, |i, j| batch[j].targets[(t, i)])).collect();
    let init = DMatrix::from_fn(n, b, |i, j| batch[j].init[i]);
    Ok(Stacked { horizon, inputs, targets, init })
}

struct Forward {
    hidden: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    loss: f64,
}

fn forward(params: &RnnParams, st: &Stacked, noise: &[DMatrix<f64>]) -> Result<Forward> {
    let act = params.activation;
    let kappa = params.effective_kappa();
    let mut hidden = Vec::with_capacity(st.horizon);
    let mut pre = Vec::with_capacity(st.horizon.saturating_sub(1));
    hidden.push(st.init.clone());
    for t in 0..st.horizon - 1 {
        let r = &hidden[t];
        let z = &params.w_rec * r + &params.w_in * &st.inputs[t] + &noise[t];
        let mut next = r * kappa;
        next.zip_apply(&z, |x, zi| *x += act.apply(zi));
        if next.iter().any(|x| !x.is_finite()) || next.column_iter().any(|c| c.norm() > DIVERGENCE_NORM) {
            return Err(Error::Divergence { step: t + 1 });
        }
        pre.push(z);
        hidden.push(next);
    }
    let b = st.init.ncols();
    let denom = (b * st.horizon * params.output_size()) as f64;
    let loss = hidden.iter().zip(&st.targets).map(|(r, s)| (&params.d_out * r - s).norm_squared()).sum::<f64>() / denom;
    Ok(Forward { hidden, pre, loss })
}

/// Mean squared error over all time steps and output units, averaged over the batch.
pub fn forward_loss(params: &RnnParams, batch: &[Sample], noise_seed: u64) -> Result<f64> {
    params.validate()?;
    let st = stack(params, batch)?;
    let noise = training_noise(noise_seed, st.horizon - 1, params.hidden_size(), batch.len(), params.sigma_r);
    Ok(forward(params, &st, &noise)?.loss)
}

/// Exact gradient of [`forward_loss`] with respect to all parameters.
pub fn bptt_grads(params: &RnnParams, batch: &[Sample], noise_seed: u64) -> Result<(Grads, f64)> {
    params.validate()?;
    let st = stack(params, batch)?;
    let (n, b) = (params.hidden_size(), batch.len());
    let noise = training_noise(noise_seed, st.horizon - 1, n, b, params.sigma_r);
    let fw = forward(params, &st, &noise)?;
    let act = params.activation;
    let kappa = params.effective_kappa();
    let scale = 2.0 / (b * st.horizon * params.output_size()) as f64;
    let d_t = params.d_out.transpose();
    let w_t = params.w_rec.transpose();

    let mut g = Grads {
        w_rec: DMatrix::zeros(n, n),
        w_in: DMatrix::zeros(n, params.input_size()),
        d_out: DMatrix::zeros(params.output_size(), n),
        kappa: 0.0,
    };
    let mut carry = DMatrix::zeros(n, b);
    for t in (0..st.horizon).rev() {
        let r = &fw.hidden[t];
        let err = (&params.d_out * r - &st.targets[t]) * scale;
        g.d_out += &err * r.transpose();
        let total = carry + &d_t * &err;
        if t == 0 {
            break;
        }
        let prev = &fw.hidden[t - 1];
        let delta = total.zip_map(&fw.pre[t - 1], |gi, zi| gi * act.derivative(zi));
        g.w_rec += &delta * prev.transpose();
        g.w_in += &delta * st.inputs[t - 1].transpose();
        if params.leak_enabled {
            g.kappa += total.dot(prev);
        }
        carry = &total * kappa + &w_t * &delta;
    }
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok((g, fw.loss))
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
        }
    }
}

fn flatten_params(p: &RnnParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.w_rec.len() + p.w_in.len() + p.d_out.len() + 1);
    out.extend_from_slice(p.w_rec.as_slice());
    out.extend_from_slice(p.w_in.as_slice());
    out.extend_from_slice(p.d_out.as_slice());
    out.push(p.kappa);
    out
}

fn flatten_grads(g: &Grads) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.w_rec.len() + g.w_in.len() + g.d_out.len() + 1);
    out.extend_from_slice(g.w_rec.as_slice());
    out.extend_from_slice(g.w_in.as_slice());
    out.extend_from_slice(g.d_out.as_slice());
    out.push(g.kappa);
    out
}

fn unflatten_into(p: &mut RnnParams, flat: &[f64]) {
    let (a, b, c) = (p.w_rec.len(), p.w_in.len(), p.d_out.len());
    p.w_rec.as_mut_slice().copy_from_slice(&flat[..a]);
    p.w_in.as_mut_slice().copy_from_slice(&flat[a..a + b]);
    p.d_out.as_mut_slice().copy_from_slice(&flat[a + b..a + b + c]);
    p.kappa = flat[a + b + c];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub k: usize,
    pub epochs: usize,
}

fn scaled(epochs: usize, scale: f64) -> usize {
    (libm::round(epochs as f64 * scale) as usize).max(1)
}

/// Triangle: 20000 epochs unmasked, then 5000 each at k = 2 and 3.
pub fn triangle_curriculum(scale: f64) -> Vec<Stage> {
    vec![
        Stage { k: 1, epochs: scaled(20_000, scale) },
        Stage { k: 2, epochs: scaled(5_000, scale) },
        Stage { k: 3, epochs: scaled(5_000, scale) },
    ]
}

/// T-maze: 12000 epochs unmasked, then 5000 each at k = 2 and 3.
pub fn tmaze_curriculum(scale: f64) -> Vec<Stage> {
    vec![
        Stage { k: 1, epochs: scaled(12_000, scale) },
        Stage { k: 2, epochs: scaled(5_000, scale) },
        Stage { k: 3, epochs: scaled(5_000, scale) },
    ]
}

/// 12000 epochs unmasked, then 5000 per mask period up to `k_final`.
pub fn stepped_curriculum(k_final: usize, scale: f64) -> Vec<Stage> {
    let mut out = vec![Stage { k: 1, epochs: scaled(12_000, scale) }];
    out.extend((2..=k_final).map(|k| Stage { k, epochs: scaled(5_000, scale) }));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub curriculum: Vec<Stage>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub tags: TagSpec,
}

impl TrainConfig {
    pub fn new(curriculum: Vec<Stage>, seed: u64) -> Self {
        TrainConfig { curriculum, batch_size: 64, learning_rate: 1e-3, grad_clip: 1.0, seed, tags: TagSpec::new(seed) }
    }

    pub fn total_epochs(&self) -> usize {
        self.curriculum.iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.curriculum.is_empty() || self.curriculum.iter().any(|s| s.k == 0) {
            return Err(param("curriculum needs at least one stage and every k >= 1"));
        }
        if self.batch_size == 0 {
            return Err(param("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(param("learning_rate and grad_clip must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEntry {
    pub epoch: usize,
    pub k: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossLog {
    pub entries: Vec<LossEntry>,
}

impl LossLog {
    /// Mean loss over the last `window` epochs trained at mask period `k`.
    pub fn final_loss(&self, k: usize, window: usize) -> Option<f64> {
        let at_k: Vec<f64> = self.entries.iter().filter(|e| e.k == k).map(|e| e.loss).collect();
        if at_k.is_empty() || window == 0 {
            return None;
        }
        let tail = &at_k[at_k.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Trains a fresh network on `task` through the curriculum.
pub fn train(task: &dyn PathTask, net: &NetSpec, cfg: &TrainConfig) -> Result<(RnnParams, LossLog)> {
    let init = RnnParams::init(net, task.input_dim(), task.output_dim(), derive_seed(cfg.seed, 0x1417))?;
    train_from(task, init, cfg)
}

/// Continues training from given parameters.
pub fn train_from(task: &dyn PathTask, mut params: RnnParams, cfg: &TrainConfig) -> Result<(RnnParams, LossLog)> {
    cfg.validate()?;
    params.validate()?;
    if params.input_size() != task.input_dim() || params.output_size() != task.output_dim() {
        return Err(shape("network sizes do not match the task"));
    }
    let mut flat = flatten_params(&params);
    let mut adam = Adam::new(cfg.learning_rate, flat.len());
    let mut log = LossLog::default();
    let mut epoch = 0usize;
    for stage in &cfg.curriculum {
        for _ in 0..stage.epochs {
            let paths = task.sample(cfg.batch_size, derive_seed(cfg.seed, 2 * epoch as u64))?;
            let batch = prepare_batch(&params, &paths, task.tagged_env(), &cfg.tags, stage.k)?;
            let (mut g, loss) = match bptt_grads(&params, &batch, derive_seed(cfg.seed, 2 * epoch as u64 + 1)) {
                Ok(v) => v,
                Err(Error::Divergence { .. }) | Err(Error::NonFiniteGradient) => return Err(Error::TrainingDiverged { epoch }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            log.entries.push(LossEntry { epoch, k: stage.k, loss });
            if !params.leak_enabled || (params.kappa <= 0.0 && g.kappa > 0.0) || (params.kappa >= 1.0 && g.kappa < 0.0) {
                g.kappa = 0.0;
            }
            let norm = g.norm();
            if norm > cfg.grad_clip {
                g.scale(cfg.grad_clip / norm);
            }
            adam.step(&mut flat, &flatten_grads(&g));
            let last = flat.len() - 1;
            flat[last] = flat[last].clamp(0.0, 1.0);
            unflatten_into(&mut params, &flat);
            epoch += 1;
        }
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::Activation;

    #[test]
    fn mask_keeps_multiples_of_k() {
        let u = DMatrix::from_element(7, 2, 1.0);
        let m = mask_inputs(&u, 3).unwrap();
        let kept: Vec<usize> = (0..7).filter(|&t| m[(t, 0)] != 0.0).collect();
        assert_eq!(kept, vec![0, 3, 6]);
        assert_eq!(mask_inputs(&u, 1).unwrap(), u);
        assert!(mask_inputs(&u, 0).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(0.1, 2);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 0.9).abs() < 1e-7, "{p:?}");
    }

    #[test]
    fn curricula_scale_epochs() {
        let c = tmaze_curriculum(0.1);
        assert_eq!(c.iter().map(|s| (s.k, s.epochs)).collect::<Vec<_>>(), vec![(1, 1200), (2, 500), (3, 500)]);
        assert_eq!(stepped_curriculum(6, 1.0).len(), 6);
    }

    #[test]
    fn short_training_reduces_loss() {
        let task = MazeTask { env: EnvironmentSpec::tmaze(), ou: OuParams { horizon: 30, mu: DVector::zeros(2), ..OuParams::reference_1d() } };
        let mut net = NetSpec::new(10, 0.05, true);
        net.activation = Activation::leaky();
        let cfg = TrainConfig { batch_size: 16, learning_rate: 1e-2, ..TrainConfig::new(vec![Stage { k: 1, epochs: 150 }], 3) };
        let (p, log) = train(&task, &net, &cfg).unwrap();
        let first = log.entries[..10].iter().map(|e| e.loss).sum::<f64>();
        let last = log.entries[140..].iter().map(|e| e.loss).sum::<f64>();
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert!((0.0..=1.0).contains(&p.kappa));
    }
}
