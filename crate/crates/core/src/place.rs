//! Gaussian place cells: encode 2D positions, decode activity back to positions.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{param, shape, Error, Result};
use crate::process::{EnvKind, EnvironmentSpec};
use crate::rng::{rng_from_seed, uniform};

pub const DEFAULT_CELLS: usize = 512;
pub const DECODE_TOP_K: usize = 3;
pub const REFINE_ITERS: usize = 200;
/// First trial fraction of the Gauss-Newton step.
pub const REFINE_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceCellMap {
    /// N x 2
    pub centers: DMatrix<f64>,
    pub width: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl PlaceCellMap {
    /// `n_cells` centers uniform in the box, width `0.1 * side`.
    pub fn random(env: &EnvironmentSpec, n_cells: usize, seed: u64) -> Result<Self> {
        let (lo, hi) = match (&env.kind, &env.bounds) {
            (EnvKind::Box, Some((lo, hi))) if lo.len() == 2 => ([lo[0], lo[1]], [hi[0], hi[1]]),
            _ => return Err(Error::UnsupportedEnvironment(format!("place cells need a 2D box, got {:?}", env.kind))),
        };
        if n_cells == 0 {
            return Err(param("need at least one place cell"));
        }
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let mut rng = rng_from_seed(seed);
        let mut centers = DMatrix::zeros(n_cells, 2);
        for i in 0..n_cells {
            centers[(i, 0)] = uniform(&mut rng, lo[0], hi[0]);
            centers[(i, 1)] = uniform(&mut rng, lo[1], hi[1]);
        }
        let map = PlaceCellMap { centers, width: 0.1 * side, lo, hi };
        map.validate()?;
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.ncols() != 2 {
            return Err(shape("centers must be N x 2"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(param("place field width must be > 0"));
        }
        if !(self.hi[0] > self.lo[0] && self.hi[1] > self.lo[1]) {
            return Err(param("box bounds must satisfy hi > lo"));
        }
        Ok(())
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0].clamp(self.lo[0], self.hi[0]), p[1].clamp(self.lo[1], self.hi[1])]
    }

    pub fn encode_point(&self, p: [f64; 2]) -> DVector<f64> {
        let inv = 1.0 / (2.0 * self.width * self.width);
        DVector::from_fn(self.len(), |i, _| {
            let dx = p[0] - self.centers[(i, 0)];
            let dy = p[1] - self.centers[(i, 1)];
            libm::exp(-(dx * dx + dy * dy) * inv)
        })
    }

    fn energy(&self, a: &DVector<f64>, p: [f64; 2]) -> f64 {
        (a - self.encode_point(p)).norm_squared()
    }

    /// Gradient of the energy and the Gauss-Newton matrix `J^T J` of the code.
    fn energy_grad(&self, a: &DVector<f64>, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let e = self.encode_point(p);
        let w2 = self.width * self.width;
        let mut g = [0.0; 2];
        let mut jtj = [[0.0; 2]; 2];
        for i in 0..self.len() {
            // d e_i / d p = e_i (c_i - p) / w^2
            let j = [e[i] * (self.centers[(i, 0)] - p[0]) / w2, e[i] * (self.centers[(i, 1)] - p[1]) / w2];
            let r = a[i] - e[i];
            g[0] -= 2.0 * r * j[0];
            g[1] -= 2.0 * r * j[1];
            for u in 0..2 {
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        (g, jtj)
    }
}

/// T x 2 positions to T x N activities.
pub fn encode(map: &PlaceCellMap, positions: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if positions.ncols() != 2 {
        return Err(shape(format!("positions must be T x 2, got {:?}", positions.shape())));
    }
    let mut out = DMatrix::zeros(positions.nrows(), map.len());
    for t in 0..positions.nrows() {
        let a = map.encode_point([positions[(t, 0)], positions[(t, 1)]]);
        out.row_mut(t).copy_from(&a.transpose());
    }
    Ok(out)
}

fn check_activity(map: &PlaceCellMap, a: &DVector<f64>) -> Result<()> {
    if a.len() != map.len() {
        return Err(shape(format!("activity has {} entries, map has {} cells", a.len(), map.len())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(param("activity must be finite"));
    }
    Ok(())
}

/// Mean center of the three most active cells; ties go to the lower index.
pub fn decode_init(map: &PlaceCellMap, a: &DVector<f64>) -> Result<[f64; 2]> {
    check_activity(map, a)?;
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));
    let k = DECODE_TOP_K.min(order.len());
    let mut p = [0.0; 2];
    for &i in &order[..k] {
        p[0] += map.centers[(i, 0)];
        p[1] += map.centers[(i, 1)];
    }
    Ok([p[0] / k as f64, p[1] / k as f64])
}

/// Descent on `|a - encode(p)|^2` along the gradient preconditioned by the Gauss-Newton
/// matrix. Each iteration tries `step` times the Gauss-Newton step and halves it until
/// the energy drops; the iterate is clamped to the box. The energy never increases.
pub fn decode_refine(map: &PlaceCellMap, a: &DVector<f64>, init: [f64; 2], iters: usize, step: f64) -> Result<[f64; 2]> {
    check_activity(map, a)?;
    if !(step > 0.0) {
        return Err(param("step must be > 0"));
    }
    let mut p = map.clamp(init);
    let mut e = map.energy(a, p);
    for _ in 0..iters {
        let (g, h) = map.energy_grad(a, p);
        if g[0] == 0.0 && g[1] == 0.0 {
            break;
        }
        // (J^T J + eps I)^{-1} g / 2, falling back to plain gradient when J^T J is singular
        let ridge = 1e-12 * (h[0][0] + h[1][1]).max(1e-300);
        let (h00, h11, h01) = (h[0][0] + ridge, h[1][1] + ridge, h[0][1]);
        let det = h00 * h11 - h01 * h01;
        let dir = if det > 0.0 && det.is_finite() {
            [0.5 * (h11 * g[0] - h01 * g[1]) / det, 0.5 * (h00 * g[1] - h01 * g[0]) / det]
        } else {
            g
        };
        let mut eta = step;
        let mut moved = false;
        for _ in 0..50 {
            let q = map.clamp([p[0] - eta * dir[0], p[1] - eta * dir[1]]);
            let eq = map.energy(a, q);
            if eq < e {
                p = q;
                e = eq;
                moved = true;
                break;
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(p)
}

pub fn decode(map: &PlaceCellMap, a: &DVector<f64>) -> Result<[f64; 2]> {
    let init = decode_init(map, a)?;
    decode_refine(map, a, init, REFINE_ITERS, REFINE_STEP)
}

/// Decodes every row of a T x N activity matrix.
pub fn decode_trajectory(map: &PlaceCellMap, activity: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(activity.nrows(), 2);
    for t in 0..activity.nrows() {
        let p = decode(map, &activity.row(t).transpose())?;
        out[(t, 0)] = p[0];
        out[(t, 1)] = p[1];
    }
    Ok(out)
}
