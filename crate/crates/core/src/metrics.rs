//! Replay statistics: distribution distances and per-path behaviour.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{param, shape, Error, Result};
use crate::linalg::{max_asymmetry, mean_cov, sym_eigenvalues, sym_sqrt};
use crate::process::{EnvironmentSpec, Trajectory};
use crate::rng::{normal_vector, rng_from_seed};

/// Diagonal ridge added to fitted covariances.
pub const COV_RIDGE: f64 = 1e-9;
pub const REACH_FRACTION: f64 = 0.1;
pub const MIN_DWELL: usize = 10;

fn check_sym(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(shape(format!("{what} must be square")));
    }
    let tol = 1e-8 * m.amax().max(1.0);
    if max_asymmetry(m) > tol {
        return Err(param(format!("{what} is not symmetric")));
    }
    Ok(())
}

/// 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let n = mu1.len();
    if mu2.len() != n || cov1.shape() != (n, n) || cov2.shape() != (n, n) {
        return Err(shape("means and covariances must share a dimension"));
    }
    check_sym(cov1, "cov1")?;
    check_sym(cov2, "cov2")?;
    let s2 = sym_sqrt(cov2)?;
    let inner = &s2 * cov1 * &s2;
    let cross: f64 = sym_eigenvalues(&inner).iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    let sq = (mu1 - mu2).norm_squared() + cov1.trace() + cov2.trace() - 2.0 * cross;
    Ok(libm::sqrt(sq.max(0.0)))
}

/// Exact W2 between two 1D empirical measures: integrates the squared gap between their
/// step quantile functions over the merged breakpoints `i/N` and `j/M`.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("W2 needs non-empty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut acc = 0.0;
    while i < n && j < m {
        // next breakpoints, compared exactly in integers: (i+1)/n vs (j+1)/m
        let lhs = (i + 1) as u128 * m as u128;
        let rhs = (j + 1) as u128 * n as u128;
        let next = if lhs <= rhs { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        let gap = x[i] - y[j];
        acc += (next - prev) * gap * gap;
        prev = next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    Ok(libm::sqrt(acc.max(0.0)))
}

/// Mean over `n_proj` random unit directions of the 1D W2 between projected rows.
pub fn sliced_wd(a: &DMatrix<f64>, b: &DMatrix<f64>, n_proj: usize, seed: u64) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(shape(format!("sample dimensions differ: {} vs {}", a.ncols(), b.ncols())));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InsufficientData("sliced distance needs non-empty samples".into()));
    }
    if n_proj == 0 {
        return Err(param("n_proj must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    for _ in 0..n_proj {
        let mut dir = normal_vector(&mut rng, a.ncols());
        let norm = dir.norm();
        if norm > 0.0 {
            dir /= norm;
        }
        let pa = a * &dir;
        let pb = b * &dir;
        total += w2_1d(pa.as_slice(), pb.as_slice())?;
    }
    Ok(total / n_proj as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// Average over directions of the Gaussian W2 between fitted path distributions.
    PerDirectionGaussian,
    Sliced { n_proj: usize, seed: u64 },
}

fn stack_paths(trajs: &[&Trajectory]) -> Result<DMatrix<f64>> {
    let first = trajs.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    let width = first.states.len();
    let mut out = DMatrix::zeros(trajs.len(), width);
    for (i, t) in trajs.iter().enumerate() {
        if t.states.len() != width || t.dim() != first.dim() {
            return Err(shape("trajectories must share length and dimension"));
        }
        for (j, x) in t.flatten().into_iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    Ok(out)
}

/// Distance between awake and replay path distributions, on row-major flattened paths.
pub fn trajectory_distribution_distance(awake: &[Trajectory], replay: &[Trajectory], mode: DistanceMode) -> Result<f64> {
    match mode {
        DistanceMode::Sliced { n_proj, seed } => {
            let a = stack_paths(&awake.iter().collect::<Vec<_>>())?;
            let b = stack_paths(&replay.iter().collect::<Vec<_>>())?;
            sliced_wd(&a, &b, n_proj, seed)
        }
        DistanceMode::PerDirectionGaussian => {
            let mut labels: Vec<usize> = awake.iter().map(|t| t.label.unwrap_or(0)).collect();
            labels.sort_unstable();
            labels.dedup();
            if labels.is_empty() {
                return Err(Error::InsufficientData("no awake trajectories".into()));
            }
            let mut total = 0.0;
            for &l in &labels {
                let aw: Vec<&Trajectory> = awake.iter().filter(|t| t.label.unwrap_or(0) == l).collect();
                let rp: Vec<&Trajectory> = replay.iter().filter(|t| t.label.unwrap_or(0) == l).collect();
                if aw.len() < 2 || rp.len() < 2 {
                    return Err(Error::InsufficientData(format!(
                        "direction {l} has {} awake and {} replay paths; need at least 2 of each",
                        aw.len(),
                        rp.len()
                    )));
                }
                let (m1, c1) = mean_cov(&stack_paths(&aw)?, COV_RIDGE)?;
                let (m2, c2) = mean_cov(&stack_paths(&rp)?, COV_RIDGE)?;
                if m1.len() != m2.len() {
                    return Err(shape("awake and replay paths differ in length"));
                }
                total += gaussian_w2(&m1, &c1, &m2, &c2)?;
            }
            Ok(total / labels.len() as f64)
        }
    }
}

/// First step `t` with `|s(t) - end| <= frac * |end - start|`.
pub fn reach_time(traj: &Trajectory, start: &DVector<f64>, end: &DVector<f64>, frac: f64) -> Result<Option<usize>> {
    if start.len() != traj.dim() || end.len() != traj.dim() {
        return Err(shape("start and end must match the trajectory dimension"));
    }
    let span = (end - start).norm();
    if !(span > 0.0) {
        return Err(param("start and end must differ"));
    }
    let tol = frac * span;
    Ok((0..traj.len()).find(|&t| (traj.state(t) - end).norm() <= tol))
}

/// Sum of step lengths.
pub fn path_length(traj: &Trajectory) -> f64 {
    (1..traj.len()).map(|t| (traj.states.row(t) - traj.states.row(t - 1)).norm()).sum()
}

fn nearest(point: &DVector<f64>, endpoints: &[DVector<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in endpoints.iter().enumerate() {
        let d = (point - e).norm_squared();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Counts visits: each step belongs to its nearest endpoint, runs of at least `min_dwell`
/// steps qualify, and consecutive qualifying runs in the same region are one visit.
pub fn regions_visited(traj: &Trajectory, endpoints: &[DVector<f64>], min_dwell: usize) -> Result<usize> {
    if endpoints.is_empty() {
        return Err(param("need at least one endpoint"));
    }
    if endpoints.iter().any(|e| e.len() != traj.dim()) {
        return Err(shape("endpoints must match the trajectory dimension"));
    }
    let regions: Vec<usize> = (0..traj.len()).map(|t| nearest(&traj.state(t), endpoints)).collect();
    let mut visits = 0;
    let mut last_counted: Option<usize> = None;
    let mut t = 0;
    while t < regions.len() {
        let region = regions[t];
        let mut end = t;
        while end < regions.len() && regions[end] == region {
            end += 1;
        }
        if end - t >= min_dwell {
            if last_counted != Some(region) {
                visits += 1;
            }
            last_counted = Some(region);
        }
        t = end;
    }
    Ok(visits)
}

/// Mean distance from the start, `E|s(t) - s(0)|`, and the across-path variance averaged
/// over coordinates (population variance), per step.
pub fn displacement_and_variance(trajs: &[Trajectory]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = trajs.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    let (t_len, d) = (first.len(), first.dim());
    if trajs.iter().any(|t| t.len() != t_len || t.dim() != d) {
        return Err(shape("trajectories must share length and dimension"));
    }
    let n = trajs.len() as f64;
    let mut disp = vec![0.0; t_len];
    let mut var = vec![0.0; t_len];
    for t in 0..t_len {
        let mut mean = DVector::zeros(d);
        for tr in trajs {
            disp[t] += (tr.states.row(t) - tr.states.row(0)).norm();
            mean += tr.states.row(t).transpose();
        }
        disp[t] /= n;
        mean /= n;
        let mut v = 0.0;
        for tr in trajs {
            v += (tr.states.row(t).transpose() - &mean).norm_squared();
        }
        var[t] = v / (n * d as f64);
    }
    Ok((disp, var))
}

/// Reach times with unreached paths censored at `horizon`.
pub fn censored(times: &[Option<usize>], horizon: usize) -> Vec<f64> {
    times.iter().map(|t| t.unwrap_or(horizon) as f64).collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// `100 * (value - reference) / reference`.
pub fn percent_change(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Reach time of every labelled path towards the end of its direction.
pub fn direction_reach_times(trajs: &[Trajectory], env: &EnvironmentSpec, frac: f64) -> Result<Vec<Option<usize>>> {
    let dirs = env.directions();
    trajs
        .iter()
        .map(|t| {
            let dir = dirs
                .get(t.label.unwrap_or(0))
                .ok_or_else(|| param(format!("label {:?} is not a direction of {:?}", t.label, env.kind)))?;
            reach_time(t, &env.endpoints[dir.start], &env.endpoints[dir.end], frac)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    /// Per-direction median of censored reach times, averaged over directions.
    pub median_reach: f64,
    /// Per-direction mean of censored reach times, averaged over directions.
    pub mean_reach: f64,
    pub reached_fraction: f64,
    pub mean_path_length: f64,
    pub mean_regions: f64,
}

/// Censored reach times grouped by direction label; directions without paths are empty.
fn reach_by_direction(trajs: &[Trajectory], env: &EnvironmentSpec) -> Result<Vec<Vec<f64>>> {
    let horizon = trajs.first().map(Trajectory::len).unwrap_or(0);
    let times = direction_reach_times(trajs, env, REACH_FRACTION)?;
    let mut by_dir: Vec<Vec<f64>> = vec![Vec::new(); env.directions().len()];
    for (t, c) in trajs.iter().zip(censored(&times, horizon)) {
        by_dir[t.label.unwrap_or(0)].push(c);
    }
    Ok(by_dir)
}

/// Per-direction `(median, mean)` censored reach times.
pub fn direction_reach_stats(trajs: &[Trajectory], env: &EnvironmentSpec) -> Result<Vec<Option<(f64, f64)>>> {
    Ok(reach_by_direction(trajs, env)?
        .iter()
        .map(|v| median(v).zip(mean(v)))
        .collect())
}

/// `(median, mean)` reach-time %-change against awake paths, computed per direction and
/// averaged over directions present in both sets.
pub fn reach_change_vs_awake(replay: &[Trajectory], awake: &[Trajectory], env: &EnvironmentSpec) -> Result<(f64, f64)> {
    let r = direction_reach_stats(replay, env)?;
    let a = direction_reach_stats(awake, env)?;
    let pairs: Vec<((f64, f64), (f64, f64))> = r.iter().zip(&a).filter_map(|(x, y)| x.zip(*y)).collect();
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no direction has both awake and replay paths".into()));
    }
    let med: Vec<f64> = pairs.iter().map(|(x, y)| percent_change(x.0, y.0)).collect();
    let avg: Vec<f64> = pairs.iter().map(|(x, y)| percent_change(x.1, y.1)).collect();
    Ok((mean(&med).unwrap_or(f64::NAN), mean(&avg).unwrap_or(f64::NAN)))
}

/// Summary statistics for replay on a maze with directed paths.
pub fn summarize_paths(trajs: &[Trajectory], env: &EnvironmentSpec) -> Result<PathSummary> {
    if trajs.is_empty() {
        return Err(Error::InsufficientData("no trajectories to summarize".into()));
    }
    let times = direction_reach_times(trajs, env, REACH_FRACTION)?;
    let stats: Vec<(f64, f64)> = direction_reach_stats(trajs, env)?.into_iter().flatten().collect();
    let medians: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let lengths: Vec<f64> = trajs.iter().map(path_length).collect();
    let regions = trajs
        .iter()
        .map(|t| regions_visited(t, &env.endpoints, MIN_DWELL).map(|v| v as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(PathSummary {
        median_reach: mean(&medians).unwrap_or(f64::NAN),
        mean_reach: mean(&means).unwrap_or(f64::NAN),
        reached_fraction: times.iter().filter(|t| t.is_some()).count() as f64 / times.len() as f64,
        mean_path_length: mean(&lengths).unwrap_or(f64::NAN),
        mean_regions: mean(&regions).unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Trajectory {
        Trajectory { dt: 1.0, states: DMatrix::from_column_slice(points.len(), 1, points), label: None }
    }

    #[test]
    fn gaussian_w2_of_shifted_means() {
        let c = DMatrix::identity(2, 2);
        let w = gaussian_w2(&DVector::from_vec(vec![0.0, 0.0]), &c, &DVector::from_vec(vec![3.0, 4.0]), &c).unwrap();
        assert!((w - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_w2_rejects_asymmetric() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let z = DVector::zeros(2);
        assert!(gaussian_w2(&z, &bad, &z, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn w2_1d_unequal_sizes() {
        // {0, 1} vs {0}: half the mass moves by 1
        let w = w2_1d(&[0.0, 1.0], &[0.0]).unwrap();
        assert!((w - libm::sqrt(0.5)).abs() < 1e-15);
    }

    #[test]
    fn reach_and_length() {
        let t = line(&[0.0, 0.5, 0.95, 1.0]);
        let s = DVector::from_vec(vec![0.0]);
        let e = DVector::from_vec(vec![1.0]);
        assert_eq!(reach_time(&t, &s, &e, 0.1).unwrap(), Some(2));
        assert_eq!(reach_time(&t, &s, &e, 0.01).unwrap(), Some(3));
        assert!((path_length(&t) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn regions_examples() {
        let ends = [DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        let mut pts = vec![0.0; 20];
        pts.extend(vec![1.0; 20]);
        pts.extend(vec![0.0; 20]);
        assert_eq!(regions_visited(&line(&pts), &ends, 10).unwrap(), 3);
        let flicker: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
        assert_eq!(regions_visited(&line(&flicker), &ends, 10).unwrap(), 0);
        let mut excursion = vec![0.0; 15];
        excursion.extend(vec![1.0; 3]);
        excursion.extend(vec![0.0; 15]);
        assert_eq!(regions_visited(&line(&excursion), &ends, 10).unwrap(), 1);
    }

    #[test]
    fn censored_median() {
        let c = censored(&[Some(3), None, Some(5)], 100);
        assert_eq!(median(&c), Some(5.0));
        assert_eq!(median(&[1.0, 2.0]), Some(1.5));
    }
}
