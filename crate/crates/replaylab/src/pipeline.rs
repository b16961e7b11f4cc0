//! The generate -> train -> replay -> report pipeline behind the CLI.
//!
//! Directory layout under an output root:
//!
//! ```text
//! awake/manifest, awake/traj_{i}.csv
//! model.ckpt, model.meta, loss.csv, cells.csv (rat tasks)
//! replay/manifest, replay/cell_{b_a}_{lambda_v}/seed_{s}/traj_{i}.csv
//! report/*.csv, report/*.svg
//! ```
//!
//! A cell whose rollouts diverge gets a `FAILED` file with the reason instead of paths.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use replaylab_core::metrics::{
    displacement_and_variance, mean, path_length, reach_change_vs_awake, summarize_paths, trajectory_distribution_distance, DistanceMode,
};
use replaylab_core::place::PlaceCellMap;
use replaylab_core::process::{generate_rat_walk, generate_task_paths, simulate_ou, Trajectory};
use replaylab_core::replay::{analytic_ou_replay, generate_place_replay, generate_replay, SweepSpec};
use replaylab_core::rnn::{Activation, NetSpec, RnnParams, TagSpec};
use replaylab_core::train::{train, LossLog, MazeTask, PathTask, PlaceTask, TrainConfig};

use crate::checkpoint::{self, Meta};
use crate::error::{format_err, io_err, Error, Result};
use crate::formats::{fmt_f64, fmt_key, read_place_map, read_trajectory, write_loss_log, write_place_map, write_sweep_table, write_trajectory, SweepTable};
use crate::svg::{heatmap, line_plot, Series};
use crate::tasks::TaskName;

/// Place-cell count for the rat tasks.
pub const PLACE_CELLS: usize = replaylab_core::place::DEFAULT_CELLS;
/// Random projections for the sliced distance on rat paths.
pub const SLICED_PROJECTIONS: usize = 64;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn join_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn meta_get<'a>(meta: &'a Meta, path: &Path, key: &str) -> Result<&'a str> {
    meta.get(key).map(String::as_str).ok_or_else(|| format_err(path, format!("missing `{key}`")))
}

fn meta_parse<T: std::str::FromStr>(meta: &Meta, path: &Path, key: &str) -> Result<T> {
    let v = meta_get(meta, path, key)?;
    v.parse().map_err(|_| format_err(path, format!("bad `{key}` value `{v}`")))
}

fn meta_list<T: std::str::FromStr>(meta: &Meta, path: &Path, key: &str) -> Result<Vec<T>> {
    crate::config::parse_list(meta_get(meta, path, key)?).map_err(|e| format_err(path, format!("`{key}`: {e}")))
}

/// Reads `dir/traj_0.csv, dir/traj_1.csv, ...` in index order.
pub fn read_trajectory_dir(dir: &Path) -> Result<Vec<Trajectory>> {
    let mut indexed = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(i) = name.strip_prefix("traj_").and_then(|s| s.strip_suffix(".csv")).and_then(|s| s.parse::<usize>().ok()) {
            indexed.push((i, path));
        }
    }
    indexed.sort();
    indexed.iter().map(|(_, p)| read_trajectory(p)).collect()
}

fn write_trajectory_dir(dir: &Path, trajs: &[Trajectory]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, t) in trajs.iter().enumerate() {
        write_trajectory(&dir.join(format!("traj_{i}.csv")), t)?;
    }
    Ok(())
}

// ---- generate ----

/// Awake paths for `task`. Mazes produce `n` paths per direction, the others `n` in total.
pub fn awake_paths(task: TaskName, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let paths = match task {
        TaskName::Ou1d => simulate_ou(&TaskName::Ou1d.ou().expect("ou1d has OU params"), n, seed)?,
        TaskName::Tmaze | TaskName::Triangle => generate_task_paths(&task.env(), &task.ou().expect("mazes have OU params"), n, seed)?,
        TaskName::RatBiased | TaskName::RatUnbiased => generate_rat_walk(&task.env(), &task.rat_walk().expect("rat tasks have walk params"), n, seed)?,
    };
    Ok(paths)
}

pub fn generate(task: TaskName, n: usize, seed: u64, out: &Path) -> Result<usize> {
    let paths = awake_paths(task, n, seed)?;
    let dir = out.join("awake");
    write_trajectory_dir(&dir, &paths)?;
    write_text(&dir.join("manifest"), &format!("task = {task}\nn = {n}\nseed = {seed}\n"))?;
    Ok(paths.len())
}

// ---- train ----

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub task: TaskName,
    pub seed: u64,
    pub hidden: usize,
    /// Multiplier on the full epoch counts.
    pub scale: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub sigma_r: f64,
    pub leak: bool,
    /// Final mask period; the task default when `None`.
    pub mask_k: Option<usize>,
    pub activation: Activation,
}

impl TrainOptions {
    pub fn new(task: TaskName, seed: u64) -> Self {
        TrainOptions {
            task,
            seed,
            hidden: task.default_hidden(),
            scale: 0.1,
            learning_rate: 1e-3,
            batch_size: 64,
            grad_clip: 1.0,
            sigma_r: task.default_sigma_r(),
            leak: true,
            mask_k: None,
            activation: task.default_activation(),
        }
    }

    fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.task.curriculum(self.scale, self.mask_k), self.seed);
        cfg.learning_rate = self.learning_rate;
        cfg.batch_size = self.batch_size;
        cfg.grad_clip = self.grad_clip;
        cfg
    }
}

/// A trained network with everything replay needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub task: TaskName,
    pub params: RnnParams,
    pub tags: TagSpec,
    pub map: Option<PlaceCellMap>,
}

/// Trains in memory without touching the filesystem.
pub fn train_model(opts: &TrainOptions) -> Result<(Model, LossLog)> {
    let cfg = opts.train_config();
    let mut net = NetSpec::new(opts.hidden, opts.sigma_r, opts.leak);
    net.activation = opts.activation;
    let task = opts.task;
    let (params, log, map) = match task {
        TaskName::RatBiased | TaskName::RatUnbiased => {
            let env = task.env();
            let map = PlaceCellMap::random(&env, PLACE_CELLS, opts.seed)?;
            let t = PlaceTask { env, walk: task.rat_walk().expect("rat walk"), map: map.clone() };
            let (p, log) = train(&t as &dyn PathTask, &net, &cfg)?;
            (p, log, Some(map))
        }
        _ => {
            let t = MazeTask { env: task.env(), ou: task.ou().expect("OU params") };
            let (p, log) = train(&t as &dyn PathTask, &net, &cfg)?;
            (p, log, None)
        }
    };
    Ok((Model { task, params, tags: cfg.tags, map }, log))
}

pub fn save_model(model: &Model, ckpt: &Path, opts: Option<&TrainOptions>) -> Result<()> {
    checkpoint::save(ckpt, &model.params)?;
    let mut meta = Meta::new();
    meta.insert("task".into(), model.task.to_string());
    meta.insert("tag_seed".into(), model.tags.seed.to_string());
    meta.insert("tag_scale".into(), fmt_f64(model.tags.scale));
    if let Some(o) = opts {
        meta.insert("seed".into(), o.seed.to_string());
        meta.insert("scale".into(), o.scale.to_string());
        meta.insert("learning_rate".into(), o.learning_rate.to_string());
        meta.insert("batch_size".into(), o.batch_size.to_string());
        meta.insert("mask_k".into(), o.task.curriculum(o.scale, o.mask_k).last().map(|s| s.k).unwrap_or(1).to_string());
    }
    if let Some(map) = &model.map {
        let cells = ckpt.with_file_name("cells.csv");
        write_place_map(&cells, map)?;
        meta.insert("place_map".into(), "cells.csv".into());
    }
    checkpoint::save_meta(&checkpoint::meta_path(ckpt), &meta)
}

pub fn load_model(ckpt: &Path) -> Result<Model> {
    let params = checkpoint::load(ckpt)?;
    let meta_file = checkpoint::meta_path(ckpt);
    let meta = checkpoint::load_meta(&meta_file)?;
    let task: TaskName = meta_get(&meta, &meta_file, "task")?.parse()?;
    let tags = TagSpec { seed: meta_parse(&meta, &meta_file, "tag_seed")?, scale: meta_parse(&meta, &meta_file, "tag_scale")? };
    let map = match meta.get("place_map") {
        Some(name) => Some(read_place_map(&ckpt.with_file_name(name))?),
        None if task.is_rat() => return Err(format_err(&meta_file, "rat checkpoints need `place_map`")),
        None => None,
    };
    Ok(Model { task, params, tags, map })
}

/// Writes `model.ckpt`, `model.meta`, `loss.csv` and, for rat tasks, `cells.csv` under `out`.
pub fn train_to_dir(opts: &TrainOptions, out: &Path) -> Result<(Model, LossLog)> {
    let (model, log) = train_model(opts)?;
    save_model(&model, &out.join("model.ckpt"), Some(opts))?;
    write_loss_log(&out.join("loss.csv"), &log)?;
    Ok((model, log))
}

// ---- replay ----

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOptions {
    pub b_a: Vec<f64>,
    pub lambda_v: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n: usize,
    pub horizon: usize,
    pub tau_a: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl ReplayOptions {
    pub fn maze_defaults(seeds: Vec<u64>) -> Self {
        let g = SweepSpec::maze_grid(seeds, 600, 100);
        ReplayOptions { b_a: g.b_a, lambda_v: g.lambda_v, seeds: g.seeds, n: g.n, horizon: g.horizon, tau_a: g.tau_a, jobs: 0 }
    }

    fn sweep(&self) -> SweepSpec {
        SweepSpec { b_a: self.b_a.clone(), lambda_v: self.lambda_v.clone(), seeds: self.seeds.clone(), n: self.n, horizon: self.horizon, tau_a: self.tau_a, noise_gain: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ReplaySource {
    Model(Model),
    /// Exact-score replay of the 1D OU task.
    AnalyticOu,
}

pub fn cell_dir(root: &Path, b_a: f64, lambda_v: f64, seed: u64) -> PathBuf {
    root.join(format!("cell_{}_{}", fmt_key(b_a), fmt_key(lambda_v))).join(format!("seed_{seed}"))
}

/// One replay cell: either its paths or the reason it failed.
pub type CellOutcome = std::result::Result<Vec<Trajectory>, String>;

/// Runs every cell in parallel. Divergence becomes a failed cell; other errors abort.
/// `(b_a, lambda_v, seed)`.
pub type CellKey = (f64, f64, u64);

pub fn replay_cells(source: &ReplaySource, opts: &ReplayOptions) -> Result<Vec<(CellKey, CellOutcome)>> {
    let spec = opts.sweep();
    let cells = spec.cells();
    for (b, l, _) in &cells {
        spec.config(*b, *l).validate()?;
    }
    let run = |&(b_a, lambda_v, seed): &(f64, f64, u64)| -> Result<((f64, f64, u64), CellOutcome)> {
        let cfg = spec.config(b_a, lambda_v);
        let res = match source {
            ReplaySource::AnalyticOu => {
                let p = TaskName::Ou1d.ou().expect("ou1d");
                analytic_ou_replay(&p, p.sigma_s, &cfg, opts.n, opts.horizon, seed)
            }
            ReplaySource::Model(m) => match &m.map {
                Some(map) => generate_place_replay(&m.params, &m.task.env(), map, &cfg, opts.n, opts.horizon, seed),
                None => generate_replay(&m.params, &m.task.env(), &m.tags, &cfg, opts.n, opts.horizon, seed),
            },
        };
        match res {
            Ok(t) => Ok(((b_a, lambda_v, seed), Ok(t))),
            Err(e @ replaylab_core::Error::Divergence { .. }) => Ok(((b_a, lambda_v, seed), Err(e.to_string()))),
            Err(e) => Err(e.into()),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", opts.jobs)))?;
    pool.install(|| cells.par_iter().map(run).collect())
}

/// Writes the replay set under `out` and returns `(cells written, cells failed)`.
pub fn replay_to_dir(source: &ReplaySource, source_id: &str, opts: &ReplayOptions, out: &Path) -> Result<(usize, usize)> {
    let task = match source {
        ReplaySource::AnalyticOu => TaskName::Ou1d,
        ReplaySource::Model(m) => m.task,
    };
    let results = replay_cells(source, opts)?;
    let mut failed = 0;
    for ((b, l, s), outcome) in &results {
        let dir = cell_dir(out, *b, *l, *s);
        match outcome {
            Ok(trajs) => write_trajectory_dir(&dir, trajs)?,
            Err(reason) => {
                failed += 1;
                write_text(&dir.join("FAILED"), &format!("{reason}\n"))?;
            }
        }
    }
    let manifest = format!(
        "task = {task}\nsource = {source_id}\nb_a = {}\nlambda_v = {}\nseeds = {}\nn = {}\nhorizon = {}\ntau_a = {}\n",
        join_list(&opts.b_a),
        join_list(&opts.lambda_v),
        join_list(&opts.seeds),
        opts.n,
        opts.horizon,
        opts.tau_a
    );
    write_text(&out.join("manifest"), &manifest)?;
    Ok((results.len(), failed))
}

// ---- report ----

/// Metric names reported per task, in table order.
pub fn metric_names(task: TaskName) -> &'static [&'static str] {
    match task {
        TaskName::Tmaze | TaskName::Triangle => &["wd", "reach_median_pct", "reach_mean_pct", "reach_median", "reached_fraction", "path_length", "regions"],
        TaskName::Ou1d => &["wd", "mean_reach_step", "final_mean_error"],
        TaskName::RatBiased | TaskName::RatUnbiased => &["wd", "path_length", "final_displacement"],
    }
}

fn truncate(trajs: &[Trajectory], len: usize) -> Vec<Trajectory> {
    trajs
        .iter()
        .map(|t| Trajectory { dt: t.dt, states: t.states.rows(0, len.min(t.len())).into_owned(), label: t.label })
        .collect()
}

/// First step at which the across-path mean lies within `frac * |target|` of `target`,
/// and the final distance of the mean from `target`. Scalar paths only.
pub fn mean_path_reach(trajs: &[Trajectory], target: f64, frac: f64) -> Result<(Option<usize>, f64)> {
    let first = trajs.first().ok_or_else(|| replaylab_core::Error::InsufficientData("no trajectories".into()))?;
    let len = first.len();
    let mut m = vec![0.0; len];
    for t in trajs {
        if t.len() != len || t.dim() != 1 {
            return Err(replaylab_core::Error::Shape("paths must be scalar and equally long".into()).into());
        }
        for (k, x) in m.iter_mut().enumerate() {
            *x += t.states[(k, 0)];
        }
    }
    m.iter_mut().for_each(|x| *x /= trajs.len() as f64);
    let hit = m.iter().position(|x| (x - target).abs() <= frac * target.abs());
    Ok((hit, (m[len - 1] - target).abs()))
}

/// All metrics of one cell, in [`metric_names`] order.
pub fn cell_metrics(task: TaskName, awake: &[Trajectory], replay: &[Trajectory]) -> Result<Vec<f64>> {
    let awake_len = awake.first().map(Trajectory::len).unwrap_or(0);
    let same_len = truncate(replay, awake_len);
    Ok(match task {
        TaskName::Tmaze | TaskName::Triangle => {
            let env = task.env();
            let wd = trajectory_distribution_distance(awake, &same_len, DistanceMode::PerDirectionGaussian)?;
            let (med_pct, mean_pct) = reach_change_vs_awake(replay, awake, &env)?;
            let s = summarize_paths(replay, &env)?;
            vec![wd, med_pct, mean_pct, s.median_reach, s.reached_fraction, s.mean_path_length, s.mean_regions]
        }
        TaskName::Ou1d => {
            let wd = trajectory_distribution_distance(awake, &same_len, DistanceMode::PerDirectionGaussian)?;
            let mu = task.ou().expect("ou1d").mu[0];
            let (hit, err) = mean_path_reach(replay, mu, 0.1)?;
            vec![wd, hit.map(|h| h as f64).unwrap_or(replay[0].len() as f64), err]
        }
        TaskName::RatBiased | TaskName::RatUnbiased => {
            let wd = trajectory_distribution_distance(awake, &same_len, DistanceMode::Sliced { n_proj: SLICED_PROJECTIONS, seed: 0 })?;
            let lengths: Vec<f64> = replay.iter().map(path_length).collect();
            let (disp, _) = displacement_and_variance(replay)?;
            vec![wd, mean(&lengths).unwrap_or(f64::NAN), *disp.last().unwrap_or(&f64::NAN)]
        }
    })
}

struct ReplayManifest {
    task: TaskName,
    b_a: Vec<f64>,
    lambda_v: Vec<f64>,
    seeds: Vec<u64>,
}

fn read_replay_manifest(dir: &Path) -> Result<ReplayManifest> {
    let path = dir.join("manifest");
    let meta = checkpoint::load_meta(&path)?;
    Ok(ReplayManifest {
        task: meta_get(&meta, &path, "task")?.parse()?,
        b_a: meta_list(&meta, &path, "b_a")?,
        lambda_v: meta_list(&meta, &path, "lambda_v")?,
        seeds: meta_list(&meta, &path, "seeds")?,
    })
}

/// Seed-averaged metric tables. A cell is a gap when every seed failed or is missing.
pub fn report_tables(replay_dir: &Path, awake: &[Trajectory]) -> Result<(TaskName, Vec<(&'static str, SweepTable)>)> {
    let m = read_replay_manifest(replay_dir)?;
    let names = metric_names(m.task);
    let mut tables: Vec<(&'static str, SweepTable)> = names.iter().map(|n| (*n, SweepTable::new(m.b_a.clone(), m.lambda_v.clone()))).collect();
    for (i, &lv) in m.lambda_v.iter().enumerate() {
        for (j, &ba) in m.b_a.iter().enumerate() {
            let mut per_seed: Vec<Vec<f64>> = Vec::new();
            for &s in &m.seeds {
                let dir = cell_dir(replay_dir, ba, lv, s);
                if !dir.is_dir() || dir.join("FAILED").exists() {
                    continue;
                }
                let trajs = read_trajectory_dir(&dir)?;
                if trajs.is_empty() {
                    continue;
                }
                per_seed.push(cell_metrics(m.task, awake, &trajs)?);
            }
            if per_seed.is_empty() {
                continue;
            }
            for (k, (_, table)) in tables.iter_mut().enumerate() {
                let vals: Vec<f64> = per_seed.iter().map(|v| v[k]).collect();
                table.values[i][j] = mean(&vals);
            }
        }
    }
    Ok((m.task, tables))
}

/// Writes one CSV and one heatmap per metric, plus line plots, into `out`.
pub fn report_to_dir(replay_dir: &Path, awake_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let awake = read_trajectory_dir(awake_dir)?;
    if awake.is_empty() {
        return Err(format_err(awake_dir, "no awake trajectories"));
    }
    let (task, tables) = report_tables(replay_dir, &awake)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();
    for (name, table) in &tables {
        let csv = out.join(format!("{name}.csv"));
        write_sweep_table(&csv, table)?;
        let center = if name.ends_with("_pct") { 0.0 } else { mean(&table.values.iter().flatten().flatten().copied().collect::<Vec<_>>()).unwrap_or(0.0) };
        let svg = out.join(format!("{name}.svg"));
        write_text(&svg, &heatmap(table, name, center))?;
        written.push(csv);
        written.push(svg);
    }
    let curves = out.join(if task == TaskName::Ou1d { "mean_path.svg" } else { "displacement.svg" });
    write_text(&curves, &curve_plot(task, replay_dir, &awake)?)?;
    written.push(curves);
    Ok(written)
}

/// Per-step curves for the first seed of each `b_a = 0` cell (or the first `b_a` if 0
/// is not swept), against the awake curve.
fn curve_plot(task: TaskName, replay_dir: &Path, awake: &[Trajectory]) -> Result<String> {
    let m = read_replay_manifest(replay_dir)?;
    let curve = |trajs: &[Trajectory]| -> Result<Vec<(f64, f64)>> {
        if task == TaskName::Ou1d {
            let n = trajs.len() as f64;
            let len = trajs.iter().map(Trajectory::len).min().unwrap_or(0);
            Ok((0..len).map(|k| (k as f64, trajs.iter().map(|t| t.states[(k, 0)]).sum::<f64>() / n)).collect())
        } else {
            let (d, _) = displacement_and_variance(trajs)?;
            Ok(d.into_iter().enumerate().map(|(k, v)| (k as f64, v)).collect())
        }
    };
    let mut series = vec![Series { name: "awake".into(), points: curve(awake)? }];
    let ba = if m.b_a.contains(&0.0) { 0.0 } else { m.b_a[0] };
    if let Some(&seed) = m.seeds.first() {
        for &lv in &m.lambda_v {
            let dir = cell_dir(replay_dir, ba, lv, seed);
            if dir.join("FAILED").exists() || !dir.is_dir() {
                continue;
            }
            series.push(Series { name: format!("lv={}", fmt_key(lv)), points: curve(&read_trajectory_dir(&dir)?)? });
        }
    }
    let (title, y) = if task == TaskName::Ou1d { ("mean replay path", "mean state") } else { ("mean displacement", "displacement") };
    Ok(line_plot(&series, &format!("{title}, b_a={}", fmt_key(ba)), "step", y))
}
