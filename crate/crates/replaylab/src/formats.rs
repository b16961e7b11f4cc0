//! CSV layouts for trajectories, loss logs, sweep tables and place-cell maps.
//!
//! Floats are written with `{:.16e}` (17 significant digits) so that every value
//! round-trips exactly.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use replaylab_core::place::PlaceCellMap;
use replaylab_core::process::Trajectory;
use replaylab_core::train::{LossEntry, LossLog};
use replaylab_core::DMatrix;

use crate::error::{format_err, io_err, Error, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Shortest form used in directory names and column headers, e.g. `0.5`, `1`.
pub fn fmt_key(x: f64) -> String {
    format!("{x}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| format_err(path, e.to_string())
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().from_reader(file))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| format_err(path, format!("bad {what} `{s}`")))
}

/// Header `t,x0,...,x{d-1},label`; `t` is `k * dt`, an empty label means none.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = writer(path)?;
    let d = traj.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    header.push("label".to_string());
    w.write_record(&header).map_err(csv_err(path))?;
    let label = traj.label.map(|l| l.to_string()).unwrap_or_default();
    for k in 0..traj.len() {
        let mut row = vec![fmt_f64(k as f64 * traj.dt)];
        row.extend((0..d).map(|j| fmt_f64(traj.states[(k, j)])));
        row.push(label.clone());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.len() < 3 || &header[0] != "t" || &header[header.len() - 1] != "label" {
        return Err(format_err(path, "expected header t,x0,...,label"));
    }
    let d = header.len() - 2;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut label = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        times.push(parse::<f64>(path, &rec[0], "time")?);
        for j in 0..d {
            values.push(parse::<f64>(path, &rec[j + 1], "state")?);
        }
        let l = &rec[d + 1];
        label = if l.is_empty() { None } else { Some(parse::<usize>(path, l, "label")?) };
    }
    if times.is_empty() {
        return Err(format_err(path, "no rows"));
    }
    let dt = if times.len() > 1 { times[1] } else { 1.0 };
    Ok(Trajectory { dt, states: DMatrix::from_row_slice(times.len(), d, &values), label })
}

pub fn write_loss_log(path: &Path, log: &LossLog) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "k", "loss"]).map_err(csv_err(path))?;
    for e in &log.entries {
        w.write_record([e.epoch.to_string(), e.k.to_string(), fmt_f64(e.loss)]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_loss_log(path: &Path) -> Result<LossLog> {
    let mut r = reader(path)?;
    let mut entries = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 3 {
            return Err(format_err(path, "expected epoch,k,loss"));
        }
        entries.push(LossEntry {
            epoch: parse(path, &rec[0], "epoch")?,
            k: parse(path, &rec[1], "k")?,
            loss: parse(path, &rec[2], "loss")?,
        });
    }
    Ok(LossLog { entries })
}

/// One metric over a `(lambda_v, b_a)` grid. `values[i][j]` is row `lambda_v[i]`, column `b_a[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub b_a: Vec<f64>,
    pub lambda_v: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl SweepTable {
    pub fn new(b_a: Vec<f64>, lambda_v: Vec<f64>) -> Self {
        let values = vec![vec![None; b_a.len()]; lambda_v.len()];
        SweepTable { b_a, lambda_v, values }
    }

    pub fn get(&self, b_a: f64, lambda_v: f64) -> Option<f64> {
        let j = self.b_a.iter().position(|&x| x == b_a)?;
        let i = self.lambda_v.iter().position(|&x| x == lambda_v)?;
        self.values[i][j]
    }
}

/// Header `lambda_v,b_a=<v1>,...`; missing cells are empty fields.
pub fn write_sweep_table(path: &Path, table: &SweepTable) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["lambda_v".to_string()];
    header.extend(table.b_a.iter().map(|b| format!("b_a={}", fmt_key(*b))));
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, lv) in table.lambda_v.iter().enumerate() {
        let mut row = vec![fmt_key(*lv)];
        row.extend(table.values[i].iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_sweep_table(path: &Path) -> Result<SweepTable> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.is_empty() || &header[0] != "lambda_v" {
        return Err(format_err(path, "expected header lambda_v,b_a=..."));
    }
    let b_a = header
        .iter()
        .skip(1)
        .map(|h| {
            let v = h.strip_prefix("b_a=").ok_or_else(|| format_err(path, format!("bad column `{h}`")))?;
            parse(path, v, "b_a")
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut lambda_v = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        lambda_v.push(parse(path, &rec[0], "lambda_v")?);
        let row = rec
            .iter()
            .skip(1)
            .map(|s| if s.is_empty() { Ok(None) } else { parse(path, s, "value").map(Some) })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != b_a.len() {
            return Err(format_err(path, "ragged row"));
        }
        values.push(row);
    }
    Ok(SweepTable { b_a, lambda_v, values })
}

/// `# width=<w> lo=<x>,<y> hi=<x>,<y>` followed by `cx,cy` rows.
pub fn write_place_map(path: &Path, map: &PlaceCellMap) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut out = format!(
        "# width={} lo={},{} hi={},{}\ncx,cy\n",
        fmt_f64(map.width),
        fmt_f64(map.lo[0]),
        fmt_f64(map.lo[1]),
        fmt_f64(map.hi[0]),
        fmt_f64(map.hi[1])
    );
    for i in 0..map.len() {
        out.push_str(&format!("{},{}\n", fmt_f64(map.centers[(i, 0)]), fmt_f64(map.centers[(i, 1)])));
    }
    f.write_all(out.as_bytes()).map_err(io_err(path))
}

pub fn read_place_map(path: &Path) -> Result<PlaceCellMap> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| format_err(path, "empty file"))?.map_err(io_err(path))?;
    let mut width = None;
    let mut lo = None;
    let mut hi = None;
    for field in first.trim_start_matches('#').split_whitespace() {
        let (key, val) = field.split_once('=').ok_or_else(|| format_err(path, format!("bad field `{field}`")))?;
        let pair = |v: &str| -> Result<[f64; 2]> {
            let (a, b) = v.split_once(',').ok_or_else(|| format_err(path, format!("bad pair `{v}`")))?;
            Ok([parse(path, a, key)?, parse(path, b, key)?])
        };
        match key {
            "width" => width = Some(parse(path, val, "width")?),
            "lo" => lo = Some(pair(val)?),
            "hi" => hi = Some(pair(val)?),
            _ => return Err(format_err(path, format!("unknown key `{key}`"))),
        }
    }
    let header = lines.next().ok_or_else(|| format_err(path, "missing cx,cy header"))?.map_err(io_err(path))?;
    if header.trim() != "cx,cy" {
        return Err(format_err(path, "expected cx,cy header"));
    }
    let mut xs = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| format_err(path, format!("bad row `{line}`")))?;
        xs.push(parse(path, a, "cx")?);
        xs.push(parse(path, b, "cy")?);
    }
    let map = PlaceCellMap {
        centers: DMatrix::from_row_slice(xs.len() / 2, 2, &xs),
        width: width.ok_or_else(|| format_err(path, "missing width"))?,
        lo: lo.ok_or_else(|| format_err(path, "missing lo"))?,
        hi: hi.ok_or_else(|| format_err(path, "missing hi"))?,
    };
    map.validate()?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use replaylab_core::process::EnvironmentSpec;

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/t.csv");
        let t = Trajectory {
            dt: 0.02,
            states: DMatrix::from_row_slice(3, 2, &[0.1, -1.0 / 3.0, 2.5e-17, 7.0, f64::MAX, -0.0]),
            label: Some(4),
        };
        write_trajectory(&p, &t).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), t);
    }

    #[test]
    fn sweep_table_keeps_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wd.csv");
        let mut t = SweepTable::new(vec![0.0, 0.5, 1.0], vec![1.0, 0.7]);
        t.values[0][1] = Some(1.25);
        t.values[1][2] = Some(-3.0);
        write_sweep_table(&p, &t).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("lambda_v,b_a=0,b_a=0.5,b_a=1\n1,,"));
        assert_eq!(read_sweep_table(&p).unwrap(), t);
    }

    #[test]
    fn place_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cells.csv");
        let map = PlaceCellMap::random(&EnvironmentSpec::rat_box(), 16, 3).unwrap();
        write_place_map(&p, &map).unwrap();
        assert_eq!(read_place_map(&p).unwrap(), map);
    }

    #[test]
    fn loss_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let log = LossLog { entries: vec![LossEntry { epoch: 0, k: 1, loss: 0.5 }, LossEntry { epoch: 1, k: 3, loss: 1e-7 }] };
        write_loss_log(&p, &log).unwrap();
        assert_eq!(read_loss_log(&p).unwrap(), log);
    }
}
