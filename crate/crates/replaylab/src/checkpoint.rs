//! Text checkpoints for [`RnnParams`], plus a `key = value` sidecar for everything the
//! fixed checkpoint layout has no room for (task, tag seed, task parameters).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use replaylab_core::rnn::{Activation, RnnParams};
use replaylab_core::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{format_err, io_err, Result};
use crate::formats::fmt_f64;

pub const MAGIC: &str = "REPLAYLAB-CKPT v1";

fn push_rows(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|x| fmt_f64(*x)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn to_text(p: &RnnParams) -> String {
    let mut out = format!("{MAGIC}\n");
    out.push_str(&format!(
        "{} {} {} {} {} {} {}\n",
        p.hidden_size(),
        p.input_size(),
        p.output_size(),
        p.activation.token(),
        fmt_f64(p.kappa),
        fmt_f64(p.sigma_r),
        u8::from(p.leak_enabled)
    ));
    push_rows(&mut out, &p.w_rec);
    push_rows(&mut out, &p.w_in);
    push_rows(&mut out, &p.d_out);
    out
}

pub fn from_text(path: &Path, text: &str) -> Result<RnnParams> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(format_err(path, format!("missing `{MAGIC}` header")));
    }
    let head: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if head.len() != 7 {
        return Err(format_err(path, "line 2 must be `n m d activation kappa sigma_r leak_enabled`"));
    }
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| format_err(path, format!("bad {what} `{s}`")));
    let dim = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad {what} `{s}`")));
    let (n, m, d) = (dim(head[0], "n")?, dim(head[1], "m")?, dim(head[2], "d")?);
    let activation = Activation::parse(head[3])?;
    let kappa = num(head[4], "kappa")?;
    let sigma_r = num(head[5], "sigma_r")?;
    let leak_enabled = match head[6] {
        "1" | "true" => true,
        "0" | "false" => false,
        s => return Err(format_err(path, format!("bad leak flag `{s}`"))),
    };
    let values = lines
        .flat_map(str::split_whitespace)
        .map(|s| num(s, "weight"))
        .collect::<Result<Vec<f64>>>()?;
    let need = n * n + n * m + d * n;
    if values.len() != need {
        return Err(format_err(path, format!("expected {need} weights, found {}", values.len())));
    }
    let w_rec = DMatrix::from_row_slice(n, n, &values[..n * n]);
    let w_in = DMatrix::from_row_slice(n, m, &values[n * n..n * n + n * m]);
    let d_out = DMatrix::from_row_slice(d, n, &values[n * n + n * m..]);
    let p = RnnParams { w_rec, w_in, d_out, kappa, sigma_r, activation, leak_enabled };
    p.validate()?;
    Ok(p)
}

pub fn save(path: &Path, p: &RnnParams) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, to_text(p)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<RnnParams> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_text(path, &text)
}

/// First 16 hex digits of the SHA-256 of the checkpoint bytes.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// `model.ckpt` -> `model.meta`.
pub fn meta_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("meta")
}

pub type Meta = BTreeMap<String, String>;

pub fn save_meta(path: &Path, meta: &Meta) -> Result<()> {
    let text: String = meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_meta(path: &Path) -> Result<Meta> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut meta = Meta::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format_err(path, format!("bad line `{line}`")))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use replaylab_core::rnn::NetSpec;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut spec = NetSpec::new(7, 0.1, true);
        spec.activation = Activation::LeakyRelu(0.03);
        let p = RnnParams::init(&spec, 3, 2, 9).unwrap();
        save(&path, &p).unwrap();
        let q = load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(to_text(&q), fs::read_to_string(&path).unwrap());
    }

    #[test]
    fn layout_matches_header_line() {
        let p = RnnParams::init(&NetSpec::new(2, 0.0, false), 1, 1, 0).unwrap();
        let text = to_text(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MAGIC);
        assert!(lines[1].starts_with("2 1 1 leaky_relu:0.01 "));
        assert!(lines[1].ends_with(" 0"));
        // two W_r rows, two W_in rows, one D row
        assert_eq!(lines.len(), 2 + 2 + 2 + 1);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let p = RnnParams::init(&NetSpec::new(3, 0.1, true), 2, 2, 0).unwrap();
        let text = to_text(&p);
        let cut = &text[..text.len() - 30];
        assert!(from_text(Path::new("x"), cut).is_err());
    }
}
