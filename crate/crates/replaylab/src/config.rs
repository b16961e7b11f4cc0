//! Line-oriented experiment config: `[section]` headers and `key = value` pairs.
//! Keys before any header live in the unnamed top section. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, Error, Result};

const KNOWN: &[(&str, &[&str])] = &[
    ("", &["task", "seed", "out", "seeds"]),
    ("generate", &["n"]),
    ("train", &["hidden", "scale", "learning_rate", "batch_size", "sigma_r", "leak", "mask_k", "activation", "grad_clip"]),
    ("replay", &["b_a", "lambda_v", "horizon", "n", "seeds", "tau_a", "jobs"]),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<(String, String), String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| Error::Config(format!("line {}: unclosed section header", no + 1)))?;
                section = name.trim().to_string();
                if !KNOWN.iter().any(|(s, _)| *s == section) {
                    return Err(Error::Config(format!("line {}: unknown section `{section}`", no + 1)));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim().to_string();
            let allowed = KNOWN.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key `{key}` in [{section}]", no + 1)));
            }
            values.insert((section.clone(), key), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(&(section.to_string(), key.to_string())).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{v}`"))),
        }
    }

    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).map_err(|e| Error::Config(format!("[{section}] {key}: {e}"))),
        }
    }
}

/// Comma-separated values, e.g. `0, 0.5, 1`.
pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| format!("cannot parse `{x}`")))
        .collect()
}

/// Flag value if given, else the file value, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "task = triangle  # comment\nseed = 4\n\n[train]\nhidden = 40\nscale = 0.1\n[replay]\nb_a = 0, 0.5, 1\n";

    #[test]
    fn sections_and_lists() {
        let c = ConfigFile::parse(SAMPLE).unwrap();
        assert_eq!(c.raw("", "task"), Some("triangle"));
        assert_eq!(c.get::<usize>("train", "hidden").unwrap(), Some(40));
        assert_eq!(c.list::<f64>("replay", "b_a").unwrap(), Some(vec![0.0, 0.5, 1.0]));
        assert_eq!(c.get::<f64>("replay", "tau_a").unwrap(), None);
    }

    #[test]
    fn flags_win() {
        let c = ConfigFile::parse(SAMPLE).unwrap();
        assert_eq!(pick(Some(20), c.get("train", "hidden").unwrap(), 1), 20);
        assert_eq!(pick(None, c.get("train", "hidden").unwrap(), 1), 40);
        assert_eq!(pick(None, c.get("train", "batch_size").unwrap(), 64), 64);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(ConfigFile::parse("[train]\nepochs = 3\n").is_err());
        assert!(ConfigFile::parse("[nope]\n").is_err());
        assert!(ConfigFile::parse("[train\n").is_err());
        assert!(ConfigFile::parse("just words\n").is_err());
    }
}
