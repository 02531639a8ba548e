//! Flat `key = value` configuration: command defaults, then the config file,
//! then command-line flags, later sources winning.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const OUT_ENV: &str = "TOKMOE_OUT";

/// Keys that are accepted everywhere and handled outside the defaults table.
const META: [&str; 2] = ["config", "out"];

#[derive(Clone, Debug)]
pub struct Settings {
    values: BTreeMap<String, String>,
    pub out: PathBuf,
}

fn normalize(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

fn parse_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        out.push((normalize(k), v.trim().to_string()));
    }
    Ok(out)
}

/// `--key value` and `--key=value` pairs.
pub fn parse_flags(args: &[String]) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            return Err(CliError::Config(format!("unexpected argument {a:?}; use --key value")));
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((normalize(k), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config(format!("flag --{flag} needs a value")))?;
                out.push((normalize(flag), v.clone()));
            }
        }
    }
    Ok(out)
}

impl Settings {
    /// Resolves `defaults < config file < flags`. Unknown keys are errors.
    pub fn resolve(
        defaults: &[(&str, &str)],
        config: Option<&Path>,
        out: Option<&Path>,
        flags: &[String],
    ) -> CliResult<Self> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let flags = parse_flags(flags)?;
        let config = flags
            .iter()
            .rev()
            .find(|(k, _)| k == "config")
            .map(|(_, v)| PathBuf::from(v))
            .or_else(|| config.map(Path::to_path_buf));
        let mut layered = match &config {
            Some(p) => parse_file(p)?,
            None => Vec::new(),
        };
        layered.extend(flags);
        let mut out_dir = out.map(Path::to_path_buf);
        for (k, v) in layered {
            if k == "out" {
                out_dir = Some(PathBuf::from(v));
            } else if META.contains(&k.as_str()) {
                continue;
            } else if let Some(slot) = values.get_mut(&k) {
                *slot = v;
            } else {
                return Err(CliError::Config(format!("unknown key {k:?} for this command")));
            }
        }
        let out = out_dir
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"));
        Ok(Self { values, out })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key} has no default"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> CliResult<T> {
        self.str(key)
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{key} = {:?} is not {what}", self.str(key))))
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        self.parse(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        self.parse(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        self.parse(key, "a number")
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        self.parse(key, "true or false")
    }

    pub fn f64_list(&self, key: &str) -> CliResult<Vec<f64>> {
        split_list(self.str(key))
            .map(|t| t.parse().map_err(|_| CliError::Config(format!("{key}: {t:?} is not a number"))))
            .collect()
    }

    pub fn usize_list(&self, key: &str) -> CliResult<Vec<usize>> {
        split_list(self.str(key))
            .map(|t| t.parse().map_err(|_| CliError::Config(format!("{key}: {t:?} is not an integer"))))
            .collect()
    }

    /// Comma-separated seeds; `a-b` is an inclusive range.
    pub fn seeds(&self, key: &str) -> CliResult<Vec<u64>> {
        let bad = |t: &str| CliError::Config(format!("{key}: {t:?} is not a seed or seed range"));
        let mut seeds = Vec::new();
        for t in split_list(self.str(key)) {
            match t.split_once('-') {
                Some((a, b)) => {
                    let (a, b): (u64, u64) = (a.parse().map_err(|_| bad(t))?, b.parse().map_err(|_| bad(t))?);
                    if a > b {
                        return Err(bad(t));
                    }
                    seeds.extend(a..=b);
                }
                None => seeds.push(t.parse().map_err(|_| bad(t))?),
            }
        }
        if seeds.is_empty() {
            return Err(CliError::Config(format!("{key} is empty")));
        }
        Ok(seeds)
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.str(key).trim();
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// Resolved values, excluding output locations.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// `key = value` lines, sorted by key, then the output directory.
    pub fn echo(&self) -> String {
        let mut s: String = self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        s.push_str(&format!("out = {}\n", self.out.display()));
        s
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}
