//! `key = value` run configuration; command-line flags take precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use halfsphere_core::QuadratureGrid;

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`", i + 1);
            };
            values.insert(k.trim().replace('_', "-"), v.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
        }
    }

    /// Flag value, else config value, else default.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }
}

/// `NPxNA`, e.g. `64x128`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub polar: usize,
    pub azimuthal: usize,
}

impl FromStr for GridSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("grid `{s}` is not of the form NPxNA"))?;
        let n = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad grid size `{x}`"));
        Ok(GridSpec { polar: n(a)?, azimuthal: n(b)? })
    }
}

impl GridSpec {
    pub fn build(self) -> Result<QuadratureGrid> {
        Ok(QuadratureGrid::new(self.polar, self.azimuthal)?)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { polar: 64, azimuthal: 128 }
    }
}

pub fn positive(name: &str, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        bail!("{name} must be positive, got {x}");
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let c = Config::parse("grid = 8x16\n# note\nmax_degree = 3\n").unwrap();
        assert_eq!(c.resolve(None, "grid", GridSpec::default()).unwrap(), GridSpec { polar: 8, azimuthal: 16 });
        assert_eq!(c.resolve(Some(5u32), "max-degree", 4).unwrap(), 5);
        assert_eq!(c.resolve(None, "max-degree", 4u32).unwrap(), 3);
        assert_eq!(c.resolve(None, "seed", 0u64).unwrap(), 0);
    }
}
