//! Flat `key = value` config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Resolved settings for one run. Every lookup is recorded so the manifest
/// can echo the effective configuration.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, got {raw:?}", n + 1);
        };
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            bail!("config line {}: empty key", n + 1);
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key {key:?}", n + 1);
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text).with_context(|| format!("in {}", p.display()))?
            }
        };
        Ok(Settings {
            file,
            used: BTreeMap::new(),
        })
    }

    /// Flag value if given, else the config file entry, else `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|e| anyhow::anyhow!("config key {key}: {e}"))?,
                None => default,
            },
        };
        self.used.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`Settings::get`] without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(
                    raw.parse()
                        .map_err(|e| anyhow::anyhow!("config key {key}: {e}"))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.used.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.used
    }
}

/// `on`/`off` switch as written on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "on" | "true" | "yes" | "1" => Ok(Switch(true)),
            "off" | "false" | "no" | "0" => Ok(Switch(false)),
            other => Err(format!("expected on or off, got {other:?}")),
        }
    }
}

impl Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let mut s = Settings {
            file: parse_config("# comment\nepochs = 3\nlearning-rate=0.5\n").unwrap(),
            used: BTreeMap::new(),
        };
        assert_eq!(s.get("epochs", Some(9usize), 1).unwrap(), 9);
        assert_eq!(s.get("learning_rate", None, 1.0f64).unwrap(), 0.5);
        assert_eq!(s.get("width", None, 32usize).unwrap(), 32);
        assert_eq!(s.echo()["epochs"], "9");
        assert!(s.get::<usize>("learning_rate", None, 1).is_err());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_config("epochs 3").is_err());
        assert!(parse_config("a = 1\na = 2").is_err());
        assert!(parse_config(" = 2").is_err());
    }

    #[test]
    fn switch_and_list() {
        assert_eq!("on".parse::<Switch>().unwrap(), Switch(true));
        assert!("maybe".parse::<Switch>().is_err());
        let l: List<usize> = "1, 3,5".parse().unwrap();
        assert_eq!(l.0, vec![1, 3, 5]);
        assert_eq!(l.to_string(), "1,3,5");
    }
}
