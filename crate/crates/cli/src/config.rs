//! Flat `key = value` config files with section-prefixed keys, and the run
//! manifest they resolve into.
//!
//! A manifest is itself a valid config: it records the subcommand, the
//! artifact version, and every resolved key including defaults, so a run
//! can be reproduced byte-for-byte by feeding the manifest back in.

use std::collections::BTreeMap;

use crate::CliError;

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CliError::config(format!("line {}: empty key", lineno + 1)));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(CliError::config(format!("duplicate key '{key}'")));
            }
        }
        Ok(Config { values })
    }

    pub fn load(path: &std::path::Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Config::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Insert a default unless the key was given.
    pub fn default_key(&mut self, key: &str, value: impl ToString) {
        self.values.entry(key.to_string()).or_insert_with(|| value.to_string());
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::config(format!("missing required key '{key}'")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.require(key)?;
        raw.parse::<T>()
            .map_err(|_| CliError::config(format!("key '{key}': cannot parse '{raw}'")))
    }

    pub fn parse_optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None | Some("") => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::config(format!("key '{key}': cannot parse '{raw}'"))),
        }
    }

    pub fn parse_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.require(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::config(format!("key '{key}': expected bool, got '{other}'"))),
        }
    }

    /// Reject keys outside the subcommand's vocabulary. Manifest bookkeeping
    /// keys are always accepted.
    pub fn validate_keys(&self, subcommand: &str, allowed: &[&str]) -> Result<(), CliError> {
        for key in self.values.keys() {
            if key == "subcommand" {
                let declared = self.values.get(key).unwrap();
                if declared != subcommand {
                    return Err(CliError::config(format!(
                        "config declares subcommand '{declared}' but '{subcommand}' was invoked"
                    )));
                }
                continue;
            }
            if key == "artifact.version" {
                continue;
            }
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::config(format!(
                    "unknown key '{key}' for subcommand '{subcommand}'"
                )));
            }
        }
        Ok(())
    }

    /// Render the resolved manifest.
    pub fn render_manifest(&self, subcommand: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("subcommand = {subcommand}\n"));
        out.push_str(&format!("artifact.version = {}\n", env!("CARGO_PKG_VERSION")));
        for (key, value) in &self.values {
            if key == "subcommand" || key == "artifact.version" {
                continue;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let cfg = Config::parse("# comment\ngrid.shape = square\ngrid.side = 8\n").unwrap();
        assert_eq!(cfg.get("grid.shape"), Some("square"));
        assert_eq!(cfg.parse_value::<u32>("grid.side").unwrap(), 8);
    }

    #[test]
    fn rejects_malformed_and_duplicates() {
        assert!(Config::parse("nonsense line\n").is_err());
        assert!(Config::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let cfg = Config::parse("bogus = 1\n").unwrap();
        assert!(cfg.validate_keys("mse", &["graph.file"]).is_err());
    }

    #[test]
    fn manifest_is_reparseable() {
        let mut cfg = Config::parse("seed = 3\n").unwrap();
        cfg.default_key("out", ".");
        let manifest = cfg.render_manifest("cgc");
        let back = Config::parse(&manifest).unwrap();
        assert_eq!(back.get("subcommand"), Some("cgc"));
        assert_eq!(back.get("seed"), Some("3"));
    }
}
