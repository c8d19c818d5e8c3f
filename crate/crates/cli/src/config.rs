//! Flat `key = value` run configs. Every command declares a schema of keys
//! with defaults; the effective config is defaults, then the config file,
//! then command-line flags (`--some-key` sets `some_key`).

use std::path::Path;

use chrono::NaiveDate;
use clap::{Arg, ArgMatches};
use emv_core::kv::{parse_f64, parse_f64s, KvDoc};
use emv_core::market_sim::MarketParams;
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn schema_args(schema: &[Key]) -> Vec<Arg> {
    schema
        .iter()
        .map(|k| {
            Arg::new(k.name)
                .long(flag_name(k.name))
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, k.default))
        })
        .collect()
}

/// Effective configuration of one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    doc: KvDoc,
}

impl RunConfig {
    pub fn resolve(schema: &[Key], file: Option<&Path>, matches: &ArgMatches) -> Result<Self, CliError> {
        let mut doc = KvDoc::new();
        for k in schema {
            doc.set(k.name, k.default);
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let parsed = KvDoc::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            for (name, value) in parsed.iter() {
                if !schema.iter().any(|k| k.name == name) {
                    return Err(CliError::Config(format!(
                        "{}: unknown key `{name}`",
                        path.display()
                    )));
                }
                doc.set(name, value);
            }
        }
        for k in schema {
            if let Some(v) = matches.get_one::<String>(k.name) {
                doc.set(k.name, v.trim());
            }
        }
        Ok(Self { doc })
    }

    #[cfg(test)]
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        let mut doc = KvDoc::new();
        for (k, v) in pairs {
            doc.set(k, *v);
        }
        Self { doc }
    }

    pub fn render(&self) -> String {
        self.doc.render()
    }

    pub fn str(&self, key: &str) -> Result<&str, CliError> {
        self.doc
            .get(key)
            .ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
    }

    pub fn is_none(&self, key: &str) -> Result<bool, CliError> {
        Ok(self.str(key)? == "none")
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v = parse_f64(self.str(key)?, key).map_err(config)?;
        if !v.is_finite() {
            return Err(CliError::Config(format!("`{key}` must be finite")));
        }
        Ok(v)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        if self.is_none(key)? {
            Ok(None)
        } else {
            self.f64(key).map(Some)
        }
    }

    pub fn f64s(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let v = parse_f64s(self.str(key)?, key).map_err(config)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Config(format!("`{key}` must be finite")));
        }
        Ok(v)
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        let raw = self.str(key)?;
        raw.parse()
            .map_err(|_| CliError::Config(format!("`{key}`: expected unsigned integer, got `{raw}`")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(CliError::Config(format!("`{key}`: expected true or false, got `{other}`"))),
        }
    }

    pub fn opt_date(&self, key: &str) -> Result<Option<NaiveDate>, CliError> {
        if self.is_none(key)? {
            return Ok(None);
        }
        let raw = self.str(key)?;
        NaiveDate::parse_from_str(raw, "%Y-%m-%d")
            .map(Some)
            .map_err(|_| CliError::Config(format!("`{key}`: expected YYYY-MM-DD, got `{raw}`")))
    }

    pub fn choice<'a>(&'a self, key: &str, allowed: &[&str]) -> Result<&'a str, CliError> {
        let v = self.str(key)?;
        if allowed.contains(&v) {
            Ok(v)
        } else {
            Err(CliError::Config(format!(
                "`{key}`: expected one of {}, got `{v}`",
                allowed.join(", ")
            )))
        }
    }

    /// Drift vector and volatility matrix from `mu`, `sigma` and `assets`.
    ///
    /// `assets = auto` takes the dimension from `mu`. A single `mu` entry is
    /// broadcast; `sigma` may hold one entry (scaled identity), `d` entries
    /// (diagonal) or `d * d` entries (row-major, column `i` loads asset `i`).
    pub fn market_inputs(&self) -> Result<(DVector<f64>, DMatrix<f64>), CliError> {
        let mu = self.f64s("mu")?;
        let sigma = self.f64s("sigma")?;
        let d = if self.str("assets")? == "auto" {
            mu.len()
        } else {
            self.usize("assets")?
        };
        if d == 0 {
            return Err(CliError::Config("market needs at least one asset".into()));
        }
        let mu = match mu.len() {
            1 => DVector::from_element(d, mu[0]),
            n if n == d => DVector::from_vec(mu),
            n => return Err(CliError::Config(format!("`mu` has {n} entries for {d} assets"))),
        };
        let sigma = match sigma.len() {
            1 => DMatrix::from_diagonal_element(d, d, sigma[0]),
            n if n == d => DMatrix::from_diagonal(&DVector::from_vec(sigma)),
            n if n == d * d => DMatrix::from_row_slice(d, d, &sigma),
            n => return Err(CliError::Config(format!("`sigma` has {n} entries for {d} assets"))),
        };
        Ok((mu, sigma))
    }

    pub fn market(&self) -> Result<MarketParams, CliError> {
        let (mu, sigma) = self.market_inputs()?;
        MarketParams::new(mu, sigma, self.f64("r")?).map_err(config)
    }
}

pub fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub const MARKET_KEYS: [Key; 4] = [
    key("mu", "0.1", "asset drifts, one value or one per asset"),
    key("sigma", "0.2", "volatility matrix: one value, a diagonal, or d*d row-major entries"),
    key("r", "0.02", "riskless rate"),
    key("assets", "auto", "number of assets, or auto to take it from mu"),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_shapes() {
        let cfg = RunConfig::from_pairs(&[("mu", "0.1"), ("sigma", "0.2"), ("assets", "3"), ("r", "0")]);
        let (mu, sigma) = cfg.market_inputs().unwrap();
        assert_eq!(mu.len(), 3);
        assert_eq!(sigma, DMatrix::from_diagonal_element(3, 3, 0.2));

        let cfg = RunConfig::from_pairs(&[("mu", "0.1,0.2"), ("sigma", "0.2,0.05,0,0.3"), ("assets", "auto")]);
        let (_, sigma) = cfg.market_inputs().unwrap();
        assert_eq!(sigma[(0, 1)], 0.05);
        assert_eq!(sigma[(1, 0)], 0.0);

        let cfg = RunConfig::from_pairs(&[("mu", "0.1,0.2"), ("sigma", "0.2,0.1,0.3"), ("assets", "auto")]);
        assert!(matches!(cfg.market_inputs(), Err(CliError::Config(_))));
    }

    #[test]
    fn typed_getters_reject_bad_values() {
        let cfg = RunConfig::from_pairs(&[("a", "x"), ("b", "none"), ("c", "true"), ("m", "batch")]);
        assert!(cfg.f64("a").is_err());
        assert_eq!(cfg.opt_f64("b").unwrap(), None);
        assert!(cfg.bool("c").unwrap());
        assert!(cfg.choice("m", &["universal"]).is_err());
        assert!(cfg.str("missing").is_err());
    }

    #[test]
    fn flag_names_use_dashes() {
        assert_eq!(flag_name("train_start"), "train-start");
    }
}
