//! Flat `key = value` text format used for run configs and learner checkpoints.
//!
//! One entry per line, `#` starts a comment line, blank lines are ignored.
//! Keys are unique; insertion order is preserved on output.

use std::fmt::Write as _;

use crate::error::{EmvError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                EmvError::Format(format!("line {}: expected `key = value`", idx + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(EmvError::Format(format!("line {}: empty key", idx + 1)));
            }
            if doc.get(key).is_some() {
                return Err(EmvError::Format(format!(
                    "line {}: duplicate key `{key}`",
                    idx + 1
                )));
            }
            doc.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, fmt_f64(value));
    }

    pub fn set_f64s(&mut self, key: &str, values: &[f64]) {
        self.set(key, fmt_f64s(values));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| EmvError::Format(format!("missing key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.require(key)?, key)
    }

    pub fn f64s(&self, key: &str) -> Result<Vec<f64>> {
        parse_f64s(self.require(key)?, key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| EmvError::Format(format!("`{key}`: expected unsigned integer, got `{raw}`")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_f64s(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

pub fn parse_f64(raw: &str, key: &str) -> Result<f64> {
    raw.trim()
        .parse()
        .map_err(|_| EmvError::Format(format!("`{key}`: expected number, got `{raw}`")))
}

pub fn parse_f64s(raw: &str, key: &str) -> Result<Vec<f64>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|s| parse_f64(s, key)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_blanks() {
        let doc = KvDoc::parse("# header\n\nlambda = 0.1\nmu = 0.1, 0.2\n").unwrap();
        assert_eq!(doc.f64("lambda").unwrap(), 0.1);
        assert_eq!(doc.f64s("mu").unwrap(), vec![0.1, 0.2]);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KvDoc::parse("a = 1\na = 2").is_err());
        assert!(KvDoc::parse("no separator").is_err());
        assert!(KvDoc::parse(" = 3").is_err());
    }

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..8)) {
            let mut doc = KvDoc::new();
            doc.set_f64s("v", &values);
            let back = KvDoc::parse(&doc.render()).unwrap().f64s("v").unwrap();
            prop_assert_eq!(back.len(), values.len());
            for (a, b) in back.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
