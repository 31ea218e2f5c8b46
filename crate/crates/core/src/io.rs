//! Flat key-value configs, content hashes, CSV tables and JSON report
//! envelopes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the JSON serialization of an effective configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(content_hash(&serde_json::to_vec(config)?))
}

/// A flat TOML document: scalars and arrays of scalars only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    values: BTreeMap<String, toml::Value>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut values = BTreeMap::new();
        for (k, v) in table {
            let nested = match &v {
                toml::Value::Table(_) => true,
                toml::Value::Array(a) => a.iter().any(|x| matches!(x, toml::Value::Table(_) | toml::Value::Array(_))),
                _ => false,
            };
            if nested {
                return Err(Error::Config(format!("key `{k}` is nested; configs are flat")));
            }
            values.insert(k, v);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Rejects keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`; expected one of {known:?}"))),
            None => Ok(()),
        }
    }

    fn num(key: &str, v: &toml::Value) -> Result<f64> {
        match v {
            toml::Value::Float(f) => Ok(*f),
            toml::Value::Integer(i) => Ok(*i as f64),
            _ => Err(Error::Config(format!("key `{key}` must be a number"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.values.get(key).map_or(Ok(default), |v| Self::num(key, v))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(_) => Err(Error::Config(format!("key `{key}` must be a nonnegative integer"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64_or(key, default as u64)? as usize)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key) {
            None => Ok(default),
            Some(toml::Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(Error::Config(format!("key `{key}` must be a boolean"))),
        }
    }

    pub fn str_or(&self, key: &str, default: &str) -> Result<String> {
        match self.values.get(key) {
            None => Ok(default.to_string()),
            Some(toml::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::Config(format!("key `{key}` must be a string"))),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(toml::Value::Array(a)) => a.iter().map(|v| Self::num(key, v)).collect(),
            Some(v) => Ok(vec![Self::num(key, v)?]),
        }
    }
}

/// One CSV cell. Floats print in shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => format!("{v}"),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => b.to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::S(v)
    }
}

/// A header plus rows, written with `.` decimals and UTF-8.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                got: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// A JSON report with its configuration echo, seed and input hash.
#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope<T: Serialize> {
    pub kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub input_hash: String,
    pub report: T,
}

impl<T: Serialize> ReportEnvelope<T> {
    pub fn new<C: Serialize>(kind: &str, config: &C, seed: u64, report: T) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            input_hash: config_hash(config)?,
            report,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_parsing() {
        let c = FlatConfig::parse("samples = 1000\nradii = [0.5, 1]\ndelta = 0.2\nname = \"x\"\nflag = true").unwrap();
        assert_eq!(c.usize_or("samples", 1).unwrap(), 1000);
        assert_eq!(c.f64_list_or("radii", &[]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(c.f64_or("delta", 0.0).unwrap(), 0.2);
        assert_eq!(c.f64_or("missing", 3.0).unwrap(), 3.0);
        assert_eq!(c.str_or("name", "").unwrap(), "x");
        assert!(c.bool_or("flag", false).unwrap());
        assert!(c.usize_or("delta", 0).is_err());
        assert!(c.check_known(&["samples", "radii", "delta", "name", "flag"]).is_ok());
        assert!(c.check_known(&["samples"]).is_err());
        assert!(FlatConfig::parse("[section]\na = 1").is_err());
        assert!(FlatConfig::parse("a = ").is_err());
    }

    #[test]
    fn hashes_are_stable() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let a = config_hash(&vec![1.0, 2.0]).unwrap();
        assert_eq!(a, config_hash(&vec![1.0, 2.0]).unwrap());
        assert_ne!(a, config_hash(&vec![1.0, 2.5]).unwrap());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut t = Table::new(&["a", "b", "c"]);
        let x = 0.1 + 0.2;
        t.push(vec![x.into(), 3usize.into(), "s,t".into()]).unwrap();
        assert!(t.push(vec![1.0.into()]).is_err());
        let s = t.to_csv().unwrap();
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(rec[0].parse::<f64>().unwrap().to_bits(), x.to_bits());
        assert_eq!(&rec[2], "s,t");
    }

    #[test]
    fn envelope_echoes_config() {
        let env = ReportEnvelope::new("k", &serde_json::json!({"a": 1}), 7, 3.5).unwrap();
        let v = serde_json::to_value(&env).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["config"]["a"], 1);
        assert_eq!(v["input_hash"].as_str().unwrap().len(), 64);
    }
}
