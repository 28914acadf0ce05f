//! Flat `key=value` text records.
//!
//! A file holds one or more records separated by blank lines. Lines starting
//! with `#` are comments. Keys keep their insertion order on output.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("bad value for `{key}`: {raw:?}")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

pub fn write_records(records: &[Record]) -> String {
    records
        .iter()
        .map(Record::to_text)
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_records(text: &str) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    let mut current = Record::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !current.entries.is_empty() {
                records.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        current.push(k.trim(), v.trim());
    }
    if !current.entries.is_empty() {
        records.push(current);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_record_round_trip() {
        let mut a = Record::new();
        a.push("tau", 0.25).push("alpha", 0.1);
        let mut b = Record::new();
        b.push("tau", 0.5);
        let text = write_records(&[a.clone(), b.clone()]);
        assert_eq!(parse_records(&text).unwrap(), vec![a, b]);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(parse_records("tau 0.3\n").is_err());
    }

    #[test]
    fn comments_are_skipped() {
        let r = parse_records("# header\ntau=1\n").unwrap();
        assert_eq!(r[0].parse::<f64>("tau").unwrap(), 1.0);
    }
}
