//! Flat `key = value` config files.
//!
//! One entry per line, `#` starts a comment line, values never span lines.
//! Readers take keys one by one; [`KvReader::finish`] rejects anything left
//! over, so typos in config files fail loudly instead of being ignored.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct KvReader {
    map: BTreeMap<String, String>,
}

impl KvReader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KvReader { map })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    pub fn str_or(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    pub fn str_required(&mut self, key: &str) -> Result<String> {
        self.required(key)
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_scalar(key, &v),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_scalar(key, &v),
        }
    }

    pub fn i64_or(&mut self, key: &str, default: i64) -> Result<i64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_scalar(key, &v),
        }
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_scalar(key, &v),
        }
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                other => Err(Error::config(format!("key `{key}`: expected bool, got {other:?}"))),
            },
        }
    }

    pub fn f64_list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(key, &v),
        }
    }

    pub fn u64_list_or(&mut self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(key, &v),
        }
    }

    pub fn str_list_or(&mut self, key: &str, default: &[&str]) -> Vec<String> {
        match self.take(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        }
    }

    /// Rejects unknown keys; call after all expected keys have been read.
    pub fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.map.keys().map(|s| s.as_str()).collect();
            Err(Error::config(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        Error::config(format!(
            "key `{key}`: cannot parse {v:?} as {}",
            std::any::type_name::<T>()
        ))
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown() {
        let mut kv = KvReader::parse("a = 3\n# comment\nb = 1.5, 2.5\n").unwrap();
        assert_eq!(kv.u64_or("a", 0).unwrap(), 3);
        assert_eq!(kv.f64_list_or("b", &[]).unwrap(), vec![1.5, 2.5]);
        kv.finish().unwrap();

        let kv = KvReader::parse("a = 3\nbogus = 1\n").unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(KvReader::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn type_errors_name_the_key() {
        let mut kv = KvReader::parse("n = soup\n").unwrap();
        let err = kv.u64_or("n", 0).unwrap_err().to_string();
        assert!(err.contains('n') && err.contains("soup"), "{err}");
    }
}
