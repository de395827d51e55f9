//! Flat, sectioned key-value experiment configs. Chosen over a structured
//! format so experiment matrices diff cleanly in review.
//!
//! ```text
//! [experiment]
//! task = inpaint
//! output_dir = runs/demo
//!
//! [train]
//! lambda1 = 0.01
//! ```

use std::collections::HashMap;

/// Parse/lookup error with the offending line number where one applies.
#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    /// section -> key -> (value, line number)
    sections: HashMap<String, HashMap<String, (String, usize)>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut cfg = KvConfig::default();
        let mut section = String::from("");
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError {
                    message: format!("unterminated section header `{line}`"),
                    line: Some(line_no),
                })?;
                section = name.trim().to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError {
                message: format!("expected `key = value`, got `{line}`"),
                line: Some(line_no),
            })?;
            cfg.sections
                .entry(section.clone())
                .or_default()
                .insert(key.trim().to_string(), (value.trim().to_string(), line_no));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            message: format!("cannot read {}: {e}", path.display()),
            line: None,
        })?;
        Self::parse(&text)
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections
            .get(section)
            .map(|s| s.contains_key(key))
            .unwrap_or(false)
    }

    pub fn get(&self, section: &str, key: &str) -> ConfigResult<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(v, _)| v.as_str())
            .ok_or(ConfigError {
                message: format!("missing `{key}` in section [{section}]"),
                line: None,
            })
    }

    pub fn get_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(v, _)| v.as_str())
            .unwrap_or(default)
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|&(_, l)| l)
    }

    pub fn get_f64(&self, section: &str, key: &str) -> ConfigResult<f64> {
        let raw = self.get(section, key)?;
        raw.parse().map_err(|_| ConfigError {
            message: format!("bad float for `{key}`: `{raw}`"),
            line: self.line_of(section, key),
        })
    }

    pub fn get_f64_or(&self, section: &str, key: &str, default: f64) -> ConfigResult<f64> {
        if self.has(section, key) {
            self.get_f64(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn get_usize(&self, section: &str, key: &str) -> ConfigResult<usize> {
        let raw = self.get(section, key)?;
        raw.parse().map_err(|_| ConfigError {
            message: format!("bad integer for `{key}`: `{raw}`"),
            line: self.line_of(section, key),
        })
    }

    pub fn get_usize_or(&self, section: &str, key: &str, default: usize) -> ConfigResult<usize> {
        if self.has(section, key) {
            self.get_usize(section, key)
        } else {
            Ok(default)
        }
    }

    pub fn get_u64_or(&self, section: &str, key: &str, default: u64) -> ConfigResult<u64> {
        if self.has(section, key) {
            let raw = self.get(section, key)?;
            raw.parse().map_err(|_| ConfigError {
                message: format!("bad integer for `{key}`: `{raw}`"),
                line: self.line_of(section, key),
            })
        } else {
            Ok(default)
        }
    }

    pub fn get_bool_or(&self, section: &str, key: &str, default: bool) -> ConfigResult<bool> {
        if !self.has(section, key) {
            return Ok(default);
        }
        match self.get(section, key)? {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(ConfigError {
                message: format!("bad boolean for `{key}`: `{other}`"),
                line: self.line_of(section, key),
            }),
        }
    }

    /// FNV-1a hash of the canonicalized contents, for run manifests.
    pub fn content_hash(&self) -> u64 {
        let mut entries: Vec<String> = Vec::new();
        for (section, keys) in &self.sections {
            for (key, (value, _)) in keys {
                entries.push(format!("{section}.{key}={value}"));
            }
        }
        entries.sort();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in entries {
            for b in e.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_reports_lines() {
        let cfg = KvConfig::parse("[a]\nx = 1\n\n[b]\ny = 2.5\nflag = true\n").unwrap();
        assert_eq!(cfg.get_usize("a", "x").unwrap(), 1);
        assert_eq!(cfg.get_f64("b", "y").unwrap(), 2.5);
        assert!(cfg.get_bool_or("b", "flag", false).unwrap());

        let err = KvConfig::parse("[a]\nbroken line\n").unwrap_err();
        assert_eq!(err.line, Some(2));

        let cfg = KvConfig::parse("[a]\nx = notanumber\n").unwrap();
        let err = cfg.get_f64("a", "x").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn hash_ignores_declaration_order() {
        let a = KvConfig::parse("[s]\nx = 1\ny = 2\n").unwrap();
        let b = KvConfig::parse("[s]\ny = 2\nx = 1\n").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
