//! Flat `key=value` run-configuration files.
//!
//! The format is deliberately trivial — one assignment per line, `#`
//! comments, no sections, no quoting — so any script can read and write it.
//! Values stay strings here; whoever consumes a key parses it to the type
//! that key needs.

use std::collections::BTreeMap;

use thiserror::Error;

/// Keys a configuration file may assign. Anything else is a typo, and typos
/// are rejected rather than silently ignored.
pub const KNOWN_KEYS: &[&str] = &[
    "batch", "beta", "ci", "data", "draws", "embed", "epochs", "episodes", "hidden", "latent",
    "lr", "model", "n", "out", "p_fail", "s", "seed", "sequences", "workers",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key=value`, found no `=`")]
    MissingSeparator { line: usize },
    #[error("line {line}: empty key")]
    EmptyKey { line: usize },
    #[error("line {line}: key {key:?} may use only ASCII letters, digits, `_`, `-`, and `.`")]
    BadKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
}

/// Parses configuration text into a key → value map.
///
/// Blank lines and lines starting with `#` are skipped; everything after the
/// first `=` (both sides trimmed) is the value, which may be empty and may
/// itself contain `=`. Duplicate keys are an error — last-one-wins is how
/// stale settings survive unnoticed.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::MissingSeparator { line });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::EmptyKey { line });
        }
        if !key.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')) {
            return Err(ConfigError::BadKey { line, key: key.to_string() });
        }
        if map.contains_key(key) {
            return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// The first key in `map` that is not in [`KNOWN_KEYS`], if any.
pub fn first_unknown_key(map: &BTreeMap<String, String>) -> Option<&str> {
    map.keys().map(String::as_str).find(|k| !KNOWN_KEYS.contains(k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments_comments_and_blank_lines() {
        let text = "# run settings\n\nseed = 7\nlr=0.0005\n  epochs =150\ns=put red close_to green\n";
        let map = parse_config(text).unwrap();
        assert_eq!(map.len(), 4);
        assert_eq!(map["seed"], "7");
        assert_eq!(map["lr"], "0.0005");
        assert_eq!(map["epochs"], "150");
        assert_eq!(map["s"], "put red close_to green");
    }

    #[test]
    fn values_keep_embedded_equals_signs_and_may_be_empty() {
        let map = parse_config("data=runs/a=b.jsonl\nout=\n").unwrap();
        assert_eq!(map["data"], "runs/a=b.jsonl");
        assert_eq!(map["out"], "");
    }

    #[test]
    fn rejects_malformed_lines_with_their_line_numbers() {
        assert_eq!(
            parse_config("seed=1\njust some words\n"),
            Err(ConfigError::MissingSeparator { line: 2 }),
        );
        assert_eq!(parse_config("\n\n=5\n"), Err(ConfigError::EmptyKey { line: 3 }));
        assert_eq!(
            parse_config("p fail=0.2\n"),
            Err(ConfigError::BadKey { line: 1, key: "p fail".into() }),
        );
        assert_eq!(
            parse_config("seed=1\n# fine\nseed=2\n"),
            Err(ConfigError::DuplicateKey { line: 3, key: "seed".into() }),
        );
    }

    #[test]
    fn unknown_keys_are_reported_in_sorted_order() {
        let map = parse_config("zzz=1\nseed=2\naaa=3\n").unwrap();
        assert_eq!(first_unknown_key(&map), Some("aaa"));
        let ok = parse_config("seed=2\nbeta=0.6\n").unwrap();
        assert_eq!(first_unknown_key(&ok), None);
    }

    #[test]
    fn every_documented_key_passes_its_own_validation() {
        for key in KNOWN_KEYS {
            let map = parse_config(&format!("{key}=x\n")).unwrap();
            assert_eq!(first_unknown_key(&map), None, "{key}");
        }
    }
}
