use std::path::Path;

use gifguard_core::Label;
use serde::{Deserialize, Serialize};

/// A search tag and the label its results are presumed to carry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashtagSeed {
    pub tag: String,
    pub query_label: Label,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("seed file line {line}: {message}")]
pub struct SeedError {
    pub line: usize,
    pub message: String,
}

impl HashtagSeed {
    pub fn new(tag: &str, query_label: Label) -> Result<Self, String> {
        if tag.is_empty() {
            return Err("empty tag".into());
        }
        if tag.starts_with('#') {
            return Err(format!("tag {tag:?} has a leading '#'"));
        }
        if tag.chars().any(char::is_whitespace) {
            return Err(format!("tag {tag:?} contains whitespace"));
        }
        if tag.chars().any(char::is_uppercase) {
            return Err(format!("tag {tag:?} is not lowercase"));
        }
        Ok(HashtagSeed { tag: tag.to_string(), query_label })
    }
}

/// Parses `<tag>,<label>` lines. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_seeds(text: &str) -> Result<Vec<HashtagSeed>, SeedError> {
    let mut seeds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| SeedError { line: i + 1, message };
        let (tag, label) = line.split_once(',').ok_or_else(|| err("expected <tag>,<label>".into()))?;
        let label: Label = label.trim().parse().map_err(|e: gifguard_core::label::UnknownLabel| err(e.to_string()))?;
        seeds.push(HashtagSeed::new(tag.trim(), label).map_err(err)?);
    }
    Ok(seeds)
}

pub fn load_seeds(path: &Path) -> Result<Vec<HashtagSeed>, SeedError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SeedError { line: 0, message: format!("{}: {e}", path.display()) })?;
    parse_seeds(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_labels() {
        let text = "# cyberbullying seeds\nbullyingiscool,cyberbullying\n\n goodwork , non_cyberbullying \n";
        let seeds = parse_seeds(text).unwrap();
        assert_eq!(
            seeds,
            vec![
                HashtagSeed { tag: "bullyingiscool".into(), query_label: Label::Cyberbullying },
                HashtagSeed { tag: "goodwork".into(), query_label: Label::NonCyberbullying },
            ]
        );
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(parse_seeds("bullying").unwrap_err().line, 1);
        assert!(parse_seeds("Bullying,cyberbullying").is_err());
        assert!(parse_seeds("good work,non_cyberbullying").is_err());
        assert!(parse_seeds("x,maybe").is_err());
        assert!(parse_seeds(",cyberbullying").is_err());
    }
}
