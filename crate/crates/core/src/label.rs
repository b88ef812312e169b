use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Class names in report order. Index 0 is always the positive class.
pub const CLASS_NAMES: [&str; 2] = ["cyberbullying", "non_cyberbullying"];

/// Binary GIF label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Cyberbullying,
    NonCyberbullying,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Cyberbullying, Label::NonCyberbullying];

    pub fn index(self) -> usize {
        match self {
            Label::Cyberbullying => 0,
            Label::NonCyberbullying => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cyberbullying" | "cyber" | "bullying" => Ok(Label::Cyberbullying),
            "non_cyberbullying" | "noncyberbullying" | "non" => Ok(Label::NonCyberbullying),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}
