use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three experimental conditions compared by a suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Baseline,
    ImageRag,
    TextRag,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::ImageRag, Condition::TextRag];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::ImageRag => "image-rag",
            Condition::TextRag => "text-rag",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "image-rag" => Ok(Condition::ImageRag),
            "text-rag" => Ok(Condition::TextRag),
            other => Err(format!("unknown condition `{other}` (expected baseline, image-rag or text-rag)")),
        }
    }
}
