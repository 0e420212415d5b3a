use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, DesignError};

/// A value from outside the model: inserted into narratives verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UserValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for UserValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserValue::Number(v) => write!(f, "{v}"),
            UserValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    sample_id: String,
    values: HashMap<String, UserValue>,
}

/// User-source feature values keyed by sample id, then original feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserValues {
    by_sample: HashMap<String, HashMap<String, UserValue>>,
}

impl UserValues {
    pub fn from_jsonl(text: &str) -> Result<Self, DesignError> {
        let mut by_sample = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line).map_err(|e| DesignError::UserValues {
                line: i + 1,
                message: e.to_string(),
            })?;
            if by_sample
                .insert(parsed.sample_id.clone(), parsed.values)
                .is_some()
            {
                return Err(DesignError::UserValues {
                    line: i + 1,
                    message: format!("duplicate sample id `{}`", parsed.sample_id),
                });
            }
        }
        Ok(Self { by_sample })
    }

    pub fn load(path: &Path) -> Result<Self, DesignError> {
        Self::from_jsonl(&read_file(path)?)
    }

    pub fn get(&self, sample_id: &str, feature: &str) -> Option<&UserValue> {
        self.by_sample.get(sample_id)?.get(feature)
    }

    pub fn insert(&mut self, sample_id: &str, feature: &str, value: UserValue) {
        self.by_sample
            .entry(sample_id.to_string())
            .or_default()
            .insert(feature.to_string(), value);
    }
}
