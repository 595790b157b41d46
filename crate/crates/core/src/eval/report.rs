use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// One evaluation suite's headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite: String,
    pub metric: String,
    pub per_aspect: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    /// Hex SHA-256 of the canonical JSON of the configuration that produced it.
    pub config_hash: String,
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Hex SHA-256 of `value`'s JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

impl EvalReport {
    /// Two-column text rendering: aspect, value, count.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} ({})\n", self.suite, self.metric);
        for (aspect, v) in &self.per_aspect {
            let count = self.counts.get(aspect).map(|c| format!("  n={c}")).unwrap_or_default();
            out.push_str(&format!("  {aspect:<20} {v:>10.4}{count}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&BTreeMap::from([("k", 1)])).unwrap();
        assert_eq!(a, config_hash(&BTreeMap::from([("k", 1)])).unwrap());
        assert_ne!(a, config_hash(&BTreeMap::from([("k", 2)])).unwrap());
        assert_eq!(a.len(), 64);
    }
}
