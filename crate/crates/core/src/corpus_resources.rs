//! Resource levels of languages and language pairs, and the evaluation-pair filter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// Resource level by amount of bitext with English. Ordered from scarcest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceBucket {
    VeryLow,
    Low,
    Medium,
    High,
}

impl ResourceBucket {
    pub const ALL: [ResourceBucket; 4] =
        [ResourceBucket::VeryLow, ResourceBucket::Low, ResourceBucket::Medium, ResourceBucket::High];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceBucket::VeryLow => "very-low",
            ResourceBucket::Low => "low",
            ResourceBucket::Medium => "medium",
            ResourceBucket::High => "high",
        }
    }
}

impl fmt::Display for ResourceBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Upper bounds are inclusive.
pub fn bucket(count: u64) -> ResourceBucket {
    match count {
        0..=100_000 => ResourceBucket::VeryLow,
        100_001..=1_000_000 => ResourceBucket::Low,
        1_000_001..=100_000_000 => ResourceBucket::Medium,
        _ => ResourceBucket::High,
    }
}

/// Sentence-pair counts with English per language. Serialized as `{lang: count}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceTable {
    pub bitext: BTreeMap<String, u64>,
}

impl ResourceTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        jsonl::read_json(path)
    }

    pub fn count(&self, lang: &str) -> Result<u64> {
        self.bitext.get(lang).copied().ok_or_else(|| Error::UnknownLanguage(lang.to_owned()))
    }

    pub fn lang_bucket(&self, lang: &str) -> Result<ResourceBucket> {
        Ok(bucket(self.count(lang)?))
    }
}

/// Pair resource amount: the smaller of the two languages' counts, and its bucket.
pub fn pair_resource(table: &ResourceTable, x: &str, y: &str) -> Result<(u64, ResourceBucket)> {
    let rho = table.count(x)?.min(table.count(y)?);
    Ok((rho, bucket(rho)))
}

/// Pairs whose baseline score is strictly above `threshold`.
pub fn filter_pairs(baseline_scores: &BTreeMap<(String, String), f64>, threshold: f64) -> BTreeSet<(String, String)> {
    baseline_scores.iter().filter(|(_, &s)| s > threshold).map(|(k, _)| k.clone()).collect()
}
