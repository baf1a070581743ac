//! Rank-order character n-gram language identification and off-target rates.
//!
//! Text is lowercased, digits become `0`, and each word is padded as `_word_`
//! before counting 1- to 5-grams. A language profile keeps the `k` most
//! frequent n-grams; a text is assigned to the profile with the smallest
//! out-of-place distance.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::text_metrics::TranslationRecord;

pub const DEFAULT_K: usize = 300;
pub const MAX_NGRAM: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub lang: String,
    /// (n-gram, rank) with ranks 0..len-1 in order.
    pub ranked_ngrams: Vec<(String, usize)>,
}

impl LanguageProfile {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, (g, r)) in self.ranked_ngrams.iter().enumerate() {
            if *r != i {
                return Err(Error::InvalidArgument(format!("profile '{}': rank {r} at position {i}", self.lang)));
            }
            if !seen.insert(g) {
                return Err(Error::InvalidArgument(format!("profile '{}': duplicate n-gram '{g}'", self.lang)));
            }
        }
        Ok(())
    }

    fn rank_map(&self) -> HashMap<&str, usize> {
        self.ranked_ngrams.iter().map(|(g, r)| (g.as_str(), *r)).collect()
    }
}

/// Profiles file contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub k: usize,
    pub profiles: Vec<LanguageProfile>,
}

impl ProfileSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let set: ProfileSet = jsonl::read_json(path)?;
        for p in &set.profiles {
            p.validate().map_err(|e| Error::schema(path.display().to_string(), 0, e.to_string()))?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        jsonl::write_json(path, self)
    }
}

fn normalize(text: &str) -> String {
    text.chars().flat_map(char::to_lowercase).map(|c| if c.is_numeric() { '0' } else { c }).collect()
}

/// Adds the 1..=5-gram counts of `text` to `counts`.
pub fn count_ngrams(text: &str, counts: &mut HashMap<String, usize>) {
    let norm = normalize(text);
    for word in norm.split(|c: char| !(c.is_alphanumeric() || c == '\'')).filter(|w| !w.is_empty()) {
        let padded: Vec<char> = std::iter::once('_').chain(word.chars()).chain(std::iter::once('_')).collect();
        for n in 1..=MAX_NGRAM.min(padded.len()) {
            for w in padded.windows(n) {
                *counts.entry(w.iter().collect()).or_insert(0) += 1;
            }
        }
    }
}

/// The `k` most frequent n-grams, ties broken lexicographically.
fn top_k(counts: HashMap<String, usize>, k: usize) -> Vec<(String, usize)> {
    let mut items: Vec<(String, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.truncate(k);
    items.into_iter().enumerate().map(|(rank, (g, _))| (g, rank)).collect()
}

pub fn build_profile(lang: &str, texts: &[impl AsRef<str>], k: usize) -> LanguageProfile {
    let mut counts = HashMap::new();
    for t in texts {
        count_ngrams(t.as_ref(), &mut counts);
    }
    LanguageProfile { lang: lang.to_owned(), ranked_ngrams: top_k(counts, k) }
}

pub fn train_profiles(corpora: &BTreeMap<String, Vec<String>>, k: usize) -> Result<Vec<LanguageProfile>> {
    if k < 1 {
        return Err(Error::InvalidArgument("profile size k must be at least 1".into()));
    }
    if corpora.len() < 2 {
        return Err(Error::InvalidArgument("at least two languages are needed".into()));
    }
    if let Some((lang, _)) = corpora.iter().find(|(_, texts)| texts.iter().all(|t| t.trim().is_empty())) {
        return Err(Error::Empty(format!("training corpus for '{lang}'")));
    }
    Ok(corpora.par_iter().map(|(lang, texts)| build_profile(lang, texts, k)).collect())
}

/// Reads `<lang>.txt` files (one sentence per line) from a directory.
pub fn read_corpora_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let dir = dir.as_ref();
    let mut corpora = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let lines = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect();
        corpora.insert(lang.to_owned(), lines);
    }
    Ok(corpora)
}

/// Most likely language of `text` and its out-of-place distance.
pub fn identify(profiles: &[LanguageProfile], text: &str) -> Result<(String, usize)> {
    if profiles.is_empty() {
        return Err(Error::Empty("language profiles".into()));
    }
    if text.trim().is_empty() {
        return Err(Error::Empty("text to identify".into()));
    }
    let k = profiles.iter().map(|p| p.ranked_ngrams.len()).max().unwrap_or(0).max(1);
    let mut counts = HashMap::new();
    count_ngrams(text, &mut counts);
    if counts.is_empty() {
        return Err(Error::Empty("text has no letters or digits".into()));
    }
    let doc = top_k(counts, k);
    let mut best: Option<(String, usize)> = None;
    for p in profiles {
        let ranks = p.rank_map();
        let dist: usize = doc.iter().map(|(g, r)| ranks.get(g.as_str()).map_or(k, |pr| pr.abs_diff(*r))).sum();
        let better = match &best {
            None => true,
            Some((lang, d)) => dist < *d || (dist == *d && p.lang < *lang),
        };
        if better {
            best = Some((p.lang.clone(), dist));
        }
    }
    Ok(best.expect("at least one profile"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Base,
    Comp,
}

/// Per-record outcome of the off-target check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffTarget {
    /// Reference not identified as the target language; excluded.
    Excluded,
    OnTarget,
    OffTarget,
}

pub fn off_target_status(profiles: &[LanguageProfile], r: &TranslationRecord, which: Which) -> OffTarget {
    match identify(profiles, &r.reference) {
        Ok((lang, _)) if lang == r.tgt_lang => {}
        _ => return OffTarget::Excluded,
    }
    let hyp = match which {
        Which::Base => &r.hyp_base,
        Which::Comp => &r.hyp_comp,
    };
    // An output with nothing identifiable is not a target-language translation.
    match identify(profiles, hyp) {
        Ok((lang, _)) if lang == r.tgt_lang => OffTarget::OnTarget,
        _ => OffTarget::OffTarget,
    }
}

/// Fraction of off-target hypotheses among records whose reference is
/// identified as the target language, and how many records that was.
pub fn off_target_rate(
    records: &[TranslationRecord],
    profiles: &[LanguageProfile],
    which: Which,
) -> Result<(f64, usize)> {
    for r in records {
        if !profiles.iter().any(|p| p.lang == r.tgt_lang) {
            return Err(Error::UnknownLanguage(r.tgt_lang.clone()));
        }
    }
    let statuses: Vec<OffTarget> = records.par_iter().map(|r| off_target_status(profiles, r, which)).collect();
    let evaluated = statuses.iter().filter(|s| **s != OffTarget::Excluded).count();
    let off = statuses.iter().filter(|s| **s == OffTarget::OffTarget).count();
    let rate = if evaluated == 0 { 0.0 } else { off as f64 / evaluated as f64 };
    Ok((rate, evaluated))
}
