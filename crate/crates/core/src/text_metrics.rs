//! ChrF and BLEU scoring, sentence-level ChrF deltas between a compressed and
//! a baseline system, and the Losing/Winning/Neutral partition built on them.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention_alignment::AttentionMatrix;
use crate::error::{Error, Result};
use crate::jsonl;

/// One source sentence with its reference and the two systems' outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub pair_id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub source: String,
    pub reference: String,
    pub hyp_base: String,
    pub hyp_comp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_base: Option<AttentionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_comp: Option<AttentionMatrix>,
}

impl TranslationRecord {
    pub fn validate(&self) -> Result<()> {
        if self.src_lang.is_empty() || self.tgt_lang.is_empty() {
            return Err(Error::InvalidArgument(format!("record '{}': empty language code", self.pair_id)));
        }
        if self.reference.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("record '{}': empty reference", self.pair_id)));
        }
        Ok(())
    }
}

/// Reads a corpus file, one validated record per line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<TranslationRecord>> {
    let path = path.as_ref();
    let records: Vec<TranslationRecord> = jsonl::read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| Error::schema(path.display().to_string(), i + 1, e.to_string()))?;
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeltaBucket {
    Losing,
    Neutral,
    Winning,
}

impl fmt::Display for DeltaBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaBucket::Losing => "losing",
            DeltaBucket::Neutral => "neutral",
            DeltaBucket::Winning => "winning",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaOutcome {
    pub delta: f64,
    pub bucket: DeltaBucket,
}

/// ChrF parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfParams {
    pub max_n: usize,
    pub beta: f64,
}

impl Default for ChrfParams {
    fn default() -> Self {
        Self { max_n: 6, beta: 3.0 }
    }
}

fn ngram_counts<T: Eq + Hash>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || items.len() < n {
        return counts;
    }
    for w in items.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// (clipped matches, hypothesis n-grams, reference n-grams)
fn overlap<T: Eq + Hash>(reference: &[T], hypothesis: &[T], n: usize) -> (usize, usize, usize) {
    let r = ngram_counts(reference, n);
    let h = ngram_counts(hypothesis, n);
    let matches = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, h.values().sum(), r.values().sum())
}

/// Character n-gram F-score on a 0-100 scale.
///
/// Leading and trailing whitespace is stripped; internal whitespace counts as
/// characters. Precision and recall are averaged over the orders for which the
/// reference has at least one n-gram.
pub fn chrf(reference: &str, hypothesis: &str, params: ChrfParams) -> Result<f64> {
    let r: Vec<char> = reference.trim().chars().collect();
    let h: Vec<char> = hypothesis.trim().chars().collect();
    if r.is_empty() {
        return Err(Error::Empty("chrF reference".into()));
    }
    if params.max_n == 0 || !(params.beta > 0.0) {
        return Err(Error::InvalidArgument(format!("bad chrF parameters {params:?}")));
    }
    let (mut p_sum, mut r_sum, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=params.max_n {
        let (m, hyp_total, ref_total) = overlap(&r, &h, n);
        if ref_total == 0 {
            continue;
        }
        orders += 1;
        if hyp_total > 0 {
            p_sum += m as f64 / hyp_total as f64;
        }
        r_sum += m as f64 / ref_total as f64;
    }
    let p = p_sum / orders as f64;
    let rc = r_sum / orders as f64;
    let b2 = params.beta * params.beta;
    if p + rc == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (1.0 + b2) * p * rc / (b2 * p + rc))
}

/// Corpus BLEU on a 0-100 scale over pre-tokenized sentences.
///
/// Orders above one with no clipped match use add-one smoothing on both the
/// match count and the n-gram total.
pub fn bleu<S: AsRef<str> + Eq + Hash>(references: &[Vec<S>], hypotheses: &[Vec<S>], max_n: usize) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Empty("BLEU corpus".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("BLEU max_n must be positive".into()));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Empty(format!("BLEU reference {i}")));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut ref_len, mut hyp_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        ref_len += r.len();
        hyp_len += h.len();
        for n in 1..=max_n {
            let (m, t, _) = overlap(r, h, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = (matches[n - 1] as f64, totals[n - 1] as f64);
        let p = if n > 1 && matches[n - 1] == 0 { 1.0 / (t + 1.0) } else { m / t };
        log_sum += p.ln();
    }
    let bp = if hyp_len < ref_len { (1.0 - ref_len as f64 / hyp_len as f64).exp() } else { 1.0 };
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

/// How sentences are split into BLEU tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    #[default]
    Whitespace,
    /// Every non-whitespace character is a token.
    Char,
}

impl Tokenizer {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
            Tokenizer::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        }
    }
}

impl FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Tokenizer::Whitespace),
            "char" => Ok(Tokenizer::Char),
            _ => Err(Error::InvalidArgument(format!("unknown tokenizer '{s}'"))),
        }
    }
}

pub fn classify_delta(delta: f64, threshold: f64) -> DeltaBucket {
    if delta < -threshold {
        DeltaBucket::Losing
    } else if delta > threshold {
        DeltaBucket::Winning
    } else {
        DeltaBucket::Neutral
    }
}

/// Sentence ChrF difference (compressed minus baseline, on a 0-1 scale) and
/// its bucket for every record.
pub fn delta_partition(records: &[TranslationRecord], threshold: f64, params: ChrfParams) -> Result<Vec<DeltaOutcome>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("delta threshold must be positive, got {threshold}")));
    }
    records
        .par_iter()
        .map(|r| {
            let comp = chrf(&r.reference, &r.hyp_comp, params)?;
            let base = chrf(&r.reference, &r.hyp_base, params)?;
            let delta = comp / 100.0 - base / 100.0;
            Ok(DeltaOutcome { delta, bucket: classify_delta(delta, threshold) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        Tokenizer::Whitespace.tokenize(s)
    }

    fn rec(reference: &str, base: &str, comp: &str) -> TranslationRecord {
        TranslationRecord {
            pair_id: "0".into(),
            src_lang: "en".into(),
            tgt_lang: "fr".into(),
            source: "s".into(),
            reference: reference.into(),
            hyp_base: base.into(),
            hyp_comp: comp.into(),
            attn_base: None,
            attn_comp: None,
        }
    }

    #[test]
    fn chrf_edges() {
        let p = ChrfParams::default();
        assert_eq!(chrf("the cat sat", "the cat sat", p).unwrap(), 100.0);
        assert_eq!(chrf("the cat", "", p).unwrap(), 0.0);
        assert!(chrf("   ", "x", p).is_err());
        assert_eq!(chrf(" ab ", "ab", p).unwrap(), 100.0);
    }

    #[test]
    fn chrf_two_orders() {
        // unigrams 2/3 both ways, bigrams 1/2 both ways: P = R = 7/12, so F = 7/12.
        let v = chrf("abc", "abd", ChrfParams { max_n: 2, beta: 3.0 }).unwrap();
        assert!((v - 700.0 / 12.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let refs = vec![toks("a b c d e"), toks("x y")];
        assert!((bleu(&refs, &refs, 4).unwrap() - 100.0).abs() < 1e-9);
        let hyps = vec![toks("p q r"), toks("s")];
        assert_eq!(bleu(&refs, &hyps, 4).unwrap(), 0.0);
    }

    #[test]
    fn bleu_short_hypothesis() {
        // p1..p3 = 1, p4 smoothed to 1/1, BP = exp(1 - 4/3).
        let v = bleu(&[toks("a b c d")], &[toks("a b c")], 4).unwrap();
        let expected = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn bleu_errors() {
        let r = vec![toks("a")];
        assert!(bleu(&r, &[], 4).is_err());
        assert!(bleu::<String>(&[], &[], 4).is_err());
        assert!(bleu(&[vec![]], &[toks("a")], 4).is_err());
    }

    #[test]
    fn delta_buckets() {
        let p = ChrfParams::default();
        let same = delta_partition(&[rec("abc def", "abc dxx", "abc dxx")], 0.5, p).unwrap();
        assert_eq!(same[0], DeltaOutcome { delta: 0.0, bucket: DeltaBucket::Neutral });
        assert_eq!(classify_delta(-0.6, 0.5), DeltaBucket::Losing);
        assert_eq!(classify_delta(0.7, 0.5), DeltaBucket::Winning);
        assert_eq!(classify_delta(0.5, 0.5), DeltaBucket::Neutral);
        assert_eq!(classify_delta(-0.5, 0.5), DeltaBucket::Neutral);
        let lose = delta_partition(&[rec("hello world", "hello world", "zzzz")], 0.5, p).unwrap();
        assert_eq!(lose[0].bucket, DeltaBucket::Losing);
        assert!(delta_partition(&[], 0.0, p).is_err());
    }

    #[test]
    fn char_tokenizer_drops_spaces() {
        assert_eq!(Tokenizer::Char.tokenize("ab c"), vec!["a", "b", "c"]);
    }
}
