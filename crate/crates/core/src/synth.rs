//! Synthetic languages and a self-contained demo workspace.
//!
//! Each synthetic language builds words from its own syllable inventory, so
//! character n-gram profiles separate them cleanly. Every language has a
//! lexicon over the same word slots; the toy model translates slot ids, and
//! its output is rendered with the target language's lexicon.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention_alignment::AttentionMatrix;
use crate::compression::{magnitude_prune, CompressionMethod, PruneStrategy};
use crate::corpus_resources::ResourceTable;
use crate::error::{Error, Result};
use crate::gender_fairness::{Gender, GenderRecord, PredictedGender, Stereotype};
use crate::jsonl;
use crate::lang_id::{self, ProfileSet};
use crate::reporting::{AuditConfig, SweepItem};
use crate::sense_bias::SenseRecord;
use crate::tensor_store::{save_weights, WeightSet};
use crate::text_metrics::TranslationRecord;
use crate::toy_transformer::{make_demo_weights, DecodeResult, Hooks, ModelConfig, Seq2Seq, SplitMix64};

/// Syllable inventories, one per synthetic language.
pub const INVENTORIES: &[(&str, &[&str])] = &[
    ("en", &["th", "e", "an", "ing", "er", "wh", "o", "st", "ou", "ght", "ea", "sh"]),
    ("de", &["sch", "ei", "ung", "ch", "ber", "ge", "ie", "tz", "au", "en", "st", "ck"]),
    ("fr", &["ou", "eau", "qu", "ais", "é", "on", "ille", "ç", "ai", "que", "oi", "è"]),
    ("fi", &["kk", "ää", "ö", "ssa", "lla", "ja", "tt", "uu", "y", "nen", "ki", "ii"]),
    ("sw", &["mb", "wa", "ku", "nga", "ji", "zi", "ny", "ha", "ki", "tu", "we", "ndo"]),
];

pub fn inventory(lang: &str) -> Result<&'static [&'static str]> {
    INVENTORIES.iter().find(|(l, _)| *l == lang).map(|(_, s)| *s).ok_or_else(|| Error::UnknownLanguage(lang.to_owned()))
}

fn lang_seed(lang: &str) -> u64 {
    lang.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// A word generator over one syllable inventory.
#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    pub code: String,
    syllables: &'static [&'static str],
}

impl SyntheticLanguage {
    pub fn new(code: &str) -> Result<Self> {
        Ok(Self { code: code.to_owned(), syllables: inventory(code)? })
    }

    pub fn word(&self, rng: &mut SplitMix64) -> String {
        let n = 1 + (rng.next_u64() % 3) as usize;
        (0..n).map(|_| self.syllables[(rng.next_u64() % self.syllables.len() as u64) as usize]).collect()
    }

    pub fn sentence(&self, rng: &mut SplitMix64, min_words: usize, max_words: usize) -> String {
        let n = min_words + (rng.next_u64() % (max_words - min_words + 1) as u64) as usize;
        (0..n).map(|_| self.word(rng)).collect::<Vec<_>>().join(" ")
    }

    /// `slots` distinct words, fixed per language code.
    pub fn lexicon(&self, slots: usize) -> Vec<String> {
        let mut rng = SplitMix64::new(lang_seed(&self.code));
        let mut words: Vec<String> = Vec::with_capacity(slots);
        while words.len() < slots {
            let w = self.word(&mut rng);
            if w.chars().count() >= 2 && !words.contains(&w) {
                words.push(w);
            }
        }
        words
    }
}

/// Settings of the generated demo workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoOptions {
    pub seed: u64,
    pub sentences: usize,
    pub prune_ratio: f64,
    pub strategy: PruneStrategy,
    pub word_slots: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub pairs: Vec<(String, String)>,
}

impl Default for DemoOptions {
    fn default() -> Self {
        let pairs = [("en", "de"), ("de", "en"), ("en", "sw"), ("fr", "fi")];
        Self {
            seed: 17,
            sentences: 64,
            prune_ratio: 0.3,
            strategy: PruneStrategy::TransformerLayer,
            word_slots: 24,
            d_model: 32,
            n_heads: 4,
            layers: 2,
            pairs: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

/// Files written by [`build_demo`].
#[derive(Debug, Clone)]
pub struct DemoPaths {
    pub dir: PathBuf,
    pub model_config: PathBuf,
    pub weights: PathBuf,
    pub pruned_weights: PathBuf,
    pub corpus: PathBuf,
    pub resources: PathBuf,
    pub lid_corpora: PathBuf,
    pub profiles: PathBuf,
    pub gender: PathBuf,
    pub senses: PathBuf,
    pub audit_config: PathBuf,
    pub sweep_items: PathBuf,
}

/// Resource counts for the synthetic languages, one per bucket and then some.
pub fn demo_resources() -> ResourceTable {
    let counts = [("en", 300_000_000u64), ("de", 90_000_000), ("fr", 40_000_000), ("fi", 800_000), ("sw", 60_000)];
    ResourceTable { bitext: counts.iter().map(|(l, c)| (l.to_string(), *c)).collect() }
}

const SPECIALS: usize = 3;

/// Model config for the demo: ids 0..3 are pad/bos/eos, the rest word slots.
pub fn demo_model_config(opts: &DemoOptions) -> ModelConfig {
    ModelConfig {
        vocab_size: SPECIALS + opts.word_slots,
        d_model: opts.d_model,
        n_heads: opts.n_heads,
        n_enc_layers: opts.layers,
        n_dec_layers: opts.layers,
        d_ff: 2 * opts.d_model,
        max_len: 16,
        bos: 1,
        eos: 2,
        pad: 0,
        vocab: None,
    }
}

fn render(tokens: &[u32], lexicon: &[String]) -> String {
    tokens
        .iter()
        .filter(|&&t| t as usize >= SPECIALS)
        .map(|&t| lexicon[t as usize - SPECIALS].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes a complete, consistent demo workspace into `dir`: a model and its
/// pruned copy, a decoded corpus with attention, resources, language
/// profiles, labeled gender and word-sense records, and an audit config.
///
/// References are the baseline outputs with a share of words substituted, so
/// the baseline scores well and the compressed system is measured against
/// something close to it. Within each pair, every eighth compressed output is
/// rendered in the source language to simulate off-target translation, another
/// eighth is replaced by unrelated target-language words, and another eighth
/// has a failed baseline instead, so all report sections have content.
pub fn build_demo(dir: impl AsRef<Path>, opts: &DemoOptions) -> Result<DemoPaths> {
    let dir = dir.as_ref().to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg = demo_model_config(opts);
    let base_ws = make_demo_weights(&cfg, opts.seed);
    let comp_ws = magnitude_prune(&base_ws, opts.prune_ratio, opts.strategy)?;

    let mut langs: Vec<&str> = opts.pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    langs.sort_unstable();
    langs.dedup();
    let lexicons: BTreeMap<&str, Vec<String>> =
        langs.iter().map(|l| Ok((*l, SyntheticLanguage::new(l)?.lexicon(opts.word_slots)))).collect::<Result<_>>()?;

    let base = Seq2Seq::new(&cfg, &base_ws)?;
    let comp = Seq2Seq::new(&cfg, &comp_ws)?;
    let mut rng = SplitMix64::new(opts.seed ^ 0x5eed);
    let mut records = Vec::with_capacity(opts.sentences);
    let mut sweep_items = Vec::with_capacity(opts.sentences);
    let sources: Vec<Vec<u32>> = (0..opts.sentences)
        .map(|_| {
            let len = 3 + (rng.next_u64() % 6) as usize;
            let mut src: Vec<u32> =
                (0..len).map(|_| (SPECIALS as u64 + rng.next_u64() % opts.word_slots as u64) as u32).collect();
            src.push(cfg.eos);
            src
        })
        .collect();
    let decoded: Vec<(DecodeResult, DecodeResult)> = sources
        .par_iter()
        .map(|src| Ok((base.decode(src, &Hooks::default())?, comp.decode(src, &Hooks::default())?)))
        .collect::<Result<_>>()?;
    for (i, (src, (b, c))) in sources.into_iter().zip(decoded).enumerate() {
        let (src_lang, tgt_lang) = &opts.pairs[i % opts.pairs.len()];
        let len = src.len() - 1;
        let tgt_lex = &lexicons[tgt_lang.as_str()];
        let src_lex = &lexicons[src_lang.as_str()];

        let mut ref_tokens: Vec<u32> = b.tokens.iter().copied().filter(|&t| t as usize >= SPECIALS).collect();
        for t in ref_tokens.iter_mut() {
            if rng.next_u64().is_multiple_of(5) {
                *t = (SPECIALS as u64 + rng.next_u64() % opts.word_slots as u64) as u32;
            }
        }
        if ref_tokens.is_empty() {
            ref_tokens = src[..src.len() - 1].to_vec();
        }
        let mut gibberish = || -> Vec<u32> {
            (0..len).map(|_| (SPECIALS as u64 + rng.next_u64() % opts.word_slots as u64) as u32).collect()
        };
        let (mut hyp_base, mut hyp_comp) = (render(&b.tokens, tgt_lex), render(&c.tokens, tgt_lex));
        match (i / opts.pairs.len()) % 8 {
            // off-target: the compressed system answers in the source language
            7 => hyp_comp = render(&c.tokens, src_lex),
            // on-target hallucination
            3 => hyp_comp = render(&gibberish(), tgt_lex),
            // the baseline fails where the compressed system does not
            5 => {
                hyp_base = render(&gibberish(), tgt_lex);
                hyp_comp = render(&ref_tokens, tgt_lex);
            }
            _ => {}
        }
        sweep_items.push(SweepItem { source: src.clone(), reference: ref_tokens.clone() });
        records.push(TranslationRecord {
            pair_id: format!("s{i:04}"),
            src_lang: src_lang.clone(),
            tgt_lang: tgt_lang.clone(),
            source: render(&src, src_lex),
            reference: render(&ref_tokens, tgt_lex),
            hyp_base,
            hyp_comp,
            attn_base: Some(b.cross_attention),
            attn_comp: Some(c.cross_attention),
        });
    }

    let paths = DemoPaths {
        model_config: dir.join("model.json"),
        weights: dir.join("weights.mtbw"),
        pruned_weights: dir.join("weights.pruned.mtbw"),
        corpus: dir.join("corpus.jsonl"),
        resources: dir.join("resources.json"),
        lid_corpora: dir.join("lid"),
        profiles: dir.join("profiles.json"),
        gender: dir.join("gender.jsonl"),
        senses: dir.join("senses.jsonl"),
        audit_config: dir.join("audit.json"),
        sweep_items: dir.join("sweep.jsonl"),
        dir: dir.clone(),
    };
    jsonl::write_json(&paths.model_config, &cfg)?;
    save_weights(&base_ws, &paths.weights)?;
    save_weights(&comp_ws, &paths.pruned_weights)?;
    jsonl::write_jsonl(&paths.corpus, &records)?;
    jsonl::write_jsonl(&paths.sweep_items, &sweep_items)?;
    jsonl::write_json(&paths.resources, &demo_resources())?;

    fs::create_dir_all(&paths.lid_corpora).map_err(|e| Error::io(&paths.lid_corpora, e))?;
    let mut corpora = BTreeMap::new();
    for lang in &langs {
        let gen = SyntheticLanguage::new(lang)?;
        let mut lang_rng = SplitMix64::new(lang_seed(lang) ^ opts.seed);
        // Training text mixes free sentences with lexicon words so profiles see both.
        let mut lines: Vec<String> = (0..150).map(|_| gen.sentence(&mut lang_rng, 4, 10)).collect();
        lines.extend(lexicons[lang].chunks(6).map(|c| c.join(" ")));
        let path = paths.lid_corpora.join(format!("{lang}.txt"));
        fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
        corpora.insert(lang.to_string(), lines);
    }
    let profiles = lang_id::train_profiles(&corpora, lang_id::DEFAULT_K)?;
    ProfileSet { k: lang_id::DEFAULT_K, profiles }.save(&paths.profiles)?;

    jsonl::write_jsonl(&paths.gender, &demo_gender_records(opts.seed))?;
    jsonl::write_jsonl(&paths.senses, &demo_sense_records(opts.seed, 400))?;

    // Paths relative to the config file keep the workspace relocatable.
    let audit = AuditConfig {
        corpus: "corpus.jsonl".into(),
        resources: "resources.json".into(),
        profiles: Some("profiles.json".into()),
        lid_corpora: None,
        out_dir: "report".into(),
        method: CompressionMethod::Pruned(opts.prune_ratio),
        ..AuditConfig::default()
    };
    jsonl::write_json(&paths.audit_config, &audit)?;
    Ok(paths)
}

/// Labeled gender outcomes over two languages with a male-leaning predictor.
pub fn demo_gender_records(seed: u64) -> Vec<GenderRecord> {
    let mut rng = SplitMix64::new(seed ^ 0x6e6d);
    let mut out = Vec::new();
    for lang in ["de", "fr"] {
        for i in 0..120 {
            let gold = if i % 2 == 0 { Gender::Male } else { Gender::Female };
            let stereotype = [Stereotype::Pro, Stereotype::Anti, Stereotype::Neutral][i % 3];
            let r = rng.next_f64();
            let predicted = match (gold, stereotype) {
                (_, _) if r < 0.05 => PredictedGender::Unknown,
                (Gender::Male, _) if r < 0.9 => PredictedGender::Male,
                (Gender::Female, Stereotype::Anti) if r < 0.55 => PredictedGender::Female,
                (Gender::Female, Stereotype::Anti) => PredictedGender::Male,
                (Gender::Female, _) if r < 0.75 => PredictedGender::Female,
                (Gender::Female, _) => PredictedGender::Male,
                (Gender::Male, _) => PredictedGender::Female,
            };
            out.push(GenderRecord { gold_gender: gold, predicted_gender: predicted, stereotype, lang: lang.into() });
        }
    }
    out
}

/// Word-sense outcomes where errors lean toward frequent senses.
pub fn demo_sense_records(seed: u64, n: usize) -> Vec<SenseRecord> {
    let mut rng = SplitMix64::new(seed ^ 0x5e45);
    (0..n)
        .map(|i| {
            let polysemy = 2 + (rng.next_u64() % 6) as usize;
            let gold_index = 1 + (rng.next_u64() % polysemy as u64) as usize;
            let correct = rng.next_f64() < 0.35 + 0.1 / gold_index as f64;
            let predicted_index = if correct {
                Some(gold_index)
            } else if rng.next_f64() < 0.1 {
                None
            } else if rng.next_f64() < 0.6 {
                Some(1)
            } else {
                Some(1 + (rng.next_u64() % polysemy as u64) as usize)
            };
            let correct = correct || predicted_index == Some(gold_index);
            SenseRecord { lemma_pos: format!("lemma{}/n", i % 37), gold_index, predicted_index, correct, polysemy }
        })
        .collect()
}

/// Attention matrix whose rows put `1 - spread` on the diagonal.
pub fn near_diagonal(n: usize, spread: f64) -> AttentionMatrix {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j {
                1.0 - spread
            } else if n > 1 {
                spread / (n - 1) as f64
            } else {
                0.0
            };
        }
    }
    if n == 1 {
        a[0] = 1.0;
    }
    AttentionMatrix::new(n, n, a).expect("rows sum to one")
}

/// Loads a weight set and checks it against a model config.
pub fn load_model_weights(cfg: &ModelConfig, path: impl AsRef<Path>) -> Result<WeightSet> {
    let ws = crate::tensor_store::load_weights(path)?;
    Seq2Seq::new(cfg, &ws)?;
    Ok(ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicons_are_distinct_and_stable() {
        let en = SyntheticLanguage::new("en").unwrap();
        let a = en.lexicon(24);
        assert_eq!(a, en.lexicon(24));
        let mut dedup = a.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 24);
        assert_ne!(a, SyntheticLanguage::new("de").unwrap().lexicon(24));
        assert!(SyntheticLanguage::new("xx").is_err());
    }

    #[test]
    fn sense_records_are_valid() {
        for r in demo_sense_records(3, 200) {
            r.validate().unwrap();
        }
    }
}
