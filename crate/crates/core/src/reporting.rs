//! End-to-end audit: per-pair summaries, bucket-grouped means, Δ histograms,
//! off-target and relative-alignment tables, memory line, and the sparsity sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention_alignment::{relative_alignment, AttentionMatrix};
use crate::compression::{magnitude_prune, memory_factor, CompressionMethod, PruneStrategy};
use crate::corpus_resources::{filter_pairs, pair_resource, ResourceBucket, ResourceTable};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::lang_id::{self, off_target_status, LanguageProfile, OffTarget, ProfileSet, Which};
use crate::tensor_store::WeightSet;
use crate::text_metrics::{bleu, delta_partition, read_corpus, ChrfParams, DeltaBucket, DeltaOutcome, Tokenizer};
use crate::toy_transformer::{Hooks, ModelConfig, Seq2Seq};

pub const THREADS_ENV: &str = "MTBIAS_THREADS";

/// Installs a global thread pool capped by `MTBIAS_THREADS`, when set.
/// Later calls and an already-initialized pool are not errors.
pub fn init_threads_from_env() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Audit settings. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub corpus: PathBuf,
    pub resources: PathBuf,
    /// Trained profiles; takes precedence over `lid_corpora`.
    pub profiles: Option<PathBuf>,
    /// Directory of `<lang>.txt` files to train profiles from.
    pub lid_corpora: Option<PathBuf>,
    pub lid_k: usize,
    pub out_dir: PathBuf,
    pub method: CompressionMethod,
    pub tokenizer: Tokenizer,
    pub bleu_max_n: usize,
    pub delta_threshold: f64,
    pub bleu_filter: f64,
    pub chrf: ChrfParams,
    pub histogram_bins: usize,
    pub svg: bool,
    /// Optional per-sentence attention files, one nested array per corpus line.
    pub attn_base: Option<PathBuf>,
    pub attn_comp: Option<PathBuf>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            resources: PathBuf::new(),
            profiles: None,
            lid_corpora: None,
            lid_k: lang_id::DEFAULT_K,
            out_dir: PathBuf::from("report"),
            method: CompressionMethod::Pruned(0.3),
            tokenizer: Tokenizer::Whitespace,
            bleu_max_n: 4,
            delta_threshold: 0.5,
            bleu_filter: 12.0,
            chrf: ChrfParams::default(),
            histogram_bins: 20,
            svg: false,
            attn_base: None,
            attn_comp: None,
        }
    }
}

impl AuditConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: AuditConfig = jsonl::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.corpus);
        fix(&mut cfg.resources);
        fix(&mut cfg.out_dir);
        for p in [&mut cfg.profiles, &mut cfg.lid_corpora, &mut cfg.attn_base, &mut cfg.attn_comp].into_iter().flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.corpus.as_os_str().is_empty() || self.resources.as_os_str().is_empty() {
            return bad("audit config needs 'corpus' and 'resources'".into());
        }
        if !(self.delta_threshold > 0.0) {
            return bad(format!("delta_threshold must be positive, got {}", self.delta_threshold));
        }
        if self.histogram_bins == 0 || self.bleu_max_n == 0 || self.chrf.max_n == 0 || self.lid_k == 0 {
            return bad("histogram_bins, bleu_max_n, chrf.max_n and lid_k must be positive".into());
        }
        if self.attn_base.is_some() != self.attn_comp.is_some() {
            return bad("attn_base and attn_comp must be given together".into());
        }
        self.method.validate()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub src_lang: String,
    pub tgt_lang: String,
    pub sentences: usize,
    pub bleu_base: f64,
    pub bleu_comp: f64,
    /// None when the baseline BLEU is zero.
    pub rel_diff_pct: Option<f64>,
    /// Baseline BLEU above the evaluation filter.
    pub kept: bool,
    pub resource: u64,
    pub resource_bucket: ResourceBucket,
    pub src_bucket: ResourceBucket,
    pub tgt_bucket: ResourceBucket,
    pub losing: usize,
    pub neutral: usize,
    pub winning: usize,
    pub off_target_base_pct: Option<f64>,
    pub off_target_comp_pct: Option<f64>,
    pub lambda_losing: Option<f64>,
    pub lambda_winning: Option<f64>,
}

pub const PAIRS_CSV_HEADER: &str = "src_lang,tgt_lang,sentences,bleu_base,bleu_comp,rel_diff_pct,kept,resource,\
resource_bucket,src_bucket,tgt_bucket,losing,neutral,winning,off_target_base_pct,off_target_comp_pct,\
lambda_losing,lambda_winning";

impl PairSummary {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.src_lang,
            self.tgt_lang,
            self.sentences,
            self.bleu_base,
            self.bleu_comp,
            fmt_opt(self.rel_diff_pct),
            self.kept,
            self.resource,
            self.resource_bucket,
            self.src_bucket,
            self.tgt_bucket,
            self.losing,
            self.neutral,
            self.winning,
            fmt_opt(self.off_target_base_pct),
            fmt_opt(self.off_target_comp_pct),
            fmt_opt(self.lambda_losing),
            fmt_opt(self.lambda_winning),
        )
    }
}

/// How pairs are assigned to a resource bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    /// By the pair's resource amount, the smaller of both sides.
    Pair,
    Source,
    Target,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Pair, Grouping::Source, Grouping::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Pair => "pair",
            Grouping::Source => "source",
            Grouping::Target => "target",
        }
    }

    pub fn bucket_of(self, p: &PairSummary) -> ResourceBucket {
        match self {
            Grouping::Pair => p.resource_bucket,
            Grouping::Source => p.src_bucket,
            Grouping::Target => p.tgt_bucket,
        }
    }
}

/// Mean relative BLEU difference of the kept pairs in one bucket. The row
/// with `bucket: None` is the mean of the bucket means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMean {
    pub grouping: Grouping,
    pub bucket: Option<ResourceBucket>,
    pub pairs: usize,
    pub mean_rel_diff_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bucket: ResourceBucket,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Off-target shares over losing sentences. `bucket: None` covers all pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffTargetRow {
    pub bucket: Option<ResourceBucket>,
    pub losing: usize,
    /// Losing sentences whose reference was identified as the target language.
    pub evaluated: usize,
    pub base_pct: Option<f64>,
    pub comp_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    /// `losing-on-target` or `winning`.
    pub subset: String,
    pub sentences: usize,
    pub lambda: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLine {
    pub method: CompressionMethod,
    pub label: String,
    pub memory_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub sentences: usize,
    pub kept_pairs: usize,
    pub pairs: Vec<PairSummary>,
    pub grouped: Vec<GroupedMean>,
    pub delta_histogram: Vec<HistogramBin>,
    pub off_target: Option<Vec<OffTargetRow>>,
    pub lambda: Vec<LambdaRow>,
    pub memory: MemoryLine,
}

struct Scored {
    delta: DeltaOutcome,
    base: Option<OffTarget>,
    comp: Option<OffTarget>,
    attn: Option<(AttentionMatrix, AttentionMatrix)>,
}

fn pct(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| 100.0 * n as f64 / d as f64)
}

/// λ over a subset, None when it is empty, lacks attention or is degenerate.
fn lambda_of<'a>(subset: impl Iterator<Item = &'a Scored>) -> (usize, Option<f64>) {
    let pairs: Vec<(AttentionMatrix, AttentionMatrix)> = subset.filter_map(|s| s.attn.clone()).collect();
    let n = pairs.len();
    (n, relative_alignment(&pairs).ok())
}

fn is_losing_on_target(s: &Scored) -> bool {
    s.delta.bucket == DeltaBucket::Losing && s.comp != Some(OffTarget::OffTarget)
}

fn load_profiles(cfg: &AuditConfig) -> Result<Option<Vec<LanguageProfile>>> {
    if let Some(p) = &cfg.profiles {
        return Ok(Some(ProfileSet::load(p)?.profiles));
    }
    if let Some(dir) = &cfg.lid_corpora {
        let corpora = lang_id::read_corpora_dir(dir)?;
        return Ok(Some(lang_id::train_profiles(&corpora, cfg.lid_k)?));
    }
    Ok(None)
}

fn load_attention(path: &Path, expected: usize) -> Result<Vec<AttentionMatrix>> {
    let m: Vec<AttentionMatrix> = jsonl::read_jsonl(path)?;
    if m.len() != expected {
        return Err(Error::schema(
            path.display().to_string(),
            m.len() + 1,
            format!("{} attention matrices for {expected} corpus records", m.len()),
        ));
    }
    Ok(m)
}

/// Computes the full audit without writing anything.
pub fn compute_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    cfg.validate()?;
    let mut records = read_corpus(&cfg.corpus)?;
    let resources = ResourceTable::load(&cfg.resources)?;
    let corpus_name = cfg.corpus.display().to_string();
    for (i, r) in records.iter().enumerate() {
        for lang in [&r.src_lang, &r.tgt_lang] {
            if !resources.bitext.contains_key(lang.as_str()) {
                return Err(Error::schema(
                    corpus_name.clone(),
                    i + 1,
                    format!("language '{lang}' missing from {}", cfg.resources.display()),
                ));
            }
        }
    }
    if let (Some(b), Some(c)) = (&cfg.attn_base, &cfg.attn_comp) {
        let base = load_attention(b, records.len())?;
        let comp = load_attention(c, records.len())?;
        for ((r, b), c) in records.iter_mut().zip(base).zip(comp) {
            r.attn_base = Some(b);
            r.attn_comp = Some(c);
        }
    }
    let profiles = load_profiles(cfg)?;
    if let Some(profiles) = &profiles {
        for (i, r) in records.iter().enumerate() {
            if !profiles.iter().any(|p| p.lang == r.tgt_lang) {
                return Err(Error::schema(
                    corpus_name.clone(),
                    i + 1,
                    format!("no language profile for target '{}'", r.tgt_lang),
                ));
            }
        }
    }

    let deltas = delta_partition(&records, cfg.delta_threshold, cfg.chrf)?;
    let scored: Vec<Scored> = records
        .par_iter()
        .zip(deltas)
        .map(|(r, delta)| {
            let status = |w| profiles.as_ref().map(|p| off_target_status(p, r, w));
            Scored {
                delta,
                base: status(Which::Base),
                comp: status(Which::Comp),
                attn: r.attn_base.clone().zip(r.attn_comp.clone()),
            }
        })
        .collect();

    let mut by_pair: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_pair.entry((r.src_lang.clone(), r.tgt_lang.clone())).or_default().push(i);
    }

    let tok = cfg.tokenizer;
    let pairs: Vec<PairSummary> = by_pair
        .par_iter()
        .map(|((src, tgt), idx)| {
            let refs: Vec<Vec<String>> = idx.iter().map(|&i| tok.tokenize(&records[i].reference)).collect();
            let base: Vec<Vec<String>> = idx.iter().map(|&i| tok.tokenize(&records[i].hyp_base)).collect();
            let comp: Vec<Vec<String>> = idx.iter().map(|&i| tok.tokenize(&records[i].hyp_comp)).collect();
            let bleu_base = bleu(&refs, &base, cfg.bleu_max_n)?;
            let bleu_comp = bleu(&refs, &comp, cfg.bleu_max_n)?;
            let (resource, resource_bucket) = pair_resource(&resources, src, tgt)?;
            let subset = || idx.iter().map(|&i| &scored[i]);
            let count = |b| subset().filter(|s| s.delta.bucket == b).count();
            let off_pct = |get: fn(&Scored) -> Option<OffTarget>| {
                let statuses: Vec<OffTarget> = subset().filter_map(get).collect();
                let evaluated = statuses.iter().filter(|s| **s != OffTarget::Excluded).count();
                pct(statuses.iter().filter(|s| **s == OffTarget::OffTarget).count(), evaluated)
            };
            Ok(PairSummary {
                src_lang: src.clone(),
                tgt_lang: tgt.clone(),
                sentences: idx.len(),
                bleu_base,
                bleu_comp,
                rel_diff_pct: (bleu_base > 0.0).then(|| 100.0 * (bleu_comp - bleu_base) / bleu_base),
                kept: false,
                resource,
                resource_bucket,
                src_bucket: resources.lang_bucket(src)?,
                tgt_bucket: resources.lang_bucket(tgt)?,
                losing: count(DeltaBucket::Losing),
                neutral: count(DeltaBucket::Neutral),
                winning: count(DeltaBucket::Winning),
                off_target_base_pct: off_pct(|s| s.base),
                off_target_comp_pct: off_pct(|s| s.comp),
                lambda_losing: lambda_of(subset().filter(|s| is_losing_on_target(s))).1,
                lambda_winning: lambda_of(subset().filter(|s| s.delta.bucket == DeltaBucket::Winning)).1,
            })
        })
        .collect::<Result<_>>()?;

    let scores: BTreeMap<(String, String), f64> =
        pairs.iter().map(|p| ((p.src_lang.clone(), p.tgt_lang.clone()), p.bleu_base)).collect();
    let kept_set = filter_pairs(&scores, cfg.bleu_filter);
    let mut pairs = pairs;
    for p in &mut pairs {
        p.kept = kept_set.contains(&(p.src_lang.clone(), p.tgt_lang.clone()));
    }
    let kept: Vec<&PairSummary> = pairs.iter().filter(|p| p.kept).collect();

    let grouped = grouped_means(&kept);

    // Sentence-level tables cover the kept pairs only.
    let kept_sentences: Vec<(ResourceBucket, &Scored)> = kept
        .iter()
        .flat_map(|p| {
            by_pair[&(p.src_lang.clone(), p.tgt_lang.clone())].iter().map(|&i| (p.resource_bucket, &scored[i]))
        })
        .collect();

    let bins = cfg.histogram_bins;
    let mut delta_histogram = Vec::with_capacity(4 * bins);
    for b in ResourceBucket::ALL {
        let mut counts = vec![0usize; bins];
        for (_, s) in kept_sentences.iter().filter(|(bb, _)| *bb == b) {
            counts[histogram_bin(s.delta.delta, bins)] += 1;
        }
        for (k, count) in counts.into_iter().enumerate() {
            delta_histogram.push(HistogramBin { bucket: b, lo: bin_edge(k, bins), hi: bin_edge(k + 1, bins), count });
        }
    }

    let off_target = profiles.as_ref().map(|_| {
        let row = |bucket: Option<ResourceBucket>| {
            let losing: Vec<&Scored> = kept_sentences
                .iter()
                .filter(|(b, s)| bucket.is_none_or(|x| x == *b) && s.delta.bucket == DeltaBucket::Losing)
                .map(|(_, s)| *s)
                .collect();
            let evaluated = losing.iter().filter(|s| s.comp != Some(OffTarget::Excluded)).count();
            let off = |get: fn(&Scored) -> Option<OffTarget>| {
                losing.iter().filter(|s| get(s) == Some(OffTarget::OffTarget)).count()
            };
            OffTargetRow {
                bucket,
                losing: losing.len(),
                evaluated,
                base_pct: pct(off(|s| s.base), evaluated),
                comp_pct: pct(off(|s| s.comp), evaluated),
            }
        };
        let mut rows: Vec<OffTargetRow> = ResourceBucket::ALL.iter().map(|b| row(Some(*b))).collect();
        rows.push(row(None));
        rows
    });

    let lambda = [
        ("losing-on-target", lambda_of(kept_sentences.iter().map(|(_, s)| *s).filter(|s| is_losing_on_target(s)))),
        (
            "winning",
            lambda_of(kept_sentences.iter().map(|(_, s)| *s).filter(|s| s.delta.bucket == DeltaBucket::Winning)),
        ),
    ]
    .into_iter()
    .map(|(subset, (n, l))| LambdaRow { subset: subset.into(), sentences: n, lambda: l, degenerate: l.is_none() })
    .collect();

    Ok(AuditReport {
        sentences: records.len(),
        kept_pairs: kept.len(),
        grouped,
        delta_histogram,
        off_target,
        lambda,
        memory: MemoryLine { method: cfg.method, label: cfg.method.label(), memory_factor: memory_factor(&cfg.method) },
        pairs,
    })
}

/// Lower edge of bin `k` among `bins` equal bins over [-1, 1].
pub fn bin_edge(k: usize, bins: usize) -> f64 {
    -1.0 + k as f64 * (2.0 / bins as f64)
}

/// Bin `k` with `bin_edge(k) <= delta < bin_edge(k + 1)`; 1 falls in the last bin.
pub fn histogram_bin(delta: f64, bins: usize) -> usize {
    let mut k = (((delta + 1.0) / 2.0 * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    // The estimate can be one off near an edge; settle against the edges we print.
    while k + 1 < bins && delta >= bin_edge(k + 1, bins) {
        k += 1;
    }
    while k > 0 && delta < bin_edge(k, bins) {
        k -= 1;
    }
    k
}

/// Per-bucket means of `rel_diff_pct` and, per grouping, the mean of the bucket means.
pub fn grouped_means(kept: &[&PairSummary]) -> Vec<GroupedMean> {
    let mut out = Vec::new();
    for g in Grouping::ALL {
        let mut buckets: BTreeMap<ResourceBucket, Vec<f64>> = BTreeMap::new();
        for p in kept {
            if let Some(d) = p.rel_diff_pct {
                buckets.entry(g.bucket_of(p)).or_default().push(d);
            }
        }
        let mut means = Vec::new();
        for (b, vals) in &buckets {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            means.push(mean);
            out.push(GroupedMean { grouping: g, bucket: Some(*b), pairs: vals.len(), mean_rel_diff_pct: mean });
        }
        if !means.is_empty() {
            out.push(GroupedMean {
                grouping: g,
                bucket: None,
                pairs: buckets.values().map(Vec::len).sum(),
                mean_rel_diff_pct: means.iter().sum::<f64>() / means.len() as f64,
            });
        }
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn bucket_or_all(b: Option<ResourceBucket>) -> &'static str {
    b.map_or("all", ResourceBucket::as_str)
}

/// Writes every report table into `out_dir`.
pub fn write_report(report: &AuditReport, out_dir: &Path, svg: bool) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut csv = String::from(PAIRS_CSV_HEADER);
    csv.push('\n');
    for p in &report.pairs {
        csv += &p.csv_row();
        csv.push('\n');
    }
    write_file(&out_dir.join("pairs.csv"), &csv)?;
    jsonl::write_json(out_dir.join("pairs.json"), &report.pairs)?;

    let mut csv = String::from("grouping,bucket,pairs,mean_rel_diff_pct\n");
    for g in &report.grouped {
        let _ =
            writeln!(csv, "{},{},{},{}", g.grouping.as_str(), bucket_or_all(g.bucket), g.pairs, g.mean_rel_diff_pct);
    }
    write_file(&out_dir.join("grouped.csv"), &csv)?;

    let mut csv = String::from("bucket,lo,hi,count\n");
    for h in &report.delta_histogram {
        let _ = writeln!(csv, "{},{},{},{}", h.bucket, h.lo, h.hi, h.count);
    }
    write_file(&out_dir.join("delta_hist.csv"), &csv)?;

    if let Some(rows) = &report.off_target {
        let mut csv = String::from("bucket,losing,evaluated,base_pct,comp_pct\n");
        for r in rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                bucket_or_all(r.bucket),
                r.losing,
                r.evaluated,
                fmt_opt(r.base_pct),
                fmt_opt(r.comp_pct)
            );
        }
        write_file(&out_dir.join("off_target.csv"), &csv)?;
    }

    let mut csv = String::from("subset,sentences,lambda,degenerate\n");
    for l in &report.lambda {
        let _ = writeln!(csv, "{},{},{},{}", l.subset, l.sentences, fmt_opt(l.lambda), l.degenerate);
    }
    write_file(&out_dir.join("lambda.csv"), &csv)?;

    let m = &report.memory;
    write_file(&out_dir.join("memory.csv"), &format!("method,memory_factor\n{},{}\n", m.label, m.memory_factor))?;
    jsonl::write_json(out_dir.join("report.json"), report)?;

    if svg {
        let bars: Vec<(String, f64)> = report
            .grouped
            .iter()
            .filter(|g| g.grouping == Grouping::Pair && g.bucket.is_some())
            .map(|g| (bucket_or_all(g.bucket).to_owned(), g.mean_rel_diff_pct))
            .collect();
        write_file(&out_dir.join("grouped.svg"), &bar_chart("Relative BLEU difference (%)", &bars))?;
        let bars: Vec<(String, f64)> = ResourceBucket::ALL
            .iter()
            .flat_map(|b| {
                report
                    .delta_histogram
                    .iter()
                    .filter(move |h| h.bucket == *b && (h.lo < -0.5 || h.hi > 0.5))
                    .map(move |h| (format!("{} {:.1}", b, h.lo), h.count as f64))
            })
            .collect();
        write_file(&out_dir.join("delta_hist.svg"), &bar_chart("Sentences per Δ bin", &bars))?;
    }
    Ok(())
}

/// A minimal static bar chart; bars grow up or down from a zero line.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (w, h, pad) = (40.0 * bars.len().max(1) as f64 + 80.0, 320.0, 40.0);
    let max = bars.iter().map(|b| b.1.abs()).fold(0.0f64, f64::max).max(1e-12);
    let has_neg = bars.iter().any(|b| b.1 < 0.0);
    let zero = if has_neg { h / 2.0 } else { h - pad };
    let span = if has_neg { h / 2.0 - pad } else { h - 2.0 * pad };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <text x=\"10\" y=\"20\" font-size=\"14\">{}</text>\n\
         <line x1=\"{pad}\" y1=\"{zero}\" x2=\"{}\" y2=\"{zero}\" stroke=\"black\"/>\n",
        escape(title),
        w - 10.0
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = pad + 40.0 * i as f64 + 5.0;
        let len = v.abs() / max * span;
        let y = if *v >= 0.0 { zero - len } else { zero };
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{y:.2}\" width=\"30\" height=\"{len:.2}\" fill=\"steelblue\"><title>{}: {v}</title></rect>",
            escape(label)
        );
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" font-size=\"8\" transform=\"rotate(45 {x} {})\">{}</text>",
            h - 25.0,
            h - 25.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Runs the audit described by `cfg` and writes the report files.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let report = compute_audit(cfg)?;
    write_report(&report, &cfg.out_dir, cfg.svg)?;
    Ok(report)
}

/// One sentence for the sparsity sweep, as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepItem {
    pub source: Vec<u32>,
    pub reference: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// None for the uncompressed baseline.
    pub strategy: Option<PruneStrategy>,
    pub p: f64,
    pub bleu: f64,
}

/// Corpus BLEU over token ids of greedy outputs, special tokens removed.
pub fn decode_bleu(cfg: &ModelConfig, ws: &WeightSet, items: &[SweepItem], max_n: usize) -> Result<f64> {
    let model = Seq2Seq::new(cfg, ws)?;
    let special = |t: &u32| *t == cfg.bos || *t == cfg.eos || *t == cfg.pad;
    let ids = |v: &[u32]| v.iter().filter(|t| !special(t)).map(u32::to_string).collect::<Vec<_>>();
    let hyps: Vec<Vec<String>> = items
        .par_iter()
        .map(|it| Ok(ids(&model.decode(&it.source, &Hooks::default())?.tokens)))
        .collect::<Result<_>>()?;
    let refs: Vec<Vec<String>> = items.iter().map(|it| ids(&it.reference)).collect();
    bleu(&refs, &hyps, max_n)
}

/// BLEU of the baseline followed by one row per strategy and ratio, ratios ascending.
pub fn sweep(
    cfg: &ModelConfig,
    ws: &WeightSet,
    items: &[SweepItem],
    ratios: &[f64],
    strategies: &[PruneStrategy],
) -> Result<Vec<SweepRow>> {
    if items.is_empty() {
        return Err(Error::Empty("sweep corpus".into()));
    }
    if let Some(p) = ratios.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("pruning ratio {p} outside [0, 1]")));
    }
    let mut ratios = ratios.to_vec();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let grid: Vec<(PruneStrategy, f64)> =
        strategies.iter().flat_map(|s| ratios.iter().map(move |p| (*s, *p))).collect();
    let mut rows = vec![SweepRow { strategy: None, p: 0.0, bleu: decode_bleu(cfg, ws, items, 4)? }];
    let pruned: Vec<SweepRow> = grid
        .par_iter()
        .map(|&(s, p)| {
            let pw = magnitude_prune(ws, p, s)?;
            Ok(SweepRow { strategy: Some(s), p, bleu: decode_bleu(cfg, &pw, items, 4)? })
        })
        .collect::<Result<_>>()?;
    rows.extend(pruned);
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("strategy,p,bleu\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.strategy.map_or("baseline".into(), |s| s.to_string()), r.p, r.bleu);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram_bin(-1.0, 20), 0);
        assert_eq!(histogram_bin(-0.95, 20), 0);
        assert_eq!(histogram_bin(-0.9, 20), 1);
        assert_eq!(histogram_bin(0.5, 4), 3);
        assert_eq!(histogram_bin(0.0, 20), 10);
        assert_eq!(histogram_bin(1.0, 20), 19);
    }

    fn summary(bucket: ResourceBucket, d: f64) -> PairSummary {
        PairSummary {
            src_lang: "a".into(),
            tgt_lang: "b".into(),
            sentences: 1,
            bleu_base: 20.0,
            bleu_comp: 20.0,
            rel_diff_pct: Some(d),
            kept: true,
            resource: 0,
            resource_bucket: bucket,
            src_bucket: ResourceBucket::High,
            tgt_bucket: bucket,
            losing: 0,
            neutral: 1,
            winning: 0,
            off_target_base_pct: None,
            off_target_comp_pct: None,
            lambda_losing: None,
            lambda_winning: None,
        }
    }

    #[test]
    fn mean_of_bucket_means() {
        let ps = [
            summary(ResourceBucket::Low, -10.0),
            summary(ResourceBucket::Low, -20.0),
            summary(ResourceBucket::High, 2.0),
        ];
        let refs: Vec<&PairSummary> = ps.iter().collect();
        let g = grouped_means(&refs);
        let all_pair = g.iter().find(|g| g.grouping == Grouping::Pair && g.bucket.is_none()).unwrap();
        assert_eq!(all_pair.mean_rel_diff_pct, (-15.0 + 2.0) / 2.0);
        let src_all = g.iter().find(|g| g.grouping == Grouping::Source && g.bucket.is_none()).unwrap();
        assert!((src_all.mean_rel_diff_pct - (-28.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn config_defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.json");
        fs::write(&path, r#"{"corpus": "c.jsonl", "resources": "/abs/r.json"}"#).unwrap();
        let cfg = AuditConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("c.jsonl"));
        assert_eq!(cfg.resources, PathBuf::from("/abs/r.json"));
        assert_eq!(cfg.delta_threshold, 0.5);
        assert_eq!(cfg.bleu_filter, 12.0);
        fs::write(&path, r#"{"corpus": "c", "resources": "r", "typo": 1}"#).unwrap();
        assert!(AuditConfig::load(&path).unwrap_err().is_schema());
    }
}
