use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mtbias_core::attention_alignment::{relative_alignment, AttentionMatrix};
use mtbias_core::compression::{self, magnitude_prune, PruneStrategy, QuantSpec, QuantizedModel};
use mtbias_core::gender_fairness::{fairness_report, GenderRecord};
use mtbias_core::jsonl;
use mtbias_core::lang_id::{self, off_target_rate, ProfileSet, Which};
use mtbias_core::reporting::{self, run_audit, AuditConfig, SweepItem};
use mtbias_core::sense_bias::{bias_row, SenseRecord};
use mtbias_core::synth::{build_demo, DemoOptions};
use mtbias_core::tensor_store::{load_weights, save_weights, sparsity, WeightSet};
use mtbias_core::text_metrics::{bleu, chrf, delta_partition, read_corpus, ChrfParams, DeltaBucket, Tokenizer};
use mtbias_core::toy_transformer::{record_calibration, Hooks, ModelConfig, Seq2Seq};

/// Compression bias audit for translation models.
#[derive(Parser)]
#[command(name = "mtbias-audit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full audit described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Magnitude-prune a weight file.
    Prune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value = "transformer-layer")]
        strategy: PruneStrategy,
    },
    /// Quantize a weight file to int8 using recorded activations.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
    /// Record activations of the toy model for quantization calibration.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy-decode sources with the toy model.
    Translate {
        #[arg(long)]
        config: PathBuf,
        /// A .mtbw weight file or a .mtbq quantized file.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        attn: Option<PathBuf>,
    },
    /// Score a corpus with ChrF (per sentence) or BLEU (per pair).
    Score {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "whitespace")]
        tokenizer: Tokenizer,
    },
    /// Sentence-level ChrF differences and their Losing/Neutral/Winning buckets.
    Delta {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Language identification.
    Lid {
        #[command(subcommand)]
        command: LidCommand,
    },
    /// Relative alignment over a Losing or Winning subset.
    Align {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        attn_base: PathBuf,
        #[arg(long)]
        attn_comp: PathBuf,
        #[arg(long, value_enum)]
        subset: Subset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gender fairness per language and averaged.
    Gender {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word-sense bias metrics.
    Wsd {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// BLEU of the toy model across pruning ratios and strategies.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// JSONL of {"source": [ids], "reference": [ids]}.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.45,0.6,1")]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "transformer-layer")]
        strategies: Vec<PruneStrategy>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic workspace and audit it.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        sentences: usize,
        #[arg(long, default_value_t = 0.3)]
        p: f64,
    },
}

#[derive(Subcommand)]
enum LidCommand {
    /// Train profiles from a directory of <lang>.txt files.
    Train {
        #[arg(long)]
        corpora: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = lang_id::DEFAULT_K)]
        k: usize,
    },
    /// Off-target rate of one system's hypotheses.
    Offtarget {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, value_enum, default_value = "comp")]
        which: WhichArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Chrf,
    Bleu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Subset {
    Losing,
    Winning,
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichArg {
    Base,
    Comp,
}

/// One line of `translate` input: token ids, or text when the config has a vocab.
#[derive(Deserialize)]
struct SourceLine {
    #[serde(default)]
    id: Option<String>,
    source: Source,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Source {
    Ids(Vec<u32>),
    Text(String),
}

#[derive(Serialize)]
struct HypothesisLine {
    id: Option<String>,
    tokens: Vec<u32>,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct DeltaLine {
    pair_id: String,
    src_lang: String,
    tgt_lang: String,
    delta: f64,
    bucket: DeltaBucket,
}

fn read_sources(cfg: &ModelConfig, path: &Path) -> Result<Vec<(Option<String>, Vec<u32>)>> {
    let lines: Vec<SourceLine> = jsonl::read_jsonl(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let ids = match l.source {
                Source::Ids(ids) => ids,
                Source::Text(t) => cfg
                    .encode_text(&t)
                    .map_err(|e| mtbias_core::Error::schema(path.display().to_string(), i + 1, e.to_string()))?,
            };
            Ok((l.id, ids))
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    reporting::init_threads_from_env()?;
    match cli.command {
        Command::Run { config } => {
            let cfg = AuditConfig::load(&config)?;
            let report = run_audit(&cfg)?;
            println!(
                "audited {} sentences, {} of {} pairs kept; report in {}",
                report.sentences,
                report.kept_pairs,
                report.pairs.len(),
                cfg.out_dir.display()
            );
        }
        Command::Prune { input, out, p, strategy } => {
            let ws = load_weights(&input)?;
            let pruned = magnitude_prune(&ws, p, strategy)?;
            save_weights(&pruned, &out)?;
            println!("sparsity {:.4} -> {:.4}", sparsity(&ws)?, sparsity(&pruned)?);
        }
        Command::Quantize { input, calib, out, grid } => {
            let ws = load_weights(&input)?;
            let acts = load_weights(&calib)?;
            let model =
                compression::quantize(&ws, &compression::calibration_sites(&acts), &QuantSpec { calib_grid: grid })?;
            model.save(&out)?;
            println!("{} weight tensors, {} activation sites", model.weights.len(), model.activations.len());
        }
        Command::Calibrate { config, weights, input, out } => {
            let cfg = ModelConfig::load(&config)?;
            let ws = load_weights(&weights)?;
            let sources: Vec<Vec<u32>> = read_sources(&cfg, &input)?.into_iter().map(|(_, s)| s).collect();
            save_weights(&record_calibration(&cfg, &ws, &sources)?, &out)?;
        }
        Command::Translate { config, weights, input, out, attn } => {
            let cfg = ModelConfig::load(&config)?;
            let (ws, acts): (WeightSet, Option<_>) = if weights.extension().is_some_and(|e| e == "mtbq") {
                let q = QuantizedModel::load(&weights)?;
                (q.dequantize_weights()?, Some(q.activations))
            } else {
                (load_weights(&weights)?, None)
            };
            let model = Seq2Seq::new(&cfg, &ws)?;
            let hooks = acts.as_ref().map(Hooks::quantized).unwrap_or_default();
            let mut hyps = Vec::new();
            let mut mats: Vec<AttentionMatrix> = Vec::new();
            for (id, src) in read_sources(&cfg, &input)? {
                let r = model.decode(&src, &hooks)?;
                hyps.push(HypothesisLine { id, text: cfg.output_strings(&r.tokens).join(" "), tokens: r.tokens });
                mats.push(r.cross_attention);
            }
            jsonl::write_jsonl(&out, &hyps)?;
            if let Some(attn) = attn {
                jsonl::write_jsonl(&attn, &mats)?;
            }
        }
        Command::Score { input, metric, out, tokenizer } => {
            let records = read_corpus(&input)?;
            let mut csv = String::new();
            match metric {
                Metric::Chrf => {
                    csv.push_str("pair_id,src_lang,tgt_lang,chrf_base,chrf_comp\n");
                    for r in &records {
                        let p = ChrfParams::default();
                        let (b, c) = (chrf(&r.reference, &r.hyp_base, p)?, chrf(&r.reference, &r.hyp_comp, p)?);
                        let _ = writeln!(csv, "{},{},{},{b},{c}", r.pair_id, r.src_lang, r.tgt_lang);
                    }
                }
                Metric::Bleu => {
                    csv.push_str("src_lang,tgt_lang,sentences,bleu_base,bleu_comp\n");
                    let mut pairs: BTreeMap<(&str, &str), Vec<_>> = BTreeMap::new();
                    for r in &records {
                        pairs.entry((r.src_lang.as_str(), r.tgt_lang.as_str())).or_default().push(r);
                    }
                    for ((s, t), rs) in pairs {
                        let tok = |f: fn(&mtbias_core::text_metrics::TranslationRecord) -> &str| {
                            rs.iter().map(|r| tokenizer.tokenize(f(r))).collect::<Vec<_>>()
                        };
                        let refs = tok(|r| &r.reference);
                        let b = bleu(&refs, &tok(|r| &r.hyp_base), 4)?;
                        let c = bleu(&refs, &tok(|r| &r.hyp_comp), 4)?;
                        let _ = writeln!(csv, "{s},{t},{},{b},{c}", rs.len());
                    }
                }
            }
            write_text(&out, &csv)?;
        }
        Command::Delta { input, threshold, out } => {
            let records = read_corpus(&input)?;
            let outcomes = delta_partition(&records, threshold, ChrfParams::default())?;
            let lines: Vec<DeltaLine> = records
                .iter()
                .zip(outcomes)
                .map(|(r, o)| DeltaLine {
                    pair_id: r.pair_id.clone(),
                    src_lang: r.src_lang.clone(),
                    tgt_lang: r.tgt_lang.clone(),
                    delta: o.delta,
                    bucket: o.bucket,
                })
                .collect();
            jsonl::write_jsonl(&out, &lines)?;
            let count = |b| lines.iter().filter(|l| l.bucket == b).count();
            println!(
                "losing {}, neutral {}, winning {}",
                count(DeltaBucket::Losing),
                count(DeltaBucket::Neutral),
                count(DeltaBucket::Winning)
            );
        }
        Command::Lid { command: LidCommand::Train { corpora, out, k } } => {
            let corpora = lang_id::read_corpora_dir(&corpora)?;
            let profiles = lang_id::train_profiles(&corpora, k)?;
            ProfileSet { k, profiles }.save(&out)?;
        }
        Command::Lid { command: LidCommand::Offtarget { input, profiles, which, out } } => {
            let records = read_corpus(&input)?;
            let profiles = ProfileSet::load(&profiles)?.profiles;
            let which = match which {
                WhichArg::Base => Which::Base,
                WhichArg::Comp => Which::Comp,
            };
            let (rate, evaluated) = off_target_rate(&records, &profiles, which)?;
            let v = serde_json::json!({ "which": which, "off_target_rate": rate, "evaluated": evaluated });
            match out {
                Some(out) => jsonl::write_json(&out, &v)?,
                None => println!("{v}"),
            }
        }
        Command::Align { input, attn_base, attn_comp, subset, out } => {
            let deltas: Vec<DeltaLine> = jsonl::read_jsonl(&input)?;
            let base: Vec<AttentionMatrix> = jsonl::read_jsonl(&attn_base)?;
            let comp: Vec<AttentionMatrix> = jsonl::read_jsonl(&attn_comp)?;
            if base.len() != deltas.len() || comp.len() != deltas.len() {
                bail!(mtbias_core::Error::schema(
                    input.display().to_string(),
                    deltas.len(),
                    format!("{} delta lines but {} and {} attention matrices", deltas.len(), base.len(), comp.len())
                ));
            }
            let want = match subset {
                Subset::Losing => DeltaBucket::Losing,
                Subset::Winning => DeltaBucket::Winning,
            };
            let pairs: Vec<_> = deltas
                .iter()
                .zip(base.into_iter().zip(comp))
                .filter(|(d, _)| d.bucket == want)
                .map(|(_, p)| p)
                .collect();
            let lambda = relative_alignment(&pairs);
            let v = serde_json::json!({
                "subset": want.to_string(),
                "sentences": pairs.len(),
                "lambda": lambda.as_ref().ok(),
                "degenerate": lambda.is_err(),
            });
            jsonl::write_json(&out, &v)?;
        }
        Command::Gender { input, out } => {
            let records: Vec<GenderRecord> = jsonl::read_jsonl(&input)?;
            jsonl::write_json(&out, &fairness_report(&records)?)?;
        }
        Command::Wsd { input, out } => {
            let records: Vec<SenseRecord> = jsonl::read_jsonl(&input)?;
            for (i, r) in records.iter().enumerate() {
                r.validate()
                    .map_err(|e| mtbias_core::Error::schema(input.display().to_string(), i + 1, e.to_string()))?;
            }
            jsonl::write_json(&out, &bias_row(&records)?)?;
        }
        Command::Sweep { config, weights, input, ratios, strategies, out } => {
            let cfg = ModelConfig::load(&config)?;
            let ws = load_weights(&weights)?;
            let items: Vec<SweepItem> = jsonl::read_jsonl(&input)?;
            let rows = reporting::sweep(&cfg, &ws, &items, &ratios, &strategies)?;
            write_text(&out, &reporting::sweep_csv(&rows))?;
        }
        Command::Demo { out, seed, sentences, p } => {
            let opts = DemoOptions { seed, sentences, prune_ratio: p, ..DemoOptions::default() };
            let paths = build_demo(&out, &opts)?;
            let cfg = AuditConfig::load(&paths.audit_config)?;
            let report = run_audit(&cfg)?;
            println!(
                "demo workspace in {}; audited {} sentences, report in {}",
                paths.dir.display(),
                report.sentences,
                cfg.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let schema = e.chain().any(|c| c.downcast_ref::<mtbias_core::Error>().is_some_and(|e| e.is_schema()));
            ExitCode::from(if schema { 2 } else { 1 })
        }
    }
}
