use std::fs;
use std::path::Path;

use mtbias_core::compression::PruneStrategy;
use mtbias_core::jsonl::{read_jsonl, write_jsonl};
use mtbias_core::reporting::{compute_audit, run_audit, sweep, AuditConfig, SweepItem};
use mtbias_core::synth::{build_demo, DemoOptions, DemoPaths};
use mtbias_core::tensor_store::load_weights;
use mtbias_core::text_metrics::{DeltaBucket, TranslationRecord};
use mtbias_core::toy_transformer::ModelConfig;

fn demo(dir: &Path) -> (DemoPaths, AuditConfig) {
    let opts = DemoOptions { sentences: 32, ..DemoOptions::default() };
    let paths = build_demo(dir, &opts).unwrap();
    let cfg = AuditConfig::load(&paths.audit_config).unwrap();
    (paths, cfg)
}

fn edit_corpus(cfg: &AuditConfig, f: impl FnMut(&mut TranslationRecord)) {
    let mut records: Vec<TranslationRecord> = read_jsonl(&cfg.corpus).unwrap();
    records.iter_mut().for_each(f);
    write_jsonl(&cfg.corpus, &records).unwrap();
}

#[test]
fn identical_systems_give_a_flat_report() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = demo(dir.path());
    edit_corpus(&cfg, |r| {
        r.hyp_comp = r.hyp_base.clone();
        r.attn_comp = r.attn_base.clone();
    });
    let report = compute_audit(&cfg).unwrap();
    assert!(report.kept_pairs > 0);
    for p in &report.pairs {
        assert_eq!(p.bleu_base, p.bleu_comp);
        assert_eq!(p.rel_diff_pct, Some(0.0));
        assert_eq!((p.losing, p.winning, p.neutral), (0, 0, p.sentences));
    }
    assert!(report.grouped.iter().all(|g| g.mean_rel_diff_pct == 0.0));
    // Every delta is exactly zero, which falls in the bin starting at 0.
    let occupied: Vec<_> = report.delta_histogram.iter().filter(|h| h.count > 0).collect();
    assert!(occupied.iter().all(|h| h.lo == 0.0));
    assert!(report.lambda.iter().all(|l| l.degenerate && l.lambda.is_none() && l.sentences == 0));
}

#[test]
fn forced_loss_lands_in_the_leftmost_bin() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = demo(dir.path());
    let mut target = None;
    edit_corpus(&cfg, |r| {
        if target.is_none() && r.src_lang == "en" && r.tgt_lang == "de" {
            r.hyp_base = r.reference.clone();
            r.hyp_comp = "0000 1111 2222".into();
            target = Some(r.pair_id.clone());
        }
    });
    let report = compute_audit(&cfg).unwrap();
    let pair = report.pairs.iter().find(|p| p.src_lang == "en" && p.tgt_lang == "de").unwrap();
    assert!(pair.kept && pair.losing >= 1);
    let first = report.delta_histogram.iter().find(|h| h.bucket == pair.resource_bucket).unwrap();
    assert_eq!(first.lo, -1.0);
    assert!(first.count >= 1, "delta of -1 should land in bin 0");
}

#[test]
fn missing_language_is_a_schema_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = demo(dir.path());
    fs::write(&cfg.resources, r#"{"en": 300000000, "de": 90000000, "fr": 40000000, "fi": 800000}"#).unwrap();
    let records: Vec<TranslationRecord> = read_jsonl(&cfg.corpus).unwrap();
    let first_sw = records.iter().position(|r| r.tgt_lang == "sw" || r.src_lang == "sw").unwrap() + 1;
    let err = compute_audit(&cfg).unwrap_err();
    assert!(err.is_schema());
    let msg = err.to_string();
    assert!(msg.contains(&format!("corpus.jsonl:{first_sw}:")), "{msg}");
    assert!(msg.contains("'sw'"), "{msg}");
}

#[test]
fn malformed_corpus_line_is_reported_with_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = demo(dir.path());
    let text = fs::read_to_string(&cfg.corpus).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = r#"{"pair_id": "broken", "src_lang": "en"}"#;
    fs::write(&cfg.corpus, lines.join("\n")).unwrap();
    let err = compute_audit(&cfg).unwrap_err();
    assert!(err.is_schema());
    assert!(err.to_string().contains("corpus.jsonl:3:"), "{err}");
}

#[test]
fn missing_corpus_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = demo(dir.path());
    cfg.corpus = dir.path().join("nowhere.jsonl");
    let err = compute_audit(&cfg).unwrap_err();
    assert!(!err.is_schema());
    assert!(err.to_string().contains("nowhere.jsonl"), "{err}");
}

#[test]
fn target_without_profile_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = demo(dir.path());
    edit_corpus(&cfg, |r| {
        if r.tgt_lang == "fi" {
            r.tgt_lang = "sw".into();
            r.src_lang = "sw".into();
        }
    });
    // Profiles exist for every demo language, so the corpus is still valid.
    compute_audit(&cfg).unwrap();
    let profiles = fs::read_to_string(cfg.profiles.as_ref().unwrap()).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&profiles).unwrap();
    let arr = value["profiles"].as_array_mut().unwrap();
    arr.retain(|p| p["lang"] != "de");
    fs::write(cfg.profiles.as_ref().unwrap(), serde_json::to_string(&value).unwrap()).unwrap();
    let err = compute_audit(&cfg).unwrap_err();
    assert!(err.is_schema() && err.to_string().contains("'de'"), "{err}");
}

#[test]
fn report_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, ca) = demo(a.path());
    let (_, mut cb) = demo(b.path());
    cb.svg = true;
    run_audit(&ca).unwrap();
    run_audit(&cb).unwrap();
    for f in ["pairs.csv", "grouped.csv", "delta_hist.csv", "off_target.csv", "lambda.csv", "memory.csv", "report.json"]
    {
        let x = fs::read(ca.out_dir.join(f)).unwrap();
        let y = fs::read(cb.out_dir.join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    assert!(fs::read_to_string(cb.out_dir.join("grouped.svg")).unwrap().starts_with("<svg"));
    assert!(!ca.out_dir.join("grouped.svg").exists());
}

#[test]
fn bleu_filter_drops_weak_pairs_from_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut cfg) = demo(dir.path());
    cfg.bleu_filter = 1000.0;
    let report = compute_audit(&cfg).unwrap();
    assert_eq!(report.kept_pairs, 0);
    assert!(report.grouped.is_empty());
    assert!(report.delta_histogram.iter().all(|h| h.count == 0));
    assert!(report.pairs.iter().all(|p| !p.kept));
}

#[test]
fn losing_counts_match_sentence_partition() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = demo(dir.path());
    let report = compute_audit(&cfg).unwrap();
    let records: Vec<TranslationRecord> = read_jsonl(&cfg.corpus).unwrap();
    let deltas = mtbias_core::text_metrics::delta_partition(&records, cfg.delta_threshold, cfg.chrf).unwrap();
    let losing = deltas.iter().filter(|d| d.bucket == DeltaBucket::Losing).count();
    assert_eq!(report.pairs.iter().map(|p| p.losing).sum::<usize>(), losing);
    let all = report.off_target.as_ref().unwrap().iter().find(|r| r.bucket.is_none()).unwrap();
    assert_eq!(all.losing, losing);
}

#[test]
fn full_pruning_does_not_beat_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, _) = demo(dir.path());
    let items: Vec<SweepItem> = read_jsonl(&paths.sweep_items).unwrap();
    let cfg = ModelConfig::load(&paths.model_config).unwrap();
    let ws = load_weights(&paths.weights).unwrap();
    let rows = sweep(&cfg, &ws, &items, &[1.0, 0.0, 0.0], &PruneStrategy::ALL).unwrap();
    assert_eq!(rows.len(), 1 + 2 * PruneStrategy::ALL.len());
    assert!(rows[0].strategy.is_none());
    for s in PruneStrategy::ALL {
        let at = |p: f64| rows.iter().find(|r| r.strategy == Some(s) && r.p == p).unwrap().bleu;
        assert_eq!(at(0.0), rows[0].bleu);
        assert!(at(1.0) <= at(0.0));
    }
}
