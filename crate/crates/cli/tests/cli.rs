use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mtbias-audit"));
    c.env("MTBIAS_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn demo(dir: &Path) -> PathBuf {
    let d = dir.join("demo");
    let stdout = ok(&["demo", "--out", s(&d), "--sentences", "24"]);
    assert!(stdout.contains("audited 24 sentences"), "{stdout}");
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn demo_then_run_writes_every_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = demo(tmp.path());
    fs::remove_dir_all(d.join("report")).unwrap();
    let stdout = ok(&["run", "--config", s(&d.join("audit.json"))]);
    assert!(stdout.contains("of 4 pairs kept"), "{stdout}");
    for f in ["pairs.csv", "grouped.csv", "delta_hist.csv", "off_target.csv", "lambda.csv", "memory.csv", "report.json"]
    {
        assert!(d.join("report").join(f).is_file(), "{f}");
    }
    let memory = fs::read_to_string(d.join("report/memory.csv")).unwrap();
    assert!(memory.contains("0.7"), "{memory}");
}

#[test]
fn malformed_corpus_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = demo(tmp.path());
    let corpus = d.join("corpus.jsonl");
    let mut text = fs::read_to_string(&corpus).unwrap();
    text.push_str("{\"pair_id\": 7}\n");
    let line = text.lines().count();
    fs::write(&corpus, text).unwrap();
    let out = run(&["run", "--config", s(&d.join("audit.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("corpus.jsonl:{line}")), "{err}");
}

#[test]
fn missing_config_exits_with_one() {
    let out = run(&["run", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = bin().env("MTBIAS_THREADS", "zero").args(["wsd", "--in", "x", "--out", "y"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("MTBIAS_THREADS"));
}

#[test]
fn prune_quantize_translate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = demo(tmp.path());
    let t = tmp.path();
    let pruned = t.join("p.mtbw");
    let stdout = ok(&[
        "prune",
        "--in",
        s(&d.join("weights.mtbw")),
        "--out",
        s(&pruned),
        "--p",
        "0.45",
        "--strategy",
        "per-module",
    ]);
    let after: f64 = stdout.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((0.44..0.47).contains(&after), "{stdout}");

    let sources = t.join("src.jsonl");
    fs::write(&sources, "{\"id\": \"a\", \"source\": [3, 4, 5, 6]}\n{\"source\": [7, 8]}\n").unwrap();
    let cfg = d.join("model.json");
    let calib = t.join("calib.mtbw");
    ok(&[
        "calibrate",
        "--config",
        s(&cfg),
        "--weights",
        s(&d.join("weights.mtbw")),
        "--in",
        s(&sources),
        "--out",
        s(&calib),
    ]);
    let q = t.join("model.mtbq");
    let stdout = ok(&["quantize", "--in", s(&d.join("weights.mtbw")), "--calib", s(&calib), "--out", s(&q)]);
    assert!(stdout.contains("activation sites"), "{stdout}");

    for w in [d.join("weights.mtbw"), pruned, q] {
        let hyps = t.join("hyps.jsonl");
        let attn = t.join("attn.jsonl");
        ok(&[
            "translate",
            "--config",
            s(&cfg),
            "--weights",
            s(&w),
            "--in",
            s(&sources),
            "--out",
            s(&hyps),
            "--attn",
            s(&attn),
        ]);
        let lines: Vec<serde_json::Value> =
            fs::read_to_string(&hyps).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["id"], "a");
        assert!(lines[0]["tokens"].is_array());
        assert_eq!(fs::read_to_string(&attn).unwrap().lines().count(), 2);
    }
}

#[test]
fn sentence_tools_agree_with_the_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let d = demo(tmp.path());
    let t = tmp.path();
    let corpus = d.join("corpus.jsonl");

    ok(&["score", "--in", s(&corpus), "--metric", "chrf", "--out", s(&t.join("chrf.csv"))]);
    let chrf = fs::read_to_string(t.join("chrf.csv")).unwrap();
    assert_eq!(chrf.lines().count(), 25);
    ok(&["score", "--in", s(&corpus), "--metric", "bleu", "--out", s(&t.join("bleu.csv"))]);
    let bleu = fs::read_to_string(t.join("bleu.csv")).unwrap();
    let report = json(&d.join("report/report.json"));
    for line in bleu.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let pair = report["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|p| p["src_lang"] == f[0] && p["tgt_lang"] == f[1])
            .unwrap();
        assert_eq!(pair["bleu_base"].as_f64().unwrap(), f[3].parse::<f64>().unwrap());
    }

    let deltas = t.join("delta.jsonl");
    let stdout = ok(&["delta", "--in", s(&corpus), "--out", s(&deltas)]);
    let losing: u64 = report["pairs"].as_array().unwrap().iter().map(|p| p["losing"].as_u64().unwrap()).sum();
    assert!(stdout.starts_with(&format!("losing {losing},")), "{stdout}");

    // Attention matrices pulled out of the corpus feed the align command.
    let (mut base, mut comp) = (String::new(), String::new());
    for l in fs::read_to_string(&corpus).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        base.push_str(&format!("{}\n", v["attn_base"]));
        comp.push_str(&format!("{}\n", v["attn_comp"]));
    }
    fs::write(t.join("ab.jsonl"), base).unwrap();
    fs::write(t.join("ac.jsonl"), comp).unwrap();
    let lam = t.join("lambda.json");
    ok(&[
        "align",
        "--in",
        s(&deltas),
        "--attn-base",
        s(&t.join("ab.jsonl")),
        "--attn-comp",
        s(&t.join("ac.jsonl")),
        "--subset",
        "winning",
        "--out",
        s(&lam),
    ]);
    let v = json(&lam);
    assert_eq!(v["subset"], "winning");
    assert!(v["lambda"].as_f64().is_some_and(|l| l > 0.0));

    let off =
        ok(&["lid", "offtarget", "--in", s(&corpus), "--profiles", s(&d.join("profiles.json")), "--which", "base"]);
    let v: serde_json::Value = serde_json::from_str(off.trim()).unwrap();
    assert_eq!(v["evaluated"], 24);
    assert!(v["off_target_rate"].as_f64().unwrap() <= 1.0);
}

#[test]
fn lid_train_gender_wsd_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let d = demo(tmp.path());
    let t = tmp.path();
    let profiles = t.join("profiles.json");
    ok(&["lid", "train", "--corpora", s(&d.join("lid")), "--out", s(&profiles), "--k", "50"]);
    let v = json(&profiles);
    assert_eq!(v["k"], 50);
    assert_eq!(v["profiles"].as_array().unwrap().len(), 5);

    ok(&["gender", "--in", s(&d.join("gender.jsonl")), "--out", s(&t.join("g.json"))]);
    let g = json(&t.join("g.json"));
    assert!(g["average_psi_star"].as_f64().is_some(), "{g}");

    ok(&["wsd", "--in", s(&d.join("senses.jsonl")), "--out", s(&t.join("w.json"))]);
    let w = json(&t.join("w.json"));
    for key in ["SFII", "SPDI", "MFS", "MFS+"] {
        assert!(w[key].as_f64().is_some_and(|x| (0.0..=100.0).contains(&x)), "{w}");
    }

    let csv = t.join("sweep.csv");
    ok(&[
        "sweep",
        "--config",
        s(&d.join("model.json")),
        "--weights",
        s(&d.join("weights.mtbw")),
        "--in",
        s(&d.join("sweep.jsonl")),
        "--ratios",
        "0,1",
        "--strategies",
        "transformer-layer,per-module",
        "--out",
        s(&csv),
    ]);
    let rows: Vec<Vec<String>> =
        fs::read_to_string(&csv).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 5);
    let base = &rows[0][2];
    assert!(rows.iter().filter(|r| r[1] == "0").all(|r| &r[2] == base));
}

#[test]
fn invalid_sense_record_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("s.jsonl");
    fs::write(
        &f,
        "{\"lemma_pos\":\"bank.n\",\"gold_index\":1,\"predicted_index\":1,\"correct\":true,\"polysemy\":2}\n\
         {\"lemma_pos\":\"bank.n\",\"gold_index\":5,\"predicted_index\":1,\"correct\":false,\"polysemy\":2}\n",
    )
    .unwrap();
    let out = run(&["wsd", "--in", s(&f), "--out", s(&tmp.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("s.jsonl:2"));
}
