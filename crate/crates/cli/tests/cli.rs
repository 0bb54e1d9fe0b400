use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use seqmark::stats::ks_uniform;

fn seqmark(args: &[&str], key: Option<&str>, stdin: &str) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_seqmark"));
    cmd.args(args).env_remove("SEQMARK_KEY").stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    if let Some(k) = key {
        cmd.env("SEQMARK_KEY", k);
    }
    let mut child = cmd.spawn().unwrap();
    // Commands that fail validation exit without reading their input.
    let _ = child.stdin.take().unwrap().write_all(stdin.as_bytes());
    child.wait_with_output().unwrap()
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn prompts(count: usize) -> String {
    (0..count).map(|i| format!("{{\"id\": {i}, \"prompt\": [{}, {}]}}\n", i % 7, i % 11)).collect()
}

fn tokens_of(v: &Value) -> Vec<u32> {
    v["tokens"].as_array().unwrap().iter().map(|t| t.as_u64().unwrap() as u32).collect()
}

/// Unique windows `x[max(0, i-n+1)..=i]`, computed without the library.
fn unique_grams(tokens: &[u32], n: usize) -> usize {
    (0..tokens.len()).map(|i| &tokens[i.saturating_sub(n - 1)..=i]).collect::<HashSet<_>>().len()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn empty_input_gives_empty_output() {
    for cmd in ["watermark", "detect"] {
        let out = seqmark(&[cmd], Some("1"), "");
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn round_trip_with_the_default_scenario() {
    let wm = seqmark(&["watermark"], Some("77"), &prompts(20));
    assert!(wm.status.success());
    let marked = lines(&wm);
    assert_eq!(marked.len(), 20);
    let det = seqmark(&["detect"], Some("77"), &String::from_utf8(wm.stdout.clone()).unwrap());
    assert!(det.status.success());
    let reports = lines(&det);
    let mut scores: Vec<f64> = reports.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    scores.sort_by(f64::total_cmp);
    assert!(scores[scores.len() / 2] > 0.9, "{scores:?}");
    for (m, r) in marked.iter().zip(&reports) {
        assert_eq!(m["id"], r["id"]);
        assert_eq!(r["method"], "sum");
        assert_eq!(r["t_unique"].as_u64().unwrap() as usize, unique_grams(&tokens_of(m), 4));
    }
}

#[test]
fn wrong_key_gives_null_p_values() {
    let wm = seqmark(&["watermark", "--m", "4", "--k", "5", "--max-len", "40"], Some("5"), &prompts(300));
    let det = seqmark(&["detect"], Some("6"), &String::from_utf8(wm.stdout).unwrap());
    let ps: Vec<f64> = lines(&det).iter().map(|r| r["p_value"].as_f64().unwrap()).collect();
    assert_eq!(ps.len(), 300);
    let ks = ks_uniform(&ps).unwrap();
    assert!(ks.p_value > 0.001, "KS p {}", ks.p_value);
}

#[test]
fn recursive_with_one_key_matches_sum() {
    let wm = seqmark(&["watermark", "--m", "8", "--k", "4", "--max-len", "30"], Some("9"), &prompts(10));
    let text = String::from_utf8(wm.stdout).unwrap();
    let sum = lines(&seqmark(&["detect", "--method", "sum"], Some("9"), &text));
    let rec = lines(&seqmark(&["detect", "--method", "recursive"], Some("9"), &text));
    for (a, b) in sum.iter().zip(&rec) {
        assert_eq!(b["method"], "recursive");
        assert!((a["score"].as_f64().unwrap() - b["score"].as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn recursive_scheme_round_trip_with_key_file() {
    let dir = tempfile::tempdir().unwrap();
    let keys = write(dir.path(), "keys.txt", "# three levels\n11, 22\n0x21\n");
    let wm = seqmark(&["watermark", "--key-file", &keys, "--m", "2", "--k", "10", "--max-len", "100"], None, &prompts(5));
    assert!(wm.status.success(), "{}", String::from_utf8_lossy(&wm.stderr));
    let det = seqmark(&["detect", "--key-file", &keys, "--method", "recursive"], None, &String::from_utf8(wm.stdout).unwrap());
    for r in lines(&det) {
        assert_eq!(r["per_key"].as_array().unwrap().len(), 3);
        assert!(r["p_value"].as_f64().unwrap() < 0.05, "{r}");
    }
}

#[test]
fn bound_prints_the_closed_form() {
    let out = seqmark(&["bound", "--m", "64", "--t", "50"], None, "");
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (m, t) = (64.0f64, 50.0);
    let alpha = m.ln();
    let lambda = (m / (m + 1.0) - 0.5) / m.ln();
    let want = 1.0 / (1.0 + 1.0 / (3.0 * t * lambda * lambda * alpha * alpha));
    assert!((v["result"]["bound"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(v["config"]["alpha"].as_f64().unwrap(), alpha);
    assert_eq!(v["command"], "bound");
}

#[test]
fn bad_records_are_flagged_in_place() {
    let input = "{\"id\": 1, \"prompt\": [1]}\nnot json\n{\"id\": 3, \"prompt\": [\"x\"]}\n{\"id\": 4}\n";
    let out = seqmark(&["watermark", "--m", "2", "--k", "5", "--max-len", "10"], Some("3"), input);
    assert_eq!(out.status.code(), Some(1));
    let l = lines(&out);
    assert_eq!(l.len(), 4);
    assert_eq!(tokens_of(&l[0]).len(), 10);
    assert!(l[1]["error"].is_string() && l[1]["line"] == 2);
    assert_eq!(l[2]["id"], 3);
    assert!(l[2]["error"].is_string());
    assert_eq!(tokens_of(&l[3]).len(), 10);
}

#[test]
fn keys_are_never_taken_from_arguments() {
    let out = seqmark(&["watermark", "--key", "5"], None, "");
    assert_eq!(out.status.code(), Some(2));
    let out = seqmark(&["watermark"], None, &prompts(1));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SEQMARK_KEY"));
    let out = seqmark(&["detect"], Some("12,hunter2"), "");
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("hunter2"));
}

#[test]
fn config_is_validated_before_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[watermark]\nm = 4\nchunk = 3\n");
    let out = seqmark(&["watermark", "--config", &bad], Some("1"), &prompts(1));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chunk"));

    // 1000^3 raw samples per chunk exceeds the budget; the missing binary is never spawned.
    let over = write(
        dir.path(),
        "over.toml",
        "[sampler]\nbackend = \"subprocess\"\ncommand = [\"/nonexistent/sampler\"]\n[watermark]\nm = 1000\nfanout_budget = 1000000\n",
    );
    let out = seqmark(&["watermark", "--config", &over], Some("1,2,3"), &prompts(1));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("budget"), "{err}");
    assert!(!err.contains("nonexistent"), "{err}");
}

#[test]
fn one_config_file_drives_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "rng_seed = 4\n[sampler]\nbackend = \"markov_mock\"\nvocab_size = 300\nsharpness = 1.0\n\n[watermark]\nm = 16\nk = 8\nmax_len = 64\nn = 3\ndist = { family = \"std_normal\" }\n",
    );
    let wm = seqmark(&["watermark", "--config", &cfg], Some("8"), &prompts(4));
    assert!(wm.status.success(), "{}", String::from_utf8_lossy(&wm.stderr));
    let marked = lines(&wm);
    let det = seqmark(&["detect", "--config", &cfg], Some("8"), &String::from_utf8(wm.stdout).unwrap());
    for (m, r) in marked.iter().zip(lines(&det)) {
        assert_eq!(r["t_unique"].as_u64().unwrap() as usize, unique_grams(&tokens_of(m), 3));
        assert!(r["p_value"].as_f64().unwrap() < 1e-3, "{r}");
    }
}

#[test]
fn outputs_are_deterministic_and_ordered() {
    let input = prompts(64);
    let run = |threads: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_seqmark"));
        cmd.args(["watermark", "--m", "4", "--k", "5", "--max-len", "20", "--seed", "3"])
            .env("SEQMARK_KEY", "2")
            .env("RAYON_NUM_THREADS", threads)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped());
        let mut child = cmd.spawn().unwrap();
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        child.wait_with_output().unwrap().stdout
    };
    let a = run("1");
    assert_eq!(a, run("4"));
    let ids: Vec<Value> = String::from_utf8(a).unwrap().lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["id"].clone()).collect();
    assert_eq!(ids, (0..64).map(Value::from).collect::<Vec<_>>());
}

#[test]
fn attack_flag_weakens_detection() {
    let wm = seqmark(&["watermark", "--m", "16", "--k", "10", "--max-len", "60"], Some("4"), &prompts(10));
    let text = String::from_utf8(wm.stdout).unwrap();
    let clean = lines(&seqmark(&["detect"], Some("4"), &text));
    let hit = lines(&seqmark(&["detect", "--attack-pct", "50", "--vocab-size", "100"], Some("4"), &text));
    let mean = |rs: &[Value]| rs.iter().map(|r| r["ln_p_value"].as_f64().unwrap()).sum::<f64>() / rs.len() as f64;
    assert!(mean(&hit) > mean(&clean));
    let out = seqmark(&["detect", "--attack-pct", "10"], Some("4"), &text);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_artifact_embeds_config_and_seed() {
    let out = seqmark(&["bench", "--trials", "30", "--seed", "7"], None, "");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["rng_seed"], 7);
    assert_eq!(v["config"]["name"], "dummy_lm_flat");
    assert!(v["result"]["cells"][0]["auc"].as_f64().unwrap() > 0.95);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.txt");
    let out = seqmark(&["bench", "--preset", "dummy-lm-recursive", "--trials", "30", "--format", "table", "-o", path.to_str().unwrap()], None, "");
    assert!(out.status.success());
    let table = std::fs::read_to_string(path).unwrap();
    assert!(table.starts_with("# config: ") && table.contains("recursive"), "{table}");
}

#[test]
fn simulate_alpha_falls_below_ln_m_for_zipf() {
    let out = seqmark(&["simulate", "alpha", "--law", "zipf", "--v", "32000", "--m", "4,1024", "--trials", "200"], None, "");
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v["result"].as_array().unwrap();
    let gap = |r: &Value| r["ln_m"].as_f64().unwrap() - r["alpha"].as_f64().unwrap();
    assert!(gap(&rows[1]) > 1.0 && gap(&rows[1]) > gap(&rows[0]), "{rows:?}");
    assert_eq!(v["config"]["rng_seed"], 0);
}

#[test]
fn simulate_gamma_and_distortion_artifacts() {
    let out = seqmark(&["simulate", "gamma", "--t", "100", "--fpr", "0.01"], None, "");
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["result"]["curves"][0]["tpr"].as_f64().unwrap() >= 0.999);

    let out = seqmark(&["simulate", "distortion", "--runs", "40000"], None, "");
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["result"]["outcomes"], 25);
    assert!(v["result"]["chi2_p"].as_f64().unwrap() > 0.001, "{v}");
    assert_eq!(v["config"]["fresh_keys"], true);
}
