use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use made_core::runstore::{read_log, replay, ReplayOutcome, CONFIG_SNAPSHOT, LOG_FILE, REPORT_JSON, REPORT_TEXT};

fn made(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_made")).args(args).output().unwrap()
}

fn made_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_made"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn evolve_sim(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["evolve", "--sim", "toy", "--out", p(dir)];
    args.extend_from_slice(extra);
    made(&args)
}

fn report_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(REPORT_JSON)).unwrap()).unwrap()
}

#[test]
fn evolve_writes_run_directory_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = evolve_sim(d, &["--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("best fitness"), "{}", stdout(&o));
    }
    for f in [LOG_FILE, CONFIG_SNAPSHOT, REPORT_JSON, REPORT_TEXT] {
        assert!(a.join(f).is_file(), "{f}");
    }
    assert_eq!(report_json(&a)["log_hash"], report_json(&b)["log_hash"]);

    let o = made(&["replay", "--run", p(&a)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("verdict: clean"));

    // Rerunning into an existing run directory is refused.
    assert_eq!(code(&evolve_sim(&a, &["--seed", "3"])), 2);
}

#[test]
fn replay_names_a_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(code(&evolve_sim(&dir, &["--seed", "11"])), 0);
    let mut lines = read_log(&dir).unwrap();
    let at = lines.iter().position(|l| l.contains("\"kind\":\"judged\"")).unwrap();
    lines.remove(at);
    fs::write(dir.join(LOG_FILE), lines.join("\n") + "\n").unwrap();
    let o = made(&["replay", "--run", p(&dir)]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("violation(s)"), "{out}");
    assert!(out.contains("sequence number"), "{out}");
}

#[test]
fn replay_of_truncated_log_prints_state() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(code(&evolve_sim(&dir, &["--seed", "1"])), 0);
    let lines = read_log(&dir).unwrap();
    fs::write(dir.join(LOG_FILE), lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let o = made(&["replay", "--run", p(&dir)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("completed_generations"), "{}", stdout(&o));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&made(&["replay", "--run", p(&tmp.path().join("missing"))])), 2);
    assert_eq!(code(&made(&["report", "--run", p(&tmp.path().join("missing"))])), 2);
    assert_eq!(code(&evolve_sim(&tmp.path().join("x"), &["--pop", "3"])), 2);
    assert_eq!(code(&evolve_sim(&tmp.path().join("y"), &["--pop", "0"])), 2);
    assert_eq!(code(&made(&["evolve", "--out", p(&tmp.path().join("z"))])), 2);
    assert_eq!(code(&made(&["evolve", "--sim", "toy", "--bogus"])), 2);
    assert_eq!(code(&made(&["frobnicate"])), 2);
    assert_eq!(code(&made(&["evolve", "--sim", "no-such-scenario", "--out", p(&tmp.path().join("w"))])), 2);
    let empty = tmp.path().join("empty.txt");
    fs::write(&empty, "   \n").unwrap();
    assert_eq!(code(&made(&["decompose", "--instruction", p(&empty), "--sim", "toy"])), 2);
    assert_eq!(code(&made(&["stability", "--input", p(&tmp.path().join("none.csv"))])), 2);
}

#[test]
fn max_gen_zero_stops_after_initial_population() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(code(&evolve_sim(&dir, &["--max-gen", "0", "--seed", "2"])), 0);
    let rep = report_json(&dir);
    assert_eq!(rep["best_fitness_curve"].as_array().unwrap().len(), 1);
    assert_eq!(rep["generations_executed"], 0);
}

#[test]
fn ablation_flag_reaches_config_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(code(&evolve_sim(&dir, &["--ablate-feedback"])), 0);
    let snap: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_SNAPSHOT)).unwrap()).unwrap();
    assert_eq!(snap["evolution"]["feedback_mode"], "score_only");
    assert_eq!(report_json(&dir)["feedback_mode"], "score_only");
}

#[test]
fn report_regenerates_from_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(code(&evolve_sim(&dir, &[])), 0);
    let before = fs::read_to_string(dir.join(REPORT_JSON)).unwrap();
    fs::remove_file(dir.join(REPORT_JSON)).unwrap();
    let o = made(&["report", "--run", p(&dir)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.join(REPORT_JSON)).unwrap(), before);
    match replay(&dir).unwrap() {
        ReplayOutcome::Complete(r) => assert!(r.clean()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn batch_report_averages_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("r{i}"))).collect();
    for (i, d) in dirs.iter().enumerate() {
        assert_eq!(code(&evolve_sim(d, &["--seed", &i.to_string()])), 0);
    }
    let mut args = vec!["batch-report", "--runs"];
    args.extend(dirs.iter().map(|d| p(d)));
    let o = made(&args);
    assert_eq!(code(&o), 0);
    let b: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(b["runs"], 3);
}

#[test]
fn decompose_reads_stdin_and_scripted_config() {
    let o = made_stdin(&["decompose", "--instruction", "-", "--sim", "toy"], "Write release notes.");
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["requirements"].as_array().unwrap().len(), 8);

    let tmp = tempfile::tempdir().unwrap();
    let reply = "```json\n[{\"id\":\"r1\",\"assertion\":\"Is it short?\"},{\"id\":\"r2\",\"assertion\":\"Is it polite?\",\"prerequisites\":[\"r1\"]}]\n```";
    fs::write(tmp.path().join("replies.json"), serde_json::to_string(&vec![reply]).unwrap()).unwrap();
    fs::write(tmp.path().join("made.toml"), "scripted_replies = \"replies.json\"\n").unwrap();
    let o = made_stdin(
        &["decompose", "--instruction", "-", "--config", p(&tmp.path().join("made.toml"))],
        "Write a short polite note.",
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let reqs = v["requirements"].as_array().unwrap();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[1]["prerequisites"][0], "r1");
}

#[test]
fn invalid_config_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("made.toml");
    fs::write(&cfg, "[evolution]\npopulation_size = 5\n").unwrap();
    assert_eq!(code(&made(&["evolve", "--sim", "toy", "--config", p(&cfg), "--out", p(&tmp.path().join("r"))])), 2);
    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(code(&made(&["evolve", "--sim", "toy", "--config", p(&cfg), "--out", p(&tmp.path().join("r"))])), 2);
}

#[test]
fn judge_scores_fixture_artifact() {
    let art = fixtures().join("simlab/toy_artifacts/a01.txt");
    let vectors: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("simlab/toy_vectors.json")).unwrap()).unwrap();
    let o = made(&["judge", "--sim", "toy", "--artifact", p(&art)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["scores"], vectors["vectors"]["a01.txt"]);
}

#[test]
fn stability_simulation_and_csv_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("stab");
    let o = made(&["stability", "--simulate", "stability", "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stability.json")).unwrap()).unwrap();
    assert!(rep["correlation"]["r"].as_f64().unwrap() < 0.0);
    assert!(out.join("stability.txt").is_file());

    // The scores the simulation wrote give the same report when read back.
    let o2 = made(&["stability", "--input", p(&out.join("scores.csv"))]);
    assert_eq!(code(&o2), 0);
    assert_eq!(stdout(&o2), stdout(&o));

    let o = made(&["stability", "--simulate", "stability-zero-noise"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("degenerate"), "{}", stdout(&o));
}

#[test]
fn stability_csv_matches_frozen_statistics() {
    let raw: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("stats/matrices.json")).unwrap()).unwrap();
    let m = &raw["matrices"][0];
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("scores.csv");
    let mut body = String::from("case_id,repeat,score\n");
    for (i, row) in m["values"].as_array().unwrap().iter().enumerate() {
        for (j, v) in row.as_array().unwrap().iter().enumerate() {
            body.push_str(&format!("c{i:02},{j},{}\n", v.as_f64().unwrap()));
        }
    }
    fs::write(&csv, body).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&made(&["stability", "--input", p(&csv), "--out", p(&out)])), 0);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stability.json")).unwrap()).unwrap();
    let close = |got: &serde_json::Value, want: &serde_json::Value, tol: f64| {
        let (g, w) = (got.as_f64().unwrap(), want.as_f64().unwrap());
        assert!((g - w).abs() <= tol, "{g} vs {w}");
    };
    close(&rep["correlation"]["r"], &m["pearson_r"], 1e-9);
    close(&rep["correlation"]["p"], &m["pearson_p"], 1e-6);
    close(&rep["icc_1_1"], &m["icc_1_1"], 1e-9);
    close(&rep["icc_1_k"], &m["icc_1_k"], 1e-9);
}

#[test]
fn campaign_prints_mean_curve() {
    let o = made(&["campaign", "--sim", "toy", "--runs", "5", "--seed", "0"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("runs: 5"), "{out}");
    assert!(out.contains("mean best fitness by generation: ["), "{out}");
}
