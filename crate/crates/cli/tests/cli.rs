//! End-to-end CLI behavior: exit codes, file outputs, config precedence,
//! determinism across runs and thread counts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hrapr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hrapr"))
}

fn run(args: &[&str]) -> Output {
    hrapr().args(args).output().expect("spawn hrapr")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_scene_dim(dir: &Path, name: &str, dim: &str, extra: &[&str]) -> PathBuf {
    let stem = dir.join(name);
    let mut args = vec![
        "synth".to_string(),
        "--out-stem".into(),
        stem.to_str().unwrap().into(),
        "--train".into(),
        "300".into(),
        "--near".into(),
        "60".into(),
        "--far".into(),
        "30".into(),
        "--dim".into(),
        dim.into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = hrapr().args(&args).output().expect("spawn hrapr synth");
    assert_code(&out, 0);
    stem
}

fn synth_scene(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    synth_scene_dim(dir, name, "32", extra)
}

#[test]
fn full_workflow_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let manifest = dir.path().join("scene.manifest");
    assert!(manifest.exists());

    // score
    let scored = dir.path().join("scored.csv");
    let out = run(&[
        "score",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--out",
        scored.to_str().unwrap(),
        "--config",
        manifest.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("r = "), "missing reliable fraction: {stdout}");
    let csv = std::fs::read_to_string(&scored).unwrap();
    assert!(csv.starts_with("id,score,retrieved,reliable,steps,best_match\n"));
    assert_eq!(csv.lines().count(), 91);

    // sweep
    let sweep = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--out",
        sweep.to_str().unwrap(),
        "--grid",
        "0.0,0.5,0.9,0.95",
    ]);
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(csv.lines().count(), 5);

    // refine
    let out_dir = dir.path().join("refined");
    let out = run(&[
        "refine",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--scene",
        manifest.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("convergence.csv").exists());
    let traces = std::fs::read_dir(out_dir.join("traces")).unwrap().count();
    assert_eq!(traces, 90);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("reduction"), "missing reduction line: {stdout}");

    // evaluate
    let summary = dir.path().join("summary.txt");
    let out = run(&[
        "evaluate",
        "--queries",
        stem.to_str().unwrap(),
        "--db",
        stem.to_str().unwrap(),
        "--out",
        summary.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&summary).unwrap();
    assert!(text.contains("retained:"));
    assert!(text.contains("med_terr/med_rerr"));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_scene(dir.path(), "a", &["--seed", "11"]);
    let b = synth_scene(dir.path(), "b", &["--seed", "11"]);
    let c = synth_scene(dir.path(), "c", &["--seed", "12"]);
    for ext in ["poses", "feat", "queries", "qfeat"] {
        let fa = std::fs::read(a.with_extension(ext)).unwrap();
        let fb = std::fs::read(b.with_extension(ext)).unwrap();
        assert_eq!(fa, fb, "seed 11 runs differ in .{ext}");
    }
    let fa = std::fs::read(a.with_extension("feat")).unwrap();
    let fc = std::fs::read(c.with_extension("feat")).unwrap();
    assert_ne!(fa, fc, "different seeds produced identical features");
}

#[test]
fn build_db_rebuild_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let rebuilt = dir.path().join("rebuilt");
    let out = run(&[
        "build-db",
        "--poses",
        stem.with_extension("poses").to_str().unwrap(),
        "--feat",
        stem.with_extension("feat").to_str().unwrap(),
        "--out-stem",
        rebuilt.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("count 300 dim 32 payload 38400 bytes"),
        "unexpected report: {stdout}"
    );
    for ext in ["poses", "feat"] {
        let a = std::fs::read(stem.with_extension(ext)).unwrap();
        let b = std::fs::read(rebuilt.with_extension(ext)).unwrap();
        assert_eq!(a, b, "rebuild differs in .{ext}");
    }
}

#[test]
fn build_db_reports_dimension_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_scene(dir.path(), "a", &[]);
    let b = synth_scene_dim(dir.path(), "b", "16", &[]);
    let out = run(&[
        "build-db",
        "--poses",
        a.with_extension("poses").to_str().unwrap(),
        "--feat",
        b.with_extension("feat").to_str().unwrap(),
        "--out-stem",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("32") && stderr.contains("16"), "diagnostic: {stderr}");
}

#[test]
fn sweep_without_ground_truth_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);

    // Strip ground truth by rewriting the query file header and columns.
    let q_path = stem.with_extension("queries");
    let text = std::fs::read_to_string(&q_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().replace("gt=1", "gt=0");
    let mut out_text = header + "\n";
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        out_text.push_str(&format!("{} {} {}\n", f[0], f[1..8].join(" "), f[15]));
    }
    let nogt = dir.path().join("nogt");
    std::fs::write(nogt.with_extension("queries"), out_text).unwrap();
    std::fs::copy(stem.with_extension("qfeat"), nogt.with_extension("qfeat")).unwrap();

    let out = run(&[
        "sweep",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        nogt.to_str().unwrap(),
        "--out",
        dir.path().join("s.csv").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground truth"));

    // Scoring without ground truth stays fine.
    let out = run(&[
        "score",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        nogt.to_str().unwrap(),
        "--out",
        dir.path().join("sc.csv").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
}

#[test]
fn zero_radius_scores_everything_zero() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let csv = dir.path().join("zero.csv");
    let out = run(&[
        "score",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--dth",
        "0",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], "0.000000", "nonzero score at radius 0: {line}");
        assert_eq!(cells[2], "0");
    }
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# loose gate\ngamma = -1.0\nd_th = 0.2\n").unwrap();

    // gamma -1 marks everything reliable.
    let out_a = dir.path().join("a.csv");
    let out = run(&[
        "score",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("r = 1.0000"));

    // The flag beats the config file: gamma 2 marks nothing reliable.
    let out_b = dir.path().join("b.csv");
    let out = run(&[
        "score",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--gamma",
        "2.0",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("r = 0.0000"));

    // Unknown keys are rejected.
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&[
        "score",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn preset_constants_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path(), "indoor", &["--preset", "indoor"]);
    let text = std::fs::read_to_string(dir.path().join("indoor.manifest")).unwrap();
    assert!(text.contains("d_th = 0.2"), "manifest:\n{text}");
    assert!(text.contains("gamma = 0.95"));
    assert!(text.contains("hs_steps = 10"));
    assert!(text.contains("ls_steps = 50"));

    synth_scene(dir.path(), "outdoor", &["--preset", "outdoor"]);
    let text = std::fs::read_to_string(dir.path().join("outdoor.manifest")).unwrap();
    assert!(text.contains("d_th = 1.5"), "manifest:\n{text}");
    assert!(text.contains("hs_steps = 30"));
}

#[test]
fn scoring_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let csv = dir.path().join(format!("t{threads}.csv"));
        let out = hrapr()
            .env("HRAPR_THREADS", threads)
            .args([
                "score",
                "--db",
                stem.to_str().unwrap(),
                "--queries",
                stem.to_str().unwrap(),
                "--out",
                csv.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_code(&out, 0);
        outputs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let out = hrapr()
        .env("HRAPR_THREADS", "zero?")
        .args(["score", "--db", "x", "--queries", "y", "--out", "z"])
        .output()
        .unwrap();
    assert_code(&out, 2);
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["score", "--definitely-not-a-flag"]);
    assert_code(&out, 2);
}

#[test]
fn infeasible_scene_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--out-stem",
        dir.path().join("x").to_str().unwrap(),
        "--train",
        "0",
        "--near",
        "5",
        "--far",
        "0",
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("generation"));
}

#[test]
fn refine_budget_zero_keeps_poses() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let out_dir = dir.path().join("r0");
    let out = run(&[
        "refine",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--scene",
        dir.path().join("scene.manifest").to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--hs",
        "0",
        "--ls",
        "0",
        "--no-traces",
    ]);
    assert_code(&out, 0);
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        // pre_terr equals post_terr on every row.
        assert_eq!(cells[4], cells[6], "pose moved with zero budget: {line}");
        assert_eq!(cells[5], cells[7]);
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("reduction 0.0%"), "{stdout}");
}

#[test]
fn refine_hs_equals_ls_reports_zero_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let stem = synth_scene(dir.path(), "scene", &[]);
    let out_dir = dir.path().join("flat");
    let out = run(&[
        "refine",
        "--db",
        stem.to_str().unwrap(),
        "--queries",
        stem.to_str().unwrap(),
        "--scene",
        dir.path().join("scene.manifest").to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--hs",
        "3",
        "--ls",
        "3",
        "--no-traces",
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("reduction 0.0%"));
}
