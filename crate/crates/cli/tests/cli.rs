use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use jsp_core::env::{gap_percent, reported_gap};
use jsp_core::instance::generate;
use jsp_core::nncore::Checkpoint;
use jsp_core::policy::{PolicyConfig, PolicyNet};
use tempfile::TempDir;

fn jsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jsp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = jsp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Data lines of a CSV report, split into fields.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

/// Two named instances and a registry holding their bounds.
fn benchmark_dir(tmp: &TempDir) -> (String, String) {
    let dir = tmp.path().join("ta");
    fs::create_dir(&dir).unwrap();
    fs::write(dir.join("TA1.txt"), generate(4, 3, 1).to_standard()).unwrap();
    fs::write(dir.join("TA2.txt"), generate(4, 3, 2).to_standard()).unwrap();
    let ub = tmp.path().join("registry.csv");
    fs::write(
        &ub,
        "name,n,m,ub,optimal\nTA1,4,3,250,true\nTA2,4,3,260,false\n",
    )
    .unwrap();
    (p(&dir).to_string(), p(&ub).to_string())
}

#[test]
fn pdr_rows_use_the_registry_bound() {
    let tmp = TempDir::new().unwrap();
    let (dir, ub) = benchmark_dir(&tmp);
    let text = ok(&["pdr", "--rules", "spt", "--dir", &dir, "--ub", &ub]);
    assert!(text.starts_with("# command=pdr\n"));
    let rows = rows(&text);
    let ta1 = rows.iter().find(|r| r[0] == "TA1").unwrap();
    assert_eq!(ta1[1], "spt");
    let makespan: u32 = ta1[2].parse().unwrap();
    assert_eq!(ta1[3], format!("{:.2}", reported_gap(makespan, 250)));

    let gaps: Vec<f64> = rows
        .iter()
        .filter(|r| !r[0].starts_with("mean"))
        .map(|r| r[3].parse().unwrap())
        .collect();
    let mean = rows.iter().find(|r| r[0] == "mean:4x3").unwrap();
    let mean_gap: f64 = mean[3].parse().unwrap();
    assert!((mean_gap - gaps.iter().sum::<f64>() / gaps.len() as f64).abs() <= 0.01);
    let unrounded = rows
        .iter()
        .filter(|r| !r[0].starts_with("mean"))
        .map(|r| gap_percent(r[2].parse().unwrap(), if r[0] == "TA1" { 250 } else { 260 }))
        .sum::<f64>()
        / 2.0;
    assert!((mean_gap - unrounded).abs() <= 0.005 + 1e-9);
}

#[test]
fn unknown_rule_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let (dir, _) = benchmark_dir(&tmp);
    let out = jsp(&["pdr", "--rules", "xyz", "--dir", &dir]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("xyz") && err.contains("Usage"), "{err}");
}

#[test]
fn missing_bound_and_bad_instance_are_runtime_errors() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("x");
    fs::create_dir(&dir).unwrap();
    fs::write(dir.join("unknown.txt"), generate(2, 2, 0).to_standard()).unwrap();
    assert_eq!(jsp(&["pdr", "--dir", p(&dir)]).status.code(), Some(1));
    fs::write(dir.join("broken.txt"), "2 2\n0 1\n").unwrap();
    assert_eq!(
        jsp(&["pdr", "--dir", p(&dir), "--reference", "lower-bound"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("g");
    ok(&[
        "generate",
        "--n",
        "3",
        "--m",
        "3",
        "--count",
        "6",
        "--seed",
        "2",
        "--dir",
        p(&dir),
    ]);
    let run = |jobs: &str| {
        ok(&[
            "pdr",
            "--dir",
            p(&dir),
            "--reference",
            "oracle",
            "--jobs",
            jobs,
        ])
        .lines()
        .filter(|l| !l.starts_with("# jobs="))
        .collect::<Vec<_>>()
        .join("\n")
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn oracle_reports_optimal_makespans() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("g");
    ok(&[
        "generate",
        "--n",
        "2",
        "--m",
        "2",
        "--count",
        "1",
        "--seed",
        "5",
        "--dir",
        p(&dir),
    ]);
    let file = fs::read_dir(&dir).unwrap().next().unwrap().unwrap().path();
    let schedules = tmp.path().join("s");
    let text = ok(&["oracle", p(&file), "--schedules", p(&schedules)]);
    let r = &rows(&text)[0];
    assert_eq!(r[4], "true");
    let csv = fs::read_dir(&schedules)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let sched = fs::read_to_string(csv).unwrap();
    assert!(sched.ends_with(&format!("# makespan,{}\n", r[3])));
}

fn train(tmp: &TempDir, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let dir = tmp.path().join(name);
    let mut args = vec![
        "train",
        "--ladder",
        "3x3,4x4",
        "--embed-dim",
        "8",
        "--batch",
        "4",
        "--test-size",
        "4",
        "--u",
        "10",
        "--b",
        "10",
        "--eval-every",
        "10",
        "--dir",
        p(&dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir
}

#[test]
fn training_logs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let args = ["--curriculum", "rascl", "--iters", "40", "--seed", "1"];
    let a = train(&tmp, "a", &args);
    let b = train(&tmp, "b", &args);
    for f in ["metrics.csv", "levels.csv", "checkpoint.jspc"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.contains("# curriculum=rascl\n"));
    assert_eq!(rows(&metrics).len(), 40);
}

#[test]
fn icl_levels_never_decrease() {
    let tmp = TempDir::new().unwrap();
    let dir = train(&tmp, "icl", &["--curriculum", "icl", "--iters", "40"]);
    let levels: Vec<usize> = rows(&fs::read_to_string(dir.join("levels.csv")).unwrap())
        .iter()
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert!(!levels.is_empty());
    assert!(levels.windows(2).all(|w| w[0] <= w[1]), "{levels:?}");
}

#[test]
fn zero_iterations_save_the_initial_network() {
    let tmp = TempDir::new().unwrap();
    let dir = train(&tmp, "zero", &["--iters", "0", "--seed", "7"]);
    let saved =
        PolicyNet::<f32>::from_checkpoint(&Checkpoint::load(&dir.join("checkpoint.jspc")).unwrap())
            .unwrap();
    let fresh = PolicyNet::<f32>::new(PolicyConfig::with_embed_dim(8), 7).unwrap();
    assert_eq!(saved.params().flatten(), fresh.params().flatten());
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "# desk run\ncurriculum = icl\niters = 20\nseed = 3\n").unwrap();
    let dir = train(&tmp, "c", &["--config", p(&cfg), "--iters", "10"]);
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("# curriculum=icl\n"));
    assert!(metrics.contains("# seed=3\n"));
    assert!(metrics.contains("# iters=10\n"));
    assert_eq!(rows(&metrics).len(), 10);

    fs::write(&cfg, "no-such-key = 1\n").unwrap();
    let out = jsp(&["train", "--config", p(&cfg), "--dir", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

fn column(text: &str, name: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines[1..]
        .iter()
        .map(|l| l.split(',').nth(k).unwrap().to_string())
        .collect()
}

#[test]
fn eval_strategies_respect_their_bounds() {
    let tmp = TempDir::new().unwrap();
    let run = train(&tmp, "net", &["--iters", "5"]);
    let ckpt = run.join("checkpoint.jspc");
    let dir = tmp.path().join("g");
    ok(&[
        "generate",
        "--n",
        "5",
        "--m",
        "4",
        "--count",
        "5",
        "--seed",
        "9",
        "--dir",
        p(&dir),
    ]);
    let text = ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--dir",
        p(&dir),
        "--reference",
        "best-pdr",
        "--strategies",
        "greedy,beam:1,pomo:3",
    ]);
    assert_eq!(column(&text, "greedy_obj"), column(&text, "beam:1_obj"));
    for (g, w) in column(&text, "greedy_obj")
        .iter()
        .zip(column(&text, "pomo:3_obj"))
    {
        assert!(w.parse::<f64>().unwrap() <= g.parse::<f64>().unwrap());
    }

    let long = tmp.path().join("long.csv");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--dir",
        p(&dir),
        "--reference",
        "best-pdr",
        "--strategies",
        "greedy,beam:1,pomo:3",
        "--long",
        "--out",
        p(&long),
    ]);
    let table = ok(&["table", p(&long)]);
    let strip = |t: &str| {
        t.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&table), strip(&text));

    let wrong = jsp(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--dir",
        p(&dir),
        "--embed-dim",
        "16",
    ]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let (dir, _) = benchmark_dir(&tmp);
    let missing = tmp.path().join("none.jspc");
    let out = jsp(&["eval", "--checkpoint", p(&missing), "--dir", &dir]);
    assert_eq!(out.status.code(), Some(2));
    let bad = jsp(&[
        "eval",
        "--checkpoint",
        p(&missing),
        "--dir",
        &dir,
        "--strategies",
        "beam:0",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
