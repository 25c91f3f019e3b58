//! End-to-end runs of the `adakern` binary.

mod common;

use std::fs;

use adakern::io::parse_table;
use adakern_core::{estimate_alpha, PartitionTable, ResidualSet};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use tempfile::tempdir;

fn residual_file(dir: &std::path::Path, name: &str, n: usize, fraction: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inlier = Normal::new(0.0, 1.0).unwrap();
    let outlier = Uniform::new(-8.0, 8.0).unwrap();
    let k = (fraction * n as f64) as usize;
    let values: Vec<f64> = (0..n)
        .map(|i| if i < k { outlier.sample(&mut rng) } else { inlier.sample(&mut rng) })
        .collect();
    write(dir, name, &values.iter().map(|v| format!("{v}\n")).collect::<String>());
    values
}

#[test]
fn partition_table_build_and_verify() {
    let dir = tempdir().unwrap();
    let out = run(&["partition-table", "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("partition_table.schema.json", &summary);
    let path = dir.path().join("partition_table.txt");
    let text = fs::read_to_string(&path).unwrap();
    let table = parse_table(&path, &text).unwrap();
    assert_eq!(table.len(), 121);
    assert!(dir.path().join("adakern.log").exists());

    let out = run(&["partition-table", "--verify", s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("partition_table.schema.json", &report);
    assert!(report["max_deviation"].as_f64().unwrap() < 1e-8);

    // a value nudged while keeping the table monotone
    let last = *table.log_z().last().unwrap();
    let corrupted = text.replace(&format!("\n{last}\n"), &format!("\n{}\n", last - 1e-6));
    assert_ne!(corrupted, text);
    let bad = write(dir.path(), "nudged.txt", &corrupted);
    assert_eq!(code(&run(&["partition-table", "--verify", s(&bad)])), 2);

    let truncated = write(dir.path(), "truncated.txt", &text[..text.len() / 2]);
    assert_eq!(code(&run(&["partition-table", "--verify", s(&truncated)])), 2);

    let missing = dir.path().join("missing.txt");
    assert_eq!(code(&run(&["partition-table", "--verify", s(&missing)])), 1);
}

#[test]
fn partition_table_honours_grid_flags() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("t.txt");
    let out = run(&[
        "partition-table",
        "--output",
        s(&path),
        "--alpha-min",
        "-2",
        "--alpha-max",
        "1",
        "--resolution",
        "0.5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = adakern::io::read_table(&path).unwrap();
    assert_eq!(table, PartitionTable::build(-2.0, 1.0, 0.5, 10.0).unwrap());
}

#[test]
fn estimate_alpha_fixtures() {
    let dir = tempdir().unwrap();
    let table = PartitionTable::build_default().unwrap();

    residual_file(dir.path(), "gauss.txt", 10_000, 0.0, 1);
    let out = run(&["estimate-alpha", s(&dir.path().join("gauss.txt"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("alpha_estimate.schema.json", &v);
    assert!(v["alpha"].as_f64().unwrap() >= 1.5, "{}", v["alpha"]);
    assert_eq!(v["profile"].as_array().unwrap().len(), 121);

    // 30% uniform on [-8c, 8c]: frozen oracle value 0.1, one grid step of slack
    let values = residual_file(dir.path(), "dirty.txt", 10_000, 0.3, 2);
    let out_path = dir.path().join("dirty.json");
    let out = run(&["estimate-alpha", s(&dir.path().join("dirty.txt")), "--output", s(&out_path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = json(&out_path);
    let alpha = v["alpha"].as_f64().unwrap();
    assert!((-0.05..=0.25).contains(&alpha), "{alpha}");
    let direct = estimate_alpha(&ResidualSet::new(values).unwrap(), 1.0, &table).unwrap();
    assert_eq!(alpha, direct.alpha);

    write(dir.path(), "one.txt", "0.3\n");
    let out = run(&["estimate-alpha", s(&dir.path().join("one.txt"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid("alpha_estimate.schema.json", &v);
    assert_eq!(v["degenerate"], true);
}

#[test]
fn estimate_alpha_rejects_bad_files() {
    let dir = tempdir().unwrap();
    let bad = write(dir.path(), "bad.txt", "1.0\n# note\n2.0 oops\n");
    let out = run(&["estimate-alpha", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bad.txt:3"), "{}", stderr(&out));
    let empty = write(dir.path(), "empty.txt", "\n# nothing\n");
    assert_eq!(code(&run(&["estimate-alpha", s(&empty)])), 1);
    assert_eq!(code(&run(&["estimate-alpha", s(&dir.path().join("none.txt"))])), 1);
}

#[test]
fn fit_report_and_compare() {
    let dir = tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "seed = 4\n[outliers]\nfraction = 0.3\n");
    let out = run(&["fit", "--config", s(&cfg), "--compare", "adaptive,squared", "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for policy in ["adaptive", "squared"] {
        let report = json(&dir.path().join(format!("fit_{policy}_report.json")));
        assert_valid("run_report.schema.json", &report);
        assert_eq!(report["outliers"], 60);
    }
    let csv = fs::read_to_string(dir.path().join("fit_compare.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let slope_err = |row: &Vec<&str>| row[6].parse::<f64>().unwrap();
    assert_eq!(rows[0][0], "adaptive");
    assert!(slope_err(&rows[0]) < slope_err(&rows[1]));
}

#[test]
fn fit_reads_point_files() {
    let dir = tempdir().unwrap();
    let data = write(dir.path(), "pts.txt", "0 1\n1 3\n2 5\n3 7\n");
    let out = run(&["fit", "--data", s(&data), "--policy", "huber", "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("fit_report.json"));
    assert_valid("run_report.schema.json", &report);
    assert!(report["error"].is_null());
    assert!((report["parameters"]["slope"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    let params = fs::read_to_string(dir.path().join("fit_params.txt")).unwrap();
    assert_eq!(params.split_whitespace().count(), 2);
}

#[test]
fn noise_free_icp_recovers_the_motion() {
    let dir = tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "[icp]\nnoise = 0.0\n");
    let out = run(&["icp", "--config", s(&cfg), "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("icp_report.json"));
    assert_valid("run_report.schema.json", &report);
    assert_eq!(report["converged"], true);
    assert!(report["error"]["rotation_error_deg"].as_f64().unwrap() < 1e-6);
    assert!(report["error"]["translation_error_m"].as_f64().unwrap() < 1e-6);

    // the written scans load back and give the same answer
    let out2 = tempdir().unwrap();
    let src = dir.path().join("icp_source.xyz");
    let tgt = dir.path().join("icp_target.xyz");
    let data = format!("{},{}", s(&src), s(&tgt));
    let out = run(&["icp", "--data", &data, "--output-dir", s(out2.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let loaded = json(&out2.path().join("icp_report.json"));
    assert_eq!(loaded["parameters"], report["parameters"]);
}

#[test]
fn contaminated_icp_adaptive_beats_squared() {
    for seed in 0..5 {
        let dir = tempdir().unwrap();
        let cfg = write(dir.path(), "run.toml", "[outliers]\nfraction = 0.4\n");
        let seed = seed.to_string();
        let out = run(&[
            "icp",
            "--config",
            s(&cfg),
            "--seed",
            &seed,
            "--compare",
            "adaptive,squared",
            "--output-dir",
            s(dir.path()),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let csv = fs::read_to_string(dir.path().join("icp_compare.csv")).unwrap();
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(6).map(|v| v.parse().unwrap()).collect())
            .collect();
        assert!(rows[0][0] <= rows[1][0] && rows[0][1] <= rows[1][1], "seed {seed}: {csv}");
        for policy in ["adaptive", "squared"] {
            assert_valid("run_report.schema.json", &json(&dir.path().join(format!("icp_{policy}_report.json"))));
        }
    }
}

#[test]
fn ba_report_validates() {
    let dir = tempdir().unwrap();
    let out = run(&["ba", "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("ba_report.json"));
    assert_valid("run_report.schema.json", &report);
    assert!(report["error"]["center_rms_m"].as_f64().unwrap() < 0.01);
    let final_scene = adakern::io::read_scene(&dir.path().join("ba_params.txt")).unwrap();
    let scene = adakern::io::read_scene(&dir.path().join("ba_scene.txt")).unwrap();
    assert_eq!(final_scene.observations(), scene.observations());
}

#[test]
fn basin_sweep_zero_noise_and_rerun() {
    let dir = tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "[sweep]\nsigmas = [0.0]\nsamples = 2\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = run(&["basin-sweep", "--config", s(&cfg), "--seed", "9", "--output-dir", s(&a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&a.join("sweep_summary.json"));
    assert_valid("sweep_summary.schema.json", &summary);
    for p in summary["policies"].as_array().unwrap() {
        assert_eq!(p["success_rate"], 1.0, "{p}");
    }
    let out = bin()
        .args(["basin-sweep", "--config", s(&cfg), "--seed", "9"])
        .env("ADAKERN_OUTPUT_DIR", &b)
        .env("ADAKERN_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(primary_outputs(&a), primary_outputs(&b));
    let header = fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert!(header.starts_with("policy,sigma,sample,seed,success,rms_error,final_alpha,iterations\n"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "seed = 1\n[solver]\nscale = 0.5\nmax_irls = 3\n");
    let out = run(&["fit", "--config", s(&cfg), "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("run.toml:4"), "{}", stderr(&out));
    let out = run(&["fit", "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(code(&out), 1);
    let bad_model = write(dir.path(), "m.toml", "[outliers]\nmodel = \"sprinkle\"\n");
    assert_eq!(code(&run(&["fit", "--config", s(&bad_model), "--output-dir", s(dir.path())])), 1);
}

#[test]
fn singular_systems_exit_with_solver_code() {
    let dir = tempdir().unwrap();
    let data = write(dir.path(), "vertical.txt", "1 1\n1 2\n1 3\n");
    let cfg = write(dir.path(), "gn.toml", "[solver]\ndamping_initial = 0.0\n");
    let out = run(&[
        "fit",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--policy",
        "squared",
        "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    // the report is still written and records the failure
    let report = json(&dir.path().join("fit_report.json"));
    assert_eq!(report["termination"], "singular-system");
}

#[test]
fn help_lists_every_flag() {
    let cases: [(&str, &[&str]); 6] = [
        ("partition-table", &["--output", "--verify", "--tolerance", "--output-dir", "--alpha-min", "--intervals"]),
        ("estimate-alpha", &["--scale", "--table", "--subsample-cap", "--seed", "--output", "--tau"]),
        ("fit", &["--config", "--seed", "--policy", "--compare", "--output-dir", "--table", "--data"]),
        ("icp", &["--config", "--seed", "--policy", "--compare", "--output-dir", "--table", "--data"]),
        ("ba", &["--config", "--seed", "--policy", "--compare", "--output-dir", "--table", "--data"]),
        ("basin-sweep", &["--config", "--seed", "--threads", "--output-dir", "--data"]),
    ];
    for (cmd, flags) in cases {
        let out = run(&[cmd, "--help"]);
        assert_eq!(code(&out), 0);
        let help = String::from_utf8(out.stdout).unwrap();
        for flag in flags {
            assert!(help.contains(flag), "{cmd} --help lacks {flag}");
        }
        assert!(help.contains("default"), "{cmd} --help shows no defaults");
    }
}

#[test]
fn rejects_unknown_policy() {
    let out = run(&["fit", "--policy", "tukey"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown policy"));
}
