use std::path::Path;
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn elpd(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_elpd")).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok_json(args: &[&str]) -> Value {
    let r = elpd(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    serde_json::from_str(&r.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn simulate(dir: &Path, n: &str, nested: bool) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["simulate", "--seed", "3", "--n", n, "--posterior-draws", "1000", "--out", out];
    if nested {
        args.push("--nested");
    }
    ok_json(&args);
}

#[test]
fn simulate_is_deterministic_given_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), "50", true);
    simulate(b.path(), "50", true);
    for f in ["dataset.csv", "draws.csv", "loglik.csv", "exact_loo.csv", "loglik_b.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn surrogate_writes_one_row_per_observation() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "80", false);
    for method in ["waic", "tis", "psis"] {
        ok_json(&["surrogate", "--loglik", &p(d.path(), "loglik.csv"), "--surrogate", method, "--out", &p(d.path(), "s.csv")]);
        let text = std::fs::read_to_string(d.path().join("s.csv")).unwrap();
        assert_eq!(text.lines().count(), 81, "{method}");
    }
    ok_json(&[
        "surrogate", "--dataset", &p(d.path(), "dataset.csv"), "--draws", &p(d.path(), "draws.csv"),
        "--surrogate", "delta2_waic", "--out", &p(d.path(), "s.csv"),
    ]);
    assert_eq!(std::fs::read_to_string(d.path().join("s.csv")).unwrap().lines().count(), 81);
}

#[test]
fn full_subsample_with_exact_surrogate_has_zero_se() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "40", false);
    let v = ok_json(&[
        "estimate", "--loglik", &p(d.path(), "loglik.csv"), "--exact", &p(d.path(), "exact_loo.csv"),
        "--surrogate", "exact", "--m", "40", "--seed", "1",
    ]);
    assert_eq!(v["se_subsampling"], 0.0);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        &keys[..9],
        ["elpd_hat", "se_subsampling", "sigma_loo_hat", "n", "m", "estimator", "surrogate", "seed", "pareto_k_summary"]
    );
}

#[test]
fn estimate_is_within_four_se_of_oracle_and_reproducible() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "1000", false);
    let truth: f64 = std::fs::read_to_string(d.path().join("exact_loo.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    let out = p(d.path(), "est.json");
    let args = [
        "estimate", "--loglik", &p(d.path(), "loglik.csv"), "--exact", &p(d.path(), "exact_loo.csv"),
        "--surrogate", "tis", "--draws-used", "200", "--m", "100", "--seed", "8", "--out", &out,
    ];
    assert_eq!(elpd(&args).code, 0);
    let first = std::fs::read(&out).unwrap();
    assert_eq!(elpd(&args).code, 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);
    let v: Value = serde_json::from_slice(&first).unwrap();
    let est = v["elpd_hat"].as_f64().unwrap();
    let se = v["se_subsampling"].as_f64().unwrap();
    assert!((est - truth).abs() < 4.0 * se, "{est} vs {truth} (se {se})");
}

#[test]
fn compare_against_itself_and_swapped() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "300", true);
    let (la, ea) = (p(d.path(), "loglik.csv"), p(d.path(), "exact_loo.csv"));
    let (lb, eb) = (p(d.path(), "loglik_b.csv"), p(d.path(), "exact_loo_b.csv"));
    let base = ["compare", "--surrogate", "tis", "--m", "50", "--seed", "4"];

    let same = ok_json(&[&base[..], &["--loglik", &la, "--exact", &ea, "--loglik-b", &la, "--exact-b", &ea]].concat());
    for key in ["elpd_d_hat", "se_d", "sigma_d_hat"] {
        assert_eq!(same[key], 0.0, "{key}");
    }

    let ab = ok_json(&[&base[..], &["--loglik", &la, "--exact", &ea, "--loglik-b", &lb, "--exact-b", &eb]].concat());
    let ba = ok_json(&[&base[..], &["--loglik", &lb, "--exact", &eb, "--loglik-b", &la, "--exact-b", &ea]].concat());
    assert_eq!(ab["elpd_d_hat"].as_f64().unwrap(), -ba["elpd_d_hat"].as_f64().unwrap());
    assert_eq!(ab["se_d"], ba["se_d"]);
    assert_eq!(ab["per_model"].as_array().unwrap().len(), 2);
}

#[test]
fn nested_comparison_agrees_with_oracle() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "600", true);
    let sum = |f: &str| -> f64 {
        std::fs::read_to_string(d.path().join(f))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .sum()
    };
    let oracle = sum("exact_loo.csv") - sum("exact_loo_b.csv");
    let v = ok_json(&[
        "compare", "--surrogate", "tis", "--m", "100", "--seed", "5",
        "--loglik", &p(d.path(), "loglik.csv"), "--exact", &p(d.path(), "exact_loo.csv"),
        "--loglik-b", &p(d.path(), "loglik_b.csv"), "--exact-b", &p(d.path(), "exact_loo_b.csv"),
    ]);
    let est = v["elpd_d_hat"].as_f64().unwrap();
    let se = v["se_d"].as_f64().unwrap();
    assert_eq!(est.signum(), oracle.signum());
    assert!((est - oracle).abs() < 3.0 * se, "{est} vs {oracle} (se {se})");
}

#[test]
fn compare_rejects_mismatched_identifiers() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "30", false);
    let text = std::fs::read_to_string(d.path().join("loglik.csv")).unwrap();
    let renamed = text.replacen("1,", "first,", 1);
    std::fs::write(d.path().join("renamed.csv"), renamed).unwrap();
    let r = elpd(&[
        "compare", "--surrogate", "tis", "--m", "10", "--seed", "1",
        "--loglik", &p(d.path(), "loglik.csv"), "--exact", &p(d.path(), "exact_loo.csv"),
        "--loglik-b", &p(d.path(), "renamed.csv"), "--exact-b", &p(d.path(), "exact_loo.csv"),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("identifiers differ"), "{}", r.stderr);
}

#[test]
fn replicate_with_exact_surrogate_has_zero_empirical_se() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "60", false);
    let v = ok_json(&[
        "replicate", "--loglik", &p(d.path(), "loglik.csv"), "--exact", &p(d.path(), "exact_loo.csv"),
        "--surrogate", "exact", "--m", "10", "--replicates", "5", "--seed", "2",
    ]);
    assert_eq!(v["empirical_se"], 0.0);
    assert_eq!(v["elpd_hat"].as_array().unwrap().len(), 5);
    assert!(v.get("wall_time_secs").is_none());
}

#[test]
fn verify_passes_on_default_grid() {
    let r = elpd(&["verify", "--seed", "1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["pass"], true);
    assert!(v["max_dev_elpd"].as_f64().unwrap() < 1e-9);
    assert_eq!(v["cells"].as_array().unwrap().len(), 9);
}

#[test]
fn config_file_supplies_flags_and_flags_override() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "50", false);
    let cfg = d.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# estimate settings\nloglik = {}\nexact = {}\nsurrogate = waic\nm = 10\nseed = 6\n",
            p(d.path(), "loglik.csv"),
            p(d.path(), "exact_loo.csv")
        ),
    )
    .unwrap();
    let from_file = ok_json(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(from_file["m"], 10);
    assert_eq!(from_file["seed"], 6);
    let overridden = ok_json(&["estimate", "--config", cfg.to_str().unwrap(), "--m", "20"]);
    assert_eq!(overridden["m"], 20);
    assert_eq!(overridden["seed"], 6);
}

#[test]
fn exit_codes_distinguish_error_kinds() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.csv"), "a,b\n-1,-2\n-1\n").unwrap();
    std::fs::write(d.path().join("exact.csv"), "obs_id,value\na,-1\nb,-2\n").unwrap();
    let r = elpd(&[
        "estimate", "--loglik", &p(d.path(), "bad.csv"), "--exact", &p(d.path(), "exact.csv"),
        "--surrogate", "waic", "--m", "1", "--seed", "1",
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);

    let r = elpd(&["estimate", "--surrogate", "waic", "--m", "1"]);
    assert_eq!(r.code, 2);

    std::fs::write(d.path().join("ll.csv"), "a,b\n-1,-2\n-1,-2\n").unwrap();
    let r = elpd(&[
        "estimate", "--loglik", &p(d.path(), "ll.csv"), "--exact", &p(d.path(), "exact.csv"),
        "--surrogate", "waic", "--m", "3", "--seed", "1",
    ]);
    assert_eq!(r.code, 2, "m > n");

    simulate(d.path(), "20", false);
    let r = elpd(&[
        "estimate", "--dataset", &p(d.path(), "dataset.csv"), "--draws", &p(d.path(), "draws.csv"),
        "--exact", &p(d.path(), "exact_loo.csv"), "--surrogate", "plpd", "--m", "5", "--seed", "1",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    let mut draws = std::fs::read_to_string(d.path().join("draws.csv")).unwrap();
    draws.push_str("0,0,0,0,0,-400\n");
    std::fs::write(d.path().join("overflow.csv"), draws).unwrap();
    let r = elpd(&[
        "estimate", "--dataset", &p(d.path(), "dataset.csv"), "--draws", &p(d.path(), "overflow.csv"),
        "--exact", &p(d.path(), "exact_loo.csv"), "--surrogate", "waic", "--m", "5", "--seed", "1",
    ]);
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn thread_count_does_not_change_output() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "200", false);
    let run = |t: &str| {
        elpd(&[
            "replicate", "--dataset", &p(d.path(), "dataset.csv"), "--draws", &p(d.path(), "draws.csv"),
            "--exact", &p(d.path(), "exact_loo.csv"), "--surrogate", "delta2_waic", "--m", "20",
            "--replicates", "10", "--seed", "3", "--threads", t,
        ])
        .stdout
    };
    assert_eq!(run("1"), run("4"));
}
