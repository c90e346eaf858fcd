use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn memsample(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memsample"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn lookup<'a>(kv: &'a [(String, String)], key: &str) -> &'a str {
    &kv.iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("missing {key}"))
        .1
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn closed_form_reports_optimum_and_bound() {
    let out = memsample(&["closed-form", "--p", "0.5", "--c", "80"]);
    assert!(out.status.success());
    let kv = key_values(&stdout(&out));
    assert_eq!(lookup(&kv, "Y0_star"), "12");
    let g: f64 = lookup(&kv, "g_star").parse().unwrap();
    let lb: f64 = lookup(&kv, "lower_bound").parse().unwrap();
    assert!((g - 13.2308).abs() < 1e-4);
    assert!((lb - 13.2279).abs() < 1e-4);

    let out = memsample(&["closed-form", "--p", "1", "--c", "0"]);
    let kv = key_values(&stdout(&out));
    assert_eq!(lookup(&kv, "Y0_star"), "1");
    assert_eq!(lookup(&kv, "g_star"), "1");
}

#[test]
fn closed_form_rejects_zero_probability() {
    let out = memsample(&["closed-form", "--p", "0", "--c", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("0 < p <= 1"));
}

#[test]
fn closed_form_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cf.csv");
    let out = memsample(&[
        "closed-form",
        "--p",
        "0.5",
        "--c",
        "5",
        "--out",
        path_str(&path),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "p,c,Y_prime,Y0_star,g_star,lower_bound,Y0_tilde,tie"
    );
    assert!(lines[1].starts_with("0.5,5,"));
    let manifest = fs::read_to_string(dir.path().join("cf.csv.manifest")).unwrap();
    let kv = key_values(&manifest);
    assert_eq!(lookup(&kv, "command"), "closed-form");
    assert_eq!(lookup(&kv, "p"), "0.5");
    assert!(lookup(&kv, "timestamp_unix").parse::<u64>().is_ok());
    assert_eq!(lookup(&kv, "version"), env!("CARGO_PKG_VERSION"));
}

#[test]
fn solve_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solve.csv");
    let out = memsample(&["solve", "--p", "0.5", "--c", "5", "--out", path_str(&path)]);
    assert!(out.status.success());
    let summary = stdout(&out);
    let kv: Vec<(String, String)> = summary
        .split_whitespace()
        .filter_map(|t| t.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let g: f64 = lookup(&kv, "g").parse().unwrap();
    assert!((g - 4.0).abs() < 1e-3);
    assert_eq!(lookup(&kv, "threshold"), "2");

    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["x", "y", "action", "f"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(
        rows[0].iter().take(3).collect::<Vec<_>>(),
        ["0", "1", "idle"]
    );
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
    let row_02 = rows.iter().find(|r| &r[0] == "0" && &r[1] == "2").unwrap();
    assert_eq!(&row_02[2], "sample");
    let manifest = key_values(&fs::read_to_string(dir.path().join("solve.csv.manifest")).unwrap());
    assert_eq!(lookup(&manifest, "converged"), "true");
}

#[test]
fn solve_certain_write_free_read() {
    let out = memsample(&["solve", "--p", "1", "--c", "0"]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("g=1.000000 "));
}

#[test]
fn solve_rejects_zero_tolerance() {
    let out = memsample(&["solve", "--p", "0.5", "--c", "5", "--tol", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_rejects_small_grid() {
    let out = memsample(&["solve", "--p", "0.5", "--c", "80", "--ymax", "50"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_non_convergence_still_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.csv");
    let out = memsample(&[
        "solve",
        "--p",
        "0.5",
        "--c",
        "5",
        "--max-iters",
        "3",
        "--out",
        path_str(&path),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(path.exists());
    let manifest = key_values(&fs::read_to_string(dir.path().join("short.csv.manifest")).unwrap());
    assert_eq!(lookup(&manifest, "converged"), "false");
}

fn sim_row(args: &[&str]) -> csv::StringRecord {
    let out = memsample(args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        reader.headers().unwrap(),
        vec![
            "p",
            "c",
            "policy",
            "slots",
            "seed",
            "mean_cost",
            "ci_halfwidth",
            "mean_age",
            "sample_rate"
        ]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    rows.into_iter().next().unwrap()
}

#[test]
fn simulate_threshold_matches_closed_form() {
    let row = sim_row(&[
        "simulate",
        "--p",
        "0.5",
        "--c",
        "5",
        "--policy",
        "threshold:2",
        "--seed",
        "11",
    ]);
    let mean: f64 = row[5].parse().unwrap();
    let ci: f64 = row[6].parse().unwrap();
    assert!((mean - 4.0).abs() <= 3.0 * ci, "mean {mean} ci {ci}");
}

#[test]
fn simulate_always_is_exact_when_writes_are_certain() {
    let row = sim_row(&[
        "simulate", "--p", "1", "--c", "3", "--policy", "always", "--slots", "31000", "--warmup",
        "1000",
    ]);
    assert_eq!(&row[5], "4");
    assert_eq!(&row[6], "0");
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let common = [
        "simulate",
        "--p",
        "0.3",
        "--c",
        "2",
        "--policy",
        "periodic:4",
        "--slots",
        "61000",
        "--warmup",
        "1000",
        "--seed",
        "5",
        "--out",
    ];
    let mut args_a = common.to_vec();
    args_a.push(path_str(&a));
    let mut args_b = common.to_vec();
    args_b.push(path_str(&b));
    assert!(memsample(&args_a).status.success());
    assert!(memsample(&args_b).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = key_values(&fs::read_to_string(dir.path().join("a.csv.manifest")).unwrap());
    assert_eq!(lookup(&manifest, "seeds"), "5");
    assert_eq!(lookup(&manifest, "policy"), "periodic:4");
}

#[test]
fn simulate_rejects_bad_policies() {
    for bad in ["threshold:0", "threshold:x", "sometimes", "periodic:0", ""] {
        let out = memsample(&["simulate", "--p", "0.5", "--c", "1", "--policy", bad]);
        assert_eq!(out.status.code(), Some(2), "policy {bad:?}");
    }
}

#[test]
fn simulate_rejects_indivisible_batches() {
    let out = memsample(&[
        "simulate", "--p", "0.5", "--c", "1", "--policy", "always", "--slots", "1000", "--warmup",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn figures_written_with_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsample(&["figures", "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["fig2.csv", "fig3.csv", "fig4.csv"] {
        assert!(dir.path().join(name).exists());
        let manifest =
            key_values(&fs::read_to_string(dir.path().join(format!("{name}.manifest"))).unwrap());
        assert_eq!(lookup(&manifest, "command"), "figures");
        assert_eq!(lookup(&manifest, "properties_hold"), "true");
    }
    let fig2 = fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    assert!(fig2.starts_with("Y0,g0,marker\n"));
    assert!(fig2.contains("\n12,13.23076923076923,optimal\n"));
    let fig4 = fs::read_to_string(dir.path().join("fig4.csv")).unwrap();
    assert!(fig4.starts_with("c,p,g_star,lower_bound\n1,0.05,"));
}

#[test]
fn figures_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(memsample(&["figures", "--out", path_str(a.path())])
        .status
        .success());
    assert!(memsample(&["figures", "--out", path_str(b.path())])
        .status
        .success());
    for name in ["fig2.csv", "fig3.csv", "fig4.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn single_figure_and_unknown_figure() {
    let dir = tempfile::tempdir().unwrap();
    let out = memsample(&[
        "figures",
        "--figure",
        "fig3",
        "--c-grid",
        "2,40",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success());
    assert!(dir.path().join("fig3.csv").exists());
    assert!(!dir.path().join("fig2.csv").exists());
    let out = memsample(&["figures", "--figure", "fig7", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_small_grid_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verify.csv");
    let out = memsample(&[
        "verify",
        "--p-grid",
        "0.4,0.8",
        "--c-grid",
        "0,3",
        "--slots",
        "310000",
        "--episodes",
        "20000",
        "--out",
        path_str(&path),
    ]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().last().unwrap().ends_with("failed=0 status=ok"));
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        vec!["check", "case", "passed", "detail"]
    );
    assert!(reader
        .records()
        .map(Result::unwrap)
        .all(|r| &r[2] == "true"));
}

#[test]
fn verify_empty_or_invalid_grid_is_usage_error() {
    assert_eq!(
        memsample(&["verify", "--c-grid", ""]).status.code(),
        Some(2)
    );
    assert_eq!(
        memsample(&["verify", "--p-grid", "1.5"]).status.code(),
        Some(2)
    );
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(
        memsample(&["solve", "--p", "0.5", "--c", "1", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(memsample(&["--help"]).status.code(), Some(0));
}
