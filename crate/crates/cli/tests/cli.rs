use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use sparseproj::simulation::{generate_additive, AdditiveScenario};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn sparseproj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparseproj")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Report minus wall-clock timings and output location.
fn stable(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings");
    v["config"]["out"] = Value::Null;
    v["config"]["jobs"] = Value::Null;
    v
}

fn selected(v: &Value) -> Vec<u64> {
    v["selected_groups"].as_array().unwrap().iter().map(|g| g["index"].as_u64().unwrap()).collect()
}

fn toy_fit(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "fit",
        "--x",
        s(&fixture("toy/x.csv")).to_owned().leak(),
        "--y",
        s(&fixture("toy/y.csv")).to_owned().leak(),
        "--groups",
        s(&fixture("toy/groups.json")).to_owned().leak(),
        "--seed",
        "17",
        "--out",
        s(out).to_owned().leak(),
    ];
    args.extend_from_slice(extra);
    sparseproj(&args)
}

fn read_csv(path: &Path) -> (Vec<String>, DMatrix<f64>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let names: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let m = DMatrix::from_fn(rows.len(), names.len(), |i, j| rows[i][j]);
    (names, m)
}

/// Best group subset of the toy design by BIC over all `2^K` subsets.
fn exhaustive_bic(x: &DMatrix<f64>, y: &DVector<f64>, sizes: &[usize]) -> Vec<u64> {
    let n = x.nrows();
    let k = sizes.len();
    let starts: Vec<usize> = sizes.iter().scan(0, |acc, &s| Some(std::mem::replace(acc, *acc + s))).collect();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << k) {
        let groups: Vec<usize> = (0..k).filter(|g| mask & (1 << g) != 0).collect();
        let mut cols = vec![DVector::from_element(n, 1.0)];
        for &g in &groups {
            for j in starts[g]..starts[g] + sizes[g] {
                cols.push(x.column(j).into_owned());
            }
        }
        let xs = DMatrix::from_columns(&cols);
        let coef = xs.clone().svd(true, true).solve(y, 1e-12).unwrap();
        let rss = (y - &xs * coef).norm_squared();
        let bic = n as f64 * (rss / n as f64).ln() + xs.ncols() as f64 * (n as f64).ln();
        if bic < best.0 {
            best = (bic, groups.iter().map(|g| *g as u64 + 1).collect());
        }
    }
    best.1
}

#[test]
fn missing_group_spec_exits_2_and_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparseproj(&[
        "fit",
        "--x",
        s(&fixture("toy/x.csv")),
        "--y",
        s(&fixture("toy/y.csv")),
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--groups"));
}

#[test]
fn seed_is_mandatory() {
    let out = sparseproj(&["fit", "--x", s(&fixture("toy/x.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn toy_fit_selects_a_nonempty_set_containing_the_oracle_answer() {
    let (_, x) = read_csv(&fixture("toy/x.csv"));
    let (_, y) = read_csv(&fixture("toy/y.csv"));
    let oracle = exhaustive_bic(&x, &y.column(0).into_owned(), &[2, 2, 2]);
    assert_eq!(oracle, vec![1, 3]);

    let dir = tempfile::tempdir().unwrap();
    let out = toy_fit(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    let gl = selected(&r);
    assert!(!gl.is_empty());
    assert!(oracle.iter().all(|g| gl.contains(g)), "{gl:?}");
    assert_eq!(r["intervals"].as_array().unwrap().len(), 6);
    assert_eq!(r["converged"], Value::Bool(true));

    for penalty in ["agl", "gscad"] {
        let dir = tempfile::tempdir().unwrap();
        let out = toy_fit(dir.path(), &["--penalty", penalty]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(selected(&report(dir.path())), oracle, "{penalty}");
    }
}

#[test]
fn same_config_twice_gives_identical_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(toy_fit(a.path(), &["--save-draws"]).status.code(), Some(0));
    assert_eq!(toy_fit(b.path(), &["--save-draws"]).status.code(), Some(0));
    assert_eq!(stable(report(a.path())), stable(report(b.path())));
    for f in ["intervals.csv", "frequencies.csv", "cv.csv", "draws.csv", "projected.csv", "draws.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_regenerates_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(toy_fit(a.path(), &["--penalty", "agl", "--draws", "60", "--sigma", "0.5"]).status.code(), Some(0));
    let again = sparseproj(&["fit", "--config", s(&a.path().join("report.json")), "--out", s(b.path())]);
    assert_eq!(again.status.code(), Some(0), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(stable(report(a.path())), stable(report(b.path())));
    assert_eq!(fs::read(a.path().join("intervals.csv")).unwrap(), fs::read(b.path().join("intervals.csv")).unwrap());

    let wrong = sparseproj(&["debias", "--config", s(&a.path().join("report.json")), "--out", s(b.path())]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn every_csv_artifact_carries_seed_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparseproj(&[
        "debias",
        "--x",
        s(&fixture("toy/x.csv")),
        "--y",
        s(&fixture("toy/y.csv")),
        "--groups",
        s(&fixture("toy/groups.json")),
        "--seed",
        "5",
        "--save-draws",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    let hash = r["config_hash"].as_str().unwrap();
    let header = format!("# seed=5 config_hash={hash}");
    let mut csvs = 0;
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let text = fs::read_to_string(&path).unwrap();
            assert_eq!(text.lines().next().unwrap(), header, "{}", path.display());
            csvs += 1;
        }
    }
    assert!(csvs >= 6);
    assert_eq!(r["debiased_intervals"].as_array().unwrap().len(), 6);
    let text = fs::read_to_string(dir.path().join("debiased_intervals.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "coordinate,name,group,estimate,lower,upper");
    for row in r["debiased_intervals"].as_array().unwrap() {
        assert!(row["lower"].as_f64().unwrap() <= row["upper"].as_f64().unwrap());
    }
}

#[test]
fn debias_rejects_non_lasso_penalties() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparseproj(&[
        "debias",
        "--x",
        s(&fixture("toy/x.csv")),
        "--y",
        s(&fixture("toy/y.csv")),
        "--groups",
        s(&fixture("toy/groups.json")),
        "--penalty",
        "gscad",
        "--seed",
        "5",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn parse_errors_report_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("x.csv");
    let text = fs::read_to_string(fixture("toy/x.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // File line 5, third column.
    let mut fields: Vec<String> = lines[4].split(',').map(str::to_string).collect();
    fields[2] = "abc".into();
    lines[4] = fields.join(",");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let out = sparseproj(&[
        "fit",
        "--x",
        s(&bad),
        "--y",
        s(&fixture("toy/y.csv")),
        "--groups",
        s(&fixture("toy/groups.json")),
        "--seed",
        "1",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5, column 3 ('x3')"), "{err}");
}

#[test]
fn additive_fixture_recovers_components_one_to_five() {
    let dir = tempfile::tempdir().unwrap();
    let args = |penalty: &'static str, out: &Path| {
        sparseproj(&[
            "additive",
            "--x",
            s(&fixture("additive/x.csv")),
            "--y",
            s(&fixture("additive/y.csv")),
            "--penalty",
            penalty,
            "--seed",
            "3",
            "--out",
            s(out),
        ])
    };
    let out = args("agl", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["additive"]["expanded_p"], 64);
    assert_eq!(r["additive"]["selected_components"], serde_json::json!([1, 2, 3, 4, 5]));
    let (names, bands) = read_csv(&dir.path().join("component_bands.csv"));
    assert_eq!(names, ["variable", "x", "lower", "median", "upper"]);
    assert!(bands.row_iter().all(|row| row[2] <= row[3] + 1e-12 && row[3] <= row[4] + 1e-12));

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(args("gl", dir.path()).status.code(), Some(0));
    let gl = report(dir.path());
    let comps: Vec<u64> = gl["additive"]["selected_components"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!((1..=5).all(|k| comps.contains(&k)), "{comps:?}");
}

#[test]
fn additive_logs_the_expanded_dimension() {
    let data = generate_additive(&AdditiveScenario { n: 100, k: 50, sigma: 1.0, seed: 9 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, m: &DMatrix<f64>, header: Vec<String>| {
        let mut f = fs::File::create(dir.path().join(name)).unwrap();
        writeln!(f, "{}", header.join(",")).unwrap();
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", cells.join(",")).unwrap();
        }
    };
    write("x.csv", &data.x_raw, (1..=50).map(|k| format!("v{k}")).collect());
    write("y.csv", &DMatrix::from_column_slice(100, 1, data.y.as_slice()), vec!["y".into()]);
    let out = Command::new(env!("CARGO_BIN_EXE_sparseproj"))
        .env("SPARSEPROJ_LOG", "info")
        .args([
            "additive",
            "--x",
            s(&dir.path().join("x.csv")),
            "--y",
            s(&dir.path().join("y.csv")),
            "--lambda",
            "0.2",
            "--draws",
            "20",
            "--seed",
            "1",
            "--out",
            s(&dir.path().join("o")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expanded design: 100 × 400"));
    assert_eq!(report(&dir.path().join("o"))["additive"]["expanded_p"], 400);
}

#[test]
fn additive_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let base = |extra: &[&str], x: &Path| {
        let mut a = vec![
            "additive",
            "--x",
            s(x).to_owned().leak(),
            "--y",
            s(&fixture("additive/y.csv")).to_owned().leak(),
            "--seed",
            "1",
            "--out",
            s(dir.path()).to_owned().leak(),
        ];
        a.extend_from_slice(extra);
        sparseproj(&a)
    };
    let out = base(&["--basis-count", "3", "--degree", "3"], &fixture("additive/x.csv"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--basis-count"));

    let constant = dir.path().join("const.csv");
    let (names, mut x) = read_csv(&fixture("additive/x.csv"));
    x.column_mut(6).fill(1.0);
    let mut f = fs::File::create(&constant).unwrap();
    writeln!(f, "{}", names.join(",")).unwrap();
    for row in x.row_iter() {
        writeln!(f, "{}", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")).unwrap();
    }
    drop(f);
    assert_eq!(base(&[], &constant).status.code(), Some(3));
}

#[test]
fn tiny_simulation_completes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Instant::now();
    let out = sparseproj(&["simulate", "--study", s(&fixture("study_tiny.json")), "--seed", "3", "--out", s(dir.path())]);
    assert!(clock.elapsed().as_secs_f64() < 60.0);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# seed=3 config_hash="));
    assert_eq!(lines.next().unwrap(), "scenario,method,replicate,metric,value");
    let summary = report(dir.path())["study"].as_array().unwrap().clone();
    assert!(summary.iter().any(|r| r["method"] == "agl-p" && r["metric"] == "f1" && r["count"] == 2));
    assert!(dir.path().join("panel_f1.csv").is_file());
    assert!(dir.path().join("aggregate.json").is_file());
}

#[test]
fn invalid_study_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        sparseproj(&["simulate", "--study", s(&fixture("study_invalid.json")), "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds K"));
}

#[test]
fn diagnose_reports_assumption_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparseproj(&[
        "diagnose",
        "--x",
        s(&fixture("toy/x.csv")),
        "--groups",
        s(&fixture("toy/groups.json")),
        "--support",
        "1,3",
        "--seed",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let d = &report(dir.path())["diagnostics"];
    assert_eq!(d["support"], serde_json::json!([1, 3]));
    let re = d["restricted_eigenvalue"].as_f64().unwrap();
    let irr = d["irrepresentability"].as_f64().unwrap();
    assert!(re > 0.0 && re < 2.0);
    assert!(irr >= 0.0);
}
