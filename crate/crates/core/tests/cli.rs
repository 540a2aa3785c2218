use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn htsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htsgd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
[run]
seed = 3

[[spec]]
name = "tails"
scenario = "tail_suite"
eta = [0.008]
b = [1]
n = [50]
chains = 60
iterations = 200
seeds = 2

[[spec]]
name = "hist"
scenario = "histograms"
eta = [0.004]
b = [1]
n = [50]
chains = 50
iterations = 100
seeds = 1
"#;

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for spec in fs::read_dir(root).unwrap() {
        let spec = spec.unwrap().path();
        for f in fs::read_dir(&spec).unwrap() {
            let f = f.unwrap().path();
            let rel = f.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.push((rel, fs::read(&f).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn presets_listing_is_complete_and_stable() {
    let a = htsgd(&["presets"]);
    assert!(a.status.success());
    let text = stdout(&a);
    let names: Vec<&str> = text.lines().filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(names, ["desk_default", "paper_grid_4_1", "appendix_f", "calibration"]);
    assert!(text.lines().all(|l| l.split_whitespace().count() > 1), "every preset has a description");
    assert_eq!(stdout(&htsgd(&["presets"])), text);
}

#[test]
fn same_seed_gives_identical_trees() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.toml");
    fs::write(&file, SMALL).unwrap();
    let mut trees = Vec::new();
    for dir in ["a", "b"] {
        let out = tmp.path().join(dir);
        let o = htsgd(&[
            "run",
            file.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("tails/difference.csv"), "{}", stdout(&o));
        trees.push(files(&out));
    }
    assert_eq!(trees[0], trees[1]);
    let names: Vec<&str> = trees[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"hist/manifest.json"));
    assert!(names.contains(&"hist/histogram.csv"));

    let manifest: serde_json::Value =
        serde_json::from_slice(&trees[0].iter().find(|(n, _)| n == "tails/manifest.json").unwrap().1).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["overrides"][0], "seed=7");

    let other = tmp.path().join("c");
    let o = htsgd(&["run", file.to_str().unwrap(), "--seed", "8", "--out", other.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(files(&other), trees[0]);
}

#[test]
fn unknown_key_exits_two_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.toml");
    fs::write(&file, "[[spec]]\nname = \"x\"\nchainz = 4\n").unwrap();
    let o = htsgd(&["run", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("chainz"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn precondition_failure_exits_three_naming_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.toml");
    fs::write(
        &file,
        "[[spec]]\nname = \"too_big\"\nscenario = \"tail_suite\"\nb = [80]\nn = [50]\nchains = 20\niterations = 10\n",
    )
    .unwrap();
    let o = htsgd(&["run", file.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("too_big"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_an_io_failure() {
    let o = htsgd(&["run", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn override_reaches_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("run.toml");
    fs::write(&file, SMALL).unwrap();
    let out = tmp.path().join("o");
    let o = htsgd(&[
        "run",
        file.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--override",
        "hist.chains=30",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("hist/summary.csv")).unwrap();
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let j = header.iter().position(|c| *c == "chains").unwrap();
    assert_eq!(row[j], "30");
}

#[test]
fn calibration_preset_meets_bias_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = htsgd(&["run", "--preset", "calibration", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let csv = fs::read_to_string(dir.join("calibration.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let j = header.iter().position(|c| *c == "bias").unwrap();
    let rows: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(j).unwrap().parse().unwrap()).collect();
    assert!(!rows.is_empty());
    for bias in rows {
        assert!(bias.abs() <= 0.1, "bias {bias}");
    }
}
