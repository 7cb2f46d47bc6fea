use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seg_harness::output::{read_csv, HEADER};

fn seg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seg")).args(args).current_dir(dir).output().expect("spawn seg")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a.qgame", "b.qgame"] {
        let o = seg(&["generate", "--n", "6", "--d", "3", "--p", "2", "--mu", "0.2", "--L", "1", "--seed", "7", "-o", name], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(tmp.path().join("a.qgame")).unwrap(), fs::read(tmp.path().join("b.qgame")).unwrap());

    let o = seg(&["constants", "--game", "a.qgame", "--scheme", "nice:b=2", "--r0-sq", "10"], tmp.path());
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["n"], 6);
    assert!(v["plateau"].as_f64().unwrap() > 0.0);
}

#[test]
fn run_is_byte_identical_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str, jobs: &'static str| -> Vec<&'static str> {
        vec!["run", "--preset", "exp2", "--desk", "--iterations", "300", "--seeds", "4", "--jobs", jobs, "--out", out]
    };
    assert_eq!(code(&seg(&args("one", "1"), tmp.path())), 0);
    assert_eq!(code(&seg(&args("three", "3"), tmp.path())), 0);
    let a = csvs(&tmp.path().join("one"));
    let b = csvs(&tmp.path().join("three"));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);

    let s = read_csv(&tmp.path().join("one/exp2_sseg-us-constant.csv")).unwrap();
    assert_eq!(s.rows.first().unwrap().k, 0);
    assert_eq!(s.rows.last().unwrap().k, 300);
    assert!(s.rows.iter().all(|r| r.envelope.is_some() && r.beta_k == 1.0));
    assert_eq!(s.meta("seeds"), Some("4"));
    let eq = read_csv(&tmp.path().join("one/exp2_sseg-us-equal-steps.csv")).unwrap();
    assert!(eq.rows.iter().all(|r| r.envelope.is_none()));
    let text = fs::read_to_string(tmp.path().join("one/exp2_sseg-us-constant.csv")).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, HEADER.join(","));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.toml"),
        r#"
iterations = 50
seeds = 2
out = "from_file"
[generate]
n = 5
d = 2
p = 2
[[method]]
method = "iseg"
batch = 2
[[method]]
method = "eg"
"#,
    )
    .unwrap();
    let o = seg(&["run", "--config", "c.toml", "--iterations", "20", "--out", "from_flag"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!tmp.path().join("from_file").exists());
    let files = csvs(&tmp.path().join("from_flag"));
    assert_eq!(files.len(), 2);
    for (name, _) in files {
        let s = read_csv(&tmp.path().join("from_flag").join(name)).unwrap();
        assert_eq!(s.rows.last().unwrap().k, 20);
        assert_eq!(s.meta("seeds"), Some("2"));
    }
}

#[test]
fn verify_writes_a_passing_report() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&seg(&["generate", "--desk", "--seed", "4", "-o", "g.qgame"], tmp.path())), 0);
    for extra in [&["--scheme", "is"][..], &["--method", "iseg", "--batch", "2"][..]] {
        let mut args = vec!["verify", "--game", "g.qgame", "--points", "5", "--samples", "2000", "-o", "v.json"];
        args.extend_from_slice(extra);
        let o = seg(&args, tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("v.json")).unwrap()).unwrap();
        assert_eq!(v["passed"], true);
        assert_eq!(v["certificate"]["points"].as_array().unwrap().len(), 5);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&seg(&["run", "--bogus"], tmp.path())), 1);
    assert_eq!(code(&seg(&["run", "--preset", "custom"], tmp.path())), 1);
    assert_eq!(code(&seg(&["run", "--preset", "exp2", "--seeds", "0"], tmp.path())), 1);
    assert_eq!(code(&seg(&["generate", "--mu", "2", "--L", "1", "-o", "x.qgame"], tmp.path())), 1);
    assert_eq!(code(&seg(&["verify", "--game", "missing.qgame"], tmp.path())), 2);
    fs::write(tmp.path().join("junk.qgame"), b"not a game").unwrap();
    assert_eq!(code(&seg(&["constants", "--game", "junk.qgame"], tmp.path())), 1);
    assert_eq!(code(&seg(&["--help"], tmp.path())), 0);
}
