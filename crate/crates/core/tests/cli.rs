//! End-to-end tests of the `vfa` binary.

use std::path::Path;
use std::process::{Command, Output};

use rvv_flash::harness::matrix_file;
use serde_json::Value;

/// `gen --rows 4 --cols 4 --seed 42`, checked against an independent
/// SplitMix64 implementation when first pinned.
const SEED42_4X4: &str = "564641310400000004000000c85cf73e3a202ebf64b6e2be7c8c9fbe50876cbf62883c3f322d10bf6aec193f\
20e9a3beb8a6723e1c1717bf00bb65bc407bdb3ce0f2233d8c1fa93e5cd717bf";

fn vfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfa")).args(args).output().expect("spawn vfa")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn gen(dir: &Path, name: &str, rows: usize, cols: usize, seed: u64) -> String {
    let path = dir.join(name);
    let o = vfa(&[
        "gen",
        "--rows",
        &rows.to_string(),
        "--cols",
        &cols.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_fixture_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.bin", 4, 4, 42);
    let b = gen(dir.path(), "b.bin", 4, 4, 42);
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ba, bb);
    assert_eq!(hex(&ba), SEED42_4X4);
    assert_eq!(ba.len(), 12 + 4 * 16);

    let o = vfa(&["gen", "--rows", "0", "--cols", "4", "--out", dir.path().join("z.bin").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&vfa(&[])), 1);
    assert_eq!(code(&vfa(&["run", "--impl", "nope", "--seq-len", "4", "--head-dim", "4"])), 1);
    assert_eq!(code(&vfa(&["run", "--impl", "flash-vec", "--seq-len", "4"])), 1);
    assert_eq!(code(&vfa(&["--help"])), 0);
    // head dimension above vlen needs the tiled kernel
    let o = vfa(&["run", "--impl", "flash-vec", "--seq-len", "8", "--head-dim", "8", "--vlen", "4"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("tiled"));
    // non-power-of-two vector length
    assert_eq!(code(&vfa(&["run", "--impl", "flash-vec", "--seq-len", "8", "--head-dim", "4", "--vlen", "12"])), 1);
    assert_eq!(code(&vfa(&["run", "--impl", "baseline", "--seq-len", "4", "--head-dim", "4", "--tolerance", "0"])), 1);
}

#[test]
fn zero_query_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.bin");
    matrix_file::write(&q, &rvv_flash::Matrix::zeros(4, 4)).unwrap();
    let k = gen(dir.path(), "k.bin", 4, 4, 1);
    let v = gen(dir.path(), "v.bin", 4, 4, 2);
    let out = dir.path().join("o.bin");
    let o = vfa(&[
        "run",
        "--impl",
        "flash-vec",
        "--seq-len",
        "4",
        "--head-dim",
        "4",
        "--vlen",
        "4",
        "--q",
        q.to_str().unwrap(),
        "--k",
        &k,
        "--v",
        &v,
        "--check",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert!(r["max_abs_err"].as_f64().unwrap() <= 1e-6);
    assert_eq!(r["check_passed"], Value::Bool(true));
    // every output row is the column mean of V
    let vm = matrix_file::read(Path::new(&v)).unwrap();
    let om = matrix_file::read(&out).unwrap();
    for j in 0..4 {
        let mean = (0..4).map(|i| vm.get(i, j) as f64).sum::<f64>() / 4.0;
        for i in 0..4 {
            assert!((om.get(i, j) as f64 - mean).abs() <= 1e-6);
        }
    }
}

#[test]
fn mismatched_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let q = gen(dir.path(), "q.bin", 4, 4, 1);
    let k = gen(dir.path(), "k.bin", 5, 4, 2);
    let v = gen(dir.path(), "v.bin", 4, 4, 3);
    let o = vfa(&["run", "--impl", "baseline", "--seq-len", "4", "--head-dim", "4", "--q", &q, "--k", &k, "--v", &v]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("K is 5x4"));
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"nope").unwrap();
    let o = vfa(&[
        "run",
        "--impl",
        "baseline",
        "--seq-len",
        "4",
        "--head-dim",
        "4",
        "--q",
        bad.to_str().unwrap(),
        "--k",
        &k,
        "--v",
        &v,
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn failed_check_exits_2() {
    let o =
        vfa(&["run", "--impl", "flash-vec-tiled", "--exp", "approx", "--seq-len", "64", "--head-dim", "48", "--check"]);
    assert_eq!(code(&o), 2);
    assert_eq!(json(&o)["check_passed"], Value::Bool(false));
    let o = vfa(&[
        "run",
        "--impl",
        "flash-vec-tiled",
        "--exp",
        "approx",
        "--seq-len",
        "64",
        "--head-dim",
        "48",
        "--check",
        "--tolerance",
        "0.07",
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn multiquery_blocking_counter_ratio() {
    let run = |br: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.bin");
        let o = vfa(&[
            "run",
            "--impl",
            "flash-vec-mq",
            "--seq-len",
            "64",
            "--head-dim",
            "32",
            "--br",
            br,
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        let r = json(&o);
        let kv = r["loads_key"].as_u64().unwrap() + r["loads_value"].as_u64().unwrap();
        (std::fs::read(&out).unwrap(), kv)
    };
    let (o1, kv1) = run("1");
    let (o4, kv4) = run("4");
    assert_eq!(o1, o4);
    assert_eq!(kv1, 4 * kv4);
}

#[test]
fn speedup_proxy_reported() {
    let o = vfa(&["run", "--impl", "flash-vec", "--seq-len", "512", "--head-dim", "32", "--unroll", "4"]);
    let r = json(&o);
    assert!(r["speedup_proxy"].as_f64().unwrap() > 20.0);
    // per query/key pair: 5d + 7 operations; per query: d divisions
    assert_eq!(r["scalar_total"].as_u64(), Some(512 * 512 * (5 * 32 + 7) + 512 * 32));
    let o = vfa(&["run", "--impl", "baseline", "--seq-len", "8", "--head-dim", "4"]);
    let r = json(&o);
    assert!(r["speedup_proxy"].is_null() && r["vector_load"].is_null());
    assert!(r.get("wall_time_ms").is_none());
    let o = vfa(&["run", "--impl", "baseline", "--seq-len", "8", "--head-dim", "4", "--timing"]);
    assert!(json(&o)["wall_time_ms"].as_f64().is_some());
}

#[test]
fn sweep_csv_and_json_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    let mut reqs = vec![];
    for vlen in [32, 64, 128] {
        reqs.push(format!(
            r#"{{"impl":"flash-vec-mq","seq_len":128,"head_dim":64,"vlen":{vlen},"br":32,"input":{{"seed":1}},"check":true}}"#
        ));
    }
    reqs.push(r#"{"impl":"flash-vec","seq_len":8,"head_dim":64,"vlen":32,"input":{"seed":1}}"#.to_string());
    reqs.push(r#"{"impl":"experr-is-not-an-impl","seq_len":8,"head_dim":4,"input":{"seed":1}}"#.to_string());
    std::fs::write(&cfg, format!("[{}]", reqs[..4].join(","))).unwrap();

    let csv_path = dir.path().join("r.csv");
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&vfa(&["sweep", c, "--report", csv_path.to_str().unwrap()])), 0);
    let j = vfa(&["sweep", c, "--format", "json"]);
    assert_eq!(code(&j), 0);
    let rows = json(&j);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3]["error"].as_str().map(|e| e.contains("tiled")), Some(true));

    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let json_keys: Vec<&String> = rows[0].as_object().unwrap().keys().collect();
    assert_eq!(header.iter().collect::<Vec<_>>(), json_keys);
    for (rec, obj) in rdr.records().zip(rows) {
        let rec = rec.unwrap();
        for (cell, key) in rec.iter().zip(&header) {
            let expect = match &obj[key] {
                Value::Null => String::new(),
                Value::String(s) => s.clone(),
                v => v.to_string(),
            };
            assert_eq!(cell, expect, "column {key}");
        }
    }

    std::fs::write(&cfg, format!("[{}]", reqs[4])).unwrap();
    assert_eq!(code(&vfa(&["sweep", c])), 1);
    std::fs::write(&cfg, "[]").unwrap();
    let o = vfa(&["sweep", c]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
}

#[test]
fn experr_report() {
    let o = vfa(&["experr", "--samples", "20000", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let r = json(&o);
    assert!(r["max_rel_err"].as_f64().unwrap() <= 0.062);
    assert_eq!(r["dyadic"][0]["rel_err"].as_f64(), Some(0.0));
    assert_eq!(r["dyadic"].as_array().unwrap().len(), 16);
    for p in r["clipped"].as_array().unwrap() {
        let x = p["x"].as_f64().unwrap();
        let expect = ((-15.0f64).exp() as f32 as f64 - x.exp()).abs() / x.exp();
        assert!((p["rel_err"].as_f64().unwrap() - expect).abs() <= 1e-9 * expect);
    }
    assert_eq!(code(&vfa(&["experr", "--samples", "0"])), 1);
}
