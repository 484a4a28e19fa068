use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use featcode::container::read_container;
use featcode::quant::{dequantize_code, quantize_value, MonotoneTransform};
use serde_json::{json, Value};

fn featcode(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_featcode"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("spawn featcode")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_owned).collect())
        .collect()
}

fn gen(dir: &Path, name: &str, spec: Value) -> PathBuf {
    let spec_path = dir.join(format!("{name}.spec.json"));
    write_json(&spec_path, &spec);
    ok(&featcode(&[
        &"gen", &"--spec", &spec_path, &"--out", &dir, &"--name", &name,
    ]));
    dir.join(name)
}

#[test]
fn gen_then_analyze_latent() {
    let dir = tempfile::tempdir().unwrap();
    let base = gen(
        dir.path(),
        "latent",
        json!({"archetype": "latent_spatial", "shape": [128, 128], "seed": 4}),
    );
    let out = dir.path().join("analysis");
    let stdout = ok(&featcode(&[&"analyze", &"--in", &base, &"--out", &out]));
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("Layer,rho_h,rho_v,G_DCT,C_DCT"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rho_h: f64 = row[1].parse().unwrap();
    let rho_v: f64 = row[2].parse().unwrap();
    assert!((rho_h - 0.92).abs() < 0.05, "{rho_h}");
    assert!((rho_v - 0.92).abs() < 0.05, "{rho_v}");
    assert!(out.join("redundancy.json").is_file());
}

#[test]
fn gen_check_reports_validation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("s.json");
    write_json(
        &spec,
        &json!([
            {"archetype": "kimi_key_comb", "shape": [5, 4, 32, 128], "seed": 1},
            {"archetype": "ssm_cache", "shape": [5, 512, 16], "seed": 2}
        ]),
    );
    let stdout = ok(&featcode(&[
        &"gen",
        &"--spec",
        &spec,
        &"--out",
        &dir.path(),
        &"--check",
    ]));
    assert!(stdout.contains("PASS kimi_key_comb_s1 modes"));
    assert!(stdout.contains("PASS ssm_cache_s2 clamp"));
    assert_eq!(
        read_container(&dir.path().join("features")).unwrap().len(),
        2
    );
}

#[test]
fn encode_decode_reencode_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = gen(
        d,
        "kv",
        json!([
            {"id": "k0", "archetype": "kv_value", "shape": [5, 4, 32, 128], "seed": 1},
            {"id": "k1", "archetype": "kv_value", "shape": [5, 4, 32, 128], "seed": 2}
        ]),
    );
    let calib = gen(
        d,
        "calib",
        json!({"archetype": "kv_value", "shape": [5, 4, 32, 128], "seed": 3}),
    );

    for codec in ["passthrough", "entropy0", "predictive"] {
        let enc = d.join(format!("enc_{codec}"));
        ok(&featcode(&[
            &"encode",
            &"--in",
            &input,
            &"--out",
            &enc,
            &"--codec",
            &codec,
            &"--calibrate",
            &calib,
        ]));
        let transform = enc.join("calibrated.transform.json");
        let decoded = d.join(format!("dec_{codec}")).join("back");
        ok(&featcode(&[
            &"decode",
            &"--in",
            &enc.join("k0.lmfc"),
            &enc.join("k1.lmfc"),
            &"--out",
            &decoded,
        ]));
        let again = d.join(format!("again_{codec}"));
        ok(&featcode(&[
            &"encode",
            &"--in",
            &decoded,
            &"--out",
            &again,
            &"--codec",
            &codec,
            &"--transform",
            &transform,
        ]));
        for id in ["k0", "k1"] {
            let a = fs::read(enc.join(format!("{id}.lmfc"))).unwrap();
            let b = fs::read(again.join(format!("{id}.lmfc"))).unwrap();
            assert_eq!(a, b, "{codec} {id}");
        }
    }
}

#[test]
fn decode_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.lmfc");
    fs::write(&bad, b"not a bitstream").unwrap();
    let out = featcode(&[&"decode", &"--in", &bad, &"--out", &dir.path().join("x")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn report_merges_bench_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..5 {
        let p = dir.path().join(format!("b{i}.json"));
        write_json(
            &p,
            &json!({
                "tensor": format!("t{i}"), "codec": "entropy0", "lambda": 0.01,
                "t_enc_s": 0.004, "t_dec_s": 0.005, "s_raw_bits": 1_000_000, "s_enc_bits": 100_000,
                "bmax_bps": 1e8, "bmax_mbps": 100.0, "mem_peak_bytes": 0, "mem_method": "unavailable"
            }),
        );
        files.push(p);
    }
    let out = dir.path().join("merged.csv");
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"report", &"--in"];
    for f in &files {
        args.push(f);
    }
    args.push(&"--out");
    args.push(&out);
    ok(&featcode(&args));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2][0], "t2");
}

fn run_config(dir: &Path, out: &str, input: Value, codecs: &[&str]) -> PathBuf {
    let cfg = dir.join(format!("{out}.json"));
    write_json(
        &cfg,
        &json!({
            "input": input,
            "calibration": {"generate": [
                {"archetype": "deep_vit", "shape": [32, 512], "seed": 900},
                {"archetype": "kv_value", "shape": [5, 4, 32, 128], "seed": 901}
            ]},
            "codecs": codecs,
            "out_dir": out,
            "reps": 1,
            "warmups": 0,
            "histogram_bins": 64
        }),
    );
    cfg
}

fn test_input() -> Value {
    json!({"generate": [
        {"id": "dv", "archetype": "deep_vit", "shape": [32, 512], "seed": 1},
        {"id": "kv", "archetype": "kv_value", "shape": [5, 4, 32, 128], "seed": 2}
    ]})
}

#[test]
fn passthrough_run_matches_quantizer_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_config(dir.path(), "out", test_input(), &["passthrough"]);
    ok(&featcode(&[&"run", &"--config", &cfg]));
    let out = dir.path().join("out");
    let tensors = featcode::pipeline::Source::Generate(
        serde_json::from_value(test_input()["generate"].clone()).unwrap(),
    )
    .load()
    .unwrap();

    let rows = csv_rows(&out.join("reports/rp_table.csv"));
    assert_eq!(rows.len(), 10);
    for row in rows {
        let t = tensors.iter().find(|t| t.id == row[0]).unwrap();
        let (_, tf) = MonotoneTransform::load_json(
            &out.join(format!("transforms/{}.transform.json", t.role)),
        )
        .unwrap();
        let oracle = t
            .values()
            .iter()
            .map(|&v| {
                let r = dequantize_code(&tf, quantize_value(&tf, f64::from(v), 8), 8) as f32;
                let d = f64::from(v) - f64::from(r);
                d * d
            })
            .sum::<f64>()
            / t.len() as f64;
        let mse: f64 = row[5].parse().unwrap();
        assert!(
            (mse - oracle).abs() <= 1e-12 * oracle.max(1.0),
            "{mse} vs {oracle}"
        );
        assert_eq!(row[3].parse::<f64>().unwrap(), 8.0, "ebpfp");
        assert_eq!(row[4].parse::<f64>().unwrap(), 8.0, "bpfp");
    }

    // every written bitstream decodes
    for entry in fs::read_dir(out.join("bitstreams")).unwrap() {
        let p = entry.unwrap().path();
        ok(&featcode(&[
            &"decode",
            &"--in",
            &p,
            &"--out",
            &dir.path().join("redecode").join("x"),
        ]));
    }
}

#[test]
fn lossy_run_is_monotone_in_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_config(dir.path(), "out", test_input(), &["lossy_requant"]);
    ok(&featcode(&[&"run", &"--config", &cfg, &"--no-bench"]));
    let rows = csv_rows(&dir.path().join("out/reports/rp_table.csv"));
    let dv: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r[0] == "dv")
        .map(|r| (r[3].parse().unwrap(), r[5].parse().unwrap()))
        .collect();
    assert_eq!(dv.len(), 5);
    for w in dv.windows(2) {
        assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1, "{dv:?}");
    }
}

fn strip_timing(path: &Path) -> String {
    let rows = csv_rows(path);
    rows.iter()
        .map(|r| {
            let mut r = r.clone();
            r[8].clear(); // bmax_mbps
            r.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn runs_are_reproducible_and_calibration_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = run_config(d, "a", test_input(), &["entropy0", "lossy_requant"]);
    let b = run_config(d, "b", test_input(), &["entropy0", "lossy_requant"]);
    ok(&featcode(&[&"run", &"--config", &a]));
    ok(&featcode(&[&"run", &"--config", &b]));
    assert_eq!(
        strip_timing(&d.join("a/reports/rp_table.csv")),
        strip_timing(&d.join("b/reports/rp_table.csv"))
    );
    for f in [
        "reports/redundancy_original.json",
        "reports/redundancy_reconstructed.json",
        "reports/redundancy_original.csv",
        "transforms/hidden_state.transform.json",
    ] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    for entry in fs::read_dir(d.join("a/bitstreams")).unwrap() {
        let p = entry.unwrap().path();
        let twin = d.join("b/bitstreams").join(p.file_name().unwrap());
        assert_eq!(fs::read(&p).unwrap(), fs::read(twin).unwrap());
    }

    // Dropping a test tensor leaves the fitted transforms unchanged.
    let fewer =
        json!({"generate": [{"id": "dv", "archetype": "deep_vit", "shape": [32, 512], "seed": 1}]});
    let c = run_config(d, "c", fewer, &["entropy0"]);
    ok(&featcode(&[&"run", &"--config", &c, &"--no-bench"]));
    assert_eq!(
        fs::read(d.join("a/transforms/hidden_state.transform.json")).unwrap(),
        fs::read(d.join("c/transforms/hidden_state.transform.json")).unwrap()
    );

    let bench: Value =
        serde_json::from_slice(&fs::read(d.join("a/reports/bench.json")).unwrap()).unwrap();
    let entries = bench.as_array().unwrap();
    assert_eq!(entries.len(), 2 * 2 * 5);
    assert_eq!(entries[0]["mem_method"], "allocator-hook");
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_config(dir.path(), "out", test_input(), &["entropy0"]);
    let other = dir.path().join("elsewhere");
    ok(&featcode(&[
        &"run",
        &"--config",
        &cfg,
        &"--out",
        &other,
        &"--codecs",
        &"predictive",
        &"--lambdas",
        &"0.01",
        &"--no-bench",
    ]));
    let rows = csv_rows(&other.join("reports/rp_table.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[1] == "predictive" && r[2] == "0.01"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn empty_codec_list_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_config(dir.path(), "out", test_input(), &[]);
    let out = featcode(&[&"run", &"--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("codec list is empty"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_errors_give_nonzero_exit_and_keep_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    // token_embed has no calibration tensors, so only its tuples fail.
    let input = json!({"generate": [
        {"id": "dv", "archetype": "deep_vit", "shape": [32, 512], "seed": 1},
        {"id": "tok", "archetype": "token_embed", "shape": [77, 768], "seed": 2}
    ]});
    let cfg = run_config(dir.path(), "out", input, &["entropy0"]);
    let out = featcode(&[&"run", &"--config", &cfg, &"--no-bench"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tensor=tok"));
    let rows = csv_rows(&dir.path().join("out/reports/rp_table.csv"));
    assert_eq!(rows.len(), 5);
    let errors: Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/reports/errors.json")).unwrap())
            .unwrap();
    assert!(!errors.as_array().unwrap().is_empty());
}

#[test]
fn bench_subcommand_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = run_config(dir.path(), "out", test_input(), &["passthrough"]);
    let stdout = ok(&featcode(&[&"bench", &"--config", &cfg]));
    assert_eq!(stdout.lines().count(), 1 + 2 * 5);
    let bench: Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/reports/bench.json")).unwrap())
            .unwrap();
    let first = &bench[0];
    let raw = first["s_raw_bits"].as_u64().unwrap();
    assert_eq!(raw, 32 * 512 * 32);
    assert_eq!(first["s_enc_bits"].as_u64().unwrap(), raw / 4);
}
