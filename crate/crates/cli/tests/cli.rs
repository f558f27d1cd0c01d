use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn thinbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thinbeam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).expect("error JSON on stderr")
}

const ISO11: &str = r#"{"tensor": {"isotropic": {"mu": 1, "lambda": 1}}}"#;

#[test]
fn bending_constant_isotropic() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "b.json", ISO11);
    let o = thinbeam(&["bending-constant", "--config", &cfg]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().any(|l| l == "a = 2.666666666666667"), "{out}");
}

#[test]
fn bending_constant_json_sidecar() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "b.json", ISO11);
    let out = d.path().join("out");
    let o = thinbeam(&["bending-constant", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&std::fs::read(out.join("bending.json")).unwrap()).unwrap();
    assert!((v["a"].as_f64().unwrap() - 8.0 / 3.0).abs() < 1e-14);
    let meta: Value = serde_json::from_slice(&std::fs::read(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "bending-constant");
    assert!(meta["seed"].is_u64());
}

#[test]
fn missing_key_exits_2() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "b.json", "{}");
    let o = thinbeam(&["bending-constant", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "ConfigError");
    assert!(e["message"].as_str().unwrap().contains("tensor"));
}

#[test]
fn unknown_key_exits_2() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "b.json", r#"{"tensor": {"isotropic": {"mu": 1, "lambda": 1}}, "extra": 1}"#);
    let o = thinbeam(&["bending-constant", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "ConfigError");
}

#[test]
fn missing_config_flag_exits_2() {
    let o = thinbeam(&["eval-eh"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "ConfigError");
}

#[test]
fn non_coercive_tensor_is_a_config_error() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "b.json", r#"{"tensor": {"isotropic": {"mu": 1, "lambda": -1.5}}}"#);
    let o = thinbeam(&["bending-constant", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn singular_truss_exits_3() {
    let d = TempDir::new().unwrap();
    // three parallel bars cannot pin a rotation
    let cfg = write(
        d.path(),
        "t.json",
        r#"{"pairs": [{"p": [0, 0], "q": [1, 0]}, {"p": [0, 1], "q": [1, 1]}, {"p": [0, 2], "q": [1, 2]}],
            "measurements": [0.1, 0.2, 0.3]}"#,
    );
    let o = thinbeam(&["truss-det", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "NumericalFailure");
}

#[test]
fn truss_inversion_recovers_motion() {
    let d = TempDir::new().unwrap();
    // elongations of x -> A x + b with A = skew(0.1), b = (-0.1, -0.2)
    let cfg = write(
        d.path(),
        "t.json",
        r#"{"pairs": [{"p": [0, 0], "q": [1, 0]}, {"p": [0, 1], "q": [1, 1]}, {"p": [0, 0], "q": [1, 1]}],
            "measurements": [0.1, 0.2, 0.3]}"#,
    );
    let o = thinbeam(&["truss-det", "--config", &cfg, "--format", "json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["singular"], false);
    let skew = v["solve"]["motion"]["skew"][0].as_f64().unwrap();
    assert!((skew - 0.1).abs() < 1e-12);
}

const SWEEP: &str = r#"{
  "tensor": {"isotropic": {"mu": 1, "lambda": 1}},
  "beta": 1.0,
  "limit": {"L": 1.0, "u": {"values": [0.0]},
            "v": {"breaks": [0.4], "pieces": [{"poly": [0, 0, 0.5]}, {"poly": [0.3, 0.4]}]}},
  "h": [0.125, 0.0625],
  "eta": [0.2, 0.1]
}"#;

#[test]
fn gamma_sweep_is_deterministic() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "s.json", SWEEP);
    let a = d.path().join("a/sweep.csv");
    let b = d.path().join("b/sweep.csv");
    for p in [&a, &b] {
        let o = thinbeam(&["gamma-sweep", "--config", &cfg, "--out", p.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert!(text.starts_with("h,eta,e_h,elastic,jump,e0,gap,smoothing_error\n"));
    assert_eq!(text.lines().count(), 3);
    let meta: Value = serde_json::from_slice(&std::fs::read(d.path().join("a/sweep.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
}

#[test]
fn gamma_sweep_unreachable_eta_exits_3() {
    let d = TempDir::new().unwrap();
    // a sine piece is not reproduced exactly on the grid, so tiny eta is out of reach
    let cfg = write(
        d.path(),
        "s.json",
        &SWEEP
            .replace("[0.2, 0.1]", "[1e-9, 1e-9]")
            .replace(r#"{"poly": [0.3, 0.4]}"#, r#"{"sines": [{"amplitude": 0.2, "frequency": 6.0, "phase": 0.0}]}"#),
    );
    let o = thinbeam(&["gamma-sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn solve_beam_writes_profile_and_sidecar() {
    let d = TempDir::new().unwrap();
    let cfg = write(
        d.path(),
        "beam.json",
        r#"{"problem": {"a": 2.6666666666666665, "beta": 0.05, "L": 1.0,
              "g_u": [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
              "g_v": [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
              "fidelity_weight": 10.0}, "max_jumps": 2}"#,
    );
    let out = d.path().join("out");
    let o = thinbeam(&["solve-beam", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("beam.csv")).unwrap();
    assert!(csv.starts_with("x,u,v\n"));
    assert_eq!(csv.lines().count(), 12);
    let v: Value = serde_json::from_slice(&std::fs::read(out.join("beam.json")).unwrap()).unwrap();
    // the step in g_u is worth a jump: fidelity would otherwise cost ~ 10 * 0.25
    assert_eq!(v["jumps_u"].as_array().unwrap().len(), 1);
    assert!((v["jumps_u"][0].as_f64().unwrap() - 0.55).abs() < 1e-12);
    for k in ["elastic", "jump", "fidelity"] {
        assert!(v[k].is_f64(), "{k}");
    }
}

fn grid_bytes(nx: usize, ny: usize, l: f64, h: f64, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<u8> {
    let xs: Vec<f64> = (0..=nx).map(|i| l * i as f64 / nx as f64).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| -0.5 + j as f64 / ny as f64).collect();
    let mut b = b"TBGRID1\0".to_vec();
    for n in [nx as u64, ny as u64, 2] {
        b.extend_from_slice(&n.to_le_bytes());
    }
    let mut vals = vec![l, h];
    vals.extend(&xs);
    vals.extend(&ys);
    for &y in &ys {
        for &x in &xs {
            vals.extend(f(x, y));
        }
    }
    for v in vals {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

#[test]
fn eval_eh_reads_binary_grid() {
    let d = TempDir::new().unwrap();
    let h = 0.1;
    // rigid motion: no elastic energy
    std::fs::write(d.path().join("y.tbgrid"), grid_bytes(20, 4, 2.0, h, |x, y| [-0.3 * h * y + 1.0, 0.3 * x])).unwrap();
    let cfg = write(
        d.path(),
        "e.json",
        r#"{"tensor": {"isotropic": {"mu": 1, "lambda": 1}}, "beta": 2.0,
            "field": {"grid": {"path": "y.tbgrid", "crack": {"segments": [[[1.05, -0.5], [1.05, 0.5]]]}}}}"#,
    );
    let o = thinbeam(&["eval-eh", "--config", &cfg, "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["elastic"].as_f64().unwrap().abs() < 1e-20);
    assert!((v["jump"].as_f64().unwrap() - 2.0).abs() < 1e-14);
}

#[test]
fn eval_eh_rejects_truncated_grid() {
    let d = TempDir::new().unwrap();
    let mut b = grid_bytes(4, 4, 1.0, 0.1, |_, _| [0.0; 2]);
    b.truncate(b.len() - 8);
    std::fs::write(d.path().join("y.tbgrid"), b).unwrap();
    let cfg = write(
        d.path(),
        "e.json",
        r#"{"tensor": {"isotropic": {"mu": 1, "lambda": 1}}, "beta": 1.0, "field": {"grid": {"path": "y.tbgrid"}}}"#,
    );
    let o = thinbeam(&["eval-eh", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

const SPLIT: &str = r#"{"tensor": {"isotropic": {"mu": 1, "lambda": 1}}, "beta": 1.0, "fidelity": 100.0,
  "target": {"split": {"h": 0.25, "L": 1.0, "nx": 32, "ny": 16, "x0": 0.515625,
                       "left": [-0.25, 0], "right": [0.25, 0]}},
  "random_init": true}"#;

#[test]
fn solve_2d_outputs_and_seed_determinism() {
    let d = TempDir::new().unwrap();
    let cfg = write(d.path(), "p.json", SPLIT);
    let run = |name: &str, seed: &str| {
        let out = d.path().join(name);
        let o = thinbeam(&["solve-2d", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a", "11"), run("b", "11"));
    for f in ["y.tbgrid", "phi.tbgrid", "energy_trace.csv", "crack.json", "summary.json", "meta.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let crack: Value = serde_json::from_slice(&std::fs::read(a.join("crack.json")).unwrap()).unwrap();
    let segs = crack["segments"].as_array().unwrap();
    assert_eq!(segs.len(), 1);
    let x = segs[0]["a"][0].as_f64().unwrap();
    assert!((x - 0.515625).abs() <= 1.0 / 32.0 + 1e-12, "crack at {x}");
    let trace = std::fs::read_to_string(a.join("energy_trace.csv")).unwrap();
    let e: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn compactness_writes_artifacts() {
    let d = TempDir::new().unwrap();
    let cfg = write(
        d.path(),
        "c.json",
        r#"{"field": {"split": {"h": 0.0625, "L": 1.0, "nx": 64, "ny": 16, "x0": 0.5078125,
                                "left": [0, 0], "right": [0.1, 0.2]}},
            "delta": 0.05, "eta": 0.3}"#,
    );
    let out = d.path().join("out");
    let o = thinbeam(&["compactness", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["partition.json", "steps.csv", "fields.csv", "certificates.json", "residual.tbgrid", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let steps = std::fs::read_to_string(out.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 3);
    let s: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["jumps"], 1);
    assert!(s["max_residual_off_omega"].as_f64().unwrap() < 1e-12);
}

#[test]
fn csv_grids_on_request() {
    let d = TempDir::new().unwrap();
    let cfg = write(
        d.path(),
        "c.json",
        r#"{"field": {"rigid": {"h": 0.125, "L": 1.0, "nx": 16, "ny": 4, "a": 0.1, "b": [0, 0]}},
            "delta": 0.05, "eta": 0.3}"#,
    );
    let out = d.path().join("out");
    let o = thinbeam(&["compactness", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("residual.csv")).unwrap();
    assert!(text.starts_with("nx,ny,L,h,ncomp\n16,4,1,0.125,2\n"));
}
