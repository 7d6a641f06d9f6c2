use std::path::PathBuf;
use std::process::{Command, Output};

fn qcars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcars"))
        .args(args)
        .env_remove("QCARS_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn configs(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn alias_reports_folded_image() {
    let o = qcars(&["alias", "--fin", "6e9", "--fs", "4.096e9"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "image_hz=1.904e9 zone=3");
}

#[test]
fn latency_reports_measured_point() {
    let o = qcars(&["latency", "--interp", "8", "--decim", "4"]);
    let text = stdout(&o);
    assert!(text.contains("cycles=48\n") && text.contains("ns=250\n"), "{text}");
    assert!(text.contains("model=measured"));
    let o = qcars(&["latency", "--interp", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn jitter_is_seeded_and_bounded() {
    let a = qcars(&["jitter", "--sigma-ps", "0.6", "--samples", "4000", "--seed", "5"]);
    let b = qcars(&["jitter", "--sigma-ps", "0.6", "--samples", "4000", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("within_bound=true"), "{}", stdout(&a));
}

#[test]
fn response_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rtc.csv");
    let o = qcars(&["response", "--mode", "rtc", "--fmax", "18.432e9", "--points", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7);
    // rows sit at 0, fs/2, ..., 3 fs
    assert!(rows[0][1] < 1e-12 && rows[4][1] < 1e-12);
    assert!(rows[0][5] < 1e-6 && rows[4][5] < 1e-6);
    for r in &rows {
        assert!((r[1] - r[5]).abs() < 5e-3, "{r:?}");
    }

    let out2 = dir.path().join("two.csv");
    let o = qcars(&["response", "--mode", "nrz", "--fmax", "12.288e9", "--points", "2", "--out", out2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&out2).unwrap().lines().count(), 3);

    let o = qcars(&["response", "--mode", "pam", "--fmax", "1e9", "--out", out2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = qcars(&[
            "run", "--config", &configs("t1.json"), "--device", &configs("d1.json"),
            "--out", out.to_str().unwrap(), "--seed", "11", "--shots-override", "500", "--gnuplot",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("T1="));
    }
    let sweep = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(sweep, std::fs::read(b.join("sweep.csv")).unwrap());
    assert!(String::from_utf8(sweep).unwrap().starts_with("index,axis_ns,"));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["total_shots"], 40 * 500);
    assert!(a.join("fit.txt").exists() && a.join("sweep.gp").exists());
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_qcars"));
        c.args(["run", "--config", &configs("t1.json"), "--device", &configs("d1.json"), "--shots-override", "100"]);
        c.args(["--out", dir.path().join(out).to_str().unwrap()]);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        c.env_remove("QCARS_SEED");
        if let Some(s) = env {
            c.env("QCARS_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
        std::fs::read(dir.path().join(out).join("sweep.csv")).unwrap()
    };
    assert_eq!(run("env", Some("42"), None), run("flag", None, Some("42")));
}

#[test]
fn fit_command_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("decay.csv");
    let mut text = String::from("x,y\n");
    for k in 0..40 {
        let t = k as f64 * 150.0 / 39.0;
        text += &format!("{t},{}\n", 0.1 + 0.8 * (-t / 30.5).exp());
    }
    std::fs::write(&input, text).unwrap();
    let o = qcars(&["fit", "--model", "t1", "--in", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t1: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("T1="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((t1 - 30.5).abs() < 1e-4);
    assert_eq!(std::fs::read_to_string(dir.path().join("decay_fit.csv")).unwrap().lines().count(), 41);

    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "x,y\n0,1\n1,1\n2,1\n3,1\n4,1\n").unwrap();
    let o = qcars(&["fit", "--model", "t1", "--in", flat.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes() {
    let o = qcars(&["run", "--config", "/nonexistent/cfg.json", "--device", &configs("d1.json"), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/cfg.json"));

    let o = qcars(&["alias", "--fin", "1e9", "--fs", "2e9", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, std::fs::read_to_string(configs("t1.json")).unwrap().replace("\"T1\"", "\"Echo\"")).unwrap();
    let o = qcars(&["run", "--config", bad.to_str().unwrap(), "--device", &configs("d1.json"), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Echo"));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = qcars(&[
        "run", "--config", &configs("t1.json"), "--device", &configs("d1.json"),
        "--out", blocker.join("sub").to_str().unwrap(), "--shots-override", "10",
    ]);
    assert_eq!(o.status.code(), Some(4));
}
