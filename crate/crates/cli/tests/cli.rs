use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn conecraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conecraft")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--override",
    "constraint.side=4",
    "--override",
    "data.n_train=64",
    "--override",
    "data.n_val=16",
    "--override",
    "data.n_test=8",
    "--override",
    "epochs=3",
    "--override",
    "box_activation_epoch=1",
    "--override",
    "batch_size=16",
    "--override",
    "wall_clock=false",
];

#[test]
fn gen_constraints_examples() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.hrep");
    let o = conecraft(&["gen-constraints", "--kind", "checkerboard", "--side", "2", "--tiles", "2", "--out", s(&p)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("H 4 4\n"));
    assert_eq!(text.lines().count(), 5);
    let o = conecraft(&["gen-constraints", "--kind", "checkerboard", "--side", "10", "--tiles", "3", "--out", s(&p)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn convert_orthant_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("o.hrep");
    let v = dir.path().join("o.vrep");
    fs::write(&h, "H 3 3\n-1 0 0\n0 -1 0\n0 0 -1\n").unwrap();
    let o = conecraft(&["convert", "--hrep", s(&h), "--out", s(&v)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("n_pointed: 3") && out.contains("n_lin: 0") && out.contains("n_r: 3"), "{out}");
    assert!(fs::read_to_string(&v).unwrap().starts_with("V 3 3 0\n"));

    // identical result in file order
    let o = conecraft(&["convert", "--hrep", s(&h), "--out", s(&v), "--order", "input"]);
    assert_eq!(code(&o), 0);

    fs::write(&h, "H 3\n-1 0 0\n").unwrap();
    let o = conecraft(&["convert", "--hrep", s(&h), "--out", s(&v)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
    let o = conecraft(&["convert", "--hrep", s(&dir.path().join("missing")), "--out", s(&v)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn project_feasible_input_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("c.hrep");
    conecraft(&["gen-constraints", "--kind", "checkerboard", "--side", "2", "--tiles", "2", "--out", s(&h)]);
    let input = dir.path().join("in.txt");
    let out = dir.path().join("out.txt");
    // each point strictly satisfies the alternating sign pattern or its negation
    let hrep = fs::read_to_string(&h).unwrap();
    let rows: Vec<Vec<f64>> = hrep.lines().skip(1).map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect()).collect();
    let pts = [[0.5, -0.25, -0.75, 0.125], [0.1, -0.2, -0.3, 0.4]];
    let feasible = pts.iter().all(|p| rows.iter().all(|r| r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() <= 0.0));
    let pts: Vec<[f64; 4]> = if feasible { pts.to_vec() } else { pts.iter().map(|p| p.map(|x| -x)).collect() };
    let text = format!(
        "M 2 4\n{}\n",
        pts.iter().map(|p| p.map(|x| x.to_string()).join(" ")).collect::<Vec<_>>().join("\n")
    );
    fs::write(&input, text).unwrap();
    let o = conecraft(&["project", "--hrep", s(&h), "--box", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got: Vec<f64> = fs::read_to_string(&out).unwrap().lines().skip(1).flat_map(|l| l.split_whitespace().map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
    let want: Vec<f64> = pts.iter().flatten().copied().collect();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-12);
    }

    // infeasible rows move; one cycle is not enough -> convergence failure
    fs::write(&input, "M 1 4\n3 1 -2 5\n").unwrap();
    let o = conecraft(&["project", "--hrep", s(&h), "--in", s(&input), "--out", s(&out), "--max-iter", "1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = conecraft(&["project", "--hrep", s(&h), "--box", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    fs::write(&input, "M 1 3\n1 2 3\n").unwrap();
    assert_eq!(code(&conecraft(&["project", "--hrep", s(&h), "--in", s(&input), "--out", s(&out)])), 1);
}

#[test]
fn train_projection_writes_outputs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"lr": 0.01, "epochs": 10}"#).unwrap();
    let run = |out: &Path| {
        let mut args = vec!["train", "--task", "projection", "--config", s(&cfg), "--out", s(out), "--seed", "4"];
        args.extend_from_slice(TINY);
        conecraft(&args)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("\"gap\""));
    assert_eq!(code(&run(&b)), 0);
    let metrics = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    // the override beats the file
    assert_eq!(metrics.lines().count(), 4);
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.jsonl")).unwrap());
    let echoed: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["lr"], 0.01);
    assert_eq!(echoed["epochs"], 3);
    assert_eq!(echoed["seed"], 4);
    assert_eq!(echoed["scheduler"]["patience"], 5);
    assert!(a.join("checkpoint/manifest.json").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = conecraft(&["train", "--task", "vae", "--override", "data.colour=1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{not json").unwrap();
    let o = conecraft(&["train", "--task", "projection", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn vae_sample_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("vae");
    let mut args = vec!["train", "--task", "vae", "--out", s(&train), "--override", "hidden_dim=8", "--override", "n_prior_samples=10"];
    args.extend_from_slice(TINY);
    let o = conecraft(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = train.join("checkpoint");
    let (a, b) = (dir.path().join("s1"), dir.path().join("s2"));
    for out in [&a, &b] {
        let o = conecraft(&["sample", "--ckpt", s(&ck), "--n", "12", "--seed", "5", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["samples.txt", "samples.bin", "report.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.join("samples.bin")).unwrap().len(), 12 * 16 * 8);
    assert!(fs::read_to_string(a.join("samples.txt")).unwrap().starts_with("M 12 16\n"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    let o = conecraft(&["sample", "--ckpt", s(dir.path()), "--n", "1", "--out", s(&a)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_and_gradcheck_run() {
    let o = conecraft(&[
        "bench",
        "--override",
        "constraint.side=4",
        "--override",
        "n_runs=3",
        "--override",
        "batch=4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r["ratio"].as_f64().unwrap() > 0.0);
    let o = conecraft(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&conecraft(&["train"])), 1);
    assert_eq!(code(&conecraft(&["--threads", "x", "gradcheck"])), 1);
    assert_eq!(code(&conecraft(&["--help"])), 0);
}
