use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use gnnopt::milp::{read_lp, read_mps};
use gnnopt::model::{load_graph, save_model, LayerKind, RandomModelSpec};
use gnnopt::molecule::{enumerate, MoleculeSpace};

fn gnnopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnnopt"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(dir: &Path, command: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("{command}_report.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn random_model(dir: &Path, kind: LayerKind, width: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = RandomModelSpec::uniform(kind, 14, 1, width)
        .with_head(vec![4])
        .sample(&mut rng)
        .unwrap()
        .with_target(312.64, 62.98)
        .unwrap();
    let path = dir.join(format!("model_{seed}.json"));
    save_model(&model, &path).unwrap();
    path
}

/// A weights file written by hand in the exchange format: one SAGE layer
/// reading the carbon and oxygen flags, sum pooling and a dense output.
const HAND_WRITTEN: &str = r#"{
  "f_input_width": 14,
  "d_max": 4,
  "target_mean": 312.64,
  "target_std": 62.98,
  "layers": [
    {"kind": "SAGE", "aggregation": "add", "activation": "relu",
     "w_root": {"rows": 2, "cols": 14, "data": [
        1,0,0,0, 0,0,0,0,0, 0,0,0,0,0,
        0,1,0,0, 0,0,0,0,0, 0,0,0,0,0]},
     "w_agg": {"rows": 2, "cols": 14, "data": [
        0.5,0,0,0, 0,0,0,0,0, 0,0,0,0,0,
        0,0,0,0, 0,0,0,0,0, 0,0,0,0,0]}},
    {"kind": "SumPool"},
    {"kind": "Dense", "activation": "none",
     "w": {"rows": 1, "cols": 2, "data": [1.0, -2.0]}, "b": [0.1]}
  ]
}"#;

#[test]
fn verify_passes_and_reports_the_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(dir.path(), LayerKind::Sage, 8, 1);
    let out = gnnopt(
        dir.path(),
        &[
            "verify",
            "--model",
            model.to_str().unwrap(),
            "-n",
            "3",
            "--trials",
            "8",
        ],
    );
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("PASS verify encoder=variable"));
    assert!(text.contains("PASS verify encoder=fixed"));
    let r = report(dir.path(), "verify");
    let expected = hex::encode(Sha256::digest(fs::read(&model).unwrap()));
    assert_eq!(r["model_sha256"], Value::String(expected));
    assert_eq!(r["config"]["trials"], 8);
}

#[test]
fn corrupted_big_m_fails_with_a_replayable_graph() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(dir.path(), LayerKind::Gcn, 4, 2);
    let out = gnnopt(
        dir.path(),
        &[
            "verify",
            "--model",
            model.to_str().unwrap(),
            "-n",
            "3",
            "--trials",
            "4",
            "--corrupt-big-m",
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL verify"));
    let graph = load_graph(dir.path().join("mismatch_variable.json")).unwrap();
    assert_eq!(graph.n_nodes(), 3);
}

#[test]
fn solve_matches_enumeration_and_denormalizes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.json");
    fs::write(&path, HAND_WRITTEN).unwrap();
    let model = gnnopt::model::load_model(&path).unwrap();
    let space = MoleculeSpace::simple(2).unwrap();
    let best = enumerate(&model, &space, 1e6).unwrap()[0].1;

    let out = gnnopt(
        dir.path(),
        &[
            "solve",
            "--model",
            path.to_str().unwrap(),
            "-n",
            "2",
            "--certify",
        ],
    );
    assert!(out.status.success(), "{}", stdout(&out));
    let r = report(dir.path(), "solve");
    assert_eq!(r["results"]["status"], "OPTIMAL");
    assert_eq!(r["results"]["certificate"]["holds"], true);
    let obj = r["results"]["objective"].as_f64().unwrap();
    assert!((obj - best).abs() < 1e-6, "{obj} vs {best}");
    let kelvin = r["results"]["denormalized"].as_f64().unwrap();
    assert!((kelvin - (312.64 + 62.98 * obj)).abs() < 1e-9);
    assert!(dir.path().join("solution.sol").exists());

    let out = gnnopt(
        dir.path(),
        &["enumerate", "--model", path.to_str().unwrap(), "-n", "2"],
    );
    assert!(out.status.success());
    let r = report(dir.path(), "enumerate");
    // 4 x 4 labelings of a single bond, 10 up to swapping the two atoms
    assert_eq!(r["results"]["count"], 16);
    assert_eq!(r["results"]["classes"], 10);
}

#[test]
fn ga_writes_history_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(dir.path(), LayerKind::Sage, 8, 3);
    let run = |sub: &str| {
        let d = dir.path().join(sub);
        let out = gnnopt(
            &d,
            &[
                "--seed",
                "7",
                "ga",
                "--model",
                model.to_str().unwrap(),
                "-n",
                "3",
                "--population",
                "40",
                "--generations",
                "60",
            ],
        );
        assert!(out.status.success(), "{}", stdout(&out));
        let csv = fs::read_to_string(d.join("ga_history.csv")).unwrap();
        let best: Vec<String> = csv
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().to_string())
            .collect();
        (csv, best)
    };
    let (csv, a) = run("a");
    let (_, b) = run("b");
    assert!(csv.starts_with("generation,seconds,best_value\n"));
    assert_eq!(a.len(), 61);
    assert_eq!(a, b);
}

#[test]
fn encode_writes_readable_files() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(dir.path(), LayerKind::Gcn, 4, 4);
    for (format, file) in [("lp", "model.lp"), ("mps", "model.mps")] {
        let out = gnnopt(
            dir.path(),
            &[
                "encode",
                "--model",
                model.to_str().unwrap(),
                "-n",
                "3",
                "--format",
                format,
            ],
        );
        assert!(out.status.success(), "{}", stdout(&out));
        let r = report(dir.path(), "encode");
        let rows = r["results"]["constraints"].as_u64().unwrap() as usize;
        let back = match format {
            "lp" => read_lp(dir.path().join(file)).unwrap(),
            _ => read_mps(dir.path().join(file)).unwrap(),
        };
        assert_eq!(back.num_constraints(), rows);
    }
    let out = gnnopt(
        dir.path(),
        &["bounds", "--model", model.to_str().unwrap(), "-n", "3"],
    );
    assert!(out.status.success());
    let r = report(dir.path(), "bounds");
    // gcn, pool, hidden dense, output
    assert_eq!(r["results"]["layers"].as_array().unwrap().len(), 4);
}

#[test]
fn solving_an_encoded_file_gives_the_same_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.json");
    fs::write(&path, HAND_WRITTEN).unwrap();
    let model = path.to_str().unwrap();
    let out_file = dir.path().join("space.mps");
    let out = gnnopt(
        dir.path(),
        &[
            "encode",
            "--model",
            model,
            "--arch",
            "sage",
            "-n",
            "2",
            "--out",
            out_file.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(read_mps(&out_file).is_ok());

    let out = gnnopt(
        dir.path(),
        &["solve", "--model", model, "-n", "2", "--pool", "3"],
    );
    assert!(out.status.success(), "{}", stdout(&out));
    let direct = report(dir.path(), "solve");
    let pool = direct["results"]["pool"].as_array().unwrap();
    assert!(!pool.is_empty() && pool.len() <= 3);
    assert_eq!(pool[0]["value"], direct["results"]["objective"]);
    assert_eq!(pool[0]["molecule"]["feasible"], true);
    // earlier incumbents are never better
    for w in pool.windows(2) {
        assert!(w[0]["value"].as_f64().unwrap() >= w[1]["value"].as_f64().unwrap());
    }

    let out = gnnopt(
        dir.path(),
        &["solve", "--lp", out_file.to_str().unwrap(), "--gap", "1e-9"],
    );
    assert!(out.status.success(), "{}", stdout(&out));
    let from_file = report(dir.path(), "solve");
    let a = direct["results"]["objective"].as_f64().unwrap();
    let b = from_file["results"]["objective"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    let expected = hex::encode(Sha256::digest(fs::read(&out_file).unwrap()));
    assert_eq!(from_file["model_sha256"], Value::String(expected));
}

#[test]
fn bad_input_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.json");
    fs::write(&path, HAND_WRITTEN).unwrap();
    let out = gnnopt(
        dir.path(),
        &[
            "solve",
            "--model",
            path.to_str().unwrap(),
            "--atoms",
            "C,Xe",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Xe"));
    let out = gnnopt(dir.path(), &["verify", "--model", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gnnopt(
        dir.path(),
        &["bounds", "--model", path.to_str().unwrap(), "--arch", "gcn"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Sage"));
}
