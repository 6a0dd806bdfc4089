use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn emofuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emofuse"))
        .args(args)
        .current_dir(dir)
        .env_remove("EMOFUSE_SEED")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const PRED_HEADER: &str = "sample_id,pA,pC,pD,pF,pH,pN,pS,pU,pred\n";

fn write_eval_fixture(dir: &Path) {
    let a = "1.000000,0.000000,0.000000,0.000000,0.000000,0.000000,0.000000,0.000000";
    let n = "0.000000,0.000000,0.000000,0.000000,0.000000,1.000000,0.000000,0.000000";
    let preds = format!("{PRED_HEADER}s1,{a},A\ns2,{n},N\ns3,{n},N\ns4,{n},N\n");
    fs::write(dir.join("p.csv"), preds).unwrap();
    fs::write(dir.join("r.csv"), "sample_id,label\ns1,A\ns2,A\ns3,N\ns4,N\n").unwrap();
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = emofuse(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn unknown_flag_is_named_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = emofuse(
        dir.path(),
        &["eval", "--pred", "p.csv", "--ref", "r.csv", "--frobnicate"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--frobnicate"));
}

#[test]
fn eval_fixture_reports_macro_f1() {
    let dir = tempfile::tempdir().unwrap();
    write_eval_fixture(dir.path());
    let out = emofuse(
        dir.path(),
        &["eval", "--pred", "p.csv", "--ref", "r.csv", "--format", "csv"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("F1-Macro,0.183333"), "{text}");
    assert!(text.contains("Accuracy,0.750000"), "{text}");
    assert!(dir.path().join("p.csv.eval.manifest.json").exists());

    let out = emofuse(dir.path(), &["eval", "--pred", "p.csv", "--ref", "r.csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("F1-Macro"), "{text}");
    assert!(text.contains("0.1833"), "{text}");
}

#[test]
fn missing_input_names_the_file_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    write_eval_fixture(dir.path());
    let out = emofuse(dir.path(), &["eval", "--pred", "missing.csv", "--ref", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.csv"), "{}", stderr(&out));
}

#[test]
fn explicit_manifest_location_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    write_eval_fixture(dir.path());
    let out = emofuse(
        dir.path(),
        &[
            "--manifest",
            "run.json",
            "eval",
            "--pred",
            "p.csv",
            "--ref",
            "r.csv",
            "--confusion",
            "cm.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "eval");
    assert!(manifest["outputs"]["cm.csv"].as_str().unwrap().starts_with("sha256:"));
    assert!(manifest["inputs"]["p.csv"].is_string());
    assert!(!dir.path().join("cm.csv.manifest.json").exists());
    let cm = fs::read_to_string(dir.path().join("cm.csv")).unwrap();
    assert!(cm.starts_with("reference,A,C,D,F,H,N,S,U\n"));
}

#[test]
fn noiseless_annotators_reproduce_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = emofuse(
        dir.path(),
        &[
            "synth",
            "--out-dir",
            "d",
            "--per-class",
            "5",
            "--dev-per-class",
            "1",
            "--error-rate",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let truth = fs::read_to_string(dir.path().join("d/train_truth.csv")).unwrap();
    let consensus = fs::read_to_string(dir.path().join("d/train_consensus.csv")).unwrap();
    assert_eq!(truth, consensus);

    let out = emofuse(
        dir.path(),
        &[
            "consensus",
            "--annotations",
            "d/annotations.csv",
            "--original",
            "d/train_truth.csv",
            "--out",
            "c.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sample_id,label,source"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.ends_with(",original")));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let synth = |seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_emofuse"));
        cmd.args(["synth", "--out-dir", out, "--per-class", "2", "--dev-per-class", "1"])
            .current_dir(dir.path())
            .env_remove("EMOFUSE_SEED");
        if let Some(s) = seed {
            cmd.env("EMOFUSE_SEED", s);
        }
        assert!(cmd.status().unwrap().success());
        fs::read(dir.path().join(out).join("train_s0.emf")).unwrap()
    };
    let default = synth(None, "a");
    assert_eq!(default, synth(Some("42"), "b"));
    assert_ne!(default, synth(Some("7"), "c"));
}

#[test]
fn jeffreys_requires_alpha_and_beta_outside_preset_b() {
    let dir = tempfile::tempdir().unwrap();
    let out = emofuse(
        dir.path(),
        &[
            "synth",
            "--out-dir",
            "d",
            "--per-class",
            "3",
            "--dev-per-class",
            "1",
            "--streams",
            "1",
        ],
    );
    assert!(out.status.success());
    let base = [
        "train",
        "--features",
        "d/train_s0.emf",
        "--labels",
        "d/train_truth.csv",
        "--epochs",
        "1",
    ];

    let mut args = base.to_vec();
    args.extend(["--loss", "jeffreys", "--beta", "0.1", "--out", "m.json"]);
    let out = emofuse(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--alpha"), "{}", stderr(&out));

    let mut args = base.to_vec();
    args.extend(["--preset", "B", "--out", "b.json"]);
    let out = emofuse(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let model: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(model["metadata"]["config"]["loss"]["kind"], "jeffreys");

    let mut args = base.to_vec();
    args.extend(["--preset", "C", "--out", "c.json"]);
    let out = emofuse(dir.path(), &args);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--preset"), "{}", stderr(&out));
}

#[test]
fn predictions_match_model_stream_count() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emofuse(
        dir.path(),
        &["synth", "--out-dir", "d", "--per-class", "3", "--dev-per-class", "1"]
    )
    .status
    .success());
    let out = emofuse(
        dir.path(),
        &[
            "train",
            "--preset",
            "D",
            "--features",
            "d/train_s0.emf",
            "--features2",
            "d/train_s1.emf",
            "--labels",
            "d/train_truth.csv",
            "--epochs",
            "2",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = emofuse(
        dir.path(),
        &[
            "predict",
            "--model",
            "m.json",
            "--features",
            "d/dev_s0.emf",
            "--out",
            "p.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("m.json"));
    let out = emofuse(
        dir.path(),
        &[
            "predict",
            "--model",
            "m.json",
            "--features",
            "d/dev_s0.emf",
            "--features2",
            "d/dev_s1.emf",
            "--out",
            "p.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(text.starts_with(PRED_HEADER));
    assert_eq!(text.lines().count(), 9);
}
