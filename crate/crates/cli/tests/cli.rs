use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pesto(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pesto"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON line")
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(err.lines().last().expect("error line")).expect("error line is JSON")
}

const TINY: [&str; 10] = [
    "--set", "dim=8", "--set", "heads=2", "--set", "sentences=60", "--set", "epochs=1", "--set", "sg_epochs=1",
];

#[test]
fn synth_train_eval_attn_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"output_dir": "run", "data_seed": 4}"#).unwrap();

    let v = stdout_json(&pesto(d, &[&["synth", "--config", "cfg.json", "--out", "c.txt"][..], &TINY].concat()));
    assert_eq!(v["sentences"], 60);
    assert!(d.join("c.txt").exists());

    let v = stdout_json(&pesto(d, &[&["train", "--config", "cfg.json"][..], &TINY].concat()));
    assert_eq!(v["evaluated_on"], "test");
    for f in ["checkpoint.bin", "config.json", "train_log.csv", "metrics.json", "metrics.txt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let echoed: Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["dim"], 8);
    assert_eq!(echoed["data_seed"], 4);

    let v = stdout_json(&pesto(d, &["eval", "--checkpoint", "run/checkpoint.bin", "--corpus", "c.txt"]));
    assert_eq!(v["n"], 60);
    assert!(d.join("run/eval_metrics.json").exists());

    let v = stdout_json(&pesto(
        d,
        &["attn", "--checkpoint", "run/checkpoint.bin", "--sentence", "aap_HI se_HI request_EN hain_HI", "--out", "attn"],
    ));
    assert_eq!(v["files"].as_array().unwrap().len(), 8);
    let v = stdout_json(&pesto(d, &["attn", "--checkpoint", "run/checkpoint.bin", "--uid", "syn2", "--corpus", "c.txt", "--out", "a2"]));
    assert_eq!(v["files"].as_array().unwrap().len(), 8);
}

#[test]
fn spi_on_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("ex.txt"),
        "meta\tex1\tneutral\naap\tHin\nse\tHin\nrequest\tEng\nhain\tHin\n\n",
    )
    .unwrap();
    let v = stdout_json(&pesto(d, &["spi", "--corpus", "ex.txt", "--variant", "base_mixed", "--out", "spi.csv"]));
    assert_eq!(v["summary"]["hi_to_en"], 1);
    assert_eq!(v["summary"]["en_to_hi"], 1);
    let csv = std::fs::read_to_string(d.join("spi.csv")).unwrap();
    assert_eq!(csv, "uid,variant,spi,switch_points\nex1,base_mixed,\"0,1,0,1\",\"2,3\"\n");
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = pesto(
        d,
        &[
            &[
                "ablate",
                "--set",
                "output_dir=grid",
                "--set",
                r#"ablation_schemes=["SINUSOIDAL","PESTO"]"#,
                "--set",
                "ablation_heads=[2]",
                "--set",
                "ablation_seeds=[0]",
            ][..],
            &TINY,
        ]
        .concat(),
    );
    let v = stdout_json(&out);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["scheme"], "SINUSOIDAL");
    assert_eq!(rows[1]["scheme"], "SP_DYNAMIC_RELATIVE");
    assert!(d.join("grid/ablation.csv").exists());
    assert!(d.join("grid/h2_sp_dynamic_relative/seed0/metrics.json").exists());
}

#[test]
fn failures_emit_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(error_line(&pesto(d, &["train", "--set", "bogus=1"]))["error"], "config");
    assert_eq!(error_line(&pesto(d, &["train", "--set", "heads=7"]))["error"], "config");
    assert_eq!(error_line(&pesto(d, &["eval", "--checkpoint", "missing.bin"]))["error"], "io");
    assert_eq!(error_line(&pesto(d, &["frobnicate"]))["error"], "usage");
    assert_eq!(error_line(&pesto(d, &["spi", "--variant", "sideways"]))["error"], "usage");

    std::fs::write(d.join("bad.txt"), "meta\tx\tneutral\nword\n").unwrap();
    let e = error_line(&pesto(d, &["spi", "--corpus", "bad.txt"]));
    assert_eq!(e["error"], "parse");
    assert!(e["message"].as_str().unwrap().contains(":2"));

    std::fs::write(d.join("junk.bin"), b"not a checkpoint").unwrap();
    let e = error_line(&pesto(d, &["attn", "--checkpoint", "junk.bin", "--sentence", "a_HI", "--out", "x"]));
    assert_eq!(e["error"], "compat");
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = pesto(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "eval", "ablate", "spi", "attn", "synth"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["quick.json", "ablation.json"] {
        pesto::train::RunConfig::load(Some(&root.join(name)), &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
