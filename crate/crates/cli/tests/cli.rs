// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dehnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dehnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = dehnn(args);
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_on_one_design() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("d");
    let out = ok(&[
        "generate",
        "--out",
        s(&stem),
        "--cells",
        "120",
        "--seed",
        "4",
    ]);
    assert!(out.starts_with("d: 120 cells"));
    let nl = dir.path().join("d.netlist");
    assert!(nl.exists() && dir.path().join("d.targets").exists());

    let feats = dir.path().join("d.feat");
    let header = ok(&[
        "features",
        "--netlist",
        s(&nl),
        "--out",
        s(&feats),
        "--pd",
        "--lappe",
        "--deg-dist",
        "--k-hops",
        "3",
        "--image-res",
        "4",
    ]);
    assert!(header.contains("cell pd"));
    assert!(dir.path().join("d.feat.nets").exists());

    let part = dir.path().join("d.part");
    let summary = ok(&[
        "partition",
        "--netlist",
        s(&nl),
        "--out",
        s(&part),
        "--k",
        "3",
    ]);
    assert!(summary.contains("k = 3") && summary.contains("balanced = true"));
    assert_eq!(
        fs::read_to_string(&part)
            .unwrap()
            .lines()
            .filter(|l| !l.trim().is_empty())
            .count(),
        120
    );

    let run_dir = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# small run\nnetlist = d.netlist\ntargets = d.targets\nfeatures = d.feat\npartition = d.part\n\
         variant = FULL\nepochs = 3\npatience = 5\nlayers = 2\nhidden = 8\nk_hops = 3\nimage_res = 4\nout = run\n",
    )
    .unwrap();
    let summary = ok(&["train", "--config", s(&cfg)]);
    assert!(summary.starts_with("fold\trmse\tmae\tpearson\n"));
    assert!(summary.lines().last().unwrap().starts_with("mean\t"));
    for f in 0..4 {
        assert!(run_dir.join(format!("fold{f}.ckpt")).exists());
    }
    let ndjson = fs::read_to_string(run_dir.join("metrics.ndjson")).unwrap();
    assert_eq!(
        ndjson
            .lines()
            .filter(|l| l.contains("\"split\":\"test\""))
            .count(),
        4
    );

    // the checkpoint reproduces the fold's test metrics
    let eval = ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&run_dir.join("fold1.ckpt")),
    ]);
    let rmse = |line: &str| {
        line.split("\"rmse\":")
            .nth(1)
            .unwrap()
            .split(',')
            .next()
            .unwrap()
            .to_string()
    };
    let trained = ndjson
        .lines()
        .find(|l| l.contains("\"split\":\"test\"") && l.contains("\"fold\":1"))
        .unwrap();
    assert_eq!(rmse(eval.trim()), rmse(trained));

    let from_preds = ok(&["eval", "--predictions", s(&run_dir.join("predictions.tsv"))]);
    assert!(from_preds.starts_with("all\t"));
}

#[test]
fn ablation_over_three_designs() {
    let dir = tempfile::tempdir().unwrap();
    for (i, u) in ["0.3", "0.5", "0.7"].iter().enumerate() {
        let stem = dir.path().join(format!("d{i}"));
        ok(&[
            "generate",
            "--out",
            s(&stem),
            "--cells",
            "60",
            "--seed",
            &i.to_string(),
            "--utilization",
            u,
        ]);
    }
    let cfg = dir.path().join("abl.cfg");
    fs::write(
        &cfg,
        "designs = d0.netlist, d1.netlist, d2.netlist\nepochs = 2\nlayers = 1\nhidden = 4\nk_hops = 2\n\
         image_res = 2\npartition_size = 20\nseeds = 0, 1\nout = abl\n",
    )
    .unwrap();
    let tsv = ok(&["ablate", "--config", s(&cfg)]);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(
        lines[0],
        "variant\tmetric\tmean\tstd\timprovement_pct\tseed_0\tseed_1"
    );
    assert_eq!(lines.len(), 1 + 5 * 3);
    assert!(lines[1].starts_with("EHNN\trmse\t"));
    assert!(dir.path().join("abl/ablation.tsv").exists());
    let records = fs::read_to_string(dir.path().join("abl/metrics.ndjson")).unwrap();
    assert_eq!(
        records
            .lines()
            .filter(|l| l.contains("\"split\":\"test\""))
            .count(),
        5 * 2
    );
}

#[test]
fn gradcheck_passes_on_the_default_design() {
    let out = ok(&["gradcheck"]);
    assert_eq!(out.lines().filter(|l| l.contains('\t')).count(), 1 + 5 * 3);
    assert!(out.trim_end().ends_with("pass"));
}

#[test]
fn impossible_tolerance_fails_gradcheck() {
    let o = dehnn(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 3\nlearning_rate = 0.1\n").unwrap();
    let o = dehnn(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `learning_rate`"));
}

#[test]
fn missing_netlist_is_an_error() {
    let o = dehnn(&[
        "partition",
        "--netlist",
        "/nonexistent/x.netlist",
        "--out",
        "/tmp/never",
        "--k",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
