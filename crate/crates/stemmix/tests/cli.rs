//! End-to-end smoke test of the command-line pipeline at tiny scale:
//! synth -> builddb -> dataset -> train -> rank -> eval, plus exit-code
//! conventions.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stemmix"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("spawn stemmix");
    assert!(
        out.status.success(),
        "stemmix {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_smoke_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let p = |tail: &str| w.join(tail).to_str().unwrap().to_string();
    std::fs::write(
        w.join("cfg.toml"),
        "[model]\nscale = \"tiny\"\n[train]\nlr = 0.003\nepochs = 3\n[eval]\nn_rank_seeds = 2\npool_size = 4\n",
    )
    .unwrap();
    let cfg = p("cfg.toml");

    run_ok(&[
        "synth",
        "--n-songs",
        "12",
        "--seed",
        "9",
        "--out",
        &p("corpus"),
    ]);
    run_ok(&["builddb", "--out", &p("corpus")]);
    run_ok(&[
        "dataset",
        "--db",
        &p("corpus"),
        "--n-per-class",
        "12",
        "--seed",
        "9",
        "--out",
        &p("data"),
    ]);
    run_ok(&[
        "train",
        "--db",
        &p("corpus"),
        "--dataset",
        &p("data/dataset.tsv"),
        "--variant",
        "premix",
        "--seed",
        "9",
        "--out",
        &p("model"),
        "--config",
        &cfg,
    ]);
    run_ok(&[
        "rank",
        "--db",
        &p("corpus"),
        "--checkpoint",
        &p("model/model.ckpt"),
        "--pool-size",
        "4",
        "--seed",
        "9",
        "--out",
        &p("rank"),
        "--config",
        &cfg,
    ]);
    run_ok(&[
        "eval",
        "--db",
        &p("corpus"),
        "--dataset",
        &p("data/dataset.tsv"),
        "--seed",
        "9",
        "--out",
        &p("eval"),
        "--config",
        &cfg,
    ]);

    // the report exists with a header and five system rows
    let report = std::fs::read_to_string(w.join("eval/report.tsv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 6, "header + 5 rows, got:\n{report}");
    assert!(lines[0].starts_with("system\t"));
    for name in ["premix_lsro", "premix", "postmix_lsro", "postmix", "amu"] {
        assert!(
            lines.iter().any(|l| l.starts_with(&format!("{name}\t"))),
            "missing row {name}"
        );
    }

    // every run echoed its resolved config into the output directory
    for out_dir in ["corpus", "data", "model", "rank", "eval"] {
        assert!(
            w.join(out_dir).join("run_config.toml").exists(),
            "missing config echo in {out_dir}"
        );
    }

    // ranking lists the original among the scored candidates
    let ranking = std::fs::read_to_string(w.join("rank/ranking.tsv")).unwrap();
    assert!(ranking.lines().any(|l| l.contains("\toriginal\t")));

    // dataset rerun with the same seed is byte-identical
    run_ok(&[
        "dataset",
        "--db",
        &p("corpus"),
        "--n-per-class",
        "12",
        "--seed",
        "9",
        "--out",
        &p("data2"),
    ]);
    let a = std::fs::read(w.join("data/dataset.tsv")).unwrap();
    let b = std::fs::read(w.join("data2/dataset.tsv")).unwrap();
    assert_eq!(a, b);

    // exit codes: 1 usage, 2 data error
    let usage = bin().arg("bogus").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let data = bin()
        .args(["dataset", "--db", &p("missing"), "--out", &p("x")])
        .output()
        .unwrap();
    assert_eq!(data.status.code(), Some(2));

    assert!(Path::new(env!("CARGO_BIN_EXE_stemmix")).exists());
    println!("cli pipeline smoke: PASS");
}
