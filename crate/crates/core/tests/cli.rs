use std::path::Path;
use std::process::{Command, Output};

use spikehar::checkpoint;
use spikehar::Model;

const SYNTH: [&str; 12] = [
    "--dataset-kind",
    "synth",
    "--synth-classes",
    "2",
    "--synth-per-class",
    "10",
    "--synth-steps",
    "16",
    "--synth-channels",
    "2",
    "--split-seed",
    "3",
];

fn spikehar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikehar"))
        .args(args)
        .env_remove("SPIKEHAR_DATA")
        .output()
        .unwrap()
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(SYNTH);
    args.extend(["--seeds", "7", "--lr", "0.001", "--batch-size", "8"]);
    args.extend(extra);
    spikehar(&args)
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{:?}: {e}", path.as_ref()))
}

#[test]
fn zero_epochs_keeps_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(dir.path(), &["--epochs", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        read(dir.path().join("metrics_seed7_lr0.001.csv")),
        "# spikehar metrics v1\nepoch,lr,train_loss,train_acc,val_acc\n"
    );
    let (model, meta) = checkpoint::load(&dir.path().join("model_seed7.ckpt")).unwrap();
    let init = Model::<f32>::build(model.spec()).unwrap();
    assert_eq!(model.params(), init.params());
    assert_eq!(meta.split_seed, Some(3));
    assert_eq!(meta.norm.unwrap().mean.len(), 2);
}

#[test]
fn identical_runs_write_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = train(d.path(), &["--epochs", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics_seed7_lr0.001.csv", "train_summary.csv", "model_seed7.ckpt"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics = read(a.path().join("metrics_seed7_lr0.001.csv"));
    assert_eq!(metrics.lines().count(), 4);
}

#[test]
fn eval_reproduces_validation_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train(dir.path(), &["--epochs", "2"]).status.success());
    let summary = read(dir.path().join("train_summary.csv"));
    let row: Vec<&str> = summary.lines().nth(2).unwrap().split(',').collect();
    let (val_acc, test_acc): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());

    let ckpt = dir.path().join("model_seed7.ckpt");
    for (part, want) in [("val", val_acc), ("test", test_acc)] {
        let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--partition", part];
        args.extend(SYNTH);
        let o = spikehar(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8(o.stdout).unwrap();
        let got: f64 = stdout
            .lines()
            .next()
            .unwrap()
            .strip_prefix("accuracy,")
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(got, want, "{part}");
    }
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "dataset_kind = \"synth\"\nsynth_classes = 2\nsynth_per_class = 10\nsynth_steps = 16\n\
             synth_channels = 2\nepochs = 1\nseeds = [5]\nlr = 0.001\nbatch_size = 8\nmodel = \"relu_cnn\"\nout = {:?}\n",
            dir.path().join("from_file")
        ),
    )
    .unwrap();
    let o = spikehar(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // the flag wins over the file's epochs = 1
    assert_eq!(
        read(dir.path().join("from_file/metrics_seed5_lr0.001.csv"))
            .lines()
            .count(),
        2
    );
    let (m, _) = checkpoint::load(&dir.path().join("from_file/model_seed5.ckpt")).unwrap();
    assert_eq!(m.kind(), spikehar::ModelKind::ReluCnn);

    std::fs::write(&cfg, "epochz = 3\n").unwrap();
    assert_eq!(
        spikehar(&["train", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spikehar(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(spikehar(&["--help"]).status.code(), Some(0));

    let mut args = vec!["train", "--out", dir.path().to_str().unwrap()];
    args.extend(SYNTH);
    args.extend(["--tau", "1.5"]);
    assert_eq!(spikehar(&args).status.code(), Some(1));

    let missing = dir.path().join("nowhere");
    let o = spikehar(&["train", "--dataset-kind", "ucihar", "--data", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));

    assert!(train(dir.path(), &["--epochs", "0"]).status.success());
    let ckpt = dir.path().join("model_seed7.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[checkpoint::MAGIC.len()..checkpoint::MAGIC.len() + 4].copy_from_slice(&99u32.to_le_bytes());
    let bad = dir.path().join("future.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let mut args = vec!["eval", "--checkpoint", bad.to_str().unwrap()];
    args.extend(SYNTH);
    assert_eq!(spikehar(&args).status.code(), Some(4));
}

#[test]
fn hwreport_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train(&dir.path().join("snn"), &["--epochs", "1"]).status.success());
    assert!(
        train(&dir.path().join("ann"), &["--epochs", "1", "--model", "relu_cnn"])
            .status
            .success()
    );
    let report = dir.path().join("report");
    let snn = dir.path().join("snn/model_seed7.ckpt");
    let ann = dir.path().join("ann/model_seed7.ckpt");
    let mut args = vec![
        "hwreport",
        "--checkpoint",
        snn.to_str().unwrap(),
        "--checkpoint",
        ann.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ];
    args.extend(SYNTH);
    let o = spikehar(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "model_seed7_sparsity.csv",
        "model_seed7_ops.csv",
        "model_seed7_energy.csv",
        "hw_summary.csv",
    ] {
        assert!(report.join(f).is_file(), "{f}");
    }
    let summary = read(report.join("hw_summary.csv"));
    assert!(summary.contains("spike_cnn"), "{summary}");
    assert!(summary.contains("relu_cnn"), "{summary}");
    let energy = read(report.join("model_seed7_energy.csv"));
    assert!(energy.starts_with("# spikehar energy v1\nlayer,op_count,sparsity,energy_pj,normalized\n"));
}

#[test]
fn ablate_sweeps_one_axis() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--axis", "reset", "--out", dir.path().to_str().unwrap()];
    args.extend(SYNTH);
    args.extend(["--seeds", "7,8", "--lr", "0.001", "--epochs", "1", "--batch-size", "8"]);
    let o = spikehar(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(dir.path().join("ablation.csv"));
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("reset,")).collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(
        rows[0].starts_with("reset,hard,") && rows[1].starts_with("reset,soft,"),
        "{table}"
    );
    assert_eq!(
        read(dir.path().join("ablation_runs.csv"))
            .lines()
            .filter(|l| l.starts_with("reset,"))
            .count(),
        4
    );

    let mut relu = vec!["ablate", "--model", "relu_cnn"];
    relu.extend(SYNTH);
    assert_eq!(spikehar(&relu).status.code(), Some(1));
}

#[test]
fn trained_model_fits_its_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let synth = [
        "--dataset-kind",
        "synth",
        "--synth-classes",
        "2",
        "--synth-per-class",
        "40",
        "--synth-steps",
        "16",
        "--synth-channels",
        "2",
    ];
    let mut args = vec![
        "train",
        "--out",
        dir.path().to_str().unwrap(),
        "--seeds",
        "7",
        "--lr",
        "0.001",
        "--batch-size",
        "16",
        "--epochs",
        "8",
    ];
    args.extend(synth);
    assert!(spikehar(&args).status.success());
    let summary = read(dir.path().join("train_summary.csv"));
    let val_acc: f64 = summary
        .lines()
        .nth(2)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();

    let ckpt = dir.path().join("model_seed7.ckpt");
    let mut args = vec!["eval", "--checkpoint", ckpt.to_str().unwrap(), "--partition", "train"];
    args.extend(synth);
    let o = spikehar(&args);
    let stdout = String::from_utf8(o.stdout).unwrap();
    let train_acc: f64 = stdout
        .lines()
        .next()
        .unwrap()
        .strip_prefix("accuracy,")
        .unwrap()
        .parse()
        .unwrap();
    assert!(train_acc >= val_acc - 0.05, "train {train_acc} val {val_acc}");
}
