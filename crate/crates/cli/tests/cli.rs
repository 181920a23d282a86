use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ipcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipcnet"))
        .args(args)
        .env_remove("IPCNET_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ipcnet(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK: &[&str] = &["--epochs", "2", "--batch-size", "4", "--points", "128", "--seed", "3"];

fn gen(dir: &Path, count: &str) {
    ok(&[
        "gen-data",
        "--family",
        "rocket",
        "--count",
        count,
        "--points",
        "128",
        "--seed",
        "5",
        "--out",
        p(dir),
    ]);
}

#[test]
fn help_lists_subcommands() {
    let text = ok(&["--help"]);
    for cmd in ["gen-data", "sample", "train", "eval", "compare", "kernels", "heatmap"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn train_eval_kernels_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "10");
    let run = dir.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--model", "ipcnet", "--out", p(&run)];
    args.extend_from_slice(QUICK);
    let printed = ok(&args);
    assert!(printed.contains("epochs=2"));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,split,loss,accuracy,miou\n"));
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    let ckpt = run.join("checkpoint.ckpt");

    let eval = dir.path().join("eval");
    let printed = ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&eval)]);
    assert!(printed.contains("accuracy"));
    assert!(eval.join("0003.seg").exists());
    assert_eq!(fs::read_to_string(eval.join("eval.csv")).unwrap().lines().count(), 11);

    let cloud = data.join("rocket/points/0000.pts");
    let maps = dir.path().join("maps");
    ok(&[
        "kernels",
        "--checkpoint",
        p(&ckpt),
        "--cloud",
        p(&cloud),
        "--layer",
        "local.0",
        "--kernel",
        "0,2",
        "--axes",
        "x,z",
        "--out",
        p(&maps),
    ]);
    let names: Vec<String> = fs::read_dir(&maps)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.len() >= 4, "{names:?}");

    let heat = dir.path().join("heat");
    ok(&[
        "heatmap",
        "--checkpoint",
        p(&ckpt),
        "--layer",
        "head.0",
        "--out",
        p(&heat),
    ]);
    assert!(fs::read_dir(&heat).unwrap().count() >= 3);

    let bad = ipcnet(&[
        "heatmap",
        "--checkpoint",
        p(&ckpt),
        "--layer",
        "nope",
        "--out",
        p(&heat),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn user_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "6");
    let out = dir.path().join("out");

    let r = ipcnet(&["train", "--data", p(&data), "--epochs", "many", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("epochs"));

    let mut args = vec!["train", "--data", p(&data), "--model", "pointnet", "--out", p(&out)];
    args.extend_from_slice(QUICK);
    ok(&args);
    let r = ipcnet(&[
        "eval",
        "--checkpoint",
        p(&out.join("checkpoint.ckpt")),
        "--data",
        p(&data),
        "--classes",
        "5",
        "--out",
        p(&dir.path().join("e")),
    ]);
    assert_eq!(r.status.code(), Some(2));

    let r = ipcnet(&["train", "--data", p(&dir.path().join("missing")), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "6");
    let cfg = dir.path().join("train.cfg");
    fs::write(
        &cfg,
        "# quick run\nepochs = 1\nlearning_rate = 0.01\nmodel = pointnet\npoints = 128\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let printed = ok(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--epochs",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(printed.contains("epochs=2"));
    assert!(printed.contains("learning_rate=0.01"));
    let saved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("epochs=2") && saved.contains("model=pointnet"));
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        gen(&root.join("data"), "8");
        let (data, cmp) = (root.join("data"), root.join("cmp"));
        let mut args = vec!["compare", "--data", p(&data), "--out", p(&cmp)];
        args.extend_from_slice(QUICK);
        let summary = ok(&args);
        assert!(summary.contains("redundancy_score(head.2)"), "{summary}");
        let mut files = Vec::new();
        for sub in [
            "pointnet_metrics.csv",
            "ipcnet_metrics.csv",
            "comparison.csv",
            "summary.txt",
            "ipcnet/checkpoint.ckpt",
        ] {
            files.push(fs::read(root.join("cmp").join(sub)).unwrap());
        }
        files.push(fs::read(root.join("data/rocket/points/0007.pts")).unwrap());
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}
