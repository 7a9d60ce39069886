use std::path::Path;
use std::process::{Command, Output};

fn lml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lml")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn synth(dir: &Path, seed: &str, tasks: usize) -> Vec<String> {
    let out = dir.to_str().unwrap();
    let status =
        lml(&["synth-gen", "--seed", seed, "--num-tasks", &tasks.to_string(), "--samples-per-class", "30", "-o", out]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    (1..=tasks).map(|t| format!("{out}/task{t}.csv")).collect()
}

const FAST: [&str; 2] = ["--base-iterations", "2000"];

#[test]
fn synth_gen_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = synth(a.path(), "7", 4);
    let fb = synth(b.path(), "7", 4);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn missing_dataset_exits_2_naming_it() {
    let out = lml(&["train-sequence", "--data", "no/such/file.csv", "other.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/file.csv"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(lml(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(lml(&["train-sequence", "--no-such-flag", "1"]).status.code(), Some(2));
    assert_eq!(lml(&[]).status.code(), Some(2));
    assert_eq!(lml(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "1", 2);
    let out = lml(&["train-sequence", "--data", &files[0], &files[1], "--lambda", "-3"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "mystery = 4\n").unwrap();
    let out = lml(&["train-sequence", "--config", cfg.to_str().unwrap(), "--data", &files[0], &files[1]]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn sweep_lambda_reports_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "2", 2);
    let mut args = vec!["sweep-lambda", "--data", &files[0], &files[1], "--values", "0.001,0.01,0.1,1,10"];
    args.extend(FAST);
    let out = lml(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("stage\ttask\trep\terror\tseconds\tlambda\td"));
    let lambdas: Vec<&str> = lines.map(|l| l.split('\t').nth(5).unwrap()).collect();
    assert_eq!(lambdas, ["0.001", "0.01", "0.1", "1", "10"]);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "3", 2);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!("# run\nd = 2\nlambda = 0.5\nbase-iterations = 2000\ndata = {}, {}\n", files[0], files[1]),
    )
    .unwrap();
    let out = lml(&["train-sequence", "--config", cfg.to_str().unwrap(), "--d", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(&row[5..], ["0.5", "3"]);
}

#[test]
fn checkpoint_save_load_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "4", 3);
    let ckpt = dir.path().join("engine.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let mut args = vec!["checkpoint", "save", "--data", &files[0], &files[1], &files[2], "-o", ckpt];
    args.extend(FAST);
    assert!(lml(&args).status.success());

    let out = lml(&["checkpoint", "load", "--checkpoint", ckpt]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("tasks\t3\td\t5\td_hat\t20"));

    let out = lml(&["eval", "--checkpoint", ckpt, "--train", &files[1], "--test", &files[1], "--k", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[1], "task2");
    let err: f64 = row[3].parse().unwrap();
    assert!((0.0..=0.5).contains(&err), "{err}");

    let out = lml(&["eval", "--checkpoint", ckpt, "--train", &files[1], "--test", &files[1], "--task", "ghost"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn init_dict_writes_a_d_by_d_hat_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let files = synth(dir.path(), "5", 1);
    let out = lml(&["init-dict", "--data", &files[0], "--d", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("4 20"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // the output directory does not exist, so writing fails after training
    let files = synth(dir.path(), "6", 1);
    let bad = dir.path().join("missing").join("x.ckpt");
    let mut args = vec!["checkpoint", "save", "--data", &files[0], "-o", bad.to_str().unwrap()];
    args.extend(FAST);
    assert_eq!(lml(&args).status.code(), Some(1));
}
