use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = ["--hidden-dim", "16", "--d-q", "8", "--codebook-size", "8"];

fn tokmoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokmoe"))
        .args(args)
        .env_remove("TOKMOE_OUT")
        .output()
        .expect("binary runs")
}

fn with_out<'a>(args: &[&'a str], out: &'a Path) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(["--out", out.to_str().unwrap()]);
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn dry_run_echoes_defaults_file_and_flags_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# fine-tuning\nlr = 0.5\nepochs=40\ntau = 0.7\n").unwrap();
    let o = tokmoe(&[
        "finetune",
        "--config",
        cfg.to_str().unwrap(),
        "--dry-run",
        "true",
        "--epochs",
        "50",
        "--seeds=1-3",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    for line in ["lr = 0.5", "epochs = 50", "tau = 0.7", "seeds = 1-3", "patience = 200", "dropout = 0.8"] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
}

#[test]
fn out_falls_back_to_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_tokmoe"))
        .args(["verify", "--dry-run", "true"])
        .env("TOKMOE_OUT", "/tmp/from-env")
        .output()
        .unwrap();
    assert!(stdout(&o).contains("out = /tmp/from-env"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = tokmoe(&with_out(&["finetune", "--no-such-key", "1"], dir.path()));
    assert_eq!(unknown.status.code(), Some(1));
    let bad_value = tokmoe(&with_out(&["verify", "--instances", "many"], dir.path()));
    assert_eq!(bad_value.status.code(), Some(1));
    let missing = tokmoe(&with_out(&["finetune", "--dataset", "cora:/definitely/not/here"], dir.path()));
    assert_eq!(missing.status.code(), Some(2));
    let fault = tokmoe(&with_out(&["verify", "--instances", "2", "--fault-rhs-scale", "0.5"], dir.path()));
    assert_eq!(fault.status.code(), Some(3));
}

#[test]
fn missing_dataset_leaves_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tokmoe(&with_out(&["pretrain", "--corpus", "native:/definitely/not/here"], &out));
    assert_ne!(o.status.code(), Some(0));
    assert!(!out.join("pretrain.ckpt").exists());
}

#[test]
fn pretraining_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["pretrain", "--corpus", "sbm,sbm:3", "--epochs", "2", "--seed", "5"];
    args.extend(SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tokmoe(&with_out(&args, &a)).status.success());
    assert!(tokmoe(&with_out(&args, &b)).status.success());
    let (ca, cb) = (fs::read(a.join("pretrain.ckpt")).unwrap(), fs::read(b.join("pretrain.ckpt")).unwrap());
    assert_eq!(ca, cb);
    let loss = fs::read_to_string(a.join("pretrain_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
}

#[test]
fn ten_seed_finetune_writes_rows_and_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre");
    let mut args = vec!["pretrain", "--corpus", "sbm", "--epochs", "1"];
    args.extend(SMALL);
    assert!(tokmoe(&with_out(&args, &pre)).status.success());
    let ck = pre.join("pretrain.ckpt");
    let ft = dir.path().join("ft");
    let o = tokmoe(&with_out(
        &[
            "finetune",
            "--dataset",
            "sbm",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--seeds",
            "1-10",
            "--split",
            "random",
            "--epochs",
            "10",
            "--patience",
            "5",
        ],
        &ft,
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(ft.join("finetune.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,best_epoch,val_acc,test_acc");
    assert_eq!(lines.len(), 12);
    assert!(lines[11].starts_with("summary,"));
    assert!(ft.join("finetune_seed10.ckpt").exists());
    let log = fs::read_to_string(ft.join("finetune.log")).unwrap();
    assert!(log.contains("resolved seeds = 1,2,3,4,5,6,7,8,9,10"));

    let rep = tokmoe(&with_out(&["report", "--input", ft.join("finetune.csv").to_str().unwrap()], &dir.path().join("r")));
    assert!(rep.status.success());

    // A doctored summary row is caught.
    let mut rows: Vec<String> = csv.lines().map(String::from).collect();
    let cells: Vec<String> = rows[11].split(',').map(String::from).collect();
    rows[11] = format!("summary,99.0±0.0,{},{}", cells[2], cells[3]);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, rows.join("\n")).unwrap();
    let rep = tokmoe(&with_out(&["report", "--input", bad.to_str().unwrap()], &dir.path().join("r2")));
    assert_eq!(rep.status.code(), Some(3));
}

#[test]
fn checkpoint_with_wrong_input_width_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre");
    let mut args = vec!["pretrain", "--corpus", "sbm", "--epochs", "1", "--sbm-dim", "6"];
    args.extend(SMALL);
    assert!(tokmoe(&with_out(&args, &pre)).status.success());
    let ck = pre.join("pretrain.ckpt");
    let o = tokmoe(&with_out(
        &["finetune", "--dataset", "sbm", "--checkpoint", ck.to_str().unwrap(), "--epochs", "2", "--patience", "1"],
        &dir.path().join("ft"),
    ));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("input features"));
}

#[test]
fn default_verification_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let full = tokmoe(&with_out(&["verify"], &dir.path().join("full")));
    assert!(full.status.success());
    assert!(stdout(&full).contains(" 0 violations"));
    let a = tokmoe(&with_out(&["verify", "--instances", "1", "--seed", "7"], &dir.path().join("a")));
    let b = tokmoe(&with_out(&["verify", "--instances", "1", "--seed", "7"], &dir.path().join("b")));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        fs::read(dir.path().join("a/verify.txt")).unwrap(),
        fs::read(dir.path().join("b/verify.txt")).unwrap()
    );
}

#[test]
fn eval_suites_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let common = [
        "--dataset", "sbm", "--sbm-n", "300", "--seeds", "0-1", "--epochs", "8", "--patience", "4", "--split", "random",
        "--trials", "2",
    ];
    for (suite, file, header) in [
        ("perturb", "perturb.csv", "seed,clean,feature@0.2"),
        ("degree-ood", "degree_ood.csv", "seed,id_test,"),
        ("homophily-ood", "homophily_ood.csv", "seed,id_test,"),
        ("triobj", "triobj.csv", "seed,fit,"),
    ] {
        let mut args = vec!["eval", suite];
        args.extend(common);
        args.extend(SMALL);
        let out = dir.path().join(suite);
        let o = tokmoe(&with_out(&args, &out));
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read_to_string(out.join(file)).unwrap();
        assert!(csv.starts_with(header), "{suite}: {csv}");
        assert_eq!(csv.lines().count(), 4);
    }
}

#[test]
fn eval_without_finetuning_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = tokmoe(&with_out(&["eval", "perturb", "--dataset", "sbm", "--finetune", "false"], dir.path()));
    assert_eq!(o.status.code(), Some(1));
}
