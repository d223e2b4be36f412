use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn omnimae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnimae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic_with_contiguous_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = omnimae(&[
            "gen-data",
            "--out",
            p(out),
            "--images",
            "8",
            "--videos",
            "0",
            "--seed",
            "3",
        ]);
        assert!(o.status.success(), "{o:?}");
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    let lines: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines.len(), 8);
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("{i} ")), "{l}");
        let file = l.split_whitespace().nth(1).unwrap();
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap()
        );
    }
}

#[test]
fn bad_dims_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = omnimae(&["gen-data", "--out", p(dir.path()), "--image-size", "30"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(omnimae(&["no-such-command"]).status.code(), Some(2));
}

fn strip_wall_clock(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn pretrain_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = omnimae(&[
        "gen-data",
        "--out",
        p(&data),
        "--images",
        "4",
        "--videos",
        "4",
        "--image-size",
        "64",
        "--video-frames",
        "8",
        "--video-size",
        "64",
    ]);
    assert!(o.status.success());
    let cfg = dir.path().join("run.txt");
    fs::write(
        &cfg,
        "# tiny run\npreset = toy\ndata = data/manifest.txt\nout_dir = out\nepochs = 2\n\
         warmup_epochs = 1\nbatch_size = 4\nvideo_replication = 2\ncheckpoint_every = 1\n",
    )
    .unwrap();
    let o = omnimae(&["pretrain", p(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(
        log.lines().next(),
        Some("step,epoch,modality,loss,lr,wall_ms")
    );
    // 4 images at B=4 plus 4 videos at B=4: one step each per epoch
    assert_eq!(log.lines().count(), 1 + 4);
    assert!(out.join("checkpoint/manifest.txt").exists());
    assert!(out.join("checkpoints/epoch-0002/manifest.txt").exists());

    let again = dir.path().join("again");
    let o = omnimae(&["pretrain", p(&cfg), "--out", p(&again)]);
    assert!(o.status.success());
    let log2 = fs::read_to_string(again.join("train_log.csv")).unwrap();
    assert_eq!(strip_wall_clock(&log), strip_wall_clock(&log2));

    let rec = dir.path().join("rec");
    let o = omnimae(&[
        "reconstruct",
        "--checkpoint",
        p(&out.join("checkpoint")),
        "--input",
        p(&data.join("video_00000.omnt")),
        "--out",
        p(&rec),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for r in ["r0.75", "r0.90", "r0.95"] {
        assert_eq!(fs::read_dir(rec.join(r)).unwrap().count(), 8, "{r}");
    }

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "preset = toy\nlr = quick\n").unwrap();
    let o = omnimae(&["pretrain", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn flops_reports_published_setting() {
    let o = omnimae(&[
        "flops",
        "--preset",
        "vit-b",
        "--modality",
        "video",
        "--ratio",
        "0.95",
        "--csv",
        "--check",
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let vs_full: f64 = row[6].parse().unwrap();
    assert!((vs_full - 7.8).abs() <= 0.78, "{vs_full}");
}

#[test]
fn simulate_io_rows_are_non_increasing() {
    let o = omnimae(&["simulate-io", "--replication", "1,2,4,8", "--check"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let times: Vec<f64> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(times.len(), 4);
    assert!(times.windows(2).all(|w| w[1] <= w[0]), "{times:?}");
}

#[test]
fn gradcheck_exit_codes() {
    assert_eq!(
        omnimae(&["gradcheck", "--modality", "image"]).status.code(),
        Some(0)
    );
    let o = omnimae(&[
        "gradcheck",
        "--modality",
        "image",
        "--inject-fault",
        "softmax",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        omnimae(&["gradcheck", "--inject-fault", "nonsense"])
            .status
            .code(),
        Some(2)
    );
}
