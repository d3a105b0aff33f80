use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avdn_cli::commands::ScoreRow;
use avdn_core::dataset::load_episodes;
use avdn_core::metrics::{evaluate_split, MetricConfig};
use avdn_core::simulator::{save_predictions, PredictedTrajectory, StepRecord, StopReason};

const SMALL: [&str; 10] = [
    "--d-model", "8", "--heads", "2", "--layers", "1", "--ff-hidden", "16", "--lstm-hidden", "8",
];

fn avdn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avdn"))
        .args(args)
        .current_dir(dir)
        .env_remove("AVDN_SEED")
        .output()
        .expect("spawn avdn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = avdn(dir, args);
    assert!(
        out.status.success(),
        "avdn {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn train_small(dir: &Path, kind: &str, out: &str, extra: &[&str]) -> String {
    let mut args = vec!["train", "--kind", kind, "--data", "train.jsonl", "--out", out, "--resolution", "8"];
    args.extend(SMALL);
    args.extend(extra);
    ok(dir, &args)
}

#[test]
fn generate_writes_one_line_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["generate", "--seed", "3", "--count", "10", "--out", "a.jsonl"]);
    assert!(out.contains("egocentric fraction"));
    assert!(out.contains("mean path length"));
    let text = String::from_utf8(read(dir.path().join("a.jsonl"))).unwrap();
    assert_eq!(text.lines().count(), 10);

    ok(dir.path(), &["generate", "--seed", "3", "--count", "10", "--out", "b.jsonl"]);
    assert_eq!(read(dir.path().join("a.jsonl")), read(dir.path().join("b.jsonl")));

    ok(dir.path(), &["generate", "--seed", "3", "--count", "0", "--out", "empty.jsonl"]);
    assert!(read(dir.path().join("empty.jsonl")).is_empty());
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--seed", "9", "--count", "3", "--out", "flag.jsonl"]);
    let out = Command::new(env!("CARGO_BIN_EXE_avdn"))
        .args(["generate", "--count", "3"])
        .env("AVDN_SEED", "9")
        .env("AVDN_OUT", "env.jsonl")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(dir.path().join("flag.jsonl")), read(dir.path().join("env.jsonl")));
}

#[test]
fn help_documents_reproducibility_and_env_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--help"]);
    assert!(out.contains("AVDN_"));
    assert!(out.contains("--seed"));
    for cmd in ["generate", "train", "eval", "fuse", "score", "report", "serve"] {
        assert!(out.contains(cmd), "{cmd} missing from help");
    }
    let train = ok(dir.path(), &["train", "--help"]);
    assert!(train.contains("[env: AVDN_BATCH_SIZE=]"));
    assert!(train.contains("[default: 4]"));
    assert!(train.contains("[default: 0.00001]"));
    let score = ok(dir.path(), &["score", "--help"]);
    assert!(score.contains("[default: 0.4]"));
    assert!(score.contains("[default: path-literal]"));
}

#[test]
fn train_writes_requested_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--seed", "1", "--count", "4", "--out", "train.jsonl"]);

    let out = train_small(dir.path(), "transformer", "zero", &["--iters", "0"]);
    assert!(out.contains("iteration       0"));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("zero"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ckpt"))
        .collect();
    assert_eq!(files, vec!["transformer-0.ckpt"]);

    let out = train_small(dir.path(), "lstm", "marks", &["--iters", "2000", "--checkpoints", "200,2000", "--lr", "1e-3"]);
    assert!(out.contains("HAA-LSTM(200iteration)"));
    assert!(out.contains("HAA-LSTM(2000iteration)"));
    let marks = dir.path().join("marks");
    assert!(marks.join("lstm-200.ckpt").exists());
    assert!(marks.join("lstm-2000.ckpt").exists());
    let log = String::from_utf8(read(marks.join("lstm-losses.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 3);

    train_small(dir.path(), "lstm", "again", &["--iters", "2000", "--checkpoints", "200,2000", "--lr", "1e-3"]);
    assert_eq!(read(marks.join("lstm-2000.ckpt")), read(dir.path().join("again/lstm-2000.ckpt")));
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = avdn(dir.path(), &["train", "--kind", "transformer", "--data", "missing.jsonl", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    let out = avdn(dir.path(), &["train", "--kind", "cnn", "--data", "a", "--out", "x"]);
    assert!(!out.status.success());

    ok(dir.path(), &["generate", "--count", "2", "--out", "train.jsonl"]);
    let out = avdn(
        dir.path(),
        &["train", "--kind", "lstm", "--data", "train.jsonl", "--out", "x", "--iters", "5", "--checkpoints", "9"],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));

    let out = avdn(dir.path(), &["score", "--data", "train.jsonl", "--predictions", "train.jsonl", "--gp-mode", "sideways"]);
    assert!(!out.status.success());
}

fn gt_predictions(data: &Path, out: &Path) {
    let preds: Vec<PredictedTrajectory> = load_episodes(data)
        .unwrap()
        .into_iter()
        .map(|e| PredictedTrajectory {
            episode_id: e.id.clone(),
            log: e.gt_trajectory.views()[1..]
                .iter()
                .map(|v| StepRecord {
                    next_center: (v.center_x, v.center_y),
                    next_rotation: v.rotation,
                    stop_prob: 0.0,
                    attention: None,
                })
                .collect(),
            trajectory: e.gt_trajectory,
            stop_reason: StopReason::Stopped,
        })
        .collect();
    save_predictions(&preds, out).unwrap();
}

#[test]
fn scoring_ground_truth_gives_full_success_and_a_lossless_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--seed", "5", "--count", "8", "--out", "val.jsonl"]);
    gt_predictions(&dir.path().join("val.jsonl"), &dir.path().join("gt.jsonl"));
    let out = ok(
        dir.path(),
        &["score", "--data", "val.jsonl", "--predictions", "gt.jsonl", "--out", "report.json"],
    );
    let mut lines = out.lines();
    let header: Vec<_> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Method", "SPL", "SR", "GP"]);
    let row: Vec<_> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(row[0], "gt");
    assert_eq!(row[1], "100.00");
    assert_eq!(row[2], "100.00");

    let rows: Vec<ScoreRow> = serde_json::from_slice(&read(dir.path().join("report.json"))).unwrap();
    let episodes = load_episodes(dir.path().join("val.jsonl")).unwrap();
    let map: BTreeMap<_, _> = episodes.iter().map(|e| (e.id.clone(), e.gt_trajectory.clone())).collect();
    assert_eq!(rows[0].report, evaluate_split(&episodes, &map, &MetricConfig::default()).unwrap());
}

#[test]
fn mismatched_ids_are_named() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--seed", "5", "--count", "4", "--out", "val.jsonl"]);
    ok(dir.path(), &["generate", "--seed", "6", "--count", "4", "--out", "other.jsonl"]);
    gt_predictions(&dir.path().join("other.jsonl"), &dir.path().join("other-pred.jsonl"));
    let out = avdn(dir.path(), &["score", "--data", "val.jsonl", "--predictions", "other-pred.jsonl"]);
    assert!(!out.status.success());
    let stray = load_episodes(dir.path().join("other.jsonl")).unwrap()[0].id.clone();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&stray));

    // a prediction file covering only part of the split
    let all = load_episodes(dir.path().join("val.jsonl")).unwrap();
    avdn_core::dataset::save_episodes(&all[..2], dir.path().join("half.jsonl")).unwrap();
    gt_predictions(&dir.path().join("half.jsonl"), &dir.path().join("half-pred.jsonl"));
    let out = avdn(dir.path(), &["score", "--data", "val.jsonl", "--predictions", "half-pred.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(&all[2].id));
}

#[test]
fn pipeline_is_byte_reproducible_and_fusion_of_copies_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--seed", "1", "--count", "6", "--out", "train.jsonl"]);
    ok(d, &["generate", "--seed", "2", "--count", "5", "--out", "val.jsonl"]);
    for run in ["a", "b"] {
        let ck = format!("{run}/ck");
        train_small(d, "transformer", &ck, &["--iters", "20", "--lr", "1e-3", "--seed", "4"]);
        train_small(d, "lstm", &ck, &["--iters", "20", "--lr", "1e-3", "--seed", "4"]);
        let t = format!("{ck}/transformer-20.ckpt");
        let l = format!("{ck}/lstm-20.ckpt");
        ok(d, &["eval", "--checkpoint", &t, "--data", "val.jsonl", "--out", &format!("{run}/t.jsonl")]);
        ok(d, &["eval", "--checkpoint", &l, "--data", "val.jsonl", "--out", &format!("{run}/l.jsonl")]);
        ok(d, &["fuse", "--checkpoint", &t, "--checkpoint", &l, "--data", "val.jsonl", "--out", &format!("{run}/f.jsonl")]);
        ok(d, &["fuse", "--checkpoint", &t, "--checkpoint", &t, "--data", "val.jsonl", "--out", &format!("{run}/tt.jsonl")]);
        std::fs::write(d.join(format!("{run}/members.txt")), "transformer ck/transformer-20.ckpt\nlstm ck/lstm-20.ckpt\n").unwrap();
        ok(d, &["fuse", "--manifest", &format!("{run}/members.txt"), "--data", "val.jsonl", "--out", &format!("{run}/m.jsonl")]);
        let table = ok(
            d,
            &[
                "score", "--data", "val.jsonl",
                "--predictions", &format!("{run}/t.jsonl"),
                "--predictions", &format!("{run}/l.jsonl"),
                "--predictions", &format!("{run}/f.jsonl"),
                "--label", "HAA-Transformer", "--label", "HAA-LSTM", "--label", "Fusion",
                "--out", &format!("{run}/score.json"),
            ],
        );
        std::fs::write(d.join(format!("{run}/table.txt")), table).unwrap();
    }
    for f in [
        "ck/transformer-20.ckpt", "ck/lstm-20.ckpt", "ck/transformer-losses.jsonl",
        "t.jsonl", "l.jsonl", "f.jsonl", "m.jsonl", "score.json", "table.txt",
    ] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f} differs between runs");
    }
    assert_eq!(read(d.join("a/tt.jsonl")), read(d.join("a/t.jsonl")));
    assert_eq!(read(d.join("a/m.jsonl")), read(d.join("a/f.jsonl")));

    let table = String::from_utf8(read(d.join("a/table.txt"))).unwrap();
    let labels: Vec<_> = table.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["Method", "HAA-Transformer", "HAA-LSTM", "Fusion"]);

    let report = ok(d, &["report", "--checkpoint", "a/ck/transformer-20.ckpt", "--val", "val.jsonl", "--data", "train.jsonl"]);
    assert!(report.contains("HAA-Transformer(20iteration)"));
    assert!(report.contains("TrainLoss"));
}

#[test]
fn fuse_needs_two_members() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--count", "2", "--out", "train.jsonl"]);
    train_small(d, "lstm", "ck", &["--iters", "0"]);
    let out = avdn(d, &["fuse", "--checkpoint", "ck/lstm-0.ckpt", "--data", "train.jsonl", "--out", "f.jsonl"]);
    assert!(!out.status.success());
}

#[test]
fn serve_fails_when_the_port_is_taken() {
    let dir = tempfile::tempdir().unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = avdn(dir.path(), &["serve", "--port", &port]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(&port));
}

#[test]
fn serve_answers_over_tcp() {
    use std::io::{BufRead, BufReader, Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let transcripts: PathBuf = dir.path().join("transcripts");
    let mut child = Command::new(env!("CARGO_BIN_EXE_avdn"))
        .args(["serve", "--port", "0", "--transcripts"])
        .arg(&transcripts)
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("address line").to_string();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut reply = String::new();
    stream.read_to_string(&mut reply).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""));
    assert!(transcripts.is_dir());
}
