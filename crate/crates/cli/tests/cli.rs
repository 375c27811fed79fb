use std::path::Path;
use std::process::{Command, Output};

fn fsbed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsbed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn fsbed")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "synth.files=3",
    "--set", "synth.val_files=1",
    "--set", "synth.duration_s=20",
    "--set", "synth.events_per_file=6",
    "--set", "synth.distractors_per_file=1",
    "--set", "model.channels=4",
    "--set", "mamba.d_inner=8",
    "--set", "mamba.d_state=4",
    "--set", "mamba.n_blocks=1",
    "--set", "train.windows_per_class=1",
    "--set", "train.checkpoint_every=1",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    SMALL.iter().copied().chain(args.iter().copied()).collect()
}

#[test]
fn featurize_empty_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    std::fs::create_dir(&input).unwrap();
    let o = fsbed(&["featurize", s(&input), s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn featurize_rerun_reuses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let feats = dir.path().join("feats");
    assert!(fsbed(&with_small(&["synth", s(&data)])).status.success());
    let train = data.join("train");
    let o = fsbed(&["featurize", s(&train), s(&feats)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cache = feats.join("synth_00.wav.feat");
    let first = std::fs::read(&cache).unwrap();
    let stamp = std::fs::metadata(&cache).unwrap().modified().unwrap();
    let o = fsbed(&["featurize", s(&train), s(&feats)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&cache).unwrap(), first);
    assert_eq!(std::fs::metadata(&cache).unwrap().modified().unwrap(), stamp);

    // A feature setting change invalidates the cache.
    let o = fsbed(&["--set", "features.n_mels=64", "featurize", s(&train), s(&feats)]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(&cache).unwrap(), first);
}

#[test]
fn train_smoke_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let params = dir.path().join("p.bin");
    let loss = dir.path().join("loss.csv");
    let det = dir.path().join("det.csv");
    assert!(fsbed(&with_small(&["synth", s(&data)])).status.success());
    let o = fsbed(&with_small(&[
        "--set", "train.episodes=2",
        "train", "--data", s(&data.join("train")), "--out", s(&params), "--loss-log", s(&loss),
    ]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(&loss).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "episode,l1,l2,total");
    assert_eq!(lines.len(), 3);
    assert!(params.exists());
    assert!(params.with_extension("ckpt").exists());

    let o = fsbed(&with_small(&[
        "infer", "--params", s(&params), "--data", s(&data.join("val")), "--out", s(&det),
    ]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&det).unwrap().starts_with("Audiofilename,Starttime,Endtime"));

    // Parameters from a differently sized model are a configuration error.
    let o = fsbed(&with_small(&[
        "--set", "model.channels=6",
        "infer", "--params", s(&params), "--data", s(&data.join("val")), "--out", s(&det),
    ]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsbed(&["--set", "model.nonexistent=3", "featurize", s(dir.path()), s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.nonexistent"));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = fsbed(&["train", "--data", s(&missing), "--out", s(&dir.path().join("p.bin"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(fsbed(&["train"]).status.code(), Some(1));
    assert_eq!(fsbed(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn help_lists_config_keys() {
    for args in [&["--help"][..], &["train", "--help"][..]] {
        let o = fsbed(args);
        assert_eq!(o.status.code(), Some(0));
        let text = String::from_utf8_lossy(&o.stdout);
        for key in ["train.episodes", "postproc.nms_iou", "evaluate.min_iou", "FSED_"] {
            assert!(text.contains(key), "{args:?} help lacks {key}");
        }
    }
}
