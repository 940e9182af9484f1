mod common;

use common::{foamfed, stdout};
use foamfed::acquisition::{Registry, Status};
use foamfed::model::load_checkpoint;

#[test]
fn help_and_usage_errors() {
    assert_eq!(foamfed(["--help"]).status.code(), Some(0));
    assert_eq!(foamfed(["bogus"]).status.code(), Some(2));
    assert_eq!(foamfed(["simulate", "--clients", "two"]).status.code(), Some(2));
    assert_eq!(foamfed(["simulate", "--clients", "0"]).status.code(), Some(2));
}

#[test]
fn synth_then_maskgen() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = foamfed(["synth", "--count", "3", "--size", "80x64", "--noise", "high", "--output"].map(String::from).into_iter().chain([corpus.display().to_string()]));
    assert!(out.status.success(), "{out:?}");
    let images: Vec<_> = std::fs::read_dir(corpus.join("images")).unwrap().collect();
    assert_eq!(images.len(), 3);
    assert_eq!(std::fs::read_dir(corpus.join("masks")).unwrap().count(), 3);

    let masks = dir.path().join("generated");
    let out = foamfed([
        "maskgen".to_string(),
        "--input".into(),
        corpus.join("images").display().to_string(),
        "--output".into(),
        masks.display().to_string(),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(std::fs::read_dir(&masks).unwrap().count(), 6);
}

#[test]
fn maskgen_on_missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = foamfed(["maskgen", "--input", "/nonexistent/frames", "--output"].map(String::from).into_iter().chain([dir.path().display().to_string()]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_infer() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.fp");
    let out = foamfed([
        "train", "--samples", "24", "--holdout", "4", "--size", "48", "--epochs", "2", "--steps", "2", "--batch", "8", "--output",
    ]
    .map(String::from)
    .into_iter()
    .chain([model.display().to_string()]));
    assert!(out.status.success(), "{out:?}");
    assert!(load_checkpoint(&model).unwrap().is_finite());

    let frames = dir.path().join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for (name, img) in common::maskgen_fixtures().into_iter().take(2) {
        foamfed::imaging::save_png(&img, &frames.join(format!("{name}.png"))).unwrap();
    }
    let results = dir.path().join("results");
    let out = foamfed([
        "infer".to_string(),
        "--model".into(),
        model.display().to_string(),
        "--input".into(),
        frames.display().to_string(),
        "--output".into(),
        results.display().to_string(),
        "--points".into(),
        "16".into(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    let stems: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(stems, ["day_0", "day_1"]);
    for line in text.lines() {
        let (stem, pct) = line.split_once(',').unwrap();
        let pct: f64 = pct.parse().unwrap();
        let mask = foamfed::imaging::load_mask(&results.join(format!("{stem}_mask.png"))).unwrap();
        assert_eq!(foamfed::inference::foam_percentage(&mask).unwrap(), pct);
        assert!(results.join(format!("{stem}_overlay.png")).is_file());
    }
}

#[test]
fn simulate_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        foamfed([
            "--seed", "5", "simulate", "--rounds", "2", "--samples", "20", "--holdout", "4", "--size", "32", "--epochs", "1", "--steps",
            "2", "--batch", "4", "--save-dir",
        ]
        .map(String::from)
        .into_iter()
        .chain([dir.path().join(sub).display().to_string()]))
    };
    let (a, b) = (run("a"), run("b"));
    assert!(a.status.success(), "{a:?}");
    let strip = |s: String| s.lines().filter(|l| !l.starts_with("checkpoint")).map(String::from).collect::<Vec<_>>();
    assert_eq!(strip(stdout(&a)), strip(stdout(&b)));
    assert_eq!(
        std::fs::read(dir.path().join("a/federated_round_2.fp")).unwrap(),
        std::fs::read(dir.path().join("b/federated_round_2.fp")).unwrap()
    );
}

#[test]
fn monitor_verify_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let pairs = foamfed::dataset::synth_generate(3, (64, 64), 4).unwrap();
    common::write_store(&store, &pairs, &common::minute_series("2024-03-02 10:00:00", 3));
    let model = common::write_checkpoint(dir.path(), 1);
    let registry = dir.path().join("reg/registry.csv");
    let args = [
        "monitor".to_string(),
        "--store".into(),
        store.display().to_string(),
        "--registry".into(),
        registry.display().to_string(),
        "--model".into(),
        model.display().to_string(),
        "--verify".into(),
    ];
    let out = foamfed(args.clone());
    assert!(out.status.success(), "{out:?}");
    let reg = Registry::open(&registry).unwrap();
    assert_eq!(reg.len(), 3);
    assert!(reg.records().iter().all(|r| r.status == Status::Ok));
    drop(reg);
    assert!(foamfed(args).status.success());
    assert_eq!(Registry::open(&registry).unwrap().len(), 3);
}

#[test]
fn monitor_refuses_to_start_without_a_model() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("store")).unwrap();
    let out = foamfed(["monitor", "--verify", "--store"].map(String::from).into_iter().chain([
        dir.path().join("store").display().to_string(),
        "--registry".into(),
        dir.path().join("r.csv").display().to_string(),
        "--model".into(),
        dir.path().join("missing.fp").display().to_string(),
    ]));
    assert_eq!(out.status.code(), Some(1));
}
