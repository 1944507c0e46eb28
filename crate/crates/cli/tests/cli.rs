//! End-to-end checks of the command-line contract: documented flags, error
//! handling, determinism, and the behaviors each command promises.

mod common;

use std::fs;
use std::path::Path;

use common::*;

fn zero_regressor(path: &Path, dim: usize, classes: &[&str]) {
    let header = serde_json::json!({
        "kind": "regressor",
        "dim": dim,
        "lambda": 1e-3,
        "convention": "size-normalized",
        "classes": classes,
    });
    let mut bytes = header.to_string().into_bytes();
    bytes.push(b'\n');
    bytes.extend_from_slice(b"FVEC");
    bytes.extend_from_slice(&((classes.len() * 4) as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.resize(bytes.len() + classes.len() * 4 * dim * 4, 0u8);
    fs::write(path, bytes).unwrap();
}

#[test]
fn help_lists_commands_and_global_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(dir.path(), &["--help"]);
    for command in [
        "build-index",
        "localize",
        "train-regressor",
        "refine",
        "train-classifier",
        "recognize",
        "evaluate",
        "synth-gen",
    ] {
        assert!(out.contains(command), "--help does not list {command}:\n{out}");
    }
    for flag in ["--config", "--threads", "--seed", "--output-dir", "--format"] {
        assert!(out.contains(flag), "--help does not list {flag}:\n{out}");
    }
}

#[test]
fn subcommand_help_lists_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(dir.path(), &["localize", "--help"]);
    for flag in [
        "--train-manifest",
        "--test-manifest",
        "--raster-dir",
        "--parts",
        "--seed-oracle-object",
        "--only",
        "--max-iters",
        "--m",
        "--fusion",
        "--stability-iou",
        "--metric",
        "--classifier",
        "--score-threshold",
        "--fail-fast",
    ] {
        assert!(out.contains(flag), "localize --help does not list {flag}:\n{out}");
    }
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_err(dir.path(), &["localize", "--definitely-not-a-flag"]);
    assert!(err.contains("--definitely-not-a-flag"), "{err}");
    let err = run_err(dir.path(), &["--bogus-global", "synth-gen"]);
    assert!(err.contains("--bogus-global"), "{err}");
}

#[test]
fn ground_truth_evaluates_at_exactly_100() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_toy_manifest(dir.path(), "toy", &toy_records("t", 6));
    let out = run_ok(
        dir.path(),
        &[
            "evaluate",
            "--test-manifest",
            manifest.to_str().unwrap(),
            "--ground-truth-as-predictions",
        ],
    );
    assert!(out.contains("ground-truth"), "{out}");
    // Three regions at three thresholds, all perfect.
    assert_eq!(out.matches("100.0").count(), 9, "{out}");
    assert!(out.contains("checks: ground-truth self-test passed, monotonicity passed"), "{out}");
    assert!(dir.path().join("evaluation-report.txt").exists());
}

#[test]
fn recognize_scores_a_separable_world_at_100() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_toy_manifest(dir.path(), "train", &toy_records("train", 8));
    let test = write_toy_manifest(dir.path(), "test", &toy_records("test", 4));
    run_ok(dir.path(), &["train-classifier", "--train-manifest", train.to_str().unwrap()]);
    let model = dir.path().join("classifier.model");
    let out = run_ok(
        dir.path(),
        &[
            "recognize",
            "--model",
            model.to_str().unwrap(),
            "--test-manifest",
            test.to_str().unwrap(),
        ],
    );
    assert!(out.contains("accuracy against manifest labels: 100.0%"), "{out}");
    let predictions = jsonl(&dir.path().join("predictions.jsonl"));
    assert_eq!(predictions.len(), 4);
    for p in &predictions {
        let id = p["id"].as_str().unwrap();
        let scores = p["scores"].as_array().unwrap();
        assert!(!scores.is_empty(), "prediction for {id} has no scores");
    }
}

#[test]
fn refine_with_a_zero_weight_model_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_toy_manifest(dir.path(), "train", &toy_records("train", 8));
    let test = write_toy_manifest(dir.path(), "test", &toy_records("test", 4));
    run_ok(
        dir.path(),
        &[
            "localize",
            "--train-manifest",
            train.to_str().unwrap(),
            "--test-manifest",
            test.to_str().unwrap(),
        ],
    );
    let locs = dir.path().join("localizations.jsonl");
    let model = dir.path().join("zero.model");
    zero_regressor(&model, 4, &["a", "b"]);
    run_ok(
        dir.path(),
        &[
            "refine",
            "--model",
            model.to_str().unwrap(),
            "--localizations",
            locs.to_str().unwrap(),
            "--test-manifest",
            test.to_str().unwrap(),
        ],
    );
    let refined = dir.path().join("refined.jsonl");
    assert_eq!(
        fs::read(&locs).unwrap(),
        fs::read(&refined).unwrap(),
        "zero-weight refinement must reproduce its input byte for byte"
    );
    assert_eq!(jsonl(&dir.path().join("errors.jsonl")).len(), 0);
}

#[test]
fn a_third_iteration_beats_a_single_one() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["synth-gen"]);
    let train = dir.path().join("train-manifest.jsonl");
    let test = dir.path().join("test-manifest.jsonl");
    let one = tempfile::tempdir().unwrap();
    let three = tempfile::tempdir().unwrap();
    for (out_dir, budget) in [(&one, "1"), (&three, "3")] {
        run_ok(
            out_dir.path(),
            &[
                "localize",
                "--train-manifest",
                train.to_str().unwrap(),
                "--test-manifest",
                test.to_str().unwrap(),
                "--max-iters",
                budget,
            ],
        );
    }
    let mean_one = mean_object_iou(&test, &one.path().join("localizations.jsonl"));
    let mean_three = mean_object_iou(&test, &three.path().join("localizations.jsonl"));
    assert!(
        mean_three > mean_one,
        "mean IoU with three iterations ({mean_three:.4}) should beat one ({mean_one:.4})"
    );
}

#[test]
fn unknown_only_id_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_toy_manifest(dir.path(), "train", &toy_records("train", 8));
    let test = write_toy_manifest(dir.path(), "test", &toy_records("test", 4));
    let err = run_err(
        dir.path(),
        &[
            "localize",
            "--train-manifest",
            train.to_str().unwrap(),
            "--test-manifest",
            test.to_str().unwrap(),
            "--only",
            "test-00,ghost",
        ],
    );
    assert!(err.contains("ghost"), "{err}");
}

#[test]
fn duplicate_manifest_id_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("dup.jsonl");
    fs::write(
        &manifest,
        concat!(
            "{\"id\":\"twice\",\"width\":10,\"height\":10,\"features\":{\"full\":[1.0,0.0]}}\n",
            "{\"id\":\"twice\",\"width\":10,\"height\":10,\"features\":{\"full\":[0.0,1.0]}}\n",
        ),
    )
    .unwrap();
    let err = run_err(dir.path(), &["build-index", "--manifest", manifest.to_str().unwrap()]);
    assert!(err.contains("duplicate id `twice`"), "{err}");
}

#[test]
fn missing_feature_file_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.jsonl");
    fs::write(
        &manifest,
        "{\"id\":\"x\",\"width\":10,\"height\":10,\
         \"features\":{\"full\":{\"file\":\"nowhere.fvec\",\"row\":0}}}\n",
    )
    .unwrap();
    let err = run_err(dir.path(), &["build-index", "--manifest", manifest.to_str().unwrap()]);
    assert!(err.contains("nowhere.fvec"), "{err}");
}

#[test]
fn reruns_and_thread_counts_are_byte_identical() {
    let gen_a = tempfile::tempdir().unwrap();
    let gen_b = tempfile::tempdir().unwrap();
    for dir in [&gen_a, &gen_b] {
        run_ok(dir.path(), &["synth-gen", "--n-train", "80", "--n-test", "30"]);
    }
    for name in ["train-manifest.jsonl", "test-manifest.jsonl", "features/train-full.fvec"] {
        assert_eq!(
            fs::read(gen_a.path().join(name)).unwrap(),
            fs::read(gen_b.path().join(name)).unwrap(),
            "synth-gen reruns differ in {name}"
        );
    }
    let train = gen_a.path().join("train-manifest.jsonl");
    let test = gen_a.path().join("test-manifest.jsonl");
    let loc_a = tempfile::tempdir().unwrap();
    let loc_b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&loc_a, "1"), (&loc_b, "4")] {
        run_ok(
            dir.path(),
            &[
                "--threads",
                threads,
                "localize",
                "--train-manifest",
                train.to_str().unwrap(),
                "--test-manifest",
                test.to_str().unwrap(),
                "--parts",
            ],
        );
    }
    assert_eq!(
        fs::read(loc_a.path().join("localizations.jsonl")).unwrap(),
        fs::read(loc_b.path().join("localizations.jsonl")).unwrap(),
        "thread count changed localization bytes"
    );
}

#[test]
fn config_precedence_is_cli_then_file_then_default() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_toy_manifest(dir.path(), "train", &toy_records("train", 8));
    let test = write_toy_manifest(dir.path(), "test", &toy_records("test", 4));
    let config = dir.path().join("run.toml");
    fs::write(&config, "[transfer]\nm = 3\n").unwrap();
    let (train, test) = (train.to_str().unwrap(), test.to_str().unwrap());

    let defaults = tempfile::tempdir().unwrap();
    run_ok(
        defaults.path(),
        &["localize", "--train-manifest", train, "--test-manifest", test],
    );
    let effective = fs::read_to_string(defaults.path().join("effective-config.toml")).unwrap();
    assert!(effective.contains("m = 2"), "default m missing:\n{effective}");

    let from_file = tempfile::tempdir().unwrap();
    run_ok(
        from_file.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "localize",
            "--train-manifest",
            train,
            "--test-manifest",
            test,
        ],
    );
    let effective = fs::read_to_string(from_file.path().join("effective-config.toml")).unwrap();
    assert!(effective.contains("m = 3"), "config-file m missing:\n{effective}");

    let from_cli = tempfile::tempdir().unwrap();
    run_ok(
        from_cli.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "localize",
            "--train-manifest",
            train,
            "--test-manifest",
            test,
            "--m",
            "1",
        ],
    );
    let effective = fs::read_to_string(from_cli.path().join("effective-config.toml")).unwrap();
    assert!(effective.contains("m = 1"), "cli m missing:\n{effective}");
}

#[test]
fn batches_continue_past_failures_unless_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_toy_manifest(dir.path(), "train", &toy_records("train", 8));
    run_ok(dir.path(), &["train-classifier", "--train-manifest", train.to_str().unwrap()]);
    let model = dir.path().join("classifier.model");

    // Three healthy records and one lacking the object stage entirely.
    let test = dir.path().join("mixed.jsonl");
    let mut lines = String::new();
    for (i, axis) in [(0, 0), (1, 1), (2, 0)] {
        let mut full = vec![0.0; 4];
        full[axis] = 1.0;
        let mut object = vec![0.0; 4];
        object[axis] = 0.9;
        lines.push_str(
            &serde_json::json!({
                "id": format!("ok-{i}"),
                "width": 128.0,
                "height": 128.0,
                "class": if axis == 0 { "a" } else { "b" },
                "features": {"full": full, "object": object},
            })
            .to_string(),
        );
        lines.push('\n');
    }
    lines.push_str(
        &serde_json::json!({
            "id": "broken",
            "width": 128.0,
            "height": 128.0,
            "class": "a",
            "features": {"full": [1.0, 0.0, 0.0, 0.0]},
        })
        .to_string(),
    );
    lines.push('\n');
    fs::write(&test, lines).unwrap();

    let lenient = tempfile::tempdir().unwrap();
    run_ok(
        lenient.path(),
        &[
            "recognize",
            "--model",
            model.to_str().unwrap(),
            "--test-manifest",
            test.to_str().unwrap(),
        ],
    );
    let predictions = jsonl(&lenient.path().join("predictions.jsonl"));
    assert_eq!(predictions.len(), 4, "failed record must still be predicted");
    let errors = jsonl(&lenient.path().join("errors.jsonl"));
    assert_eq!(errors.len(), 1, "{errors:?}");
    assert_eq!(errors[0]["id"], "broken");

    let strict = tempfile::tempdir().unwrap();
    let err = run_err(
        strict.path(),
        &[
            "recognize",
            "--model",
            model.to_str().unwrap(),
            "--test-manifest",
            test.to_str().unwrap(),
            "--fail-fast",
        ],
    );
    assert!(err.contains("broken"), "{err}");
}

#[test]
fn structured_format_emits_machine_readable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_toy_manifest(dir.path(), "toy", &toy_records("t", 6));
    let out = run_ok(
        dir.path(),
        &[
            "--format",
            "structured",
            "evaluate",
            "--test-manifest",
            manifest.to_str().unwrap(),
            "--ground-truth-as-predictions",
        ],
    );
    let doc: serde_json::Value = serde_json::from_str(&out).expect("structured output is JSON");
    assert_eq!(doc["checks"]["ground_truth_self"], "passed");
    assert_eq!(doc["pcp"][0]["source"], "ground-truth");
    let report = dir.path().join("evaluation-report.json");
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(saved, doc);
}
