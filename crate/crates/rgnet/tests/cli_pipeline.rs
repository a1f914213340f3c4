//! End-to-end CLI checks: the synth -> train -> eval -> predict pipeline,
//! sweep/plot artifacts, and the exit-code contract.

use std::path::Path;

use rgnet::cli::run;

fn rgnet(args: &[&str]) -> i32 {
    let mut argv = vec!["rgnet"];
    argv.extend_from_slice(args);
    run(argv)
}

fn synth_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "synth",
        "--out",
        out,
        "--seed",
        "9",
        "--set",
        "num_videos=3",
        "--set",
        "frames_per_video=24",
        "--set",
        "d_f=6",
        "--set",
        "d_w=6",
        "--set",
        "moment_width_min_s=2",
        "--set",
        "moment_width_max_s=3",
    ];
    args.extend_from_slice(extra);
    args
}

const TRAIN_SETS: &[&str] = &[
    "--set",
    "max_steps=3",
    "--set",
    "epochs=5",
    "--set",
    "decay_epoch=4",
    "--set",
    "d_model=8",
    "--set",
    "n_queries=2",
    "--set",
    "top_k=2",
    "--set",
    "batch_size=2",
    "--set",
    "proposal_length_s=8",
    "--set",
    "eval_ks=[1, 2]",
    "--set",
    "eval_thetas=[0.3, 0.5]",
];

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    assert_eq!(rgnet(&synth_args(data_s, &[])), 0);
    let manifest = data.join("manifest.jsonl");
    assert!(manifest.exists());
    assert!(data.join("features/v0000.rgft").exists());

    let run_dir = dir.path().join("run");
    let run_s = run_dir.to_str().unwrap();
    let manifest_s = manifest.to_str().unwrap();
    let mut train_args = vec!["train", "--data", manifest_s, "--out", run_s, "--seed", "9"];
    train_args.extend_from_slice(TRAIN_SETS);
    assert_eq!(rgnet(&train_args), 0);
    let ckpt = run_dir.join("checkpoint.rgck");
    assert!(ckpt.exists());
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "epoch", "lr", "loss_total", "loss_samp", "loss_cont", "loss_g"] {
        assert!(first.get(key).is_some(), "missing log key {key}");
    }

    // Re-running train must refuse to overwrite the checkpoint.
    let code = rgnet(&train_args);
    assert_eq!(code, 1);

    let eval_dir = dir.path().join("eval");
    let ckpt_s = ckpt.to_str().unwrap();
    assert_eq!(
        rgnet(&[
            "eval",
            "--data",
            manifest_s,
            "--checkpoint",
            ckpt_s,
            "--out",
            eval_dir.to_str().unwrap(),
        ]),
        0
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    for section in ["grounding", "retrieval", "oracle_grounding", "num_queries"] {
        assert!(metrics.get(section).is_some(), "missing section {section}");
    }
    assert!(eval_dir.join("metrics.txt").exists());

    let pred_dir = dir.path().join("pred");
    assert_eq!(
        rgnet(&[
            "predict",
            "--data",
            manifest_s,
            "--checkpoint",
            ckpt_s,
            "--out",
            pred_dir.to_str().unwrap(),
        ]),
        0
    );
    let preds = std::fs::read_to_string(pred_dir.join("predictions.jsonl")).unwrap();
    assert!(!preds.is_empty());
    let first: serde_json::Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    for key in ["query_id", "video_id", "rank", "start_s", "end_s", "score"] {
        assert!(first.get(key).is_some(), "missing prediction key {key}");
    }
}

#[test]
fn sweep_and_plot_emit_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    assert_eq!(rgnet(&synth_args(data_s, &[])), 0);
    let manifest = data.join("manifest.jsonl");

    let sweep_dir = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        sweep_dir.to_str().unwrap(),
        "--axis",
        "top_k",
        "--values",
        "1,2",
    ];
    args.extend_from_slice(TRAIN_SETS);
    assert_eq!(rgnet(&args), 0);
    let csv_path = sweep_dir.join("sweep_top_k.csv");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("top_k,"));
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("retrieval_r@1"));
    assert!(csv.contains("grounding_r1@0.3"));
    let svg = std::fs::read_to_string(sweep_dir.join("sweep_top_k.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    // Standalone plot rendering from the CSV.
    let plot_dir = dir.path().join("plots");
    assert_eq!(
        rgnet(&[
            "plot",
            "--csv",
            csv_path.to_str().unwrap(),
            "--out",
            plot_dir.to_str().unwrap(),
        ]),
        0
    );
    assert!(plot_dir.join("sweep_top_k.svg").exists());

    // Unknown sweep axis is a validation error.
    let mut bad = vec![
        "sweep",
        "--data",
        manifest.to_str().unwrap(),
        "--out",
        sweep_dir.to_str().unwrap(),
        "--axis",
        "learning_rate",
        "--values",
        "1",
    ];
    bad.extend_from_slice(TRAIN_SETS);
    assert_eq!(rgnet(&bad), 1);
}

#[test]
fn exit_codes_follow_the_contract() {
    // Unknown flag: exit 1.
    assert_eq!(rgnet(&["train", "--no-such-flag"]), 1);
    // Unknown subcommand: exit 1.
    assert_eq!(rgnet(&["transmogrify"]), 1);
    // Help: exit 0.
    assert_eq!(rgnet(&["--help"]), 0);
    assert_eq!(rgnet(&["synth", "--help"]), 0);

    // Missing config file: exit 1.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        rgnet(&[
            "synth",
            "--config",
            "/nonexistent/config.toml",
            "--out",
            out.to_str().unwrap(),
        ]),
        1
    );

    // Conflicting overrides: exit 1.
    assert_eq!(
        rgnet(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "1",
            "--set",
            "seed=2",
        ]),
        1
    );

    // Unknown config key via --set: exit 1.
    assert_eq!(
        rgnet(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "definitely_not_a_key=3",
        ]),
        1
    );
}

#[test]
fn eval_with_mismatched_checkpoint_dims_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data_a = dir.path().join("a");
    assert_eq!(rgnet(&synth_args(data_a.to_str().unwrap(), &[])), 0);
    let run_dir = dir.path().join("runa");
    let manifest_a = data_a.join("manifest.jsonl");
    let mut train_args = vec![
        "train",
        "--data",
        manifest_a.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seed",
        "9",
    ];
    train_args.extend_from_slice(TRAIN_SETS);
    assert_eq!(rgnet(&train_args), 0);

    // A dataset with different feature dimensions.
    let data_b = dir.path().join("b");
    let data_b_s = data_b.to_str().unwrap();
    let mut synth_b = vec![
        "synth", "--out", data_b_s, "--seed", "9", "--set", "num_videos=2", "--set",
        "frames_per_video=24", "--set", "d_f=10", "--set", "d_w=10", "--set",
        "moment_width_min_s=2", "--set", "moment_width_max_s=3",
    ];
    synth_b.dedup();
    assert_eq!(rgnet(&synth_b), 0);

    let code = rgnet(&[
        "eval",
        "--data",
        data_b.join("manifest.jsonl").to_str().unwrap(),
        "--checkpoint",
        run_dir.join("checkpoint.rgck").to_str().unwrap(),
        "--out",
        dir.path().join("evalb").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn config_file_round_trips_through_commands() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(
        &config,
        "num_videos = 2\nframes_per_video = 24\nd_f = 6\nd_w = 6\n\
         moment_width_min_s = 2.0\nmoment_width_max_s = 3.0\n\
         max_steps = 2\nepochs = 4\ndecay_epoch = 3\nd_model = 8\n\
         n_queries = 2\ntop_k = 2\nbatch_size = 2\nproposal_length_s = 8.0\nseed = 11\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        rgnet(&[
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
        ]),
        0
    );
    // Two videos as configured.
    assert!(data.join("features/v0001.rgft").exists());
    assert!(!data.join("features/v0002.rgft").exists());

    let run_dir = dir.path().join("run");
    assert_eq!(
        rgnet(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.join("manifest.jsonl").to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ]),
        0
    );
    assert!(run_dir.join("checkpoint.rgck").exists());
    assert!(!Path::new(&data.join("checkpoint.rgck")).exists());
}
