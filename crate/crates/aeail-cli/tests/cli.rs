//! End-to-end checks of the command-line interface, run through the real
//! binary so exit codes and stream routing are tested as shipped.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aeail_core::demos::{generate_demos, load_demos};
use aeail_core::env::{EnvName, EnvSpec};
use aeail_core::policy::GaussianPolicy;
use aeail_core::reward::{RewardKind, RewardModel, RewardSettings};

fn aeail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeail"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Minimal fast training config; callers append overrides.
fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    let out_dir = dir.join("runs");
    std::fs::write(
        &path,
        format!(
            "env = pointmass2d\n\
             iterations = 1\n\
             batch_size = 256\n\
             horizon = 64\n\
             n_demos = 3\n\
             ae_hidden = 8\n\
             policy_hidden = 8\n\
             bc_iters = 20\n\
             eval_every = 1\n\
             eval_rollouts = 2\n\
             out_dir = {}\n",
            out_dir.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = aeail(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(!stderr(&out).is_empty());
}

#[test]
fn help_exits_cleanly() {
    let out = aeail(&["--help"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for name in ["gen-demos", "corrupt-demos", "train", "sweep", "eval", "dump-latents", "grad-check"] {
        assert!(text.contains(name), "help must list {name}");
    }
    let out = aeail(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("--config"));
}

#[test]
fn gen_demos_writes_the_requested_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let out = aeail(&[
        "gen-demos",
        "--env",
        "pointmass2d",
        "--n",
        "10",
        "--seed",
        "0",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("10 trajectories"));
    let demos = load_demos(&path).unwrap();
    assert_eq!(demos.trajectories.len(), 10);
    assert_eq!(demos.env, EnvName::PointMass2d);
}

#[test]
fn gen_demos_rejects_unknown_env() {
    let out = aeail(&["gen-demos", "--env", "lunar", "--n", "1", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("lunar"));
}

#[test]
fn corrupt_demos_records_the_noise_level() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.jsonl");
    let noisy = dir.path().join("noisy.jsonl");
    let out = aeail(&[
        "gen-demos", "--env", "pointmass2d", "--n", "3", "--seed", "1", "--out",
        clean.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = aeail(&[
        "corrupt-demos",
        "--in",
        clean.to_str().unwrap(),
        "--sigma",
        "0.3",
        "--seed",
        "7",
        "--out",
        noisy.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let clean_set = load_demos(&clean).unwrap();
    let noisy_set = load_demos(&noisy).unwrap();
    assert!((noisy_set.noise_sigma - 0.3).abs() < 1e-12);
    assert_ne!(
        clean_set.trajectories[0].states[0],
        noisy_set.trajectories[0].states[0]
    );
}

#[test]
fn train_zero_iterations_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = aeail(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--reward",
        "ae_w",
        "--iters",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let run_dir = text
        .lines()
        .find_map(|l| l.strip_prefix("run dir: "))
        .expect("run dir line");
    assert!(Path::new(run_dir).join("policy.ckpt").exists());
    assert!(Path::new(run_dir).join("reward.ckpt").exists());
}

#[test]
fn train_override_syntax_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = aeail(&["train", "--config", config.to_str().unwrap(), "--iters"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("usage error"));
    let out = aeail(&["train", "--config", config.to_str().unwrap(), "oops"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_missing_config_is_a_runtime_fault() {
    let out = aeail(&["train", "--config", "/nonexistent/c.cfg"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_dimension_mismatch_names_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("pendulum_policy.ckpt");
    GaussianPolicy::new(3, 1, 4, 2.0, 0).unwrap().save(&ckpt).unwrap();
    let out = aeail(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--env",
        "pointmass2d",
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("3x1"), "policy dims missing: {err}");
    assert!(err.contains("4x2"), "env dims missing: {err}");
}

#[test]
fn eval_reports_deterministic_returns_and_saves_rollouts() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("policy.ckpt");
    GaussianPolicy::new(4, 2, 8, 1.0, 5).unwrap().save(&ckpt).unwrap();
    let rollouts = dir.path().join("rollouts.jsonl");
    let run = || {
        aeail(&[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--env",
            "pointmass2d",
            "--n",
            "3",
            "--seed",
            "0",
            "--save-rollouts",
            rollouts.to_str().unwrap(),
        ])
    };
    let first = run();
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stdout(&first).contains("scaled reward"));
    let saved = load_demos(&rollouts).unwrap();
    assert!(!saved.trajectories.is_empty());
    let second = run();
    assert_eq!(stdout(&first), stdout(&second), "same seeds, same report");
}

#[test]
fn dump_latents_labels_expert_and_generated_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = EnvSpec::with_default_horizon(EnvName::PointMass2d);
    let demos_path = dir.path().join("demos.jsonl");
    let demos = generate_demos(&spec, 2, 3).unwrap();
    aeail_core::demos::save_demos(&demos, &demos_path).unwrap();

    let settings = RewardSettings::new(RewardKind::AeW);
    let model = RewardModel::new(&settings, &spec, &demos, 11).unwrap();
    let reward_path = dir.path().join("reward.ckpt");
    model.save(&reward_path).unwrap();

    let policy_path = dir.path().join("policy.ckpt");
    GaussianPolicy::new(4, 2, 8, 1.0, 5).unwrap().save(&policy_path).unwrap();
    let rollouts = dir.path().join("rollouts.jsonl");
    let out = aeail(&[
        "eval",
        "--checkpoint",
        policy_path.to_str().unwrap(),
        "--env",
        "pointmass2d",
        "--n",
        "1",
        "--save-rollouts",
        rollouts.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let latents = dir.path().join("latents.csv");
    let out = aeail(&[
        "dump-latents",
        "--reward",
        reward_path.to_str().unwrap(),
        "--demos",
        demos_path.to_str().unwrap(),
        "--rollouts",
        rollouts.to_str().unwrap(),
        "--out",
        latents.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&latents).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("source,u0,"));
    let expert_rows = text.lines().filter(|l| l.starts_with("expert,")).count();
    let generated_rows = text.lines().filter(|l| l.starts_with("generated,")).count();
    assert_eq!(expert_rows, demos.num_pairs());
    let saved = load_demos(&rollouts).unwrap();
    assert_eq!(generated_rows, saved.num_pairs());
}

#[test]
fn sweep_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("runs");
    let config = dir.path().join("grid.cfg");
    std::fs::write(
        &config,
        format!(
            "env = pointmass2d\n\
             iterations = 0\n\
             n_demos = 2\n\
             ae_hidden = 8\n\
             policy_hidden = 8\n\
             bc_iters = 0\n\
             out_dir = {}\n\
             sweep_seed = 0, 1\n",
            out_dir.display()
        ),
    )
    .unwrap();
    let out = aeail(&["sweep", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("reward,ae_hidden,noise_sigma,seeds,"));
    assert_eq!(summary.trim_end().lines().count(), 2, "header plus one group");
}

#[test]
fn grad_check_self_test_passes() {
    let out = aeail(&["grad-check", "--nets", "10", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("max relative gradient error"));
}
