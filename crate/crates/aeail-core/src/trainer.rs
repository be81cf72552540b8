//! The adversarial imitation training loop: one reward-model update and
//! several trust-region policy updates per iteration, with deterministic
//! seeding, periodic evaluation, and checkpointing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::demos::{corrupt_demos, generate_demos, load_demos, DemonstrationSet};
use crate::eval::{evaluate, EvalReport};
use crate::policy::{bc_pretrain, GaussianPolicy, ValueCritic};
use crate::reward::{
    asw_augment, trajectory_rows, RewardModel, RewardSettings, RewardStepStats,
};
use crate::trpo::{
    collect_rollouts, gae_advantages, normalize_advantages, prepare_batch, trust_region_step,
    SurrogateData, TrustRegionReport,
};
use crate::{child_seed, Error, Result};

pub const METRICS_HEADER: &str = "iteration,reward_loss,expert_reward_mean,generated_reward_mean,\
surrogate,mean_kl,eval_return_mean,eval_return_std,scaled_reward";

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub iterations: usize,
    /// Evaluation after the last iteration; absent for zero-iteration runs.
    pub final_eval: Option<EvalReport>,
}

/// Draws two equally sized row batches: generated rows without replacement
/// (the rollout pool must hold enough), expert rows with replacement only
/// when the demo pool is smaller than the batch. The generated batch is
/// drawn first.
pub fn sample_equal_batches<R: Rng>(
    gen_rows: &[Vec<f64>],
    expert_rows: &[Vec<f64>],
    batch_size: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if expert_rows.is_empty() {
        return Err(Error::Demos("no expert pairs to sample from".into()));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    if gen_rows.len() < batch_size {
        return Err(Error::Invalid(format!(
            "rollout pool holds {} pairs, need {batch_size}",
            gen_rows.len()
        )));
    }
    let gen_batch = take_without_replacement(gen_rows, batch_size, rng);
    let expert_batch = if expert_rows.len() >= batch_size {
        take_without_replacement(expert_rows, batch_size, rng)
    } else {
        (0..batch_size)
            .map(|_| expert_rows[rng.gen_range(0..expert_rows.len())].clone())
            .collect()
    };
    Ok((gen_batch, expert_batch))
}

fn take_without_replacement<R: Rng>(
    rows: &[Vec<f64>],
    k: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    for i in 0..k {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..k].iter().map(|&i| rows[i].clone()).collect()
}

/// Loads or generates the demonstration set a config asks for.
pub fn resolve_demos(config: &TrainConfig) -> Result<DemonstrationSet> {
    if let Some(path) = &config.demos {
        let demos = load_demos(path)?;
        if demos.env != config.env {
            return Err(Error::Demos(format!(
                "demo file is for {}, config wants {}",
                demos.env, config.env
            )));
        }
        return Ok(demos);
    }
    let spec = config.spec();
    let clean = generate_demos(&spec, config.n_demos, child_seed(config.seed, "demos"))?;
    if config.noise_sigma > 0.0 {
        corrupt_demos(&clean, config.noise_sigma, child_seed(config.seed, "noise"))
    } else {
        Ok(clean)
    }
}

fn tag_iteration(i: usize, e: Error) -> Error {
    match e {
        Error::NumericFault(m) => Error::NumericFault(format!("iteration {i}: {m}")),
        other => other,
    }
}

fn fmt_cell(v: f64) -> String {
    format!("{v}")
}

struct RunArtifacts {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl RunArtifacts {
    fn create(config: &TrainConfig) -> Result<Self> {
        let dir = config.out_dir.join(config.run_id());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.cfg"), config.to_config_string())?;
        let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(metrics, "{METRICS_HEADER}")?;
        metrics.flush()?;
        Ok(RunArtifacts { dir, metrics })
    }

    fn append_row(
        &mut self,
        iteration: usize,
        stats: &RewardStepStats,
        report: &TrustRegionReport,
        eval: Option<&EvalReport>,
    ) -> Result<()> {
        let (em, es, sc) = match eval {
            Some(e) => (
                fmt_cell(e.mean),
                fmt_cell(e.std),
                fmt_cell(e.scaled_reward),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        writeln!(
            self.metrics,
            "{iteration},{},{},{},{},{},{em},{es},{sc}",
            fmt_cell(stats.loss),
            fmt_cell(stats.expert_reward_mean),
            fmt_cell(stats.generated_reward_mean),
            fmt_cell(report.surrogate_after),
            fmt_cell(report.mean_kl),
        )?;
        self.metrics.flush()?;
        Ok(())
    }
}

/// Runs the full training loop described by `config` and writes metrics
/// and checkpoints under `out_dir/{run_id}/`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let demos = resolve_demos(config)?;
    train_with_demos(config, &demos)
}

/// Like [`train`], but imitating an already-loaded demonstration set
/// instead of the one the config would resolve.
pub fn train_with_demos(config: &TrainConfig, demos: &DemonstrationSet) -> Result<TrainOutcome> {
    config.validate()?;
    let spec = config.spec();
    if demos.env != config.env {
        return Err(Error::Demos(format!(
            "demo set is for {}, config wants {}",
            demos.env, config.env
        )));
    }
    demos.validate(&spec)?;

    let settings = RewardSettings {
        kind: config.reward,
        absorbing: config.asw,
        hidden: config.ae_hidden,
        lr: config.ae_lr,
        clip_lo: config.clip_lo,
        clip_hi: config.clip_hi,
        got_alpha: config.got_alpha,
        got_beta: config.got_beta,
        horizon: config.horizon,
    };
    let mut model = RewardModel::new(&settings, &spec, demos, child_seed(config.seed, "reward"))?;

    // Expert rows are fixed for the whole run; augment once if needed.
    let mut expert_rows = Vec::new();
    let mut expert_traj_rows = Vec::new();
    for traj in &demos.trajectories {
        let rows = if config.asw {
            trajectory_rows(&asw_augment(traj, config.horizon)?)
        } else {
            trajectory_rows(traj)
        };
        expert_rows.extend(rows.iter().cloned());
        expert_traj_rows.push(rows);
    }
    // The stationary transport reward never updates; its expert-side mean
    // is a constant of the demo set, used only for the loss column.
    let got_expert_mean = if model.is_stationary() {
        let mut total = 0.0;
        let mut count = 0usize;
        for rows in &expert_traj_rows {
            for r in model.trajectory_rewards(rows)? {
                total += r;
                count += 1;
            }
        }
        Some(total / count as f64)
    } else {
        None
    };

    let mut policy = GaussianPolicy::new(
        spec.state_dim,
        spec.action_dim,
        config.policy_hidden,
        spec.action_bound,
        child_seed(config.seed, "policy"),
    )?;
    let critic_dim = spec.state_dim + usize::from(config.asw);
    let mut critic = ValueCritic::new(
        critic_dim,
        config.policy_hidden,
        config.critic_lr,
        child_seed(config.seed, "critic"),
    )?;

    if config.bc_iters > 0 {
        bc_pretrain(&mut policy, demos, config.bc_iters, config.bc_lr, config.seed)?;
    }

    let mut artifacts = RunArtifacts::create(config)?;
    let mut rollout_rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, "rollout"));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, "batches"));
    let eval_seed = child_seed(config.seed, "eval");

    let save_checkpoints = |policy: &GaussianPolicy,
                            critic: &ValueCritic,
                            model: &RewardModel,
                            dir: &PathBuf|
     -> Result<()> {
        policy.save(&dir.join("policy.ckpt"))?;
        critic.save(&dir.join("critic.ckpt"))?;
        if !model.is_stationary() {
            model.save(&dir.join("reward.ckpt"))?;
        }
        Ok(())
    };

    let mut final_eval = None;
    for i in 1..=config.iterations {
        let mut step = || -> Result<(RewardStepStats, TrustRegionReport)> {
            // (1) Roll out the current policy until the batch is full.
            let collected = collect_rollouts(&spec, &policy, config.batch_size, &mut rollout_rng)?;
            let mut batch = prepare_batch(collected, config.asw, config.horizon, spec.state_dim)?;

            let traj_rows: Vec<Vec<Vec<f64>>> = batch
                .trajectories
                .iter()
                .map(|rt| trajectory_rows(&rt.traj))
                .collect();
            let gen_rows: Vec<Vec<f64>> = traj_rows.iter().flatten().cloned().collect();

            // (2, 3) One adversarial reward update on equal batches; the
            // stationary transport variant has nothing to update.
            let update_stats = if model.is_stationary() {
                None
            } else {
                let (gen_batch, expert_batch) =
                    sample_equal_batches(&gen_rows, &expert_rows, config.batch_size, &mut batch_rng)?;
                Some(model.update_step(&expert_batch, &gen_batch)?)
            };

            // (4) Score the rollout with the freshly updated model.
            let mut reward_sum = 0.0;
            let mut reward_count = 0usize;
            for (rt, rows) in batch.trajectories.iter_mut().zip(&traj_rows) {
                rt.pseudo_rewards = model.trajectory_rewards(rows)?;
                reward_sum += rt.pseudo_rewards.iter().sum::<f64>();
                reward_count += rt.pseudo_rewards.len();
            }
            let stats = update_stats.unwrap_or_else(|| {
                let generated_mean = reward_sum / reward_count as f64;
                let expert_mean = got_expert_mean.unwrap_or(0.0);
                RewardStepStats {
                    loss: generated_mean - expert_mean,
                    expert_reward_mean: expert_mean,
                    generated_reward_mean: generated_mean,
                }
            });

            // (5) Advantages from the critic, then critic regression.
            let mut critic_states = Vec::new();
            let mut critic_targets = Vec::new();
            for rt in &mut batch.trajectories {
                let values = critic.values(&rt.traj.states)?;
                let (adv, targets) = gae_advantages(
                    &rt.pseudo_rewards,
                    &values,
                    &rt.traj.dones,
                    config.gamma,
                    config.lambda,
                )?;
                rt.advantages = adv;
                rt.value_targets = targets;
                critic_states.extend(rt.traj.states[..rt.traj.len()].iter().cloned());
                critic_targets.extend(rt.value_targets.iter().copied());
            }
            critic.update(&critic_states, &critic_targets, config.critic_updates)?;
            normalize_advantages(&mut batch);

            // (6) Trust-region policy updates on the live steps.
            let mut states = Vec::new();
            let mut actions = Vec::new();
            let mut logps = Vec::new();
            let mut advantages = Vec::new();
            for rt in &batch.trajectories {
                for t in 0..rt.traj.len() {
                    if rt.live[t] {
                        states.push(rt.traj.states[t][..spec.state_dim].to_vec());
                        actions.push(rt.traj.actions[t].clone());
                        logps.push(rt.sampling_logps[t]);
                        advantages.push(rt.advantages[t]);
                    }
                }
            }
            let data = SurrogateData {
                states: &states,
                actions: &actions,
                sampling_logps: &logps,
                advantages: &advantages,
            };
            let mut report = trust_region_step(&mut policy, &data, config.delta_kl)?;
            for _ in 1..config.policy_updates {
                report = trust_region_step(&mut policy, &data, config.delta_kl)?;
            }
            Ok((stats, report))
        };
        let (stats, report) = step().map_err(|e| tag_iteration(i, e))?;

        // (7) Periodic evaluation and checkpointing.
        let eval = if i % config.eval_every == 0 || i == config.iterations {
            let label = format!("iter_{i}");
            let report = evaluate(&policy, &spec, config.eval_rollouts, eval_seed, &label)?;
            save_checkpoints(&policy, &critic, &model, &artifacts.dir)?;
            Some(report)
        } else {
            None
        };
        artifacts.append_row(i, &stats, &report, eval.as_ref())?;
        if let Some(e) = eval {
            final_eval = Some(e);
        }
    }
    save_checkpoints(&policy, &critic, &model, &artifacts.dir)?;
    artifacts.metrics.flush()?;

    Ok(TrainOutcome {
        run_dir: artifacts.dir,
        iterations: config.iterations,
        final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvName, EnvSpec};
    use crate::reward::RewardKind;

    fn small_config(dir: &std::path::Path) -> TrainConfig {
        let mut cfg = TrainConfig::new(EnvName::PointMass2d);
        cfg.horizon = 32;
        cfg.batch_size = 64;
        cfg.iterations = 2;
        cfg.n_demos = 2;
        cfg.ae_hidden = 16;
        cfg.policy_hidden = 8;
        cfg.eval_every = 2;
        cfg.eval_rollouts = 2;
        cfg.bc_iters = 0;
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn equal_batches_have_equal_sizes_and_stable_draws() {
        let gen: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let expert: Vec<Vec<f64>> = (0..10).map(|i| vec![-(i as f64)]).collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let (g1, e1) = sample_equal_batches(&gen, &expert, 64, &mut r1).unwrap();
        assert_eq!(g1.len(), 64);
        assert_eq!(e1.len(), 64);
        // Small expert pool: drawn with replacement and only from itself.
        assert!(e1.iter().all(|r| expert.contains(r)));
        // Generated draws are distinct rows.
        let mut seen: Vec<f64> = g1.iter().map(|r| r[0]).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 64, "no replacement in the generated batch");
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let (g2, e2) = sample_equal_batches(&gen, &expert, 64, &mut r2).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(e1, e2);
        assert!(sample_equal_batches(&gen[..10], &expert, 64, &mut r2).is_err());
        assert!(sample_equal_batches(&gen, &[], 4, &mut r2).is_err());
    }

    #[test]
    fn zero_iterations_leave_initial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.iterations = 0;
        let out = train(&cfg).unwrap();
        assert!(out.final_eval.is_none());
        let metrics = std::fs::read_to_string(out.run_dir.join("metrics.csv")).unwrap();
        assert_eq!(metrics.trim_end(), METRICS_HEADER, "header only");
        assert!(out.run_dir.join("policy.ckpt").exists());
        assert!(out.run_dir.join("critic.ckpt").exists());
        assert!(out.run_dir.join("reward.ckpt").exists());
        let loaded = GaussianPolicy::load(&out.run_dir.join("policy.ckpt")).unwrap();
        let fresh = GaussianPolicy::new(4, 2, 8, 1.0, child_seed(0, "policy")).unwrap();
        assert_eq!(loaded.flat_params(), fresh.flat_params(), "initialized checkpoint");
    }

    #[test]
    fn short_runs_are_bit_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let out1 = train(&small_config(d1.path())).unwrap();
        let out2 = train(&small_config(d2.path())).unwrap();
        // config.cfg embeds out_dir, which differs here by construction.
        for name in ["metrics.csv", "policy.ckpt", "critic.ckpt", "reward.ckpt"] {
            let a = std::fs::read(out1.run_dir.join(name)).unwrap();
            let b = std::fs::read(out2.run_dir.join(name)).unwrap();
            assert_eq!(a, b, "{name} must match byte for byte");
        }
        let metrics = std::fs::read_to_string(out1.run_dir.join("metrics.csv")).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines.len(), 3, "header plus one row per iteration");
        assert!(lines[1].ends_with(",,,"), "no evaluation on iteration 1");
        assert!(!lines[2].ends_with(",,,"), "evaluation on the final iteration");
        assert!(out1.final_eval.is_some());
    }

    #[test]
    fn all_reward_variants_run_end_to_end() {
        for kind in [
            RewardKind::AeJs,
            RewardKind::Vae,
            RewardKind::DiscJsd,
            RewardKind::DiscFkld,
            RewardKind::Got,
        ] {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = small_config(dir.path());
            cfg.reward = kind;
            cfg.iterations = 1;
            let out = train(&cfg).unwrap_or_else(|e| panic!("{kind:?}: {e}"));
            assert!(out.final_eval.is_some());
            assert_eq!(
                out.run_dir.join("reward.ckpt").exists(),
                kind != RewardKind::Got,
                "stationary variant writes no reward checkpoint"
            );
        }
    }

    #[test]
    fn absorbing_mode_runs_on_terminating_episodes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.env = EnvName::CartPoleCont;
        cfg.asw = true;
        cfg.iterations = 1;
        let out = train(&cfg).unwrap();
        assert!(out.final_eval.is_some());
        // The reward model consumed flagged rows.
        let model = RewardModel::load(&out.run_dir.join("reward.ckpt")).unwrap();
        assert!(model.features().absorbing());
        assert_eq!(model.input_dim(), 6);
    }

    #[test]
    fn learner_ignores_true_rewards() {
        // Poisoning the recorded true rewards must not change training,
        // because the learner only reads its own pseudo-rewards. Exercised
        // through the public surface: a run on an env whose true reward is
        // NaN everywhere would be caught by env validation, so instead we
        // check the invariant at the batch level.
        let spec = EnvSpec::new(EnvName::PointMass2d, 8);
        let policy = GaussianPolicy::new(4, 2, 8, 1.0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let collected = collect_rollouts(&spec, &policy, 16, &mut rng).unwrap();
        let mut poisoned = collected.clone();
        for (traj, _) in &mut poisoned {
            traj.true_rewards = Some(vec![f64::NAN; traj.len()]);
        }
        let clean_batch = prepare_batch(collected, false, 8, 4).unwrap();
        let bad_batch = prepare_batch(poisoned, false, 8, 4).unwrap();
        for (a, b) in clean_batch.trajectories.iter().zip(&bad_batch.trajectories) {
            assert_eq!(a.traj.states, b.traj.states);
            assert_eq!(a.sampling_logps, b.sampling_logps);
        }
    }
}
