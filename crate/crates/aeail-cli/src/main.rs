//! Command-line front end over the imitation-learning library.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags or malformed
//! overrides), 2 on runtime faults (missing files, dimension mismatches,
//! failed runs).

use std::path::PathBuf;
use std::process::ExitCode;

use aeail_core::child_seed;
use aeail_core::config::TrainConfig;
use aeail_core::demos::{
    corrupt_demos, generate_demos, load_demos, save_demos, DemonstrationSet, FeatureNormalizer,
    Trajectory,
};
use aeail_core::env::{EnvName, EnvSpec};
use aeail_core::eval::{dump_latents, evaluate};
use aeail_core::net::{grad_check, MlpNet};
use aeail_core::policy::GaussianPolicy;
use aeail_core::reward::RewardModel;
use aeail_core::sweep::{run_sweep, SweepGrid};
use aeail_core::trainer::train;
use aeail_core::trpo::collect_rollouts;
use clap::{Parser, Subcommand};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "aeail",
    version,
    about = "Imitation learning from demonstrations: train adversarial reward models and policies on toy control tasks."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations for an environment.
    GenDemos {
        /// Environment name: pointmass2d, pendulum, or cartpole_cont.
        #[arg(long, value_parser = parse_env)]
        env: EnvName,
        /// Number of trajectories.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output demo file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Add Gaussian noise to every state and action of a demo file.
    CorruptDemos {
        /// Input demo file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Noise standard deviation.
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output demo file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training job from a config file.
    ///
    /// Any config key can be overridden after the config flag, e.g.
    /// `train --config c.cfg --reward ae_w --iters 0`. `--iters` is an
    /// alias for `--iterations`.
    Train {
        /// Training config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Overrides as --key value or --key=value pairs.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run every cell of a sweep grid and write a summary table.
    Sweep {
        /// Sweep config file: a training config plus sweep_* axis lines.
        #[arg(long)]
        config: PathBuf,
    },
    /// Roll out a policy checkpoint deterministically and report returns.
    Eval {
        /// Policy checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Environment name: pointmass2d, pendulum, or cartpole_cont.
        #[arg(long, value_parser = parse_env)]
        env: EnvName,
        /// Number of evaluation rollouts.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also save stochastic rollouts of the policy to this trajectory
        /// file, in the demo format, for latent dumps.
        #[arg(long)]
        save_rollouts: Option<PathBuf>,
    },
    /// Write reward-model hidden activations for expert and generated rows.
    DumpLatents {
        /// Reward-model checkpoint path.
        #[arg(long)]
        reward: PathBuf,
        /// Expert demo file.
        #[arg(long)]
        demos: PathBuf,
        /// Generated trajectory file (demo format; see eval --save-rollouts).
        #[arg(long)]
        rollouts: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-test: compare analytic gradients with finite differences on
    /// randomly shaped networks.
    GradCheck {
        /// Number of random networks to test.
        #[arg(long, default_value_t = 100)]
        nets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_env(s: &str) -> Result<EnvName, String> {
    EnvName::parse(s).map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<aeail_core::Error> for Failure {
    fn from(e: aeail_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenDemos { env, n, seed, out } => {
            let spec = EnvSpec::with_default_horizon(env);
            let demos = generate_demos(&spec, n, seed)?;
            save_demos(&demos, &out)?;
            println!(
                "wrote {} trajectories ({} pairs) to {}",
                demos.trajectories.len(),
                demos.num_pairs(),
                out.display()
            );
        }
        Command::CorruptDemos {
            input,
            sigma,
            seed,
            out,
        } => {
            let demos = load_demos(&input)?;
            let noisy = corrupt_demos(&demos, sigma, seed)?;
            save_demos(&noisy, &out)?;
            println!(
                "corrupted {} trajectories with sigma {sigma} (combined sigma {:.4}); wrote {}",
                noisy.trajectories.len(),
                noisy.noise_sigma,
                out.display()
            );
        }
        Command::Train { config, overrides } => {
            let overrides = parse_overrides(&overrides)?;
            let text = std::fs::read_to_string(&config)?;
            let cfg = TrainConfig::parse_with_overrides(&text, &overrides)?;
            let outcome = train(&cfg)?;
            println!("run dir: {}", outcome.run_dir.display());
            match outcome.final_eval {
                Some(e) => println!(
                    "final eval over {} rollouts: mean return {:.4}, scaled {:+.4}",
                    e.n_rollouts, e.mean, e.scaled_reward
                ),
                None => println!("no iterations run; initial checkpoints written"),
            }
        }
        Command::Sweep { config } => {
            let text = std::fs::read_to_string(&config)?;
            let grid = SweepGrid::parse(&text)?;
            let report = run_sweep(&grid)?;
            for cell in &report.cells {
                match &cell.outcome {
                    Ok(Some(scaled)) => println!("{}: scaled {scaled:+.4}", cell.run_id),
                    Ok(None) => println!("{}: completed (no final eval)", cell.run_id),
                    Err(msg) => println!("{}: FAILED: {msg}", cell.run_id),
                }
            }
            println!("summary: {}", report.summary_path.display());
            if report.any_failed {
                return Err(Failure::Runtime("one or more sweep cells failed".into()));
            }
        }
        Command::Eval {
            checkpoint,
            env,
            n,
            seed,
            save_rollouts,
        } => {
            let policy = GaussianPolicy::load(&checkpoint)?;
            let spec = EnvSpec::with_default_horizon(env);
            let label = checkpoint.display().to_string();
            let report = evaluate(&policy, &spec, n, seed, &label)?;
            println!(
                "{} on {}: mean return {:.4} (std {:.4}) over {} rollouts",
                label,
                env.as_str(),
                report.mean,
                report.std,
                report.n_rollouts
            );
            println!(
                "scaled reward {:+.4} (random reference {:.4}, expert reference {:.4})",
                report.scaled_reward, report.random_reference, report.expert_reference
            );
            if let Some(path) = save_rollouts {
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "rollouts"));
                let collected = collect_rollouts(&spec, &policy, n * spec.horizon, &mut rng)?;
                let trajectories: Vec<Trajectory> =
                    collected.into_iter().map(|(t, _)| t).collect();
                let set = DemonstrationSet {
                    env,
                    noise_sigma: 0.0,
                    normalizer: FeatureNormalizer::identity(spec.pair_dim()),
                    trajectories,
                };
                save_demos(&set, &path)?;
                println!(
                    "wrote {} stochastic rollouts to {}",
                    set.trajectories.len(),
                    path.display()
                );
            }
        }
        Command::DumpLatents {
            reward,
            demos,
            rollouts,
            out,
        } => {
            let model = RewardModel::load(&reward)?;
            let expert = load_demos(&demos)?;
            let generated = load_demos(&rollouts)?;
            let (n_expert, n_generated) =
                dump_latents(&model, &expert, &generated.trajectories, &out)?;
            println!(
                "wrote {n_expert} expert and {n_generated} generated rows to {}",
                out.display()
            );
        }
        Command::GradCheck { nets, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            for _ in 0..nets {
                let depth = 2 + (rng.next_u64() % 3) as usize;
                let sizes: Vec<usize> =
                    (0..depth).map(|_| 1 + (rng.next_u64() % 16) as usize).collect();
                let net = MlpNet::new(&sizes, rng.next_u64())?;
                let x: Vec<f64> = (0..sizes[0]).map(|_| unit_interval(&mut rng) * 2.0 - 1.0).collect();
                worst = worst.max(grad_check(&net, &x, 1e-5)?);
            }
            println!("max relative gradient error over {nets} networks: {worst:.3e}");
            if worst > 1e-4 {
                return Err(Failure::Runtime(format!(
                    "gradient self-test failed: {worst:.3e} exceeds 1e-4"
                )));
            }
        }
    }
    Ok(())
}

/// Parses trailing `--key value` / `--key=value` tokens into config
/// overrides. `--iters` is accepted as shorthand for `--iterations`.
fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let token = &tokens[i];
        let body = token
            .strip_prefix("--")
            .ok_or_else(|| Failure::Usage(format!("expected --key value, got {token:?}")))?;
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                i += 1;
                let value = tokens.get(i).ok_or_else(|| {
                    Failure::Usage(format!("override --{body} is missing a value"))
                })?;
                (body.to_string(), value.clone())
            }
        };
        if key.is_empty() {
            return Err(Failure::Usage(format!("empty override key in {token:?}")));
        }
        let key = if key == "iters" { "iterations".to_string() } else { key };
        out.push((key, value));
        i += 1;
    }
    Ok(out)
}

fn unit_interval(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
