//! Deterministic policy evaluation, normalized performance metrics, and
//! latent-activation export.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demos::{DemonstrationSet, Trajectory};
use crate::env::{run_episode, scripted_expert, EnvName, EnvSpec};
use crate::policy::{ActMode, GaussianPolicy};
use crate::reward::{asw_augment, trajectory_rows, RewardModel};
use crate::{Error, Result};

/// First seed of the cached reference rollouts; evaluation seeds are chosen
/// by callers and should stay well below this block.
pub const REFERENCE_SEED: u64 = 1_000_000;
pub const REFERENCE_ROLLOUTS: usize = 100;

/// Outcome of a deterministic evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub env: String,
    pub checkpoint: String,
    pub n_rollouts: usize,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub random_reference: f64,
    pub expert_reference: f64,
    pub scaled_reward: f64,
}

/// Mean true returns of the zero-action policy and the scripted expert,
/// each over a fixed block of seeds. Cached per environment and horizon;
/// these anchor the scaled-reward axis at 0 and 1.
pub fn env_references(spec: &EnvSpec) -> Result<(f64, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<(EnvName, usize), (f64, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (spec.name, spec.horizon);
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Ok(*hit);
    }
    let mut random_total = 0.0;
    let mut expert_total = 0.0;
    for i in 0..REFERENCE_ROLLOUTS {
        let seed = REFERENCE_SEED + i as u64;
        let zeros = vec![0.0; spec.action_dim];
        random_total += run_episode(spec, seed, |_| zeros.clone())?.total_return();
        expert_total += run_episode(spec, seed, |s| scripted_expert(spec, s))?.total_return();
    }
    let refs = (
        random_total / REFERENCE_ROLLOUTS as f64,
        expert_total / REFERENCE_ROLLOUTS as f64,
    );
    cache.lock().unwrap().insert(key, refs);
    Ok(refs)
}

/// Return normalized so the random reference maps to 0 and the expert
/// reference to 1; may leave [0, 1].
pub fn scaled_reward(ret: f64, random_ret: f64, expert_ret: f64) -> Result<f64> {
    let span = expert_ret - random_ret;
    if !(span.abs() > 1e-12) {
        return Err(Error::Invalid(format!(
            "degenerate scaled-reward references: random {random_ret}, expert {expert_ret}"
        )));
    }
    Ok((ret - random_ret) / span)
}

/// Relative gain of `ours` over `baseline`.
pub fn relative_improvement(ours: f64, baseline: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Invalid("relative improvement needs a nonzero baseline".into()));
    }
    Ok((ours - baseline) / baseline)
}

/// Runs `n_rollouts` deterministic episodes with seeds `seed..seed+n` and
/// reports true returns against the cached references. `label` names the
/// evaluated checkpoint in the report.
pub fn evaluate(
    policy: &GaussianPolicy,
    spec: &EnvSpec,
    n_rollouts: usize,
    seed: u64,
    label: &str,
) -> Result<EvalReport> {
    if n_rollouts == 0 {
        return Err(Error::Invalid("evaluation needs at least one rollout".into()));
    }
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(Error::Invalid(format!(
            "policy dimensions {}x{} do not fit env {} ({}x{})",
            policy.state_dim(),
            policy.action_dim(),
            spec.name,
            spec.state_dim,
            spec.action_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut returns = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let record = run_episode(spec, seed.wrapping_add(i as u64), |s| {
            policy
                .act(s, ActMode::Deterministic, &mut rng)
                .expect("dimensions were checked above")
        })?;
        returns.push(record.total_return());
    }
    let mean = returns.iter().sum::<f64>() / n_rollouts as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n_rollouts as f64;
    let (random_reference, expert_reference) = env_references(spec)?;
    let scaled = scaled_reward(mean, random_reference, expert_reference)?;
    Ok(EvalReport {
        env: spec.name.to_string(),
        checkpoint: label.to_string(),
        n_rollouts,
        returns,
        mean,
        std: var.sqrt(),
        random_reference,
        expert_reference,
        scaled_reward: scaled,
    })
}

/// Writes one CSV row per state-action pair: a source label followed by the
/// reward model's feature-layer activations, expert rows first. Returns the
/// (expert, generated) row counts.
pub fn dump_latents(
    model: &RewardModel,
    demos: &DemonstrationSet,
    generated: &[Trajectory],
    out: &Path,
) -> Result<(usize, usize)> {
    let rows_of = |traj: &Trajectory| -> Result<Vec<Vec<f64>>> {
        if model.features().absorbing() {
            Ok(trajectory_rows(&asw_augment(traj, traj.len())?))
        } else {
            Ok(trajectory_rows(traj))
        }
    };
    let mut expert_rows = Vec::new();
    for traj in &demos.trajectories {
        expert_rows.extend(rows_of(traj)?);
    }
    let mut generated_rows = Vec::new();
    for traj in generated {
        generated_rows.extend(rows_of(traj)?);
    }
    let expert_latents = model.latent_activations(&expert_rows)?;
    let generated_latents = model.latent_activations(&generated_rows)?;
    let width = expert_latents
        .first()
        .or(generated_latents.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Invalid("no state-action pairs to export".into()))?;

    let mut w = BufWriter::new(File::create(out)?);
    write!(w, "source")?;
    for i in 0..width {
        write!(w, ",u{i}")?;
    }
    writeln!(w)?;
    for (label, latents) in [("expert", &expert_latents), ("generated", &generated_latents)] {
        for row in latents {
            write!(w, "{label}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok((expert_latents.len(), generated_latents.len()))
}
