//! On-policy rollout collection, generalized advantage estimation, and the
//! trust-region policy update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demos::Trajectory;
use crate::env::{env_reset, env_step, EnvSpec};
use crate::net::GradientSet;
use crate::policy::GaussianPolicy;
use crate::reward::asw_augment;
use crate::{Error, Result};

const CG_ITERS: usize = 10;
const CG_DAMPING: f64 = 0.1;
const LINE_SEARCH_HALVINGS: usize = 10;
const LINE_SEARCH_RATIO: f64 = 0.5;
// States entering the Fisher-vector product are strided down to this many
// rows; the gradient, surrogate, and KL check stay full-batch.
const FISHER_MAX_ROWS: usize = 512;

/// One collected trajectory plus everything the update needs alongside it.
/// When absorbing-state padding is active, `live` marks the steps the
/// policy actually took; padded steps keep zeroed log densities and are
/// excluded from the surrogate and from advantage normalization, but their
/// learned rewards still flow through the advantage recursion.
#[derive(Debug, Clone)]
pub struct RolloutTrajectory {
    pub traj: Trajectory,
    pub sampling_logps: Vec<f64>,
    pub live: Vec<bool>,
    pub pseudo_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub trajectories: Vec<RolloutTrajectory>,
    /// Width of the states the policy consumes (absorbing flags excluded).
    pub state_dim: usize,
}

impl RolloutBatch {
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.traj.len()).sum()
    }

    pub fn live_steps(&self) -> usize {
        self.trajectories
            .iter()
            .map(|t| t.live.iter().filter(|l| **l).count())
            .sum()
    }
}

/// Runs whole stochastic episodes until at least `min_pairs` state-action
/// pairs are collected. Returns each trajectory with the log density of
/// every sampled action. Stored actions are the raw Gaussian samples (the
/// environment clamps what it executes), so the densities stay honest.
pub fn collect_rollouts<R: Rng>(
    spec: &EnvSpec,
    policy: &GaussianPolicy,
    min_pairs: usize,
    rng: &mut R,
) -> Result<Vec<(Trajectory, Vec<f64>)>> {
    if policy.state_dim() != spec.state_dim || policy.action_dim() != spec.action_dim {
        return Err(Error::shape(
            "rollout policy dims",
            spec.state_dim + spec.action_dim,
            policy.state_dim() + policy.action_dim(),
        ));
    }
    if min_pairs == 0 {
        return Err(Error::Invalid("rollout batch size must be positive".into()));
    }
    let mut out = Vec::new();
    let mut pairs = 0;
    while pairs < min_pairs {
        let reset_seed = rng.gen::<u64>();
        let noise_seed = rng.gen::<u64>();
        let mut ep_rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut state = env_reset(spec, reset_seed);
        let mut states = vec![state.clone()];
        let mut actions = Vec::new();
        let mut dones = Vec::new();
        let mut true_rewards = Vec::new();
        let mut logps = Vec::new();
        for _ in 0..spec.horizon {
            let (action, logp) = policy.sample_raw(&state, &mut ep_rng)?;
            let tr = env_step(spec, &state, &action)?;
            state = tr.next_state.clone();
            states.push(tr.next_state);
            actions.push(action);
            dones.push(tr.done);
            true_rewards.push(tr.true_reward);
            logps.push(logp);
            if tr.done {
                break;
            }
        }
        pairs += actions.len();
        out.push((
            Trajectory {
                states,
                actions,
                dones,
                true_rewards: Some(true_rewards),
            },
            logps,
        ));
    }
    Ok(out)
}

/// Wraps collected trajectories for the update, applying absorbing-state
/// padding when requested.
pub fn prepare_batch(
    collected: Vec<(Trajectory, Vec<f64>)>,
    absorbing: bool,
    horizon: usize,
    state_dim: usize,
) -> Result<RolloutBatch> {
    let mut trajectories = Vec::with_capacity(collected.len());
    for (traj, logps) in collected {
        if logps.len() != traj.len() {
            return Err(Error::shape("rollout log densities", traj.len(), logps.len()));
        }
        let lived = traj.len();
        let (traj, sampling_logps) = if absorbing {
            let padded = asw_augment(&traj, horizon)?;
            let mut lp = logps;
            lp.resize(padded.len(), 0.0);
            (padded, lp)
        } else {
            (traj, logps)
        };
        let steps = traj.len();
        let mut live = vec![true; lived];
        live.resize(steps, false);
        trajectories.push(RolloutTrajectory {
            traj,
            sampling_logps,
            live,
            pseudo_rewards: vec![0.0; steps],
            advantages: vec![0.0; steps],
            value_targets: vec![0.0; steps],
        });
    }
    Ok(RolloutBatch {
        trajectories,
        state_dim,
    })
}

/// Generalized advantage estimation over one trajectory. `values` carries
/// one entry per state (T + 1 of them); the final value bootstraps the tail
/// unless the last step terminated. Returns advantages and critic targets
/// (advantage plus state value), both unnormalized.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t_len = rewards.len();
    if dones.len() != t_len {
        return Err(Error::shape("advantage dones", t_len, dones.len()));
    }
    if values.len() != t_len + 1 {
        return Err(Error::shape("advantage values", t_len + 1, values.len()));
    }
    let mut advantages = vec![0.0; t_len];
    let mut tail = 0.0;
    for t in (0..t_len).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * cont - values[t];
        tail = delta + gamma * lambda * cont * tail;
        advantages[t] = tail;
    }
    let targets = advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect();
    Ok((advantages, targets))
}

/// Shifts and scales advantages to zero mean and unit deviation across the
/// batch. Only live steps enter the statistics and only live steps are
/// rewritten; padded steps never reach the surrogate.
pub fn normalize_advantages(batch: &mut RolloutBatch) {
    let mut n = 0.0;
    let mut mean = 0.0;
    for rt in &batch.trajectories {
        for (a, live) in rt.advantages.iter().zip(&rt.live) {
            if *live {
                mean += a;
                n += 1.0;
            }
        }
    }
    if n == 0.0 {
        return;
    }
    mean /= n;
    let mut var = 0.0;
    for rt in &batch.trajectories {
        for (a, live) in rt.advantages.iter().zip(&rt.live) {
            if *live {
                var += (a - mean) * (a - mean);
            }
        }
    }
    let std = (var / n).sqrt().max(1e-8);
    for rt in &mut batch.trajectories {
        for (a, live) in rt.advantages.iter_mut().zip(&rt.live) {
            if *live {
                *a = (*a - mean) / std;
            }
        }
    }
}

/// Flat view of the per-step data the policy update consumes.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateData<'a> {
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub sampling_logps: &'a [f64],
    pub advantages: &'a [f64],
}

impl<'a> SurrogateData<'a> {
    fn validate(&self) -> Result<usize> {
        let n = self.states.len();
        if n == 0 {
            return Err(Error::Invalid("empty policy update batch".into()));
        }
        if self.actions.len() != n {
            return Err(Error::shape("surrogate actions", n, self.actions.len()));
        }
        if self.sampling_logps.len() != n {
            return Err(Error::shape("surrogate log densities", n, self.sampling_logps.len()));
        }
        if self.advantages.len() != n {
            return Err(Error::shape("surrogate advantages", n, self.advantages.len()));
        }
        Ok(n)
    }
}

/// Importance-weighted policy objective: mean of ratio times advantage,
/// where the ratio compares the current density to the sampling density.
pub fn surrogate_value(policy: &GaussianPolicy, data: &SurrogateData) -> Result<f64> {
    let n = data.validate()?;
    let mut total = 0.0;
    for i in 0..n {
        let lp = policy.log_prob(&data.states[i], &data.actions[i])?;
        total += (lp - data.sampling_logps[i]).exp() * data.advantages[i];
    }
    Ok(total / n as f64)
}

/// Exact gradient of the surrogate with respect to the policy's flat
/// parameters (mean network, then log stds).
pub fn surrogate_gradient(policy: &GaussianPolicy, data: &SurrogateData) -> Result<Vec<f64>> {
    let n = data.validate()?;
    let scale = 1.0 / n as f64;
    let mut grads = GradientSet::zeros_like(policy.mean_net());
    let mut ls_grad = vec![0.0; policy.action_dim()];
    for i in 0..n {
        let acts = policy.mean_net().activations(&data.states[i])?;
        let mean = acts.last().unwrap().clone();
        let action = &data.actions[i];
        if action.len() != mean.len() {
            return Err(Error::shape("surrogate action width", mean.len(), action.len()));
        }
        let lp = policy.log_prob_from_mean(&mean, action);
        let w = (lp - data.sampling_logps[i]).exp() * data.advantages[i] * scale;
        let upstream: Vec<f64> = mean
            .iter()
            .zip(action)
            .zip(policy.log_std())
            .map(|((m, a), ls)| w * (a - m) * (-2.0 * ls).exp())
            .collect();
        policy
            .mean_net()
            .backward_from_acts(&acts, &upstream, &mut grads)?;
        for ((g, m), (a, ls)) in ls_grad
            .iter_mut()
            .zip(&mean)
            .zip(action.iter().zip(policy.log_std()))
        {
            let z = (a - m) * (-ls).exp();
            *g += w * (z * z - 1.0);
        }
    }
    let mut flat = grads.flatten();
    flat.extend_from_slice(&ls_grad);
    Ok(flat)
}

/// Mean Kullback-Leibler divergence from `old` to `new` over the given
/// states, in closed form for diagonal Gaussians.
pub fn mean_kl(old: &GaussianPolicy, new: &GaussianPolicy, states: &[Vec<f64>]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Invalid("mean KL needs at least one state".into()));
    }
    let mut total = 0.0;
    for s in states {
        let mo = old.mean(s)?;
        let mn = new.mean(s)?;
        total += kl_diag(&mo, old.log_std(), &mn, new.log_std());
    }
    Ok(total / states.len() as f64)
}

fn kl_diag(mean_old: &[f64], ls_old: &[f64], mean_new: &[f64], ls_new: &[f64]) -> f64 {
    mean_old
        .iter()
        .zip(mean_new)
        .zip(ls_old.iter().zip(ls_new))
        .map(|((mo, mn), (lo, ln))| {
            let var_old = (2.0 * lo).exp();
            let var_new = (2.0 * ln).exp();
            ln - lo + (var_old + (mo - mn) * (mo - mn)) / (2.0 * var_new) - 0.5
        })
        .sum()
}

/// Fisher-vector product for the policy's Gaussian, Gauss-Newton form:
/// the mean block is J^T diag(1/sigma^2) J averaged over states, the
/// log-std block is the constant 2 per coordinate, plus damping.
fn fisher_vector_product(
    policy: &GaussianPolicy,
    acts_cache: &[Vec<Vec<f64>>],
    v: &[f64],
) -> Result<Vec<f64>> {
    let split = policy.mean_net().param_count();
    let scale = 1.0 / acts_cache.len() as f64;
    let mut grads = GradientSet::zeros_like(policy.mean_net());
    for acts in acts_cache {
        let jv = policy.mean_net().output_jvp(acts, &v[..split])?;
        let upstream: Vec<f64> = jv
            .iter()
            .zip(policy.log_std())
            .map(|(u, ls)| u * (-2.0 * ls).exp() * scale)
            .collect();
        policy
            .mean_net()
            .backward_from_acts(acts, &upstream, &mut grads)?;
    }
    let mut flat = grads.flatten();
    flat.extend(v[split..].iter().map(|x| 2.0 * x));
    for (o, vi) in flat.iter_mut().zip(v) {
        *o += CG_DAMPING * vi;
    }
    Ok(flat)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient solve of (F + damping I) x = g.
fn conjugate_gradient(
    policy: &GaussianPolicy,
    acts_cache: &[Vec<Vec<f64>>],
    g: &[f64],
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; g.len()];
    let mut r = g.to_vec();
    let mut p = g.to_vec();
    let mut rs = dot(&r, &r);
    for _ in 0..CG_ITERS {
        if rs < 1e-14 {
            break;
        }
        let fp = fisher_vector_product(policy, acts_cache, &p)?;
        let p_fp = dot(&p, &fp);
        if !(p_fp > 0.0) {
            break;
        }
        let alpha = rs / p_fp;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * fp[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct TrustRegionReport {
    pub accepted: bool,
    /// Line-search scale on the full step; 0 when no step was taken.
    pub step_scale: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub mean_kl: f64,
}

/// One trust-region policy update: natural-gradient direction from a
/// conjugate-gradient solve, scaled to the constraint boundary, then backed
/// off until the surrogate improves and the exact mean KL stays within
/// `delta_kl`. Leaves the policy untouched when no such step exists.
pub fn trust_region_step(
    policy: &mut GaussianPolicy,
    data: &SurrogateData,
    delta_kl: f64,
) -> Result<TrustRegionReport> {
    let n = data.validate()?;
    if !(delta_kl > 0.0 && delta_kl.is_finite()) {
        return Err(Error::Invalid("KL budget must be positive".into()));
    }

    // The Fisher estimate uses a strided subset of states; the gradient,
    // surrogate, and KL check below stay full-batch.
    let stride = std::cmp::max(1, n.div_ceil(FISHER_MAX_ROWS));
    let mut acts_cache = Vec::with_capacity(n.div_ceil(stride));
    let mut means_old = Vec::with_capacity(n);
    for (i, s) in data.states.iter().enumerate() {
        if i % stride == 0 {
            let acts = policy.mean_net().activations(s)?;
            means_old.push(acts.last().unwrap().clone());
            acts_cache.push(acts);
        } else {
            means_old.push(policy.mean(s)?);
        }
    }
    let ls_old = policy.log_std().to_vec();

    // Surrogate and mean KL against the snapshot, one forward pass per state.
    let assess = |p: &GaussianPolicy| -> Result<(f64, f64)> {
        let mut total = 0.0;
        let mut kl = 0.0;
        for i in 0..n {
            let mean = p.mean(&data.states[i])?;
            let lp = p.log_prob_from_mean(&mean, &data.actions[i]);
            total += (lp - data.sampling_logps[i]).exp() * data.advantages[i];
            kl += kl_diag(&means_old[i], &ls_old, &mean, p.log_std());
        }
        Ok((total / n as f64, kl / n as f64))
    };

    let mut surrogate_before = 0.0;
    for i in 0..n {
        let lp = policy.log_prob_from_mean(&means_old[i], &data.actions[i]);
        surrogate_before += (lp - data.sampling_logps[i]).exp() * data.advantages[i];
    }
    surrogate_before /= n as f64;
    if !surrogate_before.is_finite() {
        return Err(Error::NumericFault(format!(
            "non-finite policy objective: {surrogate_before}"
        )));
    }
    let unchanged = TrustRegionReport {
        accepted: false,
        step_scale: 0.0,
        surrogate_before,
        surrogate_after: surrogate_before,
        mean_kl: 0.0,
    };

    let g = surrogate_gradient(policy, data)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFault("non-finite policy gradient".into()));
    }
    if dot(&g, &g) < 1e-16 {
        return Ok(unchanged);
    }

    let x = conjugate_gradient(policy, &acts_cache, &g)?;
    let fx = fisher_vector_product(policy, &acts_cache, &x)?;
    let x_fx = dot(&x, &fx);
    if !(x_fx > 1e-12) {
        return Ok(unchanged);
    }
    let step_size = (2.0 * delta_kl / x_fx).sqrt();
    let theta_old = policy.flat_params();

    let mut coef = 1.0;
    for _ in 0..=LINE_SEARCH_HALVINGS {
        let theta: Vec<f64> = theta_old
            .iter()
            .zip(&x)
            .map(|(t, d)| t + coef * step_size * d)
            .collect();
        if theta.iter().all(|v| v.is_finite()) {
            policy.set_flat_params(&theta)?;
            let (surrogate_after, kl) = assess(policy)?;
            if surrogate_after.is_finite()
                && kl.is_finite()
                && surrogate_after > surrogate_before
                && kl <= delta_kl
            {
                return Ok(TrustRegionReport {
                    accepted: true,
                    step_scale: coef,
                    surrogate_before,
                    surrogate_after,
                    mean_kl: kl,
                });
            }
        }
        coef *= LINE_SEARCH_RATIO;
    }
    policy.set_flat_params(&theta_old)?;
    Ok(unchanged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvName;
    use crate::net::MlpNet;
    use crate::policy::ActMode;

    fn linear_policy(w: f64, b: f64, log_std: f64) -> GaussianPolicy {
        let mut net = MlpNet::new(&[1, 1], 0).unwrap();
        net.set_flat_params(&[w, b]).unwrap();
        GaussianPolicy::from_parts(net, vec![log_std], 10.0).unwrap()
    }

    #[test]
    fn advantages_on_terminal_unit_rewards() {
        let rewards = [1.0, 1.0, 1.0];
        let values = [0.0; 4];
        let dones = [false, false, true];
        let (adv, tgt) = gae_advantages(&rewards, &values, &dones, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![3.0, 2.0, 1.0]);
        assert_eq!(tgt, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn advantages_with_zero_discount_reduce_to_rewards() {
        let rewards = [0.4, -1.0, 2.5];
        let values = [0.0; 4];
        let dones = [false, false, false];
        let (adv, _) = gae_advantages(&rewards, &values, &dones, 0.0, 0.95).unwrap();
        assert_eq!(adv, rewards.to_vec());
    }

    #[test]
    fn advantages_match_double_loop_reference() {
        let rewards = [0.5, -0.2, 0.3, 1.0, -0.7];
        let values = [0.1, -0.3, 0.2, 0.4, -0.1, 0.6];
        let dones = [false, false, true, false, false];
        let (gamma, lambda) = (0.9, 0.8);
        let (adv, tgt) = gae_advantages(&rewards, &values, &dones, gamma, lambda).unwrap();
        for t in 0..rewards.len() {
            let mut acc = 0.0;
            let mut coef = 1.0;
            for k in t..rewards.len() {
                let cont = if dones[k] { 0.0 } else { 1.0 };
                let delta = rewards[k] + gamma * values[k + 1] * cont - values[k];
                acc += coef * delta;
                if dones[k] {
                    break;
                }
                coef *= gamma * lambda;
            }
            assert!((adv[t] - acc).abs() < 1e-12, "step {t}: {} vs {acc}", adv[t]);
            assert!((tgt[t] - (acc + values[t])).abs() < 1e-12);
        }
        // Episode boundary: nothing after the done leaks backward.
        let (adv_cut, _) =
            gae_advantages(&rewards[..3], &values[..4], &dones[..3], gamma, lambda).unwrap();
        assert_eq!(&adv[..3], &adv_cut[..]);
    }

    #[test]
    fn advantage_shapes_are_checked() {
        assert!(gae_advantages(&[1.0], &[0.0], &[false], 0.9, 0.9).is_err());
        assert!(gae_advantages(&[1.0], &[0.0, 0.0], &[false, true], 0.9, 0.9).is_err());
    }

    #[test]
    fn rollouts_are_deterministic_and_well_shaped() {
        let spec = EnvSpec::new(EnvName::PointMass2d, 16);
        let policy = GaussianPolicy::new(4, 2, 8, 1.0, 3).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = collect_rollouts(&spec, &policy, 40, &mut r1).unwrap();
        let b = collect_rollouts(&spec, &policy, 40, &mut r2).unwrap();
        assert_eq!(a.len(), b.len());
        let mut pairs = 0;
        for ((ta, la), (tb, lb)) in a.iter().zip(&b) {
            assert_eq!(ta.states, tb.states);
            assert_eq!(ta.actions, tb.actions);
            assert_eq!(la, lb);
            assert_eq!(ta.states.len(), ta.actions.len() + 1);
            assert_eq!(la.len(), ta.actions.len());
            for (t, lp) in la.iter().enumerate() {
                let direct = policy.log_prob(&ta.states[t], &ta.actions[t]).unwrap();
                assert!((lp - direct).abs() < 1e-12);
            }
            pairs += ta.actions.len();
        }
        assert!(pairs >= 40);
    }

    #[test]
    fn prepared_batches_mark_padding_dead() {
        let spec = EnvSpec::new(EnvName::CartPoleCont, 40);
        // A constant push tips the pole well before the horizon.
        let mut net = MlpNet::new(&[4, 1], 0).unwrap();
        net.set_flat_params(&[0.0, 0.0, 0.0, 0.0, 3.0]).unwrap();
        let policy = GaussianPolicy::from_parts(net, vec![-20.0], 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let collected = collect_rollouts(&spec, &policy, 50, &mut rng).unwrap();
        assert!(
            collected.iter().any(|(t, _)| t.terminated()),
            "expected at least one early termination"
        );
        let batch = prepare_batch(collected, true, spec.horizon, 4).unwrap();
        for rt in &batch.trajectories {
            assert_eq!(rt.traj.len(), spec.horizon, "padded to the horizon");
            assert_eq!(rt.sampling_logps.len(), spec.horizon);
            assert_eq!(rt.live.len(), spec.horizon);
            assert!(rt.traj.dones.iter().all(|d| !d));
            let lived = rt.live.iter().filter(|l| **l).count();
            assert!(lived > 0);
            for t in 0..rt.traj.len() {
                assert_eq!(rt.traj.states[t].len(), 5, "flag appended");
                if !rt.live[t] {
                    assert_eq!(rt.sampling_logps[t], 0.0);
                    assert_eq!(rt.traj.states[t][4], 1.0);
                }
            }
        }
        assert!(batch.live_steps() < batch.total_steps());
    }

    #[test]
    fn advantage_normalization_covers_live_steps_only() {
        let traj = Trajectory {
            states: vec![vec![0.0]; 5],
            actions: vec![vec![0.0]; 4],
            dones: vec![false; 4],
            true_rewards: None,
        };
        let mut batch = RolloutBatch {
            trajectories: vec![RolloutTrajectory {
                traj,
                sampling_logps: vec![0.0; 4],
                live: vec![true, true, true, false],
                pseudo_rewards: vec![0.0; 4],
                advantages: vec![1.0, 2.0, 3.0, 9.0],
                value_targets: vec![0.0; 4],
            }],
            state_dim: 1,
        };
        normalize_advantages(&mut batch);
        let a = &batch.trajectories[0].advantages;
        assert_eq!(a[3], 9.0, "dead step untouched");
        let live = &a[..3];
        let mean: f64 = live.iter().sum::<f64>() / 3.0;
        let var: f64 = live.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut policy = GaussianPolicy::new(2, 2, 3, 5.0, 11).unwrap();
        policy.set_log_std(&[-0.2, 0.1]).unwrap();
        let states = vec![
            vec![0.3, -0.8],
            vec![-0.5, 0.2],
            vec![1.1, 0.4],
            vec![0.0, -0.1],
        ];
        let actions = vec![
            vec![0.2, -0.3],
            vec![-0.6, 0.5],
            vec![0.9, 0.1],
            vec![-0.2, -0.4],
        ];
        let sampling_logps = vec![-1.0, -1.5, -2.0, -0.8];
        let advantages = vec![1.0, -0.5, 0.25, -1.25];
        let data = SurrogateData {
            states: &states,
            actions: &actions,
            sampling_logps: &sampling_logps,
            advantages: &advantages,
        };
        let grad = surrogate_gradient(&policy, &data).unwrap();
        let theta = policy.flat_params();
        let eps = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += eps;
            let mut minus = theta.clone();
            minus[i] -= eps;
            let mut p = policy.clone();
            p.set_flat_params(&plus).unwrap();
            let s_plus = surrogate_value(&p, &data).unwrap();
            p.set_flat_params(&minus).unwrap();
            let s_minus = surrogate_value(&p, &data).unwrap();
            let fd = (s_plus - s_minus) / (2.0 * eps);
            assert!(
                (grad[i] - fd).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "param {i}: analytic {} vs finite difference {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn kl_closed_form_cases() {
        let p = linear_policy(0.0, 0.0, 0.0);
        let states = vec![vec![0.7], vec![-0.4]];
        assert_eq!(mean_kl(&p, &p, &states).unwrap(), 0.0);
        // Mean shift of 0.3 with unit stds: 0.3^2 / 2.
        let q = linear_policy(0.0, 0.3, 0.0);
        assert!((mean_kl(&p, &q, &states).unwrap() - 0.045).abs() < 1e-12);
        // Doubled std, same mean: ln 2 + 1/8 - 1/2.
        let r = linear_policy(0.0, 0.0, std::f64::consts::LN_2);
        let expect = std::f64::consts::LN_2 + 0.125 - 0.5;
        assert!((mean_kl(&p, &r, &states).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn trust_step_matches_analytic_natural_gradient() {
        // Linear mean on one state: the Fisher is a 2x2 block (plus the
        // log-std coordinate), solvable by hand. The action sits exactly
        // one std from the mean, which zeroes the log-std gradient, so the
        // whole step lives in the mean parameters.
        let mut policy = linear_policy(0.5, 0.1, 0.0);
        let s = 0.8;
        let mu = 0.5 * s + 0.1;
        let a = mu + 1.0;
        let adv = 0.7;
        let logp = policy.log_prob(&[s], &[a]).unwrap();
        let states = vec![vec![s]];
        let actions = vec![vec![a]];
        let logps = vec![logp];
        let advs = vec![adv];
        let data = SurrogateData {
            states: &states,
            actions: &actions,
            sampling_logps: &logps,
            advantages: &advs,
        };
        let report = trust_region_step(&mut policy, &data, 0.01).unwrap();
        assert!(report.accepted);
        assert_eq!(report.step_scale, 1.0, "full step should satisfy the constraint");

        // By hand: g = (adv * s, adv, 0); F = [[s^2, s], [s, 1]] + 0.1 I.
        let g = [adv * s, adv];
        let f = [
            [s * s + CG_DAMPING, s],
            [s, 1.0 + CG_DAMPING],
        ];
        let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
        let x = [
            (f[1][1] * g[0] - f[0][1] * g[1]) / det,
            (f[0][0] * g[1] - f[1][0] * g[0]) / det,
        ];
        let x_fx = x[0] * g[0] + x[1] * g[1];
        let scale = (2.0 * 0.01 / x_fx).sqrt();
        let expect = [0.5 + scale * x[0], 0.1 + scale * x[1], 0.0];
        let got = policy.flat_params();
        for (e, o) in expect.iter().zip(&got) {
            assert!((e - o).abs() < 1e-6, "expected {expect:?}, got {got:?}");
        }
        assert!(report.mean_kl <= 0.01 && report.mean_kl > 0.0);
        assert!(report.surrogate_after > report.surrogate_before);
    }

    #[test]
    fn trust_step_leaves_policy_alone_on_zero_advantages() {
        let mut policy = GaussianPolicy::new(2, 1, 4, 1.0, 9).unwrap();
        let before = policy.flat_params();
        let states = vec![vec![0.1, 0.2], vec![-0.3, 0.4]];
        let actions = vec![vec![0.5], vec![-0.2]];
        let logps = vec![-1.0, -1.2];
        let advs = vec![0.0, 0.0];
        let data = SurrogateData {
            states: &states,
            actions: &actions,
            sampling_logps: &logps,
            advantages: &advs,
        };
        let report = trust_region_step(&mut policy, &data, 0.01).unwrap();
        assert!(!report.accepted);
        assert_eq!(policy.flat_params(), before);
    }

    #[test]
    fn trust_step_rejects_non_finite_objectives() {
        let mut policy = GaussianPolicy::new(2, 1, 4, 1.0, 9).unwrap();
        let states = vec![vec![0.1, 0.2]];
        let actions = vec![vec![0.5]];
        let logps = vec![-1.0];
        let advs = vec![f64::NAN];
        let data = SurrogateData {
            states: &states,
            actions: &actions,
            sampling_logps: &logps,
            advantages: &advs,
        };
        match trust_region_step(&mut policy, &data, 0.01) {
            Err(Error::NumericFault(_)) => {}
            other => panic!("expected a numeric fault, got {other:?}"),
        }
    }

    #[test]
    fn accepted_steps_respect_the_kl_budget() {
        let spec = EnvSpec::new(EnvName::Pendulum, 32);
        let mut policy = GaussianPolicy::new(2, 1, 16, 3.0, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for round in 0..5 {
            let old = policy.clone();
            let collected = collect_rollouts(&spec, &policy, 128, &mut rng).unwrap();
            let mut states = Vec::new();
            let mut actions = Vec::new();
            let mut logps = Vec::new();
            let mut advs = Vec::new();
            for (traj, lp) in &collected {
                for t in 0..traj.len() {
                    states.push(traj.states[t].clone());
                    actions.push(traj.actions[t].clone());
                    logps.push(lp[t]);
                    // Stand-in scores with structure: prefer small actions.
                    advs.push(-traj.actions[t][0].abs() + 0.3 * (t as f64 % 3.0 - 1.0));
                }
            }
            let data = SurrogateData {
                states: &states,
                actions: &actions,
                sampling_logps: &logps,
                advantages: &advs,
            };
            let report = trust_region_step(&mut policy, &data, 0.01).unwrap();
            if report.accepted {
                assert!(report.mean_kl <= 0.01, "round {round}: {}", report.mean_kl);
                assert!(report.surrogate_after > report.surrogate_before);
                let exact = mean_kl(&old, &policy, &states).unwrap();
                assert!((exact - report.mean_kl).abs() < 1e-10);
            } else {
                assert_eq!(policy.flat_params(), old.flat_params());
            }
        }
    }

    #[test]
    fn stochastic_acting_stays_within_bounds_over_rollouts() {
        let spec = EnvSpec::new(EnvName::Pendulum, 16);
        let policy = GaussianPolicy::new(2, 1, 8, 3.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = env_reset(&spec, 0);
        for _ in 0..50 {
            let a = policy.act(&state, ActMode::Stochastic, &mut rng).unwrap();
            assert!(a[0].abs() <= 3.0);
            let tr = env_step(&spec, &state, &a).unwrap();
            state = tr.next_state;
        }
    }
}
