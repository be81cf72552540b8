//! Gaussian policy, value critic, and behavioral-cloning pre-training.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{ArtifactKind, CheckpointReader, CheckpointWriter};
use crate::demos::{standard_normal, DemonstrationSet};
use crate::net::{optimizer_step, GradientSet, MlpNet, OptimizerState};
use crate::{child_seed, Error, Result};

pub const LOG_STD_FLOOR: f64 = -20.0;
pub const LOG_STD_CEIL: f64 = 5.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Diagonal-Gaussian policy: a state-dependent mean network plus one
/// state-independent log standard deviation per action dimension.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    mean_net: MlpNet,
    log_std: Vec<f64>,
    action_bound: f64,
}

impl GaussianPolicy {
    /// Two tanh hidden layers of `hidden` units. Initial exploration noise
    /// scales with the control authority: each log std starts at
    /// ln(0.2 * action_bound).
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        action_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(action_bound > 0.0 && action_bound.is_finite()) {
            return Err(Error::Invalid("action bound must be positive".into()));
        }
        let mean_net = MlpNet::new(
            &[state_dim, hidden, hidden, action_dim],
            child_seed(seed, "policy_mean"),
        )?;
        let log_std0 = (0.2 * action_bound).ln().clamp(LOG_STD_FLOOR, LOG_STD_CEIL);
        Ok(GaussianPolicy {
            mean_net,
            log_std: vec![log_std0; action_dim],
            action_bound,
        })
    }

    /// Wraps an existing mean network, e.g. one with a custom shape.
    pub fn from_parts(mean_net: MlpNet, log_std: Vec<f64>, action_bound: f64) -> Result<Self> {
        if log_std.len() != mean_net.out_dim() {
            return Err(Error::shape("policy log_std", mean_net.out_dim(), log_std.len()));
        }
        if log_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault("non-finite log_std".into()));
        }
        if !(action_bound > 0.0 && action_bound.is_finite()) {
            return Err(Error::Invalid("action bound must be positive".into()));
        }
        Ok(GaussianPolicy {
            mean_net,
            log_std,
            action_bound,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.out_dim()
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    pub fn mean_net(&self) -> &MlpNet {
        &self.mean_net
    }

    pub fn mean_net_mut(&mut self) -> &mut MlpNet {
        &mut self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    /// Overrides the noise scales, clamped into a sane range.
    pub fn set_log_std(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.log_std.len() {
            return Err(Error::shape("log_std", self.log_std.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault("non-finite log_std".into()));
        }
        self.log_std = values
            .iter()
            .map(|v| v.clamp(LOG_STD_FLOOR, LOG_STD_CEIL))
            .collect();
        Ok(())
    }

    /// Unclipped action mean.
    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(state)
    }

    /// Environment-facing action, clipped to the bounds. Stochastic mode
    /// draws from the policy's Gaussian first.
    pub fn act<R: Rng>(&self, state: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        let mut a = match mode {
            ActMode::Deterministic => self.mean(state)?,
            ActMode::Stochastic => self.sample_raw(state, rng)?.0,
        };
        for v in a.iter_mut() {
            *v = v.clamp(-self.action_bound, self.action_bound);
        }
        Ok(a)
    }

    /// Raw Gaussian sample and its log density. Training keeps the
    /// unclipped sample so importance ratios stay consistent with the
    /// recorded density; the environment clamps what it executes.
    pub fn sample_raw<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(state)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * standard_normal(rng))
            .collect();
        let logp = self.log_prob_from_mean(&mean, &action);
        Ok((action, logp))
    }

    /// Log density of an (unclipped) action at a state.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::shape("log_prob action", self.action_dim(), action.len()));
        }
        let mean = self.mean(state)?;
        Ok(self.log_prob_from_mean(&mean, action))
    }

    /// Log density given a precomputed mean (hot path for batch reuse).
    pub fn log_prob_from_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        debug_assert_eq!(mean.len(), action.len());
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum()
    }

    /// All parameters: mean net in layer order, then the log stds.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = self.mean_net.flat_params();
        flat.extend_from_slice(&self.log_std);
        flat
    }

    pub fn param_count(&self) -> usize {
        self.mean_net.param_count() + self.log_std.len()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("policy flat params", self.param_count(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault("non-finite policy parameters".into()));
        }
        let split = self.mean_net.param_count();
        self.mean_net.set_flat_params(&flat[..split])?;
        self.log_std = flat[split..].to_vec();
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = CheckpointWriter::new(ArtifactKind::Policy);
        w.push_net(&self.mean_net);
        w.push_f64_slice(&self.log_std);
        w.push_f64(self.action_bound);
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = CheckpointReader::open(path, ArtifactKind::Policy)?;
        let mean_net = r.read_net()?;
        let log_std = r.read_f64_vec()?;
        let action_bound = r.read_f64()?;
        r.finish()?;
        if log_std.len() != mean_net.out_dim() {
            return Err(Error::Checkpoint(format!(
                "log_std width {} does not match action dimension {}",
                log_std.len(),
                mean_net.out_dim()
            )));
        }
        if !(action_bound > 0.0) {
            return Err(Error::Checkpoint("non-positive action bound".into()));
        }
        Ok(GaussianPolicy {
            mean_net,
            log_std,
            action_bound,
        })
    }
}

/// State-value estimator: two tanh hidden layers onto a scalar, trained by
/// full-batch mean-squared-error gradient steps.
#[derive(Debug, Clone)]
pub struct ValueCritic {
    net: MlpNet,
    opt: OptimizerState,
}

impl ValueCritic {
    pub fn new(state_dim: usize, hidden: usize, lr: f64, seed: u64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid("critic learning rate must be positive".into()));
        }
        let net = MlpNet::new(&[state_dim, hidden, hidden, 1], child_seed(seed, "critic"))?;
        let opt = OptimizerState::sgd(lr, &net);
        Ok(ValueCritic { net, opt })
    }

    pub fn state_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward(state)?[0])
    }

    pub fn values(&self, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        states.iter().map(|s| self.value(s)).collect()
    }

    /// Runs `iters` full-batch gradient steps on the mean squared error
    /// against `targets`; returns the pre-update loss.
    pub fn update(&mut self, states: &[Vec<f64>], targets: &[f64], iters: usize) -> Result<f64> {
        if states.is_empty() || states.len() != targets.len() {
            return Err(Error::shape("critic batch", states.len(), targets.len()));
        }
        let n = states.len() as f64;
        let mut first_loss = 0.0;
        for it in 0..iters {
            let mut grads = GradientSet::zeros_like(&self.net);
            let mut loss = 0.0;
            for (s, t) in states.iter().zip(targets) {
                let acts = self.net.activations(s)?;
                let v = acts.last().unwrap()[0];
                let err = v - t;
                loss += err * err / n;
                self.net
                    .backward_from_acts(&acts, &[2.0 * err / n], &mut grads)?;
            }
            if it == 0 {
                first_loss = loss;
            }
            optimizer_step(&mut self.net, &mut self.opt, &grads)?;
        }
        Ok(first_loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = CheckpointWriter::new(ArtifactKind::Critic);
        w.push_net(&self.net);
        w.push_f64(self.opt.lr());
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = CheckpointReader::open(path, ArtifactKind::Critic)?;
        let net = r.read_net()?;
        let lr = r.read_f64()?;
        r.finish()?;
        if !(lr > 0.0) {
            return Err(Error::Checkpoint("non-positive critic learning rate".into()));
        }
        let opt = OptimizerState::sgd(lr, &net);
        Ok(ValueCritic { net, opt })
    }
}

/// Behavioral cloning: adam minibatch steps that pull the policy mean
/// toward demonstration actions (the log stds stay frozen, making this
/// squared-error regression equivalent to likelihood ascent). Returns the
/// (first, last) minibatch losses; `iters = 0` leaves the policy
/// untouched.
pub fn bc_pretrain(
    policy: &mut GaussianPolicy,
    demos: &DemonstrationSet,
    iters: usize,
    lr: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    const MINIBATCH: usize = 128;
    let pairs = demos.all_pairs();
    if pairs.is_empty() {
        return Err(Error::Demos("behavioral cloning needs demonstrations".into()));
    }
    if iters == 0 {
        return Ok((0.0, 0.0));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Invalid("cloning learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, "bc"));
    let mut opt = OptimizerState::adam(lr, policy.mean_net());
    let mut first = 0.0;
    let mut last = 0.0;
    for it in 0..iters {
        let mut grads = GradientSet::zeros_like(policy.mean_net());
        let mut loss = 0.0;
        let scale = 1.0 / MINIBATCH as f64;
        for _ in 0..MINIBATCH {
            let (s, a) = pairs[rng.gen_range(0..pairs.len())];
            let acts = policy.mean_net().activations(s)?;
            let mean = acts.last().unwrap();
            let upstream: Vec<f64> = mean
                .iter()
                .zip(a)
                .map(|(m, av)| 2.0 * (m - av) * scale)
                .collect();
            loss += mean
                .iter()
                .zip(a)
                .map(|(m, av)| (m - av) * (m - av))
                .sum::<f64>()
                * scale;
            policy
                .mean_net()
                .backward_from_acts(&acts, &upstream, &mut grads)?;
        }
        optimizer_step(policy.mean_net_mut(), &mut opt, &grads)?;
        if it == 0 {
            first = loss;
        }
        last = loss;
    }
    Ok((first, last))
}
