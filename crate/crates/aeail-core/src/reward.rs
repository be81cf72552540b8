//! Reward models scored against demonstrations.
//!
//! The main family trains an auto-encoder adversarially: reconstruction
//! error is driven down on demonstration pairs and up on policy-generated
//! pairs, and the pseudo-reward is a decreasing transform of that error.
//! Variants differ in the transform and the regularizer. Two
//! discriminator baselines and a stationary greedy-transport baseline
//! share the same interface, and any model can run on absorbing-state
//! augmented trajectories.
//!
//! Model inputs are normalized per feature (demo statistics); squared
//! reconstruction errors are always taken against the raw features. The
//! absorbing flag, when present, bypasses normalization.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{ArtifactKind, CheckpointReader, CheckpointWriter};
use crate::demos::{standard_normal, DemonstrationSet, FeatureNormalizer, Trajectory};
use crate::env::EnvSpec;
use crate::net::{optimizer_step, Activation, GradientSet, MlpNet, OptimizerState};
use crate::{child_seed, Error, Result};

/// Reconstruction errors are floored here before the log-based transform,
/// which diverges at zero.
pub const JS_ERROR_FLOOR: f64 = 1e-6;

/// Which reward function a model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// Auto-encoder error through `1 / (1 + err)`.
    AeW,
    /// Auto-encoder error through `-log(1 - exp(-err))`.
    AeJs,
    /// Variational auto-encoder with a KL-regularized adversarial loss.
    Vae,
    /// Discriminator with the saturating log reward.
    DiscJsd,
    /// Discriminator with the exponentially tilted reward.
    DiscFkld,
    /// Stationary greedy-transport reward against demo atoms.
    Got,
}

impl RewardKind {
    pub const ALL: [RewardKind; 6] = [
        RewardKind::AeW,
        RewardKind::AeJs,
        RewardKind::Vae,
        RewardKind::DiscJsd,
        RewardKind::DiscFkld,
        RewardKind::Got,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::AeW => "ae_w",
            RewardKind::AeJs => "ae_js",
            RewardKind::Vae => "vae",
            RewardKind::DiscJsd => "disc_jsd",
            RewardKind::DiscFkld => "disc_fkld",
            RewardKind::Got => "got",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward model '{s}'")))
    }

    /// Parameters are clamped after every step only for the auto-encoder
    /// family, which keeps those rewards Lipschitz.
    fn clips_params(self) -> bool {
        matches!(self, RewardKind::AeW | RewardKind::AeJs | RewardKind::Vae)
    }
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Pure transforms.

/// Reward `1 / (1 + err)`: 1 at perfect reconstruction, decreasing in err.
pub fn reward_from_error_w(err: f64) -> f64 {
    1.0 / (1.0 + err)
}

/// Reward `-log(1 - exp(-err))` with the error floored at
/// [`JS_ERROR_FLOOR`]. Diverges as err approaches 0, hence the floor.
pub fn reward_from_error_js(err: f64) -> f64 {
    let e = err.max(JS_ERROR_FLOOR);
    -(-(-e).exp()).ln_1p()
}

/// Numerically stable `log(1 + exp(z))`.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Discriminator reward `-log(1 - sigmoid(logit))`, written stably.
pub fn disc_reward_jsd(logit: f64) -> f64 {
    softplus(logit)
}

/// Discriminator reward `exp(l) * (-l)` where `l` is the log-odds, which
/// for a sigmoid head is the logit itself.
pub fn disc_reward_fkld(logit: f64) -> f64 {
    logit.exp() * (-logit)
}

/// KL divergence from a diagonal Gaussian `N(mu, exp(logvar))` to the unit
/// Gaussian: `0.5 * sum(mu^2 + exp(lv) - 1 - lv)`. Zero iff the posterior
/// equals the prior.
pub fn gaussian_kl_to_prior(mu: &[f64], logvar: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), logvar.len());
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Feature layout.

/// Maps raw feature rows `[state, (absorbing flag,) action]` to model
/// inputs. State and action features are normalized with demonstration
/// statistics; the absorbing flag passes through untouched so its 0/1
/// coding survives (a fitted std would blow a near-constant flag up by
/// orders of magnitude).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    normalizer: FeatureNormalizer,
    state_dim: usize,
    action_dim: usize,
    absorbing: bool,
}

impl FeatureMap {
    pub fn new(
        normalizer: FeatureNormalizer,
        state_dim: usize,
        action_dim: usize,
        absorbing: bool,
    ) -> Result<Self> {
        if normalizer.dim() != state_dim + action_dim {
            return Err(Error::shape(
                "feature normalizer width",
                state_dim + action_dim,
                normalizer.dim(),
            ));
        }
        Ok(FeatureMap {
            normalizer,
            state_dim,
            action_dim,
            absorbing,
        })
    }

    pub fn normalizer(&self) -> &FeatureNormalizer {
        &self.normalizer
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn absorbing(&self) -> bool {
        self.absorbing
    }

    /// Width of both the raw rows and the model input.
    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim + usize::from(self.absorbing)
    }

    /// Concatenates a (state, action) pair into a raw feature row. With
    /// absorbing layout the state already carries its flag.
    pub fn pair_row(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let expect_state = self.state_dim + usize::from(self.absorbing);
        if state.len() != expect_state {
            return Err(Error::shape("pair state", expect_state, state.len()));
        }
        if action.len() != self.action_dim {
            return Err(Error::shape("pair action", self.action_dim, action.len()));
        }
        let mut row = Vec::with_capacity(self.input_dim());
        row.extend_from_slice(state);
        row.extend_from_slice(action);
        Ok(row)
    }

    /// Normalizes a raw row into a model input, leaving the flag raw.
    pub fn model_input_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.input_dim() {
            return Err(Error::shape("reward feature row", self.input_dim(), row.len()));
        }
        let (mean, std) = (&self.normalizer.mean, &self.normalizer.std);
        let mut out = Vec::with_capacity(row.len());
        if self.absorbing {
            for i in 0..self.state_dim {
                out.push((row[i] - mean[i]) / std[i]);
            }
            out.push(row[self.state_dim]);
            for j in 0..self.action_dim {
                let k = self.state_dim + j;
                out.push((row[k + 1] - mean[k]) / std[k]);
            }
        } else {
            for i in 0..row.len() {
                out.push((row[i] - mean[i]) / std[i]);
            }
        }
        Ok(out)
    }
}

/// Raw feature rows for every transition of a trajectory.
pub fn trajectory_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.pairs()
        .map(|(s, a)| {
            let mut row = Vec::with_capacity(s.len() + a.len());
            row.extend_from_slice(s);
            row.extend_from_slice(a);
            row
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Absorbing-state augmentation.

/// Appends an absorbing flag to every state (0 while live). A terminated
/// trajectory keeps its terminal state with flag 1 and is padded to the
/// horizon with self-loop transitions of zero action, and its done marker
/// is cleared so the padded tail is treated as ordinary experience.
/// [`asw_strip`] inverts this exactly.
pub fn asw_augment(traj: &Trajectory, horizon: usize) -> Result<Trajectory> {
    if traj.is_empty() {
        return Err(Error::Invalid("cannot augment an empty trajectory".into()));
    }
    if traj.len() > horizon {
        return Err(Error::Invalid(format!(
            "trajectory of {} steps exceeds horizon {horizon}",
            traj.len()
        )));
    }
    let t_len = traj.len();
    let terminated = traj.terminated();
    let action_dim = traj.actions[0].len();
    let flagged = |s: &[f64], flag: f64| {
        let mut out = Vec::with_capacity(s.len() + 1);
        out.extend_from_slice(s);
        out.push(flag);
        out
    };

    let mut states: Vec<Vec<f64>> = traj.states[..t_len].iter().map(|s| flagged(s, 0.0)).collect();
    states.push(flagged(&traj.states[t_len], if terminated { 1.0 } else { 0.0 }));
    let mut actions = traj.actions.clone();
    let mut dones = if terminated { vec![false; t_len] } else { traj.dones.clone() };
    let mut true_rewards = traj.true_rewards.clone();
    if terminated {
        let absorbing = states[t_len].clone();
        for _ in t_len..horizon {
            states.push(absorbing.clone());
            actions.push(vec![0.0; action_dim]);
            dones.push(false);
            if let Some(r) = &mut true_rewards {
                r.push(0.0);
            }
        }
    }
    Ok(Trajectory {
        states,
        actions,
        dones,
        true_rewards,
    })
}

/// Inverse of [`asw_augment`]: drops the flag feature, removes absorbing
/// padding, and restores the done marker on the terminal transition.
pub fn asw_strip(traj: &Trajectory) -> Result<Trajectory> {
    if traj.is_empty() {
        return Err(Error::Invalid("cannot strip an empty trajectory".into()));
    }
    let flags: Vec<f64> = traj
        .states
        .iter()
        .map(|s| *s.last().expect("augmented states are non-empty"))
        .collect();
    if flags.iter().any(|f| *f != 0.0 && *f != 1.0) {
        return Err(Error::Invalid("absorbing flags must be exactly 0 or 1".into()));
    }
    let first_absorbing = flags.iter().position(|f| *f == 1.0);
    if let Some(k) = first_absorbing {
        if k == 0 {
            return Err(Error::Invalid("initial state cannot be absorbing".into()));
        }
        if flags[k..].iter().any(|f| *f == 0.0) {
            return Err(Error::Invalid("live state found after absorbing padding".into()));
        }
    }
    let last_live = first_absorbing.unwrap_or(traj.states.len() - 1);
    let states: Vec<Vec<f64>> = traj.states[..=last_live]
        .iter()
        .map(|s| s[..s.len() - 1].to_vec())
        .collect();
    let actions = traj.actions[..last_live].to_vec();
    let mut dones = traj.dones[..last_live].to_vec();
    if first_absorbing.is_some() {
        dones[last_live - 1] = true;
    }
    let true_rewards = traj.true_rewards.as_ref().map(|r| r[..last_live].to_vec());
    Ok(Trajectory {
        states,
        actions,
        dones,
        true_rewards,
    })
}

// ---------------------------------------------------------------------------
// Model bodies.

/// Encoder-decoder pair. The encoder output is the (tanh-bounded) feature
/// layer; the decoder maps it back to the raw feature scale.
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub enc: MlpNet,
    pub dec: MlpNet,
}

impl AutoEncoder {
    fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut enc = MlpNet::new(&[input_dim, hidden], child_seed(seed, "enc"))?;
        enc.set_output_activation(Activation::Tanh);
        let dec = MlpNet::new(&[hidden, hidden, input_dim], child_seed(seed, "dec"))?;
        Ok(AutoEncoder { enc, dec })
    }

    /// Squared reconstruction error of a normalized input against its raw
    /// target.
    fn error_parts(&self, input: &[f64], target: &[f64]) -> Result<f64> {
        let code = self.enc.forward(input)?;
        let recon = self.dec.forward(&code)?;
        Ok(squared_error(&recon, target))
    }
}

/// Gaussian-posterior auto-encoder. Both heads are tanh-bounded, which
/// keeps the KL term finite under the adversarial pressure to inflate it.
#[derive(Debug, Clone)]
pub struct VariationalAutoEncoder {
    pub enc_mean: MlpNet,
    pub enc_logvar: MlpNet,
    pub dec: MlpNet,
}

impl VariationalAutoEncoder {
    fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut enc_mean = MlpNet::new(&[input_dim, hidden], child_seed(seed, "enc_mean"))?;
        enc_mean.set_output_activation(Activation::Tanh);
        let mut enc_logvar = MlpNet::new(&[input_dim, hidden], child_seed(seed, "enc_logvar"))?;
        enc_logvar.set_output_activation(Activation::Tanh);
        let dec = MlpNet::new(&[hidden, hidden, input_dim], child_seed(seed, "dec"))?;
        Ok(VariationalAutoEncoder {
            enc_mean,
            enc_logvar,
            dec,
        })
    }

    /// Posterior-mean reconstruction error (no sampling).
    fn error_parts(&self, input: &[f64], target: &[f64]) -> Result<f64> {
        let mu = self.enc_mean.forward(input)?;
        let recon = self.dec.forward(&mu)?;
        Ok(squared_error(&recon, target))
    }
}

/// Single-logit classifier over feature rows.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: MlpNet,
}

impl Discriminator {
    fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let net = MlpNet::new(&[input_dim, hidden, hidden, 1], child_seed(seed, "disc"))?;
        Ok(Discriminator { net })
    }

    fn logit(&self, input: &[f64]) -> Result<f64> {
        Ok(self.net.forward(input)?[0])
    }
}

/// Stationary greedy-transport reward. Demonstration pairs become atoms of
/// weight `1/n_atoms`; each policy step greedily consumes `1/horizon` of
/// mass from the nearest remaining atoms and is paid `alpha *
/// exp(-beta * cost / (1/horizon))`.
#[derive(Debug, Clone)]
pub struct GotReward {
    atoms: Vec<Vec<f64>>,
    atom_weight: f64,
    step_weight: f64,
    alpha: f64,
    beta: f64,
}

/// Per-episode record of unconsumed atom mass. Fresh at every episode
/// start.
#[derive(Debug, Clone)]
pub struct GotLedger {
    remaining: Vec<f64>,
}

impl GotLedger {
    pub fn total_remaining(&self) -> f64 {
        self.remaining.iter().sum()
    }

    /// Unconsumed mass per atom, in atom order.
    pub fn remaining(&self) -> &[f64] {
        &self.remaining
    }
}

impl GotReward {
    pub fn from_atoms(atoms: Vec<Vec<f64>>, horizon: usize, alpha: f64, beta: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Invalid("transport reward needs at least one atom".into()));
        }
        if horizon == 0 {
            return Err(Error::Invalid("transport reward needs a positive horizon".into()));
        }
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::Invalid("transport scale and decay must be positive".into()));
        }
        let dim = atoms[0].len();
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::Invalid("transport atoms must share one width".into()));
        }
        let atom_weight = 1.0 / atoms.len() as f64;
        Ok(GotReward {
            atoms,
            atom_weight,
            step_weight: 1.0 / horizon as f64,
            alpha,
            beta,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn ledger(&self) -> GotLedger {
        GotLedger {
            remaining: vec![self.atom_weight; self.atoms.len()],
        }
    }

    /// One greedy step: consumes `1/horizon` of mass from the nearest
    /// remaining atoms (ties break toward the lowest atom index) and
    /// returns the exponentially decayed reward. A ledger too empty to
    /// fill the quota pays zero, and every later step does too.
    pub fn step_reward(&self, ledger: &mut GotLedger, features: &[f64]) -> Result<f64> {
        if features.len() != self.atoms[0].len() {
            return Err(Error::shape("transport features", self.atoms[0].len(), features.len()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault("non-finite transport features".into()));
        }
        let mut need = self.step_weight;
        let mut cost = 0.0;
        while need > 0.0 {
            let mut best: Option<(usize, f64)> = None;
            for (i, atom) in self.atoms.iter().enumerate() {
                if ledger.remaining[i] <= 0.0 {
                    continue;
                }
                let d = euclidean(features, atom);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            let Some((i, d)) = best else {
                return Ok(0.0);
            };
            let take = need.min(ledger.remaining[i]);
            ledger.remaining[i] -= take;
            cost += take * d;
            need -= take;
        }
        Ok(self.alpha * (-self.beta * cost / self.step_weight).exp())
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn squared_error(got: &[f64], want: &[f64]) -> f64 {
    debug_assert_eq!(got.len(), want.len());
    got.iter().zip(want).map(|(g, w)| (g - w) * (g - w)).sum()
}

// ---------------------------------------------------------------------------
// The unified model.

#[derive(Debug, Clone)]
enum Body {
    Ae(AutoEncoder),
    Vae(VariationalAutoEncoder),
    Disc(Discriminator),
    Got(GotReward),
}

impl Body {
    fn nets(&self) -> Vec<&MlpNet> {
        match self {
            Body::Ae(ae) => vec![&ae.enc, &ae.dec],
            Body::Vae(v) => vec![&v.enc_mean, &v.enc_logvar, &v.dec],
            Body::Disc(d) => vec![&d.net],
            Body::Got(_) => vec![],
        }
    }

    fn nets_mut(&mut self) -> Vec<&mut MlpNet> {
        match self {
            Body::Ae(ae) => vec![&mut ae.enc, &mut ae.dec],
            Body::Vae(v) => vec![&mut v.enc_mean, &mut v.enc_logvar, &mut v.dec],
            Body::Disc(d) => vec![&mut d.net],
            Body::Got(_) => vec![],
        }
    }
}

/// Construction knobs for [`RewardModel`].
#[derive(Debug, Clone)]
pub struct RewardSettings {
    pub kind: RewardKind,
    pub absorbing: bool,
    pub hidden: usize,
    pub lr: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub got_alpha: f64,
    pub got_beta: f64,
    pub horizon: usize,
}

impl RewardSettings {
    pub fn new(kind: RewardKind) -> Self {
        RewardSettings {
            kind,
            absorbing: false,
            hidden: 100,
            lr: 3e-4,
            clip_lo: -0.99,
            clip_hi: 0.99,
            got_alpha: 5.0,
            got_beta: 5.0,
            horizon: crate::env::DEFAULT_HORIZON,
        }
    }
}

/// Per-step monitoring numbers from a reward update, computed at the
/// pre-step parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardStepStats {
    pub loss: f64,
    pub expert_reward_mean: f64,
    pub generated_reward_mean: f64,
}

/// A reward function over feature rows, trainable for all kinds except
/// the stationary transport baseline.
#[derive(Debug, Clone)]
pub struct RewardModel {
    kind: RewardKind,
    features: FeatureMap,
    body: Body,
    clip_lo: f64,
    clip_hi: f64,
    lr: f64,
    opts: Vec<OptimizerState>,
    vae_rng: ChaCha8Rng,
}

impl RewardModel {
    /// Builds a model against a demonstration set: the feature normalizer
    /// comes from the demos, and the transport baseline takes its atoms
    /// from them.
    pub fn new(
        settings: &RewardSettings,
        spec: &EnvSpec,
        demos: &DemonstrationSet,
        seed: u64,
    ) -> Result<Self> {
        let features = FeatureMap::new(
            demos.normalizer.clone(),
            spec.state_dim,
            spec.action_dim,
            settings.absorbing,
        )?;
        if settings.kind == RewardKind::Got {
            let mut atoms = Vec::new();
            for traj in &demos.trajectories {
                let t = if settings.absorbing {
                    asw_augment(traj, settings.horizon)?
                } else {
                    traj.clone()
                };
                for row in trajectory_rows(&t) {
                    atoms.push(features.model_input_row(&row)?);
                }
            }
            let got = GotReward::from_atoms(
                atoms,
                settings.horizon,
                settings.got_alpha,
                settings.got_beta,
            )?;
            return Self::assemble(settings, features, Body::Got(got), seed);
        }
        Self::with_feature_map(settings, features, seed)
    }

    /// Builds a trainable model over an explicit feature layout. The
    /// transport baseline cannot be built this way (it needs demo atoms).
    pub fn with_feature_map(
        settings: &RewardSettings,
        features: FeatureMap,
        seed: u64,
    ) -> Result<Self> {
        let input_dim = features.input_dim();
        let body = match settings.kind {
            RewardKind::AeW | RewardKind::AeJs => {
                Body::Ae(AutoEncoder::new(input_dim, settings.hidden, seed)?)
            }
            RewardKind::Vae => Body::Vae(VariationalAutoEncoder::new(
                input_dim,
                settings.hidden,
                seed,
            )?),
            RewardKind::DiscJsd | RewardKind::DiscFkld => {
                Body::Disc(Discriminator::new(input_dim, settings.hidden, seed)?)
            }
            RewardKind::Got => {
                return Err(Error::Invalid(
                    "the transport reward is built from demonstrations".into(),
                ))
            }
        };
        Self::assemble(settings, features, body, seed)
    }

    fn assemble(
        settings: &RewardSettings,
        features: FeatureMap,
        body: Body,
        seed: u64,
    ) -> Result<Self> {
        if settings.clip_lo > settings.clip_hi {
            return Err(Error::Invalid("empty parameter clip range".into()));
        }
        if !(settings.lr > 0.0 && settings.lr.is_finite()) {
            return Err(Error::Invalid("reward learning rate must be positive".into()));
        }
        let opts = body
            .nets()
            .iter()
            .map(|net| OptimizerState::adam(settings.lr, net))
            .collect();
        Ok(RewardModel {
            kind: settings.kind,
            features,
            body,
            clip_lo: settings.clip_lo,
            clip_hi: settings.clip_hi,
            lr: settings.lr,
            opts,
            vae_rng: ChaCha8Rng::seed_from_u64(child_seed(seed, "vae")),
        })
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn input_dim(&self) -> usize {
        self.features.input_dim()
    }

    /// True for the transport baseline, which has no parameters to train.
    pub fn is_stationary(&self) -> bool {
        matches!(self.body, Body::Got(_))
    }

    pub fn got(&self) -> Option<&GotReward> {
        match &self.body {
            Body::Got(g) => Some(g),
            _ => None,
        }
    }

    /// Swaps every optimizer for plain gradient descent at `lr`.
    pub fn use_sgd(&mut self, lr: f64) {
        self.opts = self
            .body
            .nets()
            .iter()
            .map(|net| OptimizerState::sgd(lr, net))
            .collect();
    }

    /// Zeroes every parameter. Useful as a known-output baseline: a zeroed
    /// model reconstructs everything to the zero vector.
    pub fn zero_params(&mut self) {
        for net in self.body.nets_mut() {
            net.clip_params(0.0, 0.0);
        }
    }

    pub fn max_abs_param(&self) -> f64 {
        self.body
            .nets()
            .iter()
            .map(|n| n.max_abs_param())
            .fold(0.0, f64::max)
    }

    /// All parameters, nets concatenated in a fixed order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.body.nets().iter().flat_map(|n| n.flat_params()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.body.nets().iter().map(|n| n.param_count()).sum();
        if flat.len() != total {
            return Err(Error::shape("reward flat params", total, flat.len()));
        }
        let mut offset = 0;
        for net in self.body.nets_mut() {
            let n = net.param_count();
            net.set_flat_params(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    /// Squared reconstruction error of a raw feature row (auto-encoder
    /// kinds only; the variational model reconstructs from its posterior
    /// mean).
    pub fn reconstruction_error(&self, row: &[f64]) -> Result<f64> {
        let input = self.features.model_input_row(row)?;
        match &self.body {
            Body::Ae(ae) => ae.error_parts(&input, row),
            Body::Vae(v) => v.error_parts(&input, row),
            _ => Err(Error::Invalid(format!(
                "{} has no reconstruction error",
                self.kind
            ))),
        }
    }

    /// Reward of a single raw feature row. The transport baseline is
    /// episode-contextual and rejects this; use [`Self::trajectory_rewards`].
    pub fn row_reward(&self, row: &[f64]) -> Result<f64> {
        match &self.body {
            Body::Ae(_) | Body::Vae(_) => {
                let err = self.reconstruction_error(row)?;
                Ok(match self.kind {
                    RewardKind::AeJs => reward_from_error_js(err),
                    _ => reward_from_error_w(err),
                })
            }
            Body::Disc(d) => {
                let input = self.features.model_input_row(row)?;
                let logit = d.logit(&input)?;
                Ok(match self.kind {
                    RewardKind::DiscFkld => disc_reward_fkld(logit),
                    _ => disc_reward_jsd(logit),
                })
            }
            Body::Got(_) => Err(Error::Invalid(
                "transport rewards are episode-contextual; use trajectory_rewards".into(),
            )),
        }
    }

    /// Rewards for one episode's raw rows, in step order. For the
    /// transport baseline this runs a fresh ledger over the episode.
    pub fn trajectory_rewards(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        match &self.body {
            Body::Got(g) => {
                let mut ledger = g.ledger();
                rows.iter()
                    .map(|row| {
                        let input = self.features.model_input_row(row)?;
                        g.step_reward(&mut ledger, &input)
                    })
                    .collect()
            }
            _ => rows.iter().map(|row| self.row_reward(row)).collect(),
        }
    }

    /// Feature-layer activations (first hidden layer) per row. Defined for
    /// the learned models only.
    pub fn latent_activations(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                let input = self.features.model_input_row(row)?;
                match &self.body {
                    Body::Ae(ae) => ae.enc.forward(&input),
                    Body::Vae(v) => v.enc_mean.forward(&input),
                    Body::Disc(d) => Ok(d.net.activations(&input)?[1].clone()),
                    Body::Got(_) => Err(Error::Invalid(
                        "the transport baseline has no feature layer".into(),
                    )),
                }
            })
            .collect()
    }

    /// Adversarial loss at the current parameters, without stepping.
    /// `noise_seed` fixes the variational model's reparameterization draws
    /// (ignored by the other kinds), so finite-difference probes see a
    /// deterministic function.
    pub fn loss_with_seed(
        &self,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
        noise_seed: u64,
    ) -> Result<f64> {
        Ok(self.loss_and_grads(expert_rows, gen_rows, noise_seed)?.0.loss)
    }

    /// Flat parameter gradient of the loss, matching
    /// [`Self::flat_params`] order.
    pub fn grad_flat_with_seed(
        &self,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
        noise_seed: u64,
    ) -> Result<Vec<f64>> {
        let (_, grads) = self.loss_and_grads(expert_rows, gen_rows, noise_seed)?;
        Ok(grads.iter().flat_map(GradientSet::flatten).collect())
    }

    /// One adversarial training step: gradient step on the loss, then (for
    /// the auto-encoder family) parameter clipping. Returns pre-step
    /// monitoring stats.
    pub fn update_step(
        &mut self,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
    ) -> Result<RewardStepStats> {
        if self.is_stationary() {
            return Err(Error::Invalid(
                "the stationary transport reward has no update step".into(),
            ));
        }
        let noise_seed = if self.kind == RewardKind::Vae {
            self.vae_rng.gen::<u64>()
        } else {
            0
        };
        let (stats, grads) = self.loss_and_grads(expert_rows, gen_rows, noise_seed)?;
        for ((net, opt), g) in self
            .body
            .nets_mut()
            .into_iter()
            .zip(self.opts.iter_mut())
            .zip(&grads)
        {
            optimizer_step(net, opt, g)?;
        }
        if self.kind.clips_params() {
            for net in self.body.nets_mut() {
                net.clip_params(self.clip_lo, self.clip_hi);
            }
        }
        Ok(stats)
    }

    fn check_batches(expert: &[Vec<f64>], gen: &[Vec<f64>]) -> Result<()> {
        if expert.is_empty() || gen.is_empty() {
            return Err(Error::Invalid("reward loss needs non-empty batches".into()));
        }
        if expert.len() != gen.len() {
            return Err(Error::shape("reward batch sizes", expert.len(), gen.len()));
        }
        Ok(())
    }

    /// Loss, monitoring stats, and parameter gradients in one pass.
    fn loss_and_grads(
        &self,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
        noise_seed: u64,
    ) -> Result<(RewardStepStats, Vec<GradientSet>)> {
        Self::check_batches(expert_rows, gen_rows)?;
        match &self.body {
            Body::Ae(ae) => self.ae_loss_and_grads(ae, expert_rows, gen_rows),
            Body::Vae(v) => self.vae_loss_and_grads(v, expert_rows, gen_rows, noise_seed),
            Body::Disc(d) => self.disc_loss_and_grads(d, expert_rows, gen_rows),
            Body::Got(_) => Err(Error::Invalid(
                "the stationary transport reward has no loss".into(),
            )),
        }
    }

    /// Auto-encoder adversarial loss.
    ///
    /// Plain kind: `L = E_gen[1/(1+err)] - E_exp[1/(1+err)]`, pushing
    /// generated errors up and expert errors down.
    /// Log kind: `L = E_exp[err] - E_gen[log(1 - exp(-err))]`, same
    /// directions through the floored transform.
    fn ae_loss_and_grads(
        &self,
        ae: &AutoEncoder,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
    ) -> Result<(RewardStepStats, Vec<GradientSet>)> {
        let n = expert_rows.len() as f64;
        let mut g_enc = GradientSet::zeros_like(&ae.enc);
        let mut g_dec = GradientSet::zeros_like(&ae.dec);
        let mut term_sums = [0.0, 0.0];
        let mut reward_sums = [0.0, 0.0];
        for (which, rows) in [expert_rows, gen_rows].into_iter().enumerate() {
            let is_gen = which == 1;
            for row in rows {
                let input = self.features.model_input_row(row)?;
                let acts_e = ae.enc.activations(&input)?;
                let acts_d = ae.dec.activations(acts_e.last().unwrap())?;
                let recon = acts_d.last().unwrap();
                let err_vec: Vec<f64> = recon.iter().zip(row).map(|(r, y)| r - y).collect();
                let err: f64 = err_vec.iter().map(|e| e * e).sum();

                reward_sums[which] += match self.kind {
                    RewardKind::AeJs => reward_from_error_js(err),
                    _ => reward_from_error_w(err),
                };
                let (term, dl_derr) = match (self.kind, is_gen) {
                    (RewardKind::AeJs, false) => {
                        let grad = if err > JS_ERROR_FLOOR { 1.0 / n } else { 0.0 };
                        (err.max(JS_ERROR_FLOOR), grad)
                    }
                    (RewardKind::AeJs, true) => {
                        let e = err.max(JS_ERROR_FLOOR);
                        let grad = if err > JS_ERROR_FLOOR {
                            -e.exp_m1().recip() / n
                        } else {
                            0.0
                        };
                        (reward_from_error_js(err), grad)
                    }
                    (_, is_gen) => {
                        let sign = if is_gen { 1.0 } else { -1.0 };
                        let r = reward_from_error_w(err);
                        (r, -sign * r * r / n)
                    }
                };
                term_sums[which] += term;
                let upstream: Vec<f64> = err_vec.iter().map(|e| 2.0 * e * dl_derr).collect();
                let d_code = ae.dec.backward_from_acts(&acts_d, &upstream, &mut g_dec)?;
                ae.enc.backward_from_acts(&acts_e, &d_code, &mut g_enc)?;
            }
        }
        // Combining per-batch sums at the end makes identical batches
        // cancel exactly under the symmetric objective.
        let loss = match self.kind {
            RewardKind::AeJs => (term_sums[0] + term_sums[1]) / n,
            _ => (term_sums[1] - term_sums[0]) / n,
        };
        let stats = RewardStepStats {
            loss,
            expert_reward_mean: reward_sums[0] / n,
            generated_reward_mean: reward_sums[1] / n,
        };
        Ok((stats, vec![g_enc, g_dec]))
    }

    /// Variational adversarial loss with one reparameterized sample per
    /// row: `L = E_gen[r - KL] - E_exp[r - KL]` where `r = 1/(1+err(z))`.
    /// Minimizing drives expert rewards up with a tight posterior, and
    /// generated rewards down with an inflated one. Both batches reuse the
    /// same noise stream, so identical batches cancel exactly.
    fn vae_loss_and_grads(
        &self,
        v: &VariationalAutoEncoder,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
        noise_seed: u64,
    ) -> Result<(RewardStepStats, Vec<GradientSet>)> {
        let n = expert_rows.len() as f64;
        let mut g_mean = GradientSet::zeros_like(&v.enc_mean);
        let mut g_logvar = GradientSet::zeros_like(&v.enc_logvar);
        let mut g_dec = GradientSet::zeros_like(&v.dec);
        let mut term_sums = [0.0, 0.0];
        let mut reward_sums = [0.0, 0.0];
        for (which, rows) in [expert_rows, gen_rows].into_iter().enumerate() {
            let sign = if which == 1 { 1.0 } else { -1.0 };
            let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
            for row in rows {
                let input = self.features.model_input_row(row)?;
                let acts_m = v.enc_mean.activations(&input)?;
                let acts_v = v.enc_logvar.activations(&input)?;
                let mu = acts_m.last().unwrap();
                let lv = acts_v.last().unwrap();
                let z: Vec<f64> = mu
                    .iter()
                    .zip(lv)
                    .map(|(m, l)| m + (0.5 * l).exp() * standard_normal(&mut noise))
                    .collect();
                let acts_d = v.dec.activations(&z)?;
                let recon = acts_d.last().unwrap();
                let err_vec: Vec<f64> = recon.iter().zip(row).map(|(r, y)| r - y).collect();
                let err: f64 = err_vec.iter().map(|e| e * e).sum();
                let r = reward_from_error_w(err);
                let kl = gaussian_kl_to_prior(mu, lv);
                term_sums[which] += r - kl;
                reward_sums[which] += reward_from_error_w(v.error_parts(&input, row)?);

                let dl_derr = -sign * r * r / n;
                let upstream: Vec<f64> = err_vec.iter().map(|e| 2.0 * e * dl_derr).collect();
                let d_z = v.dec.backward_from_acts(&acts_d, &upstream, &mut g_dec)?;
                let dl_dkl = -sign / n;
                let d_mu: Vec<f64> = d_z
                    .iter()
                    .zip(mu)
                    .map(|(dz, m)| dz + dl_dkl * m)
                    .collect();
                let d_lv: Vec<f64> = d_z
                    .iter()
                    .zip(z.iter().zip(mu.iter().zip(lv)))
                    .map(|(dz, (zj, (m, l)))| {
                        dz * 0.5 * (zj - m) + dl_dkl * 0.5 * l.exp_m1()
                    })
                    .collect();
                v.enc_mean.backward_from_acts(&acts_m, &d_mu, &mut g_mean)?;
                v.enc_logvar.backward_from_acts(&acts_v, &d_lv, &mut g_logvar)?;
            }
        }
        let stats = RewardStepStats {
            loss: (term_sums[1] - term_sums[0]) / n,
            expert_reward_mean: reward_sums[0] / n,
            generated_reward_mean: reward_sums[1] / n,
        };
        Ok((stats, vec![g_mean, g_logvar, g_dec]))
    }

    /// Binary cross-entropy over the pooled batches, demonstrations
    /// labeled 1. The reward transform depends on the kind and does not
    /// enter the loss.
    fn disc_loss_and_grads(
        &self,
        d: &Discriminator,
        expert_rows: &[Vec<f64>],
        gen_rows: &[Vec<f64>],
    ) -> Result<(RewardStepStats, Vec<GradientSet>)> {
        let n = expert_rows.len() as f64;
        let total = (expert_rows.len() + gen_rows.len()) as f64;
        let mut g_net = GradientSet::zeros_like(&d.net);
        let mut term_sums = [0.0, 0.0];
        let mut reward_sums = [0.0, 0.0];
        for (which, rows) in [expert_rows, gen_rows].into_iter().enumerate() {
            let label = if which == 0 { 1.0 } else { 0.0 };
            for row in rows {
                let input = self.features.model_input_row(row)?;
                let acts = d.net.activations(&input)?;
                let logit = acts.last().unwrap()[0];
                term_sums[which] += if label == 1.0 {
                    softplus(-logit)
                } else {
                    softplus(logit)
                };
                reward_sums[which] += match self.kind {
                    RewardKind::DiscFkld => disc_reward_fkld(logit),
                    _ => disc_reward_jsd(logit),
                };
                let dz = (sigmoid(logit) - label) / total;
                d.net.backward_from_acts(&acts, &[dz], &mut g_net)?;
            }
        }
        let stats = RewardStepStats {
            loss: (term_sums[0] + term_sums[1]) / total,
            expert_reward_mean: reward_sums[0] / n,
            generated_reward_mean: reward_sums[1] / n,
        };
        Ok((stats, vec![g_net]))
    }

    /// Writes parameters, feature layout, and kind. The stationary
    /// transport baseline keeps no parameters and cannot be checkpointed.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tag = match self.kind {
            RewardKind::AeW => 0u8,
            RewardKind::AeJs => 1,
            RewardKind::Vae => 2,
            RewardKind::DiscJsd => 3,
            RewardKind::DiscFkld => 4,
            RewardKind::Got => {
                return Err(Error::Checkpoint(
                    "the transport baseline has no checkpointable parameters".into(),
                ))
            }
        };
        let mut w = CheckpointWriter::new(ArtifactKind::Reward);
        w.push_u8(tag);
        w.push_u8(u8::from(self.features.absorbing));
        w.push_u32(self.features.state_dim as u32);
        w.push_u32(self.features.action_dim as u32);
        w.push_f64(self.clip_lo);
        w.push_f64(self.clip_hi);
        w.push_f64(self.lr);
        w.push_f64_slice(&self.features.normalizer.mean);
        w.push_f64_slice(&self.features.normalizer.std);
        for net in self.body.nets() {
            w.push_net(net);
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = CheckpointReader::open(path, ArtifactKind::Reward)?;
        let kind = match r.read_u8()? {
            0 => RewardKind::AeW,
            1 => RewardKind::AeJs,
            2 => RewardKind::Vae,
            3 => RewardKind::DiscJsd,
            4 => RewardKind::DiscFkld,
            other => {
                return Err(Error::Checkpoint(format!("unknown reward kind tag {other}")))
            }
        };
        let absorbing = match r.read_u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Checkpoint(format!("bad absorbing marker {other}")))
            }
        };
        let state_dim = r.read_u32()? as usize;
        let action_dim = r.read_u32()? as usize;
        let clip_lo = r.read_f64()?;
        let clip_hi = r.read_f64()?;
        let lr = r.read_f64()?;
        let mean = r.read_f64_vec()?;
        let std = r.read_f64_vec()?;
        let features = FeatureMap::new(
            FeatureNormalizer { mean, std },
            state_dim,
            action_dim,
            absorbing,
        )?;
        let body = match kind {
            RewardKind::AeW | RewardKind::AeJs => {
                let mut enc = r.read_net()?;
                enc.set_output_activation(Activation::Tanh);
                let dec = r.read_net()?;
                Body::Ae(AutoEncoder { enc, dec })
            }
            RewardKind::Vae => {
                let mut enc_mean = r.read_net()?;
                enc_mean.set_output_activation(Activation::Tanh);
                let mut enc_logvar = r.read_net()?;
                enc_logvar.set_output_activation(Activation::Tanh);
                let dec = r.read_net()?;
                Body::Vae(VariationalAutoEncoder {
                    enc_mean,
                    enc_logvar,
                    dec,
                })
            }
            RewardKind::DiscJsd | RewardKind::DiscFkld => Body::Disc(Discriminator {
                net: r.read_net()?,
            }),
            RewardKind::Got => unreachable!("rejected above"),
        };
        r.finish()?;
        let model = RewardModel {
            kind,
            opts: body
                .nets()
                .iter()
                .map(|net| OptimizerState::adam(lr, net))
                .collect(),
            features,
            body,
            clip_lo,
            clip_hi,
            lr,
            vae_rng: ChaCha8Rng::seed_from_u64(0),
        };
        if let Some(first) = model.body.nets().first() {
            if first.in_dim() != model.input_dim() {
                return Err(Error::Checkpoint(format!(
                    "network width {} does not match feature width {}",
                    first.in_dim(),
                    model.input_dim()
                )));
            }
        }
        Ok(model)
    }
}
