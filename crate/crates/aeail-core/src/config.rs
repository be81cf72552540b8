//! Training configuration: a flat key=value text format, strictly
//! validated, with per-environment defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::env::{EnvName, EnvSpec, DEFAULT_HORIZON};
use crate::reward::RewardKind;
use crate::{Error, Result};

/// Everything one training run needs. Defaults follow `new`; see the
/// README for the full key table.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub env: EnvName,
    pub reward: RewardKind,
    pub asw: bool,
    /// Demonstration file to load; when absent, demos are generated.
    pub demos: Option<PathBuf>,
    pub n_demos: usize,
    pub noise_sigma: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub delta_kl: f64,
    pub ae_lr: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub ae_hidden: usize,
    pub policy_hidden: usize,
    pub critic_updates: usize,
    pub critic_lr: f64,
    pub policy_updates: usize,
    pub bc_iters: usize,
    pub bc_lr: f64,
    pub got_alpha: f64,
    pub got_beta: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_rollouts: usize,
    pub out_dir: PathBuf,
}

/// Iteration budget used when the config does not set one.
pub fn default_iterations(env: EnvName) -> usize {
    match env {
        EnvName::PointMass2d => 50,
        EnvName::Pendulum => 300,
        EnvName::CartPoleCont => 300,
    }
}

impl TrainConfig {
    pub fn new(env: EnvName) -> Self {
        TrainConfig {
            env,
            reward: RewardKind::AeW,
            asw: false,
            demos: None,
            n_demos: 10,
            noise_sigma: 0.0,
            iterations: default_iterations(env),
            batch_size: 4096,
            horizon: DEFAULT_HORIZON,
            gamma: 0.995,
            lambda: 0.97,
            delta_kl: 0.01,
            ae_lr: 3e-4,
            clip_lo: -0.99,
            clip_hi: 0.99,
            ae_hidden: 100,
            policy_hidden: 64,
            critic_updates: 5,
            critic_lr: 2e-4,
            policy_updates: 3,
            bc_iters: 10000,
            bc_lr: 1e-3,
            got_alpha: 5.0,
            got_beta: 5.0,
            seed: 0,
            eval_every: 100,
            eval_rollouts: 10,
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Parses flat `key=value` text (one pair per line, `#` comments).
    /// Unknown and duplicate keys are errors; `env` is required.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Like [`parse`](Self::parse), with `(key, value)` overrides applied
    /// on top of the file's pairs (replacing, not duplicating).
    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if pairs.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
        }
        for (key, value) in overrides {
            pairs.insert(key.clone(), value.clone());
        }

        let env_name = pairs
            .remove("env")
            .ok_or_else(|| Error::Config("missing required key env".into()))?;
        let env = EnvName::parse(&env_name)?;
        let mut cfg = TrainConfig::new(env);
        let mut iterations_set = false;

        for (key, value) in pairs {
            let v = value.as_str();
            match key.as_str() {
                "reward" => cfg.reward = RewardKind::parse(v)?,
                "asw" => cfg.asw = parse_bool(&key, v)?,
                "demos" => cfg.demos = Some(PathBuf::from(v)),
                "n_demos" => cfg.n_demos = parse_num(&key, v)?,
                "noise_sigma" => cfg.noise_sigma = parse_num(&key, v)?,
                "iterations" => {
                    cfg.iterations = parse_num(&key, v)?;
                    iterations_set = true;
                }
                "batch_size" => cfg.batch_size = parse_num(&key, v)?,
                "horizon" => cfg.horizon = parse_num(&key, v)?,
                "gamma" => cfg.gamma = parse_num(&key, v)?,
                "lambda" => cfg.lambda = parse_num(&key, v)?,
                "delta_kl" => cfg.delta_kl = parse_num(&key, v)?,
                "ae_lr" => cfg.ae_lr = parse_num(&key, v)?,
                "clip_lo" => cfg.clip_lo = parse_num(&key, v)?,
                "clip_hi" => cfg.clip_hi = parse_num(&key, v)?,
                "ae_hidden" => cfg.ae_hidden = parse_num(&key, v)?,
                "policy_hidden" => cfg.policy_hidden = parse_num(&key, v)?,
                "critic_updates" => cfg.critic_updates = parse_num(&key, v)?,
                "critic_lr" => cfg.critic_lr = parse_num(&key, v)?,
                "policy_updates" => cfg.policy_updates = parse_num(&key, v)?,
                "bc_iters" => cfg.bc_iters = parse_num(&key, v)?,
                "bc_lr" => cfg.bc_lr = parse_num(&key, v)?,
                "got_alpha" => cfg.got_alpha = parse_num(&key, v)?,
                "got_beta" => cfg.got_beta = parse_num(&key, v)?,
                "seed" => cfg.seed = parse_num(&key, v)?,
                "eval_every" => cfg.eval_every = parse_num(&key, v)?,
                "eval_rollouts" => cfg.eval_rollouts = parse_num(&key, v)?,
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if !iterations_set {
            cfg.iterations = default_iterations(cfg.env);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        for (name, v) in [
            ("delta_kl", self.delta_kl),
            ("ae_lr", self.ae_lr),
            ("critic_lr", self.critic_lr),
            ("bc_lr", self.bc_lr),
            ("got_alpha", self.got_alpha),
            ("got_beta", self.got_beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.clip_lo.is_finite() && self.clip_hi.is_finite() && self.clip_lo < self.clip_hi) {
            return fail(format!(
                "clip range [{}, {}] must be finite and ordered",
                self.clip_lo, self.clip_hi
            ));
        }
        if self.ae_hidden == 0 || self.policy_hidden == 0 {
            return fail("hidden sizes must be positive".into());
        }
        if self.policy_updates == 0 {
            return fail("policy_updates must be positive".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        if self.eval_rollouts == 0 {
            return fail("eval_rollouts must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma));
        }
        if self.demos.is_none() && self.n_demos == 0 {
            return fail("n_demos must be positive when demos are generated".into());
        }
        if self.demos.is_some() && self.noise_sigma > 0.0 {
            return fail(
                "demos and noise_sigma are mutually exclusive; corrupt the file beforehand".into(),
            );
        }
        Ok(())
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::new(self.env, self.horizon)
    }

    /// Directory name identifying this run inside `out_dir`.
    pub fn run_id(&self) -> String {
        format!(
            "{}_h{}_n{}_s{}",
            self.reward.as_str(),
            self.ae_hidden,
            self.noise_sigma.to_string().replace('.', "p"),
            self.seed
        )
    }

    /// Canonical echo of the resolved configuration, parseable by
    /// [`parse`](Self::parse).
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "reward = {}", self.reward);
        let _ = writeln!(s, "asw = {}", self.asw);
        if let Some(demos) = &self.demos {
            let _ = writeln!(s, "demos = {}", demos.display());
        }
        let _ = writeln!(s, "n_demos = {}", self.n_demos);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "delta_kl = {}", self.delta_kl);
        let _ = writeln!(s, "ae_lr = {}", self.ae_lr);
        let _ = writeln!(s, "clip_lo = {}", self.clip_lo);
        let _ = writeln!(s, "clip_hi = {}", self.clip_hi);
        let _ = writeln!(s, "ae_hidden = {}", self.ae_hidden);
        let _ = writeln!(s, "policy_hidden = {}", self.policy_hidden);
        let _ = writeln!(s, "critic_updates = {}", self.critic_updates);
        let _ = writeln!(s, "critic_lr = {}", self.critic_lr);
        let _ = writeln!(s, "policy_updates = {}", self.policy_updates);
        let _ = writeln!(s, "bc_iters = {}", self.bc_iters);
        let _ = writeln!(s, "bc_lr = {}", self.bc_lr);
        let _ = writeln!(s, "got_alpha = {}", self.got_alpha);
        let _ = writeln!(s, "got_beta = {}", self.got_beta);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "eval_rollouts = {}", self.eval_rollouts);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("{key} must be true or false, got {other:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {v:?}")))
}
