//! Demonstration sets: trajectories, feature normalization, noise
//! corruption, and a line-oriented JSON file format.
//!
//! Files are JSONL: a header object (env, noise level, normalizer, format
//! version), then one object per trajectory. Floats are written with 17
//! significant digits so write → read → write is byte-identical.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{run_episode, scripted_expert, EnvName, EnvSpec};
use crate::{Error, Result};

pub const DEMO_FORMAT_VERSION: u32 = 1;

/// Ordered (state, action) record of one episode. `states` has one more row
/// than `actions` and `dones`. `true_rewards`, when present, exists for
/// evaluation only; no training path reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
    pub true_rewards: Option<Vec<f64>>,
}

impl Trajectory {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Whether the episode ended by termination (as opposed to the time
    /// limit).
    pub fn terminated(&self) -> bool {
        self.dones.last().copied().unwrap_or(false)
    }

    /// Learner-facing view: the (state, action) pairs, one per transition.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.actions
            .iter()
            .enumerate()
            .map(|(t, a)| (self.states[t].as_slice(), a.as_slice()))
    }

    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(Error::shape(
                "trajectory states",
                self.actions.len() + 1,
                self.states.len(),
            ));
        }
        if self.dones.len() != self.actions.len() {
            return Err(Error::shape("trajectory dones", self.actions.len(), self.dones.len()));
        }
        if let Some(r) = &self.true_rewards {
            if r.len() != self.actions.len() {
                return Err(Error::shape("trajectory rewards", self.actions.len(), r.len()));
            }
        }
        for s in &self.states {
            if s.len() != state_dim {
                return Err(Error::shape("trajectory state row", state_dim, s.len()));
            }
        }
        for a in &self.actions {
            if a.len() != action_dim {
                return Err(Error::shape("trajectory action row", action_dim, a.len()));
            }
        }
        let finite = self
            .states
            .iter()
            .chain(self.actions.iter())
            .all(|row| row.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NumericFault("non-finite value in trajectory".into()));
        }
        Ok(())
    }
}

/// Per-feature affine normalizer over concatenated (state, action) rows.
/// Standard deviations are floored at 1e-6 so constant features normalize
/// to zero instead of NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl FeatureNormalizer {
    /// Identity normalizer (zero mean, unit scale).
    pub fn identity(dim: usize) -> Self {
        FeatureNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and population standard deviation over feature rows.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Result<Self> {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            if row.len() != dim {
                return Err(Error::shape("normalizer fit row", dim, row.len()));
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Demos("cannot fit a normalizer on zero rows".into()));
        }
        let n = count as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for i in 0..dim {
                let d = row[i] - mean[i];
                var[i] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| (v / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(FeatureNormalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_into(&self, row: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(row.len(), self.dim());
        out.clear();
        out.extend(
            row.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(row.len());
        self.normalize_into(row, &mut out);
        out
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.dim());
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::shape("normalizer", self.mean.len(), self.std.len()));
        }
        let ok = self.mean.iter().all(|v| v.is_finite())
            && self.std.iter().all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::Demos("normalizer must be finite with positive stds".into()));
        }
        Ok(())
    }
}

/// A set of demonstration trajectories plus the feature normalizer fitted
/// on their (state, action) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    pub env: EnvName,
    pub noise_sigma: f64,
    pub normalizer: FeatureNormalizer,
    pub trajectories: Vec<Trajectory>,
}

impl DemonstrationSet {
    pub fn num_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// All (state, action) pairs in trajectory order.
    pub fn all_pairs(&self) -> Vec<(&[f64], &[f64])> {
        self.trajectories.iter().flat_map(|t| t.pairs()).collect()
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Demos("demonstration set has no trajectories".into()));
        }
        for t in &self.trajectories {
            t.validate(spec.state_dim, spec.action_dim)?;
        }
        self.normalizer.validate()?;
        if self.normalizer.dim() != spec.pair_dim() {
            return Err(Error::shape(
                "demo normalizer width",
                spec.pair_dim(),
                self.normalizer.dim(),
            ));
        }
        Ok(())
    }
}

/// Samples a standard normal deviate via Box-Muller, so noise needs no
/// distribution crate and stays identical across platforms.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rolls out the scripted expert `n_traj` times (reset seeds `seed + i`)
/// and fits the normalizer on the clean pairs.
pub fn generate_demos(spec: &EnvSpec, n_traj: usize, seed: u64) -> Result<DemonstrationSet> {
    if n_traj == 0 {
        return Err(Error::Demos("asked to generate zero trajectories".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let rec = run_episode(spec, seed + i as u64, |s| scripted_expert(spec, s))?;
        trajectories.push(Trajectory {
            states: rec.states,
            actions: rec.actions,
            dones: rec.dones,
            true_rewards: None,
        });
    }
    let normalizer = fit_pair_normalizer(&trajectories, spec.pair_dim())?;
    Ok(DemonstrationSet {
        env: spec.name,
        noise_sigma: 0.0,
        normalizer,
        trajectories,
    })
}

fn fit_pair_normalizer(trajectories: &[Trajectory], dim: usize) -> Result<FeatureNormalizer> {
    let rows: Vec<Vec<f64>> = trajectories
        .iter()
        .flat_map(|t| t.pairs())
        .map(|(s, a)| {
            let mut row = Vec::with_capacity(dim);
            row.extend_from_slice(s);
            row.extend_from_slice(a);
            row
        })
        .collect();
    FeatureNormalizer::fit(rows.iter().map(Vec::as_slice), dim)
}

/// Adds i.i.d. N(0, sigma^2) noise to every state and action feature of
/// every transition, then refits the normalizer on the corrupted pairs.
/// The recorded noise level composes as sqrt(old^2 + sigma^2).
pub fn corrupt_demos(demos: &DemonstrationSet, sigma: f64, seed: u64) -> Result<DemonstrationSet> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Demos(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let spec = EnvSpec::with_default_horizon(demos.env);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectories = demos.trajectories.clone();
    for t in trajectories.iter_mut() {
        for row in t.states.iter_mut().chain(t.actions.iter_mut()) {
            for v in row.iter_mut() {
                *v += sigma * standard_normal(&mut rng);
            }
        }
    }
    let normalizer = fit_pair_normalizer(&trajectories, spec.pair_dim())?;
    Ok(DemonstrationSet {
        env: demos.env,
        noise_sigma: (demos.noise_sigma * demos.noise_sigma + sigma * sigma).sqrt(),
        normalizer,
        trajectories,
    })
}

/// Formats a float with 17 significant digits, enough for exact f64
/// round-trips through text.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_float_array(out: &mut String, row: &[f64]) {
    out.push('[');
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
}

fn write_nested_float_array(out: &mut String, rows: &[Vec<f64>]) {
    out.push('[');
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_float_array(out, row);
    }
    out.push(']');
}

/// Serializes a demonstration set to the JSONL format.
pub fn save_demos(demos: &DemonstrationSet, path: &Path) -> Result<()> {
    let spec = EnvSpec::with_default_horizon(demos.env);
    demos.validate(&spec)?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header = String::new();
    header.push_str("{\"env\":\"");
    header.push_str(demos.env.as_str());
    header.push_str("\",\"noise_sigma\":");
    header.push_str(&fmt_f64(demos.noise_sigma));
    header.push_str(",\"normalizer\":{\"mean\":");
    write_float_array(&mut header, &demos.normalizer.mean);
    header.push_str(",\"std\":");
    write_float_array(&mut header, &demos.normalizer.std);
    header.push_str("},\"format_version\":");
    header.push_str(&DEMO_FORMAT_VERSION.to_string());
    header.push('}');
    writeln!(w, "{header}")?;
    for t in &demos.trajectories {
        let mut line = String::new();
        line.push_str("{\"states\":");
        write_nested_float_array(&mut line, &t.states);
        line.push_str(",\"actions\":");
        write_nested_float_array(&mut line, &t.actions);
        line.push_str(",\"dones\":[");
        for (i, d) in t.dones.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(if *d { "true" } else { "false" });
        }
        line.push_str("]}");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerJson {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderJson {
    env: String,
    noise_sigma: f64,
    normalizer: NormalizerJson,
    format_version: u32,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryJson {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    dones: Vec<bool>,
}

/// Loads and validates a demonstration set written by [`save_demos`].
pub fn load_demos(path: &Path) -> Result<DemonstrationSet> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Demos(format!("{}: empty file", path.display())))??;
    let header: HeaderJson = serde_json::from_str(&header_line)
        .map_err(|e| Error::Demos(format!("{}: bad header: {e}", path.display())))?;
    if header.format_version != DEMO_FORMAT_VERSION {
        return Err(Error::Demos(format!(
            "{}: unsupported format version {} (expected {DEMO_FORMAT_VERSION})",
            path.display(),
            header.format_version
        )));
    }
    let env = EnvName::parse(&header.env)
        .map_err(|_| Error::Demos(format!("{}: unknown env '{}'", path.display(), header.env)))?;
    let mut trajectories = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tj: TrajectoryJson = serde_json::from_str(&line).map_err(|e| {
            Error::Demos(format!("{}: bad trajectory on line {}: {e}", path.display(), idx + 2))
        })?;
        trajectories.push(Trajectory {
            states: tj.states,
            actions: tj.actions,
            dones: tj.dones,
            true_rewards: None,
        });
    }
    let demos = DemonstrationSet {
        env,
        noise_sigma: header.noise_sigma,
        normalizer: FeatureNormalizer {
            mean: header.normalizer.mean,
            std: header.normalizer.std,
        },
        trajectories,
    };
    let spec = EnvSpec::with_default_horizon(env);
    demos.validate(&spec)?;
    if !(demos.noise_sigma.is_finite() && demos.noise_sigma >= 0.0) {
        return Err(Error::Demos(format!(
            "{}: noise_sigma must be finite and >= 0",
            path.display()
        )));
    }
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvName, EnvSpec};

    fn tiny_demo_set() -> DemonstrationSet {
        let spec = EnvSpec::new(EnvName::PointMass2d, 8);
        generate_demos(&spec, 2, 0).unwrap()
    }

    #[test]
    fn demo_generation_is_deterministic() {
        let spec = EnvSpec::new(EnvName::PointMass2d, 16);
        let a = generate_demos(&spec, 3, 42).unwrap();
        let b = generate_demos(&spec, 3, 42).unwrap();
        assert_eq!(a, b, "same seed must reproduce the demo set exactly");
        let c = generate_demos(&spec, 3, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normalizer_matches_hand_computed_mean_and_std() {
        // Two rows: (1, 0) and (3, 0). Mean (2, 0); population std (1, 0
        // floored to 1e-6).
        let rows = [vec![1.0, 0.0], vec![3.0, 0.0]];
        let norm = FeatureNormalizer::fit(rows.iter().map(Vec::as_slice), 2).unwrap();
        assert_eq!(norm.mean, vec![2.0, 0.0]);
        assert_eq!(norm.std[0], 1.0);
        assert_eq!(norm.std[1], STD_FLOOR, "constant feature stds are floored");
        // A constant column normalizes to exactly zero, never NaN.
        let z = norm.normalize(&[2.0, 0.0]);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn normalizer_round_trips() {
        let demos = tiny_demo_set();
        let norm = &demos.normalizer;
        let row: Vec<f64> = (0..norm.dim()).map(|i| 0.3 * i as f64 - 0.7).collect();
        let back = norm.denormalize(&norm.normalize(&row));
        for (a, b) in row.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9, "normalize/denormalize drifted: {a} vs {b}");
        }
    }

    #[test]
    fn demo_normalizer_mean_matches_feature_average() {
        let demos = tiny_demo_set();
        let pairs = demos.all_pairs();
        let dim = demos.normalizer.dim();
        let mut mean = vec![0.0; dim];
        for (s, a) in &pairs {
            for (i, v) in s.iter().chain(a.iter()).enumerate() {
                mean[i] += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= pairs.len() as f64);
        for (got, want) in demos.normalizer.mean.iter().zip(&mean) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let demos = tiny_demo_set();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        save_demos(&demos, &p1).unwrap();
        let loaded = load_demos(&p1).unwrap();
        assert_eq!(loaded, demos, "loading must reproduce the in-memory set");
        save_demos(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "write -> read -> write must be byte-identical");
    }

    #[test]
    fn corruption_perturbs_features_and_refits_normalizer() {
        let demos = tiny_demo_set();
        let noisy = corrupt_demos(&demos, 0.3, 7).unwrap();
        assert_eq!(noisy.noise_sigma, 0.3);
        assert_ne!(noisy.trajectories, demos.trajectories);
        assert_ne!(noisy.normalizer, demos.normalizer, "normalizer must be refit");
        assert_eq!(
            corrupt_demos(&demos, 0.3, 7).unwrap(),
            noisy,
            "corruption must be deterministic per seed"
        );
        // Dones survive corruption untouched.
        for (a, b) in demos.trajectories.iter().zip(&noisy.trajectories) {
            assert_eq!(a.dones, b.dones);
        }
        // Composing noise records the root-sum-square level.
        let twice = corrupt_demos(&noisy, 0.4, 8).unwrap();
        assert!((twice.noise_sigma - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_corruption_changes_nothing() {
        let demos = tiny_demo_set();
        let same = corrupt_demos(&demos, 0.0, 9).unwrap();
        assert_eq!(same.trajectories, demos.trajectories);
    }

    #[test]
    fn load_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("demos.jsonl");
        let demos = tiny_demo_set();
        save_demos(&demos, &p).unwrap();
        let good = std::fs::read_to_string(&p).unwrap();

        let bad_version = good.replacen("\"format_version\":1", "\"format_version\":2", 1);
        std::fs::write(&p, bad_version).unwrap();
        assert!(matches!(load_demos(&p), Err(Error::Demos(_))));

        let bad_env = good.replacen("pointmass2d", "hexapod", 1);
        std::fs::write(&p, bad_env).unwrap();
        assert!(matches!(load_demos(&p), Err(Error::Demos(_))));

        let mut lines: Vec<&str> = good.lines().collect();
        let truncated_traj = lines[1].replacen("{\"states\":[[", "{\"states\":[[9e999,", 1);
        let with_nan = [lines[0], &truncated_traj].join("\n");
        std::fs::write(&p, with_nan).unwrap();
        assert!(load_demos(&p).is_err(), "non-finite floats must be rejected");

        lines.truncate(0);
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_demos(&p), Err(Error::Demos(_))));
    }

    #[test]
    fn box_muller_moments_are_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "standard normal mean drifted: {mean}");
        assert!((var - 1.0).abs() < 0.02, "standard normal variance drifted: {var}");
    }
}
