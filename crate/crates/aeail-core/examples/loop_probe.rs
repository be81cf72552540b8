// Scratch probe: manual training loop with per-phase timing and policy
// diagnostics, to tune defaults.

use std::time::Instant;

use aeail_core::config::TrainConfig;
use aeail_core::env::{EnvName, EnvSpec};
use aeail_core::eval::evaluate;
use aeail_core::policy::{GaussianPolicy, ValueCritic};
use aeail_core::reward::{trajectory_rows, RewardModel, RewardSettings};
use aeail_core::trainer::{resolve_demos, sample_equal_batches};
use aeail_core::trpo::{
    collect_rollouts, gae_advantages, normalize_advantages, prepare_batch, trust_region_step,
    SurrogateData,
};
use aeail_core::{child_seed, RewardKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let kind = args
        .get(2)
        .map(|s| RewardKind::parse(s).unwrap())
        .unwrap_or(RewardKind::AeW);

    let mut cfg = TrainConfig::new(EnvName::PointMass2d);
    cfg.reward = kind;
    if let Ok(v) = std::env::var("SEED") {
        cfg.seed = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("ENV") {
        cfg.env = EnvName::parse(&v).unwrap();
        cfg.iterations = aeail_core::config::default_iterations(cfg.env);
    }
    if let Ok(v) = std::env::var("NOISE") {
        cfg.noise_sigma = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("BC_ITERS") {
        cfg.bc_iters = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("CRITIC_LR") {
        cfg.critic_lr = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("POLICY_UPDATES") {
        cfg.policy_updates = v.parse().unwrap();
    }
    let spec: EnvSpec = cfg.spec();
    let demos = resolve_demos(&cfg).unwrap();
    let settings = RewardSettings {
        kind: cfg.reward,
        absorbing: cfg.asw,
        hidden: cfg.ae_hidden,
        lr: cfg.ae_lr,
        clip_lo: cfg.clip_lo,
        clip_hi: cfg.clip_hi,
        got_alpha: cfg.got_alpha,
        got_beta: cfg.got_beta,
        horizon: cfg.horizon,
    };
    let mut model = RewardModel::new(&settings, &spec, &demos, child_seed(cfg.seed, "reward")).unwrap();
    let expert_rows: Vec<Vec<f64>> = demos
        .trajectories
        .iter()
        .flat_map(|t| trajectory_rows(t))
        .collect();
    let mut policy = GaussianPolicy::new(
        spec.state_dim,
        spec.action_dim,
        cfg.policy_hidden,
        spec.action_bound,
        child_seed(cfg.seed, "policy"),
    )
    .unwrap();
    let mut critic = ValueCritic::new(
        spec.state_dim,
        cfg.policy_hidden,
        cfg.critic_lr,
        child_seed(cfg.seed, "critic"),
    )
    .unwrap();
    if let Ok(v) = std::env::var("LOG_STD0") {
        let ls: f64 = v.parse().unwrap();
        policy.set_log_std(&vec![ls; spec.action_dim]).unwrap();
    }
    let mut rollout_rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "rollout"));
    let mut batch_rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, "batches"));

    if cfg.bc_iters > 0 {
        let (first, last) = aeail_core::policy::bc_pretrain(
            &mut policy,
            &demos,
            cfg.bc_iters,
            cfg.bc_lr,
            child_seed(cfg.seed, "bc"),
        )
        .unwrap();
        let e = evaluate(&policy, &spec, 4, child_seed(cfg.seed, "eval"), "bc").unwrap();
        println!("bc: loss {first:.4} -> {last:.4}, eval scaled {:+.3}", e.scaled_reward);
    }

    for i in 1..=iters {
        let t0 = Instant::now();
        let collected = collect_rollouts(&spec, &policy, cfg.batch_size, &mut rollout_rng).unwrap();
        let t_collect = t0.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut batch = prepare_batch(collected, false, cfg.horizon, spec.state_dim).unwrap();
        let traj_rows: Vec<Vec<Vec<f64>>> = batch
            .trajectories
            .iter()
            .map(|rt| trajectory_rows(&rt.traj))
            .collect();
        let gen_rows: Vec<Vec<f64>> = traj_rows.iter().flatten().cloned().collect();
        let (gen_batch, expert_batch) =
            sample_equal_batches(&gen_rows, &expert_rows, cfg.batch_size, &mut batch_rng).unwrap();
        let t_batch = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let stats = model.update_step(&expert_batch, &gen_batch).unwrap();
        let t_reward = t.elapsed().as_secs_f64();

        let t = Instant::now();
        for (rt, rows) in batch.trajectories.iter_mut().zip(&traj_rows) {
            rt.pseudo_rewards = model.trajectory_rewards(rows).unwrap();
        }
        let t_fill = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut critic_states = Vec::new();
        let mut critic_targets = Vec::new();
        for rt in &mut batch.trajectories {
            let values = critic.values(&rt.traj.states).unwrap();
            let (adv, targets) =
                gae_advantages(&rt.pseudo_rewards, &values, &rt.traj.dones, cfg.gamma, cfg.lambda)
                    .unwrap();
            rt.advantages = adv;
            rt.value_targets = targets;
            critic_states.extend(rt.traj.states[..rt.traj.len()].iter().cloned());
            critic_targets.extend(rt.value_targets.iter().copied());
        }
        let critic_loss = critic
            .update(&critic_states, &critic_targets, cfg.critic_updates)
            .unwrap();
        normalize_advantages(&mut batch);
        let t_critic = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut logps = Vec::new();
        let mut advantages = Vec::new();
        for rt in &batch.trajectories {
            for k in 0..rt.traj.len() {
                states.push(rt.traj.states[k].clone());
                actions.push(rt.traj.actions[k].clone());
                logps.push(rt.sampling_logps[k]);
                advantages.push(rt.advantages[k]);
            }
        }
        let data = SurrogateData {
            states: &states,
            actions: &actions,
            sampling_logps: &logps,
            advantages: &advantages,
        };
        let mut kls = Vec::new();
        let mut scales = Vec::new();
        for _ in 0..cfg.policy_updates {
            let r = trust_region_step(&mut policy, &data, cfg.delta_kl).unwrap();
            kls.push(r.mean_kl);
            scales.push(r.step_scale);
        }
        if let Ok(f) = std::env::var("LS_FLOOR") {
            let floor: f64 = f.parse().unwrap();
            let clamped: Vec<f64> = policy.log_std().iter().map(|v| v.max(floor)).collect();
            policy.set_log_std(&clamped).unwrap();
        }
        let t_policy = t.elapsed().as_secs_f64();

        // Diagnostics: policy spread, mean action magnitude, state radius.
        let ls: f64 = policy.log_std().iter().sum::<f64>() / policy.log_std().len() as f64;
        let mean_r: f64 = states
            .iter()
            .map(|s| (s[0] * s[0] + s[1] * s[1]).sqrt())
            .sum::<f64>()
            / states.len() as f64;
        println!(
            "it {i:>3} | col {t_collect:.2} bat {t_batch:.2} rew {t_reward:.2} fil {t_fill:.2} cri {t_critic:.2} pol {t_policy:.2} | \
loss {:+.3} exp {:.3} gen {:.3} | closs {critic_loss:.3} | kls {kls:?} sc {scales:?} | log_std {ls:+.2} |p| {mean_r:.2}",
            stats.loss, stats.expert_reward_mean, stats.generated_reward_mean
        );
        if i % 5 == 0 {
            let e = evaluate(&policy, &spec, 4, child_seed(cfg.seed, "eval"), "probe").unwrap();
            println!("      eval: scaled {:+.3} mean {:+.1}", e.scaled_reward, e.mean);
        }
    }

    // Reward-model landscape: does the adversary punish corrective actions?
    println!("\nreward landscape r(s, a):");
    let probes: [(&str, [f64; 4], [f64; 2]); 8] = [
        ("origin, a=0      ", [0.0, 0.0, 0.0, 0.0], [0.0, 0.0]),
        ("origin, a=corr   ", [0.0, 0.0, 0.0, 0.0], [0.1, 0.0]),
        ("p=.1 v=-.02, a=0 ", [0.1, 0.0, -0.02, 0.0], [0.0, 0.0]),
        ("p=.1 v=-.02, corr", [0.1, 0.0, -0.02, 0.0], [-0.15, 0.0]),
        ("p=.5 v=-.2, a=0  ", [0.5, 0.0, -0.2, 0.0], [0.0, 0.0]),
        ("p=.5 v=-.2, corr ", [0.5, 0.0, -0.2, 0.0], [-0.5, 0.0]),
        ("p=1 v=-.4, corr  ", [1.0, 0.0, -0.4, 0.0], [-0.8, 0.0]),
        ("p=2 v=0, corr    ", [2.0, 0.0, 0.0, 0.0], [-1.0, 0.0]),
    ];
    for (label, s, a) in probes {
        let mut row = s.to_vec();
        row.extend_from_slice(&a);
        let r = model.trajectory_rewards(&[row]).unwrap()[0];
        let v = critic.value(&s).unwrap();
        let m = policy.mean(&s).unwrap();
        println!("  {label} r={r:.4} V={v:+8.2} mean_act=({:+.3},{:+.3})", m[0], m[1]);
    }
}
