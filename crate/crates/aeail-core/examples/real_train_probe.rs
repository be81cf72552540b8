// Scratch probe: run the real train() entry point at exact defaults for
// three seeds and report the final scaled rewards plus wall time.
use aeail_core::config::TrainConfig;
use aeail_core::env::EnvName;
use aeail_core::reward::RewardKind;
use aeail_core::trainer::train;
use std::time::Instant;

fn main() {
    let env = EnvName::parse(&std::env::var("ENV").unwrap_or_else(|_| "pointmass2d".into())).unwrap();
    let reward = RewardKind::parse(&std::env::var("REWARD").unwrap_or_else(|_| "ae_w".into())).unwrap();
    let sigma: f64 = std::env::var("NOISE")
        .ok()
        .map(|s| s.parse().unwrap())
        .unwrap_or(0.0);
    let seeds: Vec<u64> = std::env::var("SEEDS")
        .unwrap_or_else(|_| "0,1,2".into())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();

    let mut finals = Vec::new();
    for &seed in &seeds {
        let mut cfg = TrainConfig::new(env);
        cfg.reward = reward;
        cfg.seed = seed;
        if sigma > 0.0 {
            cfg.noise_sigma = sigma;
        }
        if let Ok(it) = std::env::var("ITERS") {
            cfg.iterations = it.parse().unwrap();
        }
        cfg.out_dir = std::path::PathBuf::from("/tmp/real_probe");
        let t0 = Instant::now();
        let out = train(&cfg).unwrap();
        let fe = out.final_eval.unwrap();
        println!(
            "seed {seed}: scaled {:.4} raw {:.2} ({:.0}s)",
            fe.scaled_reward,
            fe.mean,
            t0.elapsed().as_secs_f64()
        );
        finals.push(fe.scaled_reward);
    }
    let avg = finals.iter().sum::<f64>() / finals.len() as f64;
    println!("average scaled: {avg:.4}");
}
