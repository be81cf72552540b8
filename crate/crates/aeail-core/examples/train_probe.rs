// Scratch probe: watch a short pointmass run converge and time it.

use std::time::Instant;

use aeail_core::config::TrainConfig;
use aeail_core::env::EnvName;
use aeail_core::trainer::train;

fn main() {
    let mut cfg = TrainConfig::new(EnvName::PointMass2d);
    let args: Vec<String> = std::env::args().collect();
    cfg.iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    cfg.eval_every = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    if let Some(kind) = args.get(3) {
        cfg.reward = aeail_core::reward::RewardKind::parse(kind).unwrap();
    }
    cfg.out_dir = std::env::temp_dir().join("train_probe");
    let t0 = Instant::now();
    let out = train(&cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{} iterations in {dt:.1}s ({:.2}s/iter)",
        cfg.iterations,
        dt / cfg.iterations as f64
    );
    let metrics = std::fs::read_to_string(out.run_dir.join("metrics.csv")).unwrap();
    for line in metrics.lines() {
        let cells: Vec<&str> = line.split(',').collect();
        println!(
            "{:>9} loss={:<12.12} exp={:<10.10} gen={:<10.10} kl={:<10.10} scaled={}",
            cells[0], cells[1], cells[2], cells[3], cells[5], cells[8]
        );
    }
    if let Some(e) = out.final_eval {
        println!("final scaled: {:.4} (mean {:.2}, expert {:.2}, random {:.2})",
            e.scaled_reward, e.mean, e.expert_reference, e.random_reference);
    }
}
