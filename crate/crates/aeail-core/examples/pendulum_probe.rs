// Scratch probe: find failing seeds and print their endgame.
use aeail_core::env::*;

fn main() {
    let spec = EnvSpec::with_default_horizon(EnvName::Pendulum);
    let mut failures = vec![];
    for seed in 0..100u64 {
        let rec = run_episode(&spec, seed, |s| scripted_expert(&spec, s)).unwrap();
        let last = rec.states.last().unwrap();
        if last[0].abs() >= 0.1 {
            failures.push(seed);
        }
    }
    println!("failing seeds: {:?}", failures);
    if let Some(&seed) = failures.first() {
        let rec = run_episode(&spec, seed, |s| scripted_expert(&spec, s)).unwrap();
        for (t, s) in rec.states.iter().enumerate() {
            if t % 20 == 0 || t + 20 >= rec.states.len() {
                let e = 0.5 * s[1] * s[1] + 9.81 * (s[0].cos() - 1.0);
                println!("t={t:4} theta={:+.3} omega={:+.3} E={:+.3}", s[0], s[1], e);
            }
        }
    }
}
