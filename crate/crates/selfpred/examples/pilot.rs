use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfpred::agents::{train, AgentVariant, Schedule, TrainSetup};
use selfpred::harness::{desk_config, env_factory};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = match args.get(1).map(String::as_str) {
        Some("op") => AgentVariant::Op,
        Some("zp") => AgentVariant::ZpL2,
        _ => AgentVariant::ModelFree,
    };
    let budget: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let n_seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let warmup: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let window: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
    let latent: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(16);
    let n_step: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(5);
    let hidden: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(32);
    let explore: usize = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(budget / 2);
    let cap: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let mut config = desk_config(variant, budget);
    config.warmup = warmup;
    config.window = window;
    config.latent_dim = latent;
    config.n_step = n_step;
    config.hidden = hidden;
    config.exploration = Schedule::Exponential { start: 1.0, end: 0.05, steps: explore };
    if let Some(rc) = args.get(11).and_then(|s| s.parse().ok()) { config.replay_capacity = rc; }
    let env_name = args.get(12).cloned().unwrap_or_else(|| "keydoor-patch:5".into());
    if let Some(l) = args.get(13).and_then(|s| s.parse().ok()) { config.lambda = l; }
    match args.get(14).map(String::as_str) {
        Some("detached") => config.target = selfpred::objectives::TargetMode::Detached,
        Some("online") => config.target = selfpred::objectives::TargetMode::Online,
        _ => {}
    }
    let t = Instant::now();
    let mut finals = vec![];
    for seed in 0..n_seeds {
        let setup = TrainSetup {
            config: config.clone(),
            make_env: env_factory(&env_name).unwrap(),
            budget_steps: budget,
            episode_cap: cap,
            success_threshold: 0.05,
        };
        let rec = train(&setup, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if std::env::var("PILOT_ROWS").is_ok() {
            for r in &rec.rows {
                println!(
                    "seed={} step={} succ={:.2} rl={:.4} aux={:.4} rank={:.1}",
                    seed, r.step, r.success_rate, r.rl_loss, r.aux_loss, r.est_rank
                );
            }
        }
        finals.push(rec.final_row().unwrap().success_rate);
    }
    let mut s = finals.clone();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "env={} variant={} lambda={} budget={} cap={} window={} latent={} time={:.0}s median={:.2} succ={:?}",
        env_name, variant.name(), config.lambda, budget, cap, window, latent, t.elapsed().as_secs_f64(), s[s.len()/2], finals
    );
}
