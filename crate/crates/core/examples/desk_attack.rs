//! Runs the desk-protocol attack over the built-in corpus and prints the report.
use std::time::Instant;

use emarch_core::dsp::PreprocessConfig;
use emarch_core::nn::TrainConfig;
use emarch_core::pipeline::run_attack;
use emarch_core::simulator::{zoo, EmModel, Protocol, SimConfig};

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let corpus = zoo::builtin_corpus(zoo::DEFAULT_INPUT);
    let sim = SimConfig {
        rng_seed: seed,
        ..SimConfig::default()
    };
    let cfg = TrainConfig {
        rng_seed: seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out = run_attack(
        &corpus,
        &Protocol::DESK,
        &EmModel::default(),
        &sim,
        &PreprocessConfig::default(),
        &cfg,
    )
    .expect("attack");
    print!("{}", out.report.to_text());
    if let Some(h) = &out.report.history {
        print!("{}", h.to_text());
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
}
