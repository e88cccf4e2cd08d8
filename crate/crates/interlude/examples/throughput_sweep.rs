//! Sweeps the parallelism degree k and compares measured block throughput
//! against the best-case formula beta * (k + 1) / (2 - beta * delta).

use interlude::analysis::{linear_fit, throughput_best_case};
use interlude::simnet::{run_simulation, SimConfig};

fn main() {
    let beta = 1.0 / 600.0;
    let delta = 40.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    println!("k, measured blocks/s, predicted blocks/s, ratio, rounds");
    for k in [4usize, 16, 64, 128] {
        let mut cfg = SimConfig::defaults(k);
        cfg.horizon = 260_000.0;
        cfg.max_rounds = Some(210);
        cfg.tx_rate = 0.005;
        cfg.seed = 3;
        cfg.assert_liveness = false;
        let report = run_simulation(&cfg, None).expect("simulation").report;
        let predicted = throughput_best_case(beta, delta, k).expect("regime");
        println!(
            "{k}, {:.6}, {predicted:.6}, {:.4}, {}",
            report.blocks_per_second,
            report.blocks_per_second / predicted,
            report.rounds
        );
        xs.push(k as f64);
        ys.push(report.blocks_per_second);
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    println!("linear fit: slope {slope:.8}, intercept {intercept:.8}, r2 {r2:.6}");
}
