//! Measures the empirical frontrunning probability under a two-class
//! latency profile and compares it against the analytic bound
//! M * beta * d / (1 - beta * delta).

use interlude::analysis::{frontrunning_bound, FairnessParams};
use interlude::simnet::{measure_pf, LatencyProfile, SimConfig};

fn main() {
    let mut cfg = SimConfig::defaults(16);
    cfg.n_honest = 10;
    cfg.latency = LatencyProfile::Fairness {
        fast_fraction: 0.1,
        fast_latency: 0.0,
        slow_latency: 40.0,
    };
    cfg.tx_rate = 0.15;
    cfg.horizon = 100_000.0;
    cfg.seed = 11;
    cfg.assert_liveness = false;
    let est = measure_pf(&cfg).expect("simulation");
    let bound = frontrunning_bound(&FairnessParams {
        m_top: 0.1,
        m_bottom: 0.9,
        d: 40.0,
        beta: 1.0 / 600.0,
        delta: 40.0,
    })
    .expect("bound");
    println!(
        "empirical p_f = {:.6} (se {:.6}, {} / {} included txs)",
        est.rate, est.standard_error, est.frontruns, est.tx_included
    );
    println!("analytic bound = {bound:.6}");
}
