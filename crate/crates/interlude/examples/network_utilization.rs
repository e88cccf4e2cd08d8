//! Reports network bytes over time buckets and average utilization,
//! comparing peak (round sealing) against steady-state gossip.

use interlude::simnet::{run_simulation, SimConfig};

fn main() {
    let mut cfg = SimConfig::defaults(16);
    cfg.horizon = 120_000.0;
    cfg.seed = 5;
    let out = run_simulation(&cfg, None).expect("simulation");
    let report = &out.report;
    let avg_rate = report.bytes_total as f64 / report.simulated_seconds;
    println!(
        "total {} MB over {:.0} s: average {:.1} kB/s",
        report.bytes_total / 1_000_000,
        report.simulated_seconds,
        avg_rate / 1_000.0
    );
    let mut peak = 0u64;
    for line in out.metrics_csv.lines().skip(2) {
        if let Some(bytes) = line.rsplit(',').next().and_then(|v| v.parse::<u64>().ok()) {
            peak = peak.max(bytes);
        }
    }
    let peak_rate = peak as f64 / cfg.bucket_seconds;
    println!(
        "peak bucket {:.1} kB/s, {:.1}x the average utilization",
        peak_rate / 1_000.0,
        peak_rate / avg_rate
    );
}
