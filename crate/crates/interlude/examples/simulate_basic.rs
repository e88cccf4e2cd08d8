//! Runs one simulation at reference timing parameters and prints the
//! metrics report as JSON followed by the per-bucket CSV head.

use interlude::simnet::{run_simulation, SimConfig};

fn main() {
    let mut cfg = SimConfig::defaults(16);
    cfg.horizon = 250_000.0;
    cfg.seed = 42;
    let out = run_simulation(&cfg, None).expect("simulation");
    println!("{}", serde_json::to_string_pretty(&out.report).unwrap());
    for line in out.metrics_csv.lines().take(8) {
        println!("{line}");
    }
}
