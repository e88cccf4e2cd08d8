//! Shows that depth-kappa confirmation delay is independent of the
//! parallelism degree k and sits near kappa * (2/beta - delta) seconds.

use interlude::analysis::time_to_finality;
use interlude::simnet::{run_simulation, SimConfig};

fn main() {
    let kappa = 14;
    let predicted = time_to_finality(kappa, 1.0 / 600.0, 40.0);
    println!("predicted finality: {predicted:.0} s");
    println!("k, mean confirmation delay (s), ratio to 9000 s, accepted txs");
    for k in [4usize, 16, 64] {
        let mut cfg = SimConfig::defaults(k);
        cfg.kappa = kappa;
        cfg.horizon = 260_000.0;
        cfg.seed = 9;
        let report = run_simulation(&cfg, None).expect("simulation").report;
        println!(
            "{k}, {:.0}, {:.3}, {}",
            report.mean_confirmation_delay,
            report.mean_confirmation_delay / 9_000.0,
            report.tx_accepted
        );
    }
}
