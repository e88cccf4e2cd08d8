//! Sweeps adversary hash-power and reports reversal counts of depth-kappa
//! accepted transactions, the withholding attacker's signature.

use interlude::simnet::{measure_safety, SimConfig};

fn main() {
    let mut strong = SimConfig::defaults(4);
    strong.kappa = 14;
    strong.horizon = 200_000.0;
    strong.seed = 7;
    strong.assert_liveness = false;
    println!("deep acceptance (kappa = {}):", strong.kappa);
    for point in measure_safety(&strong, &[0.0, 0.25]).expect("sweep") {
        println!(
            "  power {:>4.2}: {} reversals over {} accepted txs",
            point.adversary_power, point.reversals, point.tx_accepted
        );
    }

    let mut shallow = strong.clone();
    shallow.kappa = 2;
    println!("shallow acceptance (kappa = {}):", shallow.kappa);
    for point in measure_safety(&shallow, &[0.25, 0.45]).expect("sweep") {
        println!(
            "  power {:>4.2}: {} reversals over {} accepted txs",
            point.adversary_power, point.reversals, point.tx_accepted
        );
    }
}
