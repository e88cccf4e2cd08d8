//! Builds competing chains and shows the four-rule deterministic selection:
//! more sealed rounds, then more partial blocks, then lower last series
//! hash, then lowest partial block hash — every party picks the same winner.

use interlude::chain::{chain_cmp, max_valid, transaction_order, validate_chain, ProtocolParams};
use interlude::node::testutil::build_chain;

fn main() {
    let mut params = ProtocolParams::new(2, 99);
    params.initial_balances = (0..64).map(|key| (key, 10_000)).collect();

    let long = build_chain(&params, 3, 1);
    let short = build_chain(&params, 2, 2);
    let rival = build_chain(&params, 3, 3);
    for (name, chain) in [("long", &long), ("short", &short), ("rival", &rival)] {
        validate_chain(chain, &params).expect("structurally valid");
        println!(
            "{name}: {} rounds, last series hash {}...",
            chain.len(),
            &chain.last_series_hash().to_hex()[..12]
        );
    }

    let winner = max_valid([&long, &short, &rival]).expect("nonempty");
    println!(
        "selected: {} rounds, hash {}...",
        winner.len(),
        &winner.last_series_hash().to_hex()[..12]
    );
    println!(
        "tie between equal-length chains resolved by {:?}",
        chain_cmp(&long, &rival)
    );
    let order = transaction_order(&winner);
    println!(
        "canonical transaction order carries {} transactions, first {:?}",
        order.len(),
        &order[..order.len().min(4)]
    );
}
