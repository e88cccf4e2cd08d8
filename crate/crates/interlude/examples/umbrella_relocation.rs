//! Demonstrates the umbrella commitment: one proof-of-work committing to k
//! candidate transaction sets, with the revealed branch movable to a
//! different sub-chain after the fact, without mining again.

use interlude::chain::{validate_kset, ProtocolParams};
use interlude::crypto::MerkleTree;
use interlude::ledger::Transaction;
use interlude::node::{mine_nonce, relocate_block, MiningTemplate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() {
    let mut params = ProtocolParams::new(4, 2024);
    params.initial_balances = (0..16).map(|key| (key, 1_000)).collect();
    let chain = interlude::chain::Chain::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // one candidate transaction set per sub-chain, all under one commitment
    let tx_sets: Vec<Vec<Transaction>> = (0..params.k)
        .map(|s| {
            vec![Transaction {
                id: 100 + s as u64,
                senders: vec![s as u64],
                outputs: vec![((s + 4) as u64, 5)],
                fee: 1,
            }]
        })
        .collect();
    let top = chain.last_series_hash();
    let tree = MerkleTree::build(params.oracle_seed, params.k, &tx_sets).expect("k sets");
    let (nonce, hash) = mine_nonce(params.oracle_seed, &mut rng, &[top], tree.root, params.target_parallel);
    let template = MiningTemplate {
        top,
        tree: tree.clone(),
        tx_sets,
    };

    let original = interlude::chain::Block {
        top: vec![top],
        body: interlude::chain::BlockBody::Parallel {
            subchain: 0,
            proof: tree.prove(0).expect("branch 0"),
        },
        merkle_root: tree.root,
        nonce,
        hash,
        txs: template.tx_sets[0].clone(),
        miner: 7,
        minted_at: 0.0,
    };
    println!(
        "mined once: nonce {nonce}, hash {}..., revealed branch 0",
        &original.hash.to_hex()[..12]
    );

    // the same proof-of-work republished on sub-chain 2
    let moved = relocate_block(&original, &template, 2).expect("branch 2 exists");
    assert_eq!(moved.nonce, original.nonce);
    assert_eq!(moved.hash, original.hash);
    assert_eq!(moved.merkle_root, original.merkle_root);
    println!("relocated to branch 2: identical (nonce, root, hash)");

    // both placements satisfy the k-set rules alongside other blocks
    for (label, block) in [("original", original), ("relocated", moved)] {
        let slot = match &block.body {
            interlude::chain::BlockBody::Parallel { subchain, .. } => *subchain,
            _ => unreachable!(),
        };
        let mut kset: Vec<Arc<interlude::chain::Block>> = vec![Arc::new(block)];
        for s in (0..params.k).filter(|s| *s != slot) {
            kset.push(Arc::new(interlude::node::testutil::parallel_block(
                &params,
                top,
                s,
                Vec::new(),
                1_000_000 * (s as u64 + 1),
                0.0,
            )));
        }
        kset.sort_by_key(|b| match &b.body {
            interlude::chain::BlockBody::Parallel { subchain, .. } => *subchain,
            _ => usize::MAX,
        });
        println!(
            "{label} placement forms a valid k-set: {}",
            validate_kset(&kset, params.k, &params)
        );
    }
}
