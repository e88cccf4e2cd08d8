//! Acceptance gate: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use interlude::analysis::{
    self, epsilon, frontrunning_bound, linear_fit, liveness_failure_sequence, liveness_walk,
    safety_limit, safety_p, safety_walk, withholding_race_montecarlo, FairnessParams, Play,
    RaceVariant, RewardScheme, WalkParams,
};
use interlude::chain::{
    max_valid, validate_chain, validate_kset, Block, BlockBody, Chain, ProtocolParams,
};
use interlude::node::{relocate_block, testutil, MiningTemplate};
use interlude::simnet::{
    measure_pf, measure_safety, run_simulation, LatencyProfile, SimConfig,
};

fn verdict(number: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {number:>2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {number} {name} failed: {detail}");
}

const BETA: f64 = 1.0 / 600.0;
const DELTA: f64 = 40.0;

#[test]
fn criterion_01_throughput_linearity() {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut worst_ratio_err = 0.0f64;
    for k in [4usize, 16, 64, 128] {
        let mut cfg = SimConfig::defaults(k);
        cfg.horizon = 260_000.0;
        cfg.max_rounds = Some(210);
        cfg.tx_rate = 0.005;
        cfg.seed = 3;
        cfg.assert_liveness = false;
        let report = run_simulation(&cfg, None).expect("simulation").report;
        assert!(report.rounds >= 200, "k={k}: only {} rounds", report.rounds);
        let predicted = BETA * (k as f64 + 1.0) / (2.0 - BETA * DELTA);
        worst_ratio_err = worst_ratio_err.max((report.blocks_per_second / predicted - 1.0).abs());
        xs.push(k as f64);
        ys.push(report.blocks_per_second);
    }
    let (slope, _, r2) = linear_fit(&xs, &ys);
    verdict(
        1,
        "throughput linear in k",
        r2 >= 0.95 && slope > 0.0 && worst_ratio_err <= 0.10,
        &format!("r2={r2:.4}, worst deviation from beta(k+1)/(2-beta*delta) = {:.1}%", worst_ratio_err * 100.0),
    );
}

#[test]
fn criterion_02_finality_independent_of_k() {
    let predicted = 14.0 * (2.0 / BETA - DELTA);
    let mut delays = Vec::new();
    for k in [4usize, 16, 64] {
        let mut cfg = SimConfig::defaults(k);
        cfg.kappa = 14;
        cfg.horizon = 260_000.0;
        cfg.seed = 9;
        let report = run_simulation(&cfg, None).expect("simulation").report;
        assert!(report.tx_accepted > 1_000);
        delays.push(report.mean_confirmation_delay);
    }
    let spread = delays.iter().cloned().fold(f64::MIN, f64::max)
        / delays.iter().cloned().fold(f64::MAX, f64::min)
        - 1.0;
    let within_band = delays
        .iter()
        .all(|d| ((d - predicted) / predicted).abs() <= 0.15);
    let ratios_ok = delays.iter().all(|d| (1.6..=2.0).contains(&(d / 9_000.0)));
    verdict(
        2,
        "confirmation delay independent of k",
        spread < 0.10 && within_band && ratios_ok,
        &format!(
            "delays {:?} s, spread {:.1}%, predicted {predicted:.0} s",
            delays.iter().map(|d| d.round()).collect::<Vec<_>>(),
            spread * 100.0
        ),
    );
}

#[test]
fn criterion_03_inclusion_rate() {
    let mut cfg = SimConfig::defaults(16);
    cfg.horizon = 250_000.0;
    cfg.seed = 42;
    let report = run_simulation(&cfg, None).expect("simulation").report;
    verdict(
        3,
        "95% of mined parallel blocks reach the final chain",
        report.inclusion_rate >= 0.95,
        &format!(
            "{}/{} included ({:.2}%)",
            report.parallel_included,
            report.parallel_mined,
            report.inclusion_rate * 100.0
        ),
    );
}

#[test]
fn criterion_04_safety_sweep() {
    let mut deep = SimConfig::defaults(4);
    deep.kappa = 14;
    deep.horizon = 200_000.0;
    deep.seed = 7;
    deep.assert_liveness = false;
    let strong = measure_safety(&deep, &[0.25]).expect("sweep").remove(0);
    let mut shallow = deep.clone();
    shallow.kappa = 2;
    let weak = measure_safety(&shallow, &[0.45]).expect("sweep").remove(0);
    verdict(
        4,
        "withholding attacker: deep acceptance safe, shallow broken",
        strong.reversals == 0 && strong.tx_accepted >= 1_000 && weak.reversals >= 1,
        &format!(
            "25% power kappa=14: {} reversals / {} accepted; 45% power kappa=2: {} reversals",
            strong.reversals, strong.tx_accepted, weak.reversals
        ),
    );
}

#[test]
fn criterion_05_walk_oracle_equivalence() {
    let eps = epsilon(BETA, DELTA).unwrap();
    let mut worst = 0.0f64;
    for kappa in 1usize..=3 {
        let params = WalkParams::new(eps, kappa, 12).unwrap();
        let live = liveness_walk(&params);
        let safe = safety_walk(&params);
        for t in 0..=12usize {
            for z in -(kappa as i64)..=(kappa as i64 + 1) {
                worst = worst.max((live.get(t, z) - analysis::oracle::liveness(&params, t, z)).abs());
            }
            for z in -(kappa as i64 + 1)..=(kappa as i64) {
                worst = worst.max((safe.get(t, z) - analysis::oracle::safety(&params, t, z)).abs());
            }
        }
    }
    verdict(
        5,
        "recursion tables equal exhaustive path enumeration",
        worst < 1e-12,
        &format!("worst |table - enumeration| = {worst:.2e} over kappa<=3, t<=12"),
    );
}

#[test]
fn criterion_06_safety_closed_form() {
    let unbiased = WalkParams::new(0.0, 14, 4_000).unwrap();
    let (_, limit0) = safety_limit(&unbiased);
    let err0 = (limit0 - 2f64.powi(-14)).abs() / 2f64.powi(-14);

    let eps = epsilon(BETA, DELTA).unwrap();
    let biased = WalkParams::new(eps, 14, 4_000).unwrap();
    let (_, limit_eps) = safety_limit(&biased);
    let closed = safety_p(eps).powi(-14);
    let err_eps = (limit_eps - closed).abs() / closed;
    verdict(
        6,
        "reversal-probability limit matches p^-kappa",
        err0 < 1e-3 && err_eps < 2e-3,
        &format!(
            "eps=0: {limit0:.4e} vs 2^-14 (rel {err0:.1e}); eps={eps:.5}: {limit_eps:.4e} vs {closed:.4e} (rel {err_eps:.1e})"
        ),
    );
}

#[test]
fn criterion_07_liveness_exponential_decay() {
    let kappa = 4usize;
    let eps = epsilon(BETA, DELTA).unwrap();
    let params = WalkParams::new(eps, kappa, 20 * kappa + 1).unwrap();
    let failures = liveness_failure_sequence(&params);
    let rs: Vec<usize> = (5 * kappa..=20 * kappa).collect();
    let xs: Vec<f64> = rs.iter().map(|&r| r as f64).collect();
    let ys: Vec<f64> = rs.iter().map(|&r| failures[r].ln()).collect();
    let (slope, _, r2) = linear_fit(&xs, &ys);
    verdict(
        7,
        "acceptance-failure probability decays exponentially in rounds",
        r2 >= 0.99 && slope < 0.0,
        &format!("log-linear fit over r in [{}, {}]: slope {slope:.4}, r2 {r2:.4}", rs[0], rs.last().unwrap()),
    );
}

#[test]
fn criterion_08_frontrunning_bound() {
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
        beta: BETA,
        delta: DELTA,
    })
    .unwrap();
    let corner = frontrunning_bound(&FairnessParams {
        m_top: 1.0,
        m_bottom: 0.0,
        d: 30.0,
        beta: BETA,
        delta: 30.0,
    })
    .unwrap();
    verdict(
        8,
        "empirical frontrunning within the analytic bound",
        est.tx_included >= 10_000
            && est.rate <= bound + 3.0 * est.standard_error
            && (bound - 0.00714).abs() < 1e-4
            && (corner - 1.0 / 19.0).abs() < 1e-12,
        &format!(
            "measured {:.5} over {} txs vs bound {bound:.5}; corner case {corner:.5} = 1/19",
            est.rate, est.tx_included
        ),
    );
}

#[test]
fn criterion_09_withholding_race_bounds() {
    let (f, k, alpha, delta) = (2usize, 128usize, 0.3, 30.0);
    let lambda = k as f64 / 560.0;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut results = Vec::new();
    for (variant, cap) in [(RaceVariant::OneLessSeries, 0.5), (RaceVariant::FullSeries, 0.25)] {
        let mut worst = 0.0f64;
        let mut worst_se = 0.0f64;
        for h in 1..k {
            let est = withholding_race_montecarlo(
                f, k, h, alpha, lambda, BETA, delta, 100_000, variant, &mut rng,
            );
            if est.p_joint > worst {
                worst = est.p_joint;
                worst_se = est.se_joint;
            }
        }
        results.push((variant, worst, worst_se, cap));
    }
    let pass = results
        .iter()
        .all(|(_, worst, se, cap)| *worst <= cap + 3.0 * se);
    verdict(
        9,
        "withholding race probabilities below 1/2 and 1/4",
        pass,
        &format!(
            "{:?} worst {:.4} (se {:.4}) <= 0.5; {:?} worst {:.4} (se {:.4}) <= 0.25",
            results[0].0, results[0].1, results[0].2, results[1].0, results[1].1, results[1].2
        ),
    );
}

#[test]
fn criterion_10_utility_bounds() {
    let mut cfg = SimConfig::defaults(4);
    cfg.horizon = 300_000.0;
    cfg.seed = 21;
    cfg.fee_max = cfg.gamma;
    cfg.adversary_power = 0.25;
    cfg.kappa = 14;
    cfg.assert_liveness = false;
    let report = run_simulation(&cfg, None).expect("simulation").report;
    let gamma = cfg.gamma as f64;
    let honest_ok = report.honest_blocks > 500
        && report.honest_utility_mean >= 0.0
        && report.honest_utility_mean <= gamma;
    let adv_ok =
        report.adversary_utility_mean <= gamma + 3.0 * report.adversary_utility_se;

    // closed-form utilities under the cost-offsetting reward scheme
    let scheme = RewardScheme {
        eta_cost: 1.0,
        beta: BETA,
        lambda: 4.0 / 560.0,
        gamma,
        rho: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let deviant_ok = (0..10_000).all(|_| {
        let fee = rng.gen_range(0.0..=gamma);
        let p: f64 = rng.gen();
        let u = analysis::expected_utility(Play::Dummy, &scheme, p, fee).unwrap();
        (0.0..=gamma).contains(&u)
    });
    verdict(
        10,
        "per-block utilities bounded by the fee cap",
        honest_ok && adv_ok && deviant_ok,
        &format!(
            "honest mean {:.1} of cap {gamma}; adversary mean {:.1} (se {:.1}); deviant closed form within [0, gamma]",
            report.honest_utility_mean, report.adversary_utility_mean, report.adversary_utility_se
        ),
    );
}

#[test]
fn criterion_11_deterministic_csv() {
    let mut cfg = SimConfig::defaults(8);
    cfg.horizon = 40_000.0;
    cfg.seed = 77;
    let a = run_simulation(&cfg, None).expect("simulation");
    let b = run_simulation(&cfg, None).expect("simulation");
    verdict(
        11,
        "identical seed gives byte-identical metrics CSV",
        a.metrics_csv == b.metrics_csv && !a.metrics_csv.is_empty(),
        &format!("{} CSV bytes compared", a.metrics_csv.len()),
    );
}

fn test_params() -> ProtocolParams {
    let mut params = ProtocolParams::new(2, 2_718);
    params.initial_balances = (0..64).map(|key| (key, 10_000)).collect();
    params
}

fn remine_parallel(block: &Block, params: &ProtocolParams) -> Block {
    let mut out = block.clone();
    let mut nonce = out.nonce.wrapping_add(1);
    loop {
        let hash = interlude::crypto::pow_hash(params.oracle_seed, nonce, &out.top, out.merkle_root);
        if hash <= params.target_parallel {
            out.nonce = nonce;
            out.hash = hash;
            return out;
        }
        nonce = nonce.wrapping_add(1);
    }
}

/// Structural checks: k-set distinctness, per-rule chain mutations,
/// selection unanimity, relocation, and the traced fork-length invariant.
#[test]
fn criterion_12_structural_suite() {
    let params = test_params();
    let mut failures: Vec<String> = Vec::new();

    // k-set distinctness: a duplicate sub-chain slot must be rejected
    let genesis_top = Chain::new(&params).last_series_hash();
    let a = Arc::new(testutil::parallel_block(&params, genesis_top, 0, Vec::new(), 1_000_000, 0.0));
    let b = Arc::new(testutil::parallel_block(&params, genesis_top, 1, Vec::new(), 2_000_000, 0.0));
    let duplicate = Arc::new(Block {
        body: b.body.clone(),
        ..(*a).clone()
    });
    if validate_kset(&[a.clone(), duplicate], params.k, &params) {
        failures.push("duplicate sub-chain accepted".into());
    }
    if !validate_kset(&[a.clone(), b.clone()], params.k, &params) {
        failures.push("distinct k-set rejected".into());
    }

    // per-rule mutations on a valid 3-round chain
    let chain = testutil::build_chain(&params, 3, 4);
    validate_chain(&chain, &params).expect("constructed chain is valid");
    let tip = chain.tip.clone().unwrap();

    // rule i: break a k-set block's umbrella proof
    {
        let mut bad_block = (*tip.kset[0]).clone();
        if let BlockBody::Parallel { proof, .. } = &mut bad_block.body {
            if let Some(first) = proof.off_path.first_mut() {
                first.0[0] ^= 0xFF;
            }
        }
        let mut node = (*tip).clone();
        node.kset[0] = Arc::new(bad_block);
        let mut mutated = chain.clone();
        mutated.tip = Some(Arc::new(node));
        if validate_chain(&mutated, &params).is_ok() {
            failures.push("corrupted umbrella proof accepted".into());
        }
    }
    // rule ii: corrupt the series proof-of-work
    {
        let mut bad_series = (*tip.series).clone();
        bad_series.nonce = bad_series.nonce.wrapping_add(1);
        let mut node = (*tip).clone();
        node.series = Arc::new(bad_series);
        let mut mutated = chain.clone();
        mutated.tip = Some(Arc::new(node));
        if validate_chain(&mutated, &params).is_ok() {
            failures.push("invalid series proof-of-work accepted".into());
        }
    }
    // rule iii: point the k-set at the wrong predecessor
    {
        let bogus = interlude::crypto::HashValue([9u8; 32]);
        let mut node = (*tip).clone();
        node.kset = tip
            .kset
            .iter()
            .map(|blk| {
                let mut moved = (**blk).clone();
                moved.top = vec![bogus];
                Arc::new(remine_parallel(&moved, &params))
            })
            .collect();
        let mut series = (*tip.series).clone();
        series.top = node.kset.iter().map(|b| b.hash).collect();
        let (nonce, hash) = interlude::node::mine_nonce(
            params.oracle_seed,
            &mut ChaCha8Rng::seed_from_u64(8),
            &series.top,
            series.merkle_root,
            params.target_series,
        );
        series.nonce = nonce;
        series.hash = hash;
        node.series = Arc::new(series);
        let mut mutated = chain.clone();
        mutated.tip = Some(Arc::new(node));
        if validate_chain(&mutated, &params).is_ok() {
            failures.push("k-set linked to wrong predecessor accepted".into());
        }
    }
    // rule iv: parallel proof-of-work above target
    {
        let mut easy = params.clone();
        easy.target_parallel = interlude::crypto::HashValue::MAX;
        let loose = loop {
            // find a nonce meeting only the loosened target
            let candidate = testutil::parallel_block(
                &easy,
                tip.series.hash,
                0,
                Vec::new(),
                9_000_000 + rand::random::<u16>() as u64,
                0.0,
            );
            if candidate.hash > params.target_parallel {
                break candidate;
            }
        };
        let (next, placed) = chain.with_partial_block(Arc::new(loose));
        if placed && validate_chain(&next, &params).is_ok() {
            failures.push("parallel block above target accepted".into());
        }
    }
    // rule v: recursion catches a violation buried below the tip
    {
        let deep = chain.node_at(1).unwrap();
        let mut bad_series = (*deep.series).clone();
        bad_series.nonce = bad_series.nonce.wrapping_add(1);
        let mut deep_node = (*deep).clone();
        deep_node.series = Arc::new(bad_series);
        let deep_arc = Arc::new(deep_node);
        let mid = chain.node_at(2).unwrap();
        let mut mid_node = (*mid).clone();
        mid_node.parent = Some(deep_arc);
        let mut tip_node = (*tip).clone();
        tip_node.parent = Some(Arc::new(mid_node));
        let mut mutated = chain.clone();
        mutated.tip = Some(Arc::new(tip_node));
        if validate_chain(&mutated, &params).is_ok() {
            failures.push("corrupted interior round accepted".into());
        }
    }

    // selection unanimity over all arrival permutations
    {
        let chains = [
            testutil::build_chain(&params, 3, 10),
            testutil::build_chain(&params, 2, 11),
            testutil::build_chain(&params, 3, 12),
        ];
        let reference = max_valid(chains.iter()).unwrap().id();
        let orders: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for order in orders {
            let winner = max_valid(order.iter().map(|&i| &chains[i])).unwrap();
            if winner.id() != reference {
                failures.push(format!("selection depends on arrival order {order:?}"));
            }
        }
    }

    // umbrella relocation: identical proof-of-work valid on another branch
    {
        let sets: Vec<Vec<interlude::ledger::Transaction>> = vec![Vec::new(); params.k];
        let tree = interlude::crypto::MerkleTree::build(params.oracle_seed, params.k, &sets).unwrap();
        let template = MiningTemplate {
            top: genesis_top,
            tree,
            tx_sets: sets,
        };
        let original = testutil::parallel_block(&params, genesis_top, 0, Vec::new(), 5_000_000, 0.0);
        // rebuild under the shared empty-set template so relocation applies
        let (nonce, hash) = interlude::node::mine_nonce(
            params.oracle_seed,
            &mut ChaCha8Rng::seed_from_u64(3),
            &[genesis_top],
            template.tree.root,
            params.target_parallel,
        );
        let mut original = original;
        original.merkle_root = template.tree.root;
        original.nonce = nonce;
        original.hash = hash;
        original.body = BlockBody::Parallel {
            subchain: 0,
            proof: template.tree.prove(0).unwrap(),
        };
        let moved = relocate_block(&original, &template, 1).expect("branch exists");
        if moved.pow_identity() != original.pow_identity() {
            failures.push("relocation changed the proof-of-work identity".into());
        }
        let other = Arc::new(testutil::parallel_block(&params, genesis_top, 0, Vec::new(), 7_000_000, 0.0));
        let mut kset = vec![other, Arc::new(moved)];
        kset.sort_by_key(|b| match &b.body {
            BlockBody::Parallel { subchain, .. } => *subchain,
            BlockBody::Series { .. } => usize::MAX,
        });
        if !validate_kset(&kset, params.k, &params) {
            failures.push("relocated block rejected in new slot".into());
        }
    }

    // fork-length equality asserted over a full multi-party trace
    {
        let mut cfg = SimConfig::defaults(8);
        cfg.n_honest = 5;
        cfg.horizon = 60_000.0;
        cfg.seed = 31;
        if let Err(err) = run_simulation(&cfg, None) {
            failures.push(format!("traced run violated an invariant: {err}"));
        }
    }

    verdict(
        12,
        "structural property suite",
        failures.is_empty(),
        &if failures.is_empty() {
            "distinctness, 5 rule mutations, 6 selection permutations, relocation, traced forks".to_string()
        } else {
            failures.join("; ")
        },
    );
}
