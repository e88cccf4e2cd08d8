//! Emulated random oracle, Merkle commitments over per-sub-chain transaction
//! sets, and the umbrella proof-of-work check.
//!
//! The oracle is a seeded keyed pseudo-random function, not a cryptographic
//! hash. Every analysis in this crate models hashing as an ideal oracle, so a
//! fast PRF with a fixed seed gives reproducible runs without changing any
//! measured quantity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ledger::Transaction;

/// 256-bit oracle output. Ordered as a big-endian unsigned integer; target
/// comparisons use `<=`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HashValue(pub [u8; 32]);

impl HashValue {
    pub const ZERO: HashValue = HashValue([0u8; 32]);
    pub const MAX: HashValue = HashValue([0xffu8; 32]);

    /// Target with acceptance probability `2^-log2_inv` under a uniform oracle.
    pub fn target_with_difficulty(log2_inv: u32) -> HashValue {
        let mut out = [0xffu8; 32];
        let full = (log2_inv / 8) as usize;
        for byte in out.iter_mut().take(full) {
            *byte = 0;
        }
        if full < 32 {
            out[full] = 0xff >> (log2_inv % 8);
        }
        HashValue(out)
    }

    pub fn to_hex(self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(s: &str) -> Option<HashValue> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            out[i] = (hi * 16 + lo) as u8;
        }
        Some(HashValue(out))
    }
}

impl std::fmt::Debug for HashValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", &self.to_hex()[..16])
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Keyed PRF over arbitrary bytes. Deterministic given (seed, input).
pub fn digest(seed: u64, input: &[u8]) -> HashValue {
    let mut lanes = [
        splitmix64(seed ^ 0x243f_6a88_85a3_08d3),
        splitmix64(seed ^ 0x1319_8a2e_0370_7344),
        splitmix64(seed ^ 0xa409_3822_299f_31d0),
        splitmix64(seed ^ 0x082e_fa98_ec4e_6c89),
    ];
    for (i, chunk) in input.chunks(8).enumerate() {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        let w = u64::from_be_bytes(word) ^ ((chunk.len() as u64) << 56).rotate_left(17);
        let lane = i % 4;
        lanes[lane] = splitmix64(lanes[lane] ^ w ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    // length and cross-lane finalization rounds
    lanes[0] = splitmix64(lanes[0] ^ (input.len() as u64));
    for _ in 0..2 {
        lanes[1] = splitmix64(lanes[1] ^ lanes[0]);
        lanes[2] = splitmix64(lanes[2] ^ lanes[1]);
        lanes[3] = splitmix64(lanes[3] ^ lanes[2]);
        lanes[0] = splitmix64(lanes[0] ^ lanes[3]);
    }
    let mut out = [0u8; 32];
    for (i, lane) in lanes.iter().enumerate() {
        out[i * 8..(i + 1) * 8].copy_from_slice(&lane.to_be_bytes());
    }
    HashValue(out)
}

/// Stateful oracle front-end: memoized answers plus the per-party rate limit.
/// `rate_limit_d = 0` disables the limit (the default in simulation mode,
/// where mining times come from the Poisson model instead).
pub struct Oracle {
    pub seed: u64,
    memo: HashMap<Vec<u8>, HashValue>,
    last_query_time: HashMap<u64, f64>,
    pub rate_limit_d: f64,
}

impl Oracle {
    pub fn new(seed: u64) -> Oracle {
        Oracle {
            seed,
            memo: HashMap::new(),
            last_query_time: HashMap::new(),
            rate_limit_d: 0.0,
        }
    }

    pub fn with_rate_limit(seed: u64, d: f64) -> Oracle {
        let mut o = Oracle::new(seed);
        o.rate_limit_d = d;
        o
    }

    /// Returns `None` iff the party queried again within `rate_limit_d`
    /// simulated seconds. A null response still counts as a query.
    pub fn query(&mut self, party: u64, time: f64, input: &[u8]) -> Option<HashValue> {
        if self.rate_limit_d > 0.0 {
            if let Some(&last) = self.last_query_time.get(&party) {
                if time - last < self.rate_limit_d {
                    self.last_query_time.insert(party, time);
                    return None;
                }
            }
        }
        self.last_query_time.insert(party, time);
        let seed = self.seed;
        Some(
            *self
                .memo
                .entry(input.to_vec())
                .or_insert_with(|| digest(seed, input)),
        )
    }
}

/// Canonical serialization helpers: fixed-width big-endian integers,
/// length-prefixed lists.
pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

/// Canonical bytes of one transaction.
pub fn tx_bytes(tx: &Transaction) -> Vec<u8> {
    let mut out = Vec::new();
    put_u64(&mut out, tx.id);
    put_u32(&mut out, tx.senders.len() as u32);
    for s in &tx.senders {
        put_u64(&mut out, *s);
    }
    put_u32(&mut out, tx.outputs.len() as u32);
    for (k, v) in &tx.outputs {
        put_u64(&mut out, *k);
        put_u64(&mut out, *v);
    }
    put_u64(&mut out, tx.fee);
    out
}

/// Canonical bytes of a transaction set: transactions sorted by id, then
/// length-prefixed. An empty set serializes to just the count, so the leaf
/// digest of an empty branch is still distinct per sub-chain index (the index
/// is part of the leaf tag).
pub fn tx_set_bytes(txs: &[Transaction]) -> Vec<u8> {
    let mut sorted: Vec<&Transaction> = txs.iter().collect();
    sorted.sort_by_key(|t| t.id);
    let mut out = Vec::new();
    put_u32(&mut out, sorted.len() as u32);
    for t in sorted {
        out.extend_from_slice(&tx_bytes(t));
    }
    out
}

const LEAF_TAG: &[u8] = b"leaf";
const NODE_TAG: &[u8] = b"node";

pub fn leaf_digest(seed: u64, branch_index: usize, txs: &[Transaction]) -> HashValue {
    let mut input = Vec::new();
    input.extend_from_slice(LEAF_TAG);
    put_u32(&mut input, branch_index as u32);
    input.extend_from_slice(&tx_set_bytes(txs));
    digest(seed, &input)
}

fn node_digest(seed: u64, left: HashValue, right: HashValue) -> HashValue {
    let mut input = Vec::with_capacity(4 + 64);
    input.extend_from_slice(NODE_TAG);
    input.extend_from_slice(&left.0);
    input.extend_from_slice(&right.0);
    digest(seed, &input)
}

/// Inclusion proof for one branch: the off-path digests from leaf level to
/// the root, `ceil(log2 k)` of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub branch_index: usize,
    pub off_path: Vec<HashValue>,
}

/// Merkle tree over exactly `k` transaction-set leaves, one per sub-chain in
/// index order. Leaves are padded to the next power of two with a fixed
/// padding digest so proofs have `ceil(log2 k)` off-path entries.
#[derive(Clone, Debug)]
pub struct MerkleTree {
    pub leaves: Vec<HashValue>,
    levels: Vec<Vec<HashValue>>,
    pub root: HashValue,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("expected {expected} transaction sets, got {got}")]
    WrongSetCount { expected: usize, got: usize },
    #[error("branch index {index} out of range for k={k}")]
    BranchOutOfRange { index: usize, k: usize },
}

impl MerkleTree {
    /// Builds the umbrella commitment from `k` per-sub-chain candidate sets.
    pub fn build(
        seed: u64,
        k: usize,
        tx_sets: &[Vec<Transaction>],
    ) -> Result<MerkleTree, MerkleError> {
        if tx_sets.len() != k || k == 0 {
            return Err(MerkleError::WrongSetCount {
                expected: k,
                got: tx_sets.len(),
            });
        }
        let leaves: Vec<HashValue> = tx_sets
            .iter()
            .enumerate()
            .map(|(i, set)| leaf_digest(seed, i, set))
            .collect();
        Ok(MerkleTree::from_leaves(seed, leaves))
    }

    pub fn from_leaves(seed: u64, leaves: Vec<HashValue>) -> MerkleTree {
        let width = leaves.len().next_power_of_two();
        let pad = digest(seed, b"pad");
        let mut level: Vec<HashValue> = leaves.clone();
        level.resize(width, pad);
        let mut levels = vec![level];
        while levels.last().map(Vec::len) != Some(1) {
            let prev = levels.last().cloned().unwrap_or_default();
            let next: Vec<HashValue> = prev
                .chunks(2)
                .map(|pair| node_digest(seed, pair[0], pair[1]))
                .collect();
            levels.push(next);
        }
        let root = levels.last().and_then(|l| l.first()).copied().unwrap_or(HashValue::ZERO);
        MerkleTree {
            leaves,
            levels,
            root,
        }
    }

    pub fn k(&self) -> usize {
        self.leaves.len()
    }

    pub fn prove(&self, branch_index: usize) -> Result<MerkleProof, MerkleError> {
        if branch_index >= self.leaves.len() {
            return Err(MerkleError::BranchOutOfRange {
                index: branch_index,
                k: self.leaves.len(),
            });
        }
        let mut off_path = Vec::new();
        let mut pos = branch_index;
        for level in &self.levels[..self.levels.len() - 1] {
            off_path.push(level[pos ^ 1]);
            pos >>= 1;
        }
        Ok(MerkleProof {
            branch_index,
            off_path,
        })
    }
}

/// Checks `proof` against a root and a leaf digest.
pub fn merkle_verify(seed: u64, root: HashValue, leaf: HashValue, proof: &MerkleProof) -> bool {
    let mut acc = leaf;
    let mut pos = proof.branch_index;
    for sibling in &proof.off_path {
        acc = if pos & 1 == 0 {
            node_digest(seed, acc, *sibling)
        } else {
            node_digest(seed, *sibling, acc)
        };
        pos >>= 1;
    }
    acc == root
}

/// Canonical puzzle preimage: nonce(8B) || top_link(32B per link) || root(32B).
pub fn pow_preimage(nonce: u64, top_links: &[HashValue], root: HashValue) -> Vec<u8> {
    let mut input = Vec::with_capacity(8 + 32 * top_links.len() + 32);
    put_u64(&mut input, nonce);
    for link in top_links {
        input.extend_from_slice(&link.0);
    }
    input.extend_from_slice(&root.0);
    input
}

pub fn pow_hash(seed: u64, nonce: u64, top_links: &[HashValue], root: HashValue) -> HashValue {
    digest(seed, &pow_preimage(nonce, top_links, root))
}

/// Umbrella PoW check: oracle output on nonce || top || root at or below the
/// target.
pub fn umbrella_pow_check(
    seed: u64,
    nonce: u64,
    top_links: &[HashValue],
    root: HashValue,
    target: HashValue,
) -> bool {
    pow_hash(seed, nonce, top_links, root) <= target
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::Transaction;

    fn tx(id: u64, sender: u64, to: u64, amount: u64, fee: u64) -> Transaction {
        Transaction {
            id,
            senders: vec![sender],
            outputs: vec![(to, amount)],
            fee,
        }
    }

    #[test]
    fn oracle_determinism() {
        let mut o = Oracle::new(42);
        let a = o.query(1, 0.0, b"hello").unwrap();
        let b = o.query(2, 0.0, b"hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(digest(42, b"hello"), a);
        assert_ne!(digest(42, b"hello"), digest(43, b"hello"));
        assert_ne!(digest(42, b"hello"), digest(42, b"hellp"));
    }

    #[test]
    fn oracle_rate_limit() {
        let mut o = Oracle::with_rate_limit(42, 5.0);
        assert!(o.query(1, 0.0, b"x").is_some());
        assert!(o.query(1, 3.0, b"x").is_none());
        // another party is unaffected
        assert!(o.query(2, 3.0, b"x").is_some());
        assert!(o.query(1, 9.0, b"x").is_some());
    }

    #[test]
    fn oracle_top_byte_uniform_chi_squared() {
        // 10^5 distinct inputs, 256 bins on the top byte.
        // chi-squared critical value for df=255 at p=0.01 is 310.457.
        let mut counts = [0u64; 256];
        let n = 100_000u64;
        for i in 0..n {
            let h = digest(7, &i.to_be_bytes());
            counts[h.0[0] as usize] += 1;
        }
        let expected = n as f64 / 256.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 310.457, "chi2 = {chi2}");
    }

    #[test]
    fn single_leaf_tree_root_is_leaf() {
        let set = vec![tx(1, 5, 6, 10, 1)];
        let tree = MerkleTree::build(9, 1, std::slice::from_ref(&set)).unwrap();
        assert_eq!(tree.root, leaf_digest(9, 0, &set));
        let proof = tree.prove(0).unwrap();
        assert!(proof.off_path.is_empty());
        assert!(merkle_verify(9, tree.root, tree.leaves[0], &proof));
    }

    #[test]
    fn permuting_txs_in_set_preserves_root() {
        let a = tx(1, 4, 9, 3, 1);
        let b = tx(2, 8, 9, 4, 1);
        let sets1 = vec![vec![], vec![], vec![a.clone(), b.clone()], vec![]];
        let sets2 = vec![vec![], vec![], vec![b, a], vec![]];
        let t1 = MerkleTree::build(9, 4, &sets1).unwrap();
        let t2 = MerkleTree::build(9, 4, &sets2).unwrap();
        assert_eq!(t1.root, t2.root);
    }

    #[test]
    fn flipping_amount_changes_root() {
        let mut sets = vec![vec![], vec![], vec![tx(1, 4, 9, 3, 1)], vec![]];
        let t1 = MerkleTree::build(9, 4, &sets).unwrap();
        sets[2][0].outputs[0].1 = 4;
        let t2 = MerkleTree::build(9, 4, &sets).unwrap();
        assert_ne!(t1.root, t2.root);
    }

    #[test]
    fn wrong_set_count_rejected() {
        let err = MerkleTree::build(9, 4, &[vec![], vec![]]).unwrap_err();
        assert_eq!(err, MerkleError::WrongSetCount { expected: 4, got: 2 });
    }

    #[test]
    fn proof_length_is_log2_k() {
        let sets: Vec<Vec<Transaction>> = (0..4).map(|_| vec![]).collect();
        let tree = MerkleTree::build(9, 4, &sets).unwrap();
        assert_eq!(tree.prove(2).unwrap().off_path.len(), 2);
        assert!(tree.prove(4).is_err());
    }

    #[test]
    fn proof_soundness_small_k() {
        // For k <= 8 only the generating (leaf, index) pair validates.
        for k in 1..=8usize {
            let sets: Vec<Vec<Transaction>> = (0..k)
                .map(|i| vec![tx(i as u64 + 1, i as u64, 99, 1, 0)])
                .collect();
            let tree = MerkleTree::build(11, k, &sets).unwrap();
            for i in 0..k {
                let proof = tree.prove(i).unwrap();
                for j in 0..k {
                    let ok = merkle_verify(11, tree.root, tree.leaves[j], &proof);
                    assert_eq!(ok, i == j, "k={k} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn pow_check_extremes() {
        let root = digest(3, b"root");
        let top = [digest(3, b"top")];
        assert!(umbrella_pow_check(3, 123, &top, root, HashValue::MAX));
        assert!(!umbrella_pow_check(3, 123, &top, root, HashValue::ZERO));
    }

    #[test]
    fn pow_acceptance_rate_matches_target() {
        // target = median of the hash space: acceptance rate over 10^4 random
        // nonces should be 0.5 +- 0.02.
        let target = HashValue::target_with_difficulty(1);
        let root = digest(3, b"root");
        let top = [digest(3, b"top")];
        let mut hits = 0u32;
        for nonce in 0..10_000u64 {
            if umbrella_pow_check(3, nonce, &top, root, target) {
                hits += 1;
            }
        }
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.5).abs() < 0.02, "rate = {rate}");
    }
}
