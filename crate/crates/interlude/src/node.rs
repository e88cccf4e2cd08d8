//! Party behavior: template construction, mining, relocation of umbrella
//! proofs, view merging, and the withholding adversary.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::chain::{max_valid, validate_chain, Block, BlockBody, Chain, ProtocolParams};
use crate::crypto::{self, HashValue, MerkleTree};
use crate::ledger::{subchain_index, Transaction};

/// Candidate transaction sets for one umbrella proof-of-work attempt,
/// together with the Merkle tree committing to them.
#[derive(Clone, Debug)]
pub struct MiningTemplate {
    pub top: HashValue,
    pub tree: MerkleTree,
    pub tx_sets: Vec<Vec<Transaction>>,
}

/// Random-nonce search until the hash meets the target. With cheap targets
/// this terminates in a handful of oracle evaluations.
pub fn mine_nonce<R: Rng>(
    seed: u64,
    rng: &mut R,
    top: &[HashValue],
    root: HashValue,
    target: HashValue,
) -> (u64, HashValue) {
    loop {
        let nonce: u64 = rng.gen();
        let hash = crypto::pow_hash(seed, nonce, top, root);
        if hash <= target {
            return (nonce, hash);
        }
    }
}

/// Builds a relocated copy of a mined parallel block: same proof-of-work
/// (nonce, root, hash), different branch revealed.
pub fn relocate_block(
    block: &Block,
    template: &MiningTemplate,
    new_subchain: usize,
) -> Option<Block> {
    if block.merkle_root != template.tree.root {
        return None;
    }
    let proof = template.tree.prove(new_subchain).ok()?;
    Some(Block {
        body: BlockBody::Parallel {
            subchain: new_subchain,
            proof,
        },
        txs: template.tx_sets.get(new_subchain)?.clone(),
        ..block.clone()
    })
}

/// Honest party state. The simulator owns scheduling; this struct owns the
/// protocol decisions.
pub struct NodeState {
    pub party: u64,
    pub chain: Chain,
    pub mempool: BTreeMap<u64, Transaction>,
    template: Option<Arc<MiningTemplate>>,
    /// Own parallel blocks mined for the current round, kept for relocation.
    mined: Vec<(Arc<Block>, Arc<MiningTemplate>)>,
}

impl NodeState {
    pub fn new(party: u64, params: &ProtocolParams) -> NodeState {
        NodeState {
            party,
            chain: Chain::new(params),
            mempool: BTreeMap::new(),
            template: None,
            mined: Vec::new(),
        }
    }

    pub fn receive_tx(&mut self, tx: Transaction) {
        self.mempool.entry(tx.id).or_insert(tx);
    }

    /// Drops mempool entries already applied by the adopted chain.
    pub fn prune_mempool(&mut self) {
        let spent = &self.chain.balance_state().spent_tx_ids;
        self.mempool.retain(|id, _| !spent.contains(id));
    }

    /// Candidate sets: pending typical transactions bucketed by sub-chain,
    /// greedily filtered so each bucket validates against the current state
    /// and keeps its fee total under the per-block cap. `max_block_txs` caps
    /// each bucket.
    pub fn refresh_template(&mut self, params: &ProtocolParams, max_block_txs: usize) {
        let state = self.chain.balance_state();
        let partial_ids: std::collections::HashSet<u64> = self
            .chain
            .partial
            .values()
            .flat_map(|b| b.txs.iter().map(|t| t.id))
            .collect();
        let mut sets: Vec<Vec<Transaction>> = vec![Vec::new(); params.k];
        let mut fee_totals: Vec<u64> = vec![0; params.k];
        for tx in self.mempool.values() {
            if state.spent_tx_ids.contains(&tx.id)
                || partial_ids.contains(&tx.id)
                || !tx.is_typical()
            {
                continue;
            }
            let Ok(subchain) = subchain_index(tx.senders[0], params.k) else {
                continue;
            };
            let bucket = &mut sets[subchain];
            if bucket.len() >= max_block_txs || fee_totals[subchain] + tx.fee > params.fee_cap {
                continue;
            }
            bucket.push(tx.clone());
            if state.validate_tx_batch(bucket) {
                fee_totals[subchain] += tx.fee;
            } else {
                bucket.pop();
            }
        }
        let top = self.chain.last_series_hash();
        let tree = MerkleTree::build(params.oracle_seed, params.k, &sets)
            .expect("template has exactly k candidate sets");
        self.template = Some(Arc::new(MiningTemplate {
            top,
            tree,
            tx_sets: sets,
        }));
    }

    fn template_for_tip(&mut self, params: &ProtocolParams, max_block_txs: usize) -> Arc<MiningTemplate> {
        let stale = self
            .template
            .as_ref()
            .map_or(true, |t| t.top != self.chain.last_series_hash());
        if stale {
            self.refresh_template(params, max_block_txs);
        }
        self.template.as_ref().expect("refreshed above").clone()
    }

    /// One parallel proof-of-work success: mines against the umbrella root
    /// and reveals a branch for a sub-chain still missing from the local
    /// incomplete k-set (uniform among the missing ones).
    pub fn mine_parallel<R: Rng>(
        &mut self,
        params: &ProtocolParams,
        rng: &mut R,
        now: f64,
        max_block_txs: usize,
    ) -> Option<Arc<Block>> {
        let template = self.template_for_tip(params, max_block_txs);
        let missing: Vec<usize> = (0..params.k)
            .filter(|s| !self.chain.partial.contains_key(s))
            .collect();
        let subchain = if missing.is_empty() {
            rng.gen_range(0..params.k)
        } else {
            missing[rng.gen_range(0..missing.len())]
        };
        let (nonce, hash) = mine_nonce(
            params.oracle_seed,
            rng,
            &[template.top],
            template.tree.root,
            params.target_parallel,
        );
        let block = Arc::new(Block {
            top: vec![template.top],
            body: BlockBody::Parallel {
                subchain,
                proof: template.tree.prove(subchain).ok()?,
            },
            merkle_root: template.tree.root,
            nonce,
            hash,
            txs: template.tx_sets[subchain].clone(),
            miner: self.party,
            minted_at: now,
        });
        let (next, placed) = self.chain.with_partial_block(block.clone());
        if placed {
            self.chain = next;
        }
        self.mined.push((block.clone(), template));
        Some(block)
    }

    /// One series proof-of-work success. Succeeds only if the local k-set is
    /// complete; the sealed round carries any pending atypical transactions
    /// that validate.
    pub fn mine_series<R: Rng>(
        &mut self,
        params: &ProtocolParams,
        rng: &mut R,
        now: f64,
    ) -> Option<Arc<Block>> {
        if self.chain.partial.len() != params.k {
            return None;
        }
        let top: Vec<HashValue> = self.chain.partial.values().map(|b| b.hash).collect();
        let proofs: Vec<_> = self
            .chain
            .partial
            .values()
            .map(|b| match &b.body {
                BlockBody::Parallel { proof, .. } => proof.clone(),
                BlockBody::Series { .. } => unreachable!("partial set holds parallel blocks"),
            })
            .collect();
        let included = self.chain.all_tx_ids();
        let state = self.chain.balance_state();
        let mut txs: Vec<Transaction> = Vec::new();
        for tx in self.mempool.values() {
            if tx.is_typical() || included.contains(&tx.id) {
                continue;
            }
            txs.push(tx.clone());
            if !state.validate_tx_batch(&txs) {
                txs.pop();
            }
        }
        let root = crypto::leaf_digest(params.oracle_seed, 0, &txs);
        let (nonce, hash) = mine_nonce(params.oracle_seed, rng, &top, root, params.target_series);
        let series = Arc::new(Block {
            top,
            body: BlockBody::Series { proofs },
            merkle_root: root,
            nonce,
            hash,
            txs,
            miner: self.party,
            minted_at: now,
        });
        match self.chain.extend(series.clone(), params) {
            Ok(next) => {
                self.chain = next;
                self.mined.clear();
                self.template = None;
                Some(series)
            }
            Err(_) => None,
        }
    }

    /// Folds a received parallel block into the local view. Returns the block
    /// actually placed (lower hash wins per sub-chain), or None if the view
    /// is unchanged.
    pub fn integrate_block(&mut self, block: Arc<Block>) -> bool {
        let (next, placed) = self.chain.with_partial_block(block);
        if placed {
            self.chain = next;
        }
        placed
    }

    /// Merges a received chain after full validation. Returns true iff the
    /// local view changed.
    pub fn integrate_chain(&mut self, other: &Chain, params: &ProtocolParams) -> bool {
        if validate_chain(other, params).is_err() {
            return false;
        }
        self.integrate_validated_chain(other, params)
    }

    /// Merge step for a chain the caller has already validated (e.g. through
    /// an incremental validator): same-prefix incomplete k-sets are united
    /// sub-chain by sub-chain (lower hash wins), then the winner is chosen by
    /// the selection rule. Returns true iff the local view changed.
    pub fn integrate_validated_chain(&mut self, other: &Chain, _params: &ProtocolParams) -> bool {
        let candidate = if other.last_series_hash() == self.chain.last_series_hash() {
            let mut merged = self.chain.clone();
            for block in other.partial.values() {
                let (next, placed) = merged.with_partial_block(block.clone());
                if placed {
                    merged = next;
                }
            }
            merged
        } else {
            other.clone()
        };
        let before = self.chain.id();
        let adopted = max_valid([&self.chain, &candidate]).expect("two candidates");
        let changed = adopted.id() != before;
        if changed {
            self.chain = adopted;
            if self.chain.len() > 0
                && self
                    .mined
                    .first()
                    .map_or(false, |(b, _)| b.top.first() != Some(&self.chain.last_series_hash()))
            {
                self.mined.clear();
                self.template = None;
            }
        }
        changed
    }

    /// After a view change, republishes any own proof-of-work whose branch
    /// slot was taken by a lower-hash rival, relocating it to a sub-chain
    /// still missing (uniform choice). One PoW, at most one live placement.
    pub fn relocations<R: Rng>(&mut self, params: &ProtocolParams, rng: &mut R) -> Vec<Arc<Block>> {
        let mut out = Vec::new();
        let tip = self.chain.last_series_hash();
        let mined = std::mem::take(&mut self.mined);
        for (block, template) in &mined {
            if block.top.first() != Some(&tip) {
                continue;
            }
            let displaced = self
                .chain
                .partial
                .values()
                .all(|b| b.pow_identity() != block.pow_identity());
            if !displaced {
                continue;
            }
            let missing: Vec<usize> = (0..params.k)
                .filter(|s| !self.chain.partial.contains_key(s))
                .collect();
            if missing.is_empty() {
                continue;
            }
            let target = missing[rng.gen_range(0..missing.len())];
            if let Some(relocated) = relocate_block(block, template, target) {
                let relocated = Arc::new(relocated);
                if self.integrate_block(relocated.clone()) {
                    out.push(relocated);
                }
            }
        }
        self.mined = mined;
        out
    }
}

/// Withholding attacker: mines an empty private fork, resets it whenever the
/// public chain overtakes it, and publishes once the private chain both leads
/// the public one and has diverged deeper than the victim's acceptance depth.
pub struct AdversaryState {
    pub party: u64,
    pub chain: Chain,
    pub public_len: usize,
    /// Series height at which the private fork left the public chain.
    pub fork_height: usize,
    /// Acceptance depth the attack is aimed at.
    pub kappa: usize,
}

impl AdversaryState {
    pub fn new(party: u64, kappa: usize, params: &ProtocolParams) -> AdversaryState {
        AdversaryState {
            party,
            chain: Chain::new(params),
            public_len: 0,
            fork_height: 0,
            kappa,
        }
    }

    /// Tracks the best public chain; abandons the private fork when it falls
    /// behind. Returns true if the private fork was reset.
    pub fn observe_public(&mut self, public: &Chain) -> bool {
        self.public_len = self.public_len.max(public.len());
        if public.len() > self.chain.len() {
            self.chain = public.clone();
            self.fork_height = public.len();
            true
        } else {
            false
        }
    }

    /// Extends the private fork with an empty parallel block on the first
    /// free sub-chain.
    pub fn mine_parallel<R: Rng>(
        &mut self,
        params: &ProtocolParams,
        rng: &mut R,
        now: f64,
    ) -> Option<Arc<Block>> {
        let subchain = (0..params.k).find(|s| !self.chain.partial.contains_key(s))?;
        let sets: Vec<Vec<Transaction>> = vec![Vec::new(); params.k];
        let tree = MerkleTree::build(params.oracle_seed, params.k, &sets).ok()?;
        let top = self.chain.last_series_hash();
        let (nonce, hash) = mine_nonce(
            params.oracle_seed,
            rng,
            &[top],
            tree.root,
            params.target_parallel,
        );
        let block = Arc::new(Block {
            top: vec![top],
            body: BlockBody::Parallel {
                subchain,
                proof: tree.prove(subchain).ok()?,
            },
            merkle_root: tree.root,
            nonce,
            hash,
            txs: Vec::new(),
            miner: self.party,
            minted_at: now,
        });
        let (next, placed) = self.chain.with_partial_block(block.clone());
        if placed {
            self.chain = next;
        }
        Some(block)
    }

    pub fn mine_series<R: Rng>(
        &mut self,
        params: &ProtocolParams,
        rng: &mut R,
        now: f64,
    ) -> Option<Arc<Block>> {
        if self.chain.partial.len() != params.k {
            return None;
        }
        let top: Vec<HashValue> = self.chain.partial.values().map(|b| b.hash).collect();
        let proofs: Vec<_> = self
            .chain
            .partial
            .values()
            .map(|b| match &b.body {
                BlockBody::Parallel { proof, .. } => proof.clone(),
                BlockBody::Series { .. } => unreachable!(),
            })
            .collect();
        let root = crypto::leaf_digest(params.oracle_seed, 0, &[]);
        let (nonce, hash) = mine_nonce(params.oracle_seed, rng, &top, root, params.target_series);
        let series = Arc::new(Block {
            top,
            body: BlockBody::Series { proofs },
            merkle_root: root,
            nonce,
            hash,
            txs: Vec::new(),
            miner: self.party,
            minted_at: now,
        });
        match self.chain.extend(series.clone(), params) {
            Ok(next) => {
                self.chain = next;
                Some(series)
            }
            Err(_) => None,
        }
    }

    /// Publishes the private fork when doing so reverses transactions an
    /// honest observer already accepted at depth `kappa`.
    pub fn should_publish(&self) -> bool {
        self.chain.len() > self.public_len && self.public_len > self.fork_height + self.kappa
    }
}

/// Deterministic chain construction helpers shared by unit tests, the
/// acceptance suite and examples.
pub mod testutil {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Mines one empty-other-branches parallel block for `subchain`, scanning
    /// nonces upward from a hint for reproducibility.
    pub fn parallel_block(
        params: &ProtocolParams,
        top: HashValue,
        subchain: usize,
        txs: Vec<Transaction>,
        nonce_hint: u64,
        now: f64,
    ) -> Block {
        let mut sets: Vec<Vec<Transaction>> = vec![Vec::new(); params.k];
        sets[subchain] = txs.clone();
        let tree = MerkleTree::build(params.oracle_seed, params.k, &sets)
            .expect("k candidate sets");
        let mut nonce = nonce_hint;
        let hash = loop {
            let h = crypto::pow_hash(params.oracle_seed, nonce, &[top], tree.root);
            if h <= params.target_parallel {
                break h;
            }
            nonce = nonce.wrapping_add(1);
        };
        Block {
            top: vec![top],
            body: BlockBody::Parallel {
                subchain,
                proof: tree.prove(subchain).expect("branch within k"),
            },
            merkle_root: tree.root,
            nonce,
            hash,
            txs,
            miner: subchain as u64,
            minted_at: now,
        }
    }

    /// Seals the chain's complete k-set with a freshly mined series block.
    pub fn series_block(params: &ProtocolParams, chain: &Chain, rng: &mut impl Rng, now: f64) -> Arc<Block> {
        let top: Vec<HashValue> = chain.partial.values().map(|b| b.hash).collect();
        let proofs: Vec<_> = chain
            .partial
            .values()
            .map(|b| match &b.body {
                BlockBody::Parallel { proof, .. } => proof.clone(),
                BlockBody::Series { .. } => unreachable!(),
            })
            .collect();
        let root = crypto::leaf_digest(params.oracle_seed, 0, &[]);
        let (nonce, hash) = mine_nonce(params.oracle_seed, rng, &top, root, params.target_series);
        Arc::new(Block {
            top,
            body: BlockBody::Series { proofs },
            merkle_root: root,
            nonce,
            hash,
            txs: Vec::new(),
            miner: u64::MAX - 1,
            minted_at: now,
        })
    }

    /// Builds a valid chain of `rounds` sealed rounds. Each parallel block
    /// carries one small transfer from a sender on its own sub-chain, drawn
    /// from the configured initial balances.
    pub fn build_chain(params: &ProtocolParams, rounds: usize, seed: u64) -> Chain {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chain = Chain::new(params);
        let mut next_id = seed.wrapping_mul(1_000_000) + 1;
        for round in 0..rounds {
            for subchain in 0..params.k {
                let sender = pick_sender(params, &chain, subchain);
                let txs = match sender {
                    Some(s) => {
                        let tx = Transaction {
                            id: next_id,
                            senders: vec![s],
                            outputs: vec![(s.wrapping_add(1), 1)],
                            fee: 0,
                        };
                        next_id += 1;
                        vec![tx]
                    }
                    None => Vec::new(),
                };
                let hint = rng.gen();
                let block = parallel_block(
                    params,
                    chain.last_series_hash(),
                    subchain,
                    txs,
                    hint,
                    round as f64,
                );
                let (next, placed) = chain.with_partial_block(Arc::new(block));
                assert!(placed, "fresh sub-chain slot");
                chain = next;
            }
            let series = series_block(params, &chain, &mut rng, round as f64 + 0.5);
            chain = chain.extend(series, params).expect("round applies cleanly");
        }
        chain
    }

    fn pick_sender(params: &ProtocolParams, chain: &Chain, subchain: usize) -> Option<u64> {
        let state = chain.balance_state();
        params
            .initial_balances
            .iter()
            .map(|(key, _)| *key)
            .find(|key| {
                subchain_index(*key, params.k) == Ok(subchain) && state.balance(*key) > 1
            })
    }
}
