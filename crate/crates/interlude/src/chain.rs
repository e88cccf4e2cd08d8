//! Block and chain structures: k-set validity, the five chain validation
//! rules, MAX-VALID selection and the implicit transaction order.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{self, HashValue, MerkleProof};
use crate::ledger::{subchain_index, BalanceState, LedgerError, Transaction};

/// Protocol-wide constants shared by chain validation and mining.
#[derive(Clone, Debug)]
pub struct ProtocolParams {
    pub k: usize,
    pub oracle_seed: u64,
    pub target_parallel: HashValue,
    pub target_series: HashValue,
    /// Block rewards under the scheme that exactly offsets expected mining
    /// cost: eta_cost / lambda and eta_cost / beta respectively.
    pub reward_parallel: u64,
    pub reward_series: u64,
    /// Per-block fee cap (the incentive scheme's gamma).
    pub fee_cap: u64,
    pub initial_balances: Vec<(u64, u64)>,
}

impl ProtocolParams {
    pub fn new(k: usize, oracle_seed: u64) -> ProtocolParams {
        ProtocolParams {
            k,
            oracle_seed,
            // cheap puzzles: the timing model is Poisson, targets only shape
            // hash-value tie-breaks
            target_parallel: HashValue::target_with_difficulty(2),
            target_series: HashValue::target_with_difficulty(3),
            reward_parallel: 10,
            reward_series: 100,
            fee_cap: 1_000,
            initial_balances: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Parallel,
    Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BlockBody {
    /// Belongs to one sub-chain; carries that branch's Merkle proof.
    Parallel { subchain: usize, proof: MerkleProof },
    /// Links a complete k-set; `proofs[i]` is the umbrella proof recorded by
    /// the i-th linked parallel block, locking its branch choice.
    Series { proofs: Vec<MerkleProof> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// One series-block link (parallel) or k parallel-block links (series).
    pub top: Vec<HashValue>,
    pub body: BlockBody,
    pub merkle_root: HashValue,
    pub nonce: u64,
    pub hash: HashValue,
    pub txs: Vec<Transaction>,
    pub miner: u64,
    pub minted_at: f64,
}

impl Block {
    pub fn kind(&self) -> BlockKind {
        match self.body {
            BlockBody::Parallel { .. } => BlockKind::Parallel,
            BlockBody::Series { .. } => BlockKind::Series,
        }
    }

    pub fn subchain(&self) -> Option<usize> {
        match &self.body {
            BlockBody::Parallel { subchain, .. } => Some(*subchain),
            BlockBody::Series { .. } => None,
        }
    }

    /// One PoW, one identity: a relocated copy keeps (miner, nonce, root).
    pub fn pow_identity(&self) -> (u64, u64, HashValue) {
        (self.miner, self.nonce, self.merkle_root)
    }

    pub fn recompute_hash(&self, seed: u64) -> HashValue {
        crypto::pow_hash(seed, self.nonce, &self.top, self.merkle_root)
    }
}

/// The distinguished series block at height 0.
pub fn genesis_block(params: &ProtocolParams) -> Block {
    let root = crypto::digest(params.oracle_seed, b"genesis");
    let hash = crypto::pow_hash(params.oracle_seed, 0, &[], root);
    Block {
        top: Vec::new(),
        body: BlockBody::Series { proofs: Vec::new() },
        merkle_root: root,
        nonce: 0,
        hash,
        txs: Vec::new(),
        miner: u64::MAX,
        minted_at: 0.0,
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChainError {
    /// Index of the first violated chain validation rule (1..=5).
    #[error("chain validation failed at rule ({0})")]
    Rule(u8),
    #[error("ledger conflict: {0}")]
    Ledger(#[from] LedgerError),
    #[error("no valid chain available")]
    NoValidChain,
}

/// One completed round: a series block sealing its k-set, with the balance
/// state after applying the round.
#[derive(Debug, Clone)]
pub struct ChainNode {
    pub parent: Option<Arc<ChainNode>>,
    pub series: Arc<Block>,
    /// Complete k-set ordered by sub-chain index.
    pub kset: Vec<Arc<Block>>,
    /// 1-based series height (genesis is height 0).
    pub height: usize,
    pub state: BalanceState,
    pub round_tx_ids: HashSet<u64>,
    pub completed_at: f64,
}

/// Immutable chain value: genesis, a shared spine of completed rounds, and
/// the incomplete k-set on top. Extension shares structure via `Arc`.
#[derive(Clone)]
pub struct Chain {
    pub genesis: Arc<Block>,
    pub tip: Option<Arc<ChainNode>>,
    /// Incomplete k-set above the last series block, keyed by sub-chain.
    pub partial: BTreeMap<usize, Arc<Block>>,
    genesis_state: Arc<BalanceState>,
}

impl std::fmt::Debug for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Chain(len={}, partial={}, tip={:?})",
            self.len(),
            self.partial.len(),
            self.last_series_hash()
        )
    }
}

impl Chain {
    pub fn new(params: &ProtocolParams) -> Chain {
        Chain {
            genesis: Arc::new(genesis_block(params)),
            tip: None,
            partial: BTreeMap::new(),
            genesis_state: Arc::new(BalanceState::with_initial(&params.initial_balances)),
        }
    }

    /// Number of series blocks after genesis.
    pub fn len(&self) -> usize {
        self.tip.as_ref().map_or(0, |n| n.height)
    }

    pub fn is_empty(&self) -> bool {
        self.tip.is_none()
    }

    pub fn last_series_block(&self) -> &Block {
        self.tip.as_ref().map_or(&self.genesis, |n| &n.series)
    }

    pub fn last_series_hash(&self) -> HashValue {
        self.last_series_block().hash
    }

    pub fn balance_state(&self) -> &BalanceState {
        self.tip
            .as_ref()
            .map_or(&self.genesis_state, |n| &n.state)
    }

    /// Stable identity of this chain value (tip series hash plus the partial
    /// block hashes).
    pub fn id(&self) -> HashValue {
        let mut input = Vec::new();
        input.extend_from_slice(&self.last_series_hash().0);
        for b in self.partial.values() {
            input.extend_from_slice(&b.hash.0);
        }
        crypto::digest(0, &input)
    }

    /// Rounds from genesis upward.
    pub fn rounds(&self) -> Vec<Arc<ChainNode>> {
        let mut out = Vec::with_capacity(self.len());
        let mut cur = self.tip.clone();
        while let Some(node) = cur {
            cur = node.parent.clone();
            out.push(node);
        }
        out.reverse();
        out
    }

    pub fn node_at(&self, height: usize) -> Option<Arc<ChainNode>> {
        let mut cur = self.tip.clone();
        while let Some(node) = cur {
            if node.height == height {
                return Some(node);
            }
            if node.height < height {
                return None;
            }
            cur = node.parent.clone();
        }
        None
    }

    /// Height of the round containing the transaction, if any. The partial
    /// k-set is not searched: a transaction is only "in the chain" once its
    /// round is sealed by a series block.
    pub fn round_of_tx(&self, tx_id: u64) -> Option<usize> {
        let mut cur = self.tip.clone();
        while let Some(node) = cur {
            if node.round_tx_ids.contains(&tx_id) {
                return Some(node.height);
            }
            cur = node.parent.clone();
        }
        None
    }

    pub fn contains_tx(&self, tx_id: u64) -> bool {
        self.round_of_tx(tx_id).is_some()
    }

    /// All transaction ids anywhere in the chain, including the partial set.
    pub fn all_tx_ids(&self) -> HashSet<u64> {
        let mut out: HashSet<u64> = self
            .balance_state()
            .spent_tx_ids
            .iter()
            .copied()
            .collect();
        for b in self.partial.values() {
            out.extend(b.txs.iter().map(|t| t.id));
        }
        out
    }

    /// Adds a parallel block to the incomplete k-set, replacing an occupant
    /// only if the new block's hash is lower. Returns the updated chain and
    /// whether the block was placed.
    pub fn with_partial_block(&self, block: Arc<Block>) -> (Chain, bool) {
        let subchain = match block.subchain() {
            Some(s) => s,
            None => return (self.clone(), false),
        };
        if block.top.first() != Some(&self.last_series_hash()) {
            return (self.clone(), false);
        }
        let mut next = self.clone();
        match next.partial.get(&subchain) {
            Some(existing) if existing.hash <= block.hash => (self.clone(), false),
            _ => {
                next.partial.insert(subchain, block);
                (next, true)
            }
        }
    }

    /// Seals the current complete k-set with a series block, producing the
    /// extended chain. The ledger replay applies k-set transactions in
    /// sub-chain order, then the series block's own transactions.
    pub fn extend(&self, series: Arc<Block>, params: &ProtocolParams) -> Result<Chain, ChainError> {
        let kset: Vec<Arc<Block>> = self.partial.values().cloned().collect();
        if kset.len() != params.k {
            return Err(ChainError::Rule(1));
        }
        let mut state = self.balance_state().clone();
        let mut round_tx_ids = HashSet::new();
        for block in &kset {
            state.apply_batch(&block.txs, block.miner, params.reward_parallel)?;
            round_tx_ids.extend(block.txs.iter().map(|t| t.id));
        }
        state.apply_batch(&series.txs, series.miner, params.reward_series)?;
        round_tx_ids.extend(series.txs.iter().map(|t| t.id));
        let height = self.len() + 1;
        let completed_at = series.minted_at;
        let node = ChainNode {
            parent: self.tip.clone(),
            series,
            kset,
            height,
            state,
            round_tx_ids,
            completed_at,
        };
        Ok(Chain {
            genesis: self.genesis.clone(),
            tip: Some(Arc::new(node)),
            partial: BTreeMap::new(),
            genesis_state: self.genesis_state.clone(),
        })
    }
}

/// Checks a single parallel block's structure: typical transactions on its
/// own sub-chain, a verifying umbrella proof, and a consistent hash.
fn check_parallel_block(block: &Block, params: &ProtocolParams) -> bool {
    let (subchain, proof) = match &block.body {
        BlockBody::Parallel { subchain, proof } => (*subchain, proof),
        BlockBody::Series { .. } => return false,
    };
    if subchain >= params.k || block.top.len() != 1 || proof.branch_index != subchain {
        return false;
    }
    for tx in &block.txs {
        if !tx.is_typical() {
            return false;
        }
        match subchain_index(tx.senders[0], params.k) {
            Ok(i) if i == subchain => {}
            _ => return false,
        }
    }
    let leaf = crypto::leaf_digest(params.oracle_seed, subchain, &block.txs);
    if !crypto::merkle_verify(params.oracle_seed, block.merkle_root, leaf, proof) {
        return false;
    }
    block.recompute_hash(params.oracle_seed) == block.hash
}

/// Definition-13 validity: shared top link, pairwise distinct sub-chains and
/// pairwise distinct (merkle root, nonce) pairs, each block individually
/// well-formed. An empty or partial set is valid as long as the conditions
/// hold pairwise.
pub fn validate_kset(blocks: &[Arc<Block>], k: usize, params: &ProtocolParams) -> bool {
    if blocks.len() > k {
        return false;
    }
    let mut subchains = HashSet::new();
    let mut identities = HashSet::new();
    let mut top: Option<&HashValue> = None;
    for block in blocks {
        let subchain = match block.subchain() {
            Some(s) => s,
            None => return false,
        };
        if !subchains.insert(subchain) {
            return false;
        }
        if !identities.insert((block.merkle_root, block.nonce)) {
            return false;
        }
        match (top, block.top.first()) {
            (None, Some(t)) => top = Some(t),
            (Some(a), Some(b)) if a == b => {}
            _ => return false,
        }
        if !check_parallel_block(block, params) {
            return false;
        }
    }
    true
}

/// Validates the incomplete k-set sitting above the last series block.
pub fn validate_partial(chain: &Chain, params: &ProtocolParams) -> Result<(), ChainError> {
    let partial: Vec<Arc<Block>> = chain.partial.values().cloned().collect();
    if !validate_kset(&partial, params.k, params) {
        return Err(ChainError::Rule(1));
    }
    for block in &partial {
        if block.top.first() != Some(&chain.last_series_hash()) {
            return Err(ChainError::Rule(3));
        }
        if block.hash > params.target_parallel {
            return Err(ChainError::Rule(4));
        }
    }
    Ok(())
}

/// Structural rules (i)-(iv) for one sealed round against its predecessor's
/// series hash.
pub fn validate_round(
    node: &ChainNode,
    parent_hash: HashValue,
    params: &ProtocolParams,
) -> Result<(), ChainError> {
    let series = &node.series;
    // (i) the series block links a valid, complete k-set
    let proofs = match &series.body {
        BlockBody::Series { proofs } => proofs,
        BlockBody::Parallel { .. } => return Err(ChainError::Rule(1)),
    };
    if node.kset.len() != params.k
        || series.top.len() != params.k
        || proofs.len() != params.k
        || !validate_kset(&node.kset, params.k, params)
    {
        return Err(ChainError::Rule(1));
    }
    for (i, block) in node.kset.iter().enumerate() {
        let recorded = match &block.body {
            BlockBody::Parallel { proof, .. } => proof,
            BlockBody::Series { .. } => return Err(ChainError::Rule(1)),
        };
        if series.top[i] != block.hash || proofs[i] != *recorded {
            return Err(ChainError::Rule(1));
        }
    }
    // (ii) series nonce meets the series target
    if series.recompute_hash(params.oracle_seed) != series.hash
        || series.hash > params.target_series
    {
        return Err(ChainError::Rule(2));
    }
    // (iii) the k-set points at the preceding series block
    for block in &node.kset {
        if block.top.first() != Some(&parent_hash) {
            return Err(ChainError::Rule(3));
        }
    }
    // (iv) every parallel nonce meets the parallel target
    for block in &node.kset {
        if block.hash > params.target_parallel {
            return Err(ChainError::Rule(4));
        }
    }
    Ok(())
}

/// Full chain validation: rules (i)-(v) applied from the tip down, then a
/// ledger replay from genesis. Returns the first violated rule index.
pub fn validate_chain(chain: &Chain, params: &ProtocolParams) -> Result<(), ChainError> {
    validate_partial(chain, params)?;
    let mut cur = chain.tip.clone();
    while let Some(node) = cur {
        let parent_hash = node
            .parent
            .as_ref()
            .map_or(chain.genesis.hash, |p| p.series.hash);
        validate_round(&node, parent_hash, params)?;
        // (v) recurse on the prefix
        cur = node.parent.clone();
    }
    // ledger validity across the whole chain
    let mut state = BalanceState::with_initial(&params.initial_balances);
    for node in chain.rounds() {
        for block in &node.kset {
            state.apply_batch(&block.txs, block.miner, params.reward_parallel)?;
        }
        state.apply_batch(&node.series.txs, node.series.miner, params.reward_series)?;
    }
    for block in chain.partial.values() {
        state.check_tx_batch(&block.txs)?;
    }
    Ok(())
}

/// Total order implementing the chain selection priorities: more series
/// blocks, more blocks in the incomplete k-set, lower last-series hash, then
/// the k-set holding the parallel block with the least hash. The final
/// lexicographic tie-break makes the order total for distinct chain values.
pub fn chain_cmp(a: &Chain, b: &Chain) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let min_partial = |c: &Chain| c.partial.values().map(|b| b.hash).min();
    a.len()
        .cmp(&b.len())
        .then(a.partial.len().cmp(&b.partial.len()))
        .then_with(|| b.last_series_hash().cmp(&a.last_series_hash()))
        .then_with(|| match (min_partial(a), min_partial(b)) {
            (Some(x), Some(y)) => y.cmp(&x),
            (None, None) => Ordering::Equal,
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
        })
        .then_with(|| {
            let ha: Vec<HashValue> = a.partial.values().map(|x| x.hash).collect();
            let hb: Vec<HashValue> = b.partial.values().map(|x| x.hash).collect();
            hb.cmp(&ha)
        })
}

/// MAX-VALID: the unanimous winner among pre-validated chains.
pub fn max_valid<'a, I>(chains: I) -> Result<Chain, ChainError>
where
    I: IntoIterator<Item = &'a Chain>,
{
    let mut best: Option<&Chain> = None;
    for c in chains {
        best = Some(match best {
            None => c,
            Some(b) => {
                if chain_cmp(c, b) == std::cmp::Ordering::Greater {
                    c
                } else {
                    b
                }
            }
        });
    }
    best.cloned().ok_or(ChainError::NoValidChain)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForkClass {
    Public,
    Private,
}

/// A fork is public iff at least one honest party currently adopts it.
pub fn classify_fork(fork_tip: &Chain, honest_adoptions: &HashSet<HashValue>) -> ForkClass {
    if honest_adoptions.contains(&fork_tip.id()) {
        ForkClass::Public
    } else {
        ForkClass::Private
    }
}

/// Implicit transaction order: round-major, within a round the k-set in
/// sub-chain order, then the series block; canonical (id-sorted) order inside
/// each block.
pub fn transaction_order(chain: &Chain) -> Vec<u64> {
    let mut out = Vec::new();
    let mut push_block = |block: &Block| {
        let mut ids: Vec<u64> = block.txs.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        out.extend(ids);
    };
    for node in chain.rounds() {
        for block in &node.kset {
            push_block(block);
        }
        push_block(&node.series);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::testutil::{build_chain, parallel_block};

    fn params(k: usize) -> ProtocolParams {
        let mut p = ProtocolParams::new(k, 77);
        p.initial_balances = (0..64).map(|i| (i, 1_000)).collect();
        p
    }

    #[test]
    fn genesis_only_chain_valid() {
        let p = params(4);
        let chain = Chain::new(&p);
        assert_eq!(chain.len(), 0);
        assert!(validate_chain(&chain, &p).is_ok());
    }

    #[test]
    fn empty_kset_valid_as_partial() {
        let p = params(4);
        assert!(validate_kset(&[], 4, &p));
    }

    #[test]
    fn kset_distinct_subchains_and_roots() {
        let p = params(4);
        let chain = Chain::new(&p);
        let top = chain.last_series_hash();
        // four blocks, distinct sub-chains 0-3; empty candidate sets share a
        // root, so spread the nonce hints to keep (root, nonce) distinct
        let blocks: Vec<Arc<Block>> = (0..4)
            .map(|i| Arc::new(parallel_block(&p, top, i, vec![], 1_000_000 * i as u64, 0.0)))
            .collect();
        let nonces: HashSet<u64> = blocks.iter().map(|b| b.nonce).collect();
        assert_eq!(nonces.len(), 4);
        assert!(validate_kset(&blocks, 4, &p));
        // duplicated sub-chain: invalid
        let mut dup = blocks.clone();
        dup[1] = blocks[0].clone();
        assert!(!validate_kset(&dup[..2], 4, &p));
        // same (root, nonce) republished on two sub-chains: invalid
        let relocated = {
            let mut b = (*blocks[0]).clone();
            if let BlockBody::Parallel { subchain, .. } = &mut b.body {
                *subchain = 1;
            }
            Arc::new(b)
        };
        assert!(!validate_kset(&[blocks[0].clone(), relocated], 4, &p));
    }

    #[test]
    fn two_round_chain_valid_and_prefix_closed() {
        let p = params(2);
        let chain = build_chain(&p, 2, 42);
        assert_eq!(chain.len(), 2);
        assert!(validate_chain(&chain, &p).is_ok());
        // prefix ending at the first series block is valid
        let prefix = Chain {
            genesis: chain.genesis.clone(),
            tip: chain.tip.as_ref().unwrap().parent.clone(),
            partial: BTreeMap::new(),
            genesis_state: Arc::new(BalanceState::with_initial(&p.initial_balances)),
        };
        assert!(validate_chain(&prefix, &p).is_ok());
    }

    #[test]
    fn mutation_is_caught_per_rule() {
        let p = params(2);
        let chain = build_chain(&p, 2, 42);

        // rule (iv): swap in a parallel nonce that misses the target, keeping
        // the series link list and series nonce consistent so earlier rules
        // pass
        let mut mutated = clone_tip(&chain);
        {
            let node = mutated_tip(&mut mutated);
            let mut b = (*node.kset[0]).clone();
            b.nonce ^= 1;
            b.hash = b.recompute_hash(p.oracle_seed);
            while b.hash <= p.target_parallel {
                b.nonce = b.nonce.wrapping_add(1);
                b.hash = b.recompute_hash(p.oracle_seed);
            }
            node.kset[0] = Arc::new(b);
            let mut s = (*node.series).clone();
            s.top[0] = node.kset[0].hash;
            s.hash = s.recompute_hash(p.oracle_seed);
            while s.hash > p.target_series {
                s.nonce = s.nonce.wrapping_add(1);
                s.hash = s.recompute_hash(p.oracle_seed);
            }
            node.series = Arc::new(s);
        }
        assert_eq!(validate_chain(&mutated, &p), Err(ChainError::Rule(4)));

        // rule (i): duplicate a sub-chain inside the sealed k-set
        let mut mutated = clone_tip(&chain);
        {
            let node = mutated_tip(&mut mutated);
            node.kset[1] = node.kset[0].clone();
        }
        assert_eq!(validate_chain(&mutated, &p), Err(ChainError::Rule(1)));

        // rule (ii): corrupt the series nonce
        let mut mutated = clone_tip(&chain);
        {
            let node = mutated_tip(&mut mutated);
            let mut s = (*node.series).clone();
            s.nonce ^= 1;
            s.hash = s.recompute_hash(p.oracle_seed);
            while s.hash <= p.target_series {
                s.nonce = s.nonce.wrapping_add(1);
                s.hash = s.recompute_hash(p.oracle_seed);
            }
            node.series = Arc::new(s);
        }
        assert_eq!(validate_chain(&mutated, &p), Err(ChainError::Rule(2)));

        // rule (iii): point the whole k-set at the wrong predecessor, with
        // remined proof-of-work so rules (i), (ii) and (iv) still pass
        let mut mutated = clone_tip(&chain);
        {
            let node = mutated_tip(&mut mutated);
            let bogus = crypto::digest(p.oracle_seed, b"bogus");
            for slot in 0..node.kset.len() {
                let mut b = (*node.kset[slot]).clone();
                b.top = vec![bogus];
                b.hash = b.recompute_hash(p.oracle_seed);
                while b.hash > p.target_parallel {
                    b.nonce = b.nonce.wrapping_add(1);
                    b.hash = b.recompute_hash(p.oracle_seed);
                }
                node.kset[slot] = Arc::new(b);
            }
            let mut s = (*node.series).clone();
            s.top = node.kset.iter().map(|b| b.hash).collect();
            s.hash = s.recompute_hash(p.oracle_seed);
            while s.hash > p.target_series {
                s.nonce = s.nonce.wrapping_add(1);
                s.hash = s.recompute_hash(p.oracle_seed);
            }
            node.series = Arc::new(s);
        }
        assert_eq!(validate_chain(&mutated, &p), Err(ChainError::Rule(3)));
    }

    fn clone_tip(chain: &Chain) -> Chain {
        chain.clone()
    }

    fn mutated_tip(chain: &mut Chain) -> &mut ChainNode {
        let tip = chain.tip.take().expect("chain has rounds");
        let node = Arc::try_unwrap(tip).unwrap_or_else(|arc| ChainNode {
            parent: arc.parent.clone(),
            series: arc.series.clone(),
            kset: arc.kset.clone(),
            height: arc.height,
            state: arc.state.clone(),
            round_tx_ids: arc.round_tx_ids.clone(),
            completed_at: arc.completed_at,
        });
        chain.tip = Some(Arc::new(node));
        Arc::get_mut(chain.tip.as_mut().expect("just set")).expect("unique")
    }

    #[test]
    fn max_valid_priority_rules() {
        let p = params(2);
        let c5 = build_chain(&p, 5, 1);
        let c4 = build_chain(&p, 4, 2);
        assert_eq!(max_valid([&c5, &c4]).unwrap().id(), c5.id());

        // equal series count: more partial blocks wins
        let base = build_chain(&p, 3, 3);
        let top = base.last_series_hash();
        let b0 = Arc::new(parallel_block(&p, top, 0, vec![], 500, 0.0));
        let b1 = Arc::new(parallel_block(&p, top, 1, vec![], 501, 0.0));
        let (one, _) = base.with_partial_block(b0.clone());
        let (two, _) = one.with_partial_block(b1);
        assert_eq!(max_valid([&one, &two]).unwrap().id(), two.id());

        // identical counts: lower last-series hash wins
        let x = build_chain(&p, 3, 10);
        let y = build_chain(&p, 3, 11);
        let winner = max_valid([&x, &y]).unwrap();
        assert_eq!(
            winner.last_series_hash(),
            x.last_series_hash().min(y.last_series_hash())
        );
    }

    #[test]
    fn max_valid_permutation_unanimity() {
        let p = params(2);
        let chains: Vec<Chain> = (0..4).map(|s| build_chain(&p, 3, s)).collect();
        let refs: Vec<&Chain> = chains.iter().collect();
        let baseline = max_valid(refs.clone()).unwrap().id();
        // all permutations of four chains agree
        let mut idx = [0usize, 1, 2, 3];
        permutohedron_heap(&mut idx, &mut |perm: &[usize]| {
            let ordering: Vec<&Chain> = perm.iter().map(|&i| &chains[i]).collect();
            assert_eq!(max_valid(ordering).unwrap().id(), baseline);
        });
    }

    // minimal Heap's algorithm to avoid a dependency
    fn permutohedron_heap(items: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
        fn heap(n: usize, items: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
            if n == 1 {
                visit(items);
                return;
            }
            for i in 0..n {
                heap(n - 1, items, visit);
                if n % 2 == 0 {
                    items.swap(i, n - 1);
                } else {
                    items.swap(0, n - 1);
                }
            }
        }
        heap(items.len(), items, visit);
    }

    #[test]
    fn relocation_passes_kset_in_new_slot() {
        let p = params(4);
        let chain = Chain::new(&p);
        let top = chain.last_series_hash();
        // umbrella block with candidate sets for all four branches
        let tx = |id: u64, sender: u64| Transaction {
            id,
            senders: vec![sender],
            outputs: vec![(60, 1)],
            fee: 0,
        };
        let sets: Vec<Vec<Transaction>> = (0..4u64).map(|i| vec![tx(100 + i, i)]).collect();
        let tree = crypto::MerkleTree::build(p.oracle_seed, 4, &sets).unwrap();
        let mut nonce = 9000u64;
        let hash = loop {
            let h = crypto::pow_hash(p.oracle_seed, nonce, &[top], tree.root);
            if h <= p.target_parallel {
                break h;
            }
            nonce = nonce.wrapping_add(1);
        };
        let b2 = Block {
            top: vec![top],
            body: BlockBody::Parallel {
                subchain: 2,
                proof: tree.prove(2).unwrap(),
            },
            merkle_root: tree.root,
            nonce,
            hash,
            txs: sets[2].clone(),
            miner: 0,
            minted_at: 0.0,
        };
        assert!(validate_kset(&[Arc::new(b2.clone())], 4, &p));
        // republish the same PoW on sub-chain 3 with sub-chain 3's tx set
        let relocated = Block {
            body: BlockBody::Parallel {
                subchain: 3,
                proof: tree.prove(3).unwrap(),
            },
            txs: sets[3].clone(),
            ..b2.clone()
        };
        assert_eq!(relocated.hash, b2.hash);
        assert!(validate_kset(&[Arc::new(relocated)], 4, &p));
    }

    #[test]
    fn transaction_order_is_duplicate_free_permutation() {
        let p = params(2);
        let chain = build_chain(&p, 3, 9);
        let order = transaction_order(&chain);
        let mut seen = HashSet::new();
        for id in &order {
            assert!(seen.insert(*id), "duplicate tx {id}");
        }
        let in_rounds: usize = chain
            .rounds()
            .iter()
            .map(|n| n.round_tx_ids.len())
            .sum();
        assert_eq!(order.len(), in_rounds);
        // round-major: a tx in round 1 precedes one in round 2
        let rounds = chain.rounds();
        if let (Some(a), Some(b)) = (
            rounds[0].round_tx_ids.iter().next(),
            rounds[1].round_tx_ids.iter().next(),
        ) {
            let pa = order.iter().position(|x| x == a).unwrap();
            let pb = order.iter().position(|x| x == b).unwrap();
            assert!(pa < pb);
        }
    }

    #[test]
    fn classify_fork_by_adoption() {
        let p = params(2);
        let a = build_chain(&p, 2, 1);
        let b = build_chain(&p, 2, 2);
        let mut adoptions = HashSet::new();
        adoptions.insert(a.id());
        assert_eq!(classify_fork(&a, &adoptions), ForkClass::Public);
        assert_eq!(classify_fork(&b, &adoptions), ForkClass::Private);
    }
}
