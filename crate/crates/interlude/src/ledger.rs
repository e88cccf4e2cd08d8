//! Transactions, balances, sub-chain assignment and the acceptance rule.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

/// Multi-input multi-output transfer. A transaction is *typical* iff it has
/// exactly one sender; only typical transactions may appear in parallel
/// blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub senders: Vec<u64>,
    /// (recipient key, amount) pairs.
    pub outputs: Vec<(u64, u64)>,
    pub fee: u64,
}

impl Transaction {
    pub fn is_typical(&self) -> bool {
        self.senders.len() == 1
    }

    pub fn total_outputs(&self) -> u64 {
        self.outputs.iter().map(|(_, v)| *v).sum::<u64>() + self.fee
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("sub-chain count must be at least 1")]
    ZeroSubchains,
    #[error("transaction {0} is invalid against the balance state")]
    InvalidTransaction(u64),
    #[error("transaction {0} already spent")]
    AlreadySpent(u64),
}

/// Sub-chain index of a sender key. For a power-of-two `k` this is the
/// integer formed by the last `log2(k)` bits; the residue generalizes that to
/// arbitrary `k`.
pub fn subchain_index(sender_key: u64, k: usize) -> Result<usize, LedgerError> {
    if k == 0 {
        return Err(LedgerError::ZeroSubchains);
    }
    Ok((sender_key % k as u64) as usize)
}

/// Per-view balance table plus the spent-transaction set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BalanceState {
    pub balances: BTreeMap<u64, u64>,
    pub spent_tx_ids: HashSet<u64>,
}

impl BalanceState {
    pub fn with_initial(allocations: &[(u64, u64)]) -> BalanceState {
        BalanceState {
            balances: allocations.iter().copied().collect(),
            spent_tx_ids: HashSet::new(),
        }
    }

    pub fn balance(&self, key: u64) -> u64 {
        self.balances.get(&key).copied().unwrap_or(0)
    }

    pub fn total_supply(&self) -> u64 {
        self.balances.values().sum()
    }

    /// True iff the batch as a whole is spendable: per sender-group, summed
    /// outputs plus fees stay within the senders' balances, and no
    /// transaction id has been spent before (or twice within the batch).
    pub fn validate_tx_batch(&self, txs: &[Transaction]) -> bool {
        self.check_tx_batch(txs).is_ok()
    }

    pub fn check_tx_batch(&self, txs: &[Transaction]) -> Result<(), LedgerError> {
        let mut spent: BTreeMap<u64, u64> = BTreeMap::new();
        let mut seen: HashSet<u64> = HashSet::new();
        for tx in txs {
            if self.spent_tx_ids.contains(&tx.id) || !seen.insert(tx.id) {
                return Err(LedgerError::AlreadySpent(tx.id));
            }
            // charge the full amount to the first sender's group; senders in a
            // non-typical transaction pool their balances
            let available: u64 = tx.senders.iter().map(|s| self.balance(*s)).sum();
            let already: u64 = tx.senders.iter().map(|s| spent.get(s).copied().unwrap_or(0)).sum();
            let need = tx.total_outputs();
            if already + need > available {
                return Err(LedgerError::InvalidTransaction(tx.id));
            }
            // distribute the charge across senders in order
            let mut remaining = need;
            for s in &tx.senders {
                let have = self.balance(*s) - spent.get(s).copied().unwrap_or(0);
                let take = have.min(remaining);
                *spent.entry(*s).or_insert(0) += take;
                remaining -= take;
                if remaining == 0 {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Applies a validated batch: debits senders, credits outputs, credits the
    /// miner with the block reward plus all fees.
    pub fn apply_batch(
        &mut self,
        txs: &[Transaction],
        miner_key: u64,
        block_reward: u64,
    ) -> Result<(), LedgerError> {
        self.check_tx_batch(txs)?;
        for tx in txs {
            let mut remaining = tx.total_outputs();
            for s in &tx.senders {
                let have = self.balance(*s);
                let take = have.min(remaining);
                if take > 0 {
                    *self.balances.entry(*s).or_insert(0) -= take;
                }
                remaining -= take;
                if remaining == 0 {
                    break;
                }
            }
            for (to, amount) in &tx.outputs {
                *self.balances.entry(*to).or_insert(0) += amount;
            }
            *self.balances.entry(miner_key).or_insert(0) += tx.fee;
            self.spent_tx_ids.insert(tx.id);
        }
        *self.balances.entry(miner_key).or_insert(0) += block_reward;
        Ok(())
    }
}

/// Inputs to the `R_kappa` acceptance decision. `c_star_len` is the series
/// length of the longest chain containing the transaction; `c_prime_len` of
/// the longest chain not containing it. When no known chain lacks the
/// transaction, the caller supplies the prefix-based fallback: the series
/// length of the chain truncated just below the transaction's round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcceptanceQuery {
    pub tx_id: u64,
    pub kappa: usize,
    pub c_star_len: usize,
    pub c_prime_len: usize,
}

/// `R_kappa`: accept iff the chain carrying the transaction leads the longest
/// transaction-free fork by strictly more than `kappa` series blocks.
pub fn acceptance_rule(query: &AcceptanceQuery) -> bool {
    query.c_star_len > query.c_prime_len
        && query.c_star_len - query.c_prime_len > query.kappa
}
