//! A proof-of-work ledger protocol that mines `k` parallel sub-chain blocks
//! and one series block per round under a single umbrella commitment, plus a
//! deterministic discrete-event network simulator and a numeric
//! security/fairness analysis toolkit.

pub mod analysis;
pub mod chain;
pub mod cli;
pub mod config;
pub mod crypto;
pub mod ledger;
pub mod node;
pub mod simnet;
