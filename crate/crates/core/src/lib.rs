//! Permissioned ledger for sharing encrypted health records.
//!
//! Records are sealed client-side, stored in a content-addressed store and
//! referenced from a replicated ledger whose chaincode enforces ownership,
//! access grants and token payments.

pub mod cas;
pub mod chaincode;
pub mod channel;
pub mod codec;
pub mod crypto;
pub mod ehr;
pub mod envelope;
pub mod identity;
pub mod ledger;
pub mod network;
pub mod ordering;
pub mod rng;
pub mod scenario;
pub mod state;
