//! Chaincode interface and the simulation context endorsers run it in.
//!
//! A chaincode never touches a ledger directly. It reads through a
//! [`TxContext`], which records the version of every key it observes and
//! buffers every write. The resulting read/write sets are what endorsers
//! sign and what committing peers validate.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::channel::ChannelConfig;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::identity::Certificate;
use crate::ledger::{ReadEntry, Version, WorldState, WriteEntry, WriteValue};

/// A chaincode rejection: `kind` is the stable error name surfaced to
/// clients and transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}: {detail}")]
pub struct ChaincodeError {
    pub kind: String,
    pub detail: String,
}

impl ChaincodeError {
    pub fn new(kind: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            detail: detail.into(),
        }
    }
}

pub trait Chaincode: Send + Sync {
    fn invoke(&self, ctx: &mut TxContext<'_>, operation: &str, args: &[Vec<u8>]) -> Result<Vec<u8>, ChaincodeError>;
}

pub struct TxContext<'a> {
    state: &'a WorldState,
    creator: &'a Certificate,
    channel: &'a ChannelConfig,
    now: u64,
    reads: BTreeMap<String, Version>,
    writes: BTreeMap<String, WriteValue>,
}

impl<'a> TxContext<'a> {
    pub fn new(state: &'a WorldState, creator: &'a Certificate, channel: &'a ChannelConfig, now: u64) -> Self {
        Self {
            state,
            creator,
            channel,
            now,
            reads: BTreeMap::new(),
            writes: BTreeMap::new(),
        }
    }

    pub fn creator(&self) -> &Certificate {
        self.creator
    }

    pub fn channel(&self) -> &ChannelConfig {
        self.channel
    }

    /// Logical clock of the simulating peer.
    pub fn now(&self) -> u64 {
        self.now
    }

    fn record_read(&mut self, key: &str) {
        if !self.reads.contains_key(key) {
            self.reads.insert(key.to_string(), self.state.version(key));
        }
    }

    /// Reads a key, recording the committed version observed. Buffered writes
    /// from the same simulation are visible to later reads.
    pub fn get(&mut self, key: &str) -> Option<Vec<u8>> {
        self.record_read(key);
        match self.writes.get(key) {
            Some(WriteValue::Put(v)) => Some(v.clone()),
            Some(WriteValue::Delete) => None,
            None => self.state.get(key).map(|(v, _)| v.to_vec()),
        }
    }

    pub fn exists(&mut self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn put(&mut self, key: impl Into<String>, value: Vec<u8>) {
        self.writes.insert(key.into(), WriteValue::Put(value));
    }

    pub fn delete(&mut self, key: impl Into<String>) {
        self.writes.insert(key.into(), WriteValue::Delete);
    }

    /// Committed entries under `prefix`; each returned key is recorded as a
    /// read.
    pub fn range(&mut self, prefix: &str) -> Vec<(String, Vec<u8>)> {
        let found: Vec<(String, Vec<u8>)> = self
            .state
            .range_prefix(prefix)
            .map(|(k, v, _)| (k.to_string(), v.to_vec()))
            .collect();
        for (k, _) in &found {
            self.record_read(k);
        }
        found
    }

    /// Read and write sets, each sorted by key.
    pub fn into_rw_sets(self) -> (Vec<ReadEntry>, Vec<WriteEntry>) {
        let reads = self
            .reads
            .into_iter()
            .map(|(key, version)| ReadEntry { key, version })
            .collect();
        let writes = self
            .writes
            .into_iter()
            .map(|(key, value)| WriteEntry { key, value })
            .collect();
        (reads, writes)
    }
}

/// Chaincode outcome as carried in an endorsement's response payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok(Vec<u8>),
    Reject { kind: String, detail: String },
}

impl Response {
    pub fn into_result(self) -> Result<Vec<u8>, ChaincodeError> {
        match self {
            Response::Ok(v) => Ok(v),
            Response::Reject { kind, detail } => Err(ChaincodeError { kind, detail }),
        }
    }
}

impl Canonical for Response {
    fn encode_into(&self, e: &mut Encoder) {
        match self {
            Response::Ok(v) => {
                e.u8(0).bytes(v);
            }
            Response::Reject { kind, detail } => {
                e.u8(1).str(kind).str(detail);
            }
        }
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match d.u8()? {
            0 => Ok(Response::Ok(d.bytes()?)),
            1 => Ok(Response::Reject {
                kind: d.string()?,
                detail: d.string()?,
            }),
            v => Err(DecodeError::BadTag {
                what: "response",
                value: v,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Simulation {
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    pub response: Response,
}

/// Runs `chaincode` against `state` without committing anything. A rejected
/// invocation yields empty read/write sets.
pub fn simulate(
    chaincode: &dyn Chaincode,
    state: &WorldState,
    creator: &Certificate,
    channel: &ChannelConfig,
    now: u64,
    operation: &str,
    args: &[Vec<u8>],
) -> Simulation {
    let mut ctx = TxContext::new(state, creator, channel, now);
    match chaincode.invoke(&mut ctx, operation, args) {
        Ok(payload) => {
            let (read_set, write_set) = ctx.into_rw_sets();
            Simulation {
                read_set,
                write_set,
                response: Response::Ok(payload),
            }
        }
        Err(e) => Simulation {
            read_set: Vec::new(),
            write_set: Vec::new(),
            response: Response::Reject {
                kind: e.kind,
                detail: e.detail,
            },
        },
    }
}
