//! Export and import of a network's durable state.
//!
//! A state directory holds four files, each starting with the 8-byte magic
//! `MLEDGER1` followed by a tag:
//!
//! | file          | tag        | body                                     |
//! |---------------|------------|------------------------------------------|
//! | `chain.bin`   | (none)     | u32-length-prefixed canonical blocks     |
//! | `state.bin`   | `STATE`    | canonical world-state map                |
//! | `channel.bin` | `CHANNEL`  | canonical channel config (public only)   |
//! | `cas.bin`     | `CAS`      | storage-node inventory with pinned bytes |
//!
//! Import re-validates the whole chain and refuses anything that does not
//! reproduce the exported world state.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::cas::CasNetwork;
use crate::channel::ChannelConfig;
use crate::codec::{Canonical, Decoder, Encoder};
use crate::ledger::{Block, PeerLedger, WorldState};
use crate::network::Network;

pub const MAGIC: &[u8; 8] = b"MLEDGER1";
pub const STATE_TAG: &[u8] = b"STATE";
pub const CHANNEL_TAG: &[u8] = b"CHANNEL";
pub const CAS_TAG: &[u8] = b"CAS";

pub const CHAIN_FILE: &str = "chain.bin";
pub const STATE_FILE: &str = "state.bin";
pub const CHANNEL_FILE: &str = "channel.bin";
pub const CAS_FILE: &str = "cas.bin";

#[derive(Debug, Error)]
pub enum StateError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt state file {file}: {reason}")]
    CorruptFile { file: String, reason: String },
}

impl StateError {
    pub fn name(&self) -> &'static str {
        match self {
            StateError::Io { .. } => "IoError",
            StateError::CorruptFile { .. } => "CorruptFile",
        }
    }
}

fn corrupt(file: &str, reason: impl ToString) -> StateError {
    StateError::CorruptFile {
        file: file.to_string(),
        reason: reason.to_string(),
    }
}

pub fn encode_chain(blocks: &[Block]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.raw(MAGIC);
    for b in blocks {
        e.bytes(&b.to_canonical());
    }
    e.finish()
}

pub fn decode_chain(bytes: &[u8]) -> Result<Vec<Block>, StateError> {
    let body = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| corrupt(CHAIN_FILE, "bad magic"))?;
    let mut d = Decoder::new(body);
    let mut blocks = Vec::new();
    while d.remaining() > 0 {
        let raw = d.bytes_ref().map_err(|e| corrupt(CHAIN_FILE, e))?;
        blocks.push(Block::from_canonical(raw).map_err(|e| corrupt(CHAIN_FILE, e))?);
    }
    Ok(blocks)
}

fn tagged<T: Canonical>(tag: &[u8], value: &T) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(tag);
    out.extend_from_slice(&value.to_canonical());
    out
}

fn untag<T: Canonical>(file: &str, tag: &[u8], bytes: &[u8]) -> Result<T, StateError> {
    let body = bytes
        .strip_prefix(MAGIC.as_slice())
        .and_then(|b| b.strip_prefix(tag))
        .ok_or_else(|| corrupt(file, "bad magic or tag"))?;
    T::from_canonical(body).map_err(|e| corrupt(file, e))
}

pub fn encode_state(state: &WorldState) -> Vec<u8> {
    tagged(STATE_TAG, state)
}

pub fn decode_state(bytes: &[u8]) -> Result<WorldState, StateError> {
    untag(STATE_FILE, STATE_TAG, bytes)
}

pub fn encode_cas(cas: &CasNetwork) -> Vec<u8> {
    tagged(CAS_TAG, cas)
}

pub fn decode_cas(bytes: &[u8]) -> Result<CasNetwork, StateError> {
    untag(CAS_FILE, CAS_TAG, bytes)
}

/// A verified snapshot loaded from disk.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub config: Arc<ChannelConfig>,
    pub ledger: PeerLedger,
    pub cas: CasNetwork,
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<(), StateError> {
    std::fs::write(&path, bytes).map_err(|source| StateError::Io { path, source })
}

fn read(path: PathBuf) -> Result<Vec<u8>, StateError> {
    std::fs::read(&path).map_err(|source| StateError::Io { path, source })
}

pub fn export(network: &Network, dir: &Path) -> Result<(), StateError> {
    export_parts(network.config(), network.ledger(), network.cas(), dir)
}

pub fn export_parts(
    config: &ChannelConfig,
    ledger: &PeerLedger,
    cas: &CasNetwork,
    dir: &Path,
) -> Result<(), StateError> {
    std::fs::create_dir_all(dir).map_err(|source| StateError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join(CHAIN_FILE), &encode_chain(ledger.chain()))?;
    write(dir.join(STATE_FILE), &encode_state(ledger.world_state()))?;
    write(dir.join(CHANNEL_FILE), &tagged(CHANNEL_TAG, config))?;
    write(dir.join(CAS_FILE), &encode_cas(cas))?;
    Ok(())
}

pub fn import(dir: &Path) -> Result<Snapshot, StateError> {
    let config: ChannelConfig = untag(CHANNEL_FILE, CHANNEL_TAG, &read(dir.join(CHANNEL_FILE))?)?;
    config.validate().map_err(|e| corrupt(CHANNEL_FILE, e))?;
    let config = Arc::new(config);
    let chain = decode_chain(&read(dir.join(CHAIN_FILE))?)?;
    let state = decode_state(&read(dir.join(STATE_FILE))?)?;
    let cas = decode_cas(&read(dir.join(CAS_FILE))?)?;
    let ledger = PeerLedger::from_parts("import", config.clone(), chain, state);
    ledger.verify_chain_report().map_err(|f| corrupt(CHAIN_FILE, f))?;
    Ok(Snapshot { config, ledger, cas })
}

/// Loads only the CAS inventory, or `None` if the directory has none yet.
pub fn load_cas(dir: &Path) -> Result<Option<CasNetwork>, StateError> {
    let path = dir.join(CAS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    decode_cas(&read(path)?).map(Some)
}

pub fn save_cas(dir: &Path, cas: &CasNetwork) -> Result<(), StateError> {
    std::fs::create_dir_all(dir).map_err(|source| StateError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(dir.join(CAS_FILE), &encode_cas(cas))
}
