//! Hash-chained block store plus versioned world state, one per peer.
//!
//! Committing a block validates each transaction in order (client signature,
//! endorsement policy, then MVCC read-set check) and applies only the valid
//! ones. Invalid transactions stay in the block with their flag set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::channel::ChannelConfig;
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{self, Hash32};
use crate::identity::{verify, Certificate, Role};

pub const ZERO_HASH: Hash32 = [0u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("block {got_height} does not extend the chain (expected height {expected_height} on tip {tip})")]
    ChainMismatch {
        expected_height: u64,
        got_height: u64,
        tip: String,
    },
}

impl LedgerError {
    pub fn name(&self) -> &'static str {
        match self {
            LedgerError::ChainMismatch { .. } => "ChainMismatch",
        }
    }
}

/// Position of the transaction that last wrote a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Version {
    pub block_height: u64,
    pub tx_index: u32,
}

impl Version {
    /// Recorded when a read finds the key absent.
    pub const ABSENT: Version = Version {
        block_height: 0,
        tx_index: u32::MAX,
    };

    pub fn new(block_height: u64, tx_index: u32) -> Self {
        Self { block_height, tx_index }
    }

    fn encode(&self, e: &mut Encoder) {
        e.u64(self.block_height).u32(self.tx_index);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Version::new(d.u64()?, d.u32()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Validity {
    Pending,
    Valid,
    InvalidMvcc,
    InvalidEndorsement,
    InvalidSignature,
}

impl Validity {
    pub fn code(self) -> u8 {
        match self {
            Validity::Pending => 0,
            Validity::Valid => 1,
            Validity::InvalidMvcc => 2,
            Validity::InvalidEndorsement => 3,
            Validity::InvalidSignature => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Validity::Pending,
            1 => Validity::Valid,
            2 => Validity::InvalidMvcc,
            3 => Validity::InvalidEndorsement,
            4 => Validity::InvalidSignature,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Validity::Pending => "PENDING",
            Validity::Valid => "VALID",
            Validity::InvalidMvcc => "INVALID_MVCC",
            Validity::InvalidEndorsement => "INVALID_ENDORSEMENT",
            Validity::InvalidSignature => "INVALID_SIGNATURE",
        }
    }
}

impl std::fmt::Display for Validity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReadEntry {
    pub key: String,
    pub version: Version,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum WriteValue {
    Put(Vec<u8>),
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WriteEntry {
    pub key: String,
    pub value: WriteValue,
}

pub fn encode_read_set(e: &mut Encoder, reads: &[ReadEntry]) {
    e.list(reads, |e, r| {
        e.str(&r.key);
        r.version.encode(e);
    });
}

pub fn encode_write_set(e: &mut Encoder, writes: &[WriteEntry]) {
    e.list(writes, |e, w| {
        e.str(&w.key);
        match &w.value {
            WriteValue::Put(v) => {
                e.u8(0).bytes(v);
            }
            WriteValue::Delete => {
                e.u8(1);
            }
        }
    });
}

fn decode_read_set(d: &mut Decoder<'_>) -> Result<Vec<ReadEntry>, DecodeError> {
    d.list(16, |d| {
        Ok(ReadEntry {
            key: d.string()?,
            version: Version::decode(d)?,
        })
    })
}

fn decode_write_set(d: &mut Decoder<'_>) -> Result<Vec<WriteEntry>, DecodeError> {
    d.list(5, |d| {
        let key = d.string()?;
        let value = match d.u8()? {
            0 => WriteValue::Put(d.bytes()?),
            1 => WriteValue::Delete,
            v => {
                return Err(DecodeError::BadTag {
                    what: "write",
                    value: v,
                })
            }
        };
        Ok(WriteEntry { key, value })
    })
}

/// Message an endorser signs: its simulated read set, write set and response.
pub fn endorsement_message(reads: &[ReadEntry], writes: &[WriteEntry], response: &[u8]) -> Vec<u8> {
    let mut e = Encoder::new();
    encode_read_set(&mut e, reads);
    encode_write_set(&mut e, writes);
    e.bytes(response);
    e.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EndorsementSig {
    pub endorser_subject_id: String,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Hash32,
    pub channel_id: String,
    pub creator: Certificate,
    pub operation: String,
    pub args: Vec<Vec<u8>>,
    pub nonce: [u8; 16],
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    /// Chaincode response the endorsers signed together with the RW sets.
    pub response: Vec<u8>,
    pub endorsements: Vec<EndorsementSig>,
    pub client_signature: Vec<u8>,
    /// Mirrors the enclosing block's validity flag; not part of any hash.
    pub validity: Validity,
}

impl Transaction {
    fn encode_body(&self, e: &mut Encoder) {
        e.str(&self.channel_id);
        self.creator.encode_into(e);
        e.str(&self.operation).list(&self.args, |e, a| {
            e.bytes(a);
        });
        e.raw(&self.nonce);
        encode_read_set(e, &self.read_set);
        encode_write_set(e, &self.write_set);
        e.bytes(&self.response);
    }

    /// SHA-256 over every field except the id, endorsements, client
    /// signature and validity.
    pub fn compute_id(&self) -> Hash32 {
        let mut e = Encoder::new();
        self.encode_body(&mut e);
        crypto::sha256(&e.finish())
    }

    pub fn endorsement_message(&self) -> Vec<u8> {
        endorsement_message(&self.read_set, &self.write_set, &self.response)
    }

    pub fn touches_prefix(&self, prefix: &str) -> bool {
        self.read_set.iter().any(|r| r.key.starts_with(prefix))
            || self.write_set.iter().any(|w| w.key.starts_with(prefix))
    }
}

impl Canonical for Transaction {
    fn encode_into(&self, e: &mut Encoder) {
        e.raw(&self.tx_id);
        self.encode_body(e);
        e.list(&self.endorsements, |e, s| {
            e.str(&s.endorser_subject_id).bytes(&s.signature);
        });
        e.bytes(&self.client_signature);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tx_id = d.array()?;
        let channel_id = d.string()?;
        let creator = Certificate::decode_from(d)?;
        let operation = d.string()?;
        let args = d.list(4, |d| d.bytes())?;
        let nonce = d.array()?;
        let read_set = decode_read_set(d)?;
        let write_set = decode_write_set(d)?;
        let response = d.bytes()?;
        let endorsements = d.list(8, |d| {
            Ok(EndorsementSig {
                endorser_subject_id: d.string()?,
                signature: d.bytes()?,
            })
        })?;
        let client_signature = d.bytes()?;
        Ok(Transaction {
            tx_id,
            channel_id,
            creator,
            operation,
            args,
            nonce,
            read_set,
            write_set,
            response,
            endorsements,
            client_signature,
            validity: Validity::Pending,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Hash32,
    pub data_hash: Hash32,
    pub timestamp: u64,
    /// Orderer signature over (height, prev_hash, data_hash, timestamp).
    /// Empty for genesis.
    pub orderer_signature: Vec<u8>,
    pub transactions: Vec<Transaction>,
    pub validity_flags: Vec<Validity>,
}

pub fn data_hash(transactions: &[Transaction]) -> Hash32 {
    let mut e = Encoder::new();
    e.list(transactions, |e, tx| tx.encode_into(e));
    crypto::sha256(&e.finish())
}

/// SHA-256 over the canonical (height, prev_hash, data_hash).
pub fn block_hash(block: &Block) -> Hash32 {
    header_hash(block.height, &block.prev_hash, &block.data_hash)
}

pub fn header_hash(height: u64, prev_hash: &Hash32, data_hash: &Hash32) -> Hash32 {
    let mut e = Encoder::new();
    e.u64(height).raw(prev_hash).raw(data_hash);
    crypto::sha256(&e.finish())
}

pub fn header_signing_message(height: u64, prev_hash: &Hash32, data_hash: &Hash32, timestamp: u64) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u64(height).raw(prev_hash).raw(data_hash).u64(timestamp);
    e.finish()
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            height: 0,
            prev_hash: ZERO_HASH,
            data_hash: data_hash(&[]),
            timestamp: 0,
            orderer_signature: Vec::new(),
            transactions: Vec::new(),
            validity_flags: Vec::new(),
        }
    }

    pub fn hash(&self) -> Hash32 {
        block_hash(self)
    }

    pub fn signing_message(&self) -> Vec<u8> {
        header_signing_message(self.height, &self.prev_hash, &self.data_hash, self.timestamp)
    }
}

impl Canonical for Block {
    fn encode_into(&self, e: &mut Encoder) {
        e.u64(self.height)
            .raw(&self.prev_hash)
            .raw(&self.data_hash)
            .u64(self.timestamp)
            .bytes(&self.orderer_signature);
        e.list(&self.transactions, |e, tx| tx.encode_into(e));
        e.list(&self.validity_flags, |e, v| {
            e.u8(v.code());
        });
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let height = d.u64()?;
        let prev_hash = d.array()?;
        let data_hash = d.array()?;
        let timestamp = d.u64()?;
        let orderer_signature = d.bytes()?;
        let mut transactions = d.list(64, Transaction::decode_from)?;
        let validity_flags = d.list(1, |d| {
            let c = d.u8()?;
            Validity::from_code(c).ok_or(DecodeError::BadTag {
                what: "validity",
                value: c,
            })
        })?;
        if validity_flags.len() != transactions.len() {
            return Err(DecodeError::Invalid("validity flag count"));
        }
        for (tx, flag) in transactions.iter_mut().zip(&validity_flags) {
            tx.validity = *flag;
        }
        Ok(Block {
            height,
            prev_hash,
            data_hash,
            timestamp,
            orderer_signature,
            transactions,
            validity_flags,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<String, (Vec<u8>, Version)>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<(&[u8], Version)> {
        self.entries.get(key).map(|(v, ver)| (v.as_slice(), *ver))
    }

    /// Current version, or [`Version::ABSENT`].
    pub fn version(&self, key: &str) -> Version {
        self.entries.get(key).map_or(Version::ABSENT, |(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8], Version)> {
        self.entries
            .iter()
            .map(|(k, (v, ver))| (k.as_str(), v.as_slice(), *ver))
    }

    pub fn range_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a [u8], Version)> + 'a {
        self.entries
            .range::<str, _>((std::ops::Bound::Included(prefix), std::ops::Bound::Unbounded))
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, (v, ver))| (k.as_str(), v.as_slice(), *ver))
    }

    pub fn apply(&mut self, writes: &[WriteEntry], version: Version) {
        for w in writes {
            match &w.value {
                WriteValue::Put(v) => {
                    self.entries.insert(w.key.clone(), (v.clone(), version));
                }
                WriteValue::Delete => {
                    self.entries.remove(&w.key);
                }
            }
        }
    }

    pub fn state_hash(&self) -> Hash32 {
        crypto::sha256(&self.to_canonical())
    }
}

impl Canonical for WorldState {
    fn encode_into(&self, e: &mut Encoder) {
        e.count(self.entries.len());
        for (k, (v, ver)) in &self.entries {
            e.str(k).bytes(v);
            ver.encode(e);
        }
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = d.count(20)?;
        let mut entries = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let k = d.string()?;
            if last.as_ref().is_some_and(|l| l.as_bytes() >= k.as_bytes()) {
                return Err(DecodeError::Invalid("state keys not strictly sorted"));
            }
            let v = d.bytes()?;
            let ver = Version::decode(d)?;
            last = Some(k.clone());
            entries.insert(k, (v, ver));
        }
        Ok(WorldState { entries })
    }
}

pub type CommitReport = Vec<(Hash32, Validity)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub block_height: u64,
    pub tx_index: u32,
    pub tx_id: Hash32,
    pub operation: String,
    pub creator_subject: String,
    pub validity: Validity,
}

/// First defect found by [`PeerLedger::verify_chain_report`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chain invalid at height {height}: {reason}")]
pub struct ChainFault {
    pub height: u64,
    pub reason: String,
}

fn fault(height: u64, reason: impl Into<String>) -> ChainFault {
    ChainFault {
        height,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone)]
pub struct PeerLedger {
    pub peer_id: String,
    config: Arc<ChannelConfig>,
    chain: Vec<Block>,
    world_state: WorldState,
    tx_index: HashMap<Hash32, Version>,
}

impl PeerLedger {
    pub fn new(peer_id: impl Into<String>, config: Arc<ChannelConfig>) -> Self {
        Self {
            peer_id: peer_id.into(),
            config,
            chain: vec![Block::genesis()],
            world_state: WorldState::new(),
            tx_index: HashMap::new(),
        }
    }

    /// Rebuilds a ledger from exported parts without validating anything.
    /// Call [`verify_chain`](Self::verify_chain) before trusting the result.
    pub fn from_parts(
        peer_id: impl Into<String>,
        config: Arc<ChannelConfig>,
        chain: Vec<Block>,
        world_state: WorldState,
    ) -> Self {
        let mut tx_index = HashMap::new();
        for b in &chain {
            for (i, (tx, flag)) in b.transactions.iter().zip(&b.validity_flags).enumerate() {
                if *flag == Validity::Valid {
                    tx_index.insert(tx.tx_id, Version::new(b.height, i as u32));
                }
            }
        }
        Self {
            peer_id: peer_id.into(),
            config,
            chain,
            world_state,
            tx_index,
        }
    }

    pub fn config(&self) -> &Arc<ChannelConfig> {
        &self.config
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn world_state(&self) -> &WorldState {
        &self.world_state
    }

    /// Number of blocks including genesis.
    pub fn height(&self) -> u64 {
        self.chain.len() as u64
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.chain.last().map_or(ZERO_HASH, block_hash)
    }

    pub fn get_state(&self, key: &str) -> Option<(&[u8], Version)> {
        self.world_state.get(key)
    }

    pub fn tx_location(&self, tx_id: &Hash32) -> Option<Version> {
        self.tx_index.get(tx_id).copied()
    }

    pub fn append_block(&mut self, block: Block) -> Result<CommitReport, LedgerError> {
        let expected_height = self.height();
        if block.height != expected_height || block.prev_hash != self.tip_hash() {
            return Err(LedgerError::ChainMismatch {
                expected_height,
                got_height: block.height,
                tip: hex::encode(self.tip_hash()),
            });
        }
        let mut block = block;
        let (flags, _) = validate_and_apply(&self.config, &mut self.world_state, &mut self.tx_index, &block);
        for (tx, flag) in block.transactions.iter_mut().zip(&flags) {
            tx.validity = *flag;
        }
        let report = block.transactions.iter().map(|tx| (tx.tx_id, tx.validity)).collect();
        block.validity_flags = flags;
        self.chain.push(block);
        Ok(report)
    }

    pub fn verify_chain(&self) -> bool {
        self.verify_chain_report().is_ok()
    }

    /// Structural checks on every block first (cheap), then orderer
    /// signatures, then a full re-validation replay that must reproduce every
    /// validity flag and the current world state.
    pub fn verify_chain_report(&self) -> Result<(), ChainFault> {
        let Some(genesis) = self.chain.first() else {
            return Err(fault(0, "missing genesis block"));
        };
        if genesis != &Block::genesis() {
            return Err(fault(0, "genesis block is not canonical"));
        }
        let mut prev = block_hash(genesis);
        for (i, b) in self.chain.iter().enumerate().skip(1) {
            let h = i as u64;
            if b.height != h {
                return Err(fault(h, format!("height field is {}", b.height)));
            }
            if b.prev_hash != prev {
                return Err(fault(h, "prev_hash does not match previous block"));
            }
            if b.validity_flags.len() != b.transactions.len() {
                return Err(fault(h, "validity flag count mismatch"));
            }
            if data_hash(&b.transactions) != b.data_hash {
                return Err(fault(h, "data_hash does not match transactions"));
            }
            for (j, tx) in b.transactions.iter().enumerate() {
                if tx.compute_id() != tx.tx_id {
                    return Err(fault(h, format!("tx {j} id does not match its content")));
                }
                if tx.validity != b.validity_flags[j] {
                    return Err(fault(h, format!("tx {j} validity disagrees with block flags")));
                }
            }
            prev = block_hash(b);
        }

        let orderer = &self.config.orderer_cert;
        if !self.config.is_trusted(orderer) || orderer.role != Role::Orderer {
            return Err(fault(0, "orderer certificate is not trusted"));
        }
        for b in self.chain.iter().skip(1) {
            if !verify(&orderer.signing_public_key, &b.signing_message(), &b.orderer_signature) {
                return Err(fault(b.height, "orderer signature invalid"));
            }
        }

        let mut state = WorldState::new();
        let mut index = HashMap::new();
        for b in self.chain.iter().skip(1) {
            let (flags, _) = validate_and_apply(&self.config, &mut state, &mut index, b);
            if let Some(j) = flags.iter().zip(&b.validity_flags).position(|(a, b)| a != b) {
                return Err(fault(
                    b.height,
                    format!(
                        "tx {j} recorded as {} but validates as {}",
                        b.validity_flags[j], flags[j]
                    ),
                ));
            }
        }
        if state != self.world_state {
            return Err(fault(self.height() - 1, "world state does not match replay"));
        }
        Ok(())
    }

    /// World state rebuilt from the VALID transactions recorded in the chain.
    pub fn replay_world_state(&self) -> WorldState {
        let mut state = WorldState::new();
        for b in self.chain.iter().skip(1) {
            for (i, (tx, flag)) in b.transactions.iter().zip(&b.validity_flags).enumerate() {
                if *flag == Validity::Valid {
                    state.apply(&tx.write_set, Version::new(b.height, i as u32));
                }
            }
        }
        state
    }

    /// Every transaction, valid or not, whose read or write set touches a key
    /// starting with `key_prefix`, in chain order.
    pub fn audit_trail(&self, key_prefix: &str) -> Vec<AuditEntry> {
        let mut out = Vec::new();
        for b in &self.chain {
            for (i, tx) in b.transactions.iter().enumerate() {
                if tx.touches_prefix(key_prefix) {
                    out.push(AuditEntry {
                        block_height: b.height,
                        tx_index: i as u32,
                        tx_id: tx.tx_id,
                        operation: tx.operation.clone(),
                        creator_subject: tx.creator.subject_id.clone(),
                        validity: b.validity_flags[i],
                    });
                }
            }
        }
        out
    }
}

/// Validates every transaction of `block` against `state`, applying valid
/// write sets as it goes. Returns the flags and the number applied.
fn validate_and_apply(
    config: &ChannelConfig,
    state: &mut WorldState,
    index: &mut HashMap<Hash32, Version>,
    block: &Block,
) -> (Vec<Validity>, usize) {
    let mut flags = Vec::with_capacity(block.transactions.len());
    let mut applied = 0;
    for (i, tx) in block.transactions.iter().enumerate() {
        let v = validate_tx(config, state, index, tx);
        if v == Validity::Valid {
            let version = Version::new(block.height, i as u32);
            state.apply(&tx.write_set, version);
            index.insert(tx.tx_id, version);
            applied += 1;
        }
        flags.push(v);
    }
    (flags, applied)
}

pub(crate) fn validate_tx(
    config: &ChannelConfig,
    state: &WorldState,
    index: &HashMap<Hash32, Version>,
    tx: &Transaction,
) -> Validity {
    if tx.channel_id != config.channel_id
        || tx.compute_id() != tx.tx_id
        || index.contains_key(&tx.tx_id)
        || !config.is_trusted(&tx.creator)
        || !verify(&tx.creator.signing_public_key, &tx.tx_id, &tx.client_signature)
    {
        return Validity::InvalidSignature;
    }
    if !endorsement_policy_met(config, tx) {
        return Validity::InvalidEndorsement;
    }
    if tx.read_set.iter().any(|r| state.version(&r.key) != r.version) {
        return Validity::InvalidMvcc;
    }
    Validity::Valid
}

/// Counts distinct eligible organizations with a valid endorsement signature.
/// Unknown or badly signed endorsements are ignored rather than fatal.
pub(crate) fn endorsement_policy_met(config: &ChannelConfig, tx: &Transaction) -> bool {
    let policy = &config.endorsement_policy;
    let msg = tx.endorsement_message();
    let mut orgs = BTreeSet::new();
    for e in &tx.endorsements {
        let Some(cert) = config.peer_certs.get(&e.endorser_subject_id) else {
            continue;
        };
        if cert.role != Role::Peer
            || !policy.is_eligible(&cert.organization)
            || orgs.contains(cert.organization.as_str())
            || !config.is_trusted(cert)
            || !verify(&cert.signing_public_key, &msg, &e.signature)
        {
            continue;
        }
        orgs.insert(cert.organization.as_str());
    }
    orgs.len() >= policy.required as usize
}
