//! Content-addressed replicated blob store with explicit pinning and failure
//! injection.
//!
//! Content is keyed by its SHA-256 digest, so the bytes under a CID cannot
//! change without changing the CID. Every read re-hashes before returning.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{self, Hash32};

const CID_PREFIX: &str = "sha256:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CasError {
    #[error("no live storage nodes")]
    NoLiveNodes,
    #[error("content {0} not found on any live node")]
    NotFound(Cid),
    #[error("content {cid} failed integrity check on {nodes:?}")]
    IntegrityFailure { cid: Cid, nodes: Vec<String> },
    #[error("unknown storage node {0:?}")]
    UnknownNode(String),
    #[error("storage node {0:?} is down")]
    NodeDown(String),
    #[error("duplicate storage node {0:?}")]
    DuplicateNode(String),
    #[error("malformed CID {0:?}")]
    MalformedCid(String),
}

impl CasError {
    pub fn name(&self) -> &'static str {
        match self {
            CasError::NoLiveNodes => "NoLiveNodes",
            CasError::NotFound(_) => "NotFound",
            CasError::IntegrityFailure { .. } => "IntegrityFailure",
            CasError::UnknownNode(_) => "UnknownNode",
            CasError::NodeDown(_) => "NodeDown",
            CasError::DuplicateNode(_) => "DuplicateNode",
            CasError::MalformedCid(_) => "MalformedCid",
        }
    }
}

/// Content identifier: the SHA-256 digest of the addressed bytes.
/// Text form is `sha256:` followed by 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid(pub Hash32);

impl Cid {
    pub fn digest(&self) -> &Hash32 {
        &self.0
    }

    pub fn matches(&self, content: &[u8]) -> bool {
        cid_of(content) == *self
    }
}

pub fn cid_of(content: &[u8]) -> Cid {
    Cid(crypto::sha256(content))
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{CID_PREFIX}{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Cid {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CasError::MalformedCid(s.to_string());
        let hex_part = s.strip_prefix(CID_PREFIX).ok_or_else(bad)?;
        if hex_part.len() != 64 || hex_part.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(bad());
        }
        let raw = hex::decode(hex_part).map_err(|_| bad())?;
        Ok(Cid(raw.try_into().map_err(|_| bad())?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageNode {
    pub node_id: String,
    pub operator_org: String,
    pinned: BTreeMap<Cid, Vec<u8>>,
    pub alive: bool,
}

impl StorageNode {
    pub fn new(node_id: impl Into<String>, operator_org: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            operator_org: operator_org.into(),
            pinned: BTreeMap::new(),
            alive: true,
        }
    }

    pub fn has(&self, cid: &Cid) -> bool {
        self.pinned.contains_key(cid)
    }

    pub fn pinned(&self) -> impl Iterator<Item = &Cid> {
        self.pinned.keys()
    }

    /// Raw stored bytes after an integrity check.
    pub fn read(&self, cid: &Cid) -> Result<&[u8], CasError> {
        let bytes = self.pinned.get(cid).ok_or(CasError::NotFound(*cid))?;
        if cid.matches(bytes) {
            Ok(bytes)
        } else {
            Err(CasError::IntegrityFailure {
                cid: *cid,
                nodes: vec![self.node_id.clone()],
            })
        }
    }
}

/// Result of a read, naming any replica that served corrupt bytes before a
/// clean one was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub content: Vec<u8>,
    pub served_by: String,
    pub corrupt_replicas: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CasNetwork {
    nodes: BTreeMap<String, StorageNode>,
    replication_factor: u32,
}

impl CasNetwork {
    pub fn new(replication_factor: u32) -> Self {
        assert!(replication_factor >= 1, "replication factor must be >= 1");
        Self {
            nodes: BTreeMap::new(),
            replication_factor,
        }
    }

    pub fn replication_factor(&self) -> u32 {
        self.replication_factor
    }

    pub fn add_node(&mut self, node_id: &str, operator_org: &str) -> Result<(), CasError> {
        if self.nodes.contains_key(node_id) {
            return Err(CasError::DuplicateNode(node_id.to_string()));
        }
        self.nodes
            .insert(node_id.to_string(), StorageNode::new(node_id, operator_org));
        Ok(())
    }

    pub fn node(&self, node_id: &str) -> Option<&StorageNode> {
        self.nodes.get(node_id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &StorageNode> {
        self.nodes.values()
    }

    fn node_mut(&mut self, node_id: &str) -> Result<&mut StorageNode, CasError> {
        self.nodes
            .get_mut(node_id)
            .ok_or_else(|| CasError::UnknownNode(node_id.to_string()))
    }

    /// Ids of the nodes currently holding `cid`, live or not.
    pub fn holders(&self, cid: &Cid) -> Vec<String> {
        self.nodes
            .values()
            .filter(|n| n.has(cid))
            .map(|n| n.node_id.clone())
            .collect()
    }

    /// Stores `content` on min(r, live) live nodes, lowest node ids first.
    /// Live nodes that already hold the content count toward r.
    pub fn put(&mut self, content: &[u8]) -> Result<Cid, CasError> {
        let cid = cid_of(content);
        let live: Vec<&String> = self.nodes.iter().filter(|(_, n)| n.alive).map(|(id, _)| id).collect();
        if live.is_empty() {
            return Err(CasError::NoLiveNodes);
        }
        let target = (self.replication_factor as usize).min(live.len());
        let held = live.iter().filter(|id| self.nodes[**id].has(&cid)).count();
        let fresh: Vec<String> = live
            .iter()
            .filter(|id| !self.nodes[**id].has(&cid))
            .take(target.saturating_sub(held))
            .map(|id| (*id).clone())
            .collect();
        for id in fresh {
            self.nodes
                .get_mut(&id)
                .expect("live node exists")
                .pinned
                .insert(cid, content.to_vec());
        }
        Ok(cid)
    }

    pub fn get(&self, cid: &Cid) -> Result<Vec<u8>, CasError> {
        self.get_with_report(cid).map(|f| f.content)
    }

    /// Tries live holders in node-id order, skipping replicas whose bytes no
    /// longer hash to `cid`.
    pub fn get_with_report(&self, cid: &Cid) -> Result<Fetched, CasError> {
        let mut corrupt = Vec::new();
        for node in self.nodes.values().filter(|n| n.alive && n.has(cid)) {
            match node.read(cid) {
                Ok(bytes) => {
                    return Ok(Fetched {
                        content: bytes.to_vec(),
                        served_by: node.node_id.clone(),
                        corrupt_replicas: corrupt,
                    })
                }
                Err(_) => corrupt.push(node.node_id.clone()),
            }
        }
        if corrupt.is_empty() {
            Err(CasError::NotFound(*cid))
        } else {
            Err(CasError::IntegrityFailure {
                cid: *cid,
                nodes: corrupt,
            })
        }
    }

    /// Copies content held by some live node onto `node_id`.
    pub fn pin(&mut self, cid: &Cid, node_id: &str) -> Result<(), CasError> {
        let node = self
            .nodes
            .get(node_id)
            .ok_or_else(|| CasError::UnknownNode(node_id.to_string()))?;
        if !node.alive {
            return Err(CasError::NodeDown(node_id.to_string()));
        }
        if node.read(cid).is_ok() {
            return Ok(());
        }
        let content = self.get(cid)?;
        self.node_mut(node_id)?.pinned.insert(*cid, content);
        Ok(())
    }

    pub fn unpin(&mut self, cid: &Cid, node_id: &str) -> Result<(), CasError> {
        let node = self.node_mut(node_id)?;
        if !node.alive {
            return Err(CasError::NodeDown(node_id.to_string()));
        }
        node.pinned.remove(cid).map(|_| ()).ok_or(CasError::NotFound(*cid))
    }

    pub fn set_node_alive(&mut self, node_id: &str, alive: bool) -> Result<(), CasError> {
        self.node_mut(node_id)?.alive = alive;
        Ok(())
    }

    /// Failure injection: flips bits of one stored byte in place. Returns
    /// false if the node does not hold `cid` or the content is empty.
    pub fn corrupt(&mut self, node_id: &str, cid: &Cid, byte_index: usize, mask: u8) -> Result<bool, CasError> {
        let node = self.node_mut(node_id)?;
        match node.pinned.get_mut(cid) {
            Some(bytes) if !bytes.is_empty() => {
                let i = byte_index % bytes.len();
                bytes[i] ^= mask.max(1);
                Ok(true)
            }
            _ => Ok(false),
        }
    }
}

impl Canonical for CasNetwork {
    fn encode_into(&self, e: &mut Encoder) {
        e.u32(self.replication_factor).count(self.nodes.len());
        for n in self.nodes.values() {
            e.str(&n.node_id)
                .str(&n.operator_org)
                .u8(n.alive as u8)
                .count(n.pinned.len());
            for (cid, bytes) in &n.pinned {
                e.raw(&cid.0).bytes(bytes);
            }
        }
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let r = d.u32()?;
        if r == 0 {
            return Err(DecodeError::Invalid("replication factor"));
        }
        let mut net = CasNetwork::new(r);
        let n = d.count(13)?;
        for _ in 0..n {
            let mut node = StorageNode::new(d.string()?, d.string()?);
            node.alive = match d.u8()? {
                0 => false,
                1 => true,
                v => {
                    return Err(DecodeError::BadTag {
                        what: "alive",
                        value: v,
                    })
                }
            };
            let m = d.count(36)?;
            for _ in 0..m {
                let cid = Cid(d.array()?);
                node.pinned.insert(cid, d.bytes()?);
            }
            if net.nodes.insert(node.node_id.clone(), node).is_some() {
                return Err(DecodeError::Invalid("duplicate node id"));
            }
        }
        Ok(net)
    }
}
