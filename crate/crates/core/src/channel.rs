//! Channel configuration: the membership, trust anchors and policies every
//! peer and the orderer of one channel agree on.
//!
//! Two forms exist. [`ChannelFile`] is the operator-written TOML document
//! (names, sizes, policies). [`ChannelConfig`] is the runtime form built once
//! the network has generated CA keys and enrolled its peers and orderer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::identity::{is_trusted, Certificate, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot read channel config {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("channel config syntax: {0}")]
    Syntax(String),
    #[error("ordering type {0:?} is not implemented (only \"solo\" is)")]
    UnsupportedOrdering(String),
    #[error("invalid channel config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndorsementPolicy {
    /// k: number of distinct eligible organizations that must endorse.
    pub required: u32,
    pub eligible_orgs: Vec<String>,
}

impl EndorsementPolicy {
    /// Majority of the eligible organizations: ceil(n / 2).
    pub fn majority(eligible_orgs: Vec<String>) -> Self {
        let n = eligible_orgs.len() as u32;
        Self {
            required: n.div_ceil(2).max(1),
            eligible_orgs,
        }
    }

    pub fn is_eligible(&self, org: &str) -> bool {
        self.eligible_orgs.iter().any(|o| o == org)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSettings {
    pub initial_balance: u64,
    pub patient_initial_balance: u64,
    pub default_price: u64,
}

impl Default for TokenSettings {
    fn default() -> Self {
        Self {
            initial_balance: 100,
            patient_initial_balance: 100,
            default_price: 10,
        }
    }
}

impl TokenSettings {
    pub fn allocation_for(&self, role: Role) -> u64 {
        match role {
            Role::Patient => self.patient_initial_balance,
            _ => self.initial_balance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelConfig {
    pub channel_id: String,
    pub member_orgs: Vec<String>,
    pub trusted_ca_keys: Vec<Vec<u8>>,
    pub endorsement_policy: EndorsementPolicy,
    pub max_block_txs: u32,
    pub block_timeout_ticks: u64,
    pub orderer_id: String,
    pub orderer_cert: Certificate,
    /// Certificates of every peer allowed to endorse, by subject id.
    pub peer_certs: BTreeMap<String, Certificate>,
    pub tokens: TokenSettings,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.endorsement_policy;
        if p.required < 1 || p.required as usize > p.eligible_orgs.len() {
            return Err(ConfigError::Invalid(format!(
                "endorsement policy needs 1 <= k <= {}, got k = {}",
                p.eligible_orgs.len(),
                p.required
            )));
        }
        if let Some(org) = p.eligible_orgs.iter().find(|o| !self.member_orgs.contains(o)) {
            return Err(ConfigError::Invalid(format!(
                "eligible org {org:?} is not a channel member"
            )));
        }
        if self.max_block_txs < 1 {
            return Err(ConfigError::Invalid("max_block_txs must be >= 1".into()));
        }
        if self.orderer_cert.subject_id != self.orderer_id
            || self.orderer_cert.role != Role::Orderer
            || !is_trusted(&self.orderer_cert, &self.trusted_ca_keys)
        {
            return Err(ConfigError::Invalid(
                "orderer certificate does not match orderer_id or is untrusted".into(),
            ));
        }
        for (id, cert) in &self.peer_certs {
            if &cert.subject_id != id || cert.role != Role::Peer || !is_trusted(cert, &self.trusted_ca_keys) {
                return Err(ConfigError::Invalid(format!("peer certificate {id:?} is invalid")));
            }
        }
        Ok(())
    }

    pub fn is_trusted(&self, cert: &Certificate) -> bool {
        is_trusted(cert, &self.trusted_ca_keys)
    }
}

impl Canonical for ChannelConfig {
    fn encode_into(&self, e: &mut Encoder) {
        e.str(&self.channel_id)
            .list(&self.member_orgs, |e, o| {
                e.str(o);
            })
            .list(&self.trusted_ca_keys, |e, k| {
                e.bytes(k);
            })
            .u32(self.endorsement_policy.required)
            .list(&self.endorsement_policy.eligible_orgs, |e, o| {
                e.str(o);
            })
            .u32(self.max_block_txs)
            .u64(self.block_timeout_ticks)
            .str(&self.orderer_id);
        self.orderer_cert.encode_into(e);
        e.count(self.peer_certs.len());
        for (id, cert) in &self.peer_certs {
            e.str(id);
            cert.encode_into(e);
        }
        e.u64(self.tokens.initial_balance)
            .u64(self.tokens.patient_initial_balance)
            .u64(self.tokens.default_price);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let channel_id = d.string()?;
        let member_orgs = d.list(4, |d| d.string())?;
        let trusted_ca_keys = d.list(4, |d| d.bytes())?;
        let required = d.u32()?;
        let eligible_orgs = d.list(4, |d| d.string())?;
        let max_block_txs = d.u32()?;
        let block_timeout_ticks = d.u64()?;
        let orderer_id = d.string()?;
        let orderer_cert = Certificate::decode_from(d)?;
        let n = d.count(8)?;
        let mut peer_certs = BTreeMap::new();
        for _ in 0..n {
            let id = d.string()?;
            peer_certs.insert(id, Certificate::decode_from(d)?);
        }
        let tokens = TokenSettings {
            initial_balance: d.u64()?,
            patient_initial_balance: d.u64()?,
            default_price: d.u64()?,
        };
        Ok(ChannelConfig {
            channel_id,
            member_orgs,
            trusted_ca_keys,
            endorsement_policy: EndorsementPolicy {
                required,
                eligible_orgs,
            },
            max_block_txs,
            block_timeout_ticks,
            orderer_id,
            orderer_cert,
            peer_certs,
            tokens,
        })
    }
}

// ---------------------------------------------------------------------------
// Operator config file

/// Shipped default: two hospital organizations sharing one CA, one
/// endorsing peer each, five storage nodes.
pub const DEFAULT_CHANNEL_TOML: &str = include_str!("../scenarios/channel.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub channel: ChannelSection,
    #[serde(default)]
    pub policy: Option<PolicySection>,
    #[serde(default)]
    pub tokens: TokenSection,
    #[serde(default)]
    pub cas: CasSection,
    #[serde(rename = "ca")]
    pub cas_authorities: Vec<CaSection>,
    #[serde(rename = "org")]
    pub orgs: Vec<OrgSection>,
    #[serde(default, rename = "storage_node")]
    pub storage_nodes: Vec<StorageNodeSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub id: String,
    #[serde(default = "default_ordering")]
    pub ordering: String,
    pub orderer: String,
    pub orderer_org: Option<String>,
    #[serde(default = "default_max_block_txs")]
    pub max_block_txs: u32,
    #[serde(default = "default_block_timeout")]
    pub block_timeout_ticks: u64,
}

fn default_ordering() -> String {
    "solo".into()
}

fn default_max_block_txs() -> u32 {
    10
}

fn default_block_timeout() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub required: Option<u32>,
    pub eligible_orgs: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSection {
    #[serde(default = "default_balance")]
    pub initial_balance: u64,
    pub patient_initial_balance: Option<u64>,
    #[serde(default = "default_price")]
    pub default_price: u64,
}

fn default_balance() -> u64 {
    100
}

fn default_price() -> u64 {
    10
}

impl Default for TokenSection {
    fn default() -> Self {
        Self {
            initial_balance: default_balance(),
            patient_initial_balance: None,
            default_price: default_price(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasSection {
    #[serde(default = "default_replication")]
    pub replication_factor: u32,
}

fn default_replication() -> u32 {
    3
}

impl Default for CasSection {
    fn default() -> Self {
        Self {
            replication_factor: default_replication(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaSection {
    pub id: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrgSection {
    pub name: String,
    pub ca: String,
    #[serde(default)]
    pub peers: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageNodeSection {
    pub id: String,
    pub operator: String,
}

impl ChannelFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ChannelFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.message().to_string()))?;
        file.check()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn default_file() -> Self {
        Self::parse(DEFAULT_CHANNEL_TOML).expect("shipped channel config is valid")
    }

    fn check(&self) -> Result<(), ConfigError> {
        let ordering = self.channel.ordering.to_ascii_lowercase();
        if ordering != "solo" {
            return Err(ConfigError::UnsupportedOrdering(self.channel.ordering.clone()));
        }
        if self.orgs.is_empty() {
            return Err(ConfigError::Invalid("at least one [[org]] is required".into()));
        }
        let ca_ids: BTreeSet<&str> = self.cas_authorities.iter().map(|c| c.id.as_str()).collect();
        if ca_ids.len() != self.cas_authorities.len() {
            return Err(ConfigError::Invalid("duplicate CA id".into()));
        }
        let mut org_names = BTreeSet::new();
        let mut subjects = BTreeSet::new();
        subjects.insert(self.channel.orderer.as_str());
        for org in &self.orgs {
            if !org_names.insert(org.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate org {:?}", org.name)));
            }
            if !ca_ids.contains(org.ca.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "org {:?} references unknown CA {:?}",
                    org.name, org.ca
                )));
            }
            for p in &org.peers {
                if !subjects.insert(p.as_str()) {
                    return Err(ConfigError::Invalid(format!("duplicate subject {p:?}")));
                }
            }
        }
        if !org_names.contains(self.orderer_org()) {
            return Err(ConfigError::Invalid(format!(
                "orderer_org {:?} is not a declared org",
                self.orderer_org()
            )));
        }
        if self.endorsing_orgs().is_empty() {
            return Err(ConfigError::Invalid("no organization runs a peer".into()));
        }
        let mut node_ids = BTreeSet::new();
        for n in &self.storage_nodes {
            if !node_ids.insert(n.id.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate storage node {:?}", n.id)));
            }
        }
        if self.cas.replication_factor < 1 {
            return Err(ConfigError::Invalid("replication_factor must be >= 1".into()));
        }
        if self.channel.max_block_txs < 1 {
            return Err(ConfigError::Invalid("max_block_txs must be >= 1".into()));
        }
        let policy = self.policy();
        if policy.required < 1 || policy.required as usize > policy.eligible_orgs.len() {
            return Err(ConfigError::Invalid(format!(
                "endorsement policy needs 1 <= k <= {}, got k = {}",
                policy.eligible_orgs.len(),
                policy.required
            )));
        }
        if let Some(o) = policy.eligible_orgs.iter().find(|o| !self.endorsing_orgs().contains(o)) {
            return Err(ConfigError::Invalid(format!(
                "eligible org {o:?} is unknown or runs no peer"
            )));
        }
        Ok(())
    }

    pub fn orderer_org(&self) -> &str {
        self.channel.orderer_org.as_deref().unwrap_or(&self.orgs[0].name)
    }

    pub fn org(&self, name: &str) -> Option<&OrgSection> {
        self.orgs.iter().find(|o| o.name == name)
    }

    /// Organizations running at least one peer, in declaration order.
    pub fn endorsing_orgs(&self) -> Vec<String> {
        self.orgs
            .iter()
            .filter(|o| !o.peers.is_empty())
            .map(|o| o.name.clone())
            .collect()
    }

    pub fn policy(&self) -> EndorsementPolicy {
        let eligible = self
            .policy
            .as_ref()
            .and_then(|p| p.eligible_orgs.clone())
            .unwrap_or_else(|| self.endorsing_orgs());
        let mut policy = EndorsementPolicy::majority(eligible);
        if let Some(k) = self.policy.as_ref().and_then(|p| p.required) {
            policy.required = k;
        }
        policy
    }

    pub fn token_settings(&self) -> TokenSettings {
        TokenSettings {
            initial_balance: self.tokens.initial_balance,
            patient_initial_balance: self
                .tokens
                .patient_initial_balance
                .unwrap_or(self.tokens.initial_balance),
            default_price: self.tokens.default_price,
        }
    }
}
