//! In-process simulation of one channel: certification authorities, endorsing
//! and committing peers, a solo orderer, the storage network, and the client
//! wallets of every enrolled subject.
//!
//! Client-side flows follow the platform's record lifecycle: a hospital
//! seals and uploads a record for a patient, the patient grants access by
//! re-wrapping the record key, and a grantee fetches through a recorded
//! transaction before decrypting locally.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::cas::{CasError, CasNetwork, Cid};
use crate::chaincode::{Chaincode, ChaincodeError};
use crate::channel::{ChannelConfig, ChannelFile, ConfigError};
use crate::codec::{Canonical, DecodeError};
use crate::crypto::{self, Hash32};
use crate::ehr::{self, EhrChaincode, RecordMaterial};
use crate::envelope::{self, EnvelopeError};
use crate::identity::{verify, CertAuthority, Certificate, Identity, IdentityError, Role};
use crate::ledger::{Block, CommitReport, LedgerError, PeerLedger, Transaction, Validity};
use crate::ordering::{agreed_report, assemble_transaction, deliver, OrderingError, Peer, Proposal, SoloOrderer};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Chaincode(ChaincodeError),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("unknown organization {0:?}")]
    UnknownOrg(String),
    #[error("transaction committed as {0}")]
    Invalidated(Validity),
    #[error("peers diverged: {0}")]
    Divergence(String),
    #[error("token supply changed at block {height}: balances {balances}, allocated {allocated}")]
    ConservationViolated {
        height: u64,
        balances: u128,
        allocated: u128,
    },
    #[error("undecodable chaincode payload: {0}")]
    Payload(#[from] DecodeError),
    #[error("transaction was not committed within the ordering timeout")]
    NotCommitted,
}

impl NetError {
    /// Stable error name used in transcripts.
    pub fn name(&self) -> String {
        match self {
            NetError::Config(_) => "ConfigError".into(),
            NetError::Identity(e) => e.name().into(),
            NetError::Ordering(e) => e.name().into(),
            NetError::Ledger(e) => e.name().into(),
            NetError::Cas(e) => e.name().into(),
            NetError::Envelope(e) => e.name().into(),
            NetError::Chaincode(e) => e.kind.clone(),
            NetError::UnknownSubject(_) => "UnknownSubject".into(),
            NetError::UnknownOrg(_) => "UnknownOrg".into(),
            NetError::Invalidated(v) => v.as_str().into(),
            NetError::Divergence(_) => "Divergence".into(),
            NetError::ConservationViolated { .. } => "ConservationViolated".into(),
            NetError::Payload(_) => "BadPayload".into(),
            NetError::NotCommitted => "NotCommitted".into(),
        }
    }
}

impl From<ChaincodeError> for NetError {
    fn from(e: ChaincodeError) -> Self {
        NetError::Chaincode(e)
    }
}

/// Outcome of a transaction that went through the whole pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Committed {
    pub tx_id: Hash32,
    pub block_height: u64,
    pub validity: Validity,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Uploaded {
    pub record_id: String,
    pub cid: Cid,
    pub commit: Committed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetch {
    pub plaintext: Vec<u8>,
    pub served_by: String,
    pub corrupt_replicas: Vec<String>,
    pub commit: Committed,
}

pub struct Network {
    rng: SimRng,
    file: ChannelFile,
    config: Arc<ChannelConfig>,
    authorities: BTreeMap<String, CertAuthority>,
    wallets: BTreeMap<String, Identity>,
    peers: Vec<Peer>,
    endorsers: Vec<usize>,
    orderer: SoloOrderer,
    cas: CasNetwork,
    parallel_delivery: bool,
    sensitive: Vec<Vec<u8>>,
}

impl Network {
    pub fn new(file: ChannelFile, seed: u64) -> Result<Self, NetError> {
        Self::with_chaincode(file, seed, Arc::new(EhrChaincode))
    }

    /// Builds the channel deterministically from `seed`: CA keys in
    /// declaration order, then peers, then the orderer.
    pub fn with_chaincode(file: ChannelFile, seed: u64, chaincode: Arc<dyn Chaincode>) -> Result<Self, NetError> {
        let mut rng = SimRng::new(seed);
        let mut authorities = BTreeMap::new();
        for ca in &file.cas_authorities {
            authorities.insert(ca.id.clone(), CertAuthority::new(&ca.id, &mut rng));
        }
        let trusted_ca_keys: Vec<Vec<u8>> = file
            .cas_authorities
            .iter()
            .map(|c| authorities[&c.id].public_key().to_vec())
            .collect();

        let mut peer_ids = Vec::new();
        for org in &file.orgs {
            let ca = authorities.get_mut(&org.ca).expect("validated CA reference");
            for p in &org.peers {
                peer_ids.push(ca.enroll(&mut rng, 0, p, &org.name, Role::Peer)?);
            }
        }
        let orderer_org = file.orderer_org().to_string();
        let orderer_ca = &file.org(&orderer_org).expect("validated orderer org").ca;
        let orderer_id = authorities
            .get_mut(orderer_ca)
            .expect("validated CA reference")
            .enroll(&mut rng, 0, &file.channel.orderer, &orderer_org, Role::Orderer)?;

        let config = Arc::new(ChannelConfig {
            channel_id: file.channel.id.clone(),
            member_orgs: file.orgs.iter().map(|o| o.name.clone()).collect(),
            trusted_ca_keys,
            endorsement_policy: file.policy(),
            max_block_txs: file.channel.max_block_txs,
            block_timeout_ticks: file.channel.block_timeout_ticks,
            orderer_id: orderer_id.subject_id().to_string(),
            orderer_cert: orderer_id.certificate.clone(),
            peer_certs: peer_ids
                .iter()
                .map(|p| (p.subject_id().to_string(), p.certificate.clone()))
                .collect(),
            tokens: file.token_settings(),
        });
        config.validate()?;

        let peers: Vec<Peer> = peer_ids
            .into_iter()
            .map(|id| Peer::new(id, config.clone(), chaincode.clone()))
            .collect();
        let mut endorsers = Vec::new();
        for org in &config.endorsement_policy.eligible_orgs {
            if let Some(i) = peers.iter().position(|p| p.organization() == org) {
                endorsers.push(i);
            }
        }
        let orderer = SoloOrderer::new(orderer_id, &config);

        let mut cas = CasNetwork::new(file.cas.replication_factor);
        for n in &file.storage_nodes {
            cas.add_node(&n.id, &n.operator)?;
        }

        Ok(Self {
            rng,
            file,
            config,
            authorities,
            wallets: BTreeMap::new(),
            peers,
            endorsers,
            orderer,
            cas,
            parallel_delivery: false,
            sensitive: Vec::new(),
        })
    }

    pub fn set_parallel_delivery(&mut self, parallel: bool) {
        self.parallel_delivery = parallel;
    }

    pub fn config(&self) -> &Arc<ChannelConfig> {
        &self.config
    }

    pub fn channel_file(&self) -> &ChannelFile {
        &self.file
    }

    pub fn now(&self) -> u64 {
        self.orderer.clock()
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    /// Reference ledger (first peer); all peers are kept identical.
    pub fn ledger(&self) -> &PeerLedger {
        &self.peers[0].ledger
    }

    pub fn cas(&self) -> &CasNetwork {
        &self.cas
    }

    pub fn cas_mut(&mut self) -> &mut CasNetwork {
        &mut self.cas
    }

    pub fn orderer(&self) -> &SoloOrderer {
        &self.orderer
    }

    pub fn authorities(&self) -> &BTreeMap<String, CertAuthority> {
        &self.authorities
    }

    pub fn identity(&self, subject: &str) -> Result<&Identity, NetError> {
        self.wallets
            .get(subject)
            .ok_or_else(|| NetError::UnknownSubject(subject.to_string()))
    }

    /// Every record key and plaintext this network's clients have handled
    /// in the clear. Used to prove none of it reaches shared storage.
    pub fn sensitive_material(&self) -> &[Vec<u8>] {
        &self.sensitive
    }

    pub fn enroll(&mut self, subject: &str, org: &str, role: Role) -> Result<Certificate, NetError> {
        let ca_id = &self
            .file
            .org(org)
            .ok_or_else(|| NetError::UnknownOrg(org.to_string()))?
            .ca;
        let now = self.orderer.clock();
        let ca = self.authorities.get_mut(ca_id).expect("validated CA reference");
        let identity = ca.enroll(&mut self.rng, now, subject, org, role)?;
        let cert = identity.certificate.clone();
        self.wallets.insert(subject.to_string(), identity);
        Ok(cert)
    }

    /// Signed proposal with a fresh nonce from the seeded generator.
    pub fn proposal(&mut self, subject: &str, operation: &str, args: Vec<Vec<u8>>) -> Result<Proposal, NetError> {
        let nonce = self.rng.array();
        let client = self.identity(subject)?;
        Ok(Proposal::new_signed(
            client,
            &self.config.channel_id,
            operation,
            args,
            nonce,
        ))
    }

    /// Endorses on one peer per eligible organization and assembles the
    /// transaction. Nothing is submitted.
    pub fn prepare(
        &mut self,
        subject: &str,
        operation: &str,
        args: Vec<Vec<u8>>,
    ) -> Result<(Transaction, Vec<u8>), NetError> {
        let proposal = self.proposal(subject, operation, args)?;
        let now = self.now();
        let endorsements = self
            .endorsers
            .iter()
            .map(|&i| self.peers[i].endorse(&proposal, now))
            .collect::<Result<Vec<_>, _>>()?;
        let tx = assemble_transaction(&proposal, &endorsements, &self.config, self.identity(subject)?)?;
        let payload = crate::chaincode::Response::from_canonical(&tx.response)?.into_result()?;
        Ok((tx, payload))
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<(), NetError> {
        Ok(self.orderer.submit(tx)?)
    }

    /// Advances the orderer clock one tick and commits whatever it cuts.
    pub fn tick(&mut self) -> Result<Vec<(u64, CommitReport)>, NetError> {
        let blocks = self.orderer.tick();
        blocks
            .into_iter()
            .map(|b| {
                let h = b.height;
                self.deliver_block(b).map(|r| (h, r))
            })
            .collect()
    }

    fn deliver_block(&mut self, block: Block) -> Result<CommitReport, NetError> {
        let height = block.height;
        let reports = deliver(&block, &mut self.peers, self.parallel_delivery);
        let mut agreed = None;
        for (peer, r) in self.peers.iter().zip(&reports) {
            if let Err(e) = r {
                return Err(NetError::Divergence(format!(
                    "{} rejected block {height}: {e}",
                    peer.id()
                )));
            }
        }
        if let Some(r) = agreed_report(&reports) {
            agreed = Some(r.clone());
        }
        let report = agreed.ok_or_else(|| NetError::Divergence(format!("commit reports differ at block {height}")))?;
        let tip = self.peers[0].ledger.tip_hash();
        let state = self.peers[0].ledger.world_state();
        if self
            .peers
            .iter()
            .any(|p| p.ledger.tip_hash() != tip || p.ledger.world_state() != state)
        {
            return Err(NetError::Divergence(format!("peer state differs after block {height}")));
        }
        let (balances, allocated) = ehr::token_totals(state)?;
        if balances != allocated {
            return Err(NetError::ConservationViolated {
                height,
                balances,
                allocated,
            });
        }
        Ok(report)
    }

    /// Full pipeline: endorse, assemble, submit, then tick until the block
    /// holding the transaction is committed on every peer.
    pub fn invoke(&mut self, subject: &str, operation: &str, args: Vec<Vec<u8>>) -> Result<Committed, NetError> {
        let (tx, payload) = self.prepare(subject, operation, args)?;
        let tx_id = tx.tx_id;
        self.submit(tx)?;
        let budget = self.config.block_timeout_ticks + 1;
        for _ in 0..=budget {
            for (height, report) in self.tick()? {
                if let Some((_, validity)) = report.iter().find(|(id, _)| *id == tx_id) {
                    let c = Committed {
                        tx_id,
                        block_height: height,
                        validity: *validity,
                        payload,
                    };
                    return match c.validity {
                        Validity::Valid => Ok(c),
                        other => Err(NetError::Invalidated(other)),
                    };
                }
            }
        }
        Err(NetError::NotCommitted)
    }

    /// Local read-only chaincode query on the first endorsing peer.
    pub fn query(&self, subject: &str, operation: &str, args: Vec<Vec<u8>>) -> Result<Vec<u8>, NetError> {
        let client = self.identity(subject)?;
        let peer = &self.peers[self.endorsers[0]];
        Ok(peer.query(&client.certificate, self.now(), operation, &args)?)
    }

    fn registered_certificate(&self, asker: &str, subject: &str) -> Result<Certificate, NetError> {
        let bytes = self.query(asker, ehr::OP_GET_IDENTITY, vec![subject.as_bytes().to_vec()])?;
        Ok(Certificate::from_canonical(&bytes)?)
    }

    pub fn register(&mut self, subject: &str) -> Result<Committed, NetError> {
        let cert = self.identity(subject)?.certificate.clone();
        let op = match cert.role {
            Role::Hospital => ehr::OP_REGISTER_HOSPITAL,
            Role::Patient => ehr::OP_REGISTER_PATIENT,
            _ => ehr::OP_REGISTER_PARTICIPANT,
        };
        self.invoke(subject, op, vec![cert.to_canonical()])
    }

    /// Hospital-side upload: fresh record key, sealed bundle into the CAS,
    /// record key wrapped for the patient, CID signed and recorded on chain.
    pub fn upload(
        &mut self,
        hospital: &str,
        patient: &str,
        plaintext: &[u8],
        metadata: &str,
    ) -> Result<Uploaded, NetError> {
        let provider = self.identity(hospital)?.clone();
        let patient_cert = match self.registered_certificate(hospital, patient) {
            Ok(c) => c,
            Err(NetError::Chaincode(_)) => self.identity(patient)?.certificate.clone(),
            Err(e) => return Err(e),
        };
        let key = envelope::generate_record_key(&mut self.rng);
        let bundle = envelope::seal(&mut self.rng, plaintext, &key, &provider.signing, hospital)?;
        let cid = self.cas.put(&bundle.to_canonical())?;
        let wrapped = envelope::wrap_key(&mut self.rng, &key, &patient_cert.encryption_public_key)?;
        let provider_signature = provider.sign(cid.digest());
        self.sensitive.push(key.0.to_vec());
        self.sensitive.push(plaintext.to_vec());
        let commit = self.invoke(
            hospital,
            ehr::OP_UPLOAD_RECORD,
            ehr::upload_args(patient, hospital, &cid, &wrapped, &provider_signature, metadata),
        )?;
        let record_id = String::from_utf8(commit.payload.clone())
            .map_err(|_| NetError::Payload(DecodeError::Invalid("record id")))?;
        Ok(Uploaded { record_id, cid, commit })
    }

    /// Owner-side grant: recovers the record key from the owner's own
    /// wrapped copy (local query), re-wraps it for the grantee and submits
    /// the grant with payment.
    pub fn grant(
        &mut self,
        owner: &str,
        record_id: &str,
        grantee: &str,
        price: u64,
        expires_at: u64,
    ) -> Result<Committed, NetError> {
        let owner_id = self.identity(owner)?.clone();
        let lookup = self.query(owner, ehr::OP_GET_RECORD, vec![record_id.as_bytes().to_vec()]);
        let wrapped = match lookup {
            Ok(bytes) => {
                let material = RecordMaterial::from_canonical(&bytes)?;
                let key = envelope::unwrap_key(&material.wrapped_key, &owner_id.agreement)?;
                let grantee_cert = self.registered_certificate(owner, grantee).map_err(|e| match e {
                    NetError::Chaincode(_) => NetError::Chaincode(ChaincodeError::new(
                        "UnknownGrantee",
                        format!("{grantee} is not registered"),
                    )),
                    other => other,
                })?;
                envelope::wrap_key(&mut self.rng, &key, &grantee_cert.encryption_public_key)?
            }
            // Not the owner: there is no key to re-wrap. Submit anyway so the
            // chaincode rejects the proposal with NotOwner.
            Err(NetError::Chaincode(e)) if e.kind == "AccessDenied" => Vec::new(),
            Err(e) => return Err(e),
        };
        self.invoke(
            owner,
            ehr::OP_GRANT_ACCESS,
            ehr::grant_args(record_id, grantee, &wrapped, expires_at, price),
        )
    }

    /// Requests the record through a recorded transaction, then fetches the
    /// bundle from the CAS and decrypts it locally.
    pub fn fetch(&mut self, requester: &str, record_id: &str) -> Result<Fetch, NetError> {
        let requester_id = self.identity(requester)?.clone();
        let commit = self.invoke(requester, ehr::OP_GET_RECORD, vec![record_id.as_bytes().to_vec()])?;
        let material = RecordMaterial::from_canonical(&commit.payload)?;
        let provider = self.registered_certificate(requester, &material.provider_hospital_id)?;
        if !verify(
            &provider.signing_public_key,
            material.cid.digest(),
            &material.provider_signature,
        ) {
            return Err(EnvelopeError::ProvenanceFailure.into());
        }
        let fetched = self.cas.get_with_report(&material.cid)?;
        let key = envelope::unwrap_key(&material.wrapped_key, &requester_id.agreement)?;
        let plaintext = envelope::open_bytes(&fetched.content, &key, &provider.signing_public_key)?;
        Ok(Fetch {
            plaintext,
            served_by: fetched.served_by,
            corrupt_replicas: fetched.corrupt_replicas,
            commit,
        })
    }

    pub fn balance(&self, subject: &str) -> Result<u64, NetError> {
        let bytes = self.query(subject, ehr::OP_GET_BALANCE, vec![subject.as_bytes().to_vec()])?;
        let raw: [u8; 8] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| NetError::Payload(DecodeError::Invalid("balance")))?;
        Ok(u64::from_be_bytes(raw))
    }

    pub fn list_records(&self, asker: &str, patient: &str) -> Result<Vec<String>, NetError> {
        let bytes = self.query(asker, ehr::OP_LIST_RECORDS, vec![patient.as_bytes().to_vec()])?;
        Ok(ehr::decode_string_list(&bytes)?)
    }

    pub fn record(&self, record_id: &str) -> Option<ehr::RecordEntry> {
        self.ledger()
            .get_state(&ehr::record_key(record_id))
            .and_then(|(v, _)| ehr::RecordEntry::from_canonical(v).ok())
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.ledger().tip_hash()
    }

    pub fn state_hash(&self) -> Hash32 {
        self.ledger().world_state().state_hash()
    }

    /// Hash over every peer's tip, to compare runs.
    pub fn fingerprint(&self) -> Hash32 {
        let tips: Vec<u8> = self.peers.iter().flat_map(|p| p.ledger.tip_hash()).collect();
        crypto::sha256(&tips)
    }
}
