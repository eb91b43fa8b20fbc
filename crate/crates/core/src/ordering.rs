//! Execute-order-validate pipeline: endorsers simulate a signed proposal,
//! the client assembles matching endorsements into a transaction, a solo
//! orderer batches transactions into signed blocks, and every committing peer
//! receives each block.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::chaincode::{simulate, Chaincode, ChaincodeError, Response};
use crate::channel::ChannelConfig;
use crate::codec::{Canonical, Encoder};
use crate::crypto::Hash32;
use crate::identity::{verify, Certificate, Identity};
use crate::ledger::{
    data_hash, endorsement_message, header_hash, header_signing_message, Block, CommitReport, EndorsementSig,
    LedgerError, PeerLedger, ReadEntry, Transaction, Validity, WriteEntry,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingError {
    #[error("proposal signature or creator certificate is invalid")]
    BadSignature,
    #[error("proposal is for channel {got:?}, endorser serves {expected:?}")]
    WrongChannel { expected: String, got: String },
    #[error("endorser {0} is not eligible under the endorsement policy")]
    NotEligible(String),
    #[error("endorsement policy needs {need} organizations, got {have}")]
    PolicyUnsatisfied { have: usize, need: usize },
    #[error("endorsers returned different read/write sets or responses")]
    NondeterministicEndorsement,
    #[error("chaincode rejected the proposal: {0}")]
    Rejected(ChaincodeError),
    #[error("malformed transaction: {0}")]
    MalformedTransaction(String),
}

impl OrderingError {
    pub fn name(&self) -> &str {
        match self {
            OrderingError::BadSignature => "BadSignature",
            OrderingError::WrongChannel { .. } => "WrongChannel",
            OrderingError::NotEligible(_) => "NotEligible",
            OrderingError::PolicyUnsatisfied { .. } => "PolicyUnsatisfied",
            OrderingError::NondeterministicEndorsement => "NondeterministicEndorsement",
            OrderingError::Rejected(e) => &e.kind,
            OrderingError::MalformedTransaction(_) => "MalformedTransaction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub channel_id: String,
    pub creator: Certificate,
    pub operation: String,
    pub args: Vec<Vec<u8>>,
    /// Client-chosen; makes otherwise identical proposals distinct transactions.
    pub nonce: [u8; 16],
    pub client_signature: Vec<u8>,
}

impl Proposal {
    /// Canonical (channel_id, operation, args, nonce): the bytes the client signs.
    pub fn signing_message(channel_id: &str, operation: &str, args: &[Vec<u8>], nonce: &[u8; 16]) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(channel_id).str(operation).list(args, |e, a| {
            e.bytes(a);
        });
        e.raw(nonce);
        e.finish()
    }

    pub fn new_signed(
        client: &Identity,
        channel_id: &str,
        operation: &str,
        args: Vec<Vec<u8>>,
        nonce: [u8; 16],
    ) -> Self {
        let client_signature = client.sign(&Self::signing_message(channel_id, operation, &args, &nonce));
        Self {
            channel_id: channel_id.to_string(),
            creator: client.certificate.clone(),
            operation: operation.to_string(),
            args,
            nonce,
            client_signature,
        }
    }

    pub fn signature_valid(&self) -> bool {
        verify(
            &self.creator.signing_public_key,
            &Self::signing_message(&self.channel_id, &self.operation, &self.args, &self.nonce),
            &self.client_signature,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub endorser_subject_id: String,
    pub read_set: Vec<ReadEntry>,
    pub write_set: Vec<WriteEntry>,
    /// Canonical [`Response`].
    pub response_payload: Vec<u8>,
    pub signature: Vec<u8>,
}

impl Endorsement {
    pub fn response(&self) -> Option<Response> {
        Response::from_canonical(&self.response_payload).ok()
    }

    fn same_result(&self, other: &Endorsement) -> bool {
        self.read_set == other.read_set
            && self.write_set == other.write_set
            && self.response_payload == other.response_payload
    }
}

/// A peer that both endorses (simulates chaincode) and commits blocks.
#[derive(Clone)]
pub struct Peer {
    pub identity: Identity,
    pub ledger: PeerLedger,
    chaincode: Arc<dyn Chaincode>,
}

impl std::fmt::Debug for Peer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Peer")
            .field("id", &self.identity.subject_id())
            .field("height", &self.ledger.height())
            .finish()
    }
}

impl AsMut<PeerLedger> for Peer {
    fn as_mut(&mut self) -> &mut PeerLedger {
        &mut self.ledger
    }
}

impl AsMut<PeerLedger> for PeerLedger {
    fn as_mut(&mut self) -> &mut PeerLedger {
        self
    }
}

impl Peer {
    pub fn new(identity: Identity, config: Arc<ChannelConfig>, chaincode: Arc<dyn Chaincode>) -> Self {
        let ledger = PeerLedger::new(identity.subject_id(), config);
        Self {
            identity,
            ledger,
            chaincode,
        }
    }

    pub fn id(&self) -> &str {
        self.identity.subject_id()
    }

    pub fn organization(&self) -> &str {
        &self.identity.certificate.organization
    }

    pub fn config(&self) -> &Arc<ChannelConfig> {
        self.ledger.config()
    }

    /// Simulates the proposal against this peer's committed world state and
    /// signs the result. Nothing is written. A chaincode failure still yields
    /// a signed endorsement whose response is a rejection and whose
    /// read/write sets are empty.
    pub fn endorse(&self, proposal: &Proposal, now: u64) -> Result<Endorsement, OrderingError> {
        let config = self.config();
        if proposal.channel_id != config.channel_id {
            return Err(OrderingError::WrongChannel {
                expected: config.channel_id.clone(),
                got: proposal.channel_id.clone(),
            });
        }
        if !proposal.signature_valid() || !config.is_trusted(&proposal.creator) {
            return Err(OrderingError::BadSignature);
        }
        if !config.endorsement_policy.is_eligible(self.organization()) {
            return Err(OrderingError::NotEligible(self.id().to_string()));
        }
        let sim = simulate(
            self.chaincode.as_ref(),
            self.ledger.world_state(),
            &proposal.creator,
            config,
            now,
            &proposal.operation,
            &proposal.args,
        );
        let response_payload = sim.response.to_canonical();
        let signature = self
            .identity
            .sign(&endorsement_message(&sim.read_set, &sim.write_set, &response_payload));
        Ok(Endorsement {
            endorser_subject_id: self.id().to_string(),
            read_set: sim.read_set,
            write_set: sim.write_set,
            response_payload,
            signature,
        })
    }

    /// Runs a read-only query locally: no endorsement, no ordering, no trace
    /// on the ledger.
    pub fn query(
        &self,
        creator: &Certificate,
        now: u64,
        operation: &str,
        args: &[Vec<u8>],
    ) -> Result<Vec<u8>, ChaincodeError> {
        simulate(
            self.chaincode.as_ref(),
            self.ledger.world_state(),
            creator,
            self.config(),
            now,
            operation,
            args,
        )
        .response
        .into_result()
    }
}

/// Checks the endorsements against each other and the policy, then builds
/// and signs the transaction on behalf of `client`.
pub fn assemble_transaction(
    proposal: &Proposal,
    endorsements: &[Endorsement],
    config: &ChannelConfig,
    client: &Identity,
) -> Result<Transaction, OrderingError> {
    if client.certificate != proposal.creator || !proposal.signature_valid() {
        return Err(OrderingError::BadSignature);
    }
    let Some(first) = endorsements.first() else {
        return Err(OrderingError::PolicyUnsatisfied {
            have: 0,
            need: config.endorsement_policy.required as usize,
        });
    };
    if endorsements.iter().any(|e| !e.same_result(first)) {
        return Err(OrderingError::NondeterministicEndorsement);
    }
    match first.response() {
        Some(Response::Ok(_)) => {}
        Some(Response::Reject { kind, detail }) => {
            return Err(OrderingError::Rejected(ChaincodeError { kind, detail }))
        }
        None => return Err(OrderingError::MalformedTransaction("undecodable response".into())),
    }

    let msg = endorsement_message(&first.read_set, &first.write_set, &first.response_payload);
    let mut orgs = BTreeSet::new();
    let mut sigs = Vec::new();
    for e in endorsements {
        let Some(cert) = config.peer_certs.get(&e.endorser_subject_id) else {
            continue;
        };
        if !config.endorsement_policy.is_eligible(&cert.organization)
            || !verify(&cert.signing_public_key, &msg, &e.signature)
            || !orgs.insert(cert.organization.clone())
        {
            continue;
        }
        sigs.push(EndorsementSig {
            endorser_subject_id: e.endorser_subject_id.clone(),
            signature: e.signature.clone(),
        });
    }
    let need = config.endorsement_policy.required as usize;
    if orgs.len() < need {
        return Err(OrderingError::PolicyUnsatisfied { have: orgs.len(), need });
    }

    let mut tx = Transaction {
        tx_id: [0; 32],
        channel_id: proposal.channel_id.clone(),
        creator: proposal.creator.clone(),
        operation: proposal.operation.clone(),
        args: proposal.args.clone(),
        nonce: proposal.nonce,
        read_set: first.read_set.clone(),
        write_set: first.write_set.clone(),
        response: first.response_payload.clone(),
        endorsements: sigs,
        client_signature: Vec::new(),
        validity: Validity::Pending,
    };
    tx.tx_id = tx.compute_id();
    tx.client_signature = client.sign(&tx.tx_id);
    Ok(tx)
}

/// Single trusted orderer. Cuts a block as soon as `max_block_txs`
/// transactions are pending, or on the tick at which the oldest pending
/// transaction has waited `block_timeout_ticks`.
#[derive(Debug, Clone)]
pub struct SoloOrderer {
    pub orderer_id: String,
    identity: Identity,
    max_block_txs: usize,
    block_timeout_ticks: u64,
    pending: VecDeque<(Transaction, u64)>,
    ready: Vec<Block>,
    next_height: u64,
    tip_hash: Hash32,
    clock: u64,
    seen: HashSet<Hash32>,
}

impl SoloOrderer {
    pub fn new(identity: Identity, config: &ChannelConfig) -> Self {
        let genesis = Block::genesis();
        Self {
            orderer_id: identity.subject_id().to_string(),
            identity,
            max_block_txs: config.max_block_txs as usize,
            block_timeout_ticks: config.block_timeout_ticks,
            pending: VecDeque::new(),
            ready: Vec::new(),
            next_height: 1,
            tip_hash: genesis.hash(),
            clock: 0,
            seen: HashSet::new(),
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.tip_hash
    }

    /// Enqueues a transaction whose id matches its content and has not been
    /// ordered before.
    pub fn submit(&mut self, tx: Transaction) -> Result<(), OrderingError> {
        if tx.compute_id() != tx.tx_id {
            return Err(OrderingError::MalformedTransaction(
                "tx_id does not match content".into(),
            ));
        }
        if !self.seen.insert(tx.tx_id) {
            return Err(OrderingError::MalformedTransaction(format!(
                "duplicate tx_id {}",
                hex::encode(tx.tx_id)
            )));
        }
        let mut tx = tx;
        tx.validity = Validity::Pending;
        self.pending.push_back((tx, self.clock));
        if self.pending.len() >= self.max_block_txs {
            self.cut();
        }
        Ok(())
    }

    /// Advances the clock by one and returns every block cut since the last
    /// tick, in height order.
    pub fn tick(&mut self) -> Vec<Block> {
        self.clock += 1;
        if let Some((_, since)) = self.pending.front() {
            if self.clock - since >= self.block_timeout_ticks {
                self.cut();
            }
        }
        std::mem::take(&mut self.ready)
    }

    fn cut(&mut self) {
        let n = self.pending.len().min(self.max_block_txs);
        if n == 0 {
            return;
        }
        let transactions: Vec<Transaction> = self.pending.drain(..n).map(|(tx, _)| tx).collect();
        let height = self.next_height;
        let data_hash = data_hash(&transactions);
        let orderer_signature =
            self.identity
                .sign(&header_signing_message(height, &self.tip_hash, &data_hash, self.clock));
        let validity_flags = vec![Validity::Pending; transactions.len()];
        let block = Block {
            height,
            prev_hash: self.tip_hash,
            data_hash,
            timestamp: self.clock,
            orderer_signature,
            transactions,
            validity_flags,
        };
        self.tip_hash = header_hash(height, &block.prev_hash, &block.data_hash);
        self.next_height += 1;
        self.ready.push(block);
    }
}

/// Hands `block` to every peer in list order, or concurrently when
/// `parallel` is set. Reports come back in peer order either way.
pub fn deliver<L>(block: &Block, peers: &mut [L], parallel: bool) -> Vec<Result<CommitReport, LedgerError>>
where
    L: AsMut<PeerLedger> + Send,
{
    if !parallel || peers.len() < 2 {
        return peers
            .iter_mut()
            .map(|p| p.as_mut().append_block(block.clone()))
            .collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = peers
            .iter_mut()
            .map(|p| s.spawn(move || p.as_mut().append_block(block.clone())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("peer commit thread panicked"))
            .collect()
    })
}

/// The common report if every successful commit produced the same one.
pub fn agreed_report(reports: &[Result<CommitReport, LedgerError>]) -> Option<&CommitReport> {
    let mut ok = reports.iter().filter_map(|r| r.as_ref().ok());
    let first = ok.next()?;
    ok.all(|r| r == first).then_some(first)
}
