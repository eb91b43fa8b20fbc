//! Health-record sharing chaincode: registration, record upload, paid and
//! time-limited access grants, and authorized retrieval.
//!
//! World-state namespaces:
//!
//! | key                          | value            |
//! |------------------------------|------------------|
//! | `hospital/<id>`              | `Certificate`    |
//! | `patient/<id>`               | `Certificate`    |
//! | `participant/<id>`           | `Certificate` (practitioners, researchers) |
//! | `account/<id>`               | `TokenAccount`   |
//! | `record/<record_id>`         | `RecordEntry`    |
//! | `grant/<record_id>/<id>`     | `AccessGrant`    |
//!
//! The argument encodings of every operation are listed in `docs/chaincode.md`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cas::Cid;
use crate::chaincode::{Chaincode, ChaincodeError, TxContext};
use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto;
use crate::identity::{msp_validate, verify, Certificate, Role};

pub const OP_REGISTER_HOSPITAL: &str = "register_hospital";
pub const OP_REGISTER_PATIENT: &str = "register_patient";
pub const OP_REGISTER_PARTICIPANT: &str = "register_participant";
pub const OP_UPLOAD_RECORD: &str = "upload_record";
pub const OP_GRANT_ACCESS: &str = "grant_access";
pub const OP_GET_RECORD: &str = "get_record";
pub const OP_GET_BALANCE: &str = "get_balance";
pub const OP_LIST_RECORDS: &str = "list_records";
pub const OP_GET_IDENTITY: &str = "get_identity";

/// `expires_at` value meaning the grant never expires.
pub const NEVER: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EhrError {
    #[error("{0} is already registered")]
    AlreadyRegistered(String),
    #[error("invalid identity: {0}")]
    InvalidIdentity(String),
    #[error("unknown patient {0}")]
    UnknownPatient(String),
    #[error("unknown hospital {0}")]
    UnknownHospital(String),
    #[error("provider signature does not verify over the CID")]
    BadProviderSignature,
    #[error("proposal creator {0} is not the providing hospital")]
    CreatorNotProvider(String),
    #[error("{0} does not own the record")]
    NotOwner(String),
    #[error("unknown grantee {0}")]
    UnknownGrantee(String),
    #[error("balance {balance} is below price {price}")]
    InsufficientTokens { balance: u64, price: u64 },
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("access denied for {0}")]
    AccessDenied(String),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("expiry {expires_at} is not after now ({now})")]
    InvalidExpiry { expires_at: u64, now: u64 },
    #[error("record {0} already exists")]
    RecordExists(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("unknown operation {0:?}")]
    UnknownOperation(String),
}

impl EhrError {
    pub fn name(&self) -> &'static str {
        match self {
            EhrError::AlreadyRegistered(_) => "AlreadyRegistered",
            EhrError::InvalidIdentity(_) => "InvalidIdentity",
            EhrError::UnknownPatient(_) => "UnknownPatient",
            EhrError::UnknownHospital(_) => "UnknownHospital",
            EhrError::BadProviderSignature => "BadProviderSignature",
            EhrError::CreatorNotProvider(_) => "CreatorNotProvider",
            EhrError::NotOwner(_) => "NotOwner",
            EhrError::UnknownGrantee(_) => "UnknownGrantee",
            EhrError::InsufficientTokens { .. } => "InsufficientTokens",
            EhrError::UnknownRecord(_) => "UnknownRecord",
            EhrError::AccessDenied(_) => "AccessDenied",
            EhrError::UnknownAccount(_) => "UnknownAccount",
            EhrError::InvalidExpiry { .. } => "InvalidExpiry",
            EhrError::RecordExists(_) => "RecordExists",
            EhrError::BadArguments(_) => "BadArguments",
            EhrError::UnknownOperation(_) => "UnknownOperation",
        }
    }
}

impl From<EhrError> for ChaincodeError {
    fn from(e: EhrError) -> Self {
        ChaincodeError::new(e.name(), e.to_string())
    }
}

impl From<DecodeError> for EhrError {
    fn from(e: DecodeError) -> Self {
        EhrError::BadArguments(e.to_string())
    }
}

pub fn hospital_key(id: &str) -> String {
    format!("hospital/{id}")
}

pub fn patient_key(id: &str) -> String {
    format!("patient/{id}")
}

pub fn participant_key(id: &str) -> String {
    format!("participant/{id}")
}

pub fn account_key(id: &str) -> String {
    format!("account/{id}")
}

pub fn record_key(record_id: &str) -> String {
    format!("record/{record_id}")
}

pub fn grant_key(record_id: &str, grantee: &str) -> String {
    format!("grant/{record_id}/{grantee}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub record_id: String,
    pub owner_patient_id: String,
    pub provider_hospital_id: String,
    pub cid: Cid,
    /// Provider signature over the 32-byte CID digest.
    pub provider_signature: Vec<u8>,
    pub wrapped_keys: BTreeMap<String, Vec<u8>>,
    pub created_at: u64,
    pub metadata: String,
}

impl Canonical for RecordEntry {
    fn encode_into(&self, e: &mut Encoder) {
        e.str(&self.record_id)
            .str(&self.owner_patient_id)
            .str(&self.provider_hospital_id)
            .raw(self.cid.digest())
            .bytes(&self.provider_signature)
            .count(self.wrapped_keys.len());
        for (id, k) in &self.wrapped_keys {
            e.str(id).bytes(k);
        }
        e.u64(self.created_at).str(&self.metadata);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let record_id = d.string()?;
        let owner_patient_id = d.string()?;
        let provider_hospital_id = d.string()?;
        let cid = Cid(d.array()?);
        let provider_signature = d.bytes()?;
        let n = d.count(8)?;
        let mut wrapped_keys = BTreeMap::new();
        for _ in 0..n {
            let id = d.string()?;
            wrapped_keys.insert(id, d.bytes()?);
        }
        Ok(RecordEntry {
            record_id,
            owner_patient_id,
            provider_hospital_id,
            cid,
            provider_signature,
            wrapped_keys,
            created_at: d.u64()?,
            metadata: d.string()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessGrant {
    pub record_id: String,
    pub grantee_id: String,
    pub granted_at: u64,
    /// [`NEVER`] for an open-ended grant.
    pub expires_at: u64,
    pub price_paid: u64,
}

impl AccessGrant {
    pub fn is_live(&self, now: u64) -> bool {
        self.expires_at == NEVER || self.expires_at > now
    }
}

impl Canonical for AccessGrant {
    fn encode_into(&self, e: &mut Encoder) {
        e.str(&self.record_id)
            .str(&self.grantee_id)
            .u64(self.granted_at)
            .u64(self.expires_at)
            .u64(self.price_paid);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AccessGrant {
            record_id: d.string()?,
            grantee_id: d.string()?,
            granted_at: d.u64()?,
            expires_at: d.u64()?,
            price_paid: d.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAccount {
    pub subject_id: String,
    pub balance: u64,
    /// Tokens credited at registration; the channel-wide sum of these is the
    /// total supply.
    pub allocation: u64,
}

impl Canonical for TokenAccount {
    fn encode_into(&self, e: &mut Encoder) {
        e.str(&self.subject_id).u64(self.balance).u64(self.allocation);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(TokenAccount {
            subject_id: d.string()?,
            balance: d.u64()?,
            allocation: d.u64()?,
        })
    }
}

/// What `get_record` returns: everything needed to fetch and decrypt
/// off-chain, and nothing more.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMaterial {
    pub cid: Cid,
    pub wrapped_key: Vec<u8>,
    pub provider_hospital_id: String,
    pub provider_signature: Vec<u8>,
}

impl Canonical for RecordMaterial {
    fn encode_into(&self, e: &mut Encoder) {
        e.raw(self.cid.digest())
            .bytes(&self.wrapped_key)
            .str(&self.provider_hospital_id)
            .bytes(&self.provider_signature);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(RecordMaterial {
            cid: Cid(d.array()?),
            wrapped_key: d.bytes()?,
            provider_hospital_id: d.string()?,
            provider_signature: d.bytes()?,
        })
    }
}

/// hex(SHA-256(canonical(patient_id, hospital_id, cid, created_at)))
pub fn compute_record_id(patient_id: &str, hospital_id: &str, cid: &Cid, created_at: u64) -> String {
    let mut e = Encoder::new();
    e.str(patient_id).str(hospital_id).raw(cid.digest()).u64(created_at);
    hex::encode(crypto::sha256(&e.finish()))
}

// ---------------------------------------------------------------------------
// Argument encoding helpers shared with clients.

pub fn arg_u64(v: u64) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

pub fn encode_string_list(items: &[String]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.list(items, |e, s| {
        e.str(s);
    });
    e.finish()
}

pub fn decode_string_list(bytes: &[u8]) -> Result<Vec<String>, DecodeError> {
    let mut d = Decoder::new(bytes);
    let v = d.list(4, |d| d.string())?;
    d.finish()?;
    Ok(v)
}

pub fn upload_args(
    patient_id: &str,
    hospital_id: &str,
    cid: &Cid,
    wrapped_key_for_patient: &[u8],
    provider_signature: &[u8],
    metadata: &str,
) -> Vec<Vec<u8>> {
    vec![
        patient_id.as_bytes().to_vec(),
        hospital_id.as_bytes().to_vec(),
        cid.digest().to_vec(),
        wrapped_key_for_patient.to_vec(),
        provider_signature.to_vec(),
        metadata.as_bytes().to_vec(),
    ]
}

pub fn grant_args(record_id: &str, grantee_id: &str, wrapped_key: &[u8], expires_at: u64, price: u64) -> Vec<Vec<u8>> {
    vec![
        record_id.as_bytes().to_vec(),
        grantee_id.as_bytes().to_vec(),
        wrapped_key.to_vec(),
        arg_u64(expires_at),
        arg_u64(price),
    ]
}

struct Args<'a> {
    op: &'a str,
    args: &'a [Vec<u8>],
}

impl<'a> Args<'a> {
    fn expect(op: &'a str, args: &'a [Vec<u8>], n: usize) -> Result<Self, EhrError> {
        if args.len() != n {
            return Err(EhrError::BadArguments(format!(
                "{op} takes {n} arguments, got {}",
                args.len()
            )));
        }
        Ok(Self { op, args })
    }

    fn bytes(&self, i: usize) -> &'a [u8] {
        &self.args[i]
    }

    fn str(&self, i: usize) -> Result<&'a str, EhrError> {
        std::str::from_utf8(&self.args[i])
            .map_err(|_| EhrError::BadArguments(format!("{} argument {i} is not utf-8", self.op)))
    }

    fn u64(&self, i: usize) -> Result<u64, EhrError> {
        let raw: [u8; 8] = self.args[i]
            .as_slice()
            .try_into()
            .map_err(|_| EhrError::BadArguments(format!("{} argument {i} is not a u64", self.op)))?;
        Ok(u64::from_be_bytes(raw))
    }

    fn cid(&self, i: usize) -> Result<Cid, EhrError> {
        let raw: [u8; 32] = self.args[i]
            .as_slice()
            .try_into()
            .map_err(|_| EhrError::BadArguments(format!("{} argument {i} is not a CID digest", self.op)))?;
        Ok(Cid(raw))
    }
}

fn load<T: Canonical>(ctx: &mut TxContext<'_>, key: &str) -> Result<Option<T>, EhrError> {
    ctx.get(key)
        .map(|bytes| T::from_canonical(&bytes).map_err(EhrError::from))
        .transpose()
}

fn load_account(ctx: &mut TxContext<'_>, id: &str) -> Result<TokenAccount, EhrError> {
    load(ctx, &account_key(id))?.ok_or_else(|| EhrError::UnknownAccount(id.to_string()))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EhrChaincode;

impl Chaincode for EhrChaincode {
    fn invoke(&self, ctx: &mut TxContext<'_>, operation: &str, args: &[Vec<u8>]) -> Result<Vec<u8>, ChaincodeError> {
        dispatch(ctx, operation, args).map_err(ChaincodeError::from)
    }
}

fn dispatch(ctx: &mut TxContext<'_>, op: &str, args: &[Vec<u8>]) -> Result<Vec<u8>, EhrError> {
    match op {
        OP_REGISTER_HOSPITAL => register(ctx, Args::expect(op, args, 1)?, &[Role::Hospital]),
        OP_REGISTER_PATIENT => register(ctx, Args::expect(op, args, 1)?, &[Role::Patient]),
        OP_REGISTER_PARTICIPANT => register(ctx, Args::expect(op, args, 1)?, &[Role::Practitioner, Role::Researcher]),
        OP_UPLOAD_RECORD => {
            let a = Args::expect(op, args, 6)?;
            upload_record(ctx, a.str(0)?, a.str(1)?, a.cid(2)?, a.bytes(3), a.bytes(4), a.str(5)?)
                .map(String::into_bytes)
        }
        OP_GRANT_ACCESS => {
            let a = Args::expect(op, args, 5)?;
            grant_access(ctx, a.str(0)?, a.str(1)?, a.bytes(2), a.u64(3)?, a.u64(4)?).map(|g| g.to_canonical())
        }
        OP_GET_RECORD => {
            let a = Args::expect(op, args, 1)?;
            let requester = ctx.creator().subject_id.clone();
            let now = ctx.now();
            get_record(ctx, a.str(0)?, &requester, now).map(|m| m.to_canonical())
        }
        OP_GET_BALANCE => {
            let a = Args::expect(op, args, 1)?;
            get_balance(ctx, a.str(0)?).map(arg_u64)
        }
        OP_LIST_RECORDS => {
            let a = Args::expect(op, args, 1)?;
            Ok(encode_string_list(&list_records(ctx, a.str(0)?)?))
        }
        OP_GET_IDENTITY => {
            let a = Args::expect(op, args, 1)?;
            get_identity(ctx, a.str(0)?).map(|c| c.to_canonical())
        }
        other => Err(EhrError::UnknownOperation(other.to_string())),
    }
}

/// Self-registration: the certificate argument must be the proposal
/// creator's own, issued by a trusted CA, with one of the allowed roles.
fn register(ctx: &mut TxContext<'_>, a: Args<'_>, roles: &[Role]) -> Result<Vec<u8>, EhrError> {
    let cert = Certificate::from_canonical(a.bytes(0))?;
    let id = cert.subject_id.clone();
    let trusted = &ctx.channel().trusted_ca_keys;
    if !roles.iter().any(|r| msp_validate(&cert, *r, trusted)) {
        return Err(EhrError::InvalidIdentity(format!(
            "{id} ({}) cannot register here",
            cert.role
        )));
    }
    if &cert != ctx.creator() {
        return Err(EhrError::InvalidIdentity(format!("{id} must register itself")));
    }
    let entity_key = match cert.role {
        Role::Hospital => hospital_key(&id),
        Role::Patient => patient_key(&id),
        _ => participant_key(&id),
    };
    if ctx.exists(&entity_key) || ctx.exists(&account_key(&id)) {
        return Err(EhrError::AlreadyRegistered(id));
    }
    let allocation = ctx.channel().tokens.allocation_for(cert.role);
    ctx.put(entity_key, cert.to_canonical());
    ctx.put(
        account_key(&id),
        TokenAccount {
            subject_id: id.clone(),
            balance: allocation,
            allocation,
        }
        .to_canonical(),
    );
    Ok(id.into_bytes())
}

pub fn upload_record(
    ctx: &mut TxContext<'_>,
    patient_id: &str,
    hospital_id: &str,
    cid: Cid,
    wrapped_key_for_patient: &[u8],
    provider_signature: &[u8],
    metadata: &str,
) -> Result<String, EhrError> {
    let creator = ctx.creator();
    if creator.subject_id != hospital_id || creator.role != Role::Hospital {
        return Err(EhrError::CreatorNotProvider(creator.subject_id.clone()));
    }
    if !ctx.exists(&patient_key(patient_id)) {
        return Err(EhrError::UnknownPatient(patient_id.to_string()));
    }
    let hospital: Certificate =
        load(ctx, &hospital_key(hospital_id))?.ok_or_else(|| EhrError::UnknownHospital(hospital_id.to_string()))?;
    if !verify(&hospital.signing_public_key, cid.digest(), provider_signature) {
        return Err(EhrError::BadProviderSignature);
    }
    let created_at = ctx.now();
    let record_id = compute_record_id(patient_id, hospital_id, &cid, created_at);
    let key = record_key(&record_id);
    if ctx.exists(&key) {
        return Err(EhrError::RecordExists(record_id));
    }
    let entry = RecordEntry {
        record_id: record_id.clone(),
        owner_patient_id: patient_id.to_string(),
        provider_hospital_id: hospital_id.to_string(),
        cid,
        provider_signature: provider_signature.to_vec(),
        wrapped_keys: BTreeMap::from([(patient_id.to_string(), wrapped_key_for_patient.to_vec())]),
        created_at,
        metadata: metadata.to_string(),
    };
    ctx.put(key, entry.to_canonical());
    Ok(record_id)
}

/// Adds the grantee's wrapped key, records the grant and moves `price`
/// tokens from grantee to owner, all in one write set.
pub fn grant_access(
    ctx: &mut TxContext<'_>,
    record_id: &str,
    grantee_id: &str,
    wrapped_key: &[u8],
    expires_at: u64,
    price: u64,
) -> Result<AccessGrant, EhrError> {
    let mut record: RecordEntry =
        load(ctx, &record_key(record_id))?.ok_or_else(|| EhrError::UnknownRecord(record_id.to_string()))?;
    let creator = ctx.creator().subject_id.clone();
    if creator != record.owner_patient_id {
        return Err(EhrError::NotOwner(creator));
    }
    let registered = ctx.exists(&participant_key(grantee_id)) || ctx.exists(&hospital_key(grantee_id));
    if !registered {
        return Err(EhrError::UnknownGrantee(grantee_id.to_string()));
    }
    let now = ctx.now();
    if expires_at != NEVER && expires_at <= now {
        return Err(EhrError::InvalidExpiry { expires_at, now });
    }
    let mut payer = load_account(ctx, grantee_id)?;
    let mut payee = load_account(ctx, &record.owner_patient_id)?;
    payer.balance = payer.balance.checked_sub(price).ok_or(EhrError::InsufficientTokens {
        balance: payer.balance,
        price,
    })?;
    payee.balance = payee
        .balance
        .checked_add(price)
        .ok_or_else(|| EhrError::BadArguments("balance overflow".into()))?;

    record.wrapped_keys.insert(grantee_id.to_string(), wrapped_key.to_vec());
    let grant = AccessGrant {
        record_id: record_id.to_string(),
        grantee_id: grantee_id.to_string(),
        granted_at: now,
        expires_at,
        price_paid: price,
    };
    ctx.put(record_key(record_id), record.to_canonical());
    ctx.put(grant_key(record_id, grantee_id), grant.to_canonical());
    ctx.put(account_key(grantee_id), payer.to_canonical());
    ctx.put(account_key(&payee.subject_id), payee.to_canonical());
    Ok(grant)
}

/// Owner, or holder of a grant with `expires_at` = NEVER or > `now`.
pub fn get_record(
    ctx: &mut TxContext<'_>,
    record_id: &str,
    requester_id: &str,
    now: u64,
) -> Result<RecordMaterial, EhrError> {
    let record: RecordEntry =
        load(ctx, &record_key(record_id))?.ok_or_else(|| EhrError::UnknownRecord(record_id.to_string()))?;
    let denied = || EhrError::AccessDenied(requester_id.to_string());
    if requester_id != record.owner_patient_id {
        let grant: AccessGrant = load(ctx, &grant_key(record_id, requester_id))?.ok_or_else(denied)?;
        if !grant.is_live(now) {
            return Err(denied());
        }
    }
    let wrapped_key = record.wrapped_keys.get(requester_id).cloned().ok_or_else(denied)?;
    Ok(RecordMaterial {
        cid: record.cid,
        wrapped_key,
        provider_hospital_id: record.provider_hospital_id,
        provider_signature: record.provider_signature,
    })
}

pub fn get_balance(ctx: &mut TxContext<'_>, subject_id: &str) -> Result<u64, EhrError> {
    load_account(ctx, subject_id).map(|a| a.balance)
}

pub fn list_records(ctx: &mut TxContext<'_>, patient_id: &str) -> Result<Vec<String>, EhrError> {
    let mut out = Vec::new();
    for (_, bytes) in ctx.range("record/") {
        let r = RecordEntry::from_canonical(&bytes)?;
        if r.owner_patient_id == patient_id {
            out.push(r.record_id);
        }
    }
    Ok(out)
}

pub fn get_identity(ctx: &mut TxContext<'_>, subject_id: &str) -> Result<Certificate, EhrError> {
    for key in [
        hospital_key(subject_id),
        patient_key(subject_id),
        participant_key(subject_id),
    ] {
        if let Some(cert) = load::<Certificate>(ctx, &key)? {
            return Ok(cert);
        }
    }
    Err(EhrError::InvalidIdentity(format!("{subject_id} is not registered")))
}

/// (sum of balances, sum of allocations) over every `account/` entry.
/// Conservation holds when the two are equal.
pub fn token_totals(state: &crate::ledger::WorldState) -> Result<(u128, u128), DecodeError> {
    let mut balances = 0u128;
    let mut allocations = 0u128;
    for (_, bytes, _) in state.range_prefix("account/") {
        let a = TokenAccount::from_canonical(bytes)?;
        balances += a.balance as u128;
        allocations += a.allocation as u128;
    }
    Ok((balances, allocations))
}

pub fn balances(state: &crate::ledger::WorldState) -> Vec<(String, u64)> {
    state
        .range_prefix("account/")
        .filter_map(|(_, bytes, _)| TokenAccount::from_canonical(bytes).ok())
        .map(|a| (a.subject_id, a.balance))
        .collect()
}
