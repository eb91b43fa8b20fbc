//! Certification authority, enrollment and membership validation.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("subject {0:?} is already enrolled with this CA")]
    DuplicateSubject(String),
    #[error("operation requires a {expected:?} key, got {actual:?}")]
    WrongScheme { expected: KeyScheme, actual: KeyScheme },
}

impl IdentityError {
    pub fn name(&self) -> &'static str {
        match self {
            IdentityError::DuplicateSubject(_) => "DuplicateSubject",
            IdentityError::WrongScheme { .. } => "WrongScheme",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyScheme {
    Signing,
    KeyAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Hospital,
    Patient,
    Practitioner,
    Researcher,
    Orderer,
    Peer,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Hospital,
        Role::Patient,
        Role::Practitioner,
        Role::Researcher,
        Role::Orderer,
        Role::Peer,
    ];

    pub fn code(self) -> u8 {
        match self {
            Role::Hospital => 0,
            Role::Patient => 1,
            Role::Practitioner => 2,
            Role::Researcher => 3,
            Role::Orderer => 4,
            Role::Peer => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Hospital => "HOSPITAL",
            Role::Patient => "PATIENT",
            Role::Practitioner => "PRACTITIONER",
            Role::Researcher => "RESEARCHER",
            Role::Orderer => "ORDERER",
            Role::Peer => "PEER",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

/// A key pair. The private half never leaves the holder's wallet: it has no
/// canonical encoding and is redacted from `Debug`.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub public_key: Vec<u8>,
    private_key: [u8; 32],
    pub scheme: KeyScheme,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &hex::encode(&self.public_key))
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate(rng: &mut SimRng, scheme: KeyScheme) -> Self {
        Self::from_secret(rng.array(), scheme)
    }

    pub fn from_secret(secret: [u8; 32], scheme: KeyScheme) -> Self {
        let public_key = match scheme {
            KeyScheme::Signing => crypto::signing_public(&secret),
            KeyScheme::KeyAgreement => crypto::agreement_public(&secret),
        };
        Self {
            public_key: public_key.to_vec(),
            private_key: secret,
            scheme,
        }
    }

    pub fn private_key(&self) -> &[u8; 32] {
        &self.private_key
    }

    pub(crate) fn require(&self, scheme: KeyScheme) -> Result<&[u8; 32], IdentityError> {
        if self.scheme == scheme {
            Ok(&self.private_key)
        } else {
            Err(IdentityError::WrongScheme {
                expected: scheme,
                actual: self.scheme,
            })
        }
    }
}

/// Deterministic signature over `message`.
pub fn sign(key: &KeyPair, message: &[u8]) -> Result<Vec<u8>, IdentityError> {
    let secret = key.require(KeyScheme::Signing)?;
    Ok(crypto::sign_with_seed(secret, message))
}

pub fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    crypto::verify_signature(public_key, message, signature)
}

/// Simplified enrollment certificate; the CA signs the canonical encoding of
/// every field except `ca_signature`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub subject_id: String,
    pub organization: String,
    pub role: Role,
    pub signing_public_key: Vec<u8>,
    pub encryption_public_key: Vec<u8>,
    pub issued_at: u64,
    pub ca_signature: Vec<u8>,
}

impl Certificate {
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode_body(&mut e);
        e.finish()
    }

    fn encode_body(&self, e: &mut Encoder) {
        e.str(&self.subject_id)
            .str(&self.organization)
            .u8(self.role.code())
            .bytes(&self.signing_public_key)
            .bytes(&self.encryption_public_key)
            .u64(self.issued_at);
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_canonical())
    }

    pub fn from_hex(text: &str) -> Result<Self, DecodeError> {
        let raw = hex::decode(text.trim()).map_err(|_| DecodeError::Invalid("certificate hex"))?;
        Self::from_canonical(&raw)
    }

    /// Short stable fingerprint for display.
    pub fn fingerprint(&self) -> String {
        hex::encode(&crypto::sha256(&self.to_canonical())[..8])
    }
}

impl Canonical for Certificate {
    fn encode_into(&self, e: &mut Encoder) {
        self.encode_body(e);
        e.bytes(&self.ca_signature);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let subject_id = d.string()?;
        let organization = d.string()?;
        let code = d.u8()?;
        let role = Role::from_code(code).ok_or(DecodeError::BadTag {
            what: "role",
            value: code,
        })?;
        Ok(Certificate {
            subject_id,
            organization,
            role,
            signing_public_key: d.bytes()?,
            encryption_public_key: d.bytes()?,
            issued_at: d.u64()?,
            ca_signature: d.bytes()?,
        })
    }
}

pub fn verify_certificate(cert: &Certificate, ca_public_key: &[u8]) -> bool {
    verify(ca_public_key, &cert.body_bytes(), &cert.ca_signature)
}

/// Membership check: issued by a trusted CA and holding the required role.
pub fn msp_validate(cert: &Certificate, required_role: Role, trusted_cas: &[Vec<u8>]) -> bool {
    cert.role == required_role && is_trusted(cert, trusted_cas)
}

pub fn is_trusted(cert: &Certificate, trusted_cas: &[Vec<u8>]) -> bool {
    trusted_cas.iter().any(|ca| verify_certificate(cert, ca))
}

/// A freshly enrolled subject: certificate plus both private key pairs.
#[derive(Debug, Clone)]
pub struct Identity {
    pub certificate: Certificate,
    pub signing: KeyPair,
    pub agreement: KeyPair,
}

impl Identity {
    pub fn subject_id(&self) -> &str {
        &self.certificate.subject_id
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        crypto::sign_with_seed(self.signing.private_key(), message)
    }
}

#[derive(Debug, Clone)]
pub struct CertAuthority {
    pub ca_id: String,
    keypair: KeyPair,
    issued: BTreeMap<String, Certificate>,
}

impl CertAuthority {
    pub fn new(ca_id: impl Into<String>, rng: &mut SimRng) -> Self {
        Self {
            ca_id: ca_id.into(),
            keypair: KeyPair::generate(rng, KeyScheme::Signing),
            issued: BTreeMap::new(),
        }
    }

    pub fn public_key(&self) -> &[u8] {
        &self.keypair.public_key
    }

    pub fn issued(&self) -> &BTreeMap<String, Certificate> {
        &self.issued
    }

    /// Generates fresh signing and key-agreement pairs for `subject_id` and
    /// issues a certificate binding them.
    pub fn enroll(
        &mut self,
        rng: &mut SimRng,
        issued_at: u64,
        subject_id: &str,
        organization: &str,
        role: Role,
    ) -> Result<Identity, IdentityError> {
        if self.issued.contains_key(subject_id) {
            return Err(IdentityError::DuplicateSubject(subject_id.to_string()));
        }
        let signing = KeyPair::generate(rng, KeyScheme::Signing);
        let agreement = KeyPair::generate(rng, KeyScheme::KeyAgreement);
        let mut certificate = Certificate {
            subject_id: subject_id.to_string(),
            organization: organization.to_string(),
            role,
            signing_public_key: signing.public_key.clone(),
            encryption_public_key: agreement.public_key.clone(),
            issued_at,
            ca_signature: Vec::new(),
        };
        certificate.ca_signature = sign(&self.keypair, &certificate.body_bytes())?;
        self.issued.insert(subject_id.to_string(), certificate.clone());
        Ok(Identity {
            certificate,
            signing,
            agreement,
        })
    }
}
