//! Record encryption: a fresh symmetric key per record, AES-256-GCM over the
//! file, a provider signature for provenance, and per-recipient key wrapping.
//!
//! Wrapped key layout (92 bytes):
//!
//! ```text
//! ephemeral X25519 public key (32) ‖ nonce (12) ‖ AES-GCM(record key) (32 + 16)
//! ```
//!
//! The wrapping key is HKDF-SHA256 over the shared secret, bound to both
//! public keys.

use std::fmt;

use thiserror::Error;

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};
use crate::crypto::{self, NONCE_LEN, TAG_LEN};
use crate::identity::{self, KeyPair, KeyScheme};
use crate::rng::SimRng;

pub const BUNDLE_VERSION: u8 = 1;
pub const WRAPPED_KEY_LEN: usize = 32 + NONCE_LEN + 32 + TAG_LEN;
const WRAP_INFO: &[u8] = b"medledger key wrap v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("provider signature does not verify")]
    ProvenanceFailure,
    #[error("decryption failed: wrong key or corrupt ciphertext")]
    DecryptFailure,
    #[error("key unwrap failed")]
    UnwrapFailure,
    #[error("malformed bundle: {0}")]
    Malformed(DecodeError),
    #[error(transparent)]
    Identity(#[from] identity::IdentityError),
}

impl EnvelopeError {
    pub fn name(&self) -> &'static str {
        match self {
            EnvelopeError::ProvenanceFailure => "ProvenanceFailure",
            EnvelopeError::DecryptFailure => "DecryptFailure",
            EnvelopeError::UnwrapFailure => "UnwrapFailure",
            EnvelopeError::Malformed(_) => "MalformedBundle",
            EnvelopeError::Identity(e) => e.name(),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RecordKey(pub [u8; 32]);

impl fmt::Debug for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RecordKey(..)")
    }
}

impl RecordKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

pub fn generate_record_key(rng: &mut SimRng) -> RecordKey {
    RecordKey(rng.array())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub version: u8,
    pub provider_id: String,
    pub ciphertext: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
    pub auth_tag: [u8; TAG_LEN],
    pub provider_signature: Vec<u8>,
}

impl Bundle {
    /// SHA-256(provider_id ‖ nonce ‖ ciphertext ‖ auth_tag), the message the
    /// provider signs.
    pub fn provenance_digest(&self) -> [u8; 32] {
        crypto::sha256_parts(&[
            self.provider_id.as_bytes(),
            &self.nonce,
            &self.ciphertext,
            &self.auth_tag,
        ])
    }
}

impl Canonical for Bundle {
    fn encode_into(&self, e: &mut Encoder) {
        e.u8(self.version)
            .str(&self.provider_id)
            .bytes(&self.ciphertext)
            .bytes(&self.nonce)
            .bytes(&self.auth_tag)
            .bytes(&self.provider_signature);
    }

    fn decode_from(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let version = d.u8()?;
        if version != BUNDLE_VERSION {
            return Err(DecodeError::BadTag {
                what: "bundle version",
                value: version,
            });
        }
        let provider_id = d.string()?;
        let ciphertext = d.bytes()?;
        let nonce = d
            .bytes_ref()?
            .try_into()
            .map_err(|_| DecodeError::Invalid("nonce length"))?;
        let auth_tag = d
            .bytes_ref()?
            .try_into()
            .map_err(|_| DecodeError::Invalid("tag length"))?;
        Ok(Bundle {
            version,
            provider_id,
            ciphertext,
            nonce,
            auth_tag,
            provider_signature: d.bytes()?,
        })
    }
}

/// Encrypts `plaintext` under `key` with a fresh nonce and signs the result
/// with the provider's signing key. The provider id is bound as AEAD
/// associated data.
pub fn seal(
    rng: &mut SimRng,
    plaintext: &[u8],
    key: &RecordKey,
    provider_signing_key: &KeyPair,
    provider_id: &str,
) -> Result<Bundle, EnvelopeError> {
    provider_signing_key.require(KeyScheme::Signing)?;
    let nonce: [u8; NONCE_LEN] = rng.array();
    let mut sealed = crypto::aead_seal(&key.0, &nonce, provider_id.as_bytes(), plaintext);
    let tag_at = sealed.len() - TAG_LEN;
    let auth_tag: [u8; TAG_LEN] = sealed[tag_at..].try_into().unwrap();
    sealed.truncate(tag_at);
    let mut bundle = Bundle {
        version: BUNDLE_VERSION,
        provider_id: provider_id.to_string(),
        ciphertext: sealed,
        nonce,
        auth_tag,
        provider_signature: Vec::new(),
    };
    bundle.provider_signature = identity::sign(provider_signing_key, &bundle.provenance_digest())?;
    Ok(bundle)
}

/// Decrypts and checks provenance. The AEAD tag is checked first, so a
/// corrupted ciphertext reports `DecryptFailure`; plaintext is released only
/// once the provider signature has also verified.
pub fn open(bundle: &Bundle, key: &RecordKey, provider_public_key: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    let mut ct = Vec::with_capacity(bundle.ciphertext.len() + TAG_LEN);
    ct.extend_from_slice(&bundle.ciphertext);
    ct.extend_from_slice(&bundle.auth_tag);
    let plaintext = crypto::aead_open(&key.0, &bundle.nonce, bundle.provider_id.as_bytes(), &ct)
        .ok_or(EnvelopeError::DecryptFailure)?;
    if !identity::verify(
        provider_public_key,
        &bundle.provenance_digest(),
        &bundle.provider_signature,
    ) {
        return Err(EnvelopeError::ProvenanceFailure);
    }
    Ok(plaintext)
}

/// Decodes CAS bytes and opens them.
pub fn open_bytes(bytes: &[u8], key: &RecordKey, provider_public_key: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    let bundle = Bundle::from_canonical(bytes).map_err(EnvelopeError::Malformed)?;
    open(&bundle, key, provider_public_key)
}

fn wrap_key_material(shared: &[u8; 32], eph_pub: &[u8], recipient_pub: &[u8]) -> [u8; 32] {
    let mut ikm = Vec::with_capacity(96);
    ikm.extend_from_slice(shared);
    ikm.extend_from_slice(eph_pub);
    ikm.extend_from_slice(recipient_pub);
    crypto::hkdf32(&ikm, WRAP_INFO)
}

/// Sealed-box wrap of `key` to a recipient's key-agreement public key.
pub fn wrap_key(rng: &mut SimRng, key: &RecordKey, recipient_public_key: &[u8]) -> Result<Vec<u8>, EnvelopeError> {
    let recipient: [u8; 32] = recipient_public_key
        .try_into()
        .map_err(|_| EnvelopeError::UnwrapFailure)?;
    let ephemeral = KeyPair::generate(rng, KeyScheme::KeyAgreement);
    let shared = crypto::agree(ephemeral.private_key(), &recipient).ok_or(EnvelopeError::UnwrapFailure)?;
    let kek = wrap_key_material(&shared, &ephemeral.public_key, &recipient);
    let nonce: [u8; NONCE_LEN] = rng.array();
    let mut aad = ephemeral.public_key.clone();
    aad.extend_from_slice(&recipient);
    let sealed = crypto::aead_seal(&kek, &nonce, &aad, &key.0);
    let mut out = Vec::with_capacity(WRAPPED_KEY_LEN);
    out.extend_from_slice(&ephemeral.public_key);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    Ok(out)
}

pub fn unwrap_key(wrapped: &[u8], recipient: &KeyPair) -> Result<RecordKey, EnvelopeError> {
    let secret = recipient.require(KeyScheme::KeyAgreement)?;
    if wrapped.len() != WRAPPED_KEY_LEN {
        return Err(EnvelopeError::UnwrapFailure);
    }
    let eph_pub: [u8; 32] = wrapped[..32].try_into().unwrap();
    let nonce: [u8; NONCE_LEN] = wrapped[32..32 + NONCE_LEN].try_into().unwrap();
    let shared = crypto::agree(secret, &eph_pub).ok_or(EnvelopeError::UnwrapFailure)?;
    let kek = wrap_key_material(&shared, &eph_pub, &recipient.public_key);
    let mut aad = eph_pub.to_vec();
    aad.extend_from_slice(&recipient.public_key);
    let key = crypto::aead_open(&kek, &nonce, &aad, &wrapped[32 + NONCE_LEN..]).ok_or(EnvelopeError::UnwrapFailure)?;
    Ok(RecordKey(key.try_into().map_err(|_| EnvelopeError::UnwrapFailure)?))
}
