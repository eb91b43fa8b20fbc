//! Primitive wrappers. The rest of the crate only sees these functions, so
//! the concrete schemes can be swapped here.
//!
//! Signatures are Ed25519 (deterministic, 32-byte public keys, 64-byte
//! signatures); key agreement is X25519; the AEAD is AES-256-GCM.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use ed25519_dalek::{Signature, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

pub const HASH_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const SIGNATURE_LEN: usize = 64;

pub type Hash32 = [u8; HASH_LEN];

pub fn sha256(data: &[u8]) -> Hash32 {
    Sha256::digest(data).into()
}

pub fn sha256_parts(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub(crate) fn signing_public(seed: &[u8; 32]) -> [u8; 32] {
    SigningKey::from_bytes(seed).verifying_key().to_bytes()
}

pub(crate) fn sign_with_seed(seed: &[u8; 32], msg: &[u8]) -> Vec<u8> {
    use ed25519_dalek::Signer;
    SigningKey::from_bytes(seed).sign(msg).to_bytes().to_vec()
}

/// Strict verification: rejects malformed keys, non-canonical scalars and
/// small-order points. Never panics on malformed input.
pub fn verify_signature(public_key: &[u8], msg: &[u8], sig: &[u8]) -> bool {
    let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(sig) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    vk.verify_strict(msg, &Signature::from_bytes(&sig)).is_ok()
}

pub(crate) fn agreement_public(secret: &[u8; 32]) -> [u8; 32] {
    XPublic::from(&StaticSecret::from(*secret)).to_bytes()
}

/// X25519 shared secret; `None` for an all-zero (non-contributory) result.
pub(crate) fn agree(secret: &[u8; 32], peer_public: &[u8; 32]) -> Option<[u8; 32]> {
    let shared = StaticSecret::from(*secret).diffie_hellman(&XPublic::from(*peer_public));
    shared.was_contributory().then(|| shared.to_bytes())
}

pub(crate) fn hkdf32(ikm: &[u8], info: &[u8]) -> [u8; 32] {
    let mut out = [0u8; 32];
    hkdf::Hkdf::<Sha256>::new(None, ikm)
        .expand(info, &mut out)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    out
}

/// Returns `ciphertext ‖ tag`.
pub(crate) fn aead_seal(key: &[u8; 32], nonce: &[u8; NONCE_LEN], aad: &[u8], pt: &[u8]) -> Vec<u8> {
    Aes256Gcm::new(key.into())
        .encrypt(Nonce::from_slice(nonce), Payload { msg: pt, aad })
        .expect("AES-GCM encryption of in-memory buffers does not fail")
}

pub(crate) fn aead_open(key: &[u8; 32], nonce: &[u8; NONCE_LEN], aad: &[u8], ct_and_tag: &[u8]) -> Option<Vec<u8>> {
    Aes256Gcm::new(key.into())
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct_and_tag, aad })
        .ok()
}
