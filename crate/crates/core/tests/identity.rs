use medledger::codec::Canonical;
use medledger::identity::{msp_validate, sign, verify, verify_certificate, CertAuthority, KeyPair, KeyScheme, Role};
use medledger::rng::SimRng;
use proptest::prelude::*;

fn ca_and_rng(seed: u64) -> (CertAuthority, SimRng) {
    let mut rng = SimRng::new(seed);
    (CertAuthority::new("ca", &mut rng), rng)
}

#[test]
fn enrollment_binds_subject_org_and_role() {
    let (mut ca, mut rng) = ca_and_rng(1);
    let id = ca.enroll(&mut rng, 7, "patient1", "orgA", Role::Patient).unwrap();
    let cert = &id.certificate;
    assert_eq!(
        (cert.subject_id.as_str(), cert.organization.as_str(), cert.role),
        ("patient1", "orgA", Role::Patient)
    );
    assert_eq!(cert.issued_at, 7);
    assert_eq!(cert.signing_public_key, id.signing.public_key);
    assert_eq!(cert.encryption_public_key, id.agreement.public_key);
    assert!(verify_certificate(cert, ca.public_key()));
    let trusted = vec![ca.public_key().to_vec()];
    assert!(msp_validate(cert, Role::Patient, &trusted));
    assert!(!msp_validate(cert, Role::Hospital, &trusted));
}

#[test]
fn duplicate_subject_is_refused() {
    let (mut ca, mut rng) = ca_and_rng(2);
    ca.enroll(&mut rng, 0, "a", "orgA", Role::Hospital).unwrap();
    let e = ca.enroll(&mut rng, 0, "a", "orgB", Role::Patient).unwrap_err();
    assert_eq!(e.name(), "DuplicateSubject");
}

#[test]
fn foreign_ca_is_not_trusted() {
    let (mut ca, mut rng) = ca_and_rng(3);
    let other = CertAuthority::new("rogue", &mut rng);
    let id = ca.enroll(&mut rng, 0, "h", "orgA", Role::Hospital).unwrap();
    assert!(!msp_validate(
        &id.certificate,
        Role::Hospital,
        &[other.public_key().to_vec()]
    ));
    assert!(msp_validate(
        &id.certificate,
        Role::Hospital,
        &[other.public_key().to_vec(), ca.public_key().to_vec()]
    ));
}

#[test]
fn agreement_keys_cannot_sign() {
    let kp = KeyPair::from_secret([5; 32], KeyScheme::KeyAgreement);
    assert_eq!(sign(&kp, b"m").unwrap_err().name(), "WrongScheme");
}

#[test]
fn certificate_hex_round_trip() {
    let (mut ca, mut rng) = ca_and_rng(4);
    let cert = ca
        .enroll(&mut rng, 3, "lab", "orgB", Role::Researcher)
        .unwrap()
        .certificate;
    let back = medledger::identity::Certificate::from_hex(&cert.to_hex()).unwrap();
    assert_eq!(back, cert);
    assert!(medledger::identity::Certificate::from_hex("zz").is_err());
}

#[test]
fn same_seed_same_identities() {
    let run = |seed| {
        let (mut ca, mut rng) = ca_and_rng(seed);
        let a = ca.enroll(&mut rng, 0, "a", "orgA", Role::Hospital).unwrap();
        let b = ca.enroll(&mut rng, 0, "b", "orgB", Role::Patient).unwrap();
        (ca.public_key().to_vec(), a.certificate, b.certificate)
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9).0, run(10).0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn signatures_verify_only_for_the_signed_message(msg in prop::collection::vec(any::<u8>(), 0..256), flip in any::<usize>()) {
        let kp = KeyPair::from_secret([42; 32], KeyScheme::Signing);
        let sig = sign(&kp, &msg).unwrap();
        prop_assert!(verify(&kp.public_key, &msg, &sig));
        let mut bad = sig.clone();
        let i = flip % bad.len();
        bad[i] ^= 1;
        prop_assert!(!verify(&kp.public_key, &msg, &bad));
        if !msg.is_empty() {
            let mut m = msg.clone();
            let i = flip % m.len();
            m[i] ^= 0x80;
            prop_assert!(!verify(&kp.public_key, &m, &sig));
        }
    }

    #[test]
    fn any_certificate_mutation_breaks_validation(index in any::<usize>(), mask in 1u8..=255) {
        let (mut ca, mut rng) = ca_and_rng(5);
        let cert = ca.enroll(&mut rng, 11, "drbob", "orgB", Role::Practitioner).unwrap().certificate;
        let trusted = vec![ca.public_key().to_vec()];
        let mut raw = cert.to_canonical();
        let i = index % raw.len();
        raw[i] ^= mask;
        match medledger::identity::Certificate::from_canonical(&raw) {
            Err(_) => {}
            Ok(mutated) => {
                prop_assert!(Role::ALL.iter().all(|r| !msp_validate(&mutated, *r, &trusted)));
            }
        }
    }
}
