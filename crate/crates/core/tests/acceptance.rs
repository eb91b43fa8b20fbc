//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{args, ehr_network, kv_network, kv_u64};
use medledger::cas::{cid_of, CasError, CasNetwork};
use medledger::chaincode::{simulate, Response};
use medledger::channel::ChannelFile;
use medledger::codec::Canonical;
use medledger::crypto::sha256;
use medledger::ehr::{self, EhrChaincode, RecordMaterial};
use medledger::envelope::{self, generate_record_key, open_bytes, seal, unwrap_key, wrap_key};
use medledger::identity::{KeyPair, KeyScheme, Role};
use medledger::ledger::{Block, PeerLedger, Validity, Version, WorldState, WriteEntry, WriteValue};
use medledger::network::Network;
use medledger::rng::SimRng;
use medledger::scenario::{self, RunOptions, Scenario};
use medledger::state;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run_fig(text: &str, label: &str, seed: Option<u64>, parallel: bool) -> scenario::Run {
    let file = ChannelFile::default_file();
    let sc = Scenario::parse(text, &file).expect("bundled scenario parses");
    let options = RunOptions {
        seed,
        parallel_delivery: parallel,
        label: label.to_string(),
    };
    scenario::run(&sc, file, &options).expect("bundled scenario sets up")
}

fn fig1_end_to_end() -> Outcome {
    let file = ChannelFile::default_file();
    ensure!(file.cas_authorities.len() == 1, "expected a single CA");
    let run = run_fig(scenario::FIG1, "fig1.scn", None, false);
    ensure!(run.passed(), "{} step(s) failed\n{}", run.failures, run.transcript);
    let info = &run.records["xray"];
    let net = &run.network;
    let entry = net.record(&info.record_id).ok_or("record missing from world state")?;
    ensure!(entry.cid == info.cid, "on-chain CID differs from stored CID");
    let bundle = net.cas().get(&entry.cid).map_err(|e| e.to_string())?;
    let patient = net.identity("patient1").map_err(|e| e.to_string())?;
    let key = unwrap_key(&entry.wrapped_keys["patient1"], &patient.agreement).map_err(|e| e.to_string())?;
    let provider = net.identity("hosp1").map_err(|e| e.to_string())?;
    let pt = open_bytes(&bundle, &key, &provider.certificate.signing_public_key).map_err(|e| e.to_string())?;
    ensure!(sha256(&pt) == info.plaintext_digest, "recovered plaintext differs");
    Ok(format!("{} bytes recovered, cid {}", pt.len(), entry.cid))
}

fn fig2_end_to_end() -> Outcome {
    let run = run_fig(scenario::FIG2, "fig2.scn", None, false);
    ensure!(run.passed(), "{} step(s) failed\n{}", run.failures, run.transcript);
    for expected in [
        "grant mri to=drbob price=10",
        "fetch mri by=lab expect=AccessDenied -> rejected AccessDenied as expected",
        "fetch mri by=drbob expect=AccessDenied -> rejected AccessDenied as expected",
    ] {
        ensure!(run.transcript.contains(expected), "transcript lacks {expected:?}");
    }
    // Replay block by block: balances always sum to the minted allocations,
    // and the paid grant moves exactly 10 tokens.
    let ledger = run.network.ledger();
    let mut state = WorldState::new();
    let mut after_first_grant = None;
    for b in ledger.chain().iter().skip(1) {
        for (i, tx) in b.transactions.iter().enumerate() {
            if b.validity_flags[i] == Validity::Valid {
                state.apply(&tx.write_set, Version::new(b.height, i as u32));
                if tx.operation == ehr::OP_GRANT_ACCESS && after_first_grant.is_none() {
                    after_first_grant = Some(ehr::balances(&state));
                }
            }
        }
        let (bal, alloc) = ehr::token_totals(&state).map_err(|e| e.to_string())?;
        ensure!(
            bal == alloc,
            "block {}: balances {bal} != allocations {alloc}",
            b.height
        );
    }
    let first: BTreeMap<_, _> = after_first_grant.ok_or("no grant committed")?.into_iter().collect();
    ensure!(
        first["patient1"] == 110 && first["drbob"] == 90,
        "first grant balances {first:?}"
    );
    Ok(format!("{} blocks, conservation held after each", ledger.height() - 1))
}

/// Ten committed blocks on top of genesis.
fn ten_block_chain() -> Network {
    let mut net = ehr_network(31);
    let rid = net
        .upload("hosp1", "patient1", b"ten block chain", "t")
        .unwrap()
        .record_id;
    net.grant("patient1", &rid, "drbob", 10, ehr::NEVER).unwrap();
    net.fetch("drbob", &rid).unwrap();
    net.grant("patient1", &rid, "lab", 5, 1_000).unwrap();
    net.upload("hosp2", "patient1", b"second record", "u").unwrap();
    net
}

fn tamper_suite() -> Outcome {
    let net = ten_block_chain();
    let ledger = net.ledger();
    ensure!(ledger.height() == 11, "built {} blocks", ledger.height() - 1);
    ensure!(ledger.verify_chain(), "pristine chain does not verify");
    let mut rng = SimRng::new(0x7a3);
    let (mut mutations, mut undecodable) = (0usize, 0usize);
    for (h, block) in ledger.chain().iter().enumerate() {
        let bytes = block.to_canonical();
        for i in 0..bytes.len() {
            let random_mask = 1 + rng.below(255) as u8;
            for mask in [0x01, 0xff, random_mask] {
                mutations += 1;
                let mut m = bytes.clone();
                m[i] ^= mask;
                let Ok(mutated) = Block::from_canonical(&m) else {
                    undecodable += 1;
                    continue;
                };
                let mut chain = ledger.chain().to_vec();
                chain[h] = mutated;
                let tampered =
                    PeerLedger::from_parts("tamper", ledger.config().clone(), chain, ledger.world_state().clone());
                ensure!(
                    !tampered.verify_chain(),
                    "block {h} byte {i} mask {mask:#04x} went undetected"
                );
            }
        }
    }
    Ok(format!(
        "{mutations} mutations over 11 blocks detected ({undecodable} undecodable)"
    ))
}

/// Reference semantics of the test chaincode, written against a plain map.
fn kv_oracle(values: &HashMap<String, Vec<u8>>, op: &str, a: &[Vec<u8>]) -> Vec<WriteEntry> {
    let key = |i: usize| String::from_utf8(a[i].clone()).unwrap();
    let put = |k: String, v: Vec<u8>| WriteEntry {
        key: k,
        value: WriteValue::Put(v),
    };
    match op {
        "put" => vec![put(key(0), a[1].clone())],
        "incr" => {
            let n = values.get(&key(0)).map_or(0, |v| kv_u64(v)) + 1;
            vec![put(key(0), n.to_be_bytes().to_vec())]
        }
        "copy" => match values.get(&key(0)) {
            Some(v) => vec![put(key(1), v.clone())],
            None => vec![WriteEntry {
                key: key(1),
                value: WriteValue::Delete,
            }],
        },
        "del" => vec![WriteEntry {
            key: key(0),
            value: WriteValue::Delete,
        }],
        other => panic!("oracle has no op {other}"),
    }
}

fn random_kv_op(rng: &mut SimRng) -> (String, Vec<Vec<u8>>) {
    let k = |rng: &mut SimRng| format!("k{}", rng.below(4));
    match rng.below(4) {
        0 => {
            let key = k(rng);
            let v = format!("v{}", rng.below(100));
            ("put".into(), args(&[&key, &v]))
        }
        1 => ("incr".into(), args(&[&k(rng)])),
        2 => {
            let (a, b) = (k(rng), k(rng));
            ("copy".into(), args(&[&a, &b]))
        }
        _ => ("del".into(), args(&[&k(rng)])),
    }
}

fn mvcc_oracle() -> Outcome {
    let (mut txs, mut invalid) = (0usize, 0usize);
    for s in 0..200u64 {
        let mut rng = SimRng::new(1000 + s);
        let max_block = 1 + rng.below(5) as u32;
        let mut net = kv_network(s, max_block, 1);
        let total = 1 + rng.below(20) as usize;
        let mut sent = 0;
        while sent < total {
            // A batch is endorsed against one snapshot before anything in it
            // commits, so overlapping keys conflict.
            let n = (1 + rng.below(6) as usize).min(total - sent);
            let mut batch = Vec::new();
            for _ in 0..n {
                let (op, a) = random_kv_op(&mut rng);
                batch.push(net.prepare("client", &op, a).map_err(|e| e.to_string())?.0);
            }
            for tx in batch {
                net.submit(tx).map_err(|e| e.to_string())?;
            }
            loop {
                net.tick().map_err(|e| e.to_string())?;
                if net.orderer().pending_len() == 0 {
                    break;
                }
            }
            sent += n;
        }

        let mut values: HashMap<String, Vec<u8>> = HashMap::new();
        let mut versions: HashMap<String, Version> = HashMap::new();
        for b in net.ledger().chain().iter().skip(1) {
            for (i, tx) in b.transactions.iter().enumerate() {
                txs += 1;
                let fresh = tx
                    .read_set
                    .iter()
                    .all(|r| versions.get(&r.key).copied().unwrap_or(Version::ABSENT) == r.version);
                let expected = if fresh { Validity::Valid } else { Validity::InvalidMvcc };
                ensure!(
                    b.validity_flags[i] == expected,
                    "scenario {s} block {} tx {i}: ledger says {}, oracle {}",
                    b.height,
                    b.validity_flags[i],
                    expected
                );
                if !fresh {
                    invalid += 1;
                    continue;
                }
                let writes = kv_oracle(&values, &tx.operation, &tx.args);
                ensure!(
                    writes == tx.write_set,
                    "scenario {s}: re-simulation disagrees with endorsed writes"
                );
                for w in writes {
                    match w.value {
                        WriteValue::Put(v) => {
                            values.insert(w.key.clone(), v);
                            versions.insert(w.key, Version::new(b.height, i as u32));
                        }
                        WriteValue::Delete => {
                            values.remove(&w.key);
                            versions.remove(&w.key);
                        }
                    }
                }
            }
        }
        let actual: HashMap<String, (Vec<u8>, Version)> = net
            .ledger()
            .world_state()
            .iter()
            .map(|(k, v, ver)| (k.to_string(), (v.to_vec(), ver)))
            .collect();
        let oracle: HashMap<String, (Vec<u8>, Version)> = values
            .into_iter()
            .map(|(k, v)| {
                let ver = versions[&k];
                (k, (v, ver))
            })
            .collect();
        ensure!(actual == oracle, "scenario {s}: world state differs from oracle");
        let first = net.peers()[0].ledger.world_state().state_hash();
        ensure!(
            net.peers().iter().all(|p| p.ledger.world_state().state_hash() == first),
            "scenario {s}: peers disagree"
        );
    }
    Ok(format!(
        "200 scenarios, {txs} transactions, {invalid} MVCC conflicts matched"
    ))
}

fn availability() -> Outcome {
    let fresh = || {
        let mut cas = CasNetwork::new(3);
        for i in 0..5 {
            cas.add_node(&format!("node{i}"), "orgA").unwrap();
        }
        let cid = cas.put(b"replicated record bundle").unwrap();
        (cas, cid)
    };
    let (base, cid) = fresh();
    let holders = base.holders(&cid);
    ensure!(holders.len() == 3, "expected 3 replicas, got {holders:?}");
    for (a, b, survivor) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
        let mut cas = base.clone();
        cas.set_node_alive(&holders[a], false).unwrap();
        cas.set_node_alive(&holders[b], false).unwrap();
        let f = cas.get_with_report(&cid).map_err(|e| format!("killing {a},{b}: {e}"))?;
        ensure!(
            f.served_by == holders[survivor],
            "served by {} not the survivor",
            f.served_by
        );

        // Re-pin from the survivor onto a spare node, then lose the survivor.
        let spare = cas.nodes().find(|n| !n.has(&cid)).unwrap().node_id.clone();
        cas.pin(&cid, &spare).map_err(|e| e.to_string())?;
        cas.set_node_alive(&holders[survivor], false).unwrap();
        let f = cas.get_with_report(&cid).map_err(|e| format!("after re-pin: {e}"))?;
        ensure!(f.served_by == spare, "re-pinned copy not served");
    }
    let mut cas = base.clone();
    for h in &holders {
        cas.set_node_alive(h, false).unwrap();
    }
    ensure!(
        cas.get(&cid) == Err(CasError::NotFound(cid)),
        "all replicas down should be NotFound"
    );
    cas.set_node_alive(&holders[1], true).unwrap();
    ensure!(cas.get(&cid).is_ok(), "recovered replica should serve");
    Ok("3/3 double failures served, triple failure NotFound, re-pin restores".into())
}

fn cid_integrity() -> Outcome {
    let mut rng = SimRng::new(0xc1d);
    let mut reported = 0usize;
    for case in 0..1000 {
        let size = 1 + rng.below(4096) as usize;
        let content = rng.bytes(size);
        let cid = cid_of(&content);
        let bit = rng.below(size as u64 * 8) as usize;
        let mut flipped = content.clone();
        flipped[bit / 8] ^= 1 << (bit % 8);
        ensure!(cid_of(&flipped) != cid, "case {case}: bit flip kept the CID");

        let mut cas = CasNetwork::new(3);
        for i in 0..5 {
            cas.add_node(&format!("node{i}"), "orgB").unwrap();
        }
        cas.put(&content).unwrap();
        let holders = cas.holders(&cid);
        let corrupted = 1 + rng.below(3) as usize;
        for h in &holders[..corrupted] {
            let idx = rng.below(size as u64) as usize;
            let mask = 1 + rng.below(255) as u8;
            cas.corrupt(h, &cid, idx, mask).unwrap();
            let direct = cas.node(h).unwrap().read(&cid);
            ensure!(
                matches!(direct, Err(CasError::IntegrityFailure { .. })),
                "case {case}: corrupt replica on {h} read back without error"
            );
        }
        match cas.get_with_report(&cid) {
            Ok(f) => {
                ensure!(corrupted < 3, "case {case}: fully corrupted content was served");
                ensure!(f.content == content, "case {case}: failover returned wrong bytes");
                ensure!(
                    f.served_by == holders[corrupted],
                    "case {case}: served by {}",
                    f.served_by
                );
                ensure!(
                    f.corrupt_replicas == holders[..corrupted],
                    "case {case}: corruption not reported"
                );
                reported += corrupted;
            }
            Err(CasError::IntegrityFailure { nodes, .. }) => {
                ensure!(
                    corrupted == 3 && nodes == holders,
                    "case {case}: unexpected IntegrityFailure"
                );
                reported += 3;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    Ok(format!("1000 contents, {reported} corrupt replicas surfaced"))
}

fn determinism() -> Outcome {
    for (text, label) in [(scenario::FIG1, "fig1.scn"), (scenario::FIG2, "fig2.scn")] {
        let a = run_fig(text, label, None, false);
        let b = run_fig(text, label, None, false);
        let p = run_fig(text, label, None, true);
        for (other, what) in [(&b, "rerun"), (&p, "parallel delivery")] {
            ensure!(a.transcript == other.transcript, "{label}: {what} transcript differs");
            ensure!(
                a.network.tip_hash() == other.network.tip_hash(),
                "{label}: {what} tip differs"
            );
            ensure!(
                a.network.state_hash() == other.network.state_hash(),
                "{label}: {what} state differs"
            );
        }
        let reseeded = run_fig(text, label, Some(99), false);
        ensure!(
            reseeded.network.tip_hash() != a.network.tip_hash(),
            "{label}: seed has no effect"
        );
    }
    Ok("fig1, fig2: rerun and parallel delivery byte-identical".into())
}

fn log_uniform_size(rng: &mut SimRng) -> usize {
    let bits = rng.below(17) as u32;
    if bits == 0 {
        0
    } else {
        ((1u64 << (bits - 1)) + rng.below(1u64 << (bits - 1))).min(65_536) as usize
    }
}

/// Every 16-byte window of the haystacks.
fn window_set(haystacks: &[&[u8]]) -> HashSet<[u8; 16]> {
    let mut set = HashSet::new();
    for h in haystacks {
        for w in h.windows(16) {
            set.insert(w.try_into().unwrap());
        }
    }
    set
}

fn scan_for_leaks(run: &scenario::Run) -> Result<usize, String> {
    let net = &run.network;
    let mut secrets: Vec<Vec<u8>> = net.sensitive_material().to_vec();
    for (subject, _) in ehr::balances(net.ledger().world_state()) {
        let id = net.identity(&subject).map_err(|e| e.to_string())?;
        secrets.push(id.signing.private_key().to_vec());
        secrets.push(id.agreement.private_key().to_vec());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    state::export(net, dir.path()).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for f in [
        state::CHAIN_FILE,
        state::STATE_FILE,
        state::CHANNEL_FILE,
        state::CAS_FILE,
    ] {
        files.push(std::fs::read(dir.path().join(f)).map_err(|e| e.to_string())?);
    }
    let mut haystacks: Vec<&[u8]> = files.iter().map(Vec::as_slice).collect();
    haystacks.push(run.transcript.as_bytes());
    let windows = window_set(&haystacks);
    let transcript = run.transcript.to_lowercase();
    let mut chunks = 0;
    for s in &secrets {
        for c in s.chunks_exact(16) {
            chunks += 1;
            let c: [u8; 16] = c.try_into().unwrap();
            if windows.contains(&c) || transcript.contains(&hex::encode(&c[..8])) {
                return Err(format!("secret bytes {} found in shared output", hex::encode(c)));
            }
        }
    }
    Ok(chunks)
}

fn envelope_fuzz() -> Outcome {
    let mut rng = SimRng::new(0xe17);
    let mut mutations = 0usize;
    for case in 0..500 {
        let pt = {
            let n = log_uniform_size(&mut rng);
            rng.bytes(n)
        };
        let provider = KeyPair::generate(&mut rng, KeyScheme::Signing);
        let recipient = KeyPair::generate(&mut rng, KeyScheme::KeyAgreement);
        let key = generate_record_key(&mut rng);
        let bundle = seal(&mut rng, &pt, &key, &provider, "hosp").map_err(|e| e.to_string())?;
        let bytes = bundle.to_canonical();
        let cid = cid_of(&bytes);
        let wrapped = wrap_key(&mut rng, &key, &recipient.public_key).map_err(|e| e.to_string())?;
        let unwrapped = unwrap_key(&wrapped, &recipient).map_err(|e| e.to_string())?;
        let opened = open_bytes(&bytes, &unwrapped, &provider.public_key).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(opened == pt, "case {case}: round trip differs");

        // Small bundles are mutated at every byte; large ones at every header,
        // tag and signature byte plus a sample of the ciphertext.
        let positions: Vec<usize> = if bytes.len() <= 1024 {
            (0..bytes.len()).collect()
        } else {
            let mut p: Vec<usize> = (0..48).chain(bytes.len() - 96..bytes.len()).collect();
            p.extend((0..32).map(|_| rng.below(bytes.len() as u64) as usize));
            p
        };
        let mut m = bytes.clone();
        for i in positions {
            let mask = 1 + rng.below(255) as u8;
            m[i] ^= mask;
            mutations += 1;
            ensure!(cid_of(&m) != cid, "case {case}: mutation at {i} kept the CID");
            let r = open_bytes(&m, &unwrapped, &provider.public_key);
            ensure!(
                matches!(
                    r,
                    Err(envelope::EnvelopeError::DecryptFailure
                        | envelope::EnvelopeError::ProvenanceFailure
                        | envelope::EnvelopeError::Malformed(_))
                ),
                "case {case}: mutation at byte {i} of {} not rejected",
                bytes.len()
            );
            m[i] ^= mask;
        }
    }
    let mut scanned = 0;
    for (text, label) in [(scenario::FIG1, "fig1.scn"), (scenario::FIG2, "fig2.scn")] {
        scanned += scan_for_leaks(&run_fig(text, label, None, false))?;
    }
    Ok(format!(
        "500 round trips, {mutations} mutations rejected, {scanned} secret chunks absent from outputs"
    ))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum GrantState {
    None,
    Live,
    Expired,
}

const PATIENTS: [&str; 3] = ["p0", "p1", "p2"];
const GRANTEES: [&str; 3] = ["g0", "g1", "g2"];
const GRANTED_AT: u64 = 2;
const EXPIRED_AT: u64 = 5;
const LIVE_UNTIL: u64 = 1_000;
const QUERY_AT: u64 = 10;

struct AccessWorld {
    net: Network,
    records: Vec<String>,
    wrapped: [u8; envelope::WRAPPED_KEY_LEN],
}

impl AccessWorld {
    fn new() -> Self {
        let mut net = Network::new(ChannelFile::default_file(), 77).unwrap();
        net.enroll("hosp", "orgA", Role::Hospital).unwrap();
        net.register("hosp").unwrap();
        for p in PATIENTS {
            net.enroll(p, "orgA", Role::Patient).unwrap();
            net.register(p).unwrap();
        }
        for (g, role) in GRANTEES
            .iter()
            .zip([Role::Practitioner, Role::Practitioner, Role::Researcher])
        {
            net.enroll(g, "orgB", role).unwrap();
            net.register(g).unwrap();
        }
        let records = PATIENTS
            .iter()
            .map(|p| net.upload("hosp", p, p.as_bytes(), "").unwrap().record_id)
            .collect();
        Self {
            net,
            records,
            wrapped: [0x5a; envelope::WRAPPED_KEY_LEN],
        }
    }

    fn sim(&self, state: &WorldState, who: &str, now: u64, op: &str, a: Vec<Vec<u8>>) -> Response {
        let cert = &self.net.identity(who).unwrap().certificate;
        simulate(&EhrChaincode, state, cert, self.net.config(), now, op, &a).response
    }

    /// Walks all 3^9 assignments depth-first so each state is built from its
    /// parent with one extra grant.
    fn walk(
        &self,
        pair: usize,
        state: &WorldState,
        table: &mut [GrantState; 9],
        checked: &mut usize,
    ) -> Result<(), String> {
        if pair == 9 {
            return self.check(state, table, checked);
        }
        for g in [GrantState::None, GrantState::Live, GrantState::Expired] {
            table[pair] = g;
            if g == GrantState::None {
                self.walk(pair + 1, state, table, checked)?;
                continue;
            }
            let (p, r) = (pair / 3, pair % 3);
            let expires = if g == GrantState::Live { LIVE_UNTIL } else { EXPIRED_AT };
            let a = ehr::grant_args(&self.records[p], GRANTEES[r], &self.wrapped, expires, 1);
            let cert = &self.net.identity(PATIENTS[p]).unwrap().certificate;
            let s = simulate(
                &EhrChaincode,
                state,
                cert,
                self.net.config(),
                GRANTED_AT,
                ehr::OP_GRANT_ACCESS,
                &a,
            );
            if let Response::Reject { kind, detail } = s.response {
                return Err(format!(
                    "grant {}->{} refused: {kind} {detail}",
                    PATIENTS[p], GRANTEES[r]
                ));
            }
            let mut next = state.clone();
            next.apply(&s.write_set, Version::new(1_000, pair as u32));
            self.walk(pair + 1, &next, table, checked)?;
        }
        Ok(())
    }

    fn check(&self, state: &WorldState, table: &[GrantState; 9], checked: &mut usize) -> Result<(), String> {
        let requesters = PATIENTS.iter().chain(GRANTEES.iter()).chain(["hosp"].iter());
        for who in requesters {
            for (p, rid) in self.records.iter().enumerate() {
                let allowed = *who == PATIENTS[p]
                    || GRANTEES
                        .iter()
                        .position(|g| g == who)
                        .is_some_and(|r| table[p * 3 + r] == GrantState::Live);
                let got = self.sim(state, who, QUERY_AT, ehr::OP_GET_RECORD, vec![rid.as_bytes().to_vec()]);
                *checked += 1;
                match (allowed, got) {
                    (true, Response::Ok(bytes)) => {
                        let m = RecordMaterial::from_canonical(&bytes).map_err(|e| e.to_string())?;
                        let owner_view = *who == PATIENTS[p];
                        if !owner_view && m.wrapped_key != self.wrapped {
                            return Err(format!("{who} got the wrong wrapped key for {}", PATIENTS[p]));
                        }
                    }
                    (false, Response::Reject { kind, .. }) if kind == "AccessDenied" => {}
                    (want, got) => {
                        return Err(format!(
                            "{who} on {}'s record: expected {}, got {got:?}",
                            PATIENTS[p],
                            if want { "material" } else { "AccessDenied" }
                        ))
                    }
                }
            }
        }
        Ok(())
    }
}

fn access_enumeration() -> Outcome {
    let world = AccessWorld::new();
    let mut table = [GrantState::None; 9];
    let mut checked = 0;
    world.walk(0, world.net.ledger().world_state(), &mut table, &mut checked)?;
    Ok(format!(
        "19683 grant assignments, {checked} get_record outcomes, 0 mismatches"
    ))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "fig1 end-to-end",
            limit: Some(Duration::from_secs(1)),
            check: fig1_end_to_end,
        },
        Criterion {
            name: "fig2 end-to-end",
            limit: Some(Duration::from_secs(1)),
            check: fig2_end_to_end,
        },
        Criterion {
            name: "tamper suite",
            limit: Some(Duration::from_secs(30)),
            check: tamper_suite,
        },
        Criterion {
            name: "MVCC oracle",
            limit: Some(Duration::from_secs(10)),
            check: mvcc_oracle,
        },
        Criterion {
            name: "availability",
            limit: None,
            check: availability,
        },
        Criterion {
            name: "CID avalanche and integrity",
            limit: None,
            check: cid_integrity,
        },
        Criterion {
            name: "determinism",
            limit: None,
            check: determinism,
        },
        Criterion {
            name: "envelope fuzz and leak scan",
            limit: None,
            check: envelope_fuzz,
        },
        Criterion {
            name: "access-control enumeration",
            limit: None,
            check: access_enumeration,
        },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, c) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (r, _) => r,
        };
        let limit = c.limit.map(|l| format!(", limit {l:?}")).unwrap_or_default();
        match result {
            Ok(detail) => println!("PASS [{}] {}: {detail} ({elapsed:.2?}{limit})", n + 1, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {}: {why} ({elapsed:.2?}{limit})", n + 1, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
