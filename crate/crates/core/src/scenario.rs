//! Line-oriented scenario scripts and their transcripts.
//!
//! One command per line, `#` starts a comment. Values containing spaces are
//! double-quoted. Any step may end with `expect=<ErrorName>` (the step must
//! fail with exactly that error) or `expect=ok`.
//!
//! ```text
//! seed 42
//! enroll hosp1 org=orgA role=hospital
//! register hosp1
//! upload xray by=hosp1 for=alice size=2048 meta="chest x-ray"
//! grant xray to=drbob price=10 expires=+5
//! fetch xray by=drbob
//! tick 6
//! fetch xray by=drbob expect=AccessDenied
//! kill-node ipfs0.orgA
//! recover-node ipfs0.orgA
//! pin xray patient1.home
//! unpin xray ipfs0.orgA
//! assert balance alice 110
//! assert records alice 1
//! assert owner xray alice
//! assert access xray drbob denied
//! assert audit xray 3
//! assert conservation
//! assert chain-valid
//! ```
//!
//! Subjects, record aliases and storage nodes are resolved before anything
//! runs; a script that names something it never introduced is a parse error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::cas::Cid;
use crate::channel::ChannelFile;
use crate::crypto::sha256;
use crate::ehr::{self, NEVER};
use crate::identity::Role;
use crate::network::{NetError, Network};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn perr(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expiry {
    Never,
    At(u64),
    /// Relative to the orderer clock when the grant is proposed.
    In(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Granted,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    Balance {
        subject: String,
        amount: u64,
    },
    Records {
        patient: String,
        count: usize,
    },
    Owner {
        alias: String,
        patient: String,
    },
    Access {
        alias: String,
        subject: String,
        expect: Access,
    },
    Audit {
        alias: String,
        rows: usize,
    },
    Conservation,
    ChainValid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Enroll {
        subject: String,
        org: String,
        role: Role,
    },
    Register {
        subject: String,
    },
    Upload {
        alias: String,
        hospital: String,
        patient: String,
        size: usize,
        metadata: String,
    },
    Grant {
        alias: String,
        grantee: String,
        price: Option<u64>,
        expires: Expiry,
        owner: Option<String>,
    },
    Fetch {
        alias: String,
        requester: String,
    },
    Tick {
        count: u64,
    },
    KillNode {
        node: String,
    },
    RecoverNode {
        node: String,
    },
    Pin {
        alias: String,
        node: String,
    },
    Unpin {
        alias: String,
        node: String,
    },
    Assert(Check),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub text: String,
    pub command: Command,
    /// `None` means the step must succeed.
    pub expect: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub steps: Vec<Step>,
}

fn tokenize(line: usize, text: &str) -> Result<Vec<String>, ParseError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quotes = false;
    let mut has_token = false;
    for c in text.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                has_token = true;
            }
            c if c.is_whitespace() && !in_quotes => {
                if has_token {
                    out.push(std::mem::take(&mut cur));
                    has_token = false;
                }
            }
            c => {
                cur.push(c);
                has_token = true;
            }
        }
    }
    if in_quotes {
        return Err(perr(line, "unterminated quote"));
    }
    if has_token {
        out.push(cur);
    }
    Ok(out)
}

fn strip_comment(text: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in text.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &text[..i],
            _ => {}
        }
    }
    text
}

struct Args {
    line: usize,
    positional: Vec<String>,
    named: BTreeMap<String, String>,
}

impl Args {
    fn new(line: usize, tokens: &[String]) -> Result<Self, ParseError> {
        let mut positional = Vec::new();
        let mut named = BTreeMap::new();
        for t in tokens {
            match t.split_once('=') {
                Some((k, v)) => {
                    if named.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(perr(line, format!("duplicate argument {k}")));
                    }
                }
                None => positional.push(t.clone()),
            }
        }
        Ok(Self {
            line,
            positional,
            named,
        })
    }

    fn arity(&self, n: usize, usage: &str) -> Result<(), ParseError> {
        if self.positional.len() != n {
            return Err(perr(self.line, format!("usage: {usage}")));
        }
        Ok(())
    }

    fn pos(&self, i: usize) -> String {
        self.positional[i].clone()
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.named.remove(key)
    }

    fn require(&mut self, key: &str, usage: &str) -> Result<String, ParseError> {
        self.take(key)
            .ok_or_else(|| perr(self.line, format!("missing {key}=; usage: {usage}")))
    }

    fn done(&self) -> Result<(), ParseError> {
        match self.named.keys().next() {
            Some(k) => Err(perr(self.line, format!("unknown argument {k}="))),
            None => Ok(()),
        }
    }
}

fn number<T: std::str::FromStr>(line: usize, what: &str, v: &str) -> Result<T, ParseError> {
    v.parse()
        .map_err(|_| perr(line, format!("{what} must be a non-negative integer, got {v:?}")))
}

fn parse_check(a: &mut Args) -> Result<Check, ParseError> {
    let line = a.line;
    let kind = a
        .positional
        .first()
        .cloned()
        .ok_or_else(|| perr(line, "assert needs a kind"))?;
    let check = match kind.as_str() {
        "balance" => {
            a.arity(3, "assert balance <subject> <amount>")?;
            Check::Balance {
                subject: a.pos(1),
                amount: number(line, "amount", &a.pos(2))?,
            }
        }
        "records" => {
            a.arity(3, "assert records <patient> <count>")?;
            Check::Records {
                patient: a.pos(1),
                count: number(line, "count", &a.pos(2))?,
            }
        }
        "owner" => {
            a.arity(3, "assert owner <record> <patient>")?;
            Check::Owner {
                alias: a.pos(1),
                patient: a.pos(2),
            }
        }
        "access" => {
            a.arity(4, "assert access <record> <subject> granted|denied")?;
            let expect = match a.pos(3).as_str() {
                "granted" => Access::Granted,
                "denied" => Access::Denied,
                other => return Err(perr(line, format!("expected granted or denied, got {other:?}"))),
            };
            Check::Access {
                alias: a.pos(1),
                subject: a.pos(2),
                expect,
            }
        }
        "audit" => {
            a.arity(3, "assert audit <record> <rows>")?;
            Check::Audit {
                alias: a.pos(1),
                rows: number(line, "rows", &a.pos(2))?,
            }
        }
        "conservation" => {
            a.arity(1, "assert conservation")?;
            Check::Conservation
        }
        "chain-valid" => {
            a.arity(1, "assert chain-valid")?;
            Check::ChainValid
        }
        other => return Err(perr(line, format!("unknown assertion {other:?}"))),
    };
    Ok(check)
}

fn parse_command(verb: &str, a: &mut Args) -> Result<Command, ParseError> {
    let line = a.line;
    let cmd = match verb {
        "enroll" => {
            let usage = "enroll <subject> org=<org> role=<role>";
            a.arity(1, usage)?;
            let org = a.require("org", usage)?;
            let role = a.require("role", usage)?;
            let role: Role = role.parse().map_err(|_| perr(line, format!("unknown role {role:?}")))?;
            Command::Enroll {
                subject: a.pos(0),
                org,
                role,
            }
        }
        "register" => {
            a.arity(1, "register <subject>")?;
            Command::Register { subject: a.pos(0) }
        }
        "upload" => {
            let usage = "upload <record> by=<hospital> for=<patient> size=<bytes> [meta=\"...\"]";
            a.arity(1, usage)?;
            let hospital = a.require("by", usage)?;
            let patient = a.require("for", usage)?;
            let size = a.require("size", usage)?;
            Command::Upload {
                alias: a.pos(0),
                hospital,
                patient,
                size: number(line, "size", &size)?,
                metadata: a.take("meta").unwrap_or_default(),
            }
        }
        "grant" => {
            let usage = "grant <record> to=<grantee> [price=<n>] [expires=never|<tick>|+<ticks>] [as=<owner>]";
            a.arity(1, usage)?;
            let grantee = a.require("to", usage)?;
            let price = a.take("price").map(|p| number(line, "price", &p)).transpose()?;
            let expires = match a.take("expires") {
                None => Expiry::Never,
                Some(v) if v == "never" => Expiry::Never,
                Some(v) => match v.strip_prefix('+') {
                    Some(rel) => Expiry::In(number(line, "expires", rel)?),
                    None => Expiry::At(number(line, "expires", &v)?),
                },
            };
            Command::Grant {
                alias: a.pos(0),
                grantee,
                price,
                expires,
                owner: a.take("as"),
            }
        }
        "fetch" => {
            let usage = "fetch <record> by=<requester>";
            a.arity(1, usage)?;
            Command::Fetch {
                alias: a.pos(0),
                requester: a.require("by", usage)?,
            }
        }
        "tick" => {
            let count = match a.positional.len() {
                0 => 1,
                1 => number(line, "tick count", &a.pos(0))?,
                _ => return Err(perr(line, "usage: tick [count]")),
            };
            Command::Tick { count }
        }
        "kill-node" => {
            a.arity(1, "kill-node <node>")?;
            Command::KillNode { node: a.pos(0) }
        }
        "recover-node" => {
            a.arity(1, "recover-node <node>")?;
            Command::RecoverNode { node: a.pos(0) }
        }
        "pin" => {
            a.arity(2, "pin <record> <node>")?;
            Command::Pin {
                alias: a.pos(0),
                node: a.pos(1),
            }
        }
        "unpin" => {
            a.arity(2, "unpin <record> <node>")?;
            Command::Unpin {
                alias: a.pos(0),
                node: a.pos(1),
            }
        }
        "assert" => Command::Assert(parse_check(a)?),
        other => return Err(perr(line, format!("unknown command {other:?}"))),
    };
    a.done()?;
    Ok(cmd)
}

impl Scenario {
    /// Parses the script and resolves every name it uses against `channel`.
    pub fn parse(text: &str, channel: &ChannelFile) -> Result<Self, ParseError> {
        let mut seed = None;
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let tokens = tokenize(line, strip_comment(raw))?;
            let Some((verb, rest)) = tokens.split_first() else {
                continue;
            };
            if verb == "seed" {
                if seed.is_some() || !steps.is_empty() {
                    return Err(perr(line, "seed must appear once, before any step"));
                }
                if rest.len() != 1 {
                    return Err(perr(line, "usage: seed <u64>"));
                }
                seed = Some(number(line, "seed", &rest[0])?);
                continue;
            }
            let mut args = Args::new(line, rest)?;
            let expect = args.take("expect").and_then(|e| (e != "ok").then_some(e));
            let command = parse_command(verb, &mut args)?;
            steps.push(Step {
                line,
                text: tokens.join(" "),
                command,
                expect,
            });
        }
        let scenario = Scenario {
            seed: seed.unwrap_or(0),
            steps,
        };
        scenario.resolve(channel)?;
        Ok(scenario)
    }

    pub fn load(path: &Path, channel: &ChannelFile) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self::parse(&text, channel)?)
    }

    fn resolve(&self, channel: &ChannelFile) -> Result<(), ParseError> {
        let nodes: BTreeSet<&str> = channel.storage_nodes.iter().map(|n| n.id.as_str()).collect();
        let mut subjects = BTreeSet::new();
        let mut records = BTreeSet::new();
        for step in &self.steps {
            let line = step.line;
            let subject = |s: &String| {
                if subjects.contains(s.as_str()) {
                    Ok(())
                } else {
                    Err(perr(line, format!("unknown subject {s:?}")))
                }
            };
            let record = |r: &String| {
                if records.contains(r.as_str()) {
                    Ok(())
                } else {
                    Err(perr(line, format!("unknown record {r:?}")))
                }
            };
            let node = |n: &String| {
                if nodes.contains(n.as_str()) {
                    Ok(())
                } else {
                    Err(perr(line, format!("unknown storage node {n:?}")))
                }
            };
            match &step.command {
                Command::Enroll { subject: s, org, .. } => {
                    if channel.org(org).is_none() {
                        return Err(perr(line, format!("unknown organization {org:?}")));
                    }
                    if !subjects.insert(s.clone()) {
                        return Err(perr(line, format!("subject {s:?} enrolled twice")));
                    }
                }
                Command::Register { subject: s } => subject(s)?,
                Command::Upload {
                    alias,
                    hospital,
                    patient,
                    ..
                } => {
                    subject(hospital)?;
                    subject(patient)?;
                    if !records.insert(alias.clone()) {
                        return Err(perr(line, format!("record {alias:?} defined twice")));
                    }
                }
                Command::Grant {
                    alias, grantee, owner, ..
                } => {
                    record(alias)?;
                    subject(grantee)?;
                    if let Some(o) = owner {
                        subject(o)?;
                    }
                }
                Command::Fetch { alias, requester } => {
                    record(alias)?;
                    subject(requester)?;
                }
                Command::Tick { .. } => {}
                Command::KillNode { node: n } | Command::RecoverNode { node: n } => node(n)?,
                Command::Pin { alias, node: n } | Command::Unpin { alias, node: n } => {
                    record(alias)?;
                    node(n)?;
                }
                Command::Assert(check) => match check {
                    Check::Balance { subject: s, .. } | Check::Records { patient: s, .. } => subject(s)?,
                    Check::Owner { alias, patient } => {
                        record(alias)?;
                        subject(patient)?;
                    }
                    Check::Access { alias, subject: s, .. } => {
                        record(alias)?;
                        subject(s)?;
                    }
                    Check::Audit { alias, .. } => record(alias)?,
                    Check::Conservation | Check::ChainValid => {}
                },
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("network setup failed: {0}")]
    Setup(NetError),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub parallel_delivery: bool,
    /// Name printed in the transcript header.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordInfo {
    pub record_id: String,
    pub cid: Cid,
    pub plaintext_digest: [u8; 32],
}

pub struct Run {
    pub transcript: String,
    pub failures: usize,
    pub network: Network,
    pub records: BTreeMap<String, RecordInfo>,
}

impl Run {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Runner {
    net: Network,
    records: BTreeMap<String, RecordInfo>,
    plaintexts: BTreeMap<String, Vec<u8>>,
}

fn short(h: &[u8]) -> String {
    hex::encode(&h[..8])
}

impl Runner {
    fn record(&self, alias: &str) -> Result<&RecordInfo, String> {
        self.records
            .get(alias)
            .ok_or_else(|| format!("UnknownRecord: {alias} was never uploaded"))
    }

    fn cid(&self, alias: &str) -> Result<Cid, NetError> {
        self.records
            .get(alias)
            .map(|r| r.cid)
            .ok_or_else(|| NetError::Chaincode(crate::chaincode::ChaincodeError::new("UnknownRecord", alias)))
    }

    fn record_id(&self, alias: &str) -> Result<String, NetError> {
        self.records
            .get(alias)
            .map(|r| r.record_id.clone())
            .ok_or_else(|| NetError::Chaincode(crate::chaincode::ChaincodeError::new("UnknownRecord", alias)))
    }

    /// Executes one action step; the string is a short success detail.
    fn act(&mut self, cmd: &Command) -> Result<String, NetError> {
        match cmd {
            Command::Enroll { subject, org, role } => {
                let cert = self.net.enroll(subject, org, *role)?;
                Ok(format!("cert {}", &cert.fingerprint()[..16]))
            }
            Command::Register { subject } => {
                let c = self.net.register(subject)?;
                Ok(format!("block {}", c.block_height))
            }
            Command::Upload {
                alias,
                hospital,
                patient,
                size,
                metadata,
            } => {
                let plaintext = self.net.rng().bytes(*size);
                let up = self.net.upload(hospital, patient, &plaintext, metadata)?;
                let info = RecordInfo {
                    record_id: up.record_id.clone(),
                    cid: up.cid,
                    plaintext_digest: sha256(&plaintext),
                };
                self.records.insert(alias.clone(), info);
                self.plaintexts.insert(alias.clone(), plaintext);
                Ok(format!(
                    "record {} cid {} block {}",
                    up.record_id, up.cid, up.commit.block_height
                ))
            }
            Command::Grant {
                alias,
                grantee,
                price,
                expires,
                owner,
            } => {
                let record_id = self.record_id(alias)?;
                let owner = match owner {
                    Some(o) => o.clone(),
                    None => self
                        .net
                        .record(&record_id)
                        .map(|r| r.owner_patient_id)
                        .unwrap_or_default(),
                };
                let price = price.unwrap_or(self.net.config().tokens.default_price);
                let expires_at = match expires {
                    Expiry::Never => NEVER,
                    Expiry::At(t) => *t,
                    Expiry::In(d) => self.net.now().saturating_add(*d),
                };
                let c = self.net.grant(&owner, &record_id, grantee, price, expires_at)?;
                let until = if expires_at == NEVER {
                    "never".to_string()
                } else {
                    expires_at.to_string()
                };
                Ok(format!("price {price} expires {until} block {}", c.block_height))
            }
            Command::Fetch { alias, requester } => {
                let record_id = self.record_id(alias)?;
                let f = self.net.fetch(requester, &record_id)?;
                let matches = self.plaintexts.get(alias).is_some_and(|p| *p == f.plaintext);
                let mut detail = format!(
                    "{} bytes sha256 {} from {} block {}",
                    f.plaintext.len(),
                    short(&sha256(&f.plaintext)),
                    f.served_by,
                    f.commit.block_height
                );
                if !f.corrupt_replicas.is_empty() {
                    let _ = write!(detail, " skipped corrupt {}", f.corrupt_replicas.join(","));
                }
                if !matches {
                    detail.push_str(" MISMATCH");
                }
                Ok(detail)
            }
            Command::Tick { count } => {
                let mut blocks = 0;
                for _ in 0..*count {
                    blocks += self.net.tick()?.len();
                }
                Ok(format!("clock {} blocks {blocks}", self.net.now()))
            }
            Command::KillNode { node } => {
                self.net.cas_mut().set_node_alive(node, false)?;
                Ok("down".into())
            }
            Command::RecoverNode { node } => {
                self.net.cas_mut().set_node_alive(node, true)?;
                Ok("up".into())
            }
            Command::Pin { alias, node } => {
                let cid = self.cid(alias)?;
                self.net.cas_mut().pin(&cid, node)?;
                Ok(format!("holders {}", self.net.cas().holders(&cid).join(",")))
            }
            Command::Unpin { alias, node } => {
                let cid = self.cid(alias)?;
                self.net.cas_mut().unpin(&cid, node)?;
                Ok(format!("holders {}", self.net.cas().holders(&cid).join(",")))
            }
            Command::Assert(_) => unreachable!("asserts are checked separately"),
        }
    }

    /// Evaluates an assertion without changing any state.
    fn check(&self, check: &Check) -> Result<String, String> {
        let net = &self.net;
        match check {
            Check::Balance { subject, amount } => {
                let got = net.balance(subject).map_err(|e| e.name())?;
                if got == *amount {
                    Ok(format!("{got}"))
                } else {
                    Err(format!("balance is {got}"))
                }
            }
            Check::Records { patient, count } => {
                let got = net.list_records(patient, patient).map_err(|e| e.name())?.len();
                if got == *count {
                    Ok(format!("{got}"))
                } else {
                    Err(format!("{got} records"))
                }
            }
            Check::Owner { alias, patient } => {
                let id = &self.record(alias)?.record_id;
                let owner = net.record(id).map(|r| r.owner_patient_id);
                match owner {
                    Some(o) if o == *patient => Ok(o),
                    Some(o) => Err(format!("owner is {o}")),
                    None => Err("record not on chain".into()),
                }
            }
            Check::Access { alias, subject, expect } => {
                let id = &self.record(alias)?.record_id;
                let got = net.query(subject, ehr::OP_GET_RECORD, vec![id.as_bytes().to_vec()]);
                match (got, expect) {
                    (Ok(_), Access::Granted) => Ok("granted".into()),
                    (Err(e), Access::Denied) if e.name() == "AccessDenied" => Ok("denied".into()),
                    (Ok(_), Access::Denied) => Err("access granted".into()),
                    (Err(e), _) => Err(e.name()),
                }
            }
            Check::Audit { alias, rows } => {
                let id = &self.record(alias)?.record_id;
                let got = net.ledger().audit_trail(&ehr::record_key(id)).len();
                if got == *rows {
                    Ok(format!("{got} rows"))
                } else {
                    Err(format!("{got} rows"))
                }
            }
            Check::Conservation => {
                let (b, a) = ehr::token_totals(net.ledger().world_state()).map_err(|e| e.to_string())?;
                if b == a {
                    Ok(format!("supply {b}"))
                } else {
                    Err(format!("balances {b} allocated {a}"))
                }
            }
            Check::ChainValid => {
                for p in net.peers() {
                    p.ledger.verify_chain_report().map_err(|f| format!("{}: {f}", p.id()))?;
                }
                Ok(format!("height {}", net.ledger().height()))
            }
        }
    }
}

/// Runs a parsed scenario on a fresh network built from `channel`.
pub fn run(scenario: &Scenario, channel: ChannelFile, options: &RunOptions) -> Result<Run, ScenarioError> {
    let seed = options.seed.unwrap_or(scenario.seed);
    let mut net = Network::new(channel, seed).map_err(ScenarioError::Setup)?;
    net.set_parallel_delivery(options.parallel_delivery);
    let mut runner = Runner {
        net,
        records: BTreeMap::new(),
        plaintexts: BTreeMap::new(),
    };

    let mut out = String::new();
    let _ = writeln!(out, "# medledger transcript");
    let _ = writeln!(out, "scenario {}", options.label);
    let _ = writeln!(out, "seed {seed}");
    let _ = writeln!(out, "channel {}", runner.net.config().channel_id);
    let mut failures = 0;
    for step in &scenario.steps {
        let (ok, line) = match &step.command {
            Command::Assert(check) => match (runner.check(check), &step.expect) {
                (Ok(d), None) => (true, format!("ok {d}")),
                (Err(d), None) => (false, format!("FAIL {d}")),
                (_, Some(_)) => (false, "FAIL assertions cannot expect an error".to_string()),
            },
            cmd => match (runner.act(cmd), &step.expect) {
                (Ok(d), None) => (true, format!("ok {d}")),
                (Ok(d), Some(want)) => (false, format!("FAIL expected {want}, step succeeded: {d}")),
                (Err(e), None) => (false, format!("FAIL {}: {e}", e.name())),
                (Err(e), Some(want)) if e.name() == *want => (true, format!("rejected {want} as expected")),
                (Err(e), Some(want)) => (false, format!("FAIL expected {want}, got {}: {e}", e.name())),
            },
        };
        if !ok {
            failures += 1;
        }
        let _ = writeln!(out, "[{:>3}] {} -> {line}", step.line, step.text);
    }

    let net = &runner.net;
    let _ = writeln!(out, "height {}", net.ledger().height());
    let _ = writeln!(out, "tip {}", hex::encode(net.tip_hash()));
    let _ = writeln!(out, "state {}", hex::encode(net.state_hash()));
    let _ = writeln!(out, "balances");
    for (subject, balance) in ehr::balances(net.ledger().world_state()) {
        let _ = writeln!(out, "  {subject:<16} {balance:>8}");
    }
    let _ = writeln!(
        out,
        "result {} ({} steps, {failures} failed)",
        if failures == 0 { "PASS" } else { "FAIL" },
        scenario.steps.len()
    );

    Ok(Run {
        transcript: out,
        failures,
        network: runner.net,
        records: runner.records,
    })
}

/// Loads a script from disk and runs it.
pub fn run_file(path: &Path, channel: ChannelFile, options: &RunOptions) -> Result<Run, ScenarioError> {
    let scenario = Scenario::load(path, &channel)?;
    let mut options = options.clone();
    if options.label.is_empty() {
        options.label = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    run(&scenario, channel, &options)
}

pub const FIG1: &str = include_str!("../scenarios/fig1.scn");
pub const FIG2: &str = include_str!("../scenarios/fig2.scn");

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario, ParseError> {
        Scenario::parse(text, &ChannelFile::default_file())
    }

    #[test]
    fn comments_quotes_and_expect() {
        let s = parse(
            "# header\nseed 7\nenroll h org=orgA role=hospital # trailing\nenroll p org=orgA role=patient\n\
             upload r by=h for=p size=4 meta=\"a # b\"\nfetch r by=p expect=AccessDenied\n",
        )
        .unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.steps.len(), 4);
        match &s.steps[2].command {
            Command::Upload { metadata, .. } => assert_eq!(metadata, "a # b"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.steps[3].expect.as_deref(), Some("AccessDenied"));
        assert_eq!(s.steps[3].line, 6);
    }

    #[test]
    fn unknown_subject_fails_before_execution() {
        let e = parse("enroll h org=orgA role=hospital\nregister ghost\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("ghost"));
    }

    #[test]
    fn unknown_node_and_record_are_parse_errors() {
        let base = "enroll h org=orgA role=hospital\nenroll p org=orgA role=patient\nupload r by=h for=p size=1\n";
        assert_eq!(parse(&format!("{base}kill-node nowhere\n")).unwrap_err().line, 4);
        assert_eq!(parse(&format!("{base}fetch q by=p\n")).unwrap_err().line, 4);
        assert!(parse(&format!("{base}pin r ipfs0.orgA\n")).is_ok());
    }

    #[test]
    fn malformed_lines_report_their_line() {
        for (text, line) in [
            ("tick x\n", 1),
            ("\n\nfrobnicate\n", 3),
            ("enroll a org=orgA\n", 1),
            ("enroll a org=orgA role=wizard\n", 1),
            ("enroll a org=nowhere role=patient\n", 1),
            ("enroll a org=orgA role=patient colour=red\n", 1),
            ("tick\nseed 3\n", 2),
            ("upload r by=a for=b size=1 meta=\"open\n", 1),
        ] {
            assert_eq!(parse(text).unwrap_err().line, line, "{text:?}");
        }
    }

    #[test]
    fn expiry_forms() {
        let base = "enroll h org=orgA role=hospital\nenroll p org=orgA role=patient\nenroll d org=orgA role=practitioner\nupload r by=h for=p size=1\n";
        for (suffix, want) in [
            ("", Expiry::Never),
            (" expires=never", Expiry::Never),
            (" expires=12", Expiry::At(12)),
            (" expires=+3", Expiry::In(3)),
        ] {
            let s = parse(&format!("{base}grant r to=d{suffix}\n")).unwrap();
            match &s.steps[4].command {
                Command::Grant { expires, .. } => assert_eq!(*expires, want),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn shipped_scenarios_parse() {
        parse(FIG1).unwrap();
        parse(FIG2).unwrap();
    }
}
