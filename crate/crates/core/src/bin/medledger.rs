use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use medledger::cas::{CasError, CasNetwork, Cid};
use medledger::channel::{ChannelFile, ConfigError};
use medledger::ehr;
use medledger::scenario::{self, RunOptions, ScenarioError};
use medledger::state::{self, StateError};

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   invalid command-line usage
  3   scenario parse error (reported with its line number)
  4   channel config error
  5   a scenario step or assertion failed
  6   file I/O error
  7   corrupt or unverifiable state directory
  8   unknown record
  9   content-addressed storage error
  10  network setup error";

#[derive(Parser)]
#[command(
    name = "medledger",
    version,
    about = "Permissioned ledger for sharing encrypted health records"
)]
#[command(after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario script
    scenario: PathBuf,
    /// Overrides the scenario's seed
    #[arg(long, env = "MEDLEDGER_SEED")]
    seed: Option<u64>,
    /// Channel config (TOML); defaults to the bundled two-organization channel
    #[arg(long)]
    channel_config: Option<PathBuf>,
    /// Commit blocks on all peers concurrently
    #[arg(long)]
    parallel_delivery: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and print its transcript
    #[command(after_help = EXIT_CODES)]
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Also export the resulting state to this directory
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Run a scenario and export chain, world state and storage inventory
    #[command(after_help = EXIT_CODES)]
    Export {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        state: PathBuf,
    },
    /// Print the audit trail of a record from an exported state
    #[command(after_help = EXIT_CODES)]
    Audit {
        record_id: String,
        #[arg(long)]
        state: PathBuf,
    },
    /// Verify an exported state and print its summary
    #[command(after_help = EXIT_CODES)]
    Inspect {
        #[arg(long)]
        state: PathBuf,
    },
    /// Content-addressed storage operations on an exported state
    #[command(after_help = EXIT_CODES)]
    Cas {
        #[command(subcommand)]
        op: CasCmd,
        #[arg(long, global = true, default_value = ".")]
        state: PathBuf,
    },
}

#[derive(Subcommand)]
enum CasCmd {
    /// Store a file and print its CID
    Put { file: PathBuf },
    /// Retrieve content by CID
    Get {
        cid: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Pin content already in the store to a node
    Pin { cid: String, node: String },
}

#[derive(Debug)]
enum Failure {
    Parse(String),
    Config(String),
    StepsFailed(usize),
    Io(String),
    Corrupt(String),
    UnknownRecord(String),
    Cas(String),
    Setup(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 3,
            Failure::Config(_) => 4,
            Failure::StepsFailed(_) => 5,
            Failure::Io(_) => 6,
            Failure::Corrupt(_) => 7,
            Failure::UnknownRecord(_) => 8,
            Failure::Cas(_) => 9,
            Failure::Setup(_) => 10,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Parse(m) => format!("ParseError: {m}"),
            Failure::Config(m) => format!("ConfigError: {m}"),
            Failure::StepsFailed(n) => format!("{n} scenario step(s) failed"),
            Failure::Io(m) => format!("IoError: {m}"),
            Failure::Corrupt(m) => format!("CorruptFile: {m}"),
            Failure::UnknownRecord(m) => format!("UnknownRecord: {m}"),
            Failure::Cas(m) => m.clone(),
            Failure::Setup(m) => format!("SetupError: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io(m) => Failure::Io(m),
            ScenarioError::Parse(p) => Failure::Parse(p.to_string()),
            ScenarioError::Setup(n) => Failure::Setup(n.to_string()),
        }
    }
}

impl From<StateError> for Failure {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Io { .. } => Failure::Io(e.to_string()),
            StateError::CorruptFile { .. } => Failure::Corrupt(e.to_string()),
        }
    }
}

impl From<CasError> for Failure {
    fn from(e: CasError) -> Self {
        Failure::Cas(format!("{}: {e}", e.name()))
    }
}

fn run_scenario(args: &RunArgs) -> Result<scenario::Run, Failure> {
    let channel = match &args.channel_config {
        Some(p) => ChannelFile::load(p)?,
        None => ChannelFile::default_file(),
    };
    let options = RunOptions {
        seed: args.seed,
        parallel_delivery: args.parallel_delivery,
        label: String::new(),
    };
    Ok(scenario::run_file(&args.scenario, channel, &options)?)
}

fn finish(run: &scenario::Run) -> Result<(), Failure> {
    if run.passed() {
        Ok(())
    } else {
        Err(Failure::StepsFailed(run.failures))
    }
}

fn parse_cid(text: &str) -> Result<Cid, Failure> {
    text.parse()
        .map_err(|e: CasError| Failure::Cas(format!("{}: {e}", e.name())))
}

fn load_cas(dir: &Path) -> Result<CasNetwork, Failure> {
    match state::load_cas(dir)? {
        Some(cas) => Ok(cas),
        None => {
            let file = ChannelFile::default_file();
            let mut cas = CasNetwork::new(file.cas.replication_factor);
            for n in &file.storage_nodes {
                cas.add_node(&n.id, &n.operator)?;
            }
            Ok(cas)
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::Run { run, state: dir } => {
            let r = run_scenario(&run)?;
            print!("{}", r.transcript);
            if let Some(dir) = dir {
                state::export(&r.network, &dir)?;
            }
            finish(&r)
        }
        Cmd::Export { run, state: dir } => {
            let r = run_scenario(&run)?;
            state::export(&r.network, &dir)?;
            println!("exported height {} to {}", r.network.ledger().height(), dir.display());
            println!("tip {}", hex::encode(r.network.tip_hash()));
            println!("state {}", hex::encode(r.network.state_hash()));
            finish(&r)
        }
        Cmd::Audit { record_id, state: dir } => {
            let snap = state::import(&dir)?;
            let key = ehr::record_key(&record_id);
            if snap.ledger.get_state(&key).is_none() {
                return Err(Failure::UnknownRecord(record_id));
            }
            println!(
                "{:>6} {:>4}  {:<16} {:<16} {:<20} tx",
                "height", "idx", "operation", "creator", "validity"
            );
            for row in snap.ledger.audit_trail(&key) {
                println!(
                    "{:>6} {:>4}  {:<16} {:<16} {:<20} {}",
                    row.block_height,
                    row.tx_index,
                    row.operation,
                    row.creator_subject,
                    row.validity.as_str(),
                    hex::encode(row.tx_id)
                );
            }
            Ok(())
        }
        Cmd::Inspect { state: dir } => {
            let snap = state::import(&dir)?;
            let ledger = &snap.ledger;
            println!("channel {}", snap.config.channel_id);
            println!("height {}", ledger.height());
            println!("tip {}", hex::encode(ledger.tip_hash()));
            println!("state {}", hex::encode(ledger.world_state().state_hash()));
            println!("chain valid");
            let txs: usize = ledger.chain().iter().map(|b| b.transactions.len()).sum();
            println!("transactions {txs}");
            for (subject, balance) in ehr::balances(ledger.world_state()) {
                println!("  {subject:<16} {balance:>8}");
            }
            for node in snap.cas.nodes() {
                println!(
                    "node {:<16} {:<5} pinned {}",
                    node.node_id,
                    if node.alive { "up" } else { "down" },
                    node.pinned().count()
                );
            }
            Ok(())
        }
        Cmd::Cas { op, state: dir } => {
            let mut cas = load_cas(&dir)?;
            match op {
                CasCmd::Put { file } => {
                    let content = std::fs::read(&file).map_err(|e| Failure::Io(format!("{}: {e}", file.display())))?;
                    let cid = cas.put(&content)?;
                    state::save_cas(&dir, &cas)?;
                    println!("{cid}");
                    println!("holders {}", cas.holders(&cid).join(","));
                }
                CasCmd::Get { cid, output } => {
                    let cid = parse_cid(&cid)?;
                    let fetched = cas.get_with_report(&cid)?;
                    std::fs::write(&output, &fetched.content)
                        .map_err(|e| Failure::Io(format!("{}: {e}", output.display())))?;
                    println!("{} bytes from {}", fetched.content.len(), fetched.served_by);
                }
                CasCmd::Pin { cid, node } => {
                    let cid = parse_cid(&cid)?;
                    cas.pin(&cid, &node)?;
                    state::save_cas(&dir, &cas)?;
                    println!("holders {}", cas.holders(&cid).join(","));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("medledger: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
