//! Full two-endpoint key exchange: both roles in one process over an
//! in-memory channel, or one endpoint of a socketed pair. Socketed peers
//! that agree on the master seed replay the in-memory run bit for bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, ValueEnum};
use plugplay::protocol::{
    endpoint_seeds, run_alice, run_bob, run_full_session, EndpointOutcome, KeyBuffer,
    SessionReport, SessionSetup,
};
use plugplay::transport::TcpChannel;

use crate::output::Csv;

#[derive(Args)]
pub struct RunArgs {
    /// Which endpoint to embody; `local` runs both over an in-memory channel
    #[arg(long, value_enum, default_value_t = RoleArg::Local)]
    pub role: RoleArg,
    /// Experiment description; defaults to the installed-cable link
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trains to transmit (slots = trains x pulses per train)
    #[arg(long, default_value_t = 40_000)]
    pub trains: u64,
    /// Master seed; socketed peers must agree on it
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Accept one peer connection on this address
    #[arg(long)]
    pub listen: Option<String>,
    /// Connect to a listening peer
    #[arg(long)]
    pub connect: Option<String>,
    /// CSV destination; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hex key destination; `local` writes <path>.alice and <path>.bob
    #[arg(long = "key-out")]
    pub key_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
pub enum RoleArg {
    Alice,
    Bob,
    Local,
}

pub const ENDPOINT_CSV_HEADER: &str =
    "role,n_slots,n_events,sifted_len,sampled_bits,qber,leaked_bits,final_len,aborted_stage";

pub fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = crate::load_config(args.config.as_deref())?;
    let setup = cfg.session_setup()?;
    match args.role {
        RoleArg::Local => run_local(&args, &setup),
        RoleArg::Alice | RoleArg::Bob => run_remote(&args, &setup),
    }
}

fn run_local(args: &RunArgs, setup: &SessionSetup) -> anyhow::Result<ExitCode> {
    let n_slots = args.trains * setup.schedule.pulses_per_train as u64;
    let report = run_full_session(setup, n_slots, args.seed)?;

    let mut csv = Csv::open(args.out.as_deref(), SessionReport::CSV_HEADER)?;
    csv.line(&report.csv_row())?;
    csv.finish()?;

    if let Some(path) = &args.key_out {
        if let Some(key) = &report.alice.final_key {
            write_key(&suffixed(path, "alice"), key)?;
        }
        if let Some(key) = &report.bob.final_key {
            write_key(&suffixed(path, "bob"), key)?;
        }
    }

    eprintln!("transcript a->b {}", hex(&report.alice.transcript.0));
    eprintln!("transcript b->a {}", hex(&report.alice.transcript.1));
    match report.aborted_stage {
        Some(stage) => {
            let reason =
                report.bob.aborted.as_ref().map(|(_, r)| r.as_str()).unwrap_or("no reason given");
            eprintln!("aborted at {}: {} (qber {:.4})", stage.name(), reason, report.qber);
            Ok(ExitCode::FAILURE)
        }
        None => {
            eprintln!(
                "session complete: {} slots, {} sifted, qber {:.3}%, final key {} bits \
                 ({:.2} bit/s), keys match: {}",
                report.n_slots,
                report.sifted_len,
                100.0 * report.qber,
                report.final_len,
                report.final_rate_hz,
                report.keys_match
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_remote(args: &RunArgs, setup: &SessionSetup) -> anyhow::Result<ExitCode> {
    let ch = open_channel(args)?;
    let (seeds, bob_seed) = endpoint_seeds(args.seed);
    let outcome = match args.role {
        RoleArg::Alice => run_alice(setup, args.trains, seeds, ch)?,
        RoleArg::Bob => run_bob(setup, bob_seed, ch)?,
        RoleArg::Local => unreachable!("local role never opens a socket"),
    };

    let mut csv = Csv::open(args.out.as_deref(), ENDPOINT_CSV_HEADER)?;
    csv.line(&endpoint_csv_row(&outcome))?;
    csv.finish()?;

    if let (Some(path), Some(key)) = (&args.key_out, &outcome.final_key) {
        write_key(path, key)?;
    }
    eprintln!("transcript sent     {}", hex(&outcome.transcript.0));
    eprintln!("transcript received {}", hex(&outcome.transcript.1));
    match &outcome.aborted {
        Some((stage, reason)) => {
            eprintln!("aborted at {}: {} (qber {:.4})", stage.name(), reason, outcome.qber_estimate);
            Ok(ExitCode::FAILURE)
        }
        None => {
            let final_len = outcome.final_key.as_ref().map(KeyBuffer::len).unwrap_or(0);
            eprintln!(
                "{} done: {} sifted, {} sampled, qber {:.3}%, final key {} bits, leaked {} bits",
                outcome.role,
                outcome.sifted_len,
                outcome.sampled_bits,
                100.0 * outcome.qber_estimate,
                final_len,
                outcome.leaked_bits
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn open_channel(args: &RunArgs) -> anyhow::Result<TcpChannel> {
    match (&args.listen, &args.connect) {
        (Some(addr), None) => {
            let (ch, peer) =
                TcpChannel::listen_one(addr).with_context(|| format!("listening on {addr}"))?;
            eprintln!("peer connected from {peer}");
            Ok(ch)
        }
        (None, Some(addr)) => {
            TcpChannel::connect(addr).with_context(|| format!("connecting to {addr}"))
        }
        _ => anyhow::bail!("socketed roles need exactly one of --listen or --connect"),
    }
}

fn endpoint_csv_row(o: &EndpointOutcome) -> String {
    format!(
        "{},{},{},{},{},{:.6},{},{},{}",
        o.role,
        o.n_slots,
        o.n_events,
        o.sifted_len,
        o.sampled_bits,
        o.qber_estimate,
        o.leaked_bits,
        o.final_key.as_ref().map(KeyBuffer::len).unwrap_or(0),
        o.aborted.as_ref().map(|(s, _)| s.name()).unwrap_or("none"),
    )
}

fn suffixed(path: &Path, role: &str) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".");
    os.push(role);
    PathBuf::from(os)
}

fn write_key(path: &Path, key: &KeyBuffer) -> anyhow::Result<()> {
    fs::write(path, format!("{}\n", key.to_hex()))
        .with_context(|| format!("writing {}", path.display()))
}

fn hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
