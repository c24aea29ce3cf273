//! `das`: operator front end for dynamic accountable storage.

mod bench;
mod commands;
mod error;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use das_core::protocol::{Config, DEFAULT_NUM_HASHES};
use serde_json::Value;

use commands::{unwrap_keys, HexKey, InitArgs, Output};
use error::{CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "das", version, about = "Outsource blocks, audit them, and recover lost or corrupted ones")]
struct Cli {
    /// Emit one JSON line per operation on stderr.
    #[arg(long, value_enum, global = true)]
    log: Option<LogFormat>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Jsonl,
}

#[derive(Args)]
struct DirArg {
    /// Working directory created by `init`.
    #[arg(long)]
    dir: PathBuf,
}

#[derive(Args)]
struct KeyArg {
    /// Key as hex.
    #[arg(long)]
    key: HexKey,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, run setup, and persist both sides.
    Init {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: usize,
        /// Leaf capacity of the server tree; even.
        #[arg(long)]
        beta: usize,
        /// Security parameter; the RSA modulus has 2*tau bits.
        #[arg(long, default_value_t = 512)]
        tau: usize,
        #[arg(long = "block-size", default_value_t = 256)]
        block_size: usize,
        #[arg(long, default_value_t = 16)]
        key_width: usize,
        #[arg(long, default_value_t = DEFAULT_NUM_HASHES)]
        q: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        dir: DirArg,
    },
    /// Store a new block.
    Put {
        #[command(flatten)]
        dir: DirArg,
        #[command(flatten)]
        key: KeyArg,
        /// File holding exactly one block.
        #[arg(long)]
        block_file: PathBuf,
    },
    /// Fetch a block, recovering it first if it is damaged.
    Get {
        #[command(flatten)]
        dir: DirArg,
        #[command(flatten)]
        key: KeyArg,
        /// Write the block here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove a block.
    Delete {
        #[command(flatten)]
        dir: DirArg,
        #[command(flatten)]
        key: KeyArg,
    },
    /// Apply a fault plan to the stored records.
    Corrupt {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Client audit of up to delta keys; also recovers any damaged blocks.
    Audit {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long, value_delimiter = ',', required = true)]
        keys: Vec<HexKey>,
        /// Write recovered blocks as `<hex key>.blk`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Server-side recovery using only public information; read-only.
    ServerAudit {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long, value_delimiter = ',')]
        keys: Vec<HexKey>,
    },
    /// Whole-store challenge: recover every lost or corrupted block.
    Challenge {
        #[command(flatten)]
        dir: DirArg,
        /// Write recovered blocks as `<hex key>.blk`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Scan the store and report corrupted and missing records.
    Verify {
        #[command(flatten)]
        dir: DirArg,
    },
    /// Server audit followed by writing the recovered records back.
    Restore {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long, value_delimiter = ',')]
        keys: Vec<HexKey>,
    },
    /// Sizes of the server tree and client state.
    Stats {
        #[command(flatten)]
        dir: DirArg,
    },
    /// Print experiment tables as CSV.
    #[command(subcommand)]
    Bench(Bench),
}

#[derive(Subcommand)]
enum Bench {
    /// Peel success rate of delta freshly tagged triples.
    ///
    /// Columns: delta, q, cells (table size), trials, successes,
    /// success_rate (successes / trials, four decimals).
    Peel {
        #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
        delta_list: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_NUM_HASHES)]
        q: usize,
        #[arg(long, default_value_t = 128)]
        tau: usize,
        #[arg(long = "block-size", default_value_t = 64)]
        block_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tree size, proof size and rebuild cost against n and beta.
    ///
    /// Columns: n, beta, delta, nodes, node_bound (4*ceil(n/beta)+1),
    /// leaves, max_depth, table_bytes (node tables), snapshot_bytes,
    /// client_state_bytes (without the key list), proof_bytes (serialized
    /// challenge table), rebuilt_m1/m4/m16 (mean leaves rebuilt when
    /// excluding 1, 4 or 16 random keys; NA when n is smaller).
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "32,64,256")]
        beta: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        delta: usize,
        #[arg(long, default_value_t = 128)]
        tau: usize,
        #[arg(long = "block-size", default_value_t = 64)]
        block_size: usize,
        #[arg(long, default_value_t = 20)]
        cost_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Init { .. } => "init",
            Command::Put { .. } => "put",
            Command::Get { .. } => "get",
            Command::Delete { .. } => "delete",
            Command::Corrupt { .. } => "corrupt",
            Command::Audit { .. } => "audit",
            Command::ServerAudit { .. } => "server-audit",
            Command::Challenge { .. } => "challenge",
            Command::Verify { .. } => "verify",
            Command::Restore { .. } => "restore",
            Command::Stats { .. } => "stats",
            Command::Bench(Bench::Peel { .. }) => "bench-peel",
            Command::Bench(Bench::Scaling { .. }) => "bench-scaling",
        }
    }
}

fn run(command: Command, out: &mut Output) -> Result<(), CliError> {
    match command {
        Command::Init {
            n,
            delta,
            beta,
            tau,
            block_size,
            key_width,
            q,
            seed,
            dir,
        } => {
            let cfg = Config {
                delta,
                num_hashes: q,
                beta,
                tau,
                key_width,
                block_width: block_size,
            };
            commands::init(&InitArgs { n, cfg, seed, dir: dir.dir }, out)
        }
        Command::Put { dir, key, block_file } => commands::put(&dir.dir, key.key.0, &block_file, out),
        Command::Get { dir, key, out: dest } => commands::get(&dir.dir, &key.key.0, dest.as_deref(), out),
        Command::Delete { dir, key } => commands::delete(&dir.dir, &key.key.0, out),
        Command::Corrupt { dir, plan } => commands::corrupt(&dir.dir, &plan, out),
        Command::Audit { dir, keys, out_dir } => commands::audit(&dir.dir, &unwrap_keys(keys), out_dir.as_deref(), out),
        Command::ServerAudit { dir, keys } => commands::server_audit(&dir.dir, &unwrap_keys(keys), out),
        Command::Challenge { dir, out_dir } => commands::challenge(&dir.dir, out_dir.as_deref(), out),
        Command::Verify { dir } => commands::verify(&dir.dir, out),
        Command::Restore { dir, keys } => commands::restore(&dir.dir, &unwrap_keys(keys), out),
        Command::Stats { dir } => commands::stats(&dir.dir, out),
        Command::Bench(Bench::Peel {
            delta_list,
            trials,
            q,
            tau,
            block_size,
            seed,
        }) => {
            let args = bench::PeelArgs {
                deltas: delta_list,
                trials,
                q,
                tau,
                block_size,
                seed,
            };
            bench::peel(&args, &mut std::io::stdout().lock())
        }
        Command::Bench(Bench::Scaling {
            n,
            beta,
            delta,
            tau,
            block_size,
            cost_trials,
            seed,
        }) => {
            let args = bench::ScalingArgs {
                ns: n,
                betas: beta,
                delta,
                tau,
                block_size,
                cost_trials,
                seed,
            };
            bench::scaling(&args, &mut std::io::stdout().lock())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let op = cli.command.name();
    let start = Instant::now();
    let mut out = Output::default();
    let result = run(cli.command, &mut out);
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("das {op}: {e}");
            e.exit_code()
        }
    };
    if cli.log.is_some() {
        let mut event = serde_json::Map::new();
        event.insert("op".into(), op.into());
        event.insert("status".into(), if code == EXIT_OK { "ok" } else { "error" }.into());
        event.insert("exit".into(), code.into());
        event.insert("elapsed_ms".into(), Value::from(start.elapsed().as_secs_f64() * 1e3));
        if let Err(e) = &result {
            event.insert("error".into(), e.to_string().into());
        }
        event.extend(out.event);
        eprintln!("{}", Value::Object(event));
    }
    ExitCode::from(code)
}
