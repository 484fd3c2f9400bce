use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dircs::cli;
use dircs::metrics::MethodId;

#[derive(Parser)]
#[command(
    name = "dircs",
    about = "Distributed reconstruction of heterogeneous signals from 1-bit compressive measurements",
    version
)]
struct Args {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario to CSV files.
    Gen {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one method on a stored scenario and evaluate per node.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// dir | sls | pls | cir
        #[arg(long)]
        method: String,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Warm-start regularization selection on a stored scenario.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated ascending grid, e.g. "0.4,0.6,0.8".
        #[arg(long)]
        grid: Option<String>,
    },
    /// Replication sweep over one scenario axis.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Socket server: run the distributed solver over loopback TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1:47200")]
        bind: String,
    },
    /// Socket worker process for one node.
    Node {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        node_id: u32,
        #[arg(long)]
        connect: String,
    },
    /// Run the verification suites.
    Check,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }
    let result = match &args.cmd {
        Cmd::Gen { config } => cli::cmd_gen(config, args.seed, &args.out),
        Cmd::Run {
            config,
            data,
            method,
            lambda,
        } => method
            .parse::<MethodId>()
            .and_then(|m| cli::cmd_run(config, data, m, *lambda, args.seed, &args.out)),
        Cmd::Tune { config, data, grid } => {
            cli::cmd_tune(config, data, grid.clone(), args.seed, &args.out)
        }
        Cmd::Sweep { plan } => cli::cmd_sweep(plan, args.seed, &args.out),
        Cmd::Serve { config, data, bind } => {
            cli::cmd_serve(config, data, bind, args.seed, &args.out)
        }
        Cmd::Node {
            config,
            data,
            node_id,
            connect,
        } => cli::cmd_node(config, data, *node_id, connect, args.seed),
        Cmd::Check => cli::cmd_check(args.seed.unwrap_or(7), Some(&args.out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
