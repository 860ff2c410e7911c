use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use khj_core::cli_io::{self, Mode, SweepParam};

#[derive(Parser)]
#[command(name = "khj", version, about = "Nonlocal Hamilton-Jacobi equations on networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check schema, network and sampled assumptions.
    Validate { path: PathBuf },
    /// Solve and write a JSON report and a solution CSV.
    Solve {
        path: PathBuf,
        #[arg(long, default_value = "auto")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Long-format CSV `param,value,metric,result` to stdout.
    Sweep {
        path: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma separated; entries like `1/50` are allowed.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "auto")]
        mode: Mode,
    },
    /// Flux-limiter checks of a solution CSV.
    Flcheck {
        path: PathBuf,
        #[arg(long)]
        solution: PathBuf,
    },
}

fn init_threads() {
    if let Some(n) = std::env::var("KHJ_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // 0 keeps rayon's hardware default
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> Result<bool, khj_core::KhjError> {
    match cli.cmd {
        Cmd::Validate { path } => {
            let v = cli_io::cmd_validate(&path);
            for m in &v.messages {
                eprintln!("{m}");
            }
            println!("{}", if v.ok { "valid" } else { "invalid" });
            Ok(v.ok)
        }
        Cmd::Solve { path, mode, out, csv } => {
            let r = cli_io::cmd_solve(&path, mode, out.as_deref(), csv.as_deref())?;
            if out.is_none() {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else if let Some(e) = &r.error {
                eprintln!("solve failed: {e}");
            } else {
                println!("theta = {:?}, residuals = {:?}", r.theta, r.residuals);
            }
            Ok(r.ok)
        }
        Cmd::Sweep { path, param, values, mode } => {
            let vals = cli_io::parse_values(&values)?;
            let rows = cli_io::cmd_sweep(&path, param, &vals, mode)?;
            cli_io::write_sweep_csv(std::io::stdout().lock(), &rows)?;
            Ok(rows.iter().all(|r| r.metric != "error"))
        }
        Cmd::Flcheck { path, solution } => {
            let r = cli_io::cmd_flcheck(&path, &solution)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(r.subsolution.passed && r.supersolution.passed)
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
