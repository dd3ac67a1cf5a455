use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use meanfield_cli::run::{exit_code, run_config_file, verdict_code, EXIT_FAIL, EXIT_INVALID, EXIT_OK};
use meanfield_cli::{report, selftest};

#[derive(Parser)]
#[command(name = "meanfield", version, about = "Mean-field training dynamics experiments")]
struct Cli {
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Summarises a run directory.
    Report { dir: PathBuf },
    /// Runs the built-in oracle suite.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    }
    let code = match cli.command {
        Command::Run { config } => match run_config_file(&config, cli.seed, cli.output) {
            Ok((m, dir)) => {
                println!("{} -> {} ({:?})", m.kind, dir.display(), m.verdict);
                verdict_code(m.verdict)
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                exit_code(&e)
            }
        },
        Command::Report { dir } => match report::render(&dir) {
            Ok(text) => {
                print!("{text}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_INVALID
            }
        },
        Command::Selftest => match selftest::selftest(cli.seed.unwrap_or(0)) {
            Ok(checks) => {
                let mut ok = true;
                for c in &checks {
                    println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                    ok &= c.pass;
                }
                if ok {
                    EXIT_OK
                } else {
                    EXIT_FAIL
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e.into())
            }
        },
    };
    ExitCode::from(code)
}
