use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roa_cli::{cmd_run, cmd_verify, demos, export, load_certificate, resolve_out, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "roa", version, about = "Learn a polynomial surrogate and certify a safe region of attraction")]
struct Cli {
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn, synthesize and verify from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Validate the config and print SDP sizes without solving.
        #[arg(long)]
        dry_run: bool,
    },
    /// Write level-set grids of a certificate.
    ExportPlot {
        #[arg(long)]
        certificate: PathBuf,
        /// Config whose `plot` section supplies the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        half_width: Option<f64>,
        /// Comma-separated x3 values for 3-D systems.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        slices: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in example (example1 or example2).
    Demo {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Re-check the SOS conditions stored in a certificate.
    Verify {
        #[arg(long)]
        certificate: PathBuf,
    },
}

fn run_config(mut cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>, dry_run: bool) -> Result<i32, CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = resolve_out(&cfg, out.as_deref());
    cmd_run(&cfg, &out, dry_run)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, out, seed, dry_run } => run_config(RunConfig::load(&config)?, out, seed, dry_run),
        Command::Demo { name, out, seed, dry_run } => {
            let cfg = demos::by_name(&name).ok_or_else(|| {
                CliError::Config(format!("unknown demo `{name}`; expected one of {}", demos::NAMES.join(", ")))
            })?;
            let out = out.unwrap_or_else(|| PathBuf::from("out").join(&name));
            run_config(cfg, Some(out), seed, dry_run)
        }
        Command::ExportPlot { certificate, config, grid, half_width, slices, out } => {
            let plot = match config {
                Some(p) => RunConfig::load(&p)?.plot,
                None => Default::default(),
            };
            let cert = load_certificate(&certificate)?;
            let out = out.unwrap_or_else(|| certificate.parent().map(|p| p.join("plot")).unwrap_or_else(|| "plot".into()));
            let s = export::export_plot(
                &cert,
                grid.unwrap_or(plot.grid),
                half_width.unwrap_or(plot.half_width),
                &slices.unwrap_or(plot.slices),
                &out,
            )?;
            println!("wrote {} grid points per file to {}", s.rows, out.display());
            Ok(0)
        }
        Command::Verify { certificate } => cmd_verify(&certificate),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
