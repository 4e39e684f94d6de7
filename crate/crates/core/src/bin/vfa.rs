use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rvv_flash::harness::{
    self, experr, gen, matrix_file, parse_sweep_config, render, render_one, Implementation, InputSource, ReportFormat,
    RunRequest, EXIT_CHECK_FAILED,
};
use rvv_flash::{Error, ExpMode, QuantSpec, Result};

#[derive(Parser)]
#[command(name = "vfa", version, about = "Vectorized attention kernels on a counted vector engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded uniform [-1, 1) matrix file.
    Gen {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one implementation and report its counters and errors.
    Run(RunArgs),
    /// Run a JSON array of run requests and emit one report row per request.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Measure the approximate exponential against exp over [-15, 0].
    Experr {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long = "impl", value_enum)]
    implementation: Implementation,
    #[arg(long, value_enum, default_value_t = ExpMode::Exact)]
    exp: ExpMode,
    #[arg(long)]
    seq_len: usize,
    #[arg(long)]
    head_dim: usize,
    #[arg(long, default_value_t = 32)]
    vlen: usize,
    #[arg(long, default_value_t = 1)]
    br: usize,
    #[arg(long, default_value_t = 1)]
    unroll: usize,
    /// Multiply scores by 1/sqrt(head_dim).
    #[arg(long)]
    scale: bool,
    #[arg(long, conflicts_with_all = ["q", "k", "v"])]
    seed: Option<u64>,
    #[arg(long, requires_all = ["k", "v"])]
    q: Option<PathBuf>,
    /// Key matrix, N x d (transposed on ingestion).
    #[arg(long, requires_all = ["q", "v"])]
    k: Option<PathBuf>,
    #[arg(long, requires_all = ["q", "k"])]
    v: Option<PathBuf>,
    /// Output matrix file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
    /// Compare against the binary64 reference; exit 2 when out of tolerance.
    #[arg(long)]
    check: bool,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Add wall time to the report.
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn request(self) -> RunRequest {
        let input = match (self.q, self.k, self.v) {
            (Some(q), Some(k), Some(v)) => InputSource::Files { q, k, v },
            _ => InputSource::Seed(self.seed.unwrap_or(0)),
        };
        RunRequest {
            implementation: self.implementation,
            exp: self.exp,
            seq_len: self.seq_len,
            head_dim: self.head_dim,
            vlen: self.vlen,
            br: self.br,
            unroll: self.unroll,
            scale: self.scale,
            input,
            check: self.check,
            tolerance: self.tolerance,
            timing: self.timing,
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Gen { rows, cols, seed, out } => {
            matrix_file::write(&out, &gen::generate(rows, cols, seed)?)?;
            Ok(0)
        }
        Command::Run(args) => {
            let (out, report, format) = (args.out.clone(), args.report.clone(), args.format);
            let outcome = harness::run(&args.request())?;
            if let Some(out) = &out {
                matrix_file::write(out, &outcome.output)?;
            }
            emit(report.as_deref(), &render_one(&outcome.report, format)?)?;
            if outcome.report.check_failed() {
                eprintln!("vfa: accuracy check failed");
                return Ok(EXIT_CHECK_FAILED as u8);
            }
            Ok(0)
        }
        Command::Sweep { config, report, format } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
            let reports = harness::sweep(&parse_sweep_config(&text)?);
            emit(report.as_deref(), &render(&reports, format)?)?;
            let failed_check = reports.iter().any(|r| r.check_failed());
            for r in &reports {
                if let Some(e) = r.error() {
                    eprintln!("vfa: {e}");
                }
            }
            Ok(if failed_check { EXIT_CHECK_FAILED as u8 } else { 0 })
        }
        Command::Experr { samples, seed, report } => {
            let r = experr::experr(samples, seed, &QuantSpec::default())?;
            let mut text = serde_json::to_string_pretty(&r).map_err(|e| Error::Io(e.to_string()))?;
            text.push('\n');
            emit(report.as_deref(), &text)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("vfa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
