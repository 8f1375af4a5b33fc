use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aplab::cli::{self, CommandSpec, OutputFormat};
use aplab::error::Error;

/// Arithmetic-progression counting laboratory over p-biased random subsets
/// of Z/nZ.
///
/// Default parameters reproduce the flagship experiment: n = 101, k = 3,
/// p = 1/2, one million samples. Every run writes a `.record.json` next to
/// its primary artifact with the resolved configuration; re-running with the
/// recorded settings reproduces the artifact byte for byte.
#[derive(Parser)]
#[command(name = "aplab", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Modulus of Z/nZ.
    #[arg(long, default_value_t = 101)]
    n: usize,
    /// Progression length (>= 3).
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Inclusion probability, strictly inside (0, 1).
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Number of Monte Carlo samples.
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    /// Base RNG seed; sample j draws from substream (seed, j).
    #[arg(long, default_value_t = 271_828)]
    seed: u64,
    /// Worker shard count (0 = one per hardware thread). Results do not
    /// depend on it.
    #[arg(long, default_value_t = 0)]
    shards: usize,
    /// Output path prefix; extensions are appended per artifact.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Format of the primary bulk artifact (structured reports are always
    /// JSON).
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Override the num_samples * n^2 resource budget.
    #[arg(long)]
    budget: Option<u128>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Sample subsets, count progressions, write the count histogram.
    Sample(CommonArgs),
    /// Record normalized degree components per sample (costs ~2^k times a
    /// plain count; reduce --samples accordingly).
    Decompose {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Exact sigma_l normalizers and variance aggregates as JSON.
    Sigma(CommonArgs),
    /// Lattice model constants (C0, C1, C2, G, a0, x0, delta, ...) as JSON.
    Lattice(CommonArgs),
    /// Evaluate the periodic profile f_delta: CSV grid plus extremal record.
    Theta {
        #[command(flatten)]
        common: CommonArgs,
        /// Profile parameter delta (default 1/9, the k = 3, p = 1/2 limit).
        #[arg(long)]
        delta: Option<f64>,
        /// Grid points across one period.
        #[arg(long, default_value_t = 1001)]
        grid: usize,
    },
    /// Run the Monte Carlo and scan the pmf against the Gaussian null.
    Scan {
        #[command(flatten)]
        common: CommonArgs,
        /// Scan window halfwidth in units of sigma (at most 3).
        #[arg(long, default_value_t = 2.0)]
        window: f64,
    },
    /// Write the heuristic lattice-mixture pmf over the central window.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Window halfwidth in units of sigma.
        #[arg(long, default_value_t = 2.0)]
        window: f64,
    },
    /// Scan, alpha-profile contrast, LCLT-null comparison, and the heuristic
    /// pmf distance, in one JSON report.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Window halfwidth in units of sigma.
        #[arg(long, default_value_t = 2.0)]
        window: f64,
    },
    /// Run the cross-module invariant suite (exit 3 on failure).
    Selftest,
}

fn build_spec(cmd: &Command) -> CommandSpec {
    use aplab::cli::Subcommand as Sub;
    let (sub, common, delta, grid, window) = match cmd {
        Command::Sample(c) => (Sub::Sample, Some(c), None, None, None),
        Command::Decompose { common } => (Sub::Decompose, Some(common), None, None, None),
        Command::Sigma(c) => (Sub::Sigma, Some(c), None, None, None),
        Command::Lattice(c) => (Sub::Lattice, Some(c), None, None, None),
        Command::Theta { common, delta, grid } => {
            (Sub::Theta, Some(common), *delta, Some(*grid), None)
        }
        Command::Scan { common, window } => (Sub::Scan, Some(common), None, None, Some(*window)),
        Command::Predict { common, window } => {
            (Sub::Predict, Some(common), None, None, Some(*window))
        }
        Command::Compare { common, window } => {
            (Sub::Compare, Some(common), None, None, Some(*window))
        }
        Command::Selftest => (Sub::Selftest, None, None, None, None),
    };
    let mut spec = CommandSpec::new(sub);
    if let Some(c) = common {
        spec.n = c.n;
        spec.k = c.k;
        spec.p = c.p;
        spec.samples = if sub == Sub::Decompose && c.samples == 1_000_000 {
            // Component recording is ~2^k times costlier than counting;
            // default to a tenth of the flagship sample budget.
            100_000
        } else {
            c.samples
        };
        spec.seed = c.seed;
        spec.shards = c.shards;
        if let Some(out) = &c.out {
            spec.out = out.clone();
        }
        spec.format = match c.format {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
        spec.budget = c.budget;
    }
    if let Some(d) = delta {
        spec.delta = Some(d);
    }
    if let Some(g) = grid {
        spec.grid = g;
    }
    if let Some(w) = window {
        spec.window_sigmas = w;
    }
    spec
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ResourceGuard(_) => 2,
        Error::SelftestFailed { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are normal exits; anything else is a
            // parameter error (exit 1, keeping 2 for the resource guard).
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let spec = build_spec(&cli.command);
    match cli::dispatch(&spec) {
        Ok(record) => {
            for path in &record.outputs {
                eprintln!("wrote {path}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
