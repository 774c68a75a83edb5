use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flashe_cli::bench::{self, BenchScheme, BenchSpec};
use flashe_cli::verify::{self, Suite};
use flashe_cli::{resolve_seed, CliError, SEED_ENV};
use flashe_fedsim::report::{write_csv, write_jsonl};
use flashe_fedsim::{Federation, FederationConfig};

#[derive(Parser)]
#[command(name = "flashe", version, about = "Symmetric additively homomorphic masking for federated aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchFormat {
    Json,
    Csv,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Time encryption, aggregation and decryption per scheme and vector size.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [16384usize, 65536, 262144])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "flashe-double,flashe-single,paillier,paillier-batched")]
        schemes: Vec<BenchScheme>,
        #[arg(long, default_value_t = 10)]
        addends: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, value_enum, default_value = "table")]
        format: BenchFormat,
        #[arg(long, default_value_t = flashe::paillier::DEFAULT_KEY_BITS)]
        key_bits: u32,
        /// Paillier values measured before scaling to the full size.
        #[arg(long, default_value_t = 32)]
        paillier_sample: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a federation described by a TOML or JSON file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Per-round reports; CSV for a `.csv` path, JSON lines otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run built-in correctness and statistical checks.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn seed(explicit: Option<u64>) -> Result<u64, CliError> {
    resolve_seed(explicit, std::env::var(SEED_ENV).ok().as_deref())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Bench { sizes, schemes, addends, reps, format, key_bits, paillier_sample, seed: s, out } => {
            let spec = BenchSpec {
                sizes,
                schemes,
                addends,
                reps,
                key_bits,
                paillier_sample,
                seed: seed(s)?,
                ..BenchSpec::default()
            };
            let rows = bench::run_bench(&spec)?;
            let mut w = output(out.as_deref())?;
            match format {
                BenchFormat::Json => {
                    serde_json::to_writer_pretty(&mut w, &rows)?;
                    writeln!(w)?;
                }
                BenchFormat::Csv => bench::write_csv(&rows, &mut w)?,
                BenchFormat::Table => write!(w, "{}", bench::render_table(&rows))?,
            }
            w.flush()?;
        }
        Command::Simulate { config, out, rounds, seed: s } => {
            if !config.is_file() {
                return Err(CliError::Usage(format!("config file {} does not exist", config.display())));
            }
            let mut cfg = FederationConfig::from_path(&config)?;
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if s.is_some() || std::env::var_os(SEED_ENV).is_some() {
                cfg.seed = seed(s)?;
            }
            cfg.validate()?;
            let reports = Federation::new(cfg)?.run()?;
            let csv = out.as_deref().and_then(Path::extension).is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let mut w = output(out.as_deref())?;
            if csv {
                write_csv(&reports, &mut w)?;
            } else {
                write_jsonl(&reports, &mut w)?;
            }
            w.flush()?;
        }
        Command::Verify { suite, seed: s } => {
            let suite: Suite = suite.parse()?;
            let results = verify::run(suite, seed(s)?)?;
            let mut failed = Vec::new();
            for r in &results {
                println!("{:<10} {} {}", r.suite.name(), if r.passed { "PASS" } else { "FAIL" }, r.detail);
                if !r.passed {
                    failed.push(r.suite.name());
                }
            }
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flashe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
