use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ppir::analysis::{rate_report, rate_table_csv};
use ppir::audit::{
    audit_exact, audit_statistical, AuditError, AuditVerdict, AuditedProtocol, Mutant,
    StatisticalConfig, UsiScheme,
};
use ppir::harness::{
    replay, run_experiment, run_session, smallest_field, ExperimentConfig, HarnessError,
};
use ppir::model::{DatabaseLayout, InstanceParams, MessageStore};
use ppir::oracle::{
    generic_length_bound, min_code_length_bruteforce, rank_lower_bound_certificate,
    restricted_lower_bound_t, PicodInstance, DEFAULT_CANDIDATE_CAP, DEFAULT_CLIENT_CAP,
};
use ppir::seed::derive_seed;

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "ppir",
    version,
    about = "Pliable private information retrieval experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditModeArg {
    Exact,
    Statistical,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutantArg {
    VDependentSelection,
    SDependentParityRows,
    VAppendedMetadata,
    VTaggedQuery,
}

impl From<MutantArg> for Mutant {
    fn from(m: MutantArg) -> Self {
        match m {
            MutantArg::VDependentSelection => Mutant::VDependentSelection,
            MutantArg::SDependentParityRows => Mutant::SDependentParityRows,
            MutantArg::VAppendedMetadata => Mutant::VAppendedMetadata,
            MutantArg::VTaggedQuery => Mutant::VTaggedQuery,
        }
    }
}

#[derive(clap::Args)]
struct InstanceArgs {
    /// Class sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    mus: Vec<usize>,
    /// Side-information counts per class.
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    /// Field size; defaults to the smallest field the scheme needs.
    #[arg(long)]
    q: Option<u32>,
    /// Symbols per message.
    #[arg(long = "symbol-len", default_value_t = 1)]
    symbol_len: usize,
}

impl InstanceArgs {
    fn params(&self) -> Result<InstanceParams, String> {
        let q = match self.q {
            Some(q) => q,
            None => {
                let longest = self
                    .mus
                    .iter()
                    .zip(&self.ks)
                    .map(|(&m, &k)| (2 * m).saturating_sub(k))
                    .max();
                smallest_field(longest.unwrap_or(2))
            }
        };
        InstanceParams::new(self.mus.clone(), self.ks.clone(), self.symbol_len, q)
            .map_err(|e| e.to_string())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        /// Directory for report.json and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Closed-form rates for an instance.
    Capacity {
        #[arg(long, value_delimiter = ',', required = true)]
        mus: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        lambda: usize,
        #[arg(long, default_value_t = 1)]
        nu: usize,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Shortest linear code by exhaustive search, with its rank certificate.
    Oracle {
        #[arg(long, value_delimiter = ',', required = true)]
        mus: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        q: u32,
        /// Classes each client must learn from; defaults to all of them.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long = "l-max")]
        l_max: Option<usize>,
        #[arg(long, default_value_t = 1 << 30)]
        budget: u64,
    },
    /// Privacy audit of the shipped scheme or a mutant.
    Audit {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, value_enum, default_value = "exact")]
        mode: AuditModeArg,
        #[arg(long, default_value_t = 1)]
        lambda: usize,
        #[arg(long, value_enum)]
        mutant: Option<MutantArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Exact mode: cap on enumerated answers.
        #[arg(long, default_value_t = ppir::audit::DEFAULT_EXACT_CAP)]
        cap: usize,
    },
    /// Decode saved query, answer and side-information files.
    Replay {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        answer: PathBuf,
        #[arg(long)]
        side: PathBuf,
    },
    /// Run one exchange and save its wire files for replay.
    Session {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value_t = 1)]
        lambda: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Assertion(String),
    Config(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(EXIT_FAIL)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            seed,
            trials,
            out,
            format,
        } => run(&config, seed, trials, out, format),
        Command::Capacity {
            mus,
            ks,
            lambda,
            nu,
            format,
        } => {
            let report =
                rate_report(&mus, &ks, lambda, nu).map_err(|e| Failure::Config(e.to_string()))?;
            match format {
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                ),
                Format::Csv => print!("{}", rate_table_csv(&[report])),
            }
            Ok(())
        }
        Command::Oracle {
            mus,
            ks,
            q,
            t,
            l_max,
            budget,
        } => oracle(&mus, &ks, q, t, l_max, budget),
        Command::Audit {
            instance,
            mode,
            lambda,
            mutant,
            seed,
            trials,
            cap,
        } => audit(&instance, mode, lambda, mutant, seed, trials, cap),
        Command::Replay {
            query,
            answer,
            side,
        } => {
            let result =
                replay(&read(&query)?, &read(&answer)?, &read(&side)?).map_err(|e| match e {
                    ppir::protocol::ProtocolError::VersionMismatch { .. } => {
                        Failure::Config(e.to_string())
                    }
                    other => Failure::Assertion(other.to_string()),
                })?;
            println!("{}", result.to_json());
            Ok(())
        }
        Command::Session {
            instance,
            lambda,
            seed,
            out,
        } => {
            let params = instance.params().map_err(Failure::Config)?;
            let session = run_session(&params, lambda, seed)?;
            fs::create_dir_all(&out)
                .map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
            for (name, body) in [
                ("query.json", session.query.to_json()),
                ("answer.json", session.answer.to_json()),
                ("side.json", session.held.to_json()),
                ("result.json", session.result.to_json()),
            ] {
                let path = out.join(name);
                fs::write(&path, body)
                    .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            }
            println!("{}", session.result.to_json());
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(
    path: &Path,
    seed: Option<u64>,
    trials: Option<u64>,
    out: Option<PathBuf>,
    format: Format,
) -> Result<(), Failure> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(trials) = trials {
        config.trials = trials;
    }
    if out.is_some() {
        config.output = out;
    }
    let report = run_experiment(&config)?;
    if let Some(dir) = &config.output {
        report.write(dir)?;
    }
    match format {
        Format::Csv => print!("{}", report.summary_csv()),
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report.instances).expect("serializes")
        ),
    }
    if report.passed {
        Ok(())
    } else {
        let first = report
            .failures
            .first()
            .map(|r| serde_json::to_string(r).expect("record serializes"))
            .unwrap_or_else(|| "an oracle or audit check failed".into());
        Err(Failure::Assertion(first))
    }
}

fn oracle(
    mus: &[usize],
    ks: &[usize],
    q: u32,
    t: Option<usize>,
    l_max: Option<usize>,
    budget: u64,
) -> Result<(), Failure> {
    let t = t.unwrap_or(mus.len());
    let instance = PicodInstance::new(mus, ks, t, q).map_err(|e| Failure::Config(e.to_string()))?;
    let bound = restricted_lower_bound_t(&instance);
    let f: usize = mus.iter().sum();
    let kappa: usize = ks.iter().sum();
    let l_max = l_max.unwrap_or(bound);
    let outcome = min_code_length_bruteforce(&instance, l_max, u128::from(budget))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let certificate = match &outcome.witness {
        Some(g) => Some(
            rank_lower_bound_certificate(g, &instance, DEFAULT_CLIENT_CAP, DEFAULT_CANDIDATE_CAP)
                .map_err(|e| Failure::Assertion(e.to_string()))?,
        ),
        None => None,
    };
    let json = serde_json::json!({
        "lower_bound": bound,
        "generic_bound": generic_length_bound(f, kappa, t),
        "search": outcome,
        "certificate": certificate,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&json).expect("serializes")
    );
    match outcome.min_length {
        Some(l) if l < bound => Err(Failure::Assertion(format!(
            "length {l} beats the lower bound {bound}"
        ))),
        None if l_max >= bound => Err(Failure::Assertion(format!(
            "no code of length <= {l_max} found"
        ))),
        _ => Ok(()),
    }
}

fn audit(
    instance: &InstanceArgs,
    mode: AuditModeArg,
    lambda: usize,
    mutant: Option<MutantArg>,
    seed: u64,
    trials: u64,
    cap: usize,
) -> Result<(), Failure> {
    let params = instance.params().map_err(Failure::Config)?;
    let scheme = UsiScheme { lambda };
    let mutant = mutant.map(Mutant::from);
    let protocol: &dyn AuditedProtocol = match &mutant {
        Some(m) => m,
        None => &scheme,
    };
    let verdict: Result<AuditVerdict, AuditError> = match mode {
        AuditModeArg::Exact => {
            let setup = || -> Result<MessageStore, ppir::model::ModelError> {
                let layout = DatabaseLayout::build(&params, derive_seed(seed, "cli-audit", 0))?;
                MessageStore::random(&layout, derive_seed(seed, "cli-audit", 1))
            };
            let store = setup().map_err(|e| Failure::Config(e.to_string()))?;
            audit_exact(protocol, &store, cap)
        }
        AuditModeArg::Statistical => audit_statistical(
            protocol,
            &params,
            &StatisticalConfig {
                trials,
                seed,
                ..Default::default()
            },
        ),
    };
    let verdict = verdict.map_err(|e| Failure::Config(e.to_string()))?;
    println!("{}", verdict.to_json());
    if verdict.passed() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!(
            "{} failed the privacy audit",
            verdict.protocol
        )))
    }
}
