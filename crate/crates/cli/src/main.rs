//! `reident`: re-identification audits over de-identified hospital discharge data.
//!
//! Exit status is 0 on success, 1 on a data error (bad rows, unreadable or malformed
//! input) and 2 on a usage error (bad flags, missing files, invalid configuration).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Format, UsageError};
use reident_core::FieldSet;

#[derive(Debug, Parser)]
#[command(
    name = "reident",
    version,
    about = "Re-identification risk audits for hospital discharge data"
)]
struct Cli {
    /// TOML run configuration; command-line flags win over it.
    #[arg(long, global = true, env = "REIDENT_CONFIG", value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for the audit loop (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Report style on standard output.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Inputs {
    /// Hospital discharge records CSV.
    #[arg(long, value_name = "CSV")]
    hospital: Option<PathBuf>,
    /// External-knowledge records CSV.
    #[arg(long, value_name = "CSV")]
    external: Option<PathBuf>,
    /// Public-records table (name, dob, zip_history, age_hint) used for enrichment.
    #[arg(long, value_name = "CSV")]
    public_records: Option<PathBuf>,
    /// Extra incident_type,prefixes rows on top of the built-in incident map.
    #[arg(long, value_name = "CSV")]
    incident_map: Option<PathBuf>,
    /// Hospital code,description dictionary for the hospital_names column.
    #[arg(long, value_name = "CSV")]
    hospital_dictionary: Option<PathBuf>,
    /// Hospital alias,codes groups for the hospital_names column.
    #[arg(long, value_name = "CSV")]
    hospital_groups: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct Matching {
    /// Fields relaxation may suppress, e.g. "zip;age;hospital".
    #[arg(long, value_name = "FIELDS")]
    droppable: Option<FieldSet>,
    /// Most fields suppressed at once: 0, 1 or 2.
    #[arg(long, value_name = "N")]
    max_drop: Option<u8>,
    /// Days of tolerance on each side of the admission window.
    #[arg(long, value_name = "DAYS")]
    slack_days: Option<u32>,
    /// Sensitive ICD9 prefixes, one per line.
    #[arg(long, value_name = "FILE")]
    sensitive: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate input files, listing every bad row.
    Ingest {
        #[command(flatten)]
        inputs: Inputs,
        /// Echo every parsed record as JSON.
        #[arg(long)]
        verbose: bool,
    },
    /// Match every external record and write the case table and summary.
    Audit {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        matching: Matching,
        /// Directory for summary.json and cases.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Apply Safe Harbor generalization to a hospital dataset.
    Transform {
        #[arg(long, value_name = "CSV")]
        hospital: Option<PathBuf>,
        /// zip3,population table.
        #[arg(long, value_name = "CSV")]
        population: Option<PathBuf>,
        /// Output CSV.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// k-anonymity histogram and uniqueness over a quasi-identifier.
    Stats {
        /// Hospital records CSV or a dob,gender,zip people CSV (defaults to the
        /// configured hospital file).
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
        /// Comma-separated fields, e.g. "dob,gender,zip".
        #[arg(long, value_name = "FIELDS")]
        qi: Option<String>,
    },
    /// Generate a seeded synthetic corpus with a ground-truth manifest.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "N")]
        n_hospital_records: Option<usize>,
        #[arg(long, value_name = "N")]
        n_externals: Option<usize>,
        #[arg(long, value_name = "N")]
        n_planted_unique: Option<usize>,
        #[arg(long, value_name = "N")]
        n_planted_ambiguous: Option<usize>,
        #[arg(long, value_name = "N")]
        n_planted_nomatch: Option<usize>,
    },
    /// Match one external record and print per-field verdicts.
    Match {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        matching: Matching,
        /// The external record to examine.
        #[arg(long, value_name = "ID")]
        ext_id: String,
        /// Also show verdicts against these hospital records.
        #[arg(long, value_name = "ID")]
        record_id: Vec<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = config::pick(cli.threads, &file.threads) {
        if n == 0 {
            return Err(config::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let format = config::pick(cli.format, &file.format).unwrap_or_default();
    let ctx = commands::Ctx { file, format };
    match cli.command {
        Command::Ingest { inputs, verbose } => commands::ingest(&ctx, inputs, verbose),
        Command::Audit { inputs, matching, out } => commands::audit(&ctx, inputs, matching, out),
        Command::Transform {
            hospital,
            population,
            out,
        } => commands::transform(&ctx, hospital, population, out),
        Command::Stats { input, qi } => commands::stats(&ctx, input, qi),
        Command::Synth {
            out,
            seed,
            n_hospital_records,
            n_externals,
            n_planted_unique,
            n_planted_ambiguous,
            n_planted_nomatch,
        } => commands::synth(
            &ctx,
            out,
            commands::SynthOverrides {
                seed,
                n_hospital_records,
                n_externals,
                n_planted_unique,
                n_planted_ambiguous,
                n_planted_nomatch,
            },
        ),
        Command::Match {
            inputs,
            matching,
            ext_id,
            record_id,
        } => commands::match_one(&ctx, inputs, matching, &ext_id, &record_id),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<reident_core::Error>() {
        Some(
            reident_core::Error::Config(_)
            | reident_core::Error::UnknownQiField(..)
            | reident_core::Error::QiFieldUnavailable(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
