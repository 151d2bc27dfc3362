use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use log::info;
use prepnet::data::{generate_synthetic_benchmark, SyntheticDomainSpec};
use prepnet::eval::{eval_matrix_command, eval_unseen_command, load_report, render_tables, TableFormat};
use prepnet::train::{run_pipeline, ExperimentConfig, RunOptions, SEED_ENV};
use prepnet::{Error, Result};

#[derive(Parser)]
#[command(name = "prepnet", version, about = "Train and evaluate an adversarial image-homogenizing auto-encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain benchmark and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        domains: usize,
        /// Images per domain and class.
        #[arg(long, default_value_t = 200)]
        per_domain: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "32x32", value_parser = parse_size)]
        size: (usize, usize),
        /// Also write one more domain under OUT/unseen for `eval --unseen`.
        #[arg(long)]
        hold_out: bool,
    },
    /// Run the four training stages into a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides PREPNET_SEED and the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace a completed run.
        #[arg(long)]
        force: bool,
        /// Continue an interrupted run from its last checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
    },
    /// Evaluate a completed run.
    #[command(group(ArgGroup::new("what").required(true).multiple(true).args(["matrix", "unseen"])))]
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Cross-dataset matrix for every preprocessing mode.
        #[arg(long)]
        matrix: bool,
        /// Manifest of a dataset held out from training.
        #[arg(long, value_name = "MANIFEST")]
        unseen: Option<PathBuf>,
    },
    /// Render evaluation results as RUN/report.md or RUN/report.csv.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "md")]
        format: TableFormat,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension {v:?} in {s:?}"));
    Ok((parse(h)?, parse(w)?))
}

fn synth(out: &Path, seed: u64, domains: usize, per_domain: usize, size: (usize, usize), hold_out: bool) -> Result<()> {
    let mut spec = SyntheticDomainSpec::preset(domains + 1, per_domain, size.0, size.1);
    let extra = spec.domains.pop().expect("preset has domains + 1 entries");
    let manifest = generate_synthetic_benchmark(&spec, seed, out)?;
    let config = ExperimentConfig::synthetic(domains, size);
    let path = out.join("experiment.json");
    let mut text = serde_json::to_string_pretty(&config)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    info!("wrote {} images and {}", manifest.entries.len(), path.display());
    if hold_out {
        let dir = out.join("unseen");
        let unseen = SyntheticDomainSpec {
            domains: vec![extra],
            ..spec
        };
        let mut m = generate_synthetic_benchmark(&unseen, seed.wrapping_add(1), &dir)?;
        m.dataset_names = vec![SyntheticDomainSpec::dataset_name(domains)];
        m.write(&dir.join("manifest.jsonl"))?;
        info!("wrote {} held-out images to {}", m.entries.len(), dir.display());
    }
    Ok(())
}

fn train(config: &Path, out: &Path, seed: Option<u64>, force: bool, resume: bool) -> Result<()> {
    let (experiment, raw) = ExperimentConfig::load(config)?;
    let options = RunOptions {
        seed,
        seed_env: std::env::var(SEED_ENV).ok(),
        force,
        resume,
        stop_after: None,
    };
    let output = run_pipeline(&experiment, &raw, out, &options)?;
    if let Some(m) = &output.final_metrics {
        info!(
            "seed {}: pooled test BA {:.4}, discriminator accuracy {:?} -> {:?}",
            output.seed, m.pooled.ba, m.disc_accuracy_after_warmup, m.disc_accuracy_after_adversarial
        );
    }
    Ok(())
}

fn eval(run: &Path, matrix: bool, unseen: Option<&Path>) -> Result<()> {
    if matrix {
        let report = eval_matrix_command(run)?;
        for c in &report.comparisons {
            info!(
                "{}: within {:+.2} pp, cross {:+.2} pp vs raw",
                c.candidate.preprocessing.tag(),
                c.delta_within_pp,
                c.delta_cross_pp
            );
        }
    }
    if let Some(manifest) = unseen {
        let report = eval_unseen_command(run, manifest)?;
        for row in &report.rows {
            info!("{} on {}: BA {:.4}", row.preprocessing.tag(), report.dataset, row.metrics.ba);
        }
    }
    Ok(())
}

fn report(run: &Path, format: TableFormat) -> Result<()> {
    let report = load_report(run)?;
    let name = match format {
        TableFormat::Csv => "report.csv",
        TableFormat::Markdown => "report.md",
    };
    let path = run.join(name);
    fs::write(&path, render_tables(&report, format)).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    info!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth {
            out,
            seed,
            domains,
            per_domain,
            size,
            hold_out,
        } => synth(&out, seed, domains, per_domain, size, hold_out),
        Command::Train {
            config,
            out,
            seed,
            force,
            resume,
        } => train(&config, &out, seed, force, resume),
        Command::Eval { run, matrix, unseen } => eval(&run, matrix, unseen.as_deref()),
        Command::Report { run, format } => report(&run, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
