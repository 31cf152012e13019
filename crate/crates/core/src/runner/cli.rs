//! Command-line entry point.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::ExperimentConfig;
use super::experiment::{
    arm_dir, collect_summary, read_json, run_arm, run_experiment, run_forge, write_json, Workbench,
};
use crate::error::{Error, Result};
use crate::evalkit::{read_problem_log, write_report_csv, PassKReport, SampleRecord};
use crate::policy::checkpoint;

#[derive(Debug, Parser)]
#[command(name = "zoomlab", about = "Staged cold-start + agentic RL experiments on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    pub out: PathBuf,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forge the text QA corpora only.
    Forge,
    /// Train and evaluate a single arm.
    Train {
        #[arg(long)]
        arm: String,
    },
    /// Run every arm of the matrix.
    Run,
    /// Evaluate a frozen checkpoint on the held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Mask zoom actions during evaluation.
        #[arg(long)]
        no_tools: bool,
    },
    /// Regenerate pass@k CSVs and the summary from logged outputs.
    Report {
        /// A single problems log; writes `passk.csv` into `--out`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// k values; defaults to powers of two up to n.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_ks(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| k.checked_mul(2)).take_while(|&k| k <= n).collect()
}

/// pass@k report recomputed from a problems log.
pub fn report_from_log(path: &Path, ks: Option<&[usize]>) -> Result<PassKReport> {
    let logs = read_problem_log(path)?;
    let n = logs.iter().map(|l| l.n).min().unwrap_or(0);
    if n == 0 {
        return Err(Error::Format(format!("{}: no problems with samples", path.display())));
    }
    let ks = ks.map_or_else(|| default_ks(n), <[usize]>::to_vec);
    let records = logs
        .into_iter()
        .map(|l| SampleRecord {
            problem: l.problem,
            n: l.n,
            c: l.c,
        })
        .collect();
    PassKReport::from_records(records, &ks, f64::NAN, n, 0)
}

fn regenerate(out: &Path, ks: Option<&[usize]>) -> Result<()> {
    let cfg = ExperimentConfig::load(&out.join("config.toml"))?;
    for arm in &cfg.arms {
        let dir = arm_dir(out, &arm.name);
        let log = dir.join("problems.jsonl");
        if !log.exists() {
            continue;
        }
        let mut report = report_from_log(&log, Some(ks.unwrap_or(&cfg.eval.ks)))?;
        let old = dir.join("passk.json");
        if old.exists() {
            let prev: PassKReport = read_json(&old)?;
            report.temperature = prev.temperature;
            report.seed = prev.seed;
        }
        write_report_csv(&report, &dir.join("passk.csv"))?;
        write_json(&report, &old)?;
    }
    let summary = collect_summary(out)?;
    summary.write(out)?;
    print!("{}", summary.table());
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Forge => {
            let cfg = load_config(cli)?;
            for (name, n) in run_forge(&cfg, &cli.out)? {
                println!("{name}: {n} records");
            }
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let summary = run_experiment(&cfg, &cli.out)?;
            print!("{}", summary.table());
        }
        Command::Train { arm } => {
            let cfg = load_config(cli)?;
            let arm = cfg.arm(arm)?.clone();
            let bench = Workbench::new(&cfg)?.with_corpus_dir(&cli.out.join("corpus"));
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            let cfg_path = cli.out.join("config.toml");
            std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
            let outcome = run_arm(&bench, &arm, &arm_dir(&cli.out, &arm.name))?;
            let summary = super::experiment::Summary {
                seed: cfg.seed,
                arms: vec![outcome],
            };
            print!("{}", summary.table());
        }
        Command::Eval { checkpoint: ckpt, no_tools } => {
            let cfg = load_config(cli)?;
            let params = checkpoint::load(ckpt)?;
            let bench = Workbench::new(&cfg)?;
            if params.dims != bench.init.dims {
                return Err(Error::Config(format!(
                    "checkpoint shape {:?} does not match the configured policy {:?}",
                    params.dims, bench.init.dims
                )));
            }
            let eval = bench.evaluate(&params, !no_tools)?;
            std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
            eval.write(&cli.out)?;
            print!("{}", crate::evalkit::report_csv(&eval.passk));
        }
        Command::Report { log, ks } => match log {
            Some(log) => {
                let report = report_from_log(log, ks.as_deref())?;
                std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
                write_report_csv(&report, &cli.out.join("passk.csv"))?;
                print!("{}", crate::evalkit::report_csv(&report));
            }
            None => regenerate(&cli.out, ks.as_deref())?,
        },
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
