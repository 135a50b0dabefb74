mod fault_arg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ftmm::engine::{Detector, RunStatus};
use ftmm::error::JobError;
use ftmm::fault::{
    category_counts, classify_outcome, enumerate_sites, run_campaign_with_progress, run_with_faults, CampaignPlan,
    CampaignReport, FaultSpec, OutcomeClass,
};
use ftmm::job::JobFile;
use ftmm::{EngineConfig, Mode, Protection};

const EXIT_FUNCTIONAL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "ftmm", version, about = "Fault-tolerant FP16 matrix engine simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one job, optionally with injected transients.
    Run {
        /// TOML job file.
        job: PathBuf,
        /// Override the job's execution mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Transient to inject, `SITE:bit=B:cycle=C` (repeatable).
        #[arg(long = "fault")]
        faults: Vec<String>,
        /// Write a JSON run report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a seeded fault-injection campaign.
    Campaign {
        /// Job file supplying geometry, dimensions and operand seed
        /// (default: 12x4x3 engine, 12x16x16 job, operand seed 1).
        #[arg(long)]
        job: Option<PathBuf>,
        /// Protection variant; overrides the job file.
        #[arg(long)]
        variant: Option<Protection>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Number of injections.
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        /// Seed of the fault draw.
        #[arg(long, default_value_t = CampaignPlan::DEFAULT_SEED)]
        seed: u64,
        /// Report file; the report goes to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// List the fault-site catalog of an engine.
    Sites {
        #[arg(long, default_value_t = 12)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long, default_value_t = 3)]
        pipeline: usize,
        #[arg(long, default_value_t = Protection::Full)]
        variant: Protection,
        /// Print every site, not just per-category totals.
        #[arg(long)]
        list: bool,
    },
    /// Re-render a saved JSON campaign report.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
    Csv,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_USAGE, error: error.into() }
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_IO, error: error.into() }
    }
}

impl From<JobError> for Failure {
    fn from(e: JobError) -> Self {
        let code = match e {
            JobError::Io { .. } => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Failure { code, error: e.into() }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { job, mode, faults, output } => cmd_run(&job, mode, &faults, output.as_deref()),
        Command::Campaign { job, variant, mode, n, seed, output, format, workers } => {
            cmd_campaign(job.as_deref(), variant, mode, n, seed, output.as_deref(), format, workers)
        }
        Command::Sites { rows, cols, pipeline, variant, list } => cmd_sites(rows, cols, pipeline, variant, list),
        Command::Report { report, format } => cmd_report(&report, format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Write via a temporary sibling and rename, so readers never see a partial
/// file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)
        .and_then(|_| fs::rename(&tmp, path))
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::io)
}

#[derive(Serialize)]
struct RunReport {
    variant: Protection,
    mode: Mode,
    faults: Vec<FaultSpec>,
    status: RunStatus,
    outcome: OutcomeClass,
    retries: u32,
    detectors: Vec<Detector>,
    ecc_corrected: u64,
    cycles: u64,
    nominal_cycles: u64,
    z_digest: Option<String>,
    golden_digest: String,
}

fn cmd_run(job: &Path, mode: Option<Mode>, faults: &[String], output: Option<&Path>) -> CmdResult {
    let file = JobFile::load(job)?;
    let workload = file.workload(mode)?;
    let catalog = enumerate_sites(&workload.cfg);
    let specs = faults
        .iter()
        .map(|f| fault_arg::parse_fault(f, &catalog))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(Failure::usage)?;

    let trial = run_with_faults(&workload, &specs);
    let outcome = classify_outcome(&trial, &workload.golden);
    let run = trial.final_run();
    let first = &trial.runs[0];
    let report = RunReport {
        variant: workload.cfg.protection,
        mode: workload.job.mode,
        faults: specs,
        status: run.status,
        outcome: outcome.class,
        retries: outcome.retries,
        detectors: first.fault_status.detectors(),
        ecc_corrected: trial.runs.iter().map(|r| r.fault_status.ecc_corrected).sum(),
        cycles: trial.runs.iter().map(|r| r.cycles).sum(),
        nominal_cycles: workload.nominal_cycles(),
        z_digest: run.z.as_ref().map(|z| format!("{:016x}", z.digest())),
        golden_digest: format!("{:016x}", workload.golden.digest()),
    };

    println!("variant:  {} ({} mode)", report.variant, report.mode);
    println!("status:   {}", status_word(run.status));
    println!("outcome:  {}", outcome.class);
    println!("retries:  {}", report.retries);
    println!("cycles:   {} (nominal {})", report.cycles, report.nominal_cycles);
    let flags: Vec<_> = report.detectors.iter().map(|d| d.as_str()).collect();
    println!("flags:    {}", if flags.is_empty() { "none".to_string() } else { flags.join(", ") });
    println!("ecc:      {} corrected", report.ecc_corrected);
    println!("z:        {}", report.z_digest.as_deref().unwrap_or("-"));
    println!("golden:   {}", report.golden_digest);

    if let Some(path) = output {
        let json = serde_json::to_string_pretty(&report).expect("run report serializes") + "\n";
        write_atomic(path, json.as_bytes())?;
    }
    Ok(match outcome.class {
        OutcomeClass::CorrectNoRetry | OutcomeClass::CorrectWithRetry => 0,
        _ => EXIT_FUNCTIONAL,
    })
}

fn status_word(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::AbortedFault => "aborted (fault detected)",
        RunStatus::Timeout => "timeout",
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_campaign(
    job: Option<&Path>,
    variant: Option<Protection>,
    mode: Option<Mode>,
    n: u64,
    seed: u64,
    output: Option<&Path>,
    format: Format,
    workers: usize,
) -> CmdResult {
    if n == 0 {
        return Err(Failure::usage(anyhow!("--n must be at least 1")));
    }
    let mut plan = CampaignPlan::reference(variant.unwrap_or(Protection::Full), n, seed);
    if let Some(path) = job {
        let file = JobFile::load(path)?;
        let operand_seed = file
            .operands
            .seed
            .ok_or_else(|| Failure::usage(anyhow!("campaigns need seeded operands ([operands] seed = ...)")))?;
        let cfg = file.engine_config();
        plan = CampaignPlan {
            rows: cfg.rows,
            cols: cfg.cols,
            pipeline: cfg.pipeline,
            watchdog_factor: cfg.watchdog_factor,
            variant: variant.unwrap_or(cfg.protection),
            mode: file.job.mode.unwrap_or(plan.mode),
            m: file.job.m,
            n: file.job.n,
            k: file.job.k,
            operand_seed,
            ..plan
        };
    }
    plan.mode = mode.or(job.map(|_| plan.mode)).unwrap_or(plan.variant.default_mode());
    eprintln!("campaign: variant {} / {} mode, n = {n}, seed = {seed}", plan.variant, plan.mode);

    // Progress goes to a sibling file that is removed on success; a rerun
    // simply starts over and overwrites it.
    let partial = output.map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".partial");
        PathBuf::from(s)
    });
    let report = run_campaign_with_progress(&plan, workers, |done, total| {
        if let Some(p) = &partial {
            let _ = fs::write(p, format!("{{\"done\": {done}, \"total\": {total}, \"seed\": {seed}}}\n"));
        }
    })
    .map_err(Failure::usage)?;

    let body = match format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    match output {
        Some(path) => {
            write_atomic(path, body.as_bytes())?;
            if let Some(p) = &partial {
                let _ = fs::remove_file(p);
            }
            print!("{}", report.summary());
        }
        None => {
            eprint!("{}", report.summary());
            std::io::stdout().write_all(body.as_bytes()).map_err(Failure::io)?;
        }
    }
    Ok(0)
}

fn cmd_sites(rows: usize, cols: usize, pipeline: usize, variant: Protection, list: bool) -> CmdResult {
    let cfg = EngineConfig::new(rows, cols, pipeline, variant);
    cfg.validate(Mode::Performance).map_err(Failure::usage)?;
    let sites = enumerate_sites(&cfg);
    if list {
        for s in &sites {
            println!("{:<40} {:>2}", s.id(), s.width());
        }
        println!();
    }
    println!("{:<20} {:>6} {:>7}", "category", "sites", "bits");
    let mut total = (0, 0);
    for (cat, n, bits) in category_counts(&sites) {
        println!("{:<20} {:>6} {:>7}", cat.as_str(), n, bits);
        total = (total.0 + n, total.1 + bits);
    }
    println!("{:<20} {:>6} {:>7}", "total", total.0, total.1);
    Ok(0)
}

fn cmd_report(path: &Path, format: ReportFormat) -> CmdResult {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(Failure::io)?;
    let report = CampaignReport::from_json(&text)
        .with_context(|| format!("{} is not a campaign report", path.display()))
        .map_err(Failure::usage)?;
    let out = match format {
        ReportFormat::Text => report.summary(),
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    print!("{out}");
    Ok(0)
}
