use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use keepalive_core::experiment::{self, ExperimentConfig, ProcessKind};
use keepalive_core::fmt::sig;
use keepalive_core::policy::TieRule;
use keepalive_core::validate::{run_validation, ValidateOptions};

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Keep-alive market experiments: simulate, replay traces, and self-check.
#[derive(Parser, Debug)]
#[command(name = "keepalive", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Batch of synthetic Poisson or Hawkes runs.
    Simulate(RunArgs),
    /// Batch over applications of an invocation trace.
    Trace(TraceArgs),
    /// κ points, payments per report, and D(θ) for a single run.
    Frontier(FrontierArgs),
    /// Run the numerical self-checks.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "KEEPALIVE_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Process {
    Poisson,
    Hawkes,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Arrival process (overrides the config).
    #[arg(long, value_enum)]
    process: Option<Process>,
    /// Number of runs (overrides the config).
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    common: Common,
    /// Trace CSV files, concatenated in the order given (overrides the config).
    #[arg(long = "trace", num_args = 1..)]
    traces: Vec<PathBuf>,
    /// File of application ids to keep, one per line.
    #[arg(long)]
    allow_list: Option<PathBuf>,
    /// Also write externality totals with the first charge removed.
    #[arg(long)]
    offset: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct FrontierArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    process: Option<Process>,
    /// Trace CSV files; selects the trace process.
    #[arg(long = "trace", num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Application id to use with --trace.
    #[arg(long)]
    app: Option<String>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TieArg::Warm, hide = true)]
    tie_rule: TieArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TieArg {
    Warm,
    Cold,
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn set_process(cfg: &mut ExperimentConfig, process: Option<Process>) {
    match process {
        Some(Process::Poisson) => cfg.process = ProcessKind::Poisson,
        Some(Process::Hawkes) => cfg.process = ProcessKind::Hawkes,
        None => {}
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        say!("wrote {}", f.display());
    }
}

fn print_summary(process: ProcessKind, report: &experiment::BatchReport) {
    say!("{} runs of {}", report.runs, process.as_str());
    say!("{:<12} {:>9} {:>22} {:>22} {:>22}", "rule", "% rho>0", "mean pos. rho", "total cost", "recovery gap");
    for s in &report.summary {
        let pm = |m: f64, sd: f64| format!("{} ± {}", sig(m, 4), sig(sd, 4));
        say!(
            "{:<12} {:>9} {:>22} {:>22} {:>22}",
            s.rule.as_str(),
            sig(s.pct_rho_positive, 4),
            pm(s.mean_positive_rho, s.sd_positive_rho),
            pm(s.mean_total_cost, s.sd_total_cost),
            pm(s.mean_cost_recovery_gap, s.sd_cost_recovery_gap),
        );
    }
}

fn simulate(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load(&args.common)?;
    set_process(&mut cfg, args.process);
    if cfg.process == ProcessKind::Trace {
        anyhow::bail!("simulate needs process poisson or hawkes; use `keepalive trace` for traces");
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    let report = experiment::run_and_write(&cfg, &args.common.out, args.jobs)?;
    print_summary(cfg.process, &report);
    print_files(&report.files);
    Ok(())
}

fn apply_traces(cfg: &mut ExperimentConfig, traces: Vec<PathBuf>) {
    if !traces.is_empty() {
        cfg.trace_paths = traces;
    }
    if !cfg.trace_paths.is_empty() {
        cfg.process = ProcessKind::Trace;
    }
}

fn trace(args: TraceArgs) -> anyhow::Result<()> {
    let mut cfg = load(&args.common)?;
    apply_traces(&mut cfg, args.traces);
    cfg.process = ProcessKind::Trace;
    if args.allow_list.is_some() {
        cfg.allow_list = args.allow_list;
    }
    cfg.offset |= args.offset;
    let report = experiment::run_and_write(&cfg, &args.common.out, args.jobs)?;
    print_summary(cfg.process, &report);
    print_files(&report.files);
    Ok(())
}

fn frontier(args: FrontierArgs) -> anyhow::Result<()> {
    let mut cfg = load(&args.common)?;
    set_process(&mut cfg, args.process);
    apply_traces(&mut cfg, args.traces);
    if args.app.is_some() {
        cfg.frontier_app = args.app;
    }
    let (report, files) = experiment::frontier_and_write(&cfg, &args.common.out)?;
    say!("run {} ({} arrivals)", report.label, report.arrivals.len());
    say!("max |myerson - externality| total payment: {}", sig(report.max_rule_gap, 6));
    say!("max policy regret: {}  ic bound: {}", sig(report.max_policy_regret, 6), sig(report.ic_bound, 6));
    print_files(&files);
    Ok(())
}

fn validate(args: ValidateArgs) -> bool {
    let tie_rule = match args.tie_rule {
        TieArg::Warm => TieRule::WarmOnTie,
        TieArg::Cold => TieRule::ColdOnTie,
    };
    let report = run_validation(&ValidateOptions { seed: args.seed, tie_rule });
    for c in &report.checks {
        say!(
            "{} {:<28} worst={:<12} tol={:<8} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            sig(c.worst, 4),
            sig(c.tolerance, 2),
            c.detail
        );
    }
    let failed = report.failures().count();
    say!("{} of {} checks passed", report.checks.len() - failed, report.checks.len());
    failed == 0
}

fn report_error(err: &anyhow::Error, out: &Path) {
    eprintln!("error: {err:#}");
    if err.root_cause().to_string().contains("Permission denied") {
        eprintln!("hint: check that {} is writable", out.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, out) = match cli.command {
        Command::Validate(args) => {
            return if validate(args) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
        Command::Simulate(args) => {
            let out = args.common.out.clone();
            (simulate(args).context("simulate failed"), out)
        }
        Command::Trace(args) => {
            let out = args.common.out.clone();
            (trace(args).context("trace failed"), out)
        }
        Command::Frontier(args) => {
            let out = args.common.out.clone();
            (frontier(args).context("frontier failed"), out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            report_error(&err, &out);
            ExitCode::from(2)
        }
    }
}
