//! Batch experiments: configuration, parallel evaluation, and CSV output.
//!
//! Every run draws its process parameters and arrivals from streams derived
//! from the master seed and the run index (see [`crate::rng`]), so results do
//! not depend on how runs are scheduled across workers.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrival::{gen_hawkes_with, gen_poisson_with, ArrivalSequence, HawkesParams};
use crate::error::{Error, Result};
use crate::fmt::sig12;
use crate::metrics::{
    cost_recovery_gap, customer_cost, customer_regret, d_theta, ic_bound, kappa_of_run, kappa_of_windows,
    max_policy_regret, pareto_frontier, run_market, KappaLabel, KappaPoint, RunRecord,
};
use crate::payment::{ExternalityMode, PaymentIndexing, PaymentRule, PaymentSettings};
use crate::policy::{ExpertLedger, Window, WindowSet};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::stats::mean_std;
use crate::trace::{filter_apps, parse_trace_files, read_allow_list, to_arrivals, DEFAULT_APP_COLUMN};

/// Customer regret above this counts as a profitable misreport.
pub const RHO_EPS: f64 = 1e-9;

pub const BATCH_QUAD_TOL: f64 = 1e-11;

pub const SIM_WINDOWS: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
pub const SIM_THETA_GRID: [f64; 11] = [0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
pub const TRACE_WINDOWS: [f64; 8] = [5.0, 10.0, 20.0, 30.0, 45.0, 60.0, 90.0, 120.0];
pub const TRACE_THETA_GRID: [f64; 7] = [0.0, 5.0, 10.0, 20.0, 30.0, 45.0, 60.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    #[default]
    Poisson,
    Hawkes,
    Trace,
}

impl ProcessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProcessKind::Poisson => "poisson",
            ProcessKind::Hawkes => "hawkes",
            ProcessKind::Trace => "trace",
        }
    }
}

/// Experiment configuration; the JSON keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub process: ProcessKind,
    pub poisson_rate_range: [f64; 2],
    pub hawkes_lambda0_range: [f64; 2],
    pub hawkes_alpha_range: [f64; 2],
    pub hawkes_beta_range: [f64; 2],
    /// Lower clamp for drawn rates, `λ0` and `β`.
    pub rate_floor: f64,
    pub trace_paths: Vec<PathBuf>,
    pub allow_list: Option<PathBuf>,
    pub app_id_column: String,
    pub max_arrivals: usize,
    pub runs: usize,
    pub arrivals_per_run: usize,
    /// Defaults depend on `process`.
    pub window_set: Option<Vec<Window>>,
    pub theta_grid: Option<Vec<f64>>,
    pub c_p: f64,
    pub eta: f64,
    pub rules: Vec<PaymentRule>,
    pub payment_indexing: PaymentIndexing,
    pub externality_mode: ExternalityMode,
    pub master_seed: u64,
    /// Per-payment quadrature tolerance. Errors add up over a run, so the
    /// default is tight enough to keep Myerson regret under [`RHO_EPS`].
    pub quad_tol: f64,
    pub offset: bool,
    /// Run index used by `frontier` for synthetic processes.
    pub frontier_run: usize,
    /// Application used by `frontier` for traces; the first kept app when unset.
    pub frontier_app: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            process: ProcessKind::Poisson,
            poisson_rate_range: [0.0, 1.0],
            hawkes_lambda0_range: [0.0, 1.0],
            hawkes_alpha_range: [0.0, 5.0],
            hawkes_beta_range: [0.0, 5.0],
            rate_floor: 1e-3,
            trace_paths: Vec::new(),
            allow_list: None,
            app_id_column: DEFAULT_APP_COLUMN.to_string(),
            max_arrivals: crate::trace::DEFAULT_MAX_ARRIVALS,
            runs: 100,
            arrivals_per_run: 200,
            window_set: None,
            theta_grid: None,
            c_p: 1.0,
            eta: 1.0,
            rules: vec![PaymentRule::Myerson, PaymentRule::Externality],
            payment_indexing: PaymentIndexing::PostUpdate,
            externality_mode: ExternalityMode::Expected,
            master_seed: 0,
            quad_tol: BATCH_QUAD_TOL,
            offset: false,
            frontier_run: 0,
            frontier_app: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn windows(&self) -> Result<WindowSet> {
        let ws = match &self.window_set {
            Some(w) => WindowSet::new(w.clone()),
            None if self.process == ProcessKind::Trace => WindowSet::from_finite(&TRACE_WINDOWS),
            None => WindowSet::from_finite(&SIM_WINDOWS),
        };
        ws.map_err(|e| Error::Config(format!("window_set: {e}")))
    }

    pub fn grid(&self) -> Vec<f64> {
        match &self.theta_grid {
            Some(g) => g.clone(),
            None if self.process == ProcessKind::Trace => TRACE_THETA_GRID.to_vec(),
            None => SIM_THETA_GRID.to_vec(),
        }
    }

    pub fn settings(&self) -> PaymentSettings {
        PaymentSettings {
            eta: self.eta,
            tol: self.quad_tol,
            indexing: self.payment_indexing,
            externality_mode: self.externality_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        self.windows()?;
        let grid = self.grid();
        if grid.is_empty() {
            return bad("theta_grid", "must not be empty");
        }
        if grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad("theta_grid", "values must be finite and >= 0");
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("theta_grid", "must be sorted ascending without duplicates");
        }
        if self.runs < 1 {
            return bad("runs", "must be >= 1");
        }
        if self.arrivals_per_run < 2 && self.process != ProcessKind::Trace {
            return bad("arrivals_per_run", "must be >= 2");
        }
        if !(self.c_p.is_finite() && self.c_p > 0.0) {
            return bad("c_p", "must be > 0");
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta", "must be > 0");
        }
        if !(self.quad_tol.is_finite() && self.quad_tol > 0.0) {
            return bad("quad_tol", "must be > 0");
        }
        if !(self.rate_floor.is_finite() && self.rate_floor > 0.0) {
            return bad("rate_floor", "must be > 0");
        }
        if self.rules.is_empty() {
            return bad("rules", "must name at least one payment rule");
        }
        if self.max_arrivals < 1 {
            return bad("max_arrivals", "must be >= 1");
        }
        for (field, [lo, hi]) in [
            ("poisson_rate_range", self.poisson_rate_range),
            ("hawkes_lambda0_range", self.hawkes_lambda0_range),
            ("hawkes_alpha_range", self.hawkes_alpha_range),
            ("hawkes_beta_range", self.hawkes_beta_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return bad(field, "must be [lo, hi] with 0 <= lo <= hi");
            }
        }
        if self.process == ProcessKind::Trace && self.trace_paths.is_empty() {
            return bad("trace_paths", "trace runs need at least one file");
        }
        Ok(())
    }
}

/// What generated a run's arrivals.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessDraw {
    Poisson { rate: f64 },
    Hawkes(HawkesParams),
    Trace { app_id: String },
}

/// One arrival sequence to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInput {
    pub index: usize,
    pub draw: ProcessDraw,
    pub arrivals: ArrivalSequence,
}

impl RunInput {
    pub fn label(&self) -> String {
        match &self.draw {
            ProcessDraw::Trace { app_id } => app_id.clone(),
            _ => self.index.to_string(),
        }
    }
}

fn uniform(rng: &mut crate::rng::Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws the parameters and arrivals of synthetic run `index`.
pub fn synthetic_run(cfg: &ExperimentConfig, index: usize) -> Result<RunInput> {
    let mut params = derived_rng(cfg.master_seed, stream::PARAMS, index as u64);
    let mut arrivals = derived_rng(cfg.master_seed, stream::ARRIVALS, index as u64);
    let floor = cfg.rate_floor;
    match cfg.process {
        ProcessKind::Poisson => {
            let rate = uniform(&mut params, cfg.poisson_rate_range).max(floor);
            let seq = gen_poisson_with(rate, cfg.arrivals_per_run, &mut arrivals)?;
            Ok(RunInput { index, draw: ProcessDraw::Poisson { rate }, arrivals: seq })
        }
        ProcessKind::Hawkes => {
            let lambda0 = uniform(&mut params, cfg.hawkes_lambda0_range).max(floor);
            let alpha = uniform(&mut params, cfg.hawkes_alpha_range);
            let beta = uniform(&mut params, cfg.hawkes_beta_range).max(floor);
            let p = HawkesParams::new(lambda0, alpha, beta)?;
            let seq = gen_hawkes_with(p, cfg.arrivals_per_run, &mut arrivals)?;
            Ok(RunInput { index, draw: ProcessDraw::Hawkes(p), arrivals: seq })
        }
        ProcessKind::Trace => Err(Error::Config("process: trace runs come from trace_paths".into())),
    }
}

/// Loads and filters trace applications into runs, in file order.
pub fn trace_runs(cfg: &ExperimentConfig) -> Result<Vec<RunInput>> {
    let apps = parse_trace_files(&cfg.trace_paths, &cfg.app_id_column)?;
    let allow: Option<HashSet<String>> = cfg.allow_list.as_ref().map(read_allow_list).transpose()?;
    Ok(filter_apps(apps, cfg.max_arrivals, allow.as_ref())
        .into_iter()
        .enumerate()
        .map(|(index, app)| RunInput {
            index,
            arrivals: to_arrivals(&app),
            draw: ProcessDraw::Trace { app_id: app.app_id },
        })
        .collect())
}

pub fn collect_runs(cfg: &ExperimentConfig) -> Result<Vec<RunInput>> {
    match cfg.process {
        ProcessKind::Trace => trace_runs(cfg),
        _ => (0..cfg.runs).map(|i| synthetic_run(cfg, i)).collect(),
    }
}

/// Totals of one (run, rule, report) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTotals {
    pub rule: PaymentRule,
    pub theta_hat: f64,
    pub total_payment: f64,
    pub total_expected_cs: f64,
    pub total_expected_wm: f64,
    pub first_payment: f64,
    pub steps: usize,
}

impl CellTotals {
    fn from_record(r: &RunRecord) -> Self {
        Self {
            rule: r.rule,
            theta_hat: r.theta_hat,
            total_payment: r.total_payment,
            total_expected_cs: r.total_expected_cs,
            total_expected_wm: r.total_expected_wm,
            first_payment: r.steps.first().map_or(0.0, |s| s.amount),
            steps: r.steps.len(),
        }
    }

    pub fn offset_adjusted_payment(&self) -> f64 {
        self.total_payment - self.first_payment
    }
}

/// Truthful outcome of one (run, rule, type) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretRow {
    pub rule: PaymentRule,
    pub theta: f64,
    pub total_payment: f64,
    pub total_expected_cs: f64,
    pub total_expected_wm: f64,
    pub total_cost: f64,
    pub rho: f64,
    pub cost_recovery_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub input: RunInput,
    pub cells: Vec<CellTotals>,
    pub regrets: Vec<RegretRow>,
}

/// Evaluates every (rule, report) cell of one run.
pub fn evaluate_run(cfg: &ExperimentConfig, input: RunInput) -> Result<RunOutcome> {
    let windows = cfg.windows()?;
    let grid = cfg.grid();
    let settings = cfg.settings();
    let seed = derive_seed(cfg.master_seed, stream::WINDOWS, input.index as u64);
    let mut cells = Vec::new();
    let mut regrets = Vec::new();
    for &rule in &cfg.rules {
        let records = grid
            .iter()
            .map(|&t| run_market(&input.arrivals, &windows, cfg.c_p, t, rule, &settings, seed))
            .collect::<Result<Vec<_>>>()?;
        for (&theta, truthful) in grid.iter().zip(&records) {
            regrets.push(RegretRow {
                rule,
                theta,
                total_payment: truthful.total_payment,
                total_expected_cs: truthful.total_expected_cs,
                total_expected_wm: truthful.total_expected_wm,
                total_cost: customer_cost(truthful, theta)?,
                rho: customer_regret(&records, theta)?,
                cost_recovery_gap: cost_recovery_gap(truthful),
            });
        }
        cells.extend(records.iter().map(CellTotals::from_record));
    }
    Ok(RunOutcome { input, cells, regrets })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("jobs: {e}")))
}

/// Evaluates all runs on a worker pool; outcomes are in run order.
pub fn run_batch(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    let inputs = collect_runs(cfg)?;
    pool(jobs)?.install(|| inputs.into_par_iter().map(|input| evaluate_run(cfg, input)).collect())
}

/// Table statistics for one payment rule, over all (run, type) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rule: PaymentRule,
    pub cells: usize,
    pub pct_rho_positive: f64,
    pub mean_positive_rho: f64,
    pub sd_positive_rho: f64,
    pub mean_total_cost: f64,
    pub sd_total_cost: f64,
    pub mean_cost_recovery_gap: f64,
    pub sd_cost_recovery_gap: f64,
    pub mean_total_payment: f64,
    pub sd_total_payment: f64,
    pub mean_total_wm: f64,
    pub sd_total_wm: f64,
}

pub fn summarize<'a>(rule: PaymentRule, rows: impl IntoIterator<Item = &'a RegretRow>) -> SummaryRow {
    let rows: Vec<&RegretRow> = rows.into_iter().filter(|r| r.rule == rule).collect();
    let col = |f: fn(&RegretRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let positive: Vec<f64> = rows.iter().map(|r| r.rho).filter(|&r| r > RHO_EPS).collect();
    let (mean_positive_rho, sd_positive_rho) = if positive.is_empty() { (0.0, 0.0) } else { mean_std(&positive) };
    let (mean_total_cost, sd_total_cost) = mean_std(&col(|r| r.total_cost));
    let (mean_cost_recovery_gap, sd_cost_recovery_gap) = mean_std(&col(|r| r.cost_recovery_gap));
    let (mean_total_payment, sd_total_payment) = mean_std(&col(|r| r.total_payment));
    let (mean_total_wm, sd_total_wm) = mean_std(&col(|r| r.total_expected_wm));
    SummaryRow {
        rule,
        cells: rows.len(),
        pct_rho_positive: if rows.is_empty() { 0.0 } else { 100.0 * positive.len() as f64 / rows.len() as f64 },
        mean_positive_rho,
        sd_positive_rho,
        mean_total_cost,
        sd_total_cost,
        mean_cost_recovery_gap,
        sd_cost_recovery_gap,
        mean_total_payment,
        sd_total_payment,
        mean_total_wm,
        sd_total_wm,
    }
}

pub fn summary_rows(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> Vec<SummaryRow> {
    cfg.rules.iter().map(|&rule| summarize(rule, outcomes.iter().flat_map(|o| &o.regrets))).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(sig12).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |source| Error::Csv { path: PathBuf::from("<memory>"), source };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

pub const RUNS_HEADER: [&str; 16] = [
    "run",
    "label",
    "process",
    "rate",
    "lambda0",
    "alpha",
    "beta",
    "n_arrivals",
    "rule",
    "theta",
    "total_payment",
    "total_expected_cs",
    "total_expected_wm",
    "total_cost",
    "rho",
    "cost_recovery_gap",
];

pub fn runs_csv(outcomes: &[RunOutcome]) -> Result<Vec<u8>> {
    let rows = outcomes.iter().flat_map(|o| {
        let (process, rate, l0, a, b) = match &o.input.draw {
            ProcessDraw::Poisson { rate } => ("poisson", Some(*rate), None, None, None),
            ProcessDraw::Hawkes(p) => ("hawkes", None, Some(p.lambda0), Some(p.alpha), Some(p.beta)),
            ProcessDraw::Trace { .. } => ("trace", None, None, None, None),
        };
        let label = o.input.label();
        o.regrets.iter().map(move |r| {
            vec![
                o.input.index.to_string(),
                label.clone(),
                process.to_string(),
                opt(rate),
                opt(l0),
                opt(a),
                opt(b),
                o.input.arrivals.len().to_string(),
                r.rule.as_str().to_string(),
                sig12(r.theta),
                sig12(r.total_payment),
                sig12(r.total_expected_cs),
                sig12(r.total_expected_wm),
                sig12(r.total_cost),
                sig12(r.rho),
                sig12(r.cost_recovery_gap),
            ]
        })
    });
    csv_bytes(&RUNS_HEADER, rows)
}

pub fn cells_csv(outcomes: &[RunOutcome]) -> Result<Vec<u8>> {
    let header = [
        "run",
        "label",
        "rule",
        "theta_hat",
        "steps",
        "total_payment",
        "total_expected_cs",
        "total_expected_wm",
        "first_payment",
        "offset_adjusted_payment",
    ];
    let rows = outcomes.iter().flat_map(|o| {
        let label = o.input.label();
        o.cells.iter().map(move |c| {
            vec![
                o.input.index.to_string(),
                label.clone(),
                c.rule.as_str().to_string(),
                sig12(c.theta_hat),
                c.steps.to_string(),
                sig12(c.total_payment),
                sig12(c.total_expected_cs),
                sig12(c.total_expected_wm),
                sig12(c.first_payment),
                sig12(c.offset_adjusted_payment()),
            ]
        })
    });
    csv_bytes(&header, rows)
}

pub const SUMMARY_HEADER: [&str; 15] = [
    "process",
    "rule",
    "runs",
    "cells",
    "pct_rho_positive",
    "mean_positive_rho",
    "sd_positive_rho",
    "mean_total_cost",
    "sd_total_cost",
    "mean_cost_recovery_gap",
    "sd_cost_recovery_gap",
    "mean_total_payment",
    "sd_total_payment",
    "mean_total_wm",
    "sd_total_wm",
];

pub fn summary_csv(process: ProcessKind, runs: usize, rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let body = rows.iter().map(|s| {
        vec![
            process.as_str().to_string(),
            s.rule.as_str().to_string(),
            runs.to_string(),
            s.cells.to_string(),
            sig12(s.pct_rho_positive),
            sig12(s.mean_positive_rho),
            sig12(s.sd_positive_rho),
            sig12(s.mean_total_cost),
            sig12(s.sd_total_cost),
            sig12(s.mean_cost_recovery_gap),
            sig12(s.sd_cost_recovery_gap),
            sig12(s.mean_total_payment),
            sig12(s.sd_total_payment),
            sig12(s.mean_total_wm),
            sig12(s.sd_total_wm),
        ]
    });
    csv_bytes(&SUMMARY_HEADER, body)
}

/// Per (app, report): externality totals with and without the first charge.
pub fn offset_csv(outcomes: &[RunOutcome]) -> Result<Vec<u8>> {
    let header =
        ["run", "label", "theta_hat", "myerson_total", "externality_total", "offset", "externality_offset_adjusted"];
    let rows = outcomes.iter().flat_map(|o| {
        let label = o.input.label();
        let ext: Vec<&CellTotals> = o.cells.iter().filter(|c| c.rule == PaymentRule::Externality).collect();
        ext.into_iter().map(move |c| {
            let myerson = o
                .cells
                .iter()
                .find(|m| m.rule == PaymentRule::Myerson && m.theta_hat == c.theta_hat)
                .map(|m| m.total_payment);
            vec![
                o.input.index.to_string(),
                label.clone(),
                sig12(c.theta_hat),
                opt(myerson),
                sig12(c.total_payment),
                sig12(c.first_payment),
                sig12(c.offset_adjusted_payment()),
            ]
        })
    });
    csv_bytes(&header, rows)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub runs: usize,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Runs a batch and writes `<process>_runs.csv`, `<process>_cells.csv`,
/// `<process>_summary.csv` (and `<process>_offset.csv` when `offset` is set).
pub fn run_and_write(cfg: &ExperimentConfig, out: &Path, jobs: Option<usize>) -> Result<BatchReport> {
    let outcomes = run_batch(cfg, jobs)?;
    let summary = summary_rows(cfg, &outcomes);
    let p = cfg.process.as_str();
    let mut files = vec![
        write_file(out, &format!("{p}_runs.csv"), &runs_csv(&outcomes)?)?,
        write_file(out, &format!("{p}_cells.csv"), &cells_csv(&outcomes)?)?,
        write_file(out, &format!("{p}_summary.csv"), &summary_csv(cfg.process, outcomes.len(), &summary)?)?,
    ];
    if cfg.offset {
        files.push(write_file(out, &format!("{p}_offset.csv"), &offset_csv(&outcomes)?)?);
    }
    Ok(BatchReport { runs: outcomes.len(), summary, files })
}

/// One row of the trade-off figure data.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub point: KappaPoint,
    pub myerson_payment: Option<f64>,
    pub externality_payment: f64,
    pub externality_offset_adjusted: Option<f64>,
    pub on_window_frontier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierReport {
    pub label: String,
    pub rows: Vec<FrontierRow>,
    pub thetas: Vec<f64>,
    pub d_theta: Vec<f64>,
    pub max_policy_regret: f64,
    pub ic_bound: f64,
    /// Largest |Myerson − externality| total payment over the report grid.
    pub max_rule_gap: f64,
    pub arrivals: ArrivalSequence,
}

fn frontier_input(cfg: &ExperimentConfig) -> Result<RunInput> {
    match cfg.process {
        ProcessKind::Trace => {
            let runs = trace_runs(cfg)?;
            match &cfg.frontier_app {
                Some(app) => runs
                    .into_iter()
                    .find(|r| matches!(&r.draw, ProcessDraw::Trace { app_id } if app_id == app))
                    .ok_or_else(|| Error::Config(format!("frontier_app: `{app}` not among the filtered applications"))),
                None => runs
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Config("trace_paths: no application passed the filter".into())),
            }
        }
        _ => synthetic_run(cfg, cfg.frontier_run),
    }
}

/// κ points, per-report payments under both rules, D(θ) and the IC bound for a single run.
pub fn frontier(cfg: &ExperimentConfig) -> Result<FrontierReport> {
    cfg.validate()?;
    let input = frontier_input(cfg)?;
    let windows = cfg.windows()?;
    let grid = cfg.grid();
    let settings = cfg.settings();
    let seed = derive_seed(cfg.master_seed, stream::WINDOWS, input.index as u64);
    let arrivals = &input.arrivals;

    let mut ledger = ExpertLedger::new(windows.clone(), cfg.c_p)?;
    for x in arrivals.gaps() {
        ledger.update(x)?;
    }
    let window_points = kappa_of_windows(&ledger);
    let on_frontier = pareto_frontier(&window_points);

    let mut rows = Vec::new();
    let mut report_points = Vec::new();
    let mut max_rule_gap: f64 = 0.0;
    let mut worst_regret: f64 = 0.0;
    for &theta_hat in &grid {
        let ext = run_market(arrivals, &windows, cfg.c_p, theta_hat, PaymentRule::Externality, &settings, seed)?;
        let mye = run_market(arrivals, &windows, cfg.c_p, theta_hat, PaymentRule::Myerson, &settings, seed)?;
        let point = kappa_of_run(&ext);
        max_rule_gap = max_rule_gap.max((ext.total_payment - mye.total_payment).abs());
        worst_regret = worst_regret.max(max_policy_regret(&ext, &window_points, theta_hat));
        report_points.push(point);
        rows.push(FrontierRow {
            point,
            myerson_payment: Some(mye.total_payment),
            externality_payment: ext.total_payment,
            externality_offset_adjusted: Some(ext.total_payment - ext.steps.first().map_or(0.0, |s| s.amount)),
            on_window_frontier: false,
        });
    }
    for p in &window_points {
        rows.push(FrontierRow {
            point: *p,
            myerson_payment: None,
            externality_payment: p.wm_total,
            externality_offset_adjusted: None,
            on_window_frontier: on_frontier.contains(p),
        });
    }
    let d = d_theta(&report_points, &window_points, &grid);
    let bound = ic_bound(worst_regret, &d, &grid, arrivals.len().saturating_sub(1).max(1))?;
    Ok(FrontierReport {
        label: input.label(),
        rows,
        thetas: grid,
        d_theta: d,
        max_policy_regret: worst_regret,
        ic_bound: bound,
        max_rule_gap,
        arrivals: input.arrivals,
    })
}

pub fn frontier_csv(report: &FrontierReport) -> Result<Vec<u8>> {
    let header = [
        "kind",
        "label",
        "wm_total",
        "cs_total",
        "myerson_payment",
        "externality_payment",
        "externality_offset_adjusted",
        "on_window_frontier",
    ];
    let rows = report.rows.iter().map(|r| {
        let (kind, label) = match r.point.label {
            KappaLabel::Report(t) => ("theta_hat", sig12(t)),
            KappaLabel::Window(w) => ("tau", w.to_string()),
        };
        vec![
            kind.to_string(),
            label,
            sig12(r.point.wm_total),
            sig12(r.point.cs_total),
            opt(r.myerson_payment),
            sig12(r.externality_payment),
            opt(r.externality_offset_adjusted),
            r.on_window_frontier.to_string(),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn d_theta_csv(report: &FrontierReport) -> Result<Vec<u8>> {
    let rows = report.thetas.iter().zip(&report.d_theta).map(|(t, d)| vec![sig12(*t), sig12(*d)]);
    let mut bytes = csv_bytes(&["theta", "d_theta"], rows)?;
    let tail =
        csv_bytes(&["max_policy_regret", "ic_bound"], [vec![sig12(report.max_policy_regret), sig12(report.ic_bound)]])?;
    bytes.extend_from_slice(b"\n");
    bytes.extend(tail);
    Ok(bytes)
}

/// Writes `<process>_frontier.csv`, `<process>_d_theta.csv` and `<process>_arrivals.csv`.
pub fn frontier_and_write(cfg: &ExperimentConfig, out: &Path) -> Result<(FrontierReport, Vec<PathBuf>)> {
    let report = frontier(cfg)?;
    let p = cfg.process.as_str();
    let mut arrivals = Vec::new();
    report
        .arrivals
        .write_csv(&mut arrivals)
        .map_err(|source| Error::Csv { path: PathBuf::from("<memory>"), source })?;
    let files = vec![
        write_file(out, &format!("{p}_frontier.csv"), &frontier_csv(&report)?)?,
        write_file(out, &format!("{p}_d_theta.csv"), &d_theta_csv(&report)?)?,
        write_file(out, &format!("{p}_arrivals.csv"), &arrivals)?,
    ];
    Ok((report, files))
}

/// Recomputes the summary table from `runs.csv` bytes.
pub fn summary_from_runs_csv(bytes: &[u8], rules: &[PaymentRule]) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(bytes);
    let wrap = |source| Error::Csv { path: PathBuf::from("<runs.csv>"), source };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(wrap)?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("runs.csv: column {} is not numeric", RUNS_HEADER[k])))
        };
        let rule = match rec.get(8) {
            Some("myerson") => PaymentRule::Myerson,
            Some("externality") => PaymentRule::Externality,
            other => return Err(Error::Config(format!("runs.csv: unknown rule {other:?}"))),
        };
        rows.push(RegretRow {
            rule,
            theta: num(9)?,
            total_payment: num(10)?,
            total_expected_cs: num(11)?,
            total_expected_wm: num(12)?,
            total_cost: num(13)?,
            rho: num(14)?,
            cost_recovery_gap: num(15)?,
        });
    }
    Ok(rules.iter().map(|&r| summarize(r, &rows)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(process: ProcessKind) -> ExperimentConfig {
        ExperimentConfig { process, runs: 3, arrivals_per_run: 40, master_seed: 5, ..Default::default() }
    }

    #[test]
    fn defaults_match_standard_grids() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.windows().unwrap(), WindowSet::from_finite(&SIM_WINDOWS).unwrap());
        assert_eq!(cfg.grid(), SIM_THETA_GRID.to_vec());
        assert_eq!((cfg.c_p, cfg.eta, cfg.runs, cfg.arrivals_per_run), (1.0, 1.0, 100, 200));
        let trace = ExperimentConfig { process: ProcessKind::Trace, ..Default::default() };
        assert_eq!(trace.grid(), TRACE_THETA_GRID.to_vec());
        assert_eq!(trace.windows().unwrap(), WindowSet::from_finite(&TRACE_WINDOWS).unwrap());
    }

    #[test]
    fn config_json_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::from_json(
            r#"{"process":"hawkes","runs":4,"window_set":[0,2,"inf"],"payment_indexing":"pre-update"}"#,
        )
        .unwrap();
        assert_eq!(cfg.process, ProcessKind::Hawkes);
        assert_eq!(cfg.runs, 4);
        assert_eq!(cfg.payment_indexing, PaymentIndexing::PreUpdate);
        assert!(cfg.windows().unwrap().windows()[2].is_unbounded());
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation_names_fields() {
        let cases = [
            (ExperimentConfig { runs: 0, ..Default::default() }, "runs"),
            (ExperimentConfig { theta_grid: Some(vec![1.0, 0.5]), ..Default::default() }, "theta_grid"),
            (ExperimentConfig { theta_grid: Some(vec![]), ..Default::default() }, "theta_grid"),
            (ExperimentConfig { c_p: 0.0, ..Default::default() }, "c_p"),
            (
                ExperimentConfig {
                    window_set: Some(vec![Window::Finite(2.0), Window::Finite(1.0)]),
                    ..Default::default()
                },
                "window_set",
            ),
            (ExperimentConfig { process: ProcessKind::Trace, ..Default::default() }, "trace_paths"),
        ];
        for (cfg, field) in cases {
            let err = cfg.validate().unwrap_err().to_string();
            assert!(err.contains(field), "{err}");
        }
    }

    #[test]
    fn synthetic_runs_are_reproducible() {
        let cfg = small(ProcessKind::Hawkes);
        assert_eq!(synthetic_run(&cfg, 2).unwrap(), synthetic_run(&cfg, 2).unwrap());
        assert_ne!(synthetic_run(&cfg, 1).unwrap().arrivals, synthetic_run(&cfg, 2).unwrap().arrivals);
        let r = synthetic_run(&cfg, 0).unwrap();
        assert_eq!(r.arrivals.len(), 40);
    }

    #[test]
    fn batch_order_does_not_depend_on_workers() {
        let cfg = small(ProcessKind::Poisson);
        let a = run_batch(&cfg, Some(1)).unwrap();
        let b = run_batch(&cfg, Some(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(runs_csv(&a).unwrap(), runs_csv(&b).unwrap());
    }

    #[test]
    fn summary_recomputes_from_runs_csv() {
        let cfg = small(ProcessKind::Poisson);
        let outcomes = run_batch(&cfg, None).unwrap();
        let direct = summary_rows(&cfg, &outcomes);
        let recomputed = summary_from_runs_csv(&runs_csv(&outcomes).unwrap(), &cfg.rules).unwrap();
        assert_eq!(direct.len(), recomputed.len());
        // runs.csv carries 12 significant digits
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(1.0);
        for (a, b) in direct.iter().zip(&recomputed) {
            assert_eq!((a.rule, a.cells), (b.rule, b.cells));
            assert!(close(a.pct_rho_positive, b.pct_rho_positive));
            assert!(close(a.mean_positive_rho, b.mean_positive_rho));
            assert!(close(a.mean_total_cost, b.mean_total_cost));
            assert!(close(a.sd_total_cost, b.sd_total_cost));
            assert!(close(a.mean_cost_recovery_gap, b.mean_cost_recovery_gap));
            assert!(close(a.mean_total_payment, b.mean_total_payment));
            assert!(close(a.mean_total_wm, b.mean_total_wm));
        }
    }

    #[test]
    fn frontier_two_window_anchors() {
        let cfg = ExperimentConfig {
            window_set: Some(vec![Window::Finite(0.0), Window::Unbounded]),
            ..small(ProcessKind::Poisson)
        };
        let rep = frontier(&cfg).unwrap();
        let taus: Vec<&FrontierRow> =
            rep.rows.iter().filter(|r| matches!(r.point.label, KappaLabel::Window(_))).collect();
        let n = (rep.arrivals.len() - 1) as f64;
        let held: f64 = rep.arrivals.gaps().iter().sum();
        assert_eq!((taus[0].point.wm_total, taus[0].point.cs_total), (0.0, n));
        assert_eq!(taus[1].point.cs_total, 0.0);
        assert!((taus[1].point.wm_total - held).abs() < 1e-9);
        assert!(rep.ic_bound >= 0.0);
        assert_eq!(frontier_csv(&rep).unwrap(), frontier_csv(&frontier(&cfg).unwrap()).unwrap());
    }
}
