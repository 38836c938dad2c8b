//! Run-level evaluation: customer cost and regret, cost recovery, and the
//! (wasted memory, cold starts) trade-off points of reports and fixed windows.

use std::fmt;

use crate::arrival::ArrivalSequence;
use crate::error::{invalid, Error, Result};
use crate::payment::{payment_schedule, PaymentRecord, PaymentRule, PaymentSettings};
use crate::policy::{ExpertLedger, Window, WindowSet};

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub theta_hat: f64,
    pub rule: PaymentRule,
    pub total_payment: f64,
    pub total_expected_cs: f64,
    pub total_expected_wm: f64,
    pub steps: Vec<PaymentRecord>,
}

impl RunRecord {
    pub fn from_steps(theta_hat: f64, rule: PaymentRule, steps: Vec<PaymentRecord>) -> Self {
        Self {
            theta_hat,
            rule,
            total_payment: steps.iter().map(|s| s.amount).sum(),
            total_expected_cs: steps.iter().map(|s| s.expected_cs).sum(),
            total_expected_wm: steps.iter().map(|s| s.expected_wm).sum(),
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Evaluates one report under one payment rule.
pub fn run_market(
    arrivals: &ArrivalSequence,
    windows: &WindowSet,
    c_p: f64,
    theta_hat: f64,
    rule: PaymentRule,
    settings: &PaymentSettings,
    seed: u64,
) -> Result<RunRecord> {
    let steps = payment_schedule(arrivals, windows, c_p, theta_hat, rule, settings, seed)?;
    Ok(RunRecord::from_steps(theta_hat, rule, steps))
}

/// Total payment plus `θ` per expected cold start.
pub fn customer_cost(record: &RunRecord, theta: f64) -> Result<f64> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(invalid("theta", format!("type must be finite and >= 0, got {theta}")));
    }
    Ok(record.total_payment + theta * record.total_expected_cs)
}

/// Truthful cost minus the cheapest cost over all reports in `records`.
///
/// Zero means no report on the grid beats the truth. `records` must contain
/// the report `theta`.
pub fn customer_regret(records: &[RunRecord], theta: f64) -> Result<f64> {
    let truthful = records.iter().find(|r| r.theta_hat == theta).ok_or(Error::ThetaNotInGrid { theta })?;
    let truthful_cost = customer_cost(truthful, theta)?;
    let mut best = truthful_cost;
    for r in records {
        best = best.min(customer_cost(r, theta)?);
    }
    Ok(truthful_cost - best)
}

/// `Σ wm − Σ p`.
pub fn cost_recovery_gap(record: &RunRecord) -> f64 {
    record.total_expected_wm - record.total_payment
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaLabel {
    Report(f64),
    Window(Window),
}

impl fmt::Display for KappaLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KappaLabel::Report(t) => write!(f, "theta_hat={}", crate::fmt::sig12(*t)),
            KappaLabel::Window(w) => write!(f, "tau={w}"),
        }
    }
}

/// Cumulative (wasted memory, cold starts) of a report or a fixed window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaPoint {
    pub label: KappaLabel,
    pub wm_total: f64,
    pub cs_total: f64,
}

impl KappaPoint {
    /// `wm + θ·cs`: the social cost of this point for type `θ`.
    pub fn cost(&self, theta: f64) -> f64 {
        self.wm_total + theta * self.cs_total
    }
}

/// κ for a report, from the expected accounting of an existing run.
pub fn kappa_of_run(record: &RunRecord) -> KappaPoint {
    KappaPoint {
        label: KappaLabel::Report(record.theta_hat),
        wm_total: record.total_expected_wm,
        cs_total: record.total_expected_cs,
    }
}

/// κ for every fixed window, from a ledger that has seen every gap.
pub fn kappa_of_windows(ledger: &ExpertLedger) -> Vec<KappaPoint> {
    ledger
        .windows()
        .windows()
        .iter()
        .zip(ledger.wm_cum().iter().zip(ledger.cs_cum()))
        .map(|(&w, (&wm, &cs))| KappaPoint { label: KappaLabel::Window(w), wm_total: wm, cs_total: cs as f64 })
        .collect()
}

/// κ(θ̂) for every report in `grid` followed by κ(τ) for every window.
pub fn kappa_curves(
    arrivals: &ArrivalSequence,
    windows: &WindowSet,
    c_p: f64,
    grid: &[f64],
    settings: &PaymentSettings,
) -> Result<Vec<KappaPoint>> {
    let mut out = Vec::with_capacity(grid.len() + windows.len());
    for &theta_hat in grid {
        // Expected accounting does not depend on the rule; externality avoids quadrature.
        let record = run_market(arrivals, windows, c_p, theta_hat, PaymentRule::Externality, settings, 0)?;
        out.push(kappa_of_run(&record));
    }
    let mut ledger = ExpertLedger::new(windows.clone(), c_p)?;
    for x in arrivals.gaps() {
        ledger.update(x)?;
    }
    out.extend(kappa_of_windows(&ledger));
    Ok(out)
}

/// `D(θ) = max(0, max_θ̂ min_τ (κ(τ) − κ(θ̂))·(1, θ))` for each `θ` in `thetas`.
pub fn d_theta(reports: &[KappaPoint], windows: &[KappaPoint], thetas: &[f64]) -> Vec<f64> {
    thetas
        .iter()
        .map(|&theta| {
            let best_window = windows.iter().map(|k| k.cost(theta)).fold(f64::INFINITY, f64::min);
            reports.iter().map(|r| best_window - r.cost(theta)).fold(0.0, f64::max)
        })
        .collect()
}

/// Points not dominated in both coordinates by another point, sorted by
/// wasted memory; exact duplicates are kept once.
pub fn pareto_frontier(points: &[KappaPoint]) -> Vec<KappaPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.wm_total.total_cmp(&b.wm_total).then(a.cs_total.total_cmp(&b.cs_total)));
    let mut out: Vec<KappaPoint> = Vec::new();
    let mut best_cs = f64::INFINITY;
    for p in sorted {
        if p.cs_total < best_cs {
            best_cs = p.cs_total;
            out.push(p);
        }
    }
    out
}

/// `(R_n + max_θ θ·D(θ)) / n`.
pub fn ic_bound(policy_regret: f64, d_values: &[f64], thetas: &[f64], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "must be >= 1"));
    }
    let worst = thetas.iter().zip(d_values).map(|(t, d)| t * d).fold(0.0, f64::max);
    Ok((policy_regret + worst) / n as f64)
}

/// Largest regret of the expected policy loss against any fixed window, for type `theta`.
pub fn max_policy_regret(record: &RunRecord, windows: &[KappaPoint], theta: f64) -> f64 {
    let policy = kappa_of_run(record).cost(theta);
    windows.iter().map(|k| policy - k.cost(theta)).fold(f64::NEG_INFINITY, f64::max)
}
