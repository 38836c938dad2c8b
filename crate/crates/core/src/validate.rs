//! Self-checks run by `keepalive validate`.
//!
//! Each check compares library output against an independent computation and
//! reports the worst observed deviation next to its tolerance.

use rand::Rng as _;

use crate::arrival::{compensator, gen_hawkes, gen_poisson, time_rescaled_gaps, HawkesParams};
use crate::error::Result;
use crate::experiment::{run_batch, runs_csv, summary_from_runs_csv, summary_rows, ExperimentConfig};
use crate::metrics::{cost_recovery_gap, d_theta, pareto_frontier, run_market, KappaLabel, KappaPoint};
use crate::payment::{myerson_payment, myerson_two_expert_closed_form, PaymentRule, PaymentSettings};
use crate::policy::{policy_distribution, ColdStartCurve, ExpertLedger, TieRule, Window, WindowSet};
use crate::quadrature::trapezoid;
use crate::rng::{derive_seed, derived_rng, stream, Rng};
use crate::stats::ks_exponential;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Tie classification used by every ledger the checks build.
    pub tie_rule: TieRule,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { seed: 0, tie_rule: TieRule::WarmOnTie }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst deviation seen (or, for count checks, the shortfall below the requirement).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn within(name: &'static str, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name, passed: worst.is_finite() && worst <= tolerance, worst, tolerance, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn ws(finite: &[f64], unbounded: bool) -> WindowSet {
    let mut w: Vec<Window> = finite.iter().map(|&t| Window::Finite(t)).collect();
    if unbounded {
        w.push(Window::Unbounded);
    }
    WindowSet::new(w).expect("static window set")
}

fn doubling() -> WindowSet {
    ws(&[0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0], false)
}

fn ledger(windows: WindowSet, opts: &ValidateOptions, gaps: &[f64]) -> Result<ExpertLedger> {
    let mut l = ExpertLedger::new(windows, 1.0)?.with_tie_rule(opts.tie_rule);
    for &x in gaps {
        l.update(x)?;
    }
    Ok(l)
}

fn ref_cold(tau: Window, x: f64) -> bool {
    match tau {
        Window::Unbounded => false,
        Window::Finite(t) => x > t,
    }
}

fn ref_wm(tau: Window, x: f64, c_p: f64) -> f64 {
    if ref_cold(tau, x) {
        c_p * tau.as_f64()
    } else {
        c_p * x
    }
}

/// Recomputes ledger columns by brute force and returns the largest mismatch.
fn ledger_mismatch(l: &ExpertLedger, gaps: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, &tau) in l.windows().windows().iter().enumerate() {
        let wm: f64 = gaps.iter().map(|&x| ref_wm(tau, x, l.c_p())).sum();
        let cs = gaps.iter().filter(|&&x| ref_cold(tau, x)).count() as f64;
        worst = worst.max((wm - l.wm_cum()[j]).abs()).max((cs - l.cs_cum()[j] as f64).abs());
    }
    worst
}

fn primitive_boundary(opts: &ValidateOptions) -> Result<CheckResult> {
    let windows = ws(&[0.0, 1.0, 2.0, 4.0], true);
    let mut worst: f64 = 0.0;
    for x in [0.0, 1.0, 2.0, 4.0, 1.0 - 1e-12, 2.0 + 1e-12, 100.0] {
        let l = ledger(windows.clone(), opts, &[x])?;
        worst = worst.max(ledger_mismatch(&l, &[x]));
    }
    Ok(CheckResult::within("primitive_boundary", worst, 0.0, "single gaps at and around each window"))
}

fn ledger_reference(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for k in 0..10u64 {
        let mut rng = derived_rng(opts.seed, stream::VALIDATE, k);
        // whole-minute gaps hit window boundaries, like binned trace data
        let gaps: Vec<f64> = (0..200).map(|_| rng.random_range(0..=70u32) as f64).collect();
        let l = ledger(doubling(), opts, &gaps)?;
        worst = worst.max(ledger_mismatch(&l, &gaps) / gaps.len() as f64);
    }
    Ok(CheckResult::within("ledger_reference", worst, 1e-12, "10 ledgers of 200 integer gaps"))
}

fn two_expert_distribution(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut rng = derived_rng(opts.seed, stream::VALIDATE, 100);
    for _ in 0..200 {
        let i = rng.random_range(1..60usize);
        let gaps: Vec<f64> = (0..i).map(|_| 0.01 + 3.0 * rng.random::<f64>()).collect();
        let theta_hat = 10.0 * rng.random::<f64>();
        let eta = 0.1 + 2.0 * rng.random::<f64>();
        let l = ledger(ws(&[0.0], true), opts, &gaps)?;
        let sum: f64 = gaps.iter().sum();
        let z = eta * (sum - i as f64 * theta_hat);
        let p0 = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
        let got = policy_distribution(&l, theta_hat, eta)?.probabilities();
        worst = worst.max((got[0] - p0).abs()).max((got[1] - (1.0 - p0)).abs());
    }
    Ok(CheckResult::within("two_expert_distribution", worst, 1e-10, "200 logistic instances"))
}

fn myerson_closed_form(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut rng = derived_rng(opts.seed, stream::VALIDATE, 200);
    let mut overflow = 0;
    for k in 0..100 {
        let i = rng.random_range(1..80usize);
        let mut gaps: Vec<f64> = (0..i - 1).map(|_| 0.01 + 2.0 * rng.random::<f64>()).collect();
        let prefix: f64 = gaps.iter().sum();
        let theta_hat = if k % 5 == 0 { 20.0 + 44.0 * rng.random::<f64>() } else { 5.0 * rng.random::<f64>() };
        let x = 0.01 + 2.0 * rng.random::<f64>();
        gaps.push(x);
        let sum = prefix + x;
        if i as f64 * theta_hat - sum > 700.0 {
            overflow += 1;
        }
        let l = ledger(ws(&[0.0], true), opts, &gaps)?;
        let numeric = myerson_payment(&l, theta_hat, x, 1.0, 1e-8)?;
        let closed = myerson_two_expert_closed_form(i, sum, theta_hat, 1.0)?;
        worst = worst.max((numeric - closed).abs());
    }
    for (i, sum, th) in [(50usize, 1.0, 64.0), (60, 2.0, 40.0)] {
        let closed = myerson_two_expert_closed_form(i, sum, th, 1.0)?;
        let e = i as f64 * th - sum;
        // σ(E) = 1 and softplus(E) = E to double precision here
        let limit = th + ((-sum).exp().ln_1p() - e) / i as f64;
        worst = worst.max((closed - limit).abs());
    }
    Ok(CheckResult::within(
        "myerson_closed_form",
        worst,
        1e-6,
        format!("100 numeric instances ({overflow} with exponent > 700) plus 2 asymptotic limits"),
    ))
}

fn random_ledger(opts: &ValidateOptions, k: u64) -> Result<(ExpertLedger, Rng)> {
    let mut rng = derived_rng(opts.seed, stream::VALIDATE, 1000 + k);
    let rate = 0.02 + 0.98 * rng.random::<f64>();
    let steps = rng.random_range(0..60usize);
    let seq = gen_poisson(rate, steps + 1, derive_seed(opts.seed, stream::VALIDATE, 5000 + k))?;
    Ok((ledger(doubling(), opts, &seq.gaps())?, rng))
}

fn monotonicity(opts: &ValidateOptions) -> Result<CheckResult> {
    let grid: Vec<f64> = (0..=256).map(|k| k as f64 * 0.25).collect();
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (l, mut rng) = random_ledger(opts, k)?;
        for _ in 0..20 {
            let x = 80.0 * rng.random::<f64>();
            let curve = ColdStartCurve::new(&l, x, 1.0)?;
            let vals: Vec<f64> = grid.iter().map(|&y| curve.eval(y)).collect();
            for w in vals.windows(2) {
                worst = worst.max(w[1] - w[0]);
            }
        }
    }
    Ok(CheckResult::within("cold_start_monotone", worst, 1e-12, "50 ledgers x 20 gaps over a 257-point report grid"))
}

fn quadrature_oracle(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (l, mut rng) = random_ledger(opts, 100 + k)?;
        let x = 40.0 * rng.random::<f64>();
        let theta_hat = 64.0 * rng.random::<f64>();
        let numeric = myerson_payment(&l, theta_hat, x, 1.0, 1e-8)?;
        let curve = ColdStartCurve::new(&l, x, 1.0)?;
        let f = |y: f64| curve.eval(y);
        let brute = trapezoid(f, 0.0, theta_hat, 100_000) - theta_hat * f(theta_hat);
        worst = worst.max((numeric - brute).abs());
    }
    Ok(CheckResult::within("quadrature_vs_trapezoid", worst, 1e-6, "20 instances, 1e5-node trapezoid"))
}

fn per_step_ic(opts: &ValidateOptions) -> Result<CheckResult> {
    let grid = [0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (l, mut rng) = random_ledger(opts, 200 + k)?;
        let x = 40.0 * rng.random::<f64>();
        let curve = ColdStartCurve::new(&l, x, 1.0)?;
        let pay = grid.iter().map(|&t| myerson_payment(&l, t, x, 1.0, 1e-8)).collect::<Result<Vec<f64>>>()?;
        for &theta in &grid {
            let cost = |j: usize| pay[j] + theta * curve.eval(grid[j]);
            let truthful = cost(grid.iter().position(|&t| t == theta).unwrap_or(0));
            let best = (0..grid.len()).map(cost).fold(f64::INFINITY, f64::min);
            worst = worst.max(truthful - best);
        }
    }
    Ok(CheckResult::within("myerson_step_ic", worst, 1e-7, "20 ledgers, 11 types against 11 reports"))
}

fn externality_recovery(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let s = PaymentSettings::default();
    for k in 0..10u64 {
        let seq = gen_poisson(0.1 + 0.09 * k as f64, 120, derive_seed(opts.seed, stream::VALIDATE, 300 + k))?;
        for theta_hat in [0.0, 1.0, 16.0] {
            let r = run_market(&seq, &doubling(), 1.0, theta_hat, PaymentRule::Externality, &s, 0)?;
            worst = worst.max(cost_recovery_gap(&r).abs() / r.total_expected_wm.max(1.0));
        }
    }
    Ok(CheckResult::within("externality_cost_recovery", worst, 1e-9, "relative |payment - wm| on 30 runs"))
}

fn hawkes_ks(opts: &ValidateOptions) -> Result<CheckResult> {
    let seeds = 20;
    let required = 17;
    let mut passes = 0;
    for k in 0..seeds {
        let mut rng = derived_rng(opts.seed, stream::VALIDATE, 400 + k);
        let beta = 0.5 + 2.0 * rng.random::<f64>();
        let alpha = 0.9 * beta * rng.random::<f64>();
        let p = HawkesParams::new(0.2 + rng.random::<f64>(), alpha, beta)?;
        let seq = gen_hawkes(p, 2000, derive_seed(opts.seed, stream::VALIDATE, 600 + k))?;
        if ks_exponential(&time_rescaled_gaps(p, &seq)?, 1.0).p_value > 0.01 {
            passes += 1;
        }
    }
    let shortfall = (required - passes).max(0) as f64;
    Ok(CheckResult::within(
        "hawkes_time_rescaling",
        shortfall,
        0.0,
        format!("{passes}/{seeds} seeds pass KS at 0.01 (need {required})"),
    ))
}

fn compensator_routes(opts: &ValidateOptions) -> Result<CheckResult> {
    let p = HawkesParams::new(0.5, 0.8, 1.3)?;
    let seq = gen_hawkes(p, 400, derive_seed(opts.seed, stream::VALIDATE, 700))?;
    let rescaled = time_rescaled_gaps(p, &seq)?;
    let mut acc = 0.0;
    let mut worst: f64 = 0.0;
    for (k, g) in rescaled.iter().enumerate() {
        acc += g;
        let direct = compensator(p, &seq, seq.times()[k])?;
        worst = worst.max((acc - direct).abs() / direct.max(1.0));
    }
    Ok(CheckResult::within("compensator_routes", worst, 1e-9, "recursive rescaling vs direct sum, 400 events"))
}

fn pareto_bruteforce(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut mismatches = 0.0;
    let mut rng = derived_rng(opts.seed, stream::VALIDATE, 800);
    for _ in 0..200 {
        let n = rng.random_range(1..30usize);
        let pts: Vec<KappaPoint> = (0..n)
            .map(|_| KappaPoint {
                label: KappaLabel::Report(0.0),
                wm_total: rng.random_range(0..12u32) as f64,
                cs_total: rng.random_range(0..12u32) as f64,
            })
            .collect();
        let mut brute: Vec<KappaPoint> = Vec::new();
        for p in &pts {
            let dominated = pts.iter().any(|q| {
                q.wm_total <= p.wm_total
                    && q.cs_total <= p.cs_total
                    && (q.wm_total < p.wm_total || q.cs_total < p.cs_total)
            });
            if !dominated && !brute.iter().any(|b| b.wm_total == p.wm_total && b.cs_total == p.cs_total) {
                brute.push(*p);
            }
        }
        brute.sort_by(|a, b| a.wm_total.total_cmp(&b.wm_total));
        if pareto_frontier(&pts) != brute {
            mismatches += 1.0;
        }
    }
    Ok(CheckResult::within("pareto_bruteforce", mismatches, 0.0, "200 random point sets"))
}

fn d_theta_hand() -> Result<CheckResult> {
    let pt = |wm, cs| KappaPoint { label: KappaLabel::Report(0.0), wm_total: wm, cs_total: cs };
    let windows = [pt(0.0, 2.0), pt(2.0, 0.0)];
    // at θ = 1 both windows cost 2 and the report costs 1
    let cases =
        [(pt(0.5, 0.5), 1.0, 1.0), (pt(3.0, 3.0), 1.0, 0.0), (pt(0.5, 0.5), 0.25, 0.0), (pt(1.0, 0.0), 4.0, 1.0)];
    let worst =
        cases.iter().map(|&(r, theta, want)| (d_theta(&[r], &windows, &[theta])[0] - want).abs()).fold(0.0, f64::max);
    Ok(CheckResult::within("d_theta_hand", worst, 1e-12, "4 hand-computed instances"))
}

fn summary_recompute(opts: &ValidateOptions) -> Result<CheckResult> {
    let cfg = ExperimentConfig { runs: 4, arrivals_per_run: 60, master_seed: opts.seed, ..Default::default() };
    let outcomes = run_batch(&cfg, Some(1))?;
    let direct = summary_rows(&cfg, &outcomes);
    let again = summary_from_runs_csv(&runs_csv(&outcomes)?, &cfg.rules)?;
    let mut worst: f64 = 0.0;
    for (a, b) in direct.iter().zip(&again) {
        for (x, y) in [
            (a.pct_rho_positive, b.pct_rho_positive),
            (a.mean_positive_rho, b.mean_positive_rho),
            (a.mean_total_cost, b.mean_total_cost),
            (a.mean_cost_recovery_gap, b.mean_cost_recovery_gap),
            (a.mean_total_payment, b.mean_total_payment),
            (a.mean_total_wm, b.mean_total_wm),
        ] {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    if direct.len() != again.len() {
        worst = f64::INFINITY;
    }
    Ok(CheckResult::within("summary_from_csv", worst, 1e-10, "4-run batch, summary rebuilt from runs.csv"))
}

fn normalization(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for k in 0..30 {
        let (l, _) = random_ledger(opts, 300 + k)?;
        for (theta_hat, eta) in [(0.0, 1.0), (64.0, 1.0), (1e6, 50.0)] {
            let total: f64 = policy_distribution(&l, theta_hat, eta)?.probabilities().iter().sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    let extreme = ledger(doubling(), opts, &vec![500.0; 50])?;
    let total: f64 = policy_distribution(&extreme, 1e9, 1e3)?.probabilities().iter().sum();
    worst = worst.max((total - 1.0).abs());
    Ok(CheckResult::within("policy_normalization", worst, 1e-12, "91 distributions incl. extreme losses"))
}

/// Runs every check; a check that errors counts as failed.
pub fn run_validation(opts: &ValidateOptions) -> ValidationReport {
    type Check = fn(&ValidateOptions) -> Result<CheckResult>;
    let checks: [(&'static str, Check); 14] = [
        ("primitive_boundary", primitive_boundary),
        ("ledger_reference", ledger_reference),
        ("two_expert_distribution", two_expert_distribution),
        ("myerson_closed_form", myerson_closed_form),
        ("cold_start_monotone", monotonicity),
        ("quadrature_vs_trapezoid", quadrature_oracle),
        ("myerson_step_ic", per_step_ic),
        ("externality_cost_recovery", externality_recovery),
        ("hawkes_time_rescaling", hawkes_ks),
        ("compensator_routes", compensator_routes),
        ("pareto_bruteforce", pareto_bruteforce),
        ("d_theta_hand", |_| d_theta_hand()),
        ("summary_from_csv", summary_recompute),
        ("policy_normalization", normalization),
    ];
    let checks = checks
        .into_iter()
        .map(|(name, f)| {
            f(opts).unwrap_or_else(|e| CheckResult {
                name,
                passed: false,
                worst: f64::NAN,
                tolerance: 0.0,
                detail: format!("error: {e}"),
            })
        })
        .collect();
    ValidationReport { checks }
}
