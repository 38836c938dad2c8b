//! Per-inter-arrival charges.
//!
//! Two rules are supported:
//!
//! * **Myerson**: `p(θ̂) = ∫₀^θ̂ P(y) dy − θ̂·P(θ̂)` where `P(y)` is the
//!   cold-start probability at report `y`. Since `P` is non-increasing in the
//!   report, the payment lies in `[0, θ̂]` and truthful reporting minimizes
//!   `p(θ̂) + θ·P(θ̂)` step by step.
//! * **Externality**: the expected (or realized) wasted memory of the step.
//!
//! [`PaymentIndexing`] controls which ledger state prices inter-arrival `x_i`.

use serde::{Deserialize, Serialize};

use crate::arrival::ArrivalSequence;
use crate::error::{invalid, Error, Result};
use crate::policy::{
    expected_wasted_memory, policy_distribution, sample_window, wasted_memory, ColdStartCurve, ExpertLedger, Window,
    WindowSet,
};
use crate::quadrature::{adaptive_simpson, DEFAULT_MAX_DEPTH, DEFAULT_TOL};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaymentRule {
    Myerson,
    Externality,
}

impl PaymentRule {
    pub fn as_str(self) -> &'static str {
        match self {
            PaymentRule::Myerson => "myerson",
            PaymentRule::Externality => "externality",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalityMode {
    #[default]
    Expected,
    Realized,
}

/// Ledger state used to price inter-arrival `x_i`.
///
/// `PostUpdate` prices `x_i` from the ledger that already includes `x_i`
/// (the exponent `i·θ̂ − c_p·Σ_{j≤i} x_j` of the two-expert closed form).
/// `PreUpdate` prices it from the ledger through `x_{i−1}`, the distribution
/// that actually chose the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaymentIndexing {
    #[default]
    PostUpdate,
    PreUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaymentSettings {
    pub eta: f64,
    pub tol: f64,
    pub indexing: PaymentIndexing,
    pub externality_mode: ExternalityMode,
}

impl Default for PaymentSettings {
    fn default() -> Self {
        Self {
            eta: 1.0,
            tol: DEFAULT_TOL,
            indexing: PaymentIndexing::default(),
            externality_mode: ExternalityMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaymentRecord {
    /// 1-based inter-arrival index.
    pub step: usize,
    pub rule: PaymentRule,
    pub amount: f64,
    pub expected_cs: f64,
    pub expected_wm: f64,
    /// Window drawn for this step in realized mode.
    pub sampled_window: Option<Window>,
}

/// Myerson payment for one inter-arrival.
///
/// The integral is split at the reports where pairs of cold/warm expert losses
/// cross, which is where the integrand changes fastest, and each piece is
/// integrated by adaptive Simpson with a share of `tol` proportional to its
/// length.
pub fn myerson_payment(ledger: &ExpertLedger, theta_hat: f64, x: f64, eta: f64, tol: f64) -> Result<f64> {
    if !(theta_hat.is_finite() && theta_hat >= 0.0) {
        return Err(invalid("theta_hat", format!("report must be finite and >= 0, got {theta_hat}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid("tol", format!("must be > 0, got {tol}")));
    }
    if theta_hat == 0.0 {
        return Ok(0.0);
    }
    let curve = ColdStartCurve::new(ledger, x, eta)?;
    let mut knots = vec![0.0];
    knots.extend(curve.crossings(theta_hat));
    knots.push(theta_hat);
    let mut integral = 0.0;
    for w in knots.windows(2) {
        let share = tol * (w[1] - w[0]) / theta_hat;
        integral += adaptive_simpson(|y| curve.eval(y), w[0], w[1], share, DEFAULT_MAX_DEPTH)?;
    }
    let value = integral - theta_hat * curve.eval(theta_hat);
    if value < -tol {
        return Err(Error::NegativePayment { value });
    }
    Ok(value.max(0.0))
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Closed-form Myerson payment for the experts `{0, ∞}` after `i` gaps summing to `sum_x`:
///
/// ```text
/// p = θ̂·σ(E) + (1/i)·[log(1 + e^{−c_p·Σx}) − log(1 + e^{E})],   E = i·θ̂ − c_p·Σx
/// ```
///
/// evaluated with `softplus`/`log1p` so large exponents do not overflow.
pub fn myerson_two_expert_closed_form(i: usize, sum_x: f64, theta_hat: f64, c_p: f64) -> Result<f64> {
    if i == 0 {
        return Err(invalid("i", "step count must be >= 1"));
    }
    if !(sum_x.is_finite() && sum_x >= 0.0) {
        return Err(invalid("sum_x", format!("must be finite and >= 0, got {sum_x}")));
    }
    if !(theta_hat.is_finite() && theta_hat >= 0.0) {
        return Err(invalid("theta_hat", format!("report must be finite and >= 0, got {theta_hat}")));
    }
    let n = i as f64;
    let held = c_p * sum_x;
    let e = n * theta_hat - held;
    Ok(theta_hat * logistic(e) + ((-held).exp().ln_1p() - softplus(e)) / n)
}

/// Externality payment: expected wasted memory under the policy, or the wasted
/// memory of the window actually drawn.
pub fn externality_payment(
    ledger: &ExpertLedger,
    theta_hat: f64,
    x: f64,
    eta: f64,
    mode: ExternalityMode,
    sampled_tau: Option<Window>,
) -> Result<f64> {
    match mode {
        ExternalityMode::Expected => {
            let dist = policy_distribution(ledger, theta_hat, eta)?;
            expected_wasted_memory(ledger, &dist, x)
        }
        ExternalityMode::Realized => {
            let tau = sampled_tau.ok_or(Error::MissingSampledWindow)?;
            wasted_memory(tau, x, ledger.c_p())
        }
    }
}

/// Walks the inter-arrivals, pricing each one and updating the ledger.
///
/// `seed` drives window draws in realized externality mode and is ignored otherwise.
pub fn payment_schedule(
    arrivals: &ArrivalSequence,
    windows: &WindowSet,
    c_p: f64,
    theta_hat: f64,
    rule: PaymentRule,
    settings: &PaymentSettings,
    seed: u64,
) -> Result<Vec<PaymentRecord>> {
    if arrivals.len() < 2 {
        return Err(Error::TooFewArrivals { required: 2, got: arrivals.len() });
    }
    let mut ledger = ExpertLedger::new(windows.clone(), c_p)?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(arrivals.len() - 1);
    for (k, x) in arrivals.gaps().into_iter().enumerate() {
        if settings.indexing == PaymentIndexing::PostUpdate {
            ledger.update(x)?;
        }
        let dist = policy_distribution(&ledger, theta_hat, settings.eta)?;
        let expected_cs = ColdStartCurve::new(&ledger, x, settings.eta)?.eval(theta_hat);
        let expected_wm = expected_wasted_memory(&ledger, &dist, x)?;
        let realized = rule == PaymentRule::Externality && settings.externality_mode == ExternalityMode::Realized;
        let sampled_window = realized.then(|| sample_window(&ledger, &dist, &mut rng));
        let amount = match rule {
            PaymentRule::Myerson => myerson_payment(&ledger, theta_hat, x, settings.eta, settings.tol)?,
            PaymentRule::Externality if realized => {
                externality_payment(&ledger, theta_hat, x, settings.eta, ExternalityMode::Realized, sampled_window)?
            }
            PaymentRule::Externality => expected_wm,
        };
        out.push(PaymentRecord { step: k + 1, rule, amount, expected_cs, expected_wm, sampled_window });
        if settings.indexing == PaymentIndexing::PreUpdate {
            ledger.update(x)?;
        }
    }
    Ok(out)
}

/// Total payment with the first inter-arrival's charge removed.
pub fn offset_adjusted_total(records: &[PaymentRecord]) -> f64 {
    records.iter().skip(1).map(|r| r.amount).sum()
}
