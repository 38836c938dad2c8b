//! Keep-alive experts and the exponential-weights policy.
//!
//! Each expert is a fixed keep-alive window. Because the provider observes
//! every inter-arrival, the counterfactual wasted memory and cold starts of
//! every expert are known after each step; [`ExpertLedger`] accumulates them.
//! The policy draws a window with probability proportional to
//! `exp(−η·(WM_j + θ̂·CS_j))`, computed entirely with log-sum-exp.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arrival::ArrivalSequence;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// A keep-alive window length, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Window {
    Finite(f64),
    Unbounded,
}

impl Window {
    pub fn is_unbounded(self) -> bool {
        matches!(self, Window::Unbounded)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Window::Finite(t) => t,
            Window::Unbounded => f64::INFINITY,
        }
    }
}

impl From<f64> for Window {
    fn from(t: f64) -> Self {
        if t.is_infinite() && t > 0.0 {
            Window::Unbounded
        } else {
            Window::Finite(t)
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Finite(t) => write!(f, "{}", crate::fmt::sig12(*t)),
            Window::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Window::Finite(t) => s.serialize_f64(*t),
            Window::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(Window::Finite(t)),
            Raw::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "unbounded") => Ok(Window::Unbounded),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("unknown window `{s}`"))),
        }
    }
}

/// How an inter-arrival exactly equal to the window is classified.
///
/// [`TieRule::WarmOnTie`] is the model (`x ≤ τ` is a warm start). The flipped
/// rule exists only so the validation suite can check that it notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    WarmOnTie,
    ColdOnTie,
}

impl TieRule {
    #[inline]
    fn is_cold(self, tau: Window, x: f64) -> bool {
        match (self, tau) {
            (_, Window::Unbounded) => false,
            (TieRule::WarmOnTie, Window::Finite(t)) => x > t,
            (TieRule::ColdOnTie, Window::Finite(t)) => x >= t,
        }
    }
}

/// Ordered, non-empty set of expert windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSet(Vec<Window>);

impl WindowSet {
    pub fn new(windows: Vec<Window>) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::InvalidWindowSet("empty".into()));
        }
        for (j, w) in windows.iter().enumerate() {
            match w {
                Window::Finite(t) if !(t.is_finite() && *t >= 0.0) => {
                    return Err(Error::InvalidWindowSet(format!("window {t} must be finite and >= 0")));
                }
                Window::Unbounded if j + 1 != windows.len() => {
                    return Err(Error::InvalidWindowSet("unbounded window must be last".into()));
                }
                _ => {}
            }
        }
        if windows.windows(2).any(|p| p[0].as_f64().partial_cmp(&p[1].as_f64()) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::InvalidWindowSet("windows must be strictly increasing".into()));
        }
        Ok(Self(windows))
    }

    pub fn from_finite(windows: &[f64]) -> Result<Self> {
        Self::new(windows.iter().map(|&t| Window::Finite(t)).collect())
    }

    pub fn windows(&self) -> &[Window] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<Window> {
        self.0.get(j).copied()
    }
}

impl<'de> Deserialize<'de> for WindowSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<Window>::deserialize(d)?;
        WindowSet::new(raw).map_err(serde::de::Error::custom)
    }
}

fn check_gap(x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(invalid("x", format!("inter-arrival must be finite and >= 0, got {x}")))
    }
}

fn check_report(theta_hat: f64) -> Result<()> {
    if theta_hat.is_finite() && theta_hat >= 0.0 {
        Ok(())
    } else {
        Err(invalid("theta_hat", format!("report must be finite and >= 0, got {theta_hat}")))
    }
}

fn check_cost_rate(c_p: f64) -> Result<()> {
    if c_p.is_finite() && c_p > 0.0 {
        Ok(())
    } else {
        Err(invalid("c_p", format!("must be finite and > 0, got {c_p}")))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(invalid("eta", format!("must be finite and > 0, got {eta}")))
    }
}

/// 1 when the inter-arrival outlives the window.
pub fn cold_start(tau: Window, x: f64) -> Result<u32> {
    check_gap(x)?;
    Ok(TieRule::WarmOnTie.is_cold(tau, x) as u32)
}

#[inline]
fn wm_unchecked(rule: TieRule, tau: Window, x: f64, c_p: f64) -> f64 {
    if rule.is_cold(tau, x) {
        c_p * tau.as_f64()
    } else {
        c_p * x
    }
}

/// Memory held over the gap: the whole gap on a warm start, the window on a cold one.
pub fn wasted_memory(tau: Window, x: f64, c_p: f64) -> Result<f64> {
    check_gap(x)?;
    check_cost_rate(c_p)?;
    Ok(wm_unchecked(TieRule::WarmOnTie, tau, x, c_p))
}

/// Per-expert cumulative wasted memory and cold starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertLedger {
    windows: WindowSet,
    c_p: f64,
    steps: usize,
    wm_cum: Vec<f64>,
    cs_cum: Vec<u64>,
    tie_rule: TieRule,
}

impl ExpertLedger {
    pub fn new(windows: WindowSet, c_p: f64) -> Result<Self> {
        check_cost_rate(c_p)?;
        let m = windows.len();
        Ok(Self { windows, c_p, steps: 0, wm_cum: vec![0.0; m], cs_cum: vec![0; m], tie_rule: TieRule::WarmOnTie })
    }

    #[doc(hidden)]
    pub fn with_tie_rule(mut self, rule: TieRule) -> Self {
        self.tie_rule = rule;
        self
    }

    pub fn tie_rule(&self) -> TieRule {
        self.tie_rule
    }

    pub fn windows(&self) -> &WindowSet {
        &self.windows
    }

    pub fn c_p(&self) -> f64 {
        self.c_p
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn wm_cum(&self) -> &[f64] {
        &self.wm_cum
    }

    pub fn cs_cum(&self) -> &[u64] {
        &self.cs_cum
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Charges every expert for the inter-arrival `x`.
    pub fn update(&mut self, x: f64) -> Result<()> {
        check_gap(x)?;
        for (j, &tau) in self.windows.windows().iter().enumerate() {
            self.wm_cum[j] += wm_unchecked(self.tie_rule, tau, x, self.c_p);
            self.cs_cum[j] += self.tie_rule.is_cold(tau, x) as u64;
        }
        self.steps += 1;
        Ok(())
    }

    /// `WM_j + θ̂·CS_j`.
    pub fn expert_loss(&self, j: usize, theta_hat: f64) -> Result<f64> {
        check_report(theta_hat)?;
        if j >= self.len() {
            return Err(invalid("j", format!("expert index {j} out of range 0..{}", self.len())));
        }
        Ok(self.wm_cum[j] + theta_hat * self.cs_cum[j] as f64)
    }

    pub fn losses(&self, theta: f64) -> Vec<f64> {
        self.wm_cum.iter().zip(&self.cs_cum).map(|(w, &c)| w + theta * c as f64).collect()
    }

    /// Experts that would have a cold start on `x`; a prefix of the window order.
    pub fn cold_mask(&self, x: f64) -> Vec<bool> {
        self.windows.windows().iter().map(|&t| self.tie_rule.is_cold(t, x)).collect()
    }

    /// `wm(τ_j, x)` for every expert.
    pub fn step_wasted_memory(&self, x: f64) -> Vec<f64> {
        self.windows.windows().iter().map(|&t| wm_unchecked(self.tie_rule, t, x, self.c_p)).collect()
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-probabilities over the experts of a ledger for one report.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    pub log_weights: Vec<f64>,
    pub theta_hat: f64,
}

impl PolicyDistribution {
    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// Index of a draw; consumes one uniform from `rng`.
    pub fn sample_index(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, p) in self.probabilities().into_iter().enumerate() {
            if p > 0.0 {
                last_positive = j;
            }
            acc += p;
            if u < acc {
                return j;
            }
        }
        last_positive
    }
}

/// `log Pr(τ_j) = −η·L_j − logsumexp_k(−η·L_k)` with `L_j = WM_j + θ̂·CS_j`.
pub fn policy_distribution(ledger: &ExpertLedger, theta_hat: f64, eta: f64) -> Result<PolicyDistribution> {
    check_report(theta_hat)?;
    check_eta(eta)?;
    let logits: Vec<f64> = ledger.losses(theta_hat).into_iter().map(|l| -eta * l).collect();
    let norm = log_sum_exp(logits.iter().copied());
    Ok(PolicyDistribution { log_weights: logits.into_iter().map(|z| z - norm).collect(), theta_hat })
}

/// Cold-start probability as a function of the report, for a fixed ledger and gap.
///
/// Holds the scaled ledger columns so it can be evaluated many times during
/// quadrature without re-validating.
#[derive(Debug, Clone)]
pub struct ColdStartCurve {
    scaled_wm: Vec<f64>,
    scaled_cs: Vec<f64>,
    cold: Vec<bool>,
}

impl ColdStartCurve {
    pub fn new(ledger: &ExpertLedger, x: f64, eta: f64) -> Result<Self> {
        check_gap(x)?;
        check_eta(eta)?;
        Ok(Self {
            scaled_wm: ledger.wm_cum.iter().map(|w| eta * w).collect(),
            scaled_cs: ledger.cs_cum.iter().map(|&c| eta * c as f64).collect(),
            cold: ledger.cold_mask(x),
        })
    }

    /// `Pr(τ < x)` at report `y`, as the logistic of `lse(cold) − lse(warm)`.
    pub fn eval(&self, y: f64) -> f64 {
        let logit = |j: usize| -(self.scaled_wm[j] + y * self.scaled_cs[j]);
        let idx = 0..self.cold.len();
        let cold = log_sum_exp(idx.clone().filter(|&j| self.cold[j]).map(logit));
        let warm = log_sum_exp(idx.filter(|&j| !self.cold[j]).map(logit));
        if cold == f64::NEG_INFINITY {
            return 0.0;
        }
        if warm == f64::NEG_INFINITY {
            return 1.0;
        }
        let d = cold - warm;
        if d >= 0.0 {
            1.0 / (1.0 + (-d).exp())
        } else {
            let e = d.exp();
            e / (1.0 + e)
        }
    }

    /// Report values where the softmax transitions: crossings of `WM_j + y·CS_j`
    /// between experts on opposite sides of the cold/warm split.
    pub fn crossings(&self, upper: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for j in (0..self.cold.len()).filter(|&j| self.cold[j]) {
            for k in (0..self.cold.len()).filter(|&k| !self.cold[k]) {
                let dcs = self.scaled_cs[j] - self.scaled_cs[k];
                if dcs > 0.0 {
                    let y = (self.scaled_wm[k] - self.scaled_wm[j]) / dcs;
                    if y > 0.0 && y < upper {
                        out.push(y);
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// `Pr(τ_{θ̂} < x)`: total probability of experts that cold-start on `x`.
pub fn cold_start_probability(ledger: &ExpertLedger, theta_hat: f64, x: f64, eta: f64) -> Result<f64> {
    check_report(theta_hat)?;
    Ok(ColdStartCurve::new(ledger, x, eta)?.eval(theta_hat))
}

/// `Σ_j Pr(τ_j)·wm(τ_j, x)`.
pub fn expected_wasted_memory(ledger: &ExpertLedger, dist: &PolicyDistribution, x: f64) -> Result<f64> {
    check_gap(x)?;
    Ok(dist.probabilities().iter().zip(ledger.step_wasted_memory(x)).map(|(p, w)| p * w).sum())
}

/// Draws a window from the distribution.
pub fn sample_window(ledger: &ExpertLedger, dist: &PolicyDistribution, rng: &mut Rng) -> Window {
    ledger.windows.windows()[dist.sample_index(rng)]
}

/// `L_n(policy) − L_n(τ_j, θ)`.
pub fn policy_regret(ledger: &ExpertLedger, policy_loss: f64, j: usize, theta: f64) -> Result<f64> {
    Ok(policy_loss - ledger.expert_loss(j, theta)?)
}

/// Replays the policy causally (window for `x_i` drawn from the ledger through
/// `x_{i−1}`) and returns the expected policy loss under type `theta` together
/// with the final ledger.
pub fn replay_expected_loss(
    arrivals: &ArrivalSequence,
    windows: &WindowSet,
    c_p: f64,
    theta_hat: f64,
    theta: f64,
    eta: f64,
) -> Result<(f64, ExpertLedger)> {
    check_report(theta)?;
    let mut ledger = ExpertLedger::new(windows.clone(), c_p)?;
    let mut loss = 0.0;
    for x in arrivals.gaps() {
        let dist = policy_distribution(&ledger, theta_hat, eta)?;
        let pcs = ColdStartCurve::new(&ledger, x, eta)?.eval(theta_hat);
        loss += expected_wasted_memory(&ledger, &dist, x)? + theta * pcs;
        ledger.update(x)?;
    }
    Ok((loss, ledger))
}
