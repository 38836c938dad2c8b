//! Synthetic arrival processes.
//!
//! Homogeneous Poisson arrivals and a univariate Hawkes process with an
//! exponential kernel,
//!
//! ```text
//! λ(t) = λ0 + Σ_{t_j < t} α·exp(−β (t − t_j))
//! ```
//!
//! simulated by Ogata thinning. Parameters with branching ratio `α/β ≥ 1` are
//! accepted; generation is by event count, so the intensity is simply allowed
//! to grow.

use std::io;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{rng_from_seed, Rng};

/// Ordered arrival timestamps of one application.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArrivalSequence {
    times: Vec<f64>,
}

impl ArrivalSequence {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Timestamps must be finite, non-negative and non-decreasing.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(invalid("times", format!("timestamp {t} is negative or not finite")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] < w[0]) {
            return Err(invalid("times", format!("timestamps decrease: {} then {}", w[0], w[1])));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Inter-arrival gaps `t[j+1] − t[j]`; one shorter than the sequence.
    pub fn gaps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Writes `index,time` rows with a header.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "time"])?;
        for (i, t) in self.times.iter().enumerate() {
            w.write_record([(i + 1).to_string(), crate::fmt::sig12(*t)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HawkesParams {
    pub fn new(lambda0: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { lambda0, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(invalid("lambda0", format!("must be finite and > 0, got {}", self.lambda0)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid("alpha", format!("must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", format!("must be finite and > 0, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }
}

/// `count` arrivals of a homogeneous Poisson process; gaps are iid `Exp(rate)`.
pub fn gen_poisson(rate: f64, count: usize, seed: u64) -> Result<ArrivalSequence> {
    let mut rng = rng_from_seed(seed);
    gen_poisson_with(rate, count, &mut rng)
}

pub fn gen_poisson_with(rate: f64, count: usize, rng: &mut Rng) -> Result<ArrivalSequence> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(invalid("rate", format!("must be finite and > 0, got {rate}")));
    }
    let exp = Exp::new(rate).map_err(|e| invalid("rate", e.to_string()))?;
    let mut t = 0.0;
    let times = (0..count)
        .map(|_| {
            t += positive_draw(&exp, rng);
            t
        })
        .collect();
    Ok(ArrivalSequence { times })
}

fn positive_draw(exp: &Exp<f64>, rng: &mut Rng) -> f64 {
    loop {
        let w = exp.sample(rng);
        if w > 0.0 {
            return w;
        }
    }
}

/// `count` arrivals of a Hawkes process via Ogata thinning.
///
/// The dominating rate is the intensity at the current time (right after the
/// last event or rejected candidate); between events the exponential kernel only
/// decays, so that value bounds λ until the next acceptance.
pub fn gen_hawkes(params: HawkesParams, count: usize, seed: u64) -> Result<ArrivalSequence> {
    let mut rng = rng_from_seed(seed);
    gen_hawkes_with(params, count, &mut rng)
}

pub fn gen_hawkes_with(params: HawkesParams, count: usize, rng: &mut Rng) -> Result<ArrivalSequence> {
    params.validate()?;
    if count < 1 {
        return Err(invalid("count", "hawkes generation needs count >= 1"));
    }
    let HawkesParams { lambda0, alpha, beta } = params;
    let mut times = Vec::with_capacity(count);
    let mut t = 0.0_f64;
    // Σ α·exp(−β (t − t_j)) over accepted events, evaluated at `t`.
    let mut excitation = 0.0_f64;
    while times.len() < count {
        let upper = lambda0 + excitation;
        let exp = Exp::new(upper).map_err(|e| invalid("intensity", e.to_string()))?;
        let w = positive_draw(&exp, rng);
        t += w;
        excitation *= (-beta * w).exp();
        let current = lambda0 + excitation;
        let u: f64 = rng.random();
        if u * upper <= current {
            times.push(t);
            excitation += alpha;
        }
    }
    Ok(ArrivalSequence { times })
}

/// `λ0 + Σ_{t_j ≤ t} α·exp(−β (t − t_j))`.
pub fn intensity(params: HawkesParams, history: &ArrivalSequence, t: f64) -> Result<f64> {
    params.validate()?;
    let excitation: f64 = history
        .times()
        .iter()
        .take_while(|&&tj| tj <= t)
        .map(|&tj| params.alpha * (-params.beta * (t - tj)).exp())
        .sum();
    Ok(params.lambda0 + excitation)
}

/// Integrated intensity `Λ(t) = λ0·t + (α/β)·Σ_{t_j < t} (1 − exp(−β (t − t_j)))`.
pub fn compensator(params: HawkesParams, history: &ArrivalSequence, t: f64) -> Result<f64> {
    params.validate()?;
    if t.is_nan() || t < 0.0 {
        return Err(invalid("t", format!("must be >= 0, got {t}")));
    }
    let ratio = params.alpha / params.beta;
    let excited: f64 =
        history.times().iter().take_while(|&&tj| tj < t).map(|&tj| -(-params.beta * (t - tj)).exp_m1()).sum();
    Ok(params.lambda0 * t + ratio * excited)
}

/// Time-rescaled gaps `Λ(t_k) − Λ(t_{k−1})` (with `t_0 = 0`), computed in one
/// pass with the recursion `S_k = exp(−βΔ_k)·(1 + S_{k−1})`.
///
/// Under the correct model these are iid `Exp(1)`.
pub fn time_rescaled_gaps(params: HawkesParams, arrivals: &ArrivalSequence) -> Result<Vec<f64>> {
    params.validate()?;
    let HawkesParams { lambda0, alpha, beta } = params;
    let ratio = alpha / beta;
    let mut out = Vec::with_capacity(arrivals.len());
    let mut prev = 0.0;
    // Σ_{j<k} exp(−β (t_{k−1} − t_j)) excluding the event at t_{k−1} itself;
    // `None` until the first event.
    let mut carried: Option<f64> = None;
    for &t in arrivals.times() {
        let dt = t - prev;
        let decay = -(-beta * dt).exp_m1();
        let rescaled = match carried {
            None => lambda0 * dt,
            Some(s) => lambda0 * dt + ratio * (1.0 + s) * decay,
        };
        out.push(rescaled);
        carried = Some(match carried {
            None => 0.0,
            Some(s) => (-beta * dt).exp() * (1.0 + s),
        });
        prev = t;
    }
    Ok(out)
}
