//! Market-based keep-alive caching.
//!
//! A serverless provider keeps each application's image cached for a
//! keep-alive window after every invocation. Customers report what a cold
//! start costs them; the provider learns a distribution over a fixed set of
//! windows with exponential weights and charges either a Myerson payment
//! (incentive compatible) or the expected wasted memory (cost recovering).
//!
//! Modules, bottom-up:
//!
//! * [`arrival`]: Poisson and Hawkes arrival generators.
//! * [`trace`]: per-minute invocation-count traces to arrival sequences.
//! * [`policy`]: loss primitives, expert ledgers, exponential weights.
//! * [`payment`]: Myerson and externality charges.
//! * [`metrics`]: run evaluation, customer regret, κ curves, Pareto frontiers.
//! * [`experiment`]: batch drivers and CSV output used by the CLI.
//! * [`validate`]: the oracle suite behind `keepalive validate`.

pub mod arrival;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod metrics;
pub mod payment;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod trace;
pub mod validate;

pub use arrival::{ArrivalSequence, HawkesParams};
pub use error::{Error, Result};
pub use metrics::{KappaLabel, KappaPoint, RunRecord};
pub use payment::{ExternalityMode, PaymentIndexing, PaymentRecord, PaymentRule, PaymentSettings};
pub use policy::{ExpertLedger, PolicyDistribution, Window, WindowSet};
pub use trace::AppSeries;
