//! Shared fixtures for the criterion benchmarks.

use keepalive_core::arrival::gen_poisson;
use keepalive_core::{ArrivalSequence, ExpertLedger, WindowSet};

pub const WINDOWS: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

pub fn windows() -> WindowSet {
    WindowSet::from_finite(&WINDOWS).expect("fixed windows are valid")
}

pub fn poisson(count: usize, seed: u64) -> ArrivalSequence {
    gen_poisson(0.3, count, seed).expect("fixed rate is valid")
}

/// A ledger that has absorbed `steps` Poisson gaps.
pub fn warmed_ledger(steps: usize, seed: u64) -> ExpertLedger {
    let mut ledger = ExpertLedger::new(windows(), 1.0).expect("unit cost rate");
    for x in poisson(steps + 1, seed).gaps() {
        ledger.update(x).expect("gaps are non-negative");
    }
    ledger
}
