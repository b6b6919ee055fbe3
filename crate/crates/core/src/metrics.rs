//! Delay statistics and cable-overload fractions of a simulation outcome.

use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::sim::{CableTrace, SimOutcome};

/// Tardiness above this (seconds) counts as a delay.
pub const DELAY_EPS: f64 = 1e-6;
/// A delay of at least this many seconds counts as long.
pub const LONG_DELAY_S: f64 = 900.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DelayStats {
    pub count: usize,
    pub max_s: f64,
    pub avg_s: f64,
    pub delayed_pct: f64,
    pub long_delays: usize,
}

impl DelayStats {
    pub fn from_tardiness(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        Self {
            count: values.len(),
            max_s: values.iter().copied().fold(0.0, f64::max),
            avg_s: values.iter().sum::<f64>() / n,
            delayed_pct: 100.0 * values.iter().filter(|&&t| t > DELAY_EPS).count() as f64 / n,
            long_delays: values.iter().filter(|&&t| t >= LONG_DELAY_S).count(),
        }
    }
}

/// Share of time a cable spent above capacity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverloadFractions {
    pub cable: String,
    pub capacity_kw: f64,
    /// Load in `(cap, 1.1 cap]`, with 1e-6 kW of slack for rounding.
    pub manageable: f64,
    /// Load above `1.1 cap`.
    pub problematic: f64,
    pub peak_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// Over EVs that arrived after the warm-up and have left.
    pub delay: DelayStats,
    pub arrived: usize,
    pub rejected: usize,
    /// EVs still parked when the simulation ended.
    pub parked_at_end: usize,
    /// Delay accrued by then, among the EVs still parked.
    pub parked_max_delay_s: f64,
    pub overload: Vec<OverloadFractions>,
    pub regenerations: u64,
    pub lns_iterations: u64,
}

/// Statistics over EVs arriving at or after `outcome.warmup_end`.
pub fn summarize(outcome: &SimOutcome) -> Metrics {
    let cutoff = outcome.warmup_end;
    let counted = || outcome.records.iter().filter(|r| r.arrival >= cutoff);
    let tardiness: Vec<f64> = counted()
        .filter(|r| r.departed())
        .filter_map(|r| r.tardiness())
        .collect();
    let parked: Vec<f64> = counted()
        .filter(|r| !r.rejected && !r.departed())
        .map(|r| (r.completion.unwrap_or(outcome.end) - r.due).max(0.0))
        .collect();
    Metrics {
        delay: DelayStats::from_tardiness(&tardiness),
        arrived: counted().count(),
        rejected: counted().filter(|r| r.rejected).count(),
        parked_at_end: parked.len(),
        parked_max_delay_s: parked.iter().copied().fold(0.0, f64::max),
        overload: overload_fractions(&outcome.trace, cutoff),
        regenerations: outcome.regenerations,
        lns_iterations: outcome.lns_iterations,
    }
}

/// Time-weighted overload fractions of every cable over `[from, trace.end]`.
pub fn overload_fractions(trace: &CableTrace, from: f64) -> Vec<OverloadFractions> {
    let span = trace.end - from;
    trace
        .cables
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let cap = trace.capacities[c];
            let (mut manageable, mut problematic, mut peak) = (0.0, 0.0, 0.0_f64);
            for (k, d) in trace.durations().enumerate() {
                let t0 = trace.times[k];
                let dt = (t0 + d).min(trace.end) - t0.max(from);
                if dt <= 0.0 {
                    continue;
                }
                let load = trace.flows[k][c].abs();
                peak = peak.max(load);
                if load > 1.1 * cap + 1e-6 {
                    problematic += dt;
                } else if load > cap + 1e-6 {
                    manageable += dt;
                }
            }
            let frac = |x: f64| if span > 0.0 { x / span } else { 0.0 };
            OverloadFractions {
                cable: name.clone(),
                capacity_kw: cap,
                manageable: frac(manageable),
                problematic: frac(problematic),
                peak_kw: peak,
            }
        })
        .collect()
}
