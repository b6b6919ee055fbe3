//! Discrete-event simulation of arrivals, charging and departures under a
//! rescheduling strategy.

mod engine;
mod event;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{JobId, PriorityRule};
use crate::grid::LotId;
use crate::ledger::{LedgerError, LedgerViolation};
use crate::lns::RepairParams;

pub use engine::{run, uncontrolled_run};
pub use event::{Event, EventKind};

/// The five scheduling variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerKind {
    /// Serial scheme with first come first serve priorities.
    #[serde(rename = "FCFS")]
    Fcfs,
    /// Serial scheme.
    S,
    /// Parallel scheme.
    P,
    /// Serial scheme followed by destroy and repair.
    SR,
    /// Parallel scheme followed by destroy and repair.
    PR,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [Self::Fcfs, Self::S, Self::P, Self::SR, Self::PR];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fcfs => "FCFS",
            Self::S => "S",
            Self::P => "P",
            Self::SR => "SR",
            Self::PR => "PR",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn is_parallel(self) -> bool {
        matches!(self, Self::P | Self::PR)
    }

    pub fn repairs(self) -> bool {
        matches!(self, Self::SR | Self::PR)
    }

    /// Rule used to build the initial schedule.
    pub fn default_rule(self) -> PriorityRule {
        match self {
            Self::Fcfs => PriorityRule::Fcfs,
            _ => PriorityRule::Edd,
        }
    }
}

/// When schedules are regenerated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// On every arrival, solar update and (optionally) completed charge.
    OnNewInformation,
    /// On a fixed interval aligned with the solar updates, plus on the
    /// arrival of unusually urgent EVs.
    Periodic { interval_s: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub scheduler: SchedulerKind,
    /// Rule for the initial schedule.
    pub rule: PriorityRule,
    pub repair: RepairParams,
    pub mode: Mode,
    /// An arrival triggers an extra regeneration in periodic mode when its
    /// priority beats this fraction of the scheduled EVs.
    pub high_priority_quantile: f64,
    /// Regenerate when an EV finishes charging (on-new-information mode).
    pub reschedule_on_stop: bool,
}

impl Strategy {
    pub fn new(scheduler: SchedulerKind) -> Self {
        Self {
            scheduler,
            rule: scheduler.default_rule(),
            repair: RepairParams::default(),
            mode: Mode::OnNewInformation,
            high_priority_quantile: 0.8,
            reschedule_on_stop: true,
        }
    }

    pub fn periodic(mut self, interval_s: f64) -> Self {
        self.mode = Mode::Periodic { interval_s };
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let Mode::Periodic { interval_s } = self.mode {
            if !(interval_s > 0.0 && interval_s.is_finite()) {
                return Err(SimError::ConfigInvalid("scheduling interval must be positive"));
            }
        }
        if !(self.high_priority_quantile > 0.0 && self.high_priority_quantile < 1.0) {
            return Err(SimError::ConfigInvalid("high-priority quantile must lie in (0, 1)"));
        }
        if self.scheduler.repairs() && !self.repair.is_valid() {
            return Err(SimError::ConfigInvalid("repair parameters out of range"));
        }
        Ok(())
    }
}

/// How charging is controlled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Control {
    Scheduled(Strategy),
    /// Every EV charges at a fixed rate from arrival until full, ignoring
    /// cable limits.
    Uncontrolled { rate_kw: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub days: u32,
    pub warmup_days: u32,
    /// Hours of mean solar output the schedules may count on beyond the
    /// current hour.
    pub forecast_horizon_h: u32,
    /// Re-check every generated schedule with an independent sweep and
    /// abort on the first failure.
    pub audit_schedules: bool,
    /// Keep the first schedule generated at or after this time (seconds).
    pub dump_schedule_at: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            days: 9,
            warmup_days: 2,
            forecast_horizon_h: 48,
            audit_schedules: false,
            dump_schedule_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(&'static str),
    #[error("scheduler fault at t={time}: {source}")]
    InternalLedgerFault { time: f64, source: LedgerError },
    #[error("generated schedule fails its audit at t={time}: {violation}")]
    ScheduleAudit { time: f64, violation: LedgerViolation },
}

/// What happened to one EV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvRecord {
    pub id: JobId,
    pub arrival: f64,
    pub lot: Option<LotId>,
    pub due: f64,
    pub volume: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub start: Option<f64>,
    pub completion: Option<f64>,
    pub departure: Option<f64>,
    pub rejected: bool,
}

impl EvRecord {
    pub fn tardiness(&self) -> Option<f64> {
        self.completion.map(|c| (c - self.due).max(0.0))
    }

    pub fn departed(&self) -> bool {
        self.departure.is_some()
    }
}

/// Cable flows after every change, piecewise constant in between.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CableTrace {
    pub cables: Vec<String>,
    pub capacities: Vec<f64>,
    pub times: Vec<f64>,
    /// `flows[k]` holds from `times[k]` until `times[k + 1]` (or `end`).
    pub flows: Vec<Vec<f64>>,
    pub end: f64,
}

impl CableTrace {
    /// Time each flow sample holds.
    pub fn durations(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.times.len()).map(move |k| self.times.get(k + 1).copied().unwrap_or(self.end) - self.times[k])
    }
}

/// Invariant checks made while the simulation runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditReport {
    /// Instants where a cable carried more than its capacity.
    pub capacity_violations: u64,
    pub worst_overflow_kw: f64,
    /// Instants where the minimum rates of charging EVs alone, without
    /// solar, would overload a cable.
    pub resilience_violations: u64,
    /// Rate changes that put a started EV below its minimum rate.
    pub preemptions: u64,
    /// Charges stopped with a delivered energy off by more than 1e-6 kWh.
    pub energy_mismatches: u64,
    pub worst_energy_error_kwh: f64,
    pub occupancy_violations: u64,
    pub schedules_audited: u64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.capacity_violations == 0
            && self.resilience_violations == 0
            && self.preemptions == 0
            && self.energy_mismatches == 0
            && self.occupancy_violations == 0
    }
}

/// One constant-rate piece of a planned charging profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlannedSegment {
    pub job: JobId,
    pub lot: LotId,
    pub from: f64,
    pub to: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleDump {
    pub generated_at: f64,
    pub segments: Vec<PlannedSegment>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimOutcome {
    pub records: Vec<EvRecord>,
    pub trace: CableTrace,
    pub audit: AuditReport,
    pub regenerations: u64,
    pub lns_iterations: u64,
    pub warmup_end: f64,
    pub end: f64,
    pub schedule_dump: Option<ScheduleDump>,
}

/// Whether an arriving EV is urgent enough for an extra regeneration: its
/// priority value lies strictly below the nearest-rank percentile
/// `1 - quantile` of the values of the scheduled EVs. Always true with
/// fewer than five scheduled EVs.
pub fn high_priority_trigger(new_value: f64, scheduled: &[f64], quantile: f64) -> bool {
    if scheduled.len() < 5 {
        return true;
    }
    let mut v = scheduled.to_vec();
    v.sort_by(f64::total_cmp);
    let p = 1.0 - quantile;
    let rank = libm::ceil(p * v.len() as f64).max(1.0) as usize;
    new_value < v[rank - 1]
}
