//! Charging jobs and priority rules.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::LotId;

/// Seconds per hour; the only place where energy and duration meet.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Energy tolerance (kWh) below which a job counts as fully charged.
pub const ENERGY_EPS: f64 = 1e-9;

/// Arrival-order sequence number of an EV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId(pub u32);

/// Seconds needed to deliver `energy` kWh at `rate` kW.
pub fn charge_duration(energy: f64, rate: f64) -> f64 {
    energy / rate * SECONDS_PER_HOUR
}

/// kWh delivered at `rate` kW over `seconds`.
pub fn energy_over(rate: f64, seconds: f64) -> f64 {
    rate * seconds / SECONDS_PER_HOUR
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JobError {
    #[error("due time {due} is not after release {release}")]
    EmptyWindow { release: f64, due: f64 },
    #[error("rate bounds [{min}, {max}] are invalid")]
    InvalidRates { min: f64, max: f64 },
    #[error("volume {0} kWh must be positive")]
    NonPositiveVolume(f64),
    #[error("connection time {connection} s is shorter than {needed} s needed at the minimum rate")]
    ConnectionTooShort { connection: f64, needed: f64 },
}

/// One EV: its revealed attributes plus its charging state.
///
/// Energy delivered is tracked as `delivered` kWh at `rate_since`, with the
/// current `rate` applying from then on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargingJob {
    pub id: JobId,
    pub release: f64,
    pub due: f64,
    pub volume: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    pub preference: Vec<LotId>,
    pub assigned_lot: Option<LotId>,
    pub delivered: f64,
    pub rate: f64,
    pub rate_since: f64,
    pub started_at: Option<f64>,
    pub completed_at: Option<f64>,
}

impl ChargingJob {
    pub fn new(
        id: JobId,
        release: f64,
        due: f64,
        volume: f64,
        rate_min: f64,
        rate_max: f64,
        preference: Vec<LotId>,
    ) -> Result<Self, JobError> {
        if !(due > release) {
            return Err(JobError::EmptyWindow { release, due });
        }
        if !(rate_min > 0.0 && rate_min <= rate_max) {
            return Err(JobError::InvalidRates {
                min: rate_min,
                max: rate_max,
            });
        }
        if !(volume > 0.0) {
            return Err(JobError::NonPositiveVolume(volume));
        }
        let needed = charge_duration(volume, rate_min);
        // Relative slack absorbs the rounding of sampled connection times.
        if due - release < needed * (1.0 - 1e-12) {
            return Err(JobError::ConnectionTooShort {
                connection: due - release,
                needed,
            });
        }
        Ok(Self {
            id,
            release,
            due,
            volume,
            rate_min,
            rate_max,
            preference,
            assigned_lot: None,
            delivered: 0.0,
            rate: 0.0,
            rate_since: release,
            started_at: None,
            completed_at: None,
        })
    }

    /// Energy delivered up to `as_of`, integrating the current rate.
    pub fn delivered_at(&self, as_of: f64) -> f64 {
        let dt = (as_of - self.rate_since).max(0.0);
        (self.delivered + energy_over(self.rate, dt)).min(self.volume)
    }

    /// E'_j: volume still to be charged at `as_of`.
    pub fn remaining_volume(&self, as_of: f64) -> f64 {
        if self.completed_at.is_some() {
            return 0.0;
        }
        (self.volume - self.delivered_at(as_of)).max(0.0)
    }

    /// Switches to `rate` at time `t`, booking the energy charged so far.
    pub fn set_rate(&mut self, t: f64, rate: f64) {
        self.delivered = self.delivered_at(t);
        self.rate_since = t;
        self.rate = rate;
        if rate > 0.0 && self.started_at.is_none() {
            self.started_at = Some(t);
        }
    }

    /// Marks the job as fully charged at `t`.
    pub fn complete(&mut self, t: f64) {
        self.delivered = self.volume;
        self.rate = 0.0;
        self.rate_since = t;
        self.completed_at = Some(t);
    }

    pub fn is_started(&self) -> bool {
        self.started_at.is_some()
    }

    /// Delay at completion, or the delay accrued so far for a job that is
    /// still charging at `as_of`.
    pub fn tardiness(&self, as_of: f64) -> f64 {
        let end = self.completed_at.unwrap_or(as_of);
        (end - self.due).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorityRule {
    /// First come first serve: release time.
    #[serde(rename = "FCFS")]
    Fcfs,
    /// Earliest due date.
    #[serde(rename = "EDD")]
    Edd,
    /// Updated earliest latest starting time: due date minus the time the
    /// remaining volume takes at the maximum rate.
    #[serde(rename = "ELSTu")]
    Elstu,
}

impl PriorityRule {
    /// Priority value; smaller means more urgent.
    pub fn value(self, release: f64, due: f64, remaining: f64, rate_max: f64) -> f64 {
        match self {
            PriorityRule::Fcfs => release,
            PriorityRule::Edd => due,
            PriorityRule::Elstu => due - charge_duration(remaining, rate_max),
        }
    }

    pub fn of_job(self, job: &ChargingJob, as_of: f64) -> f64 {
        self.value(job.release, job.due, job.remaining_volume(as_of), job.rate_max)
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorityRule::Fcfs => "FCFS",
            PriorityRule::Edd => "EDD",
            PriorityRule::Elstu => "ELSTu",
        }
    }
}

/// Orders `(value, id)` pairs by value, ties by arrival order.
pub fn priority_cmp(a: (f64, JobId), b: (f64, JobId)) -> core::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}
