use core::cmp::Ordering;

use crate::fleet::JobId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    /// Reveals the solar output of the hour starting now.
    SolarUpdate { hour: usize },
    EvArrives(JobId),
    /// Planned end of charging; `generation` identifies the schedule.
    StopCharging { job: JobId, generation: u64 },
    RateChange { job: JobId, rate: f64, generation: u64 },
    PlannedDeparture(JobId),
    EvLeaves(JobId),
    /// `periodic` marks the timer chain of periodic mode.
    UpdateSchedule { periodic: bool },
    InspectSchedule { generation: u64 },
    EndSimulation,
}

impl EventKind {
    /// Processing order among events at the same instant.
    pub fn precedence(&self) -> u8 {
        match self {
            Self::SolarUpdate { .. } => 0,
            Self::EvArrives(_) => 1,
            Self::StopCharging { .. } => 2,
            Self::RateChange { .. } => 3,
            Self::PlannedDeparture(_) => 4,
            Self::EvLeaves(_) => 5,
            Self::UpdateSchedule { .. } => 6,
            Self::InspectSchedule { .. } => 7,
            Self::EndSimulation => 8,
        }
    }
}

/// A queued event, ordered by time, then precedence, then insertion.
#[derive(Clone, Copy, Debug)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Event {
    fn key(&self) -> (f64, u8, u64) {
        (self.time, self.kind.precedence(), self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    }
}
