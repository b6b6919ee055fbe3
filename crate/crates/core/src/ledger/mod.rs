//! Schedules as per-job rate profiles, backed by two capacity ledgers.
//!
//! The grid-only ledger holds every scheduled job at its minimum rate and
//! ignores solar, so the network stays within capacity even if all solar
//! output disappears and every job drops to its minimum. The actual ledger
//! holds the planned rates and credits the forecast solar output. A job may
//! only run while both ledgers have room for its minimum rate; anything
//! above the minimum comes out of the actual ledger.

mod solar;
mod timeline;

use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;
use thiserror::Error;

pub use solar::SolarForecast;
pub use timeline::TIME_EPS;
pub(crate) use timeline::push_segment;
use timeline::{Scan, Timeline};

use crate::fleet::{energy_over, JobId, PriorityRule, ENERGY_EPS};
use crate::grid::{CableId, GridTree, LotId, POWER_EPS};

/// A constant charging rate over `[from, to)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateSegment {
    pub from: f64,
    pub to: f64,
    pub rate: f64,
}

/// Contiguous rate segments from a job's start to its completion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Profile {
    pub segments: Vec<RateSegment>,
}

impl Profile {
    pub fn start(&self) -> f64 {
        self.segments[0].from
    }

    pub fn completion(&self) -> f64 {
        self.segments[self.segments.len() - 1].to
    }

    pub fn energy(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| energy_over(s.rate, s.to - s.from))
            .sum()
    }

    /// Rate at `t`, 0 outside the profile.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .find(|s| s.from <= t && t < s.to)
            .map_or(0.0, |s| s.rate)
    }
}

/// A revealed, uncompleted job as seen by the scheduler at snapshot time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanJob {
    pub id: JobId,
    pub lot: LotId,
    pub release: f64,
    pub due: f64,
    /// kWh still to deliver at snapshot time.
    pub remaining: f64,
    pub rate_min: f64,
    pub rate_max: f64,
    /// Charging began before the snapshot; it may not be interrupted.
    pub started: bool,
}

impl PlanJob {
    pub fn priority(&self, rule: PriorityRule) -> f64 {
        rule.value(self.release, self.due, self.remaining, self.rate_max)
    }
}

/// Everything a scheduler may look at when building a schedule at `t0`.
#[derive(Clone, Debug)]
pub struct Snapshot<'g> {
    pub grid: &'g GridTree,
    pub t0: f64,
    pub jobs: Vec<PlanJob>,
    pub solar: SolarForecast,
}

impl<'g> Snapshot<'g> {
    pub fn new(grid: &'g GridTree, t0: f64, jobs: Vec<PlanJob>, solar: SolarForecast) -> Self {
        Self {
            grid,
            t0,
            jobs,
            solar,
        }
    }

    /// Job indices sorted by `rule`, ties broken by arrival order.
    pub fn order_by(&self, rule: PriorityRule) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.jobs.len()).collect();
        let keys: Vec<f64> = self.jobs.iter().map(|j| j.priority(rule)).collect();
        idx.sort_by(|&a, &b| {
            keys[a]
                .total_cmp(&keys[b])
                .then(self.jobs[a].id.cmp(&self.jobs[b].id))
        });
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("job {0:?} cannot hold its minimum rate on its path even on an idle network")]
    NeverFeasible(JobId),
    #[error("minimum rates of started jobs overload the grid at job {0:?}")]
    GridOnlyInfeasible(JobId),
    #[error("job {0:?} is not in the schedule")]
    NotScheduled(JobId),
}

/// Kinds of actions a schedule asks the simulation to carry out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ActionKind {
    /// Start charging, or switch to the given rate (kW).
    RateChange(f64),
    /// Charging volume reached.
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScheduledAction {
    pub time: f64,
    pub job: JobId,
    pub kind: ActionKind,
}

/// A breach found by [`Schedule::audit`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerViolation {
    #[error("grid-only load {load} kW exceeds cable {cable:?} at t={time}")]
    GridOnly { cable: CableId, time: f64, load: f64 },
    #[error("actual flow {flow} kW exceeds cable {cable:?} at t={time}")]
    Actual { cable: CableId, time: f64, flow: f64 },
    #[error("profile of {0:?} has a gap, overlap or out-of-range rate")]
    Profile(JobId),
    #[error("profile of {job:?} delivers {delivered} kWh instead of {expected}")]
    Energy {
        job: JobId,
        delivered: f64,
        expected: f64,
    },
    #[error("started job {0:?} does not continue at the snapshot time")]
    Preempted(JobId),
}

/// A schedule built from a [`Snapshot`].
#[derive(Clone, Debug)]
pub struct Schedule<'a> {
    snap: &'a Snapshot<'a>,
    timeline: Timeline,
    profiles: Vec<Option<Profile>>,
    never: Vec<bool>,
}

impl<'a> Schedule<'a> {
    /// An empty schedule: idle network with the snapshot's solar forecast.
    pub fn empty(snap: &'a Snapshot<'a>) -> Self {
        Self {
            snap,
            timeline: Timeline::new(snap.grid, &snap.solar, snap.t0),
            profiles: vec![None; snap.jobs.len()],
            never: vec![false; snap.jobs.len()],
        }
    }

    pub fn snapshot(&self) -> &'a Snapshot<'a> {
        self.snap
    }

    pub fn t0(&self) -> f64 {
        self.snap.t0
    }

    pub fn jobs(&self) -> &'a [PlanJob] {
        &self.snap.jobs
    }

    pub fn profile(&self, j: usize) -> Option<&Profile> {
        self.profiles[j].as_ref()
    }

    pub fn is_scheduled(&self, j: usize) -> bool {
        self.profiles[j].is_some()
    }

    pub fn scheduled(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.profiles.len()).filter(|&j| self.profiles[j].is_some())
    }

    /// Jobs found to be structurally unschedulable.
    pub fn unschedulable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.never.len()).filter(|&j| self.never[j])
    }

    fn path(&self, j: usize) -> &'a [CableId] {
        self.snap.grid.path_to_root(self.snap.jobs[j].lot)
    }

    /// Reserves `profile` on both ledgers. Segment boundaries are moved onto
    /// the breakpoints they were merged into, so profiles, ledger rows and
    /// the actions derived from them agree on exact times.
    fn commit(&mut self, j: usize, mut profile: Profile) {
        let job = &self.snap.jobs[j];
        let path = self.snap.grid.path_to_root(job.lot);
        for s in &mut profile.segments {
            (s.from, s.to) = self.timeline.reserve(path, s.from, s.to, job.rate_min, s.rate);
        }
        if profile.segments.iter().any(|s| s.to > s.from) {
            profile.segments.retain(|s| s.to > s.from);
        }
        self.profiles[j] = Some(profile);
    }

    /// Places a profile computed elsewhere (e.g. by the parallel scheme).
    pub(crate) fn insert_profile(&mut self, j: usize, profile: Profile) {
        debug_assert!(self.profiles[j].is_none());
        self.commit(j, profile);
    }

    pub(crate) fn mark_never(&mut self, j: usize) {
        self.never[j] = true;
    }

    /// Removes job `j` and releases its reservations on both ledgers.
    /// Other profiles are left untouched.
    pub fn remove_job(&mut self, j: usize) -> Result<Profile, LedgerError> {
        let profile = self.profiles[j]
            .take()
            .ok_or(LedgerError::NotScheduled(self.snap.jobs[j].id))?;
        let job = &self.snap.jobs[j];
        let path = self.snap.grid.path_to_root(job.lot);
        for s in &profile.segments {
            self.timeline.reserve(path, s.from, s.to, -job.rate_min, -s.rate);
        }
        Ok(profile)
    }

    /// Places job `j` as early as possible at the highest rate the actual
    /// ledger allows. Started jobs keep starting at `t0`; a job already in
    /// the schedule (e.g. a minimum-rate placeholder) is re-placed.
    pub fn add_job_earliest(&mut self, j: usize) -> Result<&Profile, LedgerError> {
        let job = &self.snap.jobs[j];
        let old = self.profiles[j].is_some().then(|| self.remove_job(j)).transpose()?;
        let earliest = self.snap.t0.max(job.release);
        let scan = self.timeline.scan(
            self.path(j),
            job.rate_min,
            job.rate_max,
            job.remaining,
            earliest,
            job.started,
        );
        match scan {
            Scan::Placed(segments) => {
                self.commit(j, Profile { segments });
                Ok(self.profiles[j].as_ref().unwrap())
            }
            Scan::Never | Scan::Blocked => {
                if let Some(old) = old {
                    self.commit(j, old);
                }
                if job.started {
                    Err(LedgerError::GridOnlyInfeasible(job.id))
                } else {
                    Err(LedgerError::NeverFeasible(job.id))
                }
            }
        }
    }

    /// Holds job `j` at its minimum rate from `t0` until its remaining
    /// volume is delivered.
    pub fn schedule_at_min_rate(&mut self, j: usize) -> Result<(), LedgerError> {
        if self.profiles[j].is_some() {
            self.remove_job(j)?;
        }
        let job = &self.snap.jobs[j];
        let t0 = self.snap.t0;
        let scan = self
            .timeline
            .scan(self.path(j), job.rate_min, job.rate_min, job.remaining, t0, true);
        match scan {
            Scan::Placed(segments) => {
                self.commit(j, Profile { segments });
                Ok(())
            }
            _ => Err(LedgerError::GridOnlyInfeasible(job.id)),
        }
    }

    /// Re-places every scheduled job of `order`, in that order, at its
    /// current start with the highest rates the actual ledger allows.
    pub fn raise_rates_greedy(&mut self, order: &[usize]) {
        for &j in order {
            let Some(start) = self.profiles[j].as_ref().map(Profile::start) else {
                continue;
            };
            let old = self.remove_job(j).expect("scheduled");
            let job = &self.snap.jobs[j];
            match self.timeline.scan(
                self.path(j),
                job.rate_min,
                job.rate_max,
                job.remaining,
                start,
                true,
            ) {
                Scan::Placed(segments) => self.commit(j, Profile { segments }),
                _ => self.commit(j, old),
            }
        }
    }

    /// Total predicted tardiness (s) over scheduled jobs.
    pub fn predicted_tardiness(&self) -> f64 {
        self.profiles
            .iter()
            .zip(&self.snap.jobs)
            .filter_map(|(p, j)| p.as_ref().map(|p| (p.completion() - j.due).max(0.0)))
            .sum()
    }

    /// Higher is better: negated total predicted tardiness.
    pub fn predicted_score(&self) -> f64 {
        -self.predicted_tardiness()
    }

    /// All provisional actions from `t0` on, sorted by time with stops
    /// before rate changes and ties broken by job id.
    pub fn actions(&self) -> Vec<ScheduledAction> {
        let mut out = Vec::new();
        for (p, job) in self.profiles.iter().zip(&self.snap.jobs) {
            let Some(p) = p else { continue };
            let mut last = f64::NAN;
            for s in &p.segments {
                if s.rate != last {
                    out.push(ScheduledAction {
                        time: s.from,
                        job: job.id,
                        kind: ActionKind::RateChange(s.rate),
                    });
                    last = s.rate;
                }
            }
            out.push(ScheduledAction {
                time: p.completion(),
                job: job.id,
                kind: ActionKind::Stop,
            });
        }
        out.sort_by(|a, b| {
            let rank = |k: &ActionKind| matches!(k, ActionKind::RateChange(_)) as u8;
            a.time
                .total_cmp(&b.time)
                .then(rank(&a.kind).cmp(&rank(&b.kind)))
                .then(a.job.cmp(&b.job))
        });
        out
    }

    /// Earliest provisional action strictly after `after`.
    pub fn next_schedule_event(&self, after: f64) -> Option<ScheduledAction> {
        self.actions().into_iter().find(|a| a.time > after)
    }

    /// Segment rows `(job, lot, from, to, rate)` for dumping.
    pub fn segment_rows(&self) -> Vec<(JobId, LotId, RateSegment)> {
        let mut rows = Vec::new();
        for (p, job) in self.profiles.iter().zip(&self.snap.jobs) {
            if let Some(p) = p {
                rows.extend(p.segments.iter().map(|s| (job.id, job.lot, *s)));
            }
        }
        rows
    }

    /// Merges breakpoints that no longer separate different loads.
    pub fn compact(&mut self) {
        self.timeline.compact(1e-9);
    }

    pub fn breakpoint_count(&self) -> usize {
        self.timeline.len()
    }

    /// Ledger rows as `(start, end, grid_room, actual_room)` for one cable.
    pub fn ledger_rows(&self, cable: CableId) -> Vec<(f64, f64, f64, f64)> {
        (0..self.timeline.len())
            .map(|k| {
                (
                    self.timeline.start(k),
                    self.timeline.end(k),
                    self.timeline.grid_room(k, cable),
                    self.timeline.actual_room(k, cable),
                )
            })
            .collect()
    }

    /// Recomputes both ledgers from the profiles with a sweep over all
    /// segment boundaries and checks every invariant of the schedule.
    pub fn audit(&self) -> Result<(), LedgerViolation> {
        let grid = self.snap.grid;
        let t0 = self.snap.t0;
        let mut events: Vec<(f64, usize, f64, f64)> = Vec::new();
        for (j, p) in self.profiles.iter().enumerate() {
            let Some(p) = p else { continue };
            let job = &self.snap.jobs[j];
            if job.started && (p.start() - t0).abs() > TIME_EPS {
                return Err(LedgerViolation::Preempted(job.id));
            }
            if p.start() < t0 - TIME_EPS {
                return Err(LedgerViolation::Profile(job.id));
            }
            for w in p.segments.windows(2) {
                if (w[0].to - w[1].from).abs() > TIME_EPS {
                    return Err(LedgerViolation::Profile(job.id));
                }
            }
            for s in &p.segments {
                if !(s.to > s.from)
                    || s.rate < job.rate_min - POWER_EPS
                    || s.rate > job.rate_max + POWER_EPS
                {
                    return Err(LedgerViolation::Profile(job.id));
                }
                events.push((s.from, job.lot.0, job.rate_min, s.rate));
                events.push((s.to, job.lot.0, -job.rate_min, -s.rate));
            }
            let delivered = p.energy();
            if (delivered - job.remaining).abs() > 1e-6 {
                return Err(LedgerViolation::Energy {
                    job: job.id,
                    delivered,
                    expected: job.remaining,
                });
            }
        }
        let mut times: Vec<f64> = events.iter().map(|e| e.0).collect();
        let mut t = t0;
        while let Some(next) = self.snap.solar.next_change_after(t) {
            times.push(next);
            t = next;
            if times.len() > events.len() + 10_000 {
                break;
            }
        }
        times.push(t0);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|b, a| *b - *a <= TIME_EPS);
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let lots = grid.lot_count();
        let mut min_load = vec![0.0; lots];
        let mut rate_load = vec![0.0; lots];
        let mut e = 0;
        for &t in &times {
            while e < events.len() && events[e].0 <= t + TIME_EPS {
                min_load[events[e].1] += events[e].2;
                rate_load[events[e].1] += events[e].3;
                e += 1;
            }
            let sun: Vec<f64> = (0..lots).map(|l| self.snap.solar.at(l, t)).collect();
            let g = grid.cable_flows(&min_load, &[]).expect("sized");
            let a = grid.cable_flows(&rate_load, &sun).expect("sized");
            for c in 0..grid.cable_count() {
                let cap = grid.capacity(CableId(c));
                if g[c] > cap + 1e-6 {
                    return Err(LedgerViolation::GridOnly {
                        cable: CableId(c),
                        time: t,
                        load: g[c],
                    });
                }
                if a[c] > cap + 1e-6 {
                    return Err(LedgerViolation::Actual {
                        cable: CableId(c),
                        time: t,
                        flow: a[c],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Whether a remaining volume is still worth scheduling.
pub fn needs_charge(remaining: f64) -> bool {
    remaining > ENERGY_EPS
}
