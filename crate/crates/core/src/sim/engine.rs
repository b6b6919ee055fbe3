use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand_chacha::ChaCha8Rng;

use super::event::{Event, EventKind};
use super::{
    high_priority_trigger, AuditReport, CableTrace, Control, EvRecord, Mode, PlannedSegment, ScheduleDump,
    SchedulerKind, SimConfig, SimError, SimOutcome, Strategy,
};
use crate::fleet::{charge_duration, ChargingJob, JobId, SECONDS_PER_HOUR};
use crate::grid::{CableId, GridTree, POWER_EPS};
use crate::ledger::{ActionKind, PlanJob, Schedule, ScheduledAction, Snapshot, SolarForecast};
use crate::lns::destroy_and_repair;
use crate::sampler::{stream, Instance, SECONDS_PER_DAY, STREAM_SCHEDULER};
use crate::sgs::{parallel_generate, serial_generate};

/// Energy (kWh) within which a charge counts as complete.
const ENERGY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Pending,
    Parked,
    Rejected,
    Left,
}

struct Engine<'a> {
    grid: &'a GridTree,
    instance: &'a Instance,
    control: Control,
    config: SimConfig,
    end: f64,
    now: f64,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,

    jobs: Vec<ChargingJob>,
    status: Vec<Status>,
    departure: Vec<Option<f64>>,
    occupancy: Vec<u32>,
    parked: Vec<usize>,
    /// Sum of current rates and of minimum rates of charging EVs, per lot.
    lot_rate: Vec<f64>,
    lot_min: Vec<f64>,
    solar_now: Vec<f64>,

    generation: u64,
    plan: Vec<ScheduledAction>,
    cursor: usize,
    update_pending: bool,
    dirty: bool,
    last_update: f64,
    next_periodic: f64,
    rng: ChaCha8Rng,

    trace: CableTrace,
    audit: AuditReport,
    regenerations: u64,
    lns_iterations: u64,
    dump: Option<ScheduleDump>,
}

/// Runs one simulation of `instance` on `grid`. `seed` drives the random
/// choices of the scheduler.
pub fn run(
    grid: &GridTree,
    instance: &Instance,
    control: &Control,
    config: &SimConfig,
    seed: u64,
) -> Result<SimOutcome, SimError> {
    if config.days == 0 || config.warmup_days >= config.days {
        return Err(SimError::ConfigInvalid("need more days than warm-up days"));
    }
    match control {
        Control::Scheduled(s) => s.validate()?,
        Control::Uncontrolled { rate_kw } => {
            if !(*rate_kw > 0.0 && rate_kw.is_finite()) {
                return Err(SimError::ConfigInvalid("uncontrolled rate must be positive"));
            }
        }
    }
    if instance.solar_means.len() != grid.lot_count() {
        return Err(SimError::ConfigInvalid("instance was generated for another grid"));
    }
    let mut engine = Engine::new(grid, instance, *control, *config, seed);
    engine.execute()?;
    Ok(engine.finish())
}

/// Every EV charges at 9 kW from arrival until full, ignoring the grid.
pub fn uncontrolled_run(grid: &GridTree, instance: &Instance, config: &SimConfig) -> Result<SimOutcome, SimError> {
    run(grid, instance, &Control::Uncontrolled { rate_kw: 9.0 }, config, 0)
}

impl<'a> Engine<'a> {
    fn new(grid: &'a GridTree, instance: &'a Instance, control: Control, config: SimConfig, seed: u64) -> Self {
        let lots = grid.lot_count();
        let cables = grid.cable_count();
        let n = instance.jobs.len();
        Self {
            grid,
            instance,
            control,
            config,
            end: f64::from(config.days) * SECONDS_PER_DAY,
            now: 0.0,
            queue: BinaryHeap::new(),
            seq: 0,
            jobs: instance.jobs.clone(),
            status: vec![Status::Pending; n],
            departure: vec![None; n],
            occupancy: vec![0; lots],
            parked: Vec::new(),
            lot_rate: vec![0.0; lots],
            lot_min: vec![0.0; lots],
            solar_now: vec![0.0; lots],
            generation: 0,
            plan: Vec::new(),
            cursor: 0,
            update_pending: false,
            dirty: true,
            last_update: f64::NEG_INFINITY,
            next_periodic: f64::INFINITY,
            rng: stream(seed, STREAM_SCHEDULER),
            trace: CableTrace {
                cables: (0..cables).map(|c| grid.cable_name(CableId(c))).collect(),
                capacities: (0..cables).map(|c| grid.capacity(CableId(c))).collect(),
                ..CableTrace::default()
            },
            audit: AuditReport::default(),
            regenerations: 0,
            lns_iterations: 0,
            dump: None,
        }
    }

    fn strategy(&self) -> Option<Strategy> {
        match self.control {
            Control::Scheduled(s) => Some(s),
            Control::Uncontrolled { .. } => None,
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn execute(&mut self) -> Result<(), SimError> {
        self.push(0.0, EventKind::SolarUpdate { hour: 0 });
        if let Some(first) = self.jobs.first() {
            let t = first.release;
            if t < self.end {
                self.push(t, EventKind::EvArrives(JobId(0)));
            }
        }
        self.push(self.end, EventKind::EndSimulation);
        if let Some(Strategy {
            mode: Mode::Periodic { .. },
            ..
        }) = self.strategy()
        {
            self.push(0.0, EventKind::UpdateSchedule { periodic: true });
        }

        while let Some(Reverse(event)) = self.queue.pop() {
            if event.time > self.now {
                self.record_state();
                self.now = event.time;
            }
            match event.kind {
                EventKind::SolarUpdate { hour } => self.on_solar(hour),
                EventKind::EvArrives(j) => self.on_arrival(j.0 as usize),
                EventKind::StopCharging { job, generation } => {
                    if generation == self.generation {
                        self.stop(job.0 as usize);
                    }
                }
                EventKind::RateChange { job, rate, generation } => {
                    if generation == self.generation {
                        self.change_rate(job.0 as usize, rate);
                    }
                }
                EventKind::PlannedDeparture(j) => {
                    if self.jobs[j.0 as usize].completed_at.is_some() {
                        self.push(self.now, EventKind::EvLeaves(j));
                    }
                }
                EventKind::EvLeaves(j) => self.leave(j.0 as usize),
                EventKind::UpdateSchedule { periodic } => self.on_update(periodic)?,
                EventKind::InspectSchedule { generation } => {
                    if generation == self.generation {
                        self.inspect();
                    }
                }
                EventKind::EndSimulation => {
                    self.record_state();
                    break;
                }
            }
        }
        Ok(())
    }

    fn request_update(&mut self) {
        if !self.update_pending {
            self.update_pending = true;
            self.push(self.now, EventKind::UpdateSchedule { periodic: false });
        }
    }

    fn on_solar(&mut self, hour: usize) {
        match self.instance.solar.get(hour) {
            Some(s) => self.solar_now.copy_from_slice(s),
            None => self.solar_now.iter_mut().for_each(|x| *x = 0.0),
        }
        let next = (hour + 1) as f64 * SECONDS_PER_HOUR;
        if next < self.end {
            self.push(next, EventKind::SolarUpdate { hour: hour + 1 });
        }
        self.dirty = true;
        if self.strategy().is_some() {
            self.request_update();
        }
    }

    fn on_arrival(&mut self, j: usize) {
        if let Some(next) = self.jobs.get(j + 1) {
            if next.release < self.end {
                self.push(next.release, EventKind::EvArrives(JobId(j as u32 + 1)));
            }
        }
        let lot = self.jobs[j]
            .preference
            .iter()
            .copied()
            .find(|l| self.occupancy[l.0] < self.grid.lot(*l).spots);
        let Some(lot) = lot else {
            self.status[j] = Status::Rejected;
            return;
        };
        self.jobs[j].assigned_lot = Some(lot);
        self.status[j] = Status::Parked;
        self.occupancy[lot.0] += 1;
        self.parked.push(j);
        let due = self.jobs[j].due;
        self.push(due, EventKind::PlannedDeparture(JobId(j as u32)));

        match self.control {
            Control::Uncontrolled { rate_kw } => {
                self.change_rate(j, rate_kw);
                let done = self.now + charge_duration(self.jobs[j].volume, rate_kw);
                self.push(
                    done,
                    EventKind::StopCharging {
                        job: JobId(j as u32),
                        generation: self.generation,
                    },
                );
            }
            Control::Scheduled(s) => {
                self.dirty = true;
                let trigger = match s.mode {
                    Mode::OnNewInformation => true,
                    Mode::Periodic { .. } => {
                        let value = s.rule.of_job(&self.jobs[j], self.now);
                        let others: Vec<f64> = self
                            .parked
                            .iter()
                            .filter(|&&k| k != j && self.jobs[k].completed_at.is_none())
                            .map(|&k| s.rule.of_job(&self.jobs[k], self.now))
                            .collect();
                        high_priority_trigger(value, &others, s.high_priority_quantile)
                    }
                };
                if trigger {
                    self.request_update();
                }
            }
        }
    }

    fn change_rate(&mut self, j: usize, rate: f64) {
        let job = &self.jobs[j];
        if job.completed_at.is_some() || self.status[j] != Status::Parked {
            return;
        }
        if job.is_started() && rate < job.rate_min - POWER_EPS && self.strategy().is_some() {
            self.audit.preemptions += 1;
        }
        self.apply_rate(j, rate);
    }

    fn apply_rate(&mut self, j: usize, rate: f64) {
        let job = &self.jobs[j];
        let lot = job.assigned_lot.expect("parked").0;
        if job.rate > 0.0 {
            self.lot_min[lot] -= job.rate_min;
        }
        if rate > 0.0 {
            self.lot_min[lot] += job.rate_min;
        }
        self.lot_rate[lot] += rate - job.rate;
        let now = self.now;
        self.jobs[j].set_rate(now, rate);
    }

    fn stop(&mut self, j: usize) {
        if self.jobs[j].completed_at.is_some() || self.status[j] != Status::Parked {
            return;
        }
        let err = (self.jobs[j].delivered_at(self.now) - self.jobs[j].volume).abs();
        let unclamped = {
            let job = &self.jobs[j];
            (job.delivered + job.rate * (self.now - job.rate_since) / SECONDS_PER_HOUR - job.volume).abs()
        };
        let err = err.max(unclamped);
        self.audit.worst_energy_error_kwh = self.audit.worst_energy_error_kwh.max(err);
        if err > ENERGY_TOL {
            self.audit.energy_mismatches += 1;
        }
        self.finish_charge(j);
        if let Some(s) = self.strategy() {
            self.dirty = true;
            if s.mode == Mode::OnNewInformation && s.reschedule_on_stop {
                self.request_update();
            }
        }
    }

    /// Marks `j` as fully charged now and lets it leave if it is past due.
    fn finish_charge(&mut self, j: usize) {
        self.apply_rate(j, 0.0);
        let now = self.now;
        self.jobs[j].complete(now);
        if now >= self.jobs[j].due {
            self.push(now, EventKind::EvLeaves(JobId(j as u32)));
        }
    }

    fn leave(&mut self, j: usize) {
        if self.status[j] != Status::Parked {
            return;
        }
        self.status[j] = Status::Left;
        self.departure[j] = Some(self.now);
        let lot = self.jobs[j].assigned_lot.expect("parked").0;
        self.occupancy[lot] -= 1;
        self.parked.retain(|&k| k != j);
    }

    fn on_update(&mut self, periodic: bool) -> Result<(), SimError> {
        let Some(strategy) = self.strategy() else {
            return Ok(());
        };
        if periodic {
            if let Mode::Periodic { interval_s } = strategy.mode {
                self.next_periodic = self.now + interval_s;
                if self.next_periodic < self.end {
                    self.push(self.next_periodic, EventKind::UpdateSchedule { periodic: true });
                }
            }
        } else {
            self.update_pending = false;
        }
        if self.last_update == self.now && !self.dirty {
            return Ok(());
        }
        self.regenerate(&strategy)
    }

    fn regenerate(&mut self, strategy: &Strategy) -> Result<(), SimError> {
        let now = self.now;
        // Charges that reached their volume but whose stop is still queued.
        let parked = self.parked.clone();
        for &j in &parked {
            let job = &self.jobs[j];
            if job.completed_at.is_none() && job.is_started() && job.remaining_volume(now) <= ENERGY_TOL {
                self.stop(j);
            }
        }

        let mut order: Vec<usize> = self
            .parked
            .iter()
            .copied()
            .filter(|&j| self.jobs[j].completed_at.is_none())
            .collect();
        order.sort_unstable();
        let plan_jobs: Vec<PlanJob> = order
            .iter()
            .map(|&j| {
                let job = &self.jobs[j];
                PlanJob {
                    id: job.id,
                    lot: job.assigned_lot.expect("parked"),
                    release: job.release,
                    due: job.due,
                    remaining: job.remaining_volume(now),
                    rate_min: job.rate_min,
                    rate_max: job.rate_max,
                    started: job.is_started(),
                }
            })
            .collect();
        let forecast = SolarForecast::hourly(
            now,
            &self.solar_now,
            &self.instance.solar_means,
            self.config.forecast_horizon_h,
        );
        let snapshot = Snapshot::new(self.grid, now, plan_jobs, forecast);
        let fault = |source| SimError::InternalLedgerFault { time: now, source };

        let schedule: Schedule<'_> = match strategy.scheduler {
            SchedulerKind::Fcfs | SchedulerKind::S => serial_generate(&snapshot, strategy.rule).map_err(fault)?,
            SchedulerKind::P => {
                let stop_after = match strategy.mode {
                    Mode::OnNewInformation => f64::INFINITY,
                    Mode::Periodic { .. } => self.next_periodic,
                };
                parallel_generate(&snapshot, strategy.rule, stop_after).map_err(fault)?
            }
            SchedulerKind::SR | SchedulerKind::PR => {
                let initial = if strategy.scheduler == SchedulerKind::SR {
                    serial_generate(&snapshot, strategy.rule)
                } else {
                    parallel_generate(&snapshot, strategy.rule, f64::INFINITY)
                }
                .map_err(fault)?;
                let (best, stats) = destroy_and_repair(initial, &strategy.repair, &mut self.rng).map_err(fault)?;
                self.lns_iterations += u64::from(stats.iterations);
                best
            }
        };
        if self.config.audit_schedules {
            self.audit.schedules_audited += 1;
            schedule
                .audit()
                .map_err(|violation| SimError::ScheduleAudit { time: now, violation })?;
        }
        if self.dump.is_none() && self.config.dump_schedule_at.is_some_and(|t| now >= t) {
            let segments = schedule
                .segment_rows()
                .into_iter()
                .map(|(job, lot, s)| PlannedSegment {
                    job,
                    lot,
                    from: s.from,
                    to: s.to,
                    rate: s.rate,
                })
                .collect();
            self.dump = Some(ScheduleDump {
                generated_at: now,
                segments,
            });
        }
        let actions = schedule.actions();
        drop(schedule);

        self.regenerations += 1;
        self.generation += 1;
        self.last_update = now;
        self.dirty = false;
        self.plan = actions;
        self.cursor = 0;
        if let Some(first) = self.plan.first() {
            let t = first.time.max(now);
            self.push(t, EventKind::InspectSchedule { generation: self.generation });
        }
        Ok(())
    }

    /// Queues every planned action due now and waits for the next one.
    fn inspect(&mut self) {
        while let Some(a) = self.plan.get(self.cursor) {
            if a.time > self.now {
                break;
            }
            let kind = match a.kind {
                ActionKind::RateChange(rate) => EventKind::RateChange {
                    job: a.job,
                    rate,
                    generation: self.generation,
                },
                ActionKind::Stop => EventKind::StopCharging {
                    job: a.job,
                    generation: self.generation,
                },
            };
            self.push(self.now, kind);
            self.cursor += 1;
        }
        if let Some(a) = self.plan.get(self.cursor) {
            let t = a.time;
            self.push(t, EventKind::InspectSchedule { generation: self.generation });
        }
    }

    /// Records cable flows for the state reached at `self.now` and checks
    /// the grid invariants.
    fn record_state(&mut self) {
        let grid = self.grid;
        let used = grid
            .dispatch_solar(&self.lot_rate, &self.solar_now)
            .unwrap_or_else(|| self.solar_now.clone());
        let flows = grid.cable_flows(&self.lot_rate, &used).expect("sized per lot");
        if self.strategy().is_some() {
            let mut over = false;
            for (c, f) in flows.iter().enumerate() {
                let excess = f.abs() - self.trace.capacities[c];
                if excess > 1e-6 {
                    over = true;
                    self.audit.worst_overflow_kw = self.audit.worst_overflow_kw.max(excess);
                }
            }
            if over {
                self.audit.capacity_violations += 1;
            }
            let minimum = grid.cable_flows(&self.lot_min, &[]).expect("sized per lot");
            if minimum
                .iter()
                .zip(&self.trace.capacities)
                .any(|(f, cap)| *f > cap + 1e-6)
            {
                self.audit.resilience_violations += 1;
            }
        }
        for l in grid.lot_ids() {
            if self.occupancy[l.0] > grid.lot(l).spots {
                self.audit.occupancy_violations += 1;
            }
        }
        let changed = self.trace.flows.last().is_none_or(|last| last != &flows);
        if changed {
            self.trace.times.push(self.now);
            self.trace.flows.push(flows);
        }
    }

    fn finish(mut self) -> SimOutcome {
        self.trace.end = self.end;
        let records = self
            .jobs
            .iter()
            .enumerate()
            .filter(|(_, j)| j.release < self.end)
            .map(|(i, j)| EvRecord {
                id: j.id,
                arrival: j.release,
                lot: j.assigned_lot,
                due: j.due,
                volume: j.volume,
                rate_min: j.rate_min,
                rate_max: j.rate_max,
                start: j.started_at,
                completion: j.completed_at,
                departure: self.departure[i],
                rejected: self.status[i] == Status::Rejected,
            })
            .collect();
        SimOutcome {
            records,
            trace: self.trace,
            audit: self.audit,
            regenerations: self.regenerations,
            lns_iterations: self.lns_iterations,
            warmup_end: f64::from(self.config.warmup_days) * SECONDS_PER_DAY,
            end: self.end,
            schedule_dump: self.dump,
        }
    }
}
