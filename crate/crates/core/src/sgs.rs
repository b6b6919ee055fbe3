//! Serial and parallel schedule generation schemes.

use alloc::vec;
use alloc::vec::Vec;

use crate::fleet::{charge_duration, energy_over, PriorityRule, ENERGY_EPS};
use crate::grid::{CableId, POWER_EPS};
use crate::ledger::{push_segment, LedgerError, Profile, RateSegment, Schedule, Snapshot, TIME_EPS};

/// Serial scheme: every job in priority order, each placed as early as
/// possible at the highest rate the ledgers allow. Started jobs hold their
/// minimum rate from `t0` until they are reached in the order.
///
/// Jobs whose minimum rate exceeds a cable on their path are left out and
/// reported through [`Schedule::unschedulable`]. An error means the started
/// jobs alone overload the grid.
pub fn serial_generate<'a>(
    snap: &'a Snapshot<'a>,
    rule: PriorityRule,
) -> Result<Schedule<'a>, LedgerError> {
    let mut schedule = Schedule::empty(snap);
    place_started(&mut schedule)?;
    let order = snap.order_by(rule);
    insert_in_order(&mut schedule, &order)?;
    Ok(schedule)
}

/// Holds every started job of the snapshot at its minimum rate from `t0`.
pub(crate) fn place_started(schedule: &mut Schedule<'_>) -> Result<(), LedgerError> {
    for j in 0..schedule.jobs().len() {
        if schedule.jobs()[j].started {
            schedule.schedule_at_min_rate(j)?;
        }
    }
    Ok(())
}

/// Places (or upgrades) the given jobs one by one.
pub(crate) fn insert_in_order(schedule: &mut Schedule<'_>, order: &[usize]) -> Result<(), LedgerError> {
    for &j in order {
        let placed = schedule.add_job_earliest(j).map(|_| ());
        match placed {
            Ok(()) => {}
            // Fully blocked started jobs keep their minimum-rate placement.
            Err(LedgerError::GridOnlyInfeasible(_)) if schedule.is_scheduled(j) => {}
            Err(LedgerError::NeverFeasible(_)) => schedule.mark_never(j),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Parallel scheme: walks forward in time and, at every decision point,
/// starts the most urgent waiting jobs whose minimum rate still fits on the
/// grid and hands out the remaining room to running jobs in priority order.
///
/// Decision points are `t0`, releases, completions and forecast changes. Once a
/// decision point lies beyond `stop_after`, running jobs finish at their
/// minimum rate and jobs not yet started stay unscheduled.
pub fn parallel_generate<'a>(
    snap: &'a Snapshot<'a>,
    rule: PriorityRule,
    stop_after: f64,
) -> Result<Schedule<'a>, LedgerError> {
    let grid = snap.grid;
    let jobs = &snap.jobs;
    let caps: Vec<f64> = (0..grid.cable_count()).map(|c| grid.capacity(CableId(c))).collect();
    let order = snap.order_by(rule);
    let mut schedule = Schedule::empty(snap);

    let mut remaining: Vec<f64> = jobs.iter().map(|j| j.remaining).collect();
    let mut segments: Vec<Vec<RateSegment>> = vec![Vec::new(); jobs.len()];
    let mut active: Vec<bool> = vec![false; jobs.len()];
    let mut waiting: Vec<bool> = vec![false; jobs.len()];
    let mut grid_load = vec![0.0; caps.len()];

    for (j, job) in jobs.iter().enumerate() {
        let path = grid.path_to_root(job.lot);
        if job.started {
            active[j] = true;
            for c in path {
                grid_load[c.0] += job.rate_min;
            }
        } else if path.iter().any(|c| job.rate_min > caps[c.0] + POWER_EPS) {
            schedule.mark_never(j);
        } else {
            waiting[j] = true;
        }
    }
    if let Some(&j) = order.iter().find(|&&j| {
        active[j]
            && grid
                .path_to_root(jobs[j].lot)
                .iter()
                .any(|c| grid_load[c.0] > caps[c.0] + POWER_EPS)
    }) {
        return Err(LedgerError::GridOnlyInfeasible(jobs[j].id));
    }

    let mut rates = vec![0.0; jobs.len()];
    let mut room = vec![0.0; caps.len()];
    let mut t = snap.t0;
    loop {
        let deciding = t <= stop_after;
        if deciding {
            for &j in &order {
                if !waiting[j] || jobs[j].release > t + TIME_EPS {
                    continue;
                }
                let path = grid.path_to_root(jobs[j].lot);
                if path
                    .iter()
                    .all(|c| grid_load[c.0] + jobs[j].rate_min <= caps[c.0] + POWER_EPS)
                {
                    waiting[j] = false;
                    active[j] = true;
                    for c in path {
                        grid_load[c.0] += jobs[j].rate_min;
                    }
                }
            }
            for (c, r) in room.iter_mut().enumerate() {
                let sun: f64 = grid
                    .downstream_lots(CableId(c))
                    .iter()
                    .map(|l| snap.solar.at(l.0, t))
                    .sum();
                *r = caps[c] + sun - grid_load[c];
            }
        }
        let mut next = f64::INFINITY;
        for &j in &order {
            if !active[j] {
                continue;
            }
            let job = &jobs[j];
            let mut rate = job.rate_min;
            if deciding {
                let path = grid.path_to_root(job.lot);
                let free = path.iter().map(|c| room[c.0]).fold(f64::INFINITY, f64::min);
                let extra = free.min(job.rate_max - job.rate_min).max(0.0);
                for c in path {
                    room[c.0] -= extra;
                }
                rate += extra;
            }
            rates[j] = rate;
            next = next.min(t + charge_duration(remaining[j], rate));
        }
        if !active.iter().chain(&waiting).any(|&b| b) {
            break;
        }
        if deciding {
            if let Some(change) = snap.solar.next_change_after(t) {
                next = next.min(change);
            }
            for (j, job) in jobs.iter().enumerate() {
                if waiting[j] && job.release > t + TIME_EPS {
                    next = next.min(job.release);
                }
            }
        }
        if !next.is_finite() {
            break;
        }
        for j in 0..jobs.len() {
            if !active[j] {
                continue;
            }
            let done = t + charge_duration(remaining[j], rates[j]) <= next + TIME_EPS;
            push_segment(&mut segments[j], t, next, rates[j]);
            remaining[j] -= energy_over(rates[j], next - t);
            if done || remaining[j] <= ENERGY_EPS {
                active[j] = false;
                for c in grid.path_to_root(jobs[j].lot) {
                    grid_load[c.0] -= jobs[j].rate_min;
                }
            }
        }
        t = next;
    }

    for (j, segs) in segments.into_iter().enumerate() {
        if !segs.is_empty() {
            schedule.insert_profile(j, Profile { segments: segs });
        }
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::JobId;
    use crate::grid::{CableSpec, GridNode, GridSpec, GridTree};
    use crate::ledger::{PlanJob, SolarForecast};
    use crate::grid::LotId;
    use proptest::prelude::*;

    fn single_lot(capacity: f64) -> GridTree {
        GridSpec {
            nodes: vec![GridNode::transformer("T"), GridNode::lot("P1", 10, 0.0, 1.0)],
            cables: vec![CableSpec::new("P1", "T", capacity)],
        }
        .validate()
        .unwrap()
    }

    fn job(id: u32, lot: usize, e: f64, p_min: f64, p_max: f64, due: f64) -> PlanJob {
        PlanJob {
            id: JobId(id),
            lot: LotId(lot),
            release: 0.0,
            due,
            remaining: e,
            rate_min: p_min,
            rate_max: p_max,
            started: false,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn no_jobs() {
        let grid = single_lot(10.0);
        let snap = Snapshot::new(&grid, 0.0, vec![], SolarForecast::none(1));
        assert_eq!(serial_generate(&snap, PriorityRule::Edd).unwrap().scheduled().count(), 0);
        assert_eq!(parallel_generate(&snap, PriorityRule::Edd, f64::INFINITY).unwrap().scheduled().count(), 0);
    }

    #[test]
    fn serial_two_jobs_share_a_cable() {
        let grid = single_lot(12.0);
        let snap = Snapshot::new(
            &grid,
            0.0,
            vec![job(0, 0, 9.0, 3.0, 9.0, 3600.0), job(1, 0, 9.0, 3.0, 9.0, 7200.0)],
            SolarForecast::none(1),
        );
        let s = serial_generate(&snap, PriorityRule::Edd).unwrap();
        assert!(close(s.profile(0).unwrap().completion(), 3600.0));
        // 3 kWh at 3 kW in the first hour, then 6 kWh at 9 kW.
        let second = s.profile(1).unwrap();
        assert_eq!(second.segments.len(), 2);
        assert_eq!(second.segments[0].rate, 3.0);
        assert!(close(second.completion(), 6000.0));
        s.audit().unwrap();

        let swapped = Snapshot::new(
            &grid,
            0.0,
            vec![job(0, 0, 9.0, 3.0, 9.0, 7200.0), job(1, 0, 9.0, 3.0, 9.0, 3600.0)],
            SolarForecast::none(1),
        );
        let m = serial_generate(&swapped, PriorityRule::Edd).unwrap();
        assert_eq!(m.profile(0).unwrap(), s.profile(1).unwrap());
        assert_eq!(m.profile(1).unwrap(), s.profile(0).unwrap());
    }

    #[test]
    fn started_job_is_raised_when_reached() {
        let grid = single_lot(12.0);
        let mut started = job(0, 0, 9.0, 3.0, 9.0, 1e5);
        started.started = true;
        let snap = Snapshot::new(
            &grid,
            0.0,
            vec![started, job(1, 0, 9.0, 3.0, 9.0, 3600.0)],
            SolarForecast::none(1),
        );
        let s = serial_generate(&snap, PriorityRule::Edd).unwrap();
        let p0 = s.profile(0).unwrap();
        assert_eq!(p0.start(), 0.0);
        assert_eq!(p0.segments[0].rate, 3.0);
        assert!(close(s.profile(1).unwrap().completion(), 3600.0));
        s.audit().unwrap();
    }

    #[test]
    fn parallel_single_job_matches_serial() {
        let grid = single_lot(5.0);
        let solar = SolarForecast::from_steps(vec![(0.0, vec![4.0]), (1800.0, vec![0.0])]);
        let snap = Snapshot::new(&grid, 0.0, vec![job(0, 0, 12.0, 3.0, 9.0, 1e5)], solar);
        let s = serial_generate(&snap, PriorityRule::Elstu).unwrap();
        let p = parallel_generate(&snap, PriorityRule::Elstu, f64::INFINITY).unwrap();
        let (a, b) = (s.profile(0).unwrap(), p.profile(0).unwrap());
        assert_eq!(a.segments.len(), 2);
        assert_eq!(a.segments.len(), b.segments.len());
        for (x, y) in a.segments.iter().zip(&b.segments) {
            assert!(close(x.to, y.to) && x.rate == y.rate);
        }
    }

    #[test]
    fn parallel_starts_two_of_three() {
        let grid = single_lot(8.0);
        let snap = Snapshot::new(
            &grid,
            0.0,
            vec![
                job(0, 0, 4.0, 4.0, 8.0, 3600.0),
                job(1, 0, 16.0, 4.0, 8.0, 7200.0),
                job(2, 0, 4.0, 4.0, 8.0, 9000.0),
            ],
            SolarForecast::none(1),
        );
        let p = parallel_generate(&snap, PriorityRule::Edd, f64::INFINITY).unwrap();
        let at_t0 = p.scheduled().filter(|&j| p.profile(j).unwrap().start() == 0.0).count();
        assert_eq!(at_t0, 2);
        assert!(close(p.profile(2).unwrap().start(), 3600.0));
        p.audit().unwrap();
        serial_generate(&snap, PriorityRule::Edd).unwrap().audit().unwrap();
    }

    #[test]
    fn parallel_stop_at_t0_keeps_minimum_continuations() {
        let grid = single_lot(8.0);
        let mut started = job(0, 0, 4.0, 2.0, 8.0, 3600.0);
        started.started = true;
        let snap = Snapshot::new(
            &grid,
            0.0,
            vec![started, job(1, 0, 4.0, 4.0, 8.0, 7200.0), job(2, 0, 4.0, 4.0, 8.0, 9000.0)],
            SolarForecast::none(1),
        );
        let p = parallel_generate(&snap, PriorityRule::Edd, 0.0).unwrap();
        // At t0: job 0 gets 2 + 2 extra, job 1 starts at 4; job 2 does not fit.
        assert_eq!(p.profile(0).unwrap().segments[0].rate, 4.0);
        assert_eq!(p.profile(1).unwrap().segments[0].rate, 4.0);
        assert!(!p.is_scheduled(2));
        // Past the first decision point everything runs at its minimum.
        for j in [0, 1] {
            for seg in &p.profile(j).unwrap().segments[1..] {
                assert_eq!(seg.rate, snap.jobs[j].rate_min);
            }
        }
        p.audit().unwrap();
    }

    #[test]
    fn never_feasible_jobs_are_flagged() {
        let grid = single_lot(5.0);
        let snap = Snapshot::new(
            &grid,
            0.0,
            vec![job(0, 0, 6.0, 6.0, 9.0, 1e5), job(1, 0, 3.0, 3.0, 3.0, 1e5)],
            SolarForecast::none(1),
        );
        for s in [
            serial_generate(&snap, PriorityRule::Edd).unwrap(),
            parallel_generate(&snap, PriorityRule::Edd, f64::INFINITY).unwrap(),
        ] {
            assert_eq!(s.unschedulable().collect::<Vec<_>>(), vec![0]);
            assert!(s.is_scheduled(1));
        }
    }

    fn two_branch() -> GridTree {
        GridSpec {
            nodes: vec![
                GridNode::transformer("T"),
                GridNode::junction("J"),
                GridNode::lot("A", 5, 0.0, 1.0),
                GridNode::lot("B", 5, 0.0, 1.0),
                GridNode::lot("C", 5, 0.0, 1.0),
            ],
            cables: vec![
                CableSpec::new("J", "T", 20.0),
                CableSpec::new("A", "J", 12.0),
                CableSpec::new("B", "J", 15.0),
                CableSpec::new("C", "T", 10.0),
            ],
        }
        .validate()
        .unwrap()
    }

    fn random_jobs() -> impl Strategy<Value = Vec<PlanJob>> {
        prop::collection::vec(
            (0usize..3, 1.0..30.0f64, 1.0..5.0f64, 0.0..5.0f64, 3600.0..40_000.0f64, any::<bool>()),
            0..9,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (lot, e, pmin, extra, due, started))| {
                    let mut j = job(i as u32, lot, e, pmin, pmin + extra, due);
                    // Started jobs must fit together at their minimum.
                    j.started = started && i < 2;
                    j
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn schemes_emit_feasible_schedules(jobs in random_jobs(), sun in prop::collection::vec(0.0..8.0f64, 3), stop in 0.0..20_000.0f64) {
            let grid = two_branch();
            let solar = SolarForecast::from_steps(vec![(0.0, sun), (3600.0, vec![1.0, 0.0, 2.0]), (7200.0, vec![0.0; 3])]);
            let snap = Snapshot::new(&grid, 0.0, jobs, solar);
            for rule in [PriorityRule::Fcfs, PriorityRule::Edd, PriorityRule::Elstu] {
                let s = serial_generate(&snap, rule).unwrap();
                prop_assert!(s.audit().is_ok(), "serial {:?}", s.audit());
                prop_assert_eq!(s.scheduled().count(), snap.jobs.len());
                let p = parallel_generate(&snap, rule, f64::INFINITY).unwrap();
                prop_assert!(p.audit().is_ok(), "parallel {:?}", p.audit());
                prop_assert_eq!(p.scheduled().count(), snap.jobs.len());
                let q = parallel_generate(&snap, rule, stop).unwrap();
                prop_assert!(q.audit().is_ok(), "truncated {:?}", q.audit());
            }
        }

        #[test]
        fn serial_first_job_gets_its_solo_profile(jobs in random_jobs()) {
            let grid = two_branch();
            let jobs: Vec<PlanJob> = jobs.into_iter().map(|mut j| { j.started = false; j }).collect();
            prop_assume!(!jobs.is_empty());
            let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
            let s = serial_generate(&snap, PriorityRule::Edd).unwrap();
            let first = snap.order_by(PriorityRule::Edd)[0];
            let mut alone = Schedule::empty(&snap);
            alone.add_job_earliest(first).unwrap();
            prop_assert_eq!(s.profile(first), alone.profile(first));
        }

        #[test]
        fn parallel_respects_priority_at_t0(jobs in random_jobs()) {
            let grid = two_branch();
            let jobs: Vec<PlanJob> = jobs.into_iter().map(|mut j| { j.started = false; j }).collect();
            let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
            let p = parallel_generate(&snap, PriorityRule::Edd, f64::INFINITY).unwrap();
            let mut load = vec![0.0; grid.cable_count()];
            for j in snap.order_by(PriorityRule::Edd) {
                let path = grid.path_to_root(snap.jobs[j].lot);
                let fits = path.iter().all(|c| load[c.0] + snap.jobs[j].rate_min <= grid.capacity(*c) + 1e-7);
                let started = p.profile(j).unwrap().start() == 0.0;
                prop_assert_eq!(fits, started);
                if started {
                    for c in path {
                        load[c.0] += snap.jobs[j].rate_min;
                    }
                }
            }
        }

        #[test]
        fn uncongested_schemes_agree(n in 1usize..6, e in 1.0..20.0f64, due in 7200.0..50_000.0f64) {
            let grid = two_branch();
            let jobs: Vec<PlanJob> = (0..n)
                .map(|i| job(i as u32, i % 3, e, 1.0, 1.5, due + i as f64))
                .collect();
            let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
            let s = serial_generate(&snap, PriorityRule::Edd).unwrap();
            let p = parallel_generate(&snap, PriorityRule::Edd, f64::INFINITY).unwrap();
            for j in 0..n {
                let (a, b) = (s.profile(j).unwrap(), p.profile(j).unwrap());
                prop_assert_eq!(a.segments.len(), b.segments.len());
                for (x, y) in a.segments.iter().zip(&b.segments) {
                    prop_assert!(close(x.from, y.from) && close(x.to, y.to) && x.rate == y.rate);
                }
            }
        }
    }
}
