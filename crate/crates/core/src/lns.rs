//! Destroy-and-repair improvement of a complete schedule.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fleet::PriorityRule;
use crate::ledger::{LedgerError, Schedule};
use crate::sgs::insert_in_order;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairParams {
    /// Fraction of the schedulable jobs removed per iteration.
    pub s: f64,
    /// Fraction removed uniformly at random; the rest by adjacency.
    pub r: f64,
    /// Minimum improvement (seconds of total tardiness) that counts as success.
    pub i_min: f64,
    /// Consecutive unsuccessful iterations before stopping.
    pub f: u32,
    /// Rule used to reinsert removed jobs.
    pub prio2: PriorityRule,
}

impl Default for RepairParams {
    fn default() -> Self {
        Self {
            s: 0.5,
            r: 0.05,
            i_min: 100.0,
            f: 4,
            prio2: PriorityRule::Elstu,
        }
    }
}

impl RepairParams {
    pub fn is_valid(&self) -> bool {
        self.s > 0.0 && self.s <= 1.0 && self.r >= 0.0 && self.r <= self.s && self.f >= 1 && self.i_min >= 0.0
    }

    /// Uniform and adjacency-weighted removal counts for `n` candidates.
    pub fn removal_counts(&self, n: usize) -> (usize, usize) {
        let random = floor_count(self.r * n as f64);
        let total = floor_count(self.s * n as f64).max(random);
        (random, total - random)
    }
}

fn floor_count(x: f64) -> usize {
    // Non-negative inputs only; truncation is the floor.
    x as usize
}

/// Whether two scheduled jobs compete: their charging windows overlap or
/// touch, and their lots share a cable.
fn adjacent(schedule: &Schedule<'_>, a: usize, b: usize) -> bool {
    let (Some(pa), Some(pb)) = (schedule.profile(a), schedule.profile(b)) else {
        return false;
    };
    let jobs = schedule.jobs();
    pa.start() <= pb.completion()
        && pb.start() <= pa.completion()
        && schedule.snapshot().grid.lots_compete(jobs[a].lot, jobs[b].lot)
}

/// Number of jobs in `removed` adjacent to `job`. Windows of removed jobs
/// are read from `reference`, the schedule before removal.
pub fn adjacency_weight(reference: &Schedule<'_>, job: usize, removed: &[usize]) -> usize {
    removed.iter().filter(|&&k| k != job && adjacent(reference, job, k)).count()
}

/// Removes `⌊r·n⌋` jobs uniformly and then up to `⌊s·n⌋` in total with
/// probability proportional to adjacency to the jobs already removed
/// (uniform while every weight is zero). Returns the removed jobs in
/// removal order.
pub fn destroy<R: Rng + ?Sized>(schedule: &mut Schedule<'_>, params: &RepairParams, rng: &mut R) -> Vec<usize> {
    let reference = schedule.clone();
    let mut candidates: Vec<usize> = schedule.scheduled().collect();
    let (random, weighted) = params.removal_counts(candidates.len());
    let mut weights: Vec<usize> = alloc::vec![0; candidates.len()];
    let mut removed = Vec::with_capacity(random + weighted);

    for step in 0..random + weighted {
        let total: usize = weights.iter().sum();
        let pick = if step < random || total == 0 {
            rng.random_range(0..candidates.len())
        } else {
            let mut x = rng.random_range(0..total);
            let mut i = 0;
            while x >= weights[i] {
                x -= weights[i];
                i += 1;
            }
            i
        };
        let job = candidates.swap_remove(pick);
        weights.swap_remove(pick);
        for (i, &other) in candidates.iter().enumerate() {
            if adjacent(&reference, job, other) {
                weights[i] += 1;
            }
        }
        schedule.remove_job(job).expect("candidate was scheduled");
        removed.push(job);
    }
    removed
}

/// Reinserts `removed`: started jobs first at their minimum rate, then all
/// of them in `prio2` order as early as possible.
pub fn repair(schedule: &mut Schedule<'_>, removed: &[usize], prio2: PriorityRule) -> Result<(), LedgerError> {
    let jobs = schedule.jobs();
    for &j in removed {
        if jobs[j].started {
            schedule.schedule_at_min_rate(j)?;
        }
    }
    let mut order = removed.to_vec();
    order.sort_by(|&a, &b| {
        jobs[a]
            .priority(prio2)
            .total_cmp(&jobs[b].priority(prio2))
            .then(jobs[a].id.cmp(&jobs[b].id))
    });
    insert_in_order(schedule, &order)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LnsStats {
    pub iterations: u32,
    pub initial_score: f64,
    pub best_score: f64,
    /// Score of every repaired candidate, in iteration order; minus
    /// infinity for discarded ones.
    pub scores: Vec<f64>,
    /// Candidates whose repair could not re-place a started job.
    pub discarded: u32,
}

/// Repeated destroy and repair, keeping the best schedule seen, until
/// `params.f` consecutive iterations improve by less than `params.i_min`.
pub fn destroy_and_repair<'a, R: Rng + ?Sized>(
    initial: Schedule<'a>,
    params: &RepairParams,
    rng: &mut R,
) -> Result<(Schedule<'a>, LnsStats), LedgerError> {
    let mut best = initial;
    let mut best_score = best.predicted_score();
    let mut stats = LnsStats {
        initial_score: best_score,
        ..LnsStats::default()
    };
    let mut fails = 0;
    while fails < params.f {
        let mut candidate = best.clone();
        let removed = destroy(&mut candidate, params, rng);
        stats.iterations += 1;
        let score = match repair(&mut candidate, &removed, params.prio2) {
            Ok(()) => {
                candidate.compact();
                candidate.predicted_score()
            }
            // A started job no longer fits at its minimum rate next to the
            // jobs that stayed: the candidate is discarded.
            Err(LedgerError::GridOnlyInfeasible(_)) => {
                stats.discarded += 1;
                f64::NEG_INFINITY
            }
            Err(e) => return Err(e),
        };
        stats.scores.push(score);
        if score - best_score < params.i_min {
            fails += 1;
        } else {
            fails = 0;
        }
        if score > best_score {
            best = candidate;
            best_score = score;
        }
    }
    stats.best_score = best_score;
    Ok((best, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::JobId;
    use crate::grid::{CableSpec, GridNode, GridSpec, GridTree, LotId};
    use crate::ledger::{PlanJob, Snapshot, SolarForecast};
    use crate::sgs::serial_generate;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

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
                CableSpec::new("J", "T", 12.0),
                CableSpec::new("A", "J", 9.0),
                CableSpec::new("B", "J", 9.0),
                CableSpec::new("C", "T", 8.0),
            ],
        }
        .validate()
        .unwrap()
    }

    fn job(id: u32, lot: usize, release: f64, e: f64, p_min: f64, p_max: f64, due: f64) -> PlanJob {
        PlanJob {
            id: JobId(id),
            lot: LotId(lot),
            release,
            due,
            remaining: e,
            rate_min: p_min,
            rate_max: p_max,
            started: false,
        }
    }

    #[test]
    fn floor_arithmetic() {
        let p = RepairParams::default();
        assert_eq!(p.removal_counts(20), (1, 9));
        assert_eq!(p.removal_counts(0), (0, 0));
        assert_eq!(p.removal_counts(3), (0, 1));
        assert!(p.is_valid());
    }

    #[test]
    fn adjacency_examples() {
        let grid = two_branch();
        let jobs = vec![
            job(0, 0, 0.0, 6.0, 3.0, 6.0, 1e5),
            job(1, 0, 0.0, 6.0, 3.0, 6.0, 1e5),
            job(2, 2, 0.0, 6.0, 3.0, 6.0, 1e5),
            job(3, 1, 0.0, 6.0, 3.0, 6.0, 1e5),
        ];
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let s = serial_generate(&snap, PriorityRule::Edd).unwrap();
        assert_eq!(adjacency_weight(&s, 0, &[]), 0);
        assert_eq!(adjacency_weight(&s, 0, &[1]), 1);
        // Lot C hangs directly off the transformer: no shared cable with A.
        assert_eq!(adjacency_weight(&s, 0, &[2]), 0);
        // A and B share the junction feeder.
        assert_eq!(adjacency_weight(&s, 0, &[3]), 1);
        assert_eq!(adjacency_weight(&s, 0, &[1, 2, 3]), 2);
    }

    #[test]
    fn touching_windows_are_adjacent() {
        let grid = two_branch();
        let jobs = vec![
            job(0, 0, 0.0, 6.0, 6.0, 6.0, 1e5),
            job(1, 0, 3600.0, 6.0, 6.0, 6.0, 1e5),
            job(2, 0, 3601.0 + 3600.0, 6.0, 6.0, 6.0, 1e5),
        ];
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let s = serial_generate(&snap, PriorityRule::Fcfs).unwrap();
        assert_eq!(adjacency_weight(&s, 1, &[0]), 1);
        assert_eq!(adjacency_weight(&s, 2, &[0]), 0);
    }

    #[test]
    fn blocked_started_job_discards_candidate() {
        let grid = two_branch();
        let mut started = job(0, 2, 0.0, 8.0, 3.0, 8.0, 3600.0);
        started.started = true;
        let jobs = vec![started, job(1, 2, 0.0, 6.0, 6.0, 6.0, 1e5)];
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let base = serial_generate(&snap, PriorityRule::Edd).unwrap();
        assert_eq!(base.profile(1).unwrap().start(), 3600.0);
        // At 3 kW the started job would still run when job 1 needs 6 of 8 kW.
        let mut s = base.clone();
        s.remove_job(0).unwrap();
        assert_eq!(repair(&mut s, &[0], PriorityRule::Elstu), Err(LedgerError::GridOnlyInfeasible(JobId(0))));

        let params = RepairParams { f: 12, ..RepairParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (best, stats) = destroy_and_repair(base.clone(), &params, &mut rng).unwrap();
        assert!(stats.discarded > 0);
        assert!(best.predicted_score() >= base.predicted_score());
        best.audit().unwrap();
    }

    #[test]
    fn empty_schedule_removes_nothing() {
        let grid = two_branch();
        let snap = Snapshot::new(&grid, 0.0, vec![], SolarForecast::none(3));
        let mut s = serial_generate(&snap, PriorityRule::Edd).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(destroy(&mut s, &RepairParams::default(), &mut rng).is_empty());
        repair(&mut s, &[], PriorityRule::Elstu).unwrap();
        assert_eq!(s.scheduled().count(), 0);
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let grid = two_branch();
        // Ten jobs on lot A with disjoint windows: no adjacency anywhere.
        let jobs: Vec<PlanJob> = (0..10)
            .map(|i| job(i, 0, f64::from(i) * 10_000.0, 3.0, 3.0, 3.0, 1e6))
            .collect();
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let base = serial_generate(&snap, PriorityRule::Fcfs).unwrap();
        let params = RepairParams { s: 0.2, r: 0.0, ..RepairParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u32; 10];
        let trials = 5000;
        for _ in 0..trials {
            let mut s = base.clone();
            let removed = destroy(&mut s, &params, &mut rng);
            assert_eq!(removed.len(), 2);
            for j in removed {
                counts[j] += 1;
            }
        }
        let expected = f64::from(2 * trials) / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (f64::from(c) - expected).powi(2) / expected)
            .sum();
        // Upper 0.1% point of the chi-square distribution with 9 dof.
        assert!(chi2 < 27.877, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn repair_of_everything_regenerates() {
        let grid = two_branch();
        let mut jobs: Vec<PlanJob> = (0..6)
            .map(|i| job(i, (i % 3) as usize, 0.0, 5.0 + f64::from(i), 2.0, 6.0, 4000.0 + 500.0 * f64::from(i)))
            .collect();
        jobs[1].started = true;
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let fresh = serial_generate(&snap, PriorityRule::Edd).unwrap();
        let mut s = fresh.clone();
        let all: Vec<usize> = s.scheduled().collect();
        for &j in &all {
            s.remove_job(j).unwrap();
        }
        repair(&mut s, &all, PriorityRule::Edd).unwrap();
        for j in 0..6 {
            assert_eq!(s.profile(j), fresh.profile(j));
        }
    }

    #[test]
    fn elstu_reinsertion_is_never_the_worst_order() {
        let grid = two_branch();
        let jobs: Vec<PlanJob> = (0..6)
            .map(|i| job(i, 0, 0.0, 6.0 + 2.0 * f64::from(i % 3), 3.0, 6.0, 3000.0 + 700.0 * f64::from(i)))
            .collect();
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let base = serial_generate(&snap, PriorityRule::Fcfs).unwrap();
        let removed = [1usize, 3, 4];
        let mut worst = f64::INFINITY;
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let mut s = base.clone();
            for &j in &removed {
                s.remove_job(j).unwrap();
            }
            for k in perm {
                s.add_job_earliest(removed[k]).unwrap();
            }
            worst = worst.min(s.predicted_score());
        }
        let mut s = base.clone();
        for &j in &removed {
            s.remove_job(j).unwrap();
        }
        repair(&mut s, &removed, PriorityRule::Elstu).unwrap();
        assert!(s.predicted_score() >= worst);
        s.audit().unwrap();
    }

    #[test]
    fn single_failure_stops_immediately() {
        let grid = two_branch();
        let jobs = vec![job(0, 0, 0.0, 3.0, 3.0, 6.0, 1e5), job(1, 2, 0.0, 3.0, 3.0, 6.0, 1e5)];
        let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
        let initial = serial_generate(&snap, PriorityRule::Edd).unwrap();
        let params = RepairParams { f: 1, ..RepairParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (best, stats) = destroy_and_repair(initial.clone(), &params, &mut rng).unwrap();
        assert_eq!(stats.iterations, 1);
        assert_eq!(best.predicted_score(), 0.0);
        for j in 0..2 {
            assert_eq!(best.profile(j), initial.profile(j));
        }
    }

    fn congested() -> impl Strategy<Value = Vec<PlanJob>> {
        prop::collection::vec(
            (0usize..3, 0.0..7200.0f64, 2.0..25.0f64, 1.0..4.0f64, 0.0..6.0f64, 0.0..20_000.0f64),
            2..14,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (lot, rel, e, pmin, extra, slack))| {
                    let due = rel + e / pmin * 3600.0 + slack;
                    job(i as u32, lot, rel, e, pmin, pmin + extra, due)
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn never_worse_and_deterministic(jobs in congested(), seed in any::<u64>()) {
            let grid = two_branch();
            let snap = Snapshot::new(&grid, 0.0, jobs, SolarForecast::none(3));
            let initial = serial_generate(&snap, PriorityRule::Edd).unwrap();
            let params = RepairParams::default();
            let (a, stats) = destroy_and_repair(initial.clone(), &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(a.predicted_score() >= initial.predicted_score());
            prop_assert!(a.audit().is_ok(), "{:?}", a.audit());
            prop_assert!(stats.iterations >= params.f);
            // The run ends on exactly f consecutive sub-threshold iterations.
            let mut best = stats.initial_score;
            let mut fails = 0;
            for (k, &score) in stats.scores.iter().enumerate() {
                prop_assert!(fails < params.f, "ran past the failure limit at {}", k);
                if score - best < params.i_min { fails += 1 } else { fails = 0 }
                if score > best { best = score }
            }
            prop_assert_eq!(fails, params.f);
            let (b, _) = destroy_and_repair(initial, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for j in 0..snap.jobs.len() {
                prop_assert_eq!(a.profile(j), b.profile(j));
            }
        }
    }
}
