//! Sampled EVs and solar output against the shipped distribution tables.

use gridcharge::tables::{default_tables, load_tables};
use gridcharge_core::fleet::JobId;
use gridcharge_core::grid::GridSpec;
use gridcharge_core::sampler::{Instance, Sampler, SamplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn daily_arrivals_average_out() {
    let tables = default_tables();
    let sampler = Sampler::new(&tables, SamplerConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let days = 60;
    let total: usize = (0..days).map(|d| sampler.sample_arrivals(d, &mut rng).len()).sum();
    let mean = total as f64 / f64::from(days);
    // Poisson: standard error of the mean is sqrt(1125 / 60) = 4.3.
    assert!((mean - 1125.0).abs() < 20.0, "{mean}");
}

#[test]
fn jobs_fit_their_connection_and_prefer_distinct_lots() {
    let tables = default_tables();
    let sampler = Sampler::new(&tables, SamplerConfig::default()).unwrap();
    let grid = GridSpec::default_case(70, 200.0).validate().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut first = [0usize; 7];
    let n = 20_000;
    for i in 0..n {
        let job = sampler.sample_job(JobId(i), 0.0, &grid, &mut rng);
        assert!(job.due - job.release >= job.volume / job.rate_min * 3600.0 - 1e-6);
        assert!(job.rate_min <= job.rate_max);
        let mut p = job.preference.clone();
        assert_eq!(p.len(), 3);
        first[p[0].0] += 1;
        p.dedup();
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 3);
    }
    // Uniform lot choice: each lot leads about a seventh of the lists.
    for c in first {
        let share = c as f64 / f64::from(n);
        assert!((share - 1.0 / 7.0).abs() < 0.015, "{first:?}");
    }
}

#[test]
fn instances_share_evs_across_variants() {
    let tables = default_tables();
    let sampler = Sampler::new(&tables, SamplerConfig::default()).unwrap();
    let grid = GridSpec::default_case(70, 200.0).validate().unwrap();
    let a = Instance::generate(&sampler, &grid, 3, 2);
    let b = Instance::generate(&sampler, &grid, 3, 2);
    assert_eq!(a, b);
    let fixed = a.clone().with_fixed_rate(9.0);
    assert_eq!(fixed.jobs.len(), a.jobs.len());
    assert!(fixed.jobs.iter().all(|j| j.rate_min == 9.0 && j.rate_max == 9.0));
    let dark = a.without_solar();
    assert!(dark.solar.iter().flatten().all(|&s| s == 0.0));
}

#[test]
fn replacement_tables_are_picked_up() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rate_pairs.csv"), "min_kw,max_kw,probability\n4,8,1\n").unwrap();
    let tables = load_tables(dir.path()).unwrap();
    assert_eq!(tables.rate_pairs.len(), 1);
    assert_eq!(tables.volume_bins, default_tables().volume_bins);
}
