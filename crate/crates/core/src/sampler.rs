//! Random EV arrivals, EV attributes and solar output.
//!
//! All randomness for one run comes from a single seed. Arrivals with their
//! attributes and the solar output use separate streams, so switching the
//! scheduling strategy, fixing the charging rates or turning solar off never
//! changes the EVs that show up.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{charge_duration, ChargingJob, JobId, SECONDS_PER_HOUR};
use crate::grid::{GridTree, LotId};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Stream numbers derived from the run seed.
const STREAM_ARRIVALS: u64 = 0;
const STREAM_SOLAR: u64 = 1;
pub const STREAM_SCHEDULER: u64 = 2;

/// A random generator for one purpose within a seeded run.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub min: f64,
    pub max: f64,
    pub probability: f64,
}

/// A value range `(lo, hi]` with a selection weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionTables {
    /// Mean solar output per hour of day as a fraction of peak power.
    pub solar_availability: [f64; 24],
    /// Share of the daily arrivals per hour of day.
    pub arrival_fractions: [f64; 24],
    pub rate_pairs: Vec<RatePair>,
    /// Charging volume bins in kWh.
    pub volume_bins: Vec<Bin>,
    /// Connection time bins in hours.
    pub connection_bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("{table}: entry {index} is negative or not finite")]
    BadValue { table: &'static str, index: usize },
    #[error("{table}: weights sum to zero")]
    ZeroTotal { table: &'static str },
    #[error("{table}: weights sum to {sum}, expected 1")]
    NotNormalized { table: &'static str, sum: f64 },
    #[error("rate pair {index} has min above max or a zero minimum")]
    BadRatePair { index: usize },
    #[error("{table}: bin {index} is empty or reversed")]
    BadBin { table: &'static str, index: usize },
    #[error("solar availability at hour {0} is outside [0, 1]")]
    BadAvailability(usize),
}

fn check_weights(table: &'static str, w: impl Iterator<Item = f64>, tol: f64) -> Result<(), TableError> {
    let mut sum = 0.0;
    for (index, x) in w.enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(TableError::BadValue { table, index });
        }
        sum += x;
    }
    if sum <= 0.0 {
        return Err(TableError::ZeroTotal { table });
    }
    if (sum - 1.0).abs() > tol {
        return Err(TableError::NotNormalized { table, sum });
    }
    Ok(())
}

fn check_bins(table: &'static str, bins: &[Bin]) -> Result<(), TableError> {
    for (index, b) in bins.iter().enumerate() {
        if !(b.lo.is_finite() && b.hi.is_finite() && b.lo >= 0.0 && b.hi > b.lo) {
            return Err(TableError::BadBin { table, index });
        }
    }
    Ok(())
}

impl DistributionTables {
    /// Checks ranges and that every weight vector sums to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), TableError> {
        for (h, &a) in self.solar_availability.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(TableError::BadAvailability(h));
            }
        }
        check_weights("arrival fractions", self.arrival_fractions.iter().copied(), tol)?;
        check_weights("rate pairs", self.rate_pairs.iter().map(|r| r.probability), tol)?;
        for (index, r) in self.rate_pairs.iter().enumerate() {
            if !(r.min > 0.0 && r.min <= r.max && r.max.is_finite()) {
                return Err(TableError::BadRatePair { index });
            }
        }
        check_bins("volume bins", &self.volume_bins)?;
        check_weights("volume bins", self.volume_bins.iter().map(|b| b.weight), tol)?;
        check_bins("connection bins", &self.connection_bins)?;
        check_weights("connection bins", self.connection_bins.iter().map(|b| b.weight), tol)?;
        Ok(())
    }

    /// Rescales every weight vector to sum to exactly 1.
    pub fn normalized(mut self) -> Self {
        fn scale(v: &mut [f64]) {
            let s: f64 = v.iter().sum();
            if s > 0.0 {
                v.iter_mut().for_each(|x| *x /= s);
            }
        }
        scale(&mut self.arrival_fractions);
        let mut p: Vec<f64> = self.rate_pairs.iter().map(|r| r.probability).collect();
        scale(&mut p);
        self.rate_pairs.iter_mut().zip(p).for_each(|(r, p)| r.probability = p);
        for bins in [&mut self.volume_bins, &mut self.connection_bins] {
            let mut w: Vec<f64> = bins.iter().map(|b| b.weight).collect();
            scale(&mut w);
            bins.iter_mut().zip(w).for_each(|(b, w)| b.weight = w);
        }
        self
    }

    /// Mean solar output per lot and hour of day, kW.
    pub fn hourly_solar_means(&self, grid: &GridTree) -> Vec<[f64; 24]> {
        grid.lot_ids()
            .map(|l| {
                let peak = grid.lot(l).solar_peak;
                core::array::from_fn(|h| self.solar_availability[h] * peak)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Mean number of EVs per day.
    pub daily_arrivals: f64,
    /// Standard deviation of solar output relative to its hourly mean.
    pub solar_std_fraction: f64,
    /// Number of distinct lots in a parking preference.
    pub preference_length: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            daily_arrivals: 1125.0,
            solar_std_fraction: 0.15,
            preference_length: 3,
        }
    }
}

/// Prepared sampling distributions for one set of tables.
#[derive(Clone, Debug)]
pub struct Sampler<'t> {
    tables: &'t DistributionTables,
    config: SamplerConfig,
    rates: WeightedIndex<f64>,
    volumes: WeightedIndex<f64>,
    connections: WeightedIndex<f64>,
}

impl<'t> Sampler<'t> {
    pub fn new(tables: &'t DistributionTables, config: SamplerConfig) -> Result<Self, TableError> {
        tables.validate(1e-6)?;
        let idx = |table: &'static str, w: Vec<f64>| {
            WeightedIndex::new(w).map_err(|_| TableError::ZeroTotal { table })
        };
        Ok(Self {
            tables,
            config,
            rates: idx("rate pairs", tables.rate_pairs.iter().map(|r| r.probability).collect())?,
            volumes: idx("volume bins", tables.volume_bins.iter().map(|b| b.weight).collect())?,
            connections: idx("connection bins", tables.connection_bins.iter().map(|b| b.weight).collect())?,
        })
    }

    pub fn tables(&self) -> &DistributionTables {
        self.tables
    }

    /// Mean arrivals in hour `h` of a day.
    pub fn hourly_rate(&self, h: usize) -> f64 {
        self.config.daily_arrivals * self.tables.arrival_fractions[h]
    }

    /// Sorted arrival times during day `day` (seconds from the start of the run).
    pub fn sample_arrivals<R: Rng + ?Sized>(&self, day: u32, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::new();
        for h in 0..24 {
            let mean = self.hourly_rate(h);
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
            let start = f64::from(day) * SECONDS_PER_DAY + h as f64 * SECONDS_PER_HOUR;
            let from = out.len();
            for _ in 0..count {
                out.push(start + rng.random::<f64>() * SECONDS_PER_HOUR);
            }
            out[from..].sort_by(f64::total_cmp);
        }
        out
    }

    pub fn sample_rate_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> RatePair {
        self.tables.rate_pairs[self.rates.sample(rng)]
    }

    /// Index of the volume bin and a volume drawn uniformly from it.
    pub fn sample_volume<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let i = self.volumes.sample(rng);
        (i, uniform_in(&self.tables.volume_bins[i], rng))
    }

    /// Index of the connection bin and a connection time in hours.
    pub fn sample_connection_hours<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let i = self.connections.sample(rng);
        (i, uniform_in(&self.tables.connection_bins[i], rng))
    }

    /// Up to `preference_length` distinct lots, drawn by selection weight
    /// without replacement.
    pub fn sample_preference<R: Rng + ?Sized>(&self, grid: &GridTree, rng: &mut R) -> Vec<LotId> {
        let mut weights = grid.selection_weights().to_vec();
        let mut out = Vec::with_capacity(self.config.preference_length);
        while out.len() < self.config.preference_length {
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                break;
            }
            let mut x = rng.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if x < w {
                    pick = i;
                    break;
                }
                x -= w;
            }
            // Rounding can land on the last entry even if it has no weight.
            while weights[pick] <= 0.0 {
                pick -= 1;
            }
            weights[pick] = 0.0;
            out.push(LotId(pick));
        }
        out
    }

    /// An EV arriving at `arrival`. The connection time is redrawn until it
    /// allows charging the volume at the minimum rate.
    pub fn sample_job<R: Rng + ?Sized>(&self, id: JobId, arrival: f64, grid: &GridTree, rng: &mut R) -> ChargingJob {
        let rates = self.sample_rate_pair(rng);
        let (_, volume) = self.sample_volume(rng);
        let needed = charge_duration(volume, rates.min);
        let connection = loop {
            let (_, hours) = self.sample_connection_hours(rng);
            let seconds = hours * SECONDS_PER_HOUR;
            if seconds >= needed {
                break seconds;
            }
        };
        let preference = self.sample_preference(grid, rng);
        ChargingJob::new(id, arrival, arrival + connection, volume, rates.min, rates.max, preference)
            .expect("sampled attributes satisfy the job invariants")
    }

    /// Solar output for one hour: normal around the availability mean,
    /// clamped to `[0, peak]`.
    pub fn sample_solar<R: Rng + ?Sized>(&self, hour_of_day: usize, peak_kw: f64, rng: &mut R) -> f64 {
        let mean = self.tables.solar_availability[hour_of_day] * peak_kw;
        if mean <= 0.0 {
            return 0.0;
        }
        let sd = self.config.solar_std_fraction * mean;
        let x = Normal::new(mean, sd).expect("finite parameters").sample(rng);
        x.clamp(0.0, peak_kw)
    }
}

fn uniform_in<R: Rng + ?Sized>(bin: &Bin, rng: &mut R) -> f64 {
    // 1 - u lies in (0, 1], giving a value in (lo, hi].
    let u = 1.0 - rng.random::<f64>();
    bin.lo + u * (bin.hi - bin.lo)
}

/// All random input of one run, drawn before the simulation starts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Instance {
    /// EVs in arrival order; `jobs[i].id == JobId(i)`.
    pub jobs: Vec<ChargingJob>,
    /// Actual solar output per hour since the start and per lot, kW.
    pub solar: Vec<Vec<f64>>,
    /// Mean output per lot and hour of day, kW.
    pub solar_means: Vec<[f64; 24]>,
}

impl Instance {
    pub fn generate(sampler: &Sampler<'_>, grid: &GridTree, seed: u64, days: u32) -> Self {
        let mut rng = stream(seed, STREAM_ARRIVALS);
        let mut jobs = Vec::new();
        for day in 0..days {
            for t in sampler.sample_arrivals(day, &mut rng) {
                let id = JobId(jobs.len() as u32);
                jobs.push(sampler.sample_job(id, t, grid, &mut rng));
            }
        }
        let mut rng = stream(seed, STREAM_SOLAR);
        let hours = days as usize * 24;
        let peaks: Vec<f64> = grid.lot_ids().map(|l| grid.lot(l).solar_peak).collect();
        let solar = (0..hours)
            .map(|h| {
                peaks
                    .iter()
                    .map(|&p| sampler.sample_solar(h % 24, p, &mut rng))
                    .collect()
            })
            .collect();
        Self {
            jobs,
            solar,
            solar_means: sampler.tables().hourly_solar_means(grid),
        }
    }

    /// Every EV charges at exactly `rate` kW.
    pub fn with_fixed_rate(mut self, rate: f64) -> Self {
        for j in &mut self.jobs {
            j.rate_min = rate;
            j.rate_max = rate;
        }
        self
    }

    /// No solar output at all.
    pub fn without_solar(mut self) -> Self {
        for h in &mut self.solar {
            h.iter_mut().for_each(|x| *x = 0.0);
        }
        for m in &mut self.solar_means {
            *m = [0.0; 24];
        }
        self
    }

    /// Actual output per lot during the hour containing `t`.
    pub fn solar_at(&self, t: f64) -> &[f64] {
        let h = (t / SECONDS_PER_HOUR) as usize;
        self.solar.get(h).map_or(&[], Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use alloc::vec;

    fn toy_tables() -> DistributionTables {
        let mut arrival = [0.0; 24];
        arrival[4] = 0.25;
        arrival[18] = 0.75;
        let mut solar = [0.0; 24];
        solar[11] = 0.446001;
        DistributionTables {
            solar_availability: solar,
            arrival_fractions: arrival,
            rate_pairs: vec![
                RatePair { min: 3.0, max: 6.0, probability: 0.5 },
                RatePair { min: 6.0, max: 12.0, probability: 0.5 },
            ],
            volume_bins: vec![
                Bin { lo: 0.0, hi: 1.0, weight: 0.5 },
                Bin { lo: 40.0, hi: 41.0, weight: 0.5 },
            ],
            connection_bins: vec![
                Bin { lo: 0.0, hi: 1.0, weight: 0.9 },
                Bin { lo: 20.0, hi: 21.0, weight: 0.1 },
            ],
        }
    }

    #[test]
    fn validation_catches_bad_tables() {
        let t = toy_tables();
        t.validate(1e-9).unwrap();
        let mut bad = t.clone();
        bad.rate_pairs[0].min = 7.0;
        assert_eq!(bad.validate(1e-6), Err(TableError::BadRatePair { index: 0 }));
        let mut bad = t.clone();
        bad.volume_bins[0].weight = 0.6;
        assert!(matches!(bad.validate(1e-6), Err(TableError::NotNormalized { .. })));
        bad = bad.normalized();
        bad.validate(1e-12).unwrap();
        let mut bad = t.clone();
        bad.connection_bins[1].hi = 20.0;
        assert!(matches!(bad.validate(1e-6), Err(TableError::BadBin { .. })));
    }

    #[test]
    fn hourly_means() {
        let t = toy_tables();
        let s = Sampler::new(&t, SamplerConfig::default()).unwrap();
        assert!((s.hourly_rate(18) - 843.75).abs() < 1e-9);
        let grid = GridSpec::default_case(70, 200.0).validate().unwrap();
        assert!((t.hourly_solar_means(&grid)[0][11] - 89.2002).abs() < 1e-9);
    }

    #[test]
    fn no_arrivals_without_rate() {
        let t = toy_tables();
        let cfg = SamplerConfig { daily_arrivals: 0.0, ..SamplerConfig::default() };
        let s = Sampler::new(&t, cfg).unwrap();
        assert!(s.sample_arrivals(0, &mut stream(1, 0)).is_empty());
    }

    #[test]
    fn arrivals_fall_in_their_hours() {
        let t = toy_tables();
        let s = Sampler::new(&t, SamplerConfig::default()).unwrap();
        let a = s.sample_arrivals(2, &mut stream(5, 0));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        for &x in &a {
            let h = ((x - 2.0 * SECONDS_PER_DAY) / 3600.0) as usize;
            assert!(h == 4 || h == 18);
        }
        let late = a.iter().filter(|&&x| x >= 2.0 * SECONDS_PER_DAY + 18.0 * 3600.0).count();
        assert!(late > 700 && late < 1000, "{late}");
    }

    #[test]
    fn jobs_can_always_finish() {
        let t = toy_tables();
        let s = Sampler::new(&t, SamplerConfig::default()).unwrap();
        let grid = GridSpec::default_case(70, 200.0).validate().unwrap();
        let mut rng = stream(9, 0);
        for i in 0..20_000 {
            let j = s.sample_job(JobId(i), 100.0, &grid, &mut rng);
            assert!(j.due - j.release >= j.volume / j.rate_min * 3600.0 * (1.0 - 1e-12));
            assert_eq!(j.preference.len(), 3);
            let mut p = j.preference.clone();
            p.sort();
            p.dedup();
            assert_eq!(p.len(), 3);
        }
    }

    #[test]
    fn preference_skips_zero_weight_lots() {
        let t = toy_tables();
        let s = Sampler::new(&t, SamplerConfig::default()).unwrap();
        let mut spec = GridSpec::default_case(10, 0.0);
        for n in spec.nodes.iter_mut().filter(|n| n.name == "P1" || n.name == "P2" || n.name == "P3" || n.name == "P4" || n.name == "P5") {
            n.selection_weight = 0.0;
        }
        let grid = spec.validate().unwrap();
        let mut rng = stream(3, 0);
        for _ in 0..1000 {
            let p = s.sample_preference(&grid, &mut rng);
            assert_eq!(p.len(), 2);
            assert!(p.iter().all(|l| l.0 >= 5));
        }
    }

    #[test]
    fn solar_draws_are_clamped() {
        let t = toy_tables();
        let s = Sampler::new(&t, SamplerConfig { solar_std_fraction: 3.0, ..SamplerConfig::default() }).unwrap();
        let mut rng = stream(1, 1);
        let mut saw_zero = false;
        let mut saw_peak = false;
        for _ in 0..100_000 {
            let x = s.sample_solar(11, 200.0, &mut rng);
            assert!((0.0..=200.0).contains(&x));
            saw_zero |= x == 0.0;
            saw_peak |= x == 200.0;
            assert_eq!(s.sample_solar(0, 200.0, &mut rng), 0.0);
        }
        assert!(saw_zero && saw_peak);
    }

    #[test]
    fn instances_are_reproducible_and_streams_independent() {
        let t = toy_tables();
        let s = Sampler::new(&t, SamplerConfig::default()).unwrap();
        let grid = GridSpec::default_case(70, 200.0).validate().unwrap();
        let a = Instance::generate(&s, &grid, 11, 2);
        let b = Instance::generate(&s, &grid, 11, 2);
        assert_eq!(a, b);
        assert!(a.jobs.iter().enumerate().all(|(i, j)| j.id == JobId(i as u32)));
        let dark = GridSpec::default_case(70, 0.0).validate().unwrap();
        let c = Instance::generate(&s, &dark, 11, 2);
        assert_eq!(a.jobs, c.jobs);
        assert!(c.solar.iter().flatten().all(|&x| x == 0.0));
        let other = Instance::generate(&s, &grid, 12, 2);
        assert_ne!(a.jobs, other.jobs);
        let fixed = a.clone().with_fixed_rate(9.0);
        assert!(fixed.jobs.iter().all(|j| j.rate_min == 9.0 && j.rate_max == 9.0));
    }
}
