use alloc::vec;
use alloc::vec::Vec;

use crate::fleet::SECONDS_PER_HOUR;

/// Piecewise-constant solar power per lot, as assumed by a schedule.
///
/// Each step holds from its start time until the next step; the last step
/// holds forever.
#[derive(Clone, Debug, PartialEq)]
pub struct SolarForecast {
    steps: Vec<(f64, Vec<f64>)>,
}

impl SolarForecast {
    /// No solar anywhere.
    pub fn none(lots: usize) -> Self {
        Self {
            steps: vec![(f64::NEG_INFINITY, vec![0.0; lots])],
        }
    }

    pub fn constant(per_lot: Vec<f64>) -> Self {
        Self {
            steps: vec![(f64::NEG_INFINITY, per_lot)],
        }
    }

    /// Steps given as `(start, per-lot kW)`; starts must increase.
    pub fn from_steps(mut steps: Vec<(f64, Vec<f64>)>) -> Self {
        assert!(!steps.is_empty(), "a forecast needs at least one step");
        assert!(
            steps.windows(2).all(|w| w[0].0 < w[1].0),
            "forecast steps must be strictly increasing"
        );
        steps[0].0 = f64::NEG_INFINITY;
        Self { steps }
    }

    /// Revealed output until the end of the hour containing `t0`, then the
    /// hourly mean (`hourly_mean[lot][hour_of_day]`) for `horizon_hours`
    /// further hours, then nothing.
    pub fn hourly(t0: f64, revealed: &[f64], hourly_mean: &[[f64; 24]], horizon_hours: u32) -> Self {
        let lots = revealed.len();
        let hour = (t0 / SECONDS_PER_HOUR) as u64;
        let mut steps: Vec<(f64, Vec<f64>)> = vec![(f64::NEG_INFINITY, revealed.to_vec())];
        for k in 1..=u64::from(horizon_hours) {
            let h = hour + k;
            let start = h as f64 * SECONDS_PER_HOUR;
            let values: Vec<f64> = (0..lots).map(|l| hourly_mean[l][(h % 24) as usize]).collect();
            push_merged(&mut steps, start, values);
        }
        let end = (hour + u64::from(horizon_hours) + 1) as f64 * SECONDS_PER_HOUR;
        push_merged(&mut steps, end, vec![0.0; lots]);
        Self { steps }
    }

    pub fn at(&self, lot: usize, t: f64) -> f64 {
        let i = self.steps.partition_point(|s| s.0 <= t).saturating_sub(1);
        self.steps[i].1.get(lot).copied().unwrap_or(0.0)
    }

    /// Steps clipped to start no earlier than `t0`.
    pub fn steps_from(&self, t0: f64) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        let first = self.steps.partition_point(|s| s.0 <= t0).saturating_sub(1);
        self.steps[first..]
            .iter()
            .enumerate()
            .map(move |(i, (s, v))| (if i == 0 { t0 } else { *s }, v.as_slice()))
    }

    /// First change of the forecast strictly after `t`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        let i = self.steps.partition_point(|s| s.0 <= t);
        self.steps.get(i).map(|s| s.0)
    }
}

fn push_merged(steps: &mut Vec<(f64, Vec<f64>)>, start: f64, values: Vec<f64>) {
    if steps.last().map(|s| s.1 != values).unwrap_or(true) {
        steps.push((start, values));
    }
}
