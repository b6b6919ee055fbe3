use alloc::vec::Vec;

use super::{RateSegment, SolarForecast};
use crate::fleet::{charge_duration, energy_over};
use crate::grid::{CableId, GridTree, POWER_EPS};

/// Breakpoints closer than this (seconds) are merged.
pub const TIME_EPS: f64 = 1e-9;

/// Per-cable residual capacity over time, for both ledgers at once.
///
/// Segment `k` covers `[starts[k], starts[k + 1])`, the last one runs to
/// infinity. Rows are stored flat with one entry per cable.
/// `grid_room` is capacity minus the minimum-rate reservations (no solar);
/// `actual_room` is capacity plus forecast solar minus the actual rates.
#[derive(Clone, Debug)]
pub(crate) struct Timeline {
    width: usize,
    starts: Vec<f64>,
    grid_room: Vec<f64>,
    actual_room: Vec<f64>,
}

/// Outcome of a placement scan.
pub(crate) enum Scan {
    Placed(Vec<RateSegment>),
    /// Cannot hold the minimum rate even once every reservation has ended.
    Never,
    /// A fixed start was requested but the minimum rate does not fit.
    Blocked,
}

impl Timeline {
    pub(crate) fn new(grid: &GridTree, solar: &SolarForecast, t0: f64) -> Self {
        let width = grid.cable_count();
        let caps: Vec<f64> = (0..width).map(|c| grid.capacity(CableId(c))).collect();
        let mut tl = Self {
            width,
            starts: Vec::new(),
            grid_room: Vec::new(),
            actual_room: Vec::new(),
        };
        for (start, per_lot) in solar.steps_from(t0) {
            tl.starts.push(start);
            for c in 0..width {
                let sun: f64 = grid
                    .downstream_lots(CableId(c))
                    .iter()
                    .map(|l| per_lot.get(l.0).copied().unwrap_or(0.0))
                    .sum();
                tl.grid_room.push(caps[c]);
                tl.actual_room.push(caps[c] + sun);
            }
        }
        tl
    }

    pub(crate) fn len(&self) -> usize {
        self.starts.len()
    }

    pub(crate) fn start(&self, k: usize) -> f64 {
        self.starts[k]
    }

    pub(crate) fn end(&self, k: usize) -> f64 {
        self.starts.get(k + 1).copied().unwrap_or(f64::INFINITY)
    }

    pub(crate) fn segment_at(&self, t: f64) -> usize {
        self.starts
            .partition_point(|&s| s <= t + TIME_EPS)
            .saturating_sub(1)
    }

    /// Minimum grid-only and actual room along `path` in segment `k`.
    #[inline]
    pub(crate) fn path_room(&self, k: usize, path: &[CableId]) -> (f64, f64) {
        let row = k * self.width;
        let mut g = f64::INFINITY;
        let mut a = f64::INFINITY;
        for c in path {
            g = g.min(self.grid_room[row + c.0]);
            a = a.min(self.actual_room[row + c.0]);
        }
        (g, a)
    }

    pub(crate) fn grid_room(&self, k: usize, cable: CableId) -> f64 {
        self.grid_room[k * self.width + cable.0]
    }

    pub(crate) fn actual_room(&self, k: usize, cable: CableId) -> f64 {
        self.actual_room[k * self.width + cable.0]
    }

    /// Ensures a breakpoint at `t` and returns the segment starting there.
    fn split(&mut self, t: f64) -> usize {
        let k = self.segment_at(t);
        if (self.starts[k] - t).abs() <= TIME_EPS || t < self.starts[k] {
            return k;
        }
        let at = k + 1;
        self.starts.insert(at, t);
        let (from, to) = (k * self.width, at * self.width);
        self.grid_room.splice(to..to, self.grid_room[from..to].to_vec());
        self.actual_room
            .splice(to..to, self.actual_room[from..to].to_vec());
        at
    }

    /// Breakpoint time that `t` was merged into.
    fn canonical(&self, k: usize, t: f64) -> f64 {
        match self.starts.get(k) {
            Some(&s) if (s - t).abs() <= TIME_EPS => s,
            _ => t,
        }
    }

    /// Subtracts `grid` and `actual` kW from every cable of `path` on
    /// `[from, to)` and returns the interval snapped to the breakpoints used.
    pub(crate) fn reserve(
        &mut self,
        path: &[CableId],
        from: f64,
        to: f64,
        grid: f64,
        actual: f64,
    ) -> (f64, f64) {
        let a = self.split(from);
        let b = if to.is_finite() { self.split(to) } else { self.len() };
        for k in a..b {
            let row = k * self.width;
            for c in path {
                self.grid_room[row + c.0] -= grid;
                self.actual_room[row + c.0] -= actual;
            }
        }
        (self.canonical(a, from), self.canonical(b, to))
    }

    /// Earliest placement of a job at or after `earliest` that holds `p_min`
    /// on both ledgers until `energy` kWh are delivered, charging at
    /// `min(p_max, actual room)` in every segment.
    pub(crate) fn scan(
        &self,
        path: &[CableId],
        p_min: f64,
        p_max: f64,
        energy: f64,
        earliest: f64,
        fixed: bool,
    ) -> Scan {
        let mut k = self.segment_at(earliest);
        let mut start = earliest.max(self.starts[0]);
        'candidate: loop {
            let mut segs: Vec<RateSegment> = Vec::new();
            let mut left = energy;
            let mut t = start;
            let mut i = k;
            loop {
                let end = self.end(i);
                let (g, a) = self.path_room(i, path);
                if g < p_min - POWER_EPS || a < p_min - POWER_EPS {
                    if fixed {
                        return Scan::Blocked;
                    }
                    if end == f64::INFINITY {
                        return Scan::Never;
                    }
                    k = i + 1;
                    start = end;
                    continue 'candidate;
                }
                let rate = a.min(p_max).max(p_min);
                let need = charge_duration(left, rate);
                if t + need <= end + TIME_EPS {
                    // Land exactly on a breakpoint we are within tolerance of.
                    let stop = if t + need >= end - TIME_EPS { end } else { t + need };
                    push_segment(&mut segs, t, stop, rate);
                    return Scan::Placed(segs);
                }
                left -= energy_over(rate, end - t);
                push_segment(&mut segs, t, end, rate);
                t = end;
                i += 1;
            }
        }
    }

    /// Drops breakpoints whose neighbouring rows are identical up to `tol`.
    pub(crate) fn compact(&mut self, tol: f64) {
        let w = self.width;
        let mut keep = 1;
        for k in 1..self.starts.len() {
            let prev = (keep - 1) * w;
            let cur = k * w;
            let same = (0..w).all(|c| {
                (self.grid_room[prev + c] - self.grid_room[cur + c]).abs() <= tol
                    && (self.actual_room[prev + c] - self.actual_room[cur + c]).abs() <= tol
            });
            if same {
                continue;
            }
            self.starts[keep] = self.starts[k];
            for c in 0..w {
                self.grid_room[keep * w + c] = self.grid_room[cur + c];
                self.actual_room[keep * w + c] = self.actual_room[cur + c];
            }
            keep += 1;
        }
        self.starts.truncate(keep);
        self.grid_room.truncate(keep * w);
        self.actual_room.truncate(keep * w);
    }
}

pub(crate) fn push_segment(segs: &mut Vec<RateSegment>, from: f64, to: f64, rate: f64) {
    if let Some(last) = segs.last_mut() {
        if (last.rate - rate).abs() <= 1e-12 && (last.to - from).abs() <= TIME_EPS {
            last.to = to;
            return;
        }
    }
    if to > from {
        segs.push(RateSegment { from, to, rate });
    }
}
