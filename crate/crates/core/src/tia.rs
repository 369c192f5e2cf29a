//! Start/stop time-interval analyzer and CAR estimation.
//!
//! The idler detector drives the start input and the signal detector the
//! stop input (swappable). Stops pass through a fixed delay line so that a
//! stop arriving slightly before its start can still be timed; recorded
//! intervals have the delay removed, putting the true-coincidence peak at 0.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CountingWindows;
use crate::simulator::{Channel, TimeTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiaConfig {
    pub stop_delay_ps: u64,
    /// Inputs on the start channel are ignored for this long after an accepted start.
    pub start_dead_time_ps: u64,
    /// Largest |stop - start| recorded.
    pub max_interval_ps: u64,
    /// Use the signal detector as start and the idler as stop.
    pub swap_channels: bool,
}

impl Default for TiaConfig {
    fn default() -> Self {
        TiaConfig {
            stop_delay_ps: 50_000,
            start_dead_time_ps: 50_000,
            max_interval_ps: 20_000,
            swap_channels: false,
        }
    }
}

impl TiaConfig {
    pub fn start_channel(&self) -> Channel {
        if self.swap_channels {
            Channel::Signal
        } else {
            Channel::Idler
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stop_delay_ps", self.stop_delay_ps),
            ("start_dead_time_ps", self.start_dead_time_ps),
            ("max_interval_ps", self.max_interval_ps),
        ] {
            if v > i64::MAX as u64 / 4 {
                return Err(Error::param(name, format!("{v} ps is out of range")));
            }
        }
        Ok(())
    }
}

/// Which side of the peak the accidental slots are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotSide {
    /// Alternating -1, +1, -2, +2, ... slot spacings.
    #[default]
    Split,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarConfig {
    pub window_ps: u64,
    pub slot_spacing_ps: u64,
    pub n_accidental: usize,
    pub slot_side: SlotSide,
    /// Restrict the peak centre to `[lo, hi]`; `None` searches every interval.
    pub peak_search_ps: Option<(i64, i64)>,
}

impl Default for CarConfig {
    fn default() -> Self {
        CarConfig {
            window_ps: 60,
            slot_spacing_ps: 200,
            n_accidental: 10,
            slot_side: SlotSide::Split,
            peak_search_ps: None,
        }
    }
}

impl CarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_ps == 0 || self.window_ps > i64::MAX as u64 / 4 {
            return Err(Error::param("window_ps", "must be > 0"));
        }
        if self.slot_spacing_ps < self.window_ps || self.slot_spacing_ps > i64::MAX as u64 / 4 {
            return Err(Error::param("slot_spacing_ps", "must be >= window_ps"));
        }
        if self.n_accidental == 0 {
            return Err(Error::param("n_accidental", "must be >= 1"));
        }
        if let Some((lo, hi)) = self.peak_search_ps {
            if lo > hi {
                return Err(Error::param("peak_search_ps", format!("empty range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Accidental slot offsets from the peak centre, in the order they are used.
    pub fn slot_offsets(&self) -> Vec<i64> {
        let d = self.slot_spacing_ps as i64;
        let n = self.n_accidental as i64;
        match self.slot_side {
            SlotSide::Split => (1..).flat_map(|k| [-k * d, k * d]).take(self.n_accidental).collect(),
            SlotSide::Left => (1..=n).map(|k| -k * d).collect(),
            SlotSide::Right => (1..=n).map(|k| k * d).collect(),
        }
    }

    pub fn counting_windows(&self) -> CountingWindows {
        CountingWindows {
            width_ps: self.window_ps as f64,
            slot_spacing_ps: self.slot_spacing_ps as f64,
            n_slots: self.n_accidental,
        }
    }
}

/// Streaming single-stop interval extraction.
///
/// Feed tags in time order with [`push`](Self::push); each resolved start
/// yields at most one interval `stop - start` in ps.
#[derive(Debug, Clone)]
pub struct IntervalExtractor {
    cfg: TiaConfig,
    start: Channel,
    delay: i64,
    max: i64,
    last_start: Option<i64>,
    pending: Vec<i64>,
    /// Recent stops that a future start could still pair with.
    stops: VecDeque<i64>,
    last_time: i64,
    accepted_starts: u64,
    out_of_range: u64,
}

impl IntervalExtractor {
    pub fn new(cfg: TiaConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(IntervalExtractor {
            start: cfg.start_channel(),
            delay: cfg.stop_delay_ps as i64,
            max: cfg.max_interval_ps as i64,
            cfg,
            last_start: None,
            pending: Vec::new(),
            stops: VecDeque::new(),
            last_time: i64::MIN,
            accepted_starts: 0,
            out_of_range: 0,
        })
    }

    pub fn config(&self) -> &TiaConfig {
        &self.cfg
    }

    pub fn accepted_starts(&self) -> u64 {
        self.accepted_starts
    }

    /// Starts whose first stop fell outside the interval range.
    pub fn out_of_range(&self) -> u64 {
        self.out_of_range
    }

    fn record(&mut self, start: i64, stop: i64, out: &mut impl FnMut(i64)) {
        let r = stop - start;
        if r.abs() <= self.max {
            out(r);
        } else {
            self.out_of_range += 1;
        }
    }

    /// Process one tag; panics in debug builds if tags go backwards.
    pub fn push(&mut self, tag: TimeTag, out: &mut impl FnMut(i64)) {
        let t = tag.time_ps as i64;
        debug_assert!(t >= self.last_time, "tags must be time ordered");
        self.last_time = t;
        let horizon = t - self.delay;
        while self.stops.front().is_some_and(|&x| x < horizon) {
            self.stops.pop_front();
        }

        if tag.channel == self.start {
            if self
                .last_start
                .is_some_and(|s| t - s < self.cfg.start_dead_time_ps as i64)
            {
                return;
            }
            self.last_start = Some(t);
            self.accepted_starts += 1;
            match self.stops.front().copied() {
                Some(x) => self.record(t, x, out),
                None => self.pending.push(t),
            }
        } else {
            let mut pending = std::mem::take(&mut self.pending);
            for s in pending.drain(..) {
                self.record(s, t, out);
            }
            self.pending = pending;
            if self.delay > 0 {
                self.stops.push_back(t);
            }
        }
    }
}

/// All intervals recorded from a time-ordered tag stream.
pub fn start_stop_intervals<I>(tags: I, tia: &TiaConfig) -> Result<Vec<i64>>
where
    I: IntoIterator<Item = TimeTag>,
{
    let mut ex = IntervalExtractor::new(*tia)?;
    let mut out = Vec::new();
    let mut previous = None;
    for tag in tags {
        if previous.is_some_and(|p: TimeTag| tag.time_ps < p.time_ps) {
            return Err(Error::Config(format!(
                "tags out of order: {} ps after {} ps",
                tag.time_ps,
                previous.map_or(0, |p| p.time_ps)
            )));
        }
        previous = Some(tag);
        ex.push(tag, &mut |r| out.push(r));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_ps: u64,
    /// Left edge of bin 0.
    pub origin_ps: i64,
    pub counts: Vec<u64>,
    /// Values that fell outside the binned range.
    pub discarded: u64,
}

impl Histogram {
    pub fn new(bin_width_ps: u64, origin_ps: i64, n_bins: usize) -> Result<Self> {
        if bin_width_ps == 0 || bin_width_ps > i64::MAX as u64 {
            return Err(Error::param("bin_width_ps", "must be >= 1"));
        }
        if n_bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        Ok(Histogram {
            bin_width_ps,
            origin_ps,
            counts: vec![0; n_bins],
            discarded: 0,
        })
    }

    #[inline]
    pub fn add(&mut self, value: i64) {
        let bin = (value as i128 - self.origin_ps as i128).div_euclid(self.bin_width_ps as i128);
        match usize::try_from(bin).ok().and_then(|b| self.counts.get_mut(b)) {
            Some(c) => *c += 1,
            None => self.discarded += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_left_ps(&self, bin: usize) -> i64 {
        self.origin_ps + bin as i64 * self.bin_width_ps as i64
    }

    pub fn bin_center_ps(&self, bin: usize) -> f64 {
        self.origin_ps as f64 + (bin as f64 + 0.5) * self.bin_width_ps as f64
    }

    fn merge(mut self, other: &Histogram) -> Histogram {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.discarded += other.discarded;
        self
    }

    /// CSV with columns `bin_left_ps,count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_left_ps,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.bin_left_ps(i), c)?;
        }
        Ok(())
    }
}

const PARALLEL_CHUNK: usize = 1 << 16;

pub fn build_histogram(intervals: &[i64], bin_width_ps: u64, origin_ps: i64, n_bins: usize) -> Result<Histogram> {
    let empty = Histogram::new(bin_width_ps, origin_ps, n_bins)?;
    if intervals.len() <= PARALLEL_CHUNK {
        let mut h = empty;
        intervals.iter().for_each(|&v| h.add(v));
        return Ok(h);
    }
    Ok(intervals
        .par_chunks(PARALLEL_CHUNK)
        .map(|chunk| {
            let mut h = empty.clone();
            chunk.iter().for_each(|&v| h.add(v));
            h
        })
        .reduce(|| empty.clone(), |a, b| a.merge(&b)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarEstimate {
    pub peak_counts: u64,
    pub accidental_counts: Vec<u64>,
    pub accidental_mean: f64,
    pub car: f64,
    /// Poisson-propagated; infinite (serialized as null) for a lower bound.
    pub stderr: f64,
    pub peak_center_ps: i64,
    /// No accidental counts at all: `car` is peak_counts * n_accidental.
    pub lower_bound: bool,
}

fn count_in(sorted: &[i64], lo: i64, hi: i64) -> u64 {
    (sorted.partition_point(|&v| v < hi) - sorted.partition_point(|&v| v < lo)) as u64
}

/// Peak location, windowed counts and CAR from a list of intervals.
///
/// Windows are half-open: a window of width `w` centred at `c` covers
/// `[c - w/2, c - w/2 + w)` with `w/2` rounded down.
pub fn estimate_car(intervals: &[i64], cfg: &CarConfig) -> Result<CarEstimate> {
    cfg.validate()?;
    if intervals.is_empty() {
        return Err(Error::EmptyInput("intervals"));
    }
    let mut sorted = intervals.to_vec();
    sorted.par_sort_unstable();
    let w = cfg.window_ps as i64;
    let half = w / 2;

    // The count as a function of the left edge L only rises at L = v - w + 1,
    // so the leftmost maximising edge is one of those (or the range start).
    let (l_min, l_max) = match cfg.peak_search_ps {
        Some((lo, hi)) => (lo - half, hi - half),
        None => (sorted[0] - w + 1, sorted[sorted.len() - 1] - w + 1),
    };
    let mut best = (count_in(&sorted, l_min, l_min + w), l_min);
    let first = sorted.partition_point(|&v| v - w + 1 < l_min);
    let mut lo_idx = first;
    let mut prev_left = None;
    for i in first..sorted.len() {
        let left = sorted[i] - w + 1;
        if left > l_max {
            break;
        }
        if prev_left == Some(left) {
            continue;
        }
        prev_left = Some(left);
        while sorted[lo_idx] < left {
            lo_idx += 1;
        }
        let hi_idx = i + sorted[i..].partition_point(|&v| v < left + w);
        let n = (hi_idx - lo_idx) as u64;
        if n > best.0 {
            best = (n, left);
        }
    }
    let (peak_counts, left) = best;
    let center = left + half;

    let accidental_counts: Vec<u64> = cfg
        .slot_offsets()
        .into_iter()
        .map(|o| count_in(&sorted, left + o, left + o + w))
        .collect();
    let total: u64 = accidental_counts.iter().sum();
    let n = cfg.n_accidental as f64;
    let accidental_mean = total as f64 / n;
    let (car, stderr, lower_bound) = if total == 0 {
        (peak_counts as f64 * n, f64::INFINITY, true)
    } else {
        let car = peak_counts as f64 / accidental_mean;
        let stderr = if peak_counts == 0 {
            1.0 / accidental_mean
        } else {
            car * (1.0 / peak_counts as f64 + 1.0 / total as f64).sqrt()
        };
        (car, stderr, false)
    };
    Ok(CarEstimate {
        peak_counts,
        accidental_counts,
        accidental_mean,
        car,
        stderr,
        peak_center_ps: center,
        lower_bound,
    })
}

/// Full width at half maximum, linearly interpolated between bin centres.
///
/// Bins beyond either end of the histogram count as empty.
pub fn histogram_fwhm(h: &Histogram) -> Result<f64> {
    let peak = *h.counts.iter().max().ok_or(Error::EmptyInput("histogram"))?;
    if peak == 0 {
        return Err(Error::EmptyInput("histogram"));
    }
    let half = peak as f64 / 2.0;
    let at = |i: isize| -> f64 {
        usize::try_from(i)
            .ok()
            .and_then(|i| h.counts.get(i))
            .map_or(0.0, |&c| c as f64)
    };
    let center = |i: isize| h.origin_ps as f64 + (i as f64 + 0.5) * h.bin_width_ps as f64;
    let imax = h.counts.iter().position(|&c| c == peak).expect("max exists") as isize;

    let mut i = imax;
    while at(i - 1) >= half {
        i -= 1;
    }
    let (below, above) = (at(i - 1), at(i));
    let left = center(i - 1) + (half - below) / (above - below) * h.bin_width_ps as f64;

    let mut j = imax;
    while at(j + 1) >= half {
        j += 1;
    }
    let (above, below) = (at(j), at(j + 1));
    let right = center(j) + (above - half) / (above - below) * h.bin_width_ps as f64;
    Ok(right - left)
}

/// Histogram of detection times modulo the pulse period, centred on the pulse.
///
/// Phases lie in `[-P/2, P - P/2)` so a peak at the pulse centre does not
/// wrap across the histogram edge.
pub fn singles_phase_histogram<I>(tags: I, channel: Channel, rep_rate_hz: f64, bin_width_ps: u64) -> Result<Histogram>
where
    I: IntoIterator<Item = TimeTag>,
{
    let period_f = 1e12 / rep_rate_hz;
    if !(rep_rate_hz > 0.0) || !period_f.is_finite() || period_f.round() != period_f || period_f < 1.0 {
        return Err(Error::param(
            "rep_rate_hz",
            format!("period {period_f} ps is not a whole number of ps"),
        ));
    }
    if bin_width_ps == 0 {
        return Err(Error::param("bin_width_ps", "must be >= 1"));
    }
    let period = period_f as u64;
    let half = period / 2;
    let n_bins = period.div_ceil(bin_width_ps) as usize;
    let mut h = Histogram::new(bin_width_ps, -(half as i64), n_bins)?;
    for tag in tags {
        if tag.channel == channel {
            let phase = ((tag.time_ps % period + half) % period) as i64 - half as i64;
            h.add(phase);
        }
    }
    Ok(h)
}
