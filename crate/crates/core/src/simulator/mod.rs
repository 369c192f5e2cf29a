//! Event-driven Monte Carlo generation of detector time tags.
//!
//! A run is cut into fixed segments of [`SEGMENT_PULSES`] pulses. Each
//! segment draws from its own keyed random streams, so segments can be
//! generated in parallel and merged into one globally sorted tag stream that
//! does not depend on the thread count or the work-unit size.
//!
//! Two engines produce the same distribution:
//!
//! * [`Engine::Direct`] follows the physical chain literally: Poisson pair and
//!   noise counts per pulse, crosstalk, emission-time spread, then the
//!   detector (efficiency, jitter, dead time). Pulses with no emitted photon
//!   are skipped geometrically when they are the overwhelming majority.
//! * [`Engine::Thinned`] folds detection efficiency and crosstalk into the
//!   Poisson intensities up front and only visits pulses that produce at
//!   least one detected photon. At percent-level efficiencies this touches
//!   orders of magnitude fewer events.

mod dark;
mod detector;
mod merge;
mod pulse;
mod thinned;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fwhm_to_sigma, DetectorParams, EmissionSpread, SourceParams};
use crate::rng::{GeometricSkip, PoissonSampler};

pub use dark::generate_dark_counts;
pub use detector::{apply_detector, DeadTimeFilter, DetectorOutput, Photon};
pub use pulse::{generate_pulse_events, Emission};

use merge::Merger;

/// Pulses per independently seeded segment. Part of the stream definition:
/// changing it changes every simulated run.
pub const SEGMENT_PULSES: u64 = 1 << 22;

/// Below this per-pulse event expectation the direct engine skips empty
/// pulses geometrically instead of visiting each one.
pub const SPARSE_THRESHOLD: f64 = 0.05;

// Expected clicks held in memory per parallel wave, and a cap on its length.
const WAVE_CLICK_BUDGET: f64 = 4.0e6;
const MAX_WAVE_SEGMENTS: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Channel {
    Signal = 0,
    Idler = 1,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Signal, Channel::Idler];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Channel> {
        match id {
            0 => Some(Channel::Signal),
            1 => Some(Channel::Idler),
            _ => None,
        }
    }

    pub fn other(self) -> Channel {
        match self {
            Channel::Signal => Channel::Idler,
            Channel::Idler => Channel::Signal,
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// A detector click. Ordered by time, then channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub time_ps: u64,
    pub channel: Channel,
}

impl TimeTag {
    pub fn new(time_ps: u64, channel: Channel) -> Self {
        TimeTag { time_ps, channel }
    }
}

/// Pump pulse train. The pulse period comes from [`SourceParams::rep_rate_hz`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrainConfig {
    pub n_pulses: u64,
    #[serde(default)]
    pub pulse_fwhm_ps: f64,
    #[serde(default)]
    pub dispersion_fwhm_signal_ps: f64,
    #[serde(default)]
    pub dispersion_fwhm_idler_ps: f64,
}

impl PulseTrainConfig {
    /// 10 ps FWHM pump pulses, no dispersion.
    pub fn preset(n_pulses: u64) -> Self {
        PulseTrainConfig {
            n_pulses,
            pulse_fwhm_ps: 10.0,
            dispersion_fwhm_signal_ps: 0.0,
            dispersion_fwhm_idler_ps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pulses == 0 {
            return Err(Error::param("n_pulses", "must be >= 1"));
        }
        for (name, v) in [
            ("pulse_fwhm_ps", self.pulse_fwhm_ps),
            ("dispersion_fwhm_signal_ps", self.dispersion_fwhm_signal_ps),
            ("dispersion_fwhm_idler_ps", self.dispersion_fwhm_idler_ps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn spread(&self) -> EmissionSpread {
        EmissionSpread {
            pulse_fwhm_ps: self.pulse_fwhm_ps,
            dispersion_fwhm_signal_ps: self.dispersion_fwhm_signal_ps,
            dispersion_fwhm_idler_ps: self.dispersion_fwhm_idler_ps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Direct,
    Thinned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Pulses per parallel work unit, rounded up to whole segments.
    #[serde(default = "default_block_size")]
    pub block_size: u64,
    #[serde(default)]
    pub engine: Engine,
}

fn default_block_size() -> u64 {
    SEGMENT_PULSES
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            block_size: default_block_size(),
            engine: Engine::Direct,
        }
    }

    pub fn with_engine(self, engine: Engine) -> Self {
        RunConfig { engine, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::param("block_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Bookkeeping for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub segments: u64,
    /// Pulses visited with at least one sampled event (emitted photon for the
    /// direct engine, detected photon for the thinned engine).
    pub occupied_pulses: u64,
    /// Photons emitted into the channels (direct engine only).
    pub emitted_photons: u64,
    pub detected_photons: u64,
    pub dark_counts_signal: u64,
    pub dark_counts_idler: u64,
    /// Clicks jittered to before time zero and discarded.
    pub dropped_negative: u64,
    pub dead_time_rejected_signal: u64,
    pub dead_time_rejected_idler: u64,
    pub tags_signal: u64,
    pub tags_idler: u64,
}

impl RunDiagnostics {
    fn absorb(&mut self, s: &SegmentStats) {
        self.segments += 1;
        self.occupied_pulses += s.occupied_pulses;
        self.emitted_photons += s.emitted_photons;
        self.detected_photons += s.detected_photons;
        self.dark_counts_signal += s.dark_counts[0];
        self.dark_counts_idler += s.dark_counts[1];
        self.dropped_negative += s.dropped_negative;
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub tags: Vec<TimeTag>,
    pub diagnostics: RunDiagnostics,
    /// Run length, `n_pulses * period`.
    pub duration_ps: u64,
}

impl SimulationOutput {
    pub fn count(&self, channel: Channel) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }
}

/// Simulate a full run and collect the sorted tag stream.
pub fn simulate_run(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    train: &PulseTrainConfig,
    run: &RunConfig,
) -> Result<SimulationOutput> {
    let mut tags = Vec::new();
    let plan = Plan::new(source, det_s, det_i, train, run)?;
    let duration_ps = plan.duration_ps;
    let diagnostics = plan.execute(&mut |t| tags.push(t))?;
    Ok(SimulationOutput {
        tags,
        diagnostics,
        duration_ps,
    })
}

/// Simulate a run, handing each tag to `sink` in global time order without
/// materialising the stream. Memory stays bounded by a few segments.
pub fn simulate_stream(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    train: &PulseTrainConfig,
    run: &RunConfig,
    sink: &mut dyn FnMut(TimeTag),
) -> Result<RunDiagnostics> {
    Plan::new(source, det_s, det_i, train, run)?.execute(sink)
}

/// Run length in ps for a train at the source's repetition rate.
pub fn run_duration_ps(source: &SourceParams, train: &PulseTrainConfig) -> Result<u64> {
    let period = source.period_ps()?;
    train
        .n_pulses
        .checked_mul(period)
        .filter(|&d| d <= MAX_RUN_PS)
        .ok_or_else(|| {
            Error::Config(format!(
                "{} pulses of {period} ps overflow the 64-bit picosecond clock",
                train.n_pulses
            ))
        })
}

// Headroom below i64::MAX for jitter added to the last pulses.
const MAX_RUN_PS: u64 = (i64::MAX as u64) / 2;

#[derive(Debug, Clone, Copy)]
struct Segment {
    index: u64,
    first_pulse: u64,
    n_pulses: u64,
    start_ps: u64,
    end_ps: u64,
}

#[derive(Debug, Default, Clone)]
struct SegmentStats {
    occupied_pulses: u64,
    emitted_photons: u64,
    detected_photons: u64,
    dark_counts: [u64; 2],
    dropped_negative: u64,
}

/// Pre-dead-time clicks of one segment, darks included, sorted per channel.
#[derive(Debug)]
struct SegmentOutput {
    start_ps: u64,
    clicks: [Vec<u64>; 2],
    stats: SegmentStats,
}

/// Per-channel Gaussian widths in ps.
#[derive(Debug, Clone, Copy)]
struct Spreads {
    pulse: f64,
    dispersion: [f64; 2],
    jitter: [f64; 2],
}

/// Everything a segment needs, resolved once per run.
struct Plan {
    seed: u64,
    period_ps: u64,
    n_pulses: u64,
    duration_ps: u64,
    units: u64,
    segments_per_unit: u64,
    engine: Engine,
    source: SourceParams,
    detectors: [DetectorParams; 2],
    spreads: Spreads,
    direct: pulse::DirectPlan,
    thinned: thinned::ThinnedPlan,
}

impl Plan {
    fn new(
        source: &SourceParams,
        det_s: &DetectorParams,
        det_i: &DetectorParams,
        train: &PulseTrainConfig,
        run: &RunConfig,
    ) -> Result<Plan> {
        source.validate()?;
        det_s.validate()?;
        det_i.validate()?;
        train.validate()?;
        run.validate()?;
        let period_ps = source.period_ps()?;
        let duration_ps = run_duration_ps(source, train)?;
        let n_segments = train.n_pulses.div_ceil(SEGMENT_PULSES);
        let segments_per_unit = run.block_size.div_ceil(SEGMENT_PULSES);
        let spreads = Spreads {
            pulse: fwhm_to_sigma(train.pulse_fwhm_ps),
            dispersion: [
                fwhm_to_sigma(train.dispersion_fwhm_signal_ps),
                fwhm_to_sigma(train.dispersion_fwhm_idler_ps),
            ],
            jitter: [det_s.jitter_sigma_ps(), det_i.jitter_sigma_ps()],
        };
        let dark_per_period = (det_s.dark_rate_hz + det_i.dark_rate_hz) * period_ps as f64 * 1e-12;
        Ok(Plan {
            seed: run.seed,
            period_ps,
            n_pulses: train.n_pulses,
            duration_ps,
            units: n_segments.div_ceil(segments_per_unit),
            segments_per_unit,
            engine: run.engine,
            source: *source,
            detectors: [*det_s, *det_i],
            spreads,
            direct: pulse::DirectPlan::new(source, dark_per_period),
            thinned: thinned::ThinnedPlan::new(source, det_s, det_i),
        })
    }

    fn segment(&self, index: u64) -> Segment {
        let first_pulse = index * SEGMENT_PULSES;
        let n_pulses = SEGMENT_PULSES.min(self.n_pulses - first_pulse);
        Segment {
            index,
            first_pulse,
            n_pulses,
            start_ps: first_pulse * self.period_ps,
            end_ps: (first_pulse + n_pulses) * self.period_ps,
        }
    }

    fn n_segments(&self) -> u64 {
        self.n_pulses.div_ceil(SEGMENT_PULSES)
    }

    fn generate(&self, seg: Segment) -> SegmentOutput {
        let mut out = match self.engine {
            Engine::Direct => pulse::direct_segment(self, seg),
            Engine::Thinned => thinned::thinned_segment(self, seg),
        };
        for ch in Channel::BOTH {
            out.clicks[ch.index()].sort_unstable();
            let darks = dark::segment_darks(self, seg, ch);
            out.stats.dark_counts[ch.index()] = darks.len() as u64;
            if !darks.is_empty() {
                let clicks = std::mem::take(&mut out.clicks[ch.index()]);
                out.clicks[ch.index()] = merge::merge_sorted(clicks, darks);
            }
        }
        out
    }

    /// Work units generated per parallel wave: at least two per thread, more
    /// while the expected number of buffered clicks stays small.
    fn wave_units(&self) -> u64 {
        let src = &self.source;
        let [ds, di] = &self.detectors;
        let clicks_per_pulse =
            (src.mu + src.mu_noise_signal + src.mu_noise_idler) * ds.efficiency.max(di.efficiency) * 2.0
                + (ds.dark_rate_hz + di.dark_rate_hz) * self.period_ps as f64 * 1e-12;
        let per_unit = (clicks_per_pulse * (self.segments_per_unit * SEGMENT_PULSES) as f64).max(1.0);
        let budget = (WAVE_CLICK_BUDGET / per_unit).clamp(1.0, MAX_WAVE_SEGMENTS as f64) as u64;
        let by_budget = (budget / self.segments_per_unit).max(1);
        by_budget.max(rayon::current_num_threads() as u64 * 2)
    }

    fn execute(&self, sink: &mut dyn FnMut(TimeTag)) -> Result<RunDiagnostics> {
        let mut merger = Merger::new([self.detectors[0].dead_time_ps, self.detectors[1].dead_time_ps]);
        let n_segments = self.n_segments();
        let wave = self.wave_units();
        let mut unit = 0;
        while unit < self.units {
            let last = (unit + wave).min(self.units);
            let outputs: Vec<Vec<SegmentOutput>> = (unit..last)
                .into_par_iter()
                .map(|u| {
                    let first = u * self.segments_per_unit;
                    let end = (first + self.segments_per_unit).min(n_segments);
                    (first..end).map(|s| self.generate(self.segment(s))).collect()
                })
                .collect();
            for seg in outputs.into_iter().flatten() {
                merger.push(seg, sink)?;
            }
            unit = last;
        }
        merger.finish(sink)
    }
}

/// Time of a click `offset_ps` after the pulse centre, rounded half-to-even
/// to the ps grid. `None` if it lands before time zero.
#[inline]
fn quantize(center_ps: u64, offset_ps: f64) -> Option<u64> {
    let shift = offset_ps.round_ties_even() as i64;
    let t = (center_ps as i64).checked_add(shift)?;
    u64::try_from(t).ok()
}

/// Poisson sampler plus the geometric skip used when most pulses are empty.
struct OccupancySampler {
    counts: PoissonSampler,
    skip: Option<GeometricSkip>,
}

impl OccupancySampler {
    fn new(mean: f64) -> Self {
        let counts = PoissonSampler::new(mean);
        let skip = (mean > 0.0).then(|| GeometricSkip::new(counts.p_nonzero()));
        OccupancySampler { counts, skip }
    }
}
