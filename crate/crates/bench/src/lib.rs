//! Shared fixtures for the benchmarks.

use pairsim::model;
use pairsim::simulator::simulate_run;
use pairsim::{DetectorParams, PulseTrainConfig, RunConfig, SourceParams, TimeTag};

/// Preset detectors without dead time.
pub fn detectors(dark_rate_hz: f64) -> (DetectorParams, DetectorParams) {
    let make = |efficiency| DetectorParams {
        efficiency,
        dark_rate_hz,
        jitter_fwhm_ps: model::PRESET_JITTER_FWHM_PS,
        dead_time_ps: 0,
    };
    (
        make(model::PRESET_EFFICIENCY_SIGNAL),
        make(model::PRESET_EFFICIENCY_IDLER),
    )
}

/// Sorted tag stream of the high-pump operating point.
pub fn preset_tags(n_pulses: u64) -> Vec<TimeTag> {
    let (s, i) = detectors(100.0);
    simulate_run(
        &SourceParams::preset(0.12),
        &s,
        &i,
        &PulseTrainConfig::preset(n_pulses),
        &RunConfig::new(1),
    )
    .expect("valid parameters")
    .tags
}
