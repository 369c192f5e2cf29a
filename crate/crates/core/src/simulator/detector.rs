use rand::{Rng, RngExt};

use super::pulse::gaussian;
use super::quantize;
use crate::model::DetectorParams;

/// A photon arriving at a detector: pulse centre plus a fractional offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub center_ps: u64,
    pub offset_ps: f64,
}

impl Photon {
    pub fn at(time_ps: u64) -> Self {
        Photon {
            center_ps: time_ps,
            offset_ps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectorOutput {
    /// Accepted click times, sorted, no two closer than the dead time.
    pub times: Vec<u64>,
    pub dropped_negative: u64,
    pub dead_time_rejected: u64,
}

/// Efficiency, then Gaussian jitter, then the dead-time filter.
///
/// Each photon survives with probability `efficiency`; survivors are shifted
/// by N(0, FWHM / 2.3548) and rounded to the ps grid. Clicks that land before
/// time zero are dropped and counted. The result is sorted and any click
/// within `dead_time_ps` of the previously accepted one is rejected.
pub fn apply_detector<R: Rng + ?Sized>(photons: &[Photon], det: &DetectorParams, rng: &mut R) -> DetectorOutput {
    let stage = DetectorStage::new(det, det.jitter_sigma_ps());
    let mut out = DetectorOutput::default();
    let mut clicks = Vec::with_capacity(photons.len());
    for p in photons {
        if !stage.survives(rng) {
            continue;
        }
        match quantize(p.center_ps, stage.jittered(rng, p.offset_ps)) {
            Some(t) => clicks.push(t),
            None => out.dropped_negative += 1,
        }
    }
    clicks.sort_unstable();
    let mut filter = DeadTimeFilter::new(det.dead_time_ps);
    for t in clicks {
        if filter.accept(t) {
            out.times.push(t);
        } else {
            out.dead_time_rejected += 1;
        }
    }
    out
}

/// Non-paralyzable dead time: a click is accepted only if it is at least
/// `dead_time_ps` after the last accepted click. Feed times in order.
#[derive(Debug, Clone, Copy)]
pub struct DeadTimeFilter {
    dead_time_ps: u64,
    last: Option<u64>,
}

impl DeadTimeFilter {
    pub fn new(dead_time_ps: u64) -> Self {
        DeadTimeFilter {
            dead_time_ps,
            last: None,
        }
    }

    #[inline]
    pub fn accept(&mut self, t: u64) -> bool {
        if let Some(last) = self.last {
            if t.saturating_sub(last) < self.dead_time_ps {
                return false;
            }
        }
        self.last = Some(t);
        true
    }
}

pub(super) struct DetectorStage {
    efficiency: f64,
    sigma: f64,
}

impl DetectorStage {
    pub(super) fn new(det: &DetectorParams, sigma: f64) -> Self {
        DetectorStage {
            efficiency: det.efficiency,
            sigma,
        }
    }

    #[inline]
    pub(super) fn survives<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        if self.efficiency >= 1.0 {
            true
        } else if self.efficiency <= 0.0 {
            false
        } else {
            rng.random::<f64>() < self.efficiency
        }
    }

    #[inline]
    pub(super) fn jittered<R: Rng + ?Sized>(&self, rng: &mut R, offset_ps: f64) -> f64 {
        offset_ps + gaussian(rng, self.sigma)
    }
}
