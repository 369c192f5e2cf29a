use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use super::detector::DetectorStage;
use super::{
    quantize, Channel, OccupancySampler, Plan, PulseTrainConfig, Segment, SegmentOutput, SegmentStats, Spreads,
    SPARSE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::model::{fwhm_to_sigma, SourceParams};
use crate::rng::{stream, PoissonSampler, StreamRole};

/// A photon leaving the demultiplexer, before detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub pulse_index: u64,
    /// Emission time relative to the pulse centre, ps.
    pub offset_ps: f64,
    /// Output port after crosstalk.
    pub channel: Channel,
    /// Port the photon was generated for.
    pub born: Channel,
    /// Index of the pair within its pulse; `None` for noise photons.
    pub pair: Option<u32>,
}

impl Emission {
    pub fn time_ps(&self, period_ps: u64) -> f64 {
        (self.pulse_index * period_ps) as f64 + self.offset_ps
    }
}

/// Photons emitted by one pump pulse.
///
/// The total event count is Poisson with mean `mu + mu_s + mu_i`; each event
/// is a pair or a noise photon in proportion to its mean. Both photons of a
/// pair share the pump-pulse time offset.
pub fn generate_pulse_events<R: Rng + ?Sized>(
    pulse_index: u64,
    source: &SourceParams,
    train: &PulseTrainConfig,
    rng: &mut R,
) -> Result<Vec<Emission>> {
    source.validate()?;
    train.validate()?;
    if pulse_index >= train.n_pulses {
        return Err(Error::param(
            "pulse_index",
            format!("{pulse_index} is past the end of a {}-pulse train", train.n_pulses),
        ));
    }
    let spreads = Spreads {
        pulse: fwhm_to_sigma(train.pulse_fwhm_ps),
        dispersion: [
            fwhm_to_sigma(train.dispersion_fwhm_signal_ps),
            fwhm_to_sigma(train.dispersion_fwhm_idler_ps),
        ],
        jitter: [0.0; 2],
    };
    let total = source.mu + source.mu_noise_signal + source.mu_noise_idler;
    let n = PoissonSampler::new(total).sample(rng);
    let mut out = Vec::new();
    emit_pulse(source, &spreads, pulse_index, n, rng, &mut out);
    Ok(out)
}

#[inline]
pub(super) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    } else {
        0.0
    }
}

#[inline]
fn route<R: Rng + ?Sized>(rng: &mut R, born: Channel, crosstalk: f64) -> Channel {
    if crosstalk <= 0.0 {
        born
    } else if crosstalk >= 1.0 || rng.random::<f64>() < crosstalk {
        born.other()
    } else {
        born
    }
}

fn emit_pulse<R: Rng + ?Sized>(
    source: &SourceParams,
    spreads: &Spreads,
    pulse_index: u64,
    n_events: u64,
    rng: &mut R,
    out: &mut Vec<Emission>,
) {
    let total = source.mu + source.mu_noise_signal + source.mu_noise_idler;
    let mut pairs = 0u32;
    for _ in 0..n_events {
        let u = rng.random::<f64>() * total;
        if u < source.mu {
            let common = gaussian(rng, spreads.pulse);
            for born in Channel::BOTH {
                let channel = route(rng, born, source.crosstalk);
                out.push(Emission {
                    pulse_index,
                    offset_ps: common + gaussian(rng, spreads.dispersion[channel.index()]),
                    channel,
                    born,
                    pair: Some(pairs),
                });
            }
            pairs += 1;
        } else {
            let born = if u < source.mu + source.mu_noise_signal {
                Channel::Signal
            } else {
                Channel::Idler
            };
            let channel = route(rng, born, source.crosstalk);
            let offset = gaussian(rng, spreads.pulse) + gaussian(rng, spreads.dispersion[channel.index()]);
            out.push(Emission {
                pulse_index,
                offset_ps: offset,
                channel,
                born,
                pair: None,
            });
        }
    }
}

pub(super) struct DirectPlan {
    occupancy: OccupancySampler,
    sparse: bool,
}

impl DirectPlan {
    pub(super) fn new(source: &SourceParams, dark_per_period: f64) -> Self {
        let total = source.mu + source.mu_noise_signal + source.mu_noise_idler;
        DirectPlan {
            occupancy: OccupancySampler::new(total),
            sparse: total + dark_per_period < SPARSE_THRESHOLD,
        }
    }
}

pub(super) fn direct_segment(plan: &Plan, seg: Segment) -> SegmentOutput {
    let mut rng = stream(plan.seed, StreamRole::Photons, seg.index);
    let mut out = SegmentOutput {
        start_ps: seg.start_ps,
        clicks: [Vec::new(), Vec::new()],
        stats: SegmentStats::default(),
    };
    let direct = &plan.direct;
    let Some(skip) = direct.occupancy.skip else {
        return out;
    };
    let stages = [
        DetectorStage::new(&plan.detectors[0], plan.spreads.jitter[0]),
        DetectorStage::new(&plan.detectors[1], plan.spreads.jitter[1]),
    ];
    let mut buf = Vec::new();
    let mut visit = |pulse: u64, n: u64, rng: &mut rand_chacha::ChaCha8Rng, out: &mut SegmentOutput| {
        buf.clear();
        emit_pulse(&plan.source, &plan.spreads, pulse, n, rng, &mut buf);
        out.stats.occupied_pulses += 1;
        out.stats.emitted_photons += buf.len() as u64;
        let center = pulse * plan.period_ps;
        for e in &buf {
            let stage = &stages[e.channel.index()];
            if !stage.survives(rng) {
                continue;
            }
            out.stats.detected_photons += 1;
            match quantize(center, stage.jittered(rng, e.offset_ps)) {
                Some(t) => out.clicks[e.channel.index()].push(t),
                None => out.stats.dropped_negative += 1,
            }
        }
    };

    if direct.sparse {
        let mut k = skip.sample(&mut rng);
        while k < seg.n_pulses {
            let n = direct.occupancy.counts.sample_nonzero(&mut rng);
            visit(seg.first_pulse + k, n, &mut rng, &mut out);
            k = k.saturating_add(1).saturating_add(skip.sample(&mut rng));
        }
    } else {
        for k in 0..seg.n_pulses {
            let n = direct.occupancy.counts.sample(&mut rng);
            if n > 0 {
                visit(seg.first_pulse + k, n, &mut rng, &mut out);
            }
        }
    }
    out
}
