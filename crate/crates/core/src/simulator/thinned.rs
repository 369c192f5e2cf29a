//! Detection-thinned generation.
//!
//! Each emitted photon ends up in one of three states: clicked on the
//! signal detector, clicked on the idler detector, or lost. Poisson
//! colouring turns the per-pulse pair count into independent Poisson counts
//! per (signal-photon state, idler-photon state) class, and likewise for
//! noise photons. Classes without any click produce nothing observable and
//! are dropped, leaving a much smaller total intensity to sample.

use rand::RngExt;

use super::pulse::gaussian;
use super::{quantize, Channel, OccupancySampler, Plan, Segment, SegmentOutput, SegmentStats};
use crate::model::{DetectorParams, SourceParams};
use crate::rng::{stream, StreamRole};

#[derive(Debug, Clone, Copy)]
struct Class {
    /// Detecting channel of each photon; both share the pulse offset for pairs.
    clicks: [Option<Channel>; 2],
    weight: f64,
}

pub(super) struct ThinnedPlan {
    occupancy: OccupancySampler,
    classes: Vec<Class>,
    total: f64,
}

impl ThinnedPlan {
    pub(super) fn new(source: &SourceParams, det_s: &DetectorParams, det_i: &DetectorParams) -> Self {
        let eps = source.crosstalk;
        let eta = [det_s.efficiency, det_i.efficiency];
        // Probability that a photon born for `born` clicks on `channel`.
        let click = |born: Channel, channel: Channel| {
            let routed = if born == channel { 1.0 - eps } else { eps };
            routed * eta[channel.index()]
        };
        let states = |born: Channel| {
            let s = click(born, Channel::Signal);
            let i = click(born, Channel::Idler);
            [
                (Some(Channel::Signal), s),
                (Some(Channel::Idler), i),
                (None, (1.0 - s - i).max(0.0)),
            ]
        };

        let mut classes = Vec::new();
        for (a, pa) in states(Channel::Signal) {
            for (b, pb) in states(Channel::Idler) {
                if a.is_some() || b.is_some() {
                    classes.push(Class {
                        clicks: [a, b],
                        weight: source.mu * pa * pb,
                    });
                }
            }
        }
        for (born, mean) in [
            (Channel::Signal, source.mu_noise_signal),
            (Channel::Idler, source.mu_noise_idler),
        ] {
            for channel in Channel::BOTH {
                classes.push(Class {
                    clicks: [Some(channel), None],
                    weight: mean * click(born, channel),
                });
            }
        }
        classes.retain(|c| c.weight > 0.0);
        let total = classes.iter().map(|c| c.weight).sum();
        ThinnedPlan {
            occupancy: OccupancySampler::new(total),
            classes,
            total,
        }
    }

    fn pick(&self, u: f64) -> &Class {
        let mut acc = 0.0;
        for c in &self.classes {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.classes.last().expect("nonzero intensity implies a class")
    }
}

pub(super) fn thinned_segment(plan: &Plan, seg: Segment) -> SegmentOutput {
    let mut rng = stream(plan.seed, StreamRole::Photons, seg.index);
    let mut out = SegmentOutput {
        start_ps: seg.start_ps,
        clicks: [Vec::new(), Vec::new()],
        stats: SegmentStats::default(),
    };
    let thinned = &plan.thinned;
    let Some(skip) = thinned.occupancy.skip else {
        return out;
    };
    let spreads = &plan.spreads;
    let mut k = skip.sample(&mut rng);
    while k < seg.n_pulses {
        let center = (seg.first_pulse + k) * plan.period_ps;
        let n = thinned.occupancy.counts.sample_nonzero(&mut rng);
        out.stats.occupied_pulses += 1;
        for _ in 0..n {
            let class = *thinned.pick(rng.random::<f64>() * thinned.total);
            let common = gaussian(&mut rng, spreads.pulse);
            for channel in class.clicks.into_iter().flatten() {
                let c = channel.index();
                let offset = common + gaussian(&mut rng, spreads.dispersion[c]) + gaussian(&mut rng, spreads.jitter[c]);
                out.stats.detected_photons += 1;
                match quantize(center, offset) {
                    Some(t) => out.clicks[c].push(t),
                    None => out.stats.dropped_negative += 1,
                }
            }
        }
        k = k.saturating_add(1).saturating_add(skip.sample(&mut rng));
    }
    out
}
