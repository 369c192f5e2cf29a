use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{Channel, Plan, Segment};
use crate::rng::{stream, StreamRole};

/// Homogeneous Poisson click times in `[0, duration_ps)`.
///
/// Inter-arrival gaps are exponential with mean `1 / rate_hz`; times are
/// floored to the ps grid and a second click in the same ps is discarded, so
/// the output is strictly increasing.
pub fn generate_dark_counts<R: Rng + ?Sized>(rate_hz: f64, duration_ps: u64, rng: &mut R) -> Vec<u64> {
    let mut out = Vec::new();
    if !(rate_hz > 0.0) || duration_ps == 0 {
        return out;
    }
    let mean_gap_ps = 1e12 / rate_hz;
    let end = duration_ps as f64;
    let mut t = 0.0f64;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap * mean_gap_ps;
        if t >= end {
            break;
        }
        let tick = t as u64;
        if out.last() != Some(&tick) {
            out.push(tick);
        }
    }
    out
}

pub(super) fn segment_darks(plan: &Plan, seg: Segment, channel: Channel) -> Vec<u64> {
    let rate = plan.detectors[channel.index()].dark_rate_hz;
    if rate <= 0.0 {
        return Vec::new();
    }
    let role = match channel {
        Channel::Signal => StreamRole::DarkSignal,
        Channel::Idler => StreamRole::DarkIdler,
    };
    let mut rng = stream(plan.seed, role, seg.index);
    let mut darks = generate_dark_counts(rate, seg.end_ps - seg.start_ps, &mut rng);
    for t in &mut darks {
        *t += seg.start_ps;
    }
    darks
}
