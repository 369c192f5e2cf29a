//! Ordered merge of segment outputs into one stream, with the per-channel
//! dead-time filter applied in global time order.

use super::{Channel, DeadTimeFilter, RunDiagnostics, SegmentOutput, TimeTag};
use crate::error::{Error, Result};

pub(super) fn merge_sorted(a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if a.is_empty() {
        return b;
    }
    if b.is_empty() {
        return a;
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

pub(super) struct Merger {
    pending: [Vec<u64>; 2],
    dead_time: [DeadTimeFilter; 2],
    last_emitted: [Option<u64>; 2],
    diag: RunDiagnostics,
}

impl Merger {
    pub(super) fn new(dead_time_ps: [u64; 2]) -> Self {
        Merger {
            pending: [Vec::new(), Vec::new()],
            dead_time: dead_time_ps.map(DeadTimeFilter::new),
            last_emitted: [None, None],
            diag: RunDiagnostics::default(),
        }
    }

    /// Add a segment. Clicks earlier than its start can no longer be
    /// preceded by anything from later segments and are released.
    pub(super) fn push(&mut self, seg: SegmentOutput, sink: &mut dyn FnMut(TimeTag)) -> Result<()> {
        self.diag.absorb(&seg.stats);
        let [s, i] = seg.clicks;
        let mut ready: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
        for (ch, incoming) in [s, i].into_iter().enumerate() {
            let merged = merge_sorted(std::mem::take(&mut self.pending[ch]), incoming);
            let cut = merged.partition_point(|&t| t < seg.start_ps);
            let mut merged = merged;
            self.pending[ch] = merged.split_off(cut);
            ready[ch] = merged;
        }
        self.emit(ready, sink)
    }

    pub(super) fn finish(mut self, sink: &mut dyn FnMut(TimeTag)) -> Result<RunDiagnostics> {
        let rest = [
            std::mem::take(&mut self.pending[0]),
            std::mem::take(&mut self.pending[1]),
        ];
        self.emit(rest, sink)?;
        Ok(self.diag)
    }

    fn emit(&mut self, ready: [Vec<u64>; 2], sink: &mut dyn FnMut(TimeTag)) -> Result<()> {
        let mut accepted: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
        for ch in 0..2 {
            if let (Some(last), Some(&first)) = (self.last_emitted[ch], ready[ch].first()) {
                if first < last {
                    return Err(Error::Config(format!(
                        "timing spread moved a click at {first} ps behind one already emitted at {last} ps; \
                         jitter/dispersion must stay well below the segment length"
                    )));
                }
            }
            if let Some(&t) = ready[ch].last() {
                self.last_emitted[ch] = Some(t);
            }
            let filter = &mut self.dead_time[ch];
            let before = ready[ch].len();
            accepted[ch] = ready[ch].iter().copied().filter(|&t| filter.accept(t)).collect();
            let rejected = (before - accepted[ch].len()) as u64;
            if ch == 0 {
                self.diag.dead_time_rejected_signal += rejected;
                self.diag.tags_signal += accepted[ch].len() as u64;
            } else {
                self.diag.dead_time_rejected_idler += rejected;
                self.diag.tags_idler += accepted[ch].len() as u64;
            }
        }
        let [s, i] = accepted;
        let (mut a, mut b) = (s.into_iter().peekable(), i.into_iter().peekable());
        loop {
            let signal_first = match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => x <= y,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let tag = if signal_first {
                TimeTag::new(a.next().expect("peeked"), Channel::Signal)
            } else {
                TimeTag::new(b.next().expect("peeked"), Channel::Idler)
            };
            sink(tag);
        }
        Ok(())
    }
}
