//! Lane-level update reduction: per-group local accumulation followed by a
//! one-entry pending register per lane.
//!
//! A lane is one (channel, bank) pair; each valid event produces exactly one
//! update per lane because its four taps fall in four distinct banks.

use super::bank::{bank_map, BANKS};
use crate::accumulation::{bilinear_vote, NumericMode, CHANNELS};
use crate::error::Result;
use crate::warp::WarpedEvent;

pub const LANES: usize = CHANNELS * BANKS;

#[inline]
pub fn lane_index(channel: usize, bank: usize) -> usize {
    channel * BANKS + bank
}

/// One pending write to a bank cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneUpdate {
    pub channel: u8,
    pub bank: u8,
    pub address: u32,
    pub delta: f64,
}

impl LaneUpdate {
    #[inline]
    pub fn lane(&self) -> usize {
        lane_index(self.channel as usize, self.bank as usize)
    }
}

/// Per-event routing metadata travelling with its lane updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventMeta {
    /// Group the event was sorted into.
    pub p_ref: u32,
    /// Group it warps to under the current motion estimate.
    pub p_act: Option<u32>,
    /// Last event of its group in the sorted stream.
    pub last_in_pg: bool,
}

impl EventMeta {
    #[inline]
    pub fn is_inlier(&self) -> bool {
        self.p_act == Some(self.p_ref)
    }
}

/// Expands a valid warped event into its 16 lane updates, deltas encoded in
/// the requested numeric mode.
pub fn lane_updates(w: &WarpedEvent, width: usize, mode: NumericMode) -> Result<[LaneUpdate; LANES]> {
    let taps = bilinear_vote(w)?;
    let map = bank_map(w.x0 as usize, w.y0 as usize, width);
    let mut out = [LaneUpdate {
        channel: 0,
        bank: 0,
        address: 0,
        delta: 0.0,
    }; LANES];
    for (tap, &(bank, addr)) in taps.taps.iter().zip(map.taps.iter()) {
        for c in 0..CHANNELS {
            out[lane_index(c, bank)] = LaneUpdate {
                channel: c as u8,
                bank: bank as u8,
                address: addr as u32,
                delta: mode.encode(tap.delta[c]),
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocalStats {
    pub inlier_events: u64,
    pub outlier_events: u64,
    /// Lane updates folded into a local register.
    pub absorptions: u64,
    /// Groups whose inlier registers were emitted.
    pub inlier_emissions: u64,
    /// Lane updates leaving the accumulator.
    pub emitted: u64,
    /// Registers still holding data when the stream ended without a
    /// `last_in_pg` marker.
    pub unterminated_flushes: u64,
    /// Longest run of consecutive outlier events.
    pub max_outlier_burst: u64,
}

/// Sixteen per-lane registers that collapse the updates of all inlier events
/// of one pixel group into a single update per lane.
#[derive(Debug, Clone)]
pub struct LocalAccumulator {
    regs: [Option<LaneUpdate>; LANES],
    has_data: bool,
    burst: u64,
    pub stats: LocalStats,
}

impl Default for LocalAccumulator {
    fn default() -> Self {
        Self {
            regs: [None; LANES],
            has_data: false,
            burst: 0,
            stats: LocalStats::default(),
        }
    }
}

impl LocalAccumulator {
    /// Feeds one event. Outliers are forwarded at once; inliers are absorbed
    /// and released as one block when the group ends.
    pub fn push(&mut self, meta: EventMeta, updates: Option<&[LaneUpdate; LANES]>, sink: &mut impl FnMut(LaneUpdate)) {
        if let Some(ups) = updates {
            if meta.is_inlier() {
                self.stats.inlier_events += 1;
                self.burst = 0;
                for u in ups {
                    let reg = &mut self.regs[u.lane()];
                    match reg {
                        Some(r) => {
                            debug_assert_eq!(r.address, u.address);
                            r.delta += u.delta;
                            self.stats.absorptions += 1;
                        }
                        None => *reg = Some(*u),
                    }
                }
                self.has_data = true;
            } else {
                self.stats.outlier_events += 1;
                self.burst += 1;
                self.stats.max_outlier_burst = self.stats.max_outlier_burst.max(self.burst);
                for u in ups {
                    self.stats.emitted += 1;
                    sink(*u);
                }
            }
        }
        if meta.last_in_pg {
            if self.has_data {
                self.stats.inlier_emissions += 1;
            }
            self.emit(sink);
        }
    }

    /// Releases anything left when the stream ends.
    pub fn finish(&mut self, sink: &mut impl FnMut(LaneUpdate)) {
        if self.has_data {
            self.stats.unterminated_flushes += 1;
            self.stats.inlier_emissions += 1;
        }
        self.emit(sink);
    }

    fn emit(&mut self, sink: &mut impl FnMut(LaneUpdate)) {
        for reg in &mut self.regs {
            if let Some(u) = reg.take() {
                self.stats.emitted += 1;
                sink(u);
            }
        }
        self.has_data = false;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PendingStats {
    /// Updates merged into an occupied register at the same address.
    pub hits: u64,
    /// Read-modify-write operations issued to the banks.
    pub commits: u64,
}

/// One `(address, value)` register per lane. An update to the held address
/// merges; any other address commits the held value first.
#[derive(Debug, Clone)]
pub struct PendingMerge {
    regs: [Option<LaneUpdate>; LANES],
    pub hits: [u64; LANES],
    pub commits: [u64; LANES],
}

impl Default for PendingMerge {
    fn default() -> Self {
        Self {
            regs: [None; LANES],
            hits: [0; LANES],
            commits: [0; LANES],
        }
    }
}

impl PendingMerge {
    pub fn push(&mut self, u: LaneUpdate, commit: &mut impl FnMut(LaneUpdate)) {
        let lane = u.lane();
        match &mut self.regs[lane] {
            Some(r) if r.address == u.address => {
                r.delta += u.delta;
                self.hits[lane] += 1;
            }
            reg => {
                if let Some(old) = reg.replace(u) {
                    self.commits[lane] += 1;
                    commit(old);
                }
            }
        }
    }

    /// Commits every occupied register.
    pub fn flush(&mut self, commit: &mut impl FnMut(LaneUpdate)) {
        for (lane, reg) in self.regs.iter_mut().enumerate() {
            if let Some(old) = reg.take() {
                self.commits[lane] += 1;
                commit(old);
            }
        }
    }

    pub fn stats(&self) -> PendingStats {
        PendingStats {
            hits: self.hits.iter().sum(),
            commits: self.commits.iter().sum(),
        }
    }
}

/// Runs the local accumulator over an event stream, returning the emitted
/// updates in order and the statistics.
pub fn local_accumulate(stream: &[(EventMeta, Option<[LaneUpdate; LANES]>)]) -> (Vec<LaneUpdate>, LocalStats) {
    let mut acc = LocalAccumulator::default();
    let mut out = Vec::new();
    let mut sink = |u| out.push(u);
    for (meta, ups) in stream {
        acc.push(*meta, ups.as_ref(), &mut sink);
    }
    acc.finish(&mut sink);
    (out, acc.stats)
}

/// Runs the pending-merge stage over a lane-update stream, returning the
/// committed updates in commit order.
pub fn pending_commit(updates: &[LaneUpdate]) -> (Vec<LaneUpdate>, PendingStats) {
    let mut pm = PendingMerge::default();
    let mut out = Vec::new();
    let mut commit = |u| out.push(u);
    for u in updates {
        pm.push(*u, &mut commit);
    }
    pm.flush(&mut commit);
    (out, pm.stats())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(addr: u32, delta: f64) -> [LaneUpdate; LANES] {
        std::array::from_fn(|l| LaneUpdate {
            channel: (l / BANKS) as u8,
            bank: (l % BANKS) as u8,
            address: addr,
            delta,
        })
    }

    fn meta(p_ref: u32, p_act: u32, last: bool) -> EventMeta {
        EventMeta {
            p_ref,
            p_act: Some(p_act),
            last_in_pg: last,
        }
    }

    #[test]
    fn inliers_collapse_to_one_block() {
        let stream = vec![
            (meta(3, 3, false), Some(block(7, 1.0))),
            (meta(3, 3, false), Some(block(7, 2.0))),
            (meta(3, 3, true), Some(block(7, 4.0))),
        ];
        let (out, st) = local_accumulate(&stream);
        assert_eq!(out.len(), LANES);
        assert!(out.iter().all(|u| u.delta == 7.0));
        assert_eq!(st.absorptions, 2 * LANES as u64);
        assert_eq!(st.inlier_emissions, 1);
        assert_eq!(st.unterminated_flushes, 0);
    }

    #[test]
    fn outliers_pass_through_before_group_block() {
        let stream = vec![
            (meta(3, 3, false), Some(block(7, 1.0))),
            (meta(3, 4, false), Some(block(8, 5.0))),
            (meta(3, 3, true), Some(block(7, 1.0))),
        ];
        let (out, st) = local_accumulate(&stream);
        assert_eq!(out.len(), 2 * LANES);
        assert!(out[..LANES].iter().all(|u| u.address == 8));
        assert!(out[LANES..].iter().all(|u| u.delta == 2.0));
        assert_eq!(st.outlier_events, 1);
    }

    #[test]
    fn invalid_last_event_still_closes_group() {
        let stream = vec![
            (meta(3, 3, false), Some(block(7, 1.0))),
            (
                EventMeta {
                    p_ref: 3,
                    p_act: None,
                    last_in_pg: true,
                },
                None,
            ),
        ];
        let (out, st) = local_accumulate(&stream);
        assert_eq!(out.len(), LANES);
        assert_eq!(st.unterminated_flushes, 0);
    }

    #[test]
    fn missing_marker_is_flushed_and_counted() {
        let (out, st) = local_accumulate(&[(meta(1, 1, false), Some(block(2, 1.0)))]);
        assert_eq!(out.len(), LANES);
        assert_eq!(st.unterminated_flushes, 1);
    }

    #[test]
    fn pending_merges_same_address_runs() {
        let u = |addr, d| LaneUpdate {
            channel: 0,
            bank: 1,
            address: addr,
            delta: d,
        };
        let (out, st) = pending_commit(&[u(4, 1.0), u(4, 2.0), u(5, 1.0), u(4, 1.0)]);
        assert_eq!(out, vec![u(4, 3.0), u(5, 1.0), u(4, 1.0)]);
        assert_eq!(st, PendingStats { hits: 1, commits: 3 });
    }
}
