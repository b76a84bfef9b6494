//! Pixel-grouped sorting with stage-aware subsampling.
//!
//! Three passes over the window: count valid warped events per stage-local
//! pixel group, prefix-scan the group budgets into `offset`, then permute the
//! retained events into group order. Retention uses the group-local rank
//! (`rank mod stride == 0`) and a capacity guard `ptr[p] < offset[p+1]`.

use super::{AccessCounters, MemGroup};
use crate::events::{CameraIntrinsics, EventWindow};
use crate::warp::{warp_event, MotionParams, StageScale};

/// Retention budget of one pixel group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePolicy {
    pub k: usize,
    pub stride: usize,
    pub act: bool,
}

/// `k = max(1, ceil(ρ·cnt))` and `stride = max(1, floor(cnt/k))` for a
/// non-empty group; empty groups are inactive.
pub fn stage_policy(cnt: usize, rho: f64) -> StagePolicy {
    if cnt == 0 {
        return StagePolicy {
            k: 0,
            stride: 1,
            act: false,
        };
    }
    let k = ((rho * cnt as f64).ceil() as usize).clamp(1, cnt);
    StagePolicy {
        k,
        stride: (cnt / k).max(1),
        act: true,
    }
}

/// Stage-local metadata tables, reused for every iteration of a stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortTables {
    /// Active group ids in ascending pixel order.
    pub active: Vec<u32>,
    /// Per-group start index into `perm`, length `P + 1`.
    pub offset: Vec<u32>,
    /// Retained event indices in group order.
    pub perm: Vec<u32>,
    pub stride: Vec<u32>,
    pub act: Vec<bool>,
    /// Valid warped events per group before subsampling.
    pub count: Vec<u32>,
    /// Window size the tables were built for.
    pub events: usize,
}

impl SortTables {
    pub fn pixels(&self) -> usize {
        self.act.len()
    }

    pub fn retained(&self) -> usize {
        self.perm.len()
    }

    /// Event indices of group `p` in stream order.
    pub fn group(&self, p: usize) -> &[u32] {
        &self.perm[self.offset[p] as usize..self.offset[p + 1] as usize]
    }

    /// `mask[i]` is true when event `i` is retained.
    pub fn retained_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.events];
        for &i in &self.perm {
            mask[i as usize] = true;
        }
        mask
    }
}

/// Builds the tables from the warp of every event at `omega_ref`, counting
/// raw-event reads and sorting-buffer accesses into `acc`.
pub fn pixel_group_sort(
    win: &EventWindow,
    omega_ref: &MotionParams,
    scale: &StageScale,
    rho: f64,
    intr: &CameraIntrinsics,
    acc: &mut AccessCounters,
) -> SortTables {
    let n = win.len();
    let pixels = scale.pixels();
    let sorting = MemGroup::Sorting;

    // State 1: count valid events per group
    let mut count = vec![0u32; pixels];
    acc.write(sorting, pixels as u64);
    let mut gid: Vec<Option<u32>> = Vec::with_capacity(n);
    for e in &win.events {
        acc.read(MemGroup::RawEvents, 1);
        let g = warp_event(e, win.t_ref, omega_ref, scale, intr).p_act.map(|p| p as u32);
        acc.write(sorting, 1);
        if let Some(p) = g {
            count[p as usize] += 1;
            acc.read(sorting, 1);
            acc.write(sorting, 1);
        }
        gid.push(g);
    }

    // State 2: offsets and stage policy
    let mut offset = vec![0u32; pixels + 1];
    let mut stride = vec![1u32; pixels];
    let mut act = vec![false; pixels];
    let mut active = Vec::new();
    let mut sum = 0u32;
    for p in 0..pixels {
        offset[p] = sum;
        acc.read(sorting, 1);
        let pol = stage_policy(count[p] as usize, rho);
        stride[p] = pol.stride as u32;
        act[p] = pol.act;
        acc.write(sorting, 3);
        if pol.act {
            active.push(p as u32);
            acc.write(sorting, 1);
            sum += pol.k as u32;
        }
    }
    offset[pixels] = sum;
    acc.write(sorting, 1);

    // State 3: permute retained events
    let mut ptr: Vec<u32> = offset[..pixels].to_vec();
    let mut rank = vec![0u32; pixels];
    acc.read(sorting, pixels as u64);
    acc.write(sorting, 2 * pixels as u64);
    let mut perm = vec![0u32; sum as usize];
    for (i, g) in gid.iter().enumerate() {
        acc.read(sorting, 1);
        let Some(p) = *g else { continue };
        let p = p as usize;
        acc.read(sorting, 1);
        if !act[p] {
            continue;
        }
        acc.read(sorting, 4);
        if rank[p].is_multiple_of(stride[p]) && ptr[p] < offset[p + 1] {
            perm[ptr[p] as usize] = i as u32;
            ptr[p] += 1;
            acc.write(sorting, 2);
        }
        rank[p] += 1;
        acc.write(sorting, 1);
    }

    SortTables {
        active,
        offset,
        perm,
        stride,
        act,
        count,
        events: n,
    }
}
