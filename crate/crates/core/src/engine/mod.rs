//! Cycle-level model of the accelerator datapath and of a single-bank
//! baseline, with access counting per memory group.
//!
//! One engine iteration streams the retained events group by group, warps
//! each one at the current motion estimate, splits its bilinear vote into 16
//! lane updates, reduces them through the local accumulator and the pending
//! registers, commits to the parity banks, then runs the line-buffered blur
//! and statistics pass and clears the touched cells.

pub mod bank;
pub mod energy;
pub mod merge;
pub mod sort;
pub mod stream;

use std::io::Write;

use serde::Serialize;

pub use bank::{bank_address, bank_map, bank_of, BankMap, BankedMemory, BANKS};
pub use energy::{energy_estimate, EnergyBreakdown, EnergyTable, GroupEnergy};
pub use merge::{
    lane_index, lane_updates, local_accumulate, pending_commit, EventMeta, LaneUpdate, LocalAccumulator, LocalStats,
    PendingMerge, PendingStats, LANES,
};
pub use sort::{pixel_group_sort, stage_policy, SortTables, StagePolicy};
pub use stream::blur_stats;

use crate::accumulation::{NumericMode, CHANNELS};
use crate::contrast::StreamStats;
use crate::error::{Error, Result};
use crate::events::{CameraIntrinsics, EventWindow};
use crate::pipeline::{ObjectiveBackend, StageInfo};
use crate::scheduler::StageConfig;
use crate::warp::{warp_event, MotionParams};

/// On-chip memory groups with separate energy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemGroup {
    Iwe = 0,
    RawEvents = 1,
    Sorting = 2,
    LineBuffer = 3,
}

impl MemGroup {
    pub const COUNT: usize = 4;
    pub const ALL: [MemGroup; 4] = [Self::Iwe, Self::RawEvents, Self::Sorting, Self::LineBuffer];

    pub fn name(self) -> &'static str {
        match self {
            Self::Iwe => "iwe",
            Self::RawEvents => "raw_events",
            Self::Sorting => "sorting",
            Self::LineBuffer => "line_buffer",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Read and write counts per memory group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AccessCounters {
    pub reads: [u64; MemGroup::COUNT],
    pub writes: [u64; MemGroup::COUNT],
}

impl AccessCounters {
    #[inline]
    pub fn read(&mut self, g: MemGroup, n: u64) {
        self.reads[g as usize] += n;
    }

    #[inline]
    pub fn write(&mut self, g: MemGroup, n: u64) {
        self.writes[g as usize] += n;
    }

    pub fn get(&self, g: MemGroup) -> (u64, u64) {
        (self.reads[g as usize], self.writes[g as usize])
    }

    pub fn add(&mut self, other: &AccessCounters) {
        for g in 0..MemGroup::COUNT {
            self.reads[g] += other.reads[g];
            self.writes[g] += other.writes[g];
        }
    }

    pub fn total(&self) -> u64 {
        self.reads.iter().sum::<u64>() + self.writes.iter().sum::<u64>()
    }
}

/// Counters of one stage scale, summed over every entry and iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTrace {
    pub scale: f64,
    pub stage_entries: u64,
    pub iterations: u64,
    /// Window size summed over iterations.
    pub input_events: u64,
    /// Streamed events summed over iterations.
    pub processed_events: u64,
    pub valid_events: u64,
    pub active_groups: u64,
    pub inlier_events: u64,
    pub outlier_events: u64,
    pub inlier_emissions: u64,
    pub generated_updates: u64,
    pub local_absorptions: u64,
    pub pending_hits: u64,
    pub commits: u64,
    pub clear_writes: u64,
    pub unterminated_flushes: u64,
    pub max_outlier_burst: u64,
    pub sort_cycles: u64,
    pub iter_cycles: u64,
    pub access: AccessCounters,
}

impl StageTrace {
    fn ratio(&self, num: u64) -> f64 {
        if self.input_events == 0 {
            0.0
        } else {
            num as f64 / self.input_events as f64
        }
    }

    /// Active pixel groups per input event.
    pub fn active_ratio(&self) -> f64 {
        self.ratio(self.active_groups)
    }

    /// Outlier events per input event.
    pub fn outlier_ratio(&self) -> f64 {
        self.ratio(self.outlier_events)
    }

    /// Update blocks per input event if only local accumulation applied:
    /// one per active group plus one per outlier.
    pub fn expected_update_ratio(&self) -> f64 {
        self.active_ratio() + self.outlier_ratio()
    }

    /// Committed update blocks per input event.
    pub fn measured_update_ratio(&self) -> f64 {
        if self.input_events == 0 {
            0.0
        } else {
            self.commits as f64 / (LANES as f64 * self.input_events as f64)
        }
    }

    pub fn expected_reduction(&self) -> f64 {
        1.0 - self.expected_update_ratio()
    }

    pub fn measured_reduction(&self) -> f64 {
        1.0 - self.measured_update_ratio()
    }

    /// `generated = absorbed + pending hits + commits`.
    pub fn ledger_balanced(&self) -> bool {
        self.generated_updates == self.local_absorptions + self.pending_hits + self.commits
    }

    pub fn cycles(&self) -> u64 {
        self.sort_cycles + self.iter_cycles
    }
}

/// Engine counters across all stages plus per-(channel, bank) IWE traffic.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EngineTrace {
    pub stages: Vec<StageTrace>,
    pub bank_reads: [[u64; BANKS]; CHANNELS],
    pub bank_writes: [[u64; BANKS]; CHANNELS],
}

impl EngineTrace {
    fn stage_index(&mut self, s: f64) -> usize {
        match self.stages.iter().position(|t| t.scale == s) {
            Some(i) => i,
            None => {
                let pos = self.stages.partition_point(|t| t.scale < s);
                self.stages.insert(
                    pos,
                    StageTrace {
                        scale: s,
                        ..StageTrace::default()
                    },
                );
                pos
            }
        }
    }

    pub fn stage(&self, s: f64) -> Option<&StageTrace> {
        self.stages.iter().find(|t| t.scale == s)
    }

    pub fn totals(&self) -> AccessCounters {
        let mut acc = AccessCounters::default();
        for st in &self.stages {
            acc.add(&st.access);
        }
        acc
    }

    pub fn cycles(&self) -> u64 {
        self.stages.iter().map(StageTrace::cycles).sum()
    }

    pub fn merge(&mut self, other: &EngineTrace) {
        for o in &other.stages {
            let i = self.stage_index(o.scale);
            let st = &mut self.stages[i];
            st.stage_entries += o.stage_entries;
            st.iterations += o.iterations;
            st.input_events += o.input_events;
            st.processed_events += o.processed_events;
            st.valid_events += o.valid_events;
            st.active_groups += o.active_groups;
            st.inlier_events += o.inlier_events;
            st.outlier_events += o.outlier_events;
            st.inlier_emissions += o.inlier_emissions;
            st.generated_updates += o.generated_updates;
            st.local_absorptions += o.local_absorptions;
            st.pending_hits += o.pending_hits;
            st.commits += o.commits;
            st.clear_writes += o.clear_writes;
            st.unterminated_flushes += o.unterminated_flushes;
            st.max_outlier_burst = st.max_outlier_burst.max(o.max_outlier_burst);
            st.sort_cycles += o.sort_cycles;
            st.iter_cycles += o.iter_cycles;
            st.access.add(&o.access);
        }
        for c in 0..CHANNELS {
            for b in 0..BANKS {
                self.bank_reads[c][b] += other.bank_reads[c][b];
                self.bank_writes[c][b] += other.bank_writes[c][b];
            }
        }
    }

    /// One CSV row per stage scale.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scale",
            "stage_entries",
            "iterations",
            "input_events",
            "processed_events",
            "active_ratio",
            "outlier_ratio",
            "expected_update_ratio",
            "measured_update_ratio",
            "expected_reduction",
            "measured_reduction",
            "generated_updates",
            "local_absorptions",
            "pending_hits",
            "commits",
            "clear_writes",
            "unterminated_flushes",
            "max_outlier_burst",
            "cycles",
            "iwe_reads",
            "iwe_writes",
            "raw_reads",
            "raw_writes",
            "sort_reads",
            "sort_writes",
            "lb_reads",
            "lb_writes",
        ])?;
        for st in &self.stages {
            let a = &st.access;
            w.write_record([
                st.scale.to_string(),
                st.stage_entries.to_string(),
                st.iterations.to_string(),
                st.input_events.to_string(),
                st.processed_events.to_string(),
                format!("{:.6}", st.active_ratio()),
                format!("{:.6}", st.outlier_ratio()),
                format!("{:.6}", st.expected_update_ratio()),
                format!("{:.6}", st.measured_update_ratio()),
                format!("{:.6}", st.expected_reduction()),
                format!("{:.6}", st.measured_reduction()),
                st.generated_updates.to_string(),
                st.local_absorptions.to_string(),
                st.pending_hits.to_string(),
                st.commits.to_string(),
                st.clear_writes.to_string(),
                st.unterminated_flushes.to_string(),
                st.max_outlier_burst.to_string(),
                st.cycles().to_string(),
                a.reads[0].to_string(),
                a.writes[0].to_string(),
                a.reads[1].to_string(),
                a.writes[1].to_string(),
                a.reads[2].to_string(),
                a.writes[2].to_string(),
                a.reads[3].to_string(),
                a.writes[3].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<engine trace>", e))?;
        Ok(())
    }
}

/// Datapath options; the defaults describe the proposed engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub local_accumulation: bool,
    pub pending_merge: bool,
    /// Retain every valid event regardless of the stage ratio.
    pub force_keep_all: bool,
    /// Stream all events unsorted at full resolution.
    pub skip_full_res_sort: bool,
    /// Cycles spent committing one event (16 when the four channels and four
    /// taps share a single port, 1 with parallel banks).
    pub cycles_per_event: u64,
    pub mode: NumericMode,
}

impl EngineConfig {
    pub fn camel() -> Self {
        Self {
            local_accumulation: true,
            pending_merge: true,
            force_keep_all: false,
            skip_full_res_sort: false,
            cycles_per_event: 1,
            mode: NumericMode::Float,
        }
    }

    pub fn baseline() -> Self {
        Self {
            local_accumulation: false,
            pending_merge: false,
            force_keep_all: false,
            skip_full_res_sort: true,
            cycles_per_event: LANES as u64,
            mode: NumericMode::Float,
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::camel()
    }
}

#[derive(Debug, Clone)]
enum Source {
    Sorted(SortTables),
    Unsorted,
}

#[derive(Debug, Clone)]
struct ActiveStage {
    config: StageConfig,
    source: Source,
    mem: BankedMemory,
    trace_idx: usize,
}

/// Simulated datapath; usable directly or as an [`ObjectiveBackend`].
#[derive(Debug, Clone)]
pub struct Engine {
    intr: CameraIntrinsics,
    pub config: EngineConfig,
    pub trace: EngineTrace,
    stage: Option<ActiveStage>,
}

impl Engine {
    pub fn new(intr: CameraIntrinsics, config: EngineConfig) -> Self {
        Self {
            intr,
            config,
            trace: EngineTrace::default(),
            stage: None,
        }
    }

    pub fn camel(intr: CameraIntrinsics) -> Self {
        Self::new(intr, EngineConfig::camel())
    }

    pub fn baseline(intr: CameraIntrinsics) -> Self {
        Self::new(intr, EngineConfig::baseline())
    }

    pub fn take_trace(&mut self) -> EngineTrace {
        std::mem::take(&mut self.trace)
    }

    /// Sort tables of the current stage, if it was sorted.
    pub fn tables(&self) -> Option<&SortTables> {
        match &self.stage.as_ref()?.source {
            Source::Sorted(t) => Some(t),
            Source::Unsorted => None,
        }
    }

    /// Builds the stage metadata at `omega_ref`.
    pub fn begin_stage(
        &mut self,
        win: &EventWindow,
        stage: &StageConfig,
        omega_ref: &MotionParams,
    ) -> Result<StageInfo> {
        let scale = stage.scale;
        if stage.kernel.len() > scale.width.min(scale.height) {
            return Err(Error::KernelTooLarge {
                taps: stage.kernel.len(),
                width: scale.width,
                height: scale.height,
            });
        }
        let idx = self.trace.stage_index(scale.s);
        let st = &mut self.trace.stages[idx];
        st.stage_entries += 1;
        let pixels = scale.pixels();
        let (source, retained) = if self.config.skip_full_res_sort && scale.s == 1.0 {
            (Source::Unsorted, win.len())
        } else {
            let rho = if self.config.force_keep_all { 1.0 } else { stage.rho };
            let tables = pixel_group_sort(win, omega_ref, &scale, rho, &self.intr, &mut st.access);
            st.sort_cycles += 2 * win.len() as u64 + pixels as u64;
            let r = tables.retained();
            (Source::Sorted(tables), r)
        };
        self.stage = Some(ActiveStage {
            config: stage.clone(),
            source,
            mem: BankedMemory::new(scale.width, scale.height),
            trace_idx: idx,
        });
        Ok(StageInfo { retained, pixels })
    }

    /// One objective evaluation on the current stage's subset.
    pub fn iterate(&mut self, win: &EventWindow, omega: &MotionParams) -> Result<StreamStats> {
        let stage = self
            .stage
            .as_mut()
            .ok_or_else(|| Error::Schedule("engine iteration before stage entry".into()))?;
        let cfg = self.config;
        let intr = &self.intr;
        let scale = stage.config.scale;
        let width = scale.width;
        let st = &mut self.trace.stages[stage.trace_idx];
        let mem = &mut stage.mem;

        let mut local = LocalAccumulator::default();
        let mut pending = PendingMerge::default();
        let mut acc = AccessCounters::default();
        let mut commits = 0u64;
        let mut generated = 0u64;
        let mut valid = 0u64;
        let mut inliers = 0u64;
        let mut outliers = 0u64;
        let mut processed = 0u64;
        let mut active_groups = 0u64;

        let mut feed = |meta: EventMeta,
                        w: &crate::warp::WarpedEvent,
                        acc: &mut AccessCounters,
                        local: &mut LocalAccumulator,
                        pending: &mut PendingMerge|
         -> Result<()> {
            let ups = if w.is_valid() {
                valid += 1;
                generated += LANES as u64;
                if meta.is_inlier() {
                    inliers += 1;
                } else {
                    outliers += 1;
                }
                Some(lane_updates(w, width, cfg.mode)?)
            } else {
                None
            };
            let mut commit = |u: LaneUpdate| {
                commits += 1;
                mem.commit(u.channel as usize, u.bank as usize, u.address as usize, u.delta, acc);
            };
            let mut route = |u: LaneUpdate| {
                if cfg.pending_merge {
                    pending.push(u, &mut commit);
                } else {
                    commit(u);
                }
            };
            if cfg.local_accumulation {
                local.push(meta, ups.as_ref(), &mut route);
            } else if let Some(ups) = &ups {
                ups.iter().for_each(|u| route(*u));
            }
            Ok(())
        };

        match &stage.source {
            Source::Sorted(tables) => {
                for &p in &tables.active {
                    active_groups += 1;
                    acc.read(MemGroup::Sorting, 3);
                    let group = tables.group(p as usize);
                    for (j, &i) in group.iter().enumerate() {
                        processed += 1;
                        acc.read(MemGroup::Sorting, 1);
                        acc.read(MemGroup::RawEvents, 1);
                        let w = warp_event(&win.events[i as usize], win.t_ref, omega, &scale, intr);
                        let meta = EventMeta {
                            p_ref: p,
                            p_act: w.p_act.map(|v| v as u32),
                            last_in_pg: j + 1 == group.len(),
                        };
                        feed(meta, &w, &mut acc, &mut local, &mut pending)?;
                    }
                }
            }
            Source::Unsorted => {
                for e in &win.events {
                    processed += 1;
                    acc.read(MemGroup::RawEvents, 1);
                    let w = warp_event(e, win.t_ref, omega, &scale, intr);
                    let p = w.p_act.map(|v| v as u32);
                    let meta = EventMeta {
                        p_ref: p.unwrap_or(u32::MAX),
                        p_act: p,
                        last_in_pg: true,
                    };
                    feed(meta, &w, &mut acc, &mut local, &mut pending)?;
                }
            }
        }
        {
            let mut commit = |u: LaneUpdate| {
                commits += 1;
                mem.commit(
                    u.channel as usize,
                    u.bank as usize,
                    u.address as usize,
                    u.delta,
                    &mut acc,
                );
            };
            let mut route = |u: LaneUpdate| {
                if cfg.pending_merge {
                    pending.push(u, &mut commit);
                } else {
                    commit(u);
                }
            };
            local.finish(&mut route);
            pending.flush(&mut commit);
        }

        let mode = cfg.mode;
        let mut iwe_reads = AccessCounters::default();
        let stats = blur_stats(
            width,
            scale.height,
            &stage.config.kernel,
            |c, x, y| mode.decode(mem.read_pixel(c, x, y, &mut iwe_reads)),
            &mut acc,
        )?;
        acc.add(&iwe_reads);
        let cleared = mem.clear_touched(&mut acc);

        for c in 0..CHANNELS {
            for b in 0..BANKS {
                self.trace.bank_reads[c][b] += mem.reads[c][b];
                self.trace.bank_writes[c][b] += mem.writes[c][b];
            }
        }
        mem.reads = [[0; BANKS]; CHANNELS];
        mem.writes = [[0; BANKS]; CHANNELS];

        st.iterations += 1;
        st.input_events += win.len() as u64;
        st.processed_events += processed;
        st.valid_events += valid;
        st.active_groups += active_groups;
        st.inlier_events += inliers;
        st.outlier_events += outliers;
        st.inlier_emissions += local.stats.inlier_emissions;
        st.generated_updates += generated;
        st.local_absorptions += local.stats.absorptions;
        st.pending_hits += pending.stats().hits;
        st.commits += commits;
        st.clear_writes += cleared;
        st.unterminated_flushes += local.stats.unterminated_flushes;
        st.max_outlier_burst = st.max_outlier_burst.max(local.stats.max_outlier_burst);
        st.iter_cycles += processed * cfg.cycles_per_event + scale.pixels().div_ceil(2) as u64;
        st.access.add(&acc);
        Ok(stats)
    }
}

impl ObjectiveBackend for Engine {
    fn enter_stage(&mut self, win: &EventWindow, stage: &StageConfig, omega_ref: &MotionParams) -> Result<StageInfo> {
        self.begin_stage(win, stage, omega_ref)
    }

    fn stats(&mut self, win: &EventWindow, omega: &MotionParams) -> Result<StreamStats> {
        self.iterate(win, omega)
    }
}
