//! Objective evaluation backends shared by the scheduler.
//!
//! A backend fixes the retained event subset when a stage is entered and then
//! evaluates the contrast objective on that subset for arbitrary motion.

use crate::accumulation::{accumulate_window_mode, NumericMode};
use crate::contrast::{objective_from_stats, smooth, stream_stats, Objective, StreamStats};
use crate::engine::{pixel_group_sort, AccessCounters};
use crate::error::{Error, Result};
use crate::events::{CameraIntrinsics, EventWindow};
use crate::scheduler::StageConfig;
use crate::warp::MotionParams;

/// Size of the stage an update operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageInfo {
    pub retained: usize,
    pub pixels: usize,
}

impl StageInfo {
    /// Cost of one update: one pass over the retained events plus one pass
    /// over the stage image.
    pub fn work_units(&self) -> u64 {
        (self.retained + self.pixels) as u64
    }
}

pub trait ObjectiveBackend {
    fn enter_stage(&mut self, win: &EventWindow, stage: &StageConfig, omega_ref: &MotionParams) -> Result<StageInfo>;

    /// Streaming sums of the blurred IWE at `omega` on the current subset.
    fn stats(&mut self, win: &EventWindow, omega: &MotionParams) -> Result<StreamStats>;

    fn evaluate(&mut self, win: &EventWindow, omega: &MotionParams) -> Result<Objective> {
        objective_from_stats(&self.stats(win, omega)?)
    }
}

/// Dense software evaluation: accumulate the retained subset, smooth, then
/// one statistics pass.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    intr: CameraIntrinsics,
    pub mode: NumericMode,
    /// Keep every event at full resolution instead of the sorted subset.
    pub skip_full_res_sort: bool,
    stage: Option<(StageConfig, Vec<bool>)>,
}

impl ReferenceBackend {
    pub fn new(intr: CameraIntrinsics) -> Self {
        Self {
            intr,
            mode: NumericMode::Float,
            skip_full_res_sort: false,
            stage: None,
        }
    }

    pub fn with_mode(mut self, mode: NumericMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_skip_full_res_sort(mut self, skip: bool) -> Self {
        self.skip_full_res_sort = skip;
        self
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.stage.as_ref().map(|(_, m)| m.as_slice())
    }
}

impl ObjectiveBackend for ReferenceBackend {
    fn enter_stage(&mut self, win: &EventWindow, stage: &StageConfig, omega_ref: &MotionParams) -> Result<StageInfo> {
        let mask = if self.skip_full_res_sort && stage.scale.s == 1.0 {
            vec![true; win.len()]
        } else {
            pixel_group_sort(
                win,
                omega_ref,
                &stage.scale,
                stage.rho,
                &self.intr,
                &mut AccessCounters::default(),
            )
            .retained_mask()
        };
        let info = StageInfo {
            retained: mask.iter().filter(|&&m| m).count(),
            pixels: stage.scale.pixels(),
        };
        self.stage = Some((stage.clone(), mask));
        Ok(info)
    }

    fn stats(&mut self, win: &EventWindow, omega: &MotionParams) -> Result<StreamStats> {
        let (stage, mask) = self
            .stage
            .as_ref()
            .ok_or_else(|| Error::Schedule("objective evaluated before entering a stage".into()))?;
        let ch = accumulate_window_mode(win, mask, omega, &stage.scale, &self.intr, self.mode);
        Ok(stream_stats(&smooth(&ch, &stage.kernel)?))
    }
}
