//! Contrast-maximization (CMAX) rotational motion estimation for event cameras.
//!
//! The crate has two execution paths that compute the same objective:
//!
//! - a dense reference path (`warp` → `accumulation` → `contrast`), used by
//!   the optimizer and the stage scheduler, and
//! - an access-counting model of a banked accumulation engine (`engine`)
//!   that reproduces the reference statistics while recording every memory
//!   access, local-accumulation absorption and pending-merge hit.
//!
//! `scheduler` runs fixed, full-resolution or runtime-adaptive coarse-to-fine
//! schedules on either path, and `eval` turns per-window estimates into
//! IMU-referenced accuracy and access/energy reports.

pub mod accumulation;
pub mod cli;
pub mod contrast;
pub mod engine;
pub mod error;
pub mod eval;
pub mod events;
pub mod optimizer;
pub mod pipeline;
pub mod scheduler;
pub mod warp;

pub use error::{Error, Result};
pub use events::{CameraIntrinsics, Event, EventWindow, ImuSample, ImuTrack};
pub use warp::{MotionParams, StageScale, WarpedEvent};
