//! Event ingestion, fixed-count windowing, calibration and IMU reference.

mod io;
pub mod synth;

pub use io::{load_calib, load_events, load_imu, load_imu_columns, read_events, write_calib, write_events, write_imu};
pub use synth::{synth_scene, synth_scene_with, trajectory, SynthModel, SyntheticStream, Texture, TexturePoint};

use crate::error::{Error, Result};

/// A single DVS event. Polarity is always `-1` or `+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f64,
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, p: i8) -> Self {
        debug_assert!(p == 1 || p == -1, "polarity must be +-1, got {p}");
        Self { x, y, t, p }
    }

    #[inline]
    pub fn polarity(&self) -> f64 {
        f64::from(self.p)
    }
}

/// Pinhole intrinsics and sensor geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Intrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::Intrinsics(format!("cx={} outside (0, {})", self.cx, self.width)));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Intrinsics(format!(
                "cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }
}

/// A fixed-count window of events in timestamp order.
///
/// `t_ref` is the timestamp of the first event, so every `t - t_ref >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub events: Vec<Event>,
    pub t_ref: f64,
}

impl EventWindow {
    pub fn new(events: Vec<Event>) -> Self {
        let t_ref = events.first().map_or(0.0, |e| e.t);
        Self { events, t_ref }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.events.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.t_ref
    }

    pub fn t_end(&self) -> f64 {
        self.events.last().map_or(self.t_ref, |e| e.t)
    }

    pub fn t_mid(&self) -> f64 {
        0.5 * (self.t_start() + self.t_end())
    }
}

/// Splits a stream into consecutive non-overlapping windows of exactly `n`
/// events. The trailing remainder (fewer than `n` events) is dropped.
pub fn window_by_count(stream: &[Event], n: usize) -> Vec<EventWindow> {
    assert!(n >= 1, "window size must be at least 1");
    stream
        .chunks_exact(n)
        .map(|chunk| EventWindow::new(chunk.to_vec()))
        .collect()
}

/// One gyroscope reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub omega: [f64; 3],
}

/// Time-sorted IMU samples with clamped linear interpolation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImuTrack {
    samples: Vec<ImuSample>,
}

impl ImuTrack {
    /// Samples must be strictly increasing in time.
    pub fn new(samples: Vec<ImuSample>) -> Result<Self> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::NonMonotoneTime {
                    path: "<memory>".into(),
                    line: i + 2,
                    t: w[1].t,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True when `t` lies inside the sampled time range.
    pub fn covers(&self, t: f64) -> bool {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => t >= a.t && t <= b.t,
            _ => false,
        }
    }

    /// Linear interpolation, clamped to the first/last sample outside the range.
    pub fn lookup(&self, t: f64) -> Option<[f64; 3]> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if t <= first.t {
            return Some(first.omega);
        }
        if t >= last.t {
            return Some(last.omega);
        }
        // first index with sample.t > t; 1 <= hi < len here
        let hi = self.samples.partition_point(|s| s.t <= t);
        let a = &self.samples[hi - 1];
        let b = &self.samples[hi];
        if a.t == t {
            return Some(a.omega);
        }
        let w = (t - a.t) / (b.t - a.t);
        Some(std::array::from_fn(|k| a.omega[k] + w * (b.omega[k] - a.omega[k])))
    }
}
