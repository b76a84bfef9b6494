//! Shared warp front-end for the pure-rotation model.
//!
//! Jacobian sign convention: the rows `r_x`, `r_y` are stored exactly as the
//! hardware front-end produces them,
//!
//! ```text
//! r_x = s·dt·[fx·XY, -fx·B, fx·yn]
//! r_y = s·dt·[fy·D, -fy·XY, -fy·xn]
//! ```
//!
//! and since `x' = s·(x - dt·u)`, they are the *negated* coordinate
//! sensitivities: `dx'/dω_j = -r_x[j]` and `dy'/dω_j = -r_y[j]`. The single
//! place that consumes them (`accumulation::bilinear_vote`) applies the minus
//! sign once.

use std::ops::{Add, Mul, Sub};

use crate::events::{CameraIntrinsics, Event};

/// Angular-velocity hypothesis (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionParams(pub [f64; 3]);

impl MotionParams {
    pub const ZERO: MotionParams = MotionParams([0.0; 3]);

    pub fn new(wx: f64, wy: f64, wz: f64) -> Self {
        Self([wx, wy, wz])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &MotionParams) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl Add for MotionParams {
    type Output = MotionParams;
    fn add(self, rhs: Self) -> Self {
        MotionParams(std::array::from_fn(|k| self.0[k] + rhs.0[k]))
    }
}

impl Sub for MotionParams {
    type Output = MotionParams;
    fn sub(self, rhs: Self) -> Self {
        MotionParams(std::array::from_fn(|k| self.0[k] - rhs.0[k]))
    }
}

impl Mul<MotionParams> for f64 {
    type Output = MotionParams;
    fn mul(self, rhs: MotionParams) -> MotionParams {
        MotionParams(rhs.0.map(|v| self * v))
    }
}

/// Resolution scale of one coarse-to-fine stage and its grid size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageScale {
    pub s: f64,
    /// `ceil(s·W)`
    pub width: usize,
    /// `ceil(s·H)`
    pub height: usize,
}

impl StageScale {
    pub fn new(s: f64, full_width: usize, full_height: usize) -> Self {
        assert!(s > 0.0 && s <= 1.0, "scale must be in (0, 1], got {s}");
        Self {
            s,
            width: (s * full_width as f64).ceil() as usize,
            height: (s * full_height as f64).ceil() as usize,
        }
    }

    pub fn full(intr: &CameraIntrinsics) -> Self {
        Self::new(1.0, intr.width, intr.height)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Whether the 2×2 stencil anchored at `(x0, y0)` fits the grid.
    #[inline]
    pub fn stencil_fits(&self, x0: i64, y0: i64) -> bool {
        x0 >= 0 && y0 >= 0 && ((x0 + 1) as usize) < self.width && ((y0 + 1) as usize) < self.height
    }
}

/// Output of the warp front-end for one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpedEvent {
    pub x0: i64,
    pub y0: i64,
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub r_x: [f64; 3],
    pub r_y: [f64; 3],
    /// `y0·Ws + x0` when the whole 2×2 stencil is inside the stage grid.
    pub p_act: Option<usize>,
    pub p: i8,
}

impl WarpedEvent {
    #[inline]
    pub fn is_valid(&self) -> bool {
        self.p_act.is_some()
    }
}

/// Image-plane velocity (pixels/s) of a static scene point at pixel `(x, y)`
/// for camera angular velocity `omega`.
#[inline]
pub fn rotational_flow(x: f64, y: f64, omega: &MotionParams, intr: &CameraIntrinsics) -> (f64, f64) {
    let xn = (x - intr.cx) / intr.fx;
    let yn = (y - intr.cy) / intr.fy;
    let b = 1.0 + xn * xn;
    let d = 1.0 + yn * yn;
    let xy = xn * yn;
    let [wx, wy, wz] = omega.0;
    let u = intr.fx * (xy * wx - b * wy + yn * wz);
    let v = intr.fy * (d * wx - xy * wy - xn * wz);
    (u, v)
}

/// Continuous warped position `s·(x - dt·u, y - dt·v)` without the
/// integer/fraction split.
#[inline]
pub fn warp_point(e: &Event, t_ref: f64, omega: &MotionParams, s: f64, intr: &CameraIntrinsics) -> (f64, f64) {
    let x = f64::from(e.x);
    let y = f64::from(e.y);
    let dt = e.t - t_ref;
    let (u, v) = rotational_flow(x, y, omega, intr);
    (s * (x - dt * u), s * (y - dt * v))
}

/// Integer corner and fraction in `[0, 1)`. For tiny negative inputs
/// `v - floor(v)` can round up to exactly 1.0, which moves to the next cell.
/// Far out-of-range or non-finite coordinates saturate and fail the fit check.
#[inline]
fn split_subpixel(v: f64) -> (i64, f64) {
    let f = v.floor();
    let a = v - f;
    if a >= 1.0 {
        (f as i64 + 1, 0.0)
    } else {
        (f as i64, a)
    }
}

pub fn warp_event(
    e: &Event,
    t_ref: f64,
    omega: &MotionParams,
    scale: &StageScale,
    intr: &CameraIntrinsics,
) -> WarpedEvent {
    let x = f64::from(e.x);
    let y = f64::from(e.y);
    let xn = (x - intr.cx) / intr.fx;
    let yn = (y - intr.cy) / intr.fy;
    let dt = e.t - t_ref;

    let b = 1.0 + xn * xn;
    let d = 1.0 + yn * yn;
    let xy = xn * yn;

    let [wx, wy, wz] = omega.0;
    let u = intr.fx * (xy * wx - b * wy + yn * wz);
    let v = intr.fy * (d * wx - xy * wy - xn * wz);

    let s = scale.s;
    let xw = s * (x - dt * u);
    let yw = s * (y - dt * v);

    let sdt = s * dt;
    let r_x = [sdt * intr.fx * xy, -sdt * intr.fx * b, sdt * intr.fx * yn];
    let r_y = [sdt * intr.fy * d, -sdt * intr.fy * xy, -sdt * intr.fy * xn];

    let (x0, alpha_x) = split_subpixel(xw);
    let (y0, alpha_y) = split_subpixel(yw);

    let p_act = (xw.is_finite() && yw.is_finite() && scale.stencil_fits(x0, y0))
        .then(|| y0 as usize * scale.width + x0 as usize);

    WarpedEvent {
        x0,
        y0,
        alpha_x,
        alpha_y,
        r_x,
        r_y,
        p_act,
        p: e.p,
    }
}
