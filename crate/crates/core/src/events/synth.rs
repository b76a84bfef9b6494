//! Desk-scale ground-truth generator.
//!
//! Scene points are moved by the same rotational flow field the warp uses
//! (`warp::rotational_flow`) in steps of at most a quarter pixel. An event
//! fires whenever a point enters a new pixel.
//!
//! Two motion models are available. [`SynthModel::Integrated`] integrates
//! the flow field with midpoint steps. [`SynthModel::WarpExact`] places a
//! point at the solution of `x - t·u(x) = x₀`, so the first-order warp with
//! `t_ref = 0` maps every event back onto its texture point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraIntrinsics, Event};
use crate::warp::{rotational_flow, MotionParams};

const MAX_STEP_PX: f64 = 0.25;
const SOLVE_ITERS: usize = 200;
const SOLVE_TOL: f64 = 1e-10;
/// Points whose normalized coordinates leave `[-ESCAPE, ESCAPE]` are dropped;
/// the flow diverges in finite time beyond the image plane.
const ESCAPE: f64 = 4.0;

fn escaped(x: f64, y: f64, intr: &CameraIntrinsics) -> bool {
    ((x - intr.cx) / intr.fx).abs() > ESCAPE || ((y - intr.cy) / intr.fy).abs() > ESCAPE
}

/// A scene point in full-resolution pixel coordinates at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexturePoint {
    pub x: f64,
    pub y: f64,
    pub p: i8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Texture {
    pub points: Vec<TexturePoint>,
}

impl Texture {
    /// Random short straight edges scattered over the sensor plus a margin of
    /// half the sensor size on every side. Points are one pixel apart along
    /// each edge; every edge has a single polarity.
    pub fn random_edges(intr: &CameraIntrinsics, segments: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = intr.width as f64;
        let h = intr.height as f64;
        let mut points = Vec::new();
        for _ in 0..segments {
            let cx = rng.gen_range(-0.5 * w..1.5 * w);
            let cy = rng.gen_range(-0.5 * h..1.5 * h);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let len = rng.gen_range(3..=10);
            let p = if rng.gen_bool(0.5) { 1 } else { -1 };
            let (dx, dy) = (theta.cos(), theta.sin());
            for k in 0..len {
                let off = k as f64 - 0.5 * (len - 1) as f64;
                points.push(TexturePoint {
                    x: cx + off * dx,
                    y: cy + off * dy,
                    p,
                });
            }
        }
        Self { points }
    }

    /// Isolated points of random polarity over the same extended region as
    /// [`Texture::random_edges`].
    pub fn random_points(intr: &CameraIntrinsics, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = intr.width as f64;
        let h = intr.height as f64;
        let points = (0..count)
            .map(|_| TexturePoint {
                x: rng.gen_range(-0.5 * w..1.5 * w),
                y: rng.gen_range(-0.5 * h..1.5 * h),
                p: if rng.gen_bool(0.5) { 1 } else { -1 },
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Generated events, time-sorted, with the texture point that produced each
/// one (`None` for noise events).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticStream {
    pub events: Vec<Event>,
    pub origin: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SynthModel {
    #[default]
    Integrated,
    WarpExact,
}

/// Integrates one point for `dt` seconds with a midpoint step.
#[inline]
fn step(x: f64, y: f64, dt: f64, omega: &MotionParams, intr: &CameraIntrinsics) -> (f64, f64) {
    let (u1, v1) = rotational_flow(x, y, omega, intr);
    let (u2, v2) = rotational_flow(x + 0.5 * dt * u1, y + 0.5 * dt * v1, omega, intr);
    (x + dt * u2, y + dt * v2)
}

/// Solution of `x - t·u(x) = (x0, y0)` by fixed-point iteration from
/// `guess`, or `None` when the iteration does not settle.
fn solve_position(
    x0: f64,
    y0: f64,
    t: f64,
    guess: (f64, f64),
    omega: &MotionParams,
    intr: &CameraIntrinsics,
) -> Option<(f64, f64)> {
    let (mut x, mut y) = guess;
    for _ in 0..SOLVE_ITERS {
        let (u, v) = rotational_flow(x, y, omega, intr);
        let (nx, ny) = (x0 + t * u, y0 + t * v);
        let moved = (nx - x).abs().max((ny - y).abs());
        (x, y) = (nx, ny);
        if escaped(x, y, intr) {
            return None;
        }
        if moved < SOLVE_TOL {
            return Some((x, y));
        }
    }
    None
}

/// Moves a point from `pos` at time `now` to time `now + dt`.
fn advance(
    model: SynthModel,
    point: &TexturePoint,
    pos: (f64, f64),
    now: f64,
    dt: f64,
    omega: &MotionParams,
    intr: &CameraIntrinsics,
) -> Option<(f64, f64)> {
    let next = match model {
        SynthModel::Integrated => step(pos.0, pos.1, dt, omega, intr),
        SynthModel::WarpExact => solve_position(point.x, point.y, now + dt, pos, omega, intr)?,
    };
    (!escaped(next.0, next.1, intr)).then_some(next)
}

/// Position of a texture point after `t` seconds, using the same step
/// sequence as the generator. `None` once the point has left the region
/// where the motion model is followed.
pub fn trajectory(
    point: &TexturePoint,
    omega: &MotionParams,
    intr: &CameraIntrinsics,
    t: f64,
    model: SynthModel,
) -> Option<(f64, f64)> {
    let mut pos = (point.x, point.y);
    let mut now = 0.0;
    while now < t {
        let dt = step_length(pos.0, pos.1, omega, intr).min(t - now);
        pos = advance(model, point, pos, now, dt, omega, intr)?;
        now += dt;
    }
    Some(pos)
}

fn step_length(x: f64, y: f64, omega: &MotionParams, intr: &CameraIntrinsics) -> f64 {
    let (u, v) = rotational_flow(x, y, omega, intr);
    let speed = u.abs().max(v.abs());
    if speed > 0.0 {
        MAX_STEP_PX / speed
    } else {
        f64::INFINITY
    }
}

/// Generates events for a camera rotating at constant `omega_true` over a
/// static textured scene. `noise` is the fraction of output events that are
/// uniformly random (0 disables noise).
pub fn synth_scene(
    omega_true: &MotionParams,
    intr: &CameraIntrinsics,
    duration: f64,
    texture: &Texture,
    noise: f64,
    seed: u64,
) -> SyntheticStream {
    synth_scene_with(SynthModel::Integrated, omega_true, intr, duration, texture, noise, seed)
}

pub fn synth_scene_with(
    model: SynthModel,
    omega_true: &MotionParams,
    intr: &CameraIntrinsics,
    duration: f64,
    texture: &Texture,
    noise: f64,
    seed: u64,
) -> SyntheticStream {
    assert!(duration > 0.0, "duration must be positive");
    assert!((0.0..1.0).contains(&noise), "noise fraction must be in [0, 1)");

    let mut raw: Vec<(f64, usize, u16, u16, i8)> = Vec::new();
    for (idx, pt) in texture.points.iter().enumerate() {
        let mut pos = (pt.x, pt.y);
        let mut now = 0.0;
        let mut cell = (pos.0.floor() as i64, pos.1.floor() as i64);
        while now < duration {
            let dt = step_length(pos.0, pos.1, omega_true, intr);
            if !dt.is_finite() {
                break;
            }
            let dt = dt.min(duration - now);
            let Some(next_pos) = advance(model, pt, pos, now, dt, omega_true, intr) else {
                break;
            };
            pos = next_pos;
            now += dt;
            let next = (pos.0.floor() as i64, pos.1.floor() as i64);
            if next != cell {
                cell = next;
                if intr.contains(next.0, next.1) {
                    raw.push((now, idx, next.0 as u16, next.1 as u16, pt.p));
                }
            }
        }
    }

    let n_signal = raw.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_noise = if noise > 0.0 {
        (n_signal as f64 * noise / (1.0 - noise)).round() as usize
    } else {
        0
    };
    let mut noise_events: Vec<(f64, u16, u16, i8)> = (0..n_noise)
        .map(|_| {
            (
                rng.gen_range(0.0..duration),
                rng.gen_range(0..intr.width) as u16,
                rng.gen_range(0..intr.height) as u16,
                if rng.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();

    let mut all: Vec<(f64, Option<usize>, u16, u16, i8)> =
        raw.into_iter().map(|(t, i, x, y, p)| (t, Some(i), x, y, p)).collect();
    all.extend(noise_events.drain(..).map(|(t, x, y, p)| (t, None, x, y, p)));
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    SyntheticStream {
        events: all.iter().map(|&(t, _, x, y, p)| Event::new(x, y, t, p)).collect(),
        origin: all.iter().map(|a| a.1).collect(),
    }
}
