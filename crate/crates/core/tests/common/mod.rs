#![allow(dead_code)]

use cmax_camel::accumulation::IweChannels;
use cmax_camel::events::{synth_scene_with, window_by_count, SynthModel, Texture};
use cmax_camel::{CameraIntrinsics, EventWindow, MotionParams, StageScale};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DESK_W: usize = 64;
pub const DESK_H: usize = 48;
pub const DESK_WINDOW: usize = 2_000;

pub fn desk_intrinsics() -> CameraIntrinsics {
    let f = 0.83 * DESK_W as f64;
    CameraIntrinsics::new(f, f, DESK_W as f64 / 2.0, DESK_H as f64 / 2.0, DESK_W, DESK_H).unwrap()
}

/// Uniform direction with magnitude in `[lo, hi]`.
pub fn random_omega(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> MotionParams {
    loop {
        let v = MotionParams::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return (rng.gen_range(lo..=hi) / n) * v;
        }
    }
}

/// Windows of a constant-rotation scene over an isolated-point texture.
pub fn point_scene(
    omega: &MotionParams,
    intr: &CameraIntrinsics,
    points: usize,
    duration: f64,
    model: SynthModel,
    seed: u64,
) -> Vec<EventWindow> {
    let tex = Texture::random_points(intr, points, seed);
    let stream = synth_scene_with(model, omega, intr, duration, &tex, 0.0, seed ^ 0x5eed);
    window_by_count(&stream.events, DESK_WINDOW)
}

/// Desk-scale windows from several random scenes.
pub fn desk_windows(count: usize, seed: u64) -> Vec<(EventWindow, MotionParams)> {
    use rand::SeedableRng;
    let intr = desk_intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut scene = 0u64;
    while out.len() < count {
        let omega = random_omega(&mut rng, 0.3, 2.0);
        let wins = point_scene(&omega, &intr, 250, 0.4, SynthModel::Integrated, seed * 1000 + scene);
        scene += 1;
        for w in wins.into_iter().take(3) {
            if out.len() < count {
                out.push((w, omega));
            }
        }
    }
    out
}

pub fn random_channels(rng: &mut ChaCha8Rng, w: usize, h: usize) -> IweChannels {
    let scale = StageScale::new(1.0, w, h);
    let mut ch = IweChannels::zeros(scale);
    for c in &mut ch.channels {
        for v in &mut c.data {
            *v = if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(-3.0..3.0)
            };
        }
    }
    ch
}

/// Variance and gradient straight from the definition on blurred images.
pub fn direct_objective(ch: &IweChannels) -> (f64, [f64; 3]) {
    let i = &ch.iwe().data;
    let p = i.len() as f64;
    let mean = i.iter().sum::<f64>() / p;
    let var = i.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p;
    let grad = std::array::from_fn(|j| {
        let d = &ch.d_iwe(j).data;
        let dmean = d.iter().sum::<f64>() / p;
        2.0 / p * i.iter().zip(d).map(|(a, b)| (a - mean) * (b - dmean)).sum::<f64>()
    });
    (var, grad)
}
