//! Dense reference accumulation of the IWE and its three derivative images
//! by bilinear voting.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{CameraIntrinsics, EventWindow};
use crate::warp::{warp_event, MotionParams, StageScale, WarpedEvent};

/// Number of accumulated channels: IWE, dIWE_x, dIWE_y, dIWE_z.
pub const CHANNELS: usize = 4;

/// Arithmetic used for tap deltas.
///
/// `Integer` rounds every delta to a multiple of `quantum` and accumulates
/// integer counts, so sums are exact and independent of order. `quantum`
/// should be a power of two to keep the final rescale exact.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NumericMode {
    #[default]
    Float,
    Integer {
        quantum: f64,
    },
}

impl NumericMode {
    pub const DEFAULT_INTEGER: NumericMode = NumericMode::Integer {
        quantum: 1.0 / (1u64 << 20) as f64,
    };

    /// Value stored in an accumulator cell for a tap delta.
    #[inline]
    pub fn encode(&self, delta: f64) -> f64 {
        match *self {
            NumericMode::Float => delta,
            NumericMode::Integer { quantum } => (delta / quantum).round(),
        }
    }

    /// Real value of an accumulator cell.
    #[inline]
    pub fn decode(&self, cell: f64) -> f64 {
        match *self {
            NumericMode::Float => cell,
            NumericMode::Integer { quantum } => cell * quantum,
        }
    }
}

/// Dense row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// One bilinear tap: pixel and the delta for each of the four channels
/// (`delta[0]` is the IWE, `delta[1 + j]` the derivative image for `ω_j`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub px: usize,
    pub py: usize,
    pub delta: [f64; CHANNELS],
}

/// The four taps of one event, ordered (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapDeltas {
    pub taps: [Tap; 4],
}

/// IWE plus derivative images at one stage resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct IweChannels {
    pub scale: StageScale,
    pub channels: [Image; CHANNELS],
}

impl IweChannels {
    pub fn zeros(scale: StageScale) -> Self {
        Self {
            scale,
            channels: std::array::from_fn(|_| Image::zeros(scale.width, scale.height)),
        }
    }

    pub fn iwe(&self) -> &Image {
        &self.channels[0]
    }

    /// Derivative image for `ω_j`, `j` in 0..3.
    pub fn d_iwe(&self, j: usize) -> &Image {
        &self.channels[1 + j]
    }

    fn add_assign(&mut self, other: &IweChannels) {
        for (a, b) in self.channels.iter_mut().zip(other.channels.iter()) {
            for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
                *x += *y;
            }
        }
    }

    fn map_cells(&mut self, f: impl Fn(f64) -> f64) {
        for ch in &mut self.channels {
            for v in &mut ch.data {
                *v = f(*v);
            }
        }
    }
}

/// Bilinear weights of the four taps and their partials w.r.t. (x', y').
#[inline]
pub(crate) fn bilinear_weights(ax: f64, ay: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let w = [(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay];
    let dwdx = [-(1.0 - ay), 1.0 - ay, -ay, ay];
    let dwdy = [-(1.0 - ax), -ax, 1.0 - ax, ax];
    (w, dwdx, dwdy)
}

/// Splits one warped event into per-tap IWE and derivative deltas.
///
/// Derivative deltas are `p · (∂w/∂x' · ∂x'/∂ω_j + ∂w/∂y' · ∂y'/∂ω_j)` with
/// `∂x'/∂ω_j = -r_x[j]`, see the sign convention in `warp`.
pub fn bilinear_vote(w: &WarpedEvent) -> Result<TapDeltas> {
    if w.p_act.is_none() {
        return Err(Error::InvalidStencil);
    }
    let p = f64::from(w.p);
    let (wt, dwdx, dwdy) = bilinear_weights(w.alpha_x, w.alpha_y);
    let x0 = w.x0 as usize;
    let y0 = w.y0 as usize;
    let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
    let taps = std::array::from_fn(|k| {
        let mut delta = [0.0; CHANNELS];
        delta[0] = p * wt[k];
        for j in 0..3 {
            delta[1 + j] = -p * (dwdx[k] * w.r_x[j] + dwdy[k] * w.r_y[j]);
        }
        Tap {
            px: corners[k].0,
            py: corners[k].1,
            delta,
        }
    });
    Ok(TapDeltas { taps })
}

fn accumulate_into<'a>(
    out: &mut IweChannels,
    events: impl Iterator<Item = &'a crate::events::Event>,
    t_ref: f64,
    omega: &MotionParams,
    intr: &CameraIntrinsics,
    mode: NumericMode,
) {
    let scale = out.scale;
    for e in events {
        let w = warp_event(e, t_ref, omega, &scale, intr);
        let Ok(taps) = bilinear_vote(&w) else {
            continue;
        };
        for tap in &taps.taps {
            for (c, ch) in out.channels.iter_mut().enumerate() {
                *ch.at_mut(tap.px, tap.py) += mode.encode(tap.delta[c]);
            }
        }
    }
}

/// Dense sum of the tap deltas of all selected events with a valid stencil.
///
/// `mask[i]` selects event `i` of the window.
pub fn accumulate_window(
    win: &EventWindow,
    mask: &[bool],
    omega: &MotionParams,
    scale: &StageScale,
    intr: &CameraIntrinsics,
) -> IweChannels {
    accumulate_window_mode(win, mask, omega, scale, intr, NumericMode::Float)
}

pub fn accumulate_window_mode(
    win: &EventWindow,
    mask: &[bool],
    omega: &MotionParams,
    scale: &StageScale,
    intr: &CameraIntrinsics,
    mode: NumericMode,
) -> IweChannels {
    assert_eq!(mask.len(), win.len(), "mask length must equal window size");
    let mut out = IweChannels::zeros(*scale);
    let selected = win.events.iter().zip(mask).filter_map(|(e, &keep)| keep.then_some(e));
    accumulate_into(&mut out, selected, win.t_ref, omega, intr, mode);
    out.map_cells(|c| mode.decode(c));
    out
}

/// Same as [`accumulate_window`], split into `shards` private images that
/// are summed in shard order.
pub fn accumulate_window_par(
    win: &EventWindow,
    mask: &[bool],
    omega: &MotionParams,
    scale: &StageScale,
    intr: &CameraIntrinsics,
    shards: usize,
) -> IweChannels {
    assert_eq!(mask.len(), win.len(), "mask length must equal window size");
    let shards = shards.max(1);
    let chunk = win.len().div_ceil(shards).max(1);
    let partials: Vec<IweChannels> = win
        .events
        .par_chunks(chunk)
        .zip(mask.par_chunks(chunk))
        .map(|(events, m)| {
            let mut part = IweChannels::zeros(*scale);
            let selected = events.iter().zip(m).filter_map(|(e, &keep)| keep.then_some(e));
            accumulate_into(&mut part, selected, win.t_ref, omega, intr, NumericMode::Float);
            part
        })
        .collect();
    let mut out = IweChannels::zeros(*scale);
    for p in &partials {
        out.add_assign(p);
    }
    out
}

const DUMP_MAGIC: &[u8; 8] = b"CMAXIWE1";

/// Writes channels as: magic (8 bytes), Hs, Ws, channel count (u32 LE each),
/// then each channel row-major as f64 LE.
pub fn write_channels_bin(path: impl AsRef<Path>, ch: &IweChannels) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(DUMP_MAGIC)?;
    put(&(ch.scale.height as u32).to_le_bytes())?;
    put(&(ch.scale.width as u32).to_le_bytes())?;
    put(&(CHANNELS as u32).to_le_bytes())?;
    for img in &ch.channels {
        for v in &img.data {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dump written by [`write_channels_bin`] as `(height, width, channels)`.
pub fn read_channels_bin(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        path: path.into(),
        line: 0,
        msg: msg.to_string(),
    };
    if buf.len() < 20 || &buf[..8] != DUMP_MAGIC {
        return Err(bad("not an IWE dump"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, n) = (u32_at(8), u32_at(12), u32_at(16));
    if buf.len() != 20 + 8 * h * w * n {
        return Err(bad("truncated IWE dump"));
    }
    let channels = (0..n)
        .map(|c| {
            (0..h * w)
                .map(|i| {
                    let o = 20 + 8 * (c * h * w + i);
                    f64::from_le_bytes(buf[o..o + 8].try_into().unwrap())
                })
                .collect()
        })
        .collect();
    Ok((h, w, channels))
}

/// Exports one image as binary PGM, mapping zero to mid-gray and the largest
/// magnitude to black/white.
pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let peak = img.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.data.iter().map(|v| {
        let n = if peak > 0.0 { v / peak } else { 0.0 };
        (127.5 + 127.5 * n).round().clamp(0.0, 255.0) as u8
    }));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
