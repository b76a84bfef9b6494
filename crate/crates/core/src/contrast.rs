//! Separable Gaussian smoothing and the variance objective with its gradient
//! from running sums.
//!
//! Borders are zero-padded, so every stage keeps exactly `P = Hs·Ws` pixels.
//! The filter loops below fix the summation order (taps ascending, rows
//! top-down, pixels row-major); the engine's line-buffer model reuses them so
//! both paths round identically given identical accumulated images.

use crate::accumulation::{Image, IweChannels, CHANNELS};
use crate::error::{Error, Result};
use crate::warp::StageScale;

pub const DEFAULT_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub taps: Vec<f64>,
    pub sigma: f64,
}

impl GaussianKernel {
    /// Sampled `exp(-k²/2σ²)` over `k ∈ [-r, r]`, normalized to unit sum.
    /// `sigma == 0` gives the identity filter.
    pub fn sampled(len: usize, sigma: f64) -> Self {
        assert!(len % 2 == 1, "kernel length must be odd");
        let r = (len / 2) as i64;
        let mut taps: Vec<f64> = if sigma > 0.0 {
            (-r..=r)
                .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
                .collect()
        } else {
            (-r..=r).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect()
        };
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        Self { taps, sigma }
    }

    pub fn identity(len: usize) -> Self {
        Self::sampled(len, 0.0)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }
}

/// Tap count for the three supported stage scales: 3, 5 and 9.
pub fn taps_for_scale(s: f64) -> Result<usize> {
    match s {
        0.25 => Ok(3),
        0.5 => Ok(5),
        1.0 => Ok(9),
        other => Err(Error::UnsupportedScale(other)),
    }
}

pub fn make_kernel(scale: &StageScale) -> Result<GaussianKernel> {
    make_kernel_with_sigma(scale, DEFAULT_SIGMA)
}

pub fn make_kernel_with_sigma(scale: &StageScale, sigma: f64) -> Result<GaussianKernel> {
    Ok(GaussianKernel::sampled(taps_for_scale(scale.s)?, sigma))
}

/// Horizontal zero-padded FIR of one row.
pub(crate) fn filter_row(src: &[f64], taps: &[f64], dst: &mut [f64]) {
    let w = src.len() as i64;
    let r = (taps.len() / 2) as i64;
    for (x, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, t) in taps.iter().enumerate() {
            let xx = x as i64 + k as i64 - r;
            if xx >= 0 && xx < w {
                acc += t * src[xx as usize];
            }
        }
        *out = acc;
    }
}

/// Vertical FIR for output row `y`; `row(yy)` yields horizontally filtered
/// row `yy` and is only called for rows inside the image.
pub(crate) fn filter_column<'a>(
    y: usize,
    height: usize,
    taps: &[f64],
    mut row: impl FnMut(usize) -> &'a [f64],
    dst: &mut [f64],
) {
    let r = (taps.len() / 2) as i64;
    dst.iter_mut().for_each(|v| *v = 0.0);
    let mut first = true;
    for (k, t) in taps.iter().enumerate() {
        let yy = y as i64 + k as i64 - r;
        if yy < 0 || yy >= height as i64 {
            continue;
        }
        let src = row(yy as usize);
        if first {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = 0.0 + t * s;
            }
            first = false;
        } else {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
}

fn check_kernel_fits(ch: &IweChannels, kernel: &GaussianKernel) -> Result<()> {
    let (w, h) = (ch.scale.width, ch.scale.height);
    if kernel.len() > w.min(h) {
        return Err(Error::KernelTooLarge {
            taps: kernel.len(),
            width: w,
            height: h,
        });
    }
    Ok(())
}

/// Horizontal then vertical 1-D convolution of every channel.
pub fn smooth(ch: &IweChannels, kernel: &GaussianKernel) -> Result<IweChannels> {
    check_kernel_fits(ch, kernel)?;
    let (w, h) = (ch.scale.width, ch.scale.height);
    let channels = std::array::from_fn(|c| {
        let src = &ch.channels[c];
        let mut horiz = Image::zeros(w, h);
        for y in 0..h {
            filter_row(src.row(y), &kernel.taps, &mut horiz.data[y * w..(y + 1) * w]);
        }
        let mut out = Image::zeros(w, h);
        for y in 0..h {
            let (rows, dst) = (&horiz, &mut out.data[y * w..(y + 1) * w]);
            filter_column(y, h, &kernel.taps, |yy| rows.row(yy), dst);
        }
        out
    });
    Ok(IweChannels {
        scale: ch.scale,
        channels,
    })
}

/// Running sums over a blurred IWE `I` and blurred derivative images `D_j`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamStats {
    /// Σ I
    pub s1: f64,
    /// Σ I²
    pub s2: f64,
    /// Σ I·D_j
    pub g: [f64; 3],
    /// Σ D_j
    pub t: [f64; 3],
    /// pixel count
    pub p: usize,
}

impl StreamStats {
    #[inline]
    pub fn push(&mut self, i: f64, d: [f64; 3]) {
        self.s1 += i;
        self.s2 += i * i;
        for j in 0..3 {
            self.g[j] += i * d[j];
            self.t[j] += d[j];
        }
        self.p += 1;
    }

    /// Feeds one blurred row of each channel, pixels left to right.
    pub(crate) fn push_rows(&mut self, rows: [&[f64]; CHANNELS]) {
        for x in 0..rows[0].len() {
            self.push(rows[0][x], [rows[1][x], rows[2][x], rows[3][x]]);
        }
    }

    /// Largest relative difference over all fields (0 for identical stats).
    pub fn max_rel_diff(&self, other: &StreamStats) -> f64 {
        let a = self.fields();
        let b = other.fields();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| {
                let d = (x - y).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / x.abs().max(y.abs())
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn fields(&self) -> [f64; 8] {
        [
            self.s1, self.s2, self.g[0], self.g[1], self.g[2], self.t[0], self.t[1], self.t[2],
        ]
    }
}

/// Single row-major pass over already-blurred channels.
pub fn stream_stats(smoothed: &IweChannels) -> StreamStats {
    let mut st = StreamStats::default();
    for y in 0..smoothed.scale.height {
        st.push_rows(std::array::from_fn(|c| smoothed.channels[c].row(y)));
    }
    st
}

/// Variance objective and its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Objective {
    pub variance: f64,
    pub gradient: [f64; 3],
}

/// `Var = S2/P − (S1/P)²` and `∂C/∂ω_j = (2/P)(G_j − S1·T_j/P)`.
///
/// Cancellation can leave a tiny negative variance; values down to
/// `-1e-12·max(1, S2/P)` are clamped to zero, anything below is an error.
pub fn objective_from_stats(st: &StreamStats) -> Result<Objective> {
    if st.p == 0 {
        return Err(Error::EmptyImage);
    }
    let p = st.p as f64;
    let mean = st.s1 / p;
    let mut variance = st.s2 / p - mean * mean;
    if variance < 0.0 {
        if variance < -1e-12 * (st.s2 / p).max(1.0) {
            return Err(Error::NegativeVariance(variance));
        }
        variance = 0.0;
    }
    let gradient = std::array::from_fn(|j| 2.0 / p * (st.g[j] - st.s1 * st.t[j] / p));
    Ok(Objective { variance, gradient })
}
