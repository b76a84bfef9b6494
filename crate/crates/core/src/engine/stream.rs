//! Line-buffered separable blur fused with the statistics pass.
//!
//! Each raw row is read once, filtered horizontally into a ring of `taps`
//! rows per channel, and the vertical filter emits output row `y` as soon as
//! row `y + r` has arrived. The arithmetic is the same as [`crate::contrast::smooth`]
//! followed by [`crate::contrast::stream_stats`], in the same order.

use super::{AccessCounters, MemGroup};
use crate::accumulation::CHANNELS;
use crate::contrast::{filter_column, filter_row, GaussianKernel, StreamStats};
use crate::error::{Error, Result};

/// `pixel(c, x, y)` supplies raw accumulated values; line-buffer traffic is
/// counted into `acc`.
pub fn blur_stats(
    width: usize,
    height: usize,
    kernel: &GaussianKernel,
    mut pixel: impl FnMut(usize, usize, usize) -> f64,
    acc: &mut AccessCounters,
) -> Result<StreamStats> {
    let n = kernel.len();
    if n > width.min(height) {
        return Err(Error::KernelTooLarge { taps: n, width, height });
    }
    let r = kernel.radius();
    let taps = &kernel.taps;
    let mut ring: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; width]; n]; CHANNELS];
    let mut raw = vec![0.0; width];
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; width]; CHANNELS];
    let mut st = StreamStats::default();

    let mut emit = |y: usize, ring: &Vec<Vec<Vec<f64>>>, out: &mut Vec<Vec<f64>>, acc: &mut AccessCounters| {
        for c in 0..CHANNELS {
            let rows = &ring[c];
            let mut used = 0u64;
            filter_column(
                y,
                height,
                taps,
                |yy| {
                    used += 1;
                    &rows[yy % n][..]
                },
                &mut out[c],
            );
            acc.read(MemGroup::LineBuffer, used * width as u64);
        }
        st.push_rows(std::array::from_fn(|c| &out[c][..]));
    };

    for yin in 0..height {
        for c in 0..CHANNELS {
            for (x, v) in raw.iter_mut().enumerate() {
                *v = pixel(c, x, yin);
            }
            filter_row(&raw, taps, &mut ring[c][yin % n]);
            acc.write(MemGroup::LineBuffer, width as u64);
        }
        if yin >= r {
            emit(yin - r, &ring, &mut out, acc);
        }
    }
    for y in height.saturating_sub(r)..height {
        emit(y, &ring, &mut out, acc);
    }
    Ok(st)
}
