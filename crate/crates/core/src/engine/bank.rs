//! Parity-banked IWE/dIWE storage.
//!
//! Pixel `(x, y)` lives in bank `b = {y[0], x[0]} = 2·(y & 1) + (x & 1)` at
//! bank-local address `⌊y/2⌋·⌈Ws/2⌉ + ⌊x/2⌋`. The four taps of a 2×2 stencil
//! always have distinct parity pairs, so each lands in its own bank.

use super::{AccessCounters, MemGroup};
use crate::accumulation::{Image, NumericMode, CHANNELS};

pub const BANKS: usize = 4;

#[inline]
pub fn bank_of(x: usize, y: usize) -> usize {
    ((y & 1) << 1) | (x & 1)
}

#[inline]
pub fn bank_address(x: usize, y: usize, width: usize) -> usize {
    (y >> 1) * width.div_ceil(2) + (x >> 1)
}

/// Bank and bank-local address of the four taps of the stencil at `(x0, y0)`,
/// tap order (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankMap {
    pub bank: usize,
    pub a00: usize,
    pub taps: [(usize, usize); 4],
}

/// The horizontal neighbour's address steps by one only when `x0` is odd
/// (it then sits in the next even/odd pair); the vertical neighbour steps by
/// a row pitch of `⌈Ws/2⌉` only when `y0` is odd.
pub fn bank_map(x0: usize, y0: usize, width: usize) -> BankMap {
    let pitch = width.div_ceil(2);
    let a00 = (y0 >> 1) * pitch + (x0 >> 1);
    let dx = x0 & 1;
    let dy = (y0 & 1) * pitch;
    BankMap {
        bank: bank_of(x0, y0),
        a00,
        taps: [
            (bank_of(x0, y0), a00),
            (bank_of(x0 + 1, y0), a00 + dx),
            (bank_of(x0, y0 + 1), a00 + dy),
            (bank_of(x0 + 1, y0 + 1), a00 + dx + dy),
        ],
    }
}

/// 4 channels × 4 banks of `⌈Hs/2⌉·⌈Ws/2⌉` cells with per-(channel, bank)
/// read/write counters.
#[derive(Debug, Clone)]
pub struct BankedMemory {
    width: usize,
    height: usize,
    bank_cells: usize,
    cells: Vec<f64>,
    touched: Vec<bool>,
    touched_list: Vec<u32>,
    pub reads: [[u64; BANKS]; CHANNELS],
    pub writes: [[u64; BANKS]; CHANNELS],
}

impl BankedMemory {
    pub fn new(width: usize, height: usize) -> Self {
        let bank_cells = width.div_ceil(2) * height.div_ceil(2);
        let total = CHANNELS * BANKS * bank_cells;
        Self {
            width,
            height,
            bank_cells,
            cells: vec![0.0; total],
            touched: vec![false; total],
            touched_list: Vec::new(),
            reads: [[0; BANKS]; CHANNELS],
            writes: [[0; BANKS]; CHANNELS],
        }
    }

    pub fn bank_cells(&self) -> usize {
        self.bank_cells
    }

    #[inline]
    fn index(&self, channel: usize, bank: usize, addr: usize) -> usize {
        debug_assert!(addr < self.bank_cells, "bank address {addr} out of range");
        (channel * BANKS + bank) * self.bank_cells + addr
    }

    /// Read-modify-write commit of `delta`.
    #[inline]
    pub fn commit(&mut self, channel: usize, bank: usize, addr: usize, delta: f64, acc: &mut AccessCounters) {
        let i = self.index(channel, bank, addr);
        self.cells[i] += delta;
        self.reads[channel][bank] += 1;
        self.writes[channel][bank] += 1;
        acc.read(MemGroup::Iwe, 1);
        acc.write(MemGroup::Iwe, 1);
        if !self.touched[i] {
            self.touched[i] = true;
            self.touched_list.push(i as u32);
        }
    }

    #[inline]
    pub fn read(&mut self, channel: usize, bank: usize, addr: usize, acc: &mut AccessCounters) -> f64 {
        self.reads[channel][bank] += 1;
        acc.read(MemGroup::Iwe, 1);
        self.cells[self.index(channel, bank, addr)]
    }

    /// Reads pixel `(x, y)` of a channel through the parity mapping.
    #[inline]
    pub fn read_pixel(&mut self, channel: usize, x: usize, y: usize, acc: &mut AccessCounters) -> f64 {
        self.read(channel, bank_of(x, y), bank_address(x, y, self.width), acc)
    }

    /// Zeroes every cell written since the last clear, one write per cell.
    /// Returns the number of cleared cells.
    pub fn clear_touched(&mut self, acc: &mut AccessCounters) -> u64 {
        let n = self.touched_list.len() as u64;
        for &i in &self.touched_list {
            let i = i as usize;
            self.cells[i] = 0.0;
            self.touched[i] = false;
            let cb = i / self.bank_cells;
            self.writes[cb / BANKS][cb % BANKS] += 1;
        }
        acc.write(MemGroup::Iwe, n);
        self.touched_list.clear();
        n
    }

    /// Reassembles one channel into a dense image without counting accesses.
    pub fn to_dense(&self, channel: usize, mode: NumericMode) -> Image {
        let mut img = Image::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = self.index(channel, bank_of(x, y), bank_address(x, y, self.width));
                *img.at_mut(x, y) = mode.decode(self.cells[i]);
            }
        }
        img
    }
}
