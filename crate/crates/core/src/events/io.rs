//! Text formats of the public Event Camera Dataset layout.
//!
//! - events: `t x y p` per line, `p` in {0, 1}
//! - imu: `t wx wy wz ...`, extra columns ignored
//! - calib: whitespace-separated numbers, the first four are `fx fy cx cy`

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CameraIntrinsics, Event, ImuSample, ImuTrack};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str, path: &Path, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        path: path.into(),
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        msg: format!("cannot parse {what} from {tok:?}"),
    })
}

fn is_skippable(line: &str) -> bool {
    let l = line.trim_start();
    l.is_empty() || l.starts_with('#')
}

/// Loads an events file, remapping polarity 0/1 to -1/+1 and rejecting
/// pixels outside the sensor.
pub fn load_events(path: impl AsRef<Path>, intr: &CameraIntrinsics) -> Result<Vec<Event>> {
    let path = path.as_ref();
    read_events(open(path)?, path, intr)
}

pub fn read_events<R: BufRead>(reader: R, path: &Path, intr: &CameraIntrinsics) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let mut it = line.split_whitespace();
        let t: f64 = parse_field(it.next(), "timestamp", path, lineno)?;
        let x: i64 = parse_field(it.next(), "x", path, lineno)?;
        let y: i64 = parse_field(it.next(), "y", path, lineno)?;
        let p: i64 = parse_field(it.next(), "polarity", path, lineno)?;
        if !t.is_finite() {
            return Err(Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("non-finite timestamp {t}"),
            });
        }
        let p = match p {
            0 => -1,
            1 => 1,
            other => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("polarity must be 0 or 1, got {other}"),
                })
            }
        };
        if !intr.contains(x, y) {
            return Err(Error::PixelOutOfRange {
                path: path.into(),
                line: lineno,
                x,
                y,
                width: intr.width,
                height: intr.height,
            });
        }
        out.push(Event::new(x as u16, y as u16, t, p));
    }
    Ok(out)
}

/// Writes events in the same format `load_events` reads. Timestamps use the
/// shortest round-trip representation, so reload is exact.
pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for e in events {
        let p = if e.p > 0 { 1 } else { 0 };
        writeln!(w, "{} {} {} {}", e.t, e.x, e.y, p).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an IMU file whose columns start with `t wx wy wz`.
pub fn load_imu(path: impl AsRef<Path>) -> Result<ImuTrack> {
    load_imu_columns(path, 1)
}

/// Loads an IMU file with the gyroscope triple starting at `gyro_col`
/// (the raw dataset's `t ax ay az gx gy gz` layout uses `gyro_col = 4`).
pub fn load_imu_columns(path: impl AsRef<Path>, gyro_col: usize) -> Result<ImuTrack> {
    let path = path.as_ref();
    let mut samples: Vec<ImuSample> = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let t: f64 = parse_field(cols.first().copied(), "timestamp", path, lineno)?;
        let mut omega = [0.0; 3];
        for (k, w) in omega.iter_mut().enumerate() {
            *w = parse_field(cols.get(gyro_col + k).copied(), "angular rate", path, lineno)?;
        }
        if let Some(prev) = samples.last() {
            if !(t > prev.t) {
                return Err(Error::NonMonotoneTime {
                    path: path.into(),
                    line: lineno,
                    t,
                });
            }
        }
        samples.push(ImuSample { t, omega });
    }
    ImuTrack::new(samples)
}

pub fn write_imu(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in samples {
        writeln!(w, "{} {} {} {}", s.t, s.omega[0], s.omega[1], s.omega[2]).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `fx fy cx cy` from a calibration file; the sensor size is not part
/// of the file format and must be supplied.
pub fn load_calib(path: impl AsRef<Path>, width: usize, height: usize) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let nums: Vec<f64> = text
        .split_whitespace()
        .take(4)
        .map(|tok| {
            tok.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("cannot parse calibration value {tok:?}"),
            })
        })
        .collect::<Result<_>>()?;
    if nums.len() < 4 {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected 4 calibration values, found {}", nums.len()),
        });
    }
    CameraIntrinsics::new(nums[0], nums[1], nums[2], nums[3], width, height)
}

pub fn write_calib(path: impl AsRef<Path>, intr: &CameraIntrinsics) -> Result<()> {
    let path = path.as_ref();
    let body = format!("{} {} {} {}\n", intr.fx, intr.fy, intr.cx, intr.cy);
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
