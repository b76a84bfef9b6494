//! IMU-referenced accuracy metrics, deviation from the full-resolution run,
//! and the report files comparing methods and datapaths.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::MotionParams;

/// Segment boundaries (s) for sequences at least 60 s long.
pub const DEFAULT_SEGMENT_BOUNDS: [f64; 5] = [0.0, 15.0, 30.0, 45.0, 60.0];
pub const DEFAULT_REALTIME_BOUND_MS: f64 = 5.72;

/// `‖ω̂ − ω_IMU‖₂`.
pub fn window_error(omega_hat: &MotionParams, omega_imu: &[f64; 3]) -> f64 {
    (*omega_hat - MotionParams(*omega_imu)).norm()
}

/// `√(mean e²)`.
pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Default boundaries, shrunk proportionally when the sequence is shorter
/// than the last boundary.
pub fn segment_bounds(duration: f64) -> Vec<f64> {
    let last = DEFAULT_SEGMENT_BOUNDS[DEFAULT_SEGMENT_BOUNDS.len() - 1];
    let f = if duration > 0.0 && duration < last {
        duration / last
    } else {
        1.0
    };
    DEFAULT_SEGMENT_BOUNDS.iter().map(|b| b * f).collect()
}

/// Segment index of time `t` (clamped to the first/last segment).
fn segment_of(t: f64, bounds: &[f64]) -> usize {
    let n = bounds.len() - 1;
    (bounds[1..n].partition_point(|&b| b <= t)).min(n - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub values: Vec<f64>,
    /// Segments where all deviations were equal; their entries are zero.
    pub degenerate_segments: Vec<usize>,
}

fn check_aligned(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Misaligned(format!("{what}: {a} vs {b} entries")));
    }
    Ok(())
}

/// `|e_m − e_full|`, min–max normalized within each time segment.
/// `timestamps` are seconds from the start of the sequence.
pub fn deviation_metric(
    errors_m: &[f64],
    errors_full: &[f64],
    timestamps: &[f64],
    bounds: &[f64],
) -> Result<Deviation> {
    Ok(deviation_metric_shared(&[errors_m], errors_full, timestamps, bounds)?.remove(0))
}

/// Like [`deviation_metric`], but the per-segment minimum and maximum are
/// taken over all methods together so their values are comparable.
pub fn deviation_metric_shared(
    errors: &[&[f64]],
    errors_full: &[f64],
    timestamps: &[f64],
    bounds: &[f64],
) -> Result<Vec<Deviation>> {
    if bounds.len() < 2 {
        return Err(Error::Config("at least one segment is required".into()));
    }
    check_aligned(errors_full.len(), timestamps.len(), "timestamps")?;
    for e in errors {
        check_aligned(e.len(), errors_full.len(), "method errors")?;
    }
    let raw: Vec<Vec<f64>> = errors
        .iter()
        .map(|e| e.iter().zip(errors_full).map(|(a, b)| (a - b).abs()).collect())
        .collect();
    let nseg = bounds.len() - 1;
    let seg: Vec<usize> = timestamps.iter().map(|&t| segment_of(t, bounds)).collect();
    let mut lo = vec![f64::INFINITY; nseg];
    let mut hi = vec![f64::NEG_INFINITY; nseg];
    for r in &raw {
        for (v, &s) in r.iter().zip(&seg) {
            lo[s] = lo[s].min(*v);
            hi[s] = hi[s].max(*v);
        }
    }
    let degenerate: Vec<usize> = (0..nseg).filter(|&s| lo[s].is_finite() && hi[s] == lo[s]).collect();
    Ok(raw
        .into_iter()
        .map(|r| Deviation {
            values: r
                .iter()
                .zip(&seg)
                .map(|(v, &s)| {
                    let span = hi[s] - lo[s];
                    if span > 0.0 {
                        (v - lo[s]) / span
                    } else {
                        0.0
                    }
                })
                .collect(),
            degenerate_segments: degenerate.clone(),
        })
        .collect())
}

/// Per-window estimates of one method with their IMU reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: String,
    pub t_mid: Vec<f64>,
    pub omega_hat: Vec<MotionParams>,
    pub omega_imu: Vec<Option<[f64; 3]>>,
    pub iters: Vec<usize>,
    pub wall_cost: Vec<u64>,
}

impl MethodRun {
    pub fn len(&self) -> usize {
        self.omega_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega_hat.is_empty()
    }

    pub fn errors(&self) -> Vec<Option<f64>> {
        self.omega_hat
            .iter()
            .zip(&self.omega_imu)
            .map(|(w, r)| r.map(|r| window_error(w, &r)))
            .collect()
    }

    /// RMSE over IMU-covered windows and the number of such windows.
    pub fn rmse_covered(&self) -> Result<(f64, usize)> {
        let e: Vec<f64> = self.errors().into_iter().flatten().collect();
        Ok((rmse(&e)?, e.len()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EstimateRow {
    method: String,
    window: usize,
    t_mid: f64,
    omega_x: f64,
    omega_y: f64,
    omega_z: f64,
    imu_x: Option<f64>,
    imu_y: Option<f64>,
    imu_z: Option<f64>,
    iters: usize,
    wall_cost: u64,
}

pub fn write_estimates_csv(path: &Path, runs: &[MethodRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for run in runs {
        for k in 0..run.len() {
            let imu = run.omega_imu[k];
            w.serialize(EstimateRow {
                method: run.method.clone(),
                window: k,
                t_mid: run.t_mid[k],
                omega_x: run.omega_hat[k].0[0],
                omega_y: run.omega_hat[k].0[1],
                omega_z: run.omega_hat[k].0[2],
                imu_x: imu.map(|v| v[0]),
                imu_y: imu.map(|v| v[1]),
                imu_z: imu.map(|v| v[2]),
                iters: run.iters[k],
                wall_cost: run.wall_cost[k],
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads runs back in first-appearance order of their method ids.
pub fn read_estimates_csv(path: &Path) -> Result<Vec<MethodRun>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut runs: Vec<MethodRun> = Vec::new();
    for row in r.deserialize::<EstimateRow>() {
        let row = row?;
        let idx = match runs.iter().position(|m| m.method == row.method) {
            Some(i) => i,
            None => {
                runs.push(MethodRun {
                    method: row.method.clone(),
                    t_mid: vec![],
                    omega_hat: vec![],
                    omega_imu: vec![],
                    iters: vec![],
                    wall_cost: vec![],
                });
                runs.len() - 1
            }
        };
        let run = &mut runs[idx];
        if row.window != run.len() {
            return Err(Error::Misaligned(format!(
                "{}: window {} out of order in {}",
                row.method,
                row.window,
                path.display()
            )));
        }
        run.t_mid.push(row.t_mid);
        run.omega_hat
            .push(MotionParams::new(row.omega_x, row.omega_y, row.omega_z));
        run.omega_imu.push(match (row.imu_x, row.imu_y, row.imu_z) {
            (Some(x), Some(y), Some(z)) => Some([x, y, z]),
            _ => None,
        });
        run.iters.push(row.iters);
        run.wall_cost.push(row.wall_cost);
    }
    Ok(runs)
}

/// Raw engine and baseline quantities for one simulated run; every derived
/// percentage is recomputed from these numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimComparison {
    /// `(metric, engine, baseline)`.
    pub rows: Vec<(String, f64, f64)>,
    pub windows: usize,
    pub clock_mhz: f64,
}

impl SimComparison {
    pub fn get(&self, metric: &str) -> Option<(f64, f64)> {
        self.rows.iter().find(|r| r.0 == metric).map(|r| (r.1, r.2))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "engine", "baseline"])?;
        w.write_record([
            "windows".to_string(),
            self.windows.to_string(),
            self.windows.to_string(),
        ])?;
        w.write_record([
            "clock_mhz".to_string(),
            self.clock_mhz.to_string(),
            self.clock_mhz.to_string(),
        ])?;
        for (m, e, b) in &self.rows {
            w.write_record([m.clone(), e.to_string(), b.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = SimComparison::default();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: rec.position().map_or(0, |p| p.line() as usize),
                    msg: e.to_string(),
                })
            };
            let metric = rec.get(0).unwrap_or("").to_string();
            let (e, b) = (num(1)?, num(2)?);
            match metric.as_str() {
                "windows" => out.windows = e as usize,
                "clock_mhz" => out.clock_mhz = e,
                _ => out.rows.push((metric, e, b)),
            }
        }
        Ok(out)
    }
}

/// `1 − engine/baseline` in percent (0 when both are zero).
pub fn reduction_pct(engine: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - engine / baseline)
    }
}

/// Writes `rmse.csv`, `deviation.csv` (when a `full` run and at least one
/// other method are present), `comparison.csv` (when `sim` is given) and
/// `summary.txt` into `dir`.
pub fn report(dir: &Path, runs: &[MethodRun], sim: Option<&SimComparison>, realtime_bound_ms: f64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut summary = String::new();

    if let Some(first) = runs.first() {
        for r in runs {
            check_aligned(r.len(), first.len(), &format!("window count of {}", r.method))?;
        }
    }

    let p = dir.join("rmse.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["method", "rmse_rad_s", "rmse_deg_s", "windows", "imu_covered"])?;
    for r in runs {
        match r.rmse_covered() {
            Ok((v, covered)) => {
                w.write_record([
                    r.method.clone(),
                    format!("{v:.6}"),
                    format!("{:.6}", v.to_degrees()),
                    r.len().to_string(),
                    covered.to_string(),
                ])?;
                let _ = writeln!(
                    summary,
                    "rmse {:<10} {v:.6} rad/s ({:.4} deg/s) over {covered}/{} windows",
                    r.method,
                    v.to_degrees(),
                    r.len()
                );
            }
            Err(_) => {
                w.write_record([r.method.clone(), "".into(), "".into(), r.len().to_string(), "0".into()])?;
                let _ = writeln!(summary, "rmse {:<10} n/a (no IMU-covered windows)", r.method);
            }
        }
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    let full = runs.iter().find(|r| r.method == "full");
    let others: Vec<&MethodRun> = runs.iter().filter(|r| r.method != "full").collect();
    if let (Some(full), false) = (full, others.is_empty()) {
        let covered: Vec<usize> = (0..full.len())
            .filter(|&k| runs.iter().all(|r| r.omega_imu[k].is_some()))
            .collect();
        if !covered.is_empty() {
            let err = |r: &MethodRun| -> Vec<f64> {
                let e = r.errors();
                covered.iter().map(|&k| e[k].unwrap_or(0.0)).collect()
            };
            let t0 = full.t_mid[covered[0]];
            let ts: Vec<f64> = covered.iter().map(|&k| full.t_mid[k] - t0).collect();
            let bounds = segment_bounds(ts.last().copied().unwrap_or(0.0));
            let e_full = err(full);
            let errs: Vec<Vec<f64>> = others.iter().map(|r| err(r)).collect();
            let refs: Vec<&[f64]> = errs.iter().map(|v| v.as_slice()).collect();
            let devs = deviation_metric_shared(&refs, &e_full, &ts, &bounds)?;
            let p = dir.join("deviation.csv");
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["method", "window", "t", "deviation"])?;
            for (r, d) in others.iter().zip(&devs) {
                for (i, &k) in covered.iter().enumerate() {
                    w.write_record([
                        r.method.clone(),
                        k.to_string(),
                        format!("{:.6}", ts[i]),
                        format!("{:.6}", d.values[i]),
                    ])?;
                }
                let mean = d.values.iter().sum::<f64>() / d.values.len() as f64;
                let _ = writeln!(summary, "mean deviation {:<10} {mean:.6}", r.method);
            }
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
    }

    if let Some(sim) = sim {
        let p = dir.join("comparison.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["metric", "engine", "baseline", "reduction_pct"])?;
        for (m, e, b) in &sim.rows {
            w.write_record([
                m.clone(),
                e.to_string(),
                b.to_string(),
                format!("{:.4}", reduction_pct(*e, *b)),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        for key in [
            "accesses_total",
            "cycles",
            "energy_mem_rw_pj",
            "energy_logic_leak_pj",
            "energy_total_pj",
        ] {
            if let Some((e, b)) = sim.get(key) {
                let _ = writeln!(
                    summary,
                    "{key:<22} engine {e:.4e} baseline {b:.4e} reduction {:.2}%",
                    reduction_pct(e, b)
                );
            }
        }
        if let (Some((mean, _)), Some((max, _))) = (sim.get("mean_window_cycles"), sim.get("max_window_cycles")) {
            let to_ms = |c: f64| c / (sim.clock_mhz * 1e3);
            let verdict = if to_ms(mean) <= realtime_bound_ms {
                "meets"
            } else {
                "misses"
            };
            let _ = writeln!(
                summary,
                "mean window latency {:.4} ms (max {:.4} ms) {verdict} the {realtime_bound_ms} ms real-time bound",
                to_ms(mean),
                to_ms(max)
            );
        }
    }

    let p = dir.join("summary.txt");
    std::fs::write(&p, summary).map_err(|e| Error::io(&p, e))
}
