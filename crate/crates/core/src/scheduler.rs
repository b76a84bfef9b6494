//! Coarse-to-fine stage control.
//!
//! The adaptive controller stays in a stage while each update improves the
//! objective by at least `τ_s` relative to the previous value, then promotes
//! to the next finer stage; per-stage and per-window iteration caps bound
//! the work. Fixed schedules run a preset number of updates per stage.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrast::{make_kernel_with_sigma, GaussianKernel, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::events::{CameraIntrinsics, EventWindow};
use crate::optimizer::{update, warm_start, OptState, OptimizerConfig};
use crate::pipeline::ObjectiveBackend;
use crate::warp::{MotionParams, StageScale};

pub const DEFAULT_SCALES: [f64; 3] = [0.25, 0.5, 1.0];
pub const DEFAULT_TAUS: [f64; 3] = [0.02, 0.01, 0.005];
pub const DEFAULT_STAGE_CAP: usize = 50;
pub const DEFAULT_WINDOW_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub scale: StageScale,
    /// Retention ratio of the pixel-group sort.
    pub rho: f64,
    /// Relative-gain threshold for staying in the stage.
    pub tau: f64,
    pub kernel: GaussianKernel,
    pub max_iters: usize,
}

impl StageConfig {
    /// Stage at scale `s` with `ρ = s` and the scale's default kernel length.
    pub fn new(s: f64, intr: &CameraIntrinsics, tau: f64, sigma: f64) -> Result<Self> {
        let scale = StageScale::new(s, intr.width, intr.height);
        Ok(Self {
            scale,
            rho: s,
            tau,
            kernel: make_kernel_with_sigma(&scale, sigma)?,
            max_iters: DEFAULT_STAGE_CAP,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Fixed,
    Adaptive,
    FullResolution,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "adaptive" => Ok(Self::Adaptive),
            "full" | "full_resolution" | "full-resolution" => Ok(Self::FullResolution),
            other => Err(Error::Config(format!("unknown schedule mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Adaptive => "adaptive",
            Self::FullResolution => "full_resolution",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub stages: Vec<StageConfig>,
    /// Updates per stage in fixed mode.
    pub fixed_iters: Vec<usize>,
    pub max_window_iters: usize,
}

impl Schedule {
    /// Three-stage adaptive schedule with default scales, thresholds and caps.
    pub fn adaptive(intr: &CameraIntrinsics) -> Result<Self> {
        Self::adaptive_with(intr, &DEFAULT_TAUS, DEFAULT_SIGMA)
    }

    pub fn adaptive_with(intr: &CameraIntrinsics, taus: &[f64], sigma: f64) -> Result<Self> {
        if taus.len() != DEFAULT_SCALES.len() {
            return Err(Error::Config(format!(
                "expected {} thresholds, got {}",
                DEFAULT_SCALES.len(),
                taus.len()
            )));
        }
        let stages = DEFAULT_SCALES
            .iter()
            .zip(taus)
            .map(|(&s, &tau)| StageConfig::new(s, intr, tau, sigma))
            .collect::<Result<Vec<_>>>()?;
        let schedule = Self {
            mode: ScheduleMode::Adaptive,
            fixed_iters: vec![DEFAULT_STAGE_CAP; stages.len()],
            stages,
            max_window_iters: DEFAULT_WINDOW_CAP,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Preset update counts over the default stages.
    pub fn fixed(intr: &CameraIntrinsics, iters: &[usize], sigma: f64) -> Result<Self> {
        let mut schedule = Self::adaptive_with(intr, &DEFAULT_TAUS, sigma)?;
        schedule.mode = ScheduleMode::Fixed;
        schedule.fixed_iters = iters.to_vec();
        schedule.validate()?;
        Ok(schedule)
    }

    /// Single full-resolution stage driven by the gain rule.
    pub fn full_resolution(intr: &CameraIntrinsics, tau: f64, sigma: f64) -> Result<Self> {
        let schedule = Self {
            mode: ScheduleMode::FullResolution,
            stages: vec![StageConfig::new(1.0, intr, tau, sigma)?],
            fixed_iters: vec![DEFAULT_STAGE_CAP],
            max_window_iters: DEFAULT_WINDOW_CAP,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("schedule has no stages".into());
        }
        if self.fixed_iters.len() != self.stages.len() {
            return bad(format!(
                "fixed_iters has {} entries for {} stages",
                self.fixed_iters.len(),
                self.stages.len()
            ));
        }
        for pair in self.stages.windows(2) {
            if !(pair[0].scale.s < pair[1].scale.s) {
                return bad("stage scales must be strictly increasing".into());
            }
        }
        for st in &self.stages {
            if st.tau.is_nan() {
                return bad("threshold must not be NaN".into());
            }
            if !(st.rho > 0.0 && st.rho <= 1.0) {
                return bad(format!("retention ratio {} outside (0, 1]", st.rho));
            }
            if st.max_iters == 0 {
                return bad("stage cap must be positive".into());
            }
        }
        if self.max_window_iters == 0 {
            return bad("window cap must be positive".into());
        }
        Ok(())
    }
}

/// Why the controller left a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Departure {
    /// Relative gain fell below the stage threshold.
    Gain,
    /// Stage iteration cap reached.
    StageCap,
    /// Window iteration cap reached.
    WindowCap,
    /// Preset update count of a fixed schedule reached.
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    Stay,
    Promote(Departure),
    Terminate(Departure),
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let reason = |d: &Departure| match d {
            Departure::Gain => "gain",
            Departure::StageCap => "stage_cap",
            Departure::WindowCap => "window_cap",
            Departure::Budget => "budget",
        };
        match self {
            Decision::Stay => f.write_str("stay"),
            Decision::Promote(d) => write!(f, "promote:{}", reason(d)),
            Decision::Terminate(d) => write!(f, "terminate:{}", reason(d)),
        }
    }
}

/// `(V − V_prev)/|V_prev|`, with `+∞` (improvement from zero) or `0` when
/// `V_prev = 0`.
pub fn stage_gain(v: f64, v_prev: f64) -> f64 {
    if v_prev == 0.0 {
        if v > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        (v - v_prev) / v_prev.abs()
    }
}

/// Adaptive decision after an update.
pub fn decide(
    gain: f64,
    stage: &StageConfig,
    stage_iters: usize,
    window_iters: usize,
    window_cap: usize,
    is_last_stage: bool,
) -> Decision {
    let depart = |d| {
        if is_last_stage {
            Decision::Terminate(d)
        } else {
            Decision::Promote(d)
        }
    };
    if window_iters >= window_cap {
        Decision::Terminate(Departure::WindowCap)
    } else if gain < stage.tau {
        depart(Departure::Gain)
    } else if stage_iters >= stage.max_iters {
        depart(Departure::StageCap)
    } else {
        Decision::Stay
    }
}

/// One update of the optimizer as seen by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub window: usize,
    pub stage: usize,
    pub scale: f64,
    /// 1-based update index within the stage.
    pub iter: usize,
    pub variance: f64,
    pub gain: f64,
    pub omega: MotionParams,
    pub work_units: u64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub omega_hat: MotionParams,
    pub per_stage_iters: Vec<usize>,
    /// Work units of one update in each stage (0 for stages never entered).
    pub stage_work: Vec<u64>,
    pub trace: Vec<TraceEntry>,
    pub wall_cost: u64,
    pub evaluations: u64,
}

impl WindowResult {
    pub fn total_iters(&self) -> usize {
        self.per_stage_iters.iter().sum()
    }
}

/// Runs one window under `schedule`, starting at `omega0`.
pub fn run_window(
    win: &EventWindow,
    omega0: MotionParams,
    schedule: &Schedule,
    backend: &mut dyn ObjectiveBackend,
    cfg: &OptimizerConfig,
) -> Result<WindowResult> {
    match schedule.mode {
        ScheduleMode::Fixed => run_stages(win, omega0, schedule, backend, cfg, true),
        ScheduleMode::Adaptive | ScheduleMode::FullResolution => run_stages(win, omega0, schedule, backend, cfg, false),
    }
}

pub fn run_adaptive(
    win: &EventWindow,
    omega0: MotionParams,
    schedule: &Schedule,
    backend: &mut dyn ObjectiveBackend,
    cfg: &OptimizerConfig,
) -> Result<WindowResult> {
    run_stages(win, omega0, schedule, backend, cfg, false)
}

pub fn run_fixed(
    win: &EventWindow,
    omega0: MotionParams,
    schedule: &Schedule,
    backend: &mut dyn ObjectiveBackend,
    cfg: &OptimizerConfig,
) -> Result<WindowResult> {
    run_stages(win, omega0, schedule, backend, cfg, true)
}

fn run_stages(
    win: &EventWindow,
    omega0: MotionParams,
    schedule: &Schedule,
    backend: &mut dyn ObjectiveBackend,
    cfg: &OptimizerConfig,
    fixed: bool,
) -> Result<WindowResult> {
    schedule.validate()?;
    let n_stages = schedule.stages.len();
    let mut state = OptState::new(omega0, cfg);
    let mut per_stage_iters = vec![0; n_stages];
    let mut stage_work = vec![0; n_stages];
    let mut trace = Vec::new();
    let mut evaluations = 0u64;
    let mut window_iters = 0usize;
    let last_budgeted = (0..n_stages).rev().find(|&k| schedule.fixed_iters[k] > 0);

    'stages: for (k, stage) in schedule.stages.iter().enumerate() {
        if fixed && schedule.fixed_iters[k] == 0 {
            continue;
        }
        let info = backend.enter_stage(win, stage, &state.omega)?;
        stage_work[k] = info.work_units();
        state.enter_stage(cfg);
        let entry = backend.evaluate(win, &state.omega)?;
        evaluations += 1;
        state.current = Some(entry);
        let mut v_prev = entry.variance;
        let is_last = if fixed {
            Some(k) == last_budgeted
        } else {
            k + 1 == n_stages
        };

        loop {
            let (next, obj) = update(state, cfg, |w: &MotionParams| {
                evaluations += 1;
                backend.evaluate(win, w)
            })?;
            state = next;
            per_stage_iters[k] += 1;
            window_iters += 1;
            let gain = stage_gain(obj.variance, v_prev);
            v_prev = obj.variance;
            let decision = if fixed {
                if window_iters >= schedule.max_window_iters {
                    Decision::Terminate(Departure::WindowCap)
                } else if per_stage_iters[k] >= schedule.fixed_iters[k] {
                    if is_last {
                        Decision::Terminate(Departure::Budget)
                    } else {
                        Decision::Promote(Departure::Budget)
                    }
                } else {
                    Decision::Stay
                }
            } else {
                decide(
                    gain,
                    stage,
                    per_stage_iters[k],
                    window_iters,
                    schedule.max_window_iters,
                    is_last,
                )
            };
            trace.push(TraceEntry {
                window: 0,
                stage: k,
                scale: stage.scale.s,
                iter: per_stage_iters[k],
                variance: obj.variance,
                gain,
                omega: state.omega,
                work_units: stage_work[k],
                decision,
            });
            match decision {
                Decision::Stay => {}
                Decision::Promote(_) => break,
                Decision::Terminate(_) => break 'stages,
            }
        }
    }

    let wall_cost = per_stage_iters
        .iter()
        .zip(&stage_work)
        .map(|(&i, &w)| i as u64 * w)
        .sum();
    let res = WindowResult {
        omega_hat: state.omega,
        per_stage_iters,
        stage_work,
        trace,
        wall_cost,
        evaluations,
    };
    #[cfg(debug_assertions)]
    if let Err(msg) = check_trace_conformance(&res, schedule) {
        panic!("controller trace violates its own rules: {msg}");
    }
    Ok(res)
}

/// Runs consecutive windows, each warm-started from the previous estimate.
pub fn run_sequence(
    windows: &[EventWindow],
    schedule: &Schedule,
    backend: &mut dyn ObjectiveBackend,
    cfg: &OptimizerConfig,
    initial: Option<MotionParams>,
) -> Result<Vec<WindowResult>> {
    let mut prev = initial;
    let mut out = Vec::with_capacity(windows.len());
    for (i, win) in windows.iter().enumerate() {
        let mut res = run_window(win, warm_start(prev), schedule, backend, cfg)?;
        for e in &mut res.trace {
            e.window = i;
        }
        prev = Some(res.omega_hat);
        out.push(res);
    }
    Ok(out)
}

/// Checks a window trace against the controller rules of `schedule`.
pub fn check_trace_conformance(res: &WindowResult, schedule: &Schedule) -> std::result::Result<(), String> {
    let n = schedule.stages.len();
    if res.per_stage_iters.len() != n || res.stage_work.len() != n {
        return Err("per-stage vectors do not match the stage count".into());
    }
    let fixed = schedule.mode == ScheduleMode::Fixed;
    let mut counts = vec![0usize; n];
    let mut prev_stage: Option<usize> = None;
    for (i, e) in res.trace.iter().enumerate() {
        if e.stage >= n {
            return Err(format!("entry {i}: unknown stage {}", e.stage));
        }
        if let Some(p) = prev_stage {
            if e.stage < p {
                return Err(format!("entry {i}: returned to coarser stage {}", e.stage));
            }
            if e.stage > p && counts[e.stage] > 0 {
                return Err(format!("entry {i}: stage {} re-entered", e.stage));
            }
        }
        prev_stage = Some(e.stage);
        counts[e.stage] += 1;
        if e.iter != counts[e.stage] {
            return Err(format!("entry {i}: iteration index {} out of sequence", e.iter));
        }
        let stage = &schedule.stages[e.stage];
        if e.work_units != res.stage_work[e.stage] {
            return Err(format!("entry {i}: work units differ from the stage size"));
        }
        let last_of_stage = res.trace.get(i + 1).is_none_or(|nx| nx.stage != e.stage);
        let last_overall = i + 1 == res.trace.len();
        match e.decision {
            Decision::Stay => {
                if last_of_stage {
                    return Err(format!("entry {i}: stage ends without a departure"));
                }
                if !fixed && (e.gain < stage.tau || e.iter >= stage.max_iters) {
                    return Err(format!("entry {i}: stayed with gain {} / iter {}", e.gain, e.iter));
                }
                if fixed && e.iter >= schedule.fixed_iters[e.stage] {
                    return Err(format!("entry {i}: stayed past the preset budget"));
                }
            }
            Decision::Promote(d) | Decision::Terminate(d) => {
                if !last_of_stage {
                    return Err(format!("entry {i}: departure followed by more updates in the stage"));
                }
                let terminate = matches!(e.decision, Decision::Terminate(_));
                if terminate != last_overall {
                    return Err(format!("entry {i}: termination does not end the trace"));
                }
                let ok = match d {
                    Departure::Gain => !fixed && e.gain < stage.tau,
                    Departure::StageCap => !fixed && e.gain >= stage.tau && e.iter == stage.max_iters,
                    Departure::Budget => fixed && e.iter == schedule.fixed_iters[e.stage],
                    Departure::WindowCap => terminate,
                };
                if !ok {
                    return Err(format!("entry {i}: departure {d:?} not justified"));
                }
                if terminate && d != Departure::WindowCap && !fixed && e.stage + 1 != n {
                    return Err(format!("entry {i}: terminated before the finest stage"));
                }
            }
        }
    }
    if counts != res.per_stage_iters {
        return Err(format!(
            "trace counts {counts:?} differ from per-stage iterations {:?}",
            res.per_stage_iters
        ));
    }
    for (k, &c) in counts.iter().enumerate() {
        let cap = if fixed {
            schedule.fixed_iters[k]
        } else {
            schedule.stages[k].max_iters
        };
        if c > cap {
            return Err(format!("stage {k} ran {c} updates, cap {cap}"));
        }
    }
    if res.total_iters() > schedule.max_window_iters {
        return Err("window cap exceeded".into());
    }
    let cost: u64 = counts.iter().zip(&res.stage_work).map(|(&c, &w)| c as u64 * w).sum();
    if cost != res.wall_cost {
        return Err(format!("wall cost {} not reproducible ({cost})", res.wall_cost));
    }
    Ok(())
}

impl std::str::FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let reason = |r: &str| match r {
            "gain" => Ok(Departure::Gain),
            "stage_cap" => Ok(Departure::StageCap),
            "window_cap" => Ok(Departure::WindowCap),
            "budget" => Ok(Departure::Budget),
            other => Err(Error::Config(format!("unknown departure reason {other:?}"))),
        };
        match s.split_once(':') {
            None if s == "stay" => Ok(Decision::Stay),
            Some(("promote", r)) => Ok(Decision::Promote(reason(r)?)),
            Some(("terminate", r)) => Ok(Decision::Terminate(reason(r)?)),
            _ => Err(Error::Config(format!("unknown decision {s:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    window: usize,
    stage: usize,
    scale: f64,
    iter: usize,
    variance: f64,
    gain: f64,
    omega_x: f64,
    omega_y: f64,
    omega_z: f64,
    work_units: u64,
    decision: String,
}

/// Per-update trace as CSV.
pub fn write_trace_csv<W: Write>(out: W, results: &[WindowResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for res in results {
        for e in &res.trace {
            w.serialize(TraceRow {
                window: e.window,
                stage: e.stage,
                scale: e.scale,
                iter: e.iter,
                variance: e.variance,
                gain: e.gain,
                omega_x: e.omega.0[0],
                omega_y: e.omega.0[1],
                omega_z: e.omega.0[2],
                work_units: e.work_units,
                decision: e.decision.to_string(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<TraceRow>()
        .map(|row| {
            let row = row?;
            Ok(TraceEntry {
                window: row.window,
                stage: row.stage,
                scale: row.scale,
                iter: row.iter,
                variance: row.variance,
                gain: row.gain,
                omega: MotionParams::new(row.omega_x, row.omega_y, row.omega_z),
                work_units: row.work_units,
                decision: row.decision.parse()?,
            })
        })
        .collect()
}

/// `(window, stage, ω at the start of the update)` for every traced update.
/// Each update starts where the previous one ended; the first starts at
/// `initial`.
pub fn replay_points(trace: &[TraceEntry], initial: MotionParams) -> Vec<(usize, usize, MotionParams)> {
    let mut before = initial;
    trace
        .iter()
        .map(|e| {
            let p = (e.window, e.stage, before);
            before = e.omega;
            p
        })
        .collect()
}
