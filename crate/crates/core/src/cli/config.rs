//! Run configuration: TOML file with sections, overridden by command-line
//! flags. Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accumulation::NumericMode;
use crate::contrast::DEFAULT_SIGMA;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_REALTIME_BOUND_MS;
use crate::events::CameraIntrinsics;
use crate::optimizer::OptimizerConfig;
use crate::scheduler::{Schedule, ScheduleMode, DEFAULT_STAGE_CAP, DEFAULT_TAUS, DEFAULT_WINDOW_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub window: WindowConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerSection,
    pub engine: EngineSection,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("results"),
            data: DataConfig::default(),
            window: WindowConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerSection::default(),
            engine: EngineSection::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub events: PathBuf,
    /// Optional IMU reference; empty disables accuracy metrics.
    pub imu: PathBuf,
    pub calib: PathBuf,
    pub width: usize,
    pub height: usize,
    /// Column of the first gyroscope value in the IMU file.
    pub gyro_column: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            events: PathBuf::from("events.txt"),
            imu: PathBuf::from("imu.txt"),
            calib: PathBuf::from("calib.txt"),
            width: 240,
            height: 180,
            gyro_column: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub size: usize,
    /// Process at most this many windows (0 = all).
    pub max_windows: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            size: 40_000,
            max_windows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Methods run by `estimate`: any of `full`, `fixed`, `adaptive`.
    pub methods: Vec<String>,
    pub taus: Vec<f64>,
    pub fixed_iters: Vec<usize>,
    /// Threshold of the single full-resolution stage.
    pub full_tau: f64,
    pub sigma: f64,
    pub stage_cap: usize,
    pub window_cap: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            methods: vec!["full".into(), "fixed".into(), "adaptive".into()],
            taus: DEFAULT_TAUS.to_vec(),
            fixed_iters: vec![DEFAULT_STAGE_CAP; 3],
            full_tau: DEFAULT_TAUS[2],
            sigma: DEFAULT_SIGMA,
            stage_cap: DEFAULT_STAGE_CAP,
            window_cap: DEFAULT_WINDOW_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub initial_step: f64,
    pub max_halvings: u32,
    pub max_expansions: u32,
    pub max_probes: u32,
    pub parabolic: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            initial_step: d.initial_step,
            max_halvings: d.max_halvings,
            max_expansions: d.max_expansions,
            max_probes: d.max_probes,
            parabolic: d.parabolic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub enabled: bool,
    pub baseline: bool,
    /// Optional energy-constant table; empty uses the built-in values.
    pub energy_table: PathBuf,
    /// `float` or `integer`.
    pub numeric: String,
    pub local_accumulation: bool,
    pub pending_merge: bool,
    /// Compare every simulated evaluation against the dense reference.
    pub cross_check: bool,
    /// Method whose trajectory `simulate` replays.
    pub replay_method: String,
    pub realtime_bound_ms: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            enabled: true,
            baseline: true,
            energy_table: PathBuf::new(),
            numeric: "float".into(),
            local_accumulation: true,
            pending_merge: true,
            cross_check: true,
            replay_method: "adaptive".into(),
            realtime_bound_ms: DEFAULT_REALTIME_BOUND_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// True angular velocity (rad/s).
    pub omega: [f64; 3],
    /// Sequence length (s).
    pub duration: f64,
    /// Number of random edge segments in the scene texture.
    pub segments: usize,
    /// Fraction of uniformly random events.
    pub noise: f64,
    /// Focal length in pixels (0 = 0.83·width).
    pub focal: f64,
    /// IMU sample rate (Hz).
    pub imu_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            omega: [0.4, -0.3, 0.6],
            duration: 0.5,
            segments: 1500,
            noise: 0.0,
            focal: 0.0,
            imu_rate: 1000.0,
        }
    }
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<ScheduleMode>,
    pub tau: Option<Vec<f64>>,
    pub windows: Option<usize>,
    pub engine: Option<bool>,
    pub baseline: Option<bool>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Defaults, then the file (if any), then the overrides.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg = Self::parse(&text)?;
                let base = p.parent().unwrap_or(Path::new("."));
                cfg.data.events = resolve(base, &cfg.data.events);
                cfg.data.imu = resolve(base, &cfg.data.imu);
                cfg.data.calib = resolve(base, &cfg.data.calib);
                cfg.engine.energy_table = resolve(base, &cfg.engine.energy_table);
                cfg.out = resolve(base, &cfg.out);
                cfg
            }
            None => Self::default(),
        };
        cfg.apply(ov);
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(m) = ov.mode {
            self.schedule.methods = vec![method_name(m).into()];
            self.engine.replay_method = method_name(m).into();
        }
        if let Some(t) = &ov.tau {
            self.schedule.taus = t.clone();
        }
        if let Some(w) = ov.windows {
            self.window.max_windows = w;
        }
        if let Some(e) = ov.engine {
            self.engine.enabled = e;
        }
        if let Some(b) = ov.baseline {
            self.engine.baseline = b;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            initial_step: self.optimizer.initial_step,
            max_halvings: self.optimizer.max_halvings,
            max_expansions: self.optimizer.max_expansions,
            max_probes: self.optimizer.max_probes,
            parabolic: self.optimizer.parabolic,
        }
    }

    pub fn numeric_mode(&self) -> Result<NumericMode> {
        match self.engine.numeric.as_str() {
            "float" => Ok(NumericMode::Float),
            "integer" => Ok(NumericMode::DEFAULT_INTEGER),
            other => Err(Error::Config(format!(
                "numeric mode must be float or integer, got {other:?}"
            ))),
        }
    }

    /// Schedule for a method id.
    pub fn schedule_for(&self, method: &str, intr: &CameraIntrinsics) -> Result<Schedule> {
        let s = &self.schedule;
        let mut schedule = match method {
            "full" => Schedule::full_resolution(intr, s.full_tau, s.sigma)?,
            "fixed" => Schedule::fixed(intr, &s.fixed_iters, s.sigma)?,
            "adaptive" => Schedule::adaptive_with(intr, &s.taus, s.sigma)?,
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        };
        for st in &mut schedule.stages {
            st.max_iters = s.stage_cap;
        }
        schedule.max_window_iters = s.window_cap;
        schedule.validate()?;
        Ok(schedule)
    }

    /// Checks values and the existence of input files needed by `command`.
    pub fn validate(&self, needs_data: bool) -> Result<()> {
        if self.window.size == 0 {
            return Err(Error::Config("window.size must be positive".into()));
        }
        if self.schedule.methods.is_empty() {
            return Err(Error::Config("schedule.methods is empty".into()));
        }
        self.numeric_mode()?;
        if needs_data {
            for (key, p) in [("data.events", &self.data.events), ("data.calib", &self.data.calib)] {
                if !p.is_file() {
                    return Err(Error::Config(format!("{key}: file {} does not exist", p.display())));
                }
            }
            if !self.data.imu.as_os_str().is_empty() && !self.data.imu.is_file() {
                return Err(Error::Config(format!(
                    "data.imu: file {} does not exist (set imu = \"\" to run without a reference)",
                    self.data.imu.display()
                )));
            }
            if !self.engine.energy_table.as_os_str().is_empty() && !self.engine.energy_table.is_file() {
                return Err(Error::Config(format!(
                    "engine.energy_table: file {} does not exist",
                    self.engine.energy_table.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn method_name(m: ScheduleMode) -> &'static str {
    match m {
        ScheduleMode::Fixed => "fixed",
        ScheduleMode::Adaptive => "adaptive",
        ScheduleMode::FullResolution => "full",
    }
}
