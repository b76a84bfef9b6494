//! `cmax` command line: `synth`, `estimate`, `simulate`, `evaluate`.
//!
//! Settings come from built-in defaults, then the `--config` TOML file, then
//! flags. Every run writes `manifest_<command>.txt` (version, seed and the
//! resolved configuration) into the output directory.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

pub mod config;

use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

pub use config::{Overrides, RunConfig};

use crate::engine::{energy_estimate, EnergyTable, Engine, EngineConfig, EngineTrace, MemGroup};
use crate::error::{Error, Result};
use crate::eval::{read_estimates_csv, report, write_estimates_csv, MethodRun, SimComparison};
use crate::events::{
    load_calib, load_events, load_imu_columns, synth_scene, window_by_count, write_calib, write_events, write_imu,
    CameraIntrinsics, EventWindow, ImuSample, ImuTrack, Texture,
};
use crate::pipeline::{ObjectiveBackend, ReferenceBackend};
use crate::scheduler::{
    read_trace_csv, replay_points, run_sequence, write_trace_csv, ScheduleMode, TraceEntry, WindowResult,
};
use crate::warp::MotionParams;

#[derive(Debug, Parser)]
#[command(
    name = "cmax",
    version,
    about = "Coarse-to-fine contrast maximization for rotational event-camera motion"
)]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run a single method: full, fixed or adaptive
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Stage thresholds, comma separated (coarse to fine)
    #[arg(long, global = true, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Process at most this many windows
    #[arg(long, global = true)]
    pub windows: Option<usize>,
    /// Simulate the proposed engine
    #[arg(long, global = true, overrides_with = "no_engine")]
    pub engine: bool,
    #[arg(long, global = true)]
    pub no_engine: bool,
    /// Simulate the single-bank baseline
    #[arg(long, global = true, overrides_with = "no_baseline")]
    pub baseline: bool,
    #[arg(long, global = true)]
    pub no_baseline: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic rotating-scene dataset
    Synth,
    /// Estimate angular velocity per window for each configured method
    Estimate,
    /// Replay an estimation trajectory on the engine and baseline models
    Simulate,
    /// Build accuracy and efficiency reports from stored results
    Evaluate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Estimate => "estimate",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
        }
    }
}

fn toggle(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

impl Cli {
    pub fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            out: self.out.clone(),
            seed: self.seed,
            mode: self.mode.as_deref().map(str::parse::<ScheduleMode>).transpose()?,
            tau: self.tau.clone(),
            windows: self.windows,
            engine: toggle(self.engine, self.no_engine),
            baseline: toggle(self.baseline, self.no_baseline),
        })
    }
}

/// Exit code for an error: 1 for configuration problems, 2 for bad data.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnsupportedScale(_) | Error::KernelTooLarge { .. } | Error::Schedule(_) => 1,
        _ => 2,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main_entry() -> i32 {
    run_from(std::env::args_os())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides()?)?;
    cfg.validate(matches!(cli.command, Command::Estimate | Command::Simulate))?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_manifest(&cfg, cli.command)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Estimate => cmd_estimate(&cfg).map(|_| ()),
        Command::Simulate => cmd_simulate(&cfg).map(|_| ()),
        Command::Evaluate => cmd_evaluate(&cfg),
    }
}

fn write_manifest(cfg: &RunConfig, cmd: Command) -> Result<()> {
    let path = cfg.out.join(format!("manifest_{}.txt", cmd.name()));
    let body = format!(
        "# cmax {} {}\n# seed {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cmd.name(),
        cfg.seed,
        cfg.to_toml()
    );
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Loaded sensor data cut into windows.
pub struct Dataset {
    pub intr: CameraIntrinsics,
    pub windows: Vec<EventWindow>,
    pub imu: Option<ImuTrack>,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let intr = load_calib(&cfg.data.calib, cfg.data.width, cfg.data.height)?;
    let events = load_events(&cfg.data.events, &intr)?;
    let mut windows = window_by_count(&events, cfg.window.size);
    if cfg.window.max_windows > 0 {
        windows.truncate(cfg.window.max_windows);
    }
    let imu = if cfg.data.imu.as_os_str().is_empty() {
        None
    } else {
        Some(load_imu_columns(&cfg.data.imu, cfg.data.gyro_column)?)
    };
    Ok(Dataset { intr, windows, imu })
}

/// Writes `events.txt`, `imu.txt`, `calib.txt` and a ready-to-use
/// `config.toml` into the output directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth;
    let (w, h) = (cfg.data.width, cfg.data.height);
    let f = if s.focal > 0.0 { s.focal } else { 0.83 * w as f64 };
    let intr = CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h)?;
    if !(s.duration > 0.0) || !(0.0..1.0).contains(&s.noise) || !(s.imu_rate > 0.0) {
        return Err(Error::Config(
            "synth needs duration > 0, noise in [0, 1) and imu_rate > 0".into(),
        ));
    }
    let omega = MotionParams(s.omega);
    let texture = Texture::random_edges(&intr, s.segments, cfg.seed);
    let stream = synth_scene(&omega, &intr, s.duration, &texture, s.noise, cfg.seed.wrapping_add(1));

    let out = &cfg.out;
    write_events(out.join("events.txt"), &stream.events)?;
    write_calib(out.join("calib.txt"), &intr)?;
    let n_imu = (s.duration * s.imu_rate).ceil() as usize + 1;
    let samples: Vec<ImuSample> = (0..n_imu)
        .map(|k| ImuSample {
            t: k as f64 / s.imu_rate,
            omega: s.omega,
        })
        .collect();
    write_imu(out.join("imu.txt"), &samples)?;

    let mut gen = cfg.clone();
    gen.out = PathBuf::from(".");
    gen.data.events = "events.txt".into();
    gen.data.imu = "imu.txt".into();
    gen.data.calib = "calib.txt".into();
    gen.data.gyro_column = 1;
    let path = out.join("config.toml");
    std::fs::write(&path, gen.to_toml()).map_err(|e| Error::io(&path, e))?;
    println!(
        "synth: {} events, {} IMU samples in {}",
        stream.events.len(),
        samples.len(),
        out.display()
    );
    Ok(())
}

fn method_run(method: &str, data: &Dataset, results: &[WindowResult]) -> MethodRun {
    MethodRun {
        method: method.to_string(),
        t_mid: data.windows.iter().map(EventWindow::t_mid).collect(),
        omega_hat: results.iter().map(|r| r.omega_hat).collect(),
        omega_imu: data
            .windows
            .iter()
            .map(|w| data.imu.as_ref().and_then(|imu| imu.lookup(w.t_mid())))
            .collect(),
        iters: results.iter().map(WindowResult::total_iters).collect(),
        wall_cost: results.iter().map(|r| r.wall_cost).collect(),
    }
}

fn run_method(cfg: &RunConfig, data: &Dataset, method: &str) -> Result<Vec<WindowResult>> {
    let schedule = cfg.schedule_for(method, &data.intr)?;
    let mut backend = ReferenceBackend::new(data.intr).with_mode(cfg.numeric_mode()?);
    run_sequence(&data.windows, &schedule, &mut backend, &cfg.optimizer(), None)
}

/// Runs every configured method; writes `estimates.csv` and
/// `trace_<method>.csv`.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<Vec<MethodRun>> {
    let data = load_dataset(cfg)?;
    for m in &cfg.schedule.methods {
        cfg.schedule_for(m, &data.intr)?;
    }
    let results: Vec<Result<Vec<WindowResult>>> = cfg
        .schedule
        .methods
        .par_iter()
        .map(|m| run_method(cfg, &data, m))
        .collect();
    let mut runs = Vec::new();
    for (m, res) in cfg.schedule.methods.iter().zip(results) {
        let res = res?;
        let path = cfg.out.join(format!("trace_{m}.csv"));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_trace_csv(std::io::BufWriter::new(f), &res)?;
        let run = method_run(m, &data, &res);
        match run.rmse_covered() {
            Ok((v, n)) => println!(
                "{m}: {} windows, RMSE {v:.5} rad/s over {n} IMU-covered windows",
                run.len()
            ),
            Err(_) => println!("{m}: {} windows, no IMU reference", run.len()),
        }
        runs.push(run);
    }
    write_estimates_csv(&cfg.out.join("estimates.csv"), &runs)?;
    Ok(runs)
}

/// Replays traced updates on `backend`, returning per-window cycle counts
/// via `cycles` and the largest relative deviation from `check`.
fn replay(
    data: &Dataset,
    trace: &[TraceEntry],
    schedule: &crate::scheduler::Schedule,
    engine: &mut Engine,
    mut check: Option<&mut ReferenceBackend>,
) -> Result<(Vec<u64>, f64)> {
    let points = replay_points(trace, MotionParams::ZERO);
    let mut cycles = vec![0u64; data.windows.len()];
    let mut worst = 0.0f64;
    let mut current: Option<(usize, usize)> = None;
    for &(w, stage, omega) in &points {
        let win = data.windows.get(w).ok_or_else(|| {
            Error::Misaligned(format!(
                "trace window {w} beyond the {} loaded windows",
                data.windows.len()
            ))
        })?;
        let st = schedule
            .stages
            .get(stage)
            .ok_or_else(|| Error::Misaligned(format!("trace stage {stage} not in the schedule")))?;
        let before = engine.trace.cycles();
        if current != Some((w, stage)) {
            engine.begin_stage(win, st, &omega)?;
            if let Some(r) = check.as_deref_mut() {
                r.enter_stage(win, st, &omega)?;
            }
            current = Some((w, stage));
        }
        let stats = engine.iterate(win, &omega)?;
        if let Some(r) = check.as_deref_mut() {
            worst = worst.max(stats.max_rel_diff(&r.stats(win, &omega)?));
        }
        cycles[w] += engine.trace.cycles() - before;
    }
    Ok((cycles, worst))
}

/// Paired engine/baseline simulation of one method's trajectory.
pub struct SimOutput {
    pub engine: Option<EngineTrace>,
    pub baseline: Option<EngineTrace>,
    pub comparison: SimComparison,
    pub max_rel_diff: f64,
}

fn sim_rows(trace: &EngineTrace, window_cycles: &[u64], table: &EnergyTable) -> Vec<(String, f64)> {
    let acc = trace.totals();
    let cycles = trace.cycles();
    let e = energy_estimate(&acc, table.seconds(cycles), table);
    let mut rows = Vec::new();
    for g in MemGroup::ALL {
        let (r, w) = acc.get(g);
        rows.push((format!("{}_reads", g.name()), r as f64));
        rows.push((format!("{}_writes", g.name()), w as f64));
    }
    rows.push(("accesses_total".into(), acc.total() as f64));
    rows.push(("cycles".into(), cycles as f64));
    let n = window_cycles.len().max(1) as f64;
    rows.push((
        "mean_window_cycles".into(),
        window_cycles.iter().sum::<u64>() as f64 / n,
    ));
    rows.push((
        "max_window_cycles".into(),
        window_cycles.iter().copied().max().unwrap_or(0) as f64,
    ));
    rows.push(("energy_mem_rw_pj".into(), e.mem_rw_pj()));
    rows.push(("energy_logic_leak_pj".into(), e.logic_plus_leakage_pj()));
    rows.push(("energy_total_pj".into(), e.total_pj()));
    rows
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimOutput> {
    let data = load_dataset(cfg)?;
    let method = cfg.engine.replay_method.as_str();
    let schedule = cfg.schedule_for(method, &data.intr)?;
    let trace_path = cfg.out.join(format!("trace_{method}.csv"));
    let trace: Vec<TraceEntry> = if trace_path.is_file() {
        read_trace_csv(&trace_path)?
    } else {
        let res = run_method(cfg, &data, method)?;
        res.into_iter().flat_map(|r| r.trace).collect()
    };
    let table = if cfg.engine.energy_table.as_os_str().is_empty() {
        EnergyTable::default()
    } else {
        EnergyTable::load(&cfg.engine.energy_table)?
    };
    let mode = cfg.numeric_mode()?;

    let mut max_rel_diff = 0.0f64;
    let mut run_one = |config: EngineConfig| -> Result<(EngineTrace, Vec<u64>)> {
        let mut engine = Engine::new(data.intr, config);
        let mut reference = ReferenceBackend::new(data.intr)
            .with_mode(mode)
            .with_skip_full_res_sort(config.skip_full_res_sort);
        let check = cfg.engine.cross_check.then_some(&mut reference);
        let (cycles, diff) = replay(&data, &trace, &schedule, &mut engine, check)?;
        max_rel_diff = max_rel_diff.max(diff);
        Ok((engine.take_trace(), cycles))
    };

    let engine = if cfg.engine.enabled {
        let mut c = EngineConfig::camel();
        c.mode = mode;
        c.local_accumulation = cfg.engine.local_accumulation;
        c.pending_merge = cfg.engine.pending_merge;
        Some(run_one(c)?)
    } else {
        None
    };
    let baseline = if cfg.engine.baseline {
        let mut c = EngineConfig::baseline();
        c.mode = mode;
        Some(run_one(c)?)
    } else {
        None
    };

    let mut comparison = SimComparison {
        rows: Vec::new(),
        windows: data.windows.len(),
        clock_mhz: table.clock_mhz,
    };
    let e_rows = engine.as_ref().map(|(t, c)| sim_rows(t, c, &table));
    let b_rows = baseline.as_ref().map(|(t, c)| sim_rows(t, c, &table));
    if let Some(rows) = e_rows.as_ref().or(b_rows.as_ref()) {
        for (i, (name, _)) in rows.iter().enumerate() {
            let e = e_rows.as_ref().map_or(0.0, |r| r[i].1);
            let b = b_rows.as_ref().map_or(0.0, |r| r[i].1);
            comparison.rows.push((name.clone(), e, b));
        }
    }

    let out = &cfg.out;
    for (name, t) in [("engine", &engine), ("baseline", &baseline)] {
        if let Some((trace, cycles)) = t {
            let p = out.join(format!("{name}_trace.csv"));
            let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            trace.write_csv(std::io::BufWriter::new(f))?;
            let p = out.join(format!("{name}_latency.csv"));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
            writeln!(f, "window,cycles,ms").map_err(|e| Error::io(&p, e))?;
            for (w, c) in cycles.iter().enumerate() {
                writeln!(f, "{w},{c},{}", *c as f64 / (table.clock_mhz * 1e3)).map_err(|e| Error::io(&p, e))?;
            }
            f.flush().map_err(|e| Error::io(&p, e))?;
        }
    }
    comparison.write_csv(&out.join("sim.csv"))?;
    let p = out.join("consistency.txt");
    std::fs::write(&p, format!("max_rel_diff_vs_reference {max_rel_diff:e}\n")).map_err(|e| Error::io(&p, e))?;
    println!(
        "simulate: {} windows replayed, max relative deviation from reference {max_rel_diff:.3e}",
        data.windows.len()
    );

    let runs = match out.join("estimates.csv") {
        p if p.is_file() => read_estimates_csv(&p)?,
        _ => Vec::new(),
    };
    report(out, &runs, Some(&comparison), cfg.engine.realtime_bound_ms)?;
    Ok(SimOutput {
        engine: engine.map(|e| e.0),
        baseline: baseline.map(|b| b.0),
        comparison,
        max_rel_diff,
    })
}

/// Rebuilds the report from `estimates.csv` and, when present, `sim.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out;
    let est = out.join("estimates.csv");
    if !est.is_file() {
        return Err(Error::Config(format!(
            "{} not found; run `cmax estimate` first",
            est.display()
        )));
    }
    let runs = read_estimates_csv(&est)?;
    let sim_path = out.join("sim.csv");
    let sim = if sim_path.is_file() {
        Some(SimComparison::read_csv(&sim_path)?)
    } else {
        None
    };
    report(out, &runs, sim.as_ref(), cfg.engine.realtime_bound_ms)?;
    print!(
        "{}",
        std::fs::read_to_string(out.join("summary.txt")).map_err(|e| Error::io(out.join("summary.txt"), e))?
    );
    Ok(())
}
