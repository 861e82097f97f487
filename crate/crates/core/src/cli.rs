//! Command-line front end: config files, single runs, the sweep harness,
//! power-down on/off comparison, closed-form power calculators and trace export.
//!
//! Config files are flat `key = value` lines with dotted sections, e.g.
//!
//! ```text
//! device.preset = ddr4-2400-8gb-x4
//! device.ranks = 2
//! device.tXS_cycles = 408
//! controller.page_policy = closed_adaptive
//! workload.kind = phase
//! phase.density = sparse
//! phase.n_seq_bytes = 256
//! ```
//!
//! `#` starts a comment. Timing keys take `_ps` or `_cycles` suffixes,
//! currents `_mA`, voltages `_V`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::controller::{ControllerConfig, PagePolicy};
use crate::device::{DeviceConfig, PowerState};
use crate::engine::SimTime;
use crate::error::{ConfigError, Error};
use crate::power::{export_drampower_trace, selfrefresh_power_system, standby_power_system, CommandRecord, DimmPower, EnergyBreakdown};
use crate::sim::{simulate, PhaseResult, RunResult, SimOptions, Workload};
use crate::workload::{parse_trace, Density, PhaseConfig, PhaseSpec, SweepConfig};

/// Where the requests of a run come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSpec {
    Sweep(SweepConfig),
    Phase(PhaseSpec),
    Trace(PathBuf),
    Idle(SimTime),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub device: DeviceConfig,
    pub controller: ControllerConfig,
    pub workload: WorkloadSpec,
    pub seed: u64,
    pub out: PathBuf,
    /// Open one row per rank before the run starts.
    pub start_active: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            device: DeviceConfig::ddr4_2400_8gb_x4(),
            controller: ControllerConfig::default(),
            workload: WorkloadSpec::Sweep(SweepConfig::default()),
            seed: 1,
            out: PathBuf::from("out"),
            start_active: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| ConfigError::invalid(key, format!("{v:?}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::invalid(key, format!("{v:?} is not a boolean"))),
    }
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    let items: Result<Vec<T>, ConfigError> = v
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| f(s).ok_or_else(|| ConfigError::invalid(key, format!("bad list item {s:?}"))))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(ConfigError::invalid(key, "empty list"));
    }
    Ok(items)
}

fn timing_slot<'a>(t: &'a mut crate::device::Timing, name: &str) -> Option<&'a mut SimTime> {
    Some(match name {
        "tck" => &mut t.t_ck,
        "tccd" => &mut t.t_ccd,
        "trp" => &mut t.t_rp,
        "tras" => &mut t.t_ras,
        "trcd" => &mut t.t_rcd,
        "trl" => &mut t.t_rl,
        "twl" => &mut t.t_wl,
        "tburst" => &mut t.t_burst,
        "trtp" => &mut t.t_rtp,
        "twr" => &mut t.t_wr,
        "trrd" => &mut t.t_rrd,
        "trfc" => &mut t.t_rfc,
        "trefi" => &mut t.t_refi,
        "txp" => &mut t.t_xp,
        "txs" => &mut t.t_xs,
        "tcke" => &mut t.t_cke,
        _ => return None,
    })
}

fn current_slot<'a>(c: &'a mut crate::device::Currents, name: &str) -> Option<&'a mut f64> {
    Some(match name {
        "idd0" => &mut c.idd0,
        "ipp0" => &mut c.ipp0,
        "idd2n" => &mut c.idd2n,
        "idd3n" => &mut c.idd3n,
        "ipp3n" => &mut c.ipp3n,
        "idd2p" => &mut c.idd2p,
        "idd3p" => &mut c.idd3p,
        "idd5" => &mut c.idd5,
        "idd6" => &mut c.idd6,
        "idd4r" => &mut c.idd4r,
        "idd4w" => &mut c.idd4w,
        "ipp2n" => &mut c.ipp2n,
        "ipp3p" => &mut c.ipp3p,
        "ipp5" => &mut c.ipp5,
        "ipp6" => &mut c.ipp6,
        _ => return None,
    })
}

#[derive(Default)]
struct PhaseKeys {
    density: Option<Density>,
    itt_min: Option<SimTime>,
    itt_max: Option<SimTime>,
    n_seq_bytes: Option<u32>,
    bank_util: Option<u32>,
    duration: Option<SimTime>,
    addr_range: Option<u64>,
}

impl RunConfig {
    /// Parse config text. `base` resolves relative trace paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let Some((k, v)) = l.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("expected key = value, got {l:?}"),
                });
            };
            let k = k.trim().to_ascii_lowercase();
            let v = v.trim().to_string();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line, msg: "empty key".into() });
            }
            if pairs.iter().any(|(pk, _, _): &(String, String, usize)| *pk == k) {
                return Err(ConfigError::Syntax { line, msg: format!("duplicate key {k}") });
            }
            pairs.push((k, v, line));
        }

        let mut cfg = RunConfig::default();
        if let Some((_, v, _)) = pairs.iter().find(|(k, _, _)| k == "device.preset") {
            cfg.device = DeviceConfig::preset(v).ok_or_else(|| ConfigError::invalid("device.preset", format!("unknown preset {v:?}")))?;
        }
        let mut cycles: Vec<(String, u64)> = Vec::new();
        let mut kind: Option<String> = None;
        let mut trace: Option<PathBuf> = None;
        let mut idle: Option<SimTime> = None;
        let mut sweep = SweepConfig::default();
        let mut sweep_keys = false;
        let mut phase = PhaseKeys::default();
        let mut phase_keys = false;

        for (k, v, line) in &pairs {
            let (k, v, line) = (k.as_str(), v.as_str(), *line);
            let unknown = || ConfigError::UnknownKey { key: k.to_string(), line };
            let (section, name) = k.split_once('.').ok_or_else(unknown)?;
            match section {
                "device" => {
                    let g = &mut cfg.device.geometry;
                    match name {
                        "preset" => {}
                        "channels" => g.channels = parse_num(k, v)?,
                        "ranks" => g.ranks = parse_num(k, v)?,
                        "banks_per_rank" => g.banks_per_rank = parse_num(k, v)?,
                        "rows_per_bank" => g.rows_per_bank = parse_num(k, v)?,
                        "row_buffer_bytes" => g.row_buffer_bytes = parse_num(k, v)?,
                        "burst_bytes" => g.burst_bytes = parse_num(k, v)?,
                        "vdd_v" => cfg.device.voltages.vdd = parse_num(k, v)?,
                        "vpp_v" => cfg.device.voltages.vpp = parse_num(k, v)?,
                        _ => {
                            if let Some(t) = name.strip_suffix("_ps") {
                                let slot = timing_slot(&mut cfg.device.timing, t).ok_or_else(unknown)?;
                                *slot = SimTime(parse_num(k, v)?);
                            } else if let Some(t) = name.strip_suffix("_cycles") {
                                timing_slot(&mut cfg.device.timing, t).ok_or_else(unknown)?;
                                cycles.push((t.to_string(), parse_num(k, v)?));
                            } else if let Some(c) = name.strip_suffix("_ma") {
                                let slot = current_slot(&mut cfg.device.currents, c).ok_or_else(unknown)?;
                                *slot = parse_num(k, v)?;
                            } else {
                                return Err(unknown());
                            }
                        }
                    }
                }
                "controller" => match name {
                    "read_queue_depth" => cfg.controller.read_queue_depth = parse_num(k, v)?,
                    "write_queue_depth" => cfg.controller.write_queue_depth = parse_num(k, v)?,
                    "page_policy" => {
                        cfg.controller.page_policy = PagePolicy::parse(v)
                            .ok_or_else(|| ConfigError::invalid(k, format!("unknown policy {v:?}")))?
                    }
                    "powerdown" => cfg.controller.powerdown_enabled = parse_bool(k, v)?,
                    "address_map" => {
                        if !v.eq_ignore_ascii_case("RoRaBaCoCh") {
                            return Err(ConfigError::invalid(k, "only RoRaBaCoCh is supported"));
                        }
                    }
                    _ => return Err(unknown()),
                },
                "run" => match name {
                    "seed" => cfg.seed = parse_num(k, v)?,
                    "out" => cfg.out = PathBuf::from(v),
                    "start_active" => cfg.start_active = parse_bool(k, v)?,
                    _ => return Err(unknown()),
                },
                "workload" => match name {
                    "kind" => kind = Some(v.to_string()),
                    "trace" => trace = Some(base.join(v)),
                    "idle_us" => idle = Some(SimTime::us(parse_num(k, v)?)),
                    "idle_ps" => idle = Some(SimTime(parse_num(k, v)?)),
                    _ => return Err(unknown()),
                },
                "sweep" => {
                    sweep_keys = true;
                    match name {
                        "ranks" => sweep.ranks = parse_list(k, v, |s| s.parse().ok())?,
                        "page_policies" => sweep.page_policies = parse_list(k, v, PagePolicy::parse)?,
                        "densities" => sweep.densities = parse_list(k, v, Density::parse)?,
                        "n_seq_bytes" => sweep.n_seq_bytes = parse_list(k, v, |s| s.parse().ok())?,
                        "bank_util" => sweep.bank_util = parse_list(k, v, |s| s.parse().ok())?,
                        "phase_duration_us" => sweep.phase_duration = SimTime::us(parse_num(k, v)?),
                        "phase_duration_ps" => sweep.phase_duration = SimTime(parse_num(k, v)?),
                        _ => return Err(unknown()),
                    }
                }
                "phase" => {
                    phase_keys = true;
                    match name {
                        "density" => {
                            phase.density = Some(Density::parse(v).ok_or_else(|| ConfigError::invalid(k, format!("unknown density {v:?}")))?)
                        }
                        "itt_min_ps" => phase.itt_min = Some(SimTime(parse_num(k, v)?)),
                        "itt_max_ps" => phase.itt_max = Some(SimTime(parse_num(k, v)?)),
                        "n_seq_bytes" => phase.n_seq_bytes = Some(parse_num(k, v)?),
                        "bank_util" => phase.bank_util = Some(parse_num(k, v)?),
                        "duration_us" => phase.duration = Some(SimTime::us(parse_num(k, v)?)),
                        "duration_ps" => phase.duration = Some(SimTime(parse_num(k, v)?)),
                        "addr_range_bytes" => phase.addr_range = Some(parse_num(k, v)?),
                        _ => return Err(unknown()),
                    }
                }
                _ => return Err(unknown()),
            }
        }

        let t_ck = cfg.device.timing.t_ck;
        for (name, n) in cycles {
            *timing_slot(&mut cfg.device.timing, &name).expect("checked above") = t_ck * n;
        }

        let kind = match kind {
            Some(k) => k,
            None if trace.is_some() => "trace".into(),
            None if idle.is_some() => "idle".into(),
            None if phase_keys => "phase".into(),
            None => "sweep".into(),
        };
        let conflict = |what: &str| ConfigError::invalid("workload.kind", format!("{kind} workload cannot take {what} keys"));
        cfg.workload = match kind.as_str() {
            "sweep" => {
                if trace.is_some() || idle.is_some() || phase_keys {
                    return Err(conflict("trace/idle/phase"));
                }
                sweep.base_seed = cfg.seed;
                WorkloadSpec::Sweep(sweep)
            }
            "phase" => {
                if trace.is_some() || idle.is_some() || sweep_keys {
                    return Err(conflict("trace/idle/sweep"));
                }
                let density = phase.density.unwrap_or(Density::VeryDense);
                let mut pc = PhaseConfig::new(&cfg.device, density, phase.n_seq_bytes.unwrap_or(64), phase.bank_util.unwrap_or(16), cfg.seed);
                if let Some(t) = phase.itt_min {
                    pc.itt_min = t;
                }
                if let Some(t) = phase.itt_max {
                    pc.itt_max = t;
                }
                if let Some(t) = phase.duration {
                    pc.duration = t;
                }
                if let Some(a) = phase.addr_range {
                    pc.addr_range = a;
                }
                WorkloadSpec::Phase(PhaseSpec {
                    label: format!("{}/seq{}/bu{}", density, pc.n_seq_bytes, pc.bank_util),
                    density,
                    config: pc,
                })
            }
            "trace" => {
                if idle.is_some() || phase_keys || sweep_keys {
                    return Err(conflict("idle/phase/sweep"));
                }
                let p = trace.ok_or_else(|| ConfigError::Missing("workload.trace".into()))?;
                if !p.is_file() {
                    return Err(ConfigError::invalid("workload.trace", format!("{} does not exist", p.display())));
                }
                WorkloadSpec::Trace(p)
            }
            "idle" => {
                if trace.is_some() || phase_keys || sweep_keys {
                    return Err(conflict("trace/phase/sweep"));
                }
                WorkloadSpec::Idle(idle.unwrap_or(SimTime::ms(10)))
            }
            other => return Err(ConfigError::invalid("workload.kind", format!("unknown kind {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.device.validate()?;
        self.controller.validate()?;
        match &self.workload {
            WorkloadSpec::Phase(p) => p.config.validate(&self.device.geometry)?,
            WorkloadSpec::Sweep(s) => {
                for &r in &s.ranks {
                    let mut d = self.device;
                    d.geometry.ranks = r;
                    d.validate()?;
                    for p in s.phases(&d) {
                        p.config.validate(&d.geometry)?;
                    }
                }
            }
            WorkloadSpec::Idle(d) if *d == SimTime::ZERO => {
                return Err(ConfigError::invalid("workload.idle_us", "must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Apply `--seed` and `--powerdown` overrides.
    pub fn override_with(&mut self, seed: Option<u64>, powerdown: Option<bool>) {
        if let Some(s) = seed {
            self.seed = s;
            match &mut self.workload {
                WorkloadSpec::Sweep(sw) => sw.base_seed = s,
                WorkloadSpec::Phase(p) => p.config.seed = s,
                _ => {}
            }
        }
        if let Some(p) = powerdown {
            self.controller.powerdown_enabled = p;
        }
    }
}

/// One CSV row: a phase of one memory configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub config_id: String,
    pub phase_id: usize,
    pub phase_label: String,
    pub start: SimTime,
    pub duration: SimTime,
    /// Summed over ranks.
    pub residency: [u64; 6],
    pub energy: EnergyBreakdown,
    pub requests: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub refresh_count: u64,
    pub refresh_epochs_per_rank: f64,
    pub avg_read_queue_occupancy: f64,
    pub bus_utilization: f64,
    pub execution_time: SimTime,
}

/// Fixed column order of every report CSV. Units: ps, J.
pub const CSV_COLUMNS: [&str; 31] = [
    "config_id",
    "phase_id",
    "phase_label",
    "start_ps",
    "duration_ps",
    "ACT_ps",
    "IDLE_ps",
    "REF_ps",
    "PDNA_ps",
    "PDNP_ps",
    "SREF_ps",
    "ACT_E_J",
    "PRE_E_J",
    "RD_E_J",
    "WR_E_J",
    "REF_E_J",
    "ACT_BACK_E_J",
    "PRE_BACK_E_J",
    "PDNA_E_J",
    "PDNP_E_J",
    "SREF_E_J",
    "total_E_J",
    "requests",
    "row_hits",
    "row_misses",
    "refresh_count",
    "refresh_epochs_per_rank",
    "avg_read_queue_occupancy",
    "bus_utilization",
    "execution_time_ps",
    "row_hit_rate",
];

impl ReportRow {
    pub fn from_phase(config_id: &str, p: &PhaseResult, dev: &DeviceConfig, ctrl: &ControllerConfig, execution_time: SimTime) -> Self {
        let dur = p.duration();
        let ranks = p.residency.len();
        let epochs: f64 = (0..ranks).map(|r| p.refresh_epochs(r, dev.timing.t_refi)).sum::<f64>() / ranks as f64;
        let frac = |area: u128, cap: usize| {
            if dur == SimTime::ZERO {
                0.0
            } else {
                area as f64 / (dur.0 as f64 * cap as f64)
            }
        };
        ReportRow {
            config_id: config_id.to_string(),
            phase_id: p.index,
            phase_label: p.label.clone(),
            start: p.start,
            duration: dur,
            residency: p.residency_total().0,
            energy: p.energy_total(),
            requests: p.injected,
            row_hits: p.stats.row_hits,
            row_misses: p.stats.row_misses,
            refresh_count: p.stats.refa.iter().sum(),
            refresh_epochs_per_rank: epochs,
            avg_read_queue_occupancy: frac(p.stats.read_queue_area, ctrl.read_queue_depth),
            bus_utilization: frac(p.stats.column_commands as u128 * dev.timing.t_burst.0 as u128, 1),
            execution_time,
        }
    }

    pub fn row_hit_rate(&self) -> f64 {
        let n = self.row_hits + self.row_misses;
        if n == 0 {
            0.0
        } else {
            self.row_hits as f64 / n as f64
        }
    }

    pub fn csv_line(&self) -> String {
        let mut s = format!("{},{},{},{},{}", self.config_id, self.phase_id, self.phase_label, self.start.0, self.duration.0);
        for r in self.residency {
            write!(s, ",{r}").unwrap();
        }
        for e in self.energy.components() {
            write!(s, ",{e:.9e}").unwrap();
        }
        write!(
            s,
            ",{:.9e},{},{},{},{},{:.6},{:.6},{:.6},{},{:.6}",
            self.energy.total(),
            self.requests,
            self.row_hits,
            self.row_misses,
            self.refresh_count,
            self.refresh_epochs_per_rank,
            self.avg_read_queue_occupancy,
            self.bus_utilization,
            self.execution_time.0,
            self.row_hit_rate()
        )
        .unwrap();
        s
    }
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut s = csv_header();
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Long-format residency table: one line per (row, state).
pub fn residency_pivot(rows: &[ReportRow]) -> String {
    let mut s = String::from("config_id,phase_id,phase_label,state,residency_ps,fraction\n");
    for r in rows {
        let total: u64 = r.residency.iter().sum();
        for st in PowerState::ALL {
            let v = r.residency[st.index()];
            let f = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            writeln!(s, "{},{},{},{},{},{:.6}", r.config_id, r.phase_id, r.phase_label, st, v, f).unwrap();
        }
    }
    s
}

/// Long-format energy table: one line per (row, component).
pub fn energy_pivot(rows: &[ReportRow]) -> String {
    let mut s = String::from("config_id,phase_id,phase_label,component,energy_J\n");
    for r in rows {
        for (name, v) in EnergyBreakdown::COMPONENTS.iter().zip(r.energy.components()) {
            writeln!(s, "{},{},{},{},{:.9e}", r.config_id, r.phase_id, r.phase_label, name, v).unwrap();
        }
    }
    s
}

pub fn config_id(ranks: u32, policy: PagePolicy, powerdown: bool) -> String {
    format!("r{}_{}_{}", ranks, policy, if powerdown { "pd" } else { "nopd" })
}

fn write_out(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| Error::Output {
                path: dir.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, contents).map_err(|source| Error::Output {
        path: path.display().to_string(),
        source,
    })
}

fn workload_of(cfg: &RunConfig) -> Result<Workload, Error> {
    Ok(match &cfg.workload {
        WorkloadSpec::Sweep(s) => Workload::Phases(s.phases(&cfg.device)),
        WorkloadSpec::Phase(p) => Workload::Phases(vec![p.clone()]),
        WorkloadSpec::Trace(p) => Workload::Trace(parse_trace(p)?),
        WorkloadSpec::Idle(d) => Workload::Idle { duration: *d },
    })
}

/// Output of a single simulation.
#[derive(Debug, Clone)]
pub struct SingleRun {
    pub rows: Vec<ReportRow>,
    pub result: RunResult,
}

/// Execute one simulation of `cfg` (a sweep workload runs all its phases on
/// the configured device, without the memory-config cross-product).
pub fn run_single(cfg: &RunConfig, record_trace: bool) -> Result<SingleRun, Error> {
    cfg.validate()?;
    let workload = workload_of(cfg)?;
    let opts = SimOptions {
        record_trace,
        start_active: cfg.start_active,
        ..SimOptions::default()
    };
    let result = simulate(&cfg.device, &cfg.controller, &workload, opts)?;
    let id = config_id(cfg.device.geometry.ranks, cfg.controller.page_policy, cfg.controller.powerdown_enabled);
    let rows = result
        .phases
        .iter()
        .map(|p| {
            let exec = if matches!(workload, Workload::Trace(_)) { result.execution_time } else { p.end };
            ReportRow::from_phase(&id, p, &cfg.device, &cfg.controller, exec)
        })
        .collect();
    Ok(SingleRun { rows, result })
}

/// Run every memory configuration of the sweep, each with all phases back to
/// back. Rows come out ordered by (config, phase).
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<ReportRow>, Error> {
    cfg.validate()?;
    let sweep = match &cfg.workload {
        WorkloadSpec::Sweep(s) => s.clone(),
        _ => return Err(ConfigError::invalid("workload.kind", "sweep requires a sweep workload").into()),
    };
    let jobs = sweep.memory_configs();
    let run = |&(ranks, policy): &(u32, PagePolicy)| -> Result<Vec<ReportRow>, Error> {
        let mut c = cfg.clone();
        c.device.geometry.ranks = ranks;
        c.controller.page_policy = policy;
        let mut s = sweep.clone();
        s.ranks = vec![ranks];
        c.workload = WorkloadSpec::Sweep(s);
        Ok(run_single(&c, false)?.rows)
    };
    let results: Vec<Result<Vec<ReportRow>, Error>> = match worker_threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ConfigError::invalid("DLPS_THREADS", e.to_string()))?
            .install(|| jobs.par_iter().map(run).collect()),
        None => jobs.par_iter().map(run).collect(),
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn worker_threads() -> Option<usize> {
    std::env::var("DLPS_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Power-down on versus off for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub energy_on: EnergyBreakdown,
    pub energy_off: EnergyBreakdown,
    pub exec_on: SimTime,
    pub exec_off: SimTime,
    pub requests_on: u64,
    pub requests_off: u64,
    pub request_hash_on: u64,
    pub request_hash_off: u64,
}

impl CompareReport {
    /// Energy change of power-down on relative to off, in percent.
    pub fn delta_energy_pct(&self) -> f64 {
        100.0 * (self.energy_on.total() - self.energy_off.total()) / self.energy_off.total()
    }

    pub fn delta_time_pct(&self) -> f64 {
        100.0 * (self.exec_on.0 as f64 - self.exec_off.0 as f64) / self.exec_off.0 as f64
    }

    /// Shares of the power-down-on energy spent in PDNA, PDNP and SREF.
    pub fn low_power_shares(&self) -> [f64; 3] {
        let t = self.energy_on.total();
        [self.energy_on.pdna / t, self.energy_on.pdnp / t, self.energy_on.sref / t]
    }

    pub fn render(&self) -> String {
        let [a, p, s] = self.low_power_shares();
        format!(
            "requests           {} (on) / {} (off), stream hash {}\n\
             energy  on/off     {:.6e} J / {:.6e} J  ({:+.2}%)\n\
             exec    on/off     {} ps / {} ps  ({:+.2}%)\n\
             low-power shares   PDNA {:.2}%  PDNP {:.2}%  SREF {:.2}%\n",
            self.requests_on,
            self.requests_off,
            if self.request_hash_on == self.request_hash_off { "identical" } else { "DIFFERENT" },
            self.energy_on.total(),
            self.energy_off.total(),
            self.delta_energy_pct(),
            self.exec_on.0,
            self.exec_off.0,
            self.delta_time_pct(),
            100.0 * a,
            100.0 * p,
            100.0 * s
        )
    }
}

pub fn run_compare(cfg: &RunConfig) -> Result<CompareReport, Error> {
    let mut on = cfg.clone();
    on.controller.powerdown_enabled = true;
    let mut off = cfg.clone();
    off.controller.powerdown_enabled = false;
    let a = run_single(&on, false)?.result;
    let b = run_single(&off, false)?.result;
    Ok(CompareReport {
        energy_on: a.energy_total(),
        energy_off: b.energy_total(),
        exec_on: a.execution_time,
        exec_off: b.execution_time,
        requests_on: a.injected,
        requests_off: b.injected,
        request_hash_on: a.request_hash,
        request_hash_off: b.request_hash,
    })
}

/// Write the command trace in DRAMPower format, one file per rank: `path`
/// for rank 0 and `path.r<N>` for the others.
pub fn export_trace(records: &[CommandRecord], ranks: u32, t_ck: SimTime, path: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    for r in 0..ranks {
        let p = if r == 0 {
            path.to_path_buf()
        } else {
            let mut s = path.as_os_str().to_owned();
            s.push(format!(".r{r}"));
            PathBuf::from(s)
        };
        let mine: Vec<CommandRecord> = records.iter().copied().filter(|c| c.rank == r).collect();
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| Error::Output { path: dir.display().to_string(), source })?;
        }
        export_drampower_trace(&mine, t_ck, &p).map_err(|source| Error::Output {
            path: p.display().to_string(),
            source,
        })?;
        written.push(p);
    }
    Ok(written)
}

pub fn summary(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let total: u64 = r.residency.iter().sum();
        let pct = |st: PowerState| 100.0 * r.residency[st.index()] as f64 / total.max(1) as f64;
        writeln!(
            s,
            "{} #{} {}: {} req, hit rate {:.3}, {} REFA, energy {:.4e} J",
            r.config_id,
            r.phase_id,
            r.phase_label,
            r.requests,
            r.row_hit_rate(),
            r.refresh_count,
            r.energy.total()
        )
        .unwrap();
        write!(s, "   residency").unwrap();
        for st in PowerState::ALL {
            write!(s, " {} {:.1}%", st, pct(st)).unwrap();
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Parser)]
#[command(name = "dlps", version, about = "DRAM power-down simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonOpts {
    /// Config file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub powerdown: Option<OnOff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run one simulation and write per-phase CSV rows.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Also write the DRAMPower command trace here.
        #[arg(long)]
        drampower_trace: Option<PathBuf>,
    },
    /// Run the ranks x page-policy x phase sweep.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Replay a trace with power-down on and off.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Trace file, overriding the config's workload.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Closed-form system power estimates.
    Calc {
        #[arg(value_enum)]
        mode: CalcMode,
        #[command(flatten)]
        dimm: DimmArgs,
    },
    /// Run a simulation and write only its DRAMPower command trace.
    ExportTrace {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        drampower_trace: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalcMode {
    /// Self-refresh power.
    Sref,
    /// Refresh-plus-precharge-standby power.
    Standby,
}

/// DIMM parameters; unset values come from the 8 GB DDR4 DIMM preset.
#[derive(Debug, Args, Clone, Default)]
pub struct DimmArgs {
    #[arg(long, default_value_t = 512)]
    pub n_dimms: u32,
    #[arg(long)]
    pub vdd: Option<f64>,
    #[arg(long)]
    pub vpp: Option<f64>,
    #[arg(long = "idd5b-ma")]
    pub idd5b: Option<f64>,
    #[arg(long = "ipp5b-ma")]
    pub ipp5b: Option<f64>,
    #[arg(long = "idd2n-ma")]
    pub idd2n: Option<f64>,
    #[arg(long = "idd6-ma")]
    pub idd6: Option<f64>,
    #[arg(long = "ipp6-ma")]
    pub ipp6: Option<f64>,
    #[arg(long = "trfc-ps")]
    pub t_rfc: Option<u64>,
    #[arg(long = "trefi-ps")]
    pub t_refi: Option<u64>,
}

impl DimmArgs {
    pub fn dimm(&self) -> DimmPower {
        let mut d = DimmPower::ddr4_8gb_dimm();
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut d.vdd, self.vdd);
        set(&mut d.vpp, self.vpp);
        set(&mut d.idd5b, self.idd5b);
        set(&mut d.ipp5b, self.ipp5b);
        set(&mut d.idd2n, self.idd2n);
        set(&mut d.idd6, self.idd6);
        set(&mut d.ipp6, self.ipp6);
        if let Some(t) = self.t_rfc {
            d.t_rfc = SimTime(t);
        }
        if let Some(t) = self.t_refi {
            d.t_refi = SimTime(t);
        }
        d
    }
}

pub fn calc(mode: CalcMode, args: &DimmArgs) -> Result<f64, ConfigError> {
    let d = args.dimm();
    match mode {
        CalcMode::Sref => Ok(selfrefresh_power_system(args.n_dimms, &d)),
        CalcMode::Standby => {
            if d.t_refi <= d.t_rfc {
                return Err(ConfigError::invalid("trefi-ps", "must exceed trfc-ps"));
            }
            Ok(standby_power_system(args.n_dimms, &d))
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.override_with(common.seed, common.powerdown.map(|p| p == OnOff::On));
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Execute a parsed command line, printing to stdout. Returns the process
/// exit status.
pub fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Cmd::Run { common, drampower_trace } => {
            let cfg = load_config(&common)?;
            let run = run_single(&cfg, drampower_trace.is_some())?;
            write_out(&cfg.out.join("run.csv"), &rows_to_csv(&run.rows))?;
            let text = summary(&run.rows);
            write_out(&cfg.out.join("summary.txt"), &text)?;
            print!("{text}");
            if let Some(p) = drampower_trace {
                let trace = run.result.trace.as_deref().unwrap_or_default();
                for f in export_trace(trace, cfg.device.geometry.ranks, cfg.device.timing.t_ck, &p)? {
                    println!("command trace: {}", f.display());
                }
            }
        }
        Cmd::Sweep { common } => {
            let cfg = load_config(&common)?;
            let rows = run_sweep(&cfg)?;
            write_out(&cfg.out.join("sweep.csv"), &rows_to_csv(&rows))?;
            write_out(&cfg.out.join("sweep_residency.csv"), &residency_pivot(&rows))?;
            write_out(&cfg.out.join("sweep_energy.csv"), &energy_pivot(&rows))?;
            println!("{} rows written to {}", rows.len(), cfg.out.join("sweep.csv").display());
        }
        Cmd::Compare { common, trace } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = trace {
                if !t.is_file() {
                    return Err(ConfigError::invalid("--trace", format!("{} does not exist", t.display())).into());
                }
                cfg.workload = WorkloadSpec::Trace(t);
            }
            if !matches!(cfg.workload, WorkloadSpec::Trace(_)) {
                return Err(ConfigError::Missing("workload.trace (or --trace)".into()).into());
            }
            let rep = run_compare(&cfg)?;
            let text = rep.render();
            write_out(&cfg.out.join("compare.txt"), &text)?;
            print!("{text}");
        }
        Cmd::Calc { mode, dimm } => {
            let w = calc(mode, &dimm)?;
            println!("{w:.4} W");
        }
        Cmd::ExportTrace { common, drampower_trace } => {
            let cfg = load_config(&common)?;
            let run = run_single(&cfg, true)?;
            let p = drampower_trace.unwrap_or_else(|| cfg.out.join("commands.trace"));
            let trace = run.result.trace.as_deref().unwrap_or_default();
            for f in export_trace(trace, cfg.device.geometry.ranks, cfg.device.timing.t_ck, &p)? {
                println!("command trace: {}", f.display());
            }
        }
    }
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 64 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
