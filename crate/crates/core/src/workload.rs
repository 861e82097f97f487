//! Synthetic traffic phases and plain-text trace replay input.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::controller::{encode, Decoded, Op, PagePolicy, Request};
use crate::device::{DeviceConfig, Geometry};
use crate::engine::{Rng, SimTime};
use crate::error::{ConfigError, InputError};

/// Traffic density profile: the upper inter-transaction-time bound as a
/// multiple of the power-down entry threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Density {
    VeryDense,
    Dense,
    Sparse,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::VeryDense, Density::Dense, Density::Sparse];

    pub fn multiplier(self) -> u64 {
        match self {
            Density::VeryDense => 1,
            Density::Dense => 20,
            Density::Sparse => 100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::VeryDense => "very_dense",
            Density::Dense => "dense",
            Density::Sparse => "sparse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Density::ALL
            .into_iter()
            .find(|d| d.name() == s || d.name().replace('_', "-") == s)
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(itt_min, itt_max)` for a density profile: the minimum is one column to
/// column delay, the maximum `k * tPDE`.
pub fn itt_bounds(cfg: &DeviceConfig, profile: Density) -> (SimTime, SimTime) {
    (cfg.timing.t_ccd, cfg.t_pde() * profile.multiplier())
}

/// Denominator of the bank-utilization fraction.
pub const BANK_UTIL_DENOM: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseConfig {
    pub itt_min: SimTime,
    pub itt_max: SimTime,
    pub n_seq_bytes: u32,
    /// Numerator over [`BANK_UTIL_DENOM`]: requests go to banks `0..bank_util`.
    pub bank_util: u32,
    pub duration: SimTime,
    pub op: Op,
    pub req_size: u32,
    pub addr_range: u64,
    pub seed: u64,
}

impl PhaseConfig {
    pub fn new(cfg: &DeviceConfig, density: Density, n_seq_bytes: u32, bank_util: u32, seed: u64) -> Self {
        let (itt_min, itt_max) = itt_bounds(cfg, density);
        PhaseConfig {
            itt_min,
            itt_max,
            n_seq_bytes,
            bank_util,
            duration: SimTime::us(250),
            op: Op::Read,
            req_size: 64,
            addr_range: 256 << 20,
            seed,
        }
    }

    pub fn validate(&self, g: &Geometry) -> Result<(), ConfigError> {
        if self.itt_min > self.itt_max {
            return Err(ConfigError::invalid("phase.itt_min_ps", "exceeds itt_max"));
        }
        if self.req_size != g.burst_bytes {
            return Err(ConfigError::invalid("phase.req_size", "must equal the burst size"));
        }
        if self.n_seq_bytes == 0 || self.n_seq_bytes % self.req_size != 0 {
            return Err(ConfigError::invalid("phase.n_seq_bytes", "must be a positive multiple of the request size"));
        }
        if !self.n_seq_bytes.is_power_of_two() || self.n_seq_bytes > g.row_buffer_bytes {
            return Err(ConfigError::invalid(
                "phase.n_seq_bytes",
                "must be a power of two no larger than the row buffer",
            ));
        }
        if !matches!(self.bank_util, 1 | 8 | 16) || self.bank_util > g.banks_per_rank {
            return Err(ConfigError::invalid("phase.bank_util", "numerator must be 1, 8 or 16"));
        }
        if self.duration == SimTime::ZERO {
            return Err(ConfigError::invalid("phase.duration_ps", "must be positive"));
        }
        if self.addr_range == 0 || self.addr_range > g.capacity_bytes() {
            return Err(ConfigError::invalid("phase.addr_range_bytes", "must be within device capacity"));
        }
        let rows = self.addr_range / (g.row_buffer_bytes as u64 * g.banks_per_rank as u64 * g.ranks as u64);
        if rows == 0 {
            return Err(ConfigError::invalid("phase.addr_range_bytes", "smaller than one row per bank"));
        }
        Ok(())
    }
}

/// Cross-product of memory configurations and traffic phases.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ranks: Vec<u32>,
    pub page_policies: Vec<PagePolicy>,
    pub densities: Vec<Density>,
    pub n_seq_bytes: Vec<u32>,
    pub bank_util: Vec<u32>,
    pub phase_duration: SimTime,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ranks: vec![1, 2],
            page_policies: vec![PagePolicy::OpenAdaptive, PagePolicy::ClosedAdaptive],
            densities: Density::ALL.to_vec(),
            n_seq_bytes: vec![64, 256, 512],
            bank_util: vec![1, 8, 16],
            phase_duration: SimTime::us(250),
            base_seed: 1,
        }
    }
}

/// One labelled phase of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub label: String,
    pub density: Density,
    pub config: PhaseConfig,
}

impl SweepConfig {
    pub fn memory_configs(&self) -> Vec<(u32, PagePolicy)> {
        let mut v = Vec::new();
        for &r in &self.ranks {
            for &p in &self.page_policies {
                v.push((r, p));
            }
        }
        v
    }

    /// Phases in execution order: density, then sequential bytes, then bank
    /// utilization. Phase `i` is seeded with `base_seed + i`.
    pub fn phases(&self, cfg: &DeviceConfig) -> Vec<PhaseSpec> {
        let mut out = Vec::new();
        for &d in &self.densities {
            for &n in &self.n_seq_bytes {
                for &b in &self.bank_util {
                    let seed = self.base_seed + out.len() as u64;
                    let mut pc = PhaseConfig::new(cfg, d, n, b, seed);
                    pc.duration = self.phase_duration;
                    out.push(PhaseSpec {
                        label: format!("{}/seq{}/bu{}", d.name(), n, b),
                        density: d,
                        config: pc,
                    });
                }
            }
        }
        out
    }
}

/// Request stream for one phase.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: PhaseConfig,
    geom: Geometry,
    rng: Rng,
    rows: u64,
    block: u64,
    remaining: u32,
    next_id: u64,
}

impl Generator {
    /// `first_id` continues the request numbering across phases.
    pub fn new(cfg: PhaseConfig, geom: Geometry, first_id: u64) -> Self {
        let rows = cfg.addr_range / (geom.row_buffer_bytes as u64 * geom.banks_per_rank as u64 * geom.ranks as u64);
        Generator {
            cfg,
            geom,
            rng: Rng::new(cfg.seed),
            rows: rows.max(1).min(geom.rows_per_bank as u64),
            block: 0,
            remaining: 0,
            next_id: first_id,
        }
    }

    pub fn config(&self) -> &PhaseConfig {
        &self.cfg
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    fn new_block(&mut self) -> u64 {
        let g = &self.geom;
        let per_row = (g.row_buffer_bytes / self.cfg.n_seq_bytes) as u64;
        let d = Decoded {
            channel: 0,
            rank: self.rng.below(g.ranks as u64) as u32,
            bank: self.rng.below(self.cfg.bank_util as u64) as u32,
            row: self.rng.below(self.rows) as u32,
            column: (self.rng.below(per_row) * (self.cfg.n_seq_bytes / g.burst_bytes) as u64) as u32,
        };
        encode(&d, g)
    }

    /// Next address: sequential within the current aligned block, then a
    /// fresh random block.
    pub fn next_address(&mut self) -> u64 {
        if self.remaining == 0 {
            self.block = self.new_block();
            self.remaining = self.cfg.n_seq_bytes / self.cfg.req_size;
        }
        let done = self.cfg.n_seq_bytes / self.cfg.req_size - self.remaining;
        self.remaining -= 1;
        self.block + (done * self.cfg.req_size) as u64
    }

    /// Gap until the next injection.
    pub fn next_gap(&mut self) -> SimTime {
        self.rng
            .uniform(self.cfg.itt_min, self.cfg.itt_max)
            .expect("validated itt bounds")
    }

    pub fn next_request(&mut self, at: SimTime) -> Request {
        let address = self.next_address();
        let id = self.next_id;
        self.next_id += 1;
        Request::new(id, at, self.cfg.op, address, self.cfg.req_size, &self.geom)
            .expect("generated address within capacity")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub op: Op,
    pub address: u64,
    pub size: u32,
}

/// Parse `<time_ps> <R|W> <hex_address> <size_bytes>` lines. Blank lines and
/// lines starting with `#` are skipped; timestamps must be non-decreasing.
pub fn parse_trace_str(text: &str, path: &str) -> Result<Vec<TraceRecord>, InputError> {
    let mut out: Vec<TraceRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let err = |msg: String| InputError::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", f.len())));
        }
        let at: u64 = f[0].parse().map_err(|e| err(format!("bad time {:?}: {e}", f[0])))?;
        let op = match f[1] {
            "R" | "r" => Op::Read,
            "W" | "w" => Op::Write,
            o => return Err(err(format!("bad op {o:?}"))),
        };
        let hex = f[2].strip_prefix("0x").or_else(|| f[2].strip_prefix("0X")).unwrap_or(f[2]);
        let address = u64::from_str_radix(hex, 16).map_err(|e| err(format!("bad address {:?}: {e}", f[2])))?;
        let size: u32 = f[3].parse().map_err(|e| err(format!("bad size {:?}: {e}", f[3])))?;
        if size == 0 {
            return Err(err("size must be positive".into()));
        }
        if let Some(prev) = out.last() {
            if at < prev.at.0 {
                return Err(InputError::Unsorted {
                    path: path.to_string(),
                    line,
                    at,
                    prev: prev.at.0,
                });
            }
        }
        out.push(TraceRecord {
            at: SimTime(at),
            op,
            address,
            size,
        });
    }
    Ok(out)
}

pub fn parse_trace(path: &Path) -> Result<Vec<TraceRecord>, InputError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| InputError::Io {
        path: name.clone(),
        source,
    })?;
    parse_trace_str(&text, &name)
}

/// Shape of a compute/idle alternating trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstyShape {
    pub bursts: u32,
    pub requests_per_burst: u32,
    /// Gap between requests inside a burst.
    pub spacing: SimTime,
    /// Idle time between bursts.
    pub idle: SimTime,
    /// Fraction of writes, in percent.
    pub write_percent: u32,
    /// Sequential run length in bytes.
    pub n_seq_bytes: u32,
    pub addr_range: u64,
}

/// Deterministic bursty trace: tight request bursts separated by idle gaps.
pub fn bursty_trace(shape: &BurstyShape, seed: u64) -> Vec<TraceRecord> {
    let mut rng = Rng::new(seed);
    let blocks = shape.addr_range / shape.n_seq_bytes as u64;
    let per_block = shape.n_seq_bytes as u64 / 64;
    let mut out = Vec::new();
    let mut t = SimTime::ZERO;
    let mut base = 0;
    let mut k = per_block;
    for _ in 0..shape.bursts {
        for _ in 0..shape.requests_per_burst {
            if k == per_block {
                base = rng.below(blocks) * shape.n_seq_bytes as u64;
                k = 0;
            }
            let op = if rng.below(100) < shape.write_percent as u64 {
                Op::Write
            } else {
                Op::Read
            };
            out.push(TraceRecord {
                at: t,
                op,
                address: base + k * 64,
                size: 64,
            });
            k += 1;
            t += shape.spacing;
        }
        t += shape.idle;
    }
    out
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::from("# time_ps op address size_bytes\n");
    for r in records {
        let op = match r.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        s.push_str(&format!("{} {} {:#x} {}\n", r.at.0, op, r.address, r.size));
    }
    s
}
