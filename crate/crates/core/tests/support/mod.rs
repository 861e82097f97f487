//! Independent oracles shared by the integration tests: a brute-force timing
//! checker, a state-machine fuzzer, an energy replay over exported command
//! traces, and the bundled bursty trace shapes.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use dlps::device::{DeviceConfig, PowerState, RankState};
use dlps::workload::BurstyShape;
use dlps::{Command, Rng, SimTime};

// ---------------------------------------------------------------------------
// Reference constants, typed in from the DDR4-2400 8 Gb x4 datasheet values.
// ---------------------------------------------------------------------------

pub mod table {
    pub const T_CK: u64 = 833;
    pub const T_CCD: u64 = 3_332;
    pub const T_RP: u64 = 14_160;
    pub const T_RAS: u64 = 32_000;
    pub const T_RCD: u64 = 14_160;
    pub const T_RL: u64 = 14_160;
    pub const T_WL: u64 = 12_000;
    pub const T_BURST: u64 = 3_332;
    pub const T_RTP: u64 = 7_500;
    pub const T_WR: u64 = 15_000;
    pub const T_RRD: u64 = 4_900;
    pub const T_RFC: u64 = 350_000;
    pub const T_REFI: u64 = 7_800_000;
    pub const T_XP: u64 = 6 * 833;
    pub const T_XS: u64 = 408 * 833;
    pub const T_CKE: u64 = 5 * 833;

    pub const VDD: f64 = 1.2;
    pub const VPP: f64 = 2.5;
    // milliamps
    pub const IDD0: f64 = 43.0;
    pub const IPP0: f64 = 3.0;
    pub const IDD2N: f64 = 34.0;
    pub const IDD3N: f64 = 38.0;
    pub const IPP3N: f64 = 3.0;
    pub const IDD2P: f64 = 25.0;
    pub const IDD3P: f64 = 32.0;
    pub const IDD5: f64 = 250.0;
    pub const IDD6: f64 = 30.0;
    pub const IDD4R: f64 = 110.0;
    pub const IDD4W: f64 = 103.0;
}

pub fn preset() -> DeviceConfig {
    DeviceConfig::ddr4_2400_8gb_x4()
}

// ---------------------------------------------------------------------------
// Timing checker
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cke {
    High,
    PowerDown,
    SelfRefresh,
}

#[derive(Debug, Clone, Copy, Default)]
struct Bank {
    open: bool,
    act_at: u64,
    /// When the bank closed (explicit PRE or internal auto-precharge).
    closed_at: Option<u64>,
    /// Internal precharge scheduled by RDA/WRA, not yet reached.
    auto_pre_at: Option<u64>,
    last_rd: Option<u64>,
    last_wr: Option<u64>,
}

/// Replays a single rank's command stream and reports every broken rule.
/// Rules are written pairwise from the JEDEC definitions rather than derived
/// from the simulator's earliest-issue bookkeeping.
pub struct TimingChecker {
    banks: Vec<Bank>,
    cke: Cke,
    last_cmd_at: Option<u64>,
    last_act: VecDeque<u64>,
    last_col: Option<u64>,
    last_refa: Option<u64>,
    last_pde: Option<u64>,
    last_pdx: Option<u64>,
    last_sref_en: Option<u64>,
    last_sref_ex: Option<u64>,
    /// Latest read/write burst end relevant for power-down entry.
    pd_block_until: u64,
    pub checked: u64,
    pub violations: Vec<String>,
}

impl TimingChecker {
    pub fn new(banks: usize) -> Self {
        TimingChecker {
            banks: vec![Bank::default(); banks],
            cke: Cke::High,
            last_cmd_at: None,
            last_act: VecDeque::new(),
            last_col: None,
            last_refa: None,
            last_pde: None,
            last_pdx: None,
            last_sref_en: None,
            last_sref_ex: None,
            pd_block_until: 0,
            checked: 0,
            violations: Vec::new(),
        }
    }

    fn need(&mut self, t: u64, cmd: &Command, what: &str, since: Option<u64>, gap: u64) {
        if let Some(e) = since {
            if t < e + gap {
                self.violations
                    .push(format!("{cmd} at {t}: {what} needs {gap} ps after {e}, got {}", t - e));
            }
        }
    }

    fn fail(&mut self, t: u64, cmd: &Command, what: &str) {
        self.violations.push(format!("{cmd} at {t}: {what}"));
    }

    /// Close banks whose auto-precharge has been reached by `t`.
    fn settle(&mut self, t: u64) {
        for b in &mut self.banks {
            if let Some(p) = b.auto_pre_at {
                if p <= t {
                    b.open = false;
                    b.closed_at = Some(p);
                    b.auto_pre_at = None;
                }
            }
        }
    }

    fn any_open(&self) -> bool {
        self.banks.iter().any(|b| b.open)
    }

    pub fn observe(&mut self, t: u64, cmd: Command) {
        use table::*;
        self.checked += 1;
        if let Some(prev) = self.last_cmd_at {
            if t < prev {
                self.fail(t, &cmd, "command stream not time ordered");
            }
        }
        self.last_cmd_at = Some(t);
        self.settle(t);

        // Low-power states only accept their exit command.
        match (self.cke, &cmd) {
            (Cke::PowerDown, Command::Pdx) => {
                let e = self.last_pde;
                self.need(t, &cmd, "tCKE after PDE", e, T_CKE);
                self.cke = Cke::High;
                self.last_pdx = Some(t);
                return;
            }
            (Cke::PowerDown, Command::SrefEn) => {
                if self.any_open() {
                    self.fail(t, &cmd, "self-refresh from active power-down");
                }
                let e = self.last_pde;
                self.need(t, &cmd, "tCKE after PDE", e, T_CKE);
                self.cke = Cke::SelfRefresh;
                // The minimum residency counts from the original cke-low edge.
                self.last_sref_en = self.last_pde;
                return;
            }
            (Cke::SelfRefresh, Command::SrefEx) => {
                let e = self.last_sref_en;
                self.need(t, &cmd, "tCKE after self-refresh entry", e, T_CKE);
                self.cke = Cke::High;
                self.last_sref_ex = Some(t);
                return;
            }
            (Cke::PowerDown | Cke::SelfRefresh, _) => {
                self.fail(t, &cmd, "issued while clock disabled");
                return;
            }
            (Cke::High, Command::Pdx | Command::SrefEx) => {
                self.fail(t, &cmd, "exit without matching entry");
                return;
            }
            (Cke::High, _) => {}
        }

        // Rank-wide exit and refresh blackouts.
        let (pdx, srx, refa) = (self.last_pdx, self.last_sref_ex, self.last_refa);
        self.need(t, &cmd, "tXP after PDX", pdx, T_XP);
        self.need(t, &cmd, "tXS after SREFEX", srx, T_XS);
        self.need(t, &cmd, "tRFC after REFA", refa, T_RFC);

        match cmd {
            Command::Act { bank, .. } => {
                let b = self.banks[bank as usize];
                if b.open {
                    self.fail(t, &cmd, "activate on open bank");
                }
                self.need(t, &cmd, "tRP after close", b.closed_at, T_RP);
                if b.act_at > 0 || b.closed_at.is_some() {
                    self.need(t, &cmd, "tRAS+tRP activate cycle", Some(b.act_at), T_RAS + T_RP);
                }
                if let Some(&prev) = self.last_act.back() {
                    self.need(t, &cmd, "tRRD", Some(prev), T_RRD);
                }
                self.last_act.push_back(t);
                if self.last_act.len() > 4 {
                    self.last_act.pop_front();
                }
                let b = &mut self.banks[bank as usize];
                *b = Bank {
                    open: true,
                    act_at: t,
                    closed_at: b.closed_at,
                    auto_pre_at: None,
                    last_rd: None,
                    last_wr: None,
                };
            }
            Command::Pre { bank } => self.precharge(t, &cmd, bank as usize, true),
            Command::PreA => {
                for i in 0..self.banks.len() {
                    if self.banks[i].open {
                        if self.banks[i].auto_pre_at.is_some() {
                            self.fail(t, &cmd, "PREA while an auto-precharge is in flight");
                        }
                        self.precharge(t, &cmd, i, false);
                    }
                }
            }
            Command::Rd { bank, .. }
            | Command::Rda { bank, .. }
            | Command::Wr { bank, .. }
            | Command::Wra { bank, .. } => {
                let i = bank as usize;
                let b = self.banks[i];
                if !b.open || b.auto_pre_at.is_some() {
                    self.fail(t, &cmd, "column access to a closed or closing bank");
                }
                self.need(t, &cmd, "tRCD", Some(b.act_at), T_RCD);
                let col = self.last_col;
                self.need(t, &cmd, "tCCD", col, T_CCD);
                self.last_col = Some(t);
                let read = cmd.is_read();
                let b = &mut self.banks[i];
                let end = if read {
                    b.last_rd = Some(t);
                    t + T_RL + T_BURST + T_CK
                } else {
                    b.last_wr = Some(t);
                    t + T_WL + T_BURST + T_WR
                };
                if cmd.auto_precharge() {
                    let ready = if read { t + T_RTP } else { t + T_WL + T_BURST + T_WR };
                    b.auto_pre_at = Some(ready.max(b.act_at + T_RAS));
                }
                self.pd_block_until = self.pd_block_until.max(end);
            }
            Command::RefA => {
                if self.any_open() {
                    self.fail(t, &cmd, "refresh with an open bank");
                }
                let banks = self.banks.clone();
                for b in banks {
                    self.need(t, &cmd, "tRP before refresh", b.closed_at, T_RP);
                }
                self.last_refa = Some(t);
            }
            Command::SrefEn => {
                if self.any_open() {
                    self.fail(t, &cmd, "self-refresh with an open bank");
                }
                let banks = self.banks.clone();
                for b in banks {
                    self.need(t, &cmd, "tRP before self-refresh", b.closed_at, T_RP);
                }
                self.cke = Cke::SelfRefresh;
                self.last_sref_en = Some(t);
            }
            Command::Pde => {
                if self.banks.iter().any(|b| b.auto_pre_at.is_some()) {
                    self.fail(t, &cmd, "power-down with an auto-precharge in flight");
                }
                if t < self.pd_block_until {
                    self.fail(t, &cmd, "power-down before the last burst completed");
                }
                self.cke = Cke::PowerDown;
                self.last_pde = Some(t);
            }
            Command::Pdx | Command::SrefEx => unreachable!(),
        }
    }

    fn precharge(&mut self, t: u64, cmd: &Command, i: usize, explicit: bool) {
        use table::*;
        let b = self.banks[i];
        if explicit && (!b.open || b.auto_pre_at.is_some()) {
            self.fail(t, cmd, "precharge of a closed or closing bank");
            return;
        }
        self.need(t, cmd, "tRAS", Some(b.act_at), T_RAS);
        self.need(t, cmd, "tRTP", b.last_rd, T_RTP);
        self.need(t, cmd, "write recovery", b.last_wr, T_WL + T_BURST + T_WR);
        let b = &mut self.banks[i];
        b.open = false;
        b.closed_at = Some(t);
    }

    /// True when the checker's own view says the rank has an open row.
    pub fn open_now(&mut self, t: u64) -> bool {
        self.settle(t);
        self.any_open()
    }
}

// ---------------------------------------------------------------------------
// Fuzzer
// ---------------------------------------------------------------------------

pub struct FuzzReport {
    pub commands: u64,
    pub invariant_violations: Vec<String>,
    pub timing_violations: Vec<String>,
    pub by_kind: [u64; 12],
}

fn kind_index(c: &Command) -> usize {
    match c {
        Command::Act { .. } => 0,
        Command::Pre { .. } => 1,
        Command::PreA => 2,
        Command::Rd { .. } => 3,
        Command::Wr { .. } => 4,
        Command::Rda { .. } => 5,
        Command::Wra { .. } => 6,
        Command::RefA => 7,
        Command::Pde => 8,
        Command::Pdx => 9,
        Command::SrefEn => 10,
        Command::SrefEx => 11,
    }
}

fn random_command(rng: &mut Rng, banks: u32) -> Command {
    let bank = rng.below(banks as u64) as u8;
    let row = rng.below(4) as u32;
    let col = rng.below(128) as u32;
    // Weighted towards the data path so that long runs stay busy.
    match rng.below(20) {
        0..=3 => Command::Act { bank, row },
        4..=5 => Command::Pre { bank },
        6 => Command::PreA,
        7..=8 => Command::Rd { bank, col },
        9..=10 => Command::Wr { bank, col },
        11 => Command::Rda { bank, col },
        12 => Command::Wra { bank, col },
        13 => Command::RefA,
        14..=15 => Command::Pde,
        16 => Command::Pdx,
        17 => Command::SrefEn,
        _ => Command::SrefEx,
    }
}

/// Drive one rank with `steps` randomly chosen legal commands. Each command
/// is issued at its earliest legal time plus a random jitter; the simulator's
/// invariants and the independent timing checker watch every step.
pub fn fuzz_rank(seed: u64, steps: u64) -> FuzzReport {
    let dev = preset();
    let banks = dev.geometry.banks_per_rank;
    let mut rank = RankState::new(0, &dev, SimTime(dev.timing.t_refi.0));
    let mut checker = TimingChecker::new(banks as usize);
    let mut rng = Rng::new(seed);
    let mut now = SimTime::ZERO;
    let mut report = FuzzReport {
        commands: 0,
        invariant_violations: Vec::new(),
        timing_violations: Vec::new(),
        by_kind: [0; 12],
    };
    let mut attempts = 0u64;
    while report.commands < steps {
        attempts += 1;
        assert!(attempts < steps * 200, "fuzzer stalled");
        let cmd = random_command(&mut rng, banks);
        let Some(at) = rank.earliest_issue(&cmd, now) else { continue };
        let jitter = match rng.below(4) {
            0 => 0,
            1 => rng.below(833),
            2 => rng.below(20_000),
            _ => rng.below(400_000),
        };
        let t = at.max(now) + SimTime(jitter);
        // The state may have moved on between `now` and `t` (an
        // auto-precharge completing); only keep commands still legal.
        if !rank.legal(&cmd, t) {
            let mut probe = rank.clone();
            probe.settle(t);
            if probe.legal(&cmd, t) {
                report
                    .invariant_violations
                    .push(format!("{cmd} at {t}: legal after settle but not before"));
            }
            continue;
        }
        if let Err(e) = rank.apply(cmd, t) {
            report.invariant_violations.push(format!("legal command rejected: {e}"));
            continue;
        }
        now = t;
        report.commands += 1;
        report.by_kind[kind_index(&cmd)] += 1;
        checker.observe(t.0, cmd);

        let state = rank.power_at(t);
        let open = rank.any_bank_open(t);
        let ok = match state {
            PowerState::Pdna => open && !rank.cke(),
            PowerState::Pdnp | PowerState::Sref => !open && !rank.cke(),
            PowerState::Act => open && rank.cke(),
            PowerState::Idle | PowerState::Ref => !open && rank.cke(),
        };
        if !ok {
            report
                .invariant_violations
                .push(format!("after {cmd} at {t}: state {state} open={open} cke={}", rank.cke()));
        }
        if checker.open_now(t.0) != open {
            report
                .invariant_violations
                .push(format!("after {cmd} at {t}: open-bank view disagrees with checker"));
        }
    }
    report.timing_violations = checker.violations;
    report
}

// ---------------------------------------------------------------------------
// Energy oracle
// ---------------------------------------------------------------------------

fn ma(x: f64) -> f64 {
    x * 1e-3
}

pub fn background_watts(s: PowerState) -> f64 {
    use table::*;
    match s {
        PowerState::Act => VDD * ma(IDD3N) + VPP * ma(IPP3N),
        PowerState::Idle | PowerState::Ref => VDD * ma(IDD2N),
        PowerState::Pdna => VDD * ma(IDD3P),
        PowerState::Pdnp => VDD * ma(IDD2P),
        PowerState::Sref => VDD * ma(IDD6),
    }
}

pub fn act_joules() -> f64 {
    use table::*;
    let secs = T_RAS as f64 * 1e-12;
    let i_vdd = IDD0 - IDD3N;
    let i_vpp = IPP0 - IPP3N;
    secs * (VDD * ma(i_vdd) + VPP * ma(i_vpp))
}

pub fn pre_joules() -> f64 {
    use table::*;
    let secs = T_RP as f64 * 1e-12;
    secs * VDD * ma(IDD0 - IDD2N)
}

pub fn rd_joules() -> f64 {
    use table::*;
    T_BURST as f64 * 1e-12 * VDD * ma(IDD4R - IDD3N)
}

pub fn wr_joules() -> f64 {
    use table::*;
    T_BURST as f64 * 1e-12 * VDD * ma(IDD4W - IDD3N)
}

pub fn ref_joules() -> f64 {
    use table::*;
    T_RFC as f64 * 1e-12 * VDD * ma(IDD5 - IDD2N)
}

/// Energy of one rank rebuilt from its exported command trace (event
/// energy) and its recorded state history (background energy).
pub fn replay_energy(trace_text: &str, banks: usize, history: &[(SimTime, PowerState)], end: SimTime) -> f64 {
    let mut open = vec![false; banks];
    let mut e = 0.0;
    for line in trace_text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 3, "bad trace line {line:?}");
        let bank: usize = f[2].parse().unwrap();
        match f[1] {
            "ACT" => {
                open[bank] = true;
                e += act_joules();
            }
            "PRE" => {
                if std::mem::take(&mut open[bank]) {
                    e += pre_joules();
                }
            }
            "PREA" => {
                for o in open.iter_mut() {
                    if std::mem::take(o) {
                        e += pre_joules();
                    }
                }
            }
            "RD" => e += rd_joules(),
            "WR" => e += wr_joules(),
            "RDA" => {
                open[bank] = false;
                e += rd_joules() + pre_joules();
            }
            "WRA" => {
                open[bank] = false;
                e += wr_joules() + pre_joules();
            }
            "REF" => e += ref_joules(),
            "PDN_F_ACT" | "PDN_F_PRE" | "PUP_ACT" | "PUP_PRE" | "SREN" | "SREX" => {}
            other => panic!("unknown mnemonic {other}"),
        }
    }
    for (i, &(at, s)) in history.iter().enumerate() {
        let until = history.get(i + 1).map_or(end, |n| n.0);
        e += background_watts(s) * (until.0 - at.0) as f64 * 1e-12;
    }
    e
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------------------
// Bundled traces
// ---------------------------------------------------------------------------

/// Compute/idle alternating shapes used by the power-down comparison. Every
/// idle gap exceeds two refresh intervals so that ranks reach self-refresh.
pub fn bundled_shapes() -> [(&'static str, BurstyShape, u64); 3] {
    let mib = 1u64 << 20;
    [
        (
            "bursty_read_stream.trace",
            BurstyShape {
                bursts: 40,
                requests_per_burst: 200,
                spacing: SimTime(5_000),
                idle: SimTime::us(20),
                write_percent: 0,
                n_seq_bytes: 256,
                addr_range: 256 * mib,
            },
            11,
        ),
        (
            "bursty_mixed.trace",
            BurstyShape {
                bursts: 30,
                requests_per_burst: 400,
                spacing: SimTime(10_000),
                idle: SimTime::us(40),
                write_percent: 30,
                n_seq_bytes: 512,
                addr_range: 256 * mib,
            },
            12,
        ),
        (
            "bursty_random_writes.trace",
            BurstyShape {
                bursts: 60,
                requests_per_burst: 100,
                spacing: SimTime(3_332),
                idle: SimTime::us(16),
                write_percent: 50,
                n_seq_bytes: 64,
                addr_range: 1024 * mib,
            },
            13,
        ),
    ]
}

pub fn traces_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("traces")
}
