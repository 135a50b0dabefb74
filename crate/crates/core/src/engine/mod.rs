//! Cycle-level model of the fault-tolerant matrix engine computing
//! `Z = Y + X * W`.
//!
//! The array has `L` rows of `H` compute elements. Each element owns `P`
//! interleaved accumulators that circulate through its `P`-stage FMA pipeline,
//! so a tile covers `L` (or `L / 2` in fault-tolerant mode) output rows and
//! `H * P` output columns. Per step `k` the engine fetches one X element per
//! output row and broadcasts one weight per column to every row.
//!
//! In fault-tolerant mode rows `2r` and `2r + 1` compute the same output row
//! from one duplicated memory response; their results are compared before the
//! write filter forwards a single store. Detected faults set sticky status
//! flags, raise a two-cycle interrupt and return the engine to idle.

mod config;
mod control;

use serde::{Deserialize, Serialize};

pub use config::{nominal_cycles, reg, EngineConfig, JobDescriptor, Mode, Protection, MAX_DIMENSION, MAX_PIPELINE};
pub use control::{ControlState, Schedule, CONTROL_BITS};

use crate::ecc::{parity_bit, regfile_parity, secded_decode, Codeword, DecodeStatus};
use crate::error::{ConfigError, EngineError};
use crate::fault::{BufferField, FaultSite, FaultSpec, Stream, StreamField, Unit};
use crate::fp16::{fma, Fp16};
use crate::matrix::Matrix;
use crate::memory::{write_filter, Port, RowSet, Tcdm, WriteRequest};

/// Cycles the interrupt line stays asserted per detection.
pub const INTERRUPT_PULSE_CYCLES: u64 = 2;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    WeightParity,
    RowPairMismatch,
    FsmMismatch,
    StreamerMismatch,
    RegfileParity,
    EccUncorrectable,
}

impl Detector {
    pub const ALL: [Detector; 6] = [
        Detector::WeightParity,
        Detector::RowPairMismatch,
        Detector::FsmMismatch,
        Detector::StreamerMismatch,
        Detector::RegfileParity,
        Detector::EccUncorrectable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Detector::WeightParity => "weight_parity",
            Detector::RowPairMismatch => "row_pair_mismatch",
            Detector::FsmMismatch => "fsm_mismatch",
            Detector::StreamerMismatch => "streamer_mismatch",
            Detector::RegfileParity => "regfile_parity",
            Detector::EccUncorrectable => "ecc_uncorrectable",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Sticky fault status registers; cleared only by the host.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct FaultStatus {
    flags: u8,
    pub first_fault_cycle: Option<u64>,
    /// Single-bit memory errors repaired by the response decoders.
    pub ecc_corrected: u64,
}

impl FaultStatus {
    pub fn is_set(&self, d: Detector) -> bool {
        self.flags & d.bit() != 0
    }

    pub fn any(&self) -> bool {
        self.flags != 0
    }

    pub fn raise(&mut self, d: Detector, cycle: u64) {
        self.flags |= d.bit();
        self.first_fault_cycle.get_or_insert(cycle);
    }

    pub fn detectors(&self) -> Vec<Detector> {
        Detector::ALL.into_iter().filter(|d| self.is_set(*d)).collect()
    }

    pub fn clear(&mut self) {
        *self = FaultStatus::default();
    }
}

/// An interrupt assertion of `len` consecutive cycles starting at `start`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Pulse {
    pub start: u64,
    pub len: u64,
}

impl Pulse {
    pub fn cycles(&self) -> std::ops::Range<u64> {
        self.start..self.start + self.len
    }

    /// Whether the host sees the line high at least once when single-cycle
    /// transients force it low at `forced_low` cycles.
    pub fn observed(&self, forced_low: &[u64]) -> bool {
        self.cycles().any(|c| !forced_low.contains(&c))
    }
}

pub fn raise_interrupt(cycle: u64) -> Pulse {
    Pulse { start: cycle, len: INTERRUPT_PULSE_CYCLES }
}

/// Bitwise comparison of two rows' results.
pub fn check_row_pair(row_a: &[Fp16], row_b: &[Fp16]) -> bool {
    row_a.len() == row_b.len() && row_a.iter().zip(row_b).all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Lockstep comparison of the primary and replica control words.
pub fn lockstep_fsm_compare(primary: u64, replica: u64) -> bool {
    primary == replica
}

/// Reference result: `z[i][j] = fma(x[i][K-1], w[K-1][j], ... fma(x[i][0], w[0][j], y[i][j]))`.
pub fn golden_matmul(x: &Matrix, w: &Matrix, y: &Matrix) -> Result<Matrix, ConfigError> {
    let (m, k, n) = (x.rows(), x.cols(), w.cols());
    if w.rows() != k || y.rows() != m || y.cols() != n {
        return Err(ConfigError::Shape(format!(
            "X {}x{}, W {}x{}, Y {}x{}",
            m,
            k,
            w.rows(),
            n,
            y.rows(),
            y.cols()
        )));
    }
    Ok(Matrix::from_fn(m, n, |i, j| (0..k).fold(y.get(i, j), |acc, kk| fma(x.get(i, kk), w.get(kk, j), acc))))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    AbortedFault,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    /// Z region read back after completion; `None` otherwise.
    pub z: Option<Matrix>,
    pub cycles: u64,
    pub status: RunStatus,
    pub fault_status: FaultStatus,
    pub interrupt_pulses: Vec<Pulse>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum RunState {
    Idle,
    Running,
    Completed,
    Aborted,
    TimedOut,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
struct StreamOut {
    addr: u32,
    valid: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
struct BufferOut {
    rd_ptr: u16,
    wr_ptr: u16,
    wr_en: bool,
}

/// Configuration as decoded from the (possibly upset) register file.
#[derive(Clone, Copy, Debug)]
struct Decoded {
    m: u32,
    n: u32,
    k: u32,
    x_addr: u32,
    w_addr: u32,
    y_addr: u32,
    z_addr: u32,
    paired: bool,
    rows_per_tile: u32,
    cols_per_tile: u32,
}

impl Decoded {
    fn new(regs: &[u32], cfg: &EngineConfig) -> Self {
        let paired =
            cfg.protection.has_data_protection() && Mode::decode(regs[reg::MODE]) == Mode::FaultTolerant;
        let rows_per_tile = if paired { cfg.rows / 2 } else { cfg.rows } as u32;
        Decoded {
            m: regs[reg::M],
            n: regs[reg::N],
            k: regs[reg::K],
            x_addr: regs[reg::X_ADDR],
            w_addr: regs[reg::W_ADDR],
            y_addr: regs[reg::Y_ADDR],
            z_addr: regs[reg::Z_ADDR],
            paired,
            rows_per_tile,
            cols_per_tile: cfg.cols_per_tile() as u32,
        }
    }

    fn mode(&self) -> Mode {
        if self.paired {
            Mode::FaultTolerant
        } else {
            Mode::Performance
        }
    }

    fn schedule(&self, pipeline: u32) -> Schedule {
        Schedule {
            pipeline,
            k: self.k,
            row_tiles: self.m.div_ceil(self.rows_per_tile.max(1)),
            col_tiles: self.n.div_ceil(self.cols_per_tile.max(1)),
        }
    }

    fn row_base(&self, s: &ControlState) -> u32 {
        u32::from(s.row_tile).wrapping_mul(self.rows_per_tile)
    }

    fn col_base(&self, s: &ControlState, h: u32) -> u32 {
        u32::from(s.col_tile).wrapping_mul(self.cols_per_tile).wrapping_add(u32::from(s.phase).wrapping_mul(h))
    }
}

/// A configured engine attached to its TCDM.
#[derive(Clone, Debug)]
pub struct Engine {
    cfg: EngineConfig,
    job: JobDescriptor,
    mem: Tcdm,
    regfile: [u32; reg::CONFIG_WORDS + 1],
    fsm: [ControlState; 2],
    /// `(row * H + col) * P + stage`; stage 0 is the newest result.
    pipes: Vec<Fp16>,
    x_regs: Vec<Fp16>,
    w_latch: Vec<Fp16>,
    w_buf: Vec<(Fp16, bool)>,
    w_depth: usize,
    status: FaultStatus,
    pulses: Vec<Pulse>,
    cycle: u64,
    run: RunState,
    nominal: u64,
    faults: Vec<FaultSpec>,
    live: Vec<(FaultSite, u64)>,
    // per-cycle scratch
    x_in: Vec<Option<Fp16>>,
    y_in: Vec<Option<Fp16>>,
    z_net: Vec<Option<Fp16>>,
    detected: u8,
}

impl Engine {
    /// Latch `job` into the register file and attach `mem`. With full
    /// protection the job's parity word must match its configuration words.
    pub fn configure(cfg: EngineConfig, job: JobDescriptor, mem: Tcdm) -> Result<Engine, ConfigError> {
        cfg.validate(job.mode)?;
        job.validate(mem.capacity())?;
        if cfg.protection.has_control_protection() {
            let computed = regfile_parity(&job.config_words());
            if computed != job.parity_word {
                return Err(ConfigError::RegfileParity { stored: job.parity_word, computed });
            }
        }
        let (l, h, p) = (cfg.rows, cfg.cols, cfg.pipeline);
        let w_depth = job.k as usize * p;
        let mut engine = Engine {
            cfg,
            job,
            mem,
            regfile: [0; reg::CONFIG_WORDS + 1],
            fsm: [ControlState::default(); 2],
            pipes: vec![Fp16::ZERO; l * h * p],
            x_regs: vec![Fp16::ZERO; l],
            w_latch: vec![Fp16::ZERO; h],
            w_buf: vec![(Fp16::ZERO, false); w_depth * h],
            w_depth,
            status: FaultStatus::default(),
            pulses: Vec::new(),
            cycle: 0,
            run: RunState::Idle,
            nominal: nominal_cycles(&cfg, &job),
            faults: Vec::new(),
            live: Vec::new(),
            x_in: vec![None; l],
            y_in: vec![None; l * h],
            z_net: vec![None; l * h],
            detected: 0,
        };
        engine.program_regfile();
        Ok(engine)
    }

    fn program_regfile(&mut self) {
        self.regfile[..reg::CONFIG_WORDS].copy_from_slice(&self.job.config_words());
        self.regfile[reg::PARITY] = self.job.parity_word;
    }

    /// Rewrite the register file from the job descriptor and reset the
    /// datapath so the job can be launched again. Pending injected faults are
    /// dropped. Fault status is left for the host to read and clear.
    pub fn reprogram(&mut self) -> Result<(), EngineError> {
        if self.run == RunState::Running {
            return Err(EngineError::Busy);
        }
        self.program_regfile();
        self.fsm = [ControlState::default(); 2];
        self.pipes.fill(Fp16::ZERO);
        self.x_regs.fill(Fp16::ZERO);
        self.w_latch.fill(Fp16::ZERO);
        self.w_buf.fill((Fp16::ZERO, false));
        self.pulses.clear();
        self.cycle = 0;
        self.run = RunState::Idle;
        self.faults.clear();
        Ok(())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn job(&self) -> &JobDescriptor {
        &self.job
    }

    pub fn memory(&self) -> &Tcdm {
        &self.mem
    }

    pub fn memory_mut(&mut self) -> &mut Tcdm {
        &mut self.mem
    }

    pub fn into_memory(self) -> Tcdm {
        self.mem
    }

    pub fn regfile(&self) -> &[u32] {
        &self.regfile
    }

    /// Upset one latched register-file bit (between configure and launch).
    pub fn corrupt_regfile_bit(&mut self, word: usize, bit: u32) {
        self.regfile[word] ^= 1 << bit;
    }

    pub fn fault_status(&self) -> FaultStatus {
        self.status
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Fault-free cycle count of the configured job.
    pub fn nominal_cycles(&self) -> u64 {
        self.nominal
    }

    pub fn is_busy(&self) -> bool {
        self.run == RunState::Running
    }

    /// FSM instance whose control signals drive compute row `row`. With
    /// duplicated control, even rows follow the primary and odd rows the
    /// replica.
    pub fn row_driver(&self, row: usize) -> Unit {
        if self.cfg.protection.has_control_protection() && row % 2 == 1 {
            Unit::Shadow
        } else {
            Unit::Primary
        }
    }

    /// Packed control words of the primary and replica FSMs.
    pub fn control_words(&self) -> (u64, u64) {
        (self.fsm[0].pack(), self.fsm[1].pack())
    }

    /// Schedule a single-event transient.
    pub fn inject(&mut self, spec: FaultSpec) {
        self.faults.push(spec);
    }

    pub fn clear_fault_status(&mut self) -> Result<(), EngineError> {
        if self.run == RunState::Running {
            return Err(EngineError::Busy);
        }
        self.status.clear();
        Ok(())
    }

    /// Assert the start trigger; the FSM leaves idle on cycle 0.
    pub fn start(&mut self) -> Result<(), EngineError> {
        if self.run == RunState::Running {
            return Err(EngineError::Busy);
        }
        if self.run != RunState::Idle {
            self.reprogram()?;
        }
        self.run = RunState::Running;
        Ok(())
    }

    pub fn run_to_completion(&mut self) -> RunOutcome {
        if self.run != RunState::Running {
            self.start().expect("engine is not running");
        }
        let limit = self.cfg.watchdog_factor.saturating_mul(self.nominal);
        while self.run == RunState::Running {
            if self.cycle >= limit {
                self.run = RunState::TimedOut;
                break;
            }
            self.step();
            let primary = self.fsm[0];
            if self.run == RunState::Running && (primary.state == control::IDLE || !primary.is_valid()) {
                // Hung or silently idle: nothing will ever signal the host.
                self.run = RunState::TimedOut;
                self.cycle = limit;
            }
        }

        let mut status = match self.run {
            RunState::Completed => RunStatus::Completed,
            RunState::Aborted => RunStatus::AbortedFault,
            _ => RunStatus::Timeout,
        };
        if status == RunStatus::AbortedFault && !self.host_notified() {
            status = RunStatus::Timeout;
            self.cycle = limit;
        }
        let z = (status == RunStatus::Completed).then(|| self.read_z());
        RunOutcome {
            z,
            cycles: self.cycle,
            status,
            fault_status: self.status,
            interrupt_pulses: self.pulses.clone(),
        }
    }

    fn host_notified(&self) -> bool {
        let forced_low: Vec<u64> =
            self.faults.iter().filter(|f| f.site == FaultSite::InterruptWire).map(|f| f.cycle).collect();
        self.pulses.iter().any(|p| p.observed(&forced_low))
    }

    fn read_z(&self) -> Matrix {
        let (m, n) = (self.job.m as usize, self.job.n as usize);
        let elems = self.mem.peek_elements(self.job.z_addr as usize, m * n).expect("Z region validated at configure");
        Matrix::from_vec(m, n, elems).expect("Z shape")
    }

    #[inline]
    fn flip(&self, site: FaultSite) -> u64 {
        if self.live.is_empty() {
            return 0;
        }
        self.live.iter().filter(|(s, _)| *s == site).fold(0, |acc, (_, m)| acc ^ m)
    }

    #[inline]
    fn flip16(&self, site: FaultSite) -> u16 {
        self.flip(site) as u16
    }

    fn detect(&mut self, d: Detector) {
        self.detected |= d.bit();
    }

    fn streams(&self, unit: Unit, s: &ControlState, dec: &Decoded) -> [StreamOut; 4] {
        let h = self.cfg.cols as u32;
        let row_base = dec.row_base(s);
        let col_base = dec.col_base(s, h);
        let k = u32::from(s.k);
        let compute = s.state == control::COMPUTE;
        let mut out = [
            // X
            StreamOut {
                addr: dec.x_addr.wrapping_add(row_base.wrapping_mul(dec.k)).wrapping_add(k),
                valid: compute && s.phase == 0,
            },
            // W
            StreamOut {
                addr: dec.w_addr.wrapping_add(k.wrapping_mul(dec.n)).wrapping_add(col_base),
                valid: compute && s.row_tile == 0,
            },
            // Y
            StreamOut {
                addr: dec.y_addr.wrapping_add(row_base.wrapping_mul(dec.n)).wrapping_add(col_base),
                valid: compute && s.k == 0,
            },
            // Z
            StreamOut {
                addr: dec.z_addr.wrapping_add(row_base.wrapping_mul(dec.n)).wrapping_add(col_base),
                valid: s.state == control::DRAIN,
            },
        ];
        if !self.live.is_empty() {
            for stream in Stream::ALL {
                let o = &mut out[stream.index()];
                o.addr ^= self.flip(FaultSite::Streamer { unit, stream, field: StreamField::Addr }) as u32;
                o.valid ^= self.flip(FaultSite::Streamer { unit, stream, field: StreamField::Valid }) != 0;
            }
        }
        out
    }

    fn buffer_ctrl(&self, unit: Unit, s: &ControlState) -> BufferOut {
        let ptr = (u32::from(s.k) * self.cfg.pipeline as u32 + u32::from(s.phase)) as u16;
        let mut out = BufferOut { rd_ptr: ptr, wr_ptr: ptr, wr_en: s.state == control::COMPUTE && s.row_tile == 0 };
        if !self.live.is_empty() {
            out.rd_ptr ^= self.flip16(FaultSite::Buffer { unit, field: BufferField::ReadPtr });
            out.wr_ptr ^= self.flip16(FaultSite::Buffer { unit, field: BufferField::WritePtr });
            out.wr_en ^= self.flip(FaultSite::Buffer { unit, field: BufferField::WriteEnable }) != 0;
        }
        out
    }

    /// Per-row response decoder (after duplication). The baseline engine has
    /// no decoder and consumes the raw data field.
    fn decode_lane(&mut self, cw: Codeword) -> Fp16 {
        if !self.cfg.protection.has_data_protection() {
            return Fp16(cw.raw_data() as u16);
        }
        let (word, st) = secded_decode(cw);
        match st {
            DecodeStatus::Clean => {}
            DecodeStatus::Corrected(_) => self.status.ecc_corrected += 1,
            DecodeStatus::Uncorrectable => self.detect(Detector::EccUncorrectable),
        }
        Fp16(word as u16)
    }

    /// Advance one clock cycle.
    pub fn step(&mut self) {
        if self.run != RunState::Running {
            return;
        }
        let c = self.cycle;
        let (l, h, p) = (self.cfg.rows, self.cfg.cols, self.cfg.pipeline);
        let data_prot = self.cfg.protection.has_data_protection();
        let ctrl_prot = self.cfg.protection.has_control_protection();
        self.detected = 0;

        self.live.clear();
        for f in &self.faults {
            if f.cycle == c {
                self.live.push((f.site, 1u64 << f.bit));
            }
        }
        // Register upsets latch at the start of the cycle.
        for i in 0..self.live.len() {
            let (site, mask) = self.live[i];
            match site {
                FaultSite::Fsm { unit } => {
                    let u = unit.index();
                    self.fsm[u] = ControlState::unpack(self.fsm[u].pack() ^ mask);
                }
                FaultSite::Regfile { word } => self.regfile[word as usize] ^= mask as u32,
                FaultSite::Pipeline { row, col, stage } => {
                    let idx = (usize::from(row) * h + usize::from(col)) * p + usize::from(stage);
                    self.pipes[idx].0 ^= mask as u16;
                }
                _ => {}
            }
        }

        if ctrl_prot {
            let fold = regfile_parity(&self.regfile[..reg::CONFIG_WORDS]);
            for unit in [Unit::Primary, Unit::Shadow] {
                let seen = fold ^ self.flip(FaultSite::RegfileChecker { unit }) as u32;
                if seen != self.regfile[reg::PARITY] {
                    self.detect(Detector::RegfileParity);
                }
            }
            let replica = self.fsm[1].pack() ^ self.flip(FaultSite::LockstepChecker);
            if !lockstep_fsm_compare(self.fsm[0].pack(), replica) {
                self.detect(Detector::FsmMismatch);
            }
        }

        let dec = Decoded::new(&self.regfile, &self.cfg);
        let mode = dec.mode();
        let primary = self.fsm[0];
        let streams = self.streams(Unit::Primary, &primary, &dec);
        let buf = self.buffer_ctrl(Unit::Primary, &primary);
        if ctrl_prot {
            let replica = self.fsm[1];
            let shadow_streams = self.streams(Unit::Shadow, &replica, &dec);
            let shadow_buf = self.buffer_ctrl(Unit::Shadow, &replica);
            if shadow_streams != streams || shadow_buf != buf {
                self.detect(Detector::StreamerMismatch);
            }
        }

        let r_tile = dec.rows_per_tile as usize;
        let row_base = dec.row_base(&primary);
        let col_base = dec.col_base(&primary, h as u32);
        let row_live = |s: usize| row_base.wrapping_add(s as u32) < dec.m;
        let col_live = |j: usize| col_base.wrapping_add(j as u32) < dec.n;
        let lane_row = |s: usize| if dec.paired { 2 * s } else { s };

        // X: one fetch per output row, fanned out to the pair.
        self.x_in.fill(None);
        let xs = streams[Stream::X.index()];
        if xs.valid {
            for s in (0..r_tile).filter(|&s| row_live(s)) {
                let addr = xs.addr.wrapping_add((s as u32).wrapping_mul(dec.k));
                let idx = self.mem.port_index(addr);
                let cw = self.mem.fetch_codeword(c, Port::X, idx).expect("aliased address");
                let cw = cw.xor(self.flip(FaultSite::XResponse { row: lane_row(s) as u16 }));
                for i in RowSet::for_lane(mode, s).rows(l) {
                    self.x_in[i] = Some(self.decode_lane(cw));
                }
            }
        }

        // Y: accumulator initial values on the first step of a tile.
        self.y_in.fill(None);
        let ys = streams[Stream::Y.index()];
        if ys.valid {
            for s in (0..r_tile).filter(|&s| row_live(s)) {
                for j in (0..h).filter(|&j| col_live(j)) {
                    let addr = ys.addr.wrapping_add((s as u32).wrapping_mul(dec.n)).wrapping_add(j as u32);
                    let idx = self.mem.port_index(addr);
                    let cw = self.mem.fetch_codeword(c, Port::Y, idx).expect("aliased address");
                    let cw = cw.xor(self.flip(FaultSite::YResponse { row: lane_row(s) as u16, col: j as u16 }));
                    for i in RowSet::for_lane(mode, s).rows(l) {
                        self.y_in[i * h + j] = Some(self.decode_lane(cw));
                    }
                }
            }
        }

        // W: fetched during the first row tile and kept in the weight buffer;
        // parity is generated on the decoded word.
        let ws = streams[Stream::W.index()];
        if ws.valid {
            for j in (0..h).filter(|&j| col_live(j)) {
                let idx = self.mem.port_index(ws.addr.wrapping_add(j as u32));
                let cw = self.mem.fetch_codeword(c, Port::W, idx).expect("aliased address");
                let cw = cw.xor(self.flip(FaultSite::WResponse { col: j as u16 }));
                self.w_latch[j] = self.decode_lane(cw);
            }
        }
        if buf.wr_en {
            let slot = usize::from(buf.wr_ptr) % self.w_depth;
            for j in 0..h {
                let w = self.w_latch[j];
                self.w_buf[slot * h + j] = (w, parity_bit(w));
            }
        }
        let rd_slot = usize::from(buf.rd_ptr) % self.w_depth;

        // Compute rows.
        self.z_net.fill(None);
        for i in 0..l {
            let ctl = match self.row_driver(i) {
                Unit::Primary => self.fsm[0],
                Unit::Shadow => self.fsm[1],
            };
            let slot = if dec.paired { i / 2 } else { i };
            if slot >= r_tile || dec.row_base(&ctl).wrapping_add(slot as u32) >= dec.m {
                continue;
            }
            match ctl.state {
                control::COMPUTE => {
                    let x_net = match (ctl.phase, self.x_in[i]) {
                        (0, Some(x)) => x,
                        _ => self.x_regs[i],
                    };
                    self.x_regs[i] = x_net;
                    let x = Fp16(x_net.0 ^ self.flip16(FaultSite::XData { row: i as u16 }));
                    for j in 0..h {
                        let (row, col) = (i as u16, j as u16);
                        let (w0, par0) = self.w_buf[rd_slot * h + j];
                        let w = Fp16(w0.0 ^ self.flip16(FaultSite::WBroadcast { row, col }));
                        let par = par0 ^ (self.flip(FaultSite::WParity { row, col }) != 0);
                        if data_prot && parity_bit(w) != par {
                            self.detect(Detector::WeightParity);
                        }
                        let base = (i * h + j) * p;
                        let acc = if ctl.k == 0 {
                            let y = self.y_in[i * h + j].unwrap_or(Fp16::ZERO);
                            Fp16(y.0 ^ self.flip16(FaultSite::YData { row, col }))
                        } else {
                            self.pipes[base + p - 1]
                        };
                        let result = fma(x, w, acc);
                        self.pipes[base..base + p].rotate_right(1);
                        self.pipes[base] = result;
                    }
                }
                control::DRAIN => {
                    for j in 0..h {
                        let base = (i * h + j) * p;
                        let out = self.pipes[base + p - 1];
                        let flip = self.flip16(FaultSite::ZWriteback { row: i as u16, col: j as u16 });
                        self.z_net[i * h + j] = Some(Fp16(out.0 ^ flip));
                        self.pipes[base..base + p].rotate_right(1);
                    }
                }
                _ => {}
            }
        }

        // Store path: pair checker, then the write filter.
        let mut writes = Vec::new();
        let zs = streams[Stream::Z.index()];
        if zs.valid {
            // One beat per column: every row of the tile presents its store.
            let mut requests = Vec::with_capacity(l);
            for j in (0..h).filter(|&j| col_live(j)) {
                requests.clear();
                for s in (0..r_tile).filter(|&s| row_live(s)) {
                    let addr = zs.addr.wrapping_add((s as u32).wrapping_mul(dec.n)).wrapping_add(j as u32);
                    for i in RowSet::for_lane(mode, s).rows(l) {
                        // A row whose driver is not draining still presents its
                        // oldest pipeline stage.
                        let data = self.z_net[i * h + j].unwrap_or(self.pipes[(i * h + j) * p + p - 1]);
                        requests.push(WriteRequest { row: i, addr, data });
                    }
                }
                if dec.paired {
                    for pair in requests.chunks_exact(2) {
                        let seen = |r: &WriteRequest| {
                            Fp16(r.data.0 ^ self.flip16(FaultSite::PairChecker { row: r.row as u16, col: j as u16 }))
                        };
                        if !check_row_pair(&[seen(&pair[0])], &[seen(&pair[1])]) {
                            self.detected |= Detector::RowPairMismatch.bit();
                        }
                    }
                }
                let filtered = write_filter(mode, &requests);
                if !filtered.mismatched_pairs.is_empty() {
                    self.detect(Detector::RowPairMismatch);
                }
                writes.extend(filtered.writes);
            }
        }

        if self.detected != 0 {
            self.abort(c);
            return;
        }

        for w in writes {
            let idx = self.mem.port_index(w.addr);
            self.mem.store(c, Port::Z, idx, u32::from(w.data.to_bits())).expect("aliased address");
        }

        let sched = dec.schedule(p as u32);
        let start = c == 0;
        let was_done = self.fsm[0].state == control::DONE;
        self.fsm[0] = self.fsm[0].next(&sched, start);
        if ctrl_prot {
            self.fsm[1] = self.fsm[1].next(&sched, start);
        }
        self.cycle += 1;
        if was_done {
            self.run = RunState::Completed;
        }
    }

    fn abort(&mut self, cycle: u64) {
        for d in Detector::ALL {
            if self.detected & d.bit() != 0 {
                self.status.raise(d, cycle);
            }
        }
        self.pulses.push(raise_interrupt(cycle));
        self.fsm = [ControlState::default(); 2];
        self.cycle = cycle + 1;
        self.run = RunState::Aborted;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_identity_and_single_element() {
        let w = Matrix::from_fn(4, 5, |i, j| Fp16((0x3000 + 7 * i + j) as u16));
        let eye = Matrix::from_fn(4, 4, |i, j| if i == j { Fp16::ONE } else { Fp16::ZERO });
        assert_eq!(golden_matmul(&eye, &w, &Matrix::zeros(4, 5)).unwrap(), w);
        let one = |v| Matrix::from_vec(1, 1, vec![Fp16(v)]).unwrap();
        let z = golden_matmul(&one(0x4000), &one(0x4200), &one(0x3C00)).unwrap();
        assert_eq!(z.get(0, 0), fma(Fp16(0x4000), Fp16(0x4200), Fp16(0x3C00)));
        assert!(golden_matmul(&eye, &Matrix::zeros(3, 5), &Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn pair_check_is_bitwise() {
        let nan = [Fp16(0x7E01), Fp16::ONE];
        assert!(check_row_pair(&nan, &nan));
        assert!(!check_row_pair(&[Fp16::ZERO], &[Fp16::NEG_ZERO]));
        for bit in 0..16 {
            assert!(!check_row_pair(&[Fp16(0x3555)], &[Fp16(0x3555 ^ (1 << bit))]));
        }
        assert!(lockstep_fsm_compare(5, 5) && !lockstep_fsm_compare(5, 4));
    }

    #[test]
    fn interrupt_pulse_survives_one_transient() {
        let p = raise_interrupt(40);
        assert_eq!(p.cycles(), 40..42);
        assert!(p.observed(&[40]) && p.observed(&[41]) && p.observed(&[]));
    }

    #[test]
    fn configure_rejects_bad_jobs() {
        let cfg = EngineConfig::reference(Protection::Full);
        let job = JobDescriptor::packed(12, 16, 16, Mode::FaultTolerant, 0);
        let mem = || Tcdm::new(1024);
        let stale = JobDescriptor { parity_word: job.parity_word ^ 1, ..job };
        assert!(matches!(Engine::configure(cfg, stale, mem()), Err(ConfigError::RegfileParity { .. })));
        let odd = EngineConfig::new(3, 4, 3, Protection::Full);
        assert_eq!(Engine::configure(odd, job, mem()).err(), Some(ConfigError::OddRows(3)));
        assert!(Engine::configure(cfg, job, Tcdm::new(100)).is_err());
        // Without control protection the parity word is not consulted.
        let data = EngineConfig::reference(Protection::DataOnly);
        assert!(Engine::configure(data, stale, mem()).is_ok());
    }

    #[test]
    fn coalesced_detections_share_one_pulse() {
        let cfg = EngineConfig::reference(Protection::Full);
        let job = JobDescriptor::packed(12, 16, 16, Mode::FaultTolerant, 0);
        let mut e = Engine::configure(cfg, job, Tcdm::new(1024)).unwrap();
        e.inject(FaultSpec { site: FaultSite::WBroadcast { row: 1, col: 1 }, bit: 2, cycle: 9 });
        e.inject(FaultSpec { site: FaultSite::Fsm { unit: Unit::Shadow }, bit: 20, cycle: 9 });
        let out = e.run_to_completion();
        assert_eq!(out.status, RunStatus::AbortedFault);
        assert!(out.fault_status.is_set(Detector::WeightParity) && out.fault_status.is_set(Detector::FsmMismatch));
        assert_eq!(out.interrupt_pulses, vec![Pulse { start: 9, len: 2 }]);
    }
}
