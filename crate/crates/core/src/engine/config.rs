use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecc::regfile_parity;
use crate::error::ConfigError;

/// Runtime execution mode, selected through the register file before a job.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Performance,
    FaultTolerant,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Performance => "performance",
            Mode::FaultTolerant => "fault_tolerant",
        }
    }

    pub(crate) fn encode(self) -> u32 {
        match self {
            Mode::Performance => 0,
            Mode::FaultTolerant => 1,
        }
    }

    /// The mode register only decodes its lowest bit.
    pub(crate) fn decode(word: u32) -> Mode {
        if word & 1 == 1 {
            Mode::FaultTolerant
        } else {
            Mode::Performance
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "performance" | "perf" => Ok(Mode::Performance),
            "fault_tolerant" | "ft" => Ok(Mode::FaultTolerant),
            other => Err(format!("unknown mode `{other}` (expected performance|fault_tolerant)")),
        }
    }
}

/// Which protection hardware the engine is built with.
///
/// * `Baseline` has no checkers at all and only runs in performance mode.
/// * `DataOnly` adds ECC decoding of responses, paired-row execution with the
///   output checker and write filter, and broadcast-weight parity.
/// * `Full` additionally duplicates the scheduler FSM, the streamers and the
///   weight-buffer control (shadow copies without data payload), and guards the
///   register file with a parity word checked every cycle.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Protection {
    Baseline,
    DataOnly,
    Full,
}

impl Protection {
    pub fn as_str(self) -> &'static str {
        match self {
            Protection::Baseline => "baseline",
            Protection::DataOnly => "data_only",
            Protection::Full => "full",
        }
    }

    pub fn has_data_protection(self) -> bool {
        self != Protection::Baseline
    }

    pub fn has_control_protection(self) -> bool {
        self == Protection::Full
    }

    /// Mode used when a plan does not name one.
    pub fn default_mode(self) -> Mode {
        match self {
            Protection::Baseline => Mode::Performance,
            _ => Mode::FaultTolerant,
        }
    }
}

impl fmt::Display for Protection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Protection::Baseline),
            "data_only" | "data" => Ok(Protection::DataOnly),
            "full" => Ok(Protection::Full),
            other => Err(format!("unknown variant `{other}` (expected baseline|data_only|full)")),
        }
    }
}

/// Static engine geometry.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Compute rows (L).
    pub rows: usize,
    /// Compute elements per row (H).
    pub cols: usize,
    /// Pipeline registers per compute element (P).
    pub pipeline: usize,
    /// A run is declared a timeout after `watchdog_factor` times its
    /// fault-free cycle count.
    pub watchdog_factor: u64,
    pub protection: Protection,
}

impl EngineConfig {
    pub const DEFAULT_WATCHDOG: u64 = 4;

    pub fn new(rows: usize, cols: usize, pipeline: usize, protection: Protection) -> Self {
        EngineConfig { rows, cols, pipeline, watchdog_factor: Self::DEFAULT_WATCHDOG, protection }
    }

    /// The evaluated instance: 12 rows of 4 elements with 3 pipeline stages.
    pub fn reference(protection: Protection) -> Self {
        Self::new(12, 4, 3, protection)
    }

    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        if self.rows == 0 || self.cols == 0 || self.pipeline == 0 || self.pipeline > MAX_PIPELINE {
            return Err(ConfigError::Geometry { rows: self.rows, cols: self.cols, pipeline: self.pipeline });
        }
        if mode == Mode::FaultTolerant {
            if self.protection == Protection::Baseline {
                return Err(ConfigError::ModeUnsupported);
            }
            if self.rows < 2 || !self.rows.is_multiple_of(2) {
                return Err(ConfigError::OddRows(self.rows));
            }
        }
        Ok(())
    }

    /// Output rows processed per tile.
    pub fn rows_per_tile(&self, mode: Mode) -> usize {
        match mode {
            Mode::FaultTolerant if self.protection.has_data_protection() => self.rows / 2,
            _ => self.rows,
        }
    }

    /// Output columns processed per tile: each element interleaves `P`
    /// accumulators.
    pub fn cols_per_tile(&self) -> usize {
        self.cols * self.pipeline
    }
}

/// Largest pipeline depth the 8-bit phase counter can sequence.
pub const MAX_PIPELINE: usize = 255;
/// Largest M, N or K the 16-bit tile and step counters can sequence.
pub const MAX_DIMENSION: u32 = u16::MAX as u32;

/// Register-file word indices.
pub mod reg {
    pub const M: usize = 0;
    pub const N: usize = 1;
    pub const K: usize = 2;
    pub const X_ADDR: usize = 3;
    pub const W_ADDR: usize = 4;
    pub const Y_ADDR: usize = 5;
    pub const Z_ADDR: usize = 6;
    pub const MODE: usize = 7;
    /// Number of configuration words covered by the parity word.
    pub const CONFIG_WORDS: usize = 8;
    pub const PARITY: usize = 8;
    pub const NAMES: [&str; 9] = ["m", "n", "k", "x_addr", "w_addr", "y_addr", "z_addr", "mode", "parity"];
}

/// One workload as programmed into the register file.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct JobDescriptor {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub x_addr: u32,
    pub w_addr: u32,
    pub y_addr: u32,
    pub z_addr: u32,
    pub mode: Mode,
    pub parity_word: u32,
}

impl JobDescriptor {
    /// Operands packed back to back from `base`: X, W, Y, then Z. The parity
    /// word is filled in.
    pub fn packed(m: u32, n: u32, k: u32, mode: Mode, base: u32) -> Self {
        let x_addr = base;
        let w_addr = x_addr + m * k;
        let y_addr = w_addr + k * n;
        let z_addr = y_addr + m * n;
        JobDescriptor { m, n, k, x_addr, w_addr, y_addr, z_addr, mode, parity_word: 0 }.with_parity()
    }

    pub fn config_words(&self) -> [u32; reg::CONFIG_WORDS] {
        [self.m, self.n, self.k, self.x_addr, self.w_addr, self.y_addr, self.z_addr, self.mode.encode()]
    }

    /// Recomputes the parity word, as the host does before launching.
    pub fn with_parity(mut self) -> Self {
        self.parity_word = regfile_parity(&self.config_words());
        self
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        JobDescriptor { mode, ..self }.with_parity()
    }

    /// One word past the highest operand address.
    pub fn memory_end(&self) -> u64 {
        self.regions().iter().map(|r| r.1 + r.2).max().unwrap_or(0)
    }

    /// `(name, start, len)` for X, W, Y and Z.
    pub fn regions(&self) -> [(&'static str, u64, u64); 4] {
        let (m, n, k) = (u64::from(self.m), u64::from(self.n), u64::from(self.k));
        [
            ("x", u64::from(self.x_addr), m * k),
            ("w", u64::from(self.w_addr), k * n),
            ("y", u64::from(self.y_addr), m * n),
            ("z", u64::from(self.z_addr), m * n),
        ]
    }

    pub fn validate(&self, capacity: usize) -> Result<(), ConfigError> {
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(ConfigError::ZeroDimension { m: self.m, n: self.n, k: self.k });
        }
        for (name, value) in [("M", self.m), ("N", self.n), ("K", self.k)] {
            if value > MAX_DIMENSION {
                return Err(ConfigError::DimensionTooLarge { name, value });
            }
        }
        let regions = self.regions();
        for &(name, start, len) in &regions {
            if start + len > capacity as u64 {
                return Err(ConfigError::RegionOutOfBounds { name, start, end: start + len, capacity });
            }
        }
        let (_, z_start, z_len) = regions[3];
        for &(name, start, len) in &regions[..3] {
            if start < z_start + z_len && z_start < start + len {
                return Err(ConfigError::RegionOverlap(name));
            }
        }
        Ok(())
    }

    /// Host-side cost of computing and programming the parity word, charged
    /// once per workload to setup accounting (never to engine cycles).
    pub const PARITY_SETUP_CYCLES: u64 = 120;
}

/// Fault-free cycle count of a job: one trigger cycle, then per tile one
/// setup cycle, `K * P` compute cycles and `P` drain cycles, then one done
/// cycle.
pub fn nominal_cycles(cfg: &EngineConfig, job: &JobDescriptor) -> u64 {
    let rows = cfg.rows_per_tile(job.mode) as u64;
    let cols = cfg.cols_per_tile() as u64;
    let p = cfg.pipeline as u64;
    let tiles = u64::from(job.m).div_ceil(rows) * u64::from(job.n).div_ceil(cols);
    2 + tiles * (1 + u64::from(job.k) * p + p)
}
