//! Architectural fault sites: every register and stage-boundary signal a
//! single-event transient can hit. Clock and reset nets are not sites.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecc::CODEWORD_BITS;
use crate::engine::{reg, EngineConfig, CONTROL_BITS};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum SiteCategory {
    XData,
    YData,
    WBroadcast,
    ZWriteback,
    CePipelineState,
    StreamerCtrl,
    BufferCtrl,
    FsmState,
    RegfileBit,
    CheckerInput,
    InterruptWire,
    MemResponseBit,
}

impl SiteCategory {
    pub const ALL: [SiteCategory; 12] = [
        SiteCategory::XData,
        SiteCategory::YData,
        SiteCategory::WBroadcast,
        SiteCategory::ZWriteback,
        SiteCategory::CePipelineState,
        SiteCategory::StreamerCtrl,
        SiteCategory::BufferCtrl,
        SiteCategory::FsmState,
        SiteCategory::RegfileBit,
        SiteCategory::CheckerInput,
        SiteCategory::InterruptWire,
        SiteCategory::MemResponseBit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SiteCategory::XData => "x_data",
            SiteCategory::YData => "y_data",
            SiteCategory::WBroadcast => "w_broadcast",
            SiteCategory::ZWriteback => "z_writeback",
            SiteCategory::CePipelineState => "ce_pipeline_state",
            SiteCategory::StreamerCtrl => "streamer_ctrl",
            SiteCategory::BufferCtrl => "buffer_ctrl",
            SiteCategory::FsmState => "fsm_state",
            SiteCategory::RegfileBit => "regfile_bit",
            SiteCategory::CheckerInput => "checker_input",
            SiteCategory::InterruptWire => "interrupt_wire",
            SiteCategory::MemResponseBit => "mem_response_bit",
        }
    }

    /// Operand data signals covered by paired-row execution and weight parity.
    pub fn is_data_path(self) -> bool {
        matches!(
            self,
            SiteCategory::XData | SiteCategory::YData | SiteCategory::WBroadcast | SiteCategory::ZWriteback
        )
    }
}

impl fmt::Display for SiteCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SiteCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SiteCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown site category `{s}`"))
    }
}

/// Primary instance or its duplicate (replica FSM / shadow streamer).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Primary,
    Shadow,
}

impl Unit {
    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Unit::Primary => "primary",
            Unit::Shadow => "shadow",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    X,
    W,
    Y,
    Z,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::X, Stream::W, Stream::Y, Stream::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Stream::X => "x",
            Stream::W => "w",
            Stream::Y => "y",
            Stream::Z => "z",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamField {
    Addr,
    Valid,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferField {
    ReadPtr,
    WritePtr,
    WriteEnable,
}

/// One injectable signal or register.
///
/// Register sites (`Pipeline`, `Fsm`, `Regfile`) hold a flipped bit until the
/// register is next written; every other site is a net whose value is
/// inverted for the single cycle of the transient.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSite {
    /// X operand entering a compute row.
    XData { row: u16 },
    /// Y value loaded into an accumulator.
    YData { row: u16, col: u16 },
    /// Weight at a compute element after broadcast.
    WBroadcast { row: u16, col: u16 },
    /// Parity bit travelling with the broadcast weight.
    WParity { row: u16, col: u16 },
    /// Result leaving a compute element towards the checker and store path.
    ZWriteback { row: u16, col: u16 },
    Pipeline { row: u16, col: u16, stage: u16 },
    Streamer { unit: Unit, stream: Stream, field: StreamField },
    Buffer { unit: Unit, field: BufferField },
    Fsm { unit: Unit },
    Regfile { word: u8 },
    PairChecker { row: u16, col: u16 },
    LockstepChecker,
    RegfileChecker { unit: Unit },
    InterruptWire,
    XResponse { row: u16 },
    YResponse { row: u16, col: u16 },
    WResponse { col: u16 },
}

impl FaultSite {
    pub fn category(self) -> SiteCategory {
        match self {
            FaultSite::XData { .. } => SiteCategory::XData,
            FaultSite::YData { .. } => SiteCategory::YData,
            FaultSite::WBroadcast { .. } | FaultSite::WParity { .. } => SiteCategory::WBroadcast,
            FaultSite::ZWriteback { .. } => SiteCategory::ZWriteback,
            FaultSite::Pipeline { .. } => SiteCategory::CePipelineState,
            FaultSite::Streamer { .. } => SiteCategory::StreamerCtrl,
            FaultSite::Buffer { .. } => SiteCategory::BufferCtrl,
            FaultSite::Fsm { .. } => SiteCategory::FsmState,
            FaultSite::Regfile { .. } => SiteCategory::RegfileBit,
            FaultSite::PairChecker { .. } | FaultSite::LockstepChecker | FaultSite::RegfileChecker { .. } => {
                SiteCategory::CheckerInput
            }
            FaultSite::InterruptWire => SiteCategory::InterruptWire,
            FaultSite::XResponse { .. } | FaultSite::YResponse { .. } | FaultSite::WResponse { .. } => {
                SiteCategory::MemResponseBit
            }
        }
    }

    pub fn width(self) -> u32 {
        match self {
            FaultSite::XData { .. }
            | FaultSite::YData { .. }
            | FaultSite::WBroadcast { .. }
            | FaultSite::ZWriteback { .. }
            | FaultSite::Pipeline { .. }
            | FaultSite::PairChecker { .. } => 16,
            FaultSite::WParity { .. } | FaultSite::InterruptWire => 1,
            FaultSite::Streamer { field: StreamField::Addr, .. } => 32,
            FaultSite::Streamer { field: StreamField::Valid, .. } => 1,
            FaultSite::Buffer { field: BufferField::WriteEnable, .. } => 1,
            FaultSite::Buffer { .. } => 16,
            FaultSite::Fsm { .. } | FaultSite::LockstepChecker => CONTROL_BITS,
            FaultSite::Regfile { .. } | FaultSite::RegfileChecker { .. } => 32,
            FaultSite::XResponse { .. } | FaultSite::YResponse { .. } | FaultSite::WResponse { .. } => CODEWORD_BITS,
        }
    }

    /// Stable identifier, e.g. `w_broadcast/r3/c1` or `fsm_state/shadow`.
    pub fn id(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FaultSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cat = self.category();
        match *self {
            FaultSite::XData { row } => write!(f, "{cat}/r{row}"),
            FaultSite::YData { row, col } | FaultSite::WBroadcast { row, col } | FaultSite::ZWriteback { row, col } => {
                write!(f, "{cat}/r{row}/c{col}")
            }
            FaultSite::WParity { row, col } => write!(f, "{cat}/r{row}/c{col}/parity"),
            FaultSite::Pipeline { row, col, stage } => write!(f, "{cat}/r{row}/c{col}/s{stage}"),
            FaultSite::Streamer { unit, stream, field } => {
                let field = match field {
                    StreamField::Addr => "addr",
                    StreamField::Valid => "valid",
                };
                write!(f, "{cat}/{}/{}/{field}", unit.name(), stream.name())
            }
            FaultSite::Buffer { unit, field } => {
                let field = match field {
                    BufferField::ReadPtr => "rd_ptr",
                    BufferField::WritePtr => "wr_ptr",
                    BufferField::WriteEnable => "wr_en",
                };
                write!(f, "{cat}/{}/w/{field}", unit.name())
            }
            FaultSite::Fsm { unit } => write!(f, "{cat}/{}", unit.name()),
            FaultSite::Regfile { word } => write!(f, "{cat}/{}", reg::NAMES[word as usize]),
            FaultSite::PairChecker { row, col } => write!(f, "{cat}/pair/r{row}/c{col}"),
            FaultSite::LockstepChecker => write!(f, "{cat}/lockstep"),
            FaultSite::RegfileChecker { unit } => write!(f, "{cat}/regfile/{}", unit.name()),
            FaultSite::InterruptWire => write!(f, "{cat}"),
            FaultSite::XResponse { row } => write!(f, "{cat}/x/r{row}"),
            FaultSite::YResponse { row, col } => write!(f, "{cat}/y/r{row}/c{col}"),
            FaultSite::WResponse { col } => write!(f, "{cat}/w/c{col}"),
        }
    }
}

/// Ordered catalog of every site present in `cfg`'s hardware variant.
///
/// Sites that only exist with a given protection level (weight parity, pair
/// checkers, replica FSM, shadow streamers, the parity register) are listed
/// only for that variant.
pub fn enumerate_sites(cfg: &EngineConfig) -> Vec<FaultSite> {
    let (l, h, p) = (cfg.rows as u16, cfg.cols as u16, cfg.pipeline as u16);
    let data = cfg.protection.has_data_protection();
    let control = cfg.protection.has_control_protection();
    let units: &[Unit] = if control { &[Unit::Primary, Unit::Shadow] } else { &[Unit::Primary] };
    let grid = || (0..l).flat_map(move |row| (0..h).map(move |col| (row, col)));

    let mut sites = Vec::new();
    sites.extend((0..l).map(|row| FaultSite::XData { row }));
    sites.extend(grid().map(|(row, col)| FaultSite::YData { row, col }));
    sites.extend(grid().map(|(row, col)| FaultSite::WBroadcast { row, col }));
    if data {
        sites.extend(grid().map(|(row, col)| FaultSite::WParity { row, col }));
    }
    sites.extend(grid().map(|(row, col)| FaultSite::ZWriteback { row, col }));
    sites.extend(grid().flat_map(|(row, col)| (0..p).map(move |stage| FaultSite::Pipeline { row, col, stage })));
    for &unit in units {
        for stream in Stream::ALL {
            for field in [StreamField::Addr, StreamField::Valid] {
                sites.push(FaultSite::Streamer { unit, stream, field });
            }
        }
    }
    for &unit in units {
        for field in [BufferField::ReadPtr, BufferField::WritePtr, BufferField::WriteEnable] {
            sites.push(FaultSite::Buffer { unit, field });
        }
    }
    sites.extend(units.iter().map(|&unit| FaultSite::Fsm { unit }));
    let words = if control { reg::CONFIG_WORDS + 1 } else { reg::CONFIG_WORDS };
    sites.extend((0..words as u8).map(|word| FaultSite::Regfile { word }));
    if data {
        sites.extend(grid().map(|(row, col)| FaultSite::PairChecker { row, col }));
    }
    if control {
        sites.push(FaultSite::LockstepChecker);
        sites.extend(units.iter().map(|&unit| FaultSite::RegfileChecker { unit }));
    }
    sites.push(FaultSite::InterruptWire);
    sites.extend((0..l).map(|row| FaultSite::XResponse { row }));
    sites.extend(grid().map(|(row, col)| FaultSite::YResponse { row, col }));
    sites.extend((0..h).map(|col| FaultSite::WResponse { col }));
    sites
}

/// Per-category `(sites, bits)` of a catalog.
pub fn category_counts(sites: &[FaultSite]) -> Vec<(SiteCategory, usize, u64)> {
    SiteCategory::ALL
        .into_iter()
        .map(|cat| {
            let members = sites.iter().filter(|s| s.category() == cat);
            let (n, bits) = members.fold((0usize, 0u64), |(n, b), s| (n + 1, b + u64::from(s.width())));
            (cat, n, bits)
        })
        .collect()
}
