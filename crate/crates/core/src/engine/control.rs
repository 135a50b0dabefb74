//! Scheduler/control FSM. Both the primary and the replica instance use this
//! state; lockstep comparison works on the packed control word.

/// Width of the packed control word.
pub const CONTROL_BITS: u32 = 59;

pub const IDLE: u8 = 0;
pub const SETUP: u8 = 1;
pub const COMPUTE: u8 = 2;
pub const DRAIN: u8 = 3;
pub const DONE: u8 = 4;

/// Packed layout: state [0,3), phase [3,11), k [11,27), row_tile [27,43),
/// col_tile [43,59). Encodings 5..=7 of `state` are invalid and hang the FSM.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct ControlState {
    pub state: u8,
    pub phase: u8,
    pub k: u16,
    pub row_tile: u16,
    pub col_tile: u16,
}

/// Loop bounds the FSM reads from the register file each cycle.
#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    pub pipeline: u32,
    pub k: u32,
    pub row_tiles: u32,
    pub col_tiles: u32,
}

impl ControlState {
    pub fn pack(self) -> u64 {
        u64::from(self.state & 0x7)
            | u64::from(self.phase) << 3
            | u64::from(self.k) << 11
            | u64::from(self.row_tile) << 27
            | u64::from(self.col_tile) << 43
    }

    pub fn unpack(word: u64) -> Self {
        ControlState {
            state: (word & 0x7) as u8,
            phase: (word >> 3) as u8,
            k: (word >> 11) as u16,
            row_tile: (word >> 27) as u16,
            col_tile: (word >> 43) as u16,
        }
    }

    pub fn is_valid(self) -> bool {
        self.state <= DONE
    }

    /// Next state. Loop order is column tiles outermost so the weight buffer
    /// filled during the first row tile is reused by the others.
    pub fn next(self, s: &Schedule, start: bool) -> ControlState {
        let phase = u32::from(self.phase);
        match self.state {
            IDLE if start => ControlState { state: SETUP, ..Default::default() },
            SETUP => ControlState { state: COMPUTE, phase: 0, k: 0, ..self },
            COMPUTE => {
                if phase + 1 < s.pipeline {
                    ControlState { phase: self.phase.wrapping_add(1), ..self }
                } else if u32::from(self.k) + 1 < s.k {
                    ControlState { phase: 0, k: self.k.wrapping_add(1), ..self }
                } else {
                    ControlState { state: DRAIN, phase: 0, ..self }
                }
            }
            DRAIN => {
                if phase + 1 < s.pipeline {
                    ControlState { phase: self.phase.wrapping_add(1), ..self }
                } else if u32::from(self.row_tile) + 1 < s.row_tiles {
                    ControlState { state: SETUP, phase: 0, k: 0, row_tile: self.row_tile.wrapping_add(1), ..self }
                } else if u32::from(self.col_tile) + 1 < s.col_tiles {
                    ControlState { state: SETUP, phase: 0, k: 0, row_tile: 0, col_tile: self.col_tile.wrapping_add(1) }
                } else {
                    ControlState { state: DONE, ..Default::default() }
                }
            }
            DONE => ControlState::default(),
            _ => self,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_roundtrip() {
        let s = ControlState { state: DRAIN, phase: 0xA5, k: 0x1234, row_tile: 0xBEEF, col_tile: 0x7FFF };
        assert_eq!(ControlState::unpack(s.pack()), s);
        assert!(s.pack() < 1 << CONTROL_BITS);
    }

    #[test]
    fn walks_one_tile() {
        let sched = Schedule { pipeline: 2, k: 3, row_tiles: 1, col_tiles: 1 };
        let mut s = ControlState::default().next(&sched, true);
        let mut trace = vec![s.state];
        while s.state != DONE {
            s = s.next(&sched, false);
            trace.push(s.state);
        }
        // setup, 6 compute, 2 drain, done
        assert_eq!(trace, [SETUP, COMPUTE, COMPUTE, COMPUTE, COMPUTE, COMPUTE, COMPUTE, DRAIN, DRAIN, DONE]);
        assert_eq!(s.next(&sched, false), ControlState::default());
    }

    #[test]
    fn invalid_state_hangs() {
        let sched = Schedule { pipeline: 1, k: 1, row_tiles: 1, col_tiles: 1 };
        let s = ControlState { state: 6, ..Default::default() };
        assert_eq!(s.next(&sched, true), s);
    }
}
