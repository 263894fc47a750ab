//! Packed per-address shadow words and the lock-free update that drives the
//! state machine.

mod relation;
mod store;

use serde::{Deserialize, Serialize};

use crate::fsm::StateId;

pub use relation::{sync_relation, thread_relation};
pub use store::{
    next_word, Access, LinearizedUpdate, RaceReport, ShadowStore, StepResult, UpdateOutcome,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ShadowError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid shadow layout: {0}")]
    Layout(String),
    #[error("grid of {threads} threads does not fit {tid_bits} thread-id bits")]
    TidOverflow { threads: u64, tid_bits: u32 },
    #[error("address {0} is not monitored")]
    UnmonitoredAddress(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridGeometry {
    pub blocks: u32,
    pub warps_per_block: u32,
    pub lanes_per_warp: u32,
}

impl GridGeometry {
    pub fn new(blocks: u32, warps_per_block: u32, lanes_per_warp: u32) -> Result<Self, ShadowError> {
        if blocks == 0 || warps_per_block == 0 || lanes_per_warp == 0 {
            return Err(ShadowError::Geometry(format!(
                "blocks={blocks} warps={warps_per_block} lanes={lanes_per_warp}: all must be positive"
            )));
        }
        Ok(Self {
            blocks,
            warps_per_block,
            lanes_per_warp,
        })
    }

    pub fn threads_per_block(&self) -> u64 {
        self.warps_per_block as u64 * self.lanes_per_warp as u64
    }

    pub fn total_threads(&self) -> u64 {
        self.blocks as u64 * self.threads_per_block()
    }

    pub fn total_warps(&self) -> u64 {
        self.blocks as u64 * self.warps_per_block as u64
    }

    /// Coordinates of a global id. Ids past the grid wrap around, which only
    /// happens for ids that were truncated by a narrow layout.
    pub fn coord(&self, global_id: u64) -> ThreadCoord {
        let lanes = self.lanes_per_warp as u64;
        let warps = self.warps_per_block as u64;
        ThreadCoord {
            block: ((global_id / (lanes * warps)) % self.blocks as u64) as u32,
            warp: ((global_id / lanes) % warps) as u32,
            lane: (global_id % lanes) as u32,
            global_id,
        }
    }

    pub fn thread(&self, block: u32, warp: u32, lane: u32) -> ThreadCoord {
        let global_id = ((block as u64 * self.warps_per_block as u64) + warp as u64)
            * self.lanes_per_warp as u64
            + lane as u64;
        ThreadCoord {
            block,
            warp,
            lane,
            global_id,
        }
    }

    pub fn threads(&self) -> impl Iterator<Item = ThreadCoord> + '_ {
        (0..self.total_threads()).map(|g| self.coord(g))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThreadCoord {
    pub block: u32,
    pub warp: u32,
    pub lane: u32,
    pub global_id: u64,
}

impl ThreadCoord {
    pub fn same_warp(&self, other: &ThreadCoord) -> bool {
        self.block == other.block && self.warp == other.warp
    }

    pub fn same_block(&self, other: &ThreadCoord) -> bool {
        self.block == other.block
    }
}

/// Per-thread barrier epochs at warp, block, and grid scope.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClockTriple {
    pub warp: u32,
    pub block: u32,
    pub grid: u32,
}

impl ClockTriple {
    pub const ZERO: ClockTriple = ClockTriple {
        warp: 0,
        block: 0,
        grid: 0,
    };

    /// Clamp every component to the layout's field width.
    pub fn saturate(self, layout: &ShadowLayout) -> ClockTriple {
        ClockTriple {
            warp: self.warp.min(max_value(layout.warp_clock_bits) as u32),
            block: self.block.min(max_value(layout.block_clock_bits) as u32),
            grid: self.grid.min(max_value(layout.grid_clock_bits) as u32),
        }
    }
}

fn max_value(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Bit widths of the shadow word fields, least significant first:
/// state, thread id, warp clock, block clock, grid clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShadowLayout {
    pub state_bits: u32,
    pub tid_bits: u32,
    pub warp_clock_bits: u32,
    pub block_clock_bits: u32,
    pub grid_clock_bits: u32,
}

impl Default for ShadowLayout {
    fn default() -> Self {
        Self {
            state_bits: 5,
            tid_bits: 23,
            warp_clock_bits: 16,
            block_clock_bits: 16,
            grid_clock_bits: 4,
        }
    }
}

impl ShadowLayout {
    pub fn total_bits(&self) -> u32 {
        self.state_bits + self.tid_bits + self.warp_clock_bits + self.block_clock_bits + self.grid_clock_bits
    }

    /// Bits above the packed fields, unused by `pack`.
    pub fn spare_bits(&self) -> u32 {
        64 - self.total_bits()
    }

    pub fn validate(&self) -> Result<(), ShadowError> {
        if self.state_bits != 5 {
            return Err(ShadowError::Layout(format!(
                "state_bits must be 5, got {}",
                self.state_bits
            )));
        }
        if self.total_bits() > 64 {
            return Err(ShadowError::Layout(format!(
                "fields need {} bits, more than 64",
                self.total_bits()
            )));
        }
        if self.tid_bits == 0 || self.tid_bits > 32 {
            return Err(ShadowError::Layout(format!(
                "tid_bits must be in 1..=32, got {}",
                self.tid_bits
            )));
        }
        for (name, bits) in [
            ("warp_clock_bits", self.warp_clock_bits),
            ("block_clock_bits", self.block_clock_bits),
            ("grid_clock_bits", self.grid_clock_bits),
        ] {
            if bits == 0 || bits > 32 {
                return Err(ShadowError::Layout(format!("{name} must be in 1..=32, got {bits}")));
            }
        }
        Ok(())
    }

    /// Every global id of the grid must survive truncation to `tid_bits`.
    pub fn check_geometry(&self, geometry: &GridGeometry) -> Result<(), ShadowError> {
        if geometry.total_threads() > 1u64 << self.tid_bits {
            return Err(ShadowError::TidOverflow {
                threads: geometry.total_threads(),
                tid_bits: self.tid_bits,
            });
        }
        Ok(())
    }

    fn offsets(&self) -> [u32; 5] {
        let tid = self.state_bits;
        let warp = tid + self.tid_bits;
        let block = warp + self.warp_clock_bits;
        let grid = block + self.block_clock_bits;
        [0, tid, warp, block, grid]
    }

    /// Pack the fields. The thread id keeps its low `tid_bits`; clocks
    /// saturate at their field maximum.
    pub fn pack(&self, state: StateId, tid: u64, clocks: ClockTriple) -> ShadowWord {
        let [_, o_tid, o_warp, o_block, o_grid] = self.offsets();
        let c = clocks.saturate(self);
        let raw = (state.0 as u64 & max_value(self.state_bits))
            | (tid & max_value(self.tid_bits)) << o_tid
            | (c.warp as u64) << o_warp
            | (c.block as u64) << o_block
            | (c.grid as u64) << o_grid;
        ShadowWord(raw)
    }

    pub fn unpack(&self, word: ShadowWord) -> ShadowFields {
        let [_, o_tid, o_warp, o_block, o_grid] = self.offsets();
        let field = |offset: u32, bits: u32| (word.0 >> offset) & max_value(bits);
        ShadowFields {
            state: StateId(field(0, self.state_bits) as u8),
            tid: field(o_tid, self.tid_bits),
            clocks: ClockTriple {
                warp: field(o_warp, self.warp_clock_bits) as u32,
                block: field(o_block, self.block_clock_bits) as u32,
                grid: field(o_grid, self.grid_clock_bits) as u32,
            },
        }
    }

    /// Mask covering the packed fields.
    pub fn field_mask(&self) -> u64 {
        max_value(self.total_bits())
    }
}

/// One packed 64-bit shadow value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShadowWord(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShadowFields {
    pub state: StateId,
    pub tid: u64,
    pub clocks: ClockTriple,
}
