use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::exec::{AffineExpr, BarrierScope, Guard, InstrKind, Instruction, Program};
use crate::fsm::AccessAction;
use crate::shadow::GridGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternId {
    GlobalReadLocalWrite,
    CrossBlockPush,
    PullWithBarrier,
    ReductionAtomic,
    DoubleBuffer,
    WarpShuffleAnalog,
    ProducerConsumerTwoPhase,
    AtomicCounter,
    BlockPartitionedWrite,
    GridSyncPipeline,
}

/// The single transformation that turns a clean pattern into a buggy one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugKind {
    DropBarrier,
    DemoteAtomic,
    /// Remove the guard of a write, so threads outside the intended block or
    /// thread write too.
    WidenGuard,
}

impl PatternId {
    pub const ALL: [PatternId; 10] = [
        Self::GlobalReadLocalWrite,
        Self::CrossBlockPush,
        Self::PullWithBarrier,
        Self::ReductionAtomic,
        Self::DoubleBuffer,
        Self::WarpShuffleAnalog,
        Self::ProducerConsumerTwoPhase,
        Self::AtomicCounter,
        Self::BlockPartitionedWrite,
        Self::GridSyncPipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GlobalReadLocalWrite => "global_read_local_write",
            Self::CrossBlockPush => "cross_block_push",
            Self::PullWithBarrier => "pull_with_barrier",
            Self::ReductionAtomic => "reduction_atomic",
            Self::DoubleBuffer => "double_buffer",
            Self::WarpShuffleAnalog => "warp_shuffle_analog",
            Self::ProducerConsumerTwoPhase => "producer_consumer_two_phase",
            Self::AtomicCounter => "atomic_counter",
            Self::BlockPartitionedWrite => "block_partitioned_write",
            Self::GridSyncPipeline => "grid_sync_pipeline",
        }
    }

    pub fn bug_kind(self) -> BugKind {
        match self {
            Self::GlobalReadLocalWrite | Self::BlockPartitionedWrite => BugKind::WidenGuard,
            Self::ReductionAtomic | Self::AtomicCounter => BugKind::DemoteAtomic,
            _ => BugKind::DropBarrier,
        }
    }

    /// Whether the buggy variant can race at all on `g`.
    fn fits(self, g: &GridGeometry) -> bool {
        let per_block = g.threads_per_block();
        match self {
            Self::GlobalReadLocalWrite | Self::ReductionAtomic | Self::DoubleBuffer | Self::GridSyncPipeline => {
                g.total_threads() >= 2
            }
            Self::CrossBlockPush | Self::BlockPartitionedWrite => g.blocks >= 2,
            Self::PullWithBarrier | Self::ProducerConsumerTwoPhase | Self::AtomicCounter => per_block >= 2,
            Self::WarpShuffleAnalog => g.lanes_per_warp >= 2,
        }
    }

    /// One round: instructions with addresses relative to `base`, the index
    /// of the instruction the bug transforms, and the address window used.
    fn round(self, g: &GridGeometry, base: i64) -> (Vec<Instruction>, usize, i64) {
        let t = g.total_threads() as i64;
        let bt = g.threads_per_block() as i64;
        let at = |tid: i64, block: i64, c: i64| AffineExpr {
            tid,
            block,
            constant: base + c,
        };
        let read = |e| Instruction::access(AccessAction::Read, e);
        let write = |e| Instruction::access(AccessAction::Write, e);
        let atomic = |e| Instruction::access(AccessAction::Atomic, e);
        let sync = Instruction::barrier;
        match self {
            Self::GlobalReadLocalWrite => (
                vec![read(at(0, 0, 0)), write(at(1, 0, 0)).when(Guard::TidGe(1))],
                1,
                t,
            ),
            Self::CrossBlockPush => (
                vec![write(at(1, 0, bt)), sync(BarrierScope::Grid), read(at(1, 0, 0))],
                1,
                t + bt,
            ),
            Self::PullWithBarrier => (
                vec![write(at(1, 0, 0)), sync(BarrierScope::Block), read(at(0, bt, 0))],
                1,
                t,
            ),
            Self::ReductionAtomic => (vec![read(at(1, 0, 1)), atomic(at(0, 0, 0))], 1, t + 1),
            Self::DoubleBuffer => (
                vec![
                    read(at(1, 0, 0)),
                    write(at(1, 0, t)),
                    sync(BarrierScope::Grid),
                    read(at(1, 0, t + 1)),
                ],
                2,
                2 * t + 1,
            ),
            Self::WarpShuffleAnalog => (
                vec![
                    write(at(1, 0, 0)),
                    sync(BarrierScope::Warp),
                    read(at(0, 0, 0)).when(Guard::TidEq(1)),
                ],
                1,
                t,
            ),
            Self::ProducerConsumerTwoPhase => (
                vec![
                    write(at(0, 0, 0)).when(Guard::TidEq(0)),
                    sync(BarrierScope::Block),
                    read(at(0, 0, 0)).when(Guard::BlockEq(0)),
                ],
                1,
                1,
            ),
            Self::AtomicCounter => (
                vec![atomic(at(0, 1, 0)), sync(BarrierScope::Grid), read(at(0, 1, 0))],
                0,
                g.blocks as i64,
            ),
            Self::BlockPartitionedWrite => (
                vec![
                    write(at(1, -bt, 0)).when(Guard::BlockEq(0)),
                    sync(BarrierScope::Block),
                    read(at(-1, bt, bt - 1)).when(Guard::BlockEq(0)),
                ],
                0,
                bt,
            ),
            Self::GridSyncPipeline => (
                vec![write(at(1, 0, 0)), sync(BarrierScope::Grid), read(at(-1, 0, t - 1))],
                1,
                t,
            ),
        }
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternId {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().replace('_', "-") == s)
            .ok_or_else(|| BenchError::UnknownPattern(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern: PatternId,
    pub inject_bug: bool,
    pub geometry: GridGeometry,
    /// Picks the round that receives the bug.
    pub seed: u64,
    /// Number of rounds, each over its own address window.
    pub size: u32,
}

impl PatternSpec {
    pub fn new(pattern: PatternId, inject_bug: bool) -> Self {
        Self {
            pattern,
            inject_bug,
            geometry: GridGeometry::new(2, 2, 2).expect("static geometry"),
            seed: 0,
            size: 1,
        }
    }
}

fn inject(instr: &mut Option<Instruction>, kind: BugKind) {
    let i = instr.as_mut().expect("bug target exists");
    match kind {
        BugKind::DropBarrier => {
            debug_assert!(i.kind.barrier().is_some());
            *instr = None;
        }
        BugKind::DemoteAtomic => {
            debug_assert_eq!(i.kind, InstrKind::Atomic);
            i.kind = InstrKind::Write;
        }
        BugKind::WidenGuard => {
            debug_assert!(i.guard.is_some());
            i.guard = None;
        }
    }
}

pub fn generate_pattern(spec: &PatternSpec) -> Result<Program, BenchError> {
    let p = spec.pattern;
    if spec.size == 0 {
        return Err(BenchError::InvalidSpec(format!("{p}: size must be at least 1")));
    }
    if !p.fits(&spec.geometry) {
        return Err(BenchError::InvalidSpec(format!(
            "{p}: geometry {}x{}x{} is too small for this pattern",
            spec.geometry.blocks, spec.geometry.warps_per_block, spec.geometry.lanes_per_warp
        )));
    }
    let bug_round = spec.inject_bug.then(|| (spec.seed % spec.size as u64) as u32);
    let mut body = Vec::new();
    let mut base = 0i64;
    for r in 0..spec.size {
        let (instrs, target, window) = p.round(&spec.geometry, base);
        for (i, instr) in instrs.into_iter().enumerate() {
            let mut slot = Some(instr);
            if bug_round == Some(r) && i == target {
                inject(&mut slot, p.bug_kind());
            }
            body.extend(slot);
        }
        base += window;
    }
    let name = if spec.inject_bug {
        format!("{p}_bug")
    } else {
        p.name().to_string()
    };
    Ok(Program::new(name, spec.geometry, base as u64, body)?)
}
