use std::ops::Range;
use std::sync::Arc;

use super::program::{BarrierScope, InstrKind, Program};
use crate::fsm::AccessAction;
use crate::shadow::{ClockTriple, ThreadCoord};

/// One scheduler choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    Access { thread: usize },
    /// Barrier of `scope` completing for group `group` (global warp index,
    /// block index, or 0 for the grid).
    Barrier { scope: BarrierScope, group: usize },
}

/// An access about to execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingAccess {
    pub thread: ThreadCoord,
    pub kind: InstrKind,
    pub action: AccessAction,
    pub address: u64,
    pub clocks: ClockTriple,
}

/// Interleaving interpreter state. Clocks are kept per group: every member of
/// a warp (block, grid) passes the same barriers, so one counter per group is
/// each member's clock at that scope.
#[derive(Clone, Debug)]
pub struct Machine<'p> {
    program: &'p Program,
    coords: Arc<[ThreadCoord]>,
    pcs: Vec<u32>,
    warp_clock: Vec<u32>,
    block_clock: Vec<u32>,
    grid_clock: u32,
    memory: Vec<u64>,
    lanes: usize,
    per_block: usize,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program) -> Self {
        let g = &program.geometry;
        let coords: Arc<[ThreadCoord]> = g.threads().collect();
        let mut m = Self {
            program,
            pcs: vec![0; coords.len()],
            coords,
            warp_clock: vec![0; g.total_warps() as usize],
            block_clock: vec![0; g.blocks as usize],
            grid_clock: 0,
            memory: vec![0; program.monitor as usize],
            lanes: g.lanes_per_warp as usize,
            per_block: g.threads_per_block() as usize,
        };
        for t in 0..m.pcs.len() {
            m.settle(t);
        }
        m
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    pub fn threads(&self) -> usize {
        self.pcs.len()
    }

    pub fn coord(&self, thread: usize) -> ThreadCoord {
        self.coords[thread]
    }

    pub fn pcs(&self) -> &[u32] {
        &self.pcs
    }

    pub fn memory(&self) -> &[u64] {
        &self.memory
    }

    pub fn into_memory(self) -> Vec<u64> {
        self.memory
    }

    pub fn is_done(&self) -> bool {
        let len = self.program.body.len() as u32;
        self.pcs.iter().all(|&pc| pc == len)
    }

    #[inline]
    pub fn clocks(&self, thread: usize) -> ClockTriple {
        ClockTriple {
            warp: self.warp_clock[thread / self.lanes],
            block: self.block_clock[thread / self.per_block],
            grid: self.grid_clock,
        }
    }

    /// Skip accesses whose guard does not hold for `thread`.
    fn settle(&mut self, thread: usize) {
        let body = &self.program.body;
        let coord = &self.coords[thread];
        let pc = &mut self.pcs[thread];
        while let Some(instr) = body.get(*pc as usize) {
            if instr.kind.is_access() && !instr.runs_on(coord) {
                *pc += 1;
            } else {
                break;
            }
        }
    }

    fn kind_at(&self, thread: usize) -> Option<InstrKind> {
        self.program.body.get(self.pcs[thread] as usize).map(|i| i.kind)
    }

    fn group_ready(&self, range: Range<usize>, kind: InstrKind) -> bool {
        let pc = self.pcs[range.start];
        self.kind_at(range.start) == Some(kind) && self.pcs[range].iter().all(|&p| p == pc)
    }

    /// Enabled steps in a fixed order: accesses by thread, then warp, block
    /// and grid barriers by group.
    pub fn enabled(&self, out: &mut Vec<Step>) {
        out.clear();
        let n = self.threads();
        for t in 0..n {
            if self.kind_at(t).is_some_and(InstrKind::is_access) {
                out.push(Step::Access { thread: t });
            }
        }
        for w in 0..n / self.lanes {
            if self.group_ready(w * self.lanes..(w + 1) * self.lanes, InstrKind::SyncWarp) {
                out.push(Step::Barrier {
                    scope: BarrierScope::Warp,
                    group: w,
                });
            }
        }
        for b in 0..n / self.per_block {
            if self.group_ready(b * self.per_block..(b + 1) * self.per_block, InstrKind::SyncBlock) {
                out.push(Step::Barrier {
                    scope: BarrierScope::Block,
                    group: b,
                });
            }
        }
        if self.group_ready(0..n, InstrKind::SyncGrid) {
            out.push(Step::Barrier {
                scope: BarrierScope::Grid,
                group: 0,
            });
        }
    }

    /// First thread that cannot proceed, when nothing is enabled but the run
    /// is not finished.
    pub fn stuck_thread(&self) -> Option<usize> {
        let len = self.program.body.len() as u32;
        self.pcs.iter().position(|&pc| pc < len)
    }

    pub fn participants(&self, scope: BarrierScope, group: usize) -> Range<usize> {
        match scope {
            BarrierScope::Warp => group * self.lanes..(group + 1) * self.lanes,
            BarrierScope::Block => group * self.per_block..(group + 1) * self.per_block,
            BarrierScope::Grid => 0..self.threads(),
        }
    }

    /// The access `thread` is about to perform. Panics if the thread is not at
    /// an access.
    pub fn pending(&self, thread: usize) -> PendingAccess {
        let instr = &self.program.body[self.pcs[thread] as usize];
        let coord = self.coords[thread];
        let action = instr.kind.action().expect("thread is not at an access");
        let address = instr.address.expect("validated access").eval(&coord) as u64;
        PendingAccess {
            thread: coord,
            kind: instr.kind,
            action,
            address,
            clocks: self.clocks(thread),
        }
    }

    /// Apply the memory effect of the pending access and advance.
    pub fn commit_access(&mut self, thread: usize) {
        let p = self.pending(thread);
        let cell = &mut self.memory[p.address as usize];
        match p.action {
            AccessAction::Read => {}
            AccessAction::Write => *cell = p.thread.global_id + 1,
            AccessAction::Atomic => *cell = cell.wrapping_add(1),
        }
        self.pcs[thread] += 1;
        self.settle(thread);
    }

    /// Complete a barrier for every participant.
    pub fn commit_barrier(&mut self, scope: BarrierScope, group: usize) -> Range<usize> {
        match scope {
            BarrierScope::Warp => self.warp_clock[group] += 1,
            BarrierScope::Block => self.block_clock[group] += 1,
            BarrierScope::Grid => self.grid_clock += 1,
        }
        let range = self.participants(scope, group);
        for t in range.clone() {
            self.pcs[t] += 1;
            self.settle(t);
        }
        range
    }

    pub fn step(&mut self, step: Step) {
        match step {
            Step::Access { thread } => self.commit_access(thread),
            Step::Barrier { scope, group } => {
                self.commit_barrier(scope, group);
            }
        }
    }
}
