//! Backend that runs every simulated thread on its own OS thread, with real
//! barriers, so shadow updates race for the same words.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex};

use super::detector::Detector;
use super::machine::PendingAccess;
use super::program::{BarrierScope, Program};
use super::ExecError;
use crate::fsm::{AccessAction, TransitionTable};
use crate::shadow::{next_word, ClockTriple, GridGeometry, LinearizedUpdate, RaceReport, ShadowLayout, ShadowWord};

#[derive(Clone, Debug)]
pub struct ConcurrentRun {
    pub reports: Vec<RaceReport>,
    /// Successful shadow updates; empty unless the detector is stamped.
    pub updates: Vec<LinearizedUpdate>,
    pub final_words: Vec<ShadowWord>,
    pub memory: Vec<u64>,
    pub accesses: usize,
}

#[derive(Default)]
struct Collected {
    reports: Vec<RaceReport>,
    updates: Vec<LinearizedUpdate>,
    error: Option<ExecError>,
}

/// Run `program` with one worker per simulated thread. Event indices are
/// taken from a shared counter, so they reflect a global order of arrival.
pub fn run_concurrent(program: &Program, detector: &Detector) -> Result<ConcurrentRun, ExecError> {
    detector.reset();
    let g = program.geometry;
    let warps: Vec<Barrier> = (0..g.total_warps()).map(|_| Barrier::new(g.lanes_per_warp as usize)).collect();
    let blocks: Vec<Barrier> = (0..g.blocks).map(|_| Barrier::new(g.threads_per_block() as usize)).collect();
    let grid = Barrier::new(g.total_threads() as usize);
    let memory: Vec<AtomicU64> = (0..program.monitor).map(|_| AtomicU64::new(0)).collect();
    let counter = AtomicUsize::new(0);
    let collected = Mutex::new(Collected::default());

    std::thread::scope(|s| {
        for thread in g.threads() {
            let (warps, blocks, grid, memory, counter, collected) =
                (&warps, &blocks, &grid, &memory, &counter, &collected);
            s.spawn(move || {
                let mut local = Collected::default();
                let mut clocks = ClockTriple::ZERO;
                let warp_index = (thread.global_id / g.lanes_per_warp as u64) as usize;
                for instr in &program.body {
                    if let Some(scope) = instr.kind.barrier() {
                        match scope {
                            BarrierScope::Warp => {
                                warps[warp_index].wait();
                                clocks.warp += 1;
                            }
                            BarrierScope::Block => {
                                blocks[thread.block as usize].wait();
                                clocks.block += 1;
                            }
                            BarrierScope::Grid => {
                                grid.wait();
                                clocks.grid += 1;
                            }
                        }
                        continue;
                    }
                    if !instr.runs_on(&thread) {
                        continue;
                    }
                    let action = instr.kind.action().expect("access");
                    let address = instr.address.expect("validated access").eval(&thread) as u64;
                    let p = PendingAccess {
                        thread,
                        kind: instr.kind,
                        action,
                        address,
                        clocks,
                    };
                    let index = counter.fetch_add(1, Ordering::Relaxed);
                    if local.error.is_none() {
                        match detector.observe_linearized(&p, index) {
                            Ok((report, lin)) => {
                                local.reports.extend(report);
                                local.updates.extend(lin);
                            }
                            // keep going so that barriers stay balanced
                            Err(e) => local.error = Some(e),
                        }
                    }
                    let cell = &memory[address as usize];
                    match action {
                        AccessAction::Read => {
                            cell.load(Ordering::Relaxed);
                        }
                        AccessAction::Write => cell.store(thread.global_id + 1, Ordering::Relaxed),
                        AccessAction::Atomic => {
                            cell.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
                let mut all = collected.lock().expect("worker panicked");
                all.reports.append(&mut local.reports);
                all.updates.append(&mut local.updates);
                if all.error.is_none() {
                    all.error = local.error;
                }
            });
        }
    });

    let mut collected = collected.into_inner().expect("worker panicked");
    if let Some(e) = collected.error {
        return Err(e);
    }
    collected.reports.sort_by_key(|r| (r.event_index, r.address));
    let store = detector.store();
    Ok(ConcurrentRun {
        reports: collected.reports,
        updates: collected.updates,
        final_words: (0..store.slots()).map(|i| store.load(i)).collect(),
        memory: memory.into_iter().map(AtomicU64::into_inner).collect(),
        accesses: counter.into_inner(),
    })
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("slot {slot}: expected stamp {expected}, found {found}")]
pub struct ReplayError {
    pub slot: usize,
    pub expected: u64,
    pub found: u64,
}

/// Re-apply stamped updates one slot at a time in stamp order, starting from
/// INIT. Returns the resulting word per slot.
pub fn replay_linearization(
    updates: &[LinearizedUpdate],
    slots: usize,
    table: &TransitionTable,
    layout: &ShadowLayout,
    geometry: &GridGeometry,
) -> Result<Vec<ShadowWord>, ReplayError> {
    let mut per_slot: Vec<Vec<&LinearizedUpdate>> = vec![Vec::new(); slots];
    for u in updates {
        per_slot[u.access.slot].push(u);
    }
    let mut words = vec![ShadowWord(0); slots];
    for (slot, list) in per_slot.iter_mut().enumerate() {
        list.sort_by_key(|u| u.stamp);
        for (i, u) in list.iter().enumerate() {
            let expected = i as u64 + 1;
            if u.stamp != expected {
                return Err(ReplayError {
                    slot,
                    expected,
                    found: u.stamp,
                });
            }
            words[slot] = next_word(words[slot], &u.access, table, layout, geometry).word;
        }
    }
    Ok(words)
}
