use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::fsm::{AccessAction, InputSymbol, StateId, TransitionTable};

use super::{
    sync_relation, thread_relation, ClockTriple, GridGeometry, ShadowError, ShadowFields,
    ShadowLayout, ShadowWord, ThreadCoord,
};

/// One access as seen by the detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    /// Dense shadow slot of the address.
    pub slot: usize,
    pub address: u64,
    pub thread: ThreadCoord,
    pub action: AccessAction,
    pub clocks: ClockTriple,
    pub event_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RaceReport {
    pub address: u64,
    pub prior_state: StateId,
    pub symbol: InputSymbol,
    pub prior_tid: u64,
    pub current_tid: u64,
    pub event_index: usize,
}

impl fmt::Display for RaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "addr={} prior_state={} symbol={} prior_tid={} tid={} event={}",
            self.address,
            self.prior_state.0,
            self.symbol.index(),
            self.prior_tid,
            self.current_tid,
            self.event_index
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Advanced(StateId),
    RaceDetected(RaceReport),
    AlreadyRaced,
}

/// Result of applying one access to a shadow word, without installing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub word: ShadowWord,
    pub prior: ShadowFields,
    pub symbol: InputSymbol,
    pub next: StateId,
}

/// Compute the successor word for `access`. Pure; shared by the atomic store
/// and by sequential replays.
#[inline]
pub fn next_word(
    old: ShadowWord,
    access: &Access,
    table: &TransitionTable,
    layout: &ShadowLayout,
    geometry: &GridGeometry,
) -> StepResult {
    let prior = layout.unpack(old);
    let rel = thread_relation(prior.tid, &access.thread, geometry);
    let current = access.clocks.saturate(layout);
    let sync = sync_relation(prior.clocks, current, rel);
    let symbol = InputSymbol::encode(access.action, rel, sync);
    let next = table.lookup_unchecked(prior.state, symbol);
    StepResult {
        word: layout.pack(next, access.thread.global_id, current),
        prior,
        symbol,
        next,
    }
}

/// A successful compare-and-exchange, ordered per slot by `stamp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearizedUpdate {
    pub stamp: u64,
    pub access: Access,
}

/// One 64-bit word per monitored address plus a per-address reported flag.
pub struct ShadowStore {
    words: Vec<AtomicU64>,
    reported: Vec<AtomicBool>,
    layout: ShadowLayout,
    geometry: GridGeometry,
    dedup: bool,
    stamped: bool,
    truncated_tids: AtomicU64,
    cas_failures: AtomicU64,
}

impl fmt::Debug for ShadowStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShadowStore")
            .field("slots", &self.words.len())
            .field("layout", &self.layout)
            .field("dedup", &self.dedup)
            .finish()
    }
}

impl ShadowStore {
    pub fn new(slots: usize, geometry: GridGeometry, layout: ShadowLayout) -> Result<Self, ShadowError> {
        layout.validate()?;
        layout.check_geometry(&geometry)?;
        Ok(Self {
            words: (0..slots).map(|_| AtomicU64::new(0)).collect(),
            reported: (0..slots).map(|_| AtomicBool::new(false)).collect(),
            layout,
            geometry,
            dedup: true,
            stamped: false,
            truncated_tids: AtomicU64::new(0),
            cas_failures: AtomicU64::new(0),
        })
    }

    /// With dedup off every access to a racy address is reported.
    pub fn with_dedup(mut self, dedup: bool) -> Self {
        self.dedup = dedup;
        self
    }

    /// Keep a per-address modification counter in the spare high bits so that
    /// successful updates can be put back in order. Needs 16 spare bits.
    pub fn with_stamps(mut self) -> Result<Self, ShadowError> {
        if self.layout.spare_bits() < 16 {
            return Err(ShadowError::Layout(format!(
                "stamps need 16 spare bits, layout leaves {}",
                self.layout.spare_bits()
            )));
        }
        self.stamped = true;
        Ok(self)
    }

    pub fn slots(&self) -> usize {
        self.words.len()
    }

    pub fn layout(&self) -> &ShadowLayout {
        &self.layout
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn footprint_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }

    pub fn load(&self, slot: usize) -> ShadowWord {
        ShadowWord(self.words[slot].load(Ordering::Acquire) & self.layout.field_mask())
    }

    pub fn fields(&self, slot: usize) -> ShadowFields {
        self.layout.unpack(self.load(slot))
    }

    /// Number of thread ids that did not fit the tid field.
    pub fn truncated_tids(&self) -> u64 {
        self.truncated_tids.load(Ordering::Relaxed)
    }

    /// Compare-and-exchange attempts that lost to a concurrent update.
    pub fn cas_failures(&self) -> u64 {
        self.cas_failures.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for w in &self.words {
            w.store(0, Ordering::Release);
        }
        for r in &self.reported {
            r.store(false, Ordering::Release);
        }
    }

    pub fn update(&self, table: &TransitionTable, access: &Access) -> UpdateOutcome {
        self.update_linearized(table, access).0
    }

    /// Lock-free update: load, compute the successor, compare-and-exchange,
    /// and retry on contention.
    pub fn update_linearized(
        &self,
        table: &TransitionTable,
        access: &Access,
    ) -> (UpdateOutcome, Option<LinearizedUpdate>) {
        if access.thread.global_id >> self.layout.tid_bits != 0 {
            self.truncated_tids.fetch_add(1, Ordering::Relaxed);
        }
        let race = table.race_state();
        let cell = &self.words[access.slot];
        let total = self.layout.total_bits();
        let mut raw = cell.load(Ordering::Acquire);
        loop {
            let old = ShadowWord(raw & self.layout.field_mask());
            let step = next_word(old, access, table, &self.layout, &self.geometry);
            if step.prior.state == race {
                let outcome = if self.dedup {
                    UpdateOutcome::AlreadyRaced
                } else {
                    UpdateOutcome::RaceDetected(self.report(access, &step))
                };
                return (outcome, None);
            }
            let stamp = if self.stamped {
                ((raw >> total) + 1) & ((1u64 << (64 - total)) - 1)
            } else {
                0
            };
            let new = if self.stamped {
                step.word.0 | stamp << total
            } else {
                step.word.0
            };
            match cell.compare_exchange_weak(raw, new, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => {
                    let lin = self.stamped.then_some(LinearizedUpdate {
                        stamp,
                        access: *access,
                    });
                    if step.next != race {
                        return (UpdateOutcome::Advanced(step.next), lin);
                    }
                    let first = !self.reported[access.slot].swap(true, Ordering::AcqRel);
                    let outcome = if first || !self.dedup {
                        UpdateOutcome::RaceDetected(self.report(access, &step))
                    } else {
                        UpdateOutcome::AlreadyRaced
                    };
                    return (outcome, lin);
                }
                Err(actual) => {
                    self.cas_failures.fetch_add(1, Ordering::Relaxed);
                    raw = actual;
                }
            }
        }
    }

    fn report(&self, access: &Access, step: &StepResult) -> RaceReport {
        RaceReport {
            address: access.address,
            prior_state: step.prior.state,
            symbol: step.symbol,
            prior_tid: step.prior.tid,
            current_tid: access.thread.global_id,
            event_index: access.event_index,
        }
    }
}
