//! Brute-force happens-before race detection over complete traces, and the
//! verifier that compares it with the state machine.

mod verify;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::exec::TraceEvent;
use crate::fsm::AccessAction;
use crate::shadow::{ClockTriple, ThreadCoord};

pub use verify::{
    mutation_candidates, seeded_mutations, verify_fsm, verify_mutation, Coverage, Disagreement, Mutation,
    MutationResult, Tier, VerificationConfig, VerificationSummary,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub thread: ThreadCoord,
    pub action: AccessAction,
    pub clocks: ClockTriple,
    pub event_index: usize,
}

impl AccessRecord {
    pub fn from_event(e: &TraceEvent) -> Option<(u64, Self)> {
        let action = e.kind.action()?;
        Some((
            e.address?,
            Self {
                thread: e.thread,
                action,
                clocks: e.clocks,
                event_index: e.index,
            },
        ))
    }
}

/// Strict order: false unless `a` comes earlier in the trace than `b`.
#[inline]
pub fn happens_before(a: &AccessRecord, b: &AccessRecord) -> bool {
    a.event_index < b.event_index
        && (a.thread.global_id == b.thread.global_id
            || b.clocks.grid > a.clocks.grid
            || (a.thread.same_block(&b.thread) && b.clocks.block > a.clocks.block)
            || (a.thread.same_warp(&b.thread) && b.clocks.warp > a.clocks.warp))
}

/// `a` then `b` on one address is a race.
#[inline]
pub fn races_with(a: &AccessRecord, b: &AccessRecord) -> bool {
    a.action.conflicts_with(b.action) && !happens_before(a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub race: bool,
    /// `(earlier, later)` event indices of the first racing pair, ordered by
    /// later index, then earlier index.
    pub first_pair: Option<(usize, usize)>,
}

pub fn oracle_check(trace: &[TraceEvent]) -> OracleVerdict {
    let mut seen: HashMap<u64, Vec<AccessRecord>> = HashMap::new();
    for e in trace {
        let Some((address, rec)) = AccessRecord::from_event(e) else {
            continue;
        };
        let prior = seen.entry(address).or_default();
        if let Some(a) = prior.iter().find(|a| races_with(a, &rec)) {
            return OracleVerdict {
                race: true,
                first_pair: Some((a.event_index, rec.event_index)),
            };
        }
        prior.push(rec);
    }
    OracleVerdict {
        race: false,
        first_pair: None,
    }
}

/// Every address with at least one racing pair in the trace.
pub fn racy_addresses(trace: &[TraceEvent]) -> BTreeSet<u64> {
    let mut seen: HashMap<u64, Vec<AccessRecord>> = HashMap::new();
    let mut racy = BTreeSet::new();
    for e in trace {
        let Some((address, rec)) = AccessRecord::from_event(e) else {
            continue;
        };
        let prior = seen.entry(address).or_default();
        if !racy.contains(&address) && prior.iter().any(|a| races_with(a, &rec)) {
            racy.insert(address);
        }
        prior.push(rec);
    }
    racy
}
