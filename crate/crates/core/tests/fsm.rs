use std::collections::BTreeSet;

use gpurace::fsm::{
    derive_state_machine, AccessAction, FsmError, InputSymbol, StateDescriptor, StateId, SyncRelation,
    ThreadRelation, TransitionTable, ALPHABET_SIZE,
};

use AccessAction::{Atomic, Read, Write};
use SyncRelation::{BlockSync, GridSync, WarpSync};
use ThreadRelation::{Global, SameBlock, SameThread, SameWarp};

fn sym(a: AccessAction, t: ThreadRelation, s: SyncRelation) -> InputSymbol {
    InputSymbol::encode(a, t, s)
}

fn walk(table: &TransitionTable, symbols: &[InputSymbol]) -> StateId {
    symbols
        .iter()
        .fold(StateId::INIT, |s, &x| table.lookup(s, x).unwrap())
}

fn name(table: &TransitionTable, s: StateId) -> String {
    table.descriptor(s).name()
}

#[test]
fn symbol_indices() {
    assert_eq!(sym(Read, SameThread, SyncRelation::None).index(), 0);
    assert_eq!(sym(Write, Global, SyncRelation::None).index(), 28);
    assert_eq!(sym(Atomic, Global, GridSync).index(), 47);
    assert_eq!(InputSymbol::from_index(48), None);
}

#[test]
fn symbol_encoding_is_a_bijection() {
    let mut seen = BTreeSet::new();
    for a in AccessAction::ALL {
        for t in ThreadRelation::ALL {
            for s in SyncRelation::ALL {
                let x = sym(a, t, s);
                assert_eq!(InputSymbol::from_index(x.index()), Some(x));
                seen.insert(x.index());
            }
        }
    }
    assert_eq!(seen, (0..ALPHABET_SIZE).collect());
}

#[test]
fn derived_table_shape() {
    let t = derive_state_machine().unwrap();
    assert!((20..=31).contains(&t.n_states()), "{} states", t.n_states());
    assert_eq!(t.n_transitions(), t.n_states() * 48);
    assert!(t.validate().is_ok());
    assert_eq!(t.race_state().code() as usize, t.n_states() - 1);
    assert!(t.race_state().code() < 32);
    assert_eq!(*t.descriptor(StateId::INIT), StateDescriptor::INIT);
    assert!(t.descriptors().iter().all(|d| d.is_consistent()));
}

#[test]
fn every_state_reachable() {
    let t = derive_state_machine().unwrap();
    assert!(t.unreachable_states().is_empty());
}

#[test]
fn race_absorbs_and_stays_racy() {
    let t = derive_state_machine().unwrap();
    let race = t.race_state();
    for x in InputSymbol::all() {
        assert_eq!(t.lookup(race, x).unwrap(), race);
    }
    for s in 0..t.n_states() as u8 {
        for x in InputSymbol::all() {
            let next = t.lookup(StateId(s), x).unwrap();
            assert_ne!(next, StateId::INIT);
            if t.is_race(StateId(s)) {
                assert!(t.is_race(next));
            }
        }
    }
}

#[test]
fn derivation_is_pure() {
    let a = derive_state_machine().unwrap();
    let b = derive_state_machine().unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dump(), b.dump());
}

#[test]
fn dump_round_trip() {
    let t = derive_state_machine().unwrap();
    assert_eq!(TransitionTable::parse_dump(&t.dump()).unwrap(), t);
}

#[test]
fn lookup_out_of_range() {
    let t = derive_state_machine().unwrap();
    let x = sym(Read, SameThread, SyncRelation::None);
    assert!(matches!(t.lookup(StateId(t.n_states() as u8), x), Err(FsmError::OutOfRange { .. })));
}

// No-sync narrative: first read, then reads from other blocks, then writes.
#[test]
fn nosync_walkthrough() {
    let t = derive_state_machine().unwrap();
    let none = SyncRelation::None;
    let read = walk(&t, &[sym(Read, Global, none)]);
    assert_eq!(name(&t, read), "READ");
    let global = walk(&t, &[sym(Read, Global, none), sym(Read, Global, none)]);
    assert_eq!(name(&t, global), "GLOBAL_READ");
    for rel in ThreadRelation::ALL {
        // only a grid barrier orders readers in other blocks
        for s in [none, WarpSync, BlockSync] {
            assert!(t.is_race(t.lookup(global, sym(Write, rel, s)).unwrap()), "{rel:?} {s:?}");
        }
        assert!(!t.is_race(t.lookup(global, sym(Write, rel, GridSync)).unwrap()));
    }
    // same thread reads then writes
    let write = walk(&t, &[sym(Read, Global, none), sym(Write, SameThread, none)]);
    assert_eq!(name(&t, write), "WRITE");
    // a different thread then reads without a barrier
    for rel in [SameWarp, SameBlock, Global] {
        assert!(t.is_race(t.lookup(write, sym(Read, rel, none)).unwrap()));
    }
}

#[test]
fn block_sync_walkthrough() {
    let t = derive_state_machine().unwrap();
    let none = SyncRelation::None;
    let block_read = walk(&t, &[sym(Read, SameBlock, none), sym(Read, SameBlock, none)]);
    assert_eq!(name(&t, block_read), "BLOCK_READ");
    // a block barrier orders every earlier reader of the block
    for rel in [SameThread, SameBlock] {
        let next = t.lookup(block_read, sym(Write, rel, BlockSync)).unwrap();
        assert_eq!(name(&t, next), "WRITE");
    }
    // without the barrier the write races
    assert!(t.is_race(t.lookup(block_read, sym(Write, SameBlock, none)).unwrap()));
    // a block barrier does nothing across blocks
    let global = walk(&t, &[sym(Read, SameBlock, none), sym(Read, Global, none)]);
    assert!(t.is_race(t.lookup(global, sym(Write, Global, none)).unwrap()));
    assert!(!t.is_race(t.lookup(global, sym(Write, Global, GridSync)).unwrap()));
}

#[test]
fn atomics_only_conflict_with_plain_accesses() {
    let t = derive_state_machine().unwrap();
    let none = SyncRelation::None;
    let s = walk(&t, &[sym(Atomic, Global, none), sym(Atomic, Global, none), sym(Atomic, SameWarp, none)]);
    assert!(!t.is_race(s));
    assert!(t.is_race(t.lookup(s, sym(Read, Global, none)).unwrap()));
    assert!(t.is_race(t.lookup(s, sym(Write, SameBlock, none)).unwrap()));
}

#[test]
fn warp_barrier_orders_only_the_warp() {
    let t = derive_state_machine().unwrap();
    let none = SyncRelation::None;
    let w = walk(&t, &[sym(Write, Global, none)]);
    assert!(!t.is_race(t.lookup(w, sym(Read, SameWarp, WarpSync)).unwrap()));
    assert!(t.is_race(t.lookup(w, sym(Read, SameBlock, none)).unwrap()));
    assert!(!t.is_race(t.lookup(w, sym(Read, SameBlock, BlockSync)).unwrap()));
}

fn validate_property(t: &TransitionTable) -> Option<&'static str> {
    t.validate().err().map(|v| v.property())
}

#[test]
fn constructed_violations() {
    let t = derive_state_machine().unwrap();
    let race = t.race_state();
    let x = sym(Read, SameThread, SyncRelation::None);

    let leaky = t.with_entry(race, x, StateId(1));
    assert_eq!(validate_property(&leaky), Some("absorbing"));

    let back_to_init = t.with_entry(StateId(1), x, StateId::INIT);
    assert_eq!(validate_property(&back_to_init), Some("init-unreachable"));

    let out_of_range = t.with_entry(StateId(1), x, StateId(40));
    assert_eq!(validate_property(&out_of_range), Some("totality"));

    let truncated = TransitionTable::from_parts(t.entries()[..48].to_vec(), t.descriptors().to_vec());
    assert_eq!(validate_property(&truncated), Some("totality"));

    let mut meta = vec![StateDescriptor::INIT; 32];
    meta.push(StateDescriptor::RACE);
    let big = TransitionTable::from_parts(vec![StateId(32); 33 * 48], meta);
    assert_eq!(validate_property(&big), Some("5-bit bound"));

    let mut meta = t.descriptors().to_vec();
    *meta.last_mut().unwrap() = StateDescriptor::INIT;
    let no_race = TransitionTable::from_parts(t.entries().to_vec(), meta);
    assert_eq!(validate_property(&no_race), Some("race state"));
}

#[test]
fn smallest_valid_table() {
    // INIT and RACE only, everything goes to RACE
    let t = TransitionTable::from_parts(
        vec![StateId(1); 2 * 48],
        vec![StateDescriptor::INIT, StateDescriptor::RACE],
    );
    assert!(t.validate().is_ok());
    assert!(t.unreachable_states().is_empty());
}
