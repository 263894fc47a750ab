use std::sync::Arc;

use gpurace::fsm::{derive_state_machine, AccessAction, StateId, SyncRelation, ThreadRelation, TransitionTable};
use gpurace::shadow::{
    sync_relation, thread_relation, Access, ClockTriple, GridGeometry, ShadowError, ShadowLayout, ShadowStore,
    ShadowWord, UpdateOutcome,
};
use proptest::prelude::*;

fn clocks(warp: u32, block: u32, grid: u32) -> ClockTriple {
    ClockTriple { warp, block, grid }
}

fn access(g: &GridGeometry, tid: u64, action: AccessAction, c: ClockTriple) -> Access {
    Access {
        slot: 0,
        address: 0,
        thread: g.coord(tid),
        action,
        clocks: c,
        event_index: 0,
    }
}

fn state_name(table: &TransitionTable, s: StateId) -> String {
    table.descriptor(s).name()
}

#[test]
fn default_layout_fills_one_word() {
    let l = ShadowLayout::default();
    assert_eq!(
        (l.state_bits, l.tid_bits, l.warp_clock_bits, l.block_clock_bits, l.grid_clock_bits),
        (5, 23, 16, 16, 4)
    );
    assert_eq!(l.total_bits(), 64);
    assert_eq!(std::mem::size_of::<ShadowWord>(), 8);
    let g = GridGeometry::new(4, 4, 32).unwrap();
    assert_eq!(ShadowStore::new(100, g, l).unwrap().footprint_bytes(), 800);
}

#[test]
fn zero_word() {
    let l = ShadowLayout::default();
    assert_eq!(l.pack(StateId::INIT, 0, ClockTriple::ZERO), ShadowWord(0));
    let f = l.unpack(ShadowWord(0));
    assert_eq!((f.state, f.tid, f.clocks), (StateId::INIT, 0, ClockTriple::ZERO));
}

#[test]
fn clocks_saturate_at_field_width() {
    let l = ShadowLayout::default();
    let f = l.unpack(l.pack(StateId(3), 7, clocks(70_000, 1 << 16, 16)));
    assert_eq!(f.clocks, clocks((1 << 16) - 1, (1 << 16) - 1, 15));
    let f = l.unpack(l.pack(StateId(3), 7, clocks(0, (1 << 16) - 1, 15)));
    assert_eq!(f.clocks, clocks(0, (1 << 16) - 1, 15));
    // both saturated: no barrier is assumed
    let max = clocks(0, (1 << 16) - 1, 15);
    let stored = l.unpack(l.pack(StateId(1), 0, max)).clocks;
    let current = clocks(0, 1 << 20, 99).saturate(&l);
    assert_eq!(sync_relation(stored, current, ThreadRelation::SameBlock), SyncRelation::None);
}

#[test]
fn layouts_rejected() {
    let wide = ShadowLayout {
        tid_bits: 24,
        ..ShadowLayout::default()
    };
    assert!(matches!(wide.validate(), Err(ShadowError::Layout(_))));
    let state = ShadowLayout {
        state_bits: 6,
        tid_bits: 22,
        ..ShadowLayout::default()
    };
    assert!(state.validate().is_err());
    let narrow = ShadowLayout {
        tid_bits: 3,
        ..ShadowLayout::default()
    };
    let g = GridGeometry::new(1, 2, 8).unwrap();
    assert!(matches!(
        ShadowStore::new(1, g, narrow),
        Err(ShadowError::TidOverflow { threads: 16, tid_bits: 3 })
    ));
}

fn layout_strategy() -> impl Strategy<Value = ShadowLayout> {
    (1u32..=23, 1u32..=16, 1u32..=16, 1u32..=4).prop_map(|(t, w, b, g)| ShadowLayout {
        state_bits: 5,
        tid_bits: t,
        warp_clock_bits: w,
        block_clock_bits: b,
        grid_clock_bits: g,
    })
}

proptest! {
    #[test]
    fn pack_unpack_round_trip(layout in layout_strategy(), s in 0u8..32, tid: u64, w: u32, b: u32, g: u32) {
        let mask = |bits: u32| (1u64 << bits) - 1;
        let tid = tid & mask(layout.tid_bits);
        let c = clocks(
            w & mask(layout.warp_clock_bits) as u32,
            b & mask(layout.block_clock_bits) as u32,
            g & mask(layout.grid_clock_bits) as u32,
        );
        let word = layout.pack(StateId(s), tid, c);
        let f = layout.unpack(word);
        prop_assert_eq!((f.state, f.tid, f.clocks), (StateId(s), tid, c));
        prop_assert_eq!(layout.pack(f.state, f.tid, f.clocks), word);
        prop_assert_eq!(word.0 & !layout.field_mask(), 0);
    }

    #[test]
    fn word_round_trip(raw: u64) {
        let l = ShadowLayout::default();
        let f = l.unpack(ShadowWord(raw));
        prop_assert_eq!(l.pack(f.state, f.tid, f.clocks), ShadowWord(raw));
    }

    #[test]
    fn relation_is_the_strongest_shared_level(a in 0u64..24, b in 0u64..24) {
        let g = GridGeometry::new(2, 3, 4).unwrap();
        let (x, y) = (g.coord(a), g.coord(b));
        let expected = if a == b {
            ThreadRelation::SameThread
        } else if x.block == y.block && x.warp == y.warp {
            ThreadRelation::SameWarp
        } else if x.block == y.block {
            ThreadRelation::SameBlock
        } else {
            ThreadRelation::Global
        };
        prop_assert_eq!(thread_relation(a, &y, &g), expected);
        prop_assert_eq!(thread_relation(b, &x, &g), expected);
    }
}

#[test]
fn relation_examples() {
    let g = GridGeometry::new(2, 2, 2).unwrap();
    let t = g.thread(0, 0, 1);
    assert_eq!(thread_relation(t.global_id, &t, &g), ThreadRelation::SameThread);
    assert_eq!(thread_relation(g.thread(0, 1, 0).global_id, &t, &g), ThreadRelation::SameBlock);
    assert_eq!(thread_relation(g.thread(1, 0, 1).global_id, &t, &g), ThreadRelation::Global);

    assert_eq!(
        sync_relation(clocks(0, 0, 0), clocks(0, 1, 0), ThreadRelation::SameBlock),
        SyncRelation::BlockSync
    );
    for rel in ThreadRelation::ALL {
        assert_eq!(sync_relation(clocks(2, 3, 1), clocks(2, 3, 1), rel), SyncRelation::None);
    }
    assert_eq!(
        sync_relation(clocks(0, 0, 0), clocks(0, 1, 0), ThreadRelation::Global),
        SyncRelation::None
    );
    assert_eq!(
        sync_relation(clocks(0, 0, 0), clocks(1, 1, 0), ThreadRelation::SameWarp),
        SyncRelation::BlockSync
    );
    assert_eq!(
        sync_relation(clocks(0, 0, 0), clocks(1, 0, 0), ThreadRelation::SameBlock),
        SyncRelation::None
    );
}

#[test]
fn update_examples() {
    let table = derive_state_machine().unwrap();
    let g = GridGeometry::new(2, 2, 4).unwrap();
    let store = ShadowStore::new(1, g, ShadowLayout::default()).unwrap();
    let zero = ClockTriple::ZERO;

    let UpdateOutcome::Advanced(s) = store.update(&table, &access(&g, 5, AccessAction::Read, zero)) else {
        panic!("first read must advance");
    };
    assert_eq!(state_name(&table, s), "READ");
    assert_eq!(store.fields(0).tid, 5);

    store.reset();
    store.update(&table, &access(&g, 1, AccessAction::Read, zero));
    let UpdateOutcome::Advanced(s) = store.update(&table, &access(&g, 1, AccessAction::Write, zero)) else {
        panic!("same-thread write must advance");
    };
    assert_eq!(state_name(&table, s), "WRITE");

    // reader in another block turns READ into GLOBAL_READ, then any write races
    store.reset();
    store.update(&table, &access(&g, 1, AccessAction::Read, zero));
    let UpdateOutcome::Advanced(s) = store.update(&table, &access(&g, 9, AccessAction::Read, zero)) else {
        panic!()
    };
    assert_eq!(state_name(&table, s), "GLOBAL_READ");
    let before = store.load(0);
    let UpdateOutcome::RaceDetected(r) = store.update(&table, &access(&g, 9, AccessAction::Write, zero)) else {
        panic!("write after global read must race")
    };
    assert_eq!((r.prior_state, r.prior_tid, r.current_tid), (s, 9, 9));
    assert_ne!(store.load(0), before);
    assert!(table.is_race(store.fields(0).state));

    let racy = store.load(0);
    for (tid, action) in [(0, AccessAction::Read), (3, AccessAction::Atomic), (9, AccessAction::Write)] {
        assert_eq!(
            store.update(&table, &access(&g, tid, action, clocks(5, 5, 5))),
            UpdateOutcome::AlreadyRaced
        );
        assert_eq!(store.load(0), racy);
    }

    store.reset();
    assert_eq!(store.load(0), ShadowWord(0));
    let UpdateOutcome::Advanced(s) = store.update(&table, &access(&g, 2, AccessAction::Read, zero)) else {
        panic!()
    };
    assert_eq!(state_name(&table, s), "READ");
}

#[test]
fn block_barrier_makes_write_safe() {
    let table = derive_state_machine().unwrap();
    let g = GridGeometry::new(1, 2, 2).unwrap();
    let store = ShadowStore::new(1, g, ShadowLayout::default()).unwrap();
    for t in 0..4 {
        store.update(&table, &access(&g, t, AccessAction::Read, ClockTriple::ZERO));
    }
    assert_eq!(state_name(&table, store.fields(0).state), "BLOCK_READ");
    let out = store.update(&table, &access(&g, 1, AccessAction::Write, clocks(0, 1, 0)));
    assert!(matches!(out, UpdateOutcome::Advanced(s) if state_name(&table, s) == "WRITE"));
}

proptest! {
    // Reads alone never race, and the final state remembers the widest
    // relation between the last reader and the others.
    #[test]
    fn read_storm(order in prop::collection::vec(0u64..16, 1..40)) {
        let table = derive_state_machine().unwrap();
        let g = GridGeometry::new(2, 2, 4).unwrap();
        let store = ShadowStore::new(1, g, ShadowLayout::default()).unwrap();
        for &t in &order {
            let out = store.update(&table, &access(&g, t, AccessAction::Read, ClockTriple::ZERO));
            prop_assert!(matches!(out, UpdateOutcome::Advanced(_)));
        }
        let f = store.fields(0);
        let last = *order.last().unwrap();
        prop_assert_eq!(f.tid, last);
        let widest = order
            .iter()
            .map(|&t| thread_relation(t, &g.coord(last), &g))
            .max()
            .unwrap();
        prop_assert_eq!(table.descriptor(f.state).read_scope, Some(widest));
    }
}

#[test]
fn dedup_controls_repeat_reports() {
    let table = derive_state_machine().unwrap();
    let g = GridGeometry::new(2, 1, 1).unwrap();
    for (dedup, expected) in [(true, 1), (false, 4)] {
        let store = ShadowStore::new(1, g, ShadowLayout::default()).unwrap().with_dedup(dedup);
        let mut reports = 0;
        for i in 0..5 {
            let out = store.update(&table, &access(&g, i % 2, AccessAction::Write, ClockTriple::ZERO));
            reports += matches!(out, UpdateOutcome::RaceDetected(_)) as usize;
        }
        assert_eq!(reports, expected, "dedup={dedup}");
    }
}

// Many workers hammer one word. The loop must terminate, exactly one report
// is emitted, and the final word decodes to one of the real accesses.
#[test]
fn contended_updates() {
    let table = Arc::new(derive_state_machine().unwrap());
    let g = GridGeometry::new(4, 2, 4).unwrap();
    let store = ShadowStore::new(2, g, ShadowLayout::default()).unwrap();
    let reports: usize = std::thread::scope(|s| {
        let handles: Vec<_> = g
            .threads()
            .map(|t| {
                let (table, store) = (&table, &store);
                s.spawn(move || {
                    let mut n = 0;
                    for i in 0..2000u32 {
                        let action = if i % 3 == 0 { AccessAction::Write } else { AccessAction::Read };
                        let a = Access {
                            slot: (i % 2) as usize,
                            address: (i % 2) as u64,
                            thread: t,
                            action,
                            clocks: clocks(0, 0, 0),
                            event_index: i as usize,
                        };
                        let out = store.update(table, &a);
                        n += matches!(out, UpdateOutcome::RaceDetected(_)) as usize;
                    }
                    n
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert_eq!(reports, 2);
    for slot in 0..2 {
        let f = store.fields(slot);
        assert!(table.is_race(f.state));
        assert!(f.tid < g.total_threads());
    }
}

#[test]
fn installed_word_carries_the_updater() {
    let table = derive_state_machine().unwrap();
    let g = GridGeometry::new(2, 2, 2).unwrap();
    let store = ShadowStore::new(1, g, ShadowLayout::default()).unwrap();
    let seq = [(3, clocks(0, 0, 0)), (3, clocks(1, 0, 0)), (2, clocks(1, 1, 0)), (6, clocks(0, 0, 1))];
    for (tid, c) in seq {
        if let UpdateOutcome::Advanced(s) = store.update(&table, &access(&g, tid, AccessAction::Atomic, c)) {
            let f = store.fields(0);
            assert_eq!((f.state, f.tid, f.clocks), (s, tid, c));
        } else {
            panic!("atomics never race with atomics");
        }
    }
}
