#![allow(dead_code)]

use gpurace::exec::{AffineExpr, BarrierScope, Guard, Instruction, Program};
use gpurace::fsm::AccessAction;
use gpurace::shadow::GridGeometry;
use proptest::prelude::*;

pub fn geometry() -> impl Strategy<Value = GridGeometry> {
    (1u32..=3, 1u32..=2, 1u32..=3).prop_map(|(b, w, l)| GridGeometry::new(b, w, l).unwrap())
}

fn instruction(threads: u64, blocks: u32) -> impl Strategy<Value = Instruction> {
    let t = threads as i64;
    let address = prop_oneof![
        Just(AffineExpr::constant(0)),
        Just(AffineExpr::constant(1)),
        Just(AffineExpr::tid_plus(0)),
        Just(AffineExpr::tid_plus(1)),
        Just(AffineExpr { tid: 0, block: 1, constant: 0 }),
        Just(AffineExpr { tid: -1, block: 0, constant: t - 1 }),
    ];
    let guard = prop_oneof![
        3 => Just(None),
        1 => (0..threads).prop_map(|k| Some(Guard::TidEq(k))),
        1 => (0..threads).prop_map(|k| Some(Guard::TidGe(k))),
        1 => (0..blocks).prop_map(|b| Some(Guard::BlockEq(b))),
    ];
    let action = prop_oneof![Just(AccessAction::Read), Just(AccessAction::Write), Just(AccessAction::Atomic)];
    let access = (action, address, guard).prop_map(|(a, e, g)| Instruction {
        guard: g,
        ..Instruction::access(a, e)
    });
    let barrier = prop_oneof![
        Just(Instruction::barrier(BarrierScope::Warp)),
        Just(Instruction::barrier(BarrierScope::Block)),
        Just(Instruction::barrier(BarrierScope::Grid)),
    ];
    prop_oneof![4 => access, 1 => barrier]
}

/// Random valid SPMD program on a small grid.
pub fn program(max_len: usize) -> impl Strategy<Value = Program> {
    geometry().prop_flat_map(move |g| {
        prop::collection::vec(instruction(g.total_threads(), g.blocks), 1..=max_len)
            .prop_map(move |body| Program::new("p", g, g.total_threads() + 2, body).unwrap())
    })
}

/// Layout with 28 spare bits, enough for linearization stamps.
pub fn stamped_layout() -> gpurace::shadow::ShadowLayout {
    gpurace::shadow::ShadowLayout {
        state_bits: 5,
        tid_bits: 11,
        warp_clock_bits: 8,
        block_clock_bits: 8,
        grid_clock_bits: 4,
    }
}

/// `len` random instructions over 16 addresses on `geometry`. Addresses
/// 0..4 are only read, 4..8 only updated atomically, 8..12 each belong to
/// one thread, and 12..16 are read and written by everyone. A block barrier
/// is placed every `len / 8` instructions.
pub fn stress_program(geometry: GridGeometry, len: usize, seed: u64) -> Program {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut body = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 && i % (len / 8).max(1) == 0 {
            body.push(Instruction::barrier(BarrierScope::Block));
            continue;
        }
        let slot: i64 = rng.random_range(0..4);
        let instr = match rng.random_range(0..4) {
            0 => Instruction::access(AccessAction::Read, AffineExpr::constant(slot)),
            1 => Instruction::access(AccessAction::Atomic, AffineExpr::constant(4 + slot)),
            2 => {
                let action = if rng.random_bool(0.5) { AccessAction::Read } else { AccessAction::Write };
                Instruction::access(action, AffineExpr::constant(8 + slot)).when(Guard::TidEq(slot as u64))
            }
            _ => {
                let action = if rng.random_bool(0.5) { AccessAction::Read } else { AccessAction::Write };
                Instruction::access(action, AffineExpr::constant(12 + slot))
            }
        };
        body.push(instr);
    }
    Program::new("stress", geometry, 16, body).unwrap()
}
