mod common;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use gpurace::config::ToolConfig;
use gpurace::exec::{
    count_schedules, enumerate_schedules, export_trace, parse_program, parse_trace, run, run_spec, AffineExpr,
    BarrierScope, Detector, DslError, ExecError, Instruction, Program, ProgramError, ScheduleSpec, Scheduler,
};
use gpurace::fsm::{derive_state_machine, AccessAction, TransitionTable};
use gpurace::shadow::GridGeometry;
use proptest::prelude::*;

fn table() -> Arc<TransitionTable> {
    Arc::new(derive_state_machine().unwrap())
}

fn kernel(name: &str) -> Program {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../kernels").join(name);
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn geo(b: u32, w: u32, l: u32) -> GridGeometry {
    GridGeometry::new(b, w, l).unwrap()
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn factorial(n: u128) -> u128 {
    (1..=n).product()
}

#[test]
fn dsl_examples() {
    let p = parse_program("geometry blocks=1 warps=1 lanes=2\nmonitor data[0..1]\nread data[0]\n").unwrap();
    assert_eq!(p.body.len(), 1);
    assert_eq!(p.geometry, geo(1, 1, 2));

    let err = parse_program("geometry blocks=1 warps=1 lanes=2\nmonitor data[0..1]\nwhen tid==0 syncblock\n");
    assert!(matches!(
        err,
        Err(DslError::Validation(ProgramError::GuardedBarrier { index: 0 }))
    ));

    let err = parse_program("geometry blocks=1 warps=1 lanes=2\nmonitor data[0..1]\nread data[tid+1]\n");
    assert!(matches!(
        err,
        Err(DslError::Validation(ProgramError::AddressOutOfRange { thread: 0, address: 1, .. }))
    ));

    let Err(DslError::Parse(e)) = parse_program("geometry blocks=1 warps=1 lanes=2\nmonitor data[0..1]\nfence\n")
    else {
        panic!("unknown keyword must not parse")
    };
    assert_eq!(e.line, 3);
}

#[test]
fn barriers_carry_no_address() {
    let p = Program::new(
        "p",
        geo(1, 1, 2),
        1,
        vec![Instruction {
            address: Some(AffineExpr::constant(0)),
            ..Instruction::barrier(BarrierScope::Block)
        }],
    );
    assert!(matches!(p, Err(ProgramError::BarrierWithAddress { .. })));
}

// Normalized program text plus the round-robin reports for every bundled
// kernel. Regenerate with UPDATE_GOLDEN=1.
#[test]
fn golden_kernels() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../kernels");
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let table = table();
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".kern"))
        .collect();
    names.sort();
    assert!(names.len() >= 4);
    for name in names {
        let p = kernel(&name);
        let d = Detector::new(&p, table.clone(), &ToolConfig::default()).unwrap();
        let r = run(&p, &Scheduler::RoundRobin, Some(&d)).unwrap();
        let mut out = p.to_string();
        let _ = writeln!(out, "--- round-robin steps={} accesses={}", r.stats.steps, r.stats.accesses);
        for rep in &r.reports {
            let _ = writeln!(out, "{rep}");
        }
        let path = golden.join(name.replace(".kern", ".txt"));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&path, &out).unwrap();
        }
        let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(out, expected, "{name}");
        // normalized text parses back to the same program
        assert_eq!(parse_program(&p.to_string()).unwrap(), p);
    }
}

proptest! {
    #[test]
    fn dsl_round_trip(p in common::program(6)) {
        let text = p.to_string();
        let back = parse_program(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.to_string(), text);
    }
}

#[test]
fn rw_nosync_races_on_every_schedule() {
    let p = kernel("rw_nosync.kern");
    let d = Detector::new(&p, table(), &ToolConfig::default()).unwrap();
    let runs = run_spec(&p, &ScheduleSpec::Exhaustive { max_traces: 100_000 }, Some(&d)).unwrap();
    // thread 1's write of data[0] is unordered with every other thread's read,
    // so every schedule races there and nowhere else
    assert_eq!(runs.len(), 7 * 6 * 5 * 4 * 3 * 2 / 8);
    for r in &runs {
        assert_eq!(r.reports.len(), 1);
        assert_eq!(r.reports[0].address, 0);
    }
}

#[test]
fn rw_bsync_block_count_decides() {
    let p = kernel("rw_bsync.kern");
    let d = Detector::new(&p, table(), &ToolConfig::default()).unwrap();
    let spec = ScheduleSpec::Exhaustive { max_traces: 100_000 };
    let runs = run_spec(&p, &spec, Some(&d)).unwrap();
    assert_eq!(runs.len() as u128, count_schedules(&p, 100_000).unwrap());
    assert!(runs.iter().all(|r| r.reports.is_empty()));

    let two = p.with_geometry(geo(2, 1, 2)).unwrap();
    let d = Detector::new(&two, table(), &ToolConfig::default()).unwrap();
    let runs = run_spec(&two, &spec, Some(&d)).unwrap();
    assert!(!runs.is_empty());
    for r in &runs {
        assert_eq!(r.reports.len(), 1);
        assert_eq!(r.reports[0].address, 0);
    }
}

#[test]
fn random_schedule_is_reproducible() {
    let p = kernel("reverse_nosync.kern");
    let d = Detector::new(&p, table(), &ToolConfig::default()).unwrap();
    for seed in 0..20 {
        let a = run(&p, &Scheduler::Random { seed }, Some(&d)).unwrap();
        let b = run(&p, &Scheduler::Random { seed }, Some(&d)).unwrap();
        assert_eq!(a, b);
        // the choices replay the same run
        let c = run(&p, &Scheduler::Fixed(a.choices.clone()), Some(&d)).unwrap();
        assert_eq!(c.trace, a.trace);
        assert_eq!(c.reports, a.reports);
    }
}

#[test]
fn trace_export_round_trip() {
    let p = kernel("warp_exchange.kern");
    let r = run(&p, &Scheduler::Random { seed: 4 }, None).unwrap();
    let text = export_trace(&r.trace);
    assert_eq!(text.lines().count(), r.trace.len());
    assert_eq!(parse_trace(&text).unwrap(), r.trace);
}

#[test]
fn interleaving_counts() {
    let read0 = || Instruction::access(AccessAction::Read, AffineExpr::constant(0));
    let count = |g: GridGeometry, body: Vec<Instruction>| {
        let p = Program::new("p", g, 4, body).unwrap();
        let n = count_schedules(&p, u64::MAX).unwrap();
        assert_eq!(enumerate_schedules(&p, u64::MAX).unwrap().count() as u128, n);
        n
    };
    assert_eq!(count(geo(1, 1, 2), vec![read0()]), 2);
    assert_eq!(count(geo(1, 1, 2), vec![read0(), read0()]), 6);
    // three threads, two accesses each: 6! / (2! 2! 2!)
    assert_eq!(count(geo(1, 1, 3), vec![read0(), read0()]), factorial(6) / 8);
    // a joint barrier splits the run into independent phases
    let sync = || Instruction::barrier(BarrierScope::Block);
    assert_eq!(count(geo(1, 1, 2), vec![read0(), sync(), read0()]), 2 * 2);
    assert_eq!(count(geo(1, 1, 3), vec![read0(), read0(), sync(), read0()]), (factorial(6) / 8) * 6);
    // two blocks, each a a B a a over two threads; the blocks interleave freely
    assert_eq!(
        count(geo(2, 1, 2), vec![read0(), sync(), read0()]),
        4 * 4 * binomial(10, 5)
    );
    // a guard that skips a thread removes its steps
    let guarded = read0().when(gpurace::exec::Guard::TidEq(0));
    assert_eq!(count(geo(1, 1, 3), vec![guarded, read0()]), factorial(4) / 2);
}

#[test]
fn schedule_limit() {
    let read0 = Instruction::access(AccessAction::Read, AffineExpr::constant(0));
    let p = Program::new("p", geo(1, 1, 4), 1, vec![read0; 4]).unwrap();
    // 16! / (4!)^4 = 63_063_000
    assert!(matches!(
        enumerate_schedules(&p, 1000).map(|_| ()),
        Err(ExecError::TooManySchedules { limit: 1000, .. })
    ));
    assert_eq!(count_schedules(&p, u64::MAX).unwrap(), 63_063_000);
}

#[test]
fn strict_mode_rejects_unmonitored() {
    let p = kernel("rw_nosync.kern");
    let cfg = ToolConfig {
        monitored_ranges: vec![(1, 4)],
        strict: true,
        ..ToolConfig::default()
    };
    let d = Detector::new(&p, table(), &cfg).unwrap();
    assert!(matches!(
        run(&p, &Scheduler::RoundRobin, Some(&d)),
        Err(ExecError::InvalidAddress { address: 0, .. })
    ));
    let lax = ToolConfig { strict: false, ..cfg };
    let d = Detector::new(&p, table(), &lax).unwrap();
    let r = run(&p, &Scheduler::RoundRobin, Some(&d)).unwrap();
    assert!(r.reports.iter().all(|x| x.address != 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn run_invariants(p in common::program(6), seed: u64) {
        let table = table();
        let d = Detector::new(&p, table, &ToolConfig::default()).unwrap();
        let r = run(&p, &Scheduler::Random { seed }, Some(&d)).unwrap();
        let bare = run(&p, &Scheduler::Random { seed }, None).unwrap();
        // detection has no functional effect
        prop_assert_eq!(&bare.memory, &r.memory);
        prop_assert_eq!(&bare.trace, &r.trace);
        prop_assert!(bare.reports.is_empty());

        let g = p.geometry;
        let mut per_thread: BTreeMap<u64, Vec<_>> = BTreeMap::new();
        for (i, e) in r.trace.iter().enumerate() {
            prop_assert_eq!(e.index, i);
            per_thread.entry(e.thread.global_id).or_default().push(*e);
        }
        for t in g.threads() {
            // program order: the thread's events are exactly the instructions
            // that run on it, in body order
            let expected: Vec<_> = p.body.iter().filter(|i| i.kind.barrier().is_some() || i.runs_on(&t)).collect();
            let got = per_thread.remove(&t.global_id).unwrap_or_default();
            prop_assert_eq!(got.len(), expected.len());
            let mut prev = gpurace::shadow::ClockTriple::ZERO;
            for (e, i) in got.iter().zip(&expected) {
                prop_assert_eq!(e.kind, i.kind);
                if let Some(a) = i.address {
                    prop_assert_eq!(e.address, Some(a.eval(&t) as u64));
                }
                prop_assert!(e.clocks.warp >= prev.warp && e.clocks.block >= prev.block && e.clocks.grid >= prev.grid);
                prev = e.clocks;
            }
        }
        // a barrier step is the next `n` events: one per member of a single
        // group, all leaving with the same clocks
        let mut i = 0;
        while i < r.trace.len() {
            let e = r.trace[i];
            let Some(scope) = e.kind.barrier() else {
                i += 1;
                continue;
            };
            let n = match scope {
                BarrierScope::Warp => g.lanes_per_warp as usize,
                BarrierScope::Block => g.threads_per_block() as usize,
                BarrierScope::Grid => g.total_threads() as usize,
            };
            let group = |t: &gpurace::shadow::ThreadCoord| match scope {
                BarrierScope::Warp => (t.block, t.warp),
                BarrierScope::Block => (t.block, 0),
                BarrierScope::Grid => (0, 0),
            };
            prop_assert!(i + n <= r.trace.len());
            let step = &r.trace[i..i + n];
            let ids: std::collections::BTreeSet<u64> = step.iter().map(|x| x.thread.global_id).collect();
            prop_assert_eq!(ids.len(), n);
            for x in step {
                prop_assert_eq!(x.kind, e.kind);
                prop_assert_eq!(group(&x.thread), group(&e.thread));
                prop_assert_eq!(x.clocks, e.clocks);
            }
            i += n;
        }
        // reports point at real accesses in the trace
        for rep in &r.reports {
            let e = &r.trace[rep.event_index];
            prop_assert_eq!(e.address, Some(rep.address));
            prop_assert_eq!(e.thread.global_id, rep.current_tid);
        }
    }
}
