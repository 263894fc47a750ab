//! Checks state-machine verdicts against the oracle on every interleaving of
//! every small program, or on sampled programs and schedules.

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{oracle_check, races_with, AccessRecord};
use crate::config::ToolConfig;
use crate::exec::{
    count_schedules, run, AffineExpr, Detector, Guard, InstrKind, Instruction, Machine, Program, Scheduler, Step,
    TraceEvent,
};
use crate::fsm::{InputSymbol, StateId, TransitionTable, ALPHABET_SIZE};
use crate::shadow::{next_word, Access, GridGeometry, ShadowLayout, ShadowWord};

const KEPT_DISAGREEMENTS: usize = 8;
const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Exhaustive,
    Random,
}

impl Tier {
    pub fn configs(self, seed: u64) -> Vec<VerificationConfig> {
        match self {
            Tier::Exhaustive => vec![VerificationConfig::two_thread(), VerificationConfig::four_thread()],
            Tier::Random => vec![VerificationConfig::random(seed)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub name: String,
    pub geometries: Vec<GridGeometry>,
    pub max_body_len: usize,
    pub instruction_alphabet: Vec<InstrKind>,
    /// Guards tried on each access (`None` is unguarded).
    pub guards: Vec<Option<Guard>>,
    pub addresses: Vec<AffineExpr>,
    /// Programs with more interleavings than this are sampled instead.
    pub max_traces_per_program: u64,
    /// Schedules sampled per program, when sampling.
    pub random_trials: usize,
    /// Random programs per geometry; 0 enumerates every program up to
    /// `max_body_len`.
    pub random_programs: usize,
    pub seed: u64,
}

fn geo(b: u32, w: u32, l: u32) -> GridGeometry {
    GridGeometry::new(b, w, l).expect("static geometry")
}

impl VerificationConfig {
    /// Two threads sharing a warp, a block, or nothing; bodies up to 4.
    pub fn two_thread() -> Self {
        Self {
            name: "exhaustive-2t".into(),
            geometries: vec![geo(1, 1, 2), geo(1, 2, 1), geo(2, 1, 1)],
            max_body_len: 4,
            instruction_alphabet: InstrKind::ALL.to_vec(),
            guards: vec![None, Some(Guard::TidEq(0)), Some(Guard::TidEq(1))],
            addresses: vec![AffineExpr::constant(0), AffineExpr::tid_plus(0)],
            max_traces_per_program: 100_000,
            random_trials: 64,
            random_programs: 0,
            seed: 0,
        }
    }

    /// Four threads in every warp/block arrangement; bodies up to 2.
    pub fn four_thread() -> Self {
        Self {
            name: "exhaustive-4t".into(),
            geometries: vec![geo(1, 1, 4), geo(1, 2, 2), geo(2, 1, 2), geo(2, 2, 1)],
            max_body_len: 2,
            instruction_alphabet: InstrKind::ALL.to_vec(),
            guards: vec![
                None,
                Some(Guard::TidEq(0)),
                Some(Guard::TidEq(1)),
                Some(Guard::TidGe(1)),
                Some(Guard::TidGe(2)),
                Some(Guard::BlockEq(1)),
            ],
            addresses: vec![AffineExpr::constant(0), AffineExpr::tid_plus(0)],
            max_traces_per_program: 100_000,
            random_trials: 64,
            random_programs: 0,
            seed: 0,
        }
    }

    /// Larger grids, longer bodies, random programs and schedules.
    pub fn random(seed: u64) -> Self {
        Self {
            name: "random".into(),
            geometries: vec![geo(2, 2, 2), geo(1, 2, 4), geo(4, 1, 2), geo(3, 2, 2)],
            max_body_len: 6,
            instruction_alphabet: InstrKind::ALL.to_vec(),
            guards: vec![
                None,
                Some(Guard::TidEq(0)),
                Some(Guard::TidEq(1)),
                Some(Guard::TidGe(1)),
                Some(Guard::TidGe(4)),
                Some(Guard::BlockEq(0)),
                Some(Guard::BlockEq(1)),
            ],
            addresses: vec![
                AffineExpr::constant(0),
                AffineExpr::constant(1),
                AffineExpr::tid_plus(0),
                AffineExpr::tid_plus(1),
                AffineExpr {
                    tid: 0,
                    block: 1,
                    constant: 0,
                },
            ],
            max_traces_per_program: 0,
            random_trials: 10,
            random_programs: 2_500,
            seed,
        }
    }

    fn monitor(geometry: &GridGeometry) -> u64 {
        geometry.total_threads() + 2
    }

    /// Distinct instructions for one geometry: accesses are deduplicated by
    /// which threads run them and where they land.
    pub fn instruction_choices(&self, geometry: &GridGeometry) -> Vec<Instruction> {
        let monitor = Self::monitor(geometry) as i64;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &kind in &self.instruction_alphabet {
            if let Some(scope) = kind.barrier() {
                out.push(Instruction::barrier(scope));
                continue;
            }
            let action = kind.action().expect("access kind");
            for &address in &self.addresses {
                for &guard in &self.guards {
                    let mut instr = Instruction::access(action, address);
                    instr.guard = guard;
                    let sig: Vec<Option<i64>> = geometry
                        .threads()
                        .map(|t| instr.runs_on(&t).then(|| address.eval(&t)))
                        .collect();
                    let fits = sig.iter().flatten().all(|&a| (0..monitor).contains(&a));
                    if !fits || sig.iter().all(Option::is_none) || !seen.insert((kind, sig)) {
                        continue;
                    }
                    out.push(instr);
                }
            }
        }
        out
    }

    /// Number of programs per geometry in enumeration mode.
    fn program_count(choices: usize, max_len: usize) -> u64 {
        (1..=max_len as u32).map(|l| (choices as u64).pow(l)).sum()
    }

    fn nth_program(&self, geometry: &GridGeometry, choices: &[Instruction], mut index: u64) -> Program {
        let mut len = 1u32;
        while index >= (choices.len() as u64).pow(len) {
            index -= (choices.len() as u64).pow(len);
            len += 1;
        }
        let mut body = Vec::with_capacity(len as usize);
        for _ in 0..len {
            body.push(choices[(index % choices.len() as u64) as usize]);
            index /= choices.len() as u64;
        }
        Program::new("verify", *geometry, Self::monitor(geometry), body).expect("choices are in range")
    }

    fn random_program(&self, geometry: &GridGeometry, choices: &[Instruction], index: u64) -> Program {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, index));
        let len = rng.random_range(1..=self.max_body_len);
        let body = (0..len).map(|_| choices[rng.random_range(0..choices.len())]).collect();
        Program::new("verify", *geometry, Self::monitor(geometry), body).expect("choices are in range")
    }

    pub fn describe(&self) -> String {
        let geos: Vec<String> = self
            .geometries
            .iter()
            .map(|g| format!("{}x{}x{}", g.blocks, g.warps_per_block, g.lanes_per_warp))
            .collect();
        let kinds: Vec<&str> = self.instruction_alphabet.iter().map(|k| k.keyword()).collect();
        let mode = if self.random_programs == 0 {
            "all programs".to_string()
        } else {
            format!("{} random programs per geometry", self.random_programs)
        };
        format!(
            "{}: geometries [{}], body <= {}, kinds [{}], {} guards, {} address forms, {}, trace bound {}, {} sampled schedules",
            self.name,
            geos.join(", "),
            self.max_body_len,
            kinds.join(" "),
            self.guards.len(),
            self.addresses.len(),
            mode,
            self.max_traces_per_program,
            self.random_trials
        )
    }
}

fn mix(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Which (state, symbol) table entries were exercised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    n_states: usize,
    bits: Vec<u64>,
}

impl Coverage {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            bits: vec![0; (n_states * ALPHABET_SIZE).div_ceil(64)],
        }
    }

    #[inline]
    fn mark(&mut self, state: StateId, symbol: InputSymbol) {
        let i = state.0 as usize * ALPHABET_SIZE + symbol.index();
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, state: StateId, symbol: InputSymbol) -> bool {
        let i = state.0 as usize * ALPHABET_SIZE + symbol.index();
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    fn merge(&mut self, other: &Coverage) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn entries(&self) -> Vec<(StateId, InputSymbol)> {
        (0..self.n_states)
            .flat_map(|s| InputSymbol::all().map(move |sym| (StateId(s as u8), sym)))
            .filter(|&(s, sym)| self.contains(s, sym))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub config: String,
    /// Program text, replayable with `parse_program`.
    pub program: String,
    /// Choice indices for `Scheduler::Fixed`.
    pub schedule: Vec<usize>,
    pub address: Option<u64>,
    pub oracle_verdict: bool,
    pub fsm_verdict: bool,
    pub trace: Vec<TraceEvent>,
}

impl Disagreement {
    pub fn schedule_id(&self) -> String {
        let ids: Vec<String> = self.schedule.iter().map(usize::to_string).collect();
        ids.join(".")
    }
}

impl fmt::Display for Disagreement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "[{}] schedule {} oracle={} fsm={} address={:?}",
            self.config,
            self.schedule_id(),
            self.oracle_verdict,
            self.fsm_verdict,
            self.address
        )?;
        for line in self.program.lines() {
            writeln!(f, "    {line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub bounds: Vec<String>,
    pub programs: u64,
    pub traces_checked: u64,
    /// Of `traces_checked`, how many came from sampled schedules.
    pub traces_sampled: u64,
    /// Programs whose interleaving count exceeded the exhaustive bound.
    pub programs_sampled: u64,
    pub disagreement_count: u64,
    /// The first few disagreements, in program order.
    pub disagreements: Vec<Disagreement>,
    pub coverage: Coverage,
}

impl VerificationSummary {
    fn empty(n_states: usize) -> Self {
        Self {
            bounds: Vec::new(),
            programs: 0,
            traces_checked: 0,
            traces_sampled: 0,
            programs_sampled: 0,
            disagreement_count: 0,
            disagreements: Vec::new(),
            coverage: Coverage::new(n_states),
        }
    }

    fn absorb(&mut self, other: VerificationSummary) {
        self.programs += other.programs;
        self.traces_checked += other.traces_checked;
        self.traces_sampled += other.traces_sampled;
        self.programs_sampled += other.programs_sampled;
        self.disagreement_count += other.disagreement_count;
        let room = KEPT_DISAGREEMENTS.saturating_sub(self.disagreements.len());
        self.disagreements.extend(other.disagreements.into_iter().take(room));
        self.coverage.merge(&other.coverage);
    }

    pub fn passed(&self) -> bool {
        self.disagreement_count == 0
    }
}

impl fmt::Display for VerificationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bounds {
            writeln!(f, "bounds {b}")?;
        }
        writeln!(f, "programs checked: {}", self.programs)?;
        writeln!(f, "programs sampled: {}", self.programs_sampled)?;
        writeln!(f, "traces checked: {}", self.traces_checked)?;
        writeln!(f, "traces sampled: {}", self.traces_sampled)?;
        writeln!(
            f,
            "table entries covered: {}/{}",
            self.coverage.count(),
            self.coverage.n_states * ALPHABET_SIZE
        )?;
        writeln!(f, "disagreements: {}", self.disagreement_count)?;
        for d in &self.disagreements {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

struct Ctx<'a> {
    table: &'a TransitionTable,
    shared: Arc<TransitionTable>,
    layout: ShadowLayout,
    race: StateId,
    stop: &'a AtomicBool,
    stop_at_first: bool,
    config_name: &'a str,
}

/// State-machine and oracle verdicts carried along one schedule prefix.
#[derive(Clone)]
struct Walk<'p> {
    machine: Machine<'p>,
    words: Vec<ShadowWord>,
    history: Vec<Vec<AccessRecord>>,
    fsm_race: bool,
    oracle_race: bool,
}

impl<'p> Walk<'p> {
    fn new(program: &'p Program) -> Self {
        Self {
            machine: Machine::new(program),
            words: vec![ShadowWord(0); program.monitor as usize],
            history: vec![Vec::new(); program.monitor as usize],
            fsm_race: false,
            oracle_race: false,
        }
    }

    fn apply(&mut self, step: Step, events: usize, ctx: &Ctx, coverage: &mut Coverage) {
        let Step::Access { thread } = step else {
            self.machine.step(step);
            return;
        };
        let p = self.machine.pending(thread);
        let slot = p.address as usize;
        let access = Access {
            slot,
            address: p.address,
            thread: p.thread,
            action: p.action,
            clocks: p.clocks,
            event_index: events,
        };
        let geometry = self.machine.program().geometry;
        let r = next_word(self.words[slot], &access, ctx.table, &ctx.layout, &geometry);
        coverage.mark(r.prior.state, r.symbol);
        if r.prior.state != ctx.race {
            self.words[slot] = r.word;
            self.fsm_race |= r.next == ctx.race;
        }
        let rec = AccessRecord {
            thread: p.thread,
            action: p.action,
            clocks: p.clocks,
            event_index: events,
        };
        let hist = &mut self.history[slot];
        if !self.oracle_race && hist.iter().any(|a| races_with(a, &rec)) {
            self.oracle_race = true;
        }
        hist.push(rec);
        self.machine.commit_access(thread);
    }
}

fn disagreement(program: &Program, schedule: Vec<usize>, ctx: &Ctx) -> Disagreement {
    let detector = Detector::new(program, ctx.shared.clone(), &ToolConfig::default()).expect("verifier geometry fits");
    let result = run(program, &Scheduler::Fixed(schedule.clone()), Some(&detector)).expect("replay of a walked schedule");
    let oracle = oracle_check(&result.trace);
    let address = oracle
        .first_pair
        .and_then(|(_, later)| result.trace[later].address)
        .or_else(|| result.reports.first().map(|r| r.address));
    Disagreement {
        config: ctx.config_name.to_string(),
        program: program.to_string(),
        schedule,
        address,
        oracle_verdict: oracle.race,
        fsm_verdict: result.raced(),
        trace: result.trace,
    }
}

fn walk(
    state: Walk,
    events: usize,
    choices: &mut Vec<usize>,
    ctx: &Ctx,
    out: &mut VerificationSummary,
) {
    if ctx.stop.load(Ordering::Relaxed) {
        return;
    }
    let mut enabled = Vec::new();
    state.machine.enabled(&mut enabled);
    if enabled.is_empty() {
        out.traces_checked += 1;
        if state.fsm_race != state.oracle_race {
            out.disagreement_count += 1;
            if out.disagreements.len() < KEPT_DISAGREEMENTS {
                out.disagreements
                    .push(disagreement(state.machine.program(), choices.clone(), ctx));
            }
            if ctx.stop_at_first {
                ctx.stop.store(true, Ordering::Relaxed);
            }
        }
        return;
    }
    let last = enabled.len() - 1;
    let mut state = Some(state);
    for (i, &step) in enabled.iter().enumerate() {
        let mut next = if i == last {
            state.take().expect("last branch")
        } else {
            state.as_ref().expect("state kept").clone()
        };
        let width = match step {
            Step::Access { .. } => 1,
            Step::Barrier { scope, group } => next.machine.participants(scope, group).len(),
        };
        next.apply(step, events, ctx, &mut out.coverage);
        choices.push(i);
        walk(next, events + width, choices, ctx, out);
        choices.pop();
    }
}

// Walk a finished trace through the table to record which entries it used.
fn mark_trace(trace: &[TraceEvent], program: &Program, ctx: &Ctx, coverage: &mut Coverage) {
    let mut words = vec![ShadowWord(0); program.monitor as usize];
    for (address, rec) in trace.iter().filter_map(AccessRecord::from_event) {
        let slot = address as usize;
        let access = Access {
            slot,
            address,
            thread: rec.thread,
            action: rec.action,
            clocks: rec.clocks,
            event_index: rec.event_index,
        };
        let r = next_word(words[slot], &access, ctx.table, &ctx.layout, &program.geometry);
        coverage.mark(r.prior.state, r.symbol);
        if r.prior.state != ctx.race {
            words[slot] = r.word;
        }
    }
}

fn sample(program: &Program, cfg: &VerificationConfig, index: u64, ctx: &Ctx, out: &mut VerificationSummary) {
    let detector = Detector::new(program, ctx.shared.clone(), &ToolConfig::default()).expect("verifier geometry fits");
    for trial in 0..cfg.random_trials as u64 {
        if ctx.stop.load(Ordering::Relaxed) {
            return;
        }
        let seed = mix(mix(cfg.seed, index), trial);
        let result = run(program, &Scheduler::Random { seed }, Some(&detector)).expect("validated program runs");
        out.traces_checked += 1;
        out.traces_sampled += 1;
        mark_trace(&result.trace, program, ctx, &mut out.coverage);
        let oracle = oracle_check(&result.trace);
        if oracle.race != result.raced() {
            out.disagreement_count += 1;
            if out.disagreements.len() < KEPT_DISAGREEMENTS {
                out.disagreements.push(disagreement(program, result.choices.clone(), ctx));
            }
            if ctx.stop_at_first {
                ctx.stop.store(true, Ordering::Relaxed);
            }
        }
    }
}

fn check_program(program: &Program, cfg: &VerificationConfig, index: u64, ctx: &Ctx, out: &mut VerificationSummary) {
    out.programs += 1;
    let exhaustive = cfg.random_programs == 0 && count_schedules(program, cfg.max_traces_per_program).is_ok();
    if exhaustive {
        walk(Walk::new(program), 0, &mut Vec::new(), ctx, out);
    } else {
        if cfg.random_programs == 0 {
            out.programs_sampled += 1;
        }
        sample(program, cfg, index, ctx, out);
    }
}

/// Compare the table's verdict ("any race reported") with the oracle on every
/// trace the configs generate. With `stop_at_first`, returns as soon as one
/// disagreement is known.
pub fn verify_fsm(table: &TransitionTable, configs: &[VerificationConfig], stop_at_first: bool) -> VerificationSummary {
    let stop = AtomicBool::new(false);
    let mut total = VerificationSummary::empty(table.n_states());
    for cfg in configs {
        total.bounds.push(cfg.describe());
        let ctx = Ctx {
            table,
            shared: Arc::new(table.clone()),
            layout: ShadowLayout::default(),
            race: table.race_state(),
            stop: &stop,
            stop_at_first,
            config_name: &cfg.name,
        };
        for geometry in &cfg.geometries {
            let choices = cfg.instruction_choices(geometry);
            let n = if cfg.random_programs == 0 {
                VerificationConfig::program_count(choices.len(), cfg.max_body_len)
            } else {
                cfg.random_programs as u64
            };
            let chunks = n.div_ceil(CHUNK as u64);
            let parts: Vec<VerificationSummary> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut out = VerificationSummary::empty(table.n_states());
                    for i in c * CHUNK as u64..((c + 1) * CHUNK as u64).min(n) {
                        if stop.load(Ordering::Relaxed) {
                            break;
                        }
                        let program = if cfg.random_programs == 0 {
                            cfg.nth_program(geometry, &choices, i)
                        } else {
                            cfg.random_program(geometry, &choices, i)
                        };
                        check_program(&program, cfg, i, &ctx, &mut out);
                    }
                    out
                })
                .collect();
            for p in parts {
                total.absorb(p);
            }
        }
    }
    total
}

/// One table entry redirected to flip its race verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub state: StateId,
    pub symbol: InputSymbol,
    pub original: StateId,
    pub mutated: StateId,
}

impl Mutation {
    pub fn apply(&self, table: &TransitionTable) -> TransitionTable {
        table.with_entry(self.state, self.symbol, self.mutated)
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "state {} symbol {} ({}): {} -> {}",
            self.state.0,
            self.symbol.index(),
            self.symbol,
            self.original.0,
            self.mutated.0
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationResult {
    pub mutation: Mutation,
    pub killed: bool,
    pub traces_checked: u64,
    pub witness: Option<Disagreement>,
}

/// Covered entries outside the race state, i.e. the ones whose redirection
/// can change a verdict on some explored trace.
pub fn mutation_candidates(table: &TransitionTable, coverage: &Coverage) -> Vec<(StateId, InputSymbol)> {
    coverage
        .entries()
        .into_iter()
        .filter(|&(s, _)| !table.is_race(s))
        .collect()
}

/// `count` seeded mutations over distinct covered entries. Race-bound entries
/// are sent to a random non-race state, the others to RACE.
pub fn seeded_mutations(table: &TransitionTable, coverage: &Coverage, count: usize, seed: u64) -> Vec<Mutation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = mutation_candidates(table, coverage);
    candidates.shuffle(&mut rng);
    let race = table.race_state();
    candidates
        .into_iter()
        .take(count)
        .map(|(state, symbol)| {
            let original = table.lookup_unchecked(state, symbol);
            let mutated = if original == race {
                StateId(rng.random_range(1..race.0))
            } else {
                race
            };
            Mutation {
                state,
                symbol,
                original,
                mutated,
            }
        })
        .collect()
}

pub fn verify_mutation(table: &TransitionTable, mutation: &Mutation, configs: &[VerificationConfig]) -> MutationResult {
    let summary = verify_fsm(&mutation.apply(table), configs, true);
    MutationResult {
        mutation: *mutation,
        killed: summary.disagreement_count > 0,
        traces_checked: summary.traces_checked,
        witness: summary.disagreements.into_iter().next(),
    }
}
