//! Deterministic simulator of a GPU grid running SPMD kernels.

pub mod concurrent;
mod detector;
pub mod dsl;
mod enumerate;
mod machine;
pub mod program;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::shadow::{ClockTriple, RaceReport, ShadowError, ThreadCoord};

pub use detector::{Detector, Observed};
pub use dsl::{parse_program, DslError, ParseError};
pub use enumerate::{count_schedules, enumerate_schedules, ScheduleIter};
pub use machine::{Machine, PendingAccess, Step};
pub use program::{AffineExpr, BarrierScope, Guard, InstrKind, Instruction, Program, ProgramError};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("barrier divergence: thread {thread} can never proceed")]
    BarrierDivergence { thread: u64 },
    #[error("event {event}: address {address} is outside the monitored ranges (strict mode)")]
    InvalidAddress { address: u64, event: usize },
    #[error("too many schedules: at least {at_least} interleavings, limit {limit}")]
    TooManySchedules { at_least: u128, limit: u64 },
    #[error("schedule choice {choice} at step {step} is out of range ({enabled} enabled)")]
    InvalidSchedule { step: usize, choice: usize, enabled: usize },
    #[error("schedule ended early at step {step}")]
    ScheduleTooShort { step: usize },
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleSpec {
    RoundRobin,
    Random { seed: u64 },
    Exhaustive { max_traces: u64 },
}

impl ScheduleSpec {
    pub const DEFAULT_MAX_TRACES: u64 = 100_000;
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RoundRobin => write!(f, "round-robin"),
            Self::Random { seed } => write!(f, "random:{seed}"),
            Self::Exhaustive { max_traces } => write!(f, "exhaustive:{max_traces}"),
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = String;

    /// `round-robin`, `random[:seed]`, `exhaustive[:max_traces]`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>, default: u64| -> Result<u64, String> {
            a.map_or(Ok(default), |a| a.parse().map_err(|_| format!("bad number {a:?} in schedule {s:?}")))
        };
        match name {
            "round-robin" if arg.is_none() => Ok(Self::RoundRobin),
            "random" => Ok(Self::Random { seed: num(arg, 0)? }),
            "exhaustive" => Ok(Self::Exhaustive {
                max_traces: num(arg, Self::DEFAULT_MAX_TRACES)?,
            }),
            _ => Err(format!(
                "unknown schedule {s:?}; expected round-robin, random:<seed> or exhaustive:<max>"
            )),
        }
    }
}

/// Policy that picks one enabled step at a time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scheduler {
    /// Rotate over threads, starting after the last one that moved.
    RoundRobin,
    Random { seed: u64 },
    /// Indices into the enabled-step list, one per step (as produced by
    /// [`enumerate_schedules`]).
    Fixed(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: usize,
    pub thread: ThreadCoord,
    pub kind: InstrKind,
    /// Resolved address for accesses.
    pub address: Option<u64>,
    /// Clocks at the access, or right after the barrier completed.
    pub clocks: ClockTriple,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub accesses: usize,
    pub warp_epochs: u64,
    pub block_epochs: u64,
    pub grid_epochs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub reports: Vec<RaceReport>,
    pub trace: Vec<TraceEvent>,
    pub stats: RunStats,
    /// Index of the chosen step among the enabled ones, per step.
    pub choices: Vec<usize>,
    pub memory: Vec<u64>,
}

impl RunResult {
    pub fn raced(&self) -> bool {
        !self.reports.is_empty()
    }
}

/// Line-delimited JSON, one record per event.
pub fn export_trace(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in trace {
        out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

enum Picker<'a> {
    RoundRobin { next: usize },
    Random(ChaCha8Rng),
    Fixed(&'a [usize]),
}

impl Picker<'_> {
    fn pick(&mut self, machine: &Machine, enabled: &[Step], step: usize) -> Result<usize, ExecError> {
        match self {
            Picker::RoundRobin { next } => {
                let n = machine.threads();
                let owner = |s: &Step| match *s {
                    Step::Access { thread } => thread,
                    Step::Barrier { scope, group } => machine.participants(scope, group).start,
                };
                let (i, s) = enabled
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, s)| (owner(s) + n - *next) % n)
                    .expect("enabled is non-empty");
                *next = (owner(s) + 1) % n;
                Ok(i)
            }
            Picker::Random(rng) => Ok(rng.random_range(0..enabled.len())),
            Picker::Fixed(choices) => {
                let &choice = choices.get(step).ok_or(ExecError::ScheduleTooShort { step })?;
                if choice >= enabled.len() {
                    return Err(ExecError::InvalidSchedule {
                        step,
                        choice,
                        enabled: enabled.len(),
                    });
                }
                Ok(choice)
            }
        }
    }
}

/// Run `program` to completion under `scheduler`. Every access is shown to
/// the detector before its memory effect is applied. The detector is reset
/// first.
pub fn run(program: &Program, scheduler: &Scheduler, detector: Option<&Detector>) -> Result<RunResult, ExecError> {
    if let Some(d) = detector {
        d.reset();
    }
    let mut picker = match scheduler {
        Scheduler::RoundRobin => Picker::RoundRobin { next: 0 },
        Scheduler::Random { seed } => Picker::Random(ChaCha8Rng::seed_from_u64(*seed)),
        Scheduler::Fixed(c) => Picker::Fixed(c),
    };
    let mut machine = Machine::new(program);
    let mut enabled = Vec::new();
    let mut trace = Vec::new();
    let mut reports = Vec::new();
    let mut choices = Vec::new();
    let mut stats = RunStats::default();
    loop {
        machine.enabled(&mut enabled);
        if enabled.is_empty() {
            if let Some(t) = machine.stuck_thread() {
                return Err(ExecError::BarrierDivergence {
                    thread: machine.coord(t).global_id,
                });
            }
            break;
        }
        let i = picker.pick(&machine, &enabled, choices.len())?;
        choices.push(i);
        match enabled[i] {
            Step::Access { thread } => {
                let p = machine.pending(thread);
                let index = trace.len();
                if let Some(d) = detector {
                    if let Observed::Updated(crate::shadow::UpdateOutcome::RaceDetected(r)) = d.observe(&p, index)? {
                        reports.push(r);
                    }
                }
                trace.push(TraceEvent {
                    index,
                    thread: p.thread,
                    kind: p.kind,
                    address: Some(p.address),
                    clocks: p.clocks,
                });
                machine.commit_access(thread);
                stats.accesses += 1;
            }
            Step::Barrier { scope, group } => {
                for t in machine.commit_barrier(scope, group) {
                    trace.push(TraceEvent {
                        index: trace.len(),
                        thread: machine.coord(t),
                        kind: scope.kind(),
                        address: None,
                        clocks: machine.clocks(t),
                    });
                }
                match scope {
                    BarrierScope::Warp => stats.warp_epochs += 1,
                    BarrierScope::Block => stats.block_epochs += 1,
                    BarrierScope::Grid => stats.grid_epochs += 1,
                }
            }
        }
        stats.steps += 1;
    }
    Ok(RunResult {
        reports,
        trace,
        stats,
        choices,
        memory: machine.into_memory(),
    })
}

/// Run according to a [`ScheduleSpec`]: one run for round-robin and random,
/// every interleaving for exhaustive.
pub fn run_spec(program: &Program, spec: &ScheduleSpec, detector: Option<&Detector>) -> Result<Vec<RunResult>, ExecError> {
    match *spec {
        ScheduleSpec::RoundRobin => Ok(vec![run(program, &Scheduler::RoundRobin, detector)?]),
        ScheduleSpec::Random { seed } => Ok(vec![run(program, &Scheduler::Random { seed }, detector)?]),
        ScheduleSpec::Exhaustive { max_traces } => enumerate_schedules(program, max_traces)?
            .map(|choices| run(program, &Scheduler::Fixed(choices), detector))
            .collect(),
    }
}
