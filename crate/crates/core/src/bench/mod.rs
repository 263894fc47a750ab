//! Generated kernels with optionally injected races, and a runner that
//! scores the detector against the oracle on the same traces.

mod patterns;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ToolConfig;
use crate::exec::{run, Detector, ExecError, ProgramError, Scheduler};
use crate::fsm::TransitionTable;
use crate::oracle::racy_addresses;

pub use patterns::{generate_pattern, BugKind, PatternId, PatternSpec};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BenchError {
    #[error("unknown pattern {0:?}")]
    UnknownPattern(String),
    #[error("invalid pattern spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("bad report line {line}: {message}")]
    Report { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub spec: PatternSpec,
    /// The oracle found a race on at least one tested schedule.
    pub manifested: bool,
    /// The detector reported on at least one tested schedule.
    pub detected: bool,
    /// Reports summed over all schedules.
    pub reports: u64,
    pub schedules: u32,
    /// Schedules whose reported addresses differ from the oracle's racy
    /// addresses on that same trace.
    pub mismatched_traces: u32,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
    pub errors: u64,
    pub mismatched_traces: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    pub totals: Totals,
}

impl SuiteReport {
    pub fn from_cases(cases: Vec<CaseResult>) -> Self {
        let mut t = Totals::default();
        for c in &cases {
            if c.error.is_some() {
                t.errors += 1;
                continue;
            }
            t.mismatched_traces += c.mismatched_traces as u64;
            match (c.manifested, c.detected) {
                (true, true) => t.true_positives += 1,
                (false, true) => t.false_positives += 1,
                (true, false) => t.false_negatives += 1,
                (false, false) => t.true_negatives += 1,
            }
        }
        Self { cases, totals: t }
    }
}

/// `cases` specs cycling through the catalog, clean then buggy, on the
/// default 2x2x2 grid. Sizes vary from 1 to 3 rounds.
pub fn default_suite(cases: usize, seed: u64) -> Vec<PatternSpec> {
    (0..cases)
        .map(|i| {
            let pattern = PatternId::ALL[(i / 2) % PatternId::ALL.len()];
            PatternSpec {
                seed: seed.wrapping_add(i as u64),
                size: 1 + (i / (2 * PatternId::ALL.len())) as u32 % 3,
                ..PatternSpec::new(pattern, i % 2 == 1)
            }
        })
        .collect()
}

fn run_case(spec: &PatternSpec, table: &Arc<TransitionTable>, schedules: u32, seed: u64) -> CaseResult {
    let mut result = CaseResult {
        spec: *spec,
        manifested: false,
        detected: false,
        reports: 0,
        schedules: 0,
        mismatched_traces: 0,
        error: None,
    };
    let outcome = (|| -> Result<(), String> {
        let program = generate_pattern(spec).map_err(|e| e.to_string())?;
        let detector =
            Detector::new(&program, table.clone(), &ToolConfig::default()).map_err(|e| e.to_string())?;
        for s in 0..schedules as u64 {
            let seed = seed ^ s.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let r = run(&program, &Scheduler::Random { seed }, Some(&detector)).map_err(|e: ExecError| e.to_string())?;
            let racy = racy_addresses(&r.trace);
            let reported: BTreeSet<u64> = r.reports.iter().map(|x| x.address).collect();
            result.schedules += 1;
            result.reports += r.reports.len() as u64;
            result.manifested |= !racy.is_empty();
            result.detected |= !reported.is_empty();
            if racy != reported {
                result.mismatched_traces += 1;
            }
        }
        Ok(())
    })();
    result.error = outcome.err();
    result
}

/// Run every case on `schedules_per_case` seeded random schedules. The result
/// depends only on the arguments.
pub fn run_suite(table: &TransitionTable, specs: &[PatternSpec], schedules_per_case: u32, seed: u64) -> SuiteReport {
    let table = Arc::new(table.clone());
    let cases = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let case_seed = seed ^ (i as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
            run_case(spec, &table, schedules_per_case, case_seed)
        })
        .collect();
    SuiteReport::from_cases(cases)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Structured,
}

pub const CSV_HEADER: &str =
    "pattern,inject_bug,blocks,warps,lanes,seed,size,manifested,detected,reports,schedules,mismatched_traces,error";

pub fn emit_report(report: &SuiteReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let _ = writeln!(out, "{CSV_HEADER}");
            for c in &report.cases {
                let s = &c.spec;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    s.pattern,
                    s.inject_bug,
                    s.geometry.blocks,
                    s.geometry.warps_per_block,
                    s.geometry.lanes_per_warp,
                    s.seed,
                    s.size,
                    c.manifested,
                    c.detected,
                    c.reports,
                    c.schedules,
                    c.mismatched_traces,
                    c.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
                );
            }
            let t = &report.totals;
            let _ = writeln!(
                out,
                "#totals,true_positives={},false_positives={},false_negatives={},true_negatives={},errors={},mismatched_traces={}",
                t.true_positives, t.false_positives, t.false_negatives, t.true_negatives, t.errors, t.mismatched_traces
            );
        }
        ReportFormat::Structured => {
            for c in &report.cases {
                let _ = writeln!(out, "{}", serde_json::json!({ "case": c }));
            }
            let _ = writeln!(out, "{}", serde_json::json!({ "totals": report.totals }));
        }
    }
    out
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Case(CaseResult),
    Totals(Totals),
}

/// Inverse of [`emit_report`] with [`ReportFormat::Structured`].
pub fn parse_report(text: &str) -> Result<SuiteReport, BenchError> {
    let mut cases = Vec::new();
    let mut totals = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |message: String| BenchError::Report { line: i + 1, message };
        if totals.is_some() {
            return Err(err("record after totals".into()));
        }
        match serde_json::from_str::<Record>(line).map_err(|e| err(e.to_string()))? {
            Record::Case(c) => cases.push(c),
            Record::Totals(t) => totals = Some(t),
        }
    }
    let totals = totals.ok_or(BenchError::Report {
        line: text.lines().count(),
        message: "missing totals record".into(),
    })?;
    Ok(SuiteReport { cases, totals })
}
