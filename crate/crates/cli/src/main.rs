use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gpurace::bench::{default_suite, emit_report, generate_pattern, run_suite, PatternId, PatternSpec, ReportFormat};
use gpurace::config::{load_config, ToolConfig};
use gpurace::exec::{export_trace, parse_program, run_spec, Detector, ScheduleSpec};
use gpurace::fsm::derive_state_machine;
use gpurace::oracle::{seeded_mutations, verify_fsm, verify_mutation, Tier};
use gpurace::shadow::GridGeometry;

#[derive(Parser)]
#[command(name = "gpurace", version, about = "Race detection for simulated GPU kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a kernel and report races. Exits 1 if any race is found.
    Run {
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// round-robin, random:<seed> or exhaustive:<max traces>
        #[arg(long)]
        schedule: Option<ScheduleSpec>,
        /// Write the trace as line-delimited JSON.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Override the number of blocks in the kernel's geometry.
        #[arg(long)]
        blocks: Option<u32>,
    },
    /// Check the state machine against the happens-before oracle.
    VerifyFsm {
        #[arg(long, value_enum, default_value_t = TierArg::Exhaustive)]
        tier: TierArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also check that this many seeded table mutations are caught.
        #[arg(long, default_value_t = 0)]
        mutations: usize,
        /// Write the summary as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the generated-kernel suite and print the confusion matrix.
    Bench {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        schedules: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// State machine utilities.
    Fsm {
        #[command(subcommand)]
        command: FsmCommand,
    },
    /// Print a generated kernel.
    Gen {
        pattern: String,
        #[arg(long)]
        bug: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        size: u32,
        #[arg(long, default_value_t = 2)]
        blocks: u32,
        #[arg(long, default_value_t = 2)]
        warps: u32,
        #[arg(long, default_value_t = 2)]
        lanes: u32,
    },
}

#[derive(Subcommand)]
enum FsmCommand {
    /// Print the derived transition table.
    Dump {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Exhaustive,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Structured,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(
    program: &Path,
    config: Option<&Path>,
    schedule: Option<ScheduleSpec>,
    trace_out: Option<&Path>,
    blocks: Option<u32>,
) -> Result<bool> {
    let mut program = parse_program(&read(program)?).with_context(|| format!("in {}", program.display()))?;
    if let Some(b) = blocks {
        let g = program.geometry;
        program = program.with_geometry(GridGeometry::new(b, g.warps_per_block, g.lanes_per_warp)?)?;
    }
    let cfg = match config {
        Some(p) => load_config(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => ToolConfig::default(),
    };
    if let Some(w) = cfg.sampling_warning() {
        eprintln!("{w}");
    }
    let schedule = schedule.unwrap_or(cfg.schedule);
    let table = derive_state_machine()?;
    let detector = Detector::new(&program, table.into(), &cfg)?;
    let results = run_spec(&program, &schedule, Some(&detector))?;

    let mut racy = 0usize;
    let mut reports = 0usize;
    for (i, r) in results.iter().enumerate() {
        if r.raced() {
            racy += 1;
        }
        reports += r.reports.len();
        for rep in &r.reports {
            if results.len() > 1 {
                println!("schedule={i} {rep}");
            } else {
                println!("{rep}");
            }
        }
    }
    if let Some(path) = trace_out {
        // with several schedules, keep the first racy one
        let pick = results.iter().find(|r| r.raced()).or(results.first());
        let text = pick.map(|r| export_trace(&r.trace)).unwrap_or_default();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "kernel={} schedule={} schedules={} racy_schedules={} reports={}",
        program.name,
        schedule,
        results.len(),
        racy,
        reports
    );
    Ok(racy > 0)
}

fn cmd_verify(tier: TierArg, seed: u64, mutations: usize, json: Option<&Path>) -> Result<bool> {
    let table = derive_state_machine()?;
    let tier = match tier {
        TierArg::Exhaustive => Tier::Exhaustive,
        TierArg::Random => Tier::Random,
    };
    let configs = tier.configs(seed);
    let summary = verify_fsm(&table, &configs, false);
    print!("{summary}");
    let mut ok = summary.passed();
    if mutations > 0 {
        let mut killed = 0;
        let muts = seeded_mutations(&table, &summary.coverage, mutations, seed);
        for m in &muts {
            let r = verify_mutation(&table, m, &configs);
            println!("mutation {m}: {}", if r.killed { "caught" } else { "MISSED" });
            killed += r.killed as usize;
        }
        println!("mutations caught: {killed}/{}", muts.len());
        ok &= killed == muts.len();
    }
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&summary)?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ok)
}

fn cmd_bench(cases: usize, seed: u64, schedules: u32, out: Option<&Path>, format: FormatArg) -> Result<bool> {
    let table = derive_state_machine()?;
    let report = run_suite(&table, &default_suite(cases, seed), schedules, seed);
    let format = match format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Structured => ReportFormat::Structured,
    };
    let text = emit_report(&report, format);
    let t = &report.totals;
    write_or_print(out, &text)?;
    eprintln!(
        "cases={} tp={} fp={} fn={} tn={} errors={} mismatched_traces={}",
        report.cases.len(),
        t.true_positives,
        t.false_positives,
        t.false_negatives,
        t.true_negatives,
        t.errors,
        t.mismatched_traces
    );
    Ok(t.false_positives == 0 && t.false_negatives == 0 && t.errors == 0 && t.mismatched_traces == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            program,
            config,
            schedule,
            trace_out,
            blocks,
        } => cmd_run(&program, config.as_deref(), schedule, trace_out.as_deref(), blocks).map(|raced| !raced),
        Command::VerifyFsm {
            tier,
            seed,
            mutations,
            json,
        } => cmd_verify(tier, seed, mutations, json.as_deref()),
        Command::Bench {
            cases,
            seed,
            schedules,
            out,
            format,
        } => cmd_bench(cases, seed, schedules, out.as_deref(), format),
        Command::Fsm {
            command: FsmCommand::Dump { out },
        } => derive_state_machine()
            .map_err(Into::into)
            .and_then(|t| write_or_print(out.as_deref(), &t.dump()))
            .map(|()| true),
        Command::Gen {
            pattern,
            bug,
            seed,
            size,
            blocks,
            warps,
            lanes,
        } => gen(&pattern, bug, seed, size, (blocks, warps, lanes)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn gen(pattern: &str, bug: bool, seed: u64, size: u32, (b, w, l): (u32, u32, u32)) -> Result<bool> {
    let pattern: PatternId = pattern.parse()?;
    if size == 0 {
        bail!("--size must be at least 1");
    }
    let spec = PatternSpec {
        pattern,
        inject_bug: bug,
        geometry: GridGeometry::new(b, w, l)?,
        seed,
        size,
    };
    print!("{}", generate_pattern(&spec)?);
    Ok(true)
}
