//! Tool configuration: which addresses and threads to monitor, shadow layout
//! bounds, reporting, and run defaults. Stored as TOML.

use std::fmt::Write as _;

use serde::Deserialize;

use crate::exec::ScheduleSpec;
use crate::shadow::{GridGeometry, ShadowError, ShadowLayout, ThreadCoord};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RepresentativeMode {
    #[default]
    Off,
    OneLanePerWarp,
    OneThreadPerBlock,
}

impl RepresentativeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::OneLanePerWarp => "one_lane_per_warp",
            Self::OneThreadPerBlock => "one_thread_per_block",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(Self::Off),
            "one_lane_per_warp" => Some(Self::OneLanePerWarp),
            "one_thread_per_block" => Some(Self::OneThreadPerBlock),
            _ => None,
        }
    }

    pub fn keeps(self, thread: &ThreadCoord) -> bool {
        match self {
            Self::Off => true,
            Self::OneLanePerWarp => thread.lane == 0,
            Self::OneThreadPerBlock => thread.warp == 0 && thread.lane == 0,
        }
    }
}

/// Explicit list of blocks whose threads are monitored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadFilter {
    pub blocks: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToolConfig {
    /// Sorted, disjoint `[lo, hi)` ranges. Empty means everything the program
    /// declares.
    pub monitored_ranges: Vec<(u64, u64)>,
    pub thread_filter: Option<ThreadFilter>,
    pub representative: RepresentativeMode,
    pub layout: ShadowLayout,
    pub dedup_reports: bool,
    pub strict: bool,
    pub schedule: ScheduleSpec,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            monitored_ranges: Vec::new(),
            thread_filter: None,
            representative: RepresentativeMode::Off,
            layout: ShadowLayout::default(),
            dedup_reports: true,
            strict: false,
            schedule: ScheduleSpec::RoundRobin,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    monitor: Option<RawMonitor>,
    layout: Option<RawLayout>,
    report: Option<RawReport>,
    run: Option<RawRun>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawMonitor {
    ranges: Option<Vec<Vec<i64>>>,
    representative: Option<String>,
    blocks: Option<Vec<i64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    state_bits: Option<u32>,
    tid_bits: Option<u32>,
    warp_clock_bits: Option<u32>,
    block_clock_bits: Option<u32>,
    grid_clock_bits: Option<u32>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawReport {
    dedup: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    strict: Option<bool>,
    schedule: Option<String>,
    seed: Option<i64>,
    max_traces: Option<i64>,
}

pub fn load_config(text: &str) -> Result<ToolConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .unwrap_or("<document>")
            .to_string();
        ConfigError { key, message: msg }
    })?;
    let mut cfg = ToolConfig::default();

    let monitor = raw.monitor.unwrap_or_default();
    if let Some(ranges) = monitor.ranges {
        let mut parsed = Vec::with_capacity(ranges.len());
        for r in ranges {
            match r[..] {
                [lo, hi] if 0 <= lo && lo < hi => parsed.push((lo as u64, hi as u64)),
                _ => {
                    return Err(ConfigError::new(
                        "monitor.ranges",
                        format!("expected [lo, hi) with 0 <= lo < hi, got {r:?}"),
                    ))
                }
            }
        }
        parsed.sort_unstable();
        if parsed.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(ConfigError::new("monitor.ranges", "ranges overlap"));
        }
        cfg.monitored_ranges = parsed;
    }
    if let Some(rep) = monitor.representative {
        cfg.representative = RepresentativeMode::parse(&rep).ok_or_else(|| {
            ConfigError::new(
                "monitor.representative",
                format!("expected off | one_lane_per_warp | one_thread_per_block, got {rep:?}"),
            )
        })?;
    }
    if let Some(blocks) = monitor.blocks {
        let mut parsed = Vec::with_capacity(blocks.len());
        for b in blocks {
            let b = u32::try_from(b)
                .map_err(|_| ConfigError::new("monitor.blocks", format!("invalid block {b}")))?;
            parsed.push(b);
        }
        parsed.sort_unstable();
        parsed.dedup();
        cfg.thread_filter = Some(ThreadFilter { blocks: parsed });
    }

    let layout = raw.layout.unwrap_or_default();
    let d = ShadowLayout::default();
    cfg.layout = ShadowLayout {
        state_bits: layout.state_bits.unwrap_or(d.state_bits),
        tid_bits: layout.tid_bits.unwrap_or(d.tid_bits),
        warp_clock_bits: layout.warp_clock_bits.unwrap_or(d.warp_clock_bits),
        block_clock_bits: layout.block_clock_bits.unwrap_or(d.block_clock_bits),
        grid_clock_bits: layout.grid_clock_bits.unwrap_or(d.grid_clock_bits),
    };
    cfg.layout.validate().map_err(|e| match e {
        ShadowError::Layout(m) => ConfigError::new("layout", m),
        other => ConfigError::new("layout", other.to_string()),
    })?;

    if let Some(dedup) = raw.report.and_then(|r| r.dedup) {
        cfg.dedup_reports = dedup;
    }

    let run = raw.run.unwrap_or_default();
    cfg.strict = run.strict.unwrap_or(false);
    let seed = match run.seed {
        Some(s) if s < 0 => return Err(ConfigError::new("run.seed", "must be non-negative")),
        Some(s) => s as u64,
        None => 0,
    };
    let max_traces = match run.max_traces {
        Some(m) if m <= 0 => return Err(ConfigError::new("run.max_traces", "must be positive")),
        Some(m) => m as u64,
        None => ScheduleSpec::DEFAULT_MAX_TRACES,
    };
    cfg.schedule = match run.schedule.as_deref() {
        None | Some("round-robin") => ScheduleSpec::RoundRobin,
        Some("random") => ScheduleSpec::Random { seed },
        Some("exhaustive") => ScheduleSpec::Exhaustive { max_traces },
        Some(other) => {
            return Err(ConfigError::new(
                "run.schedule",
                format!("expected round-robin | random | exhaustive, got {other:?}"),
            ))
        }
    };
    Ok(cfg)
}

impl ToolConfig {
    /// Normalized TOML text. `load_config(&cfg.to_toml()) == cfg`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let ranges: Vec<String> = self
            .monitored_ranges
            .iter()
            .map(|(lo, hi)| format!("[{lo}, {hi}]"))
            .collect();
        let _ = writeln!(out, "[monitor]");
        let _ = writeln!(out, "ranges = [{}]", ranges.join(", "));
        let _ = writeln!(out, "representative = \"{}\"", self.representative.as_str());
        if let Some(filter) = &self.thread_filter {
            let blocks: Vec<String> = filter.blocks.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "blocks = [{}]", blocks.join(", "));
        }
        let l = &self.layout;
        let _ = writeln!(out, "\n[layout]");
        let _ = writeln!(out, "state_bits = {}", l.state_bits);
        let _ = writeln!(out, "tid_bits = {}", l.tid_bits);
        let _ = writeln!(out, "warp_clock_bits = {}", l.warp_clock_bits);
        let _ = writeln!(out, "block_clock_bits = {}", l.block_clock_bits);
        let _ = writeln!(out, "grid_clock_bits = {}", l.grid_clock_bits);
        let _ = writeln!(out, "\n[report]");
        let _ = writeln!(out, "dedup = {}", self.dedup_reports);
        let _ = writeln!(out, "\n[run]");
        let _ = writeln!(out, "strict = {}", self.strict);
        let (name, seed, max) = match self.schedule {
            ScheduleSpec::RoundRobin => ("round-robin", 0, ScheduleSpec::DEFAULT_MAX_TRACES),
            ScheduleSpec::Random { seed } => ("random", seed, ScheduleSpec::DEFAULT_MAX_TRACES),
            ScheduleSpec::Exhaustive { max_traces } => ("exhaustive", 0, max_traces),
        };
        let _ = writeln!(out, "schedule = \"{name}\"");
        let _ = writeln!(out, "seed = {seed}");
        let _ = writeln!(out, "max_traces = {max}");
        out
    }

    pub fn check_geometry(&self, geometry: &GridGeometry) -> Result<(), ConfigError> {
        self.layout
            .check_geometry(geometry)
            .map_err(|e| ConfigError::new("layout.tid_bits", e.to_string()))
    }

    pub fn is_sampling(&self) -> bool {
        self.representative != RepresentativeMode::Off
    }

    pub fn sampling_warning(&self) -> Option<&'static str> {
        self.is_sampling().then_some(
            "warning: representative-thread sampling is on; detection is best-effort for work groups that are not symmetric",
        )
    }

    pub fn in_range(&self, address: u64) -> bool {
        self.monitored_ranges.is_empty()
            || self
                .monitored_ranges
                .iter()
                .any(|&(lo, hi)| lo <= address && address < hi)
    }

    pub fn thread_enabled(&self, thread: &ThreadCoord) -> bool {
        self.thread_filter
            .as_ref()
            .is_none_or(|f| f.blocks.binary_search(&thread.block).is_ok())
            && self.representative.keeps(thread)
    }

    /// Dense slot assignment for monitored addresses, given the length of the
    /// program's declared data array.
    pub fn address_map(&self, declared: u64) -> AddressMap {
        if self.monitored_ranges.is_empty() {
            AddressMap::new(vec![(0, declared)])
        } else {
            AddressMap::new(self.monitored_ranges.clone())
        }
    }
}

/// Whether an access should reach the detector at all.
pub fn should_monitor(cfg: &ToolConfig, thread: &ThreadCoord, address: u64) -> bool {
    cfg.in_range(address) && cfg.thread_enabled(thread)
}

/// Maps monitored addresses onto dense shadow slots, range by range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddressMap {
    ranges: Vec<(u64, u64)>,
    starts: Vec<usize>,
    len: usize,
}

impl AddressMap {
    pub fn new(ranges: Vec<(u64, u64)>) -> Self {
        let mut starts = Vec::with_capacity(ranges.len());
        let mut len = 0usize;
        for &(lo, hi) in &ranges {
            starts.push(len);
            len += (hi - lo) as usize;
        }
        Self { ranges, starts, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn slot(&self, address: u64) -> Option<usize> {
        self.ranges
            .iter()
            .zip(&self.starts)
            .find(|((lo, hi), _)| *lo <= address && address < *hi)
            .map(|((lo, _), start)| start + (address - lo) as usize)
    }
}
