use std::collections::VecDeque;
use std::fmt::{self, Write as _};

use super::{FsmError, InputSymbol, StateDescriptor, StateId, ALPHABET_SIZE, MAX_STATES};

/// Flat `state * 48 + symbol -> state` map plus per-state descriptors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionTable {
    n_states: usize,
    entries: Vec<StateId>,
    state_meta: Vec<StateDescriptor>,
}

/// First structural property a table violates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TableViolation {
    FiveBitBound { n_states: usize },
    NotTotal { expected: usize, found: usize },
    TargetOutOfRange { state: u8, symbol: usize, target: u8 },
    MissingRace,
    RaceNotHighest { race: u8 },
    Absorbing { symbol: usize, target: u8 },
    InitReachable { state: u8, symbol: usize },
    MonotoneDanger { state: u8, symbol: usize },
}

impl fmt::Display for TableViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FiveBitBound { n_states } => write!(f, "5-bit bound: {n_states} states"),
            Self::NotTotal { expected, found } => {
                write!(f, "totality: expected {expected} entries, found {found}")
            }
            Self::TargetOutOfRange { state, symbol, target } => {
                write!(f, "totality: {state} --{symbol}--> {target} is not a state")
            }
            Self::MissingRace => write!(f, "race state: none marked"),
            Self::RaceNotHighest { race } => write!(f, "race state: code {race} is not the highest"),
            Self::Absorbing { symbol, target } => {
                write!(f, "absorbing: race --{symbol}--> {target}")
            }
            Self::InitReachable { state, symbol } => {
                write!(f, "init-unreachable: {state} --{symbol}--> INIT")
            }
            Self::MonotoneDanger { state, symbol } => {
                write!(f, "monotone danger: racy {state} --{symbol}--> non-racy")
            }
        }
    }
}

impl TableViolation {
    /// Short property name, e.g. `"absorbing"`.
    pub fn property(&self) -> &'static str {
        match self {
            Self::FiveBitBound { .. } => "5-bit bound",
            Self::NotTotal { .. } | Self::TargetOutOfRange { .. } => "totality",
            Self::MissingRace | Self::RaceNotHighest { .. } => "race state",
            Self::Absorbing { .. } => "absorbing",
            Self::InitReachable { .. } => "init-unreachable",
            Self::MonotoneDanger { .. } => "monotone danger",
        }
    }
}

impl TransitionTable {
    /// Assemble a table without validating it.
    pub fn from_parts(entries: Vec<StateId>, state_meta: Vec<StateDescriptor>) -> Self {
        Self {
            n_states: state_meta.len(),
            entries,
            state_meta,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_transitions(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[StateId] {
        &self.entries
    }

    /// The race state, by convention the highest code.
    pub fn race_state(&self) -> StateId {
        StateId(self.n_states.saturating_sub(1) as u8)
    }

    pub fn is_race(&self, state: StateId) -> bool {
        self.state_meta
            .get(state.0 as usize)
            .is_some_and(|d| d.is_race)
    }

    pub fn descriptor(&self, state: StateId) -> &StateDescriptor {
        &self.state_meta[state.0 as usize]
    }

    pub fn descriptors(&self) -> &[StateDescriptor] {
        &self.state_meta
    }

    pub fn lookup(&self, state: StateId, symbol: InputSymbol) -> Result<StateId, FsmError> {
        if state.0 as usize >= self.n_states {
            return Err(FsmError::OutOfRange {
                code: state.0,
                n_states: self.n_states,
            });
        }
        Ok(self.lookup_unchecked(state, symbol))
    }

    /// Hot-path lookup; the caller guarantees `state` came from this table.
    #[inline]
    pub fn lookup_unchecked(&self, state: StateId, symbol: InputSymbol) -> StateId {
        self.entries[state.0 as usize * ALPHABET_SIZE + symbol.index()]
    }

    /// Copy of the table with one entry redirected.
    pub fn with_entry(&self, state: StateId, symbol: InputSymbol, target: StateId) -> Self {
        let mut copy = self.clone();
        copy.entries[state.0 as usize * ALPHABET_SIZE + symbol.index()] = target;
        copy
    }

    pub fn validate(&self) -> Result<(), TableViolation> {
        let n = self.n_states;
        if n > MAX_STATES {
            return Err(TableViolation::FiveBitBound { n_states: n });
        }
        if self.entries.len() != n * ALPHABET_SIZE {
            return Err(TableViolation::NotTotal {
                expected: n * ALPHABET_SIZE,
                found: self.entries.len(),
            });
        }
        for (i, target) in self.entries.iter().enumerate() {
            if target.0 as usize >= n {
                return Err(TableViolation::TargetOutOfRange {
                    state: (i / ALPHABET_SIZE) as u8,
                    symbol: i % ALPHABET_SIZE,
                    target: target.0,
                });
            }
        }
        let race = self.race_state();
        if n == 0 || !self.is_race(race) {
            return if self.state_meta.iter().any(|d| d.is_race) {
                let code = self.state_meta.iter().position(|d| d.is_race).unwrap_or(0);
                Err(TableViolation::RaceNotHighest { race: code as u8 })
            } else {
                Err(TableViolation::MissingRace)
            };
        }
        for symbol in InputSymbol::all() {
            let target = self.lookup_unchecked(race, symbol);
            if target != race {
                return Err(TableViolation::Absorbing {
                    symbol: symbol.index(),
                    target: target.0,
                });
            }
        }
        for (i, target) in self.entries.iter().enumerate() {
            let (state, symbol) = ((i / ALPHABET_SIZE) as u8, i % ALPHABET_SIZE);
            if *target == StateId::INIT {
                return Err(TableViolation::InitReachable { state, symbol });
            }
            if self.is_race(StateId(state)) && !self.is_race(*target) {
                return Err(TableViolation::MonotoneDanger { state, symbol });
            }
        }
        Ok(())
    }

    /// States not reachable from INIT.
    pub fn unreachable_states(&self) -> Vec<StateId> {
        let mut seen = vec![false; self.n_states];
        let mut queue = VecDeque::from([StateId::INIT]);
        if self.n_states > 0 {
            seen[0] = true;
        }
        while let Some(st) = queue.pop_front() {
            for symbol in InputSymbol::all() {
                let next = self.lookup_unchecked(st, symbol);
                if !seen[next.0 as usize] {
                    seen[next.0 as usize] = true;
                    queue.push_back(next);
                }
            }
        }
        (0..self.n_states)
            .filter(|&i| !seen[i])
            .map(|i| StateId(i as u8))
            .collect()
    }

    /// Text dump: header, one descriptor line per state, then one
    /// `state symbol next` line per transition.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states={} symbols={}", self.n_states, ALPHABET_SIZE);
        for (code, desc) in self.state_meta.iter().enumerate() {
            let _ = writeln!(out, "state {code} {} {}", desc.name(), desc.to_fields());
        }
        for (i, target) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{} {} {}", i / ALPHABET_SIZE, i % ALPHABET_SIZE, target.0);
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self, FsmError> {
        let err = |line: usize, message: &str| FsmError::Dump {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty dump"))?;
        let n_states: usize = header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix("states="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, "missing states=<n> header"))?;
        if !header.contains(&format!("symbols={ALPHABET_SIZE}")) {
            return Err(err(1, "alphabet size must be 48"));
        }
        let mut meta = Vec::with_capacity(n_states);
        let mut entries = vec![None; n_states * ALPHABET_SIZE];
        for (idx, line) in lines {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "state" {
                let code: usize = fields
                    .get(1)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(lineno, "bad state code"))?;
                if code != meta.len() || fields.len() < 4 {
                    return Err(err(lineno, "state lines must be consecutive"));
                }
                let desc = StateDescriptor::from_fields(&fields[3..])
                    .ok_or_else(|| err(lineno, "bad descriptor"))?;
                meta.push(desc);
                continue;
            }
            let nums: Vec<usize> = fields
                .iter()
                .map(|f| f.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| err(lineno, "expected `state symbol next`"))?;
            match nums[..] {
                [s, sym, next] if s < n_states && sym < ALPHABET_SIZE && next < 256 => {
                    entries[s * ALPHABET_SIZE + sym] = Some(StateId(next as u8));
                }
                _ => return Err(err(lineno, "transition out of range")),
            }
        }
        if meta.len() != n_states {
            return Err(err(0, "state count does not match header"));
        }
        let entries = entries
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| err(0, "missing transitions"))?;
        Ok(Self::from_parts(entries, meta))
    }
}
