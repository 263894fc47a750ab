//! Input alphabet, state set, and transition table of the per-address race
//! detection state machine.
//!
//! Every monitored address carries one [`StateId`]. An access to the address
//! is classified by three small enums (what the access does, how the accessing
//! thread relates to the previous accessor, and which barrier scope separates
//! them) and the triple is folded into one of 48 [`InputSymbol`]s. The next
//! state is a single lookup in a flat [`TransitionTable`].

mod derive;
mod table;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use derive::{derive_state_machine, DerivationStats};
pub use table::{TableViolation, TransitionTable};

/// Number of distinct input symbols.
pub const ALPHABET_SIZE: usize = 48;

/// Largest number of states whose codes fit the 5-bit state field.
pub const MAX_STATES: usize = 32;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum FsmError {
    #[error("state machine derivation produced {non_race} non-race states (limit 31)")]
    DerivationOverflow { non_race: usize },
    #[error("state code {code} out of range for a table with {n_states} states")]
    OutOfRange { code: u8, n_states: usize },
    #[error("malformed table dump at line {line}: {message}")]
    Dump { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessAction {
    Read = 0,
    Write = 1,
    Atomic = 2,
}

impl AccessAction {
    pub const ALL: [AccessAction; 3] = [Self::Read, Self::Write, Self::Atomic];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Two accesses conflict unless both are reads or both are atomics.
    pub fn conflicts_with(self, other: AccessAction) -> bool {
        !(self == other && self != AccessAction::Write)
    }
}

/// Strongest hierarchy level shared by two threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ThreadRelation {
    SameThread = 0,
    SameWarp = 1,
    SameBlock = 2,
    Global = 3,
}

impl ThreadRelation {
    pub const ALL: [ThreadRelation; 4] = [
        Self::SameThread,
        Self::SameWarp,
        Self::SameBlock,
        Self::Global,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn short(self) -> &'static str {
        match self {
            Self::SameThread => "thread",
            Self::SameWarp => "warp",
            Self::SameBlock => "block",
            Self::Global => "global",
        }
    }
}

/// Widest barrier scope covering both threads that completed between two
/// accesses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SyncRelation {
    None = 0,
    WarpSync = 1,
    BlockSync = 2,
    GridSync = 3,
}

impl SyncRelation {
    pub const ALL: [SyncRelation; 4] = [Self::None, Self::WarpSync, Self::BlockSync, Self::GridSync];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Whether a barrier of this scope can order two threads related by `rel`.
    pub fn covers(self, rel: ThreadRelation) -> bool {
        match self {
            Self::None => false,
            Self::GridSync => true,
            Self::BlockSync => rel <= ThreadRelation::SameBlock,
            Self::WarpSync => rel <= ThreadRelation::SameWarp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InputSymbol {
    pub action: AccessAction,
    pub thread_rel: ThreadRelation,
    pub sync_rel: SyncRelation,
}

impl InputSymbol {
    pub fn encode(action: AccessAction, thread_rel: ThreadRelation, sync_rel: SyncRelation) -> Self {
        Self {
            action,
            thread_rel,
            sync_rel,
        }
    }

    /// `action * 16 + thread_rel * 4 + sync_rel`.
    #[inline]
    pub fn index(self) -> usize {
        self.action as usize * 16 + self.thread_rel as usize * 4 + self.sync_rel as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= ALPHABET_SIZE {
            return None;
        }
        Some(Self {
            action: AccessAction::from_code((index / 16) as u8)?,
            thread_rel: ThreadRelation::from_code(((index / 4) % 4) as u8)?,
            sync_rel: SyncRelation::from_code((index % 4) as u8)?,
        })
    }

    /// All 48 symbols in index order.
    pub fn all() -> impl Iterator<Item = InputSymbol> {
        (0..ALPHABET_SIZE).map(|i| Self::from_index(i).expect("index in range"))
    }
}

impl fmt::Display for InputSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}/{:?}/{:?}",
            self.action, self.thread_rel, self.sync_rel
        )
    }
}

/// 5-bit state code. `INIT` is always 0; the race state is the highest code of
/// its table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub u8);

impl StateId {
    pub const INIT: StateId = StateId(0);

    pub fn code(self) -> u8 {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WriterOwner {
    None,
    SingleThread,
}

/// Human-readable summary of what a state remembers about the access history,
/// relative to the last accessor stored in the shadow word.
///
/// `read_scope` / `atomic_scope` give the widest relation between the stored
/// accessor and any reader / atomic updater not yet ordered by a barrier.
/// `fence` is set when earlier conflicting accesses are ordered only for
/// threads inside that barrier scope of the stored accessor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateDescriptor {
    pub writer_owner: WriterOwner,
    pub read_scope: Option<ThreadRelation>,
    pub atomic_scope: Option<ThreadRelation>,
    pub fence: SyncRelation,
    pub is_race: bool,
}

impl StateDescriptor {
    pub const INIT: StateDescriptor = StateDescriptor {
        writer_owner: WriterOwner::None,
        read_scope: None,
        atomic_scope: None,
        fence: SyncRelation::None,
        is_race: false,
    };

    pub const RACE: StateDescriptor = StateDescriptor {
        writer_owner: WriterOwner::None,
        read_scope: None,
        atomic_scope: None,
        fence: SyncRelation::None,
        is_race: true,
    };

    /// Conventional name such as `BLOCK_READ` or `ATOMIC|FENCE_WARP`.
    pub fn name(&self) -> String {
        if self.is_race {
            return "RACE".to_string();
        }
        if *self == Self::INIT {
            return "INIT".to_string();
        }
        let scoped = |scope: ThreadRelation, base: &str| match scope {
            ThreadRelation::SameThread => base.to_string(),
            ThreadRelation::SameWarp => format!("WARP_{base}"),
            ThreadRelation::SameBlock => format!("BLOCK_{base}"),
            ThreadRelation::Global => format!("GLOBAL_{base}"),
        };
        let mut parts = Vec::new();
        if self.writer_owner == WriterOwner::SingleThread {
            parts.push("WRITE".to_string());
        }
        if let Some(scope) = self.read_scope {
            parts.push(scoped(scope, "READ"));
        }
        if let Some(scope) = self.atomic_scope {
            parts.push(scoped(scope, "ATOMIC"));
        }
        match self.fence {
            SyncRelation::WarpSync => parts.push("FENCE_WARP".into()),
            SyncRelation::BlockSync => parts.push("FENCE_BLOCK".into()),
            _ => {}
        }
        parts.join("|")
    }

    /// Invariant: a single-thread writer excludes wider unsynchronized readers
    /// or atomic updaters, which would already be a race.
    pub fn is_consistent(&self) -> bool {
        if self.writer_owner == WriterOwner::SingleThread {
            let narrow = |s: Option<ThreadRelation>| matches!(s, None | Some(ThreadRelation::SameThread));
            return narrow(self.read_scope) && narrow(self.atomic_scope);
        }
        true
    }

    pub(crate) fn to_fields(&self) -> String {
        let scope = |s: Option<ThreadRelation>| s.map_or("none", ThreadRelation::short);
        let fence = match self.fence {
            SyncRelation::None => "none",
            SyncRelation::WarpSync => "warp",
            SyncRelation::BlockSync => "block",
            SyncRelation::GridSync => "grid",
        };
        format!(
            "writer={} read={} atomic={} fence={} race={}",
            match self.writer_owner {
                WriterOwner::None => "none",
                WriterOwner::SingleThread => "single",
            },
            scope(self.read_scope),
            scope(self.atomic_scope),
            fence,
            self.is_race
        )
    }

    pub(crate) fn from_fields(fields: &[&str]) -> Option<Self> {
        let mut desc = Self::INIT;
        let scope = |v: &str| -> Option<Option<ThreadRelation>> {
            Some(match v {
                "none" => None,
                "thread" => Some(ThreadRelation::SameThread),
                "warp" => Some(ThreadRelation::SameWarp),
                "block" => Some(ThreadRelation::SameBlock),
                "global" => Some(ThreadRelation::Global),
                _ => return None,
            })
        };
        for field in fields {
            let (key, value) = field.split_once('=')?;
            match key {
                "writer" => {
                    desc.writer_owner = match value {
                        "none" => WriterOwner::None,
                        "single" => WriterOwner::SingleThread,
                        _ => return None,
                    }
                }
                "read" => desc.read_scope = scope(value)?,
                "atomic" => desc.atomic_scope = scope(value)?,
                "fence" => {
                    desc.fence = match value {
                        "none" => SyncRelation::None,
                        "warp" => SyncRelation::WarpSync,
                        "block" => SyncRelation::BlockSync,
                        "grid" => SyncRelation::GridSync,
                        _ => return None,
                    }
                }
                "race" => desc.is_race = value.parse().ok()?,
                _ => return None,
            }
        }
        Some(desc)
    }
}
