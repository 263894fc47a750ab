use serde::{Deserialize, Serialize};

use crate::fsm::AccessAction;
use crate::shadow::{GridGeometry, ThreadCoord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrKind {
    Read,
    Write,
    Atomic,
    SyncWarp,
    SyncBlock,
    SyncGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BarrierScope {
    Warp,
    Block,
    Grid,
}

impl InstrKind {
    pub const ALL: [InstrKind; 6] = [
        Self::Read,
        Self::Write,
        Self::Atomic,
        Self::SyncWarp,
        Self::SyncBlock,
        Self::SyncGrid,
    ];

    pub fn action(self) -> Option<AccessAction> {
        match self {
            Self::Read => Some(AccessAction::Read),
            Self::Write => Some(AccessAction::Write),
            Self::Atomic => Some(AccessAction::Atomic),
            _ => None,
        }
    }

    pub fn barrier(self) -> Option<BarrierScope> {
        match self {
            Self::SyncWarp => Some(BarrierScope::Warp),
            Self::SyncBlock => Some(BarrierScope::Block),
            Self::SyncGrid => Some(BarrierScope::Grid),
            _ => None,
        }
    }

    pub fn is_access(self) -> bool {
        self.action().is_some()
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Read => "read",
            Self::Write => "write",
            Self::Atomic => "atomic",
            Self::SyncWarp => "syncwarp",
            Self::SyncBlock => "syncblock",
            Self::SyncGrid => "syncgrid",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.keyword() == word)
    }

    pub fn from_action(action: AccessAction) -> Self {
        match action {
            AccessAction::Read => Self::Read,
            AccessAction::Write => Self::Write,
            AccessAction::Atomic => Self::Atomic,
        }
    }
}

impl BarrierScope {
    pub fn kind(self) -> InstrKind {
        match self {
            Self::Warp => InstrKind::SyncWarp,
            Self::Block => InstrKind::SyncBlock,
            Self::Grid => InstrKind::SyncGrid,
        }
    }
}

/// `tid * tid_coef + block * block_coef + constant`, where `tid` is the global
/// linear thread id.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AffineExpr {
    pub tid: i64,
    pub block: i64,
    pub constant: i64,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        Self {
            tid: 0,
            block: 0,
            constant: c,
        }
    }

    pub fn tid_plus(c: i64) -> Self {
        Self {
            tid: 1,
            block: 0,
            constant: c,
        }
    }

    #[inline]
    pub fn eval(&self, thread: &ThreadCoord) -> i64 {
        self.tid * thread.global_id as i64 + self.block * thread.block as i64 + self.constant
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Guard {
    TidEq(u64),
    TidGe(u64),
    BlockEq(u32),
}

impl Guard {
    #[inline]
    pub fn holds(&self, thread: &ThreadCoord) -> bool {
        match *self {
            Guard::TidEq(k) => thread.global_id == k,
            Guard::TidGe(k) => thread.global_id >= k,
            Guard::BlockEq(b) => thread.block == b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: InstrKind,
    pub address: Option<AffineExpr>,
    pub guard: Option<Guard>,
}

impl Instruction {
    pub fn access(action: AccessAction, address: AffineExpr) -> Self {
        Self {
            kind: InstrKind::from_action(action),
            address: Some(address),
            guard: None,
        }
    }

    pub fn barrier(scope: BarrierScope) -> Self {
        Self {
            kind: scope.kind(),
            address: None,
            guard: None,
        }
    }

    pub fn when(mut self, guard: Guard) -> Self {
        self.guard = Some(guard);
        self
    }

    #[inline]
    pub fn runs_on(&self, thread: &ThreadCoord) -> bool {
        self.guard.is_none_or(|g| g.holds(thread))
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("instruction {index}: barriers cannot be guarded (barrier divergence)")]
    GuardedBarrier { index: usize },
    #[error("instruction {index}: barriers take no address")]
    BarrierWithAddress { index: usize },
    #[error("instruction {index}: access without an address")]
    MissingAddress { index: usize },
    #[error("instruction {index}: thread {thread} accesses data[{address}] outside data[0..{monitor}]")]
    AddressOutOfRange {
        index: usize,
        thread: u64,
        address: i64,
        monitor: u64,
    },
    #[error("monitored range must be non-empty")]
    EmptyMonitor,
}

/// SPMD kernel: every thread runs `body`, skipping accesses whose guard does
/// not hold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub geometry: GridGeometry,
    /// Length of the monitored `data` array.
    pub monitor: u64,
    pub body: Vec<Instruction>,
}

impl Program {
    pub fn new(
        name: impl Into<String>,
        geometry: GridGeometry,
        monitor: u64,
        body: Vec<Instruction>,
    ) -> Result<Self, ProgramError> {
        let p = Self {
            name: name.into(),
            geometry,
            monitor,
            body,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.monitor == 0 {
            return Err(ProgramError::EmptyMonitor);
        }
        for (index, instr) in self.body.iter().enumerate() {
            if instr.kind.barrier().is_some() {
                if instr.guard.is_some() {
                    return Err(ProgramError::GuardedBarrier { index });
                }
                if instr.address.is_some() {
                    return Err(ProgramError::BarrierWithAddress { index });
                }
                continue;
            }
            let expr = instr.address.ok_or(ProgramError::MissingAddress { index })?;
            for thread in self.geometry.threads() {
                if !instr.runs_on(&thread) {
                    continue;
                }
                let address = expr.eval(&thread);
                if address < 0 || address as u64 >= self.monitor {
                    return Err(ProgramError::AddressOutOfRange {
                        index,
                        thread: thread.global_id,
                        address,
                        monitor: self.monitor,
                    });
                }
            }
        }
        Ok(())
    }

    /// Same body on another geometry.
    pub fn with_geometry(&self, geometry: GridGeometry) -> Result<Self, ProgramError> {
        Self::new(self.name.clone(), geometry, self.monitor, self.body.clone())
    }

    /// Dynamic access count per thread.
    pub fn accesses_per_thread(&self) -> Vec<usize> {
        self.geometry
            .threads()
            .map(|t| {
                self.body
                    .iter()
                    .filter(|i| i.kind.is_access() && i.runs_on(&t))
                    .count()
            })
            .collect()
    }
}
