use std::sync::Arc;

use super::machine::PendingAccess;
use super::program::Program;
use super::ExecError;
use crate::config::{AddressMap, ToolConfig};
use crate::fsm::TransitionTable;
use crate::shadow::{Access, LinearizedUpdate, RaceReport, ShadowStore, UpdateOutcome};

/// Shadow store plus the table and config filters for one program.
#[derive(Debug)]
pub struct Detector {
    table: Arc<TransitionTable>,
    store: ShadowStore,
    map: AddressMap,
    config: ToolConfig,
}

/// What the detector did with one access.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observed {
    /// Filtered out before reaching the shadow store.
    Skipped,
    Updated(UpdateOutcome),
}

impl Detector {
    pub fn new(program: &Program, table: Arc<TransitionTable>, config: &ToolConfig) -> Result<Self, ExecError> {
        config.check_geometry(&program.geometry)?;
        let map = config.address_map(program.monitor);
        let store = ShadowStore::new(map.len(), program.geometry, config.layout)?.with_dedup(config.dedup_reports);
        Ok(Self {
            table,
            store,
            map,
            config: config.clone(),
        })
    }

    /// Variant that stamps every successful update for linearization replay.
    pub fn new_stamped(program: &Program, table: Arc<TransitionTable>, config: &ToolConfig) -> Result<Self, ExecError> {
        let mut d = Self::new(program, table, config)?;
        d.store = d.store.with_stamps()?;
        Ok(d)
    }

    pub fn table(&self) -> &TransitionTable {
        &self.table
    }

    pub fn store(&self) -> &ShadowStore {
        &self.store
    }

    pub fn address_map(&self) -> &AddressMap {
        &self.map
    }

    pub fn config(&self) -> &ToolConfig {
        &self.config
    }

    pub fn reset(&self) {
        self.store.reset();
    }

    fn access(&self, p: &PendingAccess, event_index: usize) -> Result<Option<Access>, ExecError> {
        let slot = match self.map.slot(p.address) {
            Some(slot) => slot,
            None if self.config.strict => {
                return Err(ExecError::InvalidAddress {
                    address: p.address,
                    event: event_index,
                })
            }
            None => return Ok(None),
        };
        if !self.config.thread_enabled(&p.thread) {
            return Ok(None);
        }
        Ok(Some(Access {
            slot,
            address: p.address,
            thread: p.thread,
            action: p.action,
            clocks: p.clocks,
            event_index,
        }))
    }

    pub fn observe(&self, p: &PendingAccess, event_index: usize) -> Result<Observed, ExecError> {
        Ok(match self.access(p, event_index)? {
            Some(a) => Observed::Updated(self.store.update(&self.table, &a)),
            None => Observed::Skipped,
        })
    }

    /// Like [`observe`](Self::observe), also returning the stamped update when
    /// the store installed a new word.
    pub fn observe_linearized(
        &self,
        p: &PendingAccess,
        event_index: usize,
    ) -> Result<(Option<RaceReport>, Option<LinearizedUpdate>), ExecError> {
        let Some(a) = self.access(p, event_index)? else {
            return Ok((None, None));
        };
        let (outcome, lin) = self.store.update_linearized(&self.table, &a);
        let report = match outcome {
            UpdateOutcome::RaceDetected(r) => Some(r),
            _ => None,
        };
        Ok((report, lin))
    }
}
