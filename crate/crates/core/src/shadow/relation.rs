use crate::fsm::{SyncRelation, ThreadRelation};

use super::{ClockTriple, GridGeometry, ThreadCoord};

/// Strongest shared hierarchy level between the stored accessor (as kept in
/// the shadow word) and the current thread.
#[inline]
pub fn thread_relation(prior_tid: u64, current: &ThreadCoord, geometry: &GridGeometry) -> ThreadRelation {
    if prior_tid == current.global_id {
        return ThreadRelation::SameThread;
    }
    let prior = geometry.coord(prior_tid);
    if prior.same_warp(current) {
        ThreadRelation::SameWarp
    } else if prior.same_block(current) {
        ThreadRelation::SameBlock
    } else {
        ThreadRelation::Global
    }
}

/// Widest barrier scope shared by both threads whose clock advanced since the
/// stored snapshot. Clocks of scopes the threads do not share are ignored.
#[inline]
pub fn sync_relation(stored: ClockTriple, current: ClockTriple, rel: ThreadRelation) -> SyncRelation {
    if current.grid > stored.grid {
        SyncRelation::GridSync
    } else if rel <= ThreadRelation::SameBlock && current.block > stored.block {
        SyncRelation::BlockSync
    } else if rel <= ThreadRelation::SameWarp && current.warp > stored.warp {
        SyncRelation::WarpSync
    } else {
        SyncRelation::None
    }
}
