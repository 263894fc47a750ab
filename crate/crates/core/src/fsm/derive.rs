//! Constructive derivation of the transition table.
//!
//! The reference semantics track, for one address, a small set of *access
//! records* expressed relative to the last accessor `s`:
//!
//! * the action of a past access,
//! * `dist`: the hierarchy level shared by the past accessor and `s`
//!   (0 same thread, 1 warp, 2 block, 3 grid),
//! * `level`: the widest barrier group around the past accessor known to have
//!   completed since the access (0 none, 1 warp, 2 block). Grid barriers
//!   drop the record entirely.
//!
//! A future thread `u` is ordered after a record iff it is the same thread or
//! lies inside the record's barrier group. Records that threaten a subset of
//! what another record of the same action threatens are dropped, which keeps
//! the reachable set finite. The closure over all 48 symbols is then
//! minimized with Moore partition refinement on the race verdict.

use std::collections::{HashMap, VecDeque};

use super::{
    AccessAction, FsmError, InputSymbol, StateDescriptor, StateId, SyncRelation, ThreadRelation,
    TransitionTable, WriterOwner, ALPHABET_SIZE, MAX_STATES,
};

const LEVELS: u32 = 3;
const DISTS: u32 = 4;
const RECORDS: u32 = 3 * DISTS * LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Record {
    action: u8,
    dist: u8,
    level: u8,
}

impl Record {
    fn bit(self) -> u64 {
        1 << (self.action as u32 * DISTS * LEVELS + self.dist as u32 * LEVELS + self.level as u32)
    }

    fn from_bit(bit: u32) -> Self {
        Record {
            action: (bit / (DISTS * LEVELS)) as u8,
            dist: ((bit / LEVELS) % DISTS) as u8,
            level: (bit % LEVELS) as u8,
        }
    }

    /// The record's barrier group contains the stored accessor.
    fn anchored(self) -> bool {
        self.dist <= self.level
    }

    /// Everything `self` threatens is also threatened by `other`.
    fn dominated_by(self, other: Record) -> bool {
        if self == other || self.action != other.action {
            return false;
        }
        match (self.anchored(), other.anchored()) {
            (true, true) => self.level > other.level || (self.level == other.level && self > other),
            (true, false) => other.dist <= self.level && other.level <= self.level,
            _ => false,
        }
    }
}

/// Set of access records, one bit per `(action, dist, level)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Summary(u64);

impl Summary {
    fn records(self) -> impl Iterator<Item = Record> {
        (0..RECORDS).filter(move |b| self.0 >> b & 1 == 1).map(Record::from_bit)
    }

    fn normalized(records: &[Record]) -> Summary {
        let mut bits = 0;
        for &r in records {
            if !records.iter().any(|&o| r.dominated_by(o)) {
                bits |= r.bit();
            }
        }
        Summary(bits)
    }

    fn descriptor(self) -> StateDescriptor {
        let mut desc = StateDescriptor::INIT;
        let mut fence = u8::MAX;
        for r in self.records() {
            if r.level > 0 {
                fence = fence.min(r.level);
                continue;
            }
            let rel = ThreadRelation::from_code(r.dist);
            match AccessAction::from_code(r.action) {
                Some(AccessAction::Write) => desc.writer_owner = WriterOwner::SingleThread,
                Some(AccessAction::Read) => desc.read_scope = desc.read_scope.max(rel),
                Some(AccessAction::Atomic) => desc.atomic_scope = desc.atomic_scope.max(rel),
                None => unreachable!(),
            }
        }
        desc.fence = match fence {
            1 => SyncRelation::WarpSync,
            2 => SyncRelation::BlockSync,
            _ => SyncRelation::None,
        };
        desc
    }
}

/// Relation between the incoming thread and a record's thread, given both
/// relations to the stored accessor. When both share the same group with the
/// stored accessor the record is taken to belong to a different thread.
fn relative_dist(record_dist: u8, incoming: u8) -> u8 {
    record_dist.max(incoming)
}

/// One step of the reference semantics. `None` means the access races.
fn summary_step(summary: Summary, symbol: InputSymbol) -> Option<Summary> {
    let incoming = symbol.thread_rel.code();
    let mut sync = symbol.sync_rel.code();
    // barriers that cannot cover both threads are ignored
    if !symbol.sync_rel.covers(symbol.thread_rel) {
        sync = 0;
    }
    let mut records: Vec<Record> = Vec::with_capacity(8);
    if sync < 3 {
        for mut r in summary.records() {
            if sync > 0 && r.dist <= sync {
                r.level = r.level.max(sync);
            }
            records.push(r);
        }
    }
    let action = symbol.action;
    for r in &records {
        let past = AccessAction::from_code(r.action).expect("valid action");
        if past.conflicts_with(action) && relative_dist(r.dist, incoming) > r.level {
            return None;
        }
    }
    for r in records.iter_mut() {
        r.dist = relative_dist(r.dist, incoming);
    }
    records.push(Record {
        action: action.code(),
        dist: 0,
        level: 0,
    });
    Some(Summary::normalized(&records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DerivationStats {
    /// Distinct record summaries reachable from INIT (plus the race sink).
    pub raw_states: usize,
    /// States after minimization, including INIT and RACE.
    pub minimized_states: usize,
}

/// Derive, minimize, and validate the transition table.
pub fn derive_state_machine() -> Result<TransitionTable, FsmError> {
    derive_with_stats().map(|(t, _)| t)
}

pub fn derive_with_stats() -> Result<(TransitionTable, DerivationStats), FsmError> {
    const RACE: usize = usize::MAX;

    // closure over record summaries, ids in BFS discovery order
    let mut ids: HashMap<Summary, usize> = HashMap::new();
    let mut summaries = vec![Summary(0)];
    ids.insert(Summary(0), 0);
    let mut race_id = None;
    let mut raw_next: Vec<[usize; ALPHABET_SIZE]> = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(id) = queue.pop_front() {
        let mut row = [RACE; ALPHABET_SIZE];
        for symbol in InputSymbol::all() {
            let next = match summary_step(summaries[id], symbol) {
                None => match race_id {
                    Some(r) => r,
                    None => {
                        summaries.push(Summary(u64::MAX));
                        race_id = Some(summaries.len() - 1);
                        summaries.len() - 1
                    }
                },
                Some(s) => *ids.entry(s).or_insert_with(|| {
                    summaries.push(s);
                    queue.push_back(summaries.len() - 1);
                    summaries.len() - 1
                }),
            };
            row[symbol.index()] = next;
        }
        if raw_next.len() <= id {
            raw_next.resize(id + 1, [RACE; ALPHABET_SIZE]);
        }
        raw_next[id] = row;
    }
    let race_id = race_id.expect("some access sequence races");
    let n_raw = summaries.len();
    if raw_next.len() < n_raw {
        raw_next.resize(n_raw, [race_id; ALPHABET_SIZE]);
    }
    // the race sink absorbs every symbol
    raw_next[race_id] = [race_id; ALPHABET_SIZE];

    // Moore refinement starting from the race / non-race split
    let mut class: Vec<usize> = (0..n_raw).map(|i| usize::from(i == race_id)).collect();
    let mut n_classes = 2;
    loop {
        let mut signatures: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut refined = vec![0; n_raw];
        for i in 0..n_raw {
            let mut sig = Vec::with_capacity(ALPHABET_SIZE + 1);
            sig.push(class[i]);
            sig.extend(raw_next[i].iter().map(|&n| class[n]));
            let fresh = signatures.len();
            refined[i] = *signatures.entry(sig).or_insert(fresh);
        }
        let count = signatures.len();
        class = refined;
        if count == n_classes {
            break;
        }
        n_classes = count;
    }

    // canonical id of a class is its smallest raw member; race goes last
    let mut first_member: Vec<Option<usize>> = vec![None; n_classes];
    for i in 0..n_raw {
        first_member[class[i]].get_or_insert(i);
    }
    let mut order: Vec<usize> = (0..n_classes).collect();
    let race_class = class[race_id];
    order.sort_by_key(|&c| (c == race_class, first_member[c]));
    let mut code_of_class = vec![0u8; n_classes];
    for (code, &c) in order.iter().enumerate() {
        code_of_class[c] = code as u8;
    }
    let non_race = n_classes - 1;
    if n_classes > MAX_STATES {
        return Err(FsmError::DerivationOverflow { non_race });
    }

    // representative summary per class: fewest records, then smallest bits
    let mut reps: Vec<Option<Summary>> = vec![None; n_classes];
    for i in 0..n_raw {
        if i == race_id {
            continue;
        }
        let s = summaries[i];
        let slot = &mut reps[class[i]];
        let better = match slot {
            None => true,
            Some(cur) => (s.0.count_ones(), s.0) < (cur.0.count_ones(), cur.0),
        };
        if better {
            *slot = Some(s);
        }
    }

    let mut entries = vec![StateId(0); n_classes * ALPHABET_SIZE];
    let mut meta = vec![StateDescriptor::INIT; n_classes];
    for c in 0..n_classes {
        let code = code_of_class[c] as usize;
        let member = first_member[c].expect("classes are non-empty");
        for (sym, &next) in raw_next[member].iter().enumerate() {
            entries[code * ALPHABET_SIZE + sym] = StateId(code_of_class[class[next]]);
        }
        meta[code] = if c == race_class {
            StateDescriptor::RACE
        } else {
            reps[c].expect("non-race class has a summary").descriptor()
        };
    }

    let table = TransitionTable::from_parts(entries, meta);
    if let Err(v) = table.validate() {
        panic!("derived table failed validation: {v}");
    }
    Ok((
        table,
        DerivationStats {
            raw_states: n_raw,
            minimized_states: n_classes,
        },
    ))
}
