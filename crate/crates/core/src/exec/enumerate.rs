use std::collections::HashMap;

use super::machine::{Machine, Step};
use super::program::Program;
use super::ExecError;

/// Memoized interleaving count keyed by the pc vector (clocks and the set of
/// enabled steps are functions of it). Counts above `cap` are clamped to
/// `cap + 1`, which keeps the search small once the bound is known to be
/// exceeded.
fn count_from(machine: &Machine, cap: u128, memo: &mut HashMap<Vec<u32>, u128>) -> u128 {
    if let Some(&c) = memo.get(machine.pcs()) {
        return c;
    }
    let mut enabled = Vec::new();
    machine.enabled(&mut enabled);
    let total = if enabled.is_empty() {
        1
    } else {
        let mut sum = 0u128;
        for step in enabled {
            let mut next = machine.clone();
            next.step(step);
            sum += count_from(&next, cap, memo);
            if sum > cap {
                sum = cap + 1;
                break;
            }
        }
        sum
    };
    memo.insert(machine.pcs().to_vec(), total);
    total
}

/// Exact number of complete interleavings, or `TooManySchedules` when it
/// exceeds `limit`.
pub fn count_schedules(program: &Program, limit: u64) -> Result<u128, ExecError> {
    let cap = limit as u128;
    let n = count_from(&Machine::new(program), cap, &mut HashMap::new());
    if n > cap {
        Err(ExecError::TooManySchedules { at_least: n, limit })
    } else {
        Ok(n)
    }
}

/// Every complete interleaving exactly once, as a vector of choice indices
/// for [`Scheduler::Fixed`](super::Scheduler::Fixed). The count is checked
/// against `limit` before anything is yielded.
pub fn enumerate_schedules(program: &Program, limit: u64) -> Result<ScheduleIter<'_>, ExecError> {
    count_schedules(program, limit)?;
    Ok(ScheduleIter::new(program))
}

struct Frame<'p> {
    machine: Machine<'p>,
    enabled: Vec<Step>,
    next: usize,
}

/// Depth-first enumeration of interleavings.
pub struct ScheduleIter<'p> {
    stack: Vec<Frame<'p>>,
    prefix: Vec<usize>,
}

impl<'p> ScheduleIter<'p> {
    fn new(program: &'p Program) -> Self {
        let machine = Machine::new(program);
        let mut enabled = Vec::new();
        machine.enabled(&mut enabled);
        Self {
            stack: vec![Frame {
                machine,
                enabled,
                next: 0,
            }],
            prefix: Vec::new(),
        }
    }

    fn pop(&mut self) {
        self.stack.pop();
        if !self.stack.is_empty() {
            self.prefix.pop();
        }
    }
}

impl Iterator for ScheduleIter<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        loop {
            let frame = self.stack.last_mut()?;
            if frame.enabled.is_empty() {
                let out = self.prefix.clone();
                self.pop();
                return Some(out);
            }
            if frame.next == frame.enabled.len() {
                self.pop();
                continue;
            }
            let i = frame.next;
            frame.next += 1;
            let mut machine = frame.machine.clone();
            machine.step(frame.enabled[i]);
            let mut enabled = Vec::new();
            machine.enabled(&mut enabled);
            self.prefix.push(i);
            self.stack.push(Frame {
                machine,
                enabled,
                next: 0,
            });
        }
    }
}
