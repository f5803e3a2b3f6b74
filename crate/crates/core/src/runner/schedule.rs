//! Discrete-event queue ordered by simulated time, then by task priority.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::sim::SimTime;

/// Work items of a run, in same-instant execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Occupancy,
    Cabinets,
    Controllers,
    Poll,
    Ems,
    Injection(usize),
    Plant,
}

impl Task {
    pub fn priority(self) -> u8 {
        match self {
            Task::Occupancy => 0,
            Task::Cabinets => 1,
            Task::Controllers => 2,
            Task::Poll => 3,
            Task::Ems => 5,
            Task::Injection(_) => 6,
            Task::Plant => 7,
        }
    }
}

#[derive(Debug, Default)]
pub struct Scheduler {
    heap: BinaryHeap<Reverse<(SimTime, u8, u64, Task)>>,
    seq: u64,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, task: Task) {
        self.seq += 1;
        self.heap.push(Reverse((at, task.priority(), self.seq, task)));
    }

    /// Next task strictly before `end`.
    pub fn pop_before(&mut self, end: SimTime) -> Option<(SimTime, Task)> {
        match self.heap.peek() {
            Some(Reverse((at, ..))) if *at < end => self.heap.pop().map(|Reverse((at, _, _, task))| (at, task)),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_priority_then_insertion() {
        let mut s = Scheduler::new();
        s.push(SimTime::from_secs(10), Task::Plant);
        s.push(SimTime::from_secs(10), Task::Ems);
        s.push(SimTime::from_secs(0), Task::Plant);
        s.push(SimTime::from_secs(10), Task::Cabinets);
        s.push(SimTime::from_secs(10), Task::Injection(1));
        s.push(SimTime::from_secs(10), Task::Injection(0));
        let end = SimTime::from_secs(20);
        let order: Vec<_> = std::iter::from_fn(|| s.pop_before(end)).collect();
        assert_eq!(
            order.iter().map(|(_, t)| *t).collect::<Vec<_>>(),
            vec![Task::Plant, Task::Cabinets, Task::Ems, Task::Injection(1), Task::Injection(0), Task::Plant]
        );
    }

    #[test]
    fn stops_at_end() {
        let mut s = Scheduler::new();
        s.push(SimTime::from_secs(5), Task::Plant);
        assert!(s.pop_before(SimTime::from_secs(5)).is_none());
        assert_eq!(s.len(), 1);
    }
}
