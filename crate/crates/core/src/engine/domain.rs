//! Clock domains: a monotone cycle counter plus the two-level event store.
//!
//! Events due within the next `Tw` cycles live in a ring of slots indexed by
//! `(head + delta) mod Tw`. Anything further out goes to an overflow queue
//! ordered by absolute cycle, which is only inspected when the head completes
//! a lap of the ring (or when the ring is empty and the engine would
//! otherwise stall on it).

use std::collections::{BTreeMap, VecDeque};

use super::{Cycle, EventId, Picos};

/// Ring of `Tw` unordered event lists.
#[derive(Debug, Clone)]
pub struct CircularBuffer {
    slots: Vec<VecDeque<EventId>>,
    head: usize,
    pending: usize,
}

impl CircularBuffer {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "event window must be positive");
        CircularBuffer {
            slots: (0..window).map(|_| VecDeque::new()).collect(),
            head: 0,
            pending: 0,
        }
    }

    /// Window size `Tw` in cycles.
    pub fn window(&self) -> usize {
        self.slots.len()
    }

    pub fn head(&self) -> usize {
        self.head
    }

    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn slot_index(&self, delta: u64) -> usize {
        ((self.head as u64 + delta) % self.slots.len() as u64) as usize
    }

    pub fn slot(&self, index: usize) -> &VecDeque<EventId> {
        &self.slots[index]
    }

    fn push(&mut self, delta: u64, id: EventId) {
        let i = self.slot_index(delta);
        self.slots[i].push_back(id);
        self.pending += 1;
    }

    fn remove(&mut self, delta: u64, id: EventId) -> bool {
        let i = self.slot_index(delta);
        let slot = &mut self.slots[i];
        match slot.iter().position(|&e| e == id) {
            Some(pos) => {
                slot.remove(pos);
                self.pending -= 1;
                true
            }
            None => false,
        }
    }

    fn pop_head(&mut self) -> Option<EventId> {
        let id = self.slots[self.head].pop_front()?;
        self.pending -= 1;
        Some(id)
    }

    /// Distance from the head to the first non-empty slot.
    fn first_pending_delta(&self) -> Option<u64> {
        if self.pending == 0 {
            return None;
        }
        let n = self.slots.len();
        (0..n)
            .find(|d| !self.slots[(self.head + d) % n].is_empty())
            .map(|d| d as u64)
    }

    fn rotate(&mut self, by: u64) {
        self.head = ((self.head as u64 + by) % self.slots.len() as u64) as usize;
    }
}

/// Where an enqueued event currently sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Placement {
    Slot { cycle: Cycle },
    Overflow { cycle: Cycle, seq: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct DomainStats {
    pub cycles_executed: u64,
    pub events_executed: u64,
    pub laps: u64,
    pub overflow_promotions: u64,
}

#[derive(Debug, Clone)]
pub struct ClockDomain {
    name: String,
    frequency_hz: u64,
    period_ps: Picos,
    reference_ps: Picos,
    cycle: Cycle,
    window: CircularBuffer,
    overflow: BTreeMap<(Cycle, u64), EventId>,
    overflow_seq: u64,
    pub(crate) stats: DomainStats,
}

impl ClockDomain {
    /// `frequency_hz` must divide 10^12 so the period is an exact number of
    /// picoseconds; callers validate this (see `period_for`).
    pub fn new(name: impl Into<String>, frequency_hz: u64, window: usize) -> Self {
        let period_ps = super::period_for(frequency_hz).expect("non-integral clock period");
        ClockDomain {
            name: name.into(),
            frequency_hz,
            period_ps,
            reference_ps: 0,
            cycle: 0,
            window: CircularBuffer::new(window),
            overflow: BTreeMap::new(),
            overflow_seq: 0,
            stats: DomainStats::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frequency_hz(&self) -> u64 {
        self.frequency_hz
    }

    pub fn period_ps(&self) -> Picos {
        self.period_ps
    }

    pub fn cycle(&self) -> Cycle {
        self.cycle
    }

    pub fn window(&self) -> &CircularBuffer {
        &self.window
    }

    pub fn stats(&self) -> &DomainStats {
        &self.stats
    }

    /// Overflow entries as `(absolute_cycle, event)` in service order.
    pub fn overflow(&self) -> impl Iterator<Item = (Cycle, EventId)> + '_ {
        self.overflow.iter().map(|(&(c, _), &e)| (c, e))
    }

    pub fn is_empty(&self) -> bool {
        self.window.pending == 0 && self.overflow.is_empty()
    }

    fn tw(&self) -> u64 {
        self.window.window() as u64
    }

    /// First cycle of the lap after the one containing the current cycle.
    pub fn lap_end(&self) -> Cycle {
        (self.cycle / self.tw() + 1) * self.tw()
    }

    pub fn global_time_of(&self, cycle: Cycle) -> Picos {
        self.reference_ps + self.period_ps * cycle
    }

    /// First cycle whose edge is at or after `time_ps`.
    pub fn cycles_in_domain(&self, time_ps: Picos) -> Cycle {
        let rel = time_ps.saturating_sub(self.reference_ps);
        rel.div_ceil(self.period_ps)
    }

    pub(crate) fn place(&mut self, id: EventId, delta: u64) -> Placement {
        let cycle = self.cycle + delta;
        if delta < self.tw() {
            self.window.push(delta, id);
            Placement::Slot { cycle }
        } else {
            let seq = self.overflow_seq;
            self.overflow_seq += 1;
            self.overflow.insert((cycle, seq), id);
            Placement::Overflow { cycle, seq }
        }
    }

    pub(crate) fn remove(&mut self, id: EventId, placement: Placement) -> bool {
        match placement {
            Placement::Slot { cycle } => {
                cycle >= self.cycle && self.window.remove(cycle - self.cycle, id)
            }
            Placement::Overflow { cycle, seq } => self.overflow.remove(&(cycle, seq)).is_some(),
        }
    }

    /// Absolute cycle of the earliest pending event, if any.
    pub fn next_pending_cycle(&self) -> Option<Cycle> {
        let in_window = self.window.first_pending_delta().map(|d| self.cycle + d);
        let in_overflow = self.overflow.keys().next().map(|&(c, _)| c);
        match (in_window, in_overflow) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Moves the counter forward to `target`, rotating the ring and pulling
    /// overflow entries into slots at every crossed lap boundary. Returns the
    /// promoted events with their new placements so the caller can update
    /// its bookkeeping.
    pub(crate) fn advance_to(&mut self, target: Cycle) -> Vec<(EventId, Placement)> {
        assert!(target >= self.cycle, "clock counters never go backwards");
        debug_assert!(
            self.window.first_pending_delta().map_or(true, |d| self.cycle + d >= target),
            "advancing past pending events"
        );
        let tw = self.tw();
        let old_lap = self.cycle / tw;
        self.window.rotate(target - self.cycle);
        self.cycle = target;
        let new_lap = target / tw;
        let mut promoted = Vec::new();
        if new_lap > old_lap {
            self.stats.laps += new_lap - old_lap;
            let horizon = (new_lap + 1) * tw;
            while let Some((&(cycle, seq), _)) = self.overflow.iter().next() {
                if cycle >= horizon {
                    break;
                }
                let id = self.overflow.remove(&(cycle, seq)).unwrap();
                debug_assert!(cycle >= self.cycle);
                self.window.push(cycle - self.cycle, id);
                self.stats.overflow_promotions += 1;
                promoted.push((id, Placement::Slot { cycle }));
            }
        }
        promoted
    }

    pub(crate) fn pop_current(&mut self) -> Option<EventId> {
        self.window.pop_head()
    }
}
