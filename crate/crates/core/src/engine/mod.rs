//! Global picosecond time engine driving a set of clock domains.

mod domain;

pub use domain::{CircularBuffer, ClockDomain, DomainStats};
use domain::Placement;

use crate::SimError;

pub type Picos = u64;
pub type Cycle = u64;

pub const PS_PER_SECOND: u64 = 1_000_000_000_000;

/// Default ring size of a clock domain's event store.
pub const DEFAULT_EVENT_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainId(pub u16);

/// Exact clock period for `frequency_hz`, or `None` when the period is not a
/// whole number of picoseconds.
pub fn period_for(frequency_hz: u64) -> Option<Picos> {
    if frequency_hz == 0 || PS_PER_SECOND % frequency_hz != 0 {
        None
    } else {
        Some(PS_PER_SECOND / frequency_hz)
    }
}

#[derive(Debug, Clone)]
struct EventRecord {
    domain: DomainId,
    owner: u32,
    tag: u32,
    payload: u64,
    placement: Option<Placement>,
}

/// What the engine found when asked for more work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    Event(EventId),
    /// Every store is empty.
    Idle,
    /// The next event lies beyond the time limit.
    Limit,
}

#[derive(Debug, Clone, Default)]
pub struct TimeEngine {
    now_ps: Picos,
    domains: Vec<ClockDomain>,
    events: Vec<EventRecord>,
    current: Option<DomainId>,
}

impl TimeEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_domain(&mut self, domain: ClockDomain) -> DomainId {
        let id = DomainId(self.domains.len() as u16);
        self.domains.push(domain);
        id
    }

    pub fn now_ps(&self) -> Picos {
        self.now_ps
    }

    pub fn domain(&self, id: DomainId) -> &ClockDomain {
        &self.domains[id.0 as usize]
    }

    pub fn domains(&self) -> &[ClockDomain] {
        &self.domains
    }

    pub fn domain_by_name(&self, name: &str) -> Option<DomainId> {
        self.domains
            .iter()
            .position(|d| d.name() == name)
            .map(|i| DomainId(i as u16))
    }

    /// Registers a reusable event bound to `domain`.
    pub fn new_event(&mut self, domain: DomainId, owner: u32, tag: u32) -> EventId {
        let id = EventId(self.events.len() as u32);
        self.events.push(EventRecord { domain, owner, tag, payload: 0, placement: None });
        id
    }

    pub fn owner(&self, id: EventId) -> (u32, u32, u64) {
        let r = &self.events[id.0 as usize];
        (r.owner, r.tag, r.payload)
    }

    pub fn event_domain(&self, id: EventId) -> DomainId {
        self.events[id.0 as usize].domain
    }

    pub fn is_enqueued(&self, id: EventId) -> bool {
        self.events[id.0 as usize].placement.is_some()
    }

    pub fn set_payload(&mut self, id: EventId, payload: u64) {
        self.events[id.0 as usize].payload = payload;
    }

    /// The domain's cycle at the current global time (its next edge if the
    /// present instant falls between edges). Brings the counter forward.
    pub fn current_cycle(&mut self, domain: DomainId) -> Cycle {
        self.sync(domain);
        self.domains[domain.0 as usize].cycle()
    }

    fn sync(&mut self, domain: DomainId) {
        let d = &mut self.domains[domain.0 as usize];
        let target = d.cycles_in_domain(self.now_ps);
        if target > d.cycle() {
            let promoted = d.advance_to(target);
            self.record_promotions(promoted);
        }
    }

    fn record_promotions(&mut self, promoted: Vec<(EventId, Placement)>) {
        for (id, p) in promoted {
            self.events[id.0 as usize].placement = Some(p);
        }
    }

    pub fn enqueue(&mut self, id: EventId, delta: u64) -> Result<(), SimError> {
        let rec = &self.events[id.0 as usize];
        if rec.placement.is_some() {
            return Err(SimError::DoubleEnqueue(id.0));
        }
        let domain = rec.domain;
        self.sync(domain);
        let placement = self.domains[domain.0 as usize].place(id, delta);
        self.events[id.0 as usize].placement = Some(placement);
        Ok(())
    }

    pub fn cancel(&mut self, id: EventId) -> Result<(), SimError> {
        let rec = &mut self.events[id.0 as usize];
        let placement = rec.placement.take().ok_or(SimError::CancelIdle(id.0))?;
        let removed = self.domains[rec.domain.0 as usize].remove(id, placement);
        debug_assert!(removed, "event bookkeeping out of sync");
        Ok(())
    }

    /// Absolute cycle the event is scheduled for.
    pub fn scheduled_cycle(&self, id: EventId) -> Option<Cycle> {
        self.events[id.0 as usize].placement.map(|p| match p {
            Placement::Slot { cycle } | Placement::Overflow { cycle, .. } => cycle,
        })
    }

    /// Pops the next event in (global time, domain index, insertion) order,
    /// advancing time as needed. Events enqueued at delta 0 by a running
    /// callback execute before the engine leaves the current cycle.
    pub fn next_event(&mut self, limit_ps: Option<Picos>) -> Next {
        if let Some(d) = self.current {
            if let Some(id) = self.domains[d.0 as usize].pop_current() {
                return Next::Event(self.fire(d, id));
            }
            self.current = None;
        }
        let mut best: Option<(Picos, usize, Cycle)> = None;
        for (i, d) in self.domains.iter().enumerate() {
            if let Some(c) = d.next_pending_cycle() {
                let t = d.global_time_of(c);
                if best.map_or(true, |(bt, _, _)| t < bt) {
                    best = Some((t, i, c));
                }
            }
        }
        let Some((t, i, c)) = best else {
            return Next::Idle;
        };
        if limit_ps.is_some_and(|l| t > l) {
            return Next::Limit;
        }
        debug_assert!(t >= self.now_ps);
        self.now_ps = t;
        let dom = &mut self.domains[i];
        if c > dom.cycle() {
            let promoted = dom.advance_to(c);
            self.record_promotions(promoted);
        }
        let dom = &mut self.domains[i];
        dom.stats.cycles_executed += 1;
        let id = dom.pop_current().expect("selected cycle has an event");
        let d = DomainId(i as u16);
        self.current = Some(d);
        Next::Event(self.fire(d, id))
    }

    fn fire(&mut self, d: DomainId, id: EventId) -> EventId {
        self.domains[d.0 as usize].stats.events_executed += 1;
        self.events[id.0 as usize].placement = None;
        id
    }

    /// Drives the engine with a plain callback until idle or past the limit.
    pub fn run_with<F>(&mut self, limit_ps: Option<Picos>, mut f: F) -> Next
    where
        F: FnMut(&mut TimeEngine, EventId),
    {
        loop {
            match self.next_event(limit_ps) {
                Next::Event(id) => f(self, id),
                other => return other,
            }
        }
    }

    pub fn is_idle(&self) -> bool {
        self.domains.iter().all(|d| d.is_empty())
    }
}
