//! Components, ports, and the latency-accumulating request that travels
//! between them.

use std::any::Any;

use smallvec::SmallVec;

use crate::engine::{Cycle, Picos};
use crate::platform::Platform;

/// Largest payload a single request may carry; initiators split bigger
/// transfers.
pub const MAX_REQUEST_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentId(pub u32);

/// Index of a port within its owning component.
pub type PortIx = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Decode failure, misalignment, or a device-level error.
    BusError,
    /// The target parked the initiator; it will be resumed through
    /// [`Platform::wake`] with the read value.
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Master,
    Slave,
}

#[derive(Debug, Clone)]
pub struct PortDecl {
    pub name: String,
    pub direction: Direction,
}

impl PortDecl {
    pub fn master(name: impl Into<String>) -> Self {
        PortDecl { name: name.into(), direction: Direction::Master }
    }

    pub fn slave(name: impl Into<String>) -> Self {
        PortDecl { name: name.into(), direction: Direction::Slave }
    }
}

/// A memory-mapped transaction.
///
/// Timing is tracked as the global time at which the request currently sits
/// in the chain. Each hop advances it in its own clock domain, and
/// `latency_cycles` always holds the elapsed time expressed in whole cycles
/// of the initiator's clock (rounded up), so it never decreases.
#[derive(Debug, Clone)]
pub struct Request {
    pub addr: u32,
    pub data: SmallVec<[u8; 8]>,
    pub size: u32,
    pub kind: Access,
    pub initiator: ComponentId,
    /// Port index used for arbitration and event-unit bookkeeping.
    pub initiator_index: u32,
    pub latency_cycles: u64,
    pub status: Status,
    /// Bank conflicts met on the way.
    pub contentions: u32,
    /// Worst per-word wait for a bank, in the memory's cycles.
    pub stall_cycles: u64,
    /// Words per cycle the initiator can move into banked memories.
    pub beat_words: u32,
    /// Set by caches that had to refill to serve the request.
    pub cache_miss: bool,
    time_ps: Picos,
    start_ps: Picos,
    initiator_period: Picos,
}

impl Request {
    fn new(kind: Access, addr: u32, size: u32, initiator: ComponentId, at_ps: Picos, period: Picos) -> Self {
        Request {
            addr,
            data: SmallVec::new(),
            size,
            kind,
            initiator,
            initiator_index: 0,
            latency_cycles: 0,
            status: Status::Ok,
            contentions: 0,
            stall_cycles: 0,
            beat_words: 1,
            cache_miss: false,
            time_ps: at_ps,
            start_ps: at_ps,
            initiator_period: period,
        }
    }

    pub fn read(addr: u32, size: u32, initiator: ComponentId, at_ps: Picos, period: Picos) -> Self {
        Self::new(Access::Read, addr, size, initiator, at_ps, period)
    }

    pub fn write(addr: u32, bytes: &[u8], initiator: ComponentId, at_ps: Picos, period: Picos) -> Self {
        let mut r = Self::new(Access::Write, addr, bytes.len() as u32, initiator, at_ps, period);
        r.data.extend_from_slice(bytes);
        r
    }

    pub fn with_index(mut self, index: u32) -> Self {
        self.initiator_index = index;
        self
    }

    pub fn with_beat_words(mut self, words: u32) -> Self {
        self.beat_words = words.max(1);
        self
    }

    pub fn is_write(&self) -> bool {
        self.kind == Access::Write
    }

    /// Global time at which the request is at its current hop.
    pub fn time_ps(&self) -> Picos {
        self.time_ps
    }

    pub fn start_ps(&self) -> Picos {
        self.start_ps
    }

    /// Adds `cycles` of a clock with period `period_ps`.
    pub fn add_latency(&mut self, cycles: u64, period_ps: Picos) {
        self.set_time(self.time_ps + cycles * period_ps);
    }

    /// Moves the request to a later instant (no-op for earlier ones).
    pub fn set_time(&mut self, t: Picos) {
        if t > self.time_ps {
            self.time_ps = t;
            self.latency_cycles = (self.time_ps - self.start_ps).div_ceil(self.initiator_period);
        }
    }

    /// The cycle of a clock with `period_ps` at which this request is now.
    pub fn cycle_in(&self, period_ps: Picos) -> Cycle {
        self.time_ps.div_ceil(period_ps)
    }

    /// Reads `size` bytes as a little-endian word (for register blocks).
    pub fn value(&self) -> u32 {
        let mut b = [0u8; 4];
        let n = self.data.len().min(4);
        b[..n].copy_from_slice(&self.data[..n]);
        u32::from_le_bytes(b)
    }

    pub fn set_value(&mut self, v: u32) {
        self.data.clear();
        self.data.extend_from_slice(&v.to_le_bytes()[..self.size.min(4) as usize]);
    }

    /// Starts a follow-up request at this request's current time, issued by
    /// `initiator` running at `period`.
    pub fn child(&self, kind: Access, addr: u32, size: u32, initiator: ComponentId, period: Picos) -> Request {
        let mut r = Self::new(kind, addr, size, initiator, self.time_ps, period);
        r.initiator_index = self.initiator_index;
        r.beat_words = self.beat_words;
        r
    }
}

/// A simulated hardware block.
///
/// All callbacks run on the engine thread with the component temporarily
/// detached from the platform, so `cx` may be used to reach any other
/// component.
pub trait Component: Any {
    fn ports(&self) -> Vec<PortDecl>;

    /// Called once after all bindings are made.
    fn init(&mut self, _me: ComponentId, _cx: &mut Platform) {}

    /// Services a request arriving on slave port `port`.
    fn handle(&mut self, _port: PortIx, req: &mut Request, _cx: &mut Platform) -> Status {
        req.status = Status::BusError;
        Status::BusError
    }

    fn on_event(&mut self, _tag: u32, _payload: u64, _cx: &mut Platform) {}

    /// A level or pulse on an interrupt/event wire bound to slave `port`.
    fn on_signal(&mut self, _port: PortIx, _value: u32, _cx: &mut Platform) {}

    /// Resumes a component previously parked by a `Blocked` status; `at_ps`
    /// is when the releasing condition arose.
    fn on_wake(&mut self, _value: u32, _at_ps: Picos, _cx: &mut Platform) -> bool {
        false
    }

    /// Closes out counters at the end of a run.
    fn finish(&mut self, _cx: &mut Platform) {}

    fn stats(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    /// Functional (zero-time) backing store, for memories and devices.
    fn backing(&mut self) -> Option<&mut crate::mem::Backing> {
        None
    }

    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

macro_rules! impl_any {
    () => {
        fn as_any(&self) -> &dyn std::any::Any {
            self
        }
        fn as_any_mut(&mut self) -> &mut dyn std::any::Any {
            self
        }
    };
}
pub(crate) use impl_any;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_rounds_up_in_initiator_cycles() {
        let mut r = Request::read(0, 4, ComponentId(0), 50_000, 2500);
        r.add_latency(1, 5000);
        assert_eq!(r.latency_cycles, 2);
        r.set_time(57_501);
        assert_eq!(r.latency_cycles, 4);
        r.set_time(10); // never goes back
        assert_eq!(r.latency_cycles, 4);
    }

    #[test]
    fn word_values() {
        let mut r = Request::write(0, &[0x78, 0x56, 0x34, 0x12], ComponentId(0), 0, 1);
        assert_eq!(r.value(), 0x1234_5678);
        r.size = 2;
        r.set_value(0xAABB_CCDD);
        assert_eq!(&r.data[..], &[0xDD, 0xCC]);
    }
}
