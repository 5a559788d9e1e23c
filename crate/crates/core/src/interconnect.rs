//! Routers, interleavers, and clock-domain stubs.

use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId, Picos};
use crate::platform::Platform;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mapping {
    pub base: u64,
    pub size: u64,
    pub port: String,
    /// Per-mapping traversal latency; falls back to the router's.
    pub latency: Option<u64>,
}

/// Pure address lookup: index of the mapping containing `addr`.
pub fn decode(mappings: &[Mapping], addr: u32) -> Option<usize> {
    let a = addr as u64;
    mappings.iter().position(|m| a >= m.base && a < m.base + m.size)
}

/// Address-decoding crossbar with traversal latency and bandwidth occupancy.
///
/// Contention is deterministic: the router is busy for
/// `ceil(size / bandwidth)` cycles per forwarded request and later requests
/// queue behind that occupancy. A bandwidth of 0 means unlimited.
#[derive(Debug, Clone)]
pub struct Router {
    pub latency: u64,
    pub bandwidth_bytes_per_cycle: u64,
    pub mappings: Vec<Mapping>,
    busy_until: Cycle,
    pub forwarded: u64,
    pub queued_cycles: u64,
    pub bytes: u64,
}

impl Router {
    pub fn new(latency: u64, bandwidth_bytes_per_cycle: u64, mut mappings: Vec<Mapping>) -> Self {
        mappings.sort_by_key(|m| m.base);
        Router { latency, bandwidth_bytes_per_cycle, mappings, busy_until: 0, forwarded: 0, queued_cycles: 0, bytes: 0 }
    }

    /// Picks the output for `req` arriving at `at_cycle` and charges the
    /// traversal. Returns the mapping index, or `None` on a decode miss (no
    /// state is touched then).
    pub fn route(&mut self, req: &mut Request, at_cycle: Cycle, period: Picos) -> Option<usize> {
        let ix = decode(&self.mappings, req.addr)?;
        let queuing = self.busy_until.saturating_sub(at_cycle);
        if self.bandwidth_bytes_per_cycle > 0 {
            let occupancy = (req.size as u64).div_ceil(self.bandwidth_bytes_per_cycle).max(1);
            self.busy_until = self.busy_until.max(at_cycle) + occupancy;
        }
        let lat = self.mappings[ix].latency.unwrap_or(self.latency);
        req.add_latency(lat + queuing, period);
        self.forwarded += 1;
        self.queued_cycles += queuing;
        self.bytes += req.size as u64;
        Some(ix)
    }
}

pub struct RouterComponent {
    pub router: Router,
    domain: DomainId,
    period: Picos,
    me: ComponentId,
    decode_errors: u64,
}

impl RouterComponent {
    pub fn new(router: Router, domain: DomainId) -> Self {
        RouterComponent { router, domain, period: 1, me: ComponentId(0), decode_errors: 0 }
    }
}

impl Component for RouterComponent {
    fn ports(&self) -> Vec<PortDecl> {
        let mut v = vec![PortDecl::slave("input")];
        v.extend(self.router.mappings.iter().map(|m| PortDecl::master(m.port.clone())));
        v
    }

    fn init(&mut self, me: ComponentId, cx: &mut Platform) {
        self.me = me;
        self.period = cx.period(self.domain);
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        let at = req.cycle_in(self.period);
        match self.router.route(req, at, self.period) {
            Some(ix) => cx.send(self.me, ix as PortIx + 1, req),
            None => {
                self.decode_errors += 1;
                req.status = Status::BusError;
                Status::BusError
            }
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "forwarded": self.router.forwarded,
            "queued_cycles": self.router.queued_cycles,
            "bytes": self.router.bytes,
            "decode_errors": self.decode_errors,
        })
    }

    impl_any!();
}

/// Fan-in in front of a banked memory. Bank selection happens in the memory
/// itself from the address bits; the interleaver adds no latency and only
/// tallies traffic per initiator port.
pub struct Interleaver {
    me: ComponentId,
    per_port: std::collections::BTreeMap<u32, u64>,
}

impl Interleaver {
    pub fn new() -> Self {
        Interleaver { me: ComponentId(0), per_port: Default::default() }
    }
}

impl Default for Interleaver {
    fn default() -> Self {
        Self::new()
    }
}

impl Component for Interleaver {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input"), PortDecl::master("output")]
    }

    fn init(&mut self, me: ComponentId, _cx: &mut Platform) {
        self.me = me;
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        *self.per_port.entry(req.initiator_index).or_default() += 1;
        cx.send(self.me, 1, req)
    }

    fn stats(&self) -> serde_json::Value {
        json!({ "requests_per_port": self.per_port })
    }

    impl_any!();
}

/// Clock-domain crossing: the request continues on the stub's domain from
/// the next clock edge at or after its arrival, plus `crossing_latency`
/// cycles of that domain.
pub struct Stub {
    domain: DomainId,
    crossing_latency: u64,
    me: ComponentId,
    crossings: u64,
}

impl Stub {
    pub fn new(domain: DomainId, crossing_latency: u64) -> Self {
        Stub { domain, crossing_latency, me: ComponentId(0), crossings: 0 }
    }
}

impl Component for Stub {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input"), PortDecl::master("output")]
    }

    fn init(&mut self, me: ComponentId, _cx: &mut Platform) {
        self.me = me;
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        let d = cx.engine().domain(self.domain);
        let edge = d.cycles_in_domain(req.time_ps()) + self.crossing_latency;
        req.set_time(d.global_time_of(edge));
        self.crossings += 1;
        cx.send(self.me, 1, req)
    }

    fn stats(&self) -> serde_json::Value {
        json!({ "crossings": self.crossings })
    }

    impl_any!();
}
