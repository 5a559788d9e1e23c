//! Word-interleaved banked memories (TCDM, L2).
//!
//! Bank `b` holds every word whose index `(addr >> 2) mod banks` equals `b`.
//! Each bank serves one word per cycle; conflicting words are served in
//! arrival order on the next free cycles.

use std::collections::VecDeque;

use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId};
use crate::platform::Platform;

/// Plain byte storage mapped at `base`.
#[derive(Debug, Clone)]
pub struct Backing {
    base: u32,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutOfRange;

impl Backing {
    pub fn new(base: u32, size: usize) -> Self {
        Backing { base, bytes: vec![0; size] }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    pub fn contains(&self, addr: u32, len: usize) -> bool {
        let Some(off) = addr.checked_sub(self.base) else { return false };
        (off as usize).checked_add(len).is_some_and(|end| end <= self.bytes.len())
    }

    pub fn peek(&self, addr: u32, out: &mut [u8]) -> Result<(), OutOfRange> {
        if !self.contains(addr, out.len()) {
            return Err(OutOfRange);
        }
        let off = (addr - self.base) as usize;
        out.copy_from_slice(&self.bytes[off..off + out.len()]);
        Ok(())
    }

    pub fn poke(&mut self, addr: u32, data: &[u8]) -> Result<(), OutOfRange> {
        if !self.contains(addr, data.len()) {
            return Err(OutOfRange);
        }
        let off = (addr - self.base) as usize;
        self.bytes[off..off + data.len()].copy_from_slice(data);
        Ok(())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Bank reservation bookkeeping with per-word sequential service.
#[derive(Debug, Clone)]
pub struct BankedMemory {
    pub backing: Backing,
    banks: u32,
    /// Fixed access latency added to every request (0 for TCDM).
    latency: u64,
    /// Cycles each bank is already committed to, ascending.
    reserved: Vec<VecDeque<Cycle>>,
    pub contention_count: u64,
    pub reads: u64,
    pub writes: u64,
}

// Reservations older than this many cycles before the current request are
// dropped; requests never arrive that far out of order.
const RESERVATION_HORIZON: Cycle = 4096;

/// Takes the earliest cycle at or after `want` not already in `q` (kept
/// ascending) and returns it.
pub(crate) fn reserve_slot(q: &mut VecDeque<Cycle>, want: Cycle) -> Cycle {
    let floor = want.saturating_sub(RESERVATION_HORIZON);
    while q.front().is_some_and(|&c| c < floor) {
        q.pop_front();
    }
    let mut grant = want;
    let mut pos = q.partition_point(|&c| c < want);
    while pos < q.len() && q[pos] == grant {
        grant += 1;
        pos += 1;
    }
    q.insert(pos, grant);
    grant
}

impl BankedMemory {
    pub fn new(base: u32, size: usize, banks: u32, latency: u64) -> Self {
        assert!(banks.is_power_of_two(), "bank count must be a power of two");
        assert_eq!(size % (banks as usize * 4), 0, "size must be a multiple of banks x 4");
        BankedMemory {
            backing: Backing::new(base, size),
            banks,
            latency,
            reserved: vec![VecDeque::new(); banks as usize],
            contention_count: 0,
            reads: 0,
            writes: 0,
        }
    }

    pub fn banks(&self) -> u32 {
        self.banks
    }

    pub fn bank_of(&self, addr: u32) -> u32 {
        ((addr - self.backing.base) >> 2) & (self.banks - 1)
    }

    fn reserve(&mut self, bank: usize, want: Cycle) -> Cycle {
        reserve_slot(&mut self.reserved[bank], want)
    }

    /// Times and performs `req` arriving at `at_cycle`. Returns the added
    /// latency in this memory's cycles, or `Err` for a bus error.
    pub fn access(&mut self, req: &mut Request, at_cycle: Cycle) -> Result<u64, Status> {
        let size = req.size as usize;
        if size == 0 || size > crate::component::MAX_REQUEST_BYTES || !self.backing.contains(req.addr, size) {
            return Err(Status::BusError);
        }
        if size <= 4 && (!size.is_power_of_two() || req.addr % size as u32 != 0) {
            return Err(Status::BusError);
        }
        let first_word = (req.addr - self.backing.base) >> 2;
        let last_word = (req.addr - self.backing.base + req.size - 1) >> 2;
        let beat = req.beat_words.max(1) as u64;
        let mut done = at_cycle;
        for i in 0..=(last_word - first_word) as u64 {
            let bank = ((first_word as u64 + i) & (self.banks as u64 - 1)) as usize;
            let want = at_cycle + i / beat;
            let grant = self.reserve(bank, want);
            if grant > want {
                self.contention_count += 1;
                req.contentions += 1;
                req.stall_cycles = req.stall_cycles.max(grant - want);
            }
            done = done.max(grant);
        }
        if req.is_write() {
            self.writes += 1;
            let data = std::mem::take(&mut req.data);
            self.backing.poke(req.addr, &data[..size.min(data.len())]).map_err(|_| Status::BusError)?;
            req.data = data;
        } else {
            self.reads += 1;
            req.data.resize(size, 0);
            self.backing.peek(req.addr, &mut req.data).map_err(|_| Status::BusError)?;
        }
        Ok(self.latency + (done - at_cycle))
    }
}

/// The `memory` component: a banked memory behind one slave port.
pub struct Memory {
    pub mem: BankedMemory,
    domain: DomainId,
    period: u64,
}

impl Memory {
    pub fn new(mem: BankedMemory, domain: DomainId) -> Self {
        Memory { mem, domain, period: 0 }
    }
}

impl Component for Memory {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input")]
    }

    fn init(&mut self, _me: ComponentId, cx: &mut Platform) {
        self.period = cx.period(self.domain);
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, _cx: &mut Platform) -> Status {
        let at = req.cycle_in(self.period);
        match self.mem.access(req, at) {
            Ok(lat) => {
                req.add_latency(lat, self.period);
                Status::Ok
            }
            Err(s) => {
                req.status = s;
                s
            }
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "contention_count": self.mem.contention_count,
            "reads": self.mem.reads,
            "writes": self.mem.writes,
            "banks": self.mem.banks,
        })
    }

    fn backing(&mut self) -> Option<&mut Backing> {
        Some(&mut self.mem.backing)
    }

    impl_any!();
}
