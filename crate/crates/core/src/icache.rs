//! Set-associative LRU instruction caches.

use std::collections::VecDeque;

use serde_json::json;

use crate::component::{impl_any, Access, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId, Picos};
use crate::mem::reserve_slot;
use crate::platform::Platform;

/// Outcome of a tag lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit { way: usize },
    /// The line was installed in `way`, evicting `evicted` if it was valid.
    Miss { way: usize, evicted: Option<u32> },
}

impl Lookup {
    pub fn is_hit(&self) -> bool {
        matches!(self, Lookup::Hit { .. })
    }
}

/// Tag array with per-set recency order (most recent first).
#[derive(Debug, Clone)]
pub struct SetAssocCache {
    ways: usize,
    sets: usize,
    line_bytes: u32,
    tags: Vec<Option<u32>>,
    lru: Vec<Vec<u8>>,
    pub hits: u64,
    pub misses: u64,
}

impl SetAssocCache {
    pub fn new(capacity: usize, ways: usize, line_bytes: u32) -> Self {
        assert!(line_bytes.is_power_of_two(), "line size must be a power of two");
        assert!(ways > 0 && ways <= 255 && capacity % (ways * line_bytes as usize) == 0, "bad cache geometry");
        let sets = capacity / (ways * line_bytes as usize);
        SetAssocCache {
            ways,
            sets,
            line_bytes,
            tags: vec![None; sets * ways],
            lru: (0..sets).map(|_| (0..ways as u8).collect()).collect(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn line_bytes(&self) -> u32 {
        self.line_bytes
    }

    fn split(&self, addr: u32) -> (usize, u32) {
        let line = addr / self.line_bytes;
        (line as usize % self.sets, line / self.sets as u32)
    }

    fn touch(&mut self, set: usize, way: usize) {
        let order = &mut self.lru[set];
        let pos = order.iter().position(|&w| w as usize == way).expect("way in recency list");
        let w = order.remove(pos);
        order.insert(0, w);
    }

    /// Looks `addr` up, installing its line on a miss.
    pub fn access(&mut self, addr: u32) -> Lookup {
        let (set, tag) = self.split(addr);
        let base = set * self.ways;
        if let Some(way) = (0..self.ways).find(|&w| self.tags[base + w] == Some(tag)) {
            self.hits += 1;
            self.touch(set, way);
            return Lookup::Hit { way };
        }
        self.misses += 1;
        let way = *self.lru[set].last().expect("non-empty set") as usize;
        let evicted = self.tags[base + way].map(|t| (t * self.sets as u32 + set as u32) * self.line_bytes);
        self.tags[base + way] = Some(tag);
        self.touch(set, way);
        Lookup::Miss { way, evicted }
    }

    /// Tag probe without side effects.
    pub fn contains(&self, addr: u32) -> bool {
        let (set, tag) = self.split(addr);
        (0..self.ways).any(|w| self.tags[set * self.ways + w] == Some(tag))
    }

    /// Slot (set * ways + way) currently holding `addr`.
    pub fn slot_of(&self, addr: u32) -> Option<usize> {
        let (set, tag) = self.split(addr);
        (0..self.ways).map(|w| set * self.ways + w).find(|&s| self.tags[s] == Some(tag))
    }

    pub fn flush(&mut self) {
        self.tags.iter_mut().for_each(|t| *t = None);
    }

    pub fn flush_line(&mut self, addr: u32) {
        if let Some(s) = self.slot_of(addr) {
            self.tags[s] = None;
        }
    }
}

/// A cache level as a component: `input` from the core side, `refill`
/// toward the next level. Line contents are kept so hits return real
/// instruction bytes.
pub struct ICache {
    pub cache: SetAssocCache,
    hit_latency: u64,
    /// Serve at most one refill per cycle.
    serialize_refills: bool,
    data: Vec<u8>,
    domain: DomainId,
    period: Picos,
    me: ComponentId,
    refill_slots: VecDeque<Cycle>,
    pub refills: u64,
    pub refill_wait_cycles: u64,
    uncached: u64,
}

impl ICache {
    pub fn new(cache: SetAssocCache, hit_latency: u64, refills_per_cycle: u64, domain: DomainId) -> Self {
        let bytes = cache.sets * cache.ways * cache.line_bytes as usize;
        ICache {
            cache,
            hit_latency,
            serialize_refills: refills_per_cycle > 0,
            data: vec![0; bytes],
            domain,
            period: 1,
            me: ComponentId(0),
            refill_slots: VecDeque::new(),
            refills: 0,
            refill_wait_cycles: 0,
            uncached: 0,
        }
    }
}

impl Component for ICache {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input"), PortDecl::master("refill")]
    }

    fn init(&mut self, me: ComponentId, cx: &mut Platform) {
        self.me = me;
        self.period = cx.period(self.domain);
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        let lb = self.cache.line_bytes;
        let line = req.addr & !(lb - 1);
        if req.kind != Access::Read || req.addr + req.size > line + lb || req.size == 0 {
            // Not cacheable as one line: pass straight through.
            self.uncached += 1;
            return cx.send(self.me, 1, req);
        }
        req.add_latency(self.hit_latency, self.period);
        let slot = match self.cache.access(req.addr) {
            Lookup::Hit { .. } => self.cache.slot_of(req.addr).expect("hit line present"),
            Lookup::Miss { .. } => {
                req.cache_miss = true;
                let slot = self.cache.slot_of(req.addr).expect("line installed");
                if self.serialize_refills {
                    let want = req.cycle_in(self.period);
                    let grant = reserve_slot(&mut self.refill_slots, want);
                    self.refill_wait_cycles += grant - want;
                    req.add_latency(grant - want, self.period);
                }
                let mut up = req.child(Access::Read, line, lb, self.me, self.period);
                let st = cx.send(self.me, 1, &mut up);
                self.refills += 1;
                req.set_time(up.time_ps());
                if st != Status::Ok {
                    // do not keep a line we never received
                    self.cache.flush_line(line);
                    req.status = Status::BusError;
                    return Status::BusError;
                }
                let off = slot * lb as usize;
                let n = up.data.len().min(lb as usize);
                self.data[off..off + n].copy_from_slice(&up.data[..n]);
                slot
            }
        };
        let off = slot * lb as usize + (req.addr - line) as usize;
        req.data.clear();
        req.data.extend_from_slice(&self.data[off..off + req.size as usize]);
        Status::Ok
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "hits": self.cache.hits,
            "misses": self.cache.misses,
            "refills": self.refills,
            "refill_wait_cycles": self.refill_wait_cycles,
            "uncached": self.uncached,
        })
    }

    impl_any!();
}
