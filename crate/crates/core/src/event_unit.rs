//! Cluster event unit: broadcast event lines, per-core waits, and hardware
//! barriers. Waiting is a read that answers `Blocked`; the core sleeps and
//! is woken with the read value when the condition is met.
//!
//! Register map (offsets from the unit's base, 32-bit accesses only):
//!
//! | offset | name | access |
//! |---|---|---|
//! | 0x00 | EVT_MASK | r/w, per core: lines the core waits on |
//! | 0x04 | EVT_WAIT | r: lowest pending masked line (clears it), sleeping until one is pending |
//! | 0x08 | EVT_SET | w: raise line `value` for every core |
//! | 0x0C | EVT_PENDING | r: the core's pending lines |
//! | 0x10 | NB_CORES | r: number of cores served |
//! | 0x100 + 0x10*b | BAR_MASK | r/w: participants of barrier `b` |
//! | 0x104 + 0x10*b | BAR_TRIG | r: arrive; returns the new generation once all arrived |
//! | 0x108 + 0x10*b | BAR_STATUS | r: generation count |

use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::Picos;
use crate::platform::Platform;

pub const EVT_MASK: u32 = 0x00;
pub const EVT_WAIT: u32 = 0x04;
pub const EVT_SET: u32 = 0x08;
pub const EVT_PENDING: u32 = 0x0C;
pub const NB_CORES: u32 = 0x10;
pub const BARRIER_BASE: u32 = 0x100;
pub const BARRIER_STRIDE: u32 = 0x10;
pub const BAR_MASK: u32 = 0x0;
pub const BAR_TRIG: u32 = 0x4;
pub const BAR_STATUS: u32 = 0x8;

const MAX_CORES: usize = 64;

#[derive(Debug, Clone, Default)]
pub struct Barrier {
    pub mask: u64,
    pub arrived: u64,
    pub generation: u32,
    waiters: Vec<ComponentId>,
}

pub struct EventUnit {
    base: u32,
    nb_cores: usize,
    masks: Vec<u32>,
    pending: Vec<u32>,
    waiters: Vec<Option<ComponentId>>,
    pub barriers: Vec<Barrier>,
    sets: u64,
    wakes: u64,
    barrier_completions: u64,
}

impl EventUnit {
    pub fn new(base: u32, nb_cores: usize, barriers: usize) -> Self {
        let n = nb_cores.min(MAX_CORES);
        let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        EventUnit {
            base,
            nb_cores: n,
            masks: vec![0; MAX_CORES],
            pending: vec![0; MAX_CORES],
            waiters: vec![None; MAX_CORES],
            barriers: (0..barriers).map(|_| Barrier { mask: all, ..Default::default() }).collect(),
            sets: 0,
            wakes: 0,
            barrier_completions: 0,
        }
    }

    pub fn pending(&self, core: usize) -> u32 {
        self.pending[core]
    }

    /// Raises `line` for every core and wakes those waiting on it.
    pub fn set_line(&mut self, line: u32, at_ps: Picos, cx: &mut Platform) {
        let bit = 1u32 << line;
        self.sets += 1;
        for i in 0..self.nb_cores {
            self.pending[i] |= bit;
            if self.masks[i] & bit != 0 {
                if let Some(w) = self.waiters[i].take() {
                    self.pending[i] &= !bit;
                    self.wakes += 1;
                    cx.wake(w, line, at_ps);
                }
            }
        }
    }

    fn arrive(&mut self, b: usize, idx: usize, req: &mut Request, cx: &mut Platform) -> Status {
        let bit = 1u64 << idx;
        let bar = &mut self.barriers[b];
        if bar.mask & bit == 0 || bar.arrived & bit != 0 {
            return Status::BusError;
        }
        bar.arrived |= bit;
        if bar.arrived != bar.mask {
            bar.waiters.push(req.initiator);
            return Status::Blocked;
        }
        bar.arrived = 0;
        bar.generation = bar.generation.wrapping_add(1);
        let gen = bar.generation;
        let waiters = std::mem::take(&mut bar.waiters);
        self.barrier_completions += 1;
        for w in waiters {
            self.wakes += 1;
            cx.wake(w, gen, req.time_ps());
        }
        req.set_value(gen);
        Status::Ok
    }
}

impl Component for EventUnit {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input"), PortDecl::slave("events")]
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        let off = req.addr.wrapping_sub(self.base);
        let idx = req.initiator_index as usize;
        if req.size != 4 || idx >= self.nb_cores {
            return Status::BusError;
        }
        let write = req.is_write();
        let v = req.value();
        let status = match (off, write) {
            (EVT_MASK, true) => {
                self.masks[idx] = v;
                Status::Ok
            }
            (EVT_MASK, false) => {
                req.set_value(self.masks[idx]);
                Status::Ok
            }
            (EVT_WAIT, false) => {
                let m = self.masks[idx];
                let p = self.pending[idx] & m;
                if m == 0 {
                    Status::BusError
                } else if p != 0 {
                    let line = p.trailing_zeros();
                    self.pending[idx] &= !(1 << line);
                    req.set_value(line);
                    Status::Ok
                } else {
                    self.waiters[idx] = Some(req.initiator);
                    Status::Blocked
                }
            }
            (EVT_SET, true) if v < 32 => {
                self.set_line(v, req.time_ps(), cx);
                Status::Ok
            }
            (EVT_PENDING, false) => {
                req.set_value(self.pending[idx]);
                Status::Ok
            }
            (NB_CORES, false) => {
                req.set_value(self.nb_cores as u32);
                Status::Ok
            }
            (o, w) if o >= BARRIER_BASE => {
                let b = ((o - BARRIER_BASE) / BARRIER_STRIDE) as usize;
                if b >= self.barriers.len() {
                    return Status::BusError;
                }
                match ((o - BARRIER_BASE) % BARRIER_STRIDE, w) {
                    (BAR_MASK, true) => {
                        self.barriers[b].mask = v as u64;
                        Status::Ok
                    }
                    (BAR_MASK, false) => {
                        req.set_value(self.barriers[b].mask as u32);
                        Status::Ok
                    }
                    (BAR_TRIG, false) => self.arrive(b, idx, req, cx),
                    (BAR_STATUS, false) => {
                        req.set_value(self.barriers[b].generation);
                        Status::Ok
                    }
                    _ => Status::BusError,
                }
            }
            _ => Status::BusError,
        };
        if status == Status::BusError {
            req.status = status;
        }
        status
    }

    fn on_signal(&mut self, _port: PortIx, value: u32, cx: &mut Platform) {
        if value < 32 {
            let now = cx.now_ps();
            self.set_line(value, now, cx);
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "sets": self.sets,
            "wakes": self.wakes,
            "barrier_completions": self.barrier_completions,
        })
    }

    impl_any!();
}
