//! Cluster DMA moving data between the TCDM and the rest of the system.
//!
//! Transfers are split into bursts of at most `max_burst_size` bytes. Each
//! burst is a read on the source side followed by a write on the destination
//! side; the next burst's read starts when the previous read completes, so
//! reads and writes of consecutive bursts overlap. Optional 2D mode moves
//! `COUNT` rows of `LEN` bytes, with the non-TCDM side advancing by `STRIDE`
//! per row and the TCDM side contiguous.
//!
//! Register map (offsets from the unit's base):
//!
//! | offset | name | access |
//! |---|---|---|
//! | 0x00 | SRC | r/w |
//! | 0x04 | DST | r/w |
//! | 0x08 | LEN | r/w, bytes (per row in 2D mode) |
//! | 0x0C | STRIDE | r/w |
//! | 0x10 | COUNT | r/w, rows |
//! | 0x14 | CFG | w: bit0 TCDM-to-L2, bit1 2D; the write starts the transfer |
//! | 0x18 | STATUS | r: bit i channel i busy, bit 8 queue non-empty, bit 16 last start failed |
//! | 0x1C | ID | r: id of the last started transfer (0xFFFFFFFF if rejected) |
//! | 0x20 | WAIT | w: select id; r: sleep until it completes, then 0 (ok) or 1 (error); 0xFFFFFFFF for unknown ids |

use std::collections::{BTreeMap, VecDeque};

use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId, EventId, Picos};
use crate::platform::Platform;
use crate::trace::SignalId;

pub const SRC: u32 = 0x00;
pub const DST: u32 = 0x04;
pub const LEN: u32 = 0x08;
pub const STRIDE: u32 = 0x0C;
pub const COUNT: u32 = 0x10;
pub const CFG: u32 = 0x14;
pub const STATUS: u32 = 0x18;
pub const ID: u32 = 0x1C;
pub const WAIT: u32 = 0x20;

pub const CFG_TO_L2: u32 = 1;
pub const CFG_2D: u32 = 2;

const PORT_TCDM: PortIx = 1;
const PORT_EXT: PortIx = 2;
const PORT_EVENT: PortIx = 3;
const QUEUE_DEPTH: usize = 16;

/// Number of bursts a 1D transfer of `len` bytes is split into.
pub fn burst_count(len: u64, max_burst: u64) -> u64 {
    len.div_ceil(max_burst)
}

#[derive(Debug, Clone)]
struct Transfer {
    id: u32,
    src: u32,
    dst: u32,
    len: u32,
    stride: u32,
    rows: u32,
    to_l2: bool,
    row: u32,
    offset: u32,
    last_write: Cycle,
    error: bool,
}

struct Channel {
    xfer: Option<Transfer>,
    burst_ev: Option<EventId>,
    done_ev: Option<EventId>,
}

#[derive(Debug, Clone)]
pub struct DmaParams {
    pub base: u32,
    pub max_burst: u32,
    pub channels: usize,
    pub tcdm_words_per_cycle: u32,
    pub tcdm_base: u32,
    pub tcdm_size: u32,
    pub event_line: u32,
    pub index: u32,
}

pub struct Dma {
    p: DmaParams,
    domain: DomainId,
    period: Picos,
    me: ComponentId,
    src: u32,
    dst: u32,
    len: u32,
    stride: u32,
    count: u32,
    last_id: u32,
    last_failed: bool,
    next_id: u32,
    channels: Vec<Channel>,
    queue: VecDeque<Transfer>,
    completed: BTreeMap<u32, bool>,
    wait_sel: BTreeMap<u32, u32>,
    waiting: Vec<(u32, ComponentId)>,
    vcd_busy: Option<SignalId>,
    pub transfers: u64,
    pub bursts: u64,
    pub bytes: u64,
    pub errors: u64,
}

impl Dma {
    pub fn new(p: DmaParams, domain: DomainId) -> Self {
        let channels = (0..p.channels.max(1)).map(|_| Channel { xfer: None, burst_ev: None, done_ev: None }).collect();
        Dma {
            p,
            domain,
            period: 1,
            me: ComponentId(0),
            src: 0,
            dst: 0,
            len: 0,
            stride: 0,
            count: 1,
            last_id: 0,
            last_failed: false,
            next_id: 1,
            channels,
            queue: VecDeque::new(),
            completed: BTreeMap::new(),
            wait_sel: BTreeMap::new(),
            waiting: Vec::new(),
            vcd_busy: None,
            transfers: 0,
            bursts: 0,
            bytes: 0,
            errors: 0,
        }
    }

    fn in_tcdm(&self, addr: u32, len: u64) -> bool {
        let (b, s) = (self.p.tcdm_base as u64, self.p.tcdm_size as u64);
        addr as u64 >= b && addr as u64 + len <= b + s
    }

    fn busy_channels(&self) -> usize {
        self.channels.iter().filter(|c| c.xfer.is_some()).count()
    }

    fn start(&mut self, cfg: u32, at: Cycle, cx: &mut Platform) {
        let two_d = cfg & CFG_2D != 0;
        let rows = if two_d { self.count } else { 1 };
        let total = self.len as u64 * rows as u64;
        let tcdm_side = if cfg & CFG_TO_L2 != 0 { self.src } else { self.dst };
        if self.len == 0 || rows == 0 || !self.in_tcdm(tcdm_side, total) || self.queue.len() >= QUEUE_DEPTH {
            self.last_failed = true;
            self.last_id = u32::MAX;
            return;
        }
        let x = Transfer {
            id: self.next_id,
            src: self.src,
            dst: self.dst,
            len: self.len,
            stride: if two_d { self.stride } else { self.len },
            rows,
            to_l2: cfg & CFG_TO_L2 != 0,
            row: 0,
            offset: 0,
            last_write: 0,
            error: false,
        };
        self.last_id = x.id;
        self.last_failed = false;
        self.next_id = self.next_id.wrapping_add(1).max(1);
        self.transfers += 1;
        self.queue.push_back(x);
        self.dispatch(at, cx);
    }

    /// Moves queued transfers onto idle channels; first bursts start at
    /// `at + 1`.
    fn dispatch(&mut self, at: Cycle, cx: &mut Platform) {
        let now = cx.current_cycle(self.domain);
        for ch in 0..self.channels.len() {
            if self.channels[ch].xfer.is_some() {
                continue;
            }
            let Some(x) = self.queue.pop_front() else { break };
            self.channels[ch].xfer = Some(x);
            let ev = self.channels[ch].burst_ev.expect("initialized");
            cx.enqueue(ev, (at + 1).saturating_sub(now).max(1));
        }
        let busy = self.busy_channels() as u64;
        cx.vcd_change(self.vcd_busy, (busy > 0) as u64);
    }

    fn burst(&mut self, ch: usize, cx: &mut Platform) {
        let t = cx.engine().domain(self.domain).cycle();
        let (period, me, beat, idx) = (self.period, self.me, self.p.tcdm_words_per_cycle, self.p.index);
        let max_burst = self.p.max_burst;
        let x = self.channels[ch].xfer.as_mut().expect("burst on an active channel");
        let n = max_burst.min(x.len - x.offset);
        let tcdm_off = x.row * x.len + x.offset;
        let ext_off = x.row * x.stride + x.offset;
        let (src, dst) = if x.to_l2 {
            (x.src + tcdm_off, x.dst + ext_off)
        } else {
            (x.src + ext_off, x.dst + tcdm_off)
        };
        let (rport, wport) = if x.to_l2 { (PORT_TCDM, PORT_EXT) } else { (PORT_EXT, PORT_TCDM) };

        let mut rd = Request::read(src, n, me, t * period, period).with_index(idx).with_beat_words(beat);
        let ok_r = cx.send(me, rport, &mut rd) == Status::Ok;
        let mut ok_w = false;
        let mut wr_time = rd.time_ps();
        if ok_r {
            let data = std::mem::take(&mut rd.data);
            let mut wr = Request::write(dst, &data, me, rd.time_ps(), period).with_index(idx).with_beat_words(beat);
            ok_w = cx.send(me, wport, &mut wr) == Status::Ok;
            wr_time = wr.time_ps();
        }
        let x = self.channels[ch].xfer.as_mut().expect("still active");
        self.bursts += 1;
        if !(ok_r && ok_w) {
            x.error = true;
            self.errors += 1;
            let ev = self.channels[ch].done_ev.expect("initialized");
            cx.enqueue(ev, 1);
            return;
        }
        self.bytes += n as u64;
        x.last_write = x.last_write.max(wr_time.div_ceil(period));
        x.offset += n;
        if x.offset == x.len {
            x.offset = 0;
            x.row += 1;
        }
        if x.row < x.rows {
            let next = rd.time_ps().div_ceil(period).max(t + 1);
            let ev = self.channels[ch].burst_ev.expect("initialized");
            cx.enqueue(ev, next - t);
        } else {
            let done = x.last_write.max(t + 1);
            let ev = self.channels[ch].done_ev.expect("initialized");
            cx.enqueue(ev, done - t);
        }
    }

    fn complete(&mut self, ch: usize, cx: &mut Platform) {
        let x = self.channels[ch].xfer.take().expect("completion on an active channel");
        self.completed.insert(x.id, x.error);
        let now_ps = cx.now_ps();
        let (ready, rest): (Vec<_>, Vec<_>) = self.waiting.drain(..).partition(|(id, _)| *id == x.id);
        self.waiting = rest;
        for (_, who) in ready {
            cx.wake(who, x.error as u32, now_ps);
        }
        cx.signal(self.me, PORT_EVENT, self.p.event_line);
        let now = cx.current_cycle(self.domain);
        self.dispatch(now.saturating_sub(1), cx);
    }
}

impl Component for Dma {
    fn ports(&self) -> Vec<PortDecl> {
        vec![
            PortDecl::slave("input"),
            PortDecl::master("tcdm"),
            PortDecl::master("ext"),
            PortDecl::master("event"),
        ]
    }

    fn init(&mut self, me: ComponentId, cx: &mut Platform) {
        self.me = me;
        self.period = cx.period(self.domain);
        for ch in 0..self.channels.len() {
            self.channels[ch].burst_ev = Some(cx.new_event(self.domain, me, (ch * 2) as u32));
            self.channels[ch].done_ev = Some(cx.new_event(self.domain, me, (ch * 2 + 1) as u32));
        }
        let path = format!("{}/busy", cx.path(me));
        self.vcd_busy = cx.vcd_register(&path, 1, 0);
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        if req.size != 4 {
            req.status = Status::BusError;
            return Status::BusError;
        }
        let off = req.addr.wrapping_sub(self.p.base);
        let v = req.value();
        let idx = req.initiator_index;
        if req.is_write() {
            match off {
                SRC => self.src = v,
                DST => self.dst = v,
                LEN => self.len = v,
                STRIDE => self.stride = v,
                COUNT => self.count = v,
                CFG => {
                    let at = req.cycle_in(self.period);
                    self.start(v, at, cx);
                }
                WAIT => {
                    self.wait_sel.insert(idx, v);
                }
                _ => {
                    req.status = Status::BusError;
                    return Status::BusError;
                }
            }
            return Status::Ok;
        }
        let value = match off {
            SRC => self.src,
            DST => self.dst,
            LEN => self.len,
            STRIDE => self.stride,
            COUNT => self.count,
            STATUS => {
                let mut s = 0;
                for (i, c) in self.channels.iter().enumerate() {
                    s |= (c.xfer.is_some() as u32) << i;
                }
                s | ((!self.queue.is_empty() as u32) << 8) | ((self.last_failed as u32) << 16)
            }
            ID => self.last_id,
            WAIT => {
                let id = self.wait_sel.get(&idx).copied().unwrap_or(0);
                if let Some(&err) = self.completed.get(&id) {
                    err as u32
                } else if self.channels.iter().any(|c| c.xfer.as_ref().is_some_and(|x| x.id == id))
                    || self.queue.iter().any(|x| x.id == id)
                {
                    self.waiting.push((id, req.initiator));
                    return Status::Blocked;
                } else {
                    u32::MAX
                }
            }
            _ => {
                req.status = Status::BusError;
                return Status::BusError;
            }
        };
        req.set_value(value);
        Status::Ok
    }

    fn on_event(&mut self, tag: u32, _payload: u64, cx: &mut Platform) {
        let ch = (tag / 2) as usize;
        if tag % 2 == 0 {
            self.burst(ch, cx);
        } else {
            self.complete(ch, cx);
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "transfers": self.transfers,
            "bursts": self.bursts,
            "bytes": self.bytes,
            "errors": self.errors,
        })
    }

    impl_any!();
}
