//! I/O subsystem: the micro-DMA, the HyperRAM-style external memory it
//! streams from, the fabric controller's interrupt controller, and the
//! simulator-control device.

use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId, EventId, Picos};
use crate::mem::Backing;
use crate::platform::Platform;

fn bus_error(req: &mut Request) -> Status {
    req.status = Status::BusError;
    Status::BusError
}

/// External DRAM behind a bandwidth-limited bus. Accesses through its port
/// are functional; the micro-DMA paces them using `bandwidth_bits_per_sec`
/// and `setup_latency_ns`.
pub struct HyperRam {
    pub backing: Backing,
    pub bandwidth_bits_per_sec: u64,
    pub setup_latency_ns: u64,
    reads: u64,
    writes: u64,
}

impl HyperRam {
    pub fn new(base: u32, size: usize, bandwidth_bits_per_sec: u64, setup_latency_ns: u64) -> Self {
        HyperRam { backing: Backing::new(base, size), bandwidth_bits_per_sec, setup_latency_ns, reads: 0, writes: 0 }
    }
}

impl Component for HyperRam {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input")]
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, _cx: &mut Platform) -> Status {
        let ok = if req.is_write() {
            self.writes += req.size as u64;
            self.backing.poke(req.addr, &req.data).is_ok()
        } else {
            self.reads += req.size as u64;
            req.data.resize(req.size as usize, 0);
            self.backing.peek(req.addr, &mut req.data).is_ok()
        };
        if ok {
            Status::Ok
        } else {
            bus_error(req)
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({ "bytes_read": self.reads, "bytes_written": self.writes })
    }

    fn backing(&mut self) -> Option<&mut Backing> {
        Some(&mut self.backing)
    }

    impl_any!();
}

/// Micro-DMA channel register block, repeated every `CH_STRIDE` bytes.
///
/// | offset | name | access |
/// |---|---|---|
/// | 0x00 | L2_ADDR | r/w |
/// | 0x04 | DEV_ADDR | r/w, absolute device address |
/// | 0x08 | LEN | r/w, bytes |
/// | 0x0C | CFG | w: bit0 L2-to-device; the write starts the transfer |
/// | 0x10 | STATUS | r: bit0 busy, bit1 error, bit2 last start rejected |
/// | 0x14 | WAIT | r: sleep until the channel is idle, then 0 (ok) or 1 (error) |
/// | 0x18 | PERIPH | r/w, peripheral id (informational) |
pub mod udma_reg {
    pub const CH_STRIDE: u32 = 0x20;
    pub const L2_ADDR: u32 = 0x00;
    pub const DEV_ADDR: u32 = 0x04;
    pub const LEN: u32 = 0x08;
    pub const CFG: u32 = 0x0C;
    pub const STATUS: u32 = 0x10;
    pub const WAIT: u32 = 0x14;
    pub const PERIPH: u32 = 0x18;
    pub const CFG_TX: u32 = 1;
}

const UDMA_L2: PortIx = 1;
const UDMA_DEVICE: PortIx = 2;
const UDMA_IRQ: PortIx = 3;

/// Cycle offset (from the end of setup) at which the first `bits` bits of a
/// transfer have crossed a link of `bw` bits/s, in a clock of `hz`.
pub fn bits_done_cycle(bits: u64, hz: u64, bw: u64) -> Cycle {
    ((bits as u128 * hz as u128).div_ceil(bw.max(1) as u128)) as Cycle
}

#[derive(Debug, Clone, Default)]
struct UdmaChannel {
    l2_addr: u32,
    dev_addr: u32,
    len: u32,
    periph: u32,
    tx: bool,
    busy: bool,
    error: bool,
    rejected: bool,
    /// Bytes already moved.
    moved: u32,
    /// Cycle at which streaming begins (after setup).
    stream_start: Cycle,
    /// Latest completion (global time) of an L2 access of this transfer.
    last_l2_ps: Picos,
    waiters: Vec<ComponentId>,
    beat_ev: Option<EventId>,
    done_ev: Option<EventId>,
}

pub struct Udma {
    base: u32,
    beat_bits: u32,
    irq_line: u32,
    domain: DomainId,
    period: Picos,
    hz: u64,
    me: ComponentId,
    bandwidth: u64,
    setup_ns: u64,
    channels: Vec<UdmaChannel>,
    transfers: u64,
    bytes: u64,
    beat_events: u64,
    errors: u64,
}

impl Udma {
    pub fn new(base: u32, channels: usize, beat_bits: u32, irq_line: u32, domain: DomainId) -> Self {
        Udma {
            base,
            beat_bits: beat_bits.max(8),
            irq_line,
            domain,
            period: 1,
            hz: 1,
            me: ComponentId(0),
            bandwidth: 1_600_000_000,
            setup_ns: 0,
            channels: vec![UdmaChannel::default(); channels.max(1)],
            transfers: 0,
            bytes: 0,
            beat_events: 0,
            errors: 0,
        }
    }

    fn setup_cycles(&self) -> Cycle {
        (self.setup_ns as u128 * self.hz as u128).div_ceil(1_000_000_000) as Cycle
    }

    /// Cycle (absolute) at which byte count `upto` has been streamed.
    fn due_cycle(&self, ch: &UdmaChannel, upto: u32) -> Cycle {
        ch.stream_start + bits_done_cycle(upto as u64 * 8, self.hz, self.bandwidth).max(1)
    }

    fn beat_bytes(&self) -> u32 {
        self.beat_bits / 8
    }

    fn start(&mut self, c: usize, cfg: u32, at: Cycle, cx: &mut Platform) {
        let now = cx.current_cycle(self.domain);
        let setup = self.setup_cycles();
        let ch = &mut self.channels[c];
        if ch.busy || ch.len == 0 {
            ch.rejected = true;
            return;
        }
        ch.rejected = false;
        ch.busy = true;
        ch.error = false;
        ch.tx = cfg & udma_reg::CFG_TX != 0;
        ch.moved = 0;
        ch.stream_start = at.max(now) + setup;
        ch.last_l2_ps = 0;
        self.transfers += 1;
        let first = self.due_cycle(&self.channels[c], self.beat_bytes().min(self.channels[c].len));
        let ev = self.channels[c].beat_ev.expect("initialized");
        cx.enqueue(ev, first.saturating_sub(now).max(1));
    }

    /// Moves every beat due by now, then schedules the next batch or the
    /// completion.
    fn beats(&mut self, c: usize, cx: &mut Platform) {
        let now = cx.engine().domain(self.domain).cycle();
        let bb = self.beat_bytes();
        self.beat_events += 1;
        let ch = &self.channels[c];
        let mut upto = ch.moved;
        while upto < ch.len {
            let next = (upto + bb).min(ch.len);
            if self.due_cycle(ch, next) > now {
                break;
            }
            upto = next;
        }
        let (from, n) = (ch.moved, upto - ch.moved);
        if n > 0 {
            let ok = self.move_bytes(c, from, n, now, cx);
            if !ok {
                let ch = &mut self.channels[c];
                ch.error = true;
                self.errors += 1;
                let ev = ch.done_ev.expect("initialized");
                cx.enqueue(ev, 1);
                return;
            }
        }
        let ch = &mut self.channels[c];
        ch.moved = upto;
        self.bytes += n as u64;
        if ch.moved < ch.len {
            let next = (ch.moved + bb).min(ch.len);
            let due = self.due_cycle(&self.channels[c], next);
            let ev = self.channels[c].beat_ev.expect("initialized");
            cx.enqueue(ev, due.saturating_sub(now).max(1));
        } else {
            let done = self.channels[c].last_l2_ps.div_ceil(self.period).max(now);
            let ev = self.channels[c].done_ev.expect("initialized");
            if done == now {
                self.complete(c, cx);
            } else {
                cx.enqueue(ev, done - now);
            }
        }
    }

    fn move_bytes(&mut self, c: usize, from: u32, n: u32, now: Cycle, cx: &mut Platform) -> bool {
        let (me, period) = (self.me, self.period);
        let ch = &self.channels[c];
        let l2 = ch.l2_addr.wrapping_add(from);
        let dev = ch.dev_addr.wrapping_add(from);
        let t = now * period;
        let (ok, l2_time) = if ch.tx {
            let mut rd = Request::read(l2, n, me, t, period);
            if cx.send(me, UDMA_L2, &mut rd) != Status::Ok {
                return false;
            }
            let mut wr = Request::write(dev, &rd.data, me, t, period);
            (cx.send(me, UDMA_DEVICE, &mut wr) == Status::Ok, rd.time_ps())
        } else {
            let mut rd = Request::read(dev, n, me, t, period);
            if cx.send(me, UDMA_DEVICE, &mut rd) != Status::Ok {
                return false;
            }
            let mut wr = Request::write(l2, &rd.data, me, t, period);
            (cx.send(me, UDMA_L2, &mut wr) == Status::Ok, wr.time_ps())
        };
        let ch = &mut self.channels[c];
        ch.last_l2_ps = ch.last_l2_ps.max(l2_time);
        ok
    }

    fn complete(&mut self, c: usize, cx: &mut Platform) {
        let now_ps = cx.now_ps();
        let ch = &mut self.channels[c];
        ch.busy = false;
        let err = ch.error as u32;
        let waiters = std::mem::take(&mut ch.waiters);
        for w in waiters {
            cx.wake(w, err, now_ps);
        }
        cx.signal(self.me, UDMA_IRQ, self.irq_line + c as u32);
    }
}

impl Component for Udma {
    fn ports(&self) -> Vec<PortDecl> {
        vec![
            PortDecl::slave("input"),
            PortDecl::master("l2"),
            PortDecl::master("device"),
            PortDecl::master("irq"),
        ]
    }

    fn init(&mut self, me: ComponentId, cx: &mut Platform) {
        self.me = me;
        self.period = cx.period(self.domain);
        self.hz = cx.engine().domain(self.domain).frequency_hz();
        if let Some(dev) = cx.peer_of(me, UDMA_DEVICE) {
            if let Some(h) = cx.get_by_id_mut::<HyperRam>(dev) {
                self.bandwidth = h.bandwidth_bits_per_sec.max(1);
                self.setup_ns = h.setup_latency_ns;
            }
        }
        for c in 0..self.channels.len() {
            self.channels[c].beat_ev = Some(cx.new_event(self.domain, me, (c * 2) as u32));
            self.channels[c].done_ev = Some(cx.new_event(self.domain, me, (c * 2 + 1) as u32));
        }
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        use udma_reg::*;
        let off = req.addr.wrapping_sub(self.base);
        let c = (off / CH_STRIDE) as usize;
        if req.size != 4 || c >= self.channels.len() {
            return bus_error(req);
        }
        let reg = off % CH_STRIDE;
        let v = req.value();
        if req.is_write() {
            let ch = &mut self.channels[c];
            match reg {
                L2_ADDR => ch.l2_addr = v,
                DEV_ADDR => ch.dev_addr = v,
                LEN => ch.len = v,
                PERIPH => ch.periph = v,
                CFG => {
                    let at = req.cycle_in(self.period);
                    self.start(c, v, at, cx);
                }
                _ => return bus_error(req),
            }
            return Status::Ok;
        }
        let ch = &mut self.channels[c];
        let value = match reg {
            L2_ADDR => ch.l2_addr,
            DEV_ADDR => ch.dev_addr,
            LEN => ch.len,
            PERIPH => ch.periph,
            STATUS => ch.busy as u32 | (ch.error as u32) << 1 | (ch.rejected as u32) << 2,
            WAIT => {
                if ch.busy {
                    ch.waiters.push(req.initiator);
                    return Status::Blocked;
                }
                ch.error as u32
            }
            _ => return bus_error(req),
        };
        req.set_value(value);
        Status::Ok
    }

    fn on_event(&mut self, tag: u32, _payload: u64, cx: &mut Platform) {
        let c = (tag / 2) as usize;
        if tag % 2 == 0 {
            self.beats(c, cx);
        } else {
            self.complete(c, cx);
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "transfers": self.transfers,
            "bytes": self.bytes,
            "beat_events": self.beat_events,
            "errors": self.errors,
        })
    }

    impl_any!();
}

/// Interrupt controller in front of the fabric controller.
///
/// | offset | name | access |
/// |---|---|---|
/// | 0x00 | MASK | r/w |
/// | 0x04 | PENDING | r |
/// | 0x08 | ACK | w: clear the given bits |
/// | 0x0C | WAIT | r: lowest pending masked line (cleared), sleeping until one is pending |
/// | 0x10 | SET | w: raise line `value` |
pub mod itc_reg {
    pub const MASK: u32 = 0x00;
    pub const PENDING: u32 = 0x04;
    pub const ACK: u32 = 0x08;
    pub const WAIT: u32 = 0x0C;
    pub const SET: u32 = 0x10;
}

pub struct Itc {
    base: u32,
    pub mask: u32,
    pub pending: u32,
    waiter: Option<ComponentId>,
    raised: u64,
    invalid: u64,
}

impl Itc {
    pub fn new(base: u32) -> Self {
        Itc { base, mask: 0, pending: 0, waiter: None, raised: 0, invalid: 0 }
    }

    pub fn raise(&mut self, line: u32, at_ps: Picos, cx: &mut Platform) {
        if line >= 32 {
            self.invalid += 1;
            return;
        }
        self.raised += 1;
        self.pending |= 1 << line;
        if self.mask & (1 << line) != 0 {
            if let Some(w) = self.waiter.take() {
                self.pending &= !(1 << line);
                cx.wake(w, line, at_ps);
            }
        }
    }
}

impl Component for Itc {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input"), PortDecl::slave("irq")]
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        use itc_reg::*;
        if req.size != 4 {
            return bus_error(req);
        }
        let off = req.addr.wrapping_sub(self.base);
        let v = req.value();
        match (off, req.is_write()) {
            (MASK, true) => self.mask = v,
            (MASK, false) => req.set_value(self.mask),
            (PENDING, false) => req.set_value(self.pending),
            (ACK, true) => self.pending &= !v,
            (SET, true) if v < 32 => self.raise(v, req.time_ps(), cx),
            (WAIT, false) => {
                let p = self.pending & self.mask;
                if self.mask == 0 {
                    return bus_error(req);
                }
                if p == 0 {
                    self.waiter = Some(req.initiator);
                    return Status::Blocked;
                }
                let line = p.trailing_zeros();
                self.pending &= !(1 << line);
                req.set_value(line);
            }
            _ => return bus_error(req),
        }
        Status::Ok
    }

    fn on_signal(&mut self, _port: PortIx, value: u32, cx: &mut Platform) {
        let now = cx.now_ps();
        self.raise(value, now, cx);
    }

    fn stats(&self) -> serde_json::Value {
        json!({ "raised": self.raised, "invalid": self.invalid })
    }

    impl_any!();
}

pub const SIMCTL_EXIT: u32 = 0x0;
pub const SIMCTL_PUTC: u32 = 0x4;

/// Program-controlled exit and console output.
pub struct SimControl {
    base: u32,
    chars: u64,
}

impl SimControl {
    pub fn new(base: u32) -> Self {
        SimControl { base, chars: 0 }
    }
}

impl Component for SimControl {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input")]
    }

    fn handle(&mut self, _port: PortIx, req: &mut Request, cx: &mut Platform) -> Status {
        let off = req.addr.wrapping_sub(self.base);
        if !req.is_write() {
            if off == SIMCTL_EXIT || off == SIMCTL_PUTC {
                req.set_value(0);
                return Status::Ok;
            }
            return bus_error(req);
        }
        match off {
            SIMCTL_EXIT => cx.request_exit(req.value()),
            SIMCTL_PUTC => {
                self.chars += 1;
                cx.putc(req.value() as u8);
            }
            _ => return bus_error(req),
        }
        Status::Ok
    }

    fn stats(&self) -> serde_json::Value {
        json!({ "console_bytes": self.chars })
    }

    impl_any!();
}
