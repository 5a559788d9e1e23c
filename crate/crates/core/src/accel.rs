//! Memory-mapped convolution accelerator sharing the TCDM with the cores.
//!
//! A job computes a stride-1, zero-padded 2D convolution on int8 data with
//! int32 outputs. Input is HWC (`in[(y*w + x)*ch_in + ci]`), weights are
//! `[co][ky][kx][ci]`, and outputs are `[co][y][x]` little-endian words.
//!
//! The job's duration follows a calibrated model: a setup overhead, then
//! per output channel the weight load (`ch_in*k*k / filter_load_width`) plus
//! the MACs (`h*w*ch_in*k*k / macs_per_cycle`). Data moves through dedicated
//! TCDM ports as real requests; bank conflicts they meet extend the job,
//! and no channel completes before its streams have passed through the
//! ports, so a job with few ports can become bandwidth-bound.
//!
//! Register map (offsets from the unit's base):
//!
//! | offset | name | access |
//! |---|---|---|
//! | 0x00 | IN_PTR | r/w |
//! | 0x04 | W_PTR | r/w |
//! | 0x08 | OUT_PTR | r/w |
//! | 0x0C | CH_IN | r/w |
//! | 0x10 | CH_OUT | r/w |
//! | 0x14 | HEIGHT | r/w |
//! | 0x18 | WIDTH | r/w |
//! | 0x1C | KSIZE | r/w, 1 or 3 |
//! | 0x20 | TRIGGER | w: queue a job from the registers |
//! | 0x24 | STATUS | r: bit0 running, bit1 shadow full, bit2 last trigger rejected, bit3 error |
//! | 0x28 | JOBS_DONE | r |

use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId, EventId, Picos};
use crate::platform::Platform;
use crate::trace::SignalId;

pub const IN_PTR: u32 = 0x00;
pub const W_PTR: u32 = 0x04;
pub const OUT_PTR: u32 = 0x08;
pub const CH_IN: u32 = 0x0C;
pub const CH_OUT: u32 = 0x10;
pub const HEIGHT: u32 = 0x14;
pub const WIDTH: u32 = 0x18;
pub const KSIZE: u32 = 0x1C;
pub const TRIGGER: u32 = 0x20;
pub const STATUS: u32 = 0x24;
pub const JOBS_DONE: u32 = 0x28;

const PORT_TCDM: PortIx = 1;
const PORT_EVENT: PortIx = 2;
const CHUNK: u32 = 1024;
const MAX_DIM: u32 = 1024;

const EV_START: u32 = 0;
const EV_CHANNEL: u32 = 1;
const EV_DONE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvJob {
    pub in_ptr: u32,
    pub w_ptr: u32,
    pub out_ptr: u32,
    pub ch_in: u32,
    pub ch_out: u32,
    pub h: u32,
    pub w: u32,
    pub k: u32,
}

impl ConvJob {
    pub fn macs(&self) -> u64 {
        self.ch_out as u64 * self.ch_in as u64 * (self.k * self.k) as u64 * self.h as u64 * self.w as u64
    }

    fn in_bytes(&self) -> u32 {
        self.h * self.w * self.ch_in
    }

    fn filter_bytes(&self) -> u32 {
        self.k * self.k * self.ch_in
    }

    fn out_plane_bytes(&self) -> u32 {
        self.h * self.w * 4
    }
}

/// Calibration knobs of the latency model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccelTiming {
    pub setup_overhead: u64,
    pub macs_per_cycle: u64,
    pub filter_load_width: u64,
}

impl Default for AccelTiming {
    fn default() -> Self {
        AccelTiming { setup_overhead: 100, macs_per_cycle: 27, filter_load_width: 4 }
    }
}

impl AccelTiming {
    /// Compute cycles after setup for the first `done` of `ch_out` output
    /// channels, without memory stalls.
    fn compute_cycles(&self, j: &ConvJob, done: u64) -> u64 {
        let k2 = (j.k * j.k) as u64;
        let (m, f) = (self.macs_per_cycle.max(1), self.filter_load_width.max(1));
        let per = j.ch_in as u64 * k2 * m + j.h as u64 * j.w as u64 * j.ch_in as u64 * k2 * f;
        (done * per).div_ceil(f * m)
    }

    /// Uncontended job latency in cycles.
    pub fn job_cycles(&self, j: &ConvJob) -> u64 {
        self.setup_overhead + self.compute_cycles(j, j.ch_out as u64)
    }
}

#[derive(Debug, Clone)]
pub struct AccelParams {
    pub base: u32,
    pub timing: AccelTiming,
    pub ports: u32,
    pub event_line: u32,
    pub tcdm_base: u32,
    pub tcdm_size: u32,
    pub index: u32,
}

struct Running {
    job: ConvJob,
    start: Cycle,
    input: Vec<u8>,
    next_channel: u32,
    stall: u64,
    /// Cycle by which every stream issued so far has moved its data.
    io_done: Cycle,
    error: bool,
}

pub struct Accelerator {
    p: AccelParams,
    domain: DomainId,
    period: Picos,
    me: ComponentId,
    regs: ConvJob,
    running: Option<Running>,
    shadow: Option<ConvJob>,
    rejected: bool,
    error: bool,
    jobs_done: u32,
    ev_start: Option<EventId>,
    ev_channel: Option<EventId>,
    ev_done: Option<EventId>,
    vcd_busy: Option<SignalId>,
    pub last_job_cycles: u64,
    busy_cycles: u64,
    stall_cycles: u64,
    contentions: u64,
    rejections: u64,
}

impl Accelerator {
    pub fn new(p: AccelParams, domain: DomainId) -> Self {
        Accelerator {
            p,
            domain,
            period: 1,
            me: ComponentId(0),
            regs: ConvJob::default(),
            running: None,
            shadow: None,
            rejected: false,
            error: false,
            jobs_done: 0,
            ev_start: None,
            ev_channel: None,
            ev_done: None,
            vcd_busy: None,
            last_job_cycles: 0,
            busy_cycles: 0,
            stall_cycles: 0,
            contentions: 0,
            rejections: 0,
        }
    }

    fn in_tcdm(&self, addr: u32, len: u32) -> bool {
        let (b, s) = (self.p.tcdm_base as u64, self.p.tcdm_size as u64);
        addr as u64 >= b && addr as u64 + len as u64 <= b + s
    }

    fn valid(&self, j: &ConvJob) -> bool {
        let dims = [j.ch_in, j.ch_out, j.h, j.w];
        matches!(j.k, 1 | 3)
            && dims.iter().all(|&d| d > 0 && d <= MAX_DIM)
            && self.in_tcdm(j.in_ptr, j.in_bytes())
            && self.in_tcdm(j.w_ptr, j.filter_bytes() * j.ch_out)
            && self.in_tcdm(j.out_ptr, j.out_plane_bytes() * j.ch_out)
    }

    fn trigger(&mut self, at: Cycle, cx: &mut Platform) {
        let job = self.regs;
        if !self.valid(&job) {
            self.error = true;
            return;
        }
        self.error = false;
        if self.running.is_none() {
            self.rejected = false;
            self.launch(job, at + 1, cx);
        } else if self.shadow.is_none() {
            self.rejected = false;
            self.shadow = Some(job);
        } else {
            self.rejected = true;
            self.rejections += 1;
        }
    }

    fn launch(&mut self, job: ConvJob, start: Cycle, cx: &mut Platform) {
        let now = cx.current_cycle(self.domain);
        let start = start.max(now + 1);
        self.running = Some(Running { job, start, input: Vec::new(), next_channel: 0, stall: 0, io_done: start, error: false });
        cx.enqueue(self.ev_start.expect("initialized"), start - now);
        cx.vcd_change(self.vcd_busy, 1);
    }

    /// Moves `len` bytes starting at `addr` in chunks issued back to back
    /// from `t`. Returns the data read (for reads) and the end time.
    fn stream(&mut self, addr: u32, write: Option<&[u8]>, len: u32, t: Picos, cx: &mut Platform) -> Option<(Vec<u8>, Picos, u64)> {
        let (me, period, ports, idx) = (self.me, self.period, self.p.ports, self.p.index);
        let mut out = Vec::new();
        let mut at = t;
        let mut stall = 0;
        let mut off = 0;
        while off < len {
            let n = CHUNK.min(len - off);
            let a = addr + off;
            // short or misaligned tails go out as single bytes
            let pieces: Vec<(u32, u32)> = if n <= 4 && (!n.is_power_of_two() || a % n != 0) {
                (0..n).map(|i| (i, 1)).collect()
            } else {
                vec![(0, n)]
            };
            for (po, pn) in pieces {
                let from = (off + po) as usize;
                let mut req = match write {
                    Some(d) => Request::write(a + po, &d[from..from + pn as usize], me, at, period),
                    None => Request::read(a + po, pn, me, at, period),
                }
                .with_index(idx)
                .with_beat_words(ports);
                if cx.send(me, PORT_TCDM, &mut req) != Status::Ok {
                    return None;
                }
                self.contentions += req.contentions as u64;
                stall += req.stall_cycles;
                if write.is_none() {
                    out.extend_from_slice(&req.data);
                }
            }
            // next chunk goes after this one's words were issued
            at = (at + (n as u64 / 4).div_ceil(ports.max(1) as u64) * period).max(at + period);
            off += n;
        }
        Some((out, at, stall))
    }

    fn on_start(&mut self, cx: &mut Platform) {
        let now = cx.engine().domain(self.domain).cycle();
        let r = self.running.as_ref().expect("running job");
        let (addr, len) = (r.job.in_ptr, r.job.in_bytes());
        match self.stream(addr, None, len, now * self.period, cx) {
            Some((data, end, stall)) => {
                let period = self.period;
                let r = self.running.as_mut().expect("running job");
                r.input = data;
                r.stall += stall;
                r.io_done = end.div_ceil(period);
            }
            None => self.running.as_mut().expect("running job").error = true,
        }
        self.schedule_next(cx);
    }

    fn schedule_next(&mut self, cx: &mut Platform) {
        let now = cx.engine().domain(self.domain).cycle();
        let r = self.running.as_ref().expect("running job");
        if r.error {
            cx.enqueue(self.ev_done.expect("initialized"), 1);
            return;
        }
        let t = &self.p.timing;
        let model = r.start + t.setup_overhead + t.compute_cycles(&r.job, r.next_channel as u64 + 1) + r.stall;
        let due = model.max(r.io_done);
        cx.enqueue(self.ev_channel.expect("initialized"), due.saturating_sub(now).max(1));
    }

    fn on_channel(&mut self, cx: &mut Platform) {
        let now = cx.engine().domain(self.domain).cycle();
        let t = now * self.period;
        let r = self.running.as_ref().expect("running job");
        let (job, co) = (r.job, r.next_channel);
        let fb = job.filter_bytes();
        let Some((weights, w_end, s1)) = self.stream(job.w_ptr + co * fb, None, fb, t, cx) else {
            self.abort(cx);
            return;
        };
        let plane = conv_plane(&job, &self.running.as_ref().expect("running job").input, &weights);
        let bytes: Vec<u8> = plane.iter().flat_map(|v| v.to_le_bytes()).collect();
        let ob = job.out_plane_bytes();
        // outputs stream out once the weights are in
        let Some((_, o_end, s2)) = self.stream(job.out_ptr + co * ob, Some(&bytes), ob, w_end, cx) else {
            self.abort(cx);
            return;
        };
        let period = self.period;
        let r = self.running.as_mut().expect("running job");
        r.stall += s1 + s2;
        r.io_done = r.io_done.max(o_end.div_ceil(period));
        r.next_channel += 1;
        if r.next_channel < job.ch_out {
            self.schedule_next(cx);
        } else {
            let done = (now + s1 + s2).max(r.io_done);
            if done == now {
                self.finish_job(cx);
            } else {
                cx.enqueue(self.ev_done.expect("initialized"), done - now);
            }
        }
    }

    fn abort(&mut self, cx: &mut Platform) {
        self.running.as_mut().expect("running job").error = true;
        cx.enqueue(self.ev_done.expect("initialized"), 1);
    }

    fn finish_job(&mut self, cx: &mut Platform) {
        let now = cx.engine().domain(self.domain).cycle();
        let r = self.running.take().expect("running job");
        if r.error {
            self.error = true;
        }
        self.last_job_cycles = now - r.start;
        self.busy_cycles += now - r.start;
        self.stall_cycles += r.stall;
        self.jobs_done += 1;
        cx.signal(self.me, PORT_EVENT, self.p.event_line);
        match self.shadow.take() {
            Some(j) => self.launch(j, now, cx),
            None => cx.vcd_change(self.vcd_busy, 0),
        }
    }
}

/// One output channel of the convolution from the full input and that
/// channel's filter.
fn conv_plane(j: &ConvJob, input: &[u8], filter: &[u8]) -> Vec<i32> {
    let (h, w, ci, k) = (j.h as i64, j.w as i64, j.ch_in as usize, j.k as i64);
    let pad = k / 2;
    let mut out = vec![0i32; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0i32;
            for ky in 0..k {
                let iy = y + ky - pad;
                if iy < 0 || iy >= h {
                    continue;
                }
                for kx in 0..k {
                    let ix = x + kx - pad;
                    if ix < 0 || ix >= w {
                        continue;
                    }
                    let px = &input[((iy * w + ix) as usize) * ci..][..ci];
                    let f = &filter[((ky * k + kx) as usize) * ci..][..ci];
                    acc += px.iter().zip(f).map(|(&a, &b)| a as i8 as i32 * b as i8 as i32).sum::<i32>();
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

impl Component for Accelerator {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::slave("input"), PortDecl::master("tcdm"), PortDecl::master("event")]
    }

    fn init(&mut self, me: ComponentId, cx: &mut Platform) {
        self.me = me;
        self.period = cx.period(self.domain);
        self.ev_start = Some(cx.new_event(self.domain, me, EV_START));
        self.ev_channel = Some(cx.new_event(self.domain, me, EV_CHANNEL));
        self.ev_done = Some(cx.new_event(self.domain, me, EV_DONE));
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
        let r = &mut self.regs;
        if req.is_write() {
            match off {
                IN_PTR => r.in_ptr = v,
                W_PTR => r.w_ptr = v,
                OUT_PTR => r.out_ptr = v,
                CH_IN => r.ch_in = v,
                CH_OUT => r.ch_out = v,
                HEIGHT => r.h = v,
                WIDTH => r.w = v,
                KSIZE => r.k = v,
                TRIGGER => {
                    let at = req.cycle_in(self.period);
                    self.trigger(at, cx);
                }
                _ => {
                    req.status = Status::BusError;
                    return Status::BusError;
                }
            }
            return Status::Ok;
        }
        let value = match off {
            IN_PTR => r.in_ptr,
            W_PTR => r.w_ptr,
            OUT_PTR => r.out_ptr,
            CH_IN => r.ch_in,
            CH_OUT => r.ch_out,
            HEIGHT => r.h,
            WIDTH => r.w,
            KSIZE => r.k,
            STATUS => {
                self.running.is_some() as u32
                    | (self.shadow.is_some() as u32) << 1
                    | (self.rejected as u32) << 2
                    | (self.error as u32) << 3
            }
            JOBS_DONE => self.jobs_done,
            _ => {
                req.status = Status::BusError;
                return Status::BusError;
            }
        };
        req.set_value(value);
        Status::Ok
    }

    fn on_event(&mut self, tag: u32, _payload: u64, cx: &mut Platform) {
        match tag {
            EV_START => self.on_start(cx),
            EV_CHANNEL => self.on_channel(cx),
            _ => self.finish_job(cx),
        }
    }

    fn stats(&self) -> serde_json::Value {
        json!({
            "jobs_done": self.jobs_done,
            "rejections": self.rejections,
            "busy_cycles": self.busy_cycles,
            "last_job_cycles": self.last_job_cycles,
            "stall_cycles": self.stall_cycles,
            "tcdm_contentions": self.contentions,
        })
    }

    impl_any!();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_layer_latency() {
        let j = ConvJob { ch_in: 32, ch_out: 32, h: 8, w: 8, k: 3, ..Default::default() };
        assert_eq!(j.macs(), 589_824);
        // 100 setup + 32*32*9/4 weight loads + 589824/27 MACs, rounded up
        let expect = 100 + (32u64 * 32 * 9 * 27 + 589_824 * 4).div_ceil(4 * 27);
        assert_eq!(AccelTiming::default().job_cycles(&j), expect);
        assert_eq!(expect, 24_250);
    }

    #[test]
    fn latency_grows_in_every_dimension() {
        let t = AccelTiming::default();
        let base = ConvJob { ch_in: 8, ch_out: 8, h: 4, w: 4, k: 3, ..Default::default() };
        let c = t.job_cycles(&base);
        assert!(t.job_cycles(&ConvJob { ch_in: 9, ..base }) > c);
        assert!(t.job_cycles(&ConvJob { ch_out: 9, ..base }) > c);
        assert!(t.job_cycles(&ConvJob { h: 5, ..base }) > c);
    }

    #[test]
    fn one_by_one_identity_filter_copies_channel() {
        let j = ConvJob { ch_in: 2, ch_out: 1, h: 2, w: 2, k: 1, ..Default::default() };
        let input = [1u8, 9, 2, 9, 0xFF, 9, 4, 9];
        assert_eq!(conv_plane(&j, &input, &[1, 0]), vec![1, 2, -1, 4]);
    }
}
