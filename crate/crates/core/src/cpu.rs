//! RV32IM core: functional execution from the ISA table plus a three-stage
//! timing model.
//!
//! One step event executes one instruction and schedules the next after
//! `fetch + hazard stall + 1 + extra latency + memory latency + taken-branch
//! penalty` cycles. Load results become usable `writeback_latency` cycles
//! after the load's slot ends, which yields the usual load-use bubble.
//! A read answered with `Status::Blocked` puts the core to sleep until the
//! target wakes it with the value.

use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::component::{impl_any, Component, ComponentId, PortDecl, PortIx, Request, Status};
use crate::engine::{Cycle, DomainId, EventId, Picos};
use crate::isa::{Class, Insn, IsaTable, Sem};
use crate::platform::Platform;
use crate::trace::SignalId;

const FETCH: PortIx = 0;
const DATA: PortIx = 1;

const DECODE_CACHE: usize = 4096;

pub mod csr {
    pub const MSTATUS: u32 = 0x300;
    pub const MTVEC: u32 = 0x305;
    pub const MSCRATCH: u32 = 0x340;
    pub const MEPC: u32 = 0x341;
    pub const MCAUSE: u32 = 0x342;
    pub const MCYCLE: u32 = 0xB00;
    pub const MINSTRET: u32 = 0xB02;
    pub const CYCLE: u32 = 0xC00;
    pub const INSTRET: u32 = 0xC02;
    pub const MHARTID: u32 = 0xF14;
    /// Custom read-only counters, in [`PerfCounters`] order after the first two.
    pub const ACTIVE: u32 = 0x7C0;
    pub const LOAD_STALLS: u32 = 0x7C1;
    pub const ICACHE_MISSES: u32 = 0x7C2;
    pub const TCDM_CONTENTIONS: u32 = 0x7C3;
    pub const BRANCHES_TAKEN: u32 = 0x7C4;
    pub const LOADS: u32 = 0x7C5;
    pub const STORES: u32 = 0x7C6;
    pub const BARRIER_WAIT: u32 = 0x7C7;
}

pub mod cause {
    pub const FETCH_FAULT: u32 = 1;
    pub const ILLEGAL: u32 = 2;
    pub const BREAKPOINT: u32 = 3;
    pub const LOAD_FAULT: u32 = 5;
    pub const STORE_FAULT: u32 = 7;
    pub const ECALL: u32 = 11;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PerfCounters {
    pub total_cycles: u64,
    pub active_cycles: u64,
    pub instr_retired: u64,
    pub load_stalls: u64,
    pub icache_misses: u64,
    pub tcdm_contentions: u64,
    pub branches_taken: u64,
    pub loads: u64,
    pub stores: u64,
    /// Cycles spent asleep on a blocking read (barriers, event waits).
    pub barrier_wait_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Running,
    Sleeping,
    Halted,
}

#[derive(Debug, Clone)]
pub struct CoreConfig {
    pub hart_id: u32,
    /// Initiator index presented to interconnects and the event unit.
    pub index: u32,
    pub fetch_enable: bool,
    pub boot_addr: u32,
    pub branch_penalty: u64,
    pub trap_vector: u32,
}

pub struct Core {
    cfg: CoreConfig,
    isa: Arc<IsaTable>,
    domain: DomainId,
    period: Picos,
    me: ComponentId,
    path: String,
    pc: u32,
    regs: [u32; 32],
    mode: Mode,
    scoreboard: [Cycle; 32],
    mtvec: u32,
    mepc: u32,
    mcause: u32,
    mscratch: u32,
    counters: PerfCounters,
    step_ev: Option<EventId>,
    decode_cache: Vec<(u32, u32, Option<Insn>)>,
    start_cycle: Option<Cycle>,
    busy_until: Cycle,
    blocked_rd: Option<u8>,
    woke: bool,
    halt_reason: Option<String>,
    trace_insn: bool,
    vcd_pc: Option<SignalId>,
    vcd_active: Option<SignalId>,
}

enum Flow {
    Next { pc: u32, mem_lat: u64, taken: bool },
    Block { mem_lat: u64 },
    Trap { cause: u32, mem_lat: u64 },
}

fn sext(v: u32, bits: u32) -> u32 {
    let s = 32 - bits;
    (((v << s) as i32) >> s) as u32
}

impl Core {
    pub fn new(cfg: CoreConfig, isa: Arc<IsaTable>, domain: DomainId) -> Self {
        let pc = cfg.boot_addr;
        let mtvec = cfg.trap_vector;
        Core {
            cfg,
            isa,
            domain,
            period: 1,
            me: ComponentId(0),
            path: String::new(),
            pc,
            regs: [0; 32],
            mode: Mode::Running,
            scoreboard: [0; 32],
            mtvec,
            mepc: 0,
            mcause: 0,
            mscratch: 0,
            counters: PerfCounters::default(),
            step_ev: None,
            decode_cache: vec![(u32::MAX, 0, None); DECODE_CACHE],
            start_cycle: None,
            busy_until: 0,
            blocked_rd: None,
            woke: false,
            halt_reason: None,
            trace_insn: false,
            vcd_pc: None,
            vcd_active: None,
        }
    }

    pub fn pc(&self) -> u32 {
        self.pc
    }

    pub fn set_pc(&mut self, pc: u32) {
        self.pc = pc;
    }

    pub fn regs(&self) -> &[u32; 32] {
        &self.regs
    }

    pub fn set_reg(&mut self, r: usize, v: u32) {
        if r != 0 {
            self.regs[r] = v;
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn counters(&self) -> &PerfCounters {
        &self.counters
    }

    pub fn hart_id(&self) -> u32 {
        self.cfg.hart_id
    }

    pub fn halt_reason(&self) -> Option<&str> {
        self.halt_reason.as_deref()
    }

    fn decode(&mut self, pc: u32, word: u32) -> Option<Insn> {
        let slot = (pc as usize >> 2) & (DECODE_CACHE - 1);
        let (cpc, cword, cached) = self.decode_cache[slot];
        if cpc == pc && cword == word {
            return cached;
        }
        let insn = self.isa.decode(word);
        self.decode_cache[slot] = (pc, word, insn);
        insn
    }

    fn read_csr(&self, addr: u32, now: Cycle) -> Option<u32> {
        let c = &self.counters;
        let start = self.start_cycle.unwrap_or(now);
        Some(match addr {
            csr::CYCLE | csr::MCYCLE => (now - start) as u32,
            0xC80 | 0xB80 => ((now - start) >> 32) as u32,
            csr::INSTRET | csr::MINSTRET => c.instr_retired as u32,
            0xC82 | 0xB82 => (c.instr_retired >> 32) as u32,
            csr::MHARTID => self.cfg.hart_id,
            csr::MSTATUS => 0,
            csr::MTVEC => self.mtvec,
            csr::MSCRATCH => self.mscratch,
            csr::MEPC => self.mepc,
            csr::MCAUSE => self.mcause,
            csr::ACTIVE => c.active_cycles as u32,
            csr::LOAD_STALLS => c.load_stalls as u32,
            csr::ICACHE_MISSES => c.icache_misses as u32,
            csr::TCDM_CONTENTIONS => c.tcdm_contentions as u32,
            csr::BRANCHES_TAKEN => c.branches_taken as u32,
            csr::LOADS => c.loads as u32,
            csr::STORES => c.stores as u32,
            csr::BARRIER_WAIT => c.barrier_wait_cycles as u32,
            _ => return None,
        })
    }

    fn write_csr(&mut self, addr: u32, v: u32) {
        match addr {
            csr::MTVEC => self.mtvec = v & !3,
            csr::MSCRATCH => self.mscratch = v,
            csr::MEPC => self.mepc = v & !3,
            csr::MCAUSE => self.mcause = v,
            // counters and ids are read-only here
            _ => {}
        }
    }

    fn load(&mut self, addr: u32, size: u32, at: Cycle, cx: &mut Platform) -> Result<(u32, u64), Status> {
        let mut req = Request::read(addr, size, self.me, at * self.period, self.period).with_index(self.cfg.index);
        let st = cx.send(self.me, DATA, &mut req);
        self.counters.tcdm_contentions += req.contentions as u64;
        match st {
            Status::Ok => Ok((req.value(), req.latency_cycles)),
            Status::Blocked => Err(Status::Blocked),
            Status::BusError => Err(Status::BusError),
        }
        .map_err(|s| {
            // latency accumulated before a block still counts
            if s == Status::Blocked {
                self.busy_until = at + req.latency_cycles;
            }
            s
        })
    }

    fn store(&mut self, addr: u32, value: u32, size: u32, at: Cycle, cx: &mut Platform) -> Result<u64, Status> {
        let bytes = value.to_le_bytes();
        let mut req =
            Request::write(addr, &bytes[..size as usize], self.me, at * self.period, self.period).with_index(self.cfg.index);
        let st = cx.send(self.me, DATA, &mut req);
        self.counters.tcdm_contentions += req.contentions as u64;
        match st {
            Status::Ok => Ok(req.latency_cycles),
            _ => Err(Status::BusError),
        }
    }

    fn execute(&mut self, insn: &Insn, at: Cycle, now: Cycle, cx: &mut Platform) -> Flow {
        use Sem::*;
        let r = &self.regs;
        let a = r[insn.rs1 as usize];
        let b = r[insn.rs2 as usize];
        let imm = insn.imm as u32;
        let pc = self.pc;
        let seq = pc.wrapping_add(4);
        let mut rd_val: Option<u32> = None;
        let mut next = seq;
        let mut taken = false;
        let mut mem_lat = 0;
        macro_rules! branch {
            ($cond:expr) => {{
                if $cond {
                    next = pc.wrapping_add(imm);
                    taken = true;
                }
            }};
        }
        macro_rules! load {
            ($addr:expr, $size:expr, $ext:expr) => {{
                match self.load($addr, $size, at, cx) {
                    Ok((v, lat)) => {
                        mem_lat = lat;
                        self.counters.loads += 1;
                        rd_val = Some($ext(v));
                    }
                    Err(Status::Blocked) => return Flow::Block { mem_lat: self.busy_until - at },
                    Err(_) => return Flow::Trap { cause: cause::LOAD_FAULT, mem_lat: 0 },
                }
            }};
        }
        macro_rules! store {
            ($size:expr) => {{
                match self.store(a.wrapping_add(imm), b, $size, at, cx) {
                    Ok(lat) => {
                        mem_lat = lat;
                        self.counters.stores += 1;
                    }
                    Err(_) => return Flow::Trap { cause: cause::STORE_FAULT, mem_lat: 0 },
                }
            }};
        }
        match insn.sem {
            Lui => rd_val = Some(imm),
            Auipc => rd_val = Some(pc.wrapping_add(imm)),
            Jal => {
                rd_val = Some(seq);
                next = pc.wrapping_add(imm);
                taken = true;
            }
            Jalr => {
                rd_val = Some(seq);
                next = a.wrapping_add(imm) & !1;
                taken = true;
            }
            Beq => branch!(a == b),
            Bne => branch!(a != b),
            Blt => branch!((a as i32) < (b as i32)),
            Bge => branch!((a as i32) >= (b as i32)),
            Bltu => branch!(a < b),
            Bgeu => branch!(a >= b),
            Lb => load!(a.wrapping_add(imm), 1, |v| sext(v, 8)),
            Lh => load!(a.wrapping_add(imm), 2, |v| sext(v, 16)),
            Lw => load!(a.wrapping_add(imm), 4, |v| v),
            Lbu => load!(a.wrapping_add(imm), 1, |v| v & 0xFF),
            Lhu => load!(a.wrapping_add(imm), 2, |v| v & 0xFFFF),
            LwPostInc => {
                load!(a, 4, |v| v);
                self.set_reg(insn.rs1 as usize, a.wrapping_add(imm));
            }
            Sb => store!(1),
            Sh => store!(2),
            Sw => store!(4),
            Addi => rd_val = Some(a.wrapping_add(imm)),
            Slti => rd_val = Some(((a as i32) < (imm as i32)) as u32),
            Sltiu => rd_val = Some((a < imm) as u32),
            Xori => rd_val = Some(a ^ imm),
            Ori => rd_val = Some(a | imm),
            Andi => rd_val = Some(a & imm),
            Slli => rd_val = Some(a << (imm & 31)),
            Srli => rd_val = Some(a >> (imm & 31)),
            Srai => rd_val = Some(((a as i32) >> (imm & 31)) as u32),
            Add => rd_val = Some(a.wrapping_add(b)),
            Sub => rd_val = Some(a.wrapping_sub(b)),
            Sll => rd_val = Some(a << (b & 31)),
            Slt => rd_val = Some(((a as i32) < (b as i32)) as u32),
            Sltu => rd_val = Some((a < b) as u32),
            Xor => rd_val = Some(a ^ b),
            Srl => rd_val = Some(a >> (b & 31)),
            Sra => rd_val = Some(((a as i32) >> (b & 31)) as u32),
            Or => rd_val = Some(a | b),
            And => rd_val = Some(a & b),
            Mul => rd_val = Some(a.wrapping_mul(b)),
            Mulh => rd_val = Some(((a as i32 as i64 * b as i32 as i64) >> 32) as u32),
            Mulhsu => rd_val = Some(((a as i32 as i64).wrapping_mul(b as i64) >> 32) as u32),
            Mulhu => rd_val = Some(((a as u64 * b as u64) >> 32) as u32),
            Div => {
                rd_val = Some(if b == 0 {
                    u32::MAX
                } else if a == 0x8000_0000 && b == u32::MAX {
                    a
                } else {
                    ((a as i32) / (b as i32)) as u32
                })
            }
            Divu => rd_val = Some(if b == 0 { u32::MAX } else { a / b }),
            Rem => {
                rd_val = Some(if b == 0 {
                    a
                } else if a == 0x8000_0000 && b == u32::MAX {
                    0
                } else {
                    ((a as i32) % (b as i32)) as u32
                })
            }
            Remu => rd_val = Some(if b == 0 { a } else { a % b }),
            Mac => rd_val = Some(r[insn.rd as usize].wrapping_add(a.wrapping_mul(b))),
            Fence | Wfi => {}
            Ecall => return Flow::Trap { cause: cause::ECALL, mem_lat: 0 },
            Ebreak => return Flow::Trap { cause: cause::BREAKPOINT, mem_lat: 0 },
            Mret => {
                next = self.mepc;
                taken = true;
            }
            Csrrw | Csrrs | Csrrc | Csrrwi | Csrrsi | Csrrci => {
                let addr = imm & 0xFFF;
                let Some(old) = self.read_csr(addr, now) else {
                    return Flow::Trap { cause: cause::ILLEGAL, mem_lat: 0 };
                };
                let src = if matches!(insn.sem, Csrrwi | Csrrsi | Csrrci) { insn.rs1 as u32 } else { a };
                let new = match insn.sem {
                    Csrrw | Csrrwi => Some(src),
                    Csrrs | Csrrsi if insn.rs1 != 0 => Some(old | src),
                    Csrrc | Csrrci if insn.rs1 != 0 => Some(old & !src),
                    _ => None,
                };
                if let Some(v) = new {
                    self.write_csr(addr, v);
                }
                rd_val = Some(old);
            }
        }
        if let Some(v) = rd_val {
            self.set_reg(insn.rd as usize, v);
        }
        Flow::Next { pc: next, mem_lat, taken }
    }

    fn schedule(&mut self, cx: &mut Platform, delta: u64) {
        if let Some(ev) = self.step_ev {
            cx.enqueue(ev, delta);
        }
    }

    fn halt(&mut self, reason: String, cx: &mut Platform) {
        self.mode = Mode::Halted;
        self.halt_reason = Some(reason);
        cx.vcd_change(self.vcd_active, 0);
    }

    fn step(&mut self, cx: &mut Platform) {
        if self.mode != Mode::Running {
            return;
        }
        let t = cx.engine().domain(self.domain).cycle();
        if self.start_cycle.is_none() {
            self.start_cycle = Some(t);
            self.busy_until = t;
            cx.vcd_change(self.vcd_active, 1);
        }
        if self.woke {
            self.woke = false;
            cx.vcd_change(self.vcd_active, 1);
        }
        let pc = self.pc;
        cx.vcd_change(self.vcd_pc, pc as u64);

        let mut f = Request::read(pc, 4, self.me, t * self.period, self.period).with_index(self.cfg.index);
        let fetch_ok = cx.send(self.me, FETCH, &mut f) == Status::Ok;
        let fetch_lat = f.latency_cycles;
        if f.cache_miss {
            self.counters.icache_misses += 1;
        }
        let decoded = if fetch_ok { self.decode(pc, f.value()) } else { None };
        let Some(insn) = decoded else {
            let c = if fetch_ok { cause::ILLEGAL } else { cause::FETCH_FAULT };
            return self.trap(c, t, fetch_lat + 1, cx);
        };
        if self.trace_insn {
            let text = self.isa.disasm(&insn);
            let path = format!("{}/insn", self.path);
            cx.trace(self.domain, &path, &text);
        }
        let (extra, wb, class) = {
            let e = self.isa.entry(&insn);
            (e.latency_cycles as u64, e.writeback_latency as u64, e.class)
        };
        let issue = t + fetch_lat;
        let ready = self
            .isa
            .sources(&insn)
            .iter()
            .flatten()
            .filter(|&&r| r != 0)
            .map(|&r| self.scoreboard[r as usize])
            .max()
            .unwrap_or(0);
        let stall = ready.saturating_sub(issue);
        self.counters.load_stalls += stall;
        let at = issue + stall;

        match self.execute(&insn, at, t, cx) {
            Flow::Next { pc: next, mem_lat, taken } => {
                let penalty = if taken { self.cfg.branch_penalty } else { 0 };
                if taken && class == Class::Branch {
                    self.counters.branches_taken += 1;
                }
                let charge = fetch_lat + stall + 1 + extra + mem_lat + penalty;
                if wb > 0 && insn.rd != 0 {
                    self.scoreboard[insn.rd as usize] = t + charge + wb;
                }
                self.pc = next;
                self.counters.instr_retired += 1;
                self.counters.active_cycles += charge;
                self.busy_until = t + charge;
                self.schedule(cx, charge);
            }
            Flow::Block { mem_lat } => {
                let charge = fetch_lat + stall + 1 + mem_lat;
                self.counters.active_cycles += charge;
                self.busy_until = t + charge;
                self.blocked_rd = Some(insn.rd);
                self.mode = Mode::Sleeping;
                cx.vcd_change(self.vcd_active, 0);
            }
            Flow::Trap { cause, mem_lat } => self.trap(cause, t, fetch_lat + stall + 1 + mem_lat, cx),
        }
    }

    fn trap(&mut self, cause: u32, t: Cycle, charge: u64, cx: &mut Platform) {
        self.counters.active_cycles += charge;
        self.busy_until = t + charge;
        self.mepc = self.pc;
        self.mcause = cause;
        if self.mtvec != 0 {
            self.pc = self.mtvec;
            let charge2 = self.cfg.branch_penalty;
            self.counters.active_cycles += charge2;
            self.busy_until += charge2;
            self.schedule(cx, charge + charge2);
        } else {
            let what = match cause {
                cause::FETCH_FAULT => "instruction access fault",
                cause::ILLEGAL => "illegal instruction",
                cause::BREAKPOINT => "breakpoint",
                cause::LOAD_FAULT => "load access fault",
                cause::STORE_FAULT => "store access fault",
                cause::ECALL => "environment call",
                _ => "trap",
            };
            self.halt(format!("{what} at pc {:#010x} (no trap handler)", self.pc), cx);
        }
    }
}

impl Component for Core {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::master("fetch"), PortDecl::master("data")]
    }

    fn init(&mut self, me: ComponentId, cx: &mut Platform) {
        self.me = me;
        self.period = cx.period(self.domain);
        self.path = cx.path(me).to_string();
        self.trace_insn = cx.trace_enabled(&format!("{}/insn", self.path));
        self.vcd_pc = cx.vcd_register(&format!("{}/pc", self.path), 32, self.pc as u64);
        self.vcd_active = cx.vcd_register(&format!("{}/active", self.path), 1, 0);
        let ev = cx.new_event(self.domain, me, 0);
        self.step_ev = Some(ev);
        if self.cfg.fetch_enable {
            cx.enqueue(ev, 0);
        }
    }

    fn on_event(&mut self, _tag: u32, _payload: u64, cx: &mut Platform) {
        self.step(cx);
    }

    fn on_wake(&mut self, value: u32, at_ps: Picos, cx: &mut Platform) -> bool {
        if self.mode != Mode::Sleeping {
            return false;
        }
        if let Some(rd) = self.blocked_rd.take() {
            self.set_reg(rd as usize, value);
        }
        self.pc = self.pc.wrapping_add(4);
        self.counters.instr_retired += 1;
        self.counters.loads += 1;
        let now = cx.current_cycle(self.domain);
        let at = cx.engine().domain(self.domain).cycles_in_domain(at_ps.max(cx.now_ps()));
        let resume = (at + 1).max(self.busy_until);
        self.counters.barrier_wait_cycles += resume - self.busy_until;
        self.busy_until = resume;
        self.mode = Mode::Running;
        self.woke = true;
        self.schedule(cx, resume - now);
        true
    }

    fn finish(&mut self, cx: &mut Platform) {
        let Some(start) = self.start_cycle else { return };
        let now = cx.engine().domain(self.domain).cycles_in_domain(cx.now_ps());
        let end = match self.mode {
            Mode::Halted => self.busy_until,
            Mode::Running => self.busy_until.max(now),
            Mode::Sleeping => {
                let end = self.busy_until.max(now);
                self.counters.barrier_wait_cycles += end - self.busy_until;
                self.busy_until = end;
                end
            }
        };
        self.counters.total_cycles = end - start;
    }

    fn stats(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.counters).expect("counters serialize");
        let o = v.as_object_mut().expect("object");
        o.insert("hart_id".into(), json!(self.cfg.hart_id));
        o.insert("pc".into(), json!(format!("{:#010x}", self.pc)));
        o.insert(
            "mode".into(),
            json!(match self.mode {
                Mode::Running => "running",
                Mode::Sleeping => "sleeping",
                Mode::Halted => "halted",
            }),
        );
        if let Some(h) = &self.halt_reason {
            o.insert("halt".into(), json!(h));
        }
        v
    }

    impl_any!();
}

/// Points every core at `pc` (the loaded program's entry).
pub fn set_entry(p: &mut Platform, pc: u32) {
    let ids: Vec<_> = p.ids_of_kind("core").collect();
    for id in ids {
        if let Some(c) = p.get_by_id_mut::<Core>(id) {
            c.set_pc(pc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_extension() {
        assert_eq!(sext(0x80, 8), 0xFFFF_FF80);
        assert_eq!(sext(0x7FFF, 16), 0x7FFF);
    }
}
