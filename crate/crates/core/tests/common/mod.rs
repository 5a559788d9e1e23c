//! Independent oracles shared by the integration tests: a hand-decoded
//! RV32IM interpreter with a random program generator, a naive fully
//! ordered event queue, and a timestamp LRU cache model.
#![allow(dead_code)]

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pulpsim::engine::{ClockDomain, Cycle, DomainId, EventId, Next, TimeEngine};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// RV32IM encodings, written out by hand rather than through the ISA table.

pub fn r_type(f7: u32, rs2: u32, rs1: u32, f3: u32, rd: u32, op: u32) -> u32 {
    f7 << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
}

pub fn i_type(imm: i32, rs1: u32, f3: u32, rd: u32, op: u32) -> u32 {
    ((imm as u32) & 0xFFF) << 20 | rs1 << 15 | f3 << 12 | rd << 7 | op
}

pub fn s_type(imm: i32, rs2: u32, rs1: u32, f3: u32) -> u32 {
    let i = imm as u32;
    (i >> 5 & 0x7F) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (i & 0x1F) << 7 | 0x23
}

pub fn b_type(off: i32, rs2: u32, rs1: u32, f3: u32) -> u32 {
    let i = off as u32;
    (i >> 12 & 1) << 31 | (i >> 5 & 0x3F) << 25 | rs2 << 20 | rs1 << 15 | f3 << 12 | (i >> 1 & 0xF) << 8 | (i >> 11 & 1) << 7 | 0x63
}

pub fn u_type(imm20: u32, rd: u32, op: u32) -> u32 {
    (imm20 & 0xF_FFFF) << 12 | rd << 7 | op
}

pub fn j_type(off: i32, rd: u32) -> u32 {
    let i = off as u32;
    (i >> 20 & 1) << 31 | (i >> 1 & 0x3FF) << 21 | (i >> 11 & 1) << 20 | (i >> 12 & 0xFF) << 12 | rd << 7 | 0x6F
}

/// Loads a 32-bit constant with lui + addi.
pub fn load_const(rd: u32, v: u32) -> [u32; 2] {
    let lo = ((v & 0xFFF) as i32) << 20 >> 20;
    let hi = v.wrapping_sub(lo as u32) >> 12;
    [u_type(hi, rd, 0x37), i_type(lo, rd, 0, rd, 0x13)]
}

pub const ISS_CODE: u32 = 0x0;
pub const ISS_DATA: u32 = 0x8_0000;
pub const ISS_DATA_LEN: usize = 4096;
pub const ISS_EXIT: u32 = 0x1A10_4000;
/// Base register of every generated load and store; never written.
const BASE_REG: u32 = 31;

/// A random straight-line RV32IM program with forward-only control flow.
/// It sets every register, runs `body` random instructions, and exits by
/// storing to the simulator's exit register.
pub fn random_program(r: &mut ChaCha8Rng, body: usize) -> Vec<u32> {
    let mut code = Vec::with_capacity(body + 80);
    code.extend(load_const(BASE_REG, ISS_DATA + 2048));
    for rd in 1..31 {
        code.extend(load_const(rd, r.gen()));
    }
    let start = code.len();
    let end = start + body;
    // control transfers are encoded last so none lands on the jalr of an
    // auipc/jalr pair (which would jump through a stale register)
    let mut jumps: Vec<(usize, usize, Box<dyn Fn(i32) -> u32>)> = Vec::new();
    let mut pair_jalr = std::collections::HashSet::new();
    let rd = |r: &mut ChaCha8Rng| r.gen_range(1..31u32);
    let rs = |r: &mut ChaCha8Rng| r.gen_range(0..32u32);
    while code.len() < end {
        let left = end - code.len();
        let here = code.len();
        let w = match r.gen_range(0..100) {
            0..=29 => {
                const OPS: [(u32, u32); 18] = [
                    (0, 0), (0x20, 0), (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0x20, 5), (0, 6), (0, 7),
                    (1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (1, 5), (1, 6), (1, 7),
                ];
                let (f7, f3) = OPS[r.gen_range(0..OPS.len())];
                r_type(f7, rs(r), rs(r), f3, rd(r), 0x33)
            }
            30..=49 => {
                let f3 = r.gen_range(0..8u32);
                match f3 {
                    1 => r_type(0, r.gen_range(0..32), rs(r), 1, rd(r), 0x13),
                    5 => r_type(if r.gen() { 0x20 } else { 0 }, r.gen_range(0..32), rs(r), 5, rd(r), 0x13),
                    _ => i_type(r.gen_range(-2048..2048), rs(r), f3, rd(r), 0x13),
                }
            }
            50..=53 => u_type(r.gen(), rd(r), if r.gen() { 0x37 } else { 0x17 }),
            54..=68 => {
                let (f3, size) = [(0, 1), (1, 2), (2, 4), (4, 1), (5, 2)][r.gen_range(0..5)];
                let off = r.gen_range(-2048..2048 - size) & !(size - 1);
                i_type(off, BASE_REG, f3, rd(r), 0x03)
            }
            69..=80 => {
                let (f3, size) = [(0, 1), (1, 2), (2, 4)][r.gen_range(0..3)];
                let off = r.gen_range(-2048..2048 - size) & !(size - 1);
                s_type(off, rs(r), BASE_REG, f3)
            }
            81..=92 if left > 8 => {
                let (f3, a, b) = ([0, 1, 4, 5, 6, 7][r.gen_range(0..6)], rs(r), rs(r));
                jumps.push((here, here + r.gen_range(2..7), Box::new(move |off| b_type(off, b, a, f3))));
                0
            }
            93..=96 if left > 8 => {
                let link = r.gen_range(0..31);
                jumps.push((here, here + r.gen_range(2..7), Box::new(move |off| j_type(off, link))));
                0
            }
            97..=99 if left > 5 => {
                // auipc t, 0; jalr d, t, 12; skipped filler
                let t = rd(r);
                code.push(u_type(0, t, 0x17));
                code.push(i_type(12, t, 0, r.gen_range(0..31), 0x67));
                pair_jalr.insert(here + 1);
                i_type(r.gen_range(-2048..2048), rs(r), 0, rd(r), 0x13)
            }
            _ => i_type(r.gen_range(-2048..2048), rs(r), 0, rd(r), 0x13),
        };
        code.push(w);
    }
    for (at, mut target, enc) in jumps {
        while pair_jalr.contains(&target) {
            target += 1;
        }
        code[at] = enc(4 * (target - at) as i32);
    }
    code.extend(load_const(29, ISS_EXIT));
    code.push(s_type(0, 0, 29, 2));
    // the simulated core may fetch ahead of the exit store
    code.extend([0x0000_006F; 4]);
    code
}

/// Reference interpreter over a flat little-endian memory.
pub struct RefCpu {
    pub x: [u32; 32],
    pub pc: u32,
    pub mem: Vec<u8>,
    pub retired: u64,
}

impl RefCpu {
    pub fn new(mem_len: usize) -> Self {
        RefCpu { x: [0; 32], pc: 0, mem: vec![0; mem_len], retired: 0 }
    }

    fn ld(&self, a: u32, n: usize) -> u32 {
        let mut v = 0u32;
        for i in 0..n {
            v |= (self.mem[a as usize + i] as u32) << (8 * i);
        }
        v
    }

    fn st(&mut self, a: u32, n: usize, v: u32) {
        for i in 0..n {
            self.mem[a as usize + i] = (v >> (8 * i)) as u8;
        }
    }

    /// Runs until a store to `exit_addr` (which it performs) or `max`
    /// instructions. Returns true on the exit store.
    pub fn run(&mut self, exit_addr: u32, max: u64) -> bool {
        while self.retired < max {
            let ins = self.ld(self.pc, 4);
            let op = ins & 0x7F;
            let rd = (ins >> 7 & 31) as usize;
            let f3 = ins >> 12 & 7;
            let rs1 = self.x[(ins >> 15 & 31) as usize];
            let rs2 = self.x[(ins >> 20 & 31) as usize];
            let f7 = ins >> 25;
            let imm_i = (ins as i32 >> 20) as u32;
            let imm_s = ((ins as i32 >> 25) << 5) as u32 | (ins >> 7 & 31);
            let imm_b = (((ins as i32) >> 31) << 12) as u32 | (ins >> 7 & 1) << 11 | (ins >> 25 & 0x3F) << 5 | (ins >> 8 & 0xF) << 1;
            let imm_j = (((ins as i32) >> 31) << 20) as u32 | (ins >> 12 & 0xFF) << 12 | (ins >> 20 & 1) << 11 | (ins >> 21 & 0x3FF) << 1;
            let mut next = self.pc.wrapping_add(4);
            let mut wb: Option<u32> = None;
            match op {
                0x37 => wb = Some(ins & 0xFFFF_F000),
                0x17 => wb = Some(self.pc.wrapping_add(ins & 0xFFFF_F000)),
                0x6F => {
                    wb = Some(next);
                    next = self.pc.wrapping_add(imm_j);
                }
                0x67 => {
                    wb = Some(next);
                    next = rs1.wrapping_add(imm_i) & !1;
                }
                0x63 => {
                    let take = match f3 {
                        0 => rs1 == rs2,
                        1 => rs1 != rs2,
                        4 => (rs1 as i32) < (rs2 as i32),
                        5 => (rs1 as i32) >= (rs2 as i32),
                        6 => rs1 < rs2,
                        7 => rs1 >= rs2,
                        _ => panic!("bad branch {ins:#x}"),
                    };
                    if take {
                        next = self.pc.wrapping_add(imm_b);
                    }
                }
                0x03 => {
                    let a = rs1.wrapping_add(imm_i);
                    wb = Some(match f3 {
                        0 => self.ld(a, 1) as u8 as i8 as u32,
                        1 => self.ld(a, 2) as u16 as i16 as u32,
                        2 => self.ld(a, 4),
                        4 => self.ld(a, 1),
                        5 => self.ld(a, 2),
                        _ => panic!("bad load {ins:#x}"),
                    });
                }
                0x23 => {
                    let a = rs1.wrapping_add(imm_s);
                    if a == exit_addr {
                        self.retired += 1;
                        self.pc = next;
                        return true;
                    }
                    self.st(a, 1 << f3, rs2);
                }
                0x13 => {
                    let sh = imm_i & 31;
                    wb = Some(match f3 {
                        0 => rs1.wrapping_add(imm_i),
                        1 => rs1 << sh,
                        2 => ((rs1 as i32) < (imm_i as i32)) as u32,
                        3 => (rs1 < imm_i) as u32,
                        4 => rs1 ^ imm_i,
                        5 if f7 & 0x20 != 0 => ((rs1 as i32) >> sh) as u32,
                        5 => rs1 >> sh,
                        6 => rs1 | imm_i,
                        _ => rs1 & imm_i,
                    });
                }
                0x33 if f7 == 1 => {
                    let (a, b) = (rs1 as i32, rs2 as i32);
                    wb = Some(match f3 {
                        0 => rs1.wrapping_mul(rs2),
                        1 => ((a as i64 * b as i64) >> 32) as u32,
                        2 => ((a as i64 * rs2 as i64) >> 32) as u32,
                        3 => ((rs1 as u64 * rs2 as u64) >> 32) as u32,
                        4 => {
                            if b == 0 {
                                u32::MAX
                            } else {
                                a.wrapping_div(b) as u32
                            }
                        }
                        5 => rs1.checked_div(rs2).unwrap_or(u32::MAX),
                        6 => {
                            if b == 0 {
                                rs1
                            } else {
                                a.wrapping_rem(b) as u32
                            }
                        }
                        _ => rs1.checked_rem(rs2).unwrap_or(rs1),
                    });
                }
                0x33 => {
                    let sh = rs2 & 31;
                    wb = Some(match (f3, f7) {
                        (0, 0) => rs1.wrapping_add(rs2),
                        (0, _) => rs1.wrapping_sub(rs2),
                        (1, _) => rs1 << sh,
                        (2, _) => ((rs1 as i32) < (rs2 as i32)) as u32,
                        (3, _) => (rs1 < rs2) as u32,
                        (4, _) => rs1 ^ rs2,
                        (5, 0) => rs1 >> sh,
                        (5, _) => ((rs1 as i32) >> sh) as u32,
                        (6, _) => rs1 | rs2,
                        _ => rs1 & rs2,
                    });
                }
                _ => panic!("reference interpreter: unsupported {ins:#010x} at {:#x}", self.pc),
            }
            if let Some(v) = wb {
                if rd != 0 {
                    self.x[rd] = v;
                }
            }
            self.pc = next;
            self.retired += 1;
        }
        false
    }
}

/// Single core with flat memory and the simulator control block.
pub const ISS_PLATFORM: &str = r#"{
  "clock_domains": { "main": { "frequency_hz": 100000000 } },
  "components": {
    "core": { "kind": "core", "domain": "main", "params": { "hart_id": 0, "boot_addr": "0x0" } },
    "bus": {
      "kind": "router", "domain": "main",
      "params": {
        "latency": 0,
        "mappings": {
          "mem": { "base": "0x0", "size": "0x100000" },
          "ctl": { "base": "0x1A104000", "size": "0x1000" }
        }
      }
    },
    "mem": { "kind": "memory", "domain": "main", "base": "0x0", "size": "0x100000" },
    "ctl": { "kind": "sim_control", "domain": "main", "base": "0x1A104000", "size": "0x1000" }
  },
  "bindings": [
    ["core/fetch", "mem/input"],
    ["core/data", "bus/input"],
    ["bus/mem", "mem/input"],
    ["bus/ctl", "ctl/input"]
  ]
}"#;

// ---------------------------------------------------------------------------
// Event schedules.

/// Frequencies whose periods are whole picoseconds.
pub const FREQS: [u64; 8] = [1_000_000_000, 800_000_000, 500_000_000, 400_000_000, 320_000_000, 250_000_000, 200_000_000, 125_000_000];

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A random schedule. Every event is named by a hash; an event's children
/// (count, domain, delta) are a function of its name alone, so the set of
/// executed events does not depend on same-cycle execution order.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub freqs: Vec<u64>,
    pub window: usize,
    pub roots: Vec<(u64, usize, u64)>,
    pub max_depth: u32,
}

impl Schedule {
    pub fn random(r: &mut ChaCha8Rng, window: usize) -> Self {
        let n = r.gen_range(1..=3);
        let freqs = (0..n).map(|_| FREQS[r.gen_range(0..FREQS.len())]).collect::<Vec<_>>();
        let roots = (0..r.gen_range(1..40))
            .map(|_| (r.gen(), r.gen_range(0..n), r.gen_range(0..=10 * window as u64)))
            .collect();
        Schedule { freqs, window, roots, max_depth: 3 }
    }

    fn children(&self, name: u64, depth: u32) -> Vec<(u64, usize, u64)> {
        if depth >= self.max_depth {
            return Vec::new();
        }
        let h = mix(name);
        let count = (h % 4) as usize;
        (0..count)
            .map(|k| {
                let c = mix(name ^ (k as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407));
                let domain = (c >> 8) as usize % self.freqs.len();
                // a quarter of the children land in the current cycle
                let delta = if c % 4 == 0 { 0 } else { (c >> 24) % (10 * self.window as u64 + 1) };
                (c, domain, delta)
            })
            .collect()
    }

    /// Executed event names per (domain, cycle), via the engine.
    pub fn run_engine(&self) -> BTreeMap<(usize, Cycle), Vec<u64>> {
        let mut eng = TimeEngine::new();
        let doms: Vec<DomainId> =
            self.freqs.iter().enumerate().map(|(i, &f)| eng.add_domain(ClockDomain::new(format!("d{i}"), f, self.window))).collect();
        let mut names: HashMap<EventId, (u64, u32)> = HashMap::new();
        for &(name, d, delta) in &self.roots {
            let ev = eng.new_event(doms[d], 0, 0);
            names.insert(ev, (name, 0));
            eng.enqueue(ev, delta).unwrap();
        }
        let mut out: BTreeMap<(usize, Cycle), Vec<u64>> = BTreeMap::new();
        let freqs = self.freqs.clone();
        let r = eng.run_with(None, |eng, ev| {
            let (name, depth) = names[&ev];
            let d = eng.event_domain(ev).0 as usize;
            let cycle = eng.domain(DomainId(d as u16)).cycle();
            assert_eq!(eng.now_ps(), cycle * (1_000_000_000_000 / freqs[d]));
            out.entry((d, cycle)).or_default().push(name);
            for (c, cd, delta) in self.children(name, depth) {
                let child = eng.new_event(doms[cd], 0, 0);
                names.insert(child, (c, depth + 1));
                eng.enqueue(child, delta).unwrap();
            }
        });
        assert_eq!(r, Next::Idle);
        out.values_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// The same schedule through a plain priority queue keyed on global time.
    pub fn run_naive(&self) -> BTreeMap<(usize, Cycle), Vec<u64>> {
        let periods: Vec<u64> = self.freqs.iter().map(|f| 1_000_000_000_000 / f).collect();
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        for &(name, d, delta) in &self.roots {
            heap.push(Reverse((delta * periods[d], d, seq, name, 0u32)));
            seq += 1;
        }
        let mut out: BTreeMap<(usize, Cycle), Vec<u64>> = BTreeMap::new();
        while let Some(Reverse((t, d, _, name, depth))) = heap.pop() {
            out.entry((d, t / periods[d])).or_default().push(name);
            for (c, cd, delta) in self.children(name, depth) {
                let at = t.div_ceil(periods[cd]) + delta;
                heap.push(Reverse((at * periods[cd], cd, seq, c, depth + 1)));
                seq += 1;
            }
        }
        out.values_mut().for_each(|v| v.sort_unstable());
        out
    }
}

// ---------------------------------------------------------------------------
// Caches.

/// LRU by last-use timestamp, with an explicit fill order for empty ways.
pub struct RefLru {
    sets: usize,
    ways: usize,
    line: u32,
    lines: Vec<Vec<(u32, u64)>>,
    clock: u64,
}

impl RefLru {
    pub fn new(capacity: usize, ways: usize, line: u32) -> Self {
        let sets = capacity / ways / line as usize;
        RefLru { sets, ways, line, lines: vec![Vec::new(); sets], clock: 0 }
    }

    /// True on a hit.
    pub fn access(&mut self, addr: u32) -> bool {
        self.clock += 1;
        let block = addr / self.line;
        let set = &mut self.lines[block as usize % self.sets];
        if let Some(e) = set.iter_mut().find(|e| e.0 == block) {
            e.1 = self.clock;
            return true;
        }
        if set.len() == self.ways {
            let victim = (0..set.len()).min_by_key(|&i| set[i].1).unwrap();
            set.remove(victim);
        }
        set.push((block, self.clock));
        false
    }
}

/// Addresses with locality: mostly short sequential runs from a few hot
/// regions, plus occasional far jumps.
pub fn fetch_trace(r: &mut ChaCha8Rng, n: usize, span: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(n);
    let mut pc = 0u32;
    while out.len() < n {
        if r.gen_range(0..8) == 0 {
            pc = r.gen_range(0..span / 4) * 4;
        }
        for _ in 0..r.gen_range(1..12) {
            out.push(pc);
            pc = (pc + 4) % span;
        }
    }
    out.truncate(n);
    out
}

// ---------------------------------------------------------------------------
// Platform drivers.

use pulpsim::component::{ComponentId as Cid, PortDecl};
use pulpsim::{Component, Platform};

/// A component with one master port `out`, used to push requests into a
/// platform from test code.
pub struct Probe;

impl Component for Probe {
    fn ports(&self) -> Vec<PortDecl> {
        vec![PortDecl::master("out")]
    }
    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
    fn as_any_mut(&mut self) -> &mut dyn std::any::Any {
        self
    }
}

/// Builds `json` and attaches probes in `domain`, bound to the given slave
/// endpoints. The platform is initialized.
pub fn probe_platform(json: &str, domain: &str, targets: &[&str]) -> (Platform, Vec<Cid>) {
    let mut p = pulpsim::elaborate::build::<&str>(json, &[]).unwrap();
    let d = p.engine().domain_by_name(domain).unwrap();
    let ids = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let path = format!("probe{i}");
            let id = p.add_component(&path, "probe", Some(d), serde_json::Value::Null, Box::new(Probe)).unwrap();
            p.bind(&format!("{path}/out"), t).unwrap();
            id
        })
        .collect();
    p.init();
    (p, ids)
}

/// Assembles RV32IM source at `base`.
pub fn asm(src: &str, base: u32) -> pulpsim::asm::Program {
    let isa = pulpsim::isa::IsaTable::rv32im();
    pulpsim::asm::Assembler::new(&isa, base).assemble("test.S", src).unwrap_or_else(|e| panic!("{e}"))
}

/// Loads `prog` into a platform and points every core at its entry.
pub fn load_program(p: &mut Platform, prog: &pulpsim::asm::Program) {
    for (base, words) in &prog.blocks {
        let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        p.poke(*base, &bytes).unwrap();
    }
    pulpsim::cpu::set_entry(p, prog.entry);
}
