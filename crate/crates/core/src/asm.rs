//! A small two-pass assembler for the guest programs: the RV32IM subset of
//! GNU assembler syntax the bundled sources use, encoding through the ISA
//! table so the decoder and encoder share one description.
//!
//! Supported: labels, `#` comments, `.equ`/`.set`, `.word`, `.space`/`.zero`,
//! `.align` (power of two), `.section`/`.text` with fixed section bases,
//! `.include`, `%hi`/`%lo`, and the usual pseudo-instructions (`li`, `la`,
//! `mv`, `j`, `call`, `ret`, branch-against-zero forms, `csrr`/`csrw`, ...).

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::isa::{Format, IsaTable};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{file}:{line}: {msg}")]
pub struct AsmError {
    pub file: String,
    pub line: usize,
    pub msg: String,
}

/// Assembled output: one contiguous word block per section, plus the entry
/// (`_start`, or the first text address).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub blocks: Vec<(u32, Vec<u32>)>,
    pub entry: u32,
    pub symbols: BTreeMap<String, u32>,
}

impl Program {
    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    pub fn to_image(&self, header: &str) -> String {
        crate::loader::write_image(&self.blocks, self.entry, header)
    }
}

struct Line {
    file: String,
    no: usize,
    text: String,
}

fn reg(name: &str) -> Option<u32> {
    const ABI: [&str; 32] = [
        "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
        "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
    ];
    let n = name.trim();
    if n == "fp" {
        return Some(8);
    }
    if let Some(i) = ABI.iter().position(|&a| a == n) {
        return Some(i as u32);
    }
    n.strip_prefix('x').and_then(|d| d.parse::<u32>().ok()).filter(|&r| r < 32)
}

fn csr_number(name: &str) -> Option<u32> {
    use crate::cpu::csr::*;
    Some(match name {
        "mstatus" => MSTATUS,
        "mtvec" => MTVEC,
        "mscratch" => MSCRATCH,
        "mepc" => MEPC,
        "mcause" => MCAUSE,
        "mcycle" => MCYCLE,
        "minstret" => MINSTRET,
        "cycle" => CYCLE,
        "instret" => INSTRET,
        "mhartid" => MHARTID,
        _ => return None,
    })
}

/// Expression evaluator over integers, symbols, `+ - * << >> & |`,
/// parentheses, and `%hi`/`%lo`.
struct Expr<'a> {
    s: &'a [u8],
    i: usize,
    syms: &'a HashMap<String, i64>,
    /// Pass 1: unknown symbols evaluate to 0 and set this flag.
    lenient: bool,
    unresolved: bool,
}

impl Expr<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, t: &str) -> bool {
        self.ws();
        if self.s[self.i..].starts_with(t.as_bytes()) {
            self.i += t.len();
            true
        } else {
            false
        }
    }

    fn parse(&mut self) -> Result<i64, String> {
        let v = self.or()?;
        self.ws();
        if self.i != self.s.len() {
            return Err(format!("unexpected `{}`", String::from_utf8_lossy(&self.s[self.i..])));
        }
        Ok(v)
    }

    fn or(&mut self) -> Result<i64, String> {
        let mut v = self.and()?;
        while self.eat("|") {
            v |= self.and()?;
        }
        Ok(v)
    }

    fn and(&mut self) -> Result<i64, String> {
        let mut v = self.shift()?;
        while self.eat("&") {
            v &= self.shift()?;
        }
        Ok(v)
    }

    fn shift(&mut self) -> Result<i64, String> {
        let mut v = self.sum()?;
        loop {
            if self.eat("<<") {
                v <<= self.sum()?;
            } else if self.eat(">>") {
                v >>= self.sum()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn sum(&mut self) -> Result<i64, String> {
        let mut v = self.product()?;
        loop {
            if self.eat("+") {
                v = v.wrapping_add(self.product()?);
            } else if self.eat("-") {
                v = v.wrapping_sub(self.product()?);
            } else {
                return Ok(v);
            }
        }
    }

    fn product(&mut self) -> Result<i64, String> {
        let mut v = self.unary()?;
        loop {
            if self.eat("*") {
                v = v.wrapping_mul(self.unary()?);
            } else if self.eat("/") {
                let d = self.unary()?;
                if d == 0 {
                    return Err("division by zero".into());
                }
                v /= d;
            } else {
                return Ok(v);
            }
        }
    }

    fn unary(&mut self) -> Result<i64, String> {
        if self.eat("-") {
            return Ok(-self.unary()?);
        }
        if self.eat("~") {
            return Ok(!self.unary()?);
        }
        if self.eat("%hi(") {
            let v = self.or()?;
            self.expect(")")?;
            return Ok(((v + 0x800) >> 12) & 0xFFFFF);
        }
        if self.eat("%lo(") {
            let v = self.or()?;
            self.expect(")")?;
            return Ok(((v & 0xFFF) << 52) >> 52);
        }
        if self.eat("(") {
            let v = self.or()?;
            self.expect(")")?;
            return Ok(v);
        }
        self.ws();
        let start = self.i;
        while self.i < self.s.len() && (self.s[self.i].is_ascii_alphanumeric() || b"_.$".contains(&self.s[self.i])) {
            self.i += 1;
        }
        let tok = std::str::from_utf8(&self.s[start..self.i]).expect("ascii");
        if tok.is_empty() {
            return Err("expected a value".into());
        }
        if tok.as_bytes()[0].is_ascii_digit() {
            let n = if let Some(h) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
                i64::from_str_radix(h, 16)
            } else if let Some(b) = tok.strip_prefix("0b") {
                i64::from_str_radix(b, 2)
            } else {
                tok.parse()
            };
            return n.map_err(|_| format!("bad number `{tok}`"));
        }
        match self.syms.get(tok) {
            Some(&v) => Ok(v),
            None if self.lenient => {
                self.unresolved = true;
                Ok(0)
            }
            None => Err(format!("undefined symbol `{tok}`")),
        }
    }

    fn expect(&mut self, t: &str) -> Result<(), String> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(format!("expected `{t}`"))
        }
    }
}

fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

pub struct Assembler<'a> {
    isa: &'a IsaTable,
    sections: HashMap<String, u32>,
    includes: HashMap<String, String>,
    defines: Vec<(String, i64)>,
}

struct State {
    syms: HashMap<String, i64>,
    section: String,
    pc: HashMap<String, u32>,
    out: BTreeMap<u32, u32>,
    /// Word count chosen for each `li` in pass 1 (by line index).
    li_sizes: HashMap<usize, u32>,
    final_pass: bool,
}

impl<'a> Assembler<'a> {
    /// `.text` starts at `text_base`; other sections must be declared with
    /// [`Assembler::section`].
    pub fn new(isa: &'a IsaTable, text_base: u32) -> Self {
        let mut sections = HashMap::new();
        sections.insert(".text".to_string(), text_base);
        Assembler { isa, sections, includes: HashMap::new(), defines: Vec::new() }
    }

    pub fn section(mut self, name: &str, base: u32) -> Self {
        self.sections.insert(name.to_string(), base);
        self
    }

    /// Makes `.include "name"` resolve to `text`.
    pub fn include(mut self, name: &str, text: &str) -> Self {
        self.includes.insert(name.to_string(), text.to_string());
        self
    }

    /// Predefines a symbol; `.equ` in the source may not redefine it.
    pub fn define(mut self, name: &str, value: i64) -> Self {
        self.defines.push((name.to_string(), value));
        self
    }

    fn flatten(&self, file: &str, src: &str, out: &mut Vec<Line>, depth: usize) -> Result<(), AsmError> {
        for (i, raw) in src.lines().enumerate() {
            let text = raw.split('#').next().unwrap_or("").trim().to_string();
            if let Some(rest) = text.strip_prefix(".include") {
                let name = rest.trim().trim_matches('"');
                let inc = self.includes.get(name).ok_or_else(|| AsmError {
                    file: file.into(),
                    line: i + 1,
                    msg: format!("cannot include `{name}`"),
                })?;
                if depth > 8 {
                    return Err(AsmError { file: file.into(), line: i + 1, msg: "include nesting too deep".into() });
                }
                self.flatten(name, inc, out, depth + 1)?;
                continue;
            }
            out.push(Line { file: file.into(), no: i + 1, text });
        }
        Ok(())
    }

    pub fn assemble(&self, name: &str, src: &str) -> Result<Program, AsmError> {
        let mut lines = Vec::new();
        self.flatten(name, src, &mut lines, 0)?;
        let mut st = State {
            syms: self.defines.iter().cloned().collect(),
            section: ".text".into(),
            pc: self.sections.iter().map(|(k, &v)| (k.clone(), v)).collect(),
            out: BTreeMap::new(),
            li_sizes: HashMap::new(),
            final_pass: false,
        };
        for pass in 0..2 {
            st.final_pass = pass == 1;
            st.section = ".text".into();
            st.pc = self.sections.iter().map(|(k, &v)| (k.clone(), v)).collect();
            st.out.clear();
            for (ix, l) in lines.iter().enumerate() {
                self.line(&mut st, ix, &l.text).map_err(|msg| AsmError { file: l.file.clone(), line: l.no, msg })?;
            }
        }
        // group consecutive words into blocks
        let mut blocks: Vec<(u32, Vec<u32>)> = Vec::new();
        for (&a, &w) in &st.out {
            match blocks.last_mut() {
                Some((b, ws)) if *b + 4 * ws.len() as u32 == a => ws.push(w),
                _ => blocks.push((a, vec![w])),
            }
        }
        let entry = st.syms.get("_start").map(|&v| v as u32).unwrap_or(self.sections[".text"]);
        let symbols = st
            .syms
            .iter()
            .filter(|(k, _)| !self.defines.iter().any(|(d, _)| d == *k))
            .map(|(k, &v)| (k.clone(), v as u32))
            .collect();
        Ok(Program { blocks, entry, symbols })
    }

    fn eval(&self, st: &mut State, e: &str) -> Result<(i64, bool), String> {
        let mut x = Expr { s: e.as_bytes(), i: 0, syms: &st.syms, lenient: !st.final_pass, unresolved: false };
        let v = x.parse()?;
        Ok((v, x.unresolved))
    }

    fn value(&self, st: &mut State, e: &str) -> Result<i64, String> {
        Ok(self.eval(st, e)?.0)
    }

    fn pc(&self, st: &State) -> u32 {
        st.pc[&st.section]
    }

    fn emit(&self, st: &mut State, w: u32) {
        let pc = self.pc(st);
        st.out.insert(pc, w);
        *st.pc.get_mut(&st.section).expect("section") = pc + 4;
    }

    fn line(&self, st: &mut State, ix: usize, text: &str) -> Result<(), String> {
        let mut t = text;
        // labels
        while let Some(pos) = t.find(':') {
            let (lab, rest) = t.split_at(pos);
            let lab = lab.trim();
            if lab.is_empty() || !lab.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                break;
            }
            let pc = self.pc(st) as i64;
            if !st.final_pass && st.syms.contains_key(lab) {
                return Err(format!("label `{lab}` defined twice"));
            }
            st.syms.insert(lab.to_string(), pc);
            t = rest[1..].trim();
        }
        if t.is_empty() {
            return Ok(());
        }
        let (op, rest) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
        let ops = split_operands(rest);
        if op.starts_with('.') {
            return self.directive(st, op, rest, &ops);
        }
        self.instruction(st, ix, op, &ops)
    }

    fn directive(&self, st: &mut State, op: &str, rest: &str, ops: &[String]) -> Result<(), String> {
        match op {
            ".globl" | ".global" | ".type" | ".size" | ".option" | ".attribute" | ".file" => {}
            ".text" => st.section = ".text".into(),
            ".section" => {
                let name = ops.first().ok_or("missing section name")?.clone();
                if !st.pc.contains_key(&name) {
                    return Err(format!("section `{name}` has no base address"));
                }
                st.section = name;
            }
            ".equ" | ".set" => {
                let [name, e] = ops else { return Err("expected `.equ NAME, value`".into()) };
                if self.defines.iter().any(|(d, _)| d == name) {
                    return Ok(());
                }
                let v = self.value(st, e)?;
                st.syms.insert(name.clone(), v);
            }
            ".word" => {
                for e in ops {
                    let v = self.value(st, e)?;
                    self.emit(st, v as u32);
                }
            }
            ".space" | ".zero" => {
                let n = self.value(st, rest)?;
                if n < 0 || n % 4 != 0 {
                    return Err("space must be a non-negative multiple of 4".into());
                }
                for _ in 0..n / 4 {
                    self.emit(st, 0);
                }
            }
            ".align" | ".p2align" => {
                let a = 1u32 << self.value(st, ops.first().ok_or("missing alignment")?)?;
                while self.pc(st) % a != 0 {
                    self.emit(st, 0);
                }
            }
            _ => return Err(format!("unknown directive `{op}`")),
        }
        Ok(())
    }

    fn enc(&self, mn: &str, rd: u32, rs1: u32, rs2: u32, imm: i64) -> Result<u32, String> {
        self.isa.encode(mn, rd, rs1, rs2, imm as i32).ok_or_else(|| format!("unknown instruction `{mn}`"))
    }

    fn reg_op(ops: &[String], i: usize) -> Result<u32, String> {
        let s = ops.get(i).ok_or("missing operand")?;
        reg(s).ok_or_else(|| format!("`{s}` is not a register"))
    }

    /// `imm(reg)` memory operand.
    fn mem_op(&self, st: &mut State, s: &str) -> Result<(i64, u32), String> {
        let open = s.rfind('(').ok_or_else(|| format!("`{s}` is not imm(reg)"))?;
        let r = s[open + 1..].trim_end_matches(')').trim_end_matches('!');
        let r = reg(r).ok_or_else(|| format!("`{r}` is not a register"))?;
        let e = s[..open].trim();
        let imm = if e.is_empty() { 0 } else { self.value(st, e)? };
        Ok((imm, r))
    }

    fn check_imm(v: i64, bits: u32) -> Result<i64, String> {
        let lim = 1i64 << (bits - 1);
        if v < -lim || v >= lim {
            return Err(format!("immediate {v} does not fit in {bits} bits"));
        }
        Ok(v)
    }

    fn branch_target(&self, st: &mut State, e: &str, bits: u32) -> Result<i64, String> {
        let (t, unresolved) = self.eval(st, e)?;
        if unresolved {
            return Ok(0);
        }
        let off = t - self.pc(st) as i64;
        if off % 2 != 0 {
            return Err("misaligned branch target".into());
        }
        Self::check_imm(off, bits)
    }

    fn csr_op(&self, st: &mut State, s: &str) -> Result<i64, String> {
        match csr_number(s) {
            Some(n) => Ok(n as i64),
            None => self.value(st, s),
        }
    }

    fn instruction(&self, st: &mut State, ix: usize, op: &str, o: &[String]) -> Result<(), String> {
        let r = |i| Self::reg_op(o, i);
        let arg = |i: usize| o.get(i).cloned().ok_or_else(|| "missing operand".to_string());
        match op {
            "nop" => return self.emit_enc(st, "addi", 0, 0, 0, 0),
            "li" => {
                let rd = r(0)?;
                let (v, unresolved) = self.eval(st, &arg(1)?)?;
                let v = v as i32 as i64;
                let words = *st.li_sizes.entry(ix).or_insert(if !unresolved && (-2048..2048).contains(&v) { 1 } else { 2 });
                if words == 1 {
                    return self.emit_enc(st, "addi", rd, 0, 0, Self::check_imm(v, 12)?);
                }
                let hi = ((v + 0x800) >> 12) << 12;
                let lo = v - hi;
                self.emit_enc(st, "lui", rd, 0, 0, hi)?;
                return self.emit_enc(st, "addi", rd, rd, 0, lo);
            }
            "la" => {
                let rd = r(0)?;
                let v = self.value(st, &arg(1)?)? as i32 as i64;
                let hi = ((v + 0x800) >> 12) << 12;
                self.emit_enc(st, "lui", rd, 0, 0, hi)?;
                return self.emit_enc(st, "addi", rd, rd, 0, v - hi);
            }
            "mv" => return self.emit_enc(st, "addi", r(0)?, r(1)?, 0, 0),
            "not" => return self.emit_enc(st, "xori", r(0)?, r(1)?, 0, -1),
            "neg" => return self.emit_enc(st, "sub", r(0)?, 0, r(1)?, 0),
            "seqz" => return self.emit_enc(st, "sltiu", r(0)?, r(1)?, 0, 1),
            "snez" => return self.emit_enc(st, "sltu", r(0)?, 0, r(1)?, 0),
            "j" => {
                let off = self.branch_target(st, &arg(0)?, 21)?;
                return self.emit_enc(st, "jal", 0, 0, 0, off);
            }
            "call" => {
                let off = self.branch_target(st, &arg(0)?, 21)?;
                return self.emit_enc(st, "jal", 1, 0, 0, off);
            }
            "jr" => return self.emit_enc(st, "jalr", 0, r(0)?, 0, 0),
            "ret" => return self.emit_enc(st, "jalr", 0, 1, 0, 0),
            "beqz" | "bnez" | "bltz" | "bgez" => {
                let mn = &op[..3];
                let off = self.branch_target(st, &arg(1)?, 13)?;
                return self.emit_enc(st, mn, 0, r(0)?, 0, off);
            }
            "blez" | "bgtz" => {
                let mn = if op == "blez" { "bge" } else { "blt" };
                let off = self.branch_target(st, &arg(1)?, 13)?;
                return self.emit_enc(st, mn, 0, 0, r(0)?, off);
            }
            "bgt" | "ble" | "bgtu" | "bleu" => {
                let mn = match op {
                    "bgt" => "blt",
                    "ble" => "bge",
                    "bgtu" => "bltu",
                    _ => "bgeu",
                };
                let off = self.branch_target(st, &arg(2)?, 13)?;
                return self.emit_enc(st, mn, 0, r(1)?, r(0)?, off);
            }
            "csrr" => {
                let c = self.csr_op(st, &arg(1)?)?;
                return self.emit_enc(st, "csrrs", r(0)?, 0, 0, c);
            }
            "csrw" | "csrs" | "csrc" => {
                let mn = format!("csrr{}", &op[3..]);
                let c = self.csr_op(st, &arg(0)?)?;
                return self.emit_enc(st, &mn, 0, r(1)?, 0, c);
            }
            "csrwi" | "csrsi" | "csrci" => {
                let mn = format!("csrr{}i", &op[3..4]);
                let c = self.csr_op(st, &arg(0)?)?;
                let z = self.value(st, &arg(1)?)?;
                return self.emit_enc(st, &mn, 0, z as u32, 0, c);
            }
            _ => {}
        }
        let e = self.isa.find(op).ok_or_else(|| format!("unknown instruction `{op}`"))?;
        if op == "jalr" {
            if o.len() == 1 {
                return self.emit_enc(st, op, 1, r(0)?, 0, 0);
            }
            if o.len() == 3 {
                let imm = Self::check_imm(self.value(st, &o[2])?, 12)?;
                return self.emit_enc(st, op, r(0)?, r(1)?, 0, imm);
            }
            let (imm, base) = self.mem_op(st, &arg(1)?)?;
            return self.emit_enc(st, op, r(0)?, base, 0, Self::check_imm(imm, 12)?);
        }
        match e.format {
            Format::R => self.emit_enc(st, op, r(0)?, r(1)?, r(2)?, 0),
            Format::I => {
                let imm = Self::check_imm(self.value(st, &arg(2)?)?, 12)?;
                self.emit_enc(st, op, r(0)?, r(1)?, 0, imm)
            }
            Format::Shift => {
                let sh = self.value(st, &arg(2)?)?;
                if !(0..32).contains(&sh) {
                    return Err("shift amount out of range".into());
                }
                self.emit_enc(st, op, r(0)?, r(1)?, 0, sh)
            }
            Format::Load | Format::LoadPost => {
                let (imm, base) = self.mem_op(st, &arg(1)?)?;
                self.emit_enc(st, op, r(0)?, base, 0, Self::check_imm(imm, 12)?)
            }
            Format::S => {
                let (imm, base) = self.mem_op(st, &arg(1)?)?;
                self.emit_enc(st, op, 0, base, r(0)?, Self::check_imm(imm, 12)?)
            }
            Format::B => {
                let off = self.branch_target(st, &arg(2)?, 13)?;
                self.emit_enc(st, op, 0, r(0)?, r(1)?, off)
            }
            Format::U => {
                let v = self.value(st, &arg(1)?)?;
                if !(0..1 << 20).contains(&v) {
                    return Err("upper immediate out of range".into());
                }
                self.emit_enc(st, op, r(0)?, 0, 0, v << 12)
            }
            Format::J => {
                let (rd, target) = if o.len() == 1 { (1, arg(0)?) } else { (r(0)?, arg(1)?) };
                let off = self.branch_target(st, &target, 21)?;
                self.emit_enc(st, op, rd, 0, 0, off)
            }
            Format::Csr => {
                let c = self.csr_op(st, &arg(1)?)?;
                self.emit_enc(st, op, r(0)?, r(2)?, 0, c)
            }
            Format::CsrImm => {
                let c = self.csr_op(st, &arg(1)?)?;
                let z = self.value(st, &arg(2)?)?;
                if !(0..32).contains(&z) {
                    return Err("CSR immediate out of range".into());
                }
                self.emit_enc(st, op, r(0)?, z as u32, 0, c)
            }
            Format::None => self.emit_enc(st, op, 0, 0, 0, 0),
        }
    }

    fn emit_enc(&self, st: &mut State, mn: &str, rd: u32, rs1: u32, rs2: u32, imm: i64) -> Result<(), String> {
        let w = self.enc(mn, rd, rs1, rs2, imm)?;
        self.emit(st, w);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asm(src: &str) -> Program {
        let isa = IsaTable::rv32im();
        Assembler::new(&isa, 0x1C00_0000).assemble("t.S", src).unwrap()
    }

    #[test]
    fn reference_encodings() {
        let p = asm("_start: addi x1, x0, 5\n mul t1, t0, a0\n sw ra, -4(sp)\n lw a0, 8(sp)\n");
        assert_eq!(p.blocks, vec![(0x1C00_0000, vec![0x0050_0093, 0x02A2_8333, 0xFE11_2E23, 0x0081_2503])]);
        assert_eq!(p.entry, 0x1C00_0000);
    }

    #[test]
    fn labels_resolve_forward_and_backward() {
        let p = asm("top: beqz a0, done\n addi a0, a0, -1\n j top\ndone: ret\n");
        let w = &p.blocks[0].1;
        assert_eq!(w[0], 0x0005_0663); // beq a0, x0, +12
        assert_eq!(w[2], 0xFF9F_F06F); // jal x0, -8
        assert_eq!(w[3], 0x0000_8067);
    }

    #[test]
    fn li_picks_one_or_two_words() {
        let p = asm(".equ BIG, 0x1A104000\n li a0, 100\n li a1, BIG\n li a2, -1\n");
        let w = &p.blocks[0].1;
        assert_eq!(w.len(), 4);
        assert_eq!(w[1], 0x1A10_45B7); // lui a1, 0x1A104
        assert_eq!(w[3], 0xFFF0_0613);
    }

    #[test]
    fn sections_and_data() {
        let isa = IsaTable::rv32im();
        let p = Assembler::new(&isa, 0x1C00_0000)
            .section(".params", 0x1C07_FF00)
            .assemble("t.S", "nop\n.section .params\nn: .word 7, 8\n.text\nnop\n")
            .unwrap();
        assert_eq!(p.blocks.len(), 2);
        assert_eq!(p.blocks[1], (0x1C07_FF00, vec![7, 8]));
        assert_eq!(p.symbol("n"), Some(0x1C07_FF00));
        assert_eq!(p.blocks[0].1.len(), 2);
    }

    #[test]
    fn errors_name_the_line() {
        let isa = IsaTable::rv32im();
        let e = Assembler::new(&isa, 0).assemble("g.S", "nop\n addi a0, a0, 5000\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.msg.contains("12 bits"));
        let e = Assembler::new(&isa, 0).assemble("g.S", "j nowhere\n").unwrap_err();
        assert!(e.msg.contains("nowhere"));
    }

    #[test]
    fn defines_override_equ() {
        let isa = IsaTable::rv32im();
        let p = Assembler::new(&isa, 0).define("N", 3).assemble("t.S", ".equ N, 9\nli a0, N\n").unwrap();
        assert_eq!(p.blocks[0].1[0], 0x0030_0513);
    }
}
