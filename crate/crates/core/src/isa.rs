//! Table-driven instruction decoding.
//!
//! An ISA is a JSON list of `{mnemonic, mask, match, format, latency_cycles,
//! writeback_latency, class, semantics}` entries. A word decodes to the entry
//! with `word & mask == match`; entries may never overlap. Extensions are
//! additional fragments registered on top of the base table and bind their
//! encodings to semantics the core already implements.

use serde::Deserialize;

use crate::config::parse_int_str;
use crate::ConfigError;

const RV32IM: &str = include_str!("../../../isa/rv32im.json");
const XDEMO: &str = include_str!("../../../isa/xdemo.json");

/// Operand layout, which also fixes the disassembly syntax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    R,
    I,
    Shift,
    /// `rd, imm(rs1)`: loads and `jalr`.
    Load,
    /// `rd, imm(rs1!)`: post-increment loads.
    LoadPost,
    S,
    B,
    U,
    J,
    Csr,
    CsrImm,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Alu,
    Mul,
    Div,
    Load,
    Store,
    Branch,
    Jump,
    Csr,
    System,
}

/// Behaviors the core knows how to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sem {
    Lui,
    Auipc,
    Jal,
    Jalr,
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
    Lb,
    Lh,
    Lw,
    Lbu,
    Lhu,
    Sb,
    Sh,
    Sw,
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
    Mul,
    Mulh,
    Mulhsu,
    Mulhu,
    Div,
    Divu,
    Rem,
    Remu,
    Fence,
    Ecall,
    Ebreak,
    Mret,
    Wfi,
    Csrrw,
    Csrrs,
    Csrrc,
    Csrrwi,
    Csrrsi,
    Csrrci,
    /// `rd += rs1 * rs2`
    Mac,
    /// `rd = mem[rs1]; rs1 += imm`
    LwPostInc,
}

impl Sem {
    fn parse(s: &str) -> Option<Sem> {
        use Sem::*;
        Some(match s {
            "lui" => Lui,
            "auipc" => Auipc,
            "jal" => Jal,
            "jalr" => Jalr,
            "beq" => Beq,
            "bne" => Bne,
            "blt" => Blt,
            "bge" => Bge,
            "bltu" => Bltu,
            "bgeu" => Bgeu,
            "lb" => Lb,
            "lh" => Lh,
            "lw" => Lw,
            "lbu" => Lbu,
            "lhu" => Lhu,
            "sb" => Sb,
            "sh" => Sh,
            "sw" => Sw,
            "addi" => Addi,
            "slti" => Slti,
            "sltiu" => Sltiu,
            "xori" => Xori,
            "ori" => Ori,
            "andi" => Andi,
            "slli" => Slli,
            "srli" => Srli,
            "srai" => Srai,
            "add" => Add,
            "sub" => Sub,
            "sll" => Sll,
            "slt" => Slt,
            "sltu" => Sltu,
            "xor" => Xor,
            "srl" => Srl,
            "sra" => Sra,
            "or" => Or,
            "and" => And,
            "mul" => Mul,
            "mulh" => Mulh,
            "mulhsu" => Mulhsu,
            "mulhu" => Mulhu,
            "div" => Div,
            "divu" => Divu,
            "rem" => Rem,
            "remu" => Remu,
            "fence" | "fence.i" => Fence,
            "ecall" => Ecall,
            "ebreak" => Ebreak,
            "mret" => Mret,
            "wfi" => Wfi,
            "csrrw" => Csrrw,
            "csrrs" => Csrrs,
            "csrrc" => Csrrc,
            "csrrwi" => Csrrwi,
            "csrrsi" => Csrrsi,
            "csrrci" => Csrrci,
            "mac" => Mac,
            "lw_postinc" => LwPostInc,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsaEntry {
    pub mnemonic: String,
    pub mask: u32,
    pub matches: u32,
    pub format: Format,
    /// Cycles beyond the base cost of one.
    pub latency_cycles: u32,
    /// Extra cycles before the destination register can be consumed.
    pub writeback_latency: u32,
    pub class: Class,
    pub sem: Sem,
}

impl IsaEntry {
    /// Whether some word decodes to both entries.
    pub fn conflicts_with(&self, other: &IsaEntry) -> bool {
        let common = self.mask & other.mask;
        (self.matches ^ other.matches) & common == 0
    }
}

#[derive(Deserialize)]
struct RawTable {
    #[allow(dead_code)]
    name: String,
    entries: Vec<RawEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    mnemonic: String,
    mask: String,
    #[serde(rename = "match")]
    matches: String,
    format: String,
    #[serde(default)]
    latency_cycles: u32,
    #[serde(default)]
    writeback_latency: u32,
    class: String,
    semantics: String,
}

fn isa_err(msg: impl Into<String>) -> ConfigError {
    ConfigError::Isa(msg.into())
}

/// Parses one table or extension fragment.
pub fn parse_fragment(text: &str) -> Result<Vec<IsaEntry>, ConfigError> {
    let raw: RawTable = serde_json::from_str(text).map_err(|e| isa_err(e.to_string()))?;
    raw.entries
        .into_iter()
        .map(|r| {
            let word = |s: &str| {
                parse_int_str(s)
                    .and_then(|v| u32::try_from(v).ok())
                    .ok_or_else(|| isa_err(format!("{}: bad encoding `{s}`", r.mnemonic)))
            };
            let format = match r.format.as_str() {
                "R" => Format::R,
                "I" => Format::I,
                "SH" => Format::Shift,
                "L" => Format::Load,
                "LP" => Format::LoadPost,
                "S" => Format::S,
                "B" => Format::B,
                "U" => Format::U,
                "J" => Format::J,
                "CSR" => Format::Csr,
                "CSRI" => Format::CsrImm,
                "N" => Format::None,
                f => return Err(isa_err(format!("{}: unknown format `{f}`", r.mnemonic))),
            };
            let class = match r.class.as_str() {
                "alu" => Class::Alu,
                "mul" => Class::Mul,
                "div" => Class::Div,
                "load" => Class::Load,
                "store" => Class::Store,
                "branch" => Class::Branch,
                "jump" => Class::Jump,
                "csr" => Class::Csr,
                "system" => Class::System,
                c => return Err(isa_err(format!("{}: unknown class `{c}`", r.mnemonic))),
            };
            let sem = Sem::parse(&r.semantics)
                .ok_or_else(|| isa_err(format!("{}: unknown semantics `{}`", r.mnemonic, r.semantics)))?;
            let (mask, matches) = (word(&r.mask)?, word(&r.matches)?);
            if matches & !mask != 0 {
                return Err(isa_err(format!("{}: match has bits outside the mask", r.mnemonic)));
            }
            Ok(IsaEntry {
                mnemonic: r.mnemonic.clone(),
                mask,
                matches,
                format,
                latency_cycles: r.latency_cycles,
                writeback_latency: r.writeback_latency,
                class,
                sem,
            })
        })
        .collect()
}

/// A decoded instruction. `imm` holds the CSR number for CSR formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Insn {
    pub entry: u16,
    pub sem: Sem,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: i32,
}

#[derive(Debug, Clone)]
pub struct IsaTable {
    entries: Vec<IsaEntry>,
    // candidate entries per 7-bit opcode
    buckets: Vec<Vec<u16>>,
}

impl IsaTable {
    pub fn new(entries: Vec<IsaEntry>) -> Result<Self, ConfigError> {
        let mut t = IsaTable { entries: Vec::new(), buckets: vec![Vec::new(); 128] };
        t.register(entries)?;
        Ok(t)
    }

    /// The base RV32IM table.
    pub fn rv32im() -> Self {
        Self::new(parse_fragment(RV32IM).expect("bundled table parses")).expect("bundled table is consistent")
    }

    /// Base table plus named bundled extensions.
    pub fn with_extensions<S: AsRef<str>>(names: &[S]) -> Result<Self, ConfigError> {
        let mut t = Self::rv32im();
        for n in names {
            let text = match n.as_ref() {
                "xdemo" => XDEMO,
                other => return Err(isa_err(format!("unknown extension `{other}`"))),
            };
            t.register(parse_fragment(text)?)?;
        }
        Ok(t)
    }

    /// Adds a fragment; fails without changes if any encoding overlaps.
    pub fn register(&mut self, fragment: Vec<IsaEntry>) -> Result<(), ConfigError> {
        for (i, e) in fragment.iter().enumerate() {
            for other in self.entries.iter().chain(&fragment[..i]) {
                if e.conflicts_with(other) {
                    return Err(isa_err(format!("`{}` conflicts with `{}`", e.mnemonic, other.mnemonic)));
                }
            }
        }
        for e in fragment {
            let ix = self.entries.len() as u16;
            let op_mask = e.mask & 0x7F;
            for op in 0..128u32 {
                if op & op_mask == e.matches & op_mask {
                    self.buckets[op as usize].push(ix);
                }
            }
            self.entries.push(e);
        }
        Ok(())
    }

    pub fn entries(&self) -> &[IsaEntry] {
        &self.entries
    }

    pub fn entry(&self, insn: &Insn) -> &IsaEntry {
        &self.entries[insn.entry as usize]
    }

    pub fn find(&self, mnemonic: &str) -> Option<&IsaEntry> {
        self.entries.iter().find(|e| e.mnemonic == mnemonic)
    }

    pub fn decode(&self, word: u32) -> Option<Insn> {
        let ix = *self.buckets[(word & 0x7F) as usize]
            .iter()
            .find(|&&i| word & self.entries[i as usize].mask == self.entries[i as usize].matches)?;
        let e = &self.entries[ix as usize];
        let rd = ((word >> 7) & 31) as u8;
        let rs1 = ((word >> 15) & 31) as u8;
        let rs2 = ((word >> 20) & 31) as u8;
        let imm = match e.format {
            Format::I | Format::Load | Format::LoadPost => (word as i32) >> 20,
            Format::Shift => ((word >> 20) & 31) as i32,
            Format::S => ((word as i32) >> 25 << 5) | ((word >> 7) & 31) as i32,
            Format::B => {
                ((word as i32) >> 31 << 12)
                    | (((word >> 7) & 1) << 11) as i32
                    | (((word >> 25) & 0x3F) << 5) as i32
                    | (((word >> 8) & 0xF) << 1) as i32
            }
            Format::U => (word & 0xFFFF_F000) as i32,
            Format::J => {
                ((word as i32) >> 31 << 20)
                    | (word & 0x000F_F000) as i32
                    | (((word >> 20) & 1) << 11) as i32
                    | (((word >> 21) & 0x3FF) << 1) as i32
            }
            Format::Csr | Format::CsrImm => ((word >> 20) & 0xFFF) as i32,
            Format::R | Format::None => 0,
        };
        Some(Insn { entry: ix, sem: e.sem, rd, rs1, rs2, imm })
    }

    /// Registers the instruction reads, for hazard checks.
    pub fn sources(&self, insn: &Insn) -> [Option<u8>; 3] {
        let e = &self.entries[insn.entry as usize];
        match e.format {
            Format::R if insn.sem == Sem::Mac => [Some(insn.rs1), Some(insn.rs2), Some(insn.rd)],
            Format::R | Format::S | Format::B => [Some(insn.rs1), Some(insn.rs2), None],
            Format::I | Format::Shift | Format::Load | Format::LoadPost | Format::Csr => [Some(insn.rs1), None, None],
            _ => [None; 3],
        }
    }

    pub fn disasm(&self, insn: &Insn) -> String {
        let e = &self.entries[insn.entry as usize];
        let (mn, rd, rs1, rs2, imm) = (&e.mnemonic, insn.rd, insn.rs1, insn.rs2, insn.imm);
        match e.format {
            Format::R => format!("{mn} x{rd}, x{rs1}, x{rs2}"),
            Format::I | Format::Shift => format!("{mn} x{rd}, x{rs1}, {imm}"),
            Format::Load => format!("{mn} x{rd}, {imm}(x{rs1})"),
            Format::LoadPost => format!("{mn} x{rd}, {imm}(x{rs1}!)"),
            Format::S => format!("{mn} x{rs2}, {imm}(x{rs1})"),
            Format::B => format!("{mn} x{rs1}, x{rs2}, {imm}"),
            Format::U => format!("{mn} x{rd}, {:#x}", (imm as u32) >> 12),
            Format::J => format!("{mn} x{rd}, {imm}"),
            Format::Csr => format!("{mn} x{rd}, {imm:#x}, x{rs1}"),
            Format::CsrImm => format!("{mn} x{rd}, {imm:#x}, {rs1}"),
            Format::None => mn.to_string(),
        }
    }

    /// Encodes operands into the entry for `mnemonic`. `imm` is the CSR
    /// number for CSR formats, whose `rs1` doubles as the 5-bit immediate.
    pub fn encode(&self, mnemonic: &str, rd: u32, rs1: u32, rs2: u32, imm: i32) -> Option<u32> {
        let e = self.find(mnemonic)?;
        let (rd, rs1, rs2) = (rd & 31, rs1 & 31, rs2 & 31);
        let u = imm as u32;
        let fields = match e.format {
            Format::R => (rd << 7) | (rs1 << 15) | (rs2 << 20),
            Format::I | Format::Load | Format::LoadPost => (rd << 7) | (rs1 << 15) | ((u & 0xFFF) << 20),
            Format::Shift => (rd << 7) | (rs1 << 15) | ((u & 31) << 20),
            Format::S => ((u & 31) << 7) | (rs1 << 15) | (rs2 << 20) | (((u >> 5) & 0x7F) << 25),
            Format::B => {
                (((u >> 11) & 1) << 7)
                    | (((u >> 1) & 0xF) << 8)
                    | (rs1 << 15)
                    | (rs2 << 20)
                    | (((u >> 5) & 0x3F) << 25)
                    | (((u >> 12) & 1) << 31)
            }
            Format::U => (rd << 7) | (u & 0xFFFF_F000),
            Format::J => {
                (rd << 7)
                    | (u & 0x000F_F000)
                    | (((u >> 11) & 1) << 20)
                    | (((u >> 1) & 0x3FF) << 21)
                    | (((u >> 20) & 1) << 31)
            }
            Format::Csr | Format::CsrImm => (rd << 7) | (rs1 << 15) | ((u & 0xFFF) << 20),
            Format::None => 0,
        };
        Some(e.matches | (fields & !e.mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_reference_words() {
        let t = IsaTable::rv32im();
        let i = t.decode(0x0050_0093).unwrap();
        assert_eq!(t.disasm(&i), "addi x1, x0, 5");
        let m = t.decode(0x02A2_8333).unwrap();
        assert_eq!(t.disasm(&m), "mul x6, x5, x10");
        assert!(t.decode(0).is_none());
    }

    #[test]
    fn bundled_table_has_no_overlaps() {
        let t = IsaTable::with_extensions(&["xdemo"]).unwrap();
        for (i, a) in t.entries().iter().enumerate() {
            for b in &t.entries()[i + 1..] {
                assert!(!a.conflicts_with(b), "{} vs {}", a.mnemonic, b.mnemonic);
            }
        }
    }

    #[test]
    fn extension_decodes_only_when_registered() {
        let base = IsaTable::rv32im();
        let ext = IsaTable::with_extensions(&["xdemo"]).unwrap();
        let word = ext.encode("p.mac", 3, 4, 5, 0).unwrap();
        assert!(base.decode(word).is_none());
        let i = ext.decode(word).unwrap();
        assert_eq!(i.sem, Sem::Mac);
        assert_eq!(ext.disasm(&i), "p.mac x3, x4, x5");
    }

    #[test]
    fn conflicting_fragment_is_rejected_naming_both() {
        let mut t = IsaTable::rv32im();
        let add = t.find("add").unwrap().clone();
        let dup = IsaEntry { mnemonic: "my.add".into(), ..add };
        let err = t.register(vec![dup]).unwrap_err().to_string();
        assert!(err.contains("my.add") && err.contains("`add`"), "{err}");
        assert!(IsaTable::with_extensions(&["nope"]).is_err());
    }

    #[test]
    fn encode_decode_round_trip_over_formats() {
        let t = IsaTable::with_extensions(&["xdemo"]).unwrap();
        let cases: &[(&str, u32, u32, u32, i32)] = &[
            ("addi", 1, 2, 0, -2048),
            ("slli", 3, 4, 0, 31),
            ("lw", 5, 6, 0, 2047),
            ("p.lw", 5, 6, 0, 4),
            ("sw", 0, 7, 8, -4),
            ("beq", 0, 1, 2, -4096),
            ("bgeu", 0, 1, 2, 4094),
            ("lui", 9, 0, 0, 0x7FFF_F000u32 as i32),
            ("jal", 1, 0, 0, -1_048_576),
            ("jal", 1, 0, 0, 1_048_574),
            ("csrrs", 10, 0, 0, 0xC00),
            ("divu", 11, 12, 13, 0),
        ];
        for &(mn, rd, rs1, rs2, imm) in cases {
            let w = t.encode(mn, rd, rs1, rs2, imm).unwrap();
            let i = t.decode(w).unwrap();
            assert_eq!(t.entry(&i).mnemonic, mn);
            assert_eq!(i.imm, imm, "{mn}");
        }
    }
}
