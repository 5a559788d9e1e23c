//! Guest program loading: ELF32 RISC-V executables and a plain-text memory
//! image format.
//!
//! Memory images hold one directive per line:
//!
//! ```text
//! # comment
//! @1C000000 00500093        word at an address (more words may follow)
//! @entry 1C000000           entry point
//! ```

use goblin::elf::{program_header::PT_LOAD, Elf};

use crate::platform::Platform;
use crate::LoadError;

pub const EM_RISCV: u16 = 0xF3;

/// Writes the program into the platform's memories and returns its entry.
pub fn load_bytes(p: &mut Platform, bytes: &[u8]) -> Result<u32, LoadError> {
    if bytes.starts_with(b"\x7fELF") {
        load_elf(p, bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|_| LoadError::Image { line: 0, msg: "not ELF and not text".into() })?;
        load_image(p, text)
    }
}

pub fn load_file(p: &mut Platform, path: &std::path::Path) -> Result<u32, LoadError> {
    let bytes = std::fs::read(path).map_err(|e| LoadError::Io(format!("{}: {e}", path.display())))?;
    load_bytes(p, &bytes)
}

pub fn load_elf(p: &mut Platform, bytes: &[u8]) -> Result<u32, LoadError> {
    let class = bytes.get(4).copied().unwrap_or(0);
    if class != 1 {
        return Err(LoadError::Class(class));
    }
    let elf = Elf::parse(bytes).map_err(|e| LoadError::Elf(e.to_string()))?;
    if !elf.little_endian {
        return Err(LoadError::Elf("big-endian ELF".into()));
    }
    if elf.header.e_machine != EM_RISCV {
        return Err(LoadError::Machine(elf.header.e_machine));
    }
    for (index, ph) in elf.program_headers.iter().enumerate() {
        if ph.p_type != PT_LOAD || ph.p_memsz == 0 {
            continue;
        }
        let addr = ph.p_paddr as u32;
        let len = ph.p_memsz as u32;
        let seg_err = || LoadError::Segment { index, addr, len };
        if !p.is_mapped(addr, len as usize) {
            return Err(seg_err());
        }
        let start = ph.p_offset as usize;
        let file = bytes.get(start..start + ph.p_filesz as usize).ok_or_else(|| LoadError::Elf(format!("segment {index} exceeds the file")))?;
        let mut data = file.to_vec();
        data.resize(len as usize, 0);
        p.poke(addr, &data).map_err(|_| seg_err())?;
    }
    Ok(elf.entry as u32)
}

fn hex(s: &str) -> Option<u32> {
    u32::from_str_radix(s.trim_start_matches("0x"), 16).ok()
}

pub fn load_image(p: &mut Platform, text: &str) -> Result<u32, LoadError> {
    let mut entry = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: &str| LoadError::Image { line, msg: msg.into() };
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let head = toks.next().unwrap_or("");
        let Some(target) = head.strip_prefix('@') else {
            return Err(err("expected `@<addr> <word>...` or `@entry <addr>`"));
        };
        if target == "entry" {
            let a = toks.next().and_then(hex).ok_or_else(|| err("bad entry address"))?;
            if toks.next().is_some() {
                return Err(err("trailing text after entry"));
            }
            entry = Some(a);
            continue;
        }
        let mut addr = hex(target).ok_or_else(|| err("bad address"))?;
        let mut words = 0;
        for t in toks {
            if t.len() > 8 {
                return Err(err("word wider than 32 bits"));
            }
            let w = hex(t).ok_or_else(|| err("bad hex word"))?;
            p.poke(addr, &w.to_le_bytes()).map_err(|_| err("address outside any memory"))?;
            addr = addr.wrapping_add(4);
            words += 1;
        }
        if words == 0 {
            return Err(err("address without data"));
        }
    }
    entry.ok_or(LoadError::Image { line: 0, msg: "missing @entry".into() })
}

/// Renders `(addr, words)` blocks and an entry as a memory image.
pub fn write_image(blocks: &[(u32, Vec<u32>)], entry: u32, header: &str) -> String {
    let mut s = String::new();
    for l in header.lines() {
        s.push_str(&format!("# {l}\n"));
    }
    s.push_str(&format!("@entry {entry:08X}\n"));
    for (base, words) in blocks {
        for (i, chunk) in words.chunks(4).enumerate() {
            s.push_str(&format!("@{:08X}", base + 16 * i as u32));
            for w in chunk {
                s.push_str(&format!(" {w:08X}"));
            }
            s.push('\n');
        }
    }
    s
}
