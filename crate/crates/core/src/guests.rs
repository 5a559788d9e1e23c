//! The bundled guest programs and the reference platform they target.
//!
//! Sources live in `guests/src` at the workspace root and are embedded here,
//! so tests and the command line can assemble them without a cross
//! toolchain. Each guest reads its parameters from a word block at
//! [`PARAMS`] and leaves results at [`RESULTS`].

use crate::asm::{AsmError, Assembler, Program};
use crate::isa::IsaTable;
use crate::platform::Platform;
use crate::{ConfigError, LoadError};

pub const TEXT_BASE: u32 = 0x1C00_0000;
pub const PARAMS: u32 = 0x1C07_FF00;
pub const RESULTS: u32 = 0x1C07_FE00;
pub const L3_BASE: u32 = 0x2000_0000;

/// The reference platform description.
pub const PULP_OPEN: &str = include_str!("../../../platforms/pulp-open.json");

const INCLUDES: &[(&str, &str)] = &[
    ("pulp.inc", include_str!("../../../guests/src/pulp.inc")),
    ("crt.inc", include_str!("../../../guests/src/crt.inc")),
    ("conv_init.inc", include_str!("../../../guests/src/conv_init.inc")),
];

const SOURCES: &[(&str, &str)] = &[
    ("arith", include_str!("../../../guests/src/arith.S")),
    ("hello", include_str!("../../../guests/src/hello.S")),
    ("spin", include_str!("../../../guests/src/spin.S")),
    ("matmul", include_str!("../../../guests/src/matmul.S")),
    ("iir", include_str!("../../../guests/src/iir.S")),
    ("fft", include_str!("../../../guests/src/fft.S")),
    ("conv", include_str!("../../../guests/src/conv.S")),
    ("conv_accel", include_str!("../../../guests/src/conv_accel.S")),
    ("stream", include_str!("../../../guests/src/stream.S")),
    ("overlap", include_str!("../../../guests/src/overlap.S")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Assembles a bundled guest.
pub fn assemble(name: &str) -> Result<Program, AsmError> {
    let src = source(name).ok_or_else(|| AsmError { file: name.into(), line: 0, msg: "no such guest".into() })?;
    let isa = IsaTable::rv32im();
    let mut a = Assembler::new(&isa, TEXT_BASE).section(".params", PARAMS);
    for (n, t) in INCLUDES {
        a = a.include(n, t);
    }
    a.assemble(&format!("{name}.S"), src)
}

/// Memory image text of a bundled guest, as checked in under `guests/`.
pub fn image(name: &str) -> Result<String, AsmError> {
    Ok(assemble(name)?.to_image(&format!("{name}: generated from guests/src/{name}.S")))
}

/// Elaborates the reference platform with `key=value` overrides.
pub fn platform<S: AsRef<str>>(overrides: &[S]) -> Result<Platform, ConfigError> {
    crate::elaborate::build(PULP_OPEN, overrides)
}

/// Writes a program into memory, replaces the leading parameter words with
/// `params`, and points every core at the entry.
pub fn load(p: &mut Platform, prog: &Program, params: &[u32]) -> Result<(), LoadError> {
    for (base, words) in &prog.blocks {
        let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
        p.poke(*base, &bytes)?;
    }
    for (i, &v) in params.iter().enumerate() {
        p.poke_u32(PARAMS + 4 * i as u32, v)?;
    }
    crate::cpu::set_entry(p, prog.entry);
    Ok(())
}

/// Reads `n` result words.
pub fn results(p: &mut Platform, n: usize) -> Vec<u32> {
    (0..n).map(|i| p.peek_u32(RESULTS + 4 * i as u32).unwrap_or(0)).collect()
}
