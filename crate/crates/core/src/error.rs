use thiserror::Error;

/// Simulator bugs and platform wiring faults. These abort a run.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event {0} enqueued twice")]
    DoubleEnqueue(u32),
    #[error("cancel of event {0}, which is not enqueued")]
    CancelIdle(u32),
    #[error("port {0} is not bound")]
    Unbound(String),
    #[error("request re-entered component {0} while it was busy")]
    Reentrant(String),
    #[error("wake of {0}, which is not a sleeping core")]
    BadWake(String),
    #[error("unregistered waveform signal {0}")]
    UnknownSignal(String),
    #[error("{0}")]
    Other(String),
}

/// Errors found while parsing, validating, or elaborating a platform.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("{path}: unknown component kind `{kind}`")]
    UnknownKind { path: String, kind: String },
    #[error("{path}: missing required parameter `{key}`")]
    MissingParam { path: String, key: String },
    #[error("address ranges of {a} and {b} overlap")]
    Overlap { a: String, b: String },
    #[error("{path}: frequency {hz} Hz has a non-integral period in picoseconds")]
    NonIntegralPeriod { path: String, hz: u64 },
    #[error("cannot bind {master} -> {slave}: {msg}")]
    Bind { master: String, slave: String, msg: String },
    #[error("port {0} is not bound")]
    UnboundPort(String),
    #[error("override `{0}`: {1}")]
    Override(String, String),
    #[error("ISA table: {0}")]
    Isa(String),
}

/// Errors raised while loading a guest binary.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(String),
    #[error("not a 32-bit ELF (class {0})")]
    Class(u8),
    #[error("ELF machine {0:#x} is not RISC-V")]
    Machine(u16),
    #[error("ELF parse error: {0}")]
    Elf(String),
    #[error("segment {index} at {addr:#010x}+{len:#x} is outside any memory")]
    Segment { index: usize, addr: u32, len: u32 },
    #[error("line {line}: {msg}")]
    Image { line: usize, msg: String },
    #[error("{addr:#010x}+{len:#x} is outside any memory")]
    Unmapped { addr: u32, len: u32 },
}
