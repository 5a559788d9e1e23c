//! An event-driven, timing-approximate simulator for PULP-style RISC-V
//! platforms: a fabric controller plus a multi-core cluster with banked
//! scratchpad, DMA, instruction caches, an I/O subsystem, and a convolution
//! accelerator, all assembled at runtime from a JSON description.

pub mod accel;
pub mod asm;
pub mod component;
pub mod cpu;
pub mod dma;
pub mod elaborate;
pub mod event_unit;
pub mod guests;
pub mod icache;
pub mod isa;
pub mod loader;
pub mod config;
pub mod engine;
mod error;
pub mod interconnect;
pub mod io;
pub mod mem;
pub mod platform;
pub mod trace;

pub use component::{Component, ComponentId, Request, Status};
pub use config::ArchDescriptor;
pub use error::{ConfigError, LoadError, SimError};
pub use platform::{Platform, RunOutcome};
