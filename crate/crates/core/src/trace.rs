//! Text traces and VCD waveforms.
//!
//! Trace lines look like
//! `50000ps cluster:20 [cluster/pe0/insn] addi x1, x0, 5`
//! and are emitted only for paths matching one of the enabled glob
//! patterns. Components resolve their trace switches once at init, so a
//! disabled trace costs a branch and no formatting.

use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use crate::engine::Picos;

/// In-memory writer that can be cloned and inspected after a run.
#[derive(Clone, Default)]
pub struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.contents()).into_owned()
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct TraceSink {
    patterns: Vec<glob::Pattern>,
    out: Box<dyn Write>,
    pub lines: u64,
}

impl TraceSink {
    pub fn disabled() -> Self {
        TraceSink { patterns: Vec::new(), out: Box::new(io::sink()), lines: 0 }
    }

    pub fn new<S: AsRef<str>>(patterns: &[S], out: Box<dyn Write>) -> Result<Self, glob::PatternError> {
        let patterns = patterns.iter().map(|p| glob::Pattern::new(p.as_ref())).collect::<Result<_, _>>()?;
        Ok(TraceSink { patterns, out, lines: 0 })
    }

    pub fn enabled(&self, path: &str) -> bool {
        self.patterns.iter().any(|p| p.matches(path))
    }

    pub fn any_enabled(&self) -> bool {
        !self.patterns.is_empty()
    }

    pub fn emit(&mut self, time_ps: Picos, domain: &str, cycle: u64, path: &str, msg: &str) {
        let _ = writeln!(self.out, "{time_ps}ps {domain}:{cycle} [{path}] {msg}");
        self.lines += 1;
    }

    pub fn flush(&mut self) {
        let _ = self.out.flush();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalId(pub u32);

struct Signal {
    scope: String,
    name: String,
    width: u32,
    code: String,
    value: u64,
}

/// Minimal VCD writer with a 1 ps timescale.
///
/// Signals must be registered before [`VcdWriter::begin`]; the header and
/// initial `$dumpvars` block are written there.
pub struct VcdWriter {
    signals: Vec<Signal>,
    out: Box<dyn Write>,
    started: bool,
    last_time: Option<Picos>,
}

fn id_code(mut n: u32) -> String {
    // printable identifier characters '!'..='~'
    let mut s = String::new();
    loop {
        s.push((b'!' + (n % 94) as u8) as char);
        n /= 94;
        if n == 0 {
            break;
        }
        n -= 1;
    }
    s
}

impl VcdWriter {
    pub fn new(out: Box<dyn Write>) -> Self {
        VcdWriter { signals: Vec::new(), out, started: false, last_time: None }
    }

    /// `path` is split at the last `/` into scope and name.
    pub fn register(&mut self, path: &str, width: u32, initial: u64) -> SignalId {
        assert!(!self.started, "signals must be registered before the dump starts");
        let (scope, name) = path.rsplit_once('/').unwrap_or(("top", path));
        let id = SignalId(self.signals.len() as u32);
        self.signals.push(Signal {
            scope: scope.replace('/', "."),
            name: name.to_string(),
            width,
            code: id_code(id.0),
            value: initial,
        });
        id
    }

    fn write_value(out: &mut dyn Write, s: &Signal) -> io::Result<()> {
        if s.width == 1 {
            writeln!(out, "{}{}", s.value & 1, s.code)
        } else {
            writeln!(out, "b{:b} {}", s.value, s.code)
        }
    }

    pub fn begin(&mut self) -> io::Result<()> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        let out = &mut self.out;
        writeln!(out, "$timescale 1ps $end")?;
        let mut order: Vec<usize> = (0..self.signals.len()).collect();
        order.sort_by(|&a, &b| self.signals[a].scope.cmp(&self.signals[b].scope));
        let mut current: Option<&str> = None;
        for &i in &order {
            let s = &self.signals[i];
            if current != Some(s.scope.as_str()) {
                if current.is_some() {
                    writeln!(out, "$upscope $end")?;
                }
                writeln!(out, "$scope module {} $end", s.scope)?;
                current = Some(s.scope.as_str());
            }
            writeln!(out, "$var wire {} {} {} $end", s.width, s.code, s.name)?;
        }
        if current.is_some() {
            writeln!(out, "$upscope $end")?;
        }
        writeln!(out, "$enddefinitions $end")?;
        writeln!(out, "#0")?;
        writeln!(out, "$dumpvars")?;
        for s in &self.signals {
            Self::write_value(out, s)?;
        }
        writeln!(out, "$end")?;
        self.last_time = Some(0);
        Ok(())
    }

    /// Records a change; repeated values are dropped.
    pub fn change(&mut self, sig: SignalId, value: u64, at_ps: Picos) -> Result<(), crate::SimError> {
        let s = self
            .signals
            .get_mut(sig.0 as usize)
            .ok_or_else(|| crate::SimError::UnknownSignal(format!("#{}", sig.0)))?;
        if s.value == value {
            return Ok(());
        }
        s.value = value;
        if !self.started {
            return Ok(());
        }
        if self.last_time != Some(at_ps) {
            let _ = writeln!(self.out, "#{at_ps}");
            self.last_time = Some(at_ps);
        }
        let _ = Self::write_value(&mut self.out, &self.signals[sig.0 as usize]);
        Ok(())
    }

    pub fn signal_count(&self) -> usize {
        self.signals.len()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.begin()?;
        self.out.flush()
    }
}
