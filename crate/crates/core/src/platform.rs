//! The assembled platform: component instances, their bindings, and the
//! context every component callback receives.
//!
//! Components are stored boxed and detached while one of their callbacks
//! runs. That lets a callback reach any *other* component through the
//! platform (a request chain is a nest of such calls), while an attempt to
//! re-enter a busy component is caught and reported.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde_json::{json, Value};

use crate::component::{Component, ComponentId, Direction, PortDecl, PortIx, Request, Status};
use crate::engine::{ClockDomain, Cycle, DomainId, EventId, Next, Picos, TimeEngine};
use crate::trace::{SignalId, TraceSink, VcdWriter};
use crate::{ConfigError, LoadError, SimError};

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    /// The guest wrote its status to the simulator-control device.
    Exit(u32),
    /// The cycle cap was reached first.
    Timeout,
    /// No event is left anywhere.
    IdleDeadlock,
    /// A wiring fault or simulator bug aborted the run.
    Fatal(SimError),
}

impl RunOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            RunOutcome::Exit(_) => "exit",
            RunOutcome::Timeout => "timeout",
            RunOutcome::IdleDeadlock => "idle-deadlock",
            RunOutcome::Fatal(_) => "fatal",
        }
    }
}

struct Meta {
    path: String,
    kind: String,
    domain: Option<DomainId>,
    params: Value,
    ports: Vec<PortDecl>,
    peers: Vec<Option<(ComponentId, PortIx)>>,
}

pub struct Platform {
    engine: TimeEngine,
    comps: Vec<Option<Box<dyn Component>>>,
    meta: Vec<Meta>,
    by_path: HashMap<String, ComponentId>,
    /// Non-instantiated entries (groups) listed in the dump.
    passive: Vec<(String, String, Value)>,
    bindings: Vec<(String, String)>,
    functional: Vec<(u64, u64, ComponentId)>,
    trace: TraceSink,
    vcd: Option<VcdWriter>,
    initialized: bool,
    exit: Option<u32>,
    fatal: Option<SimError>,
    console: Vec<u8>,
    hop_log: Option<Vec<(ComponentId, u64)>>,
    outcome: Option<RunOutcome>,
    wall_s: f64,
}

impl Default for Platform {
    fn default() -> Self {
        Self::new()
    }
}

impl Platform {
    pub fn new() -> Self {
        Platform {
            engine: TimeEngine::new(),
            comps: Vec::new(),
            meta: Vec::new(),
            by_path: HashMap::new(),
            passive: Vec::new(),
            bindings: Vec::new(),
            functional: Vec::new(),
            trace: TraceSink::disabled(),
            vcd: None,
            initialized: false,
            exit: None,
            fatal: None,
            console: Vec::new(),
            hop_log: None,
            outcome: None,
            wall_s: 0.0,
        }
    }

    // ---- construction ----

    pub fn add_domain(&mut self, name: &str, frequency_hz: u64, window: usize) -> DomainId {
        self.engine.add_domain(ClockDomain::new(name, frequency_hz, window))
    }

    pub fn add_component(
        &mut self,
        path: &str,
        kind: &str,
        domain: Option<DomainId>,
        params: Value,
        comp: Box<dyn Component>,
    ) -> Result<ComponentId, ConfigError> {
        if self.by_path.contains_key(path) {
            return Err(ConfigError::Invalid { path: path.into(), msg: "duplicate component path".into() });
        }
        let id = ComponentId(self.comps.len() as u32);
        let ports = comp.ports();
        let peers = vec![None; ports.len()];
        self.meta.push(Meta { path: path.into(), kind: kind.into(), domain, params, ports, peers });
        self.comps.push(Some(comp));
        self.by_path.insert(path.into(), id);
        Ok(id)
    }

    pub(crate) fn add_passive(&mut self, path: &str, kind: &str, params: Value) {
        self.passive.push((path.into(), kind.into(), params));
    }

    /// Makes `[base, base+size)` reachable through [`Platform::peek`] and
    /// [`Platform::poke`]; the component must expose a backing store.
    pub fn map_functional(&mut self, id: ComponentId, base: u64, size: u64) {
        self.functional.push((base, size, id));
        self.functional.sort_by_key(|f| f.0);
    }

    fn resolve_port(&self, endpoint: &str) -> Result<(ComponentId, PortIx), String> {
        let (path, port) = crate::config::split_port(endpoint).ok_or_else(|| format!("`{endpoint}` is not component/port"))?;
        let id = *self.by_path.get(path).ok_or_else(|| format!("no component `{path}`"))?;
        let ix = self.meta[id.0 as usize]
            .ports
            .iter()
            .position(|p| p.name == port)
            .ok_or_else(|| format!("`{path}` has no port `{port}`"))?;
        Ok((id, ix as PortIx))
    }

    pub fn bind(&mut self, master: &str, slave: &str) -> Result<(), ConfigError> {
        let err = |msg: String| ConfigError::Bind { master: master.into(), slave: slave.into(), msg };
        let (mid, mport) = self.resolve_port(master).map_err(err)?;
        let (sid, sport) = self.resolve_port(slave).map_err(err)?;
        let mdir = self.meta[mid.0 as usize].ports[mport as usize].direction;
        let sdir = self.meta[sid.0 as usize].ports[sport as usize].direction;
        if mdir != Direction::Master || sdir != Direction::Slave {
            return Err(err("direction mismatch".into()));
        }
        let slot = &mut self.meta[mid.0 as usize].peers[mport as usize];
        if slot.is_some() {
            return Err(err("master port is already bound".into()));
        }
        *slot = Some((sid, sport));
        self.bindings.push((master.into(), slave.into()));
        Ok(())
    }

    /// Checks that every master port is bound.
    pub fn check_bindings(&self) -> Result<(), ConfigError> {
        for m in &self.meta {
            for (p, peer) in m.ports.iter().zip(&m.peers) {
                if p.direction == Direction::Master && peer.is_none() {
                    return Err(ConfigError::UnboundPort(format!("{}/{}", m.path, p.name)));
                }
            }
        }
        Ok(())
    }

    /// Routes trace output. Must precede the first run.
    pub fn set_trace(&mut self, sink: TraceSink) {
        assert!(!self.initialized, "trace sinks are fixed at init");
        self.trace = sink;
    }

    pub fn set_vcd(&mut self, vcd: VcdWriter) {
        assert!(!self.initialized, "waveform signals are fixed at init");
        self.vcd = Some(vcd);
    }

    /// Records `(component reached, latency so far)` for every hop.
    pub fn enable_hop_log(&mut self) {
        self.hop_log = Some(Vec::new());
    }

    pub fn take_hop_log(&mut self) -> Vec<(String, u64)> {
        let log = self.hop_log.as_mut().map(std::mem::take).unwrap_or_default();
        log.into_iter().map(|(id, l)| (self.meta[id.0 as usize].path.clone(), l)).collect()
    }

    /// Runs every component's `init` in creation order (once).
    pub fn init(&mut self) {
        if self.initialized {
            return;
        }
        self.initialized = true;
        for i in 0..self.comps.len() {
            let id = ComponentId(i as u32);
            let mut c = self.comps[i].take().expect("component present at init");
            c.init(id, self);
            self.comps[i] = Some(c);
        }
    }

    // ---- lookup ----

    pub fn engine(&self) -> &TimeEngine {
        &self.engine
    }

    pub fn id_of(&self, path: &str) -> Option<ComponentId> {
        self.by_path.get(path).copied()
    }

    pub fn path(&self, id: ComponentId) -> &str {
        &self.meta[id.0 as usize].path
    }

    pub fn kind(&self, id: ComponentId) -> &str {
        &self.meta[id.0 as usize].kind
    }

    pub fn params(&self, id: ComponentId) -> &Value {
        &self.meta[id.0 as usize].params
    }

    pub fn component_ids(&self) -> impl Iterator<Item = ComponentId> {
        (0..self.comps.len() as u32).map(ComponentId)
    }

    pub fn ids_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = ComponentId> + 'a {
        self.component_ids().filter(move |&id| self.kind(id) == kind)
    }

    pub fn get<T: Component>(&self, path: &str) -> Option<&T> {
        let id = self.id_of(path)?;
        self.comps[id.0 as usize].as_ref()?.as_any().downcast_ref()
    }

    pub fn get_mut<T: Component>(&mut self, path: &str) -> Option<&mut T> {
        let id = self.id_of(path)?;
        self.comps[id.0 as usize].as_mut()?.as_any_mut().downcast_mut()
    }

    pub fn get_by_id_mut<T: Component>(&mut self, id: ComponentId) -> Option<&mut T> {
        self.comps[id.0 as usize].as_mut()?.as_any_mut().downcast_mut()
    }

    /// Component bound to master port `port` of `id`.
    pub fn peer_of(&self, id: ComponentId, port: PortIx) -> Option<ComponentId> {
        self.meta[id.0 as usize].peers.get(port as usize).copied().flatten().map(|p| p.0)
    }

    pub fn period(&self, d: DomainId) -> Picos {
        self.engine.domain(d).period_ps()
    }

    pub fn domain_of(&self, id: ComponentId) -> Option<DomainId> {
        self.meta[id.0 as usize].domain
    }

    pub fn now_ps(&self) -> Picos {
        self.engine.now_ps()
    }

    pub fn console(&self) -> &[u8] {
        &self.console
    }

    pub fn outcome(&self) -> Option<&RunOutcome> {
        self.outcome.as_ref()
    }

    // ---- services for components ----

    pub fn new_event(&mut self, domain: DomainId, owner: ComponentId, tag: u32) -> EventId {
        self.engine.new_event(domain, owner.0, tag)
    }

    pub fn current_cycle(&mut self, d: DomainId) -> Cycle {
        self.engine.current_cycle(d)
    }

    pub fn enqueue(&mut self, ev: EventId, delta: u64) {
        if let Err(e) = self.engine.enqueue(ev, delta) {
            self.raise(e);
        }
    }

    pub fn enqueue_with(&mut self, ev: EventId, delta: u64, payload: u64) {
        self.engine.set_payload(ev, payload);
        self.enqueue(ev, delta);
    }

    pub fn cancel(&mut self, ev: EventId) {
        if let Err(e) = self.engine.cancel(ev) {
            self.raise(e);
        }
    }

    pub fn is_enqueued(&self, ev: EventId) -> bool {
        self.engine.is_enqueued(ev)
    }

    /// Aborts the run after the current callback returns.
    pub fn raise(&mut self, e: SimError) {
        if self.fatal.is_none() {
            self.fatal = Some(e);
        }
    }

    pub fn request_exit(&mut self, status: u32) {
        if self.exit.is_none() {
            self.exit = Some(status);
        }
    }

    pub fn putc(&mut self, byte: u8) {
        self.console.push(byte);
    }

    /// Sends `req` out of master port `port` of `from`; returns the status of
    /// the whole chain.
    pub fn send(&mut self, from: ComponentId, port: PortIx, req: &mut Request) -> Status {
        let peer = self.meta[from.0 as usize].peers.get(port as usize).copied().flatten();
        let Some((to, to_port)) = peer else {
            let name = self.meta[from.0 as usize].ports.get(port as usize).map_or("?", |p| p.name.as_str());
            let e = SimError::Unbound(format!("{}/{}", self.path(from), name));
            self.raise(e);
            req.status = Status::BusError;
            return Status::BusError;
        };
        if let Some(log) = &mut self.hop_log {
            log.push((to, req.latency_cycles));
        }
        let Some(mut c) = self.comps[to.0 as usize].take() else {
            let e = SimError::Reentrant(self.path(to).to_string());
            self.raise(e);
            req.status = Status::BusError;
            return Status::BusError;
        };
        let s = c.handle(to_port, req, self);
        self.comps[to.0 as usize] = Some(c);
        if s == Status::BusError {
            req.status = Status::BusError;
        }
        s
    }

    /// Drives the wire on master port `port` of `from`.
    pub fn signal(&mut self, from: ComponentId, port: PortIx, value: u32) {
        let Some((to, to_port)) = self.meta[from.0 as usize].peers.get(port as usize).copied().flatten() else {
            let e = SimError::Unbound(format!("{}#{port}", self.path(from)));
            self.raise(e);
            return;
        };
        match self.comps[to.0 as usize].take() {
            Some(mut c) => {
                c.on_signal(to_port, value, self);
                self.comps[to.0 as usize] = Some(c);
            }
            None => {
                let e = SimError::Reentrant(self.path(to).to_string());
                self.raise(e);
            }
        }
    }

    /// Resumes a component parked by a `Blocked` response.
    pub fn wake(&mut self, target: ComponentId, value: u32, at_ps: Picos) {
        let ok = match self.comps[target.0 as usize].take() {
            Some(mut c) => {
                let ok = c.on_wake(value, at_ps, self);
                self.comps[target.0 as usize] = Some(c);
                ok
            }
            None => false,
        };
        if !ok {
            let e = SimError::BadWake(self.path(target).to_string());
            self.raise(e);
        }
    }

    fn functional_target(&self, addr: u32, len: usize) -> Result<ComponentId, LoadError> {
        let (a, l) = (addr as u64, len as u64);
        self.functional
            .iter()
            .find(|&&(b, s, _)| a >= b && a + l <= b + s)
            .map(|f| f.2)
            .ok_or(LoadError::Unmapped { addr, len: len as u32 })
    }

    /// Zero-time read of mapped memory contents.
    pub fn peek(&mut self, addr: u32, out: &mut [u8]) -> Result<(), LoadError> {
        let id = self.functional_target(addr, out.len())?;
        let unmapped = LoadError::Unmapped { addr, len: out.len() as u32 };
        let b = self.comps[id.0 as usize].as_mut().and_then(|c| c.backing()).ok_or(unmapped.clone())?;
        b.peek(addr, out).map_err(|_| unmapped)
    }

    /// Zero-time write of mapped memory contents; no timing side effects.
    pub fn poke(&mut self, addr: u32, data: &[u8]) -> Result<(), LoadError> {
        let id = self.functional_target(addr, data.len())?;
        let unmapped = LoadError::Unmapped { addr, len: data.len() as u32 };
        let b = self.comps[id.0 as usize].as_mut().and_then(|c| c.backing()).ok_or(unmapped.clone())?;
        b.poke(addr, data).map_err(|_| unmapped)
    }

    pub fn peek_u32(&mut self, addr: u32) -> Result<u32, LoadError> {
        let mut b = [0u8; 4];
        self.peek(addr, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn poke_u32(&mut self, addr: u32, v: u32) -> Result<(), LoadError> {
        self.poke(addr, &v.to_le_bytes())
    }

    pub fn is_mapped(&self, addr: u32, len: usize) -> bool {
        self.functional_target(addr, len).is_ok()
    }

    pub fn trace_enabled(&self, path: &str) -> bool {
        self.trace.enabled(path)
    }

    /// Emits one trace line stamped with `domain`'s current cycle.
    pub fn trace(&mut self, domain: DomainId, path: &str, msg: &str) {
        let d = self.engine.domain(domain);
        let cycle = d.cycles_in_domain(self.engine.now_ps());
        let name = d.name().to_string();
        self.trace.emit(self.engine.now_ps(), &name, cycle, path, msg);
    }

    pub fn vcd_register(&mut self, path: &str, width: u32, initial: u64) -> Option<SignalId> {
        self.vcd.as_mut().map(|v| v.register(path, width, initial))
    }

    pub fn vcd_change(&mut self, sig: Option<SignalId>, value: u64) {
        let now = self.engine.now_ps();
        if let (Some(v), Some(sig)) = (self.vcd.as_mut(), sig) {
            if let Err(e) = v.change(sig, value, now) {
                self.raise(e);
            }
        }
    }

    // ---- running ----

    fn dispatch(&mut self, id: EventId) {
        let (owner, tag, payload) = self.engine.owner(id);
        match self.comps[owner as usize].take() {
            Some(mut c) => {
                c.on_event(tag, payload, self);
                self.comps[owner as usize] = Some(c);
            }
            None => {
                let e = SimError::Reentrant(self.meta[owner as usize].path.clone());
                self.raise(e);
            }
        }
    }

    /// Smallest clock period among all domains.
    pub fn fastest_period(&self) -> Option<Picos> {
        self.engine.domains().iter().map(|d| d.period_ps()).min()
    }

    /// Runs until exit, idleness, or `max_cycles` cycles of the fastest
    /// domain have elapsed.
    pub fn run(&mut self, max_cycles: Option<u64>) -> RunOutcome {
        self.init();
        if let Some(v) = self.vcd.as_mut() {
            let _ = v.begin();
        }
        let limit = max_cycles.map(|m| m.saturating_sub(1) * self.fastest_period().unwrap_or(1));
        let start = Instant::now();
        let outcome = loop {
            if let Some(e) = self.fatal.take() {
                break RunOutcome::Fatal(e);
            }
            if let Some(code) = self.exit {
                break RunOutcome::Exit(code);
            }
            match self.engine.next_event(limit) {
                Next::Event(id) => self.dispatch(id),
                Next::Idle => break RunOutcome::IdleDeadlock,
                Next::Limit => break RunOutcome::Timeout,
            }
        };
        for i in 0..self.comps.len() {
            if let Some(mut c) = self.comps[i].take() {
                c.finish(self);
                self.comps[i] = Some(c);
            }
        }
        self.wall_s += start.elapsed().as_secs_f64();
        self.trace.flush();
        if let Some(v) = self.vcd.as_mut() {
            let _ = v.flush();
        }
        self.outcome = Some(outcome.clone());
        outcome
    }

    // ---- reports ----

    /// Sorted elaboration listing: one line per component and per binding.
    pub fn dump(&self) -> String {
        let mut lines: Vec<String> = self
            .meta
            .iter()
            .map(|m| {
                let dom = m.domain.map_or("-".to_string(), |d| self.engine.domain(d).name().to_string());
                format!("{} kind={} domain={} params={}", m.path, m.kind, dom, m.params)
            })
            .chain(self.passive.iter().map(|(p, k, v)| format!("{p} kind={k} domain=- params={v}")))
            .chain(self.bindings.iter().map(|(m, s)| format!("{m} -> {s}")))
            .collect();
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn component_stats(&self, id: ComponentId) -> Value {
        self.comps[id.0 as usize].as_ref().map_or(Value::Null, |c| c.stats())
    }

    /// Headline numbers across the cluster cores: the slowest core's total
    /// cycles, the mean active cycles, retired instructions, and bank
    /// conflicts in memories clocked with the cores.
    pub fn summary(&self) -> Value {
        let cores: Vec<ComponentId> = self.ids_of_kind("core").collect();
        let mut pes: Vec<ComponentId> =
            cores.iter().copied().filter(|&id| self.params(id)["role"] == "pe").collect();
        if pes.is_empty() {
            pes = cores;
        }
        let stat = |id: ComponentId, k: &str| self.component_stats(id)[k].as_u64().unwrap_or(0);
        let total = pes.iter().map(|&id| stat(id, "total_cycles")).max().unwrap_or(0);
        let active_sum: u64 = pes.iter().map(|&id| stat(id, "active_cycles")).sum();
        let active = if pes.is_empty() { 0 } else { active_sum / pes.len() as u64 };
        let instr: u64 = self.ids_of_kind("core").map(|id| stat(id, "instr_retired")).sum();
        let pe_domain = pes.first().and_then(|&id| self.domain_of(id));
        let contentions: u64 = self
            .ids_of_kind("memory")
            .filter(|&id| self.domain_of(id) == pe_domain)
            .map(|id| stat(id, "contention_count"))
            .sum();
        json!({
            "cores": pes.len(),
            "total_cycles": total,
            "active_cycles": active,
            "active_cycles_sum": active_sum,
            "instr_retired": instr,
            "contentions": contentions,
        })
    }

    /// End-of-run report. Only the `host` section depends on the machine.
    pub fn stats_report(&self) -> Value {
        let mut comps = BTreeMap::new();
        for id in self.component_ids() {
            let s = self.component_stats(id);
            if !s.is_null() {
                comps.insert(self.path(id).to_string(), s);
            }
        }
        let mut domains = BTreeMap::new();
        for d in self.engine.domains() {
            let s = d.stats();
            domains.insert(
                d.name().to_string(),
                json!({
                    "frequency_hz": d.frequency_hz(),
                    "final_cycle": d.cycle(),
                    "cycles_executed": s.cycles_executed,
                    "events_executed": s.events_executed,
                    "laps": s.laps,
                    "overflow_promotions": s.overflow_promotions,
                }),
            );
        }
        let summary = self.summary();
        let instr = summary["instr_retired"].as_u64().unwrap_or(0) as f64;
        let mips = if self.wall_s > 0.0 { instr / self.wall_s / 1e6 } else { 0.0 };
        let (status, code) = match &self.outcome {
            Some(RunOutcome::Exit(c)) => ("exit", Some(*c)),
            Some(o) => (o.label(), None),
            None => ("not-run", None),
        };
        json!({
            "exit": { "status": status, "code": code },
            "final_time_ps": self.engine.now_ps(),
            "console": String::from_utf8_lossy(&self.console),
            "summary": summary,
            "components": comps,
            "domains": domains,
            "host": { "wall_clock_s": self.wall_s, "simulated_mips": mips },
        })
    }
}

/// The report with host-dependent fields removed, for comparisons.
pub fn comparable(report: &Value) -> Value {
    let mut r = report.clone();
    if let Some(o) = r.as_object_mut() {
        o.remove("host");
    }
    r
}
