//! Turns a validated descriptor into a running platform: clock domains,
//! instantiated components (with `{i}` repeats expanded and `$` references
//! resolved), bindings, and the functional memory map.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde_json::{Map, Value};

use crate::accel::{AccelParams, AccelTiming, Accelerator};
use crate::component::Component;
use crate::config::{parse_u64, split_port, ArchDescriptor, ComponentSpec};
use crate::cpu::{Core, CoreConfig};
use crate::dma::{Dma, DmaParams};
use crate::engine::DomainId;
use crate::event_unit::EventUnit;
use crate::icache::{ICache, SetAssocCache};
use crate::interconnect::{Interleaver, Mapping, Router, RouterComponent, Stub};
use crate::io::{HyperRam, Itc, SimControl, Udma};
use crate::isa::IsaTable;
use crate::mem::{BankedMemory, Memory};
use crate::platform::Platform;
use crate::ConfigError;

/// Parses `text`, applies `path.key=value` overrides, and elaborates.
pub fn build<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Platform, ConfigError> {
    let desc = ArchDescriptor::parse(text)?.apply_overrides(overrides)?;
    elaborate(&desc)
}

struct Params<'a> {
    path: &'a str,
    map: Map<String, Value>,
}

impl Params<'_> {
    fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.map.get(key).and_then(parse_u64).ok_or_else(|| ConfigError::MissingParam {
            path: self.path.to_string(),
            key: key.to_string(),
        })
    }

    fn u32(&self, key: &str) -> Result<u32, ConfigError> {
        let v = self.u64(key)?;
        u32::try_from(v).map_err(|_| ConfigError::Invalid {
            path: format!("{}.{key}", self.path),
            msg: "does not fit in 32 bits".into(),
        })
    }

    fn opt_u32(&self, key: &str, default: u32) -> Result<u32, ConfigError> {
        if self.map.contains_key(key) {
            self.u32(key)
        } else {
            Ok(default)
        }
    }

    fn bool(&self, key: &str) -> bool {
        self.map.get(key).and_then(Value::as_bool).unwrap_or(false)
    }

    fn strings(&self, key: &str) -> Vec<String> {
        self.map
            .get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }
}

fn repeat_count(desc: &ArchDescriptor, spec: &ComponentSpec, name: &str) -> Result<Option<u64>, ConfigError> {
    spec.repeat
        .as_ref()
        .map(|r| {
            desc.lookup_u64(r).map_err(|m| ConfigError::Invalid { path: format!("$.components.{name}.repeat"), msg: m })
        })
        .transpose()
}

/// Builds the platform described by `desc`.
pub fn elaborate(desc: &ArchDescriptor) -> Result<Platform, ConfigError> {
    let mut p = Platform::new();
    let mut domains: BTreeMap<&str, DomainId> = BTreeMap::new();
    for (name, d) in &desc.clock_domains {
        domains.insert(name, p.add_domain(name, d.frequency_hz, d.event_window));
    }
    let mut isas: HashMap<Vec<String>, Arc<IsaTable>> = HashMap::new();
    let mut counts: HashMap<&str, u64> = HashMap::new();

    for (name, spec) in &desc.components {
        let count = repeat_count(desc, spec, name)?;
        if let Some(n) = count {
            counts.insert(name, n);
        }
        for i in 0..count.unwrap_or(1) {
            let path = if count.is_some() { name.replace("{i}", &i.to_string()) } else { name.clone() };
            let mut map = Map::new();
            for (k, v) in &spec.params {
                let v = match v.as_str().and_then(|s| s.strip_prefix('$')) {
                    Some(r) => desc
                        .lookup(r)
                        .map_err(|m| ConfigError::Invalid { path: format!("{path}.{k}"), msg: m })?,
                    None => v.clone(),
                };
                map.insert(k.clone(), v);
            }
            if count.is_some() {
                map.insert("index".into(), Value::from(i));
            }
            let params = Params { path: &path, map };
            let domain = spec.domain.as_deref().map(|d| domains[d]);
            let comp = instantiate(spec, &params, domain, count.map(|_| i), &mut isas)?;
            let value = Value::Object(params.map.clone());
            match comp {
                None => p.add_passive(&path, &spec.kind, value),
                Some(c) => {
                    let id = p.add_component(&path, &spec.kind, domain, value, c)?;
                    if matches!(spec.kind.as_str(), "memory" | "hyperram") {
                        p.map_functional(id, spec.base.unwrap_or(0), spec.size.unwrap_or(0));
                    }
                }
            }
        }
    }

    for (m, s) in &desc.bindings {
        let n = [m, s]
            .iter()
            .filter(|e| e.contains("{i}"))
            .filter_map(|e| split_port(e).and_then(|(c, _)| counts.get(c)))
            .copied()
            .next();
        match n {
            Some(n) => {
                for i in 0..n {
                    let ix = i.to_string();
                    p.bind(&m.replace("{i}", &ix), &s.replace("{i}", &ix))?;
                }
            }
            None => p.bind(m, s)?,
        }
    }
    p.check_bindings()?;
    Ok(p)
}

fn instantiate(
    spec: &ComponentSpec,
    p: &Params,
    domain: Option<DomainId>,
    index: Option<u64>,
    isas: &mut HashMap<Vec<String>, Arc<IsaTable>>,
) -> Result<Option<Box<dyn Component>>, ConfigError> {
    let base = spec.base.unwrap_or(0) as u32;
    let size = spec.size.unwrap_or(0);
    let d = || domain.expect("validated: kind needs a domain");
    let c: Box<dyn Component> = match spec.kind.as_str() {
        "group" => return Ok(None),
        "core" => {
            let exts = p.strings("extensions");
            let isa = match isas.get(&exts) {
                Some(t) => t.clone(),
                None => {
                    let t = Arc::new(IsaTable::with_extensions(&exts)?);
                    isas.insert(exts, t.clone());
                    t
                }
            };
            let i = index.unwrap_or(0) as u32;
            let cfg = CoreConfig {
                hart_id: p.u32("hart_id")? + i,
                index: p.opt_u32("index", 0)?,
                fetch_enable: p.bool("fetch_enable"),
                boot_addr: p.u32("boot_addr")?,
                branch_penalty: p.u64("branch_penalty")?,
                trap_vector: p.u32("trap_vector")?,
            };
            Box::new(Core::new(cfg, isa, d()))
        }
        "memory" => {
            let mem = BankedMemory::new(base, size as usize, p.u32("banks")?, p.u64("latency")?);
            Box::new(Memory::new(mem, d()))
        }
        "router" => {
            let maps = p
                .map
                .get("mappings")
                .and_then(Value::as_object)
                .ok_or_else(|| ConfigError::MissingParam { path: p.path.into(), key: "mappings".into() })?;
            let mut mappings = Vec::new();
            for (port, m) in maps {
                let get = |k: &str| m.get(k).and_then(parse_u64);
                let (Some(b), Some(s)) = (get("base"), get("size")) else {
                    return Err(ConfigError::Invalid { path: format!("{}.mappings.{port}", p.path), msg: "needs base and size".into() });
                };
                mappings.push(Mapping { base: b, size: s, port: port.clone(), latency: get("latency") });
            }
            let r = Router::new(p.u64("latency")?, p.u64("bandwidth_bytes_per_cycle")?, mappings);
            Box::new(RouterComponent::new(r, d()))
        }
        "interleaver" => Box::new(Interleaver::new()),
        "stub" => Box::new(Stub::new(d(), p.u64("crossing_latency")?)),
        "icache" => {
            let (cap, ways, line) = (p.u64("size")? as usize, p.u64("ways")? as usize, p.u32("line_bytes")?);
            let ok = line.is_power_of_two() && ways > 0 && ways <= 255 && cap > 0 && cap % (ways * line as usize) == 0;
            if !ok {
                return Err(ConfigError::Invalid { path: p.path.into(), msg: "cache size must be a multiple of ways x line_bytes".into() });
            }
            let cache = SetAssocCache::new(cap, ways, line);
            Box::new(ICache::new(cache, p.u64("hit_latency")?, p.u64("refills_per_cycle")?, d()))
        }
        "dma" => {
            let dp = DmaParams {
                base,
                max_burst: p.u32("max_burst_size")?.max(4),
                channels: p.u64("channels")? as usize,
                tcdm_words_per_cycle: p.u32("tcdm_words_per_cycle")?,
                tcdm_base: p.u32("tcdm_base")?,
                tcdm_size: p.u32("tcdm_size")?,
                event_line: p.u32("event_line")?,
                index: p.opt_u32("port_index", 0)?,
            };
            Box::new(Dma::new(dp, d()))
        }
        "udma" => Box::new(Udma::new(base, p.u64("channels")? as usize, p.u32("beat_bits")?, p.u32("irq_line")?, d())),
        "hyperram" => Box::new(HyperRam::new(base, size as usize, p.u64("bandwidth_bits_per_sec")?, p.u64("setup_latency_ns")?)),
        "sim_control" => Box::new(SimControl::new(base)),
        "itc" => Box::new(Itc::new(base)),
        "event_unit" => Box::new(EventUnit::new(base, p.u64("nb_cores")? as usize, p.u64("barriers")? as usize)),
        "accel" => {
            let ap = AccelParams {
                base,
                timing: AccelTiming {
                    setup_overhead: p.u64("setup_overhead")?,
                    macs_per_cycle: p.u64("macs_per_cycle")?,
                    filter_load_width: p.u64("filter_load_width")?,
                },
                ports: p.u32("ports")?,
                event_line: p.u32("event_line")?,
                tcdm_base: p.u32("tcdm_base")?,
                tcdm_size: p.u32("tcdm_size")?,
                index: p.opt_u32("port_index", 0)?,
            };
            Box::new(Accelerator::new(ap, d()))
        }
        other => return Err(ConfigError::UnknownKind { path: p.path.into(), kind: other.into() }),
    };
    Ok(Some(c))
}
