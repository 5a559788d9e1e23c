//! Platform descriptors: the JSON architecture description, its validation,
//! and command-line style parameter overrides.
//!
//! ```json
//! {
//!   "clock_domains": { "soc": { "frequency_hz": 200000000, "event_window": 64 } },
//!   "components": {
//!     "fc":  { "kind": "core", "domain": "soc", "params": { "hart_id": 32 } },
//!     "l2":  { "kind": "memory", "domain": "soc", "base": "0x1C000000", "size": "0x80000" }
//!   },
//!   "bindings": [ ["fc/data", "l2/input"] ]
//! }
//! ```
//!
//! Component paths are hierarchical (`cluster/pe0`). A component may carry
//! `"repeat": "<path>.<key>"`, in which case `{i}` in its path is expanded
//! once per index and every binding mentioning it is expanded the same way.
//! String parameters of the form `"$<path>.<key>"` are references resolved
//! at elaboration time, so overrides of the referenced value propagate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{period_for, DEFAULT_EVENT_WINDOW};
use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub frequency_hz: u64,
    pub event_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub size: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub repeat: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub clock_domains: BTreeMap<String, DomainSpec>,
    pub components: BTreeMap<String, ComponentSpec>,
    pub bindings: Vec<(String, String)>,
}

/// One entry of the derived address map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressRange {
    pub base: u64,
    pub size: u64,
    pub owner: String,
}

struct KindInfo {
    name: &'static str,
    needs_domain: bool,
    needs_range: bool,
    defaults: fn() -> Vec<(&'static str, Value)>,
}

macro_rules! defaults {
    ($($k:literal => $v:expr),* $(,)?) => {
        || vec![$(($k, serde_json::json!($v))),*]
    };
}

const KINDS: &[KindInfo] = &[
    KindInfo { name: "group", needs_domain: false, needs_range: false, defaults: defaults!() },
    KindInfo {
        name: "core",
        needs_domain: true,
        needs_range: false,
        defaults: defaults!(
            "hart_id" => 0, "role" => "pe", "fetch_enable" => true, "boot_addr" => 0x1C00_0000u32,
            "extensions" => Vec::<String>::new(), "branch_penalty" => 2, "trap_vector" => 0,
        ),
    },
    KindInfo {
        name: "memory",
        needs_domain: true,
        needs_range: true,
        defaults: defaults!("banks" => 1, "latency" => 0),
    },
    KindInfo {
        name: "router",
        needs_domain: true,
        needs_range: false,
        defaults: defaults!("latency" => 1, "bandwidth_bytes_per_cycle" => 0, "mappings" => serde_json::json!({})),
    },
    KindInfo { name: "interleaver", needs_domain: true, needs_range: false, defaults: defaults!() },
    KindInfo { name: "stub", needs_domain: true, needs_range: false, defaults: defaults!("crossing_latency" => 0) },
    KindInfo {
        name: "icache",
        needs_domain: true,
        needs_range: false,
        defaults: defaults!("size" => 512, "ways" => 2, "line_bytes" => 16, "hit_latency" => 0, "refills_per_cycle" => 0),
    },
    KindInfo {
        name: "dma",
        needs_domain: true,
        needs_range: true,
        defaults: defaults!(
            "max_burst_size" => 256, "channels" => 2, "tcdm_words_per_cycle" => 4,
            "tcdm_base" => 0x1000_0000u32, "tcdm_size" => 0x2_0000u32, "event_line" => 8,
        ),
    },
    KindInfo {
        name: "udma",
        needs_domain: true,
        needs_range: true,
        defaults: defaults!("channels" => 2, "beat_bits" => 32, "irq_line" => 0),
    },
    KindInfo {
        name: "hyperram",
        needs_domain: true,
        needs_range: true,
        defaults: defaults!("bandwidth_bits_per_sec" => 1_600_000_000u64, "setup_latency_ns" => 300),
    },
    KindInfo { name: "sim_control", needs_domain: true, needs_range: true, defaults: defaults!() },
    KindInfo { name: "itc", needs_domain: true, needs_range: true, defaults: defaults!() },
    KindInfo {
        name: "event_unit",
        needs_domain: true,
        needs_range: true,
        defaults: defaults!("nb_cores" => 8, "barriers" => 2),
    },
    KindInfo {
        name: "accel",
        needs_domain: true,
        needs_range: true,
        defaults: defaults!(
            "setup_overhead" => 100, "macs_per_cycle" => 27, "filter_load_width" => 4, "ports" => 4,
            "event_line" => 9, "tcdm_base" => 0x1000_0000u32, "tcdm_size" => 0x2_0000u32,
        ),
    },
];

fn kind_info(kind: &str) -> Option<&'static KindInfo> {
    KINDS.iter().find(|k| k.name == kind)
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), msg: msg.into() }
}

/// Accepts plain integers and `"0x..."`/decimal strings.
pub fn parse_u64(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => parse_int_str(s),
        _ => None,
    }
}

pub(crate) fn parse_int_str(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(&hex.replace('_', ""), 16).ok()
    } else {
        s.replace('_', "").parse().ok()
    }
}

impl ArchDescriptor {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        let obj = root.as_object().ok_or_else(|| invalid("$", "expected an object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "clock_domains" | "components" | "bindings") {
                return Err(invalid(format!("$.{key}"), "unknown top-level key"));
            }
        }

        let mut clock_domains = BTreeMap::new();
        let doms = obj
            .get("clock_domains")
            .and_then(Value::as_object)
            .ok_or_else(|| invalid("$.clock_domains", "expected an object"))?;
        for (name, d) in doms {
            let path = format!("$.clock_domains.{name}");
            let hz = d
                .get("frequency_hz")
                .and_then(parse_u64)
                .ok_or_else(|| ConfigError::MissingParam { path: path.clone(), key: "frequency_hz".into() })?;
            let window = match d.get("event_window") {
                None => DEFAULT_EVENT_WINDOW,
                Some(v) => parse_u64(v)
                    .filter(|&w| w > 0)
                    .ok_or_else(|| invalid(format!("{path}.event_window"), "expected a positive integer"))?
                    as usize,
            };
            clock_domains.insert(name.clone(), DomainSpec { frequency_hz: hz, event_window: window });
        }

        let mut components = BTreeMap::new();
        let comps = obj
            .get("components")
            .and_then(Value::as_object)
            .ok_or_else(|| invalid("$.components", "expected an object"))?;
        for (name, c) in comps {
            let path = format!("$.components.{name}");
            let c = c.as_object().ok_or_else(|| invalid(&path, "expected an object"))?;
            let kind = c
                .get("kind")
                .and_then(Value::as_str)
                .ok_or_else(|| ConfigError::MissingParam { path: path.clone(), key: "kind".into() })?;
            let opt_u64 = |key: &str| -> Result<Option<u64>, ConfigError> {
                c.get(key)
                    .map(|v| parse_u64(v).ok_or_else(|| invalid(format!("{path}.{key}"), "expected an integer")))
                    .transpose()
            };
            let params = match c.get("params") {
                None => BTreeMap::new(),
                Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                Some(_) => return Err(invalid(format!("{path}.params"), "expected an object")),
            };
            for key in c.keys() {
                if !matches!(key.as_str(), "kind" | "domain" | "base" | "size" | "repeat" | "params") {
                    return Err(invalid(format!("{path}.{key}"), "unknown component field"));
                }
            }
            components.insert(
                name.clone(),
                ComponentSpec {
                    kind: kind.to_string(),
                    domain: c.get("domain").and_then(Value::as_str).map(str::to_string),
                    base: opt_u64("base")?,
                    size: opt_u64("size")?,
                    repeat: c.get("repeat").and_then(Value::as_str).map(str::to_string),
                    params,
                },
            );
        }

        let mut bindings = Vec::new();
        let binds = obj
            .get("bindings")
            .and_then(Value::as_array)
            .ok_or_else(|| invalid("$.bindings", "expected an array"))?;
        for (i, b) in binds.iter().enumerate() {
            let pair = b
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some((a[0].as_str()?.to_string(), a[1].as_str()?.to_string())))
                .ok_or_else(|| invalid(format!("$.bindings[{i}]"), "expected [master, slave]"))?;
            bindings.push(pair);
        }

        let mut desc = ArchDescriptor { clock_domains, components, bindings };
        desc.fill_defaults()?;
        desc.validate()?;
        Ok(desc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    fn fill_defaults(&mut self) -> Result<(), ConfigError> {
        for (name, c) in self.components.iter_mut() {
            let info = kind_info(&c.kind).ok_or_else(|| ConfigError::UnknownKind {
                path: format!("$.components.{name}"),
                kind: c.kind.clone(),
            })?;
            for (k, v) in (info.defaults)() {
                c.params.entry(k.to_string()).or_insert(v);
            }
        }
        Ok(())
    }

    /// Re-checks every structural rule. Called by `parse` and after overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, d) in &self.clock_domains {
            if period_for(d.frequency_hz).is_none() {
                return Err(ConfigError::NonIntegralPeriod {
                    path: format!("$.clock_domains.{name}.frequency_hz"),
                    hz: d.frequency_hz,
                });
            }
            if d.event_window == 0 {
                return Err(invalid(format!("$.clock_domains.{name}.event_window"), "must be positive"));
            }
        }
        for (name, c) in &self.components {
            let path = format!("$.components.{name}");
            let info = kind_info(&c.kind)
                .ok_or_else(|| ConfigError::UnknownKind { path: path.clone(), kind: c.kind.clone() })?;
            if info.needs_domain {
                let dom = c
                    .domain
                    .as_ref()
                    .ok_or_else(|| ConfigError::MissingParam { path: path.clone(), key: "domain".into() })?;
                if !self.clock_domains.contains_key(dom) {
                    return Err(invalid(format!("{path}.domain"), format!("unknown clock domain `{dom}`")));
                }
            }
            if info.needs_range {
                for key in ["base", "size"] {
                    let v = if key == "base" { c.base } else { c.size };
                    if v.is_none() {
                        return Err(ConfigError::MissingParam { path: path.clone(), key: key.into() });
                    }
                }
                if c.repeat.is_some() {
                    return Err(invalid(&path, "a mapped component cannot be repeated"));
                }
            }
            if c.kind == "memory" {
                let banks = c.params.get("banks").and_then(parse_u64).unwrap_or(0);
                let size = c.size.unwrap_or(0);
                if banks == 0 || !banks.is_power_of_two() {
                    return Err(invalid(format!("{path}.params.banks"), "must be a power of two"));
                }
                if size == 0 || size % (banks * 4) != 0 {
                    return Err(invalid(format!("{path}.size"), "must be a multiple of banks x 4"));
                }
            }
            if let Some(rep) = &c.repeat {
                if !name.contains("{i}") {
                    return Err(invalid(format!("{path}.repeat"), "repeated path must contain `{i}`"));
                }
                self.lookup_u64(rep).map_err(|m| invalid(format!("{path}.repeat"), m))?;
            }
            for (k, v) in &c.params {
                if let Some(r) = v.as_str().and_then(|s| s.strip_prefix('$')) {
                    self.lookup(r).map_err(|m| invalid(format!("{path}.params.{k}"), m))?;
                }
            }
            if c.kind == "router" {
                self.router_mappings(name)?;
            }
        }

        let ranges = self.address_map();
        for (i, a) in ranges.iter().enumerate() {
            for b in &ranges[i + 1..] {
                if a.base < b.base + b.size && b.base < a.base + a.size {
                    return Err(ConfigError::Overlap { a: a.owner.clone(), b: b.owner.clone() });
                }
            }
        }

        for (i, (m, s)) in self.bindings.iter().enumerate() {
            for end in [m, s] {
                let (comp, _) = split_port(end)
                    .ok_or_else(|| invalid(format!("$.bindings[{i}]"), format!("`{end}` is not component/port")))?;
                if !self.components.contains_key(comp) {
                    return Err(ConfigError::Bind {
                        master: m.clone(),
                        slave: s.clone(),
                        msg: format!("no component `{comp}`"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Router `mappings` as `(out_port, base, size, latency override)`,
    /// checked for overlap.
    pub fn router_mappings(&self, router: &str) -> Result<Vec<(String, u64, u64, Option<u64>)>, ConfigError> {
        let c = &self.components[router];
        let path = format!("$.components.{router}.params.mappings");
        let maps = c
            .params
            .get("mappings")
            .and_then(Value::as_object)
            .ok_or_else(|| invalid(&path, "expected an object of port -> {base, size}"))?;
        let mut out: Vec<(String, u64, u64, Option<u64>)> = Vec::new();
        for (port, m) in maps {
            let base = m.get("base").and_then(parse_u64);
            let size = m.get("size").and_then(parse_u64);
            let (Some(base), Some(size)) = (base, size) else {
                return Err(invalid(format!("{path}.{port}"), "mapping needs base and size"));
            };
            let lat = m.get("latency").and_then(parse_u64);
            for (other, b, s, _) in &out {
                if base < b + s && *b < base + size {
                    return Err(ConfigError::Overlap {
                        a: format!("{router}/{other}"),
                        b: format!("{router}/{port}"),
                    });
                }
            }
            out.push((port.clone(), base, size, lat));
        }
        out.sort_by_key(|m| m.1);
        Ok(out)
    }

    /// Address ranges of every mapped (terminal) component, sorted by base.
    pub fn address_map(&self) -> Vec<AddressRange> {
        let mut v: Vec<_> = self
            .components
            .iter()
            .filter_map(|(name, c)| {
                Some(AddressRange { base: c.base?, size: c.size?, owner: name.clone() })
            })
            .collect();
        v.sort_by_key(|r| r.base);
        v
    }

    /// Resolves `path.key` to a parameter value (or `base`/`size`).
    pub fn lookup(&self, reference: &str) -> Result<Value, String> {
        let (path, key) = reference
            .rsplit_once('.')
            .ok_or_else(|| format!("`{reference}` is not <path>.<key>"))?;
        let c = self.components.get(path).ok_or_else(|| format!("no component `{path}`"))?;
        match key {
            "base" => c.base.map(Value::from).ok_or_else(|| format!("`{path}` has no base")),
            "size" => c.size.map(Value::from).ok_or_else(|| format!("`{path}` has no size")),
            _ => {
                let v = c.params.get(key).ok_or_else(|| format!("`{path}` has no parameter `{key}`"))?;
                match v.as_str().and_then(|s| s.strip_prefix('$')) {
                    Some(r) if r != reference => self.lookup(r),
                    _ => Ok(v.clone()),
                }
            }
        }
    }

    pub fn lookup_u64(&self, reference: &str) -> Result<u64, String> {
        let v = self.lookup(reference)?;
        parse_u64(&v).ok_or_else(|| format!("`{reference}` is not an integer"))
    }

    /// Applies `path.key=value` overrides, type-checked against the current
    /// values, and re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        for o in overrides {
            let o = o.as_ref();
            let err = |m: &str| ConfigError::Override(o.to_string(), m.to_string());
            let (lhs, rhs) = o.split_once('=').ok_or_else(|| err("expected <path>.<key>=<value>"))?;
            let (path, key) = lhs.trim().rsplit_once('.').ok_or_else(|| err("expected <path>.<key>"))?;
            let rhs = rhs.trim();
            let c = out.components.get_mut(path).ok_or_else(|| err("unknown component path"))?;
            match key {
                "base" | "size" => {
                    let v = parse_int_str(rhs).ok_or_else(|| err("expected an integer"))?;
                    let slot = if key == "base" { &mut c.base } else { &mut c.size };
                    if slot.is_none() {
                        return Err(err("component has no address range"));
                    }
                    *slot = Some(v);
                }
                "domain" => {
                    c.domain = Some(rhs.to_string());
                }
                _ => {
                    let old = c.params.get(key).ok_or_else(|| err("unknown parameter"))?;
                    let new = coerce_like(old, rhs).ok_or_else(|| err("type mismatch"))?;
                    c.params.insert(key.to_string(), new);
                }
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// Parses `text` to the same JSON type as `like`.
fn coerce_like(like: &Value, text: &str) -> Option<Value> {
    match like {
        Value::Number(_) => parse_int_str(text).map(Value::from),
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::String(s) if s.starts_with('$') => {
            // A reference may be replaced by a literal integer or another reference.
            if text.starts_with('$') {
                Some(Value::String(text.to_string()))
            } else {
                parse_int_str(text).map(Value::from).or_else(|| Some(Value::String(text.to_string())))
            }
        }
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Array(_) | Value::Object(_) => serde_json::from_str(text).ok().filter(|v: &Value| {
            std::mem::discriminant(v) == std::mem::discriminant(like)
        }),
        Value::Null => None,
    }
}

/// Splits `a/b/port` into (`a/b`, `port`).
pub fn split_port(endpoint: &str) -> Option<(&str, &str)> {
    endpoint.rsplit_once('/').filter(|(c, p)| !c.is_empty() && !p.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "clock_domains": { "soc": { "frequency_hz": 100000000 } },
        "components": {
            "cpu": { "kind": "core", "domain": "soc" },
            "ram": { "kind": "memory", "domain": "soc", "base": "0x1C000000", "size": "0x10000" }
        },
        "bindings": [ ["cpu/data", "ram/input"], ["cpu/fetch", "ram/input"] ]
    }"#;

    #[test]
    fn minimal_platform_parses_with_defaults() {
        let d = ArchDescriptor::parse(MINIMAL).unwrap();
        assert_eq!(d.components.len(), 2);
        assert_eq!(d.clock_domains["soc"].event_window, 64);
        assert_eq!(d.components["ram"].params["banks"], 1);
        assert_eq!(d.components["cpu"].params["branch_penalty"], 2);
    }

    #[test]
    fn overlapping_memories_name_both() {
        let text = r#"{
            "clock_domains": { "soc": { "frequency_hz": 100000000 } },
            "components": {
                "a": { "kind": "memory", "domain": "soc", "base": "0x1C000000", "size": "0x80000" },
                "b": { "kind": "memory", "domain": "soc", "base": "0x1C040000", "size": "0x1000" }
            },
            "bindings": []
        }"#;
        match ArchDescriptor::parse(text) {
            Err(ConfigError::Overlap { a, b }) => assert_eq!((a.as_str(), b.as_str()), ("a", "b")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_integral_period_rejected() {
        let text = MINIMAL.replace("100000000", "333333333");
        assert!(matches!(
            ArchDescriptor::parse(&text),
            Err(ConfigError::NonIntegralPeriod { hz: 333_333_333, .. })
        ));
    }

    #[test]
    fn unknown_kind_and_missing_param() {
        let text = MINIMAL.replace(r#""kind": "core""#, r#""kind": "gpu""#);
        assert!(matches!(ArchDescriptor::parse(&text), Err(ConfigError::UnknownKind { .. })));
        let text = MINIMAL.replace(r#", "size": "0x10000""#, "");
        match ArchDescriptor::parse(&text) {
            Err(ConfigError::MissingParam { path, key }) => {
                assert_eq!(path, "$.components.ram");
                assert_eq!(key, "size");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_are_type_checked() {
        let d = ArchDescriptor::parse(MINIMAL).unwrap();
        let d2 = d.apply_overrides(&["ram.banks=4", "cpu.fetch_enable=false"]).unwrap();
        assert_eq!(d2.components["ram"].params["banks"], 4);
        assert_eq!(d2.components["cpu"].params["fetch_enable"], false);
        assert!(matches!(d.apply_overrides(&["ram.banks=many"]), Err(ConfigError::Override(..))));
        assert!(matches!(d.apply_overrides(&["ram.nope=1"]), Err(ConfigError::Override(..))));
        assert!(matches!(d.apply_overrides(&["rom.banks=1"]), Err(ConfigError::Override(..))));
        // Re-validation catches values that break invariants.
        assert!(d.apply_overrides(&["ram.banks=3"]).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let d = ArchDescriptor::parse(MINIMAL).unwrap();
        assert_eq!(ArchDescriptor::parse(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn references_resolve_through_chains() {
        let text = r#"{
            "clock_domains": { "c": { "frequency_hz": 100000000 } },
            "components": {
                "cluster": { "kind": "group", "params": { "nb_cores": 4 } },
                "eu": { "kind": "event_unit", "domain": "c", "base": 0, "size": 4096,
                        "params": { "nb_cores": "$cluster.nb_cores" } }
            },
            "bindings": []
        }"#;
        let d = ArchDescriptor::parse(text).unwrap();
        assert_eq!(d.lookup_u64("eu.nb_cores").unwrap(), 4);
        let d = d.apply_overrides(&["cluster.nb_cores=16"]).unwrap();
        assert_eq!(d.lookup_u64("eu.nb_cores").unwrap(), 16);
    }
}
