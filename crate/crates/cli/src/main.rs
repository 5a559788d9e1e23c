//! Command-line runner: elaborates a platform, loads a guest, runs it, and
//! writes reports. The `sweep` subcommand runs a grid of overrides, one
//! child process per point.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use pulpsim::config::ArchDescriptor;
use pulpsim::platform::RunOutcome;
use pulpsim::trace::{TraceSink, VcdWriter};
use pulpsim::{elaborate, guests, loader};

const EXIT_USAGE: u8 = 2;
const EXIT_FAULT: u8 = 3;
const EXIT_TIMEOUT: u8 = 124;

#[derive(Parser, Debug)]
#[command(name = "pulpsim", version, about = "Event-driven simulator for PULP-style RISC-V platforms")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Option<Cmd>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run every point of an override grid and tabulate the results.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Platform description (JSON). Defaults to the bundled pulp-open platform.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Guest program: ELF32 RISC-V executable or memory image.
    #[arg(long)]
    binary: Option<PathBuf>,
    /// Parameter override `<component>.<key>=<value>`; repeatable.
    #[arg(long = "property", short = 'p', value_name = "PATH.KEY=VALUE")]
    properties: Vec<String>,
    /// Guest parameter words written to the parameter block after loading.
    #[arg(long, value_delimiter = ',', value_parser = parse_word)]
    params: Vec<u32>,
    /// Trace glob over `<component>/<point>` names; repeatable.
    #[arg(long = "trace", value_name = "GLOB")]
    traces: Vec<String>,
    /// Trace destination (default: standard error).
    #[arg(long, value_name = "FILE")]
    trace_file: Option<PathBuf>,
    /// Write a VCD waveform.
    #[arg(long, value_name = "FILE")]
    vcd: Option<PathBuf>,
    /// Write the end-of-run statistics as JSON.
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,
    /// Stop after this many cycles of the fastest clock.
    #[arg(long)]
    max_cycles: Option<u64>,
    /// Raw bytes preloaded at the base of the external RAM.
    #[arg(long, value_name = "FILE")]
    l3_image: Option<PathBuf>,
    /// Print the elaborated platform and exit.
    #[arg(long)]
    dump: bool,
    /// Do not print the summary line on standard error.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep description (JSON); relative paths inside it resolve against its directory.
    spec: PathBuf,
    /// Output table; `.json` selects JSON, anything else CSV (default: CSV on stdout).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Concurrent child simulations (default: host cores).
    #[arg(long, short)]
    jobs: Option<usize>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] pulpsim::ConfigError),
    #[error("binary: {0}")]
    Load(#[from] pulpsim::LoadError),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("sweep spec: {0}")]
    Sweep(String),
}

fn parse_word(s: &str) -> Result<u32, String> {
    let t = s.trim();
    let v = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u32::from_str_radix(h, 16).ok(),
        None => t.parse::<i32>().map(|v| v as u32).ok().or_else(|| t.parse::<u32>().ok()),
    };
    v.ok_or_else(|| format!("`{s}` is not a 32-bit integer"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Some(Cmd::Sweep(s)) => sweep(&s).map(|()| 0),
        None => run(&cli.run),
    };
    match r {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("pulpsim: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

/// Builds the platform and the external-RAM base (if any) from the flags.
fn build(a: &RunArgs) -> Result<(pulpsim::platform::Platform, Option<u64>), CliError> {
    let text = match &a.config {
        Some(path) => std::fs::read_to_string(path).map_err(io_err(path))?,
        None => guests::PULP_OPEN.to_string(),
    };
    let desc = ArchDescriptor::parse(&text)?.apply_overrides(&a.properties)?;
    let l3 = desc.components.values().find(|c| c.kind == "hyperram").and_then(|c| c.base);
    Ok((elaborate::elaborate(&desc)?, l3))
}

fn run(a: &RunArgs) -> Result<u8, CliError> {
    let (mut p, l3_base) = build(a)?;
    if a.dump {
        print!("{}", p.dump());
        return Ok(0);
    }
    let bin = a.binary.as_ref().ok_or_else(|| CliError::Usage("--binary is required".into()))?;
    let entry = loader::load_file(&mut p, bin)?;
    pulpsim::cpu::set_entry(&mut p, entry);
    for (i, &w) in a.params.iter().enumerate() {
        p.poke_u32(guests::PARAMS + 4 * i as u32, w)?;
    }
    if let Some(path) = &a.l3_image {
        let base = l3_base.ok_or_else(|| CliError::Usage("--l3-image: platform has no external RAM".into()))?;
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        p.poke(base as u32, &bytes)?;
    }
    if !a.traces.is_empty() {
        let out: Box<dyn Write> = match &a.trace_file {
            Some(path) => Box::new(BufWriter::new(File::create(path).map_err(io_err(path))?)),
            None => Box::new(std::io::stderr()),
        };
        let sink = TraceSink::new(&a.traces, out).map_err(|e| CliError::Usage(format!("--trace: {e}")))?;
        p.set_trace(sink);
    }
    if let Some(path) = &a.vcd {
        p.set_vcd(VcdWriter::new(Box::new(BufWriter::new(File::create(path).map_err(io_err(path))?))));
    }

    let outcome = p.run(a.max_cycles);
    let report = p.stats_report();
    std::io::stdout().write_all(p.console()).map_err(io_err(Path::new("<stdout>")))?;
    if let Some(path) = &a.stats {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))?;
    }
    if !a.quiet {
        let s = &report["summary"];
        eprintln!(
            "pulpsim: {} after {} ps; total_cycles {} active_cycles {} contentions {} instr {} ({:.1} MIPS)",
            describe(&outcome),
            report["final_time_ps"],
            s["total_cycles"],
            s["active_cycles"],
            s["contentions"],
            s["instr_retired"],
            report["host"]["simulated_mips"].as_f64().unwrap_or(0.0),
        );
    }
    Ok(match outcome {
        RunOutcome::Exit(c) => c.min(255) as u8,
        RunOutcome::Timeout => EXIT_TIMEOUT,
        RunOutcome::IdleDeadlock | RunOutcome::Fatal(_) => EXIT_FAULT,
    })
}

fn describe(o: &RunOutcome) -> String {
    match o {
        RunOutcome::Exit(c) => format!("exit {c}"),
        RunOutcome::Fatal(e) => format!("fatal: {e}"),
        o => o.label().to_string(),
    }
}

// ---- sweeps ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    #[serde(default)]
    config: Option<PathBuf>,
    binary: PathBuf,
    #[serde(default)]
    params: Vec<u32>,
    #[serde(default)]
    properties: Vec<String>,
    #[serde(default)]
    max_cycles: Option<u64>,
    #[serde(default)]
    l3_image: Option<PathBuf>,
    grid: Vec<Axis>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Axis {
    key: String,
    values: Vec<Value>,
}

#[derive(Debug)]
struct Row {
    point: Vec<String>,
    metrics: Option<[String; 4]>,
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        v => v.to_string(),
    }
}

/// Every combination of axis values, first axis slowest. Any empty axis
/// (or no axis at all) gives no points.
fn grid_points(axes: &[Axis]) -> Vec<Vec<String>> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Vec::new();
    }
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(value_text(v));
                    q
                })
            })
            .collect();
    }
    points
}

fn run_point(spec: &SweepSpec, base: &Path, keys: &[String], point: &[String], stats: &Path) -> Option<[String; 4]> {
    let exe = std::env::current_exe().ok()?;
    let mut cmd = std::process::Command::new(exe);
    cmd.arg("--quiet").arg("--binary").arg(base.join(&spec.binary)).arg("--stats").arg(stats);
    if let Some(c) = &spec.config {
        cmd.arg("--config").arg(base.join(c));
    }
    if let Some(l3) = &spec.l3_image {
        cmd.arg("--l3-image").arg(base.join(l3));
    }
    if let Some(m) = spec.max_cycles {
        cmd.arg("--max-cycles").arg(m.to_string());
    }
    if !spec.params.is_empty() {
        let words: Vec<String> = spec.params.iter().map(u32::to_string).collect();
        cmd.arg("--params").arg(words.join(","));
    }
    for prop in spec.properties.iter().cloned().chain(keys.iter().zip(point).map(|(k, v)| format!("{k}={v}"))) {
        cmd.arg("--property").arg(prop);
    }
    let out = cmd.stdout(std::process::Stdio::null()).stderr(std::process::Stdio::piped()).output().ok()?;
    let report: Value = serde_json::from_str(&std::fs::read_to_string(stats).ok()?).ok()?;
    if !out.status.success() || report["exit"]["status"] != "exit" {
        eprintln!("pulpsim sweep: point {point:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim());
        return None;
    }
    let s = &report["summary"];
    Some([
        s["total_cycles"].to_string(),
        s["active_cycles"].to_string(),
        s["contentions"].to_string(),
        format!("{:.6}", report["host"]["wall_clock_s"].as_f64().unwrap_or(0.0)),
    ])
}

fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.spec).map_err(io_err(&a.spec))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| CliError::Sweep(e.to_string()))?;
    let base = a.spec.parent().map(Path::to_path_buf).unwrap_or_default();
    let keys: Vec<String> = spec.grid.iter().map(|ax| ax.key.clone()).collect();
    let points = grid_points(&spec.grid);

    let scratch = std::env::temp_dir().join(format!("pulpsim-sweep-{}", std::process::id()));
    std::fs::create_dir_all(&scratch).map_err(io_err(&scratch))?;
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Row>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(point) = points.get(i) else { break };
                let stats = scratch.join(format!("point{i}.json"));
                let metrics = run_point(&spec, &base, &keys, point, &stats);
                let _ = std::fs::remove_file(&stats);
                rows.lock().unwrap()[i] = Some(Row { point: point.clone(), metrics });
            });
        }
    });
    let _ = std::fs::remove_dir(&scratch);
    let rows: Vec<Row> = rows.into_inner().unwrap().into_iter().map(|r| r.expect("every point ran")).collect();

    let out: Box<dyn Write> = match &a.out {
        Some(path) => Box::new(File::create(path).map_err(io_err(path))?),
        None => Box::new(std::io::stdout()),
    };
    let json = a.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    let path = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    if json {
        write_json(out, &keys, &rows).map_err(io_err(&path))
    } else {
        write_csv(out, &keys, &rows).map_err(|e| CliError::Io(path, e.into()))
    }
}

const METRICS: [&str; 4] = ["total_cycles", "active_cycles", "contentions", "wall_s"];

fn write_csv(out: Box<dyn Write>, keys: &[String], rows: &[Row]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let header = std::iter::once("point_id").chain(keys.iter().map(String::as_str)).chain(METRICS);
    w.write_record(header)?;
    for (i, r) in rows.iter().enumerate() {
        let metrics = r.metrics.clone().unwrap_or_else(|| ["failed".into(), String::new(), String::new(), String::new()]);
        w.write_record(std::iter::once(i.to_string()).chain(r.point.iter().cloned()).chain(metrics))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(mut out: Box<dyn Write>, keys: &[String], rows: &[Row]) -> std::io::Result<()> {
    let table: Vec<Value> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let point: serde_json::Map<String, Value> =
                keys.iter().cloned().zip(r.point.iter().map(|v| Value::String(v.clone()))).collect();
            let mut row = serde_json::json!({ "point_id": i, "point": point, "failed": r.metrics.is_none() });
            if let Some(m) = &r.metrics {
                for (k, v) in METRICS.iter().zip(m) {
                    row[*k] = v.parse::<f64>().map_or(Value::Null, |f| {
                        if k == &"wall_s" { Value::from(f) } else { Value::from(f as u64) }
                    });
                }
            }
            row
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &table)?;
    writeln!(out)
}
