//! Command-line frontend. Machine-readable output goes to stdout, everything
//! meant for people goes to stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::engine::{
    all_heads, compare, core_trace_jsonl, message_trace_csv, random_denied, run, ComparisonReport, Metrics, SimConfig,
    SimError,
};
use crate::isa::{assemble, disassemble, Program};
use crate::topology::{build_clusters, GridConfig, MemberClass};
use crate::workloads;

pub const EXIT_ERROR: u8 = 1;
pub const EXIT_DEADLOCK: u8 = 2;
pub const EXIT_CYCLE_CAP: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "empa", version, about = "Many-core quasi-thread simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Assemble a program and print its fragment table and disassembly.
    Asm {
        /// Source file, or corpus:NAME[:PARAM].
        input: String,
        #[arg(long)]
        json: bool,
    },
    /// Run a program and print metrics JSON.
    Run {
        program: String,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a program on the many-core model and the single-core baseline.
    Compare {
        program: String,
        #[command(flatten)]
        opts: RunOpts,
        /// Parameter sweep over a corpus program, e.g. N=4,8,16; prints CSV.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compare across corpus parameters and print a CSV scaling table.
    Sweep {
        /// corpus:NAME
        program: String,
        /// Comma-separated parameter values, e.g. 4,8,16 (a `NAME=` prefix is allowed).
        #[arg(long)]
        values: String,
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Dump the cluster layout of a grid.
    Topology {
        #[arg(long, default_value = "8x8")]
        grid: GridConfig,
        #[arg(long)]
        json: bool,
    },
    /// Inspection commands.
    Info {
        #[command(subcommand)]
        what: InfoCommand,
    },
    /// List the bundled workloads, or print one.
    Corpus {
        /// NAME[:PARAM]
        name: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum InfoCommand {
    /// Same as `empa topology`.
    Topology {
        #[arg(long, default_value = "8x8")]
        grid: GridConfig,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunOpts {
    /// JSON config file with flat SimConfig keys.
    #[arg(long, env = "EMPA_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<GridConfig>,
    #[arg(long)]
    pub hop_cost: Option<u64>,
    #[arg(long)]
    pub memory_latency: Option<u64>,
    #[arg(long)]
    pub meta_cost: Option<u64>,
    #[arg(long)]
    pub cpi: Option<u64>,
    /// Comma-separated core ids, `random:FRACTION`, `all-heads` or `none`.
    #[arg(long)]
    pub denied: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for events.jsonl, cores.jsonl and messages.csv.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub cap: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Assembly(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Sim(SimError::Deadlock { .. }) => EXIT_DEADLOCK,
            CliError::Sim(SimError::CycleCapExceeded { .. }) => EXIT_CYCLE_CAP,
            _ => EXIT_ERROR,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

/// Splits `corpus:NAME[:PARAM]`.
fn corpus_ref(spec: &str) -> Option<(&str, Option<u32>)> {
    let rest = spec.strip_prefix("corpus:")?;
    Some(match rest.split_once(':') {
        Some((name, p)) => (name, p.parse().ok()),
        None => (rest, None),
    })
}

fn corpus_source(name: &str, param: Option<u32>) -> Result<String, CliError> {
    workloads::source(name, param).ok_or_else(|| CliError::Usage(format!("no corpus workload `{name}`")))
}

/// Source text of a program given as a path or corpus reference.
pub fn load_source(spec: &str) -> Result<String, CliError> {
    match corpus_ref(spec) {
        Some((name, param)) => corpus_source(name, param),
        None => read(Path::new(spec)),
    }
}

pub fn load_program(spec: &str) -> Result<Program, CliError> {
    let src = load_source(spec)?;
    assemble(&src).map_err(|d| CliError::Assembly(d.0.iter().map(|x| format!("{spec}: {x}")).collect::<Vec<_>>().join("\n")))
}

/// Config file (if any) with command-line overrides applied.
pub fn build_config(opts: &RunOpts) -> Result<SimConfig, CliError> {
    let mut cfg = match &opts.config {
        Some(p) => SimConfig::from_json(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SimConfig::default(),
    };
    if let Some(g) = opts.grid {
        cfg.grid = g;
    }
    if let Some(v) = opts.hop_cost {
        cfg.hop_cost = v;
    }
    if let Some(v) = opts.memory_latency {
        cfg.memory_latency = v;
    }
    if let Some(v) = opts.meta_cost {
        cfg.meta_dispatch_cost = v;
    }
    if let Some(v) = opts.cpi {
        cfg.cycle_per_instr = v;
    }
    if let Some(v) = opts.seed {
        cfg.seed = v;
    }
    if let Some(v) = opts.cap {
        cfg.cycle_cap = v;
    }
    if let Some(d) = &opts.denied {
        let cl = build_clusters(cfg.grid);
        let set = match d.as_str() {
            "none" => Default::default(),
            "all-heads" => all_heads(&cl),
            s if s.starts_with("random:") => {
                let f: f64 = s["random:".len()..].parse().map_err(|_| CliError::Usage(format!("bad fraction in `{s}`")))?;
                random_denied(&cl, f, cfg.seed)
            }
            s => s
                .split(',')
                .map(|x| x.trim().parse().map(crate::topology::CoreId))
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("bad denied list `{s}`")))?,
        };
        cfg.denied_cores = set.into_iter().map(|c| c.0).collect();
    }
    if opts.trace.is_some() {
        cfg.trace_cores = true;
        cfg.trace_regs = true;
        cfg.trace_messages = true;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn summary(label: &str, m: &Metrics) -> String {
    format!(
        "{label:<8} makespan {:>9}  energy {:>9}  messages {:>7}  hops {:>7}  memory {:>6}  qts {:>5}",
        m.makespan, m.energy, m.messages, m.hops, m.memory_ops, m.qt_count
    )
}

fn cmd_asm(input: &str, json_out: bool) -> Result<String, CliError> {
    let p = load_program(input)?;
    if json_out {
        let fragments: Vec<_> = p
            .fragments
            .iter()
            .map(|f| json!({"name": f.name, "instructions": f.body.len(), "meta": f.meta_count()}))
            .collect();
        let v = json!({"entry": p.entry_fragment().name, "fragments": fragments, "symbols": p.symbols()});
        return Ok(format!("{}\n", serde_json::to_string_pretty(&v).expect("json")));
    }
    let mut out = String::new();
    let _ = writeln!(out, "; fragment        instrs  meta");
    for f in &p.fragments {
        let _ = writeln!(out, "; {:<15} {:>6}  {:>4}", f.name, f.body.len(), f.meta_count());
    }
    out.push_str(&disassemble(&p));
    Ok(out)
}

fn cmd_run(spec: &str, opts: &RunOpts) -> Result<String, CliError> {
    let p = load_program(spec)?;
    let cfg = build_config(opts)?;
    let out = run(&p, &cfg)?;
    if let Some(dir) = &opts.trace {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        write(&dir.join("events.jsonl"), &out.log.to_jsonl())?;
        write(&dir.join("cores.jsonl"), &core_trace_jsonl(&out.core_trace))?;
        write(&dir.join("messages.csv"), &message_trace_csv(&out.message_trace))?;
    }
    eprintln!("{}", summary("empa", &out.metrics));
    let v = json!({"metrics": out.metrics, "final_state": out.final_state});
    Ok(format!("{}\n", serde_json::to_string_pretty(&v).expect("json")))
}

pub const SWEEP_HEADER: &str = "param,empa_makespan,spa_makespan,empa_spawn_cycles,spa_spawn_cycles,empa_energy,spa_energy,empa_memory_ops,spa_memory_ops,empa_messages,empa_qt_count";

fn sweep_values(values: &str) -> Result<Vec<u32>, CliError> {
    let list = values.split_once('=').map_or(values, |(_, v)| v);
    list.split(',')
        .map(|v| v.trim().parse().map_err(|_| CliError::Usage(format!("bad sweep value `{v}`"))))
        .collect()
}

/// Compare report per parameter value, in input order.
pub fn sweep(name: &str, values: &[u32], cfg: &SimConfig, workers: usize) -> Result<Vec<(u32, ComparisonReport)>, CliError> {
    let programs = values
        .iter()
        .map(|&v| {
            let src = corpus_source(name, Some(v))?;
            let p = assemble(&src).map_err(|d| CliError::Assembly(d.to_string()))?;
            Ok((v, p))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let workers = workers.max(1);
    let mut results: Vec<Option<Result<ComparisonReport, SimError>>> = (0..programs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (chunk_programs, chunk_results) in programs.chunks(programs.len().div_ceil(workers).max(1)).zip(results.chunks_mut(programs.len().div_ceil(workers).max(1))) {
            s.spawn(move || {
                for ((_, p), slot) in chunk_programs.iter().zip(chunk_results.iter_mut()) {
                    *slot = Some(compare(p, cfg));
                }
            });
        }
    });
    values
        .iter()
        .zip(results)
        .map(|(&v, r)| Ok((v, r.expect("every slot is filled")?)))
        .collect()
}

pub fn sweep_csv(rows: &[(u32, ComparisonReport)]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for (v, r) in rows {
        let _ = writeln!(
            out,
            "{v},{},{},{},{},{},{},{},{},{},{}",
            r.empa.makespan,
            r.spa.makespan,
            r.empa.spawn_cycles,
            r.spa.spawn_cycles,
            r.empa.energy,
            r.spa.energy,
            r.empa.memory_ops,
            r.spa.memory_ops,
            r.empa.messages,
            r.empa.qt_count
        );
    }
    out
}

fn cmd_sweep(spec: &str, values: &str, opts: &RunOpts, workers: usize) -> Result<String, CliError> {
    let (name, _) = corpus_ref(spec).ok_or_else(|| CliError::Usage("sweeps need a corpus:NAME program".into()))?;
    let cfg = build_config(opts)?;
    let rows = sweep(name, &sweep_values(values)?, &cfg, workers)?;
    for (v, r) in &rows {
        eprintln!("{name}={v}");
        eprintln!("  {}", summary("empa", &r.empa));
        eprintln!("  {}", summary("baseline", &r.spa));
    }
    Ok(sweep_csv(&rows))
}

fn cmd_compare(spec: &str, opts: &RunOpts) -> Result<String, CliError> {
    let p = load_program(spec)?;
    let cfg = build_config(opts)?;
    let r = compare(&p, &cfg)?;
    eprintln!("{}", summary("empa", &r.empa));
    eprintln!("{}", summary("baseline", &r.spa));
    for n in &r.notes {
        eprintln!("note: {n}");
    }
    Ok(format!("{}\n", serde_json::to_string_pretty(&r).expect("json")))
}

fn class_name(c: MemberClass) -> &'static str {
    match c {
        MemberClass::Head => "head",
        MemberClass::Ordinary => "ordinary",
        MemberClass::Corresponding => "corresponding",
        MemberClass::External => "external",
        MemberClass::Phantom => "phantom",
    }
}

pub fn cmd_topology(grid: GridConfig, json_out: bool) -> String {
    let cl = build_clusters(grid);
    let mut rows = Vec::new();
    for c in grid.cores() {
        let (x, y) = grid.xy(c);
        let h = grid.hex(c);
        let a = cl.address_of(c).expect("physical core");
        let class = if a.slot == 0 { MemberClass::Head } else { MemberClass::Ordinary };
        let extended = cl.is_head(c).then(|| cl.extended_cluster(c).map(|v| v.len()).unwrap_or(0));
        rows.push((c, x, y, h, a, class, extended));
    }
    if json_out {
        let v: Vec<_> = rows
            .iter()
            .map(|(c, x, y, h, a, class, ext)| {
                json!({"id": c.0, "x": x, "y": y, "q": h.q, "r": h.r, "cluster": a.cluster, "slot": a.slot,
                       "address": cl.encode_address(*a).expect("valid"), "class": class_name(*class), "extended_size": ext})
            })
            .collect();
        return format!("{}\n", serde_json::to_string_pretty(&json!({"grid": grid.to_string(), "cores": v})).expect("json"));
    }
    let mut out = String::from("id\tx\ty\tq\tr\taddress\tclass\textended\n");
    for (c, x, y, h, a, class, ext) in rows {
        let ext = ext.map_or_else(|| "-".to_owned(), |e| e.to_string());
        let _ = writeln!(out, "{}\t{x}\t{y}\t{}\t{}\t{a}\t{}\t{ext}", c.0, h.q, h.r, class_name(class));
    }
    out
}

fn cmd_corpus(name: Option<&str>) -> Result<String, CliError> {
    match name {
        None => {
            let mut out = String::new();
            for (n, p) in workloads::CORPUS {
                let _ = writeln!(out, "{n}\t{}", p.map_or_else(|| "-".into(), |v| v.to_string()));
            }
            Ok(out)
        }
        Some(spec) => {
            let (n, p) = match spec.split_once(':') {
                Some((n, p)) => (n, p.parse().ok()),
                None => (spec, None),
            };
            corpus_source(n, p)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Asm { input, json } => cmd_asm(input, *json),
        Command::Run { program, opts } => cmd_run(program, opts),
        Command::Compare { program, opts, sweep: Some(values), workers } => cmd_sweep(program, values, opts, *workers),
        Command::Compare { program, opts, sweep: None, .. } => cmd_compare(program, opts),
        Command::Sweep { program, values, opts, workers } => cmd_sweep(program, values, opts, *workers),
        Command::Topology { grid, json } | Command::Info { what: InfoCommand::Topology { grid, json } } => {
            Ok(cmd_topology(*grid, *json))
        }
        Command::Corpus { name } => cmd_corpus(name.as_deref()),
    }
}

/// Entry point of the `empa` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Sim(SimError::Deadlock { blocked, .. }) = &e {
                eprintln!("{}", serde_json::to_string_pretty(blocked).expect("json"));
            }
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_references() {
        assert_eq!(corpus_ref("corpus:fib:7"), Some(("fib", Some(7))));
        assert_eq!(corpus_ref("corpus:fib"), Some(("fib", None)));
        assert_eq!(corpus_ref("prog.s"), None);
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = std::env::temp_dir().join(format!("empa-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.json");
        fs::write(&path, r#"{"hop_cost": 9, "memory_latency": 50}"#).unwrap();
        let opts = RunOpts { config: Some(path), hop_cost: Some(2), ..RunOpts::default() };
        let cfg = build_config(&opts).unwrap();
        assert_eq!((cfg.hop_cost, cfg.memory_latency), (2, 50));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn denied_specs() {
        let o = |d: &str| RunOpts { denied: Some(d.into()), ..RunOpts::default() };
        assert_eq!(build_config(&o("3,5")).unwrap().denied_cores, vec![3, 5]);
        assert!(build_config(&o("all-heads")).unwrap().denied_cores.contains(&0));
        assert!(build_config(&o("x")).is_err());
        assert!(build_config(&o("99")).is_err());
    }

    #[test]
    fn sweep_values_accept_prefix() {
        assert_eq!(sweep_values("N=4,8").unwrap(), vec![4, 8]);
        assert_eq!(sweep_values("16").unwrap(), vec![16]);
    }
}
