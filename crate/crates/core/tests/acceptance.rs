//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use empa_core::engine::{random_denied, run, run_spa_baseline, LogKind, RunOutput, SimConfig, Simulation};
use empa_core::isa::{assemble, Program};
use empa_core::messaging::{Node, Router};
use empa_core::topology::{build_clusters, CoreId, GridConfig, HexCoord};
use empa_core::workloads::{self, COUNTER_ADDR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANDOM_PROGRAMS: u64 = 200;
const LIMIT_COMPAT: Duration = Duration::from_secs(10);
const LIMIT_TOPOLOGY: Duration = Duration::from_secs(5);
const LIMIT_ROUTING: Duration = Duration::from_secs(10);
const LIMIT_SWEEP: Duration = Duration::from_secs(30);
const SWEEP: [u32; 5] = [4, 8, 16, 32, 64];
/// Worst relative deviation from the fitted c*log2(N) curve.
const TOL_LOG_FIT: f64 = 0.25;
/// Worst relative deviation from the fitted c*N line.
const TOL_LINEAR_FIT: f64 = 0.10;
const SAVED_REGS: u64 = 4;
const SUB_DEPTH: u32 = 8;
const LATCH_SEEDS: u64 = 100;
const DENIED_FRACTION: f64 = 0.2;
const DENIED_SEEDS: [u64; 3] = [1, 2, 3];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn program(name: &str, param: Option<u32>) -> Program {
    assemble(&workloads::source(name, param).expect("corpus entry")).expect("corpus assembles")
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(took)
    }
}

fn compatibility() -> Outcome {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let mut programs: Vec<(String, Program)> = workloads::CORPUS
        .iter()
        .map(|(n, _)| (n.to_string(), program(n, None)))
        .filter(|(_, p)| p.is_conventional())
        .collect();
    let corpus = programs.len();
    programs.extend((0..RANDOM_PROGRAMS).map(|s| (format!("random#{s}"), common::random_conventional(s))));
    for (name, p) in &programs {
        let e = run(p, &cfg).map_err(|e| format!("{name}: {e}"))?;
        let s = run_spa_baseline(p, &cfg).map_err(|e| format!("{name} baseline: {e}"))?;
        ensure!(e.final_state == s.final_state, "{name}: final states differ");
        let (regs, mem) = common::interpret(p);
        ensure!(e.final_state.registers == regs && e.final_state.memory == mem, "{name}: disagrees with the reference interpreter");
    }
    let took = within(LIMIT_COMPAT, start)?;
    Ok(format!("{corpus} corpus + {RANDOM_PROGRAMS} random programs identical in {took:.2?}"))
}

fn head_cell(h: HexCoord) -> bool {
    (h.q + 3 * h.r).rem_euclid(7) == 0
}

fn topology() -> Outcome {
    let start = Instant::now();
    let mut grids = 0;
    let mut interior_heads = 0;
    for w in 1..=16 {
        for h in 1..=16 {
            let grid = GridConfig::new(w, h).unwrap();
            let cl = build_clusters(grid);
            let mut codes = BTreeSet::new();
            for c in grid.cores() {
                let hex = grid.hex(c);
                let lattice: Vec<HexCoord> = (0..6)
                    .map(|d| empa_core::topology::Direction::ALL[d])
                    .map(|d| hex.step(d))
                    .collect();
                let on_grid = lattice.iter().filter(|n| grid.core_at_hex(**n).is_some()).count();
                ensure!(cl.neighbors(c).len() == on_grid, "{w}x{h} core {c}: degree {}", cl.neighbors(c).len());
                if on_grid == 6 {
                    ensure!(cl.neighbors(c).len() == 6, "{w}x{h}: interior degree");
                }
                let heads: Vec<HexCoord> = std::iter::once(hex).chain(lattice).filter(|&x| head_cell(x)).collect();
                ensure!(heads.len() == 1, "{w}x{h} core {c}: {} heads in closed neighborhood", heads.len());
                let cluster = cl.cluster_of(c);
                ensure!(cluster.members().any(|m| m == c), "{w}x{h} core {c} missing from its cluster");
                if let Some(hd) = cluster.head() {
                    ensure!(grid.hex(hd) == heads[0], "{w}x{h} core {c}: wrong head");
                }
                let a = cl.address_of(c).unwrap();
                let code = cl.encode_address(a).unwrap();
                ensure!(cl.decode_address(code).unwrap() == a && cl.core_of(a) == Some(c), "{w}x{h} core {c}: address");
                ensure!(codes.insert(code), "{w}x{h}: address {code} reused");
            }
            let members: usize = cl.clusters().iter().map(|k| k.members().count()).sum();
            ensure!(members == grid.core_count(), "{w}x{h}: clusters cover {members} cores");
            for hd in cl.heads() {
                let ext = cl.extended_cluster(hd).unwrap().len();
                let center = grid.hex(hd);
                let mut full = true;
                for dq in -2i64..=2 {
                    for dr in -2i64..=2 {
                        let x = HexCoord { q: center.q + dq, r: center.r + dr };
                        if x.distance(center) <= 2 && grid.core_at_hex(x).is_none() {
                            full = false;
                        }
                    }
                }
                ensure!(ext <= 19, "{w}x{h}: extended cluster of {hd} has {ext}");
                if full {
                    interior_heads += 1;
                    ensure!(ext == 19, "{w}x{h}: interior head {hd} has {ext}");
                }
            }
            grids += 1;
        }
    }
    let took = within(LIMIT_TOPOLOGY, start)?;
    Ok(format!("{grids} grids, {interior_heads} interior heads with 19 members, in {took:.2?}"))
}

fn bfs(adj: &[Vec<CoreId>], from: CoreId, allowed: impl Fn(CoreId) -> bool) -> BTreeMap<CoreId, usize> {
    let mut d = BTreeMap::from([(from, 0)]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u.0 as usize] {
            if allowed(v) && !d.contains_key(&v) {
                d.insert(v, d[&u] + 1);
                q.push_back(v);
            }
        }
    }
    d
}

fn routing() -> Outcome {
    let start = Instant::now();
    let grid = GridConfig::new(10, 10).unwrap();
    let cl = build_clusters(grid);
    let router = Router::new(&cl, &BTreeSet::new());
    let adj: Vec<Vec<CoreId>> = grid.cores().map(|c| router.graph_neighbors(c).to_vec()).collect();
    let (mut pairs, mut intra, mut split, mut mem) = (0, 0, 0, 0);
    for s in grid.cores() {
        let dist = bfs(&adj, s, |_| true);
        let own = cl.cluster_of(s).id;
        let local = bfs(&adj, s, |v| cl.cluster_of(v).id == own);
        for t in grid.cores() {
            let r = router.route_cores(s, t).ok_or(format!("no route {s}->{t}"))?;
            ensure!(r.hops() as usize == dist[&t], "{s}->{t}: {} hops, BFS {}", r.hops(), dist[&t]);
            pairs += 1;
            if cl.cluster_of(t).id == own {
                if local.contains_key(&t) {
                    ensure!(r.cores().all(|c| cl.cluster_of(c).id == own), "{s}->{t} leaves its cluster");
                    intra += 1;
                } else {
                    // Edge clusters without an on-grid head can be split.
                    split += 1;
                }
            }
        }
        if !cl.is_head(s) {
            let m = router.route_to_memory(s).ok_or(format!("no memory route from {s}"))?;
            let via = router.service_head(s).unwrap();
            ensure!(m.contains(via) && m.nodes.iter().rev().nth(1) == Some(&Node::Core(via)), "{s}: memory bypasses {via}");
            if let Some(h) = cl.head_of(s) {
                ensure!(via == h, "{s}: memory served by {via}, own head {h}");
            }
            mem += 1;
        }
    }
    let took = within(LIMIT_ROUTING, start)?;
    Ok(format!("{pairs} pairs shortest, {intra} intra-cluster routes stay inside ({split} split-cluster pairs), {mem} memory routes via head, in {took:.2?}"))
}

fn mutex() -> Outcome {
    let p = program("mutex-counter", Some(8));
    let cfg = SimConfig { trace_cores: true, trace_regs: true, trace_messages: true, ..SimConfig::default() };
    let mut sim = Simulation::new(&p, cfg.clone()).map_err(|e| e.to_string())?;
    let mut events = 0u64;
    while sim.step().map_err(|e| e.to_string())? {
        events += 1;
        ensure!(sim.pool_conserved(), "pool not conserved after event {events} at t={}", sim.now());
    }
    ensure!(sim.is_quiescent(), "run did not finish cleanly");
    let out = sim.into_output();
    let counter = out.final_state.memory.get(&COUNTER_ADDR).copied().unwrap_or(0);
    ensure!(counter == 800, "counter = {counter}");
    let mut iv = out.guard_intervals.clone();
    ensure!(iv.len() == 800, "{} guarded executions", iv.len());
    iv.sort_by_key(|g| (g.enter, g.exit));
    for w in iv.windows(2) {
        ensure!(w[0].exit <= w[1].enter, "guard intervals overlap: {:?} {:?}", w[0], w[1]);
    }
    let mut dispatches = 0;
    for e in out.log.of_kind(LogKind::Dispatch) {
        let class = e.detail["class"].as_str().unwrap_or_default();
        ensure!(class == "Terminate" || e.detail["terminates_enqueued"] == 0, "{class} dispatched ahead of a termination at t={}", e.t);
        ensure!(class != "Other" || e.detail["creates_enqueued"] == 0, "Other dispatched ahead of a creation at t={}", e.t);
        dispatches += 1;
    }
    let again = run(&p, &cfg).map_err(|e| e.to_string())?;
    let same = |a: &RunOutput, b: &RunOutput| {
        a.log.to_jsonl() == b.log.to_jsonl()
            && a.metrics == b.metrics
            && a.final_state == b.final_state
            && a.core_trace == b.core_trace
            && a.message_trace == b.message_trace
    };
    ensure!(same(&out, &again), "replay differs");
    Ok(format!("counter 800, 800 disjoint guard intervals, {dispatches} dispatches in priority order, pool conserved over {events} events, replay identical"))
}

fn stackless_calls() -> Outcome {
    let p = program("subroutine", Some(SUB_DEPTH));
    let cfg = SimConfig::default();
    let e = run(&p, &cfg).map_err(|e| e.to_string())?;
    let s = run_spa_baseline(&p, &cfg).map_err(|e| e.to_string())?;
    let call_ops = |log: &empa_core::engine::EventLog| {
        log.of_kind(LogKind::Memory)
            .filter(|x| x.detail["purpose"].as_str().is_some_and(|p| p.starts_with("call_")))
            .count() as u64
    };
    let calls = u64::from(SUB_DEPTH) + 1;
    ensure!(e.final_state.registers[2] == s.final_state.registers[2], "results differ");
    ensure!(call_ops(&e.log) == 0 && e.metrics.call_memory_ops == 0, "EMPA made {} call memory ops", call_ops(&e.log));
    let want = calls * 2 * (SAVED_REGS + 1);
    ensure!(call_ops(&s.log) == want && s.metrics.call_memory_ops == want, "baseline made {} call memory ops, want {want}", call_ops(&s.log));
    Ok(format!("EMPA 0 call memory ops; baseline {want} over {calls} calls (2*(k+1) = {} each)", 2 * (SAVED_REGS + 1)))
}

/// Least-squares fit of y = c*x through the origin and the worst relative deviation.
fn fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let c = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / xs.iter().map(|x| x * x).sum::<f64>();
    let worst = xs.iter().zip(ys).map(|(x, y)| ((y - c * x) / (c * x)).abs()).fold(0.0, f64::max);
    (c, worst)
}

fn spawn_scaling() -> Outcome {
    let start = Instant::now();
    // N workers plus the root need more cores than an 8x8 grid has.
    let cfg = SimConfig { grid: GridConfig::new(16, 16).unwrap(), ..SimConfig::default() };
    let (mut empa, mut spa) = (Vec::new(), Vec::new());
    for n in SWEEP {
        let p = program("spawn-tree", Some(n));
        empa.push(run(&p, &cfg).map_err(|e| format!("N={n}: {e}"))?.metrics.spawn_cycles as f64);
        spa.push(run_spa_baseline(&p, &cfg).map_err(|e| format!("N={n}: {e}"))?.metrics.spawn_cycles as f64);
    }
    let logs: Vec<f64> = SWEEP.iter().map(|&n| f64::from(n).log2()).collect();
    let lin: Vec<f64> = SWEEP.iter().map(|&n| f64::from(n)).collect();
    let (c1, d1) = fit(&logs, &empa);
    let (c2, d2) = fit(&lin, &spa);
    let took = within(LIMIT_SWEEP, start)?;
    let detail = format!("EMPA {empa:?} ~ {c1:.2}*log2N (worst {:.1}%), baseline {spa:?} ~ {c2:.2}*N (worst {:.1}%), {took:.2?}", d1 * 100.0, d2 * 100.0);
    ensure!(d1 <= TOL_LOG_FIT && d2 <= TOL_LINEAR_FIT, "{detail}");
    Ok(detail)
}

fn energy() -> Outcome {
    let p = program("fib", None);
    let small = run(&p, &SimConfig::default()).map_err(|e| e.to_string())?;
    let large = run(&p, &SimConfig { grid: GridConfig::new(16, 16).unwrap(), ..SimConfig::default() }).map_err(|e| e.to_string())?;
    ensure!(small.metrics.energy == large.metrics.energy, "energy {} on 8x8 vs {} on 16x16", small.metrics.energy, large.metrics.energy);
    for out in [&small, &large] {
        let hired: BTreeSet<u32> = out.log.of_kind(LogKind::Hire).filter_map(|e| e.core).collect();
        let sum: u64 = out.metrics.per_core.iter().map(|c| c.active_cycles).sum();
        ensure!(sum == out.metrics.energy, "per-core energy {sum} != total {}", out.metrics.energy);
        for c in &out.metrics.per_core {
            ensure!(c.active_cycles == 0 || hired.contains(&c.core), "core {} was never hired but spent {} cycles", c.core, c.active_cycles);
        }
    }
    let idle = 256 - large.metrics.per_core.iter().filter(|c| c.active_cycles > 0).count();
    Ok(format!("energy {} on both grids; {idle} idle cores on 16x16 contribute 0", small.metrics.energy))
}

/// Parent creates a child, does unrelated work, then waits and clones.
fn latch_program(seed: u64) -> (String, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("main:\n");
    for r in 1..=6 {
        let _ = writeln!(s, "  LI r{r}, {}", rng.random_range(-9..10));
    }
    let ret: Vec<String> = (1..=6).filter(|_| rng.random_bool(0.6)).map(|r| format!("r{r}")).collect();
    let ret = if ret.is_empty() { "r1".to_owned() } else { ret.join(",") };
    let _ = writeln!(s, "  QCREATE r10, child, {{r1,r2}}, {{{ret}}}");
    for _ in 0..rng.random_range(0..40) {
        let (d, a, b) = (rng.random_range(1..10), rng.random_range(0..10), rng.random_range(0..10));
        let op = ["ADD", "SUB", "MUL"][rng.random_range(0..3)];
        let _ = writeln!(s, "  {op} r{d}, r{a}, r{b}");
    }
    let _ = writeln!(s, "  QWAIT r10\n  QCLONE {{{ret}}}\n  HALT\nchild:");
    for _ in 0..rng.random_range(0..20) {
        let (d, a) = (rng.random_range(1..7), rng.random_range(0..7));
        let _ = writeln!(s, "  ADD r{d}, r{d}, r{a}\n  LI r{a}, {}", rng.random_range(-50..50));
    }
    s.push_str("  QEND\n");
    (s, rng.random_range(1..6))
}

fn latch_isolation() -> Outcome {
    let mut early = 0;
    for seed in 0..LATCH_SEEDS {
        let (src, hop) = latch_program(seed);
        let p = assemble(&src).map_err(|e| format!("seed {seed}: {e}"))?;
        let cfg = SimConfig { hop_cost: hop, trace_cores: true, trace_regs: true, ..SimConfig::default() };
        let trace = |withhold: bool| {
            let mut sim = Simulation::new(&p, SimConfig { withhold_results: withhold, ..cfg.clone() }).unwrap();
            let root = sim.root_core().unwrap().0;
            let _ = sim.run_to_end();
            let recs: Vec<_> = sim.core_trace().iter().filter(|r| r.core == root).cloned().collect();
            recs
        };
        let real = trace(false);
        let control = trace(true);
        let steps = |recs: &[empa_core::engine::CoreTraceRecord]| {
            let mut out = Vec::new();
            for r in recs.iter().filter(|r| r.event.starts_with("step")) {
                out.push((r.time, r.ip, r.regs.clone()));
                if r.event == "step QWAIT" {
                    break;
                }
            }
            out
        };
        let (a, b) = (steps(&real), steps(&control));
        ensure!(a == b, "seed {seed}: parent registers diverge before QCLONE");
        let arrival = real.iter().find(|r| r.event.starts_with("result")).map(|r| (r.time, r.regs.clone()));
        let qwait = a.last().map(|x| x.0).unwrap_or(0);
        if let Some((t, regs)) = arrival {
            if t <= qwait {
                early += 1;
                let before = a.iter().rev().find(|x| x.0 <= t).map(|x| x.2.clone());
                ensure!(before.is_none() || before == Some(regs), "seed {seed}: arrival changed the register file");
            }
        }
        ensure!(control.iter().all(|r| !r.event.starts_with("result")), "seed {seed}: withheld result was delivered");
    }
    ensure!(early > 0, "no seed delivered the result before the parent reached QWAIT");
    Ok(format!("{LATCH_SEEDS} seeds identical to the withheld control; {early} with the result landing before QWAIT"))
}

fn denied_cores() -> Outcome {
    let base = SimConfig::default();
    let cl = build_clusters(base.grid);
    let mut runs = 0;
    for seed in DENIED_SEEDS {
        let denied = random_denied(&cl, DENIED_FRACTION, seed);
        let cfg = SimConfig { seed, denied_cores: denied.iter().map(|c| c.0).collect(), ..base.clone() };
        for (name, _) in workloads::CORPUS {
            let out = run(&program(name, None), &cfg).map_err(|e| format!("seed {seed} {name}: {e}"))?;
            for e in out.log.of_kind(LogKind::Hire) {
                ensure!(!e.core.is_some_and(|c| denied.contains(&CoreId(c))), "seed {seed} {name}: denied core {:?} hired", e.core);
            }
            runs += 1;
        }
    }
    // Deny an interior head; its members must reach memory through another head.
    let head = cl.heads().find(|&h| cl.extended_cluster(h).unwrap().len() == 19).unwrap();
    let denied = BTreeSet::from([head]);
    let router = Router::new(&cl, &denied);
    let mut members = 0;
    for m in cl.cluster_of(head).members().filter(|&m| m != head) {
        let via = router.service_head(m).ok_or(format!("member {m} has no head"))?;
        let route = router.route_to_memory(m).unwrap();
        ensure!(via != head && cl.is_head(via) && !route.contains(head), "member {m} still routes through {head}");
        let proxy = cl.proxy_avoiding(m, &denied).map_err(|e| e.to_string())?;
        let hex: Vec<Vec<CoreId>> = cl.grid().cores().map(|c| cl.neighbors(c).to_vec()).collect();
        let d = bfs(&hex, via, |c| !denied.contains(&c));
        let first = route.cores().nth(1).ok_or(format!("member {m}: empty route"))?;
        ensure!(d[&proxy] + 1 == d[&m], "member {m}: proxy {proxy} is not one step closer to {via}");
        ensure!(route.hops() as usize == d[&m] + 1 && d.get(&first) == d.get(&proxy), "member {m}: route is not a shortest proxy path");
        members += 1;
    }
    let cfg = SimConfig { denied_cores: vec![head.0], ..base };
    for (name, _) in workloads::CORPUS {
        let out = run(&program(name, None), &cfg).map_err(|e| format!("denied head {name}: {e}"))?;
        for e in out.log.of_kind(LogKind::Memory) {
            ensure!(e.detail["head"] != head.0, "{name}: memory served by the denied head");
        }
        runs += 1;
    }
    Ok(format!("{runs} runs complete, no denied core hired; {members} members of denied head {head} served elsewhere"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 compatibility differential", compatibility),
        ("2 topology suite", topology),
        ("3 routing oracle", routing),
        ("4 mutex protocol invariants", mutex),
        ("5 stack-less calls", stackless_calls),
        ("6 spawn scaling shape", spawn_scaling),
        ("7 energy proxy", energy),
        ("8 latch isolation", latch_isolation),
        ("9 denied-core avoidance", denied_cores),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS criterion {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL criterion {name}: panicked");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
