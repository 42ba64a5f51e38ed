use empa_core::core_unit::{CoreState, QtId};
use empa_core::engine::{random_denied, run, run_spa_baseline, LogKind, SimConfig, SimError, Simulation};
use empa_core::isa::{assemble, RegMask};
use empa_core::messaging::{Endpoint, Message, MessageKind, Payload};
use empa_core::topology::{CoreId, GridConfig};
use empa_core::workloads::{self, COUNTER_ADDR};

fn fib_value(n: u32) -> i64 {
    let (mut a, mut b) = (0i64, 1i64);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}

fn fib_calls(n: u32) -> u64 {
    if n < 2 {
        1
    } else {
        1 + fib_calls(n - 1) + fib_calls(n - 2)
    }
}

fn grid(w: u32, h: u32) -> SimConfig {
    SimConfig { grid: GridConfig::new(w, h).unwrap(), ..SimConfig::default() }
}

#[test]
fn straight_line_program_costs_one_cycle_each() {
    let p = assemble("LI r1,2\nLI r2,3\nADD r3,r1,r2\nHALT\n").unwrap();
    let out = run(&p, &SimConfig::default()).unwrap();
    assert_eq!(out.final_state.registers[3], 5);
    assert_eq!(out.metrics.makespan, 4);
    assert_eq!(out.metrics.messages, 0);
    assert_eq!(out.metrics.energy, 4);
}

#[test]
fn fib_ten() {
    let p = assemble(&workloads::fib(10)).unwrap();
    let out = run(&p, &SimConfig::default()).unwrap();
    assert_eq!(out.final_state.registers[2], fib_value(10));
    assert_eq!(out.metrics.qt_count, fib_calls(10));
}

#[test]
fn corpus_runs_in_both_engines() {
    for (name, _) in workloads::CORPUS {
        let p = assemble(&workloads::source(name, None).unwrap()).unwrap();
        let cfg = SimConfig::default();
        run(&p, &cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        run_spa_baseline(&p, &cfg).unwrap_or_else(|e| panic!("{name} baseline: {e}"));
    }
}

#[test]
fn nack_leaves_denied_core_untouched() {
    let p = assemble("main:\n LI r1, 20\n LI r2, 1\n.L:\n SUB r1, r1, r2\n BNE r1, r0, .L\n HALT\n").unwrap();
    let cfg = SimConfig { denied_cores: vec![9], ..SimConfig::default() };
    let mut sim = Simulation::new(&p, cfg).unwrap();
    let root = sim.root_core().unwrap();
    let src = sim.clustering().address_of(root).unwrap();
    let dst = sim.clustering().address_of(CoreId(9)).unwrap();
    let msg = Message::new(
        MessageKind::RegisterTransfer,
        Endpoint::Core(src),
        Endpoint::Core(dst),
        Payload::Registers { qt: QtId(77), mask: RegMask::from_bits(0b110), values: vec![5, 6] },
    )
    .unwrap();
    sim.inject(msg).unwrap();
    sim.run_to_end().unwrap();
    let target = sim.core(CoreId(9));
    assert_eq!(target.state, CoreState::Denied);
    assert!(target.regs.values().iter().all(|&v| v == 0));
    assert_eq!(sim.metrics().nacks, 1);
    assert_eq!(sim.log().of_kind(LogKind::Nack).count(), 1);
}

#[test]
fn guard_serialises_counter_updates() {
    let cfg = SimConfig::default();
    let guarded = run(&assemble(&workloads::mutex_counter(4, 20)).unwrap(), &cfg).unwrap();
    assert_eq!(guarded.final_state.memory.get(&COUNTER_ADDR).copied(), Some(80));
    assert_eq!(guarded.metrics.guard_calls, 80);
    let mut iv = guarded.guard_intervals.clone();
    iv.sort_by_key(|g| g.enter);
    assert!(iv.windows(2).all(|w| w[0].exit <= w[1].enter));

    let unguarded = run(&assemble(&workloads::mutex_unguarded(4, 20)).unwrap(), &cfg).unwrap();
    let lost = unguarded.final_state.memory.get(&COUNTER_ADDR).copied().unwrap_or(0);
    assert!(lost < 80, "racing workers should lose updates, got {lost}");
}

#[test]
fn qend_with_live_children_is_deferred() {
    let out = run(&assemble(&workloads::spawn_tree(8)).unwrap(), &SimConfig::default()).unwrap();
    let defers: Vec<_> = out.log.of_kind(LogKind::Defer).collect();
    assert!(defers.iter().any(|e| e.detail["op"] == "QEND"));
    // Each deferring core ends its QT only after all of its children did.
    for d in defers.iter().filter(|e| e.detail["op"] == "QEND") {
        let qt = d.qt.unwrap();
        let end = out.log.of_kind(LogKind::QtEnd).find(|e| e.qt == Some(qt)).unwrap();
        assert!(end.t > d.t);
    }
}

#[test]
fn pending_rehire_skips_the_pool() {
    let p = assemble(&workloads::spawn_tree(16)).unwrap();
    let mut sim = Simulation::new(&p, grid(4, 3)).unwrap();
    let mut rehires = 0;
    loop {
        let before = sim.pool_counts().1;
        let seen = sim.log().of_kind(LogKind::Release).count();
        if !sim.step().unwrap() {
            break;
        }
        assert!(sim.pool_conserved(), "pool bookkeeping broke at t={}", sim.now());
        let new: Vec<_> = sim.log().of_kind(LogKind::Release).skip(seen).collect();
        if !new.is_empty() && new.iter().all(|e| e.detail["to"] == "pending") {
            rehires += new.len();
            assert!(sim.pool_counts().1 <= before);
        }
    }
    assert!(sim.is_quiescent());
    assert!(rehires > 0);
    assert!(sim.metrics().pool_exhaustions > 0);
}

#[test]
fn terminations_dispatch_before_creations() {
    let out = run(&assemble(&workloads::mutex_counter(8, 10)).unwrap(), &SimConfig::default()).unwrap();
    let mut checked = 0;
    for e in out.log.of_kind(LogKind::Dispatch) {
        let class = e.detail["class"].as_str().unwrap();
        if class != "Terminate" {
            assert_eq!(e.detail["terminates_enqueued"], 0, "{e:?}");
            checked += 1;
        }
        if class == "Other" {
            assert_eq!(e.detail["creates_enqueued"], 0, "{e:?}");
        }
    }
    assert!(checked > 0);
}

#[test]
fn parallel_fib_exhausts_small_grid_into_deadlock() {
    let p = assemble(&workloads::fib_parallel(10)).unwrap();
    match run(&p, &SimConfig::default()) {
        Err(SimError::Deadlock { blocked, .. }) => {
            assert!(!blocked.is_empty());
            assert!(blocked.iter().all(|b| b.state != "InPool"));
        }
        other => panic!("expected deadlock, got {:?}", other.map(|o| o.metrics)),
    }
    // With enough cores the same program finishes.
    let out = run(&p, &grid(16, 16)).unwrap();
    assert_eq!(out.final_state.registers[2], fib_value(10));
}

#[test]
fn replay_is_deterministic() {
    let p = assemble(&workloads::mutex_counter(8, 10)).unwrap();
    let a = run(&p, &SimConfig::default()).unwrap();
    let b = run(&p, &SimConfig::default()).unwrap();
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn walled_off_cores_are_not_hired() {
    let cfg = SimConfig::default();
    let cl = empa_core::topology::build_clusters(cfg.grid);
    let denied = random_denied(&cl, 0.2, 2);
    let cfg = SimConfig { denied_cores: denied.iter().map(|c| c.0).collect(), ..cfg };
    let out = run(&assemble(&workloads::fib_parallel(8)).unwrap(), &cfg).unwrap();
    assert_eq!(out.final_state.registers[2], fib_value(8));
    let stranded = out.log.of_kind(LogKind::Warning).find(|e| e.detail.get("stranded").is_some()).unwrap();
    let stranded: Vec<u32> = serde_json::from_value(stranded.detail["stranded"].clone()).unwrap();
    assert!(!stranded.is_empty());
    assert!(out.log.of_kind(LogKind::Hire).all(|e| !stranded.contains(&e.core.unwrap())));
}

#[test]
fn memory_reply_not_request_unblocks_the_core() {
    let p = assemble(
        "main:\n QCREATE r10, child, {}, {r2}\n QWAIT r10\n QCLONE {r2}\n HALT\n\
         child:\n LI r5, 64\n ST [r5+0], r5\n LD r2, [r5+0]\n LI r3, 1\n QEND\n",
    )
    .unwrap();
    let cfg = SimConfig { trace_cores: true, ..SimConfig::default() };
    let mut sim = Simulation::new(&p, cfg).unwrap();
    sim.run_to_end().unwrap();
    assert_eq!(sim.final_state().registers[2], 64);
    let root = sim.root_core().unwrap();
    let mem: Vec<_> = sim.log().of_kind(LogKind::Memory).filter(|e| e.detail["op"] == "memory_read").collect();
    assert_eq!(mem.len(), 1);
    let child = CoreId(mem[0].core.unwrap());
    assert_ne!(child, root);
    assert!(!sim.clustering().is_head(child));
    assert_eq!(mem[0].detail["head"], sim.clustering().head_of(child).unwrap().0);
    let request = sim.log().of_kind(LogKind::Arrive).find(|e| e.detail["kind"] == "memory_read").unwrap().t;
    let reply = sim.log().of_kind(LogKind::Arrive).find(|e| e.detail["kind"] == "memory_read_reply").unwrap();
    assert_eq!(reply.core, Some(child.0));
    assert!(request < reply.t);
    let steps: Vec<_> = sim.core_trace().iter().filter(|r| r.core == child.0 && r.event.starts_with("step")).collect();
    let ld = steps.iter().position(|r| r.event == "step LD").unwrap();
    assert!(steps[ld].time < request);
    assert!(steps[ld + 1].time >= reply.t, "core ran again before the reply arrived");
}

#[test]
fn disjoint_latches_survive_either_arrival_order() {
    let prog = |pad_a: usize, pad_b: usize| {
        let pad = |n| "  LI r9, 1\n".repeat(n);
        format!(
            "main:\n QCREATE r10, a, {{}}, {{r2}}\n QCREATE r11, b, {{}}, {{r3}}\n QWAIT r10\n QWAIT r11\n\
             QCLONE {{r2}}\n QCLONE {{r3}}\n HALT\na:\n{} LI r2, 7\n QEND\nb:\n{} LI r3, 9\n QEND\n",
            pad(pad_a),
            pad(pad_b)
        )
    };
    let mut orders = Vec::new();
    for (a, b) in [(0, 40), (40, 0)] {
        let out = run(&assemble(&prog(a, b)).unwrap(), &SimConfig::default()).unwrap();
        assert_eq!((out.final_state.registers[2], out.final_state.registers[3]), (7, 9));
        let arrivals: Vec<_> = out.log.of_kind(LogKind::Arrive).filter(|e| e.detail["kind"] == "qt_result").map(|e| e.t).collect();
        let ends: Vec<_> = out.log.of_kind(LogKind::QtEnd).filter(|e| e.qt != Some(0)).map(|e| e.qt).collect();
        orders.push((ends, arrivals.len()));
    }
    assert_eq!(orders[0].1, 2);
    assert_ne!(orders[0].0, orders[1].0, "both layouts returned in the same order");
}

#[test]
fn fib_call_traffic_matches_save_mask_oracle() {
    let p = assemble(&workloads::fib(10)).unwrap();
    let cfg = SimConfig::default();
    let empa = run(&p, &cfg).unwrap();
    let spa = run_spa_baseline(&p, &cfg).unwrap();
    // fib writes r1 r2 r3 r4 r10 r11; each call returns one of them.
    let k = 6 - 1;
    let calls = fib_calls(10);
    let count = |log: &empa_core::engine::EventLog| {
        log.of_kind(LogKind::Memory).filter(|e| e.detail["purpose"] != "data").count() as u64
    };
    assert_eq!(count(&empa.log), 0);
    assert_eq!(count(&spa.log), calls * 2 * (k + 1));
    assert_eq!(spa.final_state.registers[2], fib_value(10));
}

#[test]
fn mutex_comparison_reports_guard_waits() {
    let p = assemble(&workloads::mutex_counter(4, 10)).unwrap();
    let r = empa_core::engine::compare(&p, &SimConfig::default()).unwrap();
    assert!(r.notes.iter().any(|n| n.starts_with("scheduler events: 0")));
    assert!(r.notes.iter().any(|n| n.contains("guard wait cycles")));
    assert_eq!(r.empa.guard_calls, 40);
}
