//! Deterministic discrete-event loop binding cores, the processor, the
//! router and global memory, plus the single-core baseline interpreter.

mod compare;
mod config;
mod log;
mod memory;
mod metrics;
mod spa;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use compare::{compare, ComparisonReport};
pub use config::{all_heads, random_denied, ConfigError, SimConfig};
pub use log::{core_trace_jsonl, message_trace_csv, CoreTraceRecord, EventLog, LogEvent, LogKind, MessageTraceRecord};
pub use memory::{GlobalMemory, MemoryError};
pub use metrics::{union_length, CoreMetrics, FinalState, Metrics};
pub use spa::{lower, run_spa_baseline, SpaOp, SpaOutput};

use crate::core_unit::{Block, Core, CoreError, CoreState, MemOp, QtContext, QtId, StepOutcome};
use crate::isa::{DiagnosticList, FragmentId, Instr, Program, Reg, RegMask, Word};
use crate::messaging::{
    deliver, DeliveryError, Endpoint, Esme, EsmeAction, Message, MessageKind, MessagingError, MsgId, Payload, Route,
    Router,
};
use crate::processor::{Action, GuardCall, MetaClass, Processor, ProcessorError, Released};
use crate::topology::{build_clusters, Clustering, CoreId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedCore {
    pub core: u32,
    pub state: String,
    pub block: Option<String>,
    pub qt: Option<u32>,
    pub ip: Option<(usize, usize)>,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("program does not validate: {0}")]
    InvalidProgram(DiagnosticList),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("deadlock at cycle {time}: {} core(s) blocked", blocked.len())]
    Deadlock { time: u64, blocked: Vec<BlockedCore> },
    #[error("cycle cap {cap} exceeded")]
    CycleCapExceeded { cap: u64 },
    #[error("no cluster head is available for the root QT")]
    NoRootCore,
    #[error("baseline stack overflow (sp={sp})")]
    StackOverflow { sp: u64 },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Processor(#[from] ProcessorError),
    #[error(transparent)]
    Messaging(#[from] MessagingError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub final_state: FinalState,
    pub log: EventLog,
    pub core_trace: Vec<CoreTraceRecord>,
    pub message_trace: Vec<MessageTraceRecord>,
    /// Guarded-fragment executions: (fragment, qt, enter, exit).
    pub guard_intervals: Vec<GuardInterval>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardInterval {
    pub fragment: usize,
    pub qt: u32,
    pub enter: u64,
    pub exit: u64,
}

/// Phase 0 is ordinary work; phase 1 is the processor's dispatch at the end of a cycle.
type Key = (u64, u8, u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Event {
    Step(CoreId),
    MemIssue(CoreId, MemOp),
    Arrive(MsgId),
    Nack(MsgId),
    Dispatch,
    MetaComplete(CoreId),
    RootDone(CoreId),
}

#[derive(Clone, Debug)]
struct Flight {
    msg: Message,
    src: Option<CoreId>,
    dst: Option<CoreId>,
    route: Route,
}

/// Work a Morphing core finishes when its dispatch cost has elapsed.
#[derive(Clone, Copy, Debug)]
enum Completion {
    Create { child: CoreId, qt: QtId, rd: Reg, fragment: FragmentId, in_mask: RegMask, ret_mask: RegMask },
    Resume,
    GuardSend { guard_core: CoreId, qt: QtId, fragment: FragmentId, in_mask: RegMask, ret_mask: RegMask },
    GuardQueued,
    Terminate,
}

#[derive(Clone, Copy, Debug)]
struct PendingMem {
    core: CoreId,
    op: MemOp,
}

pub struct Simulation<'p> {
    program: &'p Program,
    config: SimConfig,
    clustering: Clustering,
    router: Router,
    cores: Vec<Core>,
    processor: Processor,
    esme: BTreeMap<CoreId, Esme>,
    memory: GlobalMemory,
    queue: BTreeMap<Key, Event>,
    seq: u64,
    now: u64,
    dispatch_at: Option<u64>,
    flights: BTreeMap<MsgId, Flight>,
    next_msg: u64,
    next_req: u64,
    pending_mem: BTreeMap<u64, PendingMem>,
    completions: BTreeMap<CoreId, Completion>,
    /// Cores spinning on a deferred QEND.
    deferred: BTreeSet<CoreId>,
    /// Child QT -> creation issue time, until it starts.
    create_issue: BTreeMap<QtId, u64>,
    spawn_intervals: Vec<(u64, u64)>,
    guard_open: BTreeMap<QtId, (FragmentId, u64)>,
    guard_intervals: Vec<GuardInterval>,
    withheld: Vec<Message>,
    next_qt: u32,
    root: Option<CoreId>,
    root_done: bool,
    root_regs: [Word; crate::isa::NUM_REGS],
    live_qts: u64,
    metrics: Metrics,
    log: EventLog,
    core_trace: Vec<CoreTraceRecord>,
    message_trace: Vec<MessageTraceRecord>,
}

/// Runs `program` to quiescence.
pub fn run(program: &Program, config: &SimConfig) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(program, config.clone())?;
    sim.run_to_end()?;
    Ok(sim.into_output())
}

impl<'p> Simulation<'p> {
    pub fn new(program: &'p Program, config: SimConfig) -> Result<Simulation<'p>, SimError> {
        config.validate()?;
        let diags = crate::isa::validate(program);
        if !diags.is_empty() {
            return Err(SimError::InvalidProgram(DiagnosticList(diags)));
        }
        let clustering = build_clusters(config.grid);
        let denied = config.denied_set();
        let router = Router::new(&clustering, &denied);
        let cores = clustering.grid().cores().map(|c| Core::new(c, denied.contains(&c))).collect();
        let processor = Processor::new(clustering.grid().cores(), &denied);
        let esme = clustering.heads().map(|h| (h, Esme::new())).collect();
        let memory = GlobalMemory::new(config.memory_size);
        let mut sim = Simulation {
            program,
            config,
            clustering,
            router,
            cores,
            processor,
            esme,
            memory,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            dispatch_at: None,
            flights: BTreeMap::new(),
            next_msg: 0,
            next_req: 0,
            pending_mem: BTreeMap::new(),
            completions: BTreeMap::new(),
            deferred: BTreeSet::new(),
            create_issue: BTreeMap::new(),
            spawn_intervals: Vec::new(),
            guard_open: BTreeMap::new(),
            guard_intervals: Vec::new(),
            withheld: Vec::new(),
            next_qt: 1,
            root: None,
            root_done: false,
            root_regs: [0; crate::isa::NUM_REGS],
            live_qts: 0,
            metrics: Metrics::default(),
            log: EventLog::default(),
            core_trace: Vec::new(),
            message_trace: Vec::new(),
        };
        sim.place_root()?;
        Ok(sim)
    }

    fn place_root(&mut self) -> Result<(), SimError> {
        let root = self
            .clustering
            .heads()
            .filter(|h| !self.router.is_denied(*h))
            .min()
            .ok_or(SimError::NoRootCore)?;
        self.processor.pool.take(root);
        // Denied cores can wall off pockets of the grid; nothing there can be reached.
        let mut reached = BTreeSet::from([root]);
        let mut todo = vec![root];
        while let Some(u) = todo.pop() {
            for &v in self.router.graph_neighbors(u) {
                if reached.insert(v) {
                    todo.push(v);
                }
            }
        }
        let stranded: BTreeSet<CoreId> =
            self.clustering.grid().cores().filter(|c| !reached.contains(c) && !self.router.is_denied(*c)).collect();
        if !stranded.is_empty() {
            self.log.push(0, LogKind::Warning, None, None, json!({"stranded": stranded.iter().map(|c| c.0).collect::<Vec<_>>()}));
        }
        self.processor.pool.strand(stranded);
        let core = &mut self.cores[root.0 as usize];
        core.hire(0, QtContext { qt: QtId(0), parent: None, ret_mask: RegMask::EMPTY, guard: None }, self.program.entry);
        core.block = None;
        core.set_state(0, CoreState::Running);
        self.root = Some(root);
        self.live_qts = 1;
        self.metrics.max_live_qts = 1;
        self.log.push(0, LogKind::Hire, Some(root.0), Some(0), json!({"root": true, "fragment": self.program.entry_fragment().name}));
        self.log.push(0, LogKind::QtStart, Some(root.0), Some(0), json!({"fragment": self.program.entry_fragment().name}));
        self.schedule(0, 0, Event::Step(root));
        Ok(())
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, id: CoreId) -> &Core {
        &self.cores[id.0 as usize]
    }

    pub fn root_core(&self) -> Option<CoreId> {
        self.root
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn core_trace(&self) -> &[CoreTraceRecord] {
        &self.core_trace
    }

    pub fn memory(&self) -> &GlobalMemory {
        &self.memory
    }

    /// (hired, pooled, denied) as the processor sees them.
    pub fn pool_counts(&self) -> (usize, usize, usize) {
        self.processor.pool.counts()
    }

    /// Pool bookkeeping agrees with the core states and covers every core.
    pub fn pool_conserved(&self) -> bool {
        let (hired, pooled, denied) = self.pool_counts();
        let in_pool = self.cores.iter().filter(|c| c.state == CoreState::InPool).count();
        let denied_states = self.cores.iter().filter(|c| c.state == CoreState::Denied).count();
        hired + pooled + denied == self.cores.len() && in_pool == pooled && denied_states == denied
    }

    pub fn messages_in_flight(&self) -> usize {
        self.flights.len()
    }

    pub fn is_quiescent(&self) -> bool {
        self.root_done && self.queue.is_empty() && self.flights.is_empty() && self.processor.fifo.is_empty()
    }

    fn schedule(&mut self, time: u64, phase: u8, ev: Event) {
        self.queue.insert((time, phase, self.seq), ev);
        self.seq += 1;
    }

    fn schedule_dispatch(&mut self) {
        if self.dispatch_at != Some(self.now) {
            self.dispatch_at = Some(self.now);
            self.schedule(self.now, 1, Event::Dispatch);
        }
    }

    fn qt_of(&self, core: CoreId) -> Option<u32> {
        self.cores[core.0 as usize].qt().map(|q| q.0)
    }

    fn addr(&self, core: CoreId) -> Endpoint {
        Endpoint::Core(self.clustering.address_of(core).expect("physical core has an address"))
    }

    fn set_state(&mut self, core: CoreId, state: CoreState) {
        self.cores[core.0 as usize].set_state(self.now, state);
    }

    fn trace(&mut self, core: CoreId, event: String) {
        if !self.config.trace_cores {
            return;
        }
        let c = &self.cores[core.0 as usize];
        self.core_trace.push(CoreTraceRecord {
            time: self.now,
            core: core.0,
            state: c.state.name().into(),
            ip: c.ip.map(|ip| (ip.fragment.0, ip.offset)),
            event,
            regs: self.config.trace_regs.then(|| c.regs.values().to_vec()),
        });
    }

    /// Processes one event. Returns false when the queue is empty.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(((time, _, _), ev)) = self.queue.pop_first() else {
            return Ok(false);
        };
        if time > self.config.cycle_cap {
            return Err(SimError::CycleCapExceeded { cap: self.config.cycle_cap });
        }
        self.now = time;
        match ev {
            Event::Step(c) => self.on_step(c)?,
            Event::MemIssue(c, op) => self.on_mem_issue(c, op)?,
            Event::Arrive(id) => self.on_arrive(id)?,
            Event::Nack(id) => self.on_nack(id),
            Event::Dispatch => self.on_dispatch()?,
            Event::MetaComplete(c) => self.on_meta_complete(c)?,
            Event::RootDone(c) => self.on_root_done(c)?,
        }
        Ok(true)
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        if self.is_quiescent() {
            Ok(())
        } else {
            Err(SimError::Deadlock { time: self.now, blocked: self.blocked_cores() })
        }
    }

    pub fn blocked_cores(&self) -> Vec<BlockedCore> {
        self.cores
            .iter()
            .filter(|c| !matches!(c.state, CoreState::InPool | CoreState::Denied))
            .map(|c| BlockedCore {
                core: c.id.0,
                state: c.state.name().into(),
                block: c.block.map(|b| format!("{b:?}")),
                qt: c.qt().map(|q| q.0),
                ip: c.ip.map(|ip| (ip.fragment.0, ip.offset)),
            })
            .collect()
    }

    fn on_step(&mut self, id: CoreId) -> Result<(), SimError> {
        let mnemonic = self.cores[id.0 as usize].current(self.program).map_or("?", |i| i.mnemonic());
        self.trace(id, format!("step {mnemonic}"));
        let cpi = self.config.cycle_per_instr;
        let outcome = self.cores[id.0 as usize].step(self.program)?;
        match outcome {
            StepOutcome::Executed | StepOutcome::LocalMeta => self.schedule(self.now + cpi, 0, Event::Step(id)),
            StepOutcome::Memory(op) => self.schedule(self.now + cpi, 0, Event::MemIssue(id, op)),
            StepOutcome::Meta(instr) => {
                self.set_state(id, CoreState::Morphing);
                self.processor.fifo.push(id, instr, self.now);
                self.schedule_dispatch();
            }
            StepOutcome::Blocked(b) => {
                let state = if matches!(b, Block::Latch(_)) { CoreState::WaitingLatch } else { CoreState::WaitingWait };
                self.set_state(id, state);
            }
            StepOutcome::Halt => {
                let core = &mut self.cores[id.0 as usize];
                if core.live_children.is_empty() {
                    self.schedule(self.now + cpi, 0, Event::RootDone(id));
                } else {
                    core.block = Some(Block::Children);
                    self.log.push(self.now, LogKind::Defer, Some(id.0), Some(0), json!({"op": "HALT", "children": core.live_children.len()}));
                }
            }
        }
        Ok(())
    }

    /// Routes and times a message; schedules its arrival or NACK.
    fn send(&mut self, msg: Message) -> Result<MsgId, SimError> {
        let route = self.router.route(&msg)?;
        let src = match msg.src {
            Endpoint::Core(a) => self.clustering.core_of(a),
            Endpoint::GlobalMemory => None,
        };
        let dst = match msg.dst {
            Endpoint::Core(a) => self.clustering.core_of(a),
            Endpoint::GlobalMemory => None,
        };
        let dst_denied = dst.is_some_and(|d| self.router.is_denied(d));
        let id = MsgId(self.next_msg);
        self.next_msg += 1;
        self.metrics.messages += 1;
        self.metrics.hops += route.hops() as u64;
        let (arrival, ev) = match deliver(&msg, &route, self.now, self.config.hop_cost, self.config.memory_latency, dst_denied) {
            Ok(d) => (d.arrival, Event::Arrive(id)),
            Err(DeliveryError::DestinationDenied { nack_at, .. }) => (nack_at, Event::Nack(id)),
        };
        self.log.push(
            self.now,
            LogKind::Send,
            src.map(|c| c.0),
            None,
            json!({"msg": id.0, "kind": msg.kind.name(), "src": msg.src.to_string(), "dst": msg.dst.to_string(), "hops": route.hops(), "arrival": arrival}),
        );
        if self.config.trace_messages {
            self.message_trace.push(MessageTraceRecord {
                send_time: self.now,
                arrival_time: arrival,
                kind: msg.kind.name().into(),
                src: msg.src.to_string(),
                dst: msg.dst.to_string(),
                hops: route.hops(),
            });
        }
        self.flights.insert(id, Flight { msg, src, dst, route });
        self.schedule(arrival, 0, ev);
        Ok(id)
    }

    /// Sends an arbitrary message; for protocol tests.
    pub fn inject(&mut self, msg: Message) -> Result<MsgId, SimError> {
        self.send(msg)
    }

    fn on_nack(&mut self, id: MsgId) {
        if let Some(f) = self.flights.remove(&id) {
            self.metrics.nacks += 1;
            self.log.push(self.now, LogKind::Nack, f.src.map(|c| c.0), None, json!({"msg": id.0, "kind": f.msg.kind.name(), "refused_by": f.msg.dst.to_string()}));
        }
    }

    fn on_mem_issue(&mut self, id: CoreId, op: MemOp) -> Result<(), SimError> {
        let req = self.next_req;
        self.next_req += 1;
        self.metrics.memory_ops += 1;
        let (kind, payload, addr) = match op {
            MemOp::Read { addr, .. } => (MessageKind::MemoryRead, Payload::Read { req, addr }, addr),
            MemOp::Write { addr, value } => (MessageKind::MemoryWrite, Payload::Write { req, addr, value }, addr),
        };
        let msg = Message::new(kind, self.addr(id), Endpoint::GlobalMemory, payload)?;
        let route = self.router.route(&msg)?;
        let head = route.memory_head().expect("memory routes end at a head");
        let msg = match self.esme.entry(head).or_default().intercept(head, id, msg)? {
            EsmeAction::Forward(m) => m,
            other => unreachable!("request intercept returned {other:?}"),
        };
        self.log.push(self.now, LogKind::Memory, Some(id.0), self.qt_of(id), json!({"op": kind.name(), "addr": addr, "purpose": "data", "head": head.0, "req": req}));
        self.pending_mem.insert(req, PendingMem { core: id, op });
        let core = &mut self.cores[id.0 as usize];
        core.block = Some(Block::Memory { req });
        self.set_state(id, CoreState::WaitingWait);
        self.send(msg)?;
        Ok(())
    }

    fn on_arrive(&mut self, id: MsgId) -> Result<(), SimError> {
        let Some(f) = self.flights.remove(&id) else { return Ok(()) };
        self.log.push(self.now, LogKind::Arrive, f.dst.map(|c| c.0), None, json!({"msg": id.0, "kind": f.msg.kind.name()}));
        match (f.msg.kind, f.msg.payload.clone()) {
            (MessageKind::MemoryRead, Payload::Read { req, addr }) => {
                let value = self.memory.read(addr)?;
                let reply = Message::new(MessageKind::MemoryReadReply, Endpoint::GlobalMemory, f.msg.src, Payload::ReadReply { req, addr, value })?;
                self.send(reply)?;
            }
            (MessageKind::MemoryWrite, Payload::Write { req, addr, value }) => {
                self.memory.write(addr, value)?;
                let reply = Message::new(MessageKind::MemoryWriteAck, Endpoint::GlobalMemory, f.msg.src, Payload::WriteAck { req, addr })?;
                self.send(reply)?;
            }
            (MessageKind::MemoryReadReply | MessageKind::MemoryWriteAck, _) => self.on_memory_reply(f)?,
            (MessageKind::QtCreateRequest, Payload::Create { .. }) | (MessageKind::RegisterTransfer, Payload::Registers { .. }) => {
                self.on_start_input(f)?
            }
            (MessageKind::QtResult, Payload::Result { qt, mask, values }) => {
                let parent = f.dst.expect("results go to cores");
                if self.config.withhold_results {
                    self.log.push(self.now, LogKind::Warning, Some(parent.0), self.qt_of(parent), json!({"withheld_result": qt.0}));
                    self.withheld.push(f.msg);
                    return Ok(());
                }
                self.on_result(parent, qt, mask, &values)?;
            }
            _ => unreachable!("message kinds are validated at construction"),
        }
        Ok(())
    }

    fn on_memory_reply(&mut self, f: Flight) -> Result<(), SimError> {
        let core = f.dst.expect("replies go to cores");
        let head = f.route.memory_head().expect("memory routes pass a head");
        let req = f.msg.request_id().unwrap_or_default();
        let value = match f.msg.payload {
            Payload::ReadReply { value, .. } => Some(value),
            _ => None,
        };
        match self.esme.entry(head).or_default().intercept(head, core, f.msg)? {
            EsmeAction::Relay { .. } | EsmeAction::Deliver(_) => {}
            EsmeAction::Forward(_) => unreachable!("replies are never forwarded"),
        }
        let pending = self.pending_mem.remove(&req).expect("reply matches an outstanding request");
        debug_assert_eq!(pending.core, core);
        if let (MemOp::Read { rd, .. }, Some(value)) = (pending.op, value) {
            self.cores[core.0 as usize].complete_read(rd, value);
        }
        self.cores[core.0 as usize].block = None;
        self.set_state(core, CoreState::Running);
        self.schedule(self.now, 0, Event::Step(core));
        Ok(())
    }

    fn on_start_input(&mut self, f: Flight) -> Result<(), SimError> {
        let child = f.dst.expect("create messages go to cores");
        let core = &mut self.cores[child.0 as usize];
        if let Payload::Registers { mask, values, .. } = &f.msg.payload {
            core.regs.scatter(*mask, values);
        }
        let Some(Block::Start { pending }) = core.block else {
            return Err(CoreError::IllegalInstruction { core: child, reason: "start input for a core that is not starting".into() }.into());
        };
        if pending > 1 {
            core.block = Some(Block::Start { pending: pending - 1 });
            return Ok(());
        }
        core.block = None;
        let ctx = core.ctx.expect("hired core has a context");
        let fragment = core.ip.map(|ip| ip.fragment).expect("hired core has an ip");
        self.set_state(child, CoreState::Running);
        if let Some(issue) = self.create_issue.remove(&ctx.qt) {
            self.spawn_intervals.push((issue, self.now));
        }
        if let Some(g) = ctx.guard {
            self.guard_open.insert(ctx.qt, (g, self.now));
            self.log.push(self.now, LogKind::Guard, Some(child.0), Some(ctx.qt.0), json!({"event": "enter", "fragment": g.0}));
        } else {
            self.metrics.last_qt_start = self.metrics.last_qt_start.max(self.now);
        }
        self.log.push(self.now, LogKind::QtStart, Some(child.0), Some(ctx.qt.0), json!({"fragment": self.program.fragment(fragment).name}));
        self.schedule(self.now, 0, Event::Step(child));
        Ok(())
    }

    fn on_result(&mut self, parent: CoreId, qt: QtId, mask: RegMask, values: &[Word]) -> Result<(), SimError> {
        let cpi = self.config.cycle_per_instr;
        let res = self.cores[parent.0 as usize].on_child_result(qt, mask, values)?;
        if res.overlap != RegMask::EMPTY {
            self.log.push(self.now, LogKind::Warning, Some(parent.0), self.qt_of(parent), json!({"latch_overlap": res.overlap.to_string(), "child": qt.0}));
        }
        self.trace(parent, format!("result {qt}"));
        if res.resumes {
            self.set_state(parent, CoreState::Running);
            self.schedule(self.now + cpi, 0, Event::Step(parent));
        }
        if res.all_returned {
            if self.deferred.remove(&parent) {
                self.set_state(parent, CoreState::Morphing);
                self.processor.fifo.push(parent, Instr::QEnd, self.now);
                self.schedule_dispatch();
            } else if self.cores[parent.0 as usize].block == Some(Block::Children) {
                self.cores[parent.0 as usize].block = None;
                self.schedule(self.now + cpi, 0, Event::RootDone(parent));
            }
        }
        Ok(())
    }

    fn on_dispatch(&mut self) -> Result<(), SimError> {
        self.dispatch_at = None;
        loop {
            let terminates = self.processor.fifo.count(MetaClass::Terminate);
            let creates = self.processor.fifo.count(MetaClass::Create);
            let cores = &self.cores;
            let decided = self.processor.dispatch_meta(
                &self.clustering,
                self.now,
                |c| cores[c.0 as usize].live_children.len(),
                |c| cores[c.0 as usize].qt().unwrap_or(QtId(0)),
            );
            let Some(decided) = decided else { break };
            let (entry, action) = decided?;
            self.log.push(
                self.now,
                LogKind::Dispatch,
                Some(entry.core.0),
                self.qt_of(entry.core),
                json!({"op": entry.instr.mnemonic(), "class": format!("{:?}", entry.class), "seq": entry.seq,
                       "terminates_enqueued": terminates - usize::from(entry.class == MetaClass::Terminate),
                       "creates_enqueued": creates - usize::from(entry.class == MetaClass::Create)}),
            );
            self.apply(entry.core, entry.instr, entry.submitted, action)?;
        }
        Ok(())
    }

    fn apply(&mut self, issuer: CoreId, instr: Instr, submitted: u64, action: Action) -> Result<(), SimError> {
        let mdc = self.config.meta_dispatch_cost;
        match (action, instr) {
            (Action::Hired { child }, Instr::QCreate { .. }) => {
                self.hire_child(issuer, child, instr, submitted);
            }
            (Action::GuardRegistered { core }, Instr::QGuard { fragment }) => {
                self.register_guard(issuer, core, fragment)?;
                self.completions.insert(issuer, Completion::Resume);
                self.schedule(self.now + mdc, 0, Event::MetaComplete(issuer));
            }
            (Action::Pending, _) => {
                self.metrics.pool_exhaustions += 1;
                let c = &mut self.cores[issuer.0 as usize];
                c.signals.wait = true;
                c.block = Some(Block::Hire);
                self.set_state(issuer, CoreState::WaitingWait);
                self.log.push(self.now, LogKind::Pending, Some(issuer.0), self.qt_of(issuer), json!({"op": instr.mnemonic(), "queued": self.processor.pool.pending().len()}));
            }
            (Action::Deferred, _) => {
                self.deferred.insert(issuer);
                self.cores[issuer.0 as usize].block = Some(Block::Children);
                self.set_state(issuer, CoreState::Running);
                let n = self.cores[issuer.0 as usize].live_children.len();
                self.log.push(self.now, LogKind::Defer, Some(issuer.0), self.qt_of(issuer), json!({"op": "QEND", "children": n}));
            }
            (Action::Terminate, _) => {
                self.completions.insert(issuer, Completion::Terminate);
                self.schedule(self.now + mdc, 0, Event::MetaComplete(issuer));
            }
            (Action::Admitted { guard_core }, Instr::QCallG { fragment, in_mask, ret_mask }) => {
                self.metrics.guard_calls += 1;
                let qt = self.start_guard_call(issuer, guard_core, fragment, ret_mask);
                self.completions.insert(issuer, Completion::GuardSend { guard_core, qt, fragment, in_mask, ret_mask });
                self.schedule(self.now + mdc, 0, Event::MetaComplete(issuer));
            }
            (Action::Queued { position }, Instr::QCallG { fragment, .. }) => {
                self.metrics.guard_calls += 1;
                self.log.push(self.now, LogKind::Guard, Some(issuer.0), self.qt_of(issuer), json!({"event": "queue", "fragment": fragment.0, "position": position}));
                self.completions.insert(issuer, Completion::GuardQueued);
                self.schedule(self.now + mdc, 0, Event::MetaComplete(issuer));
            }
            (a, i) => unreachable!("action {a:?} for {i:?}"),
        }
        Ok(())
    }

    fn new_qt(&mut self) -> QtId {
        let q = QtId(self.next_qt);
        self.next_qt += 1;
        q
    }

    fn hire_child(&mut self, parent: CoreId, child: CoreId, instr: Instr, submitted: u64) {
        let Instr::QCreate { rd, fragment, in_mask, ret_mask } = instr else { unreachable!() };
        let qt = self.new_qt();
        let parent_qt = self.cores[parent.0 as usize].qt().unwrap_or(QtId(0));
        self.processor.tree.add(parent_qt, qt).expect("fresh QT has no parent");
        self.cores[parent.0 as usize].live_children.insert(qt);
        self.cores[child.0 as usize].hire(self.now, QtContext { qt, parent: Some((parent, parent_qt)), ret_mask, guard: None }, fragment);
        self.metrics.qt_count += 1;
        self.live_qts += 1;
        self.metrics.max_live_qts = self.metrics.max_live_qts.max(self.live_qts);
        self.create_issue.insert(qt, submitted);
        self.log.push(
            self.now,
            LogKind::Hire,
            Some(child.0),
            Some(qt.0),
            json!({"parent": parent.0, "parent_qt": parent_qt.0, "fragment": self.program.fragment(fragment).name, "distance": self.clustering.hex_distance(parent, child)}),
        );
        self.completions.insert(parent, Completion::Create { child, qt, rd, fragment, in_mask, ret_mask });
        self.set_state(parent, CoreState::Morphing);
        self.schedule(self.now + self.config.meta_dispatch_cost, 0, Event::MetaComplete(parent));
    }

    fn register_guard(&mut self, owner: CoreId, core: CoreId, fragment: FragmentId) -> Result<(), SimError> {
        let owner_qt = self.cores[owner.0 as usize].qt().unwrap_or(QtId(0));
        self.processor.guards.register(fragment, core, owner_qt)?;
        let c = &mut self.cores[core.0 as usize];
        c.ctx = None;
        c.ip = None;
        c.block = Some(Block::GuardIdle);
        c.set_state(self.now, CoreState::WaitingWait);
        self.log.push(self.now, LogKind::Hire, Some(core.0), None, json!({"guard": self.program.fragment(fragment).name, "owner_qt": owner_qt.0}));
        Ok(())
    }

    /// Prepares the guard core for one call and returns the call's QT id.
    fn start_guard_call(&mut self, caller: CoreId, guard_core: CoreId, fragment: FragmentId, ret_mask: RegMask) -> QtId {
        let qt = self.new_qt();
        let caller_qt = self.cores[caller.0 as usize].qt().unwrap_or(QtId(0));
        self.cores[caller.0 as usize].live_children.insert(qt);
        self.cores[guard_core.0 as usize].hire(self.now, QtContext { qt, parent: Some((caller, caller_qt)), ret_mask, guard: Some(fragment) }, fragment);
        self.log.push(self.now, LogKind::Guard, Some(caller.0), Some(qt.0), json!({"event": "admit", "fragment": fragment.0, "guard_core": guard_core.0}));
        qt
    }

    fn send_start(&mut self, from: CoreId, to: CoreId, qt: QtId, fragment: FragmentId, in_mask: RegMask, ret_mask: RegMask) -> Result<(), SimError> {
        let values = self.cores[from.0 as usize].regs.gather(in_mask);
        let create = Message::new(MessageKind::QtCreateRequest, self.addr(from), self.addr(to), Payload::Create { qt, fragment, ret_mask })?;
        let regs = Message::new(MessageKind::RegisterTransfer, self.addr(from), self.addr(to), Payload::Registers { qt, mask: in_mask, values })?;
        self.send(create)?;
        self.send(regs)?;
        Ok(())
    }

    fn on_meta_complete(&mut self, id: CoreId) -> Result<(), SimError> {
        let Some(done) = self.completions.remove(&id) else { return Ok(()) };
        match done {
            Completion::Create { child, qt, rd, fragment, in_mask, ret_mask } => {
                self.cores[id.0 as usize].regs.set(rd, qt.0 as Word);
                self.send_start(id, child, qt, fragment, in_mask, ret_mask)?;
                self.resume(id);
            }
            Completion::Resume => self.resume(id),
            Completion::GuardSend { guard_core, qt, fragment, in_mask, ret_mask } => {
                self.send_start(id, guard_core, qt, fragment, in_mask, ret_mask)?;
                self.cores[id.0 as usize].block = Some(Block::Guard(qt));
                self.set_state(id, CoreState::WaitingWait);
            }
            Completion::GuardQueued => {
                self.cores[id.0 as usize].block = Some(Block::GuardQueue);
                self.set_state(id, CoreState::WaitingWait);
            }
            Completion::Terminate => self.terminate(id)?,
        }
        Ok(())
    }

    fn resume(&mut self, id: CoreId) {
        let c = &mut self.cores[id.0 as usize];
        c.finish_meta();
        c.block = None;
        self.set_state(id, CoreState::Running);
        self.schedule(self.now, 0, Event::Step(id));
    }

    fn terminate(&mut self, id: CoreId) -> Result<(), SimError> {
        let ctx = self.cores[id.0 as usize].ctx.expect("terminating core runs a QT");
        if let Some((parent, _)) = ctx.parent {
            let values = self.cores[id.0 as usize].regs.gather(ctx.ret_mask);
            let msg = Message::new(MessageKind::QtResult, self.addr(id), self.addr(parent), Payload::Result { qt: ctx.qt, mask: ctx.ret_mask, values })?;
            self.send(msg)?;
        }
        self.log.push(self.now, LogKind::QtEnd, Some(id.0), Some(ctx.qt.0), json!({"guard": ctx.guard.map(|g| g.0)}));
        if let Some(fragment) = ctx.guard {
            let (_, enter) = self.guard_open.remove(&ctx.qt).unwrap_or((fragment, self.now));
            self.guard_intervals.push(GuardInterval { fragment: fragment.0, qt: ctx.qt.0, enter, exit: self.now });
            self.log.push(self.now, LogKind::Guard, Some(id.0), Some(ctx.qt.0), json!({"event": "exit", "fragment": fragment.0}));
            let c = &mut self.cores[id.0 as usize];
            c.ctx = None;
            c.ip = None;
            c.signals.meta = false;
            c.block = Some(Block::GuardIdle);
            self.set_state(id, CoreState::WaitingWait);
            self.end_owner(ctx.qt)?;
            if let Some(next) = self.processor.guards.guard_exit(fragment)? {
                self.admit_waiter(next, fragment, id)?;
            }
            self.collect_guards()?;
            return Ok(());
        }
        self.live_qts -= 1;
        self.processor.tree.remove(ctx.qt);
        if ctx.parent.is_none() {
            self.root_regs = self.cores[id.0 as usize].regs.values();
            self.root_done = true;
        }
        self.end_owner(ctx.qt)?;
        self.release(id)
    }

    fn admit_waiter(&mut self, call: GuardCall, fragment: FragmentId, guard_core: CoreId) -> Result<(), SimError> {
        self.metrics.guard_wait_cycles += self.now - call.requested_at;
        let qt = self.start_guard_call(call.caller, guard_core, fragment, call.ret_mask);
        match self.completions.get(&call.caller) {
            Some(Completion::GuardQueued) => {
                // Caller is still morphing; it sends once its dispatch cost has elapsed.
                self.completions.insert(
                    call.caller,
                    Completion::GuardSend { guard_core, qt, fragment, in_mask: call.in_mask, ret_mask: call.ret_mask },
                );
            }
            _ => {
                self.send_start(call.caller, guard_core, qt, fragment, call.in_mask, call.ret_mask)?;
                self.cores[call.caller.0 as usize].block = Some(Block::Guard(qt));
            }
        }
        Ok(())
    }

    fn end_owner(&mut self, qt: QtId) -> Result<(), SimError> {
        let done = self.processor.guards.owner_ended(qt);
        self.release_guards(done)
    }

    fn collect_guards(&mut self) -> Result<(), SimError> {
        let done = self.processor.guards.collect_idle();
        self.release_guards(done)
    }

    fn release_guards(&mut self, done: Vec<(FragmentId, CoreId)>) -> Result<(), SimError> {
        for (f, core) in done {
            self.log.push(self.now, LogKind::Guard, Some(core.0), None, json!({"event": "teardown", "fragment": f.0}));
            self.release(core)?;
        }
        Ok(())
    }

    fn release(&mut self, core: CoreId) -> Result<(), SimError> {
        let outcome = self.processor.pool.release(core)?;
        self.cores[core.0 as usize].retire(self.now);
        match outcome {
            Released::Pooled => {
                self.log.push(self.now, LogKind::Release, Some(core.0), None, json!({"to": "pool"}));
            }
            Released::Rehired(req) => {
                self.log.push(self.now, LogKind::Release, Some(core.0), None, json!({"to": "pending", "requester": req.requester.0}));
                let r = &mut self.cores[req.requester.0 as usize];
                r.signals.wait = false;
                r.block = None;
                match req.instr {
                    Instr::QCreate { .. } => self.hire_child(req.requester, core, req.instr, req.since),
                    Instr::QGuard { fragment } => {
                        self.register_guard(req.requester, core, fragment)?;
                        self.set_state(req.requester, CoreState::Morphing);
                        self.completions.insert(req.requester, Completion::Resume);
                        self.schedule(self.now + self.config.meta_dispatch_cost, 0, Event::MetaComplete(req.requester));
                    }
                    other => unreachable!("pending {other:?}"),
                }
            }
        }
        Ok(())
    }

    fn on_root_done(&mut self, id: CoreId) -> Result<(), SimError> {
        self.log.push(self.now, LogKind::Halt, Some(id.0), Some(0), json!({}));
        self.live_qts -= 1;
        self.root_regs = self.cores[id.0 as usize].regs.values();
        self.root_done = true;
        self.end_owner(QtId(0))?;
        self.release(id)
    }

    pub fn final_state(&self) -> FinalState {
        FinalState { registers: self.root_regs, memory: self.memory.nonzero().clone() }
    }

    /// Held-back QtResult messages (only with `withhold_results`).
    pub fn withheld(&self) -> &[Message] {
        &self.withheld
    }

    pub fn metrics(&self) -> Metrics {
        let mut m = self.metrics.clone();
        m.makespan = self.now;
        m.per_core = self
            .cores
            .iter()
            .map(|c| CoreMetrics { core: c.id.0, active_cycles: c.active_cycles_at(self.now), instructions: c.instructions })
            .filter(|c| c.active_cycles > 0 || c.instructions > 0)
            .collect();
        m.energy = m.per_core.iter().map(|c| c.active_cycles).sum();
        m.spawn_cycles = union_length(&self.spawn_intervals);
        m
    }

    pub fn spawn_intervals(&self) -> &[(u64, u64)] {
        &self.spawn_intervals
    }

    pub fn guard_intervals(&self) -> &[GuardInterval] {
        &self.guard_intervals
    }

    pub fn into_output(self) -> RunOutput {
        RunOutput {
            metrics: self.metrics(),
            final_state: self.final_state(),
            guard_intervals: self.guard_intervals,
            log: self.log,
            core_trace: self.core_trace,
            message_trace: self.message_trace,
        }
    }
}
