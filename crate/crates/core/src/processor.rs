//! Processor-level supervision: the core pool, the priority Meta FIFO,
//! the parent/child family tree and the guard registry.
//!
//! This module decides; the engine carries out the decisions (messages,
//! core state changes, timing).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::core_unit::QtId;
use crate::isa::{FragmentId, Instr, RegMask};
use crate::topology::{Clustering, CoreId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MetaClass {
    Terminate,
    Create,
    Other,
}

impl MetaClass {
    pub fn of(instr: &Instr) -> MetaClass {
        match instr {
            Instr::QEnd => MetaClass::Terminate,
            Instr::QCreate { .. } | Instr::QCallG { .. } => MetaClass::Create,
            _ => MetaClass::Other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaEntry {
    pub class: MetaClass,
    pub seq: u64,
    pub core: CoreId,
    pub instr: Instr,
    pub submitted: u64,
}

/// Priority queue: Terminate before Create before Other, FIFO within a class.
#[derive(Clone, Debug, Default)]
pub struct MetaFifo {
    entries: BTreeMap<(MetaClass, u64), MetaEntry>,
    next_seq: u64,
}

impl MetaFifo {
    pub fn new() -> MetaFifo {
        MetaFifo::default()
    }

    pub fn push(&mut self, core: CoreId, instr: Instr, now: u64) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        let class = MetaClass::of(&instr);
        self.entries.insert((class, seq), MetaEntry { class, seq, core, instr, submitted: now });
        seq
    }

    pub fn pop(&mut self) -> Option<MetaEntry> {
        self.entries.pop_first().map(|(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, class: MetaClass) -> usize {
        self.entries.keys().filter(|(c, _)| *c == class).count()
    }

    pub fn contains_core(&self, core: CoreId) -> bool {
        self.entries.values().any(|e| e.core == core)
    }
}

/// A hire (or guard delegation) that found the pool empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub requester: CoreId,
    pub instr: Instr,
    pub since: u64,
}

#[derive(Clone, Debug, Default)]
pub struct CorePool {
    free: BTreeSet<CoreId>,
    hired: BTreeSet<CoreId>,
    denied: BTreeSet<CoreId>,
    pending: VecDeque<PendingRequest>,
    stranded: BTreeSet<CoreId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Released {
    Pooled,
    /// Handed straight to the oldest pending request.
    Rehired(PendingRequest),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProcessorError {
    #[error("no guard registered for fragment #{}", .0.0)]
    UnknownGuard(FragmentId),
    #[error("fragment #{} already has a guard", .0.0)]
    GuardExists(FragmentId),
    #[error("{child} already has parent {parent}")]
    SecondParent { child: QtId, parent: QtId },
    #[error("{0} is neither pooled nor hired")]
    NotManaged(CoreId),
}

impl CorePool {
    pub fn new(cores: impl IntoIterator<Item = CoreId>, denied: &BTreeSet<CoreId>) -> CorePool {
        let free = cores.into_iter().filter(|c| !denied.contains(c)).collect();
        CorePool { free, hired: BTreeSet::new(), denied: denied.clone(), pending: VecDeque::new(), stranded: BTreeSet::new() }
    }

    /// Marks pooled cores that no message can reach. They stay in the pool
    /// but are never hired.
    pub fn strand(&mut self, cores: BTreeSet<CoreId>) {
        self.stranded = cores;
    }

    pub fn stranded(&self) -> &BTreeSet<CoreId> {
        &self.stranded
    }

    pub fn free(&self) -> &BTreeSet<CoreId> {
        &self.free
    }

    pub fn hired(&self) -> &BTreeSet<CoreId> {
        &self.hired
    }

    pub fn pending(&self) -> &VecDeque<PendingRequest> {
        &self.pending
    }

    /// (hired, pooled, denied)
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.hired.len(), self.free.len(), self.denied.len())
    }

    /// Takes a specific pooled core (root placement).
    pub fn take(&mut self, core: CoreId) -> bool {
        if self.free.remove(&core) {
            self.hired.insert(core);
            true
        } else {
            false
        }
    }

    /// Hires the pooled core closest to `near` by hex distance, lowest id on ties.
    pub fn hire_nearest(&mut self, near: CoreId, clustering: &Clustering) -> Option<CoreId> {
        let best = self.free.iter().copied().filter(|c| !self.stranded.contains(c)).min_by_key(|&c| (clustering.hex_distance(near, c), c))?;
        self.take(best);
        Some(best)
    }

    pub fn enqueue(&mut self, req: PendingRequest) {
        self.pending.push_back(req);
    }

    /// Gives a core back; a pending request gets it before the pool does.
    pub fn release(&mut self, core: CoreId) -> Result<Released, ProcessorError> {
        if !self.hired.contains(&core) {
            return Err(ProcessorError::NotManaged(core));
        }
        if let Some(req) = self.pending.pop_front() {
            return Ok(Released::Rehired(req));
        }
        self.hired.remove(&core);
        self.free.insert(core);
        Ok(Released::Pooled)
    }
}

/// Parent/child relation between live QTs.
#[derive(Clone, Debug, Default)]
pub struct FamilyTree {
    parent: BTreeMap<QtId, QtId>,
    children: BTreeMap<QtId, BTreeSet<QtId>>,
}

impl FamilyTree {
    pub fn add(&mut self, parent: QtId, child: QtId) -> Result<(), ProcessorError> {
        if let Some(&p) = self.parent.get(&child) {
            return Err(ProcessorError::SecondParent { child, parent: p });
        }
        self.parent.insert(child, parent);
        self.children.entry(parent).or_default().insert(child);
        Ok(())
    }

    pub fn remove(&mut self, child: QtId) {
        if let Some(p) = self.parent.remove(&child) {
            if let Some(set) = self.children.get_mut(&p) {
                set.remove(&child);
                if set.is_empty() {
                    self.children.remove(&p);
                }
            }
        }
    }

    pub fn parent_of(&self, child: QtId) -> Option<QtId> {
        self.parent.get(&child).copied()
    }

    pub fn outstanding(&self, qt: QtId) -> usize {
        self.children.get(&qt).map_or(0, BTreeSet::len)
    }

    pub fn edges(&self) -> usize {
        self.parent.len()
    }

    /// True when following parent links never revisits a QT.
    pub fn is_acyclic(&self) -> bool {
        self.parent.keys().all(|&start| {
            let mut seen = BTreeSet::from([start]);
            let mut cur = start;
            while let Some(&p) = self.parent.get(&cur) {
                if !seen.insert(p) {
                    return false;
                }
                cur = p;
            }
            true
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardCall {
    pub caller: CoreId,
    pub caller_qt: QtId,
    pub in_mask: RegMask,
    pub ret_mask: RegMask,
    pub requested_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Guard {
    pub core: CoreId,
    pub owner: QtId,
    pub busy: Option<GuardCall>,
    pub queue: VecDeque<GuardCall>,
    /// The owner has ended; release the core once the queue drains.
    pub teardown: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    Queued(usize),
}

#[derive(Clone, Debug, Default)]
pub struct GuardRegistry {
    guards: BTreeMap<FragmentId, Guard>,
}

impl GuardRegistry {
    pub fn register(&mut self, fragment: FragmentId, core: CoreId, owner: QtId) -> Result<(), ProcessorError> {
        if self.guards.contains_key(&fragment) {
            return Err(ProcessorError::GuardExists(fragment));
        }
        self.guards.insert(fragment, Guard { core, owner, busy: None, queue: VecDeque::new(), teardown: false });
        Ok(())
    }

    pub fn get(&self, fragment: FragmentId) -> Option<&Guard> {
        self.guards.get(&fragment)
    }

    pub fn is_empty(&self) -> bool {
        self.guards.is_empty()
    }

    pub fn guard_enter(&mut self, fragment: FragmentId, call: GuardCall) -> Result<Admission, ProcessorError> {
        let g = self.guards.get_mut(&fragment).ok_or(ProcessorError::UnknownGuard(fragment))?;
        if g.busy.is_none() {
            g.busy = Some(call);
            Ok(Admission::Admitted)
        } else {
            g.queue.push_back(call);
            Ok(Admission::Queued(g.queue.len()))
        }
    }

    /// The guarded fragment finished; admits the next waiter if any.
    pub fn guard_exit(&mut self, fragment: FragmentId) -> Result<Option<GuardCall>, ProcessorError> {
        let g = self.guards.get_mut(&fragment).ok_or(ProcessorError::UnknownGuard(fragment))?;
        g.busy = g.queue.pop_front();
        Ok(g.busy)
    }

    /// Marks every guard of `owner` for teardown; returns those that can be
    /// removed now.
    pub fn owner_ended(&mut self, owner: QtId) -> Vec<(FragmentId, CoreId)> {
        for g in self.guards.values_mut().filter(|g| g.owner == owner) {
            g.teardown = true;
        }
        self.collect_idle()
    }

    /// Removes torn-down guards with nothing left to serve.
    pub fn collect_idle(&mut self) -> Vec<(FragmentId, CoreId)> {
        let done: Vec<(FragmentId, CoreId)> = self
            .guards
            .iter()
            .filter(|(_, g)| g.teardown && g.busy.is_none() && g.queue.is_empty())
            .map(|(&f, g)| (f, g.core))
            .collect();
        for (f, _) in &done {
            self.guards.remove(f);
        }
        done
    }
}

/// What the processor decided for one dispatched meta-instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Hired { child: CoreId },
    /// Pool exhausted: Wait raised, request queued.
    Pending,
    /// QEND with children still out.
    Deferred,
    Terminate,
    GuardRegistered { core: CoreId },
    Admitted { guard_core: CoreId },
    Queued { position: usize },
}

#[derive(Clone, Debug, Default)]
pub struct Processor {
    pub pool: CorePool,
    pub fifo: MetaFifo,
    pub tree: FamilyTree,
    pub guards: GuardRegistry,
}

impl Processor {
    pub fn new(cores: impl IntoIterator<Item = CoreId>, denied: &BTreeSet<CoreId>) -> Processor {
        Processor { pool: CorePool::new(cores, denied), ..Processor::default() }
    }

    /// Pops the highest-priority entry and decides it. `outstanding` reports
    /// how many children of a core have not returned yet; `caller_qt` the QT
    /// a core is running.
    pub fn dispatch_meta(
        &mut self,
        clustering: &Clustering,
        now: u64,
        outstanding: impl Fn(CoreId) -> usize,
        caller_qt: impl Fn(CoreId) -> QtId,
    ) -> Option<Result<(MetaEntry, Action), ProcessorError>> {
        let entry = self.fifo.pop()?;
        let action = match entry.instr {
            Instr::QCreate { .. } | Instr::QGuard { .. } => match self.pool.hire_nearest(entry.core, clustering) {
                Some(child) if matches!(entry.instr, Instr::QGuard { .. }) => Ok(Action::GuardRegistered { core: child }),
                Some(child) => Ok(Action::Hired { child }),
                None => {
                    self.pool.enqueue(PendingRequest { requester: entry.core, instr: entry.instr, since: now });
                    Ok(Action::Pending)
                }
            },
            Instr::QEnd if outstanding(entry.core) > 0 => Ok(Action::Deferred),
            Instr::QEnd => Ok(Action::Terminate),
            Instr::QCallG { fragment, in_mask, ret_mask } => {
                let call = GuardCall { caller: entry.core, caller_qt: caller_qt(entry.core), in_mask, ret_mask, requested_at: now };
                self.guards.guard_enter(fragment, call).map(|adm| match adm {
                    Admission::Admitted => {
                        Action::Admitted { guard_core: self.guards.get(fragment).map(|g| g.core).unwrap_or(entry.core) }
                    }
                    Admission::Queued(position) => Action::Queued { position },
                })
            }
            _ => Ok(Action::Terminate),
        };
        Some(action.map(|a| (entry, a)))
    }
}
