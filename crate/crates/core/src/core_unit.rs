//! Per-core state: register file, latch file, signals and the execution
//! regime, with active-cycle accounting by state interval.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{FragmentId, Instr, Program, Reg, RegMask, Word, NUM_REGS};
use crate::topology::CoreId;

/// Identifier of a quasi-thread. The root QT is `QtId(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QtId(pub u32);

impl fmt::Display for QtId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "qt{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreState {
    InPool,
    Running,
    Morphing,
    WaitingWait,
    WaitingLatch,
    Denied,
}

impl CoreState {
    /// States that draw power.
    pub fn is_active(self) -> bool {
        matches!(self, CoreState::Running | CoreState::Morphing)
    }

    pub fn name(self) -> &'static str {
        match self {
            CoreState::InPool => "in_pool",
            CoreState::Running => "running",
            CoreState::Morphing => "morphing",
            CoreState::WaitingWait => "waiting_wait",
            CoreState::WaitingLatch => "waiting_latch",
            CoreState::Denied => "denied",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signals {
    pub meta: bool,
    pub wait: bool,
    pub denied: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterFile {
    regs: [Word; NUM_REGS],
}

impl RegisterFile {
    pub fn get(&self, r: Reg) -> Word {
        if r == Reg::ZERO {
            0
        } else {
            self.regs[r.index()]
        }
    }

    pub fn set(&mut self, r: Reg, v: Word) {
        if r != Reg::ZERO {
            self.regs[r.index()] = v;
        }
    }

    pub fn values(&self) -> [Word; NUM_REGS] {
        let mut v = self.regs;
        v[0] = 0;
        v
    }

    /// Values of the registers named by `mask`, in register order.
    pub fn gather(&self, mask: RegMask) -> Vec<Word> {
        mask.regs().map(|r| self.get(r)).collect()
    }

    /// Writes `values` into the registers named by `mask`, in register order.
    pub fn scatter(&mut self, mask: RegMask, values: &[Word]) {
        for (r, &v) in mask.regs().zip(values) {
            self.set(r, v);
        }
    }
}

/// Where a core is in its fragment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ip {
    pub fragment: FragmentId,
    pub offset: usize,
}

/// What the hosting core knows about the QT it runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QtContext {
    pub qt: QtId,
    /// Parent core and QT; `None` for the root.
    pub parent: Option<(CoreId, QtId)>,
    pub ret_mask: RegMask,
    /// Set when this QT is a call into a guarded fragment.
    pub guard: Option<FragmentId>,
}

/// Parent-side storage for values returned by children.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatchFile {
    values: [Word; NUM_REGS],
    valid: RegMask,
    tags: [Option<QtId>; NUM_REGS],
}

impl LatchFile {
    pub fn valid(&self) -> RegMask {
        self.valid
    }

    pub fn value(&self, r: Reg) -> Option<Word> {
        self.valid.contains(r).then(|| self.values[r.index()])
    }

    pub fn tag(&self, r: Reg) -> Option<QtId> {
        self.tags[r.index()].filter(|_| self.valid.contains(r))
    }

    /// Stores a child's result. Returns the slots that already held a valid
    /// value (overwritten, last writer wins).
    pub fn write(&mut self, child: QtId, mask: RegMask, values: &[Word]) -> RegMask {
        let mask = mask.difference(RegMask::EMPTY.with(Reg::ZERO));
        let overlap = RegMask::from_bits(self.valid.bits() & mask.bits());
        for (r, &v) in mask.regs().zip(values) {
            self.values[r.index()] = v;
            self.tags[r.index()] = Some(child);
        }
        self.valid = self.valid.union(mask);
        overlap
    }

    /// Copies the valid latches named by `mask` into `regs` and clears them.
    /// Returns false, touching nothing, when any of them is not yet valid.
    pub fn take_into(&mut self, mask: RegMask, regs: &mut RegisterFile) -> bool {
        let mask = mask.difference(RegMask::EMPTY.with(Reg::ZERO));
        if mask.difference(self.valid) != RegMask::EMPTY {
            return false;
        }
        for r in mask.regs() {
            regs.set(r, self.values[r.index()]);
            self.tags[r.index()] = None;
        }
        self.valid = self.valid.difference(mask);
        true
    }
}

/// Why a non-running core is stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    /// Hired, waiting for the create request and registers to arrive.
    Start { pending: u8 },
    Memory { req: u64 },
    /// QWAIT on a child handle.
    Child(QtId),
    /// QCLONE on latches that are not valid yet.
    Latch(RegMask),
    /// Hire request pending at the processor.
    Hire,
    /// QCALLG queued behind another caller.
    GuardQueue,
    /// Waiting for a guarded call to return.
    Guard(QtId),
    /// Delegated guard core, idle between calls.
    GuardIdle,
    /// QEND or HALT waiting for children to return.
    Children,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemOp {
    Read { rd: Reg, addr: u64 },
    Write { addr: u64, value: Word },
}

/// Result of one EPE step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// A conventional instruction completed; fetch again after one cycle.
    Executed,
    /// LD/ST issued; the core blocks until the reply.
    Memory(MemOp),
    /// Meta signal raised; the instruction goes to the processor.
    Meta(Instr),
    /// QWAIT/QCLONE satisfied locally in one cycle.
    LocalMeta,
    /// QWAIT/QCLONE that has to wait for a child result.
    Blocked(Block),
    Halt,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    #[error("core {core}: {reason}")]
    IllegalInstruction { core: CoreId, reason: String },
    #[error("core {core} got a result from {child}, which is not one of its children")]
    UnknownChild { core: CoreId, child: QtId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Core {
    pub id: CoreId,
    pub state: CoreState,
    pub signals: Signals,
    pub regs: RegisterFile,
    pub ip: Option<Ip>,
    pub ctx: Option<QtContext>,
    pub latches: LatchFile,
    pub block: Option<Block>,
    /// Children whose result has not arrived yet.
    pub live_children: BTreeSet<QtId>,
    /// Children whose result has arrived (QWAIT on them succeeds at once).
    pub returned_children: BTreeSet<QtId>,
    pub active_cycles: u64,
    pub instructions: u64,
    state_since: u64,
}

impl Core {
    pub fn new(id: CoreId, denied: bool) -> Core {
        Core {
            id,
            state: if denied { CoreState::Denied } else { CoreState::InPool },
            signals: Signals { denied, ..Signals::default() },
            regs: RegisterFile::default(),
            ip: None,
            ctx: None,
            latches: LatchFile::default(),
            block: None,
            live_children: BTreeSet::new(),
            returned_children: BTreeSet::new(),
            active_cycles: 0,
            instructions: 0,
            state_since: 0,
        }
    }

    /// Changes the regime at `now`, charging the elapsed interval if it was active.
    pub fn set_state(&mut self, now: u64, state: CoreState) {
        if self.state.is_active() {
            self.active_cycles += now.saturating_sub(self.state_since);
        }
        self.state = state;
        self.state_since = now;
    }

    /// Active cycles including the open interval up to `now`.
    pub fn active_cycles_at(&self, now: u64) -> u64 {
        let open = if self.state.is_active() { now.saturating_sub(self.state_since) } else { 0 };
        self.active_cycles + open
    }

    pub fn qt(&self) -> Option<QtId> {
        self.ctx.map(|c| c.qt)
    }

    /// Prepares a freshly hired core to run `fragment` once its inputs arrive.
    pub fn hire(&mut self, now: u64, ctx: QtContext, fragment: FragmentId) {
        self.regs = RegisterFile::default();
        self.latches = LatchFile::default();
        self.live_children.clear();
        self.returned_children.clear();
        self.ctx = Some(ctx);
        self.ip = Some(Ip { fragment, offset: 0 });
        self.block = Some(Block::Start { pending: 2 });
        self.signals.meta = false;
        self.signals.wait = false;
        self.set_state(now, CoreState::WaitingWait);
    }

    /// Returns the core to the idle pool.
    pub fn retire(&mut self, now: u64) {
        self.ctx = None;
        self.ip = None;
        self.block = None;
        self.signals.meta = false;
        self.signals.wait = false;
        self.set_state(now, CoreState::InPool);
    }

    fn advance(&mut self) {
        if let Some(ip) = self.ip.as_mut() {
            ip.offset += 1;
        }
    }

    fn jump(&mut self, target: usize) {
        if let Some(ip) = self.ip.as_mut() {
            ip.offset = target;
        }
    }

    pub fn current<'p>(&self, program: &'p Program) -> Option<&'p Instr> {
        let ip = self.ip?;
        program.fragments.get(ip.fragment.0)?.body.get(ip.offset)
    }

    /// Fetches and executes one instruction. Meta-instructions other than
    /// QWAIT/QCLONE leave the ip on the meta-instruction; the engine moves
    /// it on once the processor has dispatched it.
    pub fn step(&mut self, program: &Program) -> Result<StepOutcome, CoreError> {
        let id = self.id;
        let illegal = |reason: String| CoreError::IllegalInstruction { core: id, reason };
        if self.state != CoreState::Running {
            return Err(illegal(format!("step while {}", self.state.name())));
        }
        let instr = *self.current(program).ok_or_else(|| illegal("instruction pointer outside fragment".into()))?;
        let addr = |base: Word, offset: Word| -> Result<u64, CoreError> {
            let a = base.wrapping_add(offset);
            u64::try_from(a).map_err(|_| illegal(format!("negative address {a}")))
        };
        self.instructions += 1;
        let r = &mut self.regs;
        let out = match instr {
            Instr::Li { rd, imm } => {
                r.set(rd, imm);
                StepOutcome::Executed
            }
            Instr::Mov { rd, rs } => {
                r.set(rd, r.get(rs));
                StepOutcome::Executed
            }
            Instr::Add { rd, rs, rt } => {
                r.set(rd, r.get(rs).wrapping_add(r.get(rt)));
                StepOutcome::Executed
            }
            Instr::Sub { rd, rs, rt } => {
                r.set(rd, r.get(rs).wrapping_sub(r.get(rt)));
                StepOutcome::Executed
            }
            Instr::Mul { rd, rs, rt } => {
                r.set(rd, r.get(rs).wrapping_mul(r.get(rt)));
                StepOutcome::Executed
            }
            Instr::Ld { rd, base, offset } => {
                let a = addr(r.get(base), offset)?;
                StepOutcome::Memory(MemOp::Read { rd, addr: a })
            }
            Instr::St { base, offset, src } => {
                let a = addr(r.get(base), offset)?;
                StepOutcome::Memory(MemOp::Write { addr: a, value: r.get(src) })
            }
            Instr::Beq { rs, rt, target } => {
                if r.get(rs) == r.get(rt) {
                    self.jump(target);
                    return Ok(StepOutcome::Executed);
                }
                StepOutcome::Executed
            }
            Instr::Bne { rs, rt, target } => {
                if r.get(rs) != r.get(rt) {
                    self.jump(target);
                    return Ok(StepOutcome::Executed);
                }
                StepOutcome::Executed
            }
            Instr::Jmp { target } => {
                self.jump(target);
                return Ok(StepOutcome::Executed);
            }
            Instr::Halt => return Ok(StepOutcome::Halt),
            Instr::QWait { rs } => {
                let child = QtId(u32::try_from(r.get(rs)).map_err(|_| illegal(format!("bad handle {}", r.get(rs))))?);
                return self.qwait(child);
            }
            Instr::QClone { mask } => return Ok(self.exec_qclone(mask)),
            Instr::QCreate { .. } | Instr::QEnd | Instr::QGuard { .. } | Instr::QCallG { .. } => {
                self.signals.meta = true;
                return Ok(StepOutcome::Meta(instr));
            }
        };
        self.advance();
        Ok(out)
    }

    fn qwait(&mut self, child: QtId) -> Result<StepOutcome, CoreError> {
        if self.returned_children.contains(&child) {
            self.advance();
            Ok(StepOutcome::LocalMeta)
        } else if self.live_children.contains(&child) {
            self.block = Some(Block::Child(child));
            Ok(StepOutcome::Blocked(Block::Child(child)))
        } else {
            Err(CoreError::UnknownChild { core: self.id, child })
        }
    }

    /// QCLONE: copies valid latches into registers, or blocks until they are valid.
    pub fn exec_qclone(&mut self, mask: RegMask) -> StepOutcome {
        if self.latches.take_into(mask, &mut self.regs) {
            self.advance();
            StepOutcome::LocalMeta
        } else {
            self.block = Some(Block::Latch(mask));
            StepOutcome::Blocked(Block::Latch(mask))
        }
    }

    /// Completes the pending LD, if any.
    pub fn complete_read(&mut self, rd: Reg, value: Word) {
        self.regs.set(rd, value);
    }

    /// Moves past the meta-instruction the processor has just finished.
    pub fn finish_meta(&mut self) {
        self.signals.meta = false;
        self.advance();
    }

    /// A child's QtResult landed. Only the latch file changes; returns the
    /// overlapping slots and whether a blocked QWAIT/QCLONE can now proceed.
    pub fn on_child_result(&mut self, child: QtId, mask: RegMask, values: &[Word]) -> Result<ChildResult, CoreError> {
        if !self.live_children.remove(&child) {
            return Err(CoreError::UnknownChild { core: self.id, child });
        }
        self.returned_children.insert(child);
        let overlap = self.latches.write(child, mask, values);
        let resumes = match self.block {
            Some(Block::Child(c)) if c == child => {
                self.block = None;
                self.advance();
                true
            }
            Some(Block::Latch(m)) => {
                if self.latches.take_into(m, &mut self.regs) {
                    self.block = None;
                    self.advance();
                    true
                } else {
                    false
                }
            }
            Some(Block::Guard(c)) if c == child => {
                self.block = None;
                self.signals.meta = false;
                self.advance();
                true
            }
            _ => false,
        };
        Ok(ChildResult { overlap, resumes, all_returned: self.live_children.is_empty() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChildResult {
    pub overlap: RegMask,
    pub resumes: bool,
    pub all_returned: bool,
}
