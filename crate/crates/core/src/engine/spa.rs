//! Single-core baseline: QT creations become stack-based calls whose
//! return address and saved registers go through main memory.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{union_length, CoreMetrics, EventLog, FinalState, GlobalMemory, LogKind, Metrics, SimConfig, SimError};
use crate::core_unit::{Core, CoreState, MemOp, QtContext, QtId, StepOutcome};
use crate::isa::{DiagnosticList, FragmentId, Instr, Program, Reg, RegMask, Word};
use crate::topology::CoreId;

/// Baseline operation at one program position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaOp {
    Conventional,
    Call { target: FragmentId, save: RegMask, rd: Option<Reg>, create: bool },
    Ret,
    Halt,
    Nop,
}

/// Lowers every instruction of `program` to its baseline form, position by position.
pub fn lower(program: &Program) -> Vec<Vec<SpaOp>> {
    program
        .fragments
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let root = fi == program.entry.0;
            f.body
                .iter()
                .map(|i| match *i {
                    Instr::QCreate { rd, fragment, ret_mask, .. } => SpaOp::Call {
                        target: fragment,
                        save: program.fragment(fragment).written_registers().difference(ret_mask),
                        rd: Some(rd),
                        create: true,
                    },
                    Instr::QCallG { fragment, ret_mask, .. } => SpaOp::Call {
                        target: fragment,
                        save: program.fragment(fragment).written_registers().difference(ret_mask),
                        rd: None,
                        create: false,
                    },
                    Instr::QEnd if root => SpaOp::Halt,
                    Instr::QEnd => SpaOp::Ret,
                    Instr::Halt => SpaOp::Halt,
                    Instr::QWait { .. } | Instr::QClone { .. } | Instr::QGuard { .. } => SpaOp::Nop,
                    _ => SpaOp::Conventional,
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SpaOutput {
    pub metrics: Metrics,
    pub final_state: FinalState,
    pub log: EventLog,
}

struct Frame {
    save: RegMask,
    rd: Option<Reg>,
    handle: Word,
}

fn encode_return(fragment: FragmentId, offset: usize) -> Word {
    ((fragment.0 as Word) << 32) | offset as Word
}

fn decode_return(w: Word) -> (FragmentId, usize) {
    (FragmentId((w >> 32) as usize), (w & 0xffff_ffff) as usize)
}

pub fn run_spa_baseline(program: &Program, config: &SimConfig) -> Result<SpaOutput, SimError> {
    config.validate()?;
    let diags = crate::isa::validate(program);
    if !diags.is_empty() {
        return Err(SimError::InvalidProgram(DiagnosticList(diags)));
    }
    let ops = lower(program);
    let cpi = config.cycle_per_instr;
    // The single core sits on a head: one hop to memory and one back.
    let mem_cost = 2 * config.hop_cost + config.memory_latency;
    let stack_floor = config.memory_size - config.stack_words;

    let mut mem = GlobalMemory::new(config.memory_size);
    let mut log = EventLog::default();
    let mut m = Metrics::default();
    let mut cpu = Core::new(CoreId(0), false);
    cpu.hire(0, QtContext { qt: QtId(0), parent: None, ret_mask: RegMask::EMPTY, guard: None }, program.entry);
    cpu.block = None;
    cpu.set_state(0, CoreState::Running);

    let mut t: u64 = 0;
    let mut busy: u64 = 0;
    let mut sp = config.memory_size;
    let mut frames: Vec<Frame> = Vec::new();
    let mut next_handle: Word = 1;
    let mut spawns = Vec::new();

    loop {
        if t > config.cycle_cap {
            return Err(SimError::CycleCapExceeded { cap: config.cycle_cap });
        }
        let ip = cpu.ip.expect("baseline core always has an ip");
        let op = ops[ip.fragment.0][ip.offset];
        match op {
            SpaOp::Conventional => {
                t += cpi;
                busy += cpi;
                match cpu.step(program)? {
                    StepOutcome::Executed => {}
                    StepOutcome::Memory(op) => {
                        m.memory_ops += 1;
                        t += mem_cost;
                        match op {
                            MemOp::Read { rd, addr } => {
                                let v = mem.read(addr)?;
                                cpu.complete_read(rd, v);
                                log.push(t, LogKind::Memory, Some(0), None, json!({"op": "memory_read", "addr": addr, "purpose": "data"}));
                            }
                            MemOp::Write { addr, value } => {
                                mem.write(addr, value)?;
                                log.push(t, LogKind::Memory, Some(0), None, json!({"op": "memory_write", "addr": addr, "purpose": "data"}));
                            }
                        }
                    }
                    other => unreachable!("conventional op stepped to {other:?}"),
                }
            }
            SpaOp::Call { target, save, rd, create } => {
                let issue = t;
                t += cpi;
                busy += cpi;
                cpu.instructions += 1;
                let words = save.count() as u64 + 1;
                if sp < stack_floor + words {
                    return Err(SimError::StackOverflow { sp });
                }
                let mut push = |v: Word, t: &mut u64, log: &mut EventLog| -> Result<(), SimError> {
                    sp -= 1;
                    mem.write(sp, v)?;
                    *t += mem_cost;
                    log.push(*t, LogKind::Memory, Some(0), None, json!({"op": "memory_write", "addr": sp, "purpose": "call_save"}));
                    Ok(())
                };
                push(encode_return(ip.fragment, ip.offset + 1), &mut t, &mut log)?;
                for r in save.regs() {
                    push(cpu.regs.get(r), &mut t, &mut log)?;
                }
                m.memory_ops += words;
                m.call_memory_ops += words;
                frames.push(Frame { save, rd, handle: next_handle });
                next_handle += 1;
                m.max_live_qts = m.max_live_qts.max(frames.len() as u64 + 1);
                if create {
                    m.qt_count += 1;
                    spawns.push((issue, t));
                    m.last_qt_start = t;
                } else {
                    m.guard_calls += 1;
                }
                cpu.ip = Some(crate::core_unit::Ip { fragment: target, offset: 0 });
            }
            SpaOp::Ret => {
                t += cpi;
                busy += cpi;
                cpu.instructions += 1;
                let frame = frames.pop().expect("RET pairs with a CALL");
                let mut pop = |t: &mut u64, log: &mut EventLog| -> Result<Word, SimError> {
                    let v = mem.read(sp)?;
                    *t += mem_cost;
                    log.push(*t, LogKind::Memory, Some(0), None, json!({"op": "memory_read", "addr": sp, "purpose": "call_restore"}));
                    sp += 1;
                    Ok(v)
                };
                let regs: Vec<Reg> = frame.save.regs().collect();
                for &r in regs.iter().rev() {
                    let v = pop(&mut t, &mut log)?;
                    cpu.regs.set(r, v);
                }
                let (fragment, offset) = decode_return(pop(&mut t, &mut log)?);
                let words = regs.len() as u64 + 1;
                m.memory_ops += words;
                m.call_memory_ops += words;
                if let Some(rd) = frame.rd {
                    cpu.regs.set(rd, frame.handle);
                }
                cpu.ip = Some(crate::core_unit::Ip { fragment, offset });
            }
            SpaOp::Nop => cpu.finish_meta(),
            SpaOp::Halt => {
                t += cpi;
                busy += cpi;
                cpu.instructions += 1;
                log.push(t, LogKind::Halt, Some(0), Some(0), json!({}));
                break;
            }
        }
    }

    m.makespan = t;
    m.energy = busy;
    m.messages = 2 * m.memory_ops;
    m.hops = 2 * m.memory_ops;
    m.spawn_cycles = union_length(&spawns);
    m.per_core = vec![CoreMetrics { core: 0, active_cycles: busy, instructions: cpu.instructions }];
    let final_state = FinalState { registers: cpu.regs.values(), memory: mem.nonzero().clone() };
    Ok(SpaOutput { metrics: m, final_state, log })
}
