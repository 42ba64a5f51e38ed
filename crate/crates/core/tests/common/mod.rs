//! Helpers shared by the integration tests: a seeded generator of
//! conventional programs and a plain interpreter used as an oracle.
#![allow(dead_code)]

use std::collections::BTreeMap;

use empa_core::isa::{Fragment, FragmentId, Instr, Program, Reg, Word, NUM_REGS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reg(rng: &mut ChaCha8Rng) -> Reg {
    Reg::new(rng.random_range(0..NUM_REGS)).unwrap()
}

/// A single-fragment program without meta-instructions. Branches only jump
/// forward, so every program terminates.
pub fn random_conventional(seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(4..40);
    let mut body = Vec::with_capacity(len + 1);
    for i in 0..len {
        let instr = match rng.random_range(0..10) {
            0 | 1 => Instr::Li { rd: reg(&mut rng), imm: rng.random_range(-50..50) },
            2 => Instr::Mov { rd: reg(&mut rng), rs: reg(&mut rng) },
            3 => Instr::Add { rd: reg(&mut rng), rs: reg(&mut rng), rt: reg(&mut rng) },
            4 => Instr::Sub { rd: reg(&mut rng), rs: reg(&mut rng), rt: reg(&mut rng) },
            5 => Instr::Mul { rd: reg(&mut rng), rs: reg(&mut rng), rt: reg(&mut rng) },
            6 => Instr::Ld { rd: reg(&mut rng), base: Reg::ZERO, offset: rng.random_range(0..32) },
            7 => Instr::St { base: Reg::ZERO, offset: rng.random_range(0..32), src: reg(&mut rng) },
            8 => Instr::Beq { rs: reg(&mut rng), rt: reg(&mut rng), target: rng.random_range(i + 1..=len) },
            _ => Instr::Bne { rs: reg(&mut rng), rt: reg(&mut rng), target: rng.random_range(i + 1..=len) },
        };
        body.push(instr);
    }
    body.push(Instr::Halt);
    Program { fragments: vec![Fragment::new("main", body)], entry: FragmentId(0) }
}

/// Registers and nonzero memory after running a conventional program.
pub fn interpret(p: &Program) -> ([Word; NUM_REGS], BTreeMap<u64, Word>) {
    let body = &p.entry_fragment().body;
    let mut r = [0 as Word; NUM_REGS];
    let mut mem: BTreeMap<u64, Word> = BTreeMap::new();
    let mut pc = 0;
    let mut budget = 1_000_000;
    loop {
        budget -= 1;
        assert!(budget > 0, "reference interpreter ran away");
        let mut next = pc + 1;
        let mut write = None;
        match body[pc] {
            Instr::Li { rd, imm } => write = Some((rd, imm)),
            Instr::Mov { rd, rs } => write = Some((rd, r[rs.index()])),
            Instr::Add { rd, rs, rt } => write = Some((rd, r[rs.index()].wrapping_add(r[rt.index()]))),
            Instr::Sub { rd, rs, rt } => write = Some((rd, r[rs.index()].wrapping_sub(r[rt.index()]))),
            Instr::Mul { rd, rs, rt } => write = Some((rd, r[rs.index()].wrapping_mul(r[rt.index()]))),
            Instr::Ld { rd, base, offset } => {
                let a = r[base.index()].wrapping_add(offset) as u64;
                write = Some((rd, mem.get(&a).copied().unwrap_or(0)));
            }
            Instr::St { base, offset, src } => {
                let a = r[base.index()].wrapping_add(offset) as u64;
                mem.insert(a, r[src.index()]);
            }
            Instr::Beq { rs, rt, target } if r[rs.index()] == r[rt.index()] => next = target,
            Instr::Bne { rs, rt, target } if r[rs.index()] != r[rt.index()] => next = target,
            Instr::Jmp { target } => next = target,
            Instr::Beq { .. } | Instr::Bne { .. } => {}
            Instr::Halt => break,
            ref other => panic!("not a conventional instruction: {other:?}"),
        }
        if let Some((d, v)) = write {
            if d != Reg::ZERO {
                r[d.index()] = v;
            }
        }
        pc = next;
    }
    mem.retain(|_, v| *v != 0);
    (r, mem)
}
