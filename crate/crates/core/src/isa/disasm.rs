use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{Fragment, Instr, Program};

/// Renders a program back into assembler source.
pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    for f in &program.fragments {
        let _ = writeln!(out, "{}:", f.name);
        // Branch targets without a label of their own get a synthetic one.
        let synthetic: BTreeSet<usize> = f
            .body
            .iter()
            .filter_map(Instr::branch_target)
            .filter(|&t| t != 0 && f.label_at(t).is_none())
            .collect();
        for (off, instr) in f.body.iter().enumerate() {
            for l in f.labels.iter().filter(|l| l.offset == off) {
                let _ = writeln!(out, "  {}:", l.name);
            }
            if synthetic.contains(&off) {
                let _ = writeln!(out, "  .T{off}:");
            }
            let _ = writeln!(out, "    {}", render(program, f, instr));
        }
        for l in f.labels.iter().filter(|l| l.offset >= f.body.len()) {
            let _ = writeln!(out, "  {}:", l.name);
        }
        if synthetic.contains(&f.body.len()) {
            let _ = writeln!(out, "  .T{}:", f.body.len());
        }
    }
    out
}

fn target(f: &Fragment, offset: usize) -> String {
    match f.label_at(offset) {
        Some(name) => name.to_owned(),
        None if offset == 0 => f.name.clone(),
        None => format!(".T{offset}"),
    }
}

fn render(p: &Program, f: &Fragment, instr: &Instr) -> String {
    let m = instr.mnemonic();
    match *instr {
        Instr::Li { rd, imm } => format!("{m} {rd}, {imm}"),
        Instr::Mov { rd, rs } => format!("{m} {rd}, {rs}"),
        Instr::Add { rd, rs, rt } | Instr::Sub { rd, rs, rt } | Instr::Mul { rd, rs, rt } => {
            format!("{m} {rd}, {rs}, {rt}")
        }
        Instr::Ld { rd, base, offset } => format!("{m} {rd}, [{base}{offset:+}]"),
        Instr::St { base, offset, src } => format!("{m} [{base}{offset:+}], {src}"),
        Instr::Beq { rs, rt, target: t } | Instr::Bne { rs, rt, target: t } => {
            format!("{m} {rs}, {rt}, {}", target(f, t))
        }
        Instr::Jmp { target: t } => format!("{m} {}", target(f, t)),
        Instr::Halt | Instr::QEnd => m.to_owned(),
        Instr::QCreate { rd, fragment, in_mask, ret_mask } => {
            format!("{m} {rd}, {}, {in_mask}, {ret_mask}", p.fragment(fragment).name)
        }
        Instr::QWait { rs } => format!("{m} {rs}"),
        Instr::QClone { mask } => format!("{m} {mask}"),
        Instr::QGuard { fragment } => format!("{m} {}", p.fragment(fragment).name),
        Instr::QCallG { fragment, in_mask, ret_mask } => {
            format!("{m} {}, {in_mask}, {ret_mask}", p.fragment(fragment).name)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{assemble, Fragment, FragmentId, Reg, RegMask};

    #[test]
    fn single_halt() {
        let p = Program { fragments: vec![Fragment::new("main", vec![Instr::Halt])], entry: FragmentId(0) };
        let text = disassemble(&p);
        let squashed: Vec<&str> = text.split_whitespace().collect();
        assert_eq!(squashed, vec!["main:", "HALT"]);
    }

    #[test]
    fn mask_renders_hot_bits() {
        let p = Program {
            fragments: vec![
                Fragment::new(
                    "main",
                    vec![
                        Instr::QCreate {
                            rd: Reg::new(5).unwrap(),
                            fragment: FragmentId(1),
                            in_mask: RegMask::from_bits(0b0110),
                            ret_mask: RegMask::EMPTY,
                        },
                        Instr::Halt,
                    ],
                ),
                Fragment::new("w", vec![Instr::QEnd]),
            ],
            entry: FragmentId(0),
        };
        let text = disassemble(&p);
        assert!(text.contains("QCREATE r5, w, {r1,r2}, {}"), "{text}");
        assert_eq!(assemble(&text).unwrap(), p);
    }
}
