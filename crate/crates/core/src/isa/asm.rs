//! Two-pass assembler. Pass one collects fragments and labels, pass two
//! encodes operands against the finished symbol table.

use std::collections::BTreeMap;

use super::validate::validate_located;
use super::{Diagnostic, DiagnosticKind, DiagnosticList, Fragment, FragmentId, Instr, Label, Program, Reg, RegMask, Word, NUM_REGS};

const IMPLICIT_ENTRY: &str = "main";

struct SourceInstr<'a> {
    line: usize,
    mnemonic: &'a str,
    operands: &'a str,
}

struct PendingFragment<'a> {
    name: String,
    line: usize,
    labels: Vec<Label>,
    instrs: Vec<SourceInstr<'a>>,
}

/// Assembles line-oriented source text into a validated [`Program`].
pub fn assemble(source: &str) -> Result<Program, DiagnosticList> {
    let mut diags = Vec::new();
    let mut frags: Vec<PendingFragment<'_>> = Vec::new();

    // Pass 1: structure and labels.
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some((label, rest)) = split_label(text) {
            if label.starts_with('.') {
                if frags.is_empty() {
                    frags.push(PendingFragment { name: IMPLICIT_ENTRY.into(), line, labels: vec![], instrs: vec![] });
                }
                let f = frags.last_mut().unwrap();
                if f.labels.iter().any(|l| l.name == label) {
                    diags.push(at(line, DiagnosticKind::DuplicateLabel, format!("label `{label}` defined twice in `{}`", f.name)));
                } else {
                    f.labels.push(Label { name: label.to_owned(), offset: f.instrs.len() });
                }
            } else if frags.iter().any(|f| f.name == label) {
                diags.push(at(line, DiagnosticKind::DuplicateLabel, format!("fragment `{label}` defined twice")));
            } else {
                frags.push(PendingFragment { name: label.to_owned(), line, labels: vec![], instrs: vec![] });
            }
            text = rest.trim();
            if text.is_empty() {
                continue;
            }
        }
        if frags.is_empty() {
            frags.push(PendingFragment { name: IMPLICIT_ENTRY.into(), line, labels: vec![], instrs: vec![] });
        }
        let (mnemonic, operands) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };
        frags.last_mut().unwrap().instrs.push(SourceInstr { line, mnemonic, operands });
    }

    if frags.is_empty() {
        diags.push(Diagnostic {
            kind: DiagnosticKind::NoEntry,
            line: None,
            fragment: None,
            message: "source contains no instructions".into(),
        });
        return Err(DiagnosticList(diags));
    }

    let fragment_ids: BTreeMap<&str, usize> =
        frags.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();

    // Pass 2: encode.
    let mut fragments = Vec::with_capacity(frags.len());
    let mut lines: Vec<Vec<usize>> = Vec::with_capacity(frags.len());
    for (fi, f) in frags.iter().enumerate() {
        let ctx = Ctx { fragment_ids: &fragment_ids, current: fi, frag: f };
        let mut body = Vec::with_capacity(f.instrs.len());
        for si in &f.instrs {
            match ctx.encode(si) {
                Ok(instr) => body.push(instr),
                Err(d) => diags.push(d),
            }
        }
        lines.push(f.instrs.iter().map(|s| s.line).collect());
        fragments.push(Fragment { name: f.name.clone(), body, labels: f.labels.clone() });
    }
    if !diags.is_empty() {
        return Err(DiagnosticList(diags));
    }

    let entry = fragment_ids.get(IMPLICIT_ENTRY).copied().unwrap_or(0);
    let program = Program { fragments, entry: FragmentId(entry) };

    for (mut d, loc) in validate_located(&program) {
        d.line = match loc {
            Some((fi, off)) => lines[fi].get(off).copied(),
            None => d
                .fragment
                .as_deref()
                .and_then(|name| frags.iter().find(|f| f.name == name))
                .map(|f| f.line),
        };
        diags.push(d);
    }
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(DiagnosticList(diags))
    }
}

fn at(line: usize, kind: DiagnosticKind, message: String) -> Diagnostic {
    Diagnostic { kind, line: Some(line), fragment: None, message }
}

fn is_ident(s: &str) -> bool {
    let body = s.strip_prefix('.').unwrap_or(s);
    let mut chars = body.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

fn split_label(text: &str) -> Option<(&str, &str)> {
    let colon = text.find(':')?;
    let label = &text[..colon];
    is_ident(label).then(|| (label, &text[colon + 1..]))
}

/// Splits on top-level commas, keeping `{..}` and `[..]` groups intact.
fn split_operands(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '{' | '[' => depth += 1,
            '}' | ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

struct Ctx<'a, 'b> {
    fragment_ids: &'a BTreeMap<&'a str, usize>,
    current: usize,
    frag: &'a PendingFragment<'b>,
}

impl Ctx<'_, '_> {
    fn encode(&self, si: &SourceInstr<'_>) -> Result<Instr, Diagnostic> {
        let line = si.line;
        let mnemonic = si.mnemonic.to_ascii_uppercase();
        let ops = split_operands(si.operands);
        let arity = |n: usize| -> Result<(), Diagnostic> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(at(line, DiagnosticKind::Syntax, format!("{mnemonic} expects {n} operand(s), found {}", ops.len())))
            }
        };
        let reg = |s: &str| parse_reg(s).map_err(|k| at(line, k, format!("bad register `{s}`")));
        let imm = |s: &str| parse_imm(s).ok_or_else(|| at(line, DiagnosticKind::Syntax, format!("bad immediate `{s}`")));
        let mask = |s: &str| parse_mask(s).map_err(|k| at(line, k, format!("bad register mask `{s}`")));
        let mem = |s: &str| parse_mem(s).map_err(|k| at(line, k, format!("bad memory operand `{s}`")));

        let instr = match mnemonic.as_str() {
            "LI" => {
                arity(2)?;
                Instr::Li { rd: reg(ops[0])?, imm: imm(ops[1])? }
            }
            "MOV" => {
                arity(2)?;
                Instr::Mov { rd: reg(ops[0])?, rs: reg(ops[1])? }
            }
            "ADD" | "SUB" | "MUL" => {
                arity(3)?;
                let (rd, rs, rt) = (reg(ops[0])?, reg(ops[1])?, reg(ops[2])?);
                match mnemonic.as_str() {
                    "ADD" => Instr::Add { rd, rs, rt },
                    "SUB" => Instr::Sub { rd, rs, rt },
                    _ => Instr::Mul { rd, rs, rt },
                }
            }
            "LD" => {
                arity(2)?;
                let (base, offset) = mem(ops[1])?;
                Instr::Ld { rd: reg(ops[0])?, base, offset }
            }
            "ST" => {
                arity(2)?;
                let (base, offset) = mem(ops[0])?;
                Instr::St { base, offset, src: reg(ops[1])? }
            }
            "BEQ" | "BNE" => {
                arity(3)?;
                let (rs, rt) = (reg(ops[0])?, reg(ops[1])?);
                let target = self.branch_target(ops[2], line)?;
                if mnemonic == "BEQ" {
                    Instr::Beq { rs, rt, target }
                } else {
                    Instr::Bne { rs, rt, target }
                }
            }
            "JMP" => {
                arity(1)?;
                Instr::Jmp { target: self.branch_target(ops[0], line)? }
            }
            "HALT" => {
                arity(0)?;
                Instr::Halt
            }
            "QCREATE" => {
                arity(4)?;
                Instr::QCreate {
                    rd: reg(ops[0])?,
                    fragment: self.fragment_ref(ops[1], line)?,
                    in_mask: mask(ops[2])?,
                    ret_mask: mask(ops[3])?,
                }
            }
            "QWAIT" => {
                arity(1)?;
                Instr::QWait { rs: reg(ops[0])? }
            }
            "QCLONE" => {
                arity(1)?;
                Instr::QClone { mask: mask(ops[0])? }
            }
            "QEND" => {
                arity(0)?;
                Instr::QEnd
            }
            "QGUARD" => {
                arity(1)?;
                Instr::QGuard { fragment: self.fragment_ref(ops[0], line)? }
            }
            "QCALLG" => {
                arity(3)?;
                Instr::QCallG {
                    fragment: self.fragment_ref(ops[0], line)?,
                    in_mask: mask(ops[1])?,
                    ret_mask: mask(ops[2])?,
                }
            }
            _ => {
                return Err(at(line, DiagnosticKind::UnknownMnemonic, format!("unknown mnemonic `{}`", si.mnemonic)));
            }
        };
        Ok(instr)
    }

    fn branch_target(&self, name: &str, line: usize) -> Result<usize, Diagnostic> {
        if let Some(l) = self.frag.labels.iter().find(|l| l.name == name) {
            return Ok(l.offset);
        }
        match self.fragment_ids.get(name) {
            Some(&i) if i == self.current => Ok(0),
            Some(_) => Err(at(line, DiagnosticKind::BadTarget, format!("branch to `{name}` leaves the current fragment"))),
            None => Err(at(line, DiagnosticKind::UndefinedLabel, format!("undefined label `{name}`"))),
        }
    }

    fn fragment_ref(&self, name: &str, line: usize) -> Result<FragmentId, Diagnostic> {
        self.fragment_ids
            .get(name)
            .map(|&i| FragmentId(i))
            .ok_or_else(|| at(line, DiagnosticKind::UndefinedLabel, format!("undefined fragment `{name}`")))
    }
}

fn parse_reg(s: &str) -> Result<Reg, DiagnosticKind> {
    let digits = s.strip_prefix(['r', 'R']).ok_or(DiagnosticKind::Syntax)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DiagnosticKind::Syntax);
    }
    let n: usize = digits.parse().map_err(|_| DiagnosticKind::RegisterOutOfRange)?;
    if n >= NUM_REGS {
        return Err(DiagnosticKind::RegisterOutOfRange);
    }
    Ok(Reg::new(n).unwrap())
}

fn parse_imm(s: &str) -> Option<Word> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i128::from_str_radix(hex, 16).ok()?
    } else {
        if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        body.parse::<i128>().ok()?
    };
    let value = if neg { -value } else { value };
    Word::try_from(value).ok()
}

fn parse_mask(s: &str) -> Result<RegMask, DiagnosticKind> {
    let inner = s
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or(DiagnosticKind::Syntax)?;
    if inner.trim().is_empty() {
        return Ok(RegMask::EMPTY);
    }
    inner.split(',').map(|r| parse_reg(r.trim())).collect()
}

fn parse_mem(s: &str) -> Result<(Reg, Word), DiagnosticKind> {
    let inner = s
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or(DiagnosticKind::Syntax)?
        .trim();
    let split = inner.find(['+', '-']);
    match split {
        None => Ok((parse_reg(inner)?, 0)),
        Some(i) => {
            let base = parse_reg(inner[..i].trim())?;
            let off = parse_imm(&inner[i..].replace(' ', "")).ok_or(DiagnosticKind::Syntax)?;
            Ok((base, off))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(i: usize) -> Reg {
        Reg::new(i).unwrap()
    }

    #[test]
    fn li_encodes_directly() {
        let p = assemble("LI r1, 5\nHALT").unwrap();
        assert_eq!(p.fragments.len(), 1);
        assert_eq!(p.entry_fragment().name, "main");
        assert_eq!(p.entry_fragment().body[0], Instr::Li { rd: r(1), imm: 5 });
    }

    #[test]
    fn undefined_jump_target_carries_line() {
        let err = assemble("main:\n    LI r1, 1\n    JMP nowhere\n    HALT\n").unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].kind, DiagnosticKind::UndefinedLabel);
        assert_eq!(err.0[0].line, Some(3));
    }

    #[test]
    fn reports_each_error_kind_with_line() {
        let err = assemble("main:\n  FOO r1\n  LI r16, 2\n  HALT\nchild:\n  LI r1, 1\n").unwrap_err();
        let got: Vec<_> = err.0.iter().map(|d| (d.kind, d.line)).collect();
        assert!(got.contains(&(DiagnosticKind::UnknownMnemonic, Some(2))));
        assert!(got.contains(&(DiagnosticKind::RegisterOutOfRange, Some(3))));
        // MissingQEND is found after encoding succeeds, so fix the encoding errors first.
        let err = assemble("main:\n  HALT\nchild:\n  LI r1, 1\n").unwrap_err();
        assert_eq!(err.0[0].kind, DiagnosticKind::MissingQEND);
        assert_eq!(err.0[0].line, Some(4));
    }

    #[test]
    fn operands_hex_negative_masks_and_memory() {
        let src = "main:\n  LI r2, -0x10\n  LD r3, [r2 + 8]\n  ST [r2-1], r3\n  ST [r0], r3\n  QCREATE r4, w, {r1, r2}, {}\n  QWAIT r4\n  QCLONE {r1,r3}\n  HALT\nw:\n  QEND\n";
        let p = assemble(src).unwrap();
        let body = &p.fragments[0].body;
        assert_eq!(body[0], Instr::Li { rd: r(2), imm: -16 });
        assert_eq!(body[1], Instr::Ld { rd: r(3), base: r(2), offset: 8 });
        assert_eq!(body[2], Instr::St { base: r(2), offset: -1, src: r(3) });
        assert_eq!(body[3], Instr::St { base: r(0), offset: 0, src: r(3) });
        assert_eq!(
            body[4],
            Instr::QCreate { rd: r(4), fragment: FragmentId(1), in_mask: RegMask::from_bits(0b110), ret_mask: RegMask::EMPTY }
        );
        assert_eq!(body[6], Instr::QClone { mask: RegMask::from_bits(0b1010) });
    }

    #[test]
    fn local_labels_scope_to_fragment() {
        let src = "main:\n  LI r1, 3\n  LI r2, 1\n.loop:\n  SUB r1, r1, r2\n  BNE r1, r0, .loop\n  HALT\nw:\n.loop:\n  JMP .loop\n";
        let p = assemble(src).unwrap();
        assert_eq!(p.fragments[0].body[3], Instr::Bne { rs: r(1), rt: r(0), target: 2 });
        assert_eq!(p.fragments[1].body[0], Instr::Jmp { target: 0 });
    }

    #[test]
    fn cross_fragment_branch_rejected() {
        let err = assemble("main:\n  JMP w\nw:\n  QEND\n").unwrap_err();
        assert_eq!(err.0[0].kind, DiagnosticKind::BadTarget);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let p = assemble("; header\n\nmain: ; entry\n  LI r1, 0x1F ; thirty-one\n  HALT\n").unwrap();
        assert_eq!(p.fragments[0].body[0], Instr::Li { rd: r(1), imm: 31 });
    }

    #[test]
    fn empty_source_has_no_entry() {
        let err = assemble("; nothing\n").unwrap_err();
        assert_eq!(err.kinds(), vec![DiagnosticKind::NoEntry]);
    }
}
