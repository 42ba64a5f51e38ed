use std::collections::BTreeSet;

use super::{Diagnostic, DiagnosticKind, Instr, Program};

/// Location of a finding: fragment index and instruction offset.
pub(super) type Located = (Diagnostic, Option<(usize, usize)>);

/// Checks fragment and program invariants; empty when the program is well formed.
pub fn validate(program: &Program) -> Vec<Diagnostic> {
    validate_located(program).into_iter().map(|(d, _)| d).collect()
}

pub(super) fn validate_located(program: &Program) -> Vec<Located> {
    let mut out = Vec::new();
    let diag = |kind, fragment: Option<&str>, message: String| Diagnostic {
        kind,
        line: None,
        fragment: fragment.map(str::to_owned),
        message,
    };

    if program.fragments.is_empty() || program.entry.0 >= program.fragments.len() {
        out.push((diag(DiagnosticKind::NoEntry, None, "program has no entry fragment".into()), None));
        return out;
    }

    let mut seen = BTreeSet::new();
    for f in &program.fragments {
        if !seen.insert(f.name.as_str()) {
            out.push((
                diag(DiagnosticKind::DuplicateLabel, Some(&f.name), format!("fragment `{}` defined twice", f.name)),
                None,
            ));
        }
    }

    for (fi, f) in program.fragments.iter().enumerate() {
        let name = Some(f.name.as_str());
        if f.body.is_empty() {
            out.push((diag(DiagnosticKind::EmptyFragment, name, format!("fragment `{}` is empty", f.name)), None));
            continue;
        }
        let len = f.body.len();
        for label in &f.labels {
            if label.offset > len {
                out.push((
                    diag(DiagnosticKind::BadTarget, name, format!("label `{}` past end of fragment", label.name)),
                    None,
                ));
            }
        }

        for (off, instr) in f.body.iter().enumerate() {
            let at = Some((fi, off));
            match *instr {
                Instr::QCreate { fragment, .. } | Instr::QGuard { fragment } | Instr::QCallG { fragment, .. }
                    if fragment.0 >= program.fragments.len() =>
                {
                    out.push((
                        diag(DiagnosticKind::UndefinedLabel, name, format!("{} names fragment #{} which does not exist", instr.mnemonic(), fragment.0)),
                        at,
                    ));
                }
                Instr::Halt if fi != program.entry.0 => {
                    out.push((
                        diag(DiagnosticKind::MisplacedHalt, name, "HALT is only allowed in the entry fragment; use QEND".into()),
                        at,
                    ));
                }
                _ => {}
            }
            if let Some(t) = instr.branch_target() {
                if t >= len {
                    out.push((
                        diag(DiagnosticKind::BadTarget, name, format!("branch target {t} outside fragment of {len} instructions")),
                        at,
                    ));
                }
            }
        }

        // Every control path has to end in QEND/HALT instead of running off the end.
        let mut reached = vec![false; len];
        let mut work = vec![0usize];
        let mut falls_off = None;
        while let Some(i) = work.pop() {
            if i >= len || reached[i] {
                continue;
            }
            reached[i] = true;
            let instr = &f.body[i];
            if instr.falls_through() {
                if i + 1 == len {
                    falls_off.get_or_insert(i);
                } else {
                    work.push(i + 1);
                }
            }
            if let Some(t) = instr.branch_target() {
                work.push(t);
            }
        }
        if let Some(i) = falls_off {
            out.push((
                diag(DiagnosticKind::MissingQEND, name, format!("control can run past the end of `{}` without QEND", f.name)),
                Some((fi, i)),
            ));
        }
    }
    out
}
