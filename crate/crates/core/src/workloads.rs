//! Bundled assembly workloads. Each generator returns source text.

/// Address where workloads leave their result.
pub const RESULT_ADDR: u64 = 0x40;
/// Shared counter of the mutex workloads.
pub const COUNTER_ADDR: u64 = 0x200;
/// Base of the per-worker slots written by the spawn tree.
pub const SPAWN_SLOTS: u64 = 0x100;

/// Loop that sums 1..=10 and stores the total.
pub fn conventional() -> String {
    format!(
        "; sum 1..10 without any quasi-threads
main:
    LI r1, 10
    LI r2, 0
    LI r3, 1
  .Lloop:
    ADD r2, r2, r1
    SUB r1, r1, r3
    BNE r1, r0, .Lloop
    ST [r0+{RESULT_ADDR}], r2
    LD r4, [r0+{RESULT_ADDR}]
    HALT
"
    )
}

/// Fills a small table with squares and folds it into a checksum.
pub fn checksum() -> String {
    format!(
        "main:
    LI r1, 0
    LI r2, 8
    LI r3, 1
    LI r9, 0x80
  .Lfill:
    MUL r4, r1, r1
    ADD r5, r9, r1
    ST [r5+0], r4
    ADD r1, r1, r3
    BNE r1, r2, .Lfill
    LI r1, 0
    LI r6, 0
  .Lsum:
    ADD r5, r9, r1
    LD r4, [r5+0]
    MUL r6, r6, r2
    ADD r6, r6, r4
    ADD r1, r1, r3
    BNE r1, r2, .Lsum
    ST [r0+{RESULT_ADDR}], r6
    HALT
"
    )
}

/// Recursive Fibonacci: every call is a QT. Result in r2 and at [`RESULT_ADDR`].
///
/// The two children run one after the other so the number of live QTs
/// stays bounded by the recursion depth.
pub fn fib(n: u32) -> String {
    format!(
        "main:
    LI r1, {n}
    QCREATE r10, fib, {{r1}}, {{r2}}
    QWAIT r10
    QCLONE {{r2}}
    ST [r0+{RESULT_ADDR}], r2
    HALT

; r1 = n; returns fib(n) in r2 and r3
fib:
    LI r4, 1
    BEQ r1, r0, .Lbase
    BEQ r1, r4, .Lbase
    SUB r1, r1, r4
    QCREATE r10, fib, {{r1}}, {{r2}}
    QWAIT r10
    QCLONE {{r2}}
    SUB r1, r1, r4
    QCREATE r11, fib, {{r1}}, {{r3}}
    QWAIT r11
    QCLONE {{r3}}
    ADD r2, r2, r3
    MOV r3, r2
    QEND
  .Lbase:
    MOV r2, r1
    MOV r3, r1
    QEND
"
    )
}

/// Fibonacci with both children in flight at once.
pub fn fib_parallel(n: u32) -> String {
    format!(
        "main:
    LI r1, {n}
    QCREATE r10, fib, {{r1}}, {{r2}}
    QWAIT r10
    QCLONE {{r2}}
    ST [r0+{RESULT_ADDR}], r2
    HALT

fib:
    LI r4, 1
    BEQ r1, r0, .Lbase
    BEQ r1, r4, .Lbase
    SUB r1, r1, r4
    QCREATE r10, fib, {{r1}}, {{r2}}
    SUB r1, r1, r4
    QCREATE r11, fib, {{r1}}, {{r3}}
    QWAIT r10
    QWAIT r11
    QCLONE {{r2,r3}}
    ADD r2, r2, r3
    MOV r3, r2
    QEND
  .Lbase:
    MOV r2, r1
    MOV r3, r1
    QEND
"
    )
}

/// Binomial spawn tree of `workers` QTs (rounded up to a power of two).
/// Each node hands half of its remaining levels to a new child and keeps
/// the other half; every QT finally writes its id to its own slot.
pub fn spawn_tree(workers: u32) -> String {
    let levels = workers.max(1).next_power_of_two().trailing_zeros();
    format!(
        "main:
    LI r1, {levels}
    LI r2, 1
    QCREATE r10, node, {{r1,r2}}, {{}}
    QWAIT r10
    HALT

; r1 = levels left, r2 = id
node:
    LI r3, 1
  .Lloop:
    BEQ r1, r0, .Lwork
    SUB r1, r1, r3
    ADD r4, r2, r2
    ADD r5, r4, r3
    MOV r2, r5
    QCREATE r7, node, {{r1,r2}}, {{}}
    MOV r2, r4
    JMP .Lloop
  .Lwork:
    ST [r2+{SPAWN_SLOTS}], r2
    QEND
"
    )
}

fn mutex_main(workers: u32, increments: u32, guarded: bool) -> String {
    let workers = workers.clamp(1, 8);
    let mut s = String::from("main:\n");
    if guarded {
        s.push_str("    QGUARD inc\n");
    }
    s.push_str(&format!("    LI r1, {increments}\n"));
    for w in 0..workers {
        s.push_str(&format!("    QCREATE r{}, worker, {{r1}}, {{}}\n", 8 + w));
    }
    for w in 0..workers {
        s.push_str(&format!("    QWAIT r{}\n", 8 + w));
    }
    s.push_str(&format!("    LD r2, [r0+{COUNTER_ADDR}]\n    HALT\n\n"));
    s
}

/// `workers` QTs each bump a shared counter `increments` times through a guard.
pub fn mutex_counter(workers: u32, increments: u32) -> String {
    format!(
        "{}; r1 = increments left
worker:
    LI r3, 1
  .Lloop:
    BEQ r1, r0, .Ldone
    QCALLG inc, {{}}, {{}}
    SUB r1, r1, r3
    JMP .Lloop
  .Ldone:
    QEND

inc:
    LD r4, [r0+{COUNTER_ADDR}]
    LI r5, 1
    ADD r4, r4, r5
    ST [r0+{COUNTER_ADDR}], r4
    QEND
",
        mutex_main(workers, increments, true)
    )
}

/// Same counter without the guard; concurrent read-modify-write loses updates.
pub fn mutex_unguarded(workers: u32, increments: u32) -> String {
    format!(
        "{}worker:
    LI r3, 1
  .Lloop:
    BEQ r1, r0, .Ldone
    LD r4, [r0+{COUNTER_ADDR}]
    ADD r4, r4, r3
    ST [r0+{COUNTER_ADDR}], r4
    SUB r1, r1, r3
    JMP .Lloop
  .Ldone:
    QEND
",
        mutex_main(workers, increments, false)
    )
}

/// Nested calls `sub(depth)` returning depth + (depth-1) + ... + 1.
/// `sub` writes r1, r3, r5 and r6 besides its result r2.
pub fn subroutine(depth: u32) -> String {
    format!(
        "main:
    LI r1, {depth}
    QCREATE r6, sub, {{r1}}, {{r2}}
    QWAIT r6
    QCLONE {{r2}}
    ST [r0+{RESULT_ADDR}], r2
    HALT

; r1 = depth; returns the sum in r2
sub:
    BEQ r1, r0, .Lleaf
    MOV r5, r1
    LI r3, 1
    SUB r1, r1, r3
    QCREATE r6, sub, {{r1}}, {{r2}}
    QWAIT r6
    QCLONE {{r2}}
    ADD r2, r2, r5
    QEND
  .Lleaf:
    LI r2, 0
    QEND
"
    )
}

/// Corpus entry names with their default parameter.
pub const CORPUS: &[(&str, Option<u32>)] = &[
    ("conventional", None),
    ("checksum", None),
    ("fib", Some(10)),
    ("fib-parallel", Some(8)),
    ("spawn-tree", Some(64)),
    ("mutex-counter", Some(8)),
    ("mutex-unguarded", Some(8)),
    ("subroutine", Some(8)),
];

/// Source of corpus entry `name`, with `param` overriding its default.
pub fn source(name: &str, param: Option<u32>) -> Option<String> {
    let default = CORPUS.iter().find(|(n, _)| *n == name)?.1;
    let p = param.or(default).unwrap_or(0);
    Some(match name {
        "conventional" => conventional(),
        "checksum" => checksum(),
        "fib" => fib(p),
        "fib-parallel" => fib_parallel(p),
        "spawn-tree" => spawn_tree(p),
        "mutex-counter" => mutex_counter(p, 100),
        "mutex-unguarded" => mutex_unguarded(p, 100),
        "subroutine" => subroutine(p),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;

    #[test]
    fn corpus_assembles() {
        for (name, _) in CORPUS {
            let src = source(name, None).unwrap();
            assemble(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(source("nope", None).is_none());
    }

    #[test]
    fn conventional_entries_have_no_meta() {
        assert!(assemble(&conventional()).unwrap().is_conventional());
        assert!(assemble(&checksum()).unwrap().is_conventional());
        assert!(!assemble(&fib(3)).unwrap().is_conventional());
    }

    #[test]
    fn subroutine_saves_four_registers() {
        let p = assemble(&subroutine(8)).unwrap();
        let f = p.fragment(p.fragment_id("sub").unwrap());
        let k = f.written_registers().difference(crate::isa::RegMask::from_bits(0b100)).count();
        assert_eq!(k, 4);
    }
}
