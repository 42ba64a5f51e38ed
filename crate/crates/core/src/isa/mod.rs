//! Instruction set: conventional load/store instructions, the meta-instruction
//! layer that drives quasi-thread creation and termination, and the
//! line-oriented assembler that turns text into a [`Program`].

mod asm;
mod disasm;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use asm::assemble;
pub use disasm::disassemble;
pub use validate::validate;

/// Size of every register file.
pub const NUM_REGS: usize = 16;

/// Machine word.
pub type Word = i64;

/// A general purpose register. `r0` always reads as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);

    pub fn new(index: usize) -> Option<Reg> {
        (index < NUM_REGS).then_some(Reg(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Bit `i` selects register `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegMask(u16);

impl RegMask {
    pub const EMPTY: RegMask = RegMask(0);

    pub fn from_bits(bits: u16) -> RegMask {
        RegMask(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn with(self, reg: Reg) -> RegMask {
        RegMask(self.0 | (1 << reg.0))
    }

    pub fn contains(self, reg: Reg) -> bool {
        self.0 & (1 << reg.0) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: RegMask) -> RegMask {
        RegMask(self.0 | other.0)
    }

    pub fn difference(self, other: RegMask) -> RegMask {
        RegMask(self.0 & !other.0)
    }

    /// Selected registers in ascending order.
    pub fn regs(self) -> impl Iterator<Item = Reg> {
        (0..NUM_REGS as u8).filter(move |i| self.0 & (1 << i) != 0).map(Reg)
    }
}

impl FromIterator<Reg> for RegMask {
    fn from_iter<I: IntoIterator<Item = Reg>>(iter: I) -> Self {
        iter.into_iter().fold(RegMask::EMPTY, RegMask::with)
    }
}

impl fmt::Display for RegMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, r) in self.regs().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str("}")
    }
}

/// Index of a fragment inside its [`Program`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FragmentId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    Li { rd: Reg, imm: Word },
    Mov { rd: Reg, rs: Reg },
    Add { rd: Reg, rs: Reg, rt: Reg },
    Sub { rd: Reg, rs: Reg, rt: Reg },
    Mul { rd: Reg, rs: Reg, rt: Reg },
    Ld { rd: Reg, base: Reg, offset: Word },
    St { base: Reg, offset: Word, src: Reg },
    /// Branch targets are instruction offsets inside the current fragment.
    Beq { rs: Reg, rt: Reg, target: usize },
    Bne { rs: Reg, rt: Reg, target: usize },
    Jmp { target: usize },
    Halt,
    QCreate { rd: Reg, fragment: FragmentId, in_mask: RegMask, ret_mask: RegMask },
    QWait { rs: Reg },
    QClone { mask: RegMask },
    QEnd,
    QGuard { fragment: FragmentId },
    QCallG { fragment: FragmentId, in_mask: RegMask, ret_mask: RegMask },
}

impl Instr {
    pub fn is_meta(&self) -> bool {
        matches!(
            self,
            Instr::QCreate { .. }
                | Instr::QWait { .. }
                | Instr::QClone { .. }
                | Instr::QEnd
                | Instr::QGuard { .. }
                | Instr::QCallG { .. }
        )
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instr::Li { .. } => "LI",
            Instr::Mov { .. } => "MOV",
            Instr::Add { .. } => "ADD",
            Instr::Sub { .. } => "SUB",
            Instr::Mul { .. } => "MUL",
            Instr::Ld { .. } => "LD",
            Instr::St { .. } => "ST",
            Instr::Beq { .. } => "BEQ",
            Instr::Bne { .. } => "BNE",
            Instr::Jmp { .. } => "JMP",
            Instr::Halt => "HALT",
            Instr::QCreate { .. } => "QCREATE",
            Instr::QWait { .. } => "QWAIT",
            Instr::QClone { .. } => "QCLONE",
            Instr::QEnd => "QEND",
            Instr::QGuard { .. } => "QGUARD",
            Instr::QCallG { .. } => "QCALLG",
        }
    }

    /// Registers this instruction may write in the executing register file.
    pub fn writes(&self) -> RegMask {
        let one = |r: Reg| RegMask::EMPTY.with(r);
        match *self {
            Instr::Li { rd, .. }
            | Instr::Mov { rd, .. }
            | Instr::Add { rd, .. }
            | Instr::Sub { rd, .. }
            | Instr::Mul { rd, .. }
            | Instr::Ld { rd, .. }
            | Instr::QCreate { rd, .. } => one(rd),
            Instr::QClone { mask } => mask,
            _ => RegMask::EMPTY,
        }
        .difference(one(Reg::ZERO))
    }

    pub(crate) fn branch_target(&self) -> Option<usize> {
        match *self {
            Instr::Beq { target, .. } | Instr::Bne { target, .. } | Instr::Jmp { target } => {
                Some(target)
            }
            _ => None,
        }
    }

    /// Whether control can reach the following instruction.
    fn falls_through(&self) -> bool {
        !matches!(self, Instr::Jmp { .. } | Instr::Halt | Instr::QEnd)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub name: String,
    pub body: Vec<Instr>,
    /// Local labels, ordered by offset.
    pub labels: Vec<Label>,
}

impl Fragment {
    pub fn new(name: impl Into<String>, body: Vec<Instr>) -> Fragment {
        Fragment { name: name.into(), body, labels: Vec::new() }
    }

    /// Union of every register the fragment's own instructions may write.
    pub fn written_registers(&self) -> RegMask {
        self.body.iter().fold(RegMask::EMPTY, |m, i| m.union(i.writes()))
    }

    pub fn label_at(&self, offset: usize) -> Option<&str> {
        self.labels.iter().find(|l| l.offset == offset).map(|l| l.name.as_str())
    }

    pub fn meta_count(&self) -> usize {
        self.body.iter().filter(|i| i.is_meta()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub fragments: Vec<Fragment>,
    pub entry: FragmentId,
}

impl Program {
    pub fn fragment(&self, id: FragmentId) -> &Fragment {
        &self.fragments[id.0]
    }

    pub fn fragment_id(&self, name: &str) -> Option<FragmentId> {
        self.fragments.iter().position(|f| f.name == name).map(FragmentId)
    }

    pub fn entry_fragment(&self) -> &Fragment {
        self.fragment(self.entry)
    }

    /// True when no fragment contains a meta-instruction.
    pub fn is_conventional(&self) -> bool {
        self.fragments.iter().all(|f| f.meta_count() == 0)
    }

    /// Symbol table: every fragment and local label mapped to (fragment, offset).
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        for f in &self.fragments {
            out.push(Symbol { name: f.name.clone(), fragment: f.name.clone(), offset: 0 });
            for l in &f.labels {
                out.push(Symbol { name: l.name.clone(), fragment: f.name.clone(), offset: l.offset });
            }
        }
        out
    }

    /// Edges `(creator, created)` of the quasi-thread nesting graph.
    pub fn spawn_edges(&self) -> Vec<(FragmentId, FragmentId)> {
        let mut edges = Vec::new();
        for (i, f) in self.fragments.iter().enumerate() {
            for instr in &f.body {
                match *instr {
                    Instr::QCreate { fragment, .. }
                    | Instr::QGuard { fragment }
                    | Instr::QCallG { fragment, .. } => edges.push((FragmentId(i), fragment)),
                    _ => {}
                }
            }
        }
        edges.sort();
        edges.dedup();
        edges
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    pub fragment: String,
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    UnknownMnemonic,
    UndefinedLabel,
    RegisterOutOfRange,
    MissingQEND,
    Syntax,
    DuplicateLabel,
    EmptyFragment,
    MisplacedHalt,
    NoEntry,
    BadTarget,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// 1-based source line, when the diagnostic came from text.
    pub line: Option<usize>,
    pub fragment: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {:?}: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{} diagnostic(s); first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
pub struct DiagnosticList(pub Vec<Diagnostic>);

impl DiagnosticList {
    pub fn kinds(&self) -> Vec<DiagnosticKind> {
        self.0.iter().map(|d| d.kind).collect()
    }
}
