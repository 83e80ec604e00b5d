//! DEX subset: register instructions, methods, interpreter and checker.

pub mod checker;
pub mod machine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;

use crate::jvm::BinOp;
use crate::program::{find_handler, Edge, Handler, Kind, MethodShape, Pp, Program, SlotKind, Tag, NP};

pub type Reg = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DexInstr {
    Binop(BinOp, Reg, Reg, Reg),
    Const(Reg, BigInt),
    Move(Reg, Reg),
    Ifeq(Reg, Pp),
    Ifneq(Reg, Pp),
    Goto(Pp),
    Return(Reg),
    New(Reg, String),
    Iget(Reg, Reg, String),
    Iput(Reg, Reg, String),
    Newarray(Reg, Reg, Kind),
    Arraylength(Reg, Reg),
    Aget(Reg, Reg, Reg),
    Aput(Reg, Reg, Reg),
    /// Callee and argument registers; the first is the receiver.
    Invoke(String, Vec<Reg>),
    Moveresult(Reg),
    Throw(Reg),
    Moveexception(Reg),
}

impl DexInstr {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            DexInstr::Binop(..) => "binop",
            DexInstr::Const(..) => "const",
            DexInstr::Move(..) => "move",
            DexInstr::Ifeq(..) => "ifeq",
            DexInstr::Ifneq(..) => "ifneq",
            DexInstr::Goto(_) => "goto",
            DexInstr::Return(_) => "return",
            DexInstr::New(..) => "new",
            DexInstr::Iget(..) => "iget",
            DexInstr::Iput(..) => "iput",
            DexInstr::Newarray(..) => "newarray",
            DexInstr::Arraylength(..) => "arraylength",
            DexInstr::Aget(..) => "aget",
            DexInstr::Aput(..) => "aput",
            DexInstr::Invoke(..) => "invoke",
            DexInstr::Moveresult(_) => "moveresult",
            DexInstr::Throw(_) => "throw",
            DexInstr::Moveexception(_) => "moveexception",
        }
    }

    pub fn falls_through(&self) -> bool {
        !matches!(self, DexInstr::Goto(_) | DexInstr::Return(_) | DexInstr::Throw(_))
    }

    pub fn raises_np(&self) -> bool {
        matches!(
            self,
            DexInstr::Iget(..)
                | DexInstr::Iput(..)
                | DexInstr::Arraylength(..)
                | DexInstr::Aget(..)
                | DexInstr::Aput(..)
                | DexInstr::Invoke(..)
                | DexInstr::Throw(_)
        )
    }

    pub fn jump_target(&self) -> Option<Pp> {
        match self {
            DexInstr::Ifeq(_, t) | DexInstr::Ifneq(_, t) | DexInstr::Goto(t) => Some(*t),
            _ => None,
        }
    }

    /// Numbered registers read by the instruction.
    pub fn reads(&self) -> Vec<Reg> {
        match self {
            DexInstr::Binop(_, _, a, b) => vec![*a, *b],
            DexInstr::Move(_, s) | DexInstr::Return(s) | DexInstr::Throw(s) => vec![*s],
            DexInstr::Ifeq(r, _) | DexInstr::Ifneq(r, _) => vec![*r],
            DexInstr::Iget(_, o, _) | DexInstr::Arraylength(_, o) | DexInstr::Newarray(_, o, _) => vec![*o],
            DexInstr::Iput(s, o, _) => vec![*s, *o],
            DexInstr::Aget(_, a, i) => vec![*a, *i],
            DexInstr::Aput(s, a, i) => vec![*s, *a, *i],
            DexInstr::Invoke(_, ps) => ps.clone(),
            _ => vec![],
        }
    }

    /// Numbered register written by the instruction.
    pub fn writes(&self) -> Option<Reg> {
        match self {
            DexInstr::Binop(_, r, _, _)
            | DexInstr::Const(r, _)
            | DexInstr::Move(r, _)
            | DexInstr::New(r, _)
            | DexInstr::Iget(r, _, _)
            | DexInstr::Newarray(r, _, _)
            | DexInstr::Arraylength(r, _)
            | DexInstr::Aget(r, _, _)
            | DexInstr::Moveresult(r)
            | DexInstr::Moveexception(r) => Some(*r),
            _ => None,
        }
    }

    pub fn retarget(&mut self, f: impl Fn(Pp) -> Pp) {
        match self {
            DexInstr::Ifeq(_, t) | DexInstr::Ifneq(_, t) | DexInstr::Goto(t) => *t = f(*t),
            _ => {}
        }
    }
}

impl fmt::Display for DexInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DexInstr::Binop(op, r, a, b) => write!(f, "binop {} r{r} r{a} r{b}", op.symbol()),
            DexInstr::Const(r, v) => write!(f, "const r{r} {v}"),
            DexInstr::Move(r, s) => write!(f, "move r{r} r{s}"),
            DexInstr::Ifeq(r, t) => write!(f, "ifeq r{r} {t}"),
            DexInstr::Ifneq(r, t) => write!(f, "ifneq r{r} {t}"),
            DexInstr::Goto(t) => write!(f, "goto {t}"),
            DexInstr::Return(r) => write!(f, "return r{r}"),
            DexInstr::New(r, c) => write!(f, "new r{r} {c}"),
            DexInstr::Iget(r, o, x) => write!(f, "iget r{r} r{o} {x}"),
            DexInstr::Iput(s, o, x) => write!(f, "iput r{s} r{o} {x}"),
            DexInstr::Newarray(r, l, k) => write!(f, "newarray r{r} r{l} {}", k.name()),
            DexInstr::Arraylength(r, a) => write!(f, "arraylength r{r} r{a}"),
            DexInstr::Aget(r, a, i) => write!(f, "aget r{r} r{a} r{i}"),
            DexInstr::Aput(s, a, i) => write!(f, "aput r{s} r{a} r{i}"),
            DexInstr::Invoke(m, ps) => {
                write!(f, "invoke {m}")?;
                for p in ps {
                    write!(f, " r{p}")?;
                }
                Ok(())
            }
            DexInstr::Moveresult(r) => write!(f, "moveresult r{r}"),
            DexInstr::Throw(r) => write!(f, "throw r{r}"),
            DexInstr::Moveexception(r) => write!(f, "moveexception r{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DexMethod {
    pub id: String,
    pub code: Vec<DexInstr>,
    pub n_registers: usize,
    /// Registers `r0..r(n_locals-1)` hold the declared locals.
    pub n_locals: usize,
    pub handlers: Vec<Handler>,
    pub class_analysis: BTreeMap<Pp, BTreeSet<String>>,
    pub exc_analysis: BTreeSet<String>,
    pub nb_arguments: usize,
    pub labels: BTreeMap<Pp, String>,
    pub slot_kinds: BTreeMap<usize, SlotKind>,
}

impl DexMethod {
    pub fn instr(&self, pp: Pp) -> &DexInstr {
        &self.code[pp - 1]
    }

    pub fn handler(&self, pp: Pp, class: &str) -> Option<Pp> {
        find_handler(&self.handlers, pp, class)
    }
}

impl MethodShape for DexMethod {
    fn id(&self) -> &str {
        &self.id
    }
    fn code_len(&self) -> usize {
        self.code.len()
    }
    fn handlers(&self) -> &[Handler] {
        &self.handlers
    }
    fn nb_arguments(&self) -> usize {
        self.nb_arguments
    }
    fn exc_analysis(&self) -> &BTreeSet<String> {
        &self.exc_analysis
    }
    fn n_locals(&self) -> usize {
        self.n_locals
    }
    fn slot_kinds(&self) -> &BTreeMap<usize, SlotKind> {
        &self.slot_kinds
    }
}

pub type DexProgram = Program<DexMethod>;

pub fn raised_classes(prog: &DexProgram, m: &DexMethod, pp: Pp) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let ins = m.instr(pp);
    if ins.raises_np() {
        out.insert(NP.to_string());
    }
    match ins {
        DexInstr::Throw(_) => out.extend(m.class_analysis.get(&pp).into_iter().flatten().cloned()),
        DexInstr::Invoke(callee, _) => {
            if let Some(c) = prog.method(callee) {
                out.extend(c.exc_analysis.iter().cloned());
            }
        }
        _ => {}
    }
    out
}

pub fn successors(prog: &DexProgram, m: &DexMethod, pp: Pp) -> Vec<Edge> {
    let mut out = Vec::new();
    match m.instr(pp) {
        DexInstr::Goto(t) => out.push(Edge::norm(*t)),
        DexInstr::Ifeq(_, t) | DexInstr::Ifneq(_, t) => {
            out.push(Edge::norm(pp + 1));
            if *t != pp + 1 {
                out.push(Edge::norm(*t));
            }
        }
        DexInstr::Return(_) => out.push(Edge { tag: Tag::Norm, target: None }),
        DexInstr::Throw(_) => {}
        _ => out.push(Edge::norm(pp + 1)),
    }
    for c in raised_classes(prog, m, pp) {
        out.push(Edge { target: m.handler(pp, &c), tag: Tag::Exc(c) });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("method `{method}`: {msg}")]
pub struct DexValidationError {
    pub method: String,
    pub msg: String,
}

/// Structural checks, including the placement of `moveresult` (right
/// after an invoke) and `moveexception` (handler entries only).
pub fn validate(prog: &DexProgram, m: &DexMethod) -> Result<(), DexValidationError> {
    let err = |msg: String| DexValidationError { method: m.id.clone(), msg };
    let n = m.code.len();
    if n == 0 {
        return Err(err("empty code".into()));
    }
    if m.n_locals > m.n_registers {
        return Err(err("more locals than registers".into()));
    }
    let valid = |p: Pp| (1..=n).contains(&p);
    let targets: BTreeSet<Pp> = m.handlers.iter().map(|h| h.target).collect();
    for (idx, ins) in m.code.iter().enumerate() {
        let pp = idx + 1;
        if let Some(t) = ins.jump_target() {
            if !valid(t) {
                return Err(err(format!("pp {pp}: jump target {t} out of range")));
            }
        }
        for r in ins.reads().into_iter().chain(ins.writes()) {
            if r >= m.n_registers {
                return Err(err(format!("pp {pp}: register r{r} out of range")));
            }
        }
        match ins {
            DexInstr::Moveresult(_) if pp == 1 || !matches!(m.code[pp - 2], DexInstr::Invoke(..)) => {
                return Err(err(format!("pp {pp}: moveresult must directly follow an invoke")));
            }
            DexInstr::Moveexception(_) if !targets.contains(&pp) => {
                return Err(err(format!("pp {pp}: moveexception must start a handler")));
            }
            DexInstr::Invoke(c, ps) => {
                let callee = prog.method(c).ok_or_else(|| err(format!("pp {pp}: unknown method `{c}`")))?;
                if ps.len() != callee.nb_arguments + 1 {
                    return Err(err(format!("pp {pp}: `{c}` takes {} registers", callee.nb_arguments + 1)));
                }
                if callee.n_registers < ps.len() {
                    return Err(err(format!("callee `{c}` has fewer registers than arguments")));
                }
            }
            _ => {}
        }
    }
    if m.code[n - 1].falls_through() {
        return Err(err("execution can fall off the end of the code".into()));
    }
    for h in &m.handlers {
        if !(valid(h.start) && h.start < h.end && h.end <= n + 1 && valid(h.target)) {
            return Err(err(format!("handler [{}, {}) -> {} is malformed", h.start, h.end, h.target)));
        }
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![1];
    while let Some(p) = stack.pop() {
        if std::mem::replace(&mut seen[p], true) {
            continue;
        }
        for e in successors(prog, m, p) {
            if let Some(t) = e.target {
                if !seen[t] {
                    stack.push(t);
                }
            }
        }
    }
    if let Some(dead) = (1..=n).find(|&p| !seen[p]) {
        return Err(err(format!("pp {dead} is unreachable")));
    }
    Ok(())
}
