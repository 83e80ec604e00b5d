//! JVM subset: instructions, methods, interpreter and type checker.

pub mod checker;
pub mod machine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;

use crate::program::{find_handler, Edge, Handler, Kind, MethodShape, Pp, Program, SlotKind, Tag, NP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn parse(s: &str) -> Option<BinOp> {
        Some(match s {
            "+" | "add" => BinOp::Add,
            "-" | "sub" => BinOp::Sub,
            "*" | "mul" => BinOp::Mul,
            "/" | "div" => BinOp::Div,
            _ => return None,
        })
    }

    /// `None` on division by zero.
    pub fn apply(self, a: &BigInt, b: &BigInt) -> Option<BigInt> {
        match self {
            BinOp::Add => Some(a + b),
            BinOp::Sub => Some(a - b),
            BinOp::Mul => Some(a * b),
            BinOp::Div => (b != &BigInt::from(0)).then(|| a / b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JvmInstr {
    Binop(BinOp),
    Push(BigInt),
    Pop,
    Swap,
    Load(usize),
    Store(usize),
    Ifeq(Pp),
    Goto(Pp),
    Return,
    New(String),
    Getfield(String),
    Putfield(String),
    Newarray(Kind),
    Arraylength,
    Arrayload,
    Arraystore,
    Invoke(String),
    Throw,
}

impl JvmInstr {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            JvmInstr::Binop(_) => "binop",
            JvmInstr::Push(_) => "push",
            JvmInstr::Pop => "pop",
            JvmInstr::Swap => "swap",
            JvmInstr::Load(_) => "load",
            JvmInstr::Store(_) => "store",
            JvmInstr::Ifeq(_) => "ifeq",
            JvmInstr::Goto(_) => "goto",
            JvmInstr::Return => "return",
            JvmInstr::New(_) => "new",
            JvmInstr::Getfield(_) => "getfield",
            JvmInstr::Putfield(_) => "putfield",
            JvmInstr::Newarray(_) => "newarray",
            JvmInstr::Arraylength => "arraylength",
            JvmInstr::Arrayload => "arrayload",
            JvmInstr::Arraystore => "arraystore",
            JvmInstr::Invoke(_) => "invoke",
            JvmInstr::Throw => "throw",
        }
    }

    /// Whether execution can continue at the next program point.
    pub fn falls_through(&self) -> bool {
        !matches!(self, JvmInstr::Goto(_) | JvmInstr::Return | JvmInstr::Throw)
    }

    /// Instructions that raise `np` on a null reference.
    pub fn raises_np(&self) -> bool {
        matches!(
            self,
            JvmInstr::Getfield(_)
                | JvmInstr::Putfield(_)
                | JvmInstr::Arraylength
                | JvmInstr::Arrayload
                | JvmInstr::Arraystore
                | JvmInstr::Invoke(_)
                | JvmInstr::Throw
        )
    }
}

impl fmt::Display for JvmInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JvmInstr::Binop(op) => write!(f, "binop {}", op.symbol()),
            JvmInstr::Push(n) => write!(f, "push {n}"),
            JvmInstr::Load(x) => write!(f, "load {x}"),
            JvmInstr::Store(x) => write!(f, "store {x}"),
            JvmInstr::Ifeq(t) => write!(f, "ifeq {t}"),
            JvmInstr::Goto(t) => write!(f, "goto {t}"),
            JvmInstr::New(c) => write!(f, "new {c}"),
            JvmInstr::Getfield(x) => write!(f, "getfield {x}"),
            JvmInstr::Putfield(x) => write!(f, "putfield {x}"),
            JvmInstr::Newarray(k) => write!(f, "newarray {}", k.name()),
            JvmInstr::Invoke(m) => write!(f, "invoke {m}"),
            other => write!(f, "{}", other.mnemonic()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JvmMethod {
    pub id: String,
    /// Instruction at program point `p` is `code[p - 1]`.
    pub code: Vec<JvmInstr>,
    pub n_locals: usize,
    pub max_stack: usize,
    pub handlers: Vec<Handler>,
    pub class_analysis: BTreeMap<Pp, BTreeSet<String>>,
    pub exc_analysis: BTreeSet<String>,
    pub nb_arguments: usize,
    pub labels: BTreeMap<Pp, String>,
    pub slot_kinds: BTreeMap<usize, SlotKind>,
}

impl JvmMethod {
    pub fn instr(&self, pp: Pp) -> &JvmInstr {
        &self.code[pp - 1]
    }

    pub fn handler(&self, pp: Pp, class: &str) -> Option<Pp> {
        find_handler(&self.handlers, pp, class)
    }
}

impl MethodShape for JvmMethod {
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

pub type JvmProgram = Program<JvmMethod>;

/// Exception classes the instruction at `pp` may raise, in a fixed order.
pub fn raised_classes(prog: &JvmProgram, m: &JvmMethod, pp: Pp) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let ins = m.instr(pp);
    if ins.raises_np() {
        out.insert(NP.to_string());
    }
    match ins {
        JvmInstr::Throw => {
            out.extend(m.class_analysis.get(&pp).into_iter().flatten().cloned());
        }
        JvmInstr::Invoke(callee) => {
            if let Some(c) = prog.method(callee) {
                out.extend(c.exc_analysis.iter().cloned());
            }
        }
        _ => {}
    }
    out
}

/// The tagged successor relation at `pp`.
pub fn successors(prog: &JvmProgram, m: &JvmMethod, pp: Pp) -> Vec<Edge> {
    let mut out = Vec::new();
    match m.instr(pp) {
        JvmInstr::Goto(t) => out.push(Edge::norm(*t)),
        JvmInstr::Ifeq(t) => {
            out.push(Edge::norm(pp + 1));
            if *t != pp + 1 {
                out.push(Edge::norm(*t));
            }
        }
        JvmInstr::Return => out.push(Edge { tag: Tag::Norm, target: None }),
        JvmInstr::Throw => {}
        _ => out.push(Edge::norm(pp + 1)),
    }
    for c in raised_classes(prog, m, pp) {
        out.push(Edge { target: m.handler(pp, &c), tag: Tag::Exc(c) });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("method `{method}`: {msg}")]
pub struct ValidationError {
    pub method: String,
    pub msg: String,
}

/// Structural checks: targets, handler ranges, local indices, no fall-off
/// at the end and no unreachable code.
pub fn validate(prog: &JvmProgram, m: &JvmMethod) -> Result<(), ValidationError> {
    let err = |msg: String| ValidationError { method: m.id.clone(), msg };
    let n = m.code.len();
    if n == 0 {
        return Err(err("empty code".into()));
    }
    let valid = |p: Pp| (1..=n).contains(&p);
    for (idx, ins) in m.code.iter().enumerate() {
        let pp = idx + 1;
        match ins {
            JvmInstr::Ifeq(t) | JvmInstr::Goto(t) if !valid(*t) => {
                return Err(err(format!("pp {pp}: jump target {t} out of range")))
            }
            JvmInstr::Load(x) | JvmInstr::Store(x) if *x >= m.n_locals => {
                return Err(err(format!("pp {pp}: local {x} out of range")))
            }
            JvmInstr::Invoke(c) => {
                let callee = prog.method(c).ok_or_else(|| err(format!("pp {pp}: unknown method `{c}`")))?;
                if callee.n_locals < callee.nb_arguments + 1 {
                    return Err(err(format!("callee `{c}` has fewer locals than arguments")));
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
