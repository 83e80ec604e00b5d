//! JVM-to-DEX compilation in five passes (block starts, parent/child
//! wiring, per-instruction translation, trace ordering, emission) and the
//! translation of JVM certificates onto the emitted code.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::cdr::Cdr;
use crate::dex::checker::{infer_with, DexCertificate, RegTyping};
use crate::dex::{DexInstr, DexMethod, DexProgram, Reg};
use crate::jvm::checker::{cfg_of as jvm_cfg, transfer as jvm_transfer, JvmCertificate};
use crate::jvm::{raised_classes, successors, JvmInstr, JvmMethod, JvmProgram};
use crate::lattice::{ExtLevel, Lattice, Level};
use crate::policy::{MethodPolicy, PolicyError};
use crate::program::{Handler, Pp, Tag};
use crate::typing::{Obligations, Rejection, SecEnv};

pub type Label = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("translating `{method}`: {msg}")]
pub struct TranslateError {
    pub method: String,
    pub msg: String,
}

/// A JVM edge `(source, tag, target)`; `None` is the method exit.
pub type JvmEdge = (Pp, Tag, Option<Pp>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AuxKind {
    MoveResult,
    MoveException,
    Goto,
    Return,
}

impl AuxKind {
    pub fn name(self) -> &'static str {
        match self {
            AuxKind::MoveResult => "moveresult",
            AuxKind::MoveException => "moveexception",
            AuxKind::Goto => "goto",
            AuxKind::Return => "return",
        }
    }

    pub fn parse(s: &str) -> Option<AuxKind> {
        Some(match s {
            "moveresult" => AuxKind::MoveResult,
            "moveexception" => AuxKind::MoveException,
            "goto" => AuxKind::Goto,
            "return" => AuxKind::Return,
            _ => return None,
        })
    }
}

/// Where an emitted DEX instruction came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    /// Part of the translation of a JVM instruction.
    Instr(Pp),
    /// Inserted by the compiler; lies on the listed JVM edges.
    Aux(AuxKind, Vec<JvmEdge>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BasicBlock {
    pub parents: BTreeSet<Label>,
    pub succs: BTreeSet<Label>,
    pub p_succ: Option<Label>,
    pub order: Option<usize>,
    /// Jump targets inside are labels until emission.
    pub insn: Vec<DexInstr>,
    pub origin: Vec<Origin>,
    /// JVM program points in this block with the offset of their first
    /// instruction in `insn`.
    pub members: Vec<(Pp, usize)>,
    /// `(class, moveexception label)` for the block's throwing instruction.
    pub handlers: Vec<(String, Label)>,
    /// Edges an aux block (moveresult, moveexception, ret) lies on.
    pub aux_edges: Vec<JvmEdge>,
}

impl BasicBlock {
    fn throws(&self) -> bool {
        self.insn.iter().any(|i| i.raises_np() || matches!(i, DexInstr::Throw(_)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct BlockEnv {
    pub bmap: BTreeMap<Label, BasicBlock>,
    pub pmap: BTreeMap<Pp, Label>,
    /// Register index of the first free stack slot before each JVM pp.
    pub ts_map: BTreeMap<Pp, usize>,
    pub max_label: Label,
    pub ret_label: Label,
    /// Labels of the moveexception blocks.
    pub handler_labels: BTreeSet<Label>,
    next_label: Label,
}

impl BlockEnv {
    fn fresh_label(&mut self) -> Label {
        self.next_label += 1;
        self.next_label
    }

    fn block(&mut self, l: Label) -> &mut BasicBlock {
        self.bmap.entry(l).or_default()
    }

    fn link(&mut self, from: Label, to: Label) {
        self.block(from).succs.insert(to);
        self.block(to).parents.insert(from);
    }

    fn moveexception_label(&self, handler_pc: Pp) -> Label {
        self.max_label + handler_pc
    }
}

/// Emitted-code addressing for one compiled method.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressMap {
    /// `⟦i⟧`: DEX pps of each JVM pp's translation, in output order.
    pub fwd: BTreeMap<Pp, Vec<Pp>>,
    /// First DEX pp executed for each JVM pp (the next emitted pp when
    /// the translation is empty).
    pub entry: BTreeMap<Pp, Pp>,
    /// Output address of every block start.
    pub block_start: BTreeMap<Label, Pp>,
    /// Origin of every DEX pp, indexed by `pp - 1`.
    pub origin: Vec<Origin>,
}

impl AddressMap {
    pub fn origin_of(&self, dex_pp: Pp) -> &Origin {
        &self.origin[dex_pp - 1]
    }

    /// The DEX instruction carrying the branch of JVM point `i`.
    pub fn branch_point(&self, i: Pp) -> Option<Pp> {
        self.fwd.get(&i).and_then(|v| v.last().copied())
    }

    pub fn aux_points(&self) -> impl Iterator<Item = (Pp, AuxKind, &[JvmEdge])> + '_ {
        self.origin.iter().enumerate().filter_map(|(k, o)| match o {
            Origin::Aux(kind, edges) => Some((k + 1, *kind, edges.as_slice())),
            Origin::Instr(_) => None,
        })
    }
}

fn is_throwing(prog: &JvmProgram, m: &JvmMethod, i: Pp) -> bool {
    !raised_classes(prog, m, i).is_empty()
}

/// Handlers that catch something the instruction at `i` can raise, as
/// `(class, handler pc)`.
fn active_handlers(prog: &JvmProgram, m: &JvmMethod, i: Pp) -> Vec<(String, Pp)> {
    raised_classes(prog, m, i).into_iter().filter_map(|c| m.handler(i, &c).map(|h| (c, h))).collect()
}

/// Marks block starts. Blocks begin at pp 1, jump targets, points after
/// branches, returns and throwing instructions, and the start, end and
/// target of every handler guarding a throwing instruction.
pub fn start_block(prog: &JvmProgram, m: &JvmMethod) -> BlockEnv {
    let n = m.code.len();
    let max_label = n + 1;
    let max_handler = m.handlers.iter().map(|h| h.target).max().unwrap_or(0);
    let mut env =
        BlockEnv { max_label, ret_label: max_label, next_label: max_label + max_handler, ..Default::default() };
    let mut starts = BTreeSet::from([1]);
    for i in 1..=n {
        match m.instr(i) {
            JvmInstr::Goto(t) => {
                starts.insert(*t);
                starts.insert(i + 1);
            }
            JvmInstr::Ifeq(t) => {
                starts.insert(*t);
                starts.insert(i + 1);
            }
            JvmInstr::Return => {
                starts.insert(i + 1);
            }
            _ if is_throwing(prog, m, i) => {
                starts.insert(i + 1);
                for h in m.handlers.iter().filter(|h| h.start <= i && i < h.end) {
                    starts.extend([h.start, h.end, h.target]);
                }
            }
            _ => {}
        }
    }
    let mut current = 1;
    for i in 1..=n {
        if starts.contains(&i) {
            current = i;
            env.bmap.insert(i, BasicBlock::default());
        }
        env.pmap.insert(i, current);
    }
    env
}

/// Wires parents, successors and primary successors, creating the
/// shared return block, moveresult blocks and moveexception blocks.
pub fn trace_parent_child(prog: &JvmProgram, m: &JvmMethod, mut env: BlockEnv) -> BlockEnv {
    let n = m.code.len();
    let ret = env.ret_label;
    env.bmap.insert(ret, BasicBlock::default());
    for i in 1..=n {
        let cur = env.pmap[&i];
        match m.instr(i) {
            JvmInstr::Goto(t) => {
                env.link(cur, *t);
                env.block(cur).p_succ = Some(*t);
            }
            JvmInstr::Ifeq(t) => {
                env.link(cur, i + 1);
                env.link(cur, *t);
                env.block(cur).p_succ = Some(i + 1);
            }
            JvmInstr::Return => {
                env.link(cur, ret);
                env.block(cur).p_succ = Some(ret);
                env.block(ret).aux_edges.push((i, Tag::Norm, None));
            }
            ins => {
                if let JvmInstr::Invoke(_) = ins {
                    let l = env.fresh_label();
                    env.link(cur, l);
                    env.link(l, i + 1);
                    env.block(cur).p_succ = Some(l);
                    let b = env.block(l);
                    b.p_succ = Some(i + 1);
                    b.aux_edges.push((i, Tag::Norm, Some(i + 1)));
                } else if ins.falls_through() && (is_throwing(prog, m, i) || env.bmap.contains_key(&(i + 1))) {
                    env.link(cur, i + 1);
                    env.block(cur).p_succ = Some(i + 1);
                }
                for (class, hpc) in active_handlers(prog, m, i) {
                    let int_pc = env.moveexception_label(hpc);
                    env.handler_labels.insert(int_pc);
                    env.link(cur, int_pc);
                    env.link(int_pc, hpc);
                    env.block(cur).handlers.push((class.clone(), int_pc));
                    let b = env.block(int_pc);
                    b.p_succ = Some(hpc);
                    b.aux_edges.push((i, Tag::Exc(class), Some(hpc)));
                }
            }
        }
    }
    env
}

fn height_delta(prog: &JvmProgram, ins: &JvmInstr) -> (usize, usize) {
    match ins {
        JvmInstr::Binop(_) => (2, 1),
        JvmInstr::Push(_) | JvmInstr::Load(_) | JvmInstr::New(_) => (0, 1),
        JvmInstr::Pop | JvmInstr::Store(_) | JvmInstr::Ifeq(_) => (1, 0),
        JvmInstr::Swap => (2, 2),
        JvmInstr::Goto(_) => (0, 0),
        JvmInstr::Return | JvmInstr::Throw => (1, 0),
        JvmInstr::Getfield(_) | JvmInstr::Newarray(_) | JvmInstr::Arraylength => (1, 1),
        JvmInstr::Putfield(_) => (2, 0),
        JvmInstr::Arrayload => (2, 1),
        JvmInstr::Arraystore => (3, 0),
        JvmInstr::Invoke(c) => (prog.method(c).map_or(0, |c| c.nb_arguments) + 1, 1),
    }
}

/// Static stack heights by forward propagation. Handlers start at 1.
pub fn stack_heights(prog: &JvmProgram, m: &JvmMethod) -> Result<BTreeMap<Pp, usize>, TranslateError> {
    let err = |msg: String| TranslateError { method: m.id.clone(), msg };
    let mut h = BTreeMap::from([(1, 0usize)]);
    let mut work = VecDeque::from([1]);
    while let Some(i) = work.pop_front() {
        let cur = h[&i];
        let (pop, push) = height_delta(prog, m.instr(i));
        if cur < pop {
            return Err(err(format!("pp {i}: stack underflow")));
        }
        for e in successors(prog, m, i) {
            let Some(j) = e.target else { continue };
            let next = if e.tag == Tag::Norm { cur - pop + push } else { 1 };
            match h.get(&j) {
                Some(&old) if old != next => {
                    return Err(err(format!("pp {j}: stack heights {old} and {next} meet")));
                }
                Some(_) => {}
                None => {
                    h.insert(j, next);
                    work.push_back(j);
                }
            }
        }
    }
    Ok(h)
}

/// Fills every block with the translated instructions and records the
/// stack-top register map.
pub fn translate_instructions(prog: &JvmProgram, m: &JvmMethod, mut env: BlockEnv) -> Result<BlockEnv, TranslateError> {
    let nl = m.n_locals;
    let heights = stack_heights(prog, m)?;
    for i in 1..=m.code.len() {
        let ts = nl + heights[&i];
        env.ts_map.insert(i, ts);
        let r = |d: usize| ts - d;
        let out: Vec<DexInstr> = match m.instr(i) {
            JvmInstr::Push(n) => vec![DexInstr::Const(ts, n.clone())],
            JvmInstr::Pop | JvmInstr::Goto(_) => vec![],
            JvmInstr::Load(x) => vec![DexInstr::Move(ts, *x)],
            JvmInstr::Store(x) => vec![DexInstr::Move(*x, r(1))],
            JvmInstr::Binop(op) => vec![DexInstr::Binop(*op, r(2), r(2), r(1))],
            JvmInstr::Swap => vec![
                DexInstr::Move(ts, r(2)),
                DexInstr::Move(ts + 1, r(1)),
                DexInstr::Move(r(1), ts),
                DexInstr::Move(r(2), ts + 1),
            ],
            JvmInstr::Ifeq(t) => vec![DexInstr::Ifeq(r(1), *t)],
            JvmInstr::Return if r(1) == nl => vec![],
            JvmInstr::Return => vec![DexInstr::Move(nl, r(1))],
            JvmInstr::New(c) => vec![DexInstr::New(ts, c.clone())],
            JvmInstr::Getfield(f) => vec![DexInstr::Iget(r(1), r(1), f.clone())],
            JvmInstr::Putfield(f) => vec![DexInstr::Iput(r(1), r(2), f.clone())],
            JvmInstr::Newarray(k) => vec![DexInstr::Newarray(r(1), r(1), *k)],
            JvmInstr::Arraylength => vec![DexInstr::Arraylength(r(1), r(1))],
            JvmInstr::Arrayload => vec![DexInstr::Aget(r(2), r(2), r(1))],
            JvmInstr::Arraystore => vec![DexInstr::Aput(r(1), r(3), r(2))],
            JvmInstr::Invoke(c) => {
                let n = height_delta(prog, m.instr(i)).0;
                let l = env.bmap[&env.pmap[&i]].p_succ.expect("invoke block has a moveresult successor");
                let b = env.block(l);
                b.insn = vec![DexInstr::Moveresult(r(n))];
                b.origin = vec![Origin::Aux(AuxKind::MoveResult, b.aux_edges.clone())];
                vec![DexInstr::Invoke(c.clone(), (ts - n..ts).collect())]
            }
            JvmInstr::Throw => vec![DexInstr::Throw(r(1))],
        };
        let b = env.block(env.pmap[&i]);
        b.members.push((i, b.insn.len()));
        b.origin.extend(std::iter::repeat_n(Origin::Instr(i), out.len()));
        b.insn.extend(out);
    }
    let ret = env.ret_label;
    let b = env.block(ret);
    b.insn = vec![DexInstr::Return(nl)];
    b.origin = vec![Origin::Aux(AuxKind::Return, b.aux_edges.clone())];
    let int_labels = env.handler_labels.clone();
    for l in int_labels {
        let b = env.block(l);
        b.insn = vec![DexInstr::Moveexception(nl)];
        b.origin = vec![Origin::Aux(AuxKind::MoveException, b.aux_edges.clone())];
    }
    Ok(env)
}

fn pick_starting_point(env: &BlockEnv, x: Label, lp: &mut BTreeSet<Label>) -> Label {
    let mut x = x;
    'walk: loop {
        for &p in &env.bmap[&x].parents {
            if lp.contains(&p) {
                return x;
            }
            let bp = &env.bmap[&p];
            if bp.p_succ == Some(x) && bp.order.is_none() {
                lp.insert(p);
                x = p;
                continue 'walk;
            }
        }
        return x;
    }
}

fn trace_successors(env: &mut BlockEnv, x: Label, mut order: usize) -> usize {
    let mut x = Some(x);
    while let Some(cur) = x.take() {
        env.bmap.get_mut(&cur).unwrap().order = Some(order);
        order += 1;
        let b = &env.bmap[&cur];
        if let Some(ps) = b.p_succ {
            if env.bmap[&ps].order.is_none() {
                x = Some(ps);
            } else {
                x = b.succs.iter().copied().find(|s| env.bmap[s].order.is_none());
            }
        }
    }
    order
}

/// Assigns every block a position by tracing primary successors. The
/// entry block is traced first.
pub fn pick_order(mut env: BlockEnv) -> BlockEnv {
    let mut order = trace_successors(&mut env, 1, 0);
    while let Some(x) = env.bmap.iter().find(|(_, b)| b.order.is_none()).map(|(l, _)| *l) {
        let source = pick_starting_point(&env, x, &mut BTreeSet::from([x]));
        order = trace_successors(&mut env, source, order);
    }
    env
}

/// The trailing goto of block `b` lies on the edge(s) its fallthrough
/// stands for.
fn goto_edges(env: &BlockEnv, b: &BasicBlock) -> Vec<JvmEdge> {
    if let Some(&(last, _)) = b.members.last() {
        let ps = b.p_succ.expect("goto only appended after a primary successor");
        let target = if ps == env.ret_label {
            None
        } else if ps > env.max_label {
            Some(last + 1)
        } else {
            Some(ps)
        };
        vec![(last, Tag::Norm, target)]
    } else {
        b.aux_edges.clone()
    }
}

/// Lays out blocks in order, adds fallthrough gotos, resolves labels and
/// builds the handler table.
pub fn emit(m: &JvmMethod, env: &BlockEnv) -> Result<(DexMethod, AddressMap), TranslateError> {
    let err = |msg: String| TranslateError { method: m.id.clone(), msg };
    // The shared return block is dropped when no return reaches it.
    let mut blocks: Vec<(usize, Label)> = env
        .bmap
        .iter()
        .filter(|(l, b)| **l != env.ret_label || !b.parents.is_empty())
        .map(|(l, b)| (b.order.unwrap_or(usize::MAX), *l))
        .collect();
    blocks.sort();
    let order: Vec<Label> = blocks.into_iter().map(|(_, l)| l).collect();
    let mut out: Vec<DexInstr> = Vec::new();
    let mut amap = AddressMap::default();
    let mut ranges: Vec<(Label, Pp, Pp)> = Vec::new();
    for (k, &x) in order.iter().enumerate() {
        let b = &env.bmap[&x];
        let next = order.get(k + 1).copied();
        let start = out.len() + 1;
        amap.block_start.insert(x, start);
        let mut members = b.members.iter().peekable();
        for (off, (ins, origin)) in b.insn.iter().zip(&b.origin).enumerate() {
            while let Some(&&(i, o)) = members.peek() {
                if o > off {
                    break;
                }
                amap.entry.insert(i, start + off);
                members.next();
            }
            if let Origin::Instr(i) = origin {
                amap.fwd.entry(*i).or_default().push(start + off);
            }
            out.push(ins.clone());
            amap.origin.push(origin.clone());
        }
        let tail = out.len() + 1;
        for &(i, _) in members {
            amap.entry.insert(i, tail);
        }
        if let Some(ps) = b.p_succ {
            if Some(ps) != next {
                match out.last_mut() {
                    Some(DexInstr::Ifeq(r, t))
                        if b.insn.last().is_some_and(|l| matches!(l, DexInstr::Ifeq(..))) && Some(*t) == next =>
                    {
                        *out.last_mut().unwrap() = DexInstr::Ifneq(*r, ps);
                    }
                    _ => {
                        out.push(DexInstr::Goto(ps));
                        amap.origin.push(Origin::Aux(AuxKind::Goto, goto_edges(env, b)));
                    }
                }
            }
        }
        ranges.push((x, start, out.len() + 1));
    }
    for ins in &mut out {
        if let Some(t) = ins.jump_target() {
            if !amap.block_start.contains_key(&t) {
                return Err(err(format!("unresolved label {t}")));
            }
        }
        ins.retarget(|t| amap.block_start[&t]);
    }
    // Merge consecutive runs with one handler set. A throwing block with a
    // different set closes the run.
    let mut handlers = Vec::new();
    type Run<'a> = Option<(&'a Vec<(String, Label)>, Pp, Pp)>;
    let mut cur: Run = None;
    let flush = |cur: Run, handlers: &mut Vec<Handler>| {
        if let Some((hs, s, e)) = cur {
            for (class, l) in hs {
                handlers.push(Handler { start: s, end: e, target: amap.block_start[l], class: class.clone() });
            }
        }
    };
    for &(x, s, e) in &ranges {
        let b = &env.bmap[&x];
        if !b.throws() {
            continue;
        }
        match cur {
            Some((hs, cs, _)) if hs == &b.handlers => cur = Some((hs, cs, e)),
            _ => {
                flush(cur.take(), &mut handlers);
                if !b.handlers.is_empty() {
                    cur = Some((&b.handlers, s, e));
                }
            }
        }
    }
    flush(cur, &mut handlers);

    let mut class_analysis = BTreeMap::new();
    for (i, cs) in &m.class_analysis {
        let Some(p) =
            amap.fwd.get(i).and_then(|v| v.iter().copied().find(|&p| matches!(out[p - 1], DexInstr::Throw(_))))
        else {
            return Err(err(format!("classAnalysis names pp {i}, which has no throw")));
        };
        class_analysis.insert(p, cs.clone());
    }
    let highest = out.iter().flat_map(|i| i.reads().into_iter().chain(i.writes())).max().map_or(0, |r| r + 1);
    let max_height = env.ts_map.values().map(|ts| ts - m.n_locals).max().unwrap_or(0);
    let mut labels = BTreeMap::new();
    for ins in &out {
        if let Some(t) = ins.jump_target() {
            labels.insert(t, format!("L{t}"));
        }
    }
    for h in &handlers {
        labels.insert(h.target, format!("L{}", h.target));
    }
    let dm = DexMethod {
        id: m.id.clone(),
        code: out,
        n_registers: highest.max(m.n_locals + m.max_stack.max(max_height + 1)),
        n_locals: m.n_locals,
        handlers,
        class_analysis,
        exc_analysis: m.exc_analysis.clone(),
        nb_arguments: m.nb_arguments,
        labels,
        slot_kinds: m.slot_kinds.clone(),
    };
    Ok((dm, amap))
}

/// The full pipeline for one method.
pub fn compile_method(prog: &JvmProgram, m: &JvmMethod) -> Result<(DexMethod, AddressMap), TranslateError> {
    let env = start_block(prog, m);
    let env = trace_parent_child(prog, m, env);
    let env = translate_instructions(prog, m, env)?;
    let env = pick_order(env);
    emit(m, &env)
}

/// A compiled program with one address map per method.
pub struct Compiled {
    pub program: DexProgram,
    pub maps: BTreeMap<String, AddressMap>,
}

impl fmt::Debug for Compiled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Compiled").field("methods", &self.program.methods.len()).finish()
    }
}

pub fn compile_program(prog: &JvmProgram) -> Result<Compiled, TranslateError> {
    let mut methods = Vec::new();
    let mut maps = BTreeMap::new();
    for m in &prog.methods {
        let (dm, amap) = compile_method(prog, m)?;
        methods.push(dm);
        maps.insert(m.id.clone(), amap);
    }
    let policy = translate_policies(prog, &maps)?;
    let program = DexProgram { lattice: prog.lattice.clone(), classes: prog.classes.clone(), methods, policy };
    Ok(Compiled { program, maps })
}

/// Γ and ft carry over; array content levels move to the address of the
/// DEX newarray.
pub fn translate_policies(
    prog: &JvmProgram,
    maps: &BTreeMap<String, AddressMap>,
) -> Result<crate::policy::ProgramPolicy, TranslateError> {
    let mut policy = prog.policy.clone();
    for (id, amap) in maps {
        policy = policy
            .rekey_arrays(id, |pp| amap.fwd.get(&pp).and_then(|v| v.first().copied()))
            .map_err(|e: PolicyError| TranslateError { method: id.clone(), msg: e.to_string() })?;
    }
    Ok(policy)
}

/// `⟦st⟧`: locals from `ka`, stack bottom-up from `r(n_locals)`, top
/// elsewhere.
pub fn compile_stack_type(
    lat: &Lattice,
    st: &[ExtLevel],
    ka: &[ExtLevel],
    n_locals: usize,
    n_registers: usize,
) -> Result<RegTyping, String> {
    if n_locals + st.len() > n_registers {
        return Err(format!("stack of height {} does not fit in {n_registers} registers", st.len()));
    }
    let mut rt = RegTyping::entry(lat, ka, n_registers);
    for r in ka.len()..n_locals.min(n_registers) {
        rt.regs[r] = ExtLevel::Simple(lat.top());
    }
    for (j, k) in st.iter().rev().enumerate() {
        rt.regs[n_locals + j] = k.clone();
    }
    Ok(rt)
}

fn aux_joins(edges: &[JvmEdge], b: Pp, tag: &Tag, region: &BTreeSet<Pp>, jun: Option<Pp>) -> bool {
    edges.iter().any(|(x, te, s)| {
        region.contains(x)
            || (*x == b && (s.is_some_and(|s| region.contains(&s)) || (te == tag && s.is_some() && *s == jun)))
    })
}

/// Maps regions and junctions onto the emitted code. Aux points join a
/// region when the JVM edge they lie on stays inside it.
pub fn translate_cdr(method: &str, cdr: &Cdr, amap: &AddressMap) -> Result<Cdr, TranslateError> {
    let err = |msg: String| TranslateError { method: method.to_string(), msg };
    let mut out = Cdr::default();
    let keys: BTreeSet<(Pp, Tag)> = cdr.region.keys().chain(cdr.jun.keys()).cloned().collect();
    let empty = BTreeSet::new();
    for (b, tag) in keys {
        let bd = amap
            .branch_point(b)
            .ok_or_else(|| err(format!("no branching instruction in the translation of pp {b}")))?;
        let region = cdr.region.get(&(b, tag.clone())).unwrap_or(&empty);
        let jun = cdr.jun(b, &tag);
        let mut set: BTreeSet<Pp> =
            region.iter().flat_map(|x| amap.fwd.get(x).into_iter().flatten().copied()).collect();
        for (p, _, edges) in amap.aux_points() {
            if aux_joins(edges, b, &tag, region, jun) {
                set.insert(p);
            }
        }
        out.region.insert((bd, tag.clone()), set);
        if let Some(j) = jun {
            let jd = *amap.entry.get(&j).ok_or_else(|| err(format!("junction {j} has no address")))?;
            out.jun.insert((bd, tag), jd);
        }
    }
    Ok(out)
}

/// Region levels demanded by each JVM branching point under `cert`.
fn region_demands(
    prog: &JvmProgram,
    m: &JvmMethod,
    sgn: &MethodPolicy,
    cert: &JvmCertificate,
) -> Result<BTreeMap<(Pp, Tag), Level>, Rejection> {
    let lat = &prog.lattice;
    let cfg = jvm_cfg(prog, m);
    let mut out: BTreeMap<(Pp, Tag), Level> = BTreeMap::new();
    for (&i, st) in &cert.stacks {
        for e in cfg.succ(i) {
            let mut ob = Obligations::new(lat, i, e.tag.clone());
            jvm_transfer(prog, m, sgn, &cert.se, i, e, st, &mut ob)?;
            if let Some(k) = ob.region {
                let slot = out.entry((i, e.tag.clone())).or_insert(k);
                *slot = lat.lub(*slot, k);
            }
        }
    }
    Ok(out)
}

/// `se` on the emitted code. Translated instructions keep their source
/// level. An aux point takes the level of every edge source it lies on,
/// plus the source's region demand for each region of that source it
/// belongs to.
pub fn translate_se(
    prog: &JvmProgram,
    m: &JvmMethod,
    sgn: &MethodPolicy,
    cert: &JvmCertificate,
    amap: &AddressMap,
    dex_cdr: &Cdr,
) -> Result<SecEnv, Rejection> {
    let lat = &prog.lattice;
    let demands = region_demands(prog, m, sgn, cert)?;
    let mut levels = Vec::with_capacity(amap.origin.len());
    for origin in &amap.origin {
        let k = match origin {
            Origin::Instr(i) => cert.se.get(*i),
            Origin::Aux(_, edges) => {
                let mut k = lat.bottom();
                let p = levels.len() + 1;
                for (x, _, _) in edges {
                    k = lat.lub(k, cert.se.get(*x));
                    let Some(bd) = amap.branch_point(*x) else { continue };
                    for ((b, tag), d) in demands.range((*x, Tag::Norm)..) {
                        if b != x {
                            break;
                        }
                        if dex_cdr.in_region(bd, tag, p) {
                            k = lat.lub(k, *d);
                        }
                    }
                }
                k
            }
        };
        levels.push(k);
    }
    Ok(SecEnv::from_levels(levels))
}

/// The translated certificate, plus the translated se before any raise
/// by the DEX fixpoint (for comparison).
pub struct TranslatedCertificate {
    pub cert: DexCertificate,
    pub translated_se: SecEnv,
}

/// Carries a JVM certificate over: CDR and se by translation, register
/// typings by seeding `⟦S_i⟧` at `⟦i⟧[0]` and closing under the DEX rules.
pub fn translate_certificate(
    jprog: &JvmProgram,
    jm: &JvmMethod,
    sgn: &MethodPolicy,
    jcert: &JvmCertificate,
    dprog: &DexProgram,
    dm: &DexMethod,
    amap: &AddressMap,
) -> Result<TranslatedCertificate, Rejection> {
    let cdr = translate_cdr(&jm.id, &jcert.cdr, amap).map_err(|e| Rejection::Certificate(e.to_string()))?;
    let se = translate_se(jprog, jm, sgn, jcert, amap, &cdr)?;
    let mut seeds = BTreeMap::new();
    for (i, st) in &jcert.stacks {
        if let Some(&p) = amap.fwd.get(i).and_then(|v| v.first()) {
            let rt = compile_stack_type(&jprog.lattice, st, &sgn.ka, jm.n_locals, dm.n_registers)
                .map_err(|msg| Rejection::Shape { pp: p, msg })?;
            seeds.insert(p, rt);
        }
    }
    let cert = infer_with(dprog, dm, sgn, cdr, se.clone(), &seeds)?;
    Ok(TranslatedCertificate { cert, translated_se: se })
}

/// Register `r` as seen by `⟦st⟧`; used by tests of the stack lemma.
pub fn stack_register(n_locals: usize, height: usize, depth_from_top: usize) -> Option<Reg> {
    (depth_from_top < height).then(|| n_locals + height - 1 - depth_from_top)
}
