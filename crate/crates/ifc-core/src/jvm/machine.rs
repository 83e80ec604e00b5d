//! Small-step interpreter for the JVM subset.

use num_traits::{Signed, ToPrimitive, Zero};

use super::{JvmInstr, JvmMethod, JvmProgram};
use crate::heap::{default_array, default_object, Cell, Final, Heap, Outcome, RunError, Value};
use crate::program::{Pp, Tag, NP};

pub const DEFAULT_FUEL: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JvmState {
    pub pc: Pp,
    pub locals: Vec<Value>,
    /// Operand stack, top at the end.
    pub stack: Vec<Value>,
    pub heap: Heap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Next(Tag, JvmState),
    Final(Final),
}

/// Entry locals: the given values, padded with `Int(0)`.
pub fn entry_locals(m: &JvmMethod, args: &[Value]) -> Vec<Value> {
    let mut locals: Vec<Value> = args.iter().take(m.n_locals).cloned().collect();
    locals.resize(m.n_locals, Value::int(0));
    locals
}

struct Ctx<'a> {
    prog: &'a JvmProgram,
    m: &'a JvmMethod,
    pp: Pp,
}

impl Ctx<'_> {
    fn err(&self, msg: impl Into<String>) -> RunError {
        RunError::Machine { method: self.m.id.clone(), pp: self.pp, msg: msg.into() }
    }

    fn pop(&self, s: &mut JvmState) -> Result<Value, RunError> {
        s.stack.pop().ok_or_else(|| self.err("stack underflow"))
    }

    fn pop_int(&self, s: &mut JvmState) -> Result<num_bigint::BigInt, RunError> {
        match self.pop(s)? {
            Value::Int(n) => Ok(n),
            v => Err(self.err(format!("expected integer, found {v}"))),
        }
    }

    /// Routes an exception object to the handler or ends the run.
    fn throw(&self, mut s: JvmState, loc: crate::heap::Loc) -> Result<StepOutcome, RunError> {
        let class = s.heap.class_of(loc).ok_or_else(|| self.err("thrown value is not an object"))?.to_string();
        match self.m.handler(self.pp, &class) {
            Some(t) => {
                s.pc = t;
                s.stack = vec![Value::Loc(loc)];
                Ok(StepOutcome::Next(Tag::Exc(class), s))
            }
            None => Ok(StepOutcome::Final(Final { outcome: Outcome::Exception(loc), heap: s.heap })),
        }
    }

    fn throw_np(&self, mut s: JvmState) -> Result<StepOutcome, RunError> {
        let loc = s.heap.alloc(default_object(&self.prog.classes, NP));
        self.throw(s, loc)
    }
}

fn next(mut s: JvmState) -> Result<StepOutcome, RunError> {
    s.pc += 1;
    Ok(StepOutcome::Next(Tag::Norm, s))
}

fn index(n: &num_bigint::BigInt, len: usize) -> Option<usize> {
    n.to_usize().filter(|&i| i < len)
}

/// One step of method `m`. Invocations run the callee to completion,
/// drawing on the same fuel.
pub fn step(prog: &JvmProgram, m: &JvmMethod, mut s: JvmState, fuel: &mut u64) -> Result<StepOutcome, RunError> {
    let cx = Ctx { prog, m, pp: s.pc };
    if s.pc == 0 || s.pc > m.code.len() {
        return Err(cx.err("program counter out of range"));
    }
    match m.instr(s.pc) {
        JvmInstr::Binop(op) => {
            let n1 = cx.pop_int(&mut s)?;
            let n2 = cx.pop_int(&mut s)?;
            let n = op.apply(&n2, &n1).ok_or_else(|| cx.err("division by zero"))?;
            s.stack.push(Value::Int(n));
            next(s)
        }
        JvmInstr::Push(n) => {
            s.stack.push(Value::Int(n.clone()));
            next(s)
        }
        JvmInstr::Pop => {
            cx.pop(&mut s)?;
            next(s)
        }
        JvmInstr::Swap => {
            let a = cx.pop(&mut s)?;
            let b = cx.pop(&mut s)?;
            s.stack.push(a);
            s.stack.push(b);
            next(s)
        }
        JvmInstr::Load(x) => {
            let v = s.locals.get(*x).cloned().ok_or_else(|| cx.err(format!("undefined local {x}")))?;
            s.stack.push(v);
            next(s)
        }
        JvmInstr::Store(x) => {
            let v = cx.pop(&mut s)?;
            *s.locals.get_mut(*x).ok_or_else(|| cx.err(format!("undefined local {x}")))? = v;
            next(s)
        }
        JvmInstr::Ifeq(t) => {
            let n = cx.pop_int(&mut s)?;
            if n.is_zero() {
                s.pc = *t;
                Ok(StepOutcome::Next(Tag::Norm, s))
            } else {
                next(s)
            }
        }
        JvmInstr::Goto(t) => {
            s.pc = *t;
            Ok(StepOutcome::Next(Tag::Norm, s))
        }
        JvmInstr::Return => {
            let v = cx.pop(&mut s)?;
            Ok(StepOutcome::Final(Final { outcome: Outcome::Normal(v), heap: s.heap }))
        }
        JvmInstr::New(c) => {
            let l = s.heap.alloc(default_object(&prog.classes, c));
            s.stack.push(Value::Loc(l));
            next(s)
        }
        JvmInstr::Getfield(f) => match cx.pop(&mut s)? {
            Value::Null => cx.throw_np(s),
            Value::Loc(l) => {
                let v = match s.heap.get(l) {
                    Some(Cell::Object(o)) => o.fields.get(f).cloned(),
                    _ => None,
                }
                .ok_or_else(|| cx.err(format!("no field `{f}` at {l}")))?;
                s.stack.push(v);
                next(s)
            }
            v => Err(cx.err(format!("getfield on {v}"))),
        },
        JvmInstr::Putfield(f) => {
            let v = cx.pop(&mut s)?;
            match cx.pop(&mut s)? {
                Value::Null => cx.throw_np(s),
                Value::Loc(l) => {
                    match s.heap.get_mut(l) {
                        Some(Cell::Object(o)) if o.fields.contains_key(f) => {
                            o.fields.insert(f.clone(), v);
                        }
                        _ => return Err(cx.err(format!("no field `{f}` at {l}"))),
                    }
                    next(s)
                }
                r => Err(cx.err(format!("putfield on {r}"))),
            }
        }
        JvmInstr::Newarray(kind) => {
            let n = cx.pop_int(&mut s)?;
            if n.is_negative() {
                return Err(cx.err("negative array length"));
            }
            let len = n.to_usize().filter(|&n| n <= 1 << 16).ok_or_else(|| cx.err("array too large"))?;
            let l = s.heap.alloc(default_array(len, *kind, (m.id.clone(), s.pc)));
            s.stack.push(Value::Loc(l));
            next(s)
        }
        JvmInstr::Arraylength => match cx.pop(&mut s)? {
            Value::Null => cx.throw_np(s),
            Value::Loc(l) => match s.heap.get(l) {
                Some(Cell::Array(a)) => {
                    let n = a.elems.len();
                    s.stack.push(Value::int(n as i64));
                    next(s)
                }
                _ => Err(cx.err(format!("arraylength on non-array {l}"))),
            },
            v => Err(cx.err(format!("arraylength on {v}"))),
        },
        JvmInstr::Arrayload => {
            let i = cx.pop_int(&mut s)?;
            match cx.pop(&mut s)? {
                Value::Null => cx.throw_np(s),
                Value::Loc(l) => {
                    let v = match s.heap.get(l) {
                        Some(Cell::Array(a)) => index(&i, a.elems.len()).map(|i| a.elems[i].clone()),
                        _ => return Err(cx.err(format!("arrayload on non-array {l}"))),
                    }
                    .ok_or_else(|| cx.err(format!("index {i} out of bounds")))?;
                    s.stack.push(v);
                    next(s)
                }
                v => Err(cx.err(format!("arrayload on {v}"))),
            }
        }
        JvmInstr::Arraystore => {
            let v = cx.pop(&mut s)?;
            let i = cx.pop_int(&mut s)?;
            match cx.pop(&mut s)? {
                Value::Null => cx.throw_np(s),
                Value::Loc(l) => {
                    match s.heap.get_mut(l) {
                        Some(Cell::Array(a)) => {
                            let i =
                                index(&i, a.elems.len()).ok_or_else(|| cx.err(format!("index {i} out of bounds")))?;
                            a.elems[i] = v;
                        }
                        _ => return Err(cx.err(format!("arraystore on non-array {l}"))),
                    }
                    next(s)
                }
                r => Err(cx.err(format!("arraystore on {r}"))),
            }
        }
        JvmInstr::Invoke(name) => {
            let callee = prog.method(name).ok_or_else(|| cx.err(format!("unknown method `{name}`")))?;
            let nb = callee.nb_arguments;
            if s.stack.len() < nb + 1 {
                return Err(cx.err("stack underflow"));
            }
            let args = s.stack.split_off(s.stack.len() - nb - 1);
            match &args[0] {
                Value::Null => return cx.throw_np(s),
                Value::Loc(_) => {}
                v => return Err(cx.err(format!("invoke on {v}"))),
            }
            let heap = std::mem::take(&mut s.heap);
            let fin = run_with_fuel(prog, callee, entry_locals(callee, &args), heap, fuel)?;
            s.heap = fin.heap;
            match fin.outcome {
                Outcome::Normal(v) => {
                    s.stack.push(v);
                    next(s)
                }
                Outcome::Exception(l) => cx.throw(s, l),
            }
        }
        JvmInstr::Throw => match cx.pop(&mut s)? {
            Value::Null => cx.throw_np(s),
            Value::Loc(l) => cx.throw(s, l),
            v => Err(cx.err(format!("throw on {v}"))),
        },
    }
}

/// Runs `m` from program point 1 until it returns, throws out, or the
/// fuel runs out.
pub fn run(prog: &JvmProgram, m: &JvmMethod, locals: Vec<Value>, heap: Heap, fuel: u64) -> Result<Final, RunError> {
    let mut fuel = fuel;
    run_with_fuel(prog, m, locals, heap, &mut fuel)
}

pub fn run_with_fuel(
    prog: &JvmProgram,
    m: &JvmMethod,
    locals: Vec<Value>,
    heap: Heap,
    fuel: &mut u64,
) -> Result<Final, RunError> {
    let mut s = JvmState { pc: 1, locals, stack: Vec::new(), heap };
    loop {
        if *fuel == 0 {
            return Err(RunError::FuelExhausted);
        }
        *fuel -= 1;
        match step(prog, m, s, fuel)? {
            StepOutcome::Next(_, n) => s = n,
            StepOutcome::Final(f) => return Ok(f),
        }
    }
}
