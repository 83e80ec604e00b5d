//! Interpreter for the DEX subset. `ret` and `ex` are kept apart from the
//! numbered registers.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use super::{DexInstr, DexMethod, DexProgram, Reg};
use crate::heap::{default_array, default_object, Cell, Final, Heap, Loc, Outcome, RunError, Value};
use crate::program::{Pp, Tag, NP};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexState {
    pub pc: Pp,
    pub regs: Vec<Value>,
    pub ret: Option<Value>,
    pub ex: Option<Value>,
    pub heap: Heap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Next(Tag, DexState),
    Final(Final),
}

/// Entry register file: the given values, padded with `Int(0)`.
pub fn entry_registers(m: &DexMethod, args: &[Value]) -> Vec<Value> {
    let mut regs: Vec<Value> = args.iter().take(m.n_registers).cloned().collect();
    regs.resize(m.n_registers, Value::int(0));
    regs
}

struct Ctx<'a> {
    prog: &'a DexProgram,
    m: &'a DexMethod,
    pp: Pp,
}

impl Ctx<'_> {
    fn err(&self, msg: impl Into<String>) -> RunError {
        RunError::Machine { method: self.m.id.clone(), pp: self.pp, msg: msg.into() }
    }

    fn get(&self, s: &DexState, r: Reg) -> Result<Value, RunError> {
        s.regs.get(r).cloned().ok_or_else(|| self.err(format!("undefined register r{r}")))
    }

    fn int(&self, s: &DexState, r: Reg) -> Result<BigInt, RunError> {
        match self.get(s, r)? {
            Value::Int(n) => Ok(n),
            v => Err(self.err(format!("r{r} holds {v}, expected integer"))),
        }
    }

    fn set(&self, s: &mut DexState, r: Reg, v: Value) -> Result<(), RunError> {
        *s.regs.get_mut(r).ok_or_else(|| self.err(format!("undefined register r{r}")))? = v;
        Ok(())
    }

    fn throw(&self, mut s: DexState, loc: Loc) -> Result<StepOutcome, RunError> {
        let class = s.heap.class_of(loc).ok_or_else(|| self.err("thrown value is not an object"))?.to_string();
        match self.m.handler(self.pp, &class) {
            Some(t) => {
                s.pc = t;
                s.ex = Some(Value::Loc(loc));
                Ok(StepOutcome::Next(Tag::Exc(class), s))
            }
            None => Ok(StepOutcome::Final(Final { outcome: Outcome::Exception(loc), heap: s.heap })),
        }
    }

    fn throw_np(&self, mut s: DexState) -> Result<StepOutcome, RunError> {
        let loc = s.heap.alloc(default_object(&self.prog.classes, NP));
        self.throw(s, loc)
    }
}

fn next(mut s: DexState) -> Result<StepOutcome, RunError> {
    s.pc += 1;
    Ok(StepOutcome::Next(Tag::Norm, s))
}

fn jump(mut s: DexState, t: Pp) -> Result<StepOutcome, RunError> {
    s.pc = t;
    Ok(StepOutcome::Next(Tag::Norm, s))
}

fn index(n: &BigInt, len: usize) -> Option<usize> {
    n.to_usize().filter(|&i| i < len)
}

pub fn step(prog: &DexProgram, m: &DexMethod, mut s: DexState, fuel: &mut u64) -> Result<StepOutcome, RunError> {
    let cx = Ctx { prog, m, pp: s.pc };
    if s.pc == 0 || s.pc > m.code.len() {
        return Err(cx.err("program counter out of range"));
    }
    match m.instr(s.pc) {
        DexInstr::Binop(op, r, a, b) => {
            let n = op.apply(&cx.int(&s, *a)?, &cx.int(&s, *b)?).ok_or_else(|| cx.err("division by zero"))?;
            cx.set(&mut s, *r, Value::Int(n))?;
            next(s)
        }
        DexInstr::Const(r, v) => {
            cx.set(&mut s, *r, Value::Int(v.clone()))?;
            next(s)
        }
        DexInstr::Move(r, rs) => {
            let v = cx.get(&s, *rs)?;
            cx.set(&mut s, *r, v)?;
            next(s)
        }
        DexInstr::Ifeq(r, t) => {
            if cx.int(&s, *r)?.is_zero() {
                jump(s, *t)
            } else {
                next(s)
            }
        }
        DexInstr::Ifneq(r, t) => {
            if cx.int(&s, *r)?.is_zero() {
                next(s)
            } else {
                jump(s, *t)
            }
        }
        DexInstr::Goto(t) => jump(s, *t),
        DexInstr::Return(r) => {
            let v = cx.get(&s, *r)?;
            Ok(StepOutcome::Final(Final { outcome: Outcome::Normal(v), heap: s.heap }))
        }
        DexInstr::New(r, c) => {
            let l = s.heap.alloc(default_object(&prog.classes, c));
            cx.set(&mut s, *r, Value::Loc(l))?;
            next(s)
        }
        DexInstr::Iget(r, ro, f) => match cx.get(&s, *ro)? {
            Value::Null => cx.throw_np(s),
            Value::Loc(l) => {
                let v = match s.heap.get(l) {
                    Some(Cell::Object(o)) => o.fields.get(f).cloned(),
                    _ => None,
                }
                .ok_or_else(|| cx.err(format!("no field `{f}` at {l}")))?;
                cx.set(&mut s, *r, v)?;
                next(s)
            }
            v => Err(cx.err(format!("iget on {v}"))),
        },
        DexInstr::Iput(rs, ro, f) => {
            let v = cx.get(&s, *rs)?;
            match cx.get(&s, *ro)? {
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
                r => Err(cx.err(format!("iput on {r}"))),
            }
        }
        DexInstr::Newarray(r, rl, kind) => {
            let n = cx.int(&s, *rl)?;
            if n.is_negative() {
                return Err(cx.err("negative array length"));
            }
            let len = n.to_usize().filter(|&n| n <= 1 << 16).ok_or_else(|| cx.err("array too large"))?;
            let l = s.heap.alloc(default_array(len, *kind, (m.id.clone(), s.pc)));
            cx.set(&mut s, *r, Value::Loc(l))?;
            next(s)
        }
        DexInstr::Arraylength(r, ra) => match cx.get(&s, *ra)? {
            Value::Null => cx.throw_np(s),
            Value::Loc(l) => match s.heap.get(l) {
                Some(Cell::Array(a)) => {
                    let n = a.elems.len();
                    cx.set(&mut s, *r, Value::int(n as i64))?;
                    next(s)
                }
                _ => Err(cx.err(format!("arraylength on non-array {l}"))),
            },
            v => Err(cx.err(format!("arraylength on {v}"))),
        },
        DexInstr::Aget(r, ra, ri) => {
            let i = cx.int(&s, *ri)?;
            match cx.get(&s, *ra)? {
                Value::Null => cx.throw_np(s),
                Value::Loc(l) => {
                    let v = match s.heap.get(l) {
                        Some(Cell::Array(a)) => index(&i, a.elems.len()).map(|i| a.elems[i].clone()),
                        _ => return Err(cx.err(format!("aget on non-array {l}"))),
                    }
                    .ok_or_else(|| cx.err(format!("index {i} out of bounds")))?;
                    cx.set(&mut s, *r, v)?;
                    next(s)
                }
                v => Err(cx.err(format!("aget on {v}"))),
            }
        }
        DexInstr::Aput(rs, ra, ri) => {
            let v = cx.get(&s, *rs)?;
            let i = cx.int(&s, *ri)?;
            match cx.get(&s, *ra)? {
                Value::Null => cx.throw_np(s),
                Value::Loc(l) => {
                    match s.heap.get_mut(l) {
                        Some(Cell::Array(a)) => {
                            let i =
                                index(&i, a.elems.len()).ok_or_else(|| cx.err(format!("index {i} out of bounds")))?;
                            a.elems[i] = v;
                        }
                        _ => return Err(cx.err(format!("aput on non-array {l}"))),
                    }
                    next(s)
                }
                r => Err(cx.err(format!("aput on {r}"))),
            }
        }
        DexInstr::Invoke(name, ps) => {
            let callee = prog.method(name).ok_or_else(|| cx.err(format!("unknown method `{name}`")))?;
            let args = ps.iter().map(|r| cx.get(&s, *r)).collect::<Result<Vec<_>, _>>()?;
            match args.first() {
                Some(Value::Null) => return cx.throw_np(s),
                Some(Value::Loc(_)) => {}
                Some(v) => return Err(cx.err(format!("invoke on {v}"))),
                None => return Err(cx.err("invoke without receiver")),
            }
            let heap = std::mem::take(&mut s.heap);
            let fin = run_with_fuel(prog, callee, entry_registers(callee, &args), heap, fuel)?;
            s.heap = fin.heap;
            match fin.outcome {
                Outcome::Normal(v) => {
                    s.ret = Some(v);
                    next(s)
                }
                Outcome::Exception(l) => cx.throw(s, l),
            }
        }
        DexInstr::Moveresult(r) => {
            let v = s.ret.clone().ok_or_else(|| cx.err("ret is unset"))?;
            cx.set(&mut s, *r, v)?;
            next(s)
        }
        DexInstr::Throw(r) => match cx.get(&s, *r)? {
            Value::Null => cx.throw_np(s),
            Value::Loc(l) => cx.throw(s, l),
            v => Err(cx.err(format!("throw on {v}"))),
        },
        DexInstr::Moveexception(r) => {
            let v = s.ex.clone().ok_or_else(|| cx.err("ex is unset"))?;
            cx.set(&mut s, *r, v)?;
            next(s)
        }
    }
}

pub fn run(prog: &DexProgram, m: &DexMethod, regs: Vec<Value>, heap: Heap, fuel: u64) -> Result<Final, RunError> {
    let mut fuel = fuel;
    run_with_fuel(prog, m, regs, heap, &mut fuel)
}

pub fn run_with_fuel(
    prog: &DexProgram,
    m: &DexMethod,
    regs: Vec<Value>,
    heap: Heap,
    fuel: &mut u64,
) -> Result<Final, RunError> {
    let mut s = DexState { pc: 1, regs, ret: None, ex: None, heap };
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
