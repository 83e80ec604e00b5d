//! Register-typing transfer rules and the typability judgment for DEX
//! methods.

use std::collections::BTreeMap;

use super::{successors, DexInstr, DexMethod, DexProgram, Reg};
use crate::cdr::{check_soap, compute_cdr, Cdr, Cfg, SoapReport};
use crate::lattice::{ExtLevel, Lattice, Level};
use crate::policy::{MethodPolicy, PolicyError};
use crate::program::{Edge, Pp, Tag};
use crate::typing::{check_certificate, infer_se, AbstractState, Obligations, Rejection, RuleResult, SecEnv, Verdict};

/// `rt`: a level for every numbered register plus `ret` and `ex`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegTyping {
    pub regs: Vec<ExtLevel>,
    pub ret: ExtLevel,
    pub ex: ExtLevel,
}

impl RegTyping {
    pub fn uniform(n: usize, k: ExtLevel) -> Self {
        RegTyping { regs: vec![k.clone(); n], ret: k.clone(), ex: k }
    }

    /// `ka` on the declared locals, top everywhere else.
    pub fn entry(lat: &Lattice, ka: &[ExtLevel], n_registers: usize) -> Self {
        let mut rt = RegTyping::uniform(n_registers, ExtLevel::Simple(lat.top()));
        for (r, k) in ka.iter().enumerate().take(n_registers) {
            rt.regs[r] = k.clone();
        }
        rt
    }

    pub fn get(&self, r: Reg) -> &ExtLevel {
        &self.regs[r]
    }

    fn all(&self) -> impl Iterator<Item = &ExtLevel> {
        self.regs.iter().chain([&self.ret, &self.ex])
    }
}

/// Pointwise `≤ext` over the same register universe.
pub fn rt_leq(lat: &Lattice, a: &RegTyping, b: &RegTyping) -> Result<bool, String> {
    if a.regs.len() != b.regs.len() {
        return Err(format!("register universes differ: {} vs {}", a.regs.len(), b.regs.len()));
    }
    Ok(a.all().zip(b.all()).all(|(x, y)| lat.ext_leq(x, y)))
}

impl AbstractState for RegTyping {
    fn join(&self, lat: &Lattice, other: &Self) -> Result<Self, String> {
        if self.regs.len() != other.regs.len() {
            return Err("register universes differ".into());
        }
        Ok(RegTyping {
            regs: self.regs.iter().zip(&other.regs).map(|(a, b)| lat.merge(a, b)).collect(),
            ret: lat.merge(&self.ret, &other.ret),
            ex: lat.merge(&self.ex, &other.ex),
        })
    }

    fn leq(&self, lat: &Lattice, other: &Self) -> bool {
        rt_leq(lat, self, other).unwrap_or(false)
    }

    fn render(&self, lat: &Lattice) -> String {
        let mut parts: Vec<String> =
            self.regs.iter().enumerate().map(|(r, k)| format!("r{r}:{}", lat.render_ext(k))).collect();
        parts.push(format!("ret:{}", lat.render_ext(&self.ret)));
        parts.push(format!("ex:{}", lat.render_ext(&self.ex)));
        format!("{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexCertificate {
    pub typings: BTreeMap<Pp, RegTyping>,
    pub se: SecEnv,
    pub cdr: Cdr,
}

pub fn cfg_of(prog: &DexProgram, m: &DexMethod) -> Cfg {
    Cfg::build(m.code.len(), |i| successors(prog, m, i))
}

pub fn soap(prog: &DexProgram, m: &DexMethod, cdr: &Cdr) -> SoapReport {
    check_soap(&cfg_of(prog, m), cdr)
}

fn array_parts(e: &ExtLevel, pp: Pp, what: &str) -> Result<(Level, ExtLevel), Rejection> {
    match e {
        ExtLevel::Array(k, c) => Ok((*k, (**c).clone())),
        ExtLevel::Simple(_) => Err(Rejection::Shape { pp, msg: format!("{what} expects an array register") }),
    }
}

/// Writes the join of `parts` to `r`. Declared locals may never rise
/// above their `ka` level.
fn write(ob: &mut Obligations, sgn: &MethodPolicy, rt: &mut RegTyping, r: Reg, parts: &[ExtLevel]) {
    if let Some(ka) = sgn.ka.get(r) {
        ob.leq(parts, ka);
    }
    rt.regs[r] = ob.join_parts(parts);
}

/// Typing at a handler entry: `ka` on locals, `ex` set, top elsewhere.
fn handler_entry(lat: &Lattice, sgn: &MethodPolicy, n_registers: usize, ex: Level) -> RegTyping {
    let mut rt = RegTyping::entry(lat, &sgn.ka, n_registers);
    rt.ex = ExtLevel::Simple(ex);
    rt
}

#[allow(clippy::too_many_arguments)]
pub fn transfer(
    prog: &DexProgram,
    m: &DexMethod,
    sgn: &MethodPolicy,
    se: &SecEnv,
    i: Pp,
    edge: &Edge,
    rt: &RegTyping,
    ob: &mut Obligations,
) -> RuleResult<RegTyping> {
    let lat = &prog.lattice;
    let sei = se.get(i);
    let ins = m.instr(i);
    ob.rule = ins.mnemonic();
    let caught = edge.target.is_some();
    let simple = |k: Level| ExtLevel::Simple(k);
    if rt.regs.len() != m.n_registers {
        return Err(Rejection::Shape {
            pp: i,
            msg: format!("typing has {} registers, method {}", rt.regs.len(), m.n_registers),
        });
    }
    let mut out = rt.clone();
    // np edge of a field or array access guarded by level `k`.
    let np_edge = |ob: &mut Obligations, k: Level| -> RuleResult<RegTyping> {
        ob.region(k);
        if caught {
            Ok(Some(handler_entry(lat, sgn, m.n_registers, lat.lub(k, sei))))
        } else {
            ob.leq_levels(&[sei, k], sgn.kr_or_bottom(lat, &edge.tag));
            Ok(None)
        }
    };
    match ins {
        DexInstr::Const(r, _) | DexInstr::New(r, _) => write(ob, sgn, &mut out, *r, &[simple(sei)]),
        DexInstr::Move(r, rs) => write(ob, sgn, &mut out, *r, &[simple(sei), rt.get(*rs).clone()]),
        DexInstr::Binop(_, r, a, b) => {
            let k = lat.lub_all([rt.get(*a).outer(), rt.get(*b).outer(), sei]);
            if let Some(ka) = sgn.ka.get(*r) {
                ob.leq(&[rt.get(*a).outer().into(), rt.get(*b).outer().into(), simple(sei)], ka);
            }
            out.regs[*r] = simple(k);
        }
        DexInstr::Return(rs) => {
            ob.leq(&[simple(sei), rt.get(*rs).clone()], &simple(sgn.kr_norm(lat)));
            return Ok(None);
        }
        DexInstr::Ifeq(r, _) | DexInstr::Ifneq(r, _) => ob.region(lat.lub(sei, rt.get(*r).outer())),
        DexInstr::Goto(_) => {}
        DexInstr::Iget(r, ro, f) => {
            let k = rt.get(*ro).outer();
            if edge.tag != Tag::Norm {
                return np_edge(ob, k);
            }
            ob.region(k);
            write(ob, sgn, &mut out, *r, &[simple(k), simple(sei), prog.policy.ft(lat, f)]);
        }
        DexInstr::Iput(rs, ro, f) => {
            let k = rt.get(*ro).outer();
            let ft = prog.policy.ft(lat, f);
            ob.leq(&[simple(sei), simple(k), rt.get(*rs).clone()], &ft);
            if edge.tag != Tag::Norm {
                return np_edge(ob, k);
            }
            ob.leq(&[simple(sgn.kh)], &ft);
            ob.region(k);
        }
        DexInstr::Newarray(r, rl, _) => {
            let v = ExtLevel::array(rt.get(*rl).outer(), prog.policy.at(lat, &m.id, i));
            write(ob, sgn, &mut out, *r, &[v]);
        }
        DexInstr::Arraylength(r, ra) => {
            let (k, _) = array_parts(rt.get(*ra), i, "arraylength")?;
            if edge.tag != Tag::Norm {
                if let Some(ka) = sgn.ka.get(*r) {
                    ob.leq(&[simple(k)], ka);
                }
                return np_edge(ob, k);
            }
            ob.region(k);
            write(ob, sgn, &mut out, *r, &[simple(k)]);
        }
        DexInstr::Aget(r, ra, ri) => {
            let (k, kc) = array_parts(rt.get(*ra), i, "aget")?;
            if edge.tag != Tag::Norm {
                return np_edge(ob, k);
            }
            ob.region(k);
            write(ob, sgn, &mut out, *r, &[simple(sei), simple(k), rt.get(*ri).outer().into(), kc]);
        }
        DexInstr::Aput(rs, ra, ri) => {
            let (k, kc) = array_parts(rt.get(*ra), i, "aput")?;
            ob.leq(&[simple(k), rt.get(*ri).outer().into(), rt.get(*rs).clone()], &kc);
            if edge.tag != Tag::Norm {
                return np_edge(ob, k);
            }
            ob.region(k);
        }
        DexInstr::Invoke(name, ps) => {
            let callee = prog.method(name).ok_or_else(|| PolicyError::UnknownMethod(name.clone()))?;
            let k0 = rt.get(ps[0]).outer();
            let sig = prog.policy.gamma.lookup(lat, name, k0)?;
            if sig.ka.len() < ps.len() {
                return Err(
                    PolicyError::ArityMismatch { method: name.clone(), got: sig.ka.len(), expected: ps.len() }.into()
                );
            }
            ob.leq_levels(&[k0, sgn.kh, sei], sig.kh);
            for (j, p) in ps.iter().enumerate() {
                ob.leq(&[rt.get(*p).clone()], &sig.ka[j]);
            }
            match &edge.tag {
                Tag::Norm => {
                    let ke = lat.lub_all(callee.exc_analysis.iter().map(|e| sig.kr_or_bottom(lat, &Tag::exc(e))));
                    ob.region(lat.lub(k0, ke));
                    out.ret = simple(lat.lub(sig.kr_norm(lat), sei));
                }
                tag => {
                    let kre = sig.kr_or_bottom(lat, tag);
                    ob.region(lat.lub(k0, kre));
                    if !caught {
                        ob.leq_levels(&[k0, sei, kre], sgn.kr_or_bottom(lat, tag));
                        return Ok(None);
                    }
                    return Ok(Some(handler_entry(lat, sgn, m.n_registers, lat.lub(k0, kre))));
                }
            }
        }
        DexInstr::Moveresult(r) => write(ob, sgn, &mut out, *r, &[simple(sei), rt.ret.clone()]),
        DexInstr::Throw(r) => {
            let k = rt.get(*r).outer();
            ob.region(k);
            if !caught {
                ob.leq_levels(&[sei, k], sgn.kr_or_bottom(lat, &edge.tag));
                return Ok(None);
            }
            out.ex = simple(lat.lub(k, sei));
        }
        DexInstr::Moveexception(r) => write(ob, sgn, &mut out, *r, &[simple(sei), rt.ex.clone()]),
    }
    Ok(Some(out))
}

pub fn entry_typing(prog: &DexProgram, m: &DexMethod, sgn: &MethodPolicy) -> RegTyping {
    RegTyping::entry(&prog.lattice, &sgn.ka, m.n_registers)
}

pub fn check(prog: &DexProgram, m: &DexMethod, sgn: &MethodPolicy, cert: &DexCertificate) -> Verdict {
    let cfg = cfg_of(prog, m);
    let entry = entry_typing(prog, m, sgn);
    check_certificate(&prog.lattice, &cfg, &entry, &cert.typings, &cert.se, &cert.cdr, |i, e, rt, ob| {
        transfer(prog, m, sgn, &cert.se, i, e, rt, ob)
    })
}

/// Least typings and se for `m`. `seeds` are joined in before
/// propagation; `se0` is the starting environment.
pub fn infer_with(
    prog: &DexProgram,
    m: &DexMethod,
    sgn: &MethodPolicy,
    cdr: Cdr,
    se0: SecEnv,
    seeds: &BTreeMap<Pp, RegTyping>,
) -> Result<DexCertificate, Rejection> {
    let cfg = cfg_of(prog, m);
    let entry = entry_typing(prog, m, sgn);
    let (sol, se) = infer_se(&prog.lattice, &cfg, &cdr, entry, seeds, se0, |se, i, e, rt, ob| {
        transfer(prog, m, sgn, se, i, e, rt, ob)
    })?;
    Ok(DexCertificate { typings: sol.states, se, cdr })
}

pub fn infer(
    prog: &DexProgram,
    m: &DexMethod,
    sgn: &MethodPolicy,
    cdr: Option<Cdr>,
) -> Result<DexCertificate, Rejection> {
    let cdr = cdr.unwrap_or_else(|| compute_cdr(&cfg_of(prog, m)));
    let se0 = SecEnv::uniform(m.code.len(), prog.lattice.bottom());
    infer_with(prog, m, sgn, cdr, se0, &BTreeMap::new())
}

pub fn check_method(prog: &DexProgram, m: &DexMethod) -> Verdict {
    let policies = match prog.policy.gamma.policies_of(&m.id) {
        Ok(p) => p,
        Err(e) => return Verdict::Rejected(e.into()),
    };
    for sgn in policies {
        let verdict = match infer(prog, m, sgn, None) {
            Ok(cert) => check(prog, m, sgn, &cert),
            Err(r) => Verdict::Rejected(r),
        };
        if !verdict.is_typable() {
            return verdict;
        }
    }
    Verdict::Typable
}
