//! Stack-type transfer rules and the typability judgment for JVM methods.

use std::collections::BTreeMap;

use super::{successors, JvmInstr, JvmMethod, JvmProgram};
use crate::cdr::{check_soap, compute_cdr, Cdr, Cfg, SoapReport};
use crate::lattice::{ExtLevel, Level, StackType};
use crate::policy::{MethodPolicy, PolicyError};
use crate::program::{Edge, Pp, Tag};
use crate::typing::{check_certificate, infer_se, Obligations, Rejection, RuleResult, SecEnv, Verdict};

/// Stack types, security environment and CDR for one method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JvmCertificate {
    pub stacks: BTreeMap<Pp, StackType>,
    pub se: SecEnv,
    pub cdr: Cdr,
}

pub fn cfg_of(prog: &JvmProgram, m: &JvmMethod) -> Cfg {
    Cfg::build(m.code.len(), |i| successors(prog, m, i))
}

pub fn soap(prog: &JvmProgram, m: &JvmMethod, cdr: &Cdr) -> SoapReport {
    check_soap(&cfg_of(prog, m), cdr)
}

/// Splits off the top `n` entries, top first.
fn take(st: &StackType, n: usize, pp: Pp, what: &str) -> Result<(StackType, StackType), Rejection> {
    if st.len() < n {
        return Err(Rejection::Shape { pp, msg: format!("{what} needs {n} stack entries, found {}", st.len()) });
    }
    Ok((st[..n].to_vec(), st[n..].to_vec()))
}

fn array_parts(e: &ExtLevel, pp: Pp, what: &str) -> Result<(Level, ExtLevel), Rejection> {
    match e {
        ExtLevel::Array(k, c) => Ok((*k, (**c).clone())),
        ExtLevel::Simple(_) => Err(Rejection::Shape { pp, msg: format!("{what} expects an array reference") }),
    }
}

fn push(top: ExtLevel, rest: StackType) -> StackType {
    let mut out = Vec::with_capacity(rest.len() + 1);
    out.push(top);
    out.extend(rest);
    out
}

/// Applies the rule for the instruction at `i` along `edge`.
#[allow(clippy::too_many_arguments)]
pub fn transfer(
    prog: &JvmProgram,
    m: &JvmMethod,
    sgn: &MethodPolicy,
    se: &SecEnv,
    i: Pp,
    edge: &Edge,
    st: &StackType,
    ob: &mut Obligations,
) -> RuleResult<StackType> {
    let lat = &prog.lattice;
    let sei = se.get(i);
    let ins = m.instr(i);
    ob.rule = ins.mnemonic();
    let caught = edge.target.is_some();
    let simple = |k: Level| ExtLevel::Simple(k);
    // Shared shape of the np edge for field and array accesses.
    let np_edge = |ob: &mut Obligations, k: Level| -> RuleResult<StackType> {
        ob.region(k);
        if caught {
            Ok(Some(vec![simple(lat.lub(k, sei))]))
        } else {
            let kr = sgn.kr_or_bottom(lat, &edge.tag);
            ob.leq_levels(&[sei, k], kr);
            Ok(None)
        }
    };
    match ins {
        JvmInstr::Binop(_) => {
            let (top, rest) = take(st, 2, i, "binop")?;
            Ok(Some(push(simple(lat.lub_all([top[0].outer(), top[1].outer(), sei])), rest)))
        }
        JvmInstr::Push(_) | JvmInstr::New(_) => Ok(Some(push(simple(sei), st.clone()))),
        JvmInstr::Pop => Ok(Some(take(st, 1, i, "pop")?.1)),
        JvmInstr::Swap => {
            let (top, rest) = take(st, 2, i, "swap")?;
            Ok(Some(push(top[1].clone(), push(top[0].clone(), rest))))
        }
        JvmInstr::Load(x) => Ok(Some(push(lat.raise(sei, &sgn.ka_or_top(lat, *x)), st.clone()))),
        JvmInstr::Store(x) => {
            let (top, rest) = take(st, 1, i, "store")?;
            ob.leq(&[simple(sei), top[0].clone()], &sgn.ka_or_top(lat, *x));
            Ok(Some(rest))
        }
        JvmInstr::Ifeq(_) => {
            let (top, rest) = take(st, 1, i, "ifeq")?;
            let k = top[0].outer();
            ob.region(k);
            Ok(Some(lat.lift(k, &rest)))
        }
        JvmInstr::Goto(_) => Ok(Some(st.clone())),
        JvmInstr::Return => {
            let (top, _) = take(st, 1, i, "return")?;
            ob.leq(&[simple(sei), top[0].clone()], &simple(sgn.kr_norm(lat)));
            Ok(None)
        }
        JvmInstr::Getfield(f) => {
            let (top, rest) = take(st, 1, i, "getfield")?;
            let k = top[0].outer();
            if edge.tag != Tag::Norm {
                return np_edge(ob, k);
            }
            ob.region(k);
            let v = lat.raise(lat.lub(k, sei), &prog.policy.ft(lat, f));
            Ok(Some(lat.lift(k, &push(v, rest))))
        }
        JvmInstr::Putfield(f) => {
            let (top, rest) = take(st, 2, i, "putfield")?;
            let (k1, k2) = (top[0].clone(), top[1].outer());
            let ft = prog.policy.ft(lat, f);
            ob.leq(&[simple(sei), simple(k2), k1], &ft);
            if edge.tag != Tag::Norm {
                return np_edge(ob, k2);
            }
            ob.leq(&[simple(sgn.kh)], &ft);
            ob.region(k2);
            Ok(Some(lat.lift(k2, &rest)))
        }
        JvmInstr::Newarray(_) => {
            let (top, rest) = take(st, 1, i, "newarray")?;
            let content = prog.policy.at(lat, &m.id, i);
            Ok(Some(push(ExtLevel::array(top[0].outer(), content), rest)))
        }
        JvmInstr::Arraylength => {
            let (top, rest) = take(st, 1, i, "arraylength")?;
            let (k, _) = array_parts(&top[0], i, "arraylength")?;
            if edge.tag != Tag::Norm {
                return np_edge(ob, k);
            }
            ob.region(k);
            Ok(Some(lat.lift(k, &push(simple(k), rest))))
        }
        JvmInstr::Arrayload => {
            let (top, rest) = take(st, 2, i, "arrayload")?;
            let k1 = top[0].outer();
            let (k2, kc) = array_parts(&top[1], i, "arrayload")?;
            if edge.tag != Tag::Norm {
                return np_edge(ob, k2);
            }
            ob.region(k2);
            let v = lat.raise(lat.lub(k1, k2), &kc);
            Ok(Some(lat.lift(k2, &push(v, rest))))
        }
        JvmInstr::Arraystore => {
            let (top, rest) = take(st, 3, i, "arraystore")?;
            let (k1, k2) = (top[0].clone(), top[1].outer());
            let (k3, kc) = array_parts(&top[2], i, "arraystore")?;
            ob.leq(&[simple(k2), simple(k3), k1], &kc);
            if edge.tag != Tag::Norm {
                return np_edge(ob, k2);
            }
            ob.region(k2);
            Ok(Some(lat.lift(k2, &rest)))
        }
        JvmInstr::Invoke(name) => {
            let callee = prog.method(name).ok_or_else(|| PolicyError::UnknownMethod(name.clone()))?;
            let nb = callee.nb_arguments;
            let (top, st2) = take(st, nb + 1, i, "invoke")?;
            let k = top[nb].outer();
            let sig = prog.policy.gamma.lookup(lat, name, k)?;
            if sig.ka.len() < nb + 1 {
                return Err(
                    PolicyError::ArityMismatch { method: name.clone(), got: sig.ka.len(), expected: nb + 1 }.into()
                );
            }
            for (j, arg) in top[..nb].iter().enumerate() {
                ob.leq(std::slice::from_ref(arg), &sig.ka[nb - j]);
            }
            ob.leq(&[simple(k)], &sig.ka[0]);
            ob.leq_levels(&[k, sgn.kh, sei], sig.kh);
            match &edge.tag {
                Tag::Norm => {
                    let ke = lat.lub_all(callee.exc_analysis.iter().map(|e| sig.kr_or_bottom(lat, &Tag::exc(e))));
                    let kk = lat.lub(k, ke);
                    ob.region(kk);
                    Ok(Some(lat.lift(kk, &push(simple(lat.lub(sig.kr_norm(lat), sei)), st2))))
                }
                tag => {
                    let kre = sig.kr_or_bottom(lat, tag);
                    ob.region(lat.lub(k, kre));
                    if caught {
                        Ok(Some(vec![simple(lat.lub(k, kre))]))
                    } else {
                        ob.leq_levels(&[k, sei, kre], sgn.kr_or_bottom(lat, tag));
                        Ok(None)
                    }
                }
            }
        }
        JvmInstr::Throw => {
            let (top, _) = take(st, 1, i, "throw")?;
            np_edge(ob, top[0].outer())
        }
    }
}

/// Checks a supplied certificate against the rules and the CFG.
pub fn check(prog: &JvmProgram, m: &JvmMethod, sgn: &MethodPolicy, cert: &JvmCertificate) -> Verdict {
    let cfg = cfg_of(prog, m);
    check_certificate(&prog.lattice, &cfg, &Vec::new(), &cert.stacks, &cert.se, &cert.cdr, |i, e, st, ob| {
        transfer(prog, m, sgn, &cert.se, i, e, st, ob)
    })
}

/// Computes least stack types and the least se meeting every region
/// constraint, using `cdr` or the postdominator CDR.
pub fn infer(
    prog: &JvmProgram,
    m: &JvmMethod,
    sgn: &MethodPolicy,
    cdr: Option<Cdr>,
) -> Result<JvmCertificate, Rejection> {
    let cfg = cfg_of(prog, m);
    let cdr = cdr.unwrap_or_else(|| compute_cdr(&cfg));
    let lat = &prog.lattice;
    let se0 = SecEnv::uniform(m.code.len(), lat.bottom());
    let (sol, se) = infer_se(lat, &cfg, &cdr, Vec::new(), &BTreeMap::new(), se0, |se, i, e, st, ob| {
        transfer(prog, m, sgn, se, i, e, st, ob)
    })?;
    Ok(JvmCertificate { stacks: sol.states, se, cdr })
}

/// Infers a certificate for every receiver-level policy of `m` and checks
/// it.
pub fn check_method(prog: &JvmProgram, m: &JvmMethod) -> Verdict {
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
