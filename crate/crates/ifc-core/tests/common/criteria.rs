//! The acceptance criteria as functions returning a [`Check`].

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use ifc_core::dex::checker as dexc;
use ifc_core::heap::{Heap, Value};
use ifc_core::jvm::checker as jvmc;
use ifc_core::jvm::{JvmInstr, JvmProgram};
use ifc_core::ni::{
    ni_test, run_pair, semantic_agreement, side_effect_safety_test, GenConfig, Input, NiConfig, PairResult,
};
use ifc_core::registry::{DexBackend, JvmBackend, Machine, Registry, Unit};
use ifc_core::translator::compile_program;
use ifc_core::typing::Verdict;

use super::{cdr_oracle, load_jvm, props, Check};

pub const FUEL: u64 = 100_000;

/// Expected first rejection of an example on each side.
pub struct Golden {
    pub file: &'static str,
    pub jvm_pp: usize,
    pub jvm_rule: &'static str,
    pub dex_rule: &'static str,
    pub constraint: &'static str,
}

pub const GOLDEN: [Golden; 3] = [
    Golden { file: "ex1.jvm", jvm_pp: 6, jvm_rule: "store", dex_rule: "move", constraint: "H ⊔ H ≤ L" },
    Golden { file: "ex2.jvm", jvm_pp: 11, jvm_rule: "putfield", dex_rule: "iput", constraint: "L ⊔ H ⊔ L ≤ L" },
    Golden { file: "ex3.jvm", jvm_pp: 8, jvm_rule: "return", dex_rule: "return", constraint: "H ⊔ H ≤ L" },
];

fn rejection_of(v: &Verdict) -> Option<(usize, String, String)> {
    let viol = v.rejection()?.violation()?;
    Some((viol.pp, viol.rule.clone(), viol.constraint.clone()))
}

/// Checks one example on both sides. Returns the elapsed time of the
/// slower side.
pub fn golden_example(g: &Golden) -> Result<Duration, String> {
    let t0 = Instant::now();
    let prog = load_jvm(g.file);
    let m = prog.method("main").ok_or("no main")?;
    let jv = jvmc::check_method(&prog, m);
    let jvm_time = t0.elapsed();
    match rejection_of(&jv) {
        Some((pp, rule, c)) if pp == g.jvm_pp && rule == g.jvm_rule && c == g.constraint => {}
        other => return Err(format!("{}: JVM verdict {other:?}", g.file)),
    }
    let t1 = Instant::now();
    let compiled = compile_program(&prog).map_err(|e| e.to_string())?;
    let dm = compiled.program.method("main").ok_or("no compiled main")?;
    let dv = dexc::check_method(&compiled.program, dm);
    let dex_time = t1.elapsed();
    match rejection_of(&dv) {
        Some((_, rule, c)) if rule == g.dex_rule && c == g.constraint => {}
        other => return Err(format!("{}: DEX verdict {other:?}", g.file)),
    }
    Ok(jvm_time.max(dex_time))
}

pub fn c1_golden_rejections() -> Check {
    let mut worst = Duration::ZERO;
    for g in &GOLDEN {
        match golden_example(g) {
            Ok(t) => worst = worst.max(t),
            Err(e) => return Check::fail(e),
        }
    }
    if worst >= Duration::from_secs(1) {
        return Check::fail(format!("slowest check took {worst:?}"));
    }
    Check::pass(format!("3 examples rejected on both sides with the expected constraint (slowest {worst:?})"))
}

/// Every mnemonic of the JVM instruction set.
pub const ALL_MNEMONICS: [&str; 18] = [
    "binop",
    "push",
    "pop",
    "swap",
    "load",
    "store",
    "ifeq",
    "goto",
    "return",
    "new",
    "getfield",
    "putfield",
    "newarray",
    "arraylength",
    "arrayload",
    "arraystore",
    "invoke",
    "throw",
];

/// Whether the corpus has a caught exception (a handler some throwing
/// instruction reaches) and an uncaught one (a method declaring escapes).
pub fn exception_coverage(prog: &JvmProgram) -> (bool, bool) {
    let caught = prog.methods.iter().any(|m| {
        m.handlers.iter().any(|h| {
            (h.start..h.end).any(|pp| {
                ifc_core::jvm::successors(prog, m, pp)
                    .iter()
                    .any(|e| e.target == Some(h.target) && e.tag != ifc_core::program::Tag::Norm)
            })
        })
    });
    let uncaught =
        prog.methods.iter().any(|m| !m.exc_analysis.is_empty() && m.code.iter().any(|i| matches!(i, JvmInstr::Throw)));
    (caught, uncaught)
}

pub fn c2_preservation(prog: &JvmProgram) -> Check {
    let t0 = Instant::now();
    let mnemonics: BTreeSet<&str> = prog.methods.iter().flat_map(|m| m.code.iter().map(|i| i.mnemonic())).collect();
    let missing: Vec<&str> = ALL_MNEMONICS.iter().copied().filter(|m| !mnemonics.contains(m)).collect();
    if !missing.is_empty() {
        return Check::fail(format!("corpus lacks {missing:?}"));
    }
    if exception_coverage(prog) != (true, true) {
        return Check::fail("corpus lacks a caught or an uncaught exception");
    }
    let reports = match ifc_core::ni::preservation_test(prog, 0, 0, FUEL) {
        Ok(r) => r,
        Err(e) => return Check::fail(e),
    };
    for r in &reports {
        if let Some(e) = &r.jvm_rejection {
            return Check::fail(format!("{}: JVM checker rejects: {e}", r.method));
        }
        if let Some(e) = &r.dex_rejection {
            return Check::fail(format!("{}: translated certificate rejected: {e}", r.method));
        }
    }
    let elapsed = t0.elapsed();
    if elapsed >= Duration::from_secs(30) {
        return Check::fail(format!("took {elapsed:?}"));
    }
    let exact = reports.iter().filter(|r| r.se_exact).count();
    Check::pass(format!(
        "{} methods typable on both sides, {exact} with the translated se unchanged ({elapsed:?})",
        reports.len()
    ))
}

pub fn c3_soap(prog: &JvmProgram) -> Check {
    let compiled = match compile_program(prog) {
        Ok(c) => c,
        Err(e) => return Check::fail(e.to_string()),
    };
    let mut checked = 0;
    for m in &prog.methods {
        let jcdr = ifc_core::cdr::compute_cdr(&jvmc::cfg_of(prog, m));
        let jr = jvmc::soap(prog, m, &jcdr);
        if !jr.ok() {
            return Check::fail(format!("{} (JVM): {jr}", m.id));
        }
        let dm = compiled.program.method(&m.id).expect("compiled");
        let dcdr = ifc_core::cdr::compute_cdr(&dexc::cfg_of(&compiled.program, dm));
        let dr = dexc::soap(&compiled.program, dm, &dcdr);
        if !dr.ok() {
            return Check::fail(format!("{} (DEX): {dr}", m.id));
        }
        checked += 1;
    }
    let reports = match ifc_core::ni::preservation_test(prog, 0, 0, FUEL) {
        Ok(r) => r,
        Err(e) => return Check::fail(e),
    };
    if let Some(r) = reports.iter().find(|r| !r.soap_jvm || !r.soap_dex) {
        return Check::fail(format!("{}: certificate CDR violates SOAP", r.method));
    }
    Check::pass(format!(
        "{checked} methods: postdominator and translated CDRs satisfy all six SOAP properties on both sides"
    ))
}

pub fn c4_agreement(prog: &JvmProgram, runs: u64) -> Check {
    let t0 = Instant::now();
    let compiled = match compile_program(prog) {
        Ok(c) => c,
        Err(e) => return Check::fail(e.to_string()),
    };
    let jvm = JvmBackend(prog.clone());
    let dex = DexBackend(compiled.program);
    let mut total = 0;
    for m in &prog.methods {
        let rep = semantic_agreement(&jvm, &dex, &m.id, GenConfig::default(), runs, 0, FUEL);
        if rep.agreed != rep.runs {
            return Check::fail(format!("{}: {}", m.id, rep.first_disagreement.unwrap_or_default()));
        }
        total += rep.runs;
    }
    let elapsed = t0.elapsed();
    if elapsed >= Duration::from_secs(120) {
        return Check::fail(format!("took {elapsed:?}"));
    }
    Check::pass(format!("{} methods x {runs} runs ({total} total) agree ({elapsed:?})", prog.methods.len()))
}

fn machines(prog: &JvmProgram) -> Vec<Box<dyn Machine>> {
    let reg = Registry::default();
    let unit = Unit::Jvm(prog.clone());
    ["jvm", "dex"].iter().map(|n| reg.instantiate(n, &unit).expect("machine")).collect()
}

/// No interference for any typable corpus method and policy, on both
/// machines; every example yields a witness within `witness_budget`.
pub fn c5_noninterference(prog: &JvmProgram, trials: u64, witness_budget: u64) -> Check {
    let mut runs = 0;
    for mach in machines(prog) {
        for m in &prog.methods {
            if !jvmc::check_method(prog, m).is_typable() {
                return Check::fail(format!("{} is not typable", m.id));
            }
            for (_, sgn) in mach.policy().gamma.entries(&m.id) {
                let cfg = NiConfig { trials, seed: 0, fuel: FUEL, kobs: mach.policy().kobs, gen: GenConfig::default() };
                match ni_test(mach.as_ref(), &m.id, sgn, &cfg) {
                    Ok(rep) => {
                        if let Some(w) = rep.witness() {
                            return Check::fail(format!("{} on {}: {w}", m.id, mach.name()));
                        }
                        runs += rep.completed;
                    }
                    Err(e) => return Check::fail(e.to_string()),
                }
            }
        }
    }
    let mut found = Vec::new();
    for g in &GOLDEN {
        let ex = load_jvm(g.file);
        for mach in machines(&ex) {
            let sgn = match ex.policy.gamma.lookup(&ex.lattice, "main", ex.lattice.bottom()) {
                Ok(s) => s,
                Err(e) => return Check::fail(e.to_string()),
            };
            let cfg = NiConfig {
                trials: witness_budget,
                seed: 0,
                fuel: FUEL,
                kobs: ex.policy.kobs,
                gen: GenConfig::default(),
            };
            match ni_test(mach.as_ref(), "main", sgn, &cfg).map(|r| r.witness().map(|w| w.trial)) {
                Ok(Some(t)) => found.push(format!("{}/{}@{t}", g.file, mach.name())),
                Ok(None) => {
                    return Check::fail(format!("{} on {}: no witness in {witness_budget} trials", g.file, mach.name()))
                }
                Err(e) => return Check::fail(e.to_string()),
            }
        }
    }
    match ex1_deterministic_witness() {
        Ok(()) => {}
        Err(e) => return Check::fail(e),
    }
    Check::pass(format!("{runs} completed pairs without interference; witnesses {}", found.join(" ")))
}

/// Ex1 with the secret 0 versus 1 returns different low results.
pub fn ex1_deterministic_witness() -> Result<(), String> {
    let ex = load_jvm("ex1.jvm");
    let sgn = ex.policy.gamma.lookup(&ex.lattice, "main", ex.lattice.bottom()).map_err(|e| e.to_string())?.clone();
    let input =
        |secret: i64| Input { locals: vec![Value::int(0), Value::int(secret), Value::int(0)], heap: Heap::new() };
    for mach in machines(&ex) {
        let (a, b) = (input(0), input(1));
        let r = run_pair(mach.as_ref(), "main", &sgn, ex.policy.kobs, (&a, &b), &Default::default(), FUEL)
            .map_err(|e| e.to_string())?;
        if !matches!(r, PairResult::Distinguishable { .. }) {
            return Err(format!("ex1 on {}: secret 0 vs 1 not distinguished: {r:?}", mach.name()));
        }
    }
    Ok(())
}

pub fn c6_side_effects(prog: &JvmProgram, trials: u64) -> Check {
    let mut runs = 0;
    for mach in machines(prog) {
        for m in &prog.methods {
            for (_, sgn) in mach.policy().gamma.entries(&m.id) {
                match side_effect_safety_test(mach.as_ref(), &m.id, sgn.kh, GenConfig::default(), trials, 0, FUEL) {
                    Ok(rep) => {
                        if let Some((t, input, _)) = rep.violation {
                            return Check::fail(format!("{} on {}: trial {t} with {input}", m.id, mach.name()));
                        }
                        runs += rep.completed;
                    }
                    Err(e) => return Check::fail(e.to_string()),
                }
            }
        }
    }
    let bad = load_jvm("side_effect.jvm");
    let main = bad.method("main").expect("main");
    if jvmc::check_method(&bad, main).is_typable() {
        return Check::fail("side_effect.jvm is accepted by the checker");
    }
    let sgn = bad.policy.gamma.lookup(&bad.lattice, "main", bad.lattice.bottom()).expect("policy");
    let flagged =
        side_effect_safety_test(&JvmBackend(bad.clone()), "main", sgn.kh, GenConfig::default(), trials, 0, FUEL)
            .map(|r| r.violation.map(|v| v.0));
    match flagged {
        Ok(Some(t)) => Check::pass(format!(
            "{runs} runs preserve the heap preorder; the violator is rejected and flagged at trial {t}"
        )),
        Ok(None) => Check::fail("the violating method was not flagged"),
        Err(e) => Check::fail(e.to_string()),
    }
}

type Suite<'a> = (&'static str, Box<dyn Fn() -> Result<String, String> + 'a>);

pub fn c7_properties(prog: &JvmProgram) -> Check {
    let suites: Vec<Suite> = vec![
        ("lattice laws", Box::new(props::lattice_laws)),
        ("ext order and lift", Box::new(|| props::ext_and_lift(2_000))),
        ("JVM transfer monotonicity", Box::new(|| props::jvm_transfer_monotone(prog, 10_000))),
        ("DEX transfer monotonicity", Box::new(|| props::dex_transfer_monotone(prog, 10_000))),
        ("registers not in stack", Box::new(|| props::registers_not_in_stack(1_000))),
        ("indistinguishability", Box::new(|| props::indist_symmetry_reflexivity(2_000))),
        ("side-effect preorder", Box::new(|| props::side_effect_preorder_laws(2_000))),
        ("format round trip", Box::new(|| props::format_roundtrip(500))),
    ];
    let mut parts = Vec::new();
    for (name, f) in suites {
        match f() {
            Ok(s) => parts.push(format!("{name}: {s}")),
            Err(e) => return Check::fail(format!("{name}: {e}")),
        }
    }
    Check::pass(parts.join("; "))
}

pub fn c8_cdr_oracle() -> Check {
    Check::from_result(cdr_oracle::suite(5, 4, 500))
}
