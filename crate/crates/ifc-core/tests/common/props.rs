//! Property suites over lattices, the transfer rules, the stack
//! compilation, the indistinguishability relations and the text formats.
//! Each returns a one-line summary or the first failure.

use std::collections::BTreeMap;

use ifc_core::dex::checker::{self as dexc, rt_leq, RegTyping};
use ifc_core::dex::{self, DexInstr, DexProgram};
use ifc_core::formats::{
    parse_address_maps, parse_dex, parse_dex_certificates, parse_jvm, parse_jvm_certificates, write_address_maps,
    write_dex, write_dex_certificates, write_jvm, write_jvm_certificates, CertEntry,
};
use ifc_core::heap::{Final, Heap, Loc, Outcome, Value};
use ifc_core::jvm::checker::{self as jvmc, JvmCertificate};
use ifc_core::jvm::{self, JvmInstr, JvmProgram};
use ifc_core::lattice::{ExtLevel, Lattice, Level};
use ifc_core::ni::{heap_indist, locals_indist, output_indist, side_effect_preorder, value_indist, Beta, Observer};
use ifc_core::program::Tag;
use ifc_core::translator::{compile_program, compile_stack_type, stack_register, translate_certificate};
use ifc_core::typing::{Obligations, RuleResult, SecEnv};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gen;

/// Runs `f` on `cases` seeded generators under a deterministic proptest
/// runner. Failures report the offending seed.
pub fn seeded<F>(cases: u32, f: F) -> Result<(), String>
where
    F: Fn(&mut ChaCha8Rng) -> Result<(), TestCaseError>,
{
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&any::<u64>(), |seed| f(&mut ChaCha8Rng::seed_from_u64(seed))).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------
// Lattices

fn lattice_axioms(name: &str, lat: &Lattice) -> Result<u64, String> {
    let all: Vec<Level> = lat.levels().collect();
    let fail = |what: &str, xs: &[Level]| {
        let names: Vec<&str> = xs.iter().map(|&k| lat.name(k)).collect();
        Err(format!("{name}: {what} fails at {names:?}"))
    };
    let mut n = 0;
    for &a in &all {
        if !lat.leq(a, a) || lat.lub(a, a) != a {
            return fail("reflexivity/idempotence", &[a]);
        }
        if !lat.leq(lat.bottom(), a) || !lat.leq(a, lat.top()) {
            return fail("bottom/top", &[a]);
        }
        for &b in &all {
            let j = lat.lub(a, b);
            if lat.leq(a, b) && lat.leq(b, a) && a != b {
                return fail("antisymmetry", &[a, b]);
            }
            if j != lat.lub(b, a) {
                return fail("commutativity", &[a, b]);
            }
            if !lat.leq(a, j) || !lat.leq(b, j) {
                return fail("upper bound", &[a, b]);
            }
            if lat.leq(a, b) != (j == b) {
                return fail("order/join agreement", &[a, b]);
            }
            for &c in &all {
                n += 1;
                if lat.leq(a, b) && lat.leq(b, c) && !lat.leq(a, c) {
                    return fail("transitivity", &[a, b, c]);
                }
                if lat.leq(a, c) && lat.leq(b, c) && !lat.leq(j, c) {
                    return fail("least upper bound", &[a, b, c]);
                }
                if lat.lub(j, c) != lat.lub(a, lat.lub(b, c)) {
                    return fail("associativity", &[a, b, c]);
                }
            }
        }
    }
    if lat.lub_all(all.iter().copied()) != lat.top() {
        return Err(format!("{name}: join of all levels is not top"));
    }
    Ok(n)
}

/// Order and join axioms on every triple of every declared lattice.
pub fn lattice_laws() -> Result<String, String> {
    let lats = gen::lattices();
    let mut triples = 0;
    for (name, lat) in &lats {
        triples += lattice_axioms(name, lat)?;
    }
    Ok(format!("{} lattices, {triples} triples", lats.len()))
}

/// `≤ext` is a preorder, `⊔ext` bounds both sides when defined, and
/// `lift` is extensive, idempotent, monotone and length-preserving.
pub fn ext_and_lift(cases: u32) -> Result<String, String> {
    seeded(cases, |rng| {
        let lat = gen::pick_lattice(rng);
        let (a, b, c) = (gen::ext(rng, &lat, 2), gen::ext(rng, &lat, 2), gen::ext(rng, &lat, 2));
        prop_assert!(lat.ext_leq(&a, &a));
        // An array and a simple level compare by outer level only, so
        // chains through a simple level can lose the array contents.
        let same_kind = a.is_array() == b.is_array() && b.is_array() == c.is_array();
        if same_kind && lat.ext_leq(&a, &b) && lat.ext_leq(&b, &c) {
            prop_assert!(lat.ext_leq(&a, &c));
        }
        if let Ok(j) = lat.ext_lub(&a, &b) {
            prop_assert!(lat.ext_leq(&a, &j) && lat.ext_leq(&b, &j), "ext_lub is not an upper bound");
        }
        let (k1, k2) = (gen::level(rng, &lat), gen::level(rng, &lat));
        let st = gen::stack(rng, &lat, 5);
        let lifted = lat.lift(k1, &st);
        prop_assert_eq!(lifted.len(), st.len());
        prop_assert!(lat.stack_leq(&st, &lifted));
        prop_assert_eq!(lat.lift(k1, &lifted), lifted.clone());
        let raised: Vec<ExtLevel> = st.iter().map(|e| gen::raise_random(rng, &lat, e)).collect();
        prop_assert!(lat.stack_leq(&st, &raised));
        prop_assert!(lat.stack_leq(&lifted, &lat.lift(k1, &raised)));
        prop_assert!(lat.stack_leq(&lifted, &lat.lift(lat.lub(k1, k2), &st)));
        Ok(())
    })?;
    Ok(format!("{cases} cases"))
}

// ---------------------------------------------------------------------
// Transfer monotonicity

struct JvmSite {
    method: usize,
    policy: ifc_core::policy::MethodPolicy,
    cert: JvmCertificate,
}

struct DexSite {
    method: usize,
    policy: ifc_core::policy::MethodPolicy,
    typings: BTreeMap<usize, RegTyping>,
}

/// Every (method, policy) of `prog` the JVM checker accepts, with its
/// certificate, and the translated DEX certificates.
fn sites(prog: &JvmProgram) -> (DexProgram, Vec<JvmSite>, Vec<DexSite>) {
    let compiled = compile_program(prog).expect("corpus compiles");
    let mut js = Vec::new();
    let mut ds = Vec::new();
    for (idx, m) in prog.methods.iter().enumerate() {
        for sgn in prog.policy.gamma.policies_of(&m.id).expect("policy") {
            let Ok(cert) = jvmc::infer(prog, m, sgn, None) else { continue };
            let dm = compiled.program.method(&m.id).expect("compiled");
            let amap = &compiled.maps[&m.id];
            if let Ok(t) = translate_certificate(prog, m, sgn, &cert, &compiled.program, dm, amap) {
                let didx = compiled.program.methods.iter().position(|d| d.id == m.id).unwrap();
                ds.push(DexSite { method: didx, policy: sgn.clone(), typings: t.cert.typings });
            }
            js.push(JvmSite { method: idx, policy: sgn.clone(), cert });
        }
    }
    (compiled.program, js, ds)
}

fn random_se(rng: &mut ChaCha8Rng, lat: &Lattice, n: usize) -> SecEnv {
    SecEnv::from_levels((0..n).map(|_| gen::level(rng, lat)).collect())
}

fn region_leq(lat: &Lattice, a: Option<Level>, b: Option<Level>) -> bool {
    lat.leq(a.unwrap_or(lat.bottom()), b.unwrap_or(lat.bottom()))
}

/// Both rules succeed or fail together and successful outputs are
/// ordered.
fn compare<S: std::fmt::Debug>(
    r1: &RuleResult<S>,
    r2: &RuleResult<S>,
    leq: impl Fn(&S, &S) -> bool,
    ctx: &dyn Fn() -> String,
) -> Result<(), TestCaseError> {
    match (r1, r2) {
        (Ok(Some(o1)), Ok(Some(o2))) => prop_assert!(leq(o1, o2), "outputs unordered at {}", ctx()),
        (Ok(None), Ok(None)) | (Err(_), Err(_)) => {}
        _ => prop_assert!(false, "rule outcomes differ at {}: {:?} vs {:?}", ctx(), r1, r2),
    }
    Ok(())
}

/// For stack types `st1 ≤ st2` of the same shape at a random edge of the
/// corpus: both rules succeed or fail together, outputs stay ordered,
/// and the constraints of `st2` holding implies those of `st1` hold.
/// The receiver of an invoke keeps its level, since it selects the
/// callee signature.
pub fn jvm_transfer_monotone(prog: &JvmProgram, cases: u32) -> Result<String, String> {
    let (_, sites, _) = sites(prog);
    let lat = &prog.lattice;
    seeded(cases, |rng| {
        let site = sites.choose(rng).unwrap();
        let m = &prog.methods[site.method];
        let (&pp, template) = site.cert.stacks.iter().nth(rng.gen_range(0..site.cert.stacks.len())).unwrap();
        let edges = jvm::successors(prog, m, pp);
        let edge = edges.choose(rng).unwrap();
        let st1: Vec<ExtLevel> = template.iter().map(|e| gen::relevel(rng, lat, e)).collect();
        let mut st2: Vec<ExtLevel> = st1.iter().map(|e| gen::raise_random(rng, lat, e)).collect();
        if let JvmInstr::Invoke(callee) = m.instr(pp) {
            let recv = prog.method(callee).map_or(0, |c| c.nb_arguments);
            st2[recv] = st1[recv].clone();
        }
        let se = random_se(rng, lat, m.code.len());
        let mut ob1 = Obligations::new(lat, pp, edge.tag.clone());
        let mut ob2 = Obligations::new(lat, pp, edge.tag.clone());
        let r1 = jvmc::transfer(prog, m, &site.policy, &se, pp, edge, &st1, &mut ob1);
        let r2 = jvmc::transfer(prog, m, &site.policy, &se, pp, edge, &st2, &mut ob2);
        let ctx = || format!("{} pp {pp} {:?}: {} vs {}", m.id, edge, lat.render_stack(&st1), lat.render_stack(&st2));
        compare(&r1, &r2, |a, b| lat.stack_leq(a, b), &ctx)?;
        if ob2.violations.is_empty() {
            prop_assert!(ob1.violations.is_empty(), "lower stack violates {:?} at {}", ob1.violations, ctx());
        }
        prop_assert!(region_leq(lat, ob1.region, ob2.region), "region demand not monotone at {}", ctx());
        Ok(())
    })?;
    Ok(format!("{cases} JVM stack-type pairs over {} certified sites", sites.len()))
}

fn relevel_rt(rng: &mut ChaCha8Rng, lat: &Lattice, rt: &RegTyping) -> RegTyping {
    RegTyping {
        regs: rt.regs.iter().map(|e| gen::relevel(rng, lat, e)).collect(),
        ret: gen::relevel(rng, lat, &rt.ret),
        ex: gen::relevel(rng, lat, &rt.ex),
    }
}

fn raise_rt(rng: &mut ChaCha8Rng, lat: &Lattice, rt: &RegTyping) -> RegTyping {
    RegTyping {
        regs: rt.regs.iter().map(|e| gen::raise_random(rng, lat, e)).collect(),
        ret: gen::raise_random(rng, lat, &rt.ret),
        ex: gen::raise_random(rng, lat, &rt.ex),
    }
}

/// The DEX counterpart of [`jvm_transfer_monotone`] on the compiled
/// corpus, with translated typings as shape templates.
pub fn dex_transfer_monotone(prog: &JvmProgram, cases: u32) -> Result<String, String> {
    let (dprog, _, sites) = sites(prog);
    let lat = &dprog.lattice;
    seeded(cases, |rng| {
        let site = sites.choose(rng).unwrap();
        let m = &dprog.methods[site.method];
        let (&pp, template) = site.typings.iter().nth(rng.gen_range(0..site.typings.len())).unwrap();
        let cfg = dexc::cfg_of(&dprog, m);
        let edge = cfg.succ(pp).choose(rng).unwrap().clone();
        let rt1 = relevel_rt(rng, lat, template);
        let mut rt2 = raise_rt(rng, lat, &rt1);
        if let DexInstr::Invoke(_, args) = m.instr(pp) {
            rt2.regs[args[0]] = rt1.regs[args[0]].clone();
        }
        let se = random_se(rng, lat, m.code.len());
        let mut ob1 = Obligations::new(lat, pp, edge.tag.clone());
        let mut ob2 = Obligations::new(lat, pp, edge.tag.clone());
        let r1 = dexc::transfer(&dprog, m, &site.policy, &se, pp, &edge, &rt1, &mut ob1);
        let r2 = dexc::transfer(&dprog, m, &site.policy, &se, pp, &edge, &rt2, &mut ob2);
        let ctx = || format!("{} pp {pp} {:?} ({})", m.id, edge, m.instr(pp));
        compare(&r1, &r2, |a, b| rt_leq(lat, a, b) == Ok(true), &ctx)?;
        if ob2.violations.is_empty() {
            prop_assert!(ob1.violations.is_empty(), "lower typing violates {:?} at {}", ob1.violations, ctx());
        }
        prop_assert!(region_leq(lat, ob1.region, ob2.region), "region demand not monotone at {}", ctx());
        Ok(())
    })?;
    Ok(format!("{cases} DEX typing pairs over {} certified sites", sites.len()))
}

// ---------------------------------------------------------------------
// Stack compilation

/// For a taller stack `st1` and a shorter `st2`, every register above the
/// shorter stack is at least as high under `⟦st2⟧` as under `⟦st1⟧`, and
/// stack slots land where `stack_register` says.
pub fn registers_not_in_stack(cases: u32) -> Result<String, String> {
    seeded(cases, |rng| {
        let lat = gen::pick_lattice(rng);
        let n_locals = rng.gen_range(0..=4);
        let ka: Vec<ExtLevel> = (0..n_locals).map(|_| gen::ext(rng, &lat, 1)).collect();
        let st1 = loop {
            let s = gen::stack(rng, &lat, 6);
            if !s.is_empty() {
                break s;
            }
        };
        let m = rng.gen_range(0..st1.len());
        let st2: Vec<ExtLevel> = (0..m).map(|_| gen::ext(rng, &lat, 1)).collect();
        let n_registers = n_locals + st1.len() + m + rng.gen_range(0..=2);
        let rt1 = compile_stack_type(&lat, &st1, &ka, n_locals, n_registers).map_err(TestCaseError::fail)?;
        let rt2 = compile_stack_type(&lat, &st2, &ka, n_locals, n_registers).map_err(TestCaseError::fail)?;
        for x in n_locals + m..(n_locals + m + st1.len()).min(n_registers) {
            prop_assert!(
                lat.ext_leq(rt1.get(x), rt2.get(x)),
                "register r{x} drops from {:?} to {:?}",
                rt1.get(x),
                rt2.get(x)
            );
            prop_assert_eq!(rt2.get(x), &ExtLevel::Simple(lat.top()));
        }
        for (d, e) in st1.iter().enumerate() {
            let r = stack_register(n_locals, st1.len(), d).expect("in stack");
            prop_assert_eq!(rt1.get(r), e);
        }
        prop_assert_eq!(stack_register(n_locals, st1.len(), st1.len()), None);
        for (x, k) in ka.iter().enumerate() {
            prop_assert_eq!(rt1.get(x), k);
        }
        Ok(())
    })?;
    Ok(format!("{cases} stack pairs"))
}

// ---------------------------------------------------------------------
// Indistinguishability and the side-effect preorder

fn random_value(rng: &mut ChaCha8Rng, h: &Heap) -> Value {
    let locs: Vec<Loc> = h.cells.keys().copied().collect();
    match rng.gen_range(0..3) {
        0 => Value::int(rng.gen_range(-2..=2)),
        1 if !locs.is_empty() => Value::Loc(*locs.choose(rng).unwrap()),
        _ => Value::Null,
    }
}

fn rename(v: &Value, perm: &BTreeMap<Loc, Loc>) -> Value {
    match v {
        Value::Loc(l) => Value::Loc(perm[l]),
        other => other.clone(),
    }
}

/// A final state over `h`; exceptional outcomes point at `C` objects.
fn random_final(rng: &mut ChaCha8Rng, h: Heap) -> Final {
    let objects: Vec<Loc> = h.cells.keys().copied().filter(|l| h.class_of(*l).is_some()).collect();
    let outcome = if !objects.is_empty() && rng.gen_bool(0.3) {
        Outcome::Exception(*objects.choose(rng).unwrap())
    } else {
        Outcome::Normal(random_value(rng, &h))
    };
    Final { outcome, heap: h }
}

/// Symmetry under the inverse partial bijection, reflexivity under the
/// identity, for values, locals, heaps and final states.
pub fn indist_symmetry_reflexivity(cases: u32) -> Result<String, String> {
    let positives = std::cell::Cell::new(0u32);
    seeded(cases, |rng| {
        let lat = gen::pick_lattice(rng);
        let policy = gen::heap_policy(rng, &lat);
        let obs = Observer { lat: &lat, kobs: policy.kobs, policy: &policy };
        let h1 = gen::heap(rng, 4);
        let noise = [0.0, 0.1, 0.5].choose(rng).copied().unwrap();
        let (h2, perm) = gen::renamed(rng, &h1, noise);
        let beta = Beta::from_pairs(perm.iter().map(|(a, b)| (*a, *b)).filter(|_| rng.gen_bool(0.8)));
        let inv = beta.inverse();
        let id1 = Beta::identity(h1.cells.keys().copied());

        let v1 = random_value(rng, &h1);
        let v2 = if rng.gen_bool(0.5) { rename(&v1, &perm) } else { random_value(rng, &h2) };
        prop_assert_eq!(value_indist(&v1, &v2, &beta), value_indist(&v2, &v1, &inv));
        prop_assert!(value_indist(&v1, &v1, &id1));

        let n = rng.gen_range(0..=4);
        let ka: Vec<ExtLevel> = (0..n).map(|_| gen::ext(rng, &lat, 1)).collect();
        let rho1: Vec<Value> = (0..n).map(|_| random_value(rng, &h1)).collect();
        let rho2: Vec<Value> =
            rho1.iter().map(|v| if rng.gen_bool(0.7) { rename(v, &perm) } else { random_value(rng, &h2) }).collect();
        let l12 = locals_indist(&lat, &rho1, &rho2, &ka, obs.kobs, &beta).map_err(TestCaseError::fail)?;
        let l21 = locals_indist(&lat, &rho2, &rho1, &ka, obs.kobs, &inv).map_err(TestCaseError::fail)?;
        prop_assert_eq!(l12, l21);
        prop_assert!(locals_indist(&lat, &rho1, &rho1, &ka, obs.kobs, &id1).map_err(TestCaseError::fail)?);

        let h12 = heap_indist(&h1, &h2, &beta, &obs);
        prop_assert_eq!(h12, heap_indist(&h2, &h1, &inv, &obs));
        prop_assert!(heap_indist(&h1, &h1, &id1, &obs));
        if h12 {
            positives.set(positives.get() + 1);
        }

        let kr: BTreeMap<Tag, Level> =
            [Tag::Norm, Tag::exc("C")].into_iter().map(|t| (t, gen::level(rng, &lat))).collect();
        let f1 = random_final(rng, h1.clone());
        let f2 = if rng.gen_bool(0.5) {
            let outcome = match &f1.outcome {
                Outcome::Normal(v) => Outcome::Normal(rename(v, &perm)),
                Outcome::Exception(l) => Outcome::Exception(perm[l]),
            };
            Final { outcome, heap: h2.clone() }
        } else {
            random_final(rng, h2.clone())
        };
        let o12 = output_indist(&f1, &f2, &beta, &obs, &kr).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let o21 = output_indist(&f2, &f1, &inv, &obs, &kr).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(o12, o21);
        prop_assert!(output_indist(&f1, &f1, &id1, &obs, &kr).map_err(|e| TestCaseError::fail(e.to_string()))?);
        Ok(())
    })?;
    let pos = positives.get();
    if pos * 10 < cases {
        return Err(format!("only {pos} of {cases} heap pairs were related; the check is too weak"));
    }
    Ok(format!("{cases} cases, {pos} related heap pairs"))
}

/// `⪯k` is reflexive and transitive.
pub fn side_effect_preorder_laws(cases: u32) -> Result<String, String> {
    let chained = std::cell::Cell::new(0u32);
    seeded(cases, |rng| {
        let lat = gen::pick_lattice(rng);
        let policy = gen::heap_policy(rng, &lat);
        let k = gen::level(rng, &lat);
        let h1 = gen::heap(rng, 4);
        prop_assert!(side_effect_preorder(&h1, &h1, k, &lat, &policy));
        let p = [0.05, 0.2, 0.5].choose(rng).copied().unwrap();
        let h2 = gen::mutate(rng, &h1, p);
        let h3 = gen::mutate(rng, &h2, p);
        if side_effect_preorder(&h1, &h2, k, &lat, &policy) && side_effect_preorder(&h2, &h3, k, &lat, &policy) {
            chained.set(chained.get() + 1);
            prop_assert!(side_effect_preorder(&h1, &h3, k, &lat, &policy), "transitivity fails");
        }
        Ok(())
    })?;
    let c = chained.get();
    if c * 10 < cases {
        return Err(format!("only {c} of {cases} chains satisfied the premise; the check is too weak"));
    }
    Ok(format!("{cases} cases, {c} chains"))
}

// ---------------------------------------------------------------------
// Text formats

fn roundtrip_jvm(prog: &JvmProgram) -> Result<(), String> {
    let text = write_jvm(prog);
    let back = parse_jvm(&text).map_err(|d| format!("{d}\n{text}"))?;
    if &back != prog {
        return Err(format!("JVM program changed across write/parse:\n{text}"));
    }
    if write_jvm(&back) != text {
        return Err(format!("JVM writer is not stable:\n{text}"));
    }
    Ok(())
}

fn roundtrip_dex(prog: &DexProgram) -> Result<(), String> {
    let text = write_dex(prog);
    let back = parse_dex(&text).map_err(|d| format!("{d}\n{text}"))?;
    if &back != prog {
        return Err(format!("DEX program changed across write/parse:\n{text}"));
    }
    if write_dex(&back) != text {
        return Err(format!("DEX writer is not stable:\n{text}"));
    }
    Ok(())
}

/// Random valid programs survive write/parse unchanged, as do their
/// compiled forms, address maps and any certificates the checkers infer.
pub fn format_roundtrip(cases: u32) -> Result<String, String> {
    let certs = std::cell::Cell::new(0u32);
    seeded(cases, |rng| {
        let prog = gen::jvm_program(rng);
        roundtrip_jvm(&prog).map_err(TestCaseError::fail)?;
        let compiled = compile_program(&prog).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for m in &compiled.program.methods {
            dex::validate(&compiled.program, m).map_err(|e| TestCaseError::fail(e.to_string()))?;
        }
        roundtrip_dex(&compiled.program).map_err(TestCaseError::fail)?;
        let maps_text = write_address_maps(&compiled.maps);
        let maps = parse_address_maps(&maps_text).map_err(|d| TestCaseError::fail(format!("{d}\n{maps_text}")))?;
        prop_assert!(maps == compiled.maps, "address maps changed:\n{}", maps_text);

        let lat = &prog.lattice;
        let mut jentries = Vec::new();
        let mut dentries = Vec::new();
        for m in &prog.methods {
            for (receiver, sgn) in prog.policy.gamma.entries(&m.id) {
                if let Ok(cert) = jvmc::infer(&prog, m, sgn, None) {
                    jentries.push(CertEntry { method: m.id.clone(), receiver, cert });
                }
                let dm = compiled.program.method(&m.id).unwrap();
                if let Ok(cert) = dexc::infer(&compiled.program, dm, sgn, None) {
                    dentries.push(CertEntry { method: m.id.clone(), receiver, cert });
                }
            }
        }
        let jt = write_jvm_certificates(lat, &jentries);
        let jback = parse_jvm_certificates(lat, &jt).map_err(|d| TestCaseError::fail(format!("{d}\n{jt}")))?;
        prop_assert!(jback == jentries, "JVM certificates changed:\n{}", jt);
        let dt = write_dex_certificates(lat, &dentries);
        let dback = parse_dex_certificates(lat, &dt).map_err(|d| TestCaseError::fail(format!("{d}\n{dt}")))?;
        prop_assert!(dback == dentries, "DEX certificates changed:\n{}", dt);
        certs.set(certs.get() + (jentries.len() + dentries.len()) as u32);
        Ok(())
    })?;
    Ok(format!("{cases} programs, {} certificates", certs.get()))
}
