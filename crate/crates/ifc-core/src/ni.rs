//! Indistinguishability relations, the side-effect preorder, and the
//! randomized drivers for non-interference, side-effect safety and
//! compiler preservation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dex::checker as dexc;
use crate::heap::{ArrayObj, Cell, Final, Heap, Loc, Object, Outcome, RunError, Value};
use crate::jvm::checker as jvmc;
use crate::jvm::JvmProgram;
use crate::lattice::{ExtLevel, Lattice, Level};
use crate::policy::{MethodPolicy, PolicyError, ProgramPolicy};
use crate::program::{ClassDecl, Kind, SlotKind, Tag};
use crate::registry::{DexBackend, JvmBackend, Machine, MethodMeta};
use crate::translator::{compile_program, translate_certificate};

/// A partial map between the locations of two heaps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Beta {
    map: BTreeMap<Loc, Loc>,
}

impl Beta {
    pub fn new() -> Self {
        Beta::default()
    }

    pub fn identity<I: IntoIterator<Item = Loc>>(locs: I) -> Self {
        Beta { map: locs.into_iter().map(|l| (l, l)).collect() }
    }

    pub fn from_pairs<I: IntoIterator<Item = (Loc, Loc)>>(pairs: I) -> Self {
        Beta { map: pairs.into_iter().collect() }
    }

    pub fn get(&self, l: Loc) -> Option<Loc> {
        self.map.get(&l).copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (Loc, Loc)> + '_ {
        self.map.iter().map(|(a, b)| (*a, *b))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_injective(&self) -> bool {
        let rng: BTreeSet<Loc> = self.map.values().copied().collect();
        rng.len() == self.map.len()
    }

    pub fn inverse(&self) -> Beta {
        Beta { map: self.map.iter().map(|(a, b)| (*b, *a)).collect() }
    }

    pub fn extends(&self, smaller: &Beta) -> bool {
        smaller.map.iter().all(|(a, b)| self.map.get(a) == Some(b))
    }

    /// Adds `a ↦ b`; false if that would break functionality or injectivity.
    pub fn insert(&mut self, a: Loc, b: Loc) -> bool {
        match self.map.get(&a) {
            Some(&x) => x == b,
            None if self.map.values().any(|&x| x == b) => false,
            None => {
                self.map.insert(a, b);
                true
            }
        }
    }
}

/// The attacker's view: lattice, observation level and the field and
/// array policies of the first heap.
#[derive(Clone, Copy)]
pub struct Observer<'a> {
    pub lat: &'a Lattice,
    pub kobs: Level,
    pub policy: &'a ProgramPolicy,
}

impl Observer<'_> {
    fn sees(&self, k: Level) -> bool {
        self.lat.leq(k, self.kobs)
    }

    fn field_low(&self, f: &str) -> bool {
        self.sees(self.policy.ft(self.lat, f).outer())
    }

    fn array_low(&self, a: &ArrayObj) -> bool {
        self.sees(self.policy.at(self.lat, &a.created_at.0, a.created_at.1).outer())
    }
}

pub fn value_indist(v1: &Value, v2: &Value, beta: &Beta) -> bool {
    match (v1, v2) {
        (Value::Null, Value::Null) => true,
        (Value::Int(a), Value::Int(b)) => a == b,
        (Value::Loc(a), Value::Loc(b)) => beta.get(*a) == Some(*b),
        _ => false,
    }
}

/// Low locals (by `ka`) hold indistinguishable values.
pub fn locals_indist(
    lat: &Lattice,
    rho1: &[Value],
    rho2: &[Value],
    ka: &[ExtLevel],
    kobs: Level,
    beta: &Beta,
) -> Result<bool, String> {
    if rho1.len() != rho2.len() {
        return Err(format!("local domains differ: {} vs {}", rho1.len(), rho2.len()));
    }
    Ok(rho1.iter().zip(rho2).enumerate().all(|(x, (a, b))| {
        let k = ka.get(x).map_or(lat.top(), |k| k.outer());
        !lat.leq(k, kobs) || value_indist(a, b, beta)
    }))
}

/// Outside `loc_r`, every register is high in both typings with the
/// same level, or low in both with related values.
#[allow(clippy::too_many_arguments)]
pub fn registers_indist(
    lat: &Lattice,
    rho1: &[Value],
    rho2: &[Value],
    rt1: &[ExtLevel],
    rt2: &[ExtLevel],
    kobs: Level,
    beta: &Beta,
    loc_r: &BTreeSet<usize>,
) -> Result<bool, String> {
    let n = rho1.len();
    if rho2.len() != n || rt1.len() != n || rt2.len() != n {
        return Err("register universes differ".into());
    }
    Ok((0..n).filter(|x| !loc_r.contains(x)).all(|x| {
        let (k1, k2) = (rt1[x].outer(), rt2[x].outer());
        let high = k1 == k2 && !lat.leq(k1, kobs);
        let low = lat.leq(k1, kobs) && lat.leq(k2, kobs) && value_indist(&rho1[x], &rho2[x], beta);
        high || low
    }))
}

fn cells_indist(c1: &Cell, c2: &Cell, beta: &Beta, obs: &Observer) -> bool {
    match (c1, c2) {
        (Cell::Object(o1), Cell::Object(o2)) => {
            o1.class == o2.class
                && o1
                    .fields
                    .iter()
                    .all(|(f, v)| !obs.field_low(f) || o2.fields.get(f).is_some_and(|w| value_indist(v, w, beta)))
        }
        (Cell::Array(a1), Cell::Array(a2)) => {
            a1.elems.len() == a2.elems.len()
                && (!obs.array_low(a1) || a1.elems.iter().zip(&a2.elems).all(|(v, w)| value_indist(v, w, beta)))
        }
        _ => false,
    }
}

pub fn heap_indist(h1: &Heap, h2: &Heap, beta: &Beta, obs: &Observer) -> bool {
    beta.is_injective()
        && beta.pairs().all(|(a, b)| match (h1.get(a), h2.get(b)) {
            (Some(c1), Some(c2)) => cells_indist(c1, c2, beta, obs),
            _ => false,
        })
}

fn kr_level(kr: &BTreeMap<Tag, Level>, tag: &Tag) -> Result<Level, PolicyError> {
    kr.get(tag).copied().ok_or_else(|| PolicyError::MissingReturnLevel { method: String::new(), tag: tag.to_string() })
}

/// Indistinguishability of two final states under `kr`.
pub fn output_indist(
    f1: &Final,
    f2: &Final,
    beta: &Beta,
    obs: &Observer,
    kr: &BTreeMap<Tag, Level>,
) -> Result<bool, PolicyError> {
    if !heap_indist(&f1.heap, &f2.heap, beta, obs) {
        return Ok(false);
    }
    Ok(match (&f1.outcome, &f2.outcome) {
        (Outcome::Normal(v1), Outcome::Normal(v2)) => {
            !obs.sees(kr_level(kr, &Tag::Norm)?) || value_indist(v1, v2, beta)
        }
        (Outcome::Exception(_), Outcome::Exception(_)) => {
            let k1 = kr_level(kr, &f1.tag())?;
            let k2 = kr_level(kr, &f2.tag())?;
            match (&f1.outcome, &f2.outcome) {
                (Outcome::Exception(l1), Outcome::Exception(l2)) if obs.sees(k1) => beta.get(*l1) == Some(*l2),
                _ => !obs.sees(k1) && !obs.sees(k2),
            }
        }
        (Outcome::Exception(_), Outcome::Normal(_)) => !obs.sees(kr_level(kr, &f1.tag())?),
        (Outcome::Normal(_), Outcome::Exception(_)) => !obs.sees(kr_level(kr, &f2.tag())?),
    })
}

/// The least `β' ⊇ β` forced by the observable outputs and by low
/// fields of related cells. `None` when the forced pairs conflict, in
/// which case no extension makes the outputs indistinguishable.
pub fn extend_beta(
    beta: &Beta,
    f1: &Final,
    f2: &Final,
    obs: &Observer,
    kr: &BTreeMap<Tag, Level>,
) -> Result<Option<Beta>, PolicyError> {
    let mut work: Vec<(Loc, Loc)> = beta.pairs().collect();
    match (&f1.outcome, &f2.outcome) {
        (Outcome::Normal(Value::Loc(a)), Outcome::Normal(Value::Loc(b))) if obs.sees(kr_level(kr, &Tag::Norm)?) => {
            work.push((*a, *b))
        }
        (Outcome::Exception(a), Outcome::Exception(b)) if obs.sees(kr_level(kr, &f1.tag())?) => work.push((*a, *b)),
        _ => {}
    }
    let mut out = beta.clone();
    let mut done = BTreeSet::new();
    while let Some((a, b)) = work.pop() {
        if !out.insert(a, b) {
            return Ok(None);
        }
        if !done.insert(a) {
            continue;
        }
        let refs = |x: &Value, y: &Value, work: &mut Vec<(Loc, Loc)>| {
            if let (Value::Loc(x), Value::Loc(y)) = (x, y) {
                work.push((*x, *y));
            }
        };
        match (f1.heap.get(a), f2.heap.get(b)) {
            (Some(Cell::Object(o1)), Some(Cell::Object(o2))) => {
                for (f, v) in &o1.fields {
                    if let (true, Some(w)) = (obs.field_low(f), o2.fields.get(f)) {
                        refs(v, w, &mut work);
                    }
                }
            }
            (Some(Cell::Array(a1)), Some(Cell::Array(a2))) if obs.array_low(a1) => {
                for (v, w) in a1.elems.iter().zip(&a2.elems) {
                    refs(v, w, &mut work);
                }
            }
            _ => {}
        }
    }
    Ok(Some(out))
}

/// `h1 ⪯k h2`: no location disappears and fields not writable at `k`
/// keep their values.
pub fn side_effect_preorder(h1: &Heap, h2: &Heap, k: Level, lat: &Lattice, policy: &ProgramPolicy) -> bool {
    h1.cells.iter().all(|(l, c1)| match (c1, h2.get(*l)) {
        (Cell::Object(o1), Some(Cell::Object(o2))) => {
            o1.fields.iter().all(|(f, v)| lat.leq(k, policy.ft(lat, f).outer()) || o2.fields.get(f) == Some(v))
        }
        (Cell::Array(_), Some(Cell::Array(_))) => true,
        _ => false,
    })
}

// ---------------------------------------------------------------------
// Input generation

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub int_lo: i64,
    pub int_hi: i64,
    pub null_prob: f64,
    pub max_cells: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { int_lo: -3, int_hi: 3, null_prob: 0.25, max_cells: 3 }
    }
}

/// Initial locals and heap for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Input {
    pub locals: Vec<Value>,
    pub heap: Heap,
}

impl fmt::Display for Input {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let locals: Vec<String> = self.locals.iter().map(|v| v.to_string()).collect();
        write!(f, "locals [{}], {} heap cells", locals.join(", "), self.heap.len())
    }
}

/// Origin recorded on generated input arrays; its content level is the
/// array-policy default.
pub const INPUT_ARRAY_ORIGIN: &str = "<input>";

struct Gen<'a> {
    cfg: GenConfig,
    classes: &'a BTreeMap<String, ClassDecl>,
}

impl Gen<'_> {
    fn int(&self, rng: &mut ChaCha8Rng) -> Value {
        Value::int(rng.gen_range(self.cfg.int_lo..=self.cfg.int_hi))
    }

    fn objects(heap: &Heap, class: Option<&str>) -> Vec<Loc> {
        heap.cells
            .iter()
            .filter(|(_, c)| matches!(c, Cell::Object(o) if class.is_none_or(|k| o.class == k)))
            .map(|(l, _)| *l)
            .collect()
    }

    fn arrays(heap: &Heap, kind: Kind) -> Vec<Loc> {
        heap.cells
            .iter()
            .filter(
                |(_, c)| matches!(c, Cell::Array(a) if a.elems.iter().all(|v| kind_of(v).is_none_or(|k| k == kind))),
            )
            .map(|(l, _)| *l)
            .collect()
    }

    fn pick(&self, rng: &mut ChaCha8Rng, pool: &[Loc]) -> Value {
        if pool.is_empty() || rng.gen_bool(self.cfg.null_prob) {
            Value::Null
        } else {
            Value::Loc(pool[rng.gen_range(0..pool.len())])
        }
    }

    fn value(&self, rng: &mut ChaCha8Rng, heap: &Heap, kind: Kind) -> Value {
        match kind {
            Kind::Int => self.int(rng),
            Kind::Ref => self.pick(rng, &Self::objects(heap, None)),
        }
    }

    fn slot(&self, rng: &mut ChaCha8Rng, heap: &Heap, sk: Option<&SlotKind>) -> Value {
        match sk {
            None | Some(SlotKind::Int) => self.int(rng),
            Some(SlotKind::Obj(c)) => self.pick(rng, &Self::objects(heap, Some(c))),
            Some(SlotKind::Array(k)) => self.pick(rng, &Self::arrays(heap, *k)),
        }
    }

    fn object(&self, class: &str) -> Object {
        let fields = self.classes.get(class).map(|c| c.fields.clone()).unwrap_or_default();
        Object {
            class: class.to_string(),
            fields: fields.into_iter().map(|(f, k)| (f, Value::default_of(k))).collect(),
        }
    }

    /// A heap with at most `max_cells` cells. Slot hints get a compatible
    /// cell first; remaining cells are random objects or int arrays.
    fn heap(&self, rng: &mut ChaCha8Rng, meta: &MethodMeta) -> Heap {
        let mut heap = Heap::new();
        let mut wanted: Vec<&SlotKind> = meta.slot_kinds.values().filter(|k| !matches!(k, SlotKind::Int)).collect();
        wanted.dedup();
        let total = rng.gen_range(0..=self.cfg.max_cells);
        let classes: Vec<&String> = self.classes.keys().collect();
        for i in 0..total {
            let cell = match wanted.get(i) {
                Some(SlotKind::Obj(c)) => Cell::Object(self.object(c)),
                Some(SlotKind::Array(k)) => self.array(rng, *k),
                _ if !classes.is_empty() && rng.gen_bool(0.5) => {
                    Cell::Object(self.object(classes[rng.gen_range(0..classes.len())]))
                }
                _ => self.array(rng, Kind::Int),
            };
            heap.alloc(cell);
        }
        let locs: Vec<Loc> = heap.cells.keys().copied().collect();
        for l in locs {
            let snapshot = heap.clone();
            match heap.get_mut(l) {
                Some(Cell::Object(o)) => {
                    let kinds = self.classes.get(&o.class).map(|c| c.fields.clone()).unwrap_or_default();
                    for (f, k) in kinds {
                        o.fields.insert(f, self.value(rng, &snapshot, k));
                    }
                }
                Some(Cell::Array(a)) => {
                    let kind = a.elems.first().and_then(kind_of).unwrap_or(Kind::Int);
                    for e in a.elems.iter_mut() {
                        *e = self.value(rng, &snapshot, kind);
                    }
                }
                None => {}
            }
        }
        heap
    }

    fn array(&self, rng: &mut ChaCha8Rng, kind: Kind) -> Cell {
        let len = rng.gen_range(0..=3);
        Cell::Array(ArrayObj { elems: vec![Value::default_of(kind); len], created_at: (INPUT_ARRAY_ORIGIN.into(), 0) })
    }

    fn input(&self, rng: &mut ChaCha8Rng, meta: &MethodMeta) -> Input {
        let heap = self.heap(rng, meta);
        let locals = (0..meta.n_locals).map(|x| self.slot(rng, &heap, meta.slot_kinds.get(&x))).collect();
        Input { locals, heap }
    }

    /// A second input agreeing with `first` on everything the observer
    /// sees, related by the identity on locations.
    fn twin(&self, rng: &mut ChaCha8Rng, meta: &MethodMeta, first: &Input, ka: &[ExtLevel], obs: &Observer) -> Input {
        let mut heap = first.heap.clone();
        let locs: Vec<Loc> = heap.cells.keys().copied().collect();
        for l in locs {
            let snapshot = heap.clone();
            if let Some(Cell::Object(o)) = heap.get_mut(l) {
                let kinds = self.classes.get(&o.class).map(|c| c.fields.clone()).unwrap_or_default();
                for (f, k) in kinds {
                    if !obs.field_low(&f) {
                        o.fields.insert(f, self.value(rng, &snapshot, k));
                    }
                }
            }
        }
        let locals = first
            .locals
            .iter()
            .enumerate()
            .map(|(x, v)| {
                let k = ka.get(x).map_or(obs.lat.top(), |k| k.outer());
                if obs.sees(k) {
                    v.clone()
                } else {
                    self.slot(rng, &heap, meta.slot_kinds.get(&x))
                }
            })
            .collect();
        Input { locals, heap }
    }
}

fn kind_of(v: &Value) -> Option<Kind> {
    match v {
        Value::Int(_) => Some(Kind::Int),
        Value::Loc(_) => Some(Kind::Ref),
        Value::Null => None,
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

// ---------------------------------------------------------------------
// Drivers

#[derive(Debug, Clone, Copy)]
pub struct NiConfig {
    pub trials: u64,
    pub seed: u64,
    pub fuel: u64,
    pub kobs: Level,
    pub gen: GenConfig,
}

/// A pair of runs whose outputs the observer can tell apart.
#[derive(Debug, Clone)]
pub struct Witness {
    pub trial: u64,
    pub seed: u64,
    pub first: Input,
    pub second: Input,
    pub out1: Final,
    pub out2: Final,
    pub reason: String,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trial {} (seed {}): {} vs {} -> {} vs {}: {}",
            self.trial,
            self.seed,
            self.first,
            self.second,
            describe(&self.out1),
            describe(&self.out2),
            self.reason
        )
    }
}

pub fn describe(f: &Final) -> String {
    match &f.outcome {
        Outcome::Normal(v) => format!("normal {v}"),
        Outcome::Exception(l) => format!("exception {} {l}", f.tag()),
    }
}

#[derive(Debug, Clone)]
pub enum NiVerdict {
    NoCounterexample(u64),
    Interference(Box<Witness>),
}

#[derive(Debug, Clone)]
pub struct NiReport {
    pub verdict: NiVerdict,
    pub completed: u64,
    pub fuel_exhausted: u64,
    pub machine_errors: u64,
}

impl NiReport {
    pub fn witness(&self) -> Option<&Witness> {
        match &self.verdict {
            NiVerdict::Interference(w) => Some(w),
            NiVerdict::NoCounterexample(_) => None,
        }
    }

    /// One `key=value` line for scripts.
    pub fn machine_line(&self) -> String {
        let (verdict, trial) = match &self.verdict {
            NiVerdict::NoCounterexample(n) => ("no-counterexample", *n),
            NiVerdict::Interference(w) => ("interference", w.trial),
        };
        format!(
            "verdict={verdict} trial={trial} completed={} fuel_exhausted={} machine_errors={}",
            self.completed, self.fuel_exhausted, self.machine_errors
        )
    }
}

/// Result of running one pair of inputs.
#[derive(Debug, Clone)]
pub enum PairResult {
    Indistinguishable,
    Distinguishable { out1: Final, out2: Final, reason: String },
    FuelExhausted,
    MachineError(String),
}

fn why_distinguishable(f1: &Final, f2: &Final, beta: Option<&Beta>, obs: &Observer) -> String {
    let Some(beta) = beta else {
        return "low outputs force conflicting location pairings".into();
    };
    if !heap_indist(&f1.heap, &f2.heap, beta, obs) {
        return "final heaps differ in observable cells".into();
    }
    match (&f1.outcome, &f2.outcome) {
        (Outcome::Normal(v1), Outcome::Normal(v2)) => format!("observable results {v1} and {v2} differ"),
        _ => format!("observable termination differs ({} vs {})", f1.tag(), f2.tag()),
    }
}

/// Runs both inputs and decides whether some `β' ⊇ β` relates the
/// outputs.
pub fn run_pair(
    machine: &dyn Machine,
    method: &str,
    sgn: &MethodPolicy,
    kobs: Level,
    pair: (&Input, &Input),
    beta: &Beta,
    fuel: u64,
) -> Result<PairResult, PolicyError> {
    let obs = Observer { lat: machine.lattice(), kobs, policy: machine.policy() };
    let r1 = machine.run(method, &pair.0.locals, pair.0.heap.clone(), fuel);
    let r2 = machine.run(method, &pair.1.locals, pair.1.heap.clone(), fuel);
    let (f1, f2) = match (r1, r2) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(RunError::FuelExhausted), _) | (_, Err(RunError::FuelExhausted)) => return Ok(PairResult::FuelExhausted),
        (Err(e), _) | (_, Err(e)) => return Ok(PairResult::MachineError(e.to_string())),
    };
    let ext = extend_beta(beta, &f1, &f2, &obs, &sgn.kr)?;
    let ok = match &ext {
        Some(b) => output_indist(&f1, &f2, b, &obs, &sgn.kr)?,
        None => false,
    };
    if ok {
        Ok(PairResult::Indistinguishable)
    } else {
        let reason = why_distinguishable(&f1, &f2, ext.as_ref(), &obs);
        Ok(PairResult::Distinguishable { out1: f1, out2: f2, reason })
    }
}

/// The inputs of trial `trial`; replaying with the same seed gives the
/// same pair.
pub fn trial_inputs(
    machine: &dyn Machine,
    method: &str,
    sgn: &MethodPolicy,
    cfg: &NiConfig,
    trial: u64,
) -> Option<(Input, Input, Beta)> {
    let meta = machine.method(method)?;
    let obs = Observer { lat: machine.lattice(), kobs: cfg.kobs, policy: machine.policy() };
    let gen = Gen { cfg: cfg.gen, classes: machine.classes() };
    let mut rng = trial_rng(cfg.seed, trial);
    let first = gen.input(&mut rng, &meta);
    let second = gen.twin(&mut rng, &meta, &first, &sgn.ka, &obs);
    let beta = Beta::identity(first.heap.cells.keys().copied());
    Some((first, second, beta))
}

pub fn ni_test(
    machine: &dyn Machine,
    method: &str,
    sgn: &MethodPolicy,
    cfg: &NiConfig,
) -> Result<NiReport, PolicyError> {
    let mut report =
        NiReport { verdict: NiVerdict::NoCounterexample(0), completed: 0, fuel_exhausted: 0, machine_errors: 0 };
    for trial in 0..cfg.trials {
        let (first, second, beta) = trial_inputs(machine, method, sgn, cfg, trial)
            .ok_or_else(|| PolicyError::UnknownMethod(method.to_string()))?;
        match run_pair(machine, method, sgn, cfg.kobs, (&first, &second), &beta, cfg.fuel)? {
            PairResult::Indistinguishable => report.completed += 1,
            PairResult::FuelExhausted => report.fuel_exhausted += 1,
            PairResult::MachineError(_) => report.machine_errors += 1,
            PairResult::Distinguishable { out1, out2, reason } => {
                report.completed += 1;
                report.verdict = NiVerdict::Interference(Box::new(Witness {
                    trial,
                    seed: cfg.seed,
                    first,
                    second,
                    out1,
                    out2,
                    reason,
                }));
                return Ok(report);
            }
        }
    }
    report.verdict = NiVerdict::NoCounterexample(cfg.trials);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SideEffectReport {
    pub trials: u64,
    pub completed: u64,
    pub fuel_exhausted: u64,
    pub machine_errors: u64,
    /// First run whose final heap is not side-effect preordered.
    pub violation: Option<(u64, Input, Final)>,
}

/// Random runs of `method`, each checked for `h ⪯kh h'`.
pub fn side_effect_safety_test(
    machine: &dyn Machine,
    method: &str,
    kh: Level,
    gen: GenConfig,
    trials: u64,
    seed: u64,
    fuel: u64,
) -> Result<SideEffectReport, PolicyError> {
    let meta = machine.method(method).ok_or_else(|| PolicyError::UnknownMethod(method.to_string()))?;
    let g = Gen { cfg: gen, classes: machine.classes() };
    let mut rep = SideEffectReport { trials, completed: 0, fuel_exhausted: 0, machine_errors: 0, violation: None };
    for trial in 0..trials {
        let input = g.input(&mut trial_rng(seed, trial), &meta);
        match machine.run(method, &input.locals, input.heap.clone(), fuel) {
            Ok(f) => {
                rep.completed += 1;
                if !side_effect_preorder(&input.heap, &f.heap, kh, machine.lattice(), machine.policy()) {
                    rep.violation = Some((trial, input, f));
                    return Ok(rep);
                }
            }
            Err(RunError::FuelExhausted) => rep.fuel_exhausted += 1,
            Err(_) => rep.machine_errors += 1,
        }
    }
    Ok(rep)
}

/// Compares runs of the same method on two machines: same termination
/// tag, and results equal up to a renaming of fresh locations.
#[derive(Debug, Clone, Default)]
pub struct AgreementReport {
    pub runs: u64,
    pub agreed: u64,
    pub first_disagreement: Option<String>,
}

fn same_run(
    a: &Result<Final, RunError>,
    b: &Result<Final, RunError>,
    lat: &Lattice,
    policy: &ProgramPolicy,
    beta: &Beta,
) -> bool {
    match (a, b) {
        (Ok(f1), Ok(f2)) => {
            if f1.tag() != f2.tag() {
                return false;
            }
            let obs = Observer { lat, kobs: lat.top(), policy };
            let kr: BTreeMap<Tag, Level> = [f1.tag(), Tag::Norm].into_iter().map(|t| (t, lat.bottom())).collect();
            match extend_beta(beta, f1, f2, &obs, &kr) {
                Ok(Some(b)) => output_indist(f1, f2, &b, &obs, &kr).unwrap_or(false),
                _ => false,
            }
        }
        (Err(RunError::FuelExhausted), Err(RunError::FuelExhausted)) => true,
        (Err(RunError::Machine { .. }), Err(RunError::Machine { .. })) => true,
        _ => false,
    }
}

pub fn semantic_agreement(
    left: &dyn Machine,
    right: &dyn Machine,
    method: &str,
    gen: GenConfig,
    runs: u64,
    seed: u64,
    fuel: u64,
) -> AgreementReport {
    let mut rep = AgreementReport { runs, ..Default::default() };
    let Some(meta) = left.method(method) else {
        rep.first_disagreement = Some(format!("no method `{method}`"));
        return rep;
    };
    let g = Gen { cfg: gen, classes: left.classes() };
    for run in 0..runs {
        let input = g.input(&mut trial_rng(seed, run), &meta);
        let a = left.run(method, &input.locals, input.heap.clone(), fuel);
        let b = right.run(method, &input.locals, input.heap.clone(), fuel);
        let beta = Beta::identity(input.heap.cells.keys().copied());
        if same_run(&a, &b, left.lattice(), left.policy(), &beta) {
            rep.agreed += 1;
        } else if rep.first_disagreement.is_none() {
            let show = |r: &Result<Final, RunError>| r.as_ref().map_or_else(|e| e.to_string(), describe);
            rep.first_disagreement = Some(format!("run {run} on {input}: {} vs {}", show(&a), show(&b)));
        }
    }
    rep
}

/// Per-method outcome of compiling a typable JVM method and checking
/// the translated certificate.
#[derive(Debug, Clone)]
pub struct PreservationReport {
    pub method: String,
    /// `None` when the JVM checker accepts; the rejection otherwise.
    pub jvm_rejection: Option<String>,
    /// `None` when the DEX checker accepts the translated certificate.
    pub dex_rejection: Option<String>,
    /// Whether the DEX fixpoint kept the translated se unchanged.
    pub se_exact: bool,
    pub soap_jvm: bool,
    pub soap_dex: bool,
    pub agreement: AgreementReport,
}

impl PreservationReport {
    pub fn passed(&self) -> bool {
        self.jvm_rejection.is_none()
            && self.dex_rejection.is_none()
            && self.soap_jvm
            && self.soap_dex
            && self.agreement.agreed == self.agreement.runs
    }
}

pub fn preservation_test(
    prog: &JvmProgram,
    runs: u64,
    seed: u64,
    fuel: u64,
) -> Result<Vec<PreservationReport>, String> {
    let compiled = compile_program(prog).map_err(|e| e.to_string())?;
    let jvm = JvmBackend(prog.clone());
    let dex = DexBackend(compiled.program.clone());
    let mut out = Vec::new();
    for m in &prog.methods {
        let dm = compiled.program.method(&m.id).expect("compiled method");
        let amap = &compiled.maps[&m.id];
        let mut rep = PreservationReport {
            method: m.id.clone(),
            jvm_rejection: None,
            dex_rejection: None,
            se_exact: true,
            soap_jvm: true,
            soap_dex: true,
            agreement: AgreementReport::default(),
        };
        let policies = prog.policy.gamma.policies_of(&m.id).map_err(|e| e.to_string())?;
        for sgn in policies {
            let jcert = match jvmc::infer(prog, m, sgn, None) {
                Ok(c) => c,
                Err(r) => {
                    rep.jvm_rejection.get_or_insert(r.to_string());
                    continue;
                }
            };
            if let Some(r) = jvmc::check(prog, m, sgn, &jcert).rejection() {
                rep.jvm_rejection.get_or_insert(r.to_string());
                continue;
            }
            rep.soap_jvm &= jvmc::soap(prog, m, &jcert.cdr).ok();
            match translate_certificate(prog, m, sgn, &jcert, &compiled.program, dm, amap) {
                Ok(t) => {
                    rep.se_exact &= t.cert.se == t.translated_se;
                    rep.soap_dex &= dexc::soap(&compiled.program, dm, &t.cert.cdr).ok();
                    if let Some(r) = dexc::check(&compiled.program, dm, sgn, &t.cert).rejection() {
                        rep.dex_rejection.get_or_insert(r.to_string());
                    }
                }
                Err(r) => {
                    rep.dex_rejection.get_or_insert(r.to_string());
                }
            }
        }
        rep.agreement = semantic_agreement(&jvm, &dex, &m.id, GenConfig::default(), runs, seed, fuel);
        out.push(rep);
    }
    Ok(out)
}
