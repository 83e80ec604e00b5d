//! Random lattices, levels, heaps and well-formed programs for the
//! property suites.

use std::collections::{BTreeMap, BTreeSet};

use ifc_core::heap::{ArrayObj, Cell, Heap, Loc, Object, Value};
use ifc_core::jvm::{self, BinOp, JvmInstr, JvmMethod, JvmProgram};
use ifc_core::lattice::{ExtLevel, Lattice, Level};
use ifc_core::policy::{MethodPolicy, ProgramPolicy};
use ifc_core::program::{ClassDecl, Handler, Kind, Program, SlotKind, Tag, NP};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn lattice(names: &[&str], edges: &[(&str, &str)]) -> Lattice {
    Lattice::from_hasse(names, edges).expect("declared lattice is valid")
}

/// The declared lattices the suites quantify over, all of at most eight
/// points.
pub fn lattices() -> Vec<(&'static str, Lattice)> {
    let chain8 = ["A", "B", "C", "D", "E", "F", "G", "H"];
    let chain8_edges: Vec<(&str, &str)> = chain8.windows(2).map(|w| (w[0], w[1])).collect();
    vec![
        ("one-point", lattice(&["B"], &[])),
        ("two-point", Lattice::two_point()),
        ("three-chain", lattice(&["L", "M", "H"], &[("L", "M"), ("M", "H")])),
        ("diamond", lattice(&["B", "X", "Y", "T"], &[("B", "X"), ("B", "Y"), ("X", "T"), ("Y", "T")])),
        ("eight-chain", lattice(&chain8, &chain8_edges)),
        (
            "powerset-3",
            lattice(
                &["Z", "a", "b", "c", "ab", "ac", "bc", "abc"],
                &[
                    ("Z", "a"),
                    ("Z", "b"),
                    ("Z", "c"),
                    ("a", "ab"),
                    ("a", "ac"),
                    ("b", "ab"),
                    ("b", "bc"),
                    ("c", "ac"),
                    ("c", "bc"),
                    ("ab", "abc"),
                    ("ac", "abc"),
                    ("bc", "abc"),
                ],
            ),
        ),
        ("N5", lattice(&["Z", "a", "b", "c", "T"], &[("Z", "a"), ("a", "b"), ("b", "T"), ("Z", "c"), ("c", "T")])),
        (
            "M3",
            lattice(
                &["Z", "a", "b", "c", "T"],
                &[("Z", "a"), ("Z", "b"), ("Z", "c"), ("a", "T"), ("b", "T"), ("c", "T")],
            ),
        ),
    ]
}

pub fn pick_lattice(rng: &mut ChaCha8Rng) -> Lattice {
    let mut all = lattices();
    let i = rng.gen_range(0..all.len());
    all.swap_remove(i).1
}

pub fn level(rng: &mut ChaCha8Rng, lat: &Lattice) -> Level {
    Level(rng.gen_range(0..lat.size()) as u8)
}

/// A random extended level with at most `depth` array layers.
pub fn ext(rng: &mut ChaCha8Rng, lat: &Lattice, depth: usize) -> ExtLevel {
    if depth > 0 && rng.gen_bool(0.3) {
        ExtLevel::array(level(rng, lat), ext(rng, lat, depth - 1))
    } else {
        ExtLevel::Simple(level(rng, lat))
    }
}

pub fn stack(rng: &mut ChaCha8Rng, lat: &Lattice, max: usize) -> Vec<ExtLevel> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| ext(rng, lat, 2)).collect()
}

/// `e` with its outer level joined with a random level; the shape and
/// contents stay the same, so the result is `≥ext e`.
pub fn raise_random(rng: &mut ChaCha8Rng, lat: &Lattice, e: &ExtLevel) -> ExtLevel {
    lat.raise(level(rng, lat), e)
}

/// `e` with a random outer level and, sometimes, random contents.
pub fn relevel(rng: &mut ChaCha8Rng, lat: &Lattice, e: &ExtLevel) -> ExtLevel {
    match e {
        ExtLevel::Simple(_) => ExtLevel::Simple(level(rng, lat)),
        ExtLevel::Array(_, c) => {
            let content = if rng.gen_bool(0.2) { relevel(rng, lat, c) } else { (**c).clone() };
            ExtLevel::array(level(rng, lat), content)
        }
    }
}

// ---------------------------------------------------------------------
// Heaps

pub const FIELDS: [&str; 3] = ["f", "g", "p"];

pub fn heap_classes() -> BTreeMap<String, ClassDecl> {
    BTreeMap::from([(
        "C".to_string(),
        ClassDecl { fields: vec![("f".into(), Kind::Int), ("g".into(), Kind::Int), ("p".into(), Kind::Ref)] },
    )])
}

/// Field levels over `lat` for the fields in `FIELDS`.
pub fn heap_policy(rng: &mut ChaCha8Rng, lat: &Lattice) -> ProgramPolicy {
    let mut p = ProgramPolicy::new(lat);
    for f in FIELDS {
        p.ft.insert(f.to_string(), ExtLevel::Simple(level(rng, lat)));
    }
    p.kobs = level(rng, lat);
    p
}

fn small_int(rng: &mut ChaCha8Rng) -> Value {
    Value::int(rng.gen_range(-2..=2))
}

fn ref_to(rng: &mut ChaCha8Rng, locs: &[Loc]) -> Value {
    if locs.is_empty() || rng.gen_bool(0.3) {
        Value::Null
    } else {
        Value::Loc(*locs.choose(rng).unwrap())
    }
}

/// A heap of up to `max` objects and int arrays whose references point
/// inside the heap.
pub fn heap(rng: &mut ChaCha8Rng, max: usize) -> Heap {
    let mut h = Heap::new();
    let n = rng.gen_range(0..=max);
    let locs: Vec<Loc> = (0..n).map(|i| Loc(i as u32)).collect();
    for _ in 0..n {
        let cell = if rng.gen_bool(0.7) {
            let fields = BTreeMap::from([
                ("f".into(), small_int(rng)),
                ("g".into(), small_int(rng)),
                ("p".into(), ref_to(rng, &locs)),
            ]);
            Cell::Object(Object { class: "C".into(), fields })
        } else {
            let len = rng.gen_range(0..=2);
            Cell::Array(ArrayObj {
                elems: (0..len).map(|_| small_int(rng)).collect(),
                created_at: ("<input>".into(), 0),
            })
        };
        h.alloc(cell);
    }
    h
}

/// A copy of `h` with locations renamed by `perm`, every value perturbed
/// with probability `noise`. Returns the copy and the renaming.
pub fn renamed(rng: &mut ChaCha8Rng, h: &Heap, noise: f64) -> (Heap, BTreeMap<Loc, Loc>) {
    let old: Vec<Loc> = h.cells.keys().copied().collect();
    let mut new = old.clone();
    new.shuffle(rng);
    let perm: BTreeMap<Loc, Loc> = old.iter().copied().zip(new.iter().copied()).collect();
    let map = |rng: &mut ChaCha8Rng, v: &Value| -> Value {
        if rng.gen_bool(noise) {
            return match v {
                Value::Int(_) => small_int(rng),
                _ => ref_to(rng, &new),
            };
        }
        match v {
            Value::Loc(l) => Value::Loc(perm[l]),
            other => other.clone(),
        }
    };
    let mut out = Heap::new();
    let mut cells: Vec<(Loc, Cell)> = Vec::new();
    for (l, c) in &h.cells {
        let c2 = match c {
            Cell::Object(o) => Cell::Object(Object {
                class: o.class.clone(),
                fields: o.fields.iter().map(|(f, v)| (f.clone(), map(rng, v))).collect(),
            }),
            Cell::Array(a) => Cell::Array(ArrayObj {
                elems: a.elems.iter().map(|v| map(rng, v)).collect(),
                created_at: a.created_at.clone(),
            }),
        };
        cells.push((perm[l], c2));
    }
    cells.sort_by_key(|(l, _)| *l);
    for (_, c) in cells {
        out.alloc(c);
    }
    (out, perm)
}

/// `h` after a random run's worth of writes: fields change with
/// probability `p` and up to two cells are appended.
pub fn mutate(rng: &mut ChaCha8Rng, h: &Heap, p: f64) -> Heap {
    let mut out = h.clone();
    let locs: Vec<Loc> = h.cells.keys().copied().collect();
    for c in out.cells.values_mut() {
        match c {
            Cell::Object(o) => {
                for (f, v) in o.fields.iter_mut() {
                    if rng.gen_bool(p) {
                        *v = if f == "p" { ref_to(rng, &locs) } else { small_int(rng) };
                    }
                }
            }
            Cell::Array(a) => {
                for v in a.elems.iter_mut() {
                    if rng.gen_bool(p) {
                        *v = small_int(rng);
                    }
                }
            }
        }
    }
    for _ in 0..rng.gen_range(0..=2) {
        let fields =
            BTreeMap::from([("f".into(), small_int(rng)), ("g".into(), small_int(rng)), ("p".into(), Value::Null)]);
        out.alloc(Cell::Object(Object { class: "C".into(), fields }));
    }
    out
}

// ---------------------------------------------------------------------
// Programs

/// Local slots of generated methods: 0 holds a `C` object, 1 and 2 ints,
/// 3 an int array.
const OBJ: usize = 0;
const INTS: [usize; 2] = [1, 2];
const ARR: usize = 3;

fn push(rng: &mut ChaCha8Rng) -> JvmInstr {
    JvmInstr::Push(rng.gen_range(-3i64..=3).into())
}

fn int_local(rng: &mut ChaCha8Rng) -> usize {
    *INTS.choose(rng).unwrap()
}

/// A stack-neutral straight-line block.
fn plain_block(rng: &mut ChaCha8Rng) -> Vec<JvmInstr> {
    use JvmInstr::*;
    let ops = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];
    match rng.gen_range(0..11) {
        0 => vec![push(rng), Store(int_local(rng))],
        1 => vec![Load(int_local(rng)), Pop],
        2 => vec![Load(int_local(rng)), Load(int_local(rng)), Binop(*ops.choose(rng).unwrap()), Store(int_local(rng))],
        3 => vec![push(rng), push(rng), Swap, Pop, Store(int_local(rng))],
        4 => vec![New("C".into()), Store(OBJ)],
        5 => vec![Load(OBJ), Getfield("f".into()), Store(int_local(rng))],
        6 => vec![Load(OBJ), Load(int_local(rng)), Putfield(["f", "g"].choose(rng).unwrap().to_string())],
        7 => vec![Push(2.into()), Newarray(Kind::Int), Store(ARR)],
        8 => vec![Load(ARR), Arraylength, Store(int_local(rng))],
        9 => vec![Load(ARR), Push(0.into()), Arrayload, Store(int_local(rng))],
        _ => vec![Load(OBJ), Invoke("callee".into()), Store(int_local(rng))],
    }
}

enum Block {
    Plain(Vec<JvmInstr>),
    /// `load x; ifeq` to the start of block `target`.
    Branch(usize, usize),
    Goto(usize),
}

fn callee() -> JvmMethod {
    JvmMethod {
        id: "callee".into(),
        code: vec![JvmInstr::Push(1.into()), JvmInstr::Return],
        n_locals: 1,
        max_stack: 1,
        slot_kinds: BTreeMap::from([(0, SlotKind::Obj("C".into()))]),
        ..Default::default()
    }
}

fn random_label(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let stem = ["l", "loop", "exit", "h", "join", "tail"].choose(rng).unwrap();
        let name = format!("{stem}{}", rng.gen_range(0..100));
        if used.insert(name.clone()) {
            return name;
        }
    }
}

/// A method of `blocks` blocks ending in a return or a throw, with an
/// optional handler. Jumps go to block starts, where the stack is empty.
fn method(rng: &mut ChaCha8Rng, id: &str, blocks: usize) -> JvmMethod {
    use JvmInstr::*;
    let mut shape: Vec<Block> = Vec::new();
    for b in 0..blocks {
        shape.push(match rng.gen_range(0..6) {
            0 => Block::Branch(int_local(rng), rng.gen_range(0..=blocks)),
            1 if b + 1 < blocks => Block::Goto(rng.gen_range(0..=blocks)),
            _ => Block::Plain(plain_block(rng)),
        });
    }
    let lens: Vec<usize> = shape
        .iter()
        .map(|b| match b {
            Block::Plain(c) => c.len(),
            Block::Branch(..) => 2,
            Block::Goto(_) => 1,
        })
        .collect();
    let mut starts = vec![1];
    for l in &lens {
        starts.push(starts.last().unwrap() + l);
    }
    // Block `blocks` is the terminator.
    let mut code = Vec::new();
    for b in &shape {
        match b {
            Block::Plain(c) => code.extend(c.iter().cloned()),
            Block::Branch(x, t) => code.extend([Load(*x), Ifeq(starts[*t])]),
            Block::Goto(t) => code.push(Goto(starts[*t])),
        }
    }
    let throws = rng.gen_bool(0.3);
    if throws {
        code.extend([New("E".into()), Throw]);
    } else {
        code.extend([Load(int_local(rng)), Return]);
    }
    let mut m = JvmMethod {
        id: id.to_string(),
        n_locals: 4 + rng.gen_range(0..=1),
        max_stack: 3,
        nb_arguments: rng.gen_range(0..=3),
        slot_kinds: BTreeMap::from([
            (OBJ, SlotKind::Obj("C".into())),
            (1, SlotKind::Int),
            (2, SlotKind::Int),
            (ARR, SlotKind::Array(Kind::Int)),
        ]),
        ..Default::default()
    };
    if throws {
        m.class_analysis.insert(code.len(), BTreeSet::from(["E".to_string()]));
    }
    if rng.gen_bool(0.5) {
        let start = rng.gen_range(1..code.len());
        let end = rng.gen_range(start + 1..=code.len() + 1);
        let target = code.len() + 1;
        code.extend([Pop, Push(0.into()), Return]);
        let class = if rng.gen_bool(0.5) { NP.to_string() } else { "E".to_string() };
        m.handlers.push(Handler { start, end, target, class });
    }
    if rng.gen_bool(0.3) {
        m.exc_analysis = BTreeSet::from([NP.to_string(), "E".to_string()]);
    }
    m.code = code;
    let mut used = BTreeSet::new();
    let mut targets: BTreeSet<usize> = m
        .code
        .iter()
        .filter_map(|i| match i {
            Ifeq(t) | Goto(t) => Some(*t),
            _ => None,
        })
        .collect();
    targets.extend(m.handlers.iter().map(|h| h.target));
    for t in targets {
        if rng.gen_bool(0.8) {
            m.labels.insert(t, random_label(rng, &mut used));
        }
    }
    if rng.gen_bool(0.3) {
        let p = rng.gen_range(1..=m.code.len());
        m.labels.entry(p).or_insert_with(|| random_label(rng, &mut used));
    }
    m
}

fn method_policy(rng: &mut ChaCha8Rng, lat: &Lattice, m: &JvmMethod) -> MethodPolicy {
    let ka = (0..m.n_locals)
        .map(|x| {
            if x == ARR {
                ExtLevel::array(level(rng, lat), ExtLevel::Simple(level(rng, lat)))
            } else {
                ExtLevel::Simple(level(rng, lat))
            }
        })
        .collect();
    let mut kr = BTreeMap::from([(Tag::Norm, level(rng, lat))]);
    for c in [NP, "E"] {
        if rng.gen_bool(0.7) {
            kr.insert(Tag::exc(c), level(rng, lat));
        }
    }
    MethodPolicy { ka, kh: level(rng, lat), kr }
}

/// A random valid JVM program: one callee plus one to three generated
/// methods, random policies and a random declared lattice.
pub fn jvm_program(rng: &mut ChaCha8Rng) -> JvmProgram {
    loop {
        let lat = pick_lattice(rng);
        let mut classes = heap_classes();
        classes.insert("E".into(), ClassDecl { fields: vec![] });
        let mut methods = vec![callee()];
        for k in 0..rng.gen_range(1..=3) {
            let blocks = rng.gen_range(1..=6);
            methods.push(method(rng, &format!("m{k}"), blocks));
        }
        let mut policy = ProgramPolicy::new(&lat);
        policy.kobs = level(rng, &lat);
        for f in ["f", "g", "p"] {
            if rng.gen_bool(0.8) {
                policy.ft.insert(f.into(), ExtLevel::Simple(level(rng, &lat)));
            }
        }
        for m in &methods {
            for recv in 0..rng.gen_range(1..=2) {
                let r = if recv == 0 { lat.bottom() } else { level(rng, &lat) };
                policy.gamma.insert(&m.id, r, method_policy(rng, &lat, m));
            }
            for (pp, ins) in m.code.iter().enumerate() {
                if matches!(ins, JvmInstr::Newarray(_)) && rng.gen_bool(0.5) {
                    policy.at.insert((m.id.clone(), pp + 1), ExtLevel::Simple(level(rng, &lat)));
                }
            }
        }
        let prog = Program { lattice: lat, classes, methods, policy };
        if prog.methods.iter().all(|m| jvm::validate(&prog, m).is_ok()) {
            return prog;
        }
    }
}
