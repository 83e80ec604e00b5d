//! Line-oriented text formats for units, certificates and address maps.
//!
//! Parsers stop at the first problem and report it as a [`Diagnostic`]
//! with a 1-based line and column. Writers produce a canonical form that
//! the parsers read back to an equal value; a canonical file therefore
//! survives a parse/write cycle byte for byte. `#` starts a comment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_bigint::BigInt;

use crate::cdr::Cdr;
use crate::dex::checker::{DexCertificate, RegTyping};
use crate::dex::{self, DexInstr, DexMethod, DexProgram, Reg};
use crate::jvm::checker::JvmCertificate;
use crate::jvm::{self, BinOp, JvmInstr, JvmMethod, JvmProgram};
use crate::lattice::{ExtLevel, Lattice, Level, StackType};
use crate::policy::{MethodPolicy, ProgramPolicy};
use crate::program::{ClassDecl, Handler, Kind, Pp, Program, SlotKind, Tag};
use crate::registry::Unit;
use crate::translator::{AddressMap, AuxKind, JvmEdge, Origin};
use crate::typing::SecEnv;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {col}: {msg}")]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

pub type ParseResult<T> = Result<T, Diagnostic>;

// ---------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, Copy)]
struct Tok<'a> {
    line: usize,
    col: usize,
    text: &'a str,
}

impl<'a> Tok<'a> {
    fn diag(&self, msg: impl Into<String>) -> Diagnostic {
        Diagnostic { line: self.line, col: self.col, msg: msg.into() }
    }

    fn err<T>(&self, msg: impl Into<String>) -> ParseResult<T> {
        Err(self.diag(msg))
    }

    fn number(&self, what: &str) -> ParseResult<usize> {
        self.text.parse().map_err(|_| self.diag(format!("expected {what}, found `{}`", self.text)))
    }

    /// Token text after a fixed prefix such as `ka=`.
    fn after(&self, prefix: &str) -> Option<Tok<'a>> {
        self.text.strip_prefix(prefix).map(|rest| Tok { line: self.line, col: self.col + prefix.len(), text: rest })
    }
}

struct Line<'a> {
    no: usize,
    width: usize,
    toks: Vec<Tok<'a>>,
}

impl<'a> Line<'a> {
    fn head(&self) -> Tok<'a> {
        self.toks[0]
    }

    fn arg(&self, i: usize, what: &str) -> ParseResult<Tok<'a>> {
        self.toks.get(i).copied().ok_or_else(|| Diagnostic {
            line: self.no,
            col: self.width + 1,
            msg: format!("missing {what}"),
        })
    }

    /// Fails when the line has more than `n` tokens.
    fn at_most(&self, n: usize) -> ParseResult<()> {
        match self.toks.get(n) {
            Some(t) => t.err(format!("unexpected `{}`", t.text)),
            None => Ok(()),
        }
    }
}

fn lex(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let code = raw.split('#').next().unwrap_or("");
        let mut toks = Vec::new();
        let mut start = None;
        for (pos, ch) in code.char_indices().chain(std::iter::once((code.len(), ' '))) {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    toks.push(Tok { line: i + 1, col: s + 1, text: &code[s..pos] });
                    start = None;
                }
                (false, None) => start = Some(pos),
                _ => {}
            }
        }
        if !toks.is_empty() {
            out.push(Line { no: i + 1, width: code.trim_end().len(), toks });
        }
    }
    out
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

/// Splits on commas outside brackets and braces.
fn split_top(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn ext(lat: &Lattice, t: &Tok, s: &str) -> ParseResult<ExtLevel> {
    lat.parse_ext(s).map_err(|e| t.diag(e.to_string()))
}

fn level(lat: &Lattice, t: &Tok) -> ParseResult<Level> {
    lat.level(t.text).map_err(|e| t.diag(e.to_string()))
}

fn bracketed<'s>(t: &Tok, s: &'s str, open: char, close: char) -> ParseResult<&'s str> {
    s.strip_prefix(open)
        .and_then(|r| r.strip_suffix(close))
        .ok_or_else(|| t.diag(format!("expected `{open}...{close}`, found `{s}`")))
}

fn ext_list(lat: &Lattice, t: &Tok, s: &str) -> ParseResult<Vec<ExtLevel>> {
    split_top(bracketed(t, s, '[', ']')?).into_iter().map(|item| ext(lat, t, item)).collect()
}

fn render_list(lat: &Lattice, items: &[ExtLevel]) -> String {
    let parts: Vec<String> = items.iter().map(|e| lat.render_ext(e)).collect();
    format!("[{}]", parts.join(","))
}

// ---------------------------------------------------------------------
// Lattices and policies

fn parse_lattice(line: &Line) -> ParseResult<Lattice> {
    let mut names = Vec::new();
    let mut edges = Vec::new();
    let mut in_edges = false;
    for t in &line.toks[1..] {
        if t.text == ":" && !in_edges {
            in_edges = true;
        } else if in_edges {
            let (a, b) =
                t.text.split_once('<').ok_or_else(|| t.diag(format!("expected `lower<upper`, found `{}`", t.text)))?;
            edges.push((a.to_string(), b.to_string()));
        } else if is_ident(t.text) {
            names.push(t.text.to_string());
        } else {
            return t.err(format!("invalid level name `{}`", t.text));
        }
    }
    Lattice::from_hasse(&names, &edges).map_err(|e| line.head().diag(e.to_string()))
}

pub fn write_lattice(lat: &Lattice) -> String {
    let mut s = format!(".lattice {}", lat.names().join(" "));
    let edges = lat.hasse_edges();
    if !edges.is_empty() {
        let rendered: Vec<String> = edges.iter().map(|(a, b)| format!("{}<{}", lat.name(*a), lat.name(*b))).collect();
        write!(s, " : {}", rendered.join(" ")).unwrap();
    }
    s
}

fn parse_policy(lat: &Lattice, line: &Line) -> ParseResult<(Level, MethodPolicy)> {
    let mut recv = lat.bottom();
    let (mut ka, mut kh, mut kr) = (None, None, None);
    for t in &line.toks[1..] {
        if let Some(v) = t.after("recv=") {
            recv = level(lat, &v)?;
        } else if let Some(v) = t.after("ka=") {
            ka = Some(ext_list(lat, &v, v.text)?);
        } else if let Some(v) = t.after("kh=") {
            kh = Some(level(lat, &v)?);
        } else if let Some(v) = t.after("kr=") {
            let mut map = BTreeMap::new();
            for item in split_top(bracketed(&v, v.text, '{', '}')?) {
                let (tag, k) =
                    item.split_once(':').ok_or_else(|| v.diag(format!("expected `tag:level`, found `{item}`")))?;
                let k = lat.level(k.trim()).map_err(|e| v.diag(e.to_string()))?;
                if map.insert(Tag::parse(tag.trim()), k).is_some() {
                    return v.err(format!("duplicate kr entry `{}`", tag.trim()));
                }
            }
            kr = Some(map);
        } else {
            return t.err(format!("unknown policy field `{}`", t.text));
        }
    }
    let missing = |what: &str| line.head().diag(format!("policy lacks `{what}=`"));
    Ok((
        recv,
        MethodPolicy {
            ka: ka.ok_or_else(|| missing("ka"))?,
            kh: kh.ok_or_else(|| missing("kh"))?,
            kr: kr.ok_or_else(|| missing("kr"))?,
        },
    ))
}

fn write_policy(lat: &Lattice, recv: Level, p: &MethodPolicy) -> String {
    let kr: Vec<String> = p.kr.iter().map(|(t, k)| format!("{t}:{}", lat.name(*k))).collect();
    format!(
        ".policy recv={} ka={} kh={} kr={{{}}}",
        lat.name(recv),
        render_list(lat, &p.ka),
        lat.name(p.kh),
        kr.join(",")
    )
}

// ---------------------------------------------------------------------
// Units

#[derive(Clone, Copy, PartialEq, Eq)]
enum Dialect {
    Jvm,
    Dex,
}

impl Dialect {
    fn name(self) -> &'static str {
        match self {
            Dialect::Jvm => "jvm",
            Dialect::Dex => "dex",
        }
    }

    fn size_directive(self) -> &'static str {
        match self {
            Dialect::Jvm => ".stack",
            Dialect::Dex => ".registers",
        }
    }
}

/// A method as read, before instructions and targets are resolved.
struct RawMethod<'a> {
    name: Tok<'a>,
    args: usize,
    locals: Option<usize>,
    size: Option<usize>,
    slot_kinds: BTreeMap<usize, SlotKind>,
    handlers: Vec<([Tok<'a>; 3], String)>,
    class_analysis: Vec<(Tok<'a>, BTreeSet<String>)>,
    exc_analysis: BTreeSet<String>,
    policies: Vec<(Tok<'a>, Level, MethodPolicy)>,
    newarrays: Vec<(Tok<'a>, ExtLevel)>,
    code: Vec<Vec<Tok<'a>>>,
    labels: BTreeMap<String, (Pp, usize)>,
}

impl<'a> RawMethod<'a> {
    fn new(name: Tok<'a>) -> Self {
        RawMethod {
            name,
            args: 0,
            locals: None,
            size: None,
            slot_kinds: BTreeMap::new(),
            handlers: Vec::new(),
            class_analysis: Vec::new(),
            exc_analysis: BTreeSet::new(),
            policies: Vec::new(),
            newarrays: Vec::new(),
            code: Vec::new(),
            labels: BTreeMap::new(),
        }
    }

    /// A label or a numeric program point in `1..=limit`.
    fn target(&self, t: &Tok, limit: usize) -> ParseResult<Pp> {
        let pp = if t.text.bytes().all(|b| b.is_ascii_digit()) {
            t.number("program point")?
        } else {
            match self.labels.get(t.text) {
                Some((pp, _)) => *pp,
                None => return t.err(format!("unknown label `{}`", t.text)),
            }
        };
        if pp == 0 || pp > limit {
            return t.err(format!("program point {pp} is outside 1..={limit}"));
        }
        Ok(pp)
    }

    fn label_map(&self) -> BTreeMap<Pp, String> {
        self.labels.iter().map(|(l, (pp, _))| (*pp, l.clone())).collect()
    }
}

struct Header {
    dialect: Dialect,
    lattice: Lattice,
    classes: BTreeMap<String, ClassDecl>,
    policy: ProgramPolicy,
}

fn parse_slot_kind(line: &Line) -> ParseResult<(usize, SlotKind)> {
    let slot = line.arg(1, "slot index")?.number("slot index")?;
    let kind = line.arg(2, "slot kind")?;
    let sk = match kind.text {
        "int" => {
            line.at_most(3)?;
            SlotKind::Int
        }
        "obj" => {
            line.at_most(4)?;
            SlotKind::Obj(line.arg(3, "class name")?.text.to_string())
        }
        "array" => {
            line.at_most(4)?;
            let k = line.arg(3, "element kind")?;
            SlotKind::Array(Kind::parse(k.text).ok_or_else(|| k.diag("expected `int` or `ref`"))?)
        }
        other => return kind.err(format!("unknown slot kind `{other}`")),
    };
    Ok((slot, sk))
}

/// Reads the shared unit structure, leaving instruction lines unparsed.
fn parse_structure<'a>(lines: &'a [Line<'a>]) -> ParseResult<(Header, Vec<RawMethod<'a>>)> {
    let first = lines.first().ok_or(Diagnostic { line: 1, col: 1, msg: "empty unit".into() })?;
    if first.head().text != ".unit" {
        return first.head().err("a unit must start with `.unit jvm` or `.unit dex`");
    }
    let d = first.arg(1, "dialect")?;
    let dialect = match d.text {
        "jvm" => Dialect::Jvm,
        "dex" => Dialect::Dex,
        other => return d.err(format!("unknown dialect `{other}`")),
    };
    first.at_most(2)?;

    let mut lattice: Option<Lattice> = None;
    let mut classes = BTreeMap::new();
    let mut ft = BTreeMap::new();
    let mut kobs = None;
    let mut methods: Vec<RawMethod> = Vec::new();
    let mut current: Option<RawMethod> = None;
    let need_lattice = |lat: &Option<Lattice>, t: &Tok| -> ParseResult<Lattice> {
        lat.clone().ok_or_else(|| t.diag("`.lattice` must come first"))
    };

    for line in &lines[1..] {
        let head = line.head();
        if let Some(m) = current.as_mut() {
            match head.text {
                ".end" => {
                    line.at_most(1)?;
                    methods.push(current.take().expect("open method"));
                }
                ".args" => {
                    line.at_most(2)?;
                    m.args = line.arg(1, "argument count")?.number("argument count")?;
                }
                ".locals" => {
                    line.at_most(2)?;
                    m.locals = Some(line.arg(1, "local count")?.number("local count")?);
                }
                d if d == dialect.size_directive() => {
                    line.at_most(2)?;
                    m.size = Some(line.arg(1, "size")?.number("size")?);
                }
                ".local" => {
                    let (slot, sk) = parse_slot_kind(line)?;
                    m.slot_kinds.insert(slot, sk);
                }
                ".handler" => {
                    line.at_most(5)?;
                    let ts = [line.arg(1, "range start")?, line.arg(2, "range end")?, line.arg(3, "handler target")?];
                    m.handlers.push((ts, line.arg(4, "exception class")?.text.to_string()));
                }
                ".classanalysis" => {
                    let at = line.arg(1, "program point")?;
                    m.class_analysis.push((at, line.toks[2..].iter().map(|t| t.text.to_string()).collect()));
                }
                ".excanalysis" => m.exc_analysis.extend(line.toks[1..].iter().map(|t| t.text.to_string())),
                ".policy" => {
                    let lat = need_lattice(&lattice, &head)?;
                    let (recv, p) = parse_policy(&lat, line)?;
                    m.policies.push((head, recv, p));
                }
                ".newarray" => {
                    line.at_most(3)?;
                    let lat = need_lattice(&lattice, &head)?;
                    let at = line.arg(1, "program point")?;
                    let k = line.arg(2, "content level")?;
                    m.newarrays.push((at, ext(&lat, &k, k.text)?));
                }
                d if d.starts_with('.') => return head.err(format!("unexpected `{d}` inside a method")),
                _ => {
                    let mut toks = line.toks.clone();
                    if let Some(label) = head.text.strip_suffix(':') {
                        if !is_ident(label) {
                            return head.err(format!("invalid label `{label}`"));
                        }
                        if let Some((_, prev)) = m.labels.get(label) {
                            return head.err(format!(
                                "duplicate label `{label}`: defined on line {prev} and again on line {}",
                                line.no
                            ));
                        }
                        if toks.len() == 1 {
                            return head.err("a label must be followed by an instruction on the same line");
                        }
                        m.labels.insert(label.to_string(), (m.code.len() + 1, line.no));
                        toks.remove(0);
                    }
                    m.code.push(toks);
                }
            }
            continue;
        }
        match head.text {
            ".lattice" => {
                if lattice.is_some() {
                    return head.err("duplicate `.lattice`");
                }
                lattice = Some(parse_lattice(line)?);
            }
            ".observer" => {
                line.at_most(2)?;
                let lat = need_lattice(&lattice, &head)?;
                kobs = Some(level(&lat, &line.arg(1, "observer level")?)?);
            }
            ".class" => {
                let name = line.arg(1, "class name")?;
                let mut decl = ClassDecl::default();
                for t in &line.toks[2..] {
                    let (f, k) = t.text.split_once(':').ok_or_else(|| t.diag("expected `field:int` or `field:ref`"))?;
                    let k = Kind::parse(k).ok_or_else(|| t.diag(format!("unknown field kind `{k}`")))?;
                    decl.fields.push((f.to_string(), k));
                }
                if classes.insert(name.text.to_string(), decl).is_some() {
                    return name.err(format!("duplicate class `{}`", name.text));
                }
            }
            ".field" => {
                line.at_most(3)?;
                let lat = need_lattice(&lattice, &head)?;
                let f = line.arg(1, "field name")?;
                let k = line.arg(2, "field level")?;
                ft.insert(f.text.to_string(), ext(&lat, &k, k.text)?);
            }
            ".method" => {
                line.at_most(2)?;
                let name = line.arg(1, "method name")?;
                if let Some(prev) = methods.iter().find(|m| m.name.text == name.text) {
                    return name.err(format!("duplicate method `{}` (first on line {})", name.text, prev.name.line));
                }
                current = Some(RawMethod::new(name));
            }
            other => return head.err(format!("unexpected `{other}` outside a method")),
        }
    }
    if let Some(m) = current {
        return m.name.err(format!("method `{}` lacks `.end`", m.name.text));
    }
    let lattice = lattice.ok_or_else(|| first.head().diag("unit has no `.lattice`"))?;
    let mut policy = ProgramPolicy::new(&lattice);
    policy.ft = ft;
    policy.kobs = kobs.unwrap_or(lattice.bottom());
    Ok((Header { dialect, lattice, classes, policy }, methods))
}

/// Attaches the per-method policies and resolves handler and analysis
/// targets. Returns the pieces shared by both method types.
struct Resolved {
    n_locals: usize,
    size: usize,
    handlers: Vec<Handler>,
    class_analysis: BTreeMap<Pp, BTreeSet<String>>,
}

fn resolve_common(header: &mut Header, raw: &RawMethod, dialect: Dialect) -> ParseResult<Resolved> {
    let id = raw.name.text;
    let n = raw.code.len();
    if n == 0 {
        return raw.name.err(format!("method `{id}` has no instructions"));
    }
    let n_locals = raw.locals.ok_or_else(|| raw.name.diag(format!("method `{id}` lacks `.locals`")))?;
    let size = raw.size.ok_or_else(|| raw.name.diag(format!("method `{id}` lacks `{}`", dialect.size_directive())))?;
    let mut handlers = Vec::new();
    for ([s, e, h], class) in &raw.handlers {
        handlers.push(Handler {
            start: raw.target(s, n)?,
            end: raw.target(e, n + 1)?,
            target: raw.target(h, n)?,
            class: class.clone(),
        });
    }
    let mut class_analysis = BTreeMap::new();
    for (t, classes) in &raw.class_analysis {
        class_analysis.insert(raw.target(t, n)?, classes.clone());
    }
    for (t, recv, p) in &raw.policies {
        if p.ka.len() != n_locals {
            return t.err(format!("policy has {} ka entries but the method declares {n_locals} locals", p.ka.len()));
        }
        if header.policy.gamma.entries(id).any(|(k, _)| k == *recv) {
            return t.err(format!("duplicate policy for receiver level {}", header.lattice.name(*recv)));
        }
        header.policy.gamma.insert(id, *recv, p.clone());
    }
    for (t, k) in &raw.newarrays {
        header.policy.at.insert((id.to_string(), raw.target(t, n)?), k.clone());
    }
    Ok(Resolved { n_locals, size, handlers, class_analysis })
}

fn int_literal(t: &Tok) -> ParseResult<BigInt> {
    t.text.parse().map_err(|_| t.diag(format!("expected an integer, found `{}`", t.text)))
}

fn parse_jvm_instr(raw: &RawMethod, toks: &[Tok]) -> ParseResult<JvmInstr> {
    let op = toks[0];
    let arg = |i: usize, what: &str| toks.get(i).copied().ok_or_else(|| op.diag(format!("`{}` needs {what}", op.text)));
    let n = raw.code.len();
    let instr = match op.text {
        "binop" => {
            let o = arg(1, "an operator")?;
            JvmInstr::Binop(BinOp::parse(o.text).ok_or_else(|| o.diag(format!("unknown operator `{}`", o.text)))?)
        }
        "push" => JvmInstr::Push(int_literal(&arg(1, "an integer")?)?),
        "pop" => JvmInstr::Pop,
        "swap" => JvmInstr::Swap,
        "load" => JvmInstr::Load(arg(1, "a local index")?.number("local index")?),
        "store" => JvmInstr::Store(arg(1, "a local index")?.number("local index")?),
        "ifeq" => JvmInstr::Ifeq(raw.target(&arg(1, "a target")?, n)?),
        "goto" => JvmInstr::Goto(raw.target(&arg(1, "a target")?, n)?),
        "return" => JvmInstr::Return,
        "new" => JvmInstr::New(arg(1, "a class")?.text.to_string()),
        "getfield" => JvmInstr::Getfield(arg(1, "a field")?.text.to_string()),
        "putfield" => JvmInstr::Putfield(arg(1, "a field")?.text.to_string()),
        "newarray" => {
            let k = arg(1, "an element kind")?;
            JvmInstr::Newarray(Kind::parse(k.text).ok_or_else(|| k.diag("expected `int` or `ref`"))?)
        }
        "arraylength" => JvmInstr::Arraylength,
        "arrayload" => JvmInstr::Arrayload,
        "arraystore" => JvmInstr::Arraystore,
        "invoke" => JvmInstr::Invoke(arg(1, "a method")?.text.to_string()),
        "throw" => JvmInstr::Throw,
        other => return op.err(format!("unknown JVM instruction `{other}`")),
    };
    let expected = match instr {
        JvmInstr::Pop
        | JvmInstr::Swap
        | JvmInstr::Return
        | JvmInstr::Arraylength
        | JvmInstr::Arrayload
        | JvmInstr::Arraystore
        | JvmInstr::Throw => 1,
        _ => 2,
    };
    match toks.get(expected) {
        Some(t) => t.err(format!("unexpected `{}`", t.text)),
        None => Ok(instr),
    }
}

fn register(t: &Tok) -> ParseResult<Reg> {
    t.text
        .strip_prefix('r')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| t.diag(format!("expected a register like `r3`, found `{}`", t.text)))
}

fn parse_dex_instr(raw: &RawMethod, toks: &[Tok]) -> ParseResult<DexInstr> {
    let op = toks[0];
    let arg = |i: usize| toks.get(i).copied().ok_or_else(|| op.diag(format!("`{}` needs more operands", op.text)));
    let reg = |i: usize| arg(i).and_then(|t| register(&t));
    let n = raw.code.len();
    let (instr, width) = match op.text {
        "binop" => {
            let o = arg(1)?;
            let bop = BinOp::parse(o.text).ok_or_else(|| o.diag(format!("unknown operator `{}`", o.text)))?;
            (DexInstr::Binop(bop, reg(2)?, reg(3)?, reg(4)?), 5)
        }
        "const" => (DexInstr::Const(reg(1)?, int_literal(&arg(2)?)?), 3),
        "move" => (DexInstr::Move(reg(1)?, reg(2)?), 3),
        "ifeq" => (DexInstr::Ifeq(reg(1)?, raw.target(&arg(2)?, n)?), 3),
        "ifneq" => (DexInstr::Ifneq(reg(1)?, raw.target(&arg(2)?, n)?), 3),
        "goto" => (DexInstr::Goto(raw.target(&arg(1)?, n)?), 2),
        "return" => (DexInstr::Return(reg(1)?), 2),
        "new" => (DexInstr::New(reg(1)?, arg(2)?.text.to_string()), 3),
        "iget" => (DexInstr::Iget(reg(1)?, reg(2)?, arg(3)?.text.to_string()), 4),
        "iput" => (DexInstr::Iput(reg(1)?, reg(2)?, arg(3)?.text.to_string()), 4),
        "newarray" => {
            let k = arg(3)?;
            let kind = Kind::parse(k.text).ok_or_else(|| k.diag("expected `int` or `ref`"))?;
            (DexInstr::Newarray(reg(1)?, reg(2)?, kind), 4)
        }
        "arraylength" => (DexInstr::Arraylength(reg(1)?, reg(2)?), 3),
        "aget" => (DexInstr::Aget(reg(1)?, reg(2)?, reg(3)?), 4),
        "aput" => (DexInstr::Aput(reg(1)?, reg(2)?, reg(3)?), 4),
        "invoke" => {
            let callee = arg(1)?.text.to_string();
            let ps = toks[2..].iter().map(register).collect::<ParseResult<Vec<_>>>()?;
            if ps.is_empty() {
                return op.err("`invoke` needs a receiver register");
            }
            (DexInstr::Invoke(callee, ps), toks.len())
        }
        "moveresult" => (DexInstr::Moveresult(reg(1)?), 2),
        "throw" => (DexInstr::Throw(reg(1)?), 2),
        "moveexception" => (DexInstr::Moveexception(reg(1)?), 2),
        other => return op.err(format!("unknown DEX instruction `{other}`")),
    };
    match toks.get(width) {
        Some(t) => t.err(format!("unexpected `{}`", t.text)),
        None => Ok(instr),
    }
}

fn parse_any(text: &str) -> ParseResult<Unit> {
    let lines = lex(text);
    let (mut header, raws) = parse_structure(&lines)?;
    let dialect = header.dialect;
    match dialect {
        Dialect::Jvm => {
            let mut methods = Vec::new();
            for raw in &raws {
                let r = resolve_common(&mut header, raw, dialect)?;
                let code = raw.code.iter().map(|t| parse_jvm_instr(raw, t)).collect::<ParseResult<_>>()?;
                methods.push(JvmMethod {
                    id: raw.name.text.to_string(),
                    code,
                    n_locals: r.n_locals,
                    max_stack: r.size,
                    handlers: r.handlers,
                    class_analysis: r.class_analysis,
                    exc_analysis: raw.exc_analysis.clone(),
                    nb_arguments: raw.args,
                    labels: raw.label_map(),
                    slot_kinds: raw.slot_kinds.clone(),
                });
            }
            let prog = Program { lattice: header.lattice, classes: header.classes, methods, policy: header.policy };
            for (m, raw) in prog.methods.iter().zip(&raws) {
                jvm::validate(&prog, m).map_err(|e| raw.name.diag(e.msg))?;
            }
            Ok(Unit::Jvm(prog))
        }
        Dialect::Dex => {
            let mut methods = Vec::new();
            for raw in &raws {
                let r = resolve_common(&mut header, raw, dialect)?;
                let code = raw.code.iter().map(|t| parse_dex_instr(raw, t)).collect::<ParseResult<_>>()?;
                methods.push(DexMethod {
                    id: raw.name.text.to_string(),
                    code,
                    n_registers: r.size,
                    n_locals: r.n_locals,
                    handlers: r.handlers,
                    class_analysis: r.class_analysis,
                    exc_analysis: raw.exc_analysis.clone(),
                    nb_arguments: raw.args,
                    labels: raw.label_map(),
                    slot_kinds: raw.slot_kinds.clone(),
                });
            }
            let prog = Program { lattice: header.lattice, classes: header.classes, methods, policy: header.policy };
            for (m, raw) in prog.methods.iter().zip(&raws) {
                dex::validate(&prog, m).map_err(|e| raw.name.diag(e.msg))?;
            }
            Ok(Unit::Dex(prog))
        }
    }
}

/// Parses a unit of either dialect, as named by its `.unit` line.
pub fn parse_unit(text: &str) -> ParseResult<Unit> {
    parse_any(text)
}

pub fn parse_jvm(text: &str) -> ParseResult<JvmProgram> {
    match parse_any(text)? {
        Unit::Jvm(p) => Ok(p),
        Unit::Dex(_) => Err(Diagnostic { line: 1, col: 1, msg: "expected a JVM unit, found `.unit dex`".into() }),
    }
}

pub fn parse_dex(text: &str) -> ParseResult<DexProgram> {
    match parse_any(text)? {
        Unit::Dex(p) => Ok(p),
        Unit::Jvm(_) => Err(Diagnostic { line: 1, col: 1, msg: "expected a DEX unit, found `.unit jvm`".into() }),
    }
}

struct MethodView<'a> {
    id: &'a str,
    nb_arguments: usize,
    n_locals: usize,
    size: usize,
    slot_kinds: &'a BTreeMap<usize, SlotKind>,
    handlers: &'a [Handler],
    class_analysis: &'a BTreeMap<Pp, BTreeSet<String>>,
    exc_analysis: &'a BTreeSet<String>,
    labels: &'a BTreeMap<Pp, String>,
}

impl MethodView<'_> {
    fn target(&self, pp: Pp) -> String {
        self.labels.get(&pp).cloned().unwrap_or_else(|| pp.to_string())
    }
}

fn write_header<M>(out: &mut String, dialect: Dialect, prog: &Program<M>) {
    let lat = &prog.lattice;
    writeln!(out, ".unit {}", dialect.name()).unwrap();
    writeln!(out, "{}", write_lattice(lat)).unwrap();
    writeln!(out, ".observer {}", lat.name(prog.policy.kobs)).unwrap();
    for (name, decl) in &prog.classes {
        out.push_str(".class ");
        out.push_str(name);
        for (f, k) in &decl.fields {
            write!(out, " {f}:{}", k.name()).unwrap();
        }
        out.push('\n');
    }
    for (f, k) in &prog.policy.ft {
        writeln!(out, ".field {f} {}", lat.render_ext(k)).unwrap();
    }
}

fn write_method(
    out: &mut String,
    dialect: Dialect,
    lat: &Lattice,
    policy: &ProgramPolicy,
    v: &MethodView,
    code: &[String],
) {
    writeln!(out, "\n.method {}", v.id).unwrap();
    writeln!(out, ".args {}", v.nb_arguments).unwrap();
    writeln!(out, ".locals {}", v.n_locals).unwrap();
    writeln!(out, "{} {}", dialect.size_directive(), v.size).unwrap();
    for (slot, k) in v.slot_kinds {
        writeln!(out, ".local {slot} {}", k.render()).unwrap();
    }
    for h in v.handlers {
        writeln!(out, ".handler {} {} {} {}", v.target(h.start), v.target(h.end), v.target(h.target), h.class).unwrap();
    }
    for (pp, classes) in v.class_analysis {
        let cs: Vec<&str> = classes.iter().map(String::as_str).collect();
        writeln!(out, ".classanalysis {} {}", v.target(*pp), cs.join(" ")).unwrap();
    }
    if !v.exc_analysis.is_empty() {
        let cs: Vec<&str> = v.exc_analysis.iter().map(String::as_str).collect();
        writeln!(out, ".excanalysis {}", cs.join(" ")).unwrap();
    }
    for (recv, p) in policy.gamma.entries(v.id) {
        writeln!(out, "{}", write_policy(lat, recv, p)).unwrap();
    }
    for ((m, pp), k) in &policy.at {
        if m == v.id {
            writeln!(out, ".newarray {} {}", v.target(*pp), lat.render_ext(k)).unwrap();
        }
    }
    for (i, line) in code.iter().enumerate() {
        match v.labels.get(&(i + 1)) {
            Some(l) => writeln!(out, "{l}: {line}").unwrap(),
            None => writeln!(out, "    {line}").unwrap(),
        }
    }
    out.push_str(".end\n");
}

fn jvm_line(v: &MethodView, ins: &JvmInstr) -> String {
    match ins {
        JvmInstr::Ifeq(t) => format!("ifeq {}", v.target(*t)),
        JvmInstr::Goto(t) => format!("goto {}", v.target(*t)),
        other => other.to_string(),
    }
}

fn dex_line(v: &MethodView, ins: &DexInstr) -> String {
    match ins {
        DexInstr::Ifeq(r, t) => format!("ifeq r{r} {}", v.target(*t)),
        DexInstr::Ifneq(r, t) => format!("ifneq r{r} {}", v.target(*t)),
        DexInstr::Goto(t) => format!("goto {}", v.target(*t)),
        other => other.to_string(),
    }
}

pub fn write_jvm(prog: &JvmProgram) -> String {
    let mut out = String::new();
    write_header(&mut out, Dialect::Jvm, prog);
    for m in &prog.methods {
        let v = MethodView {
            id: &m.id,
            nb_arguments: m.nb_arguments,
            n_locals: m.n_locals,
            size: m.max_stack,
            slot_kinds: &m.slot_kinds,
            handlers: &m.handlers,
            class_analysis: &m.class_analysis,
            exc_analysis: &m.exc_analysis,
            labels: &m.labels,
        };
        let code: Vec<String> = m.code.iter().map(|i| jvm_line(&v, i)).collect();
        write_method(&mut out, Dialect::Jvm, &prog.lattice, &prog.policy, &v, &code);
    }
    out
}

pub fn write_dex(prog: &DexProgram) -> String {
    let mut out = String::new();
    write_header(&mut out, Dialect::Dex, prog);
    for m in &prog.methods {
        let v = MethodView {
            id: &m.id,
            nb_arguments: m.nb_arguments,
            n_locals: m.n_locals,
            size: m.n_registers,
            slot_kinds: &m.slot_kinds,
            handlers: &m.handlers,
            class_analysis: &m.class_analysis,
            exc_analysis: &m.exc_analysis,
            labels: &m.labels,
        };
        let code: Vec<String> = m.code.iter().map(|i| dex_line(&v, i)).collect();
        write_method(&mut out, Dialect::Dex, &prog.lattice, &prog.policy, &v, &code);
    }
    out
}

pub fn write_unit(unit: &Unit) -> String {
    match unit {
        Unit::Jvm(p) => write_jvm(p),
        Unit::Dex(p) => write_dex(p),
    }
}

// ---------------------------------------------------------------------
// Certificates

/// A certificate for one method under the policy of one receiver level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertEntry<C> {
    pub method: String,
    pub receiver: Level,
    pub cert: C,
}

fn write_cdr(out: &mut String, cdr: &Cdr) {
    for ((i, tag), region) in &cdr.region {
        write!(out, "region: {i} {tag}").unwrap();
        for j in region {
            write!(out, " {j}").unwrap();
        }
        out.push('\n');
    }
    for ((i, tag), j) in &cdr.jun {
        writeln!(out, "jun: {i} {tag} {j}").unwrap();
    }
}

fn write_se(out: &mut String, lat: &Lattice, se: &SecEnv) {
    out.push_str("se:");
    for (_, k) in se.iter() {
        write!(out, " {}", lat.name(k)).unwrap();
    }
    out.push('\n');
}

pub fn write_jvm_certificates(lat: &Lattice, entries: &[CertEntry<JvmCertificate>]) -> String {
    let mut out = String::new();
    for (n, e) in entries.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        writeln!(out, ".certificate {} {}", e.method, lat.name(e.receiver)).unwrap();
        for (pp, st) in &e.cert.stacks {
            writeln!(out, "S: {pp} {}", render_list(lat, st)).unwrap();
        }
        write_se(&mut out, lat, &e.cert.se);
        write_cdr(&mut out, &e.cert.cdr);
        out.push_str(".end\n");
    }
    out
}

pub fn write_dex_certificates(lat: &Lattice, entries: &[CertEntry<DexCertificate>]) -> String {
    let mut out = String::new();
    for (n, e) in entries.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        writeln!(out, ".certificate {} {}", e.method, lat.name(e.receiver)).unwrap();
        for (pp, rt) in &e.cert.typings {
            writeln!(
                out,
                "RT: {pp} {} ret={} ex={}",
                render_list(lat, &rt.regs),
                lat.render_ext(&rt.ret),
                lat.render_ext(&rt.ex)
            )
            .unwrap();
        }
        write_se(&mut out, lat, &e.cert.se);
        write_cdr(&mut out, &e.cert.cdr);
        out.push_str(".end\n");
    }
    out
}

/// Fields every certificate shares; the per-point states differ.
struct CertBody<S> {
    states: BTreeMap<Pp, S>,
    se: Option<SecEnv>,
    cdr: Cdr,
}

type RawCert<S> = CertEntry<(BTreeMap<Pp, S>, SecEnv, Cdr)>;

fn parse_certificates<S>(
    lat: &Lattice,
    text: &str,
    state_key: &str,
    mut state: impl FnMut(&Line) -> ParseResult<S>,
) -> ParseResult<Vec<RawCert<S>>> {
    let lines = lex(text);
    let mut out = Vec::new();
    let mut open: Option<(Tok, Level, CertBody<S>)> = None;
    for line in &lines {
        let head = line.head();
        let Some((_, _, body)) = open.as_mut() else {
            if head.text != ".certificate" {
                return head.err(format!("expected `.certificate`, found `{}`", head.text));
            }
            line.at_most(3)?;
            let m = line.arg(1, "method name")?;
            let recv = level(lat, &line.arg(2, "receiver level")?)?;
            open = Some((m, recv, CertBody { states: BTreeMap::new(), se: None, cdr: Cdr::default() }));
            continue;
        };
        match head.text {
            ".end" => {
                line.at_most(1)?;
                let (m, recv, body) = open.take().expect("open certificate");
                let se = body.se.ok_or_else(|| m.diag(format!("certificate for `{}` lacks `se:`", m.text)))?;
                out.push(CertEntry { method: m.text.to_string(), receiver: recv, cert: (body.states, se, body.cdr) });
            }
            k if k.strip_suffix(':') == Some(state_key) => {
                let pp = line.arg(1, "program point")?.number("program point")?;
                if body.states.insert(pp, state(line)?).is_some() {
                    return head.err(format!("duplicate {state_key} entry for program point {pp}"));
                }
            }
            "se:" => {
                if body.se.is_some() {
                    return head.err("duplicate `se:`");
                }
                let levels = line.toks[1..].iter().map(|t| level(lat, t)).collect::<ParseResult<Vec<_>>>()?;
                body.se = Some(SecEnv::from_levels(levels));
            }
            "region:" => {
                let i = line.arg(1, "program point")?.number("program point")?;
                let tag = Tag::parse(line.arg(2, "tag")?.text);
                let pps =
                    line.toks[3..].iter().map(|t| t.number("program point")).collect::<ParseResult<BTreeSet<_>>>()?;
                if body.cdr.region.insert((i, tag), pps).is_some() {
                    return head.err(format!("duplicate region for program point {i}"));
                }
            }
            "jun:" => {
                line.at_most(4)?;
                let i = line.arg(1, "program point")?.number("program point")?;
                let tag = Tag::parse(line.arg(2, "tag")?.text);
                let j = line.arg(3, "junction point")?.number("junction point")?;
                if body.cdr.jun.insert((i, tag), j).is_some() {
                    return head.err(format!("duplicate junction for program point {i}"));
                }
            }
            other => return head.err(format!("unexpected `{other}` in a certificate")),
        }
    }
    if let Some((m, _, _)) = open {
        return m.err(format!("certificate for `{}` lacks `.end`", m.text));
    }
    Ok(out)
}

pub fn parse_jvm_certificates(lat: &Lattice, text: &str) -> ParseResult<Vec<CertEntry<JvmCertificate>>> {
    let raw = parse_certificates(lat, text, "S", |line| {
        line.at_most(3)?;
        let t = line.arg(2, "stack type")?;
        let st: StackType = ext_list(lat, &t, t.text)?;
        Ok(st)
    })?;
    Ok(raw
        .into_iter()
        .map(|e| CertEntry {
            method: e.method,
            receiver: e.receiver,
            cert: JvmCertificate { stacks: e.cert.0, se: e.cert.1, cdr: e.cert.2 },
        })
        .collect())
}

pub fn parse_dex_certificates(lat: &Lattice, text: &str) -> ParseResult<Vec<CertEntry<DexCertificate>>> {
    let raw = parse_certificates(lat, text, "RT", |line| {
        line.at_most(5)?;
        let t = line.arg(2, "register levels")?;
        let regs = ext_list(lat, &t, t.text)?;
        let r = line.arg(3, "`ret=`")?;
        let ret = r.after("ret=").ok_or_else(|| r.diag("expected `ret=`"))?;
        let x = line.arg(4, "`ex=`")?;
        let ex = x.after("ex=").ok_or_else(|| x.diag("expected `ex=`"))?;
        Ok(RegTyping { regs, ret: ext(lat, &ret, ret.text)?, ex: ext(lat, &ex, ex.text)? })
    })?;
    Ok(raw
        .into_iter()
        .map(|e| CertEntry {
            method: e.method,
            receiver: e.receiver,
            cert: DexCertificate { typings: e.cert.0, se: e.cert.1, cdr: e.cert.2 },
        })
        .collect())
}

// ---------------------------------------------------------------------
// Address maps

fn write_edge(e: &JvmEdge) -> String {
    let target = e.2.map_or_else(|| "exit".to_string(), |t| t.to_string());
    format!("{}:{}:{target}", e.0, e.1)
}

pub fn write_address_maps(maps: &BTreeMap<String, AddressMap>) -> String {
    let mut out = String::new();
    for (n, (method, amap)) in maps.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        writeln!(out, ".addressmap {method}").unwrap();
        for (i, pps) in &amap.fwd {
            let list: Vec<String> = pps.iter().map(|p| p.to_string()).collect();
            if list.is_empty() {
                writeln!(out, "{i} ->").unwrap();
            } else {
                writeln!(out, "{i} -> {}", list.join(",")).unwrap();
            }
        }
        for (i, e) in &amap.entry {
            if amap.fwd.get(i).and_then(|v| v.first()) != Some(e) {
                writeln!(out, "entry {i} {e}").unwrap();
            }
        }
        for (l, pp) in &amap.block_start {
            writeln!(out, "block {l} {pp}").unwrap();
        }
        for (pp, kind, edges) in amap.aux_points() {
            write!(out, "aux {pp} {}", kind.name()).unwrap();
            for e in edges {
                write!(out, " {}", write_edge(e)).unwrap();
            }
            out.push('\n');
        }
        out.push_str(".end\n");
    }
    out
}

fn parse_edge(t: &Tok) -> ParseResult<JvmEdge> {
    let bad = || t.diag(format!("expected `source:tag:target`, found `{}`", t.text));
    let mut parts = t.text.split(':');
    let (Some(src), Some(tag), Some(target), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let src = src.parse().map_err(|_| bad())?;
    let target = match target {
        "exit" => None,
        n => Some(n.parse().map_err(|_| bad())?),
    };
    Ok((src, Tag::parse(tag), target))
}

pub fn parse_address_maps(text: &str) -> ParseResult<BTreeMap<String, AddressMap>> {
    let lines = lex(text);
    let mut out = BTreeMap::new();
    let mut open: Option<(Tok, AddressMap, BTreeMap<Pp, Origin>)> = None;
    for line in &lines {
        let head = line.head();
        let Some((_, amap, origins)) = open.as_mut() else {
            if head.text != ".addressmap" {
                return head.err(format!("expected `.addressmap`, found `{}`", head.text));
            }
            line.at_most(2)?;
            open = Some((line.arg(1, "method name")?, AddressMap::default(), BTreeMap::new()));
            continue;
        };
        let mut claim = |pp: Pp, o: Origin, t: &Tok| -> ParseResult<()> {
            if pp == 0 || origins.insert(pp, o).is_some() {
                return t.err(format!("DEX program point {pp} is claimed twice"));
            }
            Ok(())
        };
        match head.text {
            ".end" => {
                line.at_most(1)?;
                let (name, mut amap, origins) = open.take().expect("open map");
                for (i, pps) in &amap.fwd {
                    if let Some(first) = pps.first() {
                        amap.entry.entry(*i).or_insert(*first);
                    }
                }
                for (k, (pp, o)) in origins.into_iter().enumerate() {
                    if pp != k + 1 {
                        return head.err(format!("DEX program point {} has no origin", k + 1));
                    }
                    amap.origin.push(o);
                }
                out.insert(name.text.to_string(), amap);
            }
            "entry" => {
                line.at_most(3)?;
                let i = line.arg(1, "JVM program point")?.number("JVM program point")?;
                let e = line.arg(2, "DEX program point")?.number("DEX program point")?;
                amap.entry.insert(i, e);
            }
            "block" => {
                line.at_most(3)?;
                let l = line.arg(1, "block label")?.number("block label")?;
                let pp = line.arg(2, "DEX program point")?.number("DEX program point")?;
                amap.block_start.insert(l, pp);
            }
            "aux" => {
                let pp_tok = line.arg(1, "DEX program point")?;
                let pp = pp_tok.number("DEX program point")?;
                let k = line.arg(2, "auxiliary kind")?;
                let kind =
                    AuxKind::parse(k.text).ok_or_else(|| k.diag(format!("unknown auxiliary kind `{}`", k.text)))?;
                let edges = line.toks[3..].iter().map(parse_edge).collect::<ParseResult<Vec<_>>>()?;
                claim(pp, Origin::Aux(kind, edges), &pp_tok)?;
            }
            _ => {
                let i = head.number("JVM program point")?;
                let arrow = line.arg(1, "`->`")?;
                if arrow.text != "->" {
                    return arrow.err(format!("expected `->`, found `{}`", arrow.text));
                }
                line.at_most(3)?;
                let mut pps = Vec::new();
                if let Some(list) = line.toks.get(2) {
                    for part in list.text.split(',') {
                        let pp = part.parse().map_err(|_| list.diag(format!("bad DEX program point `{part}`")))?;
                        claim(pp, Origin::Instr(i), list)?;
                        pps.push(pp);
                    }
                }
                if amap.fwd.insert(i, pps).is_some() {
                    return head.err(format!("JVM program point {i} is mapped twice"));
                }
            }
        }
    }
    if let Some((name, _, _)) = open {
        return name.err(format!("address map for `{}` lacks `.end`", name.text));
    }
    Ok(out)
}
