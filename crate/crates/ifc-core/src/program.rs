//! Shared program vocabulary: tags, handlers, class declarations and the
//! program container used by both machines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::lattice::Lattice;
use crate::policy::ProgramPolicy;

/// Program points start at 1.
pub type Pp = usize;

/// Class of the null-pointer exception raised by the machines.
pub const NP: &str = "np";

/// Execution tag: normal flow or an exception class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Norm,
    Exc(String),
}

impl Tag {
    pub fn np() -> Self {
        Tag::Exc(NP.to_string())
    }

    pub fn exc(c: &str) -> Self {
        Tag::Exc(c.to_string())
    }

    pub fn parse(s: &str) -> Tag {
        if s == "Norm" {
            Tag::Norm
        } else {
            Tag::Exc(s.to_string())
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Norm => write!(f, "Norm"),
            Tag::Exc(c) => write!(f, "{c}"),
        }
    }
}

/// One successor edge. `target == None` marks a return point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub tag: Tag,
    pub target: Option<Pp>,
}

impl Edge {
    pub fn norm(t: Pp) -> Self {
        Edge { tag: Tag::Norm, target: Some(t) }
    }
}

/// Exception handler covering `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handler {
    pub start: Pp,
    pub end: Pp,
    pub target: Pp,
    pub class: String,
}

/// First handler in declaration order covering `pp` for exactly `class`.
pub fn find_handler(handlers: &[Handler], pp: Pp, class: &str) -> Option<Pp> {
    handlers.iter().find(|h| h.start <= pp && pp < h.end && h.class == class).map(|h| h.target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Int,
    Ref,
}

impl Kind {
    pub fn parse(s: &str) -> Option<Kind> {
        match s {
            "int" => Some(Kind::Int),
            "ref" => Some(Kind::Ref),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Int => "int",
            Kind::Ref => "ref",
        }
    }
}

/// Shape hint for a local slot, used by input generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotKind {
    Int,
    Obj(String),
    Array(Kind),
}

impl SlotKind {
    pub fn render(&self) -> String {
        match self {
            SlotKind::Int => "int".to_string(),
            SlotKind::Obj(c) => format!("obj {c}"),
            SlotKind::Array(k) => format!("array {}", k.name()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassDecl {
    pub fields: Vec<(String, Kind)>,
}

/// Accessors shared by JVM and DEX methods.
pub trait MethodShape {
    fn id(&self) -> &str;
    fn code_len(&self) -> usize;
    fn handlers(&self) -> &[Handler];
    fn nb_arguments(&self) -> usize;
    fn exc_analysis(&self) -> &BTreeSet<String>;
    /// Number of declared local slots (the domain of `ka`).
    fn n_locals(&self) -> usize;
    fn slot_kinds(&self) -> &BTreeMap<usize, SlotKind>;
}

/// A whole compilation unit: lattice, classes, methods and policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program<M> {
    pub lattice: Lattice,
    pub classes: BTreeMap<String, ClassDecl>,
    pub methods: Vec<M>,
    pub policy: ProgramPolicy,
}

impl<M: MethodShape> Program<M> {
    pub fn method(&self, id: &str) -> Option<&M> {
        self.methods.iter().find(|m| m.id() == id)
    }

    pub fn field_kind(&self, field: &str) -> Option<Kind> {
        self.classes.values().flat_map(|c| c.fields.iter()).find(|(f, _)| f == field).map(|(_, k)| *k)
    }
}
