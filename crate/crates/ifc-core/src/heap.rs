//! Values and the allocation-only heap shared by both machines.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;

use crate::program::{ClassDecl, Kind, Pp, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Loc(pub u32);

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Int(BigInt),
    Loc(Loc),
    Null,
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Int(BigInt::from(n))
    }

    pub fn default_of(kind: Kind) -> Self {
        match kind {
            Kind::Int => Value::int(0),
            Kind::Ref => Value::Null,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Loc(l) => write!(f, "{l}"),
            Value::Null => write!(f, "null"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Object {
    pub class: String,
    pub fields: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayObj {
    pub elems: Vec<Value>,
    /// Creating method and program point, for the array policy.
    pub created_at: (String, Pp),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Object(Object),
    Array(ArrayObj),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Heap {
    pub cells: BTreeMap<Loc, Cell>,
    next: u32,
}

impl Heap {
    pub fn new() -> Self {
        Heap::default()
    }

    pub fn fresh(&self) -> Loc {
        Loc(self.next)
    }

    pub fn alloc(&mut self, cell: Cell) -> Loc {
        let l = self.fresh();
        self.cells.insert(l, cell);
        self.next += 1;
        l
    }

    pub fn get(&self, l: Loc) -> Option<&Cell> {
        self.cells.get(&l)
    }

    pub fn get_mut(&mut self, l: Loc) -> Option<&mut Cell> {
        self.cells.get_mut(&l)
    }

    pub fn contains(&self, l: Loc) -> bool {
        self.cells.contains_key(&l)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn class_of(&self, l: Loc) -> Option<&str> {
        match self.cells.get(&l) {
            Some(Cell::Object(o)) => Some(&o.class),
            _ => None,
        }
    }
}

/// `default(C)`: zero for numeric fields, null for references. Undeclared
/// classes (typically exception classes) have no fields.
pub fn default_object(classes: &BTreeMap<String, ClassDecl>, class: &str) -> Cell {
    let fields = classes
        .get(class)
        .map(|c| c.fields.iter().map(|(f, k)| (f.clone(), Value::default_of(*k))).collect())
        .unwrap_or_default();
    Cell::Object(Object { class: class.to_string(), fields })
}

pub fn default_array(len: usize, kind: Kind, created_at: (String, Pp)) -> Cell {
    Cell::Array(ArrayObj { elems: vec![Value::default_of(kind); len], created_at })
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Normal(Value),
    /// Uncaught exception; the location holds the exception object.
    Exception(Loc),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Final {
    pub outcome: Outcome,
    pub heap: Heap,
}

impl Final {
    pub fn tag(&self) -> Tag {
        match &self.outcome {
            Outcome::Normal(_) => Tag::Norm,
            Outcome::Exception(l) => Tag::Exc(self.heap.class_of(*l).unwrap_or("?").to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("fuel exhausted")]
    FuelExhausted,
    #[error("machine error at {method}:{pp}: {msg}")]
    Machine { method: String, pp: Pp, msg: String },
}
