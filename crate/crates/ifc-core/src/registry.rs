//! Execution backends behind one trait, selected by name.

use std::collections::BTreeMap;

use crate::dex::{machine as dexm, DexProgram};
use crate::heap::{Final, Heap, RunError, Value};
use crate::jvm::{machine as jvmm, JvmProgram};
use crate::lattice::Lattice;
use crate::policy::ProgramPolicy;
use crate::program::{ClassDecl, MethodShape, SlotKind};
use crate::translator::compile_program;

/// What the drivers need to know about a method to build inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodMeta {
    pub n_locals: usize,
    pub slot_kinds: BTreeMap<usize, SlotKind>,
}

pub trait Machine {
    fn name(&self) -> &'static str;
    fn lattice(&self) -> &Lattice;
    fn classes(&self) -> &BTreeMap<String, ClassDecl>;
    /// Policies as keyed for this machine's program points.
    fn policy(&self) -> &ProgramPolicy;
    fn method(&self, id: &str) -> Option<MethodMeta>;
    /// Runs `id` from its entry with the given locals.
    fn run(&self, id: &str, locals: &[Value], heap: Heap, fuel: u64) -> Result<Final, RunError>;
}

fn meta<M: MethodShape>(m: &M) -> MethodMeta {
    MethodMeta { n_locals: m.n_locals(), slot_kinds: m.slot_kinds().clone() }
}

fn unknown(id: &str) -> RunError {
    RunError::Machine { method: id.to_string(), pp: 0, msg: "no such method".into() }
}

pub struct JvmBackend(pub JvmProgram);

impl Machine for JvmBackend {
    fn name(&self) -> &'static str {
        "jvm"
    }
    fn lattice(&self) -> &Lattice {
        &self.0.lattice
    }
    fn classes(&self) -> &BTreeMap<String, ClassDecl> {
        &self.0.classes
    }
    fn policy(&self) -> &ProgramPolicy {
        &self.0.policy
    }
    fn method(&self, id: &str) -> Option<MethodMeta> {
        self.0.method(id).map(meta)
    }
    fn run(&self, id: &str, locals: &[Value], heap: Heap, fuel: u64) -> Result<Final, RunError> {
        let m = self.0.method(id).ok_or_else(|| unknown(id))?;
        jvmm::run(&self.0, m, jvmm::entry_locals(m, locals), heap, fuel)
    }
}

pub struct DexBackend(pub DexProgram);

impl Machine for DexBackend {
    fn name(&self) -> &'static str {
        "dex"
    }
    fn lattice(&self) -> &Lattice {
        &self.0.lattice
    }
    fn classes(&self) -> &BTreeMap<String, ClassDecl> {
        &self.0.classes
    }
    fn policy(&self) -> &ProgramPolicy {
        &self.0.policy
    }
    fn method(&self, id: &str) -> Option<MethodMeta> {
        self.0.method(id).map(meta)
    }
    fn run(&self, id: &str, locals: &[Value], heap: Heap, fuel: u64) -> Result<Final, RunError> {
        let m = self.0.method(id).ok_or_else(|| unknown(id))?;
        dexm::run(&self.0, m, dexm::entry_registers(m, locals), heap, fuel)
    }
}

/// A loaded compilation unit in either language.
#[derive(Debug, Clone)]
pub enum Unit {
    Jvm(JvmProgram),
    Dex(DexProgram),
}

pub type Factory = fn(&Unit) -> Result<Box<dyn Machine>, String>;

fn jvm_factory(u: &Unit) -> Result<Box<dyn Machine>, String> {
    match u {
        Unit::Jvm(p) => Ok(Box::new(JvmBackend(p.clone()))),
        Unit::Dex(_) => Err("the jvm machine cannot run DEX code".into()),
    }
}

fn dex_factory(u: &Unit) -> Result<Box<dyn Machine>, String> {
    match u {
        Unit::Dex(p) => Ok(Box::new(DexBackend(p.clone()))),
        Unit::Jvm(p) => {
            compile_program(p).map(|c| Box::new(DexBackend(c.program)) as Box<dyn Machine>).map_err(|e| e.to_string())
        }
    }
}

/// Name-indexed machine factories.
pub struct Registry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry { factories: BTreeMap::new() };
        r.register("jvm", jvm_factory);
        r.register("dex", dex_factory);
        r
    }
}

impl Registry {
    pub fn register(&mut self, name: &'static str, f: Factory) {
        self.factories.insert(name, f);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    /// Builds the named machine for `unit`. A JVM unit is compiled first
    /// when the DEX machine is requested.
    pub fn instantiate(&self, name: &str, unit: &Unit) -> Result<Box<dyn Machine>, String> {
        let f = self.factories.get(name).ok_or_else(|| {
            format!("unknown machine `{name}` (expected one of: {})", self.names().collect::<Vec<_>>().join(", "))
        })?;
        f(unit)
    }
}
