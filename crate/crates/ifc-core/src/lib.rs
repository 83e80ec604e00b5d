//! Information-flow type checking for a JVM bytecode subset and a DEX
//! register-machine subset, with a JVM-to-DEX compiler that carries
//! typing certificates across, and empirical non-interference testing.

pub mod cdr;
pub mod dex;
pub mod formats;
pub mod heap;
pub mod jvm;
pub mod lattice;
pub mod ni;
pub mod policy;
pub mod program;
pub mod registry;
pub mod translator;
pub mod typing;
