//! `ifc`: check, compile, run and test JVM and DEX units.
//!
//! Exit status: 0 when everything checked is accepted, 1 when something
//! is rejected or a test finds a counterexample, 2 on usage or parse
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ifc_core::cdr::{check_soap, compute_cdr};
use ifc_core::dex::checker as dexc;
use ifc_core::dex::DexProgram;
use ifc_core::formats::{self, CertEntry};
use ifc_core::heap::{Heap, RunError, Value};
use ifc_core::jvm::checker as jvmc;
use ifc_core::jvm::machine::DEFAULT_FUEL;
use ifc_core::jvm::JvmProgram;
use ifc_core::lattice::{Lattice, Level};
use ifc_core::ni::{self, GenConfig, NiConfig, NiVerdict};
use ifc_core::policy::MethodPolicy;
use ifc_core::program::{MethodShape, Program};
use ifc_core::registry::{Registry, Unit};
use ifc_core::translator::{compile_program, translate_certificate};
use ifc_core::typing::Verdict;

#[derive(Parser)]
#[command(name = "ifc", version, about = "Information-flow checking for JVM and DEX units")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a unit and print it in canonical form.
    Fmt { file: PathBuf },
    /// Type-check a JVM unit, inferring certificates unless one is given.
    CheckJvm {
        file: PathBuf,
        /// Check these certificates instead of inferring.
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
    },
    /// Type-check a DEX unit against certificates or by inference.
    CheckDex {
        file: PathBuf,
        #[arg(long, conflicts_with = "infer", required_unless_present = "infer")]
        cert: Option<PathBuf>,
        #[arg(long)]
        infer: bool,
        #[arg(long)]
        method: Option<String>,
    },
    /// Compile a JVM unit to DEX.
    Compile {
        file: PathBuf,
        /// DEX output; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Where to write the address maps.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Where to write translated certificates of typable methods.
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Run a method of a JVM unit.
    RunJvm(RunArgs),
    /// Run a method of a DEX unit.
    RunDex(RunArgs),
    /// Compute the control-dependence regions of every method and check
    /// the SOAP properties.
    Soap {
        file: PathBuf,
        #[arg(long)]
        method: Option<String>,
    },
    /// Randomized non-interference test of one method.
    NiTest {
        file: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observer level; the unit's `.observer` when absent.
        #[arg(long)]
        kobs: Option<String>,
        /// Receiver level selecting the method policy; bottom when absent.
        #[arg(long)]
        receiver: Option<String>,
        /// Execution backend; the unit's own dialect when absent. A JVM
        /// unit is compiled first for `dex`.
        #[arg(long)]
        machine: Option<String>,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
    /// Randomized test that a method leaves fields below its heap-effect
    /// level untouched.
    SideEffects {
        file: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        receiver: Option<String>,
        #[arg(long)]
        machine: Option<String>,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
    /// Compile, translate certificates, re-check on DEX and compare runs.
    Preserve {
        file: PathBuf,
        #[arg(long, default_value_t = 200)]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    file: PathBuf,
    #[arg(long)]
    entry: String,
    /// Initial locals from slot 0: integers or `null`.
    #[arg(long = "arg", allow_hyphen_values = true)]
    args: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_FUEL)]
    fuel: u64,
}

/// Error that maps to exit status 2.
struct UsageError(String);

impl<E: std::fmt::Display> From<E> for UsageError {
    fn from(e: E) -> Self {
        UsageError(e.to_string())
    }
}

type CmdResult = Result<bool, UsageError>;

fn read(path: &Path) -> Result<String, UsageError> {
    fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

fn load_unit(path: &Path) -> Result<Unit, UsageError> {
    formats::parse_unit(&read(path)?).map_err(|d| UsageError(format!("{}: {d}", path.display())))
}

fn load_jvm(path: &Path) -> Result<JvmProgram, UsageError> {
    formats::parse_jvm(&read(path)?).map_err(|d| UsageError(format!("{}: {d}", path.display())))
}

fn load_dex(path: &Path) -> Result<DexProgram, UsageError> {
    formats::parse_dex(&read(path)?).map_err(|d| UsageError(format!("{}: {d}", path.display())))
}

fn write_out(path: &Path, text: &str) -> Result<(), UsageError> {
    fs::write(path, text).map_err(|e| UsageError(format!("{}: {e}", path.display())))
}

fn selected<'a, M: MethodShape>(prog: &'a Program<M>, only: &Option<String>) -> Result<Vec<&'a M>, UsageError> {
    match only {
        None => Ok(prog.methods.iter().collect()),
        Some(id) => prog.method(id).map(|m| vec![m]).ok_or_else(|| UsageError(format!("no method `{id}`"))),
    }
}

fn report(lat: &Lattice, method: &str, recv: Level, verdict: &Verdict) -> bool {
    println!("{method} [recv={}]: {verdict}", lat.name(recv));
    verdict.is_typable()
}

fn policy_entry<'a, M>(prog: &'a Program<M>, method: &str, recv: Level) -> Result<&'a MethodPolicy, UsageError> {
    prog.policy
        .gamma
        .entries(method)
        .find(|(k, _)| *k == recv)
        .map(|(_, p)| p)
        .ok_or_else(|| UsageError(format!("`{method}` has no policy for receiver level {}", prog.lattice.name(recv))))
}

fn check_cert_shape(method: &str, code_len: usize, se_len: usize) -> Result<(), UsageError> {
    if code_len != se_len {
        return Err(UsageError(format!("certificate for `{method}` has {se_len} se entries, code has {code_len}")));
    }
    Ok(())
}

fn check_jvm(file: &Path, cert: &Option<PathBuf>, only: &Option<String>) -> CmdResult {
    let prog = load_jvm(file)?;
    let lat = &prog.lattice;
    let mut ok = true;
    match cert {
        Some(path) => {
            let entries = formats::parse_jvm_certificates(lat, &read(path)?)
                .map_err(|d| UsageError(format!("{}: {d}", path.display())))?;
            for e in entries.iter().filter(|e| only.as_ref().is_none_or(|m| *m == e.method)) {
                let m = prog.method(&e.method).ok_or_else(|| UsageError(format!("no method `{}`", e.method)))?;
                check_cert_shape(&m.id, m.code.len(), e.cert.se.len())?;
                let sgn = policy_entry(&prog, &m.id, e.receiver)?;
                ok &= report(lat, &m.id, e.receiver, &jvmc::check(&prog, m, sgn, &e.cert));
            }
        }
        None => {
            for m in selected(&prog, only)? {
                let entries: Vec<_> = prog.policy.gamma.entries(&m.id).collect();
                if entries.is_empty() {
                    println!("{}: rejected: no policy", m.id);
                    ok = false;
                }
                for (recv, sgn) in entries {
                    let verdict = match jvmc::infer(&prog, m, sgn, None) {
                        Ok(c) => jvmc::check(&prog, m, sgn, &c),
                        Err(r) => Verdict::Rejected(r),
                    };
                    ok &= report(lat, &m.id, recv, &verdict);
                }
            }
        }
    }
    Ok(ok)
}

fn check_dex(file: &Path, cert: &Option<PathBuf>, only: &Option<String>) -> CmdResult {
    let prog = load_dex(file)?;
    let lat = &prog.lattice;
    let mut ok = true;
    match cert {
        Some(path) => {
            let entries = formats::parse_dex_certificates(lat, &read(path)?)
                .map_err(|d| UsageError(format!("{}: {d}", path.display())))?;
            for e in entries.iter().filter(|e| only.as_ref().is_none_or(|m| *m == e.method)) {
                let m = prog.method(&e.method).ok_or_else(|| UsageError(format!("no method `{}`", e.method)))?;
                check_cert_shape(&m.id, m.code.len(), e.cert.se.len())?;
                let sgn = policy_entry(&prog, &m.id, e.receiver)?;
                ok &= report(lat, &m.id, e.receiver, &dexc::check(&prog, m, sgn, &e.cert));
            }
        }
        None => {
            for m in selected(&prog, only)? {
                let entries: Vec<_> = prog.policy.gamma.entries(&m.id).collect();
                if entries.is_empty() {
                    println!("{}: rejected: no policy", m.id);
                    ok = false;
                }
                for (recv, sgn) in entries {
                    let verdict = match dexc::infer(&prog, m, sgn, None) {
                        Ok(c) => dexc::check(&prog, m, sgn, &c),
                        Err(r) => Verdict::Rejected(r),
                    };
                    ok &= report(lat, &m.id, recv, &verdict);
                }
            }
        }
    }
    Ok(ok)
}

fn compile(file: &Path, output: &Option<PathBuf>, map: &Option<PathBuf>, cert: &Option<PathBuf>) -> CmdResult {
    let prog = load_jvm(file)?;
    let compiled = compile_program(&prog)?;
    let text = formats::write_dex(&compiled.program);
    match output {
        Some(p) => write_out(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = map {
        write_out(p, &formats::write_address_maps(&compiled.maps))?;
    }
    if let Some(p) = cert {
        let mut entries = Vec::new();
        for m in &prog.methods {
            let dm = compiled.program.method(&m.id).expect("every method is compiled");
            for (recv, sgn) in prog.policy.gamma.entries(&m.id) {
                let translated = jvmc::infer(&prog, m, sgn, None).and_then(|jc| {
                    if let Some(r) = jvmc::check(&prog, m, sgn, &jc).rejection() {
                        return Err(r.clone());
                    }
                    translate_certificate(&prog, m, sgn, &jc, &compiled.program, dm, &compiled.maps[&m.id])
                });
                match translated {
                    Ok(t) => entries.push(CertEntry { method: m.id.clone(), receiver: recv, cert: t.cert }),
                    Err(r) => eprintln!("{} [recv={}]: no certificate: {r}", m.id, prog.lattice.name(recv)),
                }
            }
        }
        write_out(p, &formats::write_dex_certificates(&prog.lattice, &entries))?;
    }
    Ok(true)
}

fn parse_value(s: &str) -> Result<Value, UsageError> {
    if s == "null" {
        return Ok(Value::Null);
    }
    s.parse().map(Value::Int).map_err(|_| UsageError(format!("bad argument `{s}`: expected an integer or `null`")))
}

fn run(args: &RunArgs, machine: &str) -> CmdResult {
    let unit = match machine {
        "jvm" => Unit::Jvm(load_jvm(&args.file)?),
        _ => Unit::Dex(load_dex(&args.file)?),
    };
    let mach = Registry::default().instantiate(machine, &unit).map_err(UsageError)?;
    if mach.method(&args.entry).is_none() {
        return Err(UsageError(format!("no method `{}`", args.entry)));
    }
    let locals = args.args.iter().map(|s| parse_value(s)).collect::<Result<Vec<_>, _>>()?;
    match mach.run(&args.entry, &locals, Heap::new(), args.fuel) {
        Ok(f) => {
            println!("{}", ni::describe(&f));
            println!("heap: {} cells", f.heap.len());
            Ok(true)
        }
        Err(e @ RunError::FuelExhausted) | Err(e @ RunError::Machine { .. }) => {
            println!("{e}");
            Ok(false)
        }
    }
}

fn soap_report<M: MethodShape>(
    prog: &Program<M>,
    only: &Option<String>,
    cfg_of: impl Fn(&M) -> ifc_core::cdr::Cfg,
) -> CmdResult {
    let mut ok = true;
    for m in selected(prog, only)? {
        let cfg = cfg_of(m);
        let rep = check_soap(&cfg, &compute_cdr(&cfg));
        if rep.ok() {
            println!("{}: SOAP holds", m.id());
        } else {
            ok = false;
            for f in &rep.failures {
                println!("{}: {f}", m.id());
            }
        }
    }
    Ok(ok)
}

fn soap(file: &Path, only: &Option<String>) -> CmdResult {
    match load_unit(file)? {
        Unit::Jvm(p) => soap_report(&p, only, |m| jvmc::cfg_of(&p, m)),
        Unit::Dex(p) => soap_report(&p, only, |m| dexc::cfg_of(&p, m)),
    }
}

fn lattice_level(lat: &Lattice, name: &Option<String>, default: Level) -> Result<Level, UsageError> {
    match name {
        Some(n) => Ok(lat.level(n)?),
        None => Ok(default),
    }
}

/// The machine requested (or the unit's own) and the policy for the
/// receiver level.
fn prepare(
    file: &Path,
    machine: &Option<String>,
    method: &str,
    receiver: &Option<String>,
) -> Result<(Box<dyn ifc_core::registry::Machine>, MethodPolicy), UsageError> {
    let unit = load_unit(file)?;
    let own = match unit {
        Unit::Jvm(_) => "jvm",
        Unit::Dex(_) => "dex",
    };
    let mach = Registry::default().instantiate(machine.as_deref().unwrap_or(own), &unit).map_err(UsageError)?;
    if mach.method(method).is_none() {
        return Err(UsageError(format!("no method `{method}`")));
    }
    let lat = mach.lattice();
    let recv = lattice_level(lat, receiver, lat.bottom())?;
    let sgn = mach.policy().gamma.lookup(lat, method, recv)?.clone();
    Ok((mach, sgn))
}

#[allow(clippy::too_many_arguments)]
fn ni_test(
    file: &Path,
    method: &str,
    trials: u64,
    seed: u64,
    kobs: &Option<String>,
    receiver: &Option<String>,
    machine: &Option<String>,
    fuel: u64,
) -> CmdResult {
    let (mach, sgn) = prepare(file, machine, method, receiver)?;
    let kobs = lattice_level(mach.lattice(), kobs, mach.policy().kobs)?;
    let cfg = NiConfig { trials, seed, fuel, kobs, gen: GenConfig::default() };
    let rep = ni::ni_test(mach.as_ref(), method, &sgn, &cfg)?;
    match &rep.verdict {
        NiVerdict::NoCounterexample(n) => println!("no counterexample in {n} trials"),
        NiVerdict::Interference(w) => println!("interference: {w}"),
    }
    println!("{}", rep.machine_line());
    Ok(rep.witness().is_none())
}

fn side_effects(
    file: &Path,
    method: &str,
    trials: u64,
    seed: u64,
    receiver: &Option<String>,
    machine: &Option<String>,
    fuel: u64,
) -> CmdResult {
    let (mach, sgn) = prepare(file, machine, method, receiver)?;
    let rep = ni::side_effect_safety_test(mach.as_ref(), method, sgn.kh, GenConfig::default(), trials, seed, fuel)?;
    match &rep.violation {
        None => println!("no side-effect violation in {} trials", rep.trials),
        Some((trial, input, f)) => {
            println!("side-effect violation: trial {trial} (seed {seed}): {input} -> {}", ni::describe(f))
        }
    }
    println!("completed={} fuel_exhausted={} machine_errors={}", rep.completed, rep.fuel_exhausted, rep.machine_errors);
    Ok(rep.violation.is_none())
}

fn preserve(file: &Path, runs: u64, seed: u64, fuel: u64) -> CmdResult {
    let prog = load_jvm(file)?;
    let reports = ni::preservation_test(&prog, runs, seed, fuel).map_err(UsageError)?;
    let mut ok = true;
    for r in &reports {
        if let Some(why) = &r.jvm_rejection {
            println!("{}: skipped, not typable on the JVM side: {why}", r.method);
            continue;
        }
        let agreed = format!("{}/{} runs agree", r.agreement.agreed, r.agreement.runs);
        if r.passed() {
            println!("{}: preserved (se exact: {}, {agreed})", r.method, r.se_exact);
        } else {
            ok = false;
            println!(
                "{}: NOT preserved: dex={} soap_jvm={} soap_dex={} {agreed}",
                r.method,
                r.dex_rejection.as_deref().unwrap_or("typable"),
                r.soap_jvm,
                r.soap_dex
            );
            if let Some(d) = &r.agreement.first_disagreement {
                println!("  first disagreement: {d}");
            }
        }
    }
    Ok(ok)
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.cmd {
        Cmd::Fmt { file } => {
            print!("{}", formats::write_unit(&load_unit(file)?));
            Ok(true)
        }
        Cmd::CheckJvm { file, cert, method } => check_jvm(file, cert, method),
        Cmd::CheckDex { file, cert, infer: _, method } => check_dex(file, cert, method),
        Cmd::Compile { file, output, map, cert } => compile(file, output, map, cert),
        Cmd::RunJvm(a) => run(a, "jvm"),
        Cmd::RunDex(a) => run(a, "dex"),
        Cmd::Soap { file, method } => soap(file, method),
        Cmd::NiTest { file, method, trials, seed, kobs, receiver, machine, fuel } => {
            ni_test(file, method, *trials, *seed, kobs, receiver, machine, *fuel)
        }
        Cmd::SideEffects { file, method, trials, seed, receiver, machine, fuel } => {
            side_effects(file, method, *trials, *seed, receiver, machine, *fuel)
        }
        Cmd::Preserve { file, runs, seed, fuel } => preserve(file, *runs, *seed, *fuel),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
