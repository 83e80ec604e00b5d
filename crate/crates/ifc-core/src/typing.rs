//! Machinery shared by the JVM and DEX checkers: security environments,
//! side constraints, rejections, the worklist fixpoint, certificate
//! checking and se inference.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::cdr::{Cdr, Cfg};
use crate::lattice::{ExtLevel, Lattice, Level};
use crate::policy::PolicyError;
use crate::program::{Edge, Pp, Tag};

/// `se`: one level per program point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecEnv {
    levels: Vec<Level>,
}

impl SecEnv {
    pub fn uniform(n: usize, k: Level) -> Self {
        SecEnv { levels: vec![k; n] }
    }

    pub fn from_levels(levels: Vec<Level>) -> Self {
        SecEnv { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn get(&self, pp: Pp) -> Level {
        self.levels[pp - 1]
    }

    pub fn set(&mut self, pp: Pp, k: Level) {
        self.levels[pp - 1] = k;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pp, Level)> + '_ {
        self.levels.iter().enumerate().map(|(i, k)| (i + 1, *k))
    }
}

/// A failed side constraint, rendered with concrete levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub pp: Pp,
    pub tag: Tag,
    pub rule: String,
    pub constraint: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pp {} [{}, {}]: {}", self.pp, self.rule, self.tag, self.constraint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    #[error("constraint violated at {0}")]
    Constraint(Violation),
    #[error("shape mismatch at pp {pp}: {msg}")]
    Shape { pp: Pp, msg: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("certificate: {0}")]
    Certificate(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl Rejection {
    pub fn violation(&self) -> Option<&Violation> {
        match self {
            Rejection::Constraint(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Typable,
    Rejected(Rejection),
}

impl Verdict {
    pub fn is_typable(&self) -> bool {
        matches!(self, Verdict::Typable)
    }

    pub fn rejection(&self) -> Option<&Rejection> {
        match self {
            Verdict::Typable => None,
            Verdict::Rejected(r) => Some(r),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Typable => write!(f, "typable"),
            Verdict::Rejected(r) => write!(f, "rejected: {r}"),
        }
    }
}

/// Side constraints gathered while applying one rule to one edge.
pub struct Obligations<'a> {
    pub lat: &'a Lattice,
    pub pp: Pp,
    pub tag: Tag,
    pub rule: &'static str,
    pub violations: Vec<Violation>,
    /// Level every point of `region(pp, tag)` must dominate.
    pub region: Option<Level>,
}

impl<'a> Obligations<'a> {
    pub fn new(lat: &'a Lattice, pp: Pp, tag: Tag) -> Self {
        Obligations { lat, pp, tag, rule: "", violations: Vec::new(), region: None }
    }

    /// `p1 ⊔ … ⊔ pn-1 ⊔ext pn ≤ext rhs`. The last operand keeps its
    /// shape, the others contribute their outer level.
    pub fn leq(&mut self, parts: &[ExtLevel], rhs: &ExtLevel) {
        let lhs = self.join_parts(parts);
        if !self.lat.ext_leq(&lhs, rhs) {
            let rendered: Vec<String> = parts.iter().map(|p| self.lat.render_ext(p)).collect();
            let constraint = format!("{} ≤ {}", rendered.join(" ⊔ "), self.lat.render_ext(rhs));
            self.violations.push(Violation {
                pp: self.pp,
                tag: self.tag.clone(),
                rule: self.rule.to_string(),
                constraint,
            });
        }
    }

    pub fn leq_levels(&mut self, parts: &[Level], rhs: Level) {
        let parts: Vec<ExtLevel> = parts.iter().map(|&k| k.into()).collect();
        self.leq(&parts, &rhs.into());
    }

    pub fn join_parts(&self, parts: &[ExtLevel]) -> ExtLevel {
        match parts.split_last() {
            None => ExtLevel::Simple(self.lat.bottom()),
            Some((last, rest)) => self.lat.raise(self.lat.lub_all(rest.iter().map(|p| p.outer())), last),
        }
    }

    pub fn region(&mut self, k: Level) {
        self.region = Some(self.region.map_or(k, |r| self.lat.lub(r, k)));
    }
}

/// Abstract states joined at merge points.
pub trait AbstractState: Clone + PartialEq + fmt::Debug {
    fn join(&self, lat: &Lattice, other: &Self) -> Result<Self, String>;
    fn leq(&self, lat: &Lattice, other: &Self) -> bool;
    fn render(&self, lat: &Lattice) -> String;
}

impl AbstractState for Vec<ExtLevel> {
    fn join(&self, lat: &Lattice, other: &Self) -> Result<Self, String> {
        if self.len() != other.len() {
            return Err(format!(
                "stack heights differ at a merge: {} vs {}",
                lat.render_stack(self),
                lat.render_stack(other)
            ));
        }
        Ok(self.iter().zip(other).map(|(a, b)| lat.merge(a, b)).collect())
    }

    fn leq(&self, lat: &Lattice, other: &Self) -> bool {
        lat.stack_leq(self, other)
    }

    fn render(&self, lat: &Lattice) -> String {
        lat.render_stack(self)
    }
}

/// One application of a transfer rule: the successor state, or `None`
/// for rules without a conclusion (return points).
pub type RuleResult<S> = Result<Option<S>, Rejection>;

/// Result of the forward fixpoint: least states and the region demands
/// raised along the way.
pub struct Solution<S> {
    pub states: BTreeMap<Pp, S>,
    pub demands: BTreeMap<(Pp, Tag), Level>,
}

/// Kildall worklist over the edges, starting with `entry` at pp 1.
/// `seeds` are joined into the states before propagation starts.
pub fn solve<S, F>(
    lat: &Lattice,
    cfg: &Cfg,
    entry: S,
    seeds: &BTreeMap<Pp, S>,
    mut transfer: F,
) -> Result<Solution<S>, Rejection>
where
    S: AbstractState,
    F: FnMut(Pp, &Edge, &S, &mut Obligations) -> RuleResult<S>,
{
    let mut states: BTreeMap<Pp, S> = seeds.clone();
    let start = match states.get(&1) {
        Some(s) => s.join(lat, &entry).map_err(|msg| Rejection::Shape { pp: 1, msg })?,
        None => entry,
    };
    states.insert(1, start);
    let mut demands: BTreeMap<(Pp, Tag), Level> = BTreeMap::new();
    let mut queue: VecDeque<Pp> = states.keys().copied().collect();
    let mut queued = vec![false; cfg.n + 1];
    for &p in &queue {
        queued[p] = true;
    }
    let mut budget: u64 = 1_000_000;
    while let Some(i) = queue.pop_front() {
        queued[i] = false;
        budget = budget.checked_sub(1).ok_or_else(|| Rejection::Internal("fixpoint did not converge".into()))?;
        let st = states[&i].clone();
        for e in cfg.succ(i) {
            let mut ob = Obligations::new(lat, i, e.tag.clone());
            let out = transfer(i, e, &st, &mut ob)?;
            if let Some(k) = ob.region {
                let slot = demands.entry((i, e.tag.clone())).or_insert(k);
                *slot = lat.lub(*slot, k);
            }
            match (e.target, out) {
                (Some(j), Some(s)) => {
                    let next = match states.get(&j) {
                        Some(old) => {
                            let joined = old.join(lat, &s).map_err(|msg| Rejection::Shape { pp: j, msg })?;
                            if &joined == old {
                                continue;
                            }
                            joined
                        }
                        None => s,
                    };
                    states.insert(j, next);
                    if !queued[j] {
                        queued[j] = true;
                        queue.push_back(j);
                    }
                }
                (Some(j), None) => {
                    return Err(Rejection::Internal(format!("rule at {i} gave no state for edge to {j}")));
                }
                (None, _) => {}
            }
        }
    }
    Ok(Solution { states, demands })
}

/// Raises `se` until every region demand holds. Each round re-solves the
/// states under the current environment.
pub fn infer_se<S, F>(
    lat: &Lattice,
    cfg: &Cfg,
    cdr: &Cdr,
    entry: S,
    seeds: &BTreeMap<Pp, S>,
    initial_se: SecEnv,
    mut transfer: F,
) -> Result<(Solution<S>, SecEnv), Rejection>
where
    S: AbstractState,
    F: FnMut(&SecEnv, Pp, &Edge, &S, &mut Obligations) -> RuleResult<S>,
{
    let mut se = initial_se;
    loop {
        let sol = solve(lat, cfg, entry.clone(), seeds, |i, e, s, ob| transfer(&se, i, e, s, ob))?;
        let mut changed = false;
        for ((i, tag), k) in &sol.demands {
            for j in cdr.region(*i, tag) {
                if j == 0 || j > se.len() {
                    return Err(Rejection::Certificate(format!("region({i},{tag}) names invalid point {j}")));
                }
                if !lat.leq(*k, se.get(j)) {
                    se.set(j, lat.lub(*k, se.get(j)));
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok((sol, se));
        }
    }
}

/// Checks a certificate edge by edge: every rule's side constraints, its
/// region constraint, and `out ⊑ S_j`. Reports the first failure in
/// program-point order.
pub fn check_certificate<S, F>(
    lat: &Lattice,
    cfg: &Cfg,
    entry: &S,
    states: &BTreeMap<Pp, S>,
    se: &SecEnv,
    cdr: &Cdr,
    mut transfer: F,
) -> Verdict
where
    S: AbstractState,
    F: FnMut(Pp, &Edge, &S, &mut Obligations) -> RuleResult<S>,
{
    let n = cfg.n;
    if se.len() != n {
        return Verdict::Rejected(Rejection::Certificate(format!("se covers {} points, code has {n}", se.len())));
    }
    match states.get(&1) {
        Some(s1) if entry.leq(lat, s1) => {}
        Some(s1) => {
            return Verdict::Rejected(Rejection::Certificate(format!(
                "entry state {} is not below {}",
                entry.render(lat),
                s1.render(lat)
            )))
        }
        None => return Verdict::Rejected(Rejection::Certificate("no state at pp 1".into())),
    }
    for (&i, st) in states {
        if i == 0 || i > n {
            return Verdict::Rejected(Rejection::Certificate(format!("state given for invalid pp {i}")));
        }
        for e in cfg.succ(i) {
            let mut ob = Obligations::new(lat, i, e.tag.clone());
            let out = match transfer(i, e, st, &mut ob) {
                Ok(o) => o,
                Err(r) => return Verdict::Rejected(r),
            };
            if let Some(v) = ob.violations.into_iter().next() {
                return Verdict::Rejected(Rejection::Constraint(v));
            }
            if let Some(k) = ob.region {
                for j in cdr.region(i, &e.tag) {
                    if j == 0 || j > n {
                        return Verdict::Rejected(Rejection::Certificate(format!(
                            "region({i},{}) names invalid point {j}",
                            e.tag
                        )));
                    }
                    if !lat.leq(k, se.get(j)) {
                        return Verdict::Rejected(Rejection::Constraint(Violation {
                            pp: i,
                            tag: e.tag.clone(),
                            rule: format!("{} region", ob.rule),
                            constraint: format!("{} ≤ se({j}) = {}", lat.name(k), lat.name(se.get(j))),
                        }));
                    }
                }
            }
            match (e.target, out) {
                (Some(j), Some(s)) => match states.get(&j) {
                    Some(sj) if s.leq(lat, sj) => {}
                    Some(sj) => {
                        return Verdict::Rejected(Rejection::Constraint(Violation {
                            pp: i,
                            tag: e.tag.clone(),
                            rule: format!("{} successor", ob.rule),
                            constraint: format!("{} ⊑ S({j}) = {}", s.render(lat), sj.render(lat)),
                        }))
                    }
                    None => return Verdict::Rejected(Rejection::Certificate(format!("no state at reachable pp {j}"))),
                },
                (Some(j), None) => {
                    return Verdict::Rejected(Rejection::Internal(format!("rule at {i} gave no state for edge to {j}")))
                }
                (None, _) => {}
            }
        }
    }
    Verdict::Typable
}
