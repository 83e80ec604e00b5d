//! Control-dependence regions: construction from postdominators and the
//! six safety properties.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::program::{Edge, Pp, Tag};

/// `region` and `jun`, keyed by branching point and tag.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cdr {
    pub region: BTreeMap<(Pp, Tag), BTreeSet<Pp>>,
    pub jun: BTreeMap<(Pp, Tag), Pp>,
}

impl Cdr {
    pub fn region(&self, i: Pp, tag: &Tag) -> impl Iterator<Item = Pp> + '_ {
        self.region.get(&(i, tag.clone())).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn in_region(&self, i: Pp, tag: &Tag, j: Pp) -> bool {
        self.region.get(&(i, tag.clone())).is_some_and(|s| s.contains(&j))
    }

    pub fn jun(&self, i: Pp, tag: &Tag) -> Option<Pp> {
        self.jun.get(&(i, tag.clone())).copied()
    }

    /// Tags mentioned for `i` in either map.
    pub fn tags_at(&self, i: Pp) -> BTreeSet<Tag> {
        self.region.keys().chain(self.jun.keys()).filter(|(p, _)| *p == i).map(|(_, t)| t.clone()).collect()
    }
}

/// A method's control-flow graph: nodes `1..=n` and their tagged edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub n: usize,
    pub edges: Vec<Vec<Edge>>,
}

impl Cfg {
    pub fn build<F: FnMut(Pp) -> Vec<Edge>>(n: usize, mut succ: F) -> Self {
        let mut edges = vec![Vec::new(); n + 1];
        for (i, slot) in edges.iter_mut().enumerate().skip(1) {
            *slot = succ(i);
        }
        Cfg { n, edges }
    }

    pub fn succ(&self, i: Pp) -> &[Edge] {
        &self.edges[i]
    }

    fn exit(&self) -> usize {
        self.n + 1
    }

    /// Successor nodes with the virtual exit standing for return markers.
    fn node_succs(&self, i: Pp) -> BTreeSet<usize> {
        self.edges[i].iter().map(|e| e.target.unwrap_or(self.exit())).collect()
    }

    pub fn is_return_point(&self, i: Pp) -> bool {
        self.edges[i].iter().any(|e| e.target.is_none())
    }
}

/// Postdominator sets over nodes `1..=n+1` (the last is the exit), as the
/// greatest fixpoint of `pdom(v) = {v} ∪ ⋂ pdom(succ)`.
fn postdominators(cfg: &Cfg) -> Vec<Vec<bool>> {
    let total = cfg.n + 2;
    let exit = cfg.exit();
    let mut pdom = vec![vec![true; total]; total];
    pdom[0] = vec![false; total];
    pdom[exit] = vec![false; total];
    pdom[exit][exit] = true;
    let succs: Vec<BTreeSet<usize>> =
        (0..=cfg.n).map(|i| if i == 0 { BTreeSet::new() } else { cfg.node_succs(i) }).collect();
    let mut changed = true;
    while changed {
        changed = false;
        for v in (1..=cfg.n).rev() {
            let mut acc = vec![true; total];
            for &s in &succs[v] {
                for (a, b) in acc.iter_mut().zip(&pdom[s]) {
                    *a &= *b;
                }
            }
            acc[0] = false;
            acc[v] = true;
            if acc != pdom[v] {
                pdom[v] = acc;
                changed = true;
            }
        }
    }
    pdom
}

fn reaches_exit(cfg: &Cfg) -> Vec<bool> {
    let exit = cfg.exit();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); cfg.n + 2];
    for i in 1..=cfg.n {
        for s in cfg.node_succs(i) {
            preds[s].push(i);
        }
    }
    let mut seen = vec![false; cfg.n + 2];
    seen[exit] = true;
    let mut queue = VecDeque::from([exit]);
    while let Some(v) = queue.pop_front() {
        for &p in &preds[v] {
            if !seen[p] {
                seen[p] = true;
                queue.push_back(p);
            }
        }
    }
    seen
}

/// Immediate postdominator of every node; `None` when it is the exit or the
/// node cannot reach the exit.
pub fn immediate_postdominators(cfg: &Cfg) -> Vec<Option<Pp>> {
    let pdom = postdominators(cfg);
    let live = reaches_exit(cfg);
    let exit = cfg.exit();
    let mut out = vec![None; cfg.n + 1];
    for v in 1..=cfg.n {
        if !live[v] {
            continue;
        }
        let strict: Vec<usize> = (1..=exit).filter(|&d| d != v && pdom[v][d]).collect();
        let ipd = strict
            .iter()
            .copied()
            .find(|&d| strict.iter().all(|&e| pdom[d][e]))
            .expect("strict postdominators of a live node form a chain");
        out[v] = (ipd != exit).then_some(ipd);
    }
    out
}

/// Nodes reachable from `starts` without entering `stop`.
fn reach_avoiding(cfg: &Cfg, starts: impl IntoIterator<Item = Pp>, stop: Option<Pp>) -> BTreeSet<Pp> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<Pp> = starts.into_iter().filter(|&s| Some(s) != stop).collect();
    while let Some(v) = queue.pop_front() {
        if !seen.insert(v) {
            continue;
        }
        for e in cfg.succ(v) {
            if let Some(t) = e.target {
                if Some(t) != stop && !seen.contains(&t) {
                    queue.push_back(t);
                }
            }
        }
    }
    seen
}

/// Builds a CDR from immediate postdominators. Only points with two or
/// more distinct successors (the exit counts as one) get entries.
#[allow(clippy::needless_range_loop)]
pub fn compute_cdr(cfg: &Cfg) -> Cdr {
    let ipd = immediate_postdominators(cfg);
    let mut cdr = Cdr::default();
    for i in 1..=cfg.n {
        if cfg.node_succs(i).len() < 2 {
            continue;
        }
        let jun = ipd[i];
        let tags: BTreeSet<Tag> = cfg.succ(i).iter().map(|e| e.tag.clone()).collect();
        let mut union = BTreeSet::new();
        for tag in &tags {
            let starts = cfg.succ(i).iter().filter(|e| &e.tag == tag).filter_map(|e| e.target);
            let r = reach_avoiding(cfg, starts, jun);
            union.extend(r.iter().copied());
            cdr.region.insert((i, tag.clone()), r);
            if let Some(j) = jun {
                cdr.jun.insert((i, tag.clone()), j);
            }
        }
        for e in cfg.succ(i) {
            if e.target.is_none() {
                cdr.region.insert((i, e.tag.clone()), union.clone());
            }
        }
    }
    cdr
}

/// Names of the checked properties, indexing `SoapReport::holds`.
pub const SOAP_PROPERTIES: [&str; 6] = [
    "successor-covered",
    "region-closed",
    "return-has-no-junction",
    "junctions-ordered",
    "return-region-holds-junctions",
    "return-region-covers-all",
];

/// Per-property outcome of a SOAP check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoapReport {
    pub holds: [bool; 6],
    pub failures: Vec<String>,
}

impl SoapReport {
    pub fn ok(&self) -> bool {
        self.holds.iter().all(|&b| b)
    }
}

impl fmt::Display for SoapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, h) in self.holds.iter().enumerate() {
            writeln!(f, "{}: {}", SOAP_PROPERTIES[k], if *h { "holds" } else { "FAILS" })?;
        }
        for msg in &self.failures {
            writeln!(f, "  {msg}")?;
        }
        Ok(())
    }
}

/// Checks the six properties by enumeration over points and tags.
pub fn check_soap(cfg: &Cfg, cdr: &Cdr) -> SoapReport {
    let mut holds = [true; 6];
    let mut failures = Vec::new();
    let mut fail = |k: usize, msg: String| {
        holds[k] = false;
        if failures.len() < 32 {
            failures.push(format!("{}: {msg}", SOAP_PROPERTIES[k]));
        }
    };
    let all_tags: BTreeSet<Tag> = cdr
        .region
        .keys()
        .chain(cdr.jun.keys())
        .map(|(_, t)| t.clone())
        .chain(cfg.edges.iter().flatten().map(|e| e.tag.clone()))
        .collect();
    for i in 1..=cfg.n {
        let succ = cfg.succ(i);
        let targets: BTreeSet<Pp> = succ.iter().filter_map(|e| e.target).collect();
        // At a branch, each successor is in the region or is the junction.
        for e in succ {
            let Some(k) = e.target else { continue };
            if targets.iter().any(|&j| j != k) && !cdr.in_region(i, &e.tag, k) && cdr.jun(i, &e.tag) != Some(k) {
                fail(0, format!("{i} -{}-> {k}: {k} neither in region nor junction", e.tag));
            }
        }
        for tag in &all_tags {
            let jun = cdr.jun(i, tag);
            for j in cdr.region(i, tag) {
                if j == 0 || j > cfg.n {
                    fail(1, format!("region({i},{tag}) contains invalid point {j}"));
                    continue;
                }
                // Regions are closed under successors up to the junction.
                for e in cfg.succ(j) {
                    if let Some(k) = e.target {
                        if !cdr.in_region(i, tag, k) && jun != Some(k) {
                            fail(1, format!("region({i},{tag}) ∋ {j} -> {k} leaves the region"));
                        }
                    }
                }
                if cfg.is_return_point(j) {
                    // A region containing a return point has no junction.
                    if let Some(x) = jun {
                        fail(2, format!("return point {j} in region({i},{tag}) but jun = {x}"));
                    }
                    // Such a region also holds every junction of the same branch.
                    for t2 in &all_tags {
                        if let Some(x) = cdr.jun(i, t2) {
                            if !cdr.in_region(i, tag, x) {
                                fail(
                                    4,
                                    format!("return point {j} in region({i},{tag}) but jun({i},{t2}) = {x} outside"),
                                );
                            }
                        }
                    }
                }
            }
            // Two junctions of one branch are ordered by region membership.
            for t2 in &all_tags {
                if let (Some(a), Some(b)) = (jun, cdr.jun(i, t2)) {
                    if a != b && !cdr.in_region(i, t2, a) && !cdr.in_region(i, tag, b) {
                        fail(3, format!("jun({i},{tag}) = {a} and jun({i},{t2}) = {b} unrelated"));
                    }
                }
            }
        }
        // A return-point tag's region covers every other region and junction.
        for e in succ.iter().filter(|e| e.target.is_none()) {
            let t1 = &e.tag;
            for t2 in &all_tags {
                for j in cdr.region(i, t2) {
                    if !cdr.in_region(i, t1, j) {
                        fail(5, format!("{i} returns on {t1} but region({i},{t2}) ∋ {j} is outside region({i},{t1})"));
                    }
                }
                if let Some(x) = cdr.jun(i, t2) {
                    if !cdr.in_region(i, t1, x) {
                        fail(5, format!("{i} returns on {t1} but jun({i},{t2}) = {x} is outside region({i},{t1})"));
                    }
                }
            }
        }
    }
    SoapReport { holds, failures }
}
