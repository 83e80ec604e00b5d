//! Brute-force reference for postdominators and regions, based on
//! enumerating simple paths, compared against `compute_cdr`.

use std::collections::{BTreeMap, BTreeSet};

use ifc_core::cdr::{check_soap, compute_cdr, Cdr, Cfg};
use ifc_core::program::{Edge, Pp, Tag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distinct successor nodes, with `n + 1` standing for the exit.
fn succ_nodes(cfg: &Cfg, v: usize) -> BTreeSet<usize> {
    if v > cfg.n {
        return BTreeSet::new();
    }
    cfg.succ(v).iter().map(|e| e.target.unwrap_or(cfg.n + 1)).collect()
}

/// Every simple path from `v` to the exit, as node lists.
fn paths_to_exit(cfg: &Cfg, v: usize) -> Vec<Vec<usize>> {
    fn walk(cfg: &Cfg, path: &mut Vec<usize>, on: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let v = *path.last().unwrap();
        if v == cfg.n + 1 {
            out.push(path.clone());
            return;
        }
        for s in succ_nodes(cfg, v) {
            if !on[s] {
                on[s] = true;
                path.push(s);
                walk(cfg, path, on, out);
                path.pop();
                on[s] = false;
            }
        }
    }
    let mut on = vec![false; cfg.n + 2];
    on[v] = true;
    let mut out = Vec::new();
    walk(cfg, &mut vec![v], &mut on, &mut out);
    out
}

/// Immediate postdominator by path intersection: the first strict
/// postdominator met along any path. `None` for the exit or when `v`
/// cannot reach it.
pub fn oracle_ipd(cfg: &Cfg, v: usize) -> Option<Pp> {
    let paths = paths_to_exit(cfg, v);
    let first = paths.first()?;
    let common: BTreeSet<usize> =
        first.iter().copied().filter(|d| *d != v && paths.iter().all(|p| p.contains(d))).collect();
    let ipd = first.iter().copied().find(|d| common.contains(d))?;
    (ipd != cfg.n + 1).then_some(ipd)
}

/// Whether some path from `from` reaches `to` without visiting `avoid`.
fn reaches_avoiding(cfg: &Cfg, from: usize, to: usize, avoid: Option<usize>) -> bool {
    if Some(from) == avoid {
        return false;
    }
    let mut seen = vec![false; cfg.n + 2];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        for s in succ_nodes(cfg, v) {
            if s <= cfg.n && Some(s) != avoid {
                stack.push(s);
            }
        }
    }
    false
}

/// The expected CDR for `cfg`, derived from the oracle postdominators.
pub fn oracle_cdr(cfg: &Cfg) -> Cdr {
    let mut cdr = Cdr::default();
    for i in 1..=cfg.n {
        if succ_nodes(cfg, i).len() < 2 {
            continue;
        }
        let jun = oracle_ipd(cfg, i);
        let tags: BTreeSet<Tag> = cfg.succ(i).iter().map(|e| e.tag.clone()).collect();
        let mut union = BTreeSet::new();
        for tag in &tags {
            let starts: Vec<Pp> = cfg.succ(i).iter().filter(|e| &e.tag == tag).filter_map(|e| e.target).collect();
            let region: BTreeSet<Pp> =
                (1..=cfg.n).filter(|&j| starts.iter().any(|&s| reaches_avoiding(cfg, s, j, jun))).collect();
            union.extend(region.iter().copied());
            cdr.region.insert((i, tag.clone()), region);
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

/// Compares `compute_cdr` with the oracle and checks SOAP on one graph.
pub fn check_graph(cfg: &Cfg) -> Result<(), String> {
    let got = compute_cdr(cfg);
    let want = oracle_cdr(cfg);
    if got != want {
        return Err(format!("cdr mismatch on {:?}\n got  {:?}\n want {:?}", cfg.edges, got, want));
    }
    let soap = check_soap(cfg, &got);
    if !soap.ok() {
        return Err(format!("SOAP fails on {:?}: {soap}", cfg.edges));
    }
    Ok(())
}

/// What one bytecode-shaped node does.
#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Return,
    Goto(Pp),
    Branch(Pp),
    /// Falls through, or raises `np` to a handler (`None`: uncaught).
    MayThrow(Option<Pp>),
    Throw(Option<Pp>),
}

fn node_kinds(i: usize, n: usize) -> Vec<NodeKind> {
    let mut out = vec![NodeKind::Return];
    let handlers: Vec<Option<Pp>> = std::iter::once(None).chain((1..=n).map(Some)).collect();
    out.extend((1..=n).map(NodeKind::Goto));
    out.extend(handlers.iter().map(|&h| NodeKind::Throw(h)));
    if i < n {
        out.extend((1..=n).map(NodeKind::Branch));
        out.extend(handlers.iter().map(|&h| NodeKind::MayThrow(h)));
    }
    out
}

fn edges_of(i: usize, k: NodeKind) -> Vec<Edge> {
    let np = |h| Edge { tag: Tag::np(), target: h };
    match k {
        NodeKind::Return => vec![Edge { tag: Tag::Norm, target: None }],
        NodeKind::Goto(j) => vec![Edge::norm(j)],
        NodeKind::Branch(j) if j == i + 1 => vec![Edge::norm(j)],
        NodeKind::Branch(j) => vec![Edge::norm(i + 1), Edge::norm(j)],
        NodeKind::MayThrow(h) => vec![Edge::norm(i + 1), np(h)],
        NodeKind::Throw(h) => vec![np(h)],
    }
}

fn all_reachable_from_entry(cfg: &Cfg) -> bool {
    (1..=cfg.n).all(|j| reaches_avoiding(cfg, 1, j, None))
}

/// Checks every bytecode-shaped graph with `n` nodes whose nodes are all
/// reachable from node 1. Returns the number of graphs checked.
pub fn exhaustive_bytecode(n: usize) -> Result<u64, String> {
    let kinds: Vec<Vec<NodeKind>> = (1..=n).map(|i| node_kinds(i, n)).collect();
    let mut idx = vec![0usize; n];
    let mut checked = 0;
    loop {
        let cfg = Cfg::build(n, |i| edges_of(i, kinds[i - 1][idx[i - 1]]));
        if all_reachable_from_entry(&cfg) {
            check_graph(&cfg)?;
            checked += 1;
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(checked);
            }
            idx[pos] += 1;
            if idx[pos] < kinds[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Successor choices for a node of an arbitrary graph: one or two
/// distinct targets among `1..=n` and the exit, the second tagged
/// either `Norm` or `np`.
fn arbitrary_choices(n: usize) -> Vec<Vec<Edge>> {
    let targets: Vec<Option<Pp>> = (1..=n).map(Some).chain(std::iter::once(None)).collect();
    let mut out: Vec<Vec<Edge>> = targets.iter().map(|&t| vec![Edge { tag: Tag::Norm, target: t }]).collect();
    for (a, &ta) in targets.iter().enumerate() {
        for &tb in &targets[a + 1..] {
            for second in [Tag::Norm, Tag::np()] {
                out.push(vec![Edge { tag: Tag::Norm, target: ta }, Edge { tag: second, target: tb }]);
            }
        }
    }
    out
}

/// Checks every graph of out-degree at most two on `n` nodes, including
/// ones with unreachable or dead-end parts.
pub fn exhaustive_arbitrary(n: usize) -> Result<u64, String> {
    let choices = arbitrary_choices(n);
    let total = (choices.len() as u64).pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let picks: Vec<usize> = (0..n)
            .map(|_| {
                let p = (c % choices.len() as u64) as usize;
                c /= choices.len() as u64;
                p
            })
            .collect();
        let cfg = Cfg::build(n, |i| choices[picks[i - 1]].clone());
        check_graph(&cfg)?;
    }
    Ok(total)
}

/// Seeded samples of bytecode-shaped graphs with `n` nodes, plus the same
/// number of arbitrary graphs. Returns the number checked.
pub fn sampled(n: usize, samples: u64, seed: u64) -> Result<u64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64) << 32);
    let kinds: Vec<Vec<NodeKind>> = (1..=n).map(|i| node_kinds(i, n)).collect();
    let choices = arbitrary_choices(n);
    let mut checked = 0;
    while checked < samples {
        let cfg = Cfg::build(n, |i| edges_of(i, kinds[i - 1][rng.gen_range(0..kinds[i - 1].len())]));
        if all_reachable_from_entry(&cfg) {
            check_graph(&cfg)?;
            checked += 1;
        }
    }
    for _ in 0..samples {
        let cfg = Cfg::build(n, |_| choices[rng.gen_range(0..choices.len())].clone());
        check_graph(&cfg)?;
    }
    Ok(2 * samples)
}

/// The whole suite: exhaustive bytecode shapes up to `bytecode_max`,
/// exhaustive arbitrary graphs up to `arbitrary_max`, and samples for
/// 6 to 8 nodes.
pub fn suite(bytecode_max: usize, arbitrary_max: usize, samples: u64) -> Result<String, String> {
    let mut counts = BTreeMap::new();
    for n in 1..=bytecode_max {
        counts.insert(format!("bytecode n={n}"), exhaustive_bytecode(n)?);
    }
    for n in 1..=arbitrary_max {
        counts.insert(format!("arbitrary n={n}"), exhaustive_arbitrary(n)?);
    }
    for n in 6..=8 {
        counts.insert(format!("sampled n={n}"), sampled(n, samples, 0)?);
    }
    let total: u64 = counts.values().sum();
    Ok(format!("{total} graphs agree with the path oracle and satisfy SOAP"))
}
