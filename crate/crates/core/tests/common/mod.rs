//! Random generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use wfplus::depflow::FlowParts;
use wfplus::dsl::{self, Model};
use wfplus::graph::{EdgeKind, Graph, GraphMorphism, NodeKind};
use wfplus::metamodel::{parse_decimal, Instance, Literal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn fixture(rel: &str) -> (String, String) {
    let p = fixture_path(rel);
    let text = std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    (rel.to_string(), text)
}

pub fn load(rels: &[&str]) -> Model {
    let files: Vec<(String, String)> = rels.iter().map(|r| fixture(r)).collect();
    dsl::load(&files).unwrap_or_else(|d| panic!("{d:?}"))
}

/// The control fixture: metamodel, flow and plant.
pub fn control() -> Model {
    load(&["control/cs.wfp", "control/plant.wfp"])
}

pub fn control_verdicts() -> BTreeMap<String, bool> {
    wfplus::process::parse_verdicts(&fixture("control/verdicts.txt").1).unwrap()
}

/// A graph with up to `max_nodes` nodes and `max_edges` edges. Value-type nodes only
/// appear when `values` is set; edges into them are attributes.
pub fn random_graph(r: &mut ChaCha8Rng, max_nodes: usize, max_edges: usize, values: bool) -> Graph {
    let mut g = Graph::new();
    let n = r.gen_range(1..=max_nodes);
    for i in 0..n {
        let kind = match r.gen_range(0..10) {
            0..=5 => NodeKind::Class,
            6 | 7 => NodeKind::ProcessClass,
            _ if values => NodeKind::ValueType,
            _ => NodeKind::Class,
        };
        g.add_node(format!("n{i}"), kind).unwrap();
    }
    let ids: Vec<String> = g.nodes().map(|(n, _)| n.to_string()).collect();
    let sources: Vec<&String> = ids.iter().filter(|n| g.node_kind(n) != Some(NodeKind::ValueType)).collect();
    if sources.is_empty() {
        return g;
    }
    for i in 0..r.gen_range(0..=max_edges) {
        let s = sources.choose(r).unwrap().to_string();
        let t = ids.choose(r).unwrap().clone();
        let kind = match g.node_kind(&t).unwrap() {
            NodeKind::ValueType => EdgeKind::Attribute,
            NodeKind::ProcessClass if r.gen_bool(0.5) => EdgeKind::Dataflow,
            _ => EdgeKind::Association,
        };
        g.add_edge(format!("e{i}"), s, t, kind).unwrap();
    }
    g
}

/// A random graph `G` and a graph morphism `G → h`, kinds preserved. Not necessarily
/// injective or surjective.
pub fn random_morphism_into(r: &mut ChaCha8Rng, h: &Graph, max_nodes: usize, max_edges: usize, prefix: &str) -> GraphMorphism {
    let mut g = Graph::new();
    let mut node_map = BTreeMap::new();
    let mut edge_map = BTreeMap::new();
    if h.node_count() == 0 {
        return GraphMorphism::new(g, h.clone(), node_map, edge_map);
    }
    let h_nodes: Vec<(String, NodeKind)> = h.nodes().map(|(n, k)| (n.to_string(), k)).collect();
    let h_edges: Vec<(String, String, String, EdgeKind)> =
        h.edges().map(|(e, x)| (e.to_string(), x.src.clone(), x.tgt.clone(), x.kind)).collect();
    let mut fresh = 0;
    let mut add_node = |g: &mut Graph, node_map: &mut BTreeMap<String, String>, tgt: &str, kind: NodeKind| {
        let id = format!("{prefix}{fresh}");
        fresh += 1;
        g.add_node(id.clone(), kind).unwrap();
        node_map.insert(id.clone(), tgt.to_string());
        id
    };
    for _ in 0..r.gen_range(0..=max_nodes) {
        let (t, k) = h_nodes.choose(r).unwrap();
        add_node(&mut g, &mut node_map, t, *k);
    }
    if !h_edges.is_empty() {
        for i in 0..r.gen_range(0..=max_edges) {
            let (te, ts, tt, kind) = h_edges.choose(r).unwrap().clone();
            let mut end = |g: &mut Graph, node_map: &mut BTreeMap<String, String>, t: &str| {
                let pre: Vec<String> = node_map.iter().filter(|(_, v)| v.as_str() == t).map(|(k, _)| k.clone()).collect();
                if pre.is_empty() || r.gen_bool(0.2) {
                    add_node(g, node_map, t, h.node_kind(t).unwrap())
                } else {
                    pre.choose(r).unwrap().clone()
                }
            };
            let s = end(&mut g, &mut node_map, &ts);
            let t = end(&mut g, &mut node_map, &tt);
            let id = format!("{prefix}e{i}");
            g.add_edge(id.clone(), s, t, kind).unwrap();
            edge_map.insert(id, te);
        }
    }
    GraphMorphism::new(g, h.clone(), node_map, edge_map)
}

pub fn literal_for(r: &mut ChaCha8Rng, value_type: &str) -> Literal {
    match value_type {
        "Bool" => Literal::Bool(r.gen_bool(0.5)),
        "Real" => Literal::Real(parse_decimal(["1e-7", "1e-4", "1e-2", "0.5"].choose(r).unwrap()).unwrap()),
        "String" => Literal::Str(["a", "b", "c d"].choose(r).unwrap().to_string()),
        _ => Literal::Int(r.gen_range(0..5)),
    }
}

/// A random instance with at most `max_per_class` objects per class; attributes get 0 or
/// 1 values per object (occasionally 2).
pub fn random_instance(r: &mut ChaCha8Rng, t: &Graph, max_per_class: usize) -> Instance {
    let mut i = Instance::empty(t);
    let mut objs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (c, k) in t.nodes() {
        if k == NodeKind::ValueType {
            continue;
        }
        for j in 0..r.gen_range(0..=max_per_class) {
            let id = format!("{c}_{j}");
            i.add_object(&id, c).unwrap();
            objs.entry(c.to_string()).or_default().push(id);
        }
    }
    let mut k = 0;
    let edges: Vec<(String, String, String, EdgeKind)> =
        t.edges().map(|(e, x)| (e.to_string(), x.src.clone(), x.tgt.clone(), x.kind)).collect();
    for (e, s, tt, kind) in edges {
        let Some(srcs) = objs.get(&s).cloned() else { continue };
        if kind == EdgeKind::Attribute {
            for o in srcs {
                let n = match r.gen_range(0..10) {
                    0..=3 => 0,
                    4..=8 => 1,
                    _ => 2,
                };
                for _ in 0..n {
                    let lit = literal_for(r, &tt);
                    i.add_value_with_ids(&format!("v{k}"), &format!("a{k}"), &o, &e, lit).unwrap();
                    k += 1;
                }
            }
            continue;
        }
        let Some(tgts) = objs.get(&tt).cloned() else { continue };
        for _ in 0..r.gen_range(0..=max_per_class) {
            let (a, b) = (srcs.choose(r).unwrap(), tgts.choose(r).unwrap());
            i.add_link(&format!("l{k}"), &e, a, b).unwrap();
            k += 1;
        }
    }
    i
}

/// Deletes violation witnesses (chosen at random) until `i` conforms to `m` and `extra`
/// reports nothing; yields a random conforming sub-instance.
pub fn repair(r: &mut ChaCha8Rng, mut i: Instance, m: &wfplus::metamodel::Metamodel, extra: &dyn Fn(&Instance) -> Vec<String>) -> Instance {
    loop {
        let c = wfplus::metamodel::conforms(&i, m);
        let mut w: Vec<String> = c.violations().flat_map(|(_, w)| w.iter().cloned()).collect();
        w.extend(c.typing.violations.iter().map(|v| v.element.clone()));
        w.extend(extra(&i));
        w.sort();
        w.dedup();
        let Some(x) = w.choose(r).cloned() else { return i };
        if i.data().has_node(&x) {
            i.remove_node(&x);
        } else if !i.remove_link(&x) {
            panic!("witness `{x}` is neither an object nor a link");
        }
    }
}

/// A random flow satisfying the wiring rules; cycles are common.
pub fn random_flow(r: &mut ChaCha8Rng) -> FlowParts {
    let np = r.gen_range(1..=6);
    let nw = r.gen_range(1..=6);
    let mut f = FlowParts::default();
    let wps: Vec<String> = (0..nw).map(|i| format!("W{i}")).collect();
    for w in &wps {
        f.wp(w);
    }
    let mut k = 0;
    for p in 0..np {
        let pid = format!("P{p}");
        let n_in = r.gen_range(0..=2);
        let ports: Vec<String> = (0..n_in).map(|j| format!("i{j}")).collect();
        let has_out = r.gen_bool(0.85);
        let refs: Vec<&str> = ports.iter().map(String::as_str).collect();
        f.process(&pid, &refs, has_out.then_some("o"));
        for port in &ports {
            f.wire_in(&format!("x{k}"), wps.choose(r).unwrap(), &pid, port);
            k += 1;
        }
        if has_out {
            let n_out = r.gen_range(1..=2.min(nw));
            for w in wps.choose_multiple(r, n_out) {
                f.wire_out(&format!("y{k}"), &pid, "o", w);
                k += 1;
            }
        }
    }
    f
}

/// Equivalence classes of a relation on `0..n`, by repeated merging until nothing changes.
pub fn naive_classes(n: usize, pairs: &[(usize, usize)]) -> Vec<BTreeSet<usize>> {
    let mut classes: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    loop {
        let mut merged = false;
        'outer: for (a, b) in pairs {
            let ca = classes.iter().position(|c| c.contains(a)).unwrap();
            let cb = classes.iter().position(|c| c.contains(b)).unwrap();
            if ca != cb {
                let (lo, hi) = (ca.min(cb), ca.max(cb));
                let moved = classes.remove(hi);
                classes[lo].extend(moved);
                merged = true;
                break 'outer;
            }
        }
        if !merged {
            return classes;
        }
    }
}

/// Checks that the cocone `legs` (label → map into the colimit) realises exactly the
/// quotient of the disjoint union of `objects` by the equivalence generated by `arrows`.
pub fn check_quotient(
    objects: &[(&str, &Graph)],
    arrows: &[(&str, &str, &GraphMorphism)],
    colim: &Graph,
    legs: &BTreeMap<String, GraphMorphism>,
) -> Result<(), String> {
    for (what, is_node) in [("node", true), ("edge", false)] {
        let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (l, g) in objects {
            let els: Vec<String> = if is_node {
                g.nodes().map(|(n, _)| n.to_string()).collect()
            } else {
                g.edges().map(|(e, _)| e.to_string()).collect()
            };
            for x in els {
                let k = index.len();
                index.insert((l.to_string(), x), k);
            }
        }
        let mut pairs = Vec::new();
        for (s, t, m) in arrows {
            let map = if is_node { &m.node_map } else { &m.edge_map };
            for (x, y) in map {
                pairs.push((index[&(s.to_string(), x.clone())], index[&(t.to_string(), y.clone())]));
            }
        }
        let classes = naive_classes(index.len(), &pairs);
        let count = if is_node { colim.node_count() } else { colim.edge_count() };
        if classes.len() != count {
            return Err(format!("{what}s: {} classes but {count} colimit elements", classes.len()));
        }
        let image = |(l, x): &(String, String)| -> String {
            let m = &legs[l];
            if is_node { m.map_node(x) } else { m.map_edge(x) }.unwrap_or("<unmapped>").to_string()
        };
        let by_ix: BTreeMap<usize, &(String, String)> = index.iter().map(|(k, v)| (*v, k)).collect();
        let mut seen = BTreeSet::new();
        for c in &classes {
            let imgs: BTreeSet<String> = c.iter().map(|i| image(by_ix[i])).collect();
            if imgs.len() != 1 {
                return Err(format!("{what} class {c:?} maps to {imgs:?}"));
            }
            let img = imgs.into_iter().next().unwrap();
            if !seen.insert(img.clone()) {
                return Err(format!("two {what} classes share the image {img}"));
            }
        }
    }
    for (l, _) in objects {
        let r = wfplus::graph::check_morphism(&legs[*l]);
        if !r.is_ok() {
            return Err(format!("leg {l} is not a morphism: {r:?}"));
        }
    }
    Ok(())
}

/// Pair-enumeration oracle for the pullback of `f` and `g` with apex projections `p1`, `p2`.
pub fn check_pullback(f: &GraphMorphism, g: &GraphMorphism, apex: &Graph, p1: &GraphMorphism, p2: &GraphMorphism) -> Result<(), String> {
    let mut want_nodes = BTreeSet::new();
    for (a, _) in f.source.nodes() {
        for (b, _) in g.source.nodes() {
            if f.map_node(a).is_some() && f.map_node(a) == g.map_node(b) {
                want_nodes.insert((a.to_string(), b.to_string()));
            }
        }
    }
    let mut want_edges = BTreeSet::new();
    for (a, _) in f.source.edges() {
        for (b, _) in g.source.edges() {
            if f.map_edge(a).is_some() && f.map_edge(a) == g.map_edge(b) {
                want_edges.insert((a.to_string(), b.to_string()));
            }
        }
    }
    let got_nodes: BTreeSet<(String, String)> = apex
        .nodes()
        .map(|(n, _)| (p1.map_node(n).unwrap_or("?").to_string(), p2.map_node(n).unwrap_or("?").to_string()))
        .collect();
    let got_edges: BTreeSet<(String, String)> = apex
        .edges()
        .map(|(e, _)| (p1.map_edge(e).unwrap_or("?").to_string(), p2.map_edge(e).unwrap_or("?").to_string()))
        .collect();
    if got_nodes.len() != apex.node_count() || got_nodes != want_nodes {
        return Err(format!("pullback nodes {got_nodes:?}, expected {want_nodes:?}"));
    }
    if got_edges.len() != apex.edge_count() || got_edges != want_edges {
        return Err(format!("pullback edges {got_edges:?}, expected {want_edges:?}"));
    }
    for m in [p1, p2] {
        let r = wfplus::graph::check_morphism(m);
        if !r.is_ok() {
            return Err(format!("projection is not a morphism: {r:?}"));
        }
    }
    Ok(())
}

/// Shortest cycle length in a directed graph, by breadth-first search from every node.
pub fn shortest_cycle(adj: &BTreeMap<String, BTreeSet<String>>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for s in adj.keys() {
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut frontier: Vec<&str> = vec![s];
        let mut d = 0;
        while !frontier.is_empty() {
            d += 1;
            let mut next = Vec::new();
            for n in frontier {
                for m in adj.get(n).into_iter().flatten() {
                    if m == s {
                        best = Some(best.map_or(d, |b| b.min(d)));
                    }
                    if !dist.contains_key(m.as_str()) {
                        dist.insert(m, d);
                        next.push(m.as_str());
                    }
                }
            }
            frontier = next;
        }
    }
    best
}
