//! Weaving an advice metamodel into a main metamodel at entry points, by pushout.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::catops::pushout;
use crate::graph::{check_morphism, compose, Graph, GraphMorphism, NodeKind, ValidationReport};
use crate::metamodel::{ConstraintKind, Metamodel};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Advice {
    pub advice: Metamodel,
    pub entry: Metamodel,
    /// Entry into advice; must be injective.
    pub embedding: GraphMorphism,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntryPoint {
    pub index: usize,
    /// Entry into main.
    pub binding: GraphMorphism,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WeaveError {
    #[error("entry point {index}: invalid binding")]
    InvalidBinding { index: usize, report: ValidationReport },
    #[error("invalid advice embedding")]
    InvalidEmbedding(ValidationReport),
    #[error("woven name `{0}` clashes with an existing element or constraint")]
    Clash(String),
    #[error("entry points {a} and {b} overlap on {}", .elements.join(", "))]
    Overlap { a: usize, b: usize, elements: Vec<String> },
}

fn check_embedding(a: &Advice) -> Result<(), WeaveError> {
    let mut r = check_morphism(&a.embedding);
    if a.embedding.source != a.entry.graph || a.embedding.target != a.advice.graph {
        r.push("embedding", "must map the entry metamodel into the advice metamodel");
    }
    if !a.embedding.is_injective() {
        r.push("embedding", "not injective");
    }
    for (cid, c) in &a.entry.constraints {
        let t = translate(c, &a.embedding, &|x| x.to_string());
        if !a.advice.constraints.values().any(|ac| *ac == t) {
            r.push(cid, "entry constraint has no counterpart in the advice");
        }
    }
    if r.is_ok() {
        Ok(())
    } else {
        Err(WeaveError::InvalidEmbedding(r.normalized()))
    }
}

fn translate(c: &ConstraintKind, f: &GraphMorphism, name: &dyn Fn(&str) -> String) -> ConstraintKind {
    let e = |x: &String| f.map_edge(x).map(name).unwrap_or_else(|| name(x));
    match c {
        ConstraintKind::Multiplicity { edge, end, lower, upper } => {
            ConstraintKind::Multiplicity { edge: e(edge), end: *end, lower: *lower, upper: *upper }
        }
        ConstraintKind::Key { edges } => ConstraintKind::Key { edges: edges.iter().map(e).collect() },
        ConstraintKind::Xor { edges } => ConstraintKind::Xor { edges: edges.iter().map(e).collect() },
        ConstraintKind::ValidityTrue { attr } => ConstraintKind::ValidityTrue { attr: e(attr) },
        ConstraintKind::DerivedEquality { name: n, chain } => {
            ConstraintKind::DerivedEquality { name: e(n), chain: chain.iter().map(e).collect() }
        }
    }
}

/// Pushout of the advice embedding and the entry binding. Elements glued to the main side
/// keep their main id; advice-only elements and constraints are prefixed `rev<k>.`.
/// Returns the woven metamodel and the injections of main and advice.
pub fn weave(main: &Metamodel, a: &Advice, p: &EntryPoint) -> Result<(Metamodel, GraphMorphism, GraphMorphism), WeaveError> {
    check_embedding(a)?;
    let mut r = check_morphism(&p.binding);
    if p.binding.source != a.entry.graph || p.binding.target != main.graph {
        r.push("binding", "must map the entry metamodel into the main metamodel");
    }
    if !r.is_ok() {
        return Err(WeaveError::InvalidBinding { index: p.index, report: r.normalized() });
    }
    let (q, from_a, from_m) = pushout(&a.embedding, &p.binding).map_err(|e| {
        let mut r = ValidationReport::default();
        r.push("pushout", e.to_string());
        WeaveError::InvalidBinding { index: p.index, report: r }
    })?;
    let prefix = format!("rev{}.", p.index);
    let mut node_name: BTreeMap<String, String> = BTreeMap::new();
    let mut edge_name: BTreeMap<String, String> = BTreeMap::new();
    for (x, c) in &from_m.node_map {
        let e = node_name.entry(c.clone()).or_insert_with(|| x.clone());
        if x < e {
            *e = x.clone();
        }
    }
    for (x, c) in &from_m.edge_map {
        let e = edge_name.entry(c.clone()).or_insert_with(|| x.clone());
        if x < e {
            *e = x.clone();
        }
    }
    for (y, c) in &from_a.node_map {
        node_name.entry(c.clone()).or_insert_with(|| format!("{prefix}{y}"));
    }
    for (y, c) in &from_a.edge_map {
        edge_name.entry(c.clone()).or_insert_with(|| format!("{prefix}{y}"));
    }
    let mut g = Graph::new();
    for (n, k) in q.nodes() {
        g.add_node(node_name[n].clone(), k).map_err(|_| WeaveError::Clash(node_name[n].clone()))?;
    }
    for (e, edge) in q.edges() {
        g.add_edge(edge_name[e].clone(), node_name[&edge.src].clone(), node_name[&edge.tgt].clone(), edge.kind)
            .map_err(|_| WeaveError::Clash(edge_name[e].clone()))?;
    }
    let rename = |m: &GraphMorphism| {
        GraphMorphism::new(
            m.source.clone(),
            g.clone(),
            m.node_map.iter().map(|(x, c)| (x.clone(), node_name[c].clone())).collect(),
            m.edge_map.iter().map(|(x, c)| (x.clone(), edge_name[c].clone())).collect(),
        )
    };
    let (inj_m, inj_a) = (rename(&from_m), rename(&from_a));
    let mut woven = Metamodel::new(g);
    woven.constraints = main.constraints.clone();
    woven.derived = main.derived.clone();
    let ident = |x: &str| x.to_string();
    for (name, chain) in &a.advice.derived {
        let n = inj_a.map_edge(name).map(str::to_string).unwrap_or_else(|| format!("{prefix}{name}"));
        let ch: Vec<String> = chain.iter().map(|e| inj_a.map_edge(e).unwrap_or(e).to_string()).collect();
        match woven.derived.get(&n) {
            Some(prev) if *prev != ch => return Err(WeaveError::Clash(n)),
            _ => {
                woven.derived.insert(n, ch);
            }
        }
    }
    for (cid, c) in &a.advice.constraints {
        let id = format!("{prefix}{cid}");
        let t = translate(c, &inj_a, &ident);
        match woven.constraints.get(&id) {
            Some(prev) if *prev != t => return Err(WeaveError::Clash(id)),
            _ => {
                woven.constraints.insert(id, t);
            }
        }
    }
    Ok((woven, inj_m, inj_a))
}

/// Elements of main shared by two bindings; shared value types are allowed.
fn overlap(main: &Graph, a: &GraphMorphism, b: &GraphMorphism) -> Vec<String> {
    let na: BTreeSet<&String> = a.node_map.values().collect();
    let ea: BTreeSet<&String> = a.edge_map.values().collect();
    let mut out: Vec<String> = b
        .node_map
        .values()
        .filter(|n| na.contains(n) && main.node_kind(n) != Some(NodeKind::ValueType))
        .cloned()
        .collect();
    out.extend(b.edge_map.values().filter(|e| ea.contains(e)).cloned());
    out.sort();
    out.dedup();
    out
}

/// Weaves at every point in turn. Overlapping bindings are rejected; since names depend only
/// on entry indices, the result does not depend on the order of `points`.
pub fn weave_all(main: &Metamodel, a: &Advice, points: &[EntryPoint]) -> Result<(Metamodel, GraphMorphism), WeaveError> {
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            if p.index == q.index {
                return Err(WeaveError::Clash(format!("rev{}", p.index)));
            }
            let w = overlap(&main.graph, &p.binding, &q.binding);
            if !w.is_empty() {
                let (a, b) = (p.index.min(q.index), p.index.max(q.index));
                return Err(WeaveError::Overlap { a, b, elements: w });
            }
        }
    }
    let mut cur = main.clone();
    let mut inj = GraphMorphism::identity(&main.graph);
    for p in points {
        let bound = EntryPoint {
            index: p.index,
            binding: compose(&p.binding, &inj).map_err(|e| {
                let mut r = ValidationReport::default();
                r.push("binding", e.to_string());
                WeaveError::InvalidBinding { index: p.index, report: r }
            })?,
        };
        let (w, m, _) = weave(&cur, a, &bound)?;
        inj = compose(&inj, &m).expect("injections compose");
        cur = w;
    }
    Ok((cur, inj))
}
