//! Coproduct, pullback, pushout and finite colimits of graphs.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::{check_morphism, Graph, GraphMorphism, NodeKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatError {
    #[error("maps do not share a target")]
    TargetMismatch,
    #[error("maps do not share a source")]
    SourceMismatch,
    #[error("ill-formed diagram: {0}")]
    IllFormed(String),
}

/// Two maps out of a common head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub left: GraphMorphism,
    pub right: GraphMorphism,
}

impl Span {
    pub fn new(left: GraphMorphism, right: GraphMorphism) -> Result<Self, CatError> {
        if left.source != right.source {
            return Err(CatError::SourceMismatch);
        }
        Ok(Span { left, right })
    }

    pub fn head(&self) -> &Graph {
        &self.left.source
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arrow {
    pub src: String,
    pub tgt: String,
    pub map: GraphMorphism,
}

/// Labelled graphs and maps between them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagram {
    pub objects: BTreeMap<String, Graph>,
    pub arrows: Vec<Arrow>,
}

impl Diagram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn object(&mut self, label: impl Into<String>, g: Graph) -> &mut Self {
        self.objects.insert(label.into(), g);
        self
    }

    pub fn arrow(&mut self, src: impl Into<String>, tgt: impl Into<String>, map: GraphMorphism) -> &mut Self {
        self.arrows.push(Arrow { src: src.into(), tgt: tgt.into(), map });
        self
    }

    pub fn check(&self) -> Result<(), CatError> {
        for (i, a) in self.arrows.iter().enumerate() {
            let (Some(s), Some(t)) = (self.objects.get(&a.src), self.objects.get(&a.tgt)) else {
                return Err(CatError::IllFormed(format!("arrow {i} references an unknown object")));
            };
            if &a.map.source != s || &a.map.target != t {
                return Err(CatError::IllFormed(format!("arrow {i} ({} -> {}) does not match its objects", a.src, a.tgt)));
            }
            let r = check_morphism(&a.map);
            if !r.is_ok() {
                return Err(CatError::IllFormed(format!("arrow {i} ({} -> {}) is not a morphism: {}", a.src, a.tgt, r.violations[0])));
            }
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut y = x;
        while self.parent[y] != r {
            let next = self.parent[y];
            self.parent[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Colimit of a finite diagram: the disjoint union of all objects modulo the
/// equivalence generated by the arrows. Each merged element is named by the
/// least qualified id `label.id` among its members.
pub fn colimit(d: &Diagram) -> Result<(Graph, BTreeMap<String, GraphMorphism>), CatError> {
    d.check()?;
    let mut node_ix: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut node_names: Vec<String> = Vec::new();
    let mut edge_ix: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut edge_names: Vec<String> = Vec::new();
    for (label, g) in &d.objects {
        for (n, _) in g.nodes() {
            node_ix.insert((label, n), node_names.len());
            node_names.push(format!("{label}.{n}"));
        }
        for (e, _) in g.edges() {
            edge_ix.insert((label, e), edge_names.len());
            edge_names.push(format!("{label}.{e}"));
        }
    }
    for names in [&node_names, &edge_names] {
        let mut sorted: Vec<&String> = names.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(CatError::IllFormed(format!("qualified id `{}` is ambiguous", w[0])));
        }
    }
    let mut nuf = UnionFind::new(node_names.len());
    let mut euf = UnionFind::new(edge_names.len());
    for a in &d.arrows {
        for (x, y) in &a.map.node_map {
            nuf.union(node_ix[&(a.src.as_str(), x.as_str())], node_ix[&(a.tgt.as_str(), y.as_str())]);
        }
        for (x, y) in &a.map.edge_map {
            euf.union(edge_ix[&(a.src.as_str(), x.as_str())], edge_ix[&(a.tgt.as_str(), y.as_str())]);
        }
    }
    let mut node_rep: BTreeMap<usize, String> = BTreeMap::new();
    for (i, name) in node_names.iter().enumerate() {
        let r = nuf.find(i);
        let e = node_rep.entry(r).or_insert_with(|| name.clone());
        if name < e {
            *e = name.clone();
        }
    }
    let mut edge_rep: BTreeMap<usize, String> = BTreeMap::new();
    for (i, name) in edge_names.iter().enumerate() {
        let r = euf.find(i);
        let e = edge_rep.entry(r).or_insert_with(|| name.clone());
        if name < e {
            *e = name.clone();
        }
    }
    let mut out = Graph::new();
    let mut kinds: BTreeMap<String, NodeKind> = BTreeMap::new();
    for ((label, n), i) in &node_ix {
        let rep = node_rep[&nuf.find(*i)].clone();
        let kind = d.objects[*label].node_kind(n).unwrap();
        if let Some(k) = kinds.insert(rep.clone(), kind) {
            if k != kind {
                return Err(CatError::IllFormed(format!("node `{rep}` merges different kinds")));
            }
        }
    }
    for (n, k) in &kinds {
        out.add_node(n.clone(), *k).map_err(|e| CatError::IllFormed(e.to_string()))?;
    }
    let mut maps: BTreeMap<String, GraphMorphism> = BTreeMap::new();
    let mut pending_edges: BTreeMap<String, (String, String, crate::graph::EdgeKind)> = BTreeMap::new();
    for (label, g) in &d.objects {
        let mut node_map = BTreeMap::new();
        for (n, _) in g.nodes() {
            node_map.insert(n.to_string(), node_rep[&nuf.find(node_ix[&(label.as_str(), n)])].clone());
        }
        let mut edge_map = BTreeMap::new();
        for (e, edge) in g.edges() {
            let rep = edge_rep[&euf.find(edge_ix[&(label.as_str(), e)])].clone();
            let shape = (node_map[&edge.src].clone(), node_map[&edge.tgt].clone(), edge.kind);
            if let Some(prev) = pending_edges.insert(rep.clone(), shape.clone()) {
                if prev != shape {
                    return Err(CatError::IllFormed(format!("edge `{rep}` merges incompatible edges")));
                }
            }
            edge_map.insert(e.to_string(), rep);
        }
        maps.insert(label.clone(), GraphMorphism::new(g.clone(), Graph::new(), node_map, edge_map));
    }
    for (e, (s, t, k)) in pending_edges {
        out.add_edge(e, s, t, k).map_err(|e| CatError::IllFormed(e.to_string()))?;
    }
    for m in maps.values_mut() {
        m.target = out.clone();
    }
    Ok((out, maps))
}

/// Colimit whose elements are named by the least plain (unqualified) id among their
/// members, falling back to the qualified name where two elements would collide.
pub fn colimit_named(d: &Diagram) -> Result<(Graph, BTreeMap<String, GraphMorphism>), CatError> {
    let (g, maps) = colimit(d)?;
    let mut node_bare: BTreeMap<&str, &str> = BTreeMap::new();
    let mut edge_bare: BTreeMap<&str, &str> = BTreeMap::new();
    for m in maps.values() {
        for (x, c) in &m.node_map {
            let e = node_bare.entry(c.as_str()).or_insert(x.as_str());
            if x.as_str() < *e {
                *e = x;
            }
        }
        for (x, c) in &m.edge_map {
            let e = edge_bare.entry(c.as_str()).or_insert(x.as_str());
            if x.as_str() < *e {
                *e = x;
            }
        }
    }
    let pick = |bare: &BTreeMap<&str, &str>| -> BTreeMap<String, String> {
        let mut uses: BTreeMap<&str, usize> = BTreeMap::new();
        for b in bare.values() {
            *uses.entry(b).or_default() += 1;
        }
        let qualified: std::collections::BTreeSet<&str> = bare.keys().copied().collect();
        bare.iter()
            .map(|(c, b)| {
                let free = uses[b] == 1 && (!qualified.contains(b) || b == c);
                (c.to_string(), if free { b.to_string() } else { c.to_string() })
            })
            .collect()
    };
    let (nn, en) = (pick(&node_bare), pick(&edge_bare));
    let mut out = Graph::new();
    for (n, k) in g.nodes() {
        out.add_node(nn[n].clone(), k).map_err(|e| CatError::IllFormed(e.to_string()))?;
    }
    for (e, edge) in g.edges() {
        out.add_edge(en[e].clone(), nn[&edge.src].clone(), nn[&edge.tgt].clone(), edge.kind)
            .map_err(|e| CatError::IllFormed(e.to_string()))?;
    }
    let maps = maps
        .into_iter()
        .map(|(l, m)| {
            let node_map = m.node_map.iter().map(|(x, c)| (x.clone(), nn[c].clone())).collect();
            let edge_map = m.edge_map.iter().map(|(x, c)| (x.clone(), en[c].clone())).collect();
            (l, GraphMorphism::new(m.source, out.clone(), node_map, edge_map))
        })
        .collect();
    Ok((out, maps))
}

/// Disjoint union with its two injections; the summands are labelled `l` and `r`.
pub fn coproduct(m: &Graph, n: &Graph) -> (Graph, GraphMorphism, GraphMorphism) {
    let mut d = Diagram::new();
    d.object("l", m.clone()).object("r", n.clone());
    let (g, mut maps) = colimit(&d).expect("a discrete diagram is well formed");
    let r = maps.remove("r").unwrap();
    let l = maps.remove("l").unwrap();
    (g, l, r)
}

/// Canonical pullback `{(a|b) | f(a) = g(b)}` with its two projections.
pub fn pullback(f: &GraphMorphism, g: &GraphMorphism) -> Result<(Graph, GraphMorphism, GraphMorphism), CatError> {
    if f.target != g.target {
        return Err(CatError::TargetMismatch);
    }
    let pair = |a: &str, b: &str| format!("({a}|{b})");
    let mut apex = Graph::new();
    let (mut p1n, mut p2n) = (BTreeMap::new(), BTreeMap::new());
    for (a, kind) in f.source.nodes() {
        let Some(fa) = f.map_node(a) else { continue };
        for (b, _) in g.source.nodes() {
            if g.map_node(b) == Some(fa) {
                let id = pair(a, b);
                apex.add_node(id.clone(), kind).map_err(|e| CatError::IllFormed(e.to_string()))?;
                p1n.insert(id.clone(), a.to_string());
                p2n.insert(id, b.to_string());
            }
        }
    }
    let (mut p1e, mut p2e) = (BTreeMap::new(), BTreeMap::new());
    for (a, ea) in f.source.edges() {
        let Some(fa) = f.map_edge(a) else { continue };
        for (b, eb) in g.source.edges() {
            if g.map_edge(b) == Some(fa) {
                let id = pair(a, b);
                apex.add_edge(id.clone(), pair(&ea.src, &eb.src), pair(&ea.tgt, &eb.tgt), ea.kind)
                    .map_err(|e| CatError::IllFormed(e.to_string()))?;
                p1e.insert(id.clone(), a.to_string());
                p2e.insert(id, b.to_string());
            }
        }
    }
    let p1 = GraphMorphism::new(apex.clone(), f.source.clone(), p1n, p1e);
    let p2 = GraphMorphism::new(apex.clone(), g.source.clone(), p2n, p2e);
    Ok((apex, p1, p2))
}

/// Pushout of `e: E → A` and `w: E → M`: `A + M` glued along `E`.
/// Members are qualified by `a.` (left) and `m.` (right), so glued classes take the left name.
pub fn pushout(e: &GraphMorphism, w: &GraphMorphism) -> Result<(Graph, GraphMorphism, GraphMorphism), CatError> {
    if e.source != w.source {
        return Err(CatError::SourceMismatch);
    }
    let mut d = Diagram::new();
    d.object("a", e.target.clone())
        .object("e", e.source.clone())
        .object("m", w.target.clone())
        .arrow("e", "a", e.clone())
        .arrow("e", "m", w.clone());
    let (g, mut maps) = colimit(&d)?;
    Ok((g, maps.remove("a").unwrap(), maps.remove("m").unwrap()))
}

/// True iff the pullback of `f` and `g` is empty.
pub fn disjoint_images(f: &GraphMorphism, g: &GraphMorphism) -> Result<bool, CatError> {
    Ok(overlap_witness(f, g)?.is_empty())
}

/// The apex node ids of the pullback of `f` and `g`: shared preimages.
pub fn overlap_witness(f: &GraphMorphism, g: &GraphMorphism) -> Result<Vec<String>, CatError> {
    let (apex, _, _) = pullback(f, g)?;
    Ok(apex.nodes().map(|(n, _)| n.to_string()).collect())
}
