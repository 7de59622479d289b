//! Finite directed graphs with kinded nodes and edges, and morphisms between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Class,
    ValueType,
    ProcessClass,
    PortNode,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Class => "class",
            NodeKind::ValueType => "value",
            NodeKind::ProcessClass => "process",
            NodeKind::PortNode => "port",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Association,
    Attribute,
    Dataflow,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Association => "association",
            EdgeKind::Attribute => "attribute",
            EdgeKind::Dataflow => "dataflow",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: String,
    pub tgt: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("edge `{edge}` references missing node `{node}`")]
    DanglingEdge { edge: String, node: String },
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("composition domain mismatch: target of the first map is not the source of the second")]
    CompositionDomain,
    #[error("not a subgraph: {0}")]
    NotSubgraph(String),
}

/// A finite graph. Node ids and edge ids live in separate namespaces.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Graph {
    nodes: BTreeMap<String, NodeKind>,
    edges: BTreeMap<String, Edge>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>, kind: NodeKind) -> Result<(), GraphError> {
        let id = id.into();
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.nodes.insert(id, kind);
        Ok(())
    }

    pub fn add_edge(
        &mut self,
        id: impl Into<String>,
        src: impl Into<String>,
        tgt: impl Into<String>,
        kind: EdgeKind,
    ) -> Result<(), GraphError> {
        let (id, src, tgt) = (id.into(), src.into(), tgt.into());
        if self.edges.contains_key(&id) {
            return Err(GraphError::DuplicateEdge(id));
        }
        for n in [&src, &tgt] {
            if !self.nodes.contains_key(n) {
                return Err(GraphError::DanglingEdge { edge: id, node: n.clone() });
            }
        }
        self.edges.insert(id, Edge { src, tgt, kind });
        Ok(())
    }

    pub fn with_node(mut self, id: &str, kind: NodeKind) -> Result<Self, GraphError> {
        self.add_node(id, kind)?;
        Ok(self)
    }

    pub fn with_edge(mut self, id: &str, src: &str, tgt: &str, kind: EdgeKind) -> Result<Self, GraphError> {
        self.add_edge(id, src, tgt, kind)?;
        Ok(self)
    }

    /// Removes an edge; returns it if present.
    pub fn remove_edge(&mut self, id: &str) -> Option<Edge> {
        self.edges.remove(id)
    }

    /// Removes a node that no edge touches.
    pub fn remove_isolated_node(&mut self, id: &str) -> Option<NodeKind> {
        if self.edges.values().any(|e| e.src == id || e.tgt == id) {
            return None;
        }
        self.nodes.remove(id)
    }

    pub fn node_kind(&self, id: &str) -> Option<NodeKind> {
        self.nodes.get(id).copied()
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.get(id)
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn has_edge(&self, id: &str) -> bool {
        self.edges.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, NodeKind)> + '_ {
        self.nodes.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &Edge)> + '_ {
        self.edges.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }

    /// Nodes that are not value types.
    pub fn class_count(&self) -> usize {
        self.nodes.values().filter(|k| **k != NodeKind::ValueType).count()
    }

    /// The smallest subgraph containing the named elements; an edge brings its endpoints.
    /// A name resolving to both a node and an edge selects both.
    pub fn closure<'a, I>(&self, elements: I) -> Result<Graph, GraphError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut nodes = BTreeSet::new();
        let mut edges = BTreeSet::new();
        for el in elements {
            let mut found = false;
            if self.nodes.contains_key(el) {
                nodes.insert(el.to_string());
                found = true;
            }
            if let Some(e) = self.edges.get(el) {
                edges.insert(el.to_string());
                nodes.insert(e.src.clone());
                nodes.insert(e.tgt.clone());
                found = true;
            }
            if !found {
                return Err(GraphError::UnknownElement(el.to_string()));
            }
        }
        Ok(self.subgraph(&nodes, &edges))
    }

    /// Restriction to the given ids. Edges whose endpoints are missing are dropped.
    pub fn subgraph(&self, nodes: &BTreeSet<String>, edges: &BTreeSet<String>) -> Graph {
        let mut g = Graph::new();
        for (id, k) in &self.nodes {
            if nodes.contains(id) {
                g.nodes.insert(id.clone(), *k);
            }
        }
        for (id, e) in &self.edges {
            if edges.contains(id) && g.nodes.contains_key(&e.src) && g.nodes.contains_key(&e.tgt) {
                g.edges.insert(id.clone(), e.clone());
            }
        }
        g
    }

    /// True iff every element of `self` occurs in `other` with the same kind and endpoints.
    pub fn is_subgraph_of(&self, other: &Graph) -> bool {
        self.nodes.iter().all(|(id, k)| other.nodes.get(id) == Some(k))
            && self.edges.iter().all(|(id, e)| other.edges.get(id) == Some(e))
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (id, k) in &self.nodes {
            writeln!(f, "node {id} {}", k.as_str())?;
        }
        for (id, e) in &self.edges {
            writeln!(f, "edge {id} {} -> {} {}", e.src, e.tgt, e.kind.as_str())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub element: String,
    pub message: String,
}

impl Violation {
    pub fn new(element: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { element: element.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

/// A list of violations; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, element: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation::new(element, message));
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    /// Sorts and deduplicates entries.
    pub fn normalized(mut self) -> Self {
        self.violations.sort();
        self.violations.dedup();
        self
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A map between graphs given by node and edge functions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphMorphism {
    pub source: Graph,
    pub target: Graph,
    pub node_map: BTreeMap<String, String>,
    pub edge_map: BTreeMap<String, String>,
}

impl GraphMorphism {
    pub fn new(
        source: Graph,
        target: Graph,
        node_map: BTreeMap<String, String>,
        edge_map: BTreeMap<String, String>,
    ) -> Self {
        GraphMorphism { source, target, node_map, edge_map }
    }

    pub fn identity(g: &Graph) -> Self {
        let node_map = g.nodes().map(|(n, _)| (n.to_string(), n.to_string())).collect();
        let edge_map = g.edges().map(|(e, _)| (e.to_string(), e.to_string())).collect();
        GraphMorphism::new(g.clone(), g.clone(), node_map, edge_map)
    }

    /// The id-preserving inclusion of `sub` into `sup`.
    pub fn inclusion(sub: &Graph, sup: &Graph) -> Result<Self, GraphError> {
        if !sub.is_subgraph_of(sup) {
            let missing = sub
                .nodes()
                .find(|(n, k)| sup.node_kind(n) != Some(*k))
                .map(|(n, _)| n.to_string())
                .or_else(|| sub.edges().find(|(e, x)| sup.edge(e) != Some(*x)).map(|(e, _)| e.to_string()))
                .unwrap_or_default();
            return Err(GraphError::NotSubgraph(missing));
        }
        let mut m = GraphMorphism::identity(sub);
        m.target = sup.clone();
        Ok(m)
    }

    pub fn map_node(&self, id: &str) -> Option<&str> {
        self.node_map.get(id).map(String::as_str)
    }

    pub fn map_edge(&self, id: &str) -> Option<&str> {
        self.edge_map.get(id).map(String::as_str)
    }

    /// Preimage of a target node.
    pub fn node_fiber(&self, tgt: &str) -> Vec<&str> {
        self.node_map.iter().filter(|(_, t)| t.as_str() == tgt).map(|(s, _)| s.as_str()).collect()
    }

    pub fn edge_fiber(&self, tgt: &str) -> Vec<&str> {
        self.edge_map.iter().filter(|(_, t)| t.as_str() == tgt).map(|(s, _)| s.as_str()).collect()
    }

    pub fn check(&self) -> ValidationReport {
        check_morphism(self)
    }

    pub fn is_injective(&self) -> bool {
        is_injective(self)
    }

    /// `self` then `g`.
    pub fn then(&self, g: &GraphMorphism) -> Result<GraphMorphism, GraphError> {
        compose(self, g)
    }
}

/// Lists every totality, kind or structure-preservation failure of `m`.
pub fn check_morphism(m: &GraphMorphism) -> ValidationReport {
    let mut r = ValidationReport::default();
    for (n, kind) in m.source.nodes() {
        match m.node_map.get(n) {
            None => r.push(n, "node is not mapped"),
            Some(t) => match m.target.node_kind(t) {
                None => r.push(n, format!("node maps to missing node `{t}`")),
                Some(k) if k != kind => r.push(n, format!("node kind {} maps to kind {}", kind.as_str(), k.as_str())),
                _ => {}
            },
        }
    }
    for n in m.node_map.keys() {
        if !m.source.has_node(n) {
            r.push(n, "node map entry for a node outside the source");
        }
    }
    for (e, edge) in m.source.edges() {
        match m.edge_map.get(e) {
            None => r.push(e, "edge is not mapped"),
            Some(t) => match m.target.edge(t) {
                None => r.push(e, format!("edge maps to missing edge `{t}`")),
                Some(te) => {
                    let mut problems = Vec::new();
                    if te.kind != edge.kind {
                        problems.push(format!("kind {} maps to kind {}", edge.kind.as_str(), te.kind.as_str()));
                    }
                    if m.node_map.get(&edge.src).map(String::as_str) != Some(te.src.as_str()) {
                        problems.push(format!("source does not map to source of `{t}`"));
                    }
                    if m.node_map.get(&edge.tgt).map(String::as_str) != Some(te.tgt.as_str()) {
                        problems.push(format!("target does not map to target of `{t}`"));
                    }
                    if !problems.is_empty() {
                        r.push(e, problems.join("; "));
                    }
                }
            },
        }
    }
    for e in m.edge_map.keys() {
        if !m.source.has_edge(e) {
            r.push(e, "edge map entry for an edge outside the source");
        }
    }
    r.normalized()
}

/// Composition `g ∘ f` (first `f`, then `g`).
pub fn compose(f: &GraphMorphism, g: &GraphMorphism) -> Result<GraphMorphism, GraphError> {
    if f.target != g.source {
        return Err(GraphError::CompositionDomain);
    }
    let node_map = f
        .node_map
        .iter()
        .filter_map(|(a, b)| g.node_map.get(b).map(|c| (a.clone(), c.clone())))
        .collect();
    let edge_map = f
        .edge_map
        .iter()
        .filter_map(|(a, b)| g.edge_map.get(b).map(|c| (a.clone(), c.clone())))
        .collect();
    Ok(GraphMorphism::new(f.source.clone(), g.target.clone(), node_map, edge_map))
}

pub fn is_injective(m: &GraphMorphism) -> bool {
    let nodes: BTreeSet<&String> = m.node_map.values().collect();
    let edges: BTreeSet<&String> = m.edge_map.values().collect();
    nodes.len() == m.node_map.len() && edges.len() == m.edge_map.len()
}

/// Labelled multigraph isomorphism by refinement plus backtracking.
/// Nodes carry labels `L`, edges carry labels `E`; edges are `(src, tgt, label)` over node indices.
pub fn labeled_isomorphic<L: Ord + Clone, E: Ord + Clone>(
    a_nodes: &[L],
    a_edges: &[(usize, usize, E)],
    b_nodes: &[L],
    b_edges: &[(usize, usize, E)],
) -> bool {
    if a_nodes.len() != b_nodes.len() || a_edges.len() != b_edges.len() {
        return false;
    }
    let sig = |nodes: &[L], edges: &[(usize, usize, E)]| -> Vec<(L, Vec<(bool, E)>)> {
        let mut inc: Vec<Vec<(bool, E)>> = vec![Vec::new(); nodes.len()];
        for (s, t, l) in edges {
            inc[*s].push((true, l.clone()));
            inc[*t].push((false, l.clone()));
        }
        nodes
            .iter()
            .zip(inc)
            .map(|(l, mut v)| {
                v.sort();
                (l.clone(), v)
            })
            .collect()
    };
    let sa = sig(a_nodes, a_edges);
    let sb = sig(b_nodes, b_edges);
    let mut ms_a = sa.clone();
    let mut ms_b = sb.clone();
    ms_a.sort();
    ms_b.sort();
    if ms_a != ms_b {
        return false;
    }
    let mut ea: Vec<E> = a_edges.iter().map(|e| e.2.clone()).collect();
    let mut eb: Vec<E> = b_edges.iter().map(|e| e.2.clone()).collect();
    ea.sort();
    eb.sort();
    if ea != eb {
        return false;
    }
    let adj = |edges: &[(usize, usize, E)]| -> BTreeMap<(usize, usize), Vec<E>> {
        let mut m: BTreeMap<(usize, usize), Vec<E>> = BTreeMap::new();
        for (s, t, l) in edges {
            m.entry((*s, *t)).or_default().push(l.clone());
        }
        for v in m.values_mut() {
            v.sort();
        }
        m
    };
    let adj_a = adj(a_edges);
    let adj_b = adj(b_edges);
    let empty: Vec<E> = Vec::new();
    // Order nodes of `a` so that rare signatures are matched first.
    let mut order: Vec<usize> = (0..a_nodes.len()).collect();
    let count = |s: &(L, Vec<(bool, E)>)| sa.iter().filter(|x| *x == s).count();
    order.sort_by_key(|i| (count(&sa[*i]), *i));
    let mut assign: Vec<Option<usize>> = vec![None; a_nodes.len()];
    let mut used = vec![false; b_nodes.len()];

    #[allow(clippy::too_many_arguments)]
    fn go<L: Ord, E: Ord>(
        k: usize,
        order: &[usize],
        sa: &[(L, Vec<(bool, E)>)],
        sb: &[(L, Vec<(bool, E)>)],
        adj_a: &BTreeMap<(usize, usize), Vec<E>>,
        adj_b: &BTreeMap<(usize, usize), Vec<E>>,
        empty: &Vec<E>,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
    ) -> bool {
        if k == order.len() {
            return true;
        }
        let u = order[k];
        for v in 0..sb.len() {
            if used[v] || sb[v] != sa[u] {
                continue;
            }
            let consistent = order[..k].iter().chain(std::iter::once(&u)).all(|&w| {
                let x = if w == u { v } else { assign[w].unwrap() };
                adj_a.get(&(u, w)).unwrap_or(empty) == adj_b.get(&(v, x)).unwrap_or(empty)
                    && adj_a.get(&(w, u)).unwrap_or(empty) == adj_b.get(&(x, v)).unwrap_or(empty)
            });
            if !consistent {
                continue;
            }
            assign[u] = Some(v);
            used[v] = true;
            if go(k + 1, order, sa, sb, adj_a, adj_b, empty, assign, used) {
                return true;
            }
            assign[u] = None;
            used[v] = false;
        }
        false
    }
    go(0, &order, &sa, &sb, &adj_a, &adj_b, &empty, &mut assign, &mut used)
}

/// Graph isomorphism preserving node and edge kinds.
pub fn isomorphic(a: &Graph, b: &Graph) -> bool {
    let (an, ae) = indexed(a);
    let (bn, be) = indexed(b);
    labeled_isomorphic(&an, &ae, &bn, &be)
}

fn indexed(g: &Graph) -> (Vec<NodeKind>, Vec<(usize, usize, EdgeKind)>) {
    let idx: BTreeMap<&str, usize> = g.nodes().enumerate().map(|(i, (n, _))| (n, i)).collect();
    let nodes = g.nodes().map(|(_, k)| k).collect();
    let edges = g.edges().map(|(_, e)| (idx[e.src.as_str()], idx[e.tgt.as_str()], e.kind)).collect();
    (nodes, edges)
}
