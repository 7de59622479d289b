//! Metamodels, typed instances, restriction along maps, and conformance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::graph::{
    check_morphism, labeled_isomorphic, Edge, EdgeKind, Graph, GraphError, GraphMorphism, NodeKind, ValidationReport,
};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Real(BigRational),
    Str(String),
}

impl Literal {
    pub fn type_name(&self) -> &'static str {
        match self {
            Literal::Bool(_) => "Bool",
            Literal::Int(_) => "Int",
            Literal::Real(_) => "Real",
            Literal::Str(_) => "String",
        }
    }

    /// Whether the literal may inhabit the value type `vt`. Unknown value types accept anything.
    pub fn fits(&self, vt: &str) -> bool {
        match vt {
            "Bool" | "Int" | "Real" | "String" => self.type_name() == vt,
            _ => true,
        }
    }

    pub fn as_rational(&self) -> Option<BigRational> {
        match self {
            Literal::Int(i) => Some(BigRational::from_integer(BigInt::from(*i))),
            Literal::Real(r) => Some(r.clone()),
            _ => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Real(r) => f.write_str(&format_real(r)),
            Literal::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

/// Parses a decimal literal such as `0.25`, `-3`, `1e-6` or `2.5E+3` exactly.
pub fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.find('.') {
        Some(i) => (&digits[..i], &digits[i + 1..]),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all = format!("{int_part}{frac_part}");
    let mut n: BigInt = all.parse().ok()?;
    if neg {
        n = -n;
    }
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let r = if scale >= 0 {
        BigRational::from_integer(n * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(n, num_traits::pow(ten, (-scale) as usize))
    };
    Some(r)
}

/// Canonical text of an exact real: `<m>e<k>` with `m` not divisible by ten when the
/// value has a terminating decimal expansion, otherwise `<n>/<d>`.
pub fn format_real(r: &BigRational) -> String {
    if r.is_zero() {
        return "0e0".to_string();
    }
    let mut d = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while (&d % &two).is_zero() {
        d /= &two;
    }
    while (&d % &five).is_zero() {
        d /= &five;
    }
    if !d.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let ten = BigInt::from(10);
    let mut k: i64 = 0;
    let mut v = r.clone();
    while !v.is_integer() {
        v *= BigRational::from_integer(ten.clone());
        k -= 1;
    }
    let mut m = v.to_integer();
    while (&m % &ten).is_zero() {
        m /= &ten;
        k += 1;
    }
    format!("{m}e{k}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum End {
    Src,
    Tgt,
}

impl End {
    pub fn as_str(self) -> &'static str {
        match self {
            End::Src => "src",
            End::Tgt => "tgt",
        }
    }
}

/// The closed constraint language.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintKind {
    /// Every object at `end` of `edge` has between `lower` and `upper` (`None` = unbounded) links.
    /// `edge` may name a derived association, which is then evaluated by composition.
    Multiplicity { edge: String, end: End, lower: u32, upper: Option<u32> },
    /// No two links typed by the listed edges share both endpoints.
    Key { edges: Vec<String> },
    /// Every object of the common source class uses exactly one of the listed edges.
    Xor { edges: Vec<String> },
    /// Every value reached by the attribute edge is `true`.
    ValidityTrue { attr: String },
    /// The links of edge `name` are exactly the composition of `chain`.
    DerivedEquality { name: String, chain: Vec<String> },
}

impl ConstraintKind {
    /// Edge ids and derived names mentioned by the constraint.
    pub fn mentions(&self) -> Vec<&str> {
        match self {
            ConstraintKind::Multiplicity { edge, .. } => vec![edge],
            ConstraintKind::Key { edges } | ConstraintKind::Xor { edges } => edges.iter().map(String::as_str).collect(),
            ConstraintKind::ValidityTrue { attr } => vec![attr],
            ConstraintKind::DerivedEquality { name, chain } => {
                std::iter::once(name.as_str()).chain(chain.iter().map(String::as_str)).collect()
            }
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintKind::Multiplicity { edge, end, lower, upper } => {
                let u = upper.map(|u| u.to_string()).unwrap_or_else(|| "*".into());
                write!(f, "mult {edge} {} {lower} {u}", end.as_str())
            }
            ConstraintKind::Key { edges } => write!(f, "key {}", edges.join(" ")),
            ConstraintKind::Xor { edges } => write!(f, "xor {}", edges.join(" ")),
            ConstraintKind::ValidityTrue { attr } => write!(f, "validity {attr}"),
            ConstraintKind::DerivedEquality { name, chain } => write!(f, "derived {name} = {}", chain.join(" ")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetamodelError {
    #[error("constraint `{id}`: {message}")]
    BadConstraint { id: String, message: String },
    #[error("derived association `{name}`: {message}")]
    BadDerived { name: String, message: String },
    #[error("duplicate constraint id `{0}`")]
    DuplicateConstraint(String),
    #[error("unknown derived association `{0}`")]
    UnknownDerived(String),
    #[error("type graph mismatch")]
    TypeMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Instance(String),
}

/// A type graph with constraints and derived associations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metamodel {
    pub graph: Graph,
    pub constraints: BTreeMap<String, ConstraintKind>,
    pub derived: BTreeMap<String, Vec<String>>,
}

impl Metamodel {
    pub fn new(graph: Graph) -> Self {
        Metamodel { graph, constraints: BTreeMap::new(), derived: BTreeMap::new() }
    }

    /// Source and target class of a derivation chain, if composable.
    pub fn chain_ends(&self, chain: &[String]) -> Result<(String, String), String> {
        let mut ends: Option<(String, String)> = None;
        for e in chain {
            let edge = self.graph.edge(e).ok_or_else(|| format!("unknown edge `{e}`"))?;
            if edge.kind == EdgeKind::Attribute {
                return Err(format!("`{e}` is an attribute"));
            }
            ends = match ends {
                None => Some((edge.src.clone(), edge.tgt.clone())),
                Some((s, t)) if t == edge.src => Some((s, edge.tgt.clone())),
                Some(_) => return Err(format!("`{e}` does not continue the chain")),
            };
        }
        ends.ok_or_else(|| "empty chain".to_string())
    }

    pub fn add_derived(&mut self, name: &str, chain: Vec<String>) -> Result<(), MetamodelError> {
        let bad = |m: String| MetamodelError::BadDerived { name: name.to_string(), message: m };
        let (s, t) = self.chain_ends(&chain).map_err(bad)?;
        if let Some(e) = self.graph.edge(name) {
            if e.src != s || e.tgt != t {
                return Err(bad(format!("edge `{name}` does not span {s} -> {t}")));
            }
        }
        if let Some(prev) = self.derived.get(name) {
            if prev != &chain {
                return Err(bad("redefined with a different chain".into()));
            }
        }
        self.derived.insert(name.to_string(), chain);
        Ok(())
    }

    /// Source and target class of an edge or derived association.
    pub fn ends_of(&self, name: &str) -> Option<(String, String)> {
        if let Some(chain) = self.derived.get(name) {
            return self.chain_ends(chain).ok();
        }
        self.graph.edge(name).map(|e| (e.src.clone(), e.tgt.clone()))
    }

    pub fn validate_constraint(&self, c: &ConstraintKind) -> Result<(), String> {
        match c {
            ConstraintKind::Multiplicity { edge, lower, upper, .. } => {
                if self.ends_of(edge).is_none() {
                    return Err(format!("unknown edge `{edge}`"));
                }
                if let Some(u) = upper {
                    if lower > u {
                        return Err(format!("lower bound {lower} exceeds upper bound {u}"));
                    }
                }
            }
            ConstraintKind::Key { edges } => {
                if edges.is_empty() {
                    return Err("key lists no edges".into());
                }
                for e in edges {
                    if !self.graph.has_edge(e) {
                        return Err(format!("unknown edge `{e}`"));
                    }
                }
            }
            ConstraintKind::Xor { edges } => {
                if edges.len() < 2 {
                    return Err("xor needs at least two edges".into());
                }
                let mut srcs = BTreeSet::new();
                for e in edges {
                    let edge = self.graph.edge(e).ok_or_else(|| format!("unknown edge `{e}`"))?;
                    srcs.insert(edge.src.clone());
                }
                if srcs.len() != 1 {
                    return Err("xor edges do not share a source class".into());
                }
            }
            ConstraintKind::ValidityTrue { attr } => {
                let edge = self.graph.edge(attr).ok_or_else(|| format!("unknown edge `{attr}`"))?;
                if edge.kind != EdgeKind::Attribute {
                    return Err(format!("`{attr}` is not an attribute"));
                }
            }
            ConstraintKind::DerivedEquality { name, chain } => {
                if !self.graph.has_edge(name) {
                    return Err(format!("derived edge `{name}` is not in the type graph"));
                }
                match self.derived.get(name) {
                    Some(c) if c == chain => {}
                    Some(_) => return Err(format!("chain differs from the registered chain of `{name}`")),
                    None => return Err(format!("`{name}` is not a registered derived association")),
                }
            }
        }
        Ok(())
    }

    pub fn add_constraint(&mut self, id: &str, c: ConstraintKind) -> Result<(), MetamodelError> {
        if self.constraints.contains_key(id) {
            return Err(MetamodelError::DuplicateConstraint(id.to_string()));
        }
        if let ConstraintKind::DerivedEquality { name, chain } = &c {
            if !self.derived.contains_key(name) {
                self.add_derived(name, chain.clone())?;
            }
        }
        self.validate_constraint(&c)
            .map_err(|message| MetamodelError::BadConstraint { id: id.to_string(), message })?;
        self.constraints.insert(id.to_string(), c);
        Ok(())
    }

    /// The sub-metamodel generated by the named elements, keeping every constraint and
    /// derived association that lies entirely inside it.
    pub fn view<'a, I>(&self, elements: I) -> Result<Metamodel, GraphError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let graph = self.graph.closure(elements)?;
        let mut m = Metamodel::new(graph);
        for (name, chain) in &self.derived {
            if chain.iter().all(|e| m.graph.has_edge(e)) && (!self.graph.has_edge(name) || m.graph.has_edge(name)) {
                m.derived.insert(name.clone(), chain.clone());
            }
        }
        for (id, c) in &self.constraints {
            if m.validate_constraint(c).is_ok() && c.mentions().iter().all(|e| m.graph.has_edge(e) || m.derived.contains_key(*e)) {
                m.constraints.insert(id.clone(), c.clone());
            }
        }
        Ok(m)
    }

    /// Local name of an attribute edge: the id without its `Class.` prefix.
    pub fn attr_local<'a>(&self, attr: &'a str) -> &'a str {
        attr_local_name(&self.graph, attr)
    }
}

pub fn attr_local_name<'a>(g: &Graph, attr: &'a str) -> &'a str {
    match g.edge(attr) {
        Some(e) => attr.strip_prefix(e.src.as_str()).and_then(|r| r.strip_prefix('.')).unwrap_or(attr),
        None => attr,
    }
}

/// A data graph typed over a type graph, with literal values on value nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    data: Graph,
    type_graph: Arc<Graph>,
    node_types: BTreeMap<String, String>,
    edge_types: BTreeMap<String, String>,
    values: BTreeMap<String, Literal>,
}

impl Instance {
    pub fn empty(type_graph: &Graph) -> Self {
        Instance::over(Arc::new(type_graph.clone()))
    }

    pub fn over(type_graph: Arc<Graph>) -> Self {
        Instance {
            data: Graph::new(),
            type_graph,
            node_types: BTreeMap::new(),
            edge_types: BTreeMap::new(),
            values: BTreeMap::new(),
        }
    }

    pub fn data(&self) -> &Graph {
        &self.data
    }

    pub fn type_graph(&self) -> &Graph {
        &self.type_graph
    }

    pub fn type_graph_arc(&self) -> &Arc<Graph> {
        &self.type_graph
    }

    pub fn values(&self) -> &BTreeMap<String, Literal> {
        &self.values
    }

    pub fn node_type(&self, id: &str) -> Option<&str> {
        self.node_types.get(id).map(String::as_str)
    }

    pub fn edge_type(&self, id: &str) -> Option<&str> {
        self.edge_types.get(id).map(String::as_str)
    }

    pub fn value(&self, node: &str) -> Option<&Literal> {
        self.values.get(node)
    }

    /// The typing map as a graph morphism.
    pub fn typing(&self) -> GraphMorphism {
        GraphMorphism::new(
            self.data.clone(),
            (*self.type_graph).clone(),
            self.node_types.clone(),
            self.edge_types.clone(),
        )
    }

    /// Builds an instance from a data graph, a typing map and value bindings; no checks.
    pub fn from_parts(typing: GraphMorphism, values: BTreeMap<String, Literal>) -> Self {
        Instance {
            data: typing.source,
            type_graph: Arc::new(typing.target),
            node_types: typing.node_map,
            edge_types: typing.edge_map,
            values,
        }
    }

    pub fn object_count(&self) -> usize {
        self.data.nodes().filter(|(_, k)| *k != NodeKind::ValueType).count()
    }

    pub fn objects_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.node_types.iter().filter(move |(_, t)| t.as_str() == class).map(|(n, _)| n.as_str())
    }

    pub fn links_of<'a>(&'a self, edge_type: &'a str) -> impl Iterator<Item = (&'a str, &'a Edge)> + 'a {
        self.edge_types
            .iter()
            .filter(move |(_, t)| t.as_str() == edge_type)
            .map(|(e, _)| (e.as_str(), self.data.edge(e).unwrap()))
    }

    /// Values of attribute `attr` on `obj`.
    pub fn attr_values<'a>(&'a self, obj: &'a str, attr: &'a str) -> Vec<&'a Literal> {
        self.links_of(attr).filter(|(_, e)| e.src == obj).filter_map(|(_, e)| self.values.get(&e.tgt)).collect()
    }

    pub fn add_object(&mut self, id: &str, class: &str) -> Result<(), MetamodelError> {
        let kind = self
            .type_graph
            .node_kind(class)
            .ok_or_else(|| MetamodelError::Instance(format!("unknown type `{class}` for `{id}`")))?;
        self.data.add_node(id, kind)?;
        self.node_types.insert(id.to_string(), class.to_string());
        Ok(())
    }

    pub fn add_link(&mut self, id: &str, edge_type: &str, src: &str, tgt: &str) -> Result<(), MetamodelError> {
        let ty = self
            .type_graph
            .edge(edge_type)
            .ok_or_else(|| MetamodelError::Instance(format!("unknown edge type `{edge_type}` for `{id}`")))?
            .clone();
        for (end, want) in [(src, &ty.src), (tgt, &ty.tgt)] {
            match self.node_types.get(end) {
                None => return Err(MetamodelError::Instance(format!("link `{id}` references unknown object `{end}`"))),
                Some(t) if t != want => {
                    return Err(MetamodelError::Instance(format!(
                        "link `{id}`: `{end}` has type `{t}` but `{edge_type}` needs `{want}`"
                    )))
                }
                _ => {}
            }
        }
        self.data.add_edge(id, src, tgt, ty.kind)?;
        self.edge_types.insert(id.to_string(), edge_type.to_string());
        Ok(())
    }

    /// Adds a value node and its attribute link with explicit ids.
    pub fn add_value_with_ids(
        &mut self,
        node: &str,
        link: &str,
        obj: &str,
        attr: &str,
        lit: Literal,
    ) -> Result<(), MetamodelError> {
        let ty = self
            .type_graph
            .edge(attr)
            .ok_or_else(|| MetamodelError::Instance(format!("unknown attribute `{attr}`")))?
            .clone();
        if ty.kind != EdgeKind::Attribute {
            return Err(MetamodelError::Instance(format!("`{attr}` is not an attribute")));
        }
        if !lit.fits(&ty.tgt) {
            return Err(MetamodelError::Instance(format!("literal {lit} does not fit value type `{}`", ty.tgt)));
        }
        self.add_object(node, &ty.tgt)?;
        self.values.insert(node.to_string(), lit);
        if let Err(e) = self.add_link(link, attr, obj, node) {
            self.data.remove_isolated_node(node);
            self.node_types.remove(node);
            self.values.remove(node);
            return Err(e);
        }
        Ok(())
    }

    /// Adds a value node with no attribute link.
    pub fn add_literal(&mut self, node: &str, value_type: &str, lit: Literal) -> Result<(), MetamodelError> {
        if self.type_graph.node_kind(value_type) != Some(NodeKind::ValueType) {
            return Err(MetamodelError::Instance(format!("`{value_type}` is not a value type")));
        }
        if !lit.fits(value_type) {
            return Err(MetamodelError::Instance(format!("literal {lit} does not fit value type `{value_type}`")));
        }
        self.add_object(node, value_type)?;
        self.values.insert(node.to_string(), lit);
        Ok(())
    }

    /// Adds a value with the conventional ids `obj.local` for both node and link.
    pub fn add_value(&mut self, obj: &str, attr: &str, lit: Literal) -> Result<(), MetamodelError> {
        let id = format!("{obj}.{}", attr_local_name(&self.type_graph, attr));
        self.add_value_with_ids(&id, &id, obj, attr, lit)
    }

    pub fn remove_link(&mut self, id: &str) -> bool {
        self.edge_types.remove(id);
        self.data.remove_edge(id).is_some()
    }

    /// Removes a node together with every link touching it.
    pub fn remove_node(&mut self, id: &str) {
        let touching: Vec<String> = self
            .data
            .edges()
            .filter(|(_, e)| e.src == id || e.tgt == id)
            .map(|(e, _)| e.to_string())
            .collect();
        for e in touching {
            self.remove_link(&e);
        }
        self.data.remove_isolated_node(id);
        self.node_types.remove(id);
        self.values.remove(id);
    }

    /// Typing well-formedness: a valid morphism, and values exactly on value-typed nodes.
    pub fn check_typing(&self) -> ValidationReport {
        let mut r = check_morphism(&self.typing());
        for (n, k) in self.data.nodes() {
            let has = self.values.get(n);
            match (k == NodeKind::ValueType, has) {
                (true, None) => r.push(n, "value node without a literal"),
                (false, Some(_)) => r.push(n, "literal bound to a non-value node"),
                (true, Some(lit)) => {
                    if let Some(t) = self.node_types.get(n) {
                        if !lit.fits(t) {
                            r.push(n, format!("literal {lit} does not fit value type `{t}`"));
                        }
                    }
                }
                _ => {}
            }
        }
        for n in self.values.keys() {
            if !self.data.has_node(n) {
                r.push(n, "literal bound to a missing node");
            }
        }
        r.normalized()
    }

    /// Push-forward along `f`: same data, types mapped by `f`.
    pub fn retype(&self, f: &GraphMorphism) -> Result<Instance, MetamodelError> {
        if &f.source != self.type_graph.as_ref() {
            return Err(MetamodelError::TypeMismatch);
        }
        let mut out = Instance::empty(&f.target);
        out.data = self.data.clone();
        out.values = self.values.clone();
        for (n, t) in &self.node_types {
            let m = f.map_node(t).ok_or_else(|| MetamodelError::Instance(format!("type `{t}` is not mapped")))?;
            out.node_types.insert(n.clone(), m.to_string());
        }
        for (e, t) in &self.edge_types {
            let m = f.map_edge(t).ok_or_else(|| MetamodelError::Instance(format!("type `{t}` is not mapped")))?;
            out.edge_types.insert(e.clone(), m.to_string());
        }
        Ok(out)
    }

    /// Same data retyped onto a supergraph of the current type graph.
    pub fn widen(&self, sup: &Graph) -> Result<Instance, MetamodelError> {
        let inc = GraphMorphism::inclusion(&self.type_graph, sup)?;
        self.retype(&inc)
    }

    /// Unites `other` into `self`, identifying elements with equal ids.
    /// Identified elements must agree on type, endpoints and value.
    pub fn absorb(&mut self, other: &Instance) -> Result<(), MetamodelError> {
        if other.type_graph != self.type_graph {
            return Err(MetamodelError::TypeMismatch);
        }
        for (n, t) in &other.node_types {
            match self.node_types.get(n) {
                Some(mine) if mine != t => {
                    return Err(MetamodelError::Instance(format!("`{n}` typed `{mine}` and `{t}`")));
                }
                Some(_) => {
                    if self.values.get(n) != other.values.get(n) {
                        return Err(MetamodelError::Instance(format!("`{n}` carries conflicting values")));
                    }
                }
                None => {
                    self.data.add_node(n.clone(), other.data.node_kind(n).unwrap())?;
                    self.node_types.insert(n.clone(), t.clone());
                    if let Some(v) = other.values.get(n) {
                        self.values.insert(n.clone(), v.clone());
                    }
                }
            }
        }
        for (e, t) in &other.edge_types {
            let oe = other.data.edge(e).unwrap();
            match self.data.edge(e) {
                Some(mine) => {
                    if mine != oe || self.edge_types.get(e) != Some(t) {
                        return Err(MetamodelError::Instance(format!("link `{e}` disagrees between parts")));
                    }
                }
                None => {
                    self.data.add_edge(e.clone(), oe.src.clone(), oe.tgt.clone(), oe.kind)?;
                    self.edge_types.insert(e.clone(), t.clone());
                }
            }
        }
        Ok(())
    }

    /// Renames nodes and edges; ids absent from the maps are kept.
    pub fn rename(&self, nodes: &BTreeMap<String, String>, edges: &BTreeMap<String, String>) -> Result<Instance, MetamodelError> {
        let nn = |n: &str| nodes.get(n).cloned().unwrap_or_else(|| n.to_string());
        let mut out = Instance::over(self.type_graph.clone());
        for (n, k) in self.data.nodes() {
            out.data.add_node(nn(n), k)?;
            out.node_types.insert(nn(n), self.node_types[n].clone());
            if let Some(v) = self.values.get(n) {
                out.values.insert(nn(n), v.clone());
            }
        }
        for (e, edge) in self.data.edges() {
            let id = edges.get(e).cloned().unwrap_or_else(|| e.to_string());
            out.data.add_edge(id.clone(), nn(&edge.src), nn(&edge.tgt), edge.kind)?;
            out.edge_types.insert(id, self.edge_types[e].clone());
        }
        Ok(out)
    }
}

impl Instance {
    /// One declaration per line, sorted: `obj ID TYPE`, `link ID EDGE SRC -> TGT`,
    /// `val OBJ NAME LIT` for conventionally named values, `val LINK NODE ATTR OBJ LIT`
    /// otherwise, and `lit NODE TYPE LIT` for value nodes without an attribute link.
    pub fn canonical_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        let mut linked: BTreeSet<&str> = BTreeSet::new();
        for (e, edge) in self.data.edges() {
            let ty = &self.edge_types[e];
            if let Some(lit) = self.values.get(&edge.tgt) {
                if edge.kind == EdgeKind::Attribute {
                    linked.insert(&edge.tgt);
                    let src_ty = &self.node_types[&edge.src];
                    let local = ty.strip_prefix(src_ty.as_str()).and_then(|r| r.strip_prefix('.'));
                    match local {
                        Some(l) if !l.is_empty() && *e == format!("{}.{l}", edge.src) && edge.tgt == e => {
                            lines.push(format!("val {} {l} {lit}", edge.src));
                        }
                        _ => lines.push(format!("val {e} {} {ty} {} {lit}", edge.tgt, edge.src)),
                    }
                    continue;
                }
            }
            lines.push(format!("link {e} {ty} {} -> {}", edge.src, edge.tgt));
        }
        for (n, t) in &self.node_types {
            match self.values.get(n) {
                Some(lit) if !linked.contains(n.as_str()) => lines.push(format!("lit {n} {t} {lit}")),
                Some(_) => {}
                None => lines.push(format!("obj {n} {t}")),
            }
        }
        lines.sort();
        lines
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in self.canonical_lines() {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Typed isomorphism: a bijection preserving types, values, links and link types.
pub fn instances_isomorphic(a: &Instance, b: &Instance) -> bool {
    if a.type_graph != b.type_graph {
        return false;
    }
    let index = |i: &'_ Instance| -> BTreeMap<String, usize> {
        i.data.nodes().enumerate().map(|(k, (n, _))| (n.to_string(), k)).collect()
    };
    let (ia, ib) = (index(a), index(b));
    let labels = |i: &'_ Instance| -> Vec<(String, Option<Literal>)> {
        i.data.nodes().map(|(n, _)| (i.node_types[n].clone(), i.values.get(n).cloned())).collect()
    };
    let edges = |i: &Instance, ix: &BTreeMap<String, usize>| -> Vec<(usize, usize, String)> {
        i.data
            .edges()
            .map(|(e, edge)| (ix[&edge.src], ix[&edge.tgt], i.edge_types[e].clone()))
            .collect()
    };
    labeled_isomorphic(&labels(a), &edges(a, &ia), &labels(b), &edges(b, &ib))
}

/// Pulls `i` back along `e: M → N` where `i` is typed over `N`: the pullback of the typing
/// and `e`. Elements whose type has a single preimage keep their id; otherwise the copy
/// for preimage `m` of element `x` is named `(x|m)`.
pub fn restrict(i: &Instance, e: &GraphMorphism) -> Result<Instance, MetamodelError> {
    if i.type_graph() != &e.target {
        return Err(MetamodelError::TypeMismatch);
    }
    let mut node_fiber: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (s, t) in &e.node_map {
        node_fiber.entry(t.as_str()).or_default().push(s.as_str());
    }
    let mut edge_fiber: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (s, t) in &e.edge_map {
        edge_fiber.entry(t.as_str()).or_default().push(s.as_str());
    }
    let name = |x: &str, m: &str, fiber_len: usize| if fiber_len == 1 { x.to_string() } else { format!("({x}|{m})") };
    let mut out = Instance::empty(&e.source);
    let mut node_name: BTreeMap<(&str, &str), String> = BTreeMap::new();
    for (x, t) in &i.node_types {
        if let Some(fib) = node_fiber.get(t.as_str()) {
            for m in fib {
                let id = name(x, m, fib.len());
                out.data.add_node(id.clone(), i.data.node_kind(x).unwrap())?;
                out.node_types.insert(id.clone(), m.to_string());
                if let Some(v) = i.values.get(x) {
                    out.values.insert(id.clone(), v.clone());
                }
                node_name.insert((x.as_str(), m), id);
            }
        }
    }
    for (d, t) in &i.edge_types {
        if let Some(fib) = edge_fiber.get(t.as_str()) {
            let de = i.data.edge(d).unwrap();
            for m in fib {
                let me = e.source.edge(m).unwrap();
                let src = &node_name[&(de.src.as_str(), me.src.as_str())];
                let tgt = &node_name[&(de.tgt.as_str(), me.tgt.as_str())];
                let id = name(d, m, fib.len());
                out.data.add_edge(id.clone(), src.clone(), tgt.clone(), de.kind)?;
                out.edge_types.insert(id, m.to_string());
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    Holds,
    Violated(Vec<String>),
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    fn from_witnesses(mut w: Vec<String>) -> Verdict {
        if w.is_empty() {
            Verdict::Holds
        } else {
            w.sort();
            w.dedup();
            Verdict::Violated(w)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConformanceReport {
    pub typing: ValidationReport,
    pub verdicts: Vec<(String, Verdict)>,
}

impl ConformanceReport {
    pub fn typing_ok(&self) -> bool {
        self.typing.is_ok()
    }

    pub fn conforms(&self) -> bool {
        self.typing_ok() && self.verdicts.iter().all(|(_, v)| v.holds())
    }

    pub fn violations(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.verdicts.iter().filter_map(|(c, v)| match v {
            Verdict::Violated(w) => Some((c.as_str(), w.as_slice())),
            Verdict::Holds => None,
        })
    }
}

/// Link pairs of an edge, or of a derived association by composition (as a set).
pub fn link_pairs(m: &Metamodel, i: &Instance, name: &str) -> Vec<(String, String)> {
    if let Some(chain) = m.derived.get(name) {
        return compose_chain(i, chain).into_iter().collect();
    }
    i.links_of(name).map(|(_, e)| (e.src.clone(), e.tgt.clone())).collect()
}

/// Relational composition of the link sets along `chain`.
pub fn compose_chain(i: &Instance, chain: &[String]) -> BTreeSet<(String, String)> {
    let mut rel: Option<BTreeSet<(String, String)>> = None;
    for e in chain {
        let step: BTreeSet<(String, String)> = i.links_of(e).map(|(_, l)| (l.src.clone(), l.tgt.clone())).collect();
        rel = Some(match rel {
            None => step,
            Some(r) => {
                let mut by_src: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
                for (a, b) in &step {
                    by_src.entry(a).or_default().push(b);
                }
                r.iter()
                    .flat_map(|(a, b)| {
                        by_src.get(b.as_str()).into_iter().flatten().map(move |c| (a.clone(), c.to_string()))
                    })
                    .collect()
            }
        });
    }
    rel.unwrap_or_default()
}

/// Evaluates one constraint on an instance of `m`.
pub fn eval_constraint(c: &ConstraintKind, m: &Metamodel, i: &Instance) -> Verdict {
    match c {
        ConstraintKind::Multiplicity { edge, end, lower, upper } => {
            let Some((src_class, tgt_class)) = m.ends_of(edge) else {
                return Verdict::Violated(vec![edge.clone()]);
            };
            let class = if *end == End::Src { src_class } else { tgt_class };
            let mut counts: BTreeMap<&str, u32> = i.objects_of(&class).map(|o| (o, 0)).collect();
            let pairs = link_pairs(m, i, edge);
            for (s, t) in &pairs {
                let at = if *end == End::Src { s } else { t };
                if let Some(c) = counts.get_mut(at.as_str()) {
                    *c += 1;
                }
            }
            let w = counts
                .into_iter()
                .filter(|(_, n)| n < lower || upper.is_some_and(|u| *n > u))
                .map(|(o, _)| o.to_string())
                .collect();
            Verdict::from_witnesses(w)
        }
        ConstraintKind::Key { edges } => {
            let mut seen: BTreeMap<(&str, &str), Vec<&str>> = BTreeMap::new();
            for e in edges {
                for (id, l) in i.links_of(e) {
                    seen.entry((l.src.as_str(), l.tgt.as_str())).or_default().push(id);
                }
            }
            let w = seen.into_values().filter(|v| v.len() > 1).flatten().map(str::to_string).collect();
            Verdict::from_witnesses(w)
        }
        ConstraintKind::Xor { edges } => {
            let Some(class) = edges.first().and_then(|e| m.graph.edge(e)).map(|e| e.src.clone()) else {
                return Verdict::Violated(edges.clone());
            };
            let used: Vec<BTreeSet<String>> =
                edges.iter().map(|e| i.links_of(e).map(|(_, l)| l.src.clone()).collect()).collect();
            let w = i
                .objects_of(&class)
                .filter(|o| used.iter().filter(|s| s.contains(*o)).count() != 1)
                .map(str::to_string)
                .collect();
            Verdict::from_witnesses(w)
        }
        ConstraintKind::ValidityTrue { attr } => {
            let w = i
                .links_of(attr)
                .filter(|(_, l)| i.values.get(&l.tgt) != Some(&Literal::Bool(true)))
                .map(|(_, l)| l.src.clone())
                .collect();
            Verdict::from_witnesses(w)
        }
        ConstraintKind::DerivedEquality { name, chain } => {
            let expected = compose_chain(i, chain);
            let mut actual: BTreeMap<(String, String), usize> = BTreeMap::new();
            for (_, l) in i.links_of(name) {
                *actual.entry((l.src.clone(), l.tgt.clone())).or_default() += 1;
            }
            let mut w: Vec<String> = Vec::new();
            for (pair, n) in &actual {
                if *n != 1 || !expected.contains(pair) {
                    w.push(pair.0.clone());
                }
            }
            for pair in &expected {
                if !actual.contains_key(pair) {
                    w.push(pair.0.clone());
                }
            }
            Verdict::from_witnesses(w)
        }
    }
}

/// Checks typing and evaluates every constraint of `m`.
pub fn conforms(i: &Instance, m: &Metamodel) -> ConformanceReport {
    let mut typing = i.check_typing();
    if i.type_graph() != &m.graph {
        typing.push("<typing>", "instance is not typed over this metamodel");
        return ConformanceReport { typing, verdicts: Vec::new() };
    }
    let verdicts = m.constraints.iter().map(|(id, c)| (id.clone(), eval_constraint(c, m, i))).collect();
    ConformanceReport { typing, verdicts }
}

/// A derived association's links with the multiplicity inferred at its source end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedAssociation {
    pub pairs: BTreeSet<(String, String)>,
    pub lower: u32,
    pub upper: Option<u32>,
}

/// Source-end bounds declared for an edge, intersected over all its multiplicity constraints.
pub fn declared_bounds(m: &Metamodel, edge: &str) -> (u32, Option<u32>) {
    let mut lo = 0;
    let mut hi: Option<u32> = None;
    for c in m.constraints.values() {
        if let ConstraintKind::Multiplicity { edge: e, end: End::Src, lower, upper } = c {
            if e == edge {
                lo = lo.max(*lower);
                hi = match (hi, upper) {
                    (None, u) => *u,
                    (Some(h), None) => Some(h),
                    (Some(h), Some(u)) => Some(h.min(*u)),
                };
            }
        }
    }
    (lo, hi)
}

/// Computes a derived association by relational composition and infers its source-end
/// multiplicity: the upper bound is the product of upper bounds; the lower bound is the
/// last component's lower bound when every component is mandatory, else zero.
pub fn derive_association(m: &Metamodel, i: &Instance, name: &str) -> Result<DerivedAssociation, MetamodelError> {
    let chain = m.derived.get(name).ok_or_else(|| MetamodelError::UnknownDerived(name.to_string()))?;
    let pairs = compose_chain(i, chain);
    let bounds: Vec<(u32, Option<u32>)> = chain.iter().map(|e| declared_bounds(m, e)).collect();
    let lower = if bounds.iter().all(|(l, _)| *l >= 1) { bounds.last().map(|b| b.0).unwrap_or(0) } else { 0 };
    let upper = if bounds.iter().any(|(_, u)| *u == Some(0)) {
        Some(0)
    } else {
        bounds.iter().try_fold(1u32, |acc, (_, u)| u.map(|u| acc.saturating_mul(u)))
    };
    Ok(DerivedAssociation { pairs, lower, upper })
}

/// For every object of `group_class`, the maximum integer value of `member_attr` over the
/// objects linked to it by `membership` (member → group). Groups without members, or whose
/// members carry no value, are reported.
pub fn derived_attribute_max(
    i: &Instance,
    group_class: &str,
    membership: &str,
    member_attr: &str,
) -> (BTreeMap<String, i64>, ValidationReport) {
    let mut out = BTreeMap::new();
    let mut report = ValidationReport::default();
    for g in i.objects_of(group_class) {
        let members: Vec<&str> = i.links_of(membership).filter(|(_, l)| l.tgt == g).map(|(_, l)| l.src.as_str()).collect();
        if members.is_empty() {
            report.push(g, format!("group has no members via `{membership}`"));
            continue;
        }
        let best = members
            .iter()
            .flat_map(|o| i.attr_values(o, member_attr))
            .filter_map(|v| if let Literal::Int(n) = v { Some(*n) } else { None })
            .max();
        match best {
            Some(v) => {
                out.insert(g.to_string(), v);
            }
            None => report.push(g, format!("no member carries `{member_attr}`")),
        }
    }
    (out, report.normalized())
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn is_negative(r: &BigRational) -> bool {
    r.is_negative()
}
