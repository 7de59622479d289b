//! Process arity schemas, built-in semantic kinds, and the no-side-effect check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use thiserror::Error;

use crate::catops::overlap_witness;
use crate::exec::{DataflowDefinition, ExecError};
use crate::graph::{check_morphism, EdgeKind, GraphMorphism, ValidationReport};
use crate::metamodel::{
    compose_chain, derived_attribute_max, instances_isomorphic, restrict, Instance, Literal, Metamodel, MetamodelError,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputPort {
    pub port: String,
    pub metamodel: Metamodel,
    pub injection: GraphMorphism,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputPort {
    pub port: String,
    pub metamodel: Metamodel,
    pub map: GraphMorphism,
}

/// One step of a process's inner semantics. Steps run in order on the inner instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SemanticKind {
    Identity,
    /// Merge a fixed instance (typed over a subgraph of the inner graph) by id. Elements
    /// typed in an input image act as anchors: they are kept only if the inputs have them.
    Constant(Instance),
    /// Materialize the composition of `chain` as links of edge `target`, ids `target.<src>.<tgt>`.
    ComposeLinks { chain: Vec<String>, target: String },
    /// Give each group (target of `membership`) the max of its members' `member_attr`.
    AttributeMax { membership: String, member_attr: String, group_attr: String },
    /// For each `via` link h → m: `out_attr(m) := prob_attr(m) <= table[level_attr(h)]`.
    /// A missing level, probability or table entry yields `false`.
    ThresholdCompare {
        via: String,
        level_attr: String,
        prob_attr: String,
        out_attr: String,
        table: BTreeMap<i64, BigRational>,
    },
    /// Bind `attr` on every object of its source class from the external verdicts.
    SetValidity { attr: String, default: Option<bool> },
    /// A registered hook; replaces the inner instance.
    Custom(String),
    /// An encapsulated workflow: the inner instance is the merged state of a run.
    Workflow(Box<DataflowDefinition>),
}

impl fmt::Display for SemanticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemanticKind::Identity => f.write_str("identity"),
            SemanticKind::Constant(_) => f.write_str("constant"),
            SemanticKind::ComposeLinks { target, .. } => write!(f, "compose {target}"),
            SemanticKind::AttributeMax { group_attr, .. } => write!(f, "max {group_attr}"),
            SemanticKind::ThresholdCompare { out_attr, .. } => write!(f, "threshold {out_attr}"),
            SemanticKind::SetValidity { attr, .. } => write!(f, "validity {attr}"),
            SemanticKind::Custom(h) => write!(f, "custom {h}"),
            SemanticKind::Workflow(d) => write!(f, "workflow {}", d.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessSchema {
    pub name: String,
    pub inputs: Vec<InputPort>,
    pub inner: Metamodel,
    pub output: OutputPort,
    pub semantics: Vec<SemanticKind>,
}

pub type Hook = Arc<dyn Fn(&Instance) -> Result<Instance, String> + Send + Sync>;

/// External inputs to semantics: review verdicts and custom hooks.
#[derive(Clone, Default)]
pub struct ApplyContext {
    pub verdicts: BTreeMap<String, bool>,
    pub hooks: BTreeMap<String, Hook>,
}

impl fmt::Debug for ApplyContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApplyContext")
            .field("verdicts", &self.verdicts)
            .field("hooks", &self.hooks.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl ApplyContext {
    pub fn with_verdicts(verdicts: BTreeMap<String, bool>) -> Self {
        ApplyContext { verdicts, hooks: BTreeMap::new() }
    }

    pub fn hook(mut self, id: &str, h: impl Fn(&Instance) -> Result<Instance, String> + Send + Sync + 'static) -> Self {
        self.hooks.insert(id.to_string(), Arc::new(h));
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProcessError {
    #[error("process `{process}` expects {expected} inputs, got {got}")]
    Arity { process: String, expected: usize, got: usize },
    #[error("process `{process}`: input `{port}` is not typed over the port metamodel")]
    Typing { process: String, port: String },
    #[error("process `{process}`: hook `{hook}` failed: {message}")]
    Hook { process: String, hook: String, message: String },
    #[error("process `{process}`: {message}")]
    Semantic { process: String, message: String, witnesses: Vec<String> },
    #[error("process `{process}`: ill-formed schema")]
    IllFormed { process: String, report: ValidationReport },
    #[error(transparent)]
    Metamodel(#[from] MetamodelError),
    #[error("encapsulated workflow: {0}")]
    Workflow(Box<ExecError>),
}

impl ProcessError {
    pub fn witnesses(&self) -> Vec<String> {
        match self {
            ProcessError::Semantic { witnesses, .. } => witnesses.clone(),
            ProcessError::IllFormed { report, .. } => report.violations.iter().map(|v| v.element.clone()).collect(),
            ProcessError::Workflow(e) => e.witnesses(),
            _ => Vec::new(),
        }
    }
}

impl ProcessSchema {
    pub fn port_index(&self, port: &str) -> Option<usize> {
        self.inputs.iter().position(|p| p.port == port)
    }
}

fn check_semantics(s: &ProcessSchema, r: &mut ValidationReport) {
    let g = &s.inner.graph;
    let attr_of = |a: &str, class: &str, r: &mut ValidationReport| match g.edge(a) {
        Some(e) if e.kind == EdgeKind::Attribute && e.src == class => Some(e.tgt.clone()),
        Some(_) => {
            r.push(a, format!("not an attribute of `{class}`"));
            None
        }
        None => {
            r.push(a, "attribute missing from the inner metamodel");
            None
        }
    };
    for k in &s.semantics {
        match k {
            SemanticKind::Identity | SemanticKind::Custom(_) | SemanticKind::Workflow(_) => {}
            SemanticKind::Constant(i) => {
                if !i.type_graph().is_subgraph_of(g) {
                    r.push(&s.name, "constant instance is not typed over a part of the inner metamodel");
                }
            }
            SemanticKind::ComposeLinks { chain, target } => match s.inner.chain_ends(chain) {
                Err(m) => r.push(target, m),
                Ok((a, b)) => match g.edge(target) {
                    Some(e) if e.src == a && e.tgt == b => {}
                    _ => r.push(target, format!("target edge must span {a} -> {b}")),
                },
            },
            SemanticKind::AttributeMax { membership, member_attr, group_attr } => match g.edge(membership) {
                Some(e) => {
                    let (m, grp) = (e.src.clone(), e.tgt.clone());
                    attr_of(member_attr, &m, r);
                    attr_of(group_attr, &grp, r);
                }
                None => r.push(membership, "membership edge missing from the inner metamodel"),
            },
            SemanticKind::ThresholdCompare { via, level_attr, prob_attr, out_attr, .. } => match g.edge(via) {
                Some(e) => {
                    let (h, m) = (e.src.clone(), e.tgt.clone());
                    attr_of(level_attr, &h, r);
                    attr_of(prob_attr, &m, r);
                    if let Some(vt) = attr_of(out_attr, &m, r) {
                        if vt != "Bool" {
                            r.push(out_attr, "output attribute must be Bool-valued");
                        }
                    }
                }
                None => r.push(via, "edge missing from the inner metamodel"),
            },
            SemanticKind::SetValidity { attr, .. } => match g.edge(attr) {
                Some(e) if e.kind == EdgeKind::Attribute && e.tgt == "Bool" => {}
                _ => r.push(attr, "validity attribute must be a Bool attribute of the inner metamodel"),
            },
        }
    }
}

/// Injectivity and pairwise disjointness of the input arms, well-formedness of the output
/// map, and parameter typing of the semantics.
pub fn check_arity(s: &ProcessSchema) -> ValidationReport {
    let mut r = ValidationReport::default();
    for p in &s.inputs {
        let inj = &p.injection;
        for v in check_morphism(inj).violations {
            r.push(format!("{}:{}", p.port, v.element), v.message);
        }
        if inj.source != p.metamodel.graph {
            r.push(&p.port, "injection source differs from the port metamodel");
        }
        if inj.target != s.inner.graph {
            r.push(&p.port, "injection target differs from the inner metamodel");
        }
        if !inj.is_injective() {
            r.push(&p.port, "input map is not injective");
        }
    }
    for (i, a) in s.inputs.iter().enumerate() {
        for b in &s.inputs[i + 1..] {
            if let Ok(w) = overlap_witness(&a.injection, &b.injection) {
                if !w.is_empty() {
                    r.push(format!("{}/{}", a.port, b.port), format!("input images overlap on {}", w.join(", ")));
                }
            }
        }
    }
    let o = &s.output;
    for v in check_morphism(&o.map).violations {
        r.push(format!("{}:{}", o.port, v.element), v.message);
    }
    if o.map.source != o.metamodel.graph {
        r.push(&o.port, "output map source differs from the output metamodel");
    }
    if o.map.target != s.inner.graph {
        r.push(&o.port, "output map target differs from the inner metamodel");
    }
    check_semantics(s, &mut r);
    r.normalized()
}

/// Embeds the inputs into one inner instance; ids clashing with an earlier input are
/// prefixed with the port name.
fn embed(s: &ProcessSchema, inputs: &[Instance]) -> Result<Instance, ProcessError> {
    let mut inner = Instance::empty(&s.inner.graph);
    for (p, x) in s.inputs.iter().zip(inputs) {
        let mut retyped = x.retype(&p.injection)?;
        let clash_n: BTreeMap<String, String> = retyped
            .data()
            .nodes()
            .filter(|(n, _)| inner.data().has_node(n))
            .map(|(n, _)| (n.to_string(), format!("{}.{n}", p.port)))
            .collect();
        let clash_e: BTreeMap<String, String> = retyped
            .data()
            .edges()
            .filter(|(e, _)| inner.data().has_edge(e))
            .map(|(e, _)| (e.to_string(), format!("{}.{e}", p.port)))
            .collect();
        if !clash_n.is_empty() || !clash_e.is_empty() {
            retyped = retyped.rename(&clash_n, &clash_e)?;
        }
        inner.absorb(&retyped)?;
    }
    Ok(inner)
}

fn semantic_err(s: &ProcessSchema, message: impl Into<String>, witnesses: Vec<String>) -> ProcessError {
    ProcessError::Semantic { process: s.name.clone(), message: message.into(), witnesses }
}

fn bind_once(s: &ProcessSchema, inner: &mut Instance, obj: &str, attr: &str, lit: Literal) -> Result<(), ProcessError> {
    let existing: Vec<Literal> = inner.attr_values(obj, attr).into_iter().cloned().collect();
    if existing.is_empty() {
        inner.add_value(obj, attr, lit)?;
        Ok(())
    } else if existing == [lit] {
        Ok(())
    } else {
        Err(semantic_err(s, format!("`{attr}` already bound differently on `{obj}`"), vec![obj.to_string()]))
    }
}

fn run_step(s: &ProcessSchema, k: &SemanticKind, inner: Instance, inputs: &[Instance], ctx: &ApplyContext) -> Result<Instance, ProcessError> {
    let mut inner = inner;
    match k {
        SemanticKind::Identity => {}
        SemanticKind::Constant(c) => {
            let mut widened = c.widen(&s.inner.graph)?;
            let node_img: BTreeSet<&String> = s.inputs.iter().flat_map(|p| p.injection.node_map.values()).collect();
            let edge_img: BTreeSet<&String> = s.inputs.iter().flat_map(|p| p.injection.edge_map.values()).collect();
            let dangling: Vec<String> = widened
                .data()
                .nodes()
                .filter(|(n, _)| {
                    let t = widened.node_type(n).unwrap();
                    node_img.contains(&t.to_string()) && inner.node_type(n) != Some(t)
                })
                .map(|(n, _)| n.to_string())
                .collect();
            for n in dangling {
                widened.remove_node(&n);
            }
            let stray: Vec<String> = widened
                .data()
                .edges()
                .filter(|(e, x)| {
                    edge_img.contains(&widened.edge_type(e).unwrap().to_string()) && inner.data().edge(e) != Some(*x)
                })
                .map(|(e, _)| e.to_string())
                .collect();
            for e in stray {
                widened.remove_link(&e);
            }
            inner.absorb(&widened)?;
        }
        SemanticKind::ComposeLinks { chain, target } => {
            for (a, b) in compose_chain(&inner, chain) {
                let id = format!("{target}.{a}.{b}");
                if !inner.data().has_edge(&id) {
                    inner.add_link(&id, target, &a, &b)?;
                }
            }
        }
        SemanticKind::AttributeMax { membership, member_attr, group_attr } => {
            let group_class = s.inner.graph.edge(membership).map(|e| e.tgt.clone()).unwrap_or_default();
            let (vals, report) = derived_attribute_max(&inner, &group_class, membership, member_attr);
            if !report.is_ok() {
                let w = report.violations.iter().map(|v| v.element.clone()).collect();
                return Err(semantic_err(s, format!("cannot compute `{group_attr}`: empty group"), w));
            }
            for (g, v) in vals {
                bind_once(s, &mut inner, &g, group_attr, Literal::Int(v))?;
            }
        }
        SemanticKind::ThresholdCompare { via, level_attr, prob_attr, out_attr, table } => {
            let links: Vec<(String, String)> = inner.links_of(via).map(|(_, l)| (l.src.clone(), l.tgt.clone())).collect();
            for (h, m) in links {
                let level = inner.attr_values(&h, level_attr).first().and_then(|l| match l {
                    Literal::Int(n) => Some(*n),
                    _ => None,
                });
                let prob = inner.attr_values(&m, prob_attr).first().and_then(|l| l.as_rational());
                let ok = match (level.and_then(|l| table.get(&l)), prob) {
                    (Some(target), Some(p)) => &p <= target,
                    _ => false,
                };
                bind_once(s, &mut inner, &m, out_attr, Literal::Bool(ok))?;
            }
        }
        SemanticKind::SetValidity { attr, default } => {
            let class = s.inner.graph.edge(attr).map(|e| e.src.clone()).unwrap_or_default();
            let objs: Vec<String> = inner.objects_of(&class).map(str::to_string).collect();
            let mut missing = Vec::new();
            for o in objs {
                match ctx.verdicts.get(&o).copied().or(*default) {
                    Some(v) => bind_once(s, &mut inner, &o, attr, Literal::Bool(v))?,
                    None => missing.push(o),
                }
            }
            if !missing.is_empty() {
                return Err(semantic_err(s, "no review verdict", missing));
            }
        }
        SemanticKind::Custom(h) => {
            let hook = ctx.hooks.get(h).ok_or_else(|| ProcessError::Hook {
                process: s.name.clone(),
                hook: h.clone(),
                message: "not registered".into(),
            })?;
            inner = hook(&inner).map_err(|message| ProcessError::Hook { process: s.name.clone(), hook: h.clone(), message })?;
            if inner.type_graph() != &s.inner.graph {
                return Err(ProcessError::Hook {
                    process: s.name.clone(),
                    hook: h.clone(),
                    message: "result is not typed over the inner metamodel".into(),
                });
            }
        }
        SemanticKind::Workflow(def) => {
            let named: BTreeMap<String, Instance> =
                s.inputs.iter().zip(inputs).map(|(p, x)| (p.port.clone(), x.clone())).collect();
            let run_inner = crate::exec::workflow_inner(def, &s.inner, &named, ctx)
                .map_err(|e| ProcessError::Workflow(Box::new(e)))?;
            inner.absorb(&run_inner)?;
        }
    }
    Ok(inner)
}

/// Runs the schema on its inputs, returning the inner instance and the output projection.
pub fn apply(s: &ProcessSchema, inputs: &[Instance], ctx: &ApplyContext) -> Result<(Instance, Instance), ProcessError> {
    if inputs.len() != s.inputs.len() {
        return Err(ProcessError::Arity { process: s.name.clone(), expected: s.inputs.len(), got: inputs.len() });
    }
    for (p, x) in s.inputs.iter().zip(inputs) {
        if x.type_graph() != &p.metamodel.graph {
            return Err(ProcessError::Typing { process: s.name.clone(), port: p.port.clone() });
        }
    }
    let mut inner = embed(s, inputs)?;
    for k in &s.semantics {
        inner = run_step(s, k, inner, inputs, ctx)?;
    }
    let output = restrict(&inner, &s.output.map)?;
    Ok((inner, output))
}

/// Whether every input is recovered unchanged from the inner instance.
pub fn check_putget(s: &ProcessSchema, inputs: &[Instance], ctx: &ApplyContext) -> bool {
    let Ok((inner, _)) = apply(s, inputs, ctx) else {
        return false;
    };
    s.inputs.iter().zip(inputs).all(|(p, x)| match restrict(&inner, &p.injection) {
        Ok(back) => instances_isomorphic(&back, x),
        Err(_) => false,
    })
}

/// Output of a constant process: port-less processes always emit; a process with a single
/// empty input port emits only when triggered.
pub fn signal_semantics(s: &ProcessSchema, triggered: bool, ctx: &ApplyContext) -> Result<Option<Instance>, ProcessError> {
    match s.inputs.as_slice() {
        [] => Ok(Some(apply(s, &[], ctx)?.1)),
        [p] if p.metamodel.graph.is_empty() => {
            if triggered {
                let signal = Instance::empty(&p.metamodel.graph);
                Ok(Some(apply(s, &[signal], ctx)?.1))
            } else {
                Ok(None)
            }
        }
        _ => Err(ProcessError::IllFormed {
            process: s.name.clone(),
            report: {
                let mut r = ValidationReport::default();
                r.push(&s.name, "signal semantics needs no inputs or a single empty input");
                r
            },
        }),
    }
}

/// Parses a verdict file: one `id = true|false` per line, `#` comments.
pub fn parse_verdicts(text: &str) -> Result<BTreeMap<String, bool>, (usize, String)> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or((n + 1, format!("expected `id = true|false`, found `{line}`")))?;
        let v = match v.trim() {
            "true" => true,
            "false" => false,
            other => return Err((n + 1, format!("expected true or false, found `{other}`"))),
        };
        if out.insert(k.trim().to_string(), v).is_some() {
            return Err((n + 1, format!("duplicate verdict for `{}`", k.trim())));
        }
    }
    Ok(out)
}
