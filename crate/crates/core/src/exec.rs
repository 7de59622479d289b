//! Executing dataflow definitions: read by restriction, apply, write by colimit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catops::{colimit_named, Arrow, Diagram, Span};
use crate::depflow::{build_flow, check_acyclic, Acyclicity, DependencyFlow, FlowProcess, WireIn, WireOut};
use crate::graph::{check_morphism, Graph, GraphMorphism, NodeKind, ValidationReport};
use crate::metamodel::{conforms, restrict, Instance, Literal, Metamodel, MetamodelError};
use crate::process::{apply, check_arity, ApplyContext, InputPort, OutputPort, ProcessError, ProcessSchema, SemanticKind};

/// A dependency flow bound to metamodels: every product has a metamodel, every in-wire
/// maps its port metamodel into the product, every out-wire maps the process output into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataflowDefinition {
    pub name: String,
    pub base: Metamodel,
    pub flow: DependencyFlow,
    pub processes: BTreeMap<String, ProcessSchema>,
    pub wp_metamodels: BTreeMap<String, Metamodel>,
    pub in_maps: BTreeMap<String, GraphMorphism>,
    pub out_maps: BTreeMap<String, GraphMorphism>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("invalid dataflow definition")]
    Invalid(ValidationReport),
    #[error("dependency flow has a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("work product `{0}` is not populated")]
    Unpopulated(String),
    #[error("{0}")]
    Process(ProcessError),
    #[error("merge into `{wp}` at stratum {stratum} rejected")]
    Merge { wp: String, stratum: usize, report: ValidationReport },
    #[error(transparent)]
    Metamodel(#[from] MetamodelError),
}

impl ExecError {
    pub fn witnesses(&self) -> Vec<String> {
        let mut w: Vec<String> = match self {
            ExecError::Invalid(r) | ExecError::Merge { report: r, .. } => {
                r.violations.iter().map(|v| v.element.clone()).collect()
            }
            ExecError::Cycle(c) => c.clone(),
            ExecError::Unpopulated(wp) => vec![wp.clone()],
            ExecError::Process(e) => e.witnesses(),
            ExecError::Metamodel(_) => Vec::new(),
        };
        w.sort();
        w.dedup();
        w
    }

    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            ExecError::Invalid(r) | ExecError::Merge { report: r, .. } => Some(r),
            _ => None,
        }
    }
}

impl From<ProcessError> for ExecError {
    fn from(e: ProcessError) -> Self {
        ExecError::Process(e)
    }
}

/// Checks that every process, product and wire of the flow is bound consistently.
pub fn validate_definition(def: &DataflowDefinition) -> ValidationReport {
    let mut r = ValidationReport::default();
    for (p, fp) in def.flow.processes.iter() {
        let Some(s) = def.processes.get(p) else {
            r.push(p, "process has no schema");
            continue;
        };
        let ports: Vec<&String> = s.inputs.iter().map(|i| &i.port).collect();
        if ports != fp.in_ports.iter().collect::<Vec<_>>() {
            r.push(p, "flow in-ports differ from the schema's input ports");
        }
        if let Some(o) = &fp.out_port {
            if *o != s.output.port {
                r.push(p, "flow out-port differs from the schema's output port");
            }
        }
        for v in check_arity(s).violations {
            r.push(format!("{p}:{}", v.element), v.message);
        }
    }
    for wp in def.flow.work_products.iter() {
        if !def.wp_metamodels.contains_key(wp) {
            r.push(wp, "work product has no metamodel");
        }
    }
    for (id, w) in def.flow.wires_in.iter() {
        let (Some(s), Some(wm)) = (def.processes.get(&w.process), def.wp_metamodels.get(&w.wp)) else { continue };
        let Some(port) = s.inputs.iter().find(|i| i.port == w.port) else { continue };
        match def.in_maps.get(id) {
            None => r.push(id, "wire has no map"),
            Some(m) => {
                if m.source != port.metamodel.graph || m.target != wm.graph {
                    r.push(id, "wire map does not go from the port metamodel to the product metamodel");
                } else {
                    for v in check_morphism(m).violations {
                        r.push(format!("{id}:{}", v.element), v.message);
                    }
                    if !m.is_injective() {
                        r.push(id, "in-wire map is not injective");
                    }
                }
            }
        }
    }
    for (id, w) in def.flow.wires_out.iter() {
        let (Some(s), Some(wm)) = (def.processes.get(&w.process), def.wp_metamodels.get(&w.wp)) else { continue };
        match def.out_maps.get(id) {
            None => r.push(id, "wire has no map"),
            Some(m) => {
                if m.source != s.output.metamodel.graph || m.target != wm.graph {
                    r.push(id, "wire map does not go from the output metamodel to the product metamodel");
                } else {
                    for v in check_morphism(m).violations {
                        r.push(format!("{id}:{}", v.element), v.message);
                    }
                }
            }
        }
    }
    r.normalized()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub stratum: usize,
    pub process: String,
    pub inner: Instance,
    pub output: Instance,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionState {
    pub products: BTreeMap<String, Instance>,
    pub trace: Vec<TraceEntry>,
}

impl ExecutionState {
    /// `stratum<TAB>process<TAB>sha256(canonical output)` per trace entry.
    pub fn trace_log(&self) -> String {
        let mut s = String::new();
        for t in &self.trace {
            let digest = Sha256::digest(t.output.to_string().as_bytes());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(s, "{}\t{}\t{hex}", t.stratum, t.process);
        }
        s
    }
}

/// A run that stopped early, with everything committed before the failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFailure {
    pub state: ExecutionState,
    pub error: ExecError,
}

/// Reads the instance seen by in-wire `wire`.
pub fn read(def: &DataflowDefinition, state: &ExecutionState, wire: &str) -> Result<Instance, ExecError> {
    let w = def.flow.wires_in.get(wire).ok_or_else(|| ExecError::Unpopulated(wire.to_string()))?;
    let prod = state.products.get(&w.wp).ok_or_else(|| ExecError::Unpopulated(w.wp.clone()))?;
    Ok(restrict(prod, &def.in_maps[wire])?)
}

/// A correspondence between parts of two outputs, as a span of data-graph maps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Correspondence {
    pub left: usize,
    pub right: usize,
    pub span: Span,
}

/// Correspondences identifying elements with equal ids (and, for links, equal endpoints).
pub fn id_correspondences(parts: &[Instance]) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            let (a, b) = (parts[i].data(), parts[j].data());
            let mut head = Graph::new();
            for (n, k) in a.nodes() {
                if b.node_kind(n) == Some(k) {
                    head.add_node(n, k).unwrap();
                }
            }
            for (e, edge) in a.edges() {
                if b.edge(e) == Some(edge) {
                    let _ = head.add_edge(e, &edge.src, &edge.tgt, edge.kind);
                }
            }
            if head.is_empty() {
                continue;
            }
            let left = GraphMorphism::inclusion(&head, a).unwrap();
            let right = GraphMorphism::inclusion(&head, b).unwrap();
            out.push(Correspondence { left: i, right: j, span: Span::new(left, right).unwrap() });
        }
    }
    out
}

/// Merges outputs into one instance over `product`: the colimit of the data graphs along the
/// correspondences, typed by the members' common type and valued by their common literal,
/// then checked against the product's constraints.
pub fn write_merge(
    outputs: &[(Instance, GraphMorphism)],
    corrs: &[Correspondence],
    product: &Metamodel,
) -> Result<Instance, ValidationReport> {
    let mut report = ValidationReport::default();
    let mut parts = Vec::new();
    for (k, (x, m)) in outputs.iter().enumerate() {
        if m.target != product.graph {
            report.push(format!("#{k}"), "output map does not target the product metamodel");
            continue;
        }
        match x.retype(m) {
            Ok(y) => parts.push(y),
            Err(e) => report.push(format!("#{k}"), e.to_string()),
        }
    }
    if !report.is_ok() {
        return Err(report.normalized());
    }
    let label = |k: usize| format!("{k:04}");
    let mut d = Diagram::new();
    for (k, p) in parts.iter().enumerate() {
        d.object(label(k), p.data().clone());
    }
    for c in corrs {
        let h = format!("c{:04}.{:04}", c.left, c.right);
        d.object(h.clone(), c.span.head().clone());
        d.arrows.push(Arrow { src: h.clone(), tgt: label(c.left), map: c.span.left.clone() });
        d.arrows.push(Arrow { src: h, tgt: label(c.right), map: c.span.right.clone() });
    }
    let (g, cocone) = match colimit_named(&d) {
        Ok(x) => x,
        Err(e) => {
            report.push("<merge>", e.to_string());
            return Err(report);
        }
    };
    let mut node_types: BTreeMap<String, String> = BTreeMap::new();
    let mut edge_types: BTreeMap<String, String> = BTreeMap::new();
    let mut values: BTreeMap<String, Literal> = BTreeMap::new();
    for (k, p) in parts.iter().enumerate() {
        let m = &cocone[&label(k)];
        for (n, _) in p.data().nodes() {
            let c = m.map_node(n).unwrap().to_string();
            let t = p.node_type(n).unwrap().to_string();
            if let Some(prev) = node_types.insert(c.clone(), t.clone()) {
                if prev != t {
                    report.push(&c, format!("merged element typed both `{prev}` and `{t}`"));
                }
            }
            if let Some(v) = p.value(n) {
                if let Some(prev) = values.insert(c.clone(), v.clone()) {
                    if &prev != v {
                        report.push(&c, format!("merged value is both {prev} and {v}"));
                    }
                }
            }
        }
        for (e, _) in p.data().edges() {
            let c = m.map_edge(e).unwrap().to_string();
            let t = p.edge_type(e).unwrap().to_string();
            if let Some(prev) = edge_types.insert(c.clone(), t.clone()) {
                if prev != t {
                    report.push(&c, format!("merged link typed both `{prev}` and `{t}`"));
                }
            }
        }
    }
    for (n, k) in g.nodes() {
        if (k == NodeKind::ValueType) != values.contains_key(n) {
            report.push(n, "value binding lost or invented by the merge");
        }
    }
    if !report.is_ok() {
        return Err(report.normalized());
    }
    let typing = GraphMorphism::new(g, product.graph.clone(), node_types, edge_types);
    let merged = Instance::from_parts(typing, values);
    let c = conforms(&merged, product);
    let mut r = c.typing;
    for (cid, w) in c.verdicts.iter().filter_map(|(cid, v)| match v {
        crate::metamodel::Verdict::Violated(w) => Some((cid, w)),
        _ => None,
    }) {
        for x in w {
            r.push(x, format!("violates `{cid}`"));
        }
    }
    if r.is_ok() {
        Ok(merged)
    } else {
        Err(r.normalized())
    }
}

fn strata(def: &DataflowDefinition) -> Result<Vec<BTreeSet<String>>, ExecError> {
    let r = validate_definition(def);
    if !r.is_ok() {
        return Err(ExecError::Invalid(r));
    }
    match check_acyclic(&def.flow) {
        Acyclicity::Strata(s) => Ok(s),
        Acyclicity::Cycle(c) => Err(ExecError::Cycle(c)),
    }
}

fn apply_one(def: &DataflowDefinition, state: &ExecutionState, p: &str, ctx: &ApplyContext) -> Result<(Instance, Instance), ExecError> {
    let s = &def.processes[p];
    let mut inputs = Vec::new();
    for port in &s.inputs {
        let wire = def
            .flow
            .wires_in
            .iter()
            .find(|(_, w)| w.process == p && w.port == port.port)
            .map(|(id, _)| id.clone())
            .ok_or_else(|| ExecError::Unpopulated(format!("{p}.{}", port.port)))?;
        inputs.push(read(def, state, &wire)?);
    }
    Ok(apply(s, &inputs, ctx)?)
}

/// Executes the flow stratum by stratum. Within a stratum every process reads before any
/// product is written; processes run concurrently and commits follow process id order.
pub fn run(
    def: &DataflowDefinition,
    initial: &BTreeMap<String, Instance>,
    ctx: &ApplyContext,
) -> Result<ExecutionState, Box<RunFailure>> {
    let mut state = ExecutionState::default();
    let fail = |state: &ExecutionState, error: ExecError| Box::new(RunFailure { state: state.clone(), error });
    let strata = strata(def).map_err(|e| fail(&state, e))?;
    for (wp, x) in initial {
        match def.wp_metamodels.get(wp) {
            Some(m) if x.type_graph() == &m.graph => {
                state.products.insert(wp.clone(), x.clone());
            }
            _ => {
                let mut r = ValidationReport::default();
                r.push(wp, "initial instance is not typed over the product metamodel");
                return Err(fail(&state, ExecError::Invalid(r)));
            }
        }
    }
    for (k, layer) in strata.iter().enumerate() {
        let procs: Vec<&String> = layer.iter().collect();
        let results: Vec<Result<(Instance, Instance), ExecError>> = if procs.len() > 1 {
            let st = &state;
            std::thread::scope(|sc| {
                let handles: Vec<_> = procs.iter().map(|p| sc.spawn(move || apply_one(def, st, p, ctx))).collect();
                handles.into_iter().map(|h| h.join().expect("process thread panicked")).collect()
            })
        } else {
            procs.iter().map(|p| apply_one(def, &state, p, ctx)).collect()
        };
        let mut outputs: BTreeMap<&str, Instance> = BTreeMap::new();
        for (p, r) in procs.iter().zip(results) {
            match r {
                Ok((inner, output)) => {
                    state.trace.push(TraceEntry { stratum: k, process: p.to_string(), inner, output: output.clone() });
                    outputs.insert(p, output);
                }
                Err(e) => return Err(fail(&state, e)),
            }
        }
        let mut written: BTreeMap<&str, Vec<(Instance, GraphMorphism)>> = BTreeMap::new();
        for (p, out) in &outputs {
            for (wp, wire) in def.flow.outputs_of(p) {
                written.entry(wp).or_default().push((out.clone(), def.out_maps[wire].clone()));
            }
        }
        let mut commits = Vec::new();
        for (wp, mut parts) in written {
            let pm = &def.wp_metamodels[wp];
            if let Some(existing) = state.products.get(wp) {
                parts.insert(0, (existing.clone(), GraphMorphism::identity(&pm.graph)));
            }
            let retyped: Vec<Instance> = parts.iter().filter_map(|(x, m)| x.retype(m).ok()).collect();
            let corrs = if retyped.len() == parts.len() { id_correspondences(&retyped) } else { Vec::new() };
            match write_merge(&parts, &corrs, pm) {
                Ok(m) => commits.push((wp.to_string(), m)),
                Err(report) => return Err(fail(&state, ExecError::Merge { wp: wp.to_string(), stratum: k, report })),
            }
        }
        for (wp, m) in commits {
            state.products.insert(wp, m);
        }
    }
    Ok(state)
}

/// All products merged by id over the base metamodel.
pub fn combined(def: &DataflowDefinition, state: &ExecutionState) -> Result<Instance, ExecError> {
    let mut out = Instance::empty(&def.base.graph);
    for x in state.products.values() {
        out.absorb(&x.widen(&def.base.graph)?)?;
    }
    Ok(out)
}

/// The carrier diagram: products, process inners, and port metamodels with their maps.
pub fn carrier_diagram(def: &DataflowDefinition) -> Diagram {
    let mut d = Diagram::new();
    for (wp, m) in &def.wp_metamodels {
        d.object(wp.clone(), m.graph.clone());
    }
    for (p, s) in &def.processes {
        d.object(p.clone(), s.inner.graph.clone());
        for i in &s.inputs {
            let l = format!("{p}.{}", i.port);
            d.object(l.clone(), i.metamodel.graph.clone());
            d.arrow(l, p.clone(), i.injection.clone());
        }
        let l = format!("{p}.{}", s.output.port);
        d.object(l.clone(), s.output.metamodel.graph.clone());
        d.arrow(l, p.clone(), s.output.map.clone());
    }
    for (id, w) in def.flow.wires_in.iter() {
        d.arrow(format!("{}.{}", w.process, w.port), w.wp.clone(), def.in_maps[id].clone());
    }
    for (id, w) in def.flow.wires_out.iter() {
        d.arrow(format!("{}.{}", w.process, w.port), w.wp.clone(), def.out_maps[id].clone());
    }
    d
}

fn translate_constraints(target: &mut Metamodel, label: &str, m: &Metamodel, f: &GraphMorphism) {
    use crate::metamodel::ConstraintKind as C;
    let e = |x: &String| f.map_edge(x).map(str::to_string).unwrap_or_else(|| x.clone());
    for (name, chain) in &m.derived {
        target.derived.entry(e(name)).or_insert_with(|| chain.iter().map(e).collect());
    }
    for (cid, c) in &m.constraints {
        let t = match c {
            C::Multiplicity { edge, end, lower, upper } => C::Multiplicity { edge: e(edge), end: *end, lower: *lower, upper: *upper },
            C::Key { edges } => C::Key { edges: edges.iter().map(e).collect() },
            C::Xor { edges } => C::Xor { edges: edges.iter().map(e).collect() },
            C::ValidityTrue { attr } => C::ValidityTrue { attr: e(attr) },
            C::DerivedEquality { name, chain } => C::DerivedEquality { name: e(name), chain: chain.iter().map(e).collect() },
        };
        match target.constraints.get(cid) {
            None => {
                target.constraints.insert(cid.clone(), t);
            }
            Some(prev) if *prev == t => {}
            Some(_) => {
                target.constraints.insert(format!("{label}.{cid}"), t);
            }
        }
    }
}

/// The workflow as a single process: inner metamodel is the colimit of the carrier diagram;
/// inputs are the products nobody writes; the output exposes the products nobody reads.
pub fn encapsulate(def: &DataflowDefinition) -> Result<ProcessSchema, ExecError> {
    strata(def)?;
    let (g, cocone) = colimit_named(&carrier_diagram(def)).map_err(|e| {
        let mut r = ValidationReport::default();
        r.push(&def.name, e.to_string());
        ExecError::Invalid(r)
    })?;
    let mut inner = Metamodel::new(g.clone());
    for (wp, m) in &def.wp_metamodels {
        translate_constraints(&mut inner, wp, m, &cocone[wp]);
    }
    let inputs: Vec<InputPort> = def
        .flow
        .work_products
        .iter()
        .filter(|wp| def.flow.writers_of(wp).is_empty())
        .map(|wp| InputPort { port: wp.clone(), metamodel: def.wp_metamodels[wp].clone(), injection: cocone[wp].clone() })
        .collect();
    let sinks: Vec<&String> = def.flow.work_products.iter().filter(|wp| def.flow.readers_of(wp).is_empty()).collect();
    let output = match sinks.as_slice() {
        [wp] => OutputPort { port: (*wp).clone(), metamodel: def.wp_metamodels[*wp].clone(), map: cocone[*wp].clone() },
        _ => {
            let mut nodes = BTreeSet::new();
            let mut edges = BTreeSet::new();
            for wp in &sinks {
                let f = &cocone[*wp];
                nodes.extend(f.node_map.values().cloned());
                edges.extend(f.edge_map.values().cloned());
            }
            let sub = g.subgraph(&nodes, &edges);
            let map = GraphMorphism::inclusion(&sub, &g).expect("image is a subgraph");
            OutputPort { port: "out".into(), metamodel: Metamodel::new(sub), map }
        }
    };
    Ok(ProcessSchema { name: def.name.clone(), inputs, inner, output, semantics: vec![SemanticKind::Workflow(Box::new(def.clone()))] })
}

/// Inner instance of an encapsulated workflow: run it on the named inputs and merge every
/// product, retyped along the colimit injections, by id.
pub fn workflow_inner(
    def: &DataflowDefinition,
    inner: &Metamodel,
    inputs: &BTreeMap<String, Instance>,
    ctx: &ApplyContext,
) -> Result<Instance, ExecError> {
    let (_, cocone) = colimit_named(&carrier_diagram(def)).map_err(|e| {
        let mut r = ValidationReport::default();
        r.push(&def.name, e.to_string());
        ExecError::Invalid(r)
    })?;
    let state = run(def, inputs, ctx).map_err(|f| f.error)?;
    let mut out = Instance::empty(&inner.graph);
    for (wp, x) in &state.products {
        out.absorb(&x.retype(&cocone[wp])?)?;
    }
    Ok(out)
}

/// Inserts identity processes `Id.<wp>.<k>` and relay products `<wp>.<k>` so that every
/// product is read only by processes in the stratum right after it is written.
pub fn normalize_id(def: &DataflowDefinition) -> Result<DataflowDefinition, ExecError> {
    let layers = strata(def)?;
    let depth_of: BTreeMap<&str, usize> =
        layers.iter().enumerate().flat_map(|(k, l)| l.iter().map(move |p| (p.as_str(), k))).collect();
    let ready = |wp: &str| def.flow.writers_of(wp).iter().map(|p| depth_of[p] + 1).max().unwrap_or(0);
    let mut parts = def.flow.parts().clone();
    let mut out = def.clone();
    let mut relays: BTreeMap<String, usize> = BTreeMap::new();
    let mut rewires: Vec<(String, String)> = Vec::new();
    for (id, w) in def.flow.wires_in.iter() {
        let gap = depth_of[w.process.as_str()].saturating_sub(ready(&w.wp));
        if gap > 0 {
            let e = relays.entry(w.wp.clone()).or_default();
            *e = (*e).max(gap);
            rewires.push((id.clone(), format!("{}.{gap}", w.wp)));
        }
    }
    for (wp, n) in &relays {
        let m = def.wp_metamodels[wp].clone();
        for k in 1..=*n {
            let prev = if k == 1 { wp.clone() } else { format!("{wp}.{}", k - 1) };
            let next = format!("{wp}.{k}");
            let p = format!("Id.{wp}.{k}");
            let id = GraphMorphism::identity(&m.graph);
            parts.work_products.insert(next.clone());
            parts.processes.insert(p.clone(), FlowProcess { in_ports: vec!["i".into()], out_port: Some("o".into()) });
            parts.wires_in.insert(format!("{p}.in"), WireIn { wp: prev, process: p.clone(), port: "i".into() });
            parts.wires_out.insert(format!("{p}.out"), WireOut { process: p.clone(), port: "o".into(), wp: next.clone() });
            out.wp_metamodels.insert(next, m.clone());
            out.in_maps.insert(format!("{p}.in"), id.clone());
            out.out_maps.insert(format!("{p}.out"), id.clone());
            out.processes.insert(
                p.clone(),
                ProcessSchema {
                    name: p,
                    inputs: vec![InputPort { port: "i".into(), metamodel: m.clone(), injection: id.clone() }],
                    inner: m.clone(),
                    output: OutputPort { port: "o".into(), metamodel: m.clone(), map: id },
                    semantics: vec![SemanticKind::Identity],
                },
            );
        }
    }
    for (wire, wp) in rewires {
        parts.wires_in.get_mut(&wire).unwrap().wp = wp;
    }
    out.flow = build_flow(parts).map_err(ExecError::Invalid)?;
    Ok(out)
}
