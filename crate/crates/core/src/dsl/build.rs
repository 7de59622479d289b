//! Turns parsed sections into metamodels, instances, processes, flows, advice and derivations.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;

use super::{Decl, Diagnostic, Document, Section, SectionKind, Token, TokenKind};
use crate::depflow::{build_flow, FlowParts};
use crate::derivation::{ClaimBody, DerivationTree, Step, StepKind};
use crate::exec::{validate_definition, DataflowDefinition};
use crate::graph::{check_morphism, EdgeKind, Graph, GraphMorphism, NodeKind, ValidationReport};
use crate::metamodel::{parse_decimal, restrict, ConstraintKind, End, Instance, Literal, Metamodel};
use crate::process::{check_arity, InputPort, OutputPort, ProcessSchema, SemanticKind};
use crate::weaving::{Advice, EntryPoint};

#[derive(Clone, Debug)]
pub struct InstanceModel {
    pub metamodel: String,
    pub instance: Instance,
}

#[derive(Clone, Debug)]
pub struct ProcessModel {
    pub metamodel: String,
    pub schema: ProcessSchema,
    /// Declared without an `out` line.
    pub sink: bool,
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub metamodel: String,
    /// The bound definition, or the flow's well-formedness violations (duplicate wires,
    /// unwired ports) which are reported as findings rather than syntax errors.
    pub def: Result<DataflowDefinition, ValidationReport>,
    /// Initial products from `init` lines, typed over their product metamodels.
    pub initial: BTreeMap<String, Instance>,
}

#[derive(Clone, Debug)]
pub struct AdviceModel {
    pub main: String,
    pub advice: Advice,
    pub points: Vec<EntryPoint>,
}

#[derive(Clone, Debug, Default)]
pub struct Model {
    pub metamodels: BTreeMap<String, Metamodel>,
    pub instances: BTreeMap<String, InstanceModel>,
    pub processes: BTreeMap<String, ProcessModel>,
    pub flows: BTreeMap<String, FlowModel>,
    pub advices: BTreeMap<String, AdviceModel>,
    pub derivations: BTreeMap<String, DerivationTree>,
}

struct Diags(Vec<Diagnostic>);

impl Diags {
    fn at(&mut self, s: &Section, t: &Token, message: impl Into<String>) {
        self.0.push(Diagnostic {
            file: s.file.clone(),
            line: t.line,
            col: t.col,
            message: message.into(),
            token: t.text.clone(),
        });
    }

    fn report(&mut self, s: &Section, t: &Token, r: &ValidationReport) {
        for v in &r.violations {
            self.at(s, t, format!("{}: {}", v.element, v.message));
        }
    }
}

fn decls<'a>(s: &'a Section, kw: &str) -> impl Iterator<Item = &'a Decl> + 'a {
    let kw = kw.to_string();
    s.decls.iter().filter(move |d| d.keyword.text == kw)
}

fn parse_real(s: &str) -> Option<BigRational> {
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.parse().ok()?;
            let d: BigInt = d.parse().ok()?;
            if d == BigInt::from(0) {
                None
            } else {
                Some(BigRational::new(n, d))
            }
        }
        None => parse_decimal(s),
    }
}

fn number(t: &Token) -> Option<BigRational> {
    parse_real(&t.text)
}

fn small_int(t: &Token) -> Option<u32> {
    if t.kind == TokenKind::Int {
        t.text.parse().ok()
    } else {
        None
    }
}

/// A literal token read as a value of type `vt`; integers widen to `Real`.
fn literal(t: &Token, vt: &str) -> Result<Literal, String> {
    let lit = match t.kind {
        TokenKind::Ident if t.text == "true" || t.text == "false" => Literal::Bool(t.text == "true"),
        TokenKind::Int => {
            let i: i64 = t.text.parse().map_err(|_| format!("integer `{}` out of range", t.text))?;
            if vt == "Real" {
                Literal::Real(BigRational::from_integer(BigInt::from(i)))
            } else {
                Literal::Int(i)
            }
        }
        TokenKind::Real => Literal::Real(number(t).ok_or_else(|| format!("bad number `{}`", t.text))?),
        TokenKind::Str => Literal::Str(t.unquoted()),
        _ => return Err(format!("expected a literal, found `{}`", t.text)),
    };
    if !lit.fits(vt) {
        return Err(format!("literal `{}` does not fit value type `{vt}`", t.text));
    }
    Ok(lit)
}

fn has_element(g: &Graph, x: &str) -> bool {
    g.has_node(x) || g.has_edge(x)
}

/// Checks every element token against `g`; returns the names of the known ones.
fn elements<'a>(d: &mut Diags, s: &Section, g: &Graph, toks: &'a [Token]) -> Vec<&'a str> {
    let mut out = Vec::new();
    for t in toks {
        if has_element(g, &t.text) {
            out.push(t.text.as_str());
        } else {
            d.at(s, t, format!("unknown element `{}`", t.text));
        }
    }
    out
}

fn end_of(t: &Token) -> End {
    if t.text == "src" {
        End::Src
    } else {
        End::Tgt
    }
}

fn bounds(d: &mut Diags, s: &Section, lo: &Token, up: &Token) -> Option<(u32, Option<u32>)> {
    let Some(l) = small_int(lo) else {
        d.at(s, lo, "lower bound must be a non-negative integer");
        return None;
    };
    let u = if up.kind == TokenKind::Star {
        None
    } else {
        match small_int(up) {
            Some(u) => Some(u),
            None => {
                d.at(s, up, "upper bound must be a non-negative integer or `*`");
                return None;
            }
        }
    };
    if let Some(u) = u {
        if l > u {
            d.at(s, lo, format!("lower bound {l} exceeds upper bound {u}"));
            return None;
        }
    }
    Some((l, u))
}

/// Metamodel declarations of a `metamodel` or `advice` section, independent of order.
fn build_metamodel(d: &mut Diags, s: &Section) -> Metamodel {
    let mut g = Graph::new();
    for decl in decls(s, "class") {
        let id = &decl.args[0];
        let kind = match decl.args.get(1).map(|t| t.text.as_str()) {
            Some("process") => NodeKind::ProcessClass,
            Some("port") => NodeKind::PortNode,
            Some("value") => NodeKind::ValueType,
            _ => NodeKind::Class,
        };
        if g.add_node(&id.text, kind).is_err() {
            d.at(s, id, format!("duplicate class `{}`", id.text));
        }
    }
    let known = |d: &mut Diags, g: &Graph, t: &Token| {
        let ok = g.has_node(&t.text);
        if !ok {
            d.at(s, t, format!("unknown class `{}`", t.text));
        }
        ok
    };
    let mut edges: Vec<(&Token, &Token, &Token, EdgeKind, String)> = Vec::new();
    for decl in decls(s, "attr") {
        let a = &decl.args;
        if a.len() == 3 {
            edges.push((&a[0], &a[0], &a[2], EdgeKind::Attribute, format!("{}.{}", a[0].text, a[1].text)));
        } else {
            edges.push((&a[0], &a[1], &a[3], EdgeKind::Attribute, a[0].text.clone()));
        }
    }
    for decl in decls(s, "assoc") {
        let a = &decl.args;
        let kind = if a.len() == 5 { EdgeKind::Dataflow } else { EdgeKind::Association };
        edges.push((&a[0], &a[1], &a[3], kind, a[0].text.clone()));
    }
    for (id, src, tgt, kind, name) in edges {
        let ok_s = known(d, &g, src);
        let ok_t = known(d, &g, tgt);
        if !(ok_s && ok_t) {
            continue;
        }
        if kind == EdgeKind::Attribute && g.node_kind(&tgt.text) != Some(NodeKind::ValueType) {
            d.at(s, tgt, format!("`{}` is not a value type", tgt.text));
            continue;
        }
        if g.has_edge(&name) || g.has_node(&name) {
            d.at(s, id, format!("duplicate edge `{name}`"));
            continue;
        }
        g.add_edge(&name, &src.text, &tgt.text, kind).expect("checked above");
    }
    let mut m = Metamodel::new(g);
    let edge_tokens = |d: &mut Diags, m: &Metamodel, toks: &[Token]| {
        let mut ok = true;
        for t in toks {
            if !m.graph.has_edge(&t.text) && !m.derived.contains_key(&t.text) {
                d.at(s, t, format!("unknown edge `{}`", t.text));
                ok = false;
            }
        }
        ok
    };
    let chain = |toks: &[Token]| toks.iter().map(|t| t.text.clone()).collect::<Vec<_>>();
    for decl in decls(s, "derived").filter(|d| d.args[1].kind == TokenKind::Eq) {
        let a = &decl.args;
        if edge_tokens(d, &m, &a[2..]) {
            if let Err(e) = m.add_derived(&a[0].text, chain(&a[2..])) {
                d.at(s, &a[0], e.to_string());
            }
        }
    }
    let mut constraints: Vec<(&Token, Option<ConstraintKind>)> = Vec::new();
    for decl in decls(s, "derived").filter(|d| d.args[1].kind != TokenKind::Eq) {
        let a = &decl.args;
        let ok = edge_tokens(d, &m, &a[3..]);
        if !m.graph.has_edge(&a[1].text) {
            d.at(s, &a[1], format!("derived edge `{}` is not declared", a[1].text));
            continue;
        }
        constraints.push((&a[0], ok.then(|| ConstraintKind::DerivedEquality { name: a[1].text.clone(), chain: chain(&a[3..]) })));
    }
    for (cid, c) in constraints.drain(..) {
        if let Some(c) = c {
            if let Err(e) = m.add_constraint(&cid.text, c) {
                d.at(s, cid, e.to_string());
            }
        }
    }
    for decl in s.decls.iter() {
        let a = &decl.args;
        let c = match decl.keyword.text.as_str() {
            "mult" => {
                let ok = edge_tokens(d, &m, &a[1..2]);
                let b = bounds(d, s, &a[3], &a[4]);
                match (ok, b) {
                    (true, Some((lower, upper))) => {
                        Some(ConstraintKind::Multiplicity { edge: a[1].text.clone(), end: end_of(&a[2]), lower, upper })
                    }
                    _ => None,
                }
            }
            "key" => edge_tokens(d, &m, &a[1..]).then(|| ConstraintKind::Key { edges: chain(&a[1..]) }),
            "xor" => edge_tokens(d, &m, &a[1..]).then(|| ConstraintKind::Xor { edges: chain(&a[1..]) }),
            "validity" => edge_tokens(d, &m, &a[1..]).then(|| ConstraintKind::ValidityTrue { attr: a[1].text.clone() }),
            _ => continue,
        };
        constraints.push((&a[0], c));
    }
    for (cid, c) in constraints {
        if let Some(c) = c {
            if let Err(e) = m.add_constraint(&cid.text, c) {
                d.at(s, cid, e.to_string());
            }
        }
    }
    m
}

fn build_instance(d: &mut Diags, s: &Section, m: &Metamodel) -> Instance {
    let mut i = Instance::empty(&m.graph);
    for decl in decls(s, "obj") {
        let (id, ty) = (&decl.args[0], &decl.args[1]);
        match m.graph.node_kind(&ty.text) {
            None => d.at(s, ty, format!("unknown type `{}`", ty.text)),
            Some(NodeKind::ValueType) => d.at(s, ty, format!("value type `{}` needs a literal; use `lit`", ty.text)),
            Some(_) => {
                if i.add_object(&id.text, &ty.text).is_err() {
                    d.at(s, id, format!("duplicate object `{}`", id.text));
                }
            }
        }
    }
    for decl in decls(s, "lit") {
        let (id, ty, lt) = (&decl.args[0], &decl.args[1], &decl.args[2]);
        if m.graph.node_kind(&ty.text) != Some(NodeKind::ValueType) {
            d.at(s, ty, format!("`{}` is not a value type", ty.text));
            continue;
        }
        match literal(lt, &ty.text) {
            Err(e) => d.at(s, lt, e),
            Ok(lit) => {
                if i.add_literal(&id.text, &ty.text, lit).is_err() {
                    d.at(s, id, format!("duplicate object `{}`", id.text));
                }
            }
        }
    }
    let node_ok = |d: &mut Diags, i: &Instance, t: &Token| {
        let ok = i.node_type(&t.text).is_some();
        if !ok {
            d.at(s, t, format!("unknown object `{}`", t.text));
        }
        ok
    };
    for decl in decls(s, "link") {
        let a = &decl.args;
        let (id, ty, src, tgt) = (&a[0], &a[1], &a[2], &a[4]);
        let Some(e) = m.graph.edge(&ty.text) else {
            d.at(s, ty, format!("unknown edge type `{}`", ty.text));
            continue;
        };
        let ok_s = node_ok(d, &i, src);
        let ok_t = node_ok(d, &i, tgt);
        if !(ok_s && ok_t) {
            continue;
        }
        let mut ok = true;
        for (t, want) in [(src, &e.src), (tgt, &e.tgt)] {
            let have = i.node_type(&t.text).unwrap();
            if have != want {
                d.at(s, t, format!("`{}` has type `{have}` but `{}` needs `{want}`", t.text, ty.text));
                ok = false;
            }
        }
        if ok && i.add_link(&id.text, &ty.text, &src.text, &tgt.text).is_err() {
            d.at(s, id, format!("duplicate link `{}`", id.text));
        }
    }
    let mut long = Vec::new();
    for decl in decls(s, "val") {
        let a = &decl.args;
        if a.len() == 5 {
            long.push(decl);
            continue;
        }
        let (obj, name, lt) = (&a[0], &a[1], &a[2]);
        if !node_ok(d, &i, obj) {
            continue;
        }
        let attr = format!("{}.{}", i.node_type(&obj.text).unwrap(), name.text);
        let Some(e) = m.graph.edge(&attr).filter(|e| e.kind == EdgeKind::Attribute) else {
            d.at(s, name, format!("unknown attribute `{attr}`"));
            continue;
        };
        match literal(lt, &e.tgt) {
            Err(msg) => d.at(s, lt, msg),
            Ok(lit) => {
                if let Err(err) = i.add_value(&obj.text, &attr, lit) {
                    d.at(s, obj, err.to_string());
                }
            }
        }
    }
    for decl in long {
        let a = &decl.args;
        let (link, node, attr, obj, lt) = (&a[0], &a[1], &a[2], &a[3], &a[4]);
        let Some(e) = m.graph.edge(&attr.text).filter(|e| e.kind == EdgeKind::Attribute) else {
            d.at(s, attr, format!("unknown attribute `{}`", attr.text));
            continue;
        };
        if !node_ok(d, &i, obj) {
            continue;
        }
        let lit = match literal(lt, &e.tgt) {
            Ok(l) => l,
            Err(msg) => {
                d.at(s, lt, msg);
                continue;
            }
        };
        let r = match i.value(&node.text) {
            Some(prev) if *prev == lit => i.add_link(&link.text, &attr.text, &obj.text, &node.text),
            Some(_) => {
                d.at(s, lt, format!("value node `{}` already holds a different literal", node.text));
                continue;
            }
            None => i.add_value_with_ids(&node.text, &link.text, &obj.text, &attr.text, lit),
        };
        if let Err(err) = r {
            d.at(s, link, err.to_string());
        }
    }
    i
}

/// Restricts an instance over `base` to the view `sub`; reports elements typed outside it.
fn instance_in_view(i: &Instance, base: &Graph, sub: &Graph) -> Result<Instance, String> {
    for (n, _) in i.data().nodes() {
        let t = i.node_type(n).unwrap();
        if !sub.has_node(t) {
            return Err(format!("`{n}` has type `{t}` outside the view"));
        }
    }
    for (e, _) in i.data().edges() {
        let t = i.edge_type(e).unwrap();
        if !sub.has_edge(t) {
            return Err(format!("`{e}` has type `{t}` outside the view"));
        }
    }
    let inc = GraphMorphism::inclusion(sub, base).map_err(|e| e.to_string())?;
    restrict(i, &inc).map_err(|e| e.to_string())
}

fn semantic(d: &mut Diags, s: &Section, decl: &Decl, m: &Metamodel, inner: &Metamodel, model: &Model) -> Option<SemanticKind> {
    let a = &decl.args;
    let names = |toks: &[Token]| toks.iter().map(|t| t.text.clone()).collect::<Vec<_>>();
    Some(match a[1].text.as_str() {
        "identity" => SemanticKind::Identity,
        "constant" => {
            let Some(im) = model.instances.get(&a[2].text) else {
                d.at(s, &a[2], format!("unknown instance `{}`", a[2].text));
                return None;
            };
            if im.metamodel != s.of.as_ref().unwrap().text {
                d.at(s, &a[2], format!("instance `{}` is over a different metamodel", a[2].text));
                return None;
            }
            match instance_in_view(&im.instance, &m.graph, &inner.graph) {
                Ok(x) => SemanticKind::Constant(x),
                Err(e) => {
                    d.at(s, &a[2], e);
                    return None;
                }
            }
        }
        "compose" => SemanticKind::ComposeLinks { target: a[2].text.clone(), chain: names(&a[3..]) },
        "max" => SemanticKind::AttributeMax {
            membership: a[2].text.clone(),
            member_attr: a[3].text.clone(),
            group_attr: a[4].text.clone(),
        },
        "threshold" => {
            let mut table = BTreeMap::new();
            for pair in a[6..].chunks(2) {
                let level = match pair[0].text.parse::<i64>() {
                    Ok(l) if pair[0].kind == TokenKind::Int => l,
                    _ => {
                        d.at(s, &pair[0], "level must be an integer");
                        return None;
                    }
                };
                let Some(target) = number(&pair[1]) else {
                    d.at(s, &pair[1], "bad number");
                    return None;
                };
                if table.insert(level, target).is_some() {
                    d.at(s, &pair[0], format!("duplicate level {level}"));
                }
            }
            SemanticKind::ThresholdCompare {
                via: a[2].text.clone(),
                level_attr: a[3].text.clone(),
                prob_attr: a[4].text.clone(),
                out_attr: a[5].text.clone(),
                table,
            }
        }
        "validity" => {
            let default = match a.get(4) {
                None => None,
                Some(t) => match literal(t, "Bool") {
                    Ok(Literal::Bool(b)) => Some(b),
                    _ => {
                        d.at(s, t, "default must be `true` or `false`");
                        return None;
                    }
                },
            };
            SemanticKind::SetValidity { attr: a[2].text.clone(), default }
        }
        "custom" => SemanticKind::Custom(a[2].text.clone()),
        _ => unreachable!("rejected by the parser"),
    })
}

fn build_process(d: &mut Diags, s: &Section, m: &Metamodel, model: &Model) -> Option<ProcessModel> {
    let before = d.0.len();
    let mut all: Vec<&str> = Vec::new();
    let mut ports: Vec<(&Token, Vec<&str>)> = Vec::new();
    for decl in decls(s, "in") {
        let els = elements(d, s, &m.graph, &decl.args[1..]);
        if ports.iter().any(|(p, _)| p.text == decl.args[0].text) {
            d.at(s, &decl.args[0], format!("duplicate port `{}`", decl.args[0].text));
        }
        all.extend(&els);
        ports.push((&decl.args[0], els));
    }
    for decl in decls(s, "inner") {
        all.extend(elements(d, s, &m.graph, &decl.args));
    }
    let outs: Vec<&Decl> = decls(s, "out").collect();
    for extra in outs.iter().skip(1) {
        d.at(s, &extra.keyword, "a process has at most one output port");
    }
    let out = outs.first().map(|o| {
        let els = elements(d, s, &m.graph, &o.args[1..]);
        all.extend(&els);
        if ports.iter().any(|(p, _)| p.text == o.args[0].text) {
            d.at(s, &o.args[0], format!("port `{}` is both input and output", o.args[0].text));
        }
        (o.args[0].text.clone(), els)
    });
    let inner = m.view(all.iter().copied()).ok()?;
    let mut kinds: BTreeMap<u32, (&Decl, SemanticKind)> = BTreeMap::new();
    for decl in decls(s, "kind") {
        let Some(idx) = small_int(&decl.args[0]) else {
            d.at(s, &decl.args[0], "step index must be a non-negative integer");
            continue;
        };
        if let Some(k) = semantic(d, s, decl, m, &inner, model) {
            if kinds.insert(idx, (decl, k)).is_some() {
                d.at(s, &decl.args[0], format!("duplicate step index {idx}"));
            }
        }
    }
    if d.0.len() > before {
        return None;
    }
    let inputs = ports
        .into_iter()
        .map(|(p, els)| {
            let pm = m.view(els).expect("elements checked");
            let injection = GraphMorphism::inclusion(&pm.graph, &inner.graph).expect("port lies in inner");
            InputPort { port: p.text.clone(), metamodel: pm, injection }
        })
        .collect();
    let sink = out.is_none();
    let (oport, oels) = out.unwrap_or_else(|| ("out".to_string(), Vec::new()));
    let om = m.view(oels).expect("elements checked");
    let map = GraphMorphism::inclusion(&om.graph, &inner.graph).expect("output lies in inner");
    let schema = ProcessSchema {
        name: s.name.text.clone(),
        inputs,
        inner,
        output: OutputPort { port: oport, metamodel: om, map },
        semantics: kinds.into_values().map(|(_, k)| k).collect(),
    };
    let r = check_arity(&schema);
    if !r.is_ok() {
        d.report(s, &s.name, &r);
        return None;
    }
    Some(ProcessModel { metamodel: s.of.as_ref().unwrap().text.clone(), schema, sink })
}

fn build_flow_section(d: &mut Diags, s: &Section, m: &Metamodel, model: &Model) -> Option<FlowModel> {
    let before = d.0.len();
    let mm_name = &s.of.as_ref().unwrap().text;
    let mut parts = FlowParts::default();
    let mut procs: BTreeMap<String, &ProcessModel> = BTreeMap::new();
    for decl in decls(s, "proc") {
        let t = &decl.args[0];
        match model.processes.get(&t.text) {
            None => d.at(s, t, format!("unknown process `{}`", t.text)),
            Some(p) if &p.metamodel != mm_name => d.at(s, t, format!("process `{}` is over a different metamodel", t.text)),
            Some(p) => {
                let ins: Vec<&str> = p.schema.inputs.iter().map(|i| i.port.as_str()).collect();
                let out = (!p.sink).then_some(p.schema.output.port.as_str());
                parts.process(&t.text, &ins, out);
                procs.insert(t.text.clone(), p);
            }
        }
    }
    let mut wps: BTreeMap<String, Metamodel> = BTreeMap::new();
    for decl in decls(s, "wp") {
        let t = &decl.args[0];
        let els = elements(d, s, &m.graph, &decl.args[1..]);
        if wps.contains_key(&t.text) {
            d.at(s, t, format!("duplicate work product `{}`", t.text));
            continue;
        }
        wps.insert(t.text.clone(), m.view(els).expect("elements checked"));
        parts.wp(&t.text);
    }
    let mut in_maps = BTreeMap::new();
    let mut out_maps = BTreeMap::new();
    let mut wire_ids = BTreeSet::new();
    for decl in decls(s, "wire") {
        let a = &decl.args;
        if !wire_ids.insert(a[0].text.clone()) {
            d.at(s, &a[0], format!("duplicate wire `{}`", a[0].text));
            continue;
        }
        let inward = a[2].kind == TokenKind::Arrow;
        let (wp, proc, port) = if inward { (&a[1], &a[3], &a[4]) } else { (&a[4], &a[1], &a[2]) };
        let Some(wm) = wps.get(&wp.text) else {
            d.at(s, wp, format!("unknown work product `{}`", wp.text));
            continue;
        };
        let Some(p) = procs.get(&proc.text) else {
            d.at(s, proc, format!("process `{}` is not part of the flow", proc.text));
            continue;
        };
        if inward {
            let Some(ip) = p.schema.inputs.iter().find(|i| i.port == port.text) else {
                d.at(s, port, format!("`{}` has no input port `{}`", proc.text, port.text));
                continue;
            };
            match GraphMorphism::inclusion(&ip.metamodel.graph, &wm.graph) {
                Ok(f) => {
                    in_maps.insert(a[0].text.clone(), f);
                    parts.wire_in(&a[0].text, &wp.text, &proc.text, &port.text);
                }
                Err(_) => d.at(s, port, format!("port `{}.{}` is not contained in `{}`", proc.text, port.text, wp.text)),
            }
        } else {
            if p.sink || p.schema.output.port != port.text {
                d.at(s, port, format!("`{}` has no output port `{}`", proc.text, port.text));
                continue;
            }
            match GraphMorphism::inclusion(&p.schema.output.metamodel.graph, &wm.graph) {
                Ok(f) => {
                    out_maps.insert(a[0].text.clone(), f);
                    parts.wire_out(&a[0].text, &proc.text, &port.text, &wp.text);
                }
                Err(_) => d.at(s, wp, format!("output of `{}` is not contained in `{}`", proc.text, wp.text)),
            }
        }
    }
    let mut initial = BTreeMap::new();
    for decl in decls(s, "init") {
        let (wp, inst) = (&decl.args[0], &decl.args[1]);
        let Some(wm) = wps.get(&wp.text) else {
            d.at(s, wp, format!("unknown work product `{}`", wp.text));
            continue;
        };
        let Some(im) = model.instances.get(&inst.text) else {
            d.at(s, inst, format!("unknown instance `{}`", inst.text));
            continue;
        };
        if &im.metamodel != mm_name {
            d.at(s, inst, format!("instance `{}` is over a different metamodel", inst.text));
            continue;
        }
        match instance_in_view(&im.instance, &m.graph, &wm.graph) {
            Ok(x) => {
                if initial.insert(wp.text.clone(), x).is_some() {
                    d.at(s, wp, format!("`{}` initialized twice", wp.text));
                }
            }
            Err(e) => d.at(s, inst, e),
        }
    }
    if d.0.len() > before {
        return None;
    }
    let metamodel = mm_name.clone();
    let flow = match build_flow(parts) {
        Ok(f) => f,
        Err(r) => return Some(FlowModel { metamodel, def: Err(r), initial }),
    };
    let def = DataflowDefinition {
        name: s.name.text.clone(),
        base: m.clone(),
        flow,
        processes: procs.into_iter().map(|(k, p)| (k, p.schema.clone())).collect(),
        wp_metamodels: wps,
        in_maps,
        out_maps,
    };
    let r = validate_definition(&def);
    let def = if r.is_ok() { Ok(def) } else { Err(r) };
    Some(FlowModel { metamodel, def, initial })
}

fn build_advice(d: &mut Diags, s: &Section, main: &Metamodel) -> Option<AdviceModel> {
    let before = d.0.len();
    let adv = build_metamodel(d, s);
    let mut entry_els = Vec::new();
    for decl in decls(s, "entry") {
        entry_els.extend(elements(d, s, &adv.graph, &decl.args));
    }
    if decls(s, "entry").next().is_none() {
        d.at(s, &s.name, "advice has no `entry` declaration");
    }
    if d.0.len() > before {
        return None;
    }
    let entry = adv.view(entry_els).expect("elements checked");
    let embedding = GraphMorphism::inclusion(&entry.graph, &adv.graph).expect("view is a subgraph");
    let mut points: BTreeMap<u32, (&Token, BTreeMap<String, String>, BTreeMap<String, String>)> = BTreeMap::new();
    for decl in decls(s, "map") {
        let a = &decl.args;
        let Some(k) = small_int(&a[0]) else {
            d.at(s, &a[0], "entry point index must be a non-negative integer");
            continue;
        };
        let slot = points.entry(k).or_insert_with(|| (&a[0], BTreeMap::new(), BTreeMap::new()));
        let (from, to) = (&a[1], &a[2]);
        if entry.graph.has_node(&from.text) {
            if !main.graph.has_node(&to.text) {
                d.at(s, to, format!("unknown class `{}` in main metamodel", to.text));
            } else if slot.1.insert(from.text.clone(), to.text.clone()).is_some() {
                d.at(s, from, format!("`{}` bound twice at point {k}", from.text));
            }
        } else if entry.graph.has_edge(&from.text) {
            if !main.graph.has_edge(&to.text) {
                d.at(s, to, format!("unknown edge `{}` in main metamodel", to.text));
            } else if slot.2.insert(from.text.clone(), to.text.clone()).is_some() {
                d.at(s, from, format!("`{}` bound twice at point {k}", from.text));
            }
        } else {
            d.at(s, from, format!("`{}` is not an entry element", from.text));
        }
    }
    let mut out = Vec::new();
    for (k, (tok, nodes, edges)) in points {
        let binding = GraphMorphism::new(entry.graph.clone(), main.graph.clone(), nodes, edges);
        let r = check_morphism(&binding);
        if !r.is_ok() {
            d.report(s, tok, &r);
            continue;
        }
        out.push(EntryPoint { index: k as usize, binding });
    }
    if d.0.len() > before {
        return None;
    }
    Some(AdviceModel {
        main: s.of.as_ref().unwrap().text.clone(),
        advice: Advice { advice: adv, entry, embedding },
        points: out,
    })
}

fn claim_body(d: &mut Diags, s: &Section, a: &[Token], m: &Metamodel) -> Option<ClaimBody> {
    let names = |toks: &[Token]| toks.iter().map(|t| t.text.clone()).collect::<Vec<_>>();
    let body = match a[1].text.as_str() {
        "given" => {
            if !m.constraints.contains_key(&a[2].text) {
                d.at(s, &a[2], format!("unknown constraint `{}`", a[2].text));
                return None;
            }
            return Some(ClaimBody::Given(a[2].text.clone()));
        }
        "all" => return Some(ClaimBody::All),
        "semantic" => return Some(ClaimBody::Semantic(a[2].unquoted())),
        "mult" => {
            let (lower, upper) = bounds(d, s, &a[4], &a[5])?;
            ConstraintKind::Multiplicity { edge: a[2].text.clone(), end: end_of(&a[3]), lower, upper }
        }
        "key" => ConstraintKind::Key { edges: names(&a[2..]) },
        "xor" => ConstraintKind::Xor { edges: names(&a[2..]) },
        "validity" => ConstraintKind::ValidityTrue { attr: a[2].text.clone() },
        "derived" => ConstraintKind::DerivedEquality { name: a[2].text.clone(), chain: names(&a[4..]) },
        _ => unreachable!("rejected by the parser"),
    };
    if let Err(e) = m.validate_constraint(&body) {
        d.at(s, &a[2], e);
        return None;
    }
    Some(ClaimBody::Constraint(body))
}

fn build_derivation(d: &mut Diags, s: &Section, m: &Metamodel) -> Option<DerivationTree> {
    let before = d.0.len();
    let mut t = DerivationTree::new(&s.name.text, m.clone());
    let mut claim_tok: BTreeMap<String, &Token> = BTreeMap::new();
    for decl in decls(s, "claim") {
        let name = &decl.args[0];
        if claim_tok.contains_key(&name.text) {
            d.at(s, name, format!("duplicate claim `{}`", name.text));
            continue;
        }
        claim_tok.insert(name.text.clone(), name);
        if let Some(b) = claim_body(d, s, &decl.args, m) {
            t.claim(&name.text, b);
        }
    }
    let mut steps: BTreeMap<u32, (&Token, Step)> = BTreeMap::new();
    for decl in decls(s, "step") {
        let a = &decl.args;
        let Some(idx) = small_int(&a[0]) else {
            d.at(s, &a[0], "step index must be a non-negative integer");
            continue;
        };
        let step = Step {
            conclusion: a[1].text.clone(),
            premises: a[3..].iter().map(|t| t.text.clone()).collect(),
            kind: StepKind::parse(&a[2].text).expect("checked by the parser"),
        };
        if steps.insert(idx, (&a[0], step)).is_some() {
            d.at(s, &a[0], format!("duplicate step index {idx}"));
        }
    }
    let tops: Vec<&Decl> = decls(s, "top").collect();
    match tops.as_slice() {
        [] => d.at(s, &s.name, "derivation has no `top` declaration"),
        [top] => t.top = top.args[0].text.clone(),
        [_, rest @ ..] => {
            for x in rest {
                d.at(s, &x.keyword, "more than one `top` declaration");
            }
        }
    }
    if d.0.len() > before {
        return None;
    }
    let step_tok: Vec<&Token> = steps.values().map(|(tok, _)| *tok).collect();
    t.steps = steps.into_values().map(|(_, st)| st).collect();
    let r = t.check_well_formed();
    for v in &r.violations {
        let tok = if let Some(i) = v.element.strip_prefix("step ").and_then(|i| i.parse::<usize>().ok()) {
            step_tok.get(i).copied().unwrap_or(&s.name)
        } else if v.element == "top" {
            &tops[0].args[0]
        } else {
            claim_tok.get(&v.element).copied().unwrap_or(&s.name)
        };
        d.at(s, tok, format!("{}: {}", v.element, v.message));
    }
    r.is_ok().then_some(t)
}

fn metamodel_of<'a>(d: &mut Diags, s: &Section, model: &'a Model) -> Option<&'a Metamodel> {
    let of = s.of.as_ref().expect("non-metamodel sections name a metamodel");
    let m = model.metamodels.get(&of.text);
    if m.is_none() {
        d.at(s, of, format!("unknown metamodel `{}`", of.text));
    }
    m
}

/// Builds every section of every document. Cross-references are resolved in dependency
/// order regardless of where sections appear.
pub fn build(docs: &[Document]) -> Result<Model, Vec<Diagnostic>> {
    let mut d = Diags(Vec::new());
    let mut by_kind: BTreeMap<SectionKind, Vec<&Section>> = BTreeMap::new();
    let mut seen: BTreeSet<(SectionKind, String)> = BTreeSet::new();
    for s in docs.iter().flat_map(|doc| doc.sections.iter()) {
        if !seen.insert((s.kind, s.name.text.clone())) {
            d.at(s, &s.name, format!("duplicate {} `{}`", s.kind.as_str(), s.name.text));
            continue;
        }
        by_kind.entry(s.kind).or_default().push(s);
    }
    let of = |k: SectionKind| by_kind.get(&k).cloned().unwrap_or_default();
    let mut model = Model::default();
    for s in of(SectionKind::Metamodel) {
        let m = build_metamodel(&mut d, s);
        model.metamodels.insert(s.name.text.clone(), m);
    }
    for s in of(SectionKind::Instance) {
        if let Some(m) = metamodel_of(&mut d, s, &model) {
            let instance = build_instance(&mut d, s, m);
            let metamodel = s.of.as_ref().unwrap().text.clone();
            model.instances.insert(s.name.text.clone(), InstanceModel { metamodel, instance });
        }
    }
    for s in of(SectionKind::Process) {
        if let Some(m) = metamodel_of(&mut d, s, &model).cloned() {
            if let Some(p) = build_process(&mut d, s, &m, &model) {
                model.processes.insert(s.name.text.clone(), p);
            }
        }
    }
    for s in of(SectionKind::Flow) {
        if let Some(m) = metamodel_of(&mut d, s, &model).cloned() {
            if let Some(f) = build_flow_section(&mut d, s, &m, &model) {
                model.flows.insert(s.name.text.clone(), f);
            }
        }
    }
    for s in of(SectionKind::Advice) {
        if let Some(m) = metamodel_of(&mut d, s, &model).cloned() {
            if let Some(a) = build_advice(&mut d, s, &m) {
                model.advices.insert(s.name.text.clone(), a);
            }
        }
    }
    for s in of(SectionKind::Derivation) {
        if let Some(m) = metamodel_of(&mut d, s, &model).cloned() {
            if let Some(t) = build_derivation(&mut d, s, &m) {
                model.derivations.insert(s.name.text.clone(), t);
            }
        }
    }
    if d.0.is_empty() {
        Ok(model)
    } else {
        d.0.sort_by(|a, b| (&a.file, a.line, a.col).cmp(&(&b.file, b.line, b.col)));
        d.0.dedup();
        Err(d.0)
    }
}
