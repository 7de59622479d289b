//! Canonical section text for engine objects.

use std::collections::BTreeSet;

use crate::graph::{EdgeKind, GraphMorphism, NodeKind};
use crate::metamodel::{ConstraintKind, Instance, Metamodel};
use crate::process::ProcessSchema;

fn section(header: String, mut lines: Vec<String>) -> String {
    lines.sort();
    let mut out = header;
    out.push('\n');
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

fn simple_local(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

pub fn format_metamodel(name: &str, m: &Metamodel) -> String {
    let mut lines = Vec::new();
    for (n, k) in m.graph.nodes() {
        lines.push(match k {
            NodeKind::Class => format!("class {n}"),
            NodeKind::ProcessClass => format!("class {n} process"),
            NodeKind::PortNode => format!("class {n} port"),
            NodeKind::ValueType => format!("class {n} value"),
        });
    }
    for (id, e) in m.graph.edges() {
        lines.push(match e.kind {
            EdgeKind::Attribute => match id.strip_prefix(e.src.as_str()).and_then(|r| r.strip_prefix('.')) {
                Some(local) if simple_local(local) => format!("attr {} {local} {}", e.src, e.tgt),
                _ => format!("attr {id} {} -> {}", e.src, e.tgt),
            },
            EdgeKind::Association => format!("assoc {id} {} -> {}", e.src, e.tgt),
            EdgeKind::Dataflow => format!("assoc {id} {} -> {} dataflow", e.src, e.tgt),
        });
    }
    let mut covered = BTreeSet::new();
    for (cid, c) in &m.constraints {
        if let ConstraintKind::DerivedEquality { name, .. } = c {
            covered.insert(name.as_str());
        }
        let text = c.to_string();
        let (kw, rest) = text.split_once(' ').unwrap_or((text.as_str(), ""));
        lines.push(format!("{kw} {cid} {rest}"));
    }
    for (n, chain) in &m.derived {
        if !covered.contains(n.as_str()) {
            lines.push(format!("derived {n} = {}", chain.join(" ")));
        }
    }
    section(format!("metamodel {name}"), lines)
}

pub fn format_instance(name: &str, metamodel: &str, i: &Instance) -> String {
    section(format!("instance {name} : {metamodel}"), i.canonical_lines())
}

fn image(f: &GraphMorphism) -> String {
    let els: BTreeSet<&String> = f.node_map.values().chain(f.edge_map.values()).collect();
    els.into_iter().map(|s| format!(" {s}")).collect()
}

/// A process section over `metamodel` (the schema's inner metamodel): ports as views.
/// Semantics are not expressible and are listed in a comment.
pub fn format_process_view(name: &str, metamodel: &str, s: &ProcessSchema) -> String {
    let mut lines: Vec<String> = s.inputs.iter().map(|p| format!("in {}{}", p.port, image(&p.injection))).collect();
    lines.push(format!("out {}{}", s.output.port, image(&s.output.map)));
    let mut out = format!("# semantics: {}\n", s.semantics.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", "));
    out.push_str(&section(format!("process {name} : {metamodel}"), lines));
    out
}
