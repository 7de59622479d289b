//! Dependency flows: work products, process ports, wires, and their derived relations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::graph::ValidationReport;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowProcess {
    pub in_ports: Vec<String>,
    /// `None` for a sink.
    pub out_port: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct WireIn {
    pub wp: String,
    pub process: String,
    pub port: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct WireOut {
    pub process: String,
    pub port: String,
    pub wp: String,
}

/// Unvalidated flow data.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowParts {
    pub processes: BTreeMap<String, FlowProcess>,
    pub work_products: BTreeSet<String>,
    pub wires_in: BTreeMap<String, WireIn>,
    pub wires_out: BTreeMap<String, WireOut>,
}

impl FlowParts {
    pub fn process(&mut self, id: &str, in_ports: &[&str], out_port: Option<&str>) -> &mut Self {
        self.processes.insert(
            id.to_string(),
            FlowProcess { in_ports: in_ports.iter().map(|s| s.to_string()).collect(), out_port: out_port.map(str::to_string) },
        );
        self
    }

    pub fn wp(&mut self, id: &str) -> &mut Self {
        self.work_products.insert(id.to_string());
        self
    }

    pub fn wire_in(&mut self, id: &str, wp: &str, process: &str, port: &str) -> &mut Self {
        self.wires_in.insert(id.to_string(), WireIn { wp: wp.into(), process: process.into(), port: port.into() });
        self
    }

    pub fn wire_out(&mut self, id: &str, process: &str, port: &str, wp: &str) -> &mut Self {
        self.wires_out.insert(id.to_string(), WireOut { process: process.into(), port: port.into(), wp: wp.into() });
        self
    }
}

/// A validated dependency flow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyFlow {
    parts: FlowParts,
}

impl std::ops::Deref for DependencyFlow {
    type Target = FlowParts;
    fn deref(&self) -> &FlowParts {
        &self.parts
    }
}

impl DependencyFlow {
    pub fn parts(&self) -> &FlowParts {
        &self.parts
    }

    pub fn into_parts(self) -> FlowParts {
        self.parts
    }

    /// Products read by `p`, by in-port.
    pub fn inputs_of(&self, p: &str) -> Vec<(&str, &str, &str)> {
        let mut v: Vec<(&str, &str, &str)> = self
            .wires_in
            .iter()
            .filter(|(_, w)| w.process == p)
            .map(|(id, w)| (w.port.as_str(), w.wp.as_str(), id.as_str()))
            .collect();
        v.sort();
        v
    }

    /// Products written by `p`, with the wire id.
    pub fn outputs_of(&self, p: &str) -> Vec<(&str, &str)> {
        self.wires_out.iter().filter(|(_, w)| w.process == p).map(|(id, w)| (w.wp.as_str(), id.as_str())).collect()
    }

    pub fn writers_of(&self, wp: &str) -> BTreeSet<&str> {
        self.wires_out.values().filter(|w| w.wp == wp).map(|w| w.process.as_str()).collect()
    }

    pub fn readers_of(&self, wp: &str) -> BTreeSet<&str> {
        self.wires_in.values().filter(|w| w.wp == wp).map(|w| w.process.as_str()).collect()
    }
}

/// Validates the parts: endpoints exist, ids are disjoint, wire keys are unique, each
/// in-port has exactly one wire and each out-port at least one.
pub fn build_flow(parts: FlowParts) -> Result<DependencyFlow, ValidationReport> {
    let mut r = ValidationReport::default();
    for p in parts.processes.keys() {
        if parts.work_products.contains(p) {
            r.push(p, "id names both a process and a work product");
        }
    }
    for (p, fp) in &parts.processes {
        let mut seen = BTreeSet::new();
        for port in fp.in_ports.iter().chain(fp.out_port.iter()) {
            if !seen.insert(port) {
                r.push(format!("{p}.{port}"), "duplicate port");
            }
        }
    }
    let mut in_keys: BTreeMap<(&str, &str, &str), Vec<&str>> = BTreeMap::new();
    for (id, w) in &parts.wires_in {
        if !parts.work_products.contains(&w.wp) {
            r.push(id, format!("unknown work product `{}`", w.wp));
        }
        match parts.processes.get(&w.process) {
            None => r.push(id, format!("unknown process `{}`", w.process)),
            Some(fp) if !fp.in_ports.contains(&w.port) => r.push(id, format!("`{}` has no in-port `{}`", w.process, w.port)),
            _ => {}
        }
        in_keys.entry((&w.wp, &w.process, &w.port)).or_default().push(id);
    }
    let mut out_keys: BTreeMap<(&str, &str, &str), Vec<&str>> = BTreeMap::new();
    for (id, w) in &parts.wires_out {
        if !parts.work_products.contains(&w.wp) {
            r.push(id, format!("unknown work product `{}`", w.wp));
        }
        match parts.processes.get(&w.process) {
            None => r.push(id, format!("unknown process `{}`", w.process)),
            Some(fp) if fp.out_port.as_deref() != Some(w.port.as_str()) => {
                r.push(id, format!("`{}` has no out-port `{}`", w.process, w.port))
            }
            _ => {}
        }
        out_keys.entry((&w.process, &w.port, &w.wp)).or_default().push(id);
    }
    for ids in in_keys.values().chain(out_keys.values()) {
        if ids.len() > 1 {
            for id in ids {
                r.push(*id, format!("wires {} share both ends", ids.join(", ")));
            }
        }
    }
    for (p, fp) in &parts.processes {
        for port in &fp.in_ports {
            let n = parts.wires_in.values().filter(|w| &w.process == p && &w.port == port).count();
            if n != 1 {
                r.push(format!("{p}.{port}"), format!("in-port has {n} wires, expected exactly 1"));
            }
        }
        if let Some(port) = &fp.out_port {
            if !parts.wires_out.values().any(|w| &w.process == p && &w.port == port) {
                r.push(format!("{p}.{port}"), "out-port has no wire");
            }
        }
    }
    if r.is_ok() {
        Ok(DependencyFlow { parts })
    } else {
        Err(r.normalized())
    }
}

pub type Relation = BTreeSet<(String, String)>;

/// `ps2ps` (writer then reader through a product) and `wp2wp` (read then written by one process).
pub fn derived_relations(f: &DependencyFlow) -> (Relation, Relation) {
    let mut ps2ps = Relation::new();
    for wo in f.wires_out.values() {
        for wi in f.wires_in.values().filter(|wi| wi.wp == wo.wp) {
            ps2ps.insert((wo.process.clone(), wi.process.clone()));
        }
    }
    let mut wp2wp = Relation::new();
    for wi in f.wires_in.values() {
        for wo in f.wires_out.values().filter(|wo| wo.process == wi.process) {
            wp2wp.insert((wi.wp.clone(), wo.wp.clone()));
        }
    }
    (ps2ps, wp2wp)
}

/// Kahn's algorithm; true iff the relation has no cycle.
pub fn is_acyclic(rel: &Relation) -> bool {
    let mut nodes: BTreeSet<&str> = BTreeSet::new();
    let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
    for (a, b) in rel {
        nodes.insert(a);
        nodes.insert(b);
        *indeg.entry(b).or_default() += 1;
    }
    let mut queue: VecDeque<&str> = nodes.iter().copied().filter(|n| !indeg.contains_key(n)).collect();
    let mut seen = 0;
    while let Some(n) = queue.pop_front() {
        seen += 1;
        for (_, b) in rel.iter().filter(|(a, _)| a == n) {
            let d = indeg.get_mut(b.as_str()).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(b);
            }
        }
    }
    seen == nodes.len()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Acyclicity {
    /// Processes grouped by longest-path depth in `ps2ps`.
    Strata(Vec<BTreeSet<String>>),
    /// A shortest cycle through processes and products, first element repeated at the end.
    Cycle(Vec<String>),
}

fn bipartite(f: &DependencyFlow) -> BTreeMap<String, BTreeSet<String>> {
    let mut adj: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for n in f.processes.keys().chain(f.work_products.iter()) {
        adj.entry(n.clone()).or_default();
    }
    for w in f.wires_in.values() {
        adj.entry(w.wp.clone()).or_default().insert(w.process.clone());
    }
    for w in f.wires_out.values() {
        adj.entry(w.process.clone()).or_default().insert(w.wp.clone());
    }
    adj
}

/// The lexicographically least among the shortest cycles, rotated to start at its least element.
fn least_cycle(adj: &BTreeMap<String, BTreeSet<String>>) -> Option<Vec<String>> {
    let mut best_len: Option<usize> = None;
    for s in adj.keys() {
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut q = VecDeque::new();
        for n in &adj[s] {
            if !dist.contains_key(n.as_str()) {
                dist.insert(n, 1);
                q.push_back(n.as_str());
            }
        }
        while let Some(n) = q.pop_front() {
            if n == s {
                break;
            }
            for m in &adj[n] {
                if !dist.contains_key(m.as_str()) {
                    dist.insert(m, dist[n] + 1);
                    q.push_back(m);
                }
            }
        }
        if let Some(d) = dist.get(s.as_str()) {
            best_len = Some(best_len.map_or(*d, |b: usize| b.min(*d)));
        }
    }
    let len = best_len?;
    for s in adj.keys() {
        // distances back to s within nodes > s, for pruning
        let mut back: BTreeMap<&str, usize> = BTreeMap::new();
        back.insert(s, 0);
        let mut q = VecDeque::from([s.as_str()]);
        while let Some(n) = q.pop_front() {
            for (m, outs) in adj {
                if m.as_str() > s.as_str() && outs.contains(n) && !back.contains_key(m.as_str()) {
                    back.insert(m, back[n] + 1);
                    q.push_back(m);
                }
            }
        }
        let mut path = vec![s.clone()];
        if dfs_cycle(adj, s, &back, len, &mut path) {
            return Some(path);
        }
    }
    None
}

fn dfs_cycle(adj: &BTreeMap<String, BTreeSet<String>>, s: &str, back: &BTreeMap<&str, usize>, len: usize, path: &mut Vec<String>) -> bool {
    let cur = path.last().unwrap().clone();
    let used = path.len() - 1;
    for n in &adj[&cur] {
        if n == s {
            if used + 1 == len {
                path.push(n.clone());
                return true;
            }
            continue;
        }
        if n.as_str() < s || path.contains(n) {
            continue;
        }
        match back.get(n.as_str()) {
            Some(d) if used + 1 + d <= len => {
                path.push(n.clone());
                if dfs_cycle(adj, s, back, len, path) {
                    return true;
                }
                path.pop();
            }
            _ => {}
        }
    }
    false
}

pub fn check_acyclic(f: &DependencyFlow) -> Acyclicity {
    if let Some(c) = least_cycle(&bipartite(f)) {
        return Acyclicity::Cycle(c);
    }
    let (ps2ps, _) = derived_relations(f);
    let mut depth: BTreeMap<&str, usize> = f.processes.keys().map(|p| (p.as_str(), 0)).collect();
    // longest path by relaxation; the relation is acyclic so |P| rounds suffice
    for _ in 0..f.processes.len() {
        let mut changed = false;
        for (a, b) in &ps2ps {
            let d = depth[a.as_str()] + 1;
            if depth[b.as_str()] < d {
                depth.insert(b, d);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut strata: Vec<BTreeSet<String>> = Vec::new();
    for (p, d) in depth {
        if strata.len() <= d {
            strata.resize(d + 1, BTreeSet::new());
        }
        strata[d].insert(p.to_string());
    }
    Acyclicity::Strata(strata)
}
