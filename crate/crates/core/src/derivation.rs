//! Constraint-derivation trees and bounded soundness checking of their steps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{EdgeKind, NodeKind, ValidationReport};
use crate::metamodel::{compose_chain, eval_constraint, ConstraintKind, End, Instance, Literal, Metamodel};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClaimBody {
    /// A constraint of the metamodel, by id.
    Given(String),
    /// A constraint stated in the tree.
    Constraint(ConstraintKind),
    /// The conjunction of the premises of the step concluding it.
    All,
    /// A claim resting on human judgement, with its justification.
    Semantic(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum StepKind {
    Definitional,
    MultiplicityComposition,
    Conjunction,
    Semantic,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Definitional => "definitional",
            StepKind::MultiplicityComposition => "composition",
            StepKind::Conjunction => "conjunction",
            StepKind::Semantic => "semantic",
        }
    }

    pub fn parse(s: &str) -> Option<StepKind> {
        Some(match s {
            "definitional" => StepKind::Definitional,
            "composition" => StepKind::MultiplicityComposition,
            "conjunction" => StepKind::Conjunction,
            "semantic" => StepKind::Semantic,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub conclusion: String,
    pub premises: Vec<String>,
    pub kind: StepKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivationTree {
    pub name: String,
    pub metamodel: Metamodel,
    pub claims: BTreeMap<String, ClaimBody>,
    pub steps: Vec<Step>,
    pub top: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DerivationError {
    #[error("enumeration bound must be at least 1")]
    ZeroBound,
    #[error("ill-formed derivation tree")]
    IllFormed(ValidationReport),
    #[error("no step {0}")]
    NoStep(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Sound,
    /// An instance satisfying every premise and violating the named conclusion atom.
    Counterexample { instance: Instance, violated: String },
    Assumed(String),
}

impl StepStatus {
    pub fn label(&self) -> &'static str {
        match self {
            StepStatus::Sound => "sound",
            StepStatus::Counterexample { .. } => "refuted",
            StepStatus::Assumed(_) => "assumed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepVerdict {
    pub index: usize,
    pub conclusion: String,
    pub status: StepStatus,
}

impl DerivationTree {
    pub fn new(name: &str, metamodel: Metamodel) -> Self {
        DerivationTree { name: name.into(), metamodel, claims: BTreeMap::new(), steps: Vec::new(), top: String::new() }
    }

    pub fn claim(&mut self, name: &str, body: ClaimBody) -> &mut Self {
        self.claims.insert(name.into(), body);
        self
    }

    pub fn step(&mut self, conclusion: &str, premises: &[&str], kind: StepKind) -> &mut Self {
        self.steps.push(Step {
            conclusion: conclusion.into(),
            premises: premises.iter().map(|s| s.to_string()).collect(),
            kind,
        });
        self
    }

    pub fn given(&self) -> impl Iterator<Item = (&str, &str)> {
        self.claims.iter().filter_map(|(n, b)| match b {
            ClaimBody::Given(c) => Some((n.as_str(), c.as_str())),
            _ => None,
        })
    }

    fn step_of(&self, claim: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.conclusion == claim)
    }

    /// Chain shape: premises come from givens or earlier conclusions, every derived claim is
    /// concluded exactly once, and semantic steps conclude exactly the semantic claims.
    pub fn check_well_formed(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        for (n, b) in &self.claims {
            match b {
                ClaimBody::Given(c) if !self.metamodel.constraints.contains_key(c) => {
                    r.push(n, format!("unknown constraint `{c}`"))
                }
                ClaimBody::Constraint(k) => {
                    if let Err(m) = self.metamodel.validate_constraint(k) {
                        r.push(n, m);
                    }
                }
                _ => {}
            }
        }
        let mut known: BTreeSet<&str> = self.given().map(|(n, _)| n).collect();
        let mut concluded: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, s) in self.steps.iter().enumerate() {
            let at = format!("step {i}");
            match self.claims.get(&s.conclusion) {
                None => r.push(&at, format!("unknown claim `{}`", s.conclusion)),
                Some(ClaimBody::Given(_)) => r.push(&at, format!("given claim `{}` cannot be concluded", s.conclusion)),
                Some(b) => {
                    if matches!(b, ClaimBody::Semantic(_)) != (s.kind == StepKind::Semantic) {
                        r.push(&at, "semantic steps must conclude exactly the semantic claims");
                    }
                }
            }
            if s.premises.is_empty() {
                r.push(&at, "step has no premises");
            }
            for p in &s.premises {
                if !self.claims.contains_key(p) {
                    r.push(&at, format!("unknown premise `{p}`"));
                } else if !known.contains(p.as_str()) {
                    r.push(&at, format!("premise `{p}` is not given or concluded earlier"));
                }
            }
            *concluded.entry(&s.conclusion).or_default() += 1;
            known.insert(&s.conclusion);
        }
        for (n, b) in &self.claims {
            if !matches!(b, ClaimBody::Given(_)) {
                match concluded.get(n.as_str()) {
                    Some(1) => {}
                    Some(k) => r.push(n, format!("concluded by {k} steps")),
                    None => r.push(n, "derived claim is never concluded"),
                }
            }
        }
        if !self.claims.contains_key(&self.top) {
            r.push("top", format!("top claim `{}` is not declared", self.top));
        }
        r.normalized()
    }

    /// The constraints a claim stands for. Conjunctions and semantic claims stand for the
    /// atoms of their premises.
    pub fn atoms(&self, claim: &str) -> Vec<ConstraintKind> {
        let mut out = BTreeSet::new();
        self.collect_atoms(claim, &mut out, 0);
        out.into_iter().collect()
    }

    fn collect_atoms(&self, claim: &str, out: &mut BTreeSet<ConstraintKind>, depth: usize) {
        if depth > self.steps.len() + 1 {
            return;
        }
        match self.claims.get(claim) {
            Some(ClaimBody::Given(c)) => {
                if let Some(k) = self.metamodel.constraints.get(c) {
                    out.insert(k.clone());
                }
            }
            Some(ClaimBody::Constraint(k)) => {
                out.insert(k.clone());
            }
            Some(ClaimBody::All) | Some(ClaimBody::Semantic(_)) => {
                if let Some(s) = self.step_of(claim) {
                    for p in &s.premises {
                        self.collect_atoms(p, out, depth + 1);
                    }
                }
            }
            None => {}
        }
    }

    /// Given claims supporting `claim`, transitively.
    pub fn support(&self, claim: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![claim.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(c) = stack.pop() {
            if !seen.insert(c.clone()) {
                continue;
            }
            match self.claims.get(&c) {
                Some(ClaimBody::Given(_)) => {
                    out.insert(c);
                }
                _ => {
                    if let Some(s) = self.step_of(&c) {
                        stack.extend(s.premises.iter().cloned());
                    }
                }
            }
        }
        out
    }
}

fn atom_classes(m: &Metamodel, a: &ConstraintKind) -> BTreeSet<String> {
    let mut edges: Vec<&str> = Vec::new();
    match a {
        ConstraintKind::Multiplicity { edge, .. } => match m.derived.get(edge) {
            Some(chain) => edges.extend(chain.iter().map(String::as_str)),
            None => edges.push(edge),
        },
        _ => edges.extend(a.mentions()),
    }
    let mut out = BTreeSet::new();
    for e in edges {
        if let Some(edge) = m.graph.edge(e) {
            for n in [&edge.src, &edge.tgt] {
                if m.graph.node_kind(n) != Some(NodeKind::ValueType) {
                    out.insert(n.clone());
                }
            }
        }
    }
    out
}

fn atom_edges(m: &Metamodel, a: &ConstraintKind) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    match a {
        ConstraintKind::Multiplicity { edge, .. } => match m.derived.get(edge) {
            Some(chain) => out.extend(chain.iter().cloned()),
            None => {
                out.insert(edge.clone());
            }
        },
        _ => out.extend(a.mentions().into_iter().filter(|e| m.graph.has_edge(e)).map(str::to_string)),
    }
    out
}

/// One bounded search: instances over the given classes and edges (on top of a fixed base),
/// satisfying every premise and violating the goal.
struct Search<'a> {
    m: &'a Metamodel,
    premises: Vec<&'a ConstraintKind>,
    goal: &'a ConstraintKind,
    classes: Vec<String>,
    edges: Vec<String>,
    generated: Vec<(String, Vec<String>)>,
    bound: usize,
    base: Instance,
}

fn domain(vt: &str) -> Vec<Literal> {
    match vt {
        "Bool" => vec![Literal::Bool(false), Literal::Bool(true)],
        "Int" => vec![Literal::Int(1)],
        "Real" => vec![Literal::Real(num_rational::BigRational::from_integer(1.into()))],
        _ => vec![Literal::Str("v".into())],
    }
}

/// Multisets of size `lo..=hi` over `n` slots, at most `cap` per slot.
fn count_vectors(n: usize, lo: u32, hi: u32, cap: u32) -> Vec<Vec<u32>> {
    fn go(i: usize, n: usize, left: u32, lo: u32, cap: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == n {
            let total: u32 = cur.iter().sum();
            if total >= lo {
                out.push(cur.clone());
            }
            return;
        }
        for c in 0..=cap.min(left) {
            cur.push(c);
            go(i + 1, n, left - c, lo, cap, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, hi, lo, cap, &mut Vec::new(), &mut out);
    out
}

impl<'a> Search<'a> {
    fn src_bounds(&self, edge: &str) -> (u32, u32) {
        let mut lo = 0;
        let mut hi = u32::MAX;
        for p in &self.premises {
            if let ConstraintKind::Multiplicity { edge: e, end: End::Src, lower, upper } = p {
                if e == edge {
                    lo = lo.max(*lower);
                    if let Some(u) = upper {
                        hi = hi.min(*u);
                    }
                }
            }
        }
        (lo, hi)
    }

    fn local_ok(&self, inst: &Instance, obj: &str) -> bool {
        for p in &self.premises {
            match p {
                ConstraintKind::Xor { edges } if edges.iter().all(|e| self.edges.contains(e)) => {
                    let used = edges.iter().filter(|e| inst.links_of(e).any(|(_, l)| l.src == obj)).count();
                    if inst.node_type(obj) == self.m.graph.edge(&edges[0]).map(|e| e.src.as_str()) && used != 1 {
                        return false;
                    }
                }
                ConstraintKind::Key { edges } if edges.iter().all(|e| self.edges.contains(e)) => {
                    let mut seen = BTreeSet::new();
                    for e in edges {
                        for (_, l) in inst.links_of(e) {
                            if l.src == obj && !seen.insert(l.tgt.clone()) {
                                return false;
                            }
                        }
                    }
                }
                ConstraintKind::ValidityTrue { attr } if self.edges.contains(attr)
                    && inst.attr_values(obj, attr).iter().any(|v| **v != Literal::Bool(true)) => {
                        return false;
                    }
                _ => {}
            }
        }
        true
    }

    /// Adds the generated links, and returns a copy when the goal fails while every premise
    /// holds. The instance is left as it was.
    fn leaf(&self, inst: &mut Instance) -> Option<Instance> {
        let mut added = Vec::new();
        for (name, chain) in &self.generated {
            for (a, b) in compose_chain(inst, chain) {
                let id = format!("{name}:{a}:{b}");
                if inst.add_link(&id, name, &a, &b).is_ok() {
                    added.push(id);
                }
            }
        }
        let hit = !eval_constraint(self.goal, self.m, inst).holds()
            && self.premises.iter().all(|p| eval_constraint(p, self.m, inst).holds());
        let out = hit.then(|| inst.clone());
        for id in added {
            inst.remove_link(&id);
        }
        out
    }

    /// Per source object, the link choices for each enumerated edge out of its class.
    fn options(&self, inst: &Instance, obj: &str) -> Vec<Vec<(String, String, Option<Literal>)>> {
        let class = inst.node_type(obj).unwrap_or("").to_string();
        let mut per_edge: Vec<Vec<Vec<(String, String, Option<Literal>)>>> = Vec::new();
        for e in &self.edges {
            let edge = self.m.graph.edge(e).unwrap();
            if edge.src != class {
                continue;
            }
            let (lo, hi) = self.src_bounds(e);
            let mut choices = Vec::new();
            if edge.kind == EdgeKind::Attribute {
                let dom = domain(&edge.tgt);
                for v in count_vectors(dom.len(), lo, hi.min(2), 2) {
                    let mut c = Vec::new();
                    for (d, n) in dom.iter().zip(&v) {
                        for _ in 0..*n {
                            c.push((e.clone(), String::new(), Some(d.clone())));
                        }
                    }
                    choices.push(c);
                }
            } else {
                let targets: Vec<String> = inst.objects_of(&edge.tgt).map(str::to_string).collect();
                for v in count_vectors(targets.len(), lo, hi, 2) {
                    let mut c = Vec::new();
                    for (t, n) in targets.iter().zip(&v) {
                        for _ in 0..*n {
                            c.push((e.clone(), t.clone(), None));
                        }
                    }
                    choices.push(c);
                }
            }
            per_edge.push(choices);
        }
        let mut combos: Vec<Vec<(String, String, Option<Literal>)>> = vec![Vec::new()];
        for choices in per_edge {
            let mut next = Vec::new();
            for c in &combos {
                for ch in &choices {
                    let mut x = c.clone();
                    x.extend(ch.iter().cloned());
                    next.push(x);
                }
            }
            combos = next;
        }
        combos
    }

    fn run(&self) -> Option<(Instance, String)> {
        let mut found = None;
        self.for_each_candidate(&mut |c: &Instance| {
            found = Some((c.clone(), self.goal.to_string()));
            true
        });
        found
    }
}

/// Searches for an instance with at most `bound` objects per class that satisfies all
/// `premises` and violates `goal`. The search is first confined to the classes of the goal
/// and the premises living inside them; a candidate found there is only reported if it
/// extends to the remaining premises.
pub fn find_counterexample(m: &Metamodel, premises: &[ConstraintKind], goal: &ConstraintKind, bound: usize) -> Option<(Instance, String)> {
    let goal_classes = atom_classes(m, goal);
    let (inside, outside): (Vec<&ConstraintKind>, Vec<&ConstraintKind>) =
        premises.iter().partition(|p| atom_classes(m, p).is_subset(&goal_classes));
    let generated_of = |ps: &[&ConstraintKind]| -> Vec<(String, Vec<String>)> {
        ps.iter()
            .filter_map(|p| match p {
                ConstraintKind::DerivedEquality { name, chain } => Some((name.clone(), chain.clone())),
                _ => None,
            })
            .collect()
    };
    let generated = generated_of(&inside);
    let mut edges: BTreeSet<String> = atom_edges(m, goal);
    for p in &inside {
        edges.extend(atom_edges(m, p));
    }
    for (g, _) in &generated {
        edges.remove(g);
    }
    let inner = Search {
        m,
        premises: inside.clone(),
        goal,
        classes: goal_classes.iter().cloned().collect(),
        edges: edges.iter().cloned().collect(),
        generated,
        bound,
        base: Instance::empty(&m.graph),
    };
    if outside.is_empty() {
        return inner.run();
    }
    // Each inner candidate must extend over the outside classes; enumerate candidates by
    // re-running with an accepting leaf that tries the extension.
    let all: Vec<&ConstraintKind> = premises.iter().collect();
    let mut ext_classes: BTreeSet<String> = BTreeSet::new();
    let mut ext_edges: BTreeSet<String> = BTreeSet::new();
    for p in &outside {
        ext_classes.extend(atom_classes(m, p));
        ext_edges.extend(atom_edges(m, p));
    }
    let ext_classes: Vec<String> = ext_classes.difference(&goal_classes).cloned().collect();
    let ext_generated = generated_of(&all);
    for e in &edges {
        ext_edges.remove(e);
    }
    for (g, _) in &ext_generated {
        ext_edges.remove(g);
    }
    let mut found = None;
    inner.for_each_candidate(&mut |cand: &Instance| {
        let mut base = cand.clone();
        // drop generated links so the extension regenerates them over the full instance
        for (g, _) in &inner.generated {
            let ids: Vec<String> = base.links_of(g).map(|(id, _)| id.to_string()).collect();
            for id in ids {
                base.remove_link(&id);
            }
        }
        let ext = Search {
            m,
            premises: all.clone(),
            goal,
            classes: ext_classes.clone(),
            edges: ext_edges.iter().cloned().collect(),
            generated: ext_generated.clone(),
            bound,
            base,
        };
        match ext.run() {
            Some(x) => {
                found = Some(x);
                true
            }
            None => false,
        }
    });
    found
}

impl<'a> Search<'a> {
    /// Calls `f` on every candidate; stops when it returns true.
    fn for_each_candidate(&self, f: &mut dyn FnMut(&Instance) -> bool) {
        let n = self.classes.len();
        let mut sizes = vec![0usize; n];
        loop {
            let mut inst = self.base.clone();
            for (c, k) in self.classes.iter().zip(&sizes) {
                for j in 1..=*k {
                    if inst.add_object(&format!("{c}_{j}"), c).is_err() {
                        return;
                    }
                }
            }
            let src_classes: BTreeSet<&str> =
                self.edges.iter().filter_map(|e| self.m.graph.edge(e)).map(|e| e.src.as_str()).collect();
            let sources: Vec<String> = inst
                .data()
                .nodes()
                .filter(|(o, _)| inst.node_type(o).is_some_and(|t| src_classes.contains(t)))
                .map(|(o, _)| o.to_string())
                .collect();
            if self.dfs_each(&mut inst, &sources, 0, f) {
                return;
            }
            let mut i = 0;
            loop {
                if i == n {
                    return;
                }
                sizes[i] += 1;
                if sizes[i] <= self.bound {
                    break;
                }
                sizes[i] = 0;
                i += 1;
            }
        }
    }

    fn dfs_each(&self, inst: &mut Instance, sources: &[String], i: usize, f: &mut dyn FnMut(&Instance) -> bool) -> bool {
        if i == sources.len() {
            return match self.leaf(inst) {
                Some(c) => f(&c),
                None => false,
            };
        }
        let obj = &sources[i];
        for combo in self.options(inst, obj) {
            let mut added_links = Vec::new();
            let mut added_nodes = Vec::new();
            for (k, (e, tgt, lit)) in combo.iter().enumerate() {
                let id = format!("{obj}:{e}:{}", k + 1);
                match lit {
                    Some(l) => {
                        if inst.add_value_with_ids(&id, &id, obj, e, l.clone()).is_ok() {
                            added_nodes.push(id);
                        }
                    }
                    None => {
                        if inst.add_link(&id, e, obj, tgt).is_ok() {
                            added_links.push(id);
                        }
                    }
                }
            }
            if self.local_ok(inst, obj) && self.dfs_each(inst, sources, i + 1, f) {
                return true;
            }
            for id in added_links {
                inst.remove_link(&id);
            }
            for id in added_nodes {
                inst.remove_node(&id);
            }
        }
        false
    }
}

fn step_premise_atoms(t: &DerivationTree, s: &Step) -> Vec<ConstraintKind> {
    let mut set = BTreeSet::new();
    for p in &s.premises {
        set.extend(t.atoms(p));
    }
    set.into_iter().collect()
}

fn prove(m: &Metamodel, premises: &[ConstraintKind], goals: &[ConstraintKind], bound: usize) -> Result<(), (Instance, String)> {
    for g in goals {
        if premises.contains(g) {
            continue;
        }
        if let Some(ce) = find_counterexample(m, premises, g, bound) {
            return Err(ce);
        }
    }
    Ok(())
}

/// Checks step `i` by exhaustive enumeration up to `bound` objects per class.
pub fn check_step(t: &DerivationTree, i: usize, bound: usize) -> Result<StepVerdict, DerivationError> {
    if bound == 0 {
        return Err(DerivationError::ZeroBound);
    }
    let s = t.steps.get(i).ok_or(DerivationError::NoStep(i))?;
    let status = if s.kind == StepKind::Semantic {
        match t.claims.get(&s.conclusion) {
            Some(ClaimBody::Semantic(j)) => StepStatus::Assumed(j.clone()),
            _ => StepStatus::Assumed(String::new()),
        }
    } else {
        let premises = step_premise_atoms(t, s);
        let goals = t.atoms(&s.conclusion);
        match prove(&t.metamodel, &premises, &goals, bound) {
            Ok(()) => StepStatus::Sound,
            Err((instance, violated)) => StepStatus::Counterexample { instance, violated },
        }
    };
    Ok(StepVerdict { index: i, conclusion: s.conclusion.clone(), status })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainReport {
    pub given: Vec<(String, String)>,
    pub verdicts: Vec<StepVerdict>,
    pub top: String,
    /// `Some(true)` when no step is refuted and the givens entail the top claim up to the bound.
    pub transitivity: Option<bool>,
}

impl ChainReport {
    pub fn refuted(&self) -> impl Iterator<Item = &StepVerdict> {
        self.verdicts.iter().filter(|v| matches!(v.status, StepStatus::Counterexample { .. }))
    }

    pub fn is_sound(&self) -> bool {
        self.refuted().next().is_none() && self.transitivity != Some(false)
    }

    /// `claim<TAB>status<TAB>premises` per given claim and step.
    pub fn lines(&self, t: &DerivationTree) -> Vec<String> {
        let mut out = Vec::new();
        for (n, c) in &self.given {
            out.push(format!("{n}\tgiven\t{c}"));
        }
        for v in &self.verdicts {
            let s = &t.steps[v.index];
            out.push(format!("{}\t{}\t{}", v.conclusion, v.status.label(), s.premises.join(",")));
        }
        out
    }

    /// Indented tree from the top claim.
    pub fn render(&self, t: &DerivationTree) -> String {
        let mut out = String::new();
        let mut seen = BTreeSet::new();
        self.render_claim(t, &self.top, 0, &mut out, &mut seen);
        out
    }

    fn render_claim(&self, t: &DerivationTree, c: &str, depth: usize, out: &mut String, seen: &mut BTreeSet<String>) {
        let pad = "  ".repeat(depth);
        match t.claims.get(c) {
            Some(ClaimBody::Given(cid)) => {
                let body = t.metamodel.constraints.get(cid).map(|k| k.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{pad}{c} [given {cid}: {body}]");
            }
            _ => {
                let Some(v) = self.verdicts.iter().find(|v| v.conclusion == c) else {
                    let _ = writeln!(out, "{pad}{c} [?]");
                    return;
                };
                let s = &t.steps[v.index];
                let note = match &v.status {
                    StepStatus::Assumed(j) if !j.is_empty() => format!(": {j}"),
                    StepStatus::Counterexample { violated, .. } => format!(": violates {violated}"),
                    _ => String::new(),
                };
                let _ = writeln!(out, "{pad}{c} [{}, {}{note}]", s.kind.as_str(), v.status.label());
                if !seen.insert(c.to_string()) {
                    return;
                }
                for p in &s.premises {
                    self.render_claim(t, p, depth + 1, out, seen);
                }
            }
        }
    }
}

/// Givens entail every atom of the top claim, up to the bound.
pub fn check_transitivity(t: &DerivationTree, bound: usize) -> Result<Result<(), (Instance, String)>, DerivationError> {
    if bound == 0 {
        return Err(DerivationError::ZeroBound);
    }
    let givens: Vec<ConstraintKind> = {
        let mut s = BTreeSet::new();
        for (n, _) in t.given() {
            s.extend(t.atoms(n));
        }
        s.into_iter().collect()
    };
    Ok(prove(&t.metamodel, &givens, &t.atoms(&t.top), bound))
}

pub fn check_chain(t: &DerivationTree, bound: usize) -> Result<ChainReport, DerivationError> {
    if bound == 0 {
        return Err(DerivationError::ZeroBound);
    }
    let r = t.check_well_formed();
    if !r.is_ok() {
        return Err(DerivationError::IllFormed(r));
    }
    let verdicts = (0..t.steps.len()).map(|i| check_step(t, i, bound)).collect::<Result<Vec<_>, _>>()?;
    let given = t.given().map(|(n, c)| (n.to_string(), c.to_string())).collect();
    let mut report = ChainReport { given, verdicts, top: t.top.clone(), transitivity: None };
    if report.refuted().next().is_none() {
        report.transitivity = Some(check_transitivity(t, bound)?.is_ok());
    }
    Ok(report)
}

/// Instance-level argument flow: givens are evaluated directly, derived claims hold iff all
/// their supporting givens hold.
pub fn evaluate_claims(t: &DerivationTree, i: &Instance) -> BTreeMap<String, bool> {
    let mut given: BTreeMap<String, bool> = BTreeMap::new();
    for (n, cid) in t.given() {
        let ok = t.metamodel.constraints.get(cid).is_some_and(|c| eval_constraint(c, &t.metamodel, i).holds());
        given.insert(n.to_string(), ok);
    }
    t.claims
        .keys()
        .map(|c| {
            let v = match given.get(c) {
                Some(v) => *v,
                None => t.support(c).iter().all(|g| given.get(g).copied().unwrap_or(false)),
            };
            (c.clone(), v)
        })
        .collect()
}
