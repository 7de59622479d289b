mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use wfplus::catops::{colimit, pullback, Diagram};
use wfplus::depflow::{build_flow, check_acyclic, derived_relations, is_acyclic, Acyclicity};
use wfplus::derivation::{check_step, evaluate_claims};
use wfplus::dsl::{self, format_instance, format_metamodel};
use wfplus::exec::{combined, run};
use wfplus::graph::{check_morphism, compose, GraphMorphism};
use wfplus::metamodel::{compose_chain, conforms, derive_association, restrict, ConstraintKind, End, Metamodel};
use wfplus::process::{apply, ApplyContext};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn composition_is_associative_with_identities(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = random_graph(&mut r, 5, 6, true);
        let h = random_morphism_into(&mut r, &d, 5, 6, "c");
        let g = random_morphism_into(&mut r, &h.source, 5, 6, "b");
        let f = random_morphism_into(&mut r, &g.source, 5, 6, "a");
        let left = compose(&compose(&f, &g).unwrap(), &h).unwrap();
        let right = compose(&f, &compose(&g, &h).unwrap()).unwrap();
        prop_assert_eq!(&left, &right);
        prop_assert!(check_morphism(&left).is_ok());
        prop_assert_eq!(compose(&GraphMorphism::identity(&f.source), &f).unwrap(), f.clone());
        prop_assert_eq!(compose(&f, &GraphMorphism::identity(&f.target)).unwrap(), f);
    }

    #[test]
    fn colimit_ignores_arrow_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let z = random_graph(&mut r, 5, 6, true);
        let arrows: Vec<GraphMorphism> = (0..3).map(|k| random_morphism_into(&mut r, &z, 4, 4, &format!("s{k}."))).collect();
        let build = |order: &[usize]| {
            let mut d = Diagram::new();
            d.object("Z", z.clone());
            for k in order {
                d.object(format!("S{k}"), arrows[*k].source.clone());
            }
            for k in order {
                d.arrow(format!("S{k}"), "Z", arrows[*k].clone());
            }
            colimit(&d).unwrap()
        };
        let mut order = vec![0, 1, 2];
        let (g1, m1) = build(&order);
        order.shuffle(&mut r);
        let (g2, m2) = build(&order);
        prop_assert_eq!(g1, g2);
        prop_assert_eq!(m1, m2);
    }

    #[test]
    fn pullback_mediates_every_cone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = random_graph(&mut r, 4, 5, true);
        let f = random_morphism_into(&mut r, &c, 4, 5, "a");
        let g = random_morphism_into(&mut r, &c, 4, 5, "b");
        let (apex, p1, p2) = pullback(&f, &g).unwrap();
        // a cone through the apex, then forget the apex and rebuild the mediating map
        let x = random_morphism_into(&mut r, &apex, 4, 5, "x");
        let (a, b) = (compose(&x, &p1).unwrap(), compose(&x, &p2).unwrap());
        prop_assert_eq!(compose(&a, &f).unwrap(), compose(&b, &g).unwrap());
        let by_pair: BTreeMap<(&str, &str), &str> =
            apex.nodes().map(|(n, _)| ((p1.map_node(n).unwrap(), p2.map_node(n).unwrap()), n)).collect();
        prop_assert_eq!(by_pair.len(), apex.node_count());
        for (n, _) in x.source.nodes() {
            let m = by_pair[&(a.map_node(n).unwrap(), b.map_node(n).unwrap())];
            prop_assert_eq!(Some(m), x.map_node(n));
        }
    }

    #[test]
    fn ps2ps_and_wp2wp_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        if let Ok(f) = build_flow(random_flow(&mut r)) {
            let (ps, wp) = derived_relations(&f);
            prop_assert_eq!(is_acyclic(&ps), is_acyclic(&wp));
            if let Acyclicity::Strata(s) = check_acyclic(&f) {
                let depth: BTreeMap<&String, usize> =
                    s.iter().enumerate().flat_map(|(k, l)| l.iter().map(move |p| (p, k))).collect();
                for (a, b) in &ps {
                    prop_assert!(depth[a] < depth[b]);
                }
            }
        }
    }

    #[test]
    fn restrict_along_identity_is_identity(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 6, 8, true);
        let i = random_instance(&mut r, &g, 3);
        prop_assert_eq!(restrict(&i, &GraphMorphism::identity(&g)).unwrap(), i);
    }
}

/// A metamodel over `g` whose only constraints are lower-bounded multiplicities.
fn lower_bounds(r: &mut rand_chacha::ChaCha8Rng, g: &wfplus::graph::Graph) -> Metamodel {
    let mut m = Metamodel::new(g.clone());
    for (k, (e, _)) in g.edges().enumerate() {
        let end = if r.gen_bool(0.5) { End::Src } else { End::Tgt };
        let c = ConstraintKind::Multiplicity { edge: e.to_string(), end, lower: r.gen_range(1..=2), upper: None };
        m.add_constraint(&format!("L{k}"), c).unwrap();
    }
    m
}

proptest! {
    #![proptest_config(config(96))]

    #[test]
    fn conformance_is_typing_and_verdicts(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 5, 6, true);
        let m = lower_bounds(&mut r, &g);
        let i = random_instance(&mut r, &g, 3);
        let c = conforms(&i, &m);
        prop_assert_eq!(c.conforms(), c.typing_ok() && c.verdicts.iter().all(|(_, v)| v.holds()));
    }

    #[test]
    fn deleting_a_link_never_repairs_a_lower_bound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 5, 6, false);
        let m = lower_bounds(&mut r, &g);
        let mut i = random_instance(&mut r, &g, 3);
        let links: Vec<String> = i.data().edges().map(|(e, _)| e.to_string()).collect();
        if let Some(l) = links.choose(&mut r) {
            let before = conforms(&i, &m).conforms();
            i.remove_link(l);
            prop_assert!(before || !conforms(&i, &m).conforms());
        }
    }

    #[test]
    fn chain_composition_matches_nested_join(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = control();
        let cs = &m.metamodels["CS"];
        let i = random_instance(&mut r, &cs.graph, 3);
        let chain = vec!["Containment".to_string(), "grProtects".to_string()];
        let mut join = BTreeSet::new();
        for (_, a) in i.links_of("Containment") {
            for (_, b) in i.links_of("grProtects") {
                if a.tgt == b.src {
                    join.insert((a.src.clone(), b.tgt.clone()));
                }
            }
        }
        prop_assert_eq!(&compose_chain(&i, &chain), &join);
        let d = derive_association(cs, &i, "Hazard2PS").unwrap();
        prop_assert_eq!(d.pairs.into_iter().collect::<BTreeSet<_>>(), join);
    }

    #[test]
    fn apply_is_deterministic_and_outputs_conform(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = control();
        for p in m.processes.values() {
            let s = &p.schema;
            let inputs: Vec<_> = s
                .inputs
                .iter()
                .map(|port| {
                    let raw = random_instance(&mut r, &port.metamodel.graph, 3);
                    repair(&mut r, raw, &port.metamodel, &|_| Vec::new())
                })
                .collect();
            let verdicts = inputs.iter().flat_map(|i| i.data().nodes().map(|(n, _)| (n.to_string(), true)).collect::<Vec<_>>()).collect();
            let ctx = ApplyContext::with_verdicts(verdicts);
            let (a, b) = (apply(s, &inputs, &ctx), apply(s, &inputs, &ctx));
            match (a, b) {
                (Ok((ia, oa)), Ok((ib, ob))) => {
                    prop_assert_eq!(ia.to_string(), ib.to_string());
                    prop_assert_eq!(oa.to_string(), ob.to_string());
                    prop_assert!(oa.check_typing().is_ok());
                }
                (Err(ea), Err(eb)) => prop_assert_eq!(ea, eb),
                _ => prop_assert!(false, "apply is not deterministic"),
            }
        }
    }

    #[test]
    fn premise_order_does_not_change_verdicts(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = load(&["control/cs.wfp", "control/plant.wfp", "control/safety.wfp"]);
        let t = &m.derivations["Safety"];
        let k = r.gen_range(0..t.steps.len());
        if t.steps[k].kind == wfplus::derivation::StepKind::MultiplicityComposition {
            // the composition steps take a few seconds each; covered elsewhere
            return Ok(());
        }
        let mut shuffled = t.clone();
        shuffled.steps[k].premises.shuffle(&mut r);
        let a = check_step(t, k, 2).unwrap();
        let b = check_step(&shuffled, k, 2).unwrap();
        prop_assert_eq!(a.status.label(), b.status.label());
    }

    #[test]
    fn top_claim_tracks_conformance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = load(&["control/cs.wfp", "control/plant.wfp", "control/safety.wfp", "control/expected.wfp"]);
        let t = &m.derivations["Safety"];
        let cs = &m.metamodels["CS"];
        let mut i = m.instances["Safety.run"].instance.clone();
        // knock out a few random elements of the conforming run output
        for _ in 0..r.gen_range(0..3) {
            let els: Vec<String> = i.data().nodes().map(|(n, _)| n.to_string()).chain(i.data().edges().map(|(e, _)| e.to_string())).collect();
            let x = els.choose(&mut r).unwrap().clone();
            if !i.remove_link(&x) {
                i.remove_node(&x);
            }
        }
        prop_assert_eq!(evaluate_claims(t, &i)["SS"], conforms(&i, cs).conforms());
    }

    #[test]
    fn generated_documents_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 6, 8, true);
        let mut m = lower_bounds(&mut r, &g);
        m.constraints.retain(|_, _| r.gen_bool(0.5));
        let i = random_instance(&mut r, &g, 3);
        let text = format!("{}\n{}", format_metamodel("G", &m), format_instance("I", "G", &i));
        let d = dsl::parse(&text, "gen.wfp").unwrap();
        let s = dsl::serialize(&d);
        let d2 = dsl::parse(&s, "gen.wfp").unwrap();
        prop_assert_eq!(&d2, &d.canonical());
        prop_assert_eq!(dsl::serialize(&d2), s.clone());
        let model = dsl::load(&[("gen.wfp".to_string(), s)]).unwrap();
        prop_assert_eq!(&model.metamodels["G"], &m);
        prop_assert_eq!(&model.instances["I"].instance, &i);
    }

    #[test]
    fn diagnostics_point_at_their_token(seed in any::<u64>()) {
        let mut r = rng(seed);
        let files = ["control/cs.wfp", "control/plant.wfp", "control/review.wfp", "topology/topology.wfp"];
        let (name, text) = fixture(files.choose(&mut r).unwrap());
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let k = r.gen_range(0..lines.len());
        let junk = ["@", "clas", "->", "\"open", "1x", "Nowhere", "* *", "= ="].choose(&mut r).unwrap();
        let words: Vec<&str> = lines[k].split(' ').collect();
        let at = r.gen_range(0..=words.len());
        let mut w: Vec<&str> = words.clone();
        w.insert(at, junk);
        lines[k] = w.join(" ");
        let broken = lines.join("\n");
        if let Err(ds) = dsl::load(&[(name, broken.clone())]) {
            let src: Vec<&str> = broken.lines().collect();
            for d in ds {
                prop_assert!(d.line >= 1 && d.line <= src.len().max(1));
                let line = src.get(d.line - 1).copied().unwrap_or("");
                let rest = line.chars().skip(d.col - 1).collect::<String>();
                prop_assert!(rest.starts_with(&d.token), "{}:{} `{}` does not start with `{}`", d.line, d.col, rest, d.token);
            }
        }
    }
}

#[test]
fn run_is_deterministic_and_reads_back_writes() {
    let m = control();
    let f = &m.flows["Safety"];
    let def = f.def.as_ref().unwrap();
    let ctx = ApplyContext::with_verdicts(control_verdicts());
    let a = run(def, &f.initial, &ctx).unwrap();
    let b = run(def, &f.initial, &ctx).unwrap();
    assert_eq!(a.trace_log(), b.trace_log());
    assert_eq!(combined(def, &a).unwrap().to_string(), combined(def, &b).unwrap().to_string());
    // each writer's output is recovered from the product it wrote to
    for t in &a.trace {
        for (wp, wire) in def.flow.outputs_of(&t.process) {
            let back = restrict(&a.products[wp], &def.out_maps[wire]).unwrap();
            assert_eq!(back.to_string(), t.output.to_string(), "{} -> {wp}", t.process);
        }
    }
}
