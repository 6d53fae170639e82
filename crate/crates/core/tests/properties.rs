use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use efoent_core::autodiff::{Tape, Tensor};
use efoent_core::eval::query_mrr;
use efoent_core::kg::{build_splits, Direction, KnowledgeGraph, Triple, Vocab};
use efoent_core::oracle::{answer_set, answer_set_naive, answer_split, check_entailment, AnswerSplit, DEFAULT_NAIVE_BUDGET};
use efoent_core::qgraph::build_query_graph;
use efoent_core::rng::Rng;
use efoent_core::sampler::{build_dataset, Profile, Purpose};
use efoent_core::syntax::{
    conjunction_groups, convert_to_lisp, parse_efo, parse_lisp, permute_atoms, serialize_efo, templates, tokenize,
    Formula, Grounding, QueryAst, Term,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

fn random_triples(entities: u32, relations: u32, density: f64, rng: &mut Rng) -> Vec<Triple> {
    let total = (entities * entities * relations) as f64;
    let edges = ((total * density) as usize).max(1);
    (0..edges)
        .map(|_| Triple::new(rng.gen_range(0..entities), rng.gen_range(0..relations), rng.gen_range(0..entities)))
        .collect()
}

fn graph(entities: u32, relations: u32, triples: Vec<Triple>) -> KnowledgeGraph {
    KnowledgeGraph::new(
        Arc::new(Vocab::numbered(entities as usize)),
        Arc::new(Vocab::numbered(relations as usize)),
        triples,
    )
    .unwrap()
}

/// Small random graph: entity count, relation count and edge density drawn
/// from the ranges used for oracle checks.
fn small_graph() -> impl Strategy<Value = (KnowledgeGraph, u64)> {
    (2u32..=30, 1u32..=5, 0.05f64..0.3, any::<u64>()).prop_map(|(ne, nr, density, seed)| {
        let mut rng = Rng::seed_from_u64(seed);
        let triples = random_triples(ne, nr, density, &mut rng);
        (graph(ne, nr, triples), seed)
    })
}

fn ground(template: &QueryAst, kg: &KnowledgeGraph, rng: &mut Rng) -> QueryAst {
    let mut g = Grounding::default();
    for s in template.relation_slots() {
        g.relations.insert(s, rng.gen_range(0..kg.num_relations() as u32));
    }
    for s in template.constant_slots() {
        g.constants.insert(s, rng.gen_range(0..kg.num_entities() as u32));
    }
    template.ground(&g).unwrap()
}

/// Grounds constants on existing edges so answer sets are often non-empty.
fn ground_on_edges(template: &QueryAst, kg: &KnowledgeGraph, rng: &mut Rng) -> QueryAst {
    let triples = kg.triples();
    let mut g = Grounding::default();
    for s in template.relation_slots() {
        let t = triples[rng.gen_range(0..triples.len())];
        g.relations.insert(s, t.relation);
    }
    for s in template.constant_slots() {
        let t = triples[rng.gen_range(0..triples.len())];
        g.constants.insert(s, t.head);
    }
    template.ground(&g).unwrap()
}

fn template_index() -> impl Strategy<Value = usize> {
    0..templates::all().len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn splits_are_nested_and_pure(ne in 8u32..40, nr in 1u32..5, seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let triples = random_triples(ne, nr, 0.1, &mut rng);
        let build = || build_splits(
            Arc::new(Vocab::numbered(ne as usize)),
            Arc::new(Vocab::numbered(nr as usize)),
            &triples,
            [0.7, 0.15, 0.15],
            seed,
        ).unwrap();
        let s = build();
        for &t in s.train.triples() { prop_assert!(s.valid.has_triple(t)); }
        for &t in s.valid.triples() { prop_assert!(s.test.has_triple(t)); }
        let again = build();
        prop_assert_eq!(s.train.triples(), again.train.triples());
        prop_assert_eq!(s.valid.triples(), again.valid.triples());
        prop_assert_eq!(s.test.triples(), again.test.triples());
    }

    #[test]
    fn neighbor_indexes_agree_with_membership((kg, _) in small_graph()) {
        for h in 0..kg.num_entities() as u32 {
            for r in 0..kg.num_relations() as u32 {
                let fwd: BTreeSet<u32> = kg.neighbors(h, r, Direction::Forward).unwrap().iter().copied().collect();
                let bwd: BTreeSet<u32> = kg.neighbors(h, r, Direction::Backward).unwrap().iter().copied().collect();
                for t in 0..kg.num_entities() as u32 {
                    prop_assert_eq!(fwd.contains(&t), kg.has_triple(Triple::new(h, r, t)));
                    prop_assert_eq!(bwd.contains(&t), kg.has_triple(Triple::new(t, r, h)));
                }
            }
        }
    }

    #[test]
    fn grounded_queries_round_trip(idx in template_index(), (kg, seed) in small_graph()) {
        let template = templates::all()[idx].template();
        let q = ground(&template, &kg, &mut Rng::seed_from_u64(seed));
        let text = serialize_efo(&q);
        prop_assert_eq!(parse_efo(&text).unwrap(), q);
    }

    #[test]
    fn oracle_matches_naive_reference(idx in template_index(), (kg, seed) in small_graph()) {
        let template = templates::all()[idx].template();
        let mut rng = Rng::seed_from_u64(seed ^ 1);
        for _ in 0..4 {
            let q = ground_on_edges(&template, &kg, &mut rng);
            let fast = answer_set(&kg, &q).unwrap();
            let slow = answer_set_naive(&kg, &q, DEFAULT_NAIVE_BUDGET).unwrap();
            prop_assert_eq!(fast, slow, "{}", serialize_efo(&q));
        }
    }

    #[test]
    fn answers_are_exactly_the_entailed_entities(idx in template_index(), (kg, seed) in small_graph()) {
        let template = templates::all()[idx].template();
        let q = ground_on_edges(&template, &kg, &mut Rng::seed_from_u64(seed));
        let answers: BTreeSet<u32> = answer_set(&kg, &q).unwrap().into_iter().collect();
        for a in 0..kg.num_entities() as u32 {
            prop_assert_eq!(answers.contains(&a), check_entailment(&kg, &q, a).unwrap());
        }
    }

    #[test]
    fn answers_are_the_union_over_conjunctions(idx in template_index(), (kg, seed) in small_graph()) {
        let template = templates::all()[idx].template();
        let q = ground_on_edges(&template, &kg, &mut Rng::seed_from_u64(seed));
        let mut union = BTreeSet::new();
        for conj in q.dnf() {
            let part = QueryAst::new(Formula::And(conj.into_iter().map(Formula::Atom).collect())).unwrap();
            union.extend(answer_set(&kg, &part).unwrap());
        }
        prop_assert_eq!(answer_set(&kg, &q).unwrap(), union.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn adding_edges_never_removes_answers_without_negation(
        idx in template_index(),
        (kg, seed) in small_graph(),
        extra in 1usize..40,
    ) {
        let t = &templates::all()[idx];
        prop_assume!(!t.features.neg);
        let q = ground_on_edges(&t.template(), &kg, &mut Rng::seed_from_u64(seed));
        let mut rng = Rng::seed_from_u64(seed ^ 2);
        let (ne, nr) = (kg.num_entities() as u32, kg.num_relations() as u32);
        let mut more = kg.triples().to_vec();
        more.extend((0..extra).map(|_| Triple::new(rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne))));
        let bigger = graph(ne, nr, more);
        let small: BTreeSet<u32> = answer_set(&kg, &q).unwrap().into_iter().collect();
        let large: BTreeSet<u32> = answer_set(&bigger, &q).unwrap().into_iter().collect();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn atom_permutations_keep_answers(idx in template_index(), (kg, seed) in small_graph()) {
        let template = templates::all()[idx].template();
        let mut rng = Rng::seed_from_u64(seed ^ 3);
        let q = ground_on_edges(&template, &kg, &mut rng);
        let want = answer_set(&kg, &q).unwrap();
        for _ in 0..5 {
            let perms: Vec<Vec<usize>> = conjunction_groups(&q)
                .into_iter()
                .map(|n| {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            let permuted = permute_atoms(&q, &perms).unwrap();
            prop_assert_eq!(answer_set(&kg, &permuted).unwrap(), want.clone());
        }
    }

    #[test]
    fn lisp_conversion_is_sound(idx in template_index(), (kg, seed) in small_graph()) {
        let template = templates::all()[idx].template();
        prop_assume!(convert_to_lisp(&template).is_ok());
        let q = ground_on_edges(&template, &kg, &mut Rng::seed_from_u64(seed));
        let back = parse_lisp(&convert_to_lisp(&q).unwrap()).unwrap();
        prop_assert_eq!(answer_set(&kg, &back).unwrap(), answer_set(&kg, &q).unwrap());
    }

    #[test]
    fn answer_partitions_are_disjoint_and_cover(idx in template_index(), ne in 5u32..30, nr in 1u32..5, seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let triples = random_triples(ne, nr, 0.15, &mut rng);
        let splits = build_splits(
            Arc::new(Vocab::numbered(ne as usize)),
            Arc::new(Vocab::numbered(nr as usize)),
            &triples,
            [0.6, 0.2, 0.2],
            seed,
        ).unwrap();
        let q = ground_on_edges(&templates::all()[idx].template(), &splits.test, &mut rng);
        let AnswerSplit { a_id, a_ood } = answer_split(&splits, &q).unwrap();
        let id: BTreeSet<u32> = a_id.iter().copied().collect();
        let ood: BTreeSet<u32> = a_ood.iter().copied().collect();
        prop_assert!(id.is_disjoint(&ood));
        let full: BTreeSet<u32> = answer_set(&splits.test, &q).unwrap().into_iter().collect();
        let valid: BTreeSet<u32> = answer_set(&splits.valid, &q).unwrap().into_iter().collect();
        prop_assert_eq!(id, answer_set(&splits.train, &q).unwrap().into_iter().collect::<BTreeSet<_>>());
        prop_assert_eq!(ood, full.difference(&valid).copied().collect::<BTreeSet<_>>());
    }

    #[test]
    fn masked_softmax_rows(values in prop::collection::vec(-20.0f64..20.0, 12), keep in prop::collection::vec(any::<bool>(), 12)) {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[3, 4], values).unwrap());
        let m = tape.masked_fill(x, &keep).unwrap();
        let s = tape.softmax(m);
        let w = tape.constant(Tensor::from_f64(&[3, 4], &[1.0, -2.0, 3.0, 0.5, 2.0, 1.0, -1.0, 4.0, 0.3, 0.2, 0.1, -0.4]).unwrap());
        let p = tape.mul(s, w).unwrap();
        let l = tape.sum_all(p);
        let g = tape.backward(l);
        let probs = &tape.value(s).data;
        let grad = &g.of(x).unwrap().data;
        for r in 0..3 {
            let row_keep = &keep[r * 4..r * 4 + 4];
            let total: f64 = probs[r * 4..r * 4 + 4].iter().sum();
            if row_keep.iter().any(|&k| k) {
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
            for c in 0..4 {
                if !row_keep[c] {
                    prop_assert_eq!(probs[r * 4 + c], 0.0);
                    prop_assert_eq!(grad[r * 4 + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn ranking_ignores_a_common_shift(
        scores in prop::collection::vec(-5.0f64..5.0, 20),
        shift in -100.0f64..100.0,
        answers in prop::collection::btree_set(0u32..20, 1..6),
    ) {
        let answers: Vec<u32> = answers.into_iter().collect();
        let (a_id, a_ood) = answers.split_at(answers.len() / 2);
        let split = AnswerSplit { a_id: a_id.to_vec(), a_ood: a_ood.to_vec() };
        let base = query_mrr(&scores, &split).unwrap();
        // integer-valued scores keep the shift exact
        let rounded: Vec<f64> = scores.iter().map(|s| s.round()).collect();
        let shifted: Vec<f64> = rounded.iter().map(|s| s + shift.round()).collect();
        prop_assert_eq!(query_mrr(&rounded, &split).unwrap(), query_mrr(&shifted, &split).unwrap());
        for v in [base.id, base.ood].into_iter().flatten() {
            prop_assert!(v > 0.0 && v <= 1.0);
        }
    }
}

#[test]
fn query_graph_node_counts() {
    for t in templates::all().iter().filter(|t| !t.template().is_disjunctive()) {
        let q = t.template();
        let g = build_query_graph(&q);
        let atoms = q.atoms();
        let constants: BTreeSet<_> = atoms
            .iter()
            .flat_map(|a| [a.head, a.tail])
            .filter(|t| matches!(t, Term::Const(_)))
            .collect();
        let negated = atoms.iter().filter(|a| a.negated).count();
        let want = constants.len() + q.existentials().len() + 1 + atoms.len() + negated;
        assert_eq!(g.nodes.len(), want, "{}", t.name);
    }
}

#[test]
fn query_graphs_tell_templates_apart() {
    let graphs: Vec<(&str, String)> = templates::all()
        .iter()
        .map(|t| (t.name, canonical_dump(&t.template())))
        .collect();
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            assert_ne!(graphs[i].1, graphs[j].1, "{} and {}", graphs[i].0, graphs[j].0);
        }
    }
}

/// Labelled-graph invariant under renaming: the sorted multiset of
/// colours after iterated neighbourhood refinement, where nodes carrying
/// the same symbol count as neighbours.
fn canonical_dump(q: &QueryAst) -> String {
    let g = build_query_graph(q);
    let n = g.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &g.edges {
        adj[a].push((b, ">"));
        adj[b].push((a, "<"));
    }
    for a in 0..n {
        for b in 0..n {
            if a != b && g.nodes[a].label() == g.nodes[b].label() {
                adj[a].push((b, "="));
            }
        }
    }
    let hash = |s: &str| {
        let mut h = DefaultHasher::new();
        s.hash(&mut h);
        h.finish()
    };
    let mut colour: Vec<u64> = g.nodes.iter().map(|k| hash(k.kind_name())).collect();
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                let mut around: Vec<String> = adj[v]
                    .iter()
                    .map(|&(u, how)| format!("{how}{}", colour[u]))
                    .collect();
                around.sort();
                hash(&format!("{}[{}]", colour[v], around.join(",")))
            })
            .collect();
        colour = next;
    }
    colour.sort();
    format!("{colour:?}")
}

#[test]
fn token_kinds_cover_the_corpus() {
    let mut kinds = BTreeSet::new();
    for t in templates::all() {
        kinds.extend(tokenize(&t.template()).into_iter().map(|tok| tok.kind));
    }
    assert_eq!(kinds.len(), 6);
}

#[test]
fn sampled_datasets_recompute_and_respect_type_shift() {
    let mut rng = Rng::seed_from_u64(77);
    let triples = random_triples(40, 4, 0.06, &mut rng);
    let splits = build_splits(Arc::new(Vocab::numbered(40)), Arc::new(Vocab::numbered(4)), &triples, [0.8, 0.1, 0.1], 5).unwrap();
    let profile = Profile::custom("check", 6, 3);
    let ds = build_dataset(&splits, &profile, 9).unwrap();
    let unseen: BTreeSet<&str> = templates::unseen().map(|t| t.name).collect();
    assert!(ds.train.iter().all(|s| !unseen.contains(s.type_name.as_str())));
    for p in Purpose::ALL {
        for s in ds.part(p) {
            let fresh = efoent_core::sampler::purpose_split(&splits, &s.query, p).unwrap();
            assert_eq!(fresh, s.split);
        }
    }
    assert_eq!(ds, build_dataset(&splits, &profile, 9).unwrap());
}
