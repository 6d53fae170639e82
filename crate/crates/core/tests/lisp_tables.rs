use std::sync::Arc;

use efoent_core::kg::{KnowledgeGraph, Triple, Vocab};
use efoent_core::rng::Rng;
use efoent_core::syntax::{convert_to_lisp, parse_lisp, serialize_efo, templates, Grounding, QueryAst};
use efoent_core::{answer_set, parse_efo};
use rand::{Rng as _, SeedableRng};

const FORMS: &str = include_str!("fixtures/lisp_forms.tsv");

fn forms() -> Vec<(&'static str, &'static str)> {
    FORMS
        .lines()
        .map(|l| l.split_once('\t').expect("name<TAB>form"))
        .collect()
}

fn random_graph(entities: u32, relations: u32, edges: usize, rng: &mut Rng) -> KnowledgeGraph {
    let triples: Vec<Triple> = (0..edges)
        .map(|_| Triple::new(rng.gen_range(0..entities), rng.gen_range(0..relations), rng.gen_range(0..entities)))
        .collect();
    KnowledgeGraph::new(
        Arc::new(Vocab::numbered(entities as usize)),
        Arc::new(Vocab::numbered(relations as usize)),
        triples,
    )
    .unwrap()
}

fn random_grounding(slots_of: &QueryAst, relations: u32, entities: u32, rng: &mut Rng) -> Grounding {
    let mut g = Grounding::default();
    for s in slots_of.relation_slots() {
        g.relations.insert(s, rng.gen_range(0..relations));
    }
    for s in slots_of.constant_slots() {
        g.constants.insert(s, rng.gen_range(0..entities));
    }
    g
}

#[test]
fn exactly_the_tabulated_types_convert() {
    let table = forms();
    assert_eq!(table.len(), 25);
    for t in templates::all() {
        let listed = table.iter().any(|(n, _)| *n == t.name);
        assert_eq!(convert_to_lisp(&t.template()).is_ok(), listed, "{}", t.name);
    }
    for t in templates::all().iter().filter(|t| t.features.cyc) {
        assert!(convert_to_lisp(&t.template()).is_err());
    }
}

#[test]
fn every_template_round_trips_verbatim() {
    for t in templates::all() {
        assert_eq!(serialize_efo(&parse_efo(t.formula).unwrap()), t.formula);
    }
}

/// The tabulated form, the converted form and the template all answer alike.
#[test]
fn lisp_forms_are_oracle_equal() {
    let mut rng = Rng::seed_from_u64(30);
    let graphs: Vec<KnowledgeGraph> = (0..3).map(|_| random_graph(30, 4, 120, &mut rng)).collect();
    for (name, form) in forms() {
        let template = templates::by_name(name).unwrap().template();
        let tabulated = parse_lisp(form).unwrap();
        let converted = parse_lisp(&convert_to_lisp(&template).unwrap()).unwrap();
        for kg in &graphs {
            for _ in 0..40 {
                let g = random_grounding(&template, 4, 30, &mut rng);
                let want = answer_set(kg, &template.ground(&g).unwrap()).unwrap();
                assert_eq!(answer_set(kg, &tabulated.ground(&g).unwrap()).unwrap(), want, "{name}");
                assert_eq!(answer_set(kg, &converted.ground(&g).unwrap()).unwrap(), want, "{name}");
            }
        }
    }
}

#[test]
fn most_conversions_match_the_table_verbatim() {
    let mut exact = 0;
    for (name, form) in forms() {
        let template = templates::by_name(name).unwrap().template();
        if convert_to_lisp(&template).unwrap() == form {
            exact += 1;
        }
    }
    assert_eq!(exact, 18);
}
