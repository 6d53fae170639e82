use efoent_core::autodiff::{Tape, Tensor, Var};
use efoent_core::model::*;
use efoent_core::parse_efo;
use efoent_core::rng::Rng;
use efoent_core::syntax::TokenKind;
use rand::{Rng as _, SeedableRng};

fn config(pe: PeKind, d: usize, heads: usize, layers: usize, entities: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(entities, 3);
    cfg.d_model = d;
    cfg.n_heads = heads;
    cfg.n_layers = layers;
    cfg.pe_kind = pe;
    cfg.dropout = 0.0;
    cfg
}

/// Fills every parameter with uniform noise so no gradient is trivially zero.
fn randomize(model: &mut Model<f64>, seed: u64) {
    let mut rng = Rng::seed_from_u64(seed);
    for id in 0..model.params.len() {
        for v in model.params.get_mut(id).data.iter_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Five-point central differences on up to `per_param` entries of each parameter: the
/// largest analytic gradients plus a spread of others.
fn check_params(
    model: &mut Model<f64>,
    per_param: usize,
    loss: &dyn Fn(&Model<f64>) -> (f64, Vec<(usize, Tensor<f64>)>),
) -> f64 {
    let (_, grads) = loss(model);
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for id in 0..model.params.len() {
        let len = model.params.get(id).len();
        let analytic = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.data.clone())
            .unwrap_or_else(|| vec![0.0; len]);
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()));
        let mut picks: Vec<usize> = order.iter().take(per_param / 2).copied().collect();
        let stride = (len / (per_param / 2).max(1)).max(1);
        picks.extend((0..len).step_by(stride).take(per_param / 2));
        for k in picks {
            let orig = model.params.get(id).data[k];
            let mut at = |dx: f64| {
                model.params.get_mut(id).data[k] = orig + dx;
                loss(model).0
            };
            let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            model.params.get_mut(id).data[k] = orig;
            let e = rel_err(analytic[k], numeric);
            assert!(
                e < 1e-4,
                "{}[{k}]: analytic {} numeric {numeric}",
                model.params.name(id),
                analytic[k]
            );
            worst = worst.max(e);
        }
    }
    worst
}

const QUERIES: [&str; 3] = [
    "r:0(s:1,f)",
    "(r:1(s:2,e1))&(r:2(e1,f))",
    "((r:0(s:3,f))&(!(r:1(s:4,f))))|(r:2(s:5,f))",
];

fn batch_loss(model: &Model<f64>) -> (f64, Vec<(usize, Tensor<f64>)>) {
    let encoded: Vec<EncodedQuery> = QUERIES
        .iter()
        .map(|q| model.prepare(&parse_efo(q).unwrap()).unwrap())
        .collect();
    let refs: Vec<&EncodedQuery> = encoded.iter().collect();
    let mut tape = Tape::new();
    let logits = model.logits(&mut tape, &refs, &mut Forward::eval()).unwrap();
    let answers = vec![vec![2], vec![0, 7], vec![4, 5, 9]];
    let loss = tape.smoothed_cross_entropy(logits, &answers, 0.1).unwrap();
    let value = tape.value(loss).data[0];
    (value, tape.backward(loss).into_params(&model.params))
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for pe in [PeKind::Absolute, PeKind::Relative, PeKind::LogiRpe] {
        let mut model = Model::new(config(pe, 16, 1, 2, 10), &mut Rng::seed_from_u64(3)).unwrap();
        randomize(&mut model, 4);
        let worst = check_params(&mut model, 24, &batch_loss);
        println!("{pe}: worst relative error {worst:.2e}");
    }
}

#[test]
fn masked_multi_head_gradients_match_finite_differences() {
    let mut cfg = config(PeKind::LogiRpe, 8, 2, 1, 10);
    cfg.use_adjacency_mask = true;
    cfg.pooling = Pooling::Mean;
    let mut model = Model::new(cfg, &mut Rng::seed_from_u64(5)).unwrap();
    randomize(&mut model, 6);
    check_params(&mut model, 16, &batch_loss);
}

/// One LogiRPE attention block on a fixed input; loss is a weighted sum.
#[test]
fn single_layer_gradients_match_finite_differences() {
    let mut model = Model::new(config(PeKind::LogiRpe, 8, 2, 1, 10), &mut Rng::seed_from_u64(7)).unwrap();
    randomize(&mut model, 8);
    let kinds = [
        TokenKind::Parenthesis,
        TokenKind::Relation,
        TokenKind::Entity,
        TokenKind::Conjunction,
        TokenKind::Entity,
        TokenKind::Negation,
    ];
    let mut rng = Rng::seed_from_u64(9);
    let x = Tensor::uniform(&[6, 8], 1.0, &mut rng);
    let w = Tensor::uniform(&[6, 8], 1.0, &mut rng);
    let loss = |m: &Model<f64>| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = m
            .block(&mut tape, &m.layers[0], xv, &kinds, None, &mut Forward::eval())
            .unwrap();
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv).unwrap();
        let l = tape.sum_all(p);
        let value = tape.value(l).data[0];
        (value, tape.backward(l).into_params(&m.params))
    };
    check_params(&mut model, 40, &loss);
}

fn zero_banks(model: &mut Model<f64>) {
    for layer in model.layers.clone() {
        for id in [layer.bank_k, layer.bank_v].into_iter().flatten() {
            model.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Copies same-named tensors from `src`.
fn copy_shared(dst: &mut Model<f64>, src: &Model<f64>) {
    for id in 0..dst.params.len() {
        if let Some(s) = src.params.id(dst.params.name(id)) {
            if src.params.get(s).shape == dst.params.get(id).shape {
                *dst.params.get_mut(id) = src.params.get(s).clone();
            }
        }
    }
}

fn block_output(model: &Model<f64>, x: &Tensor<f64>, kinds: &[TokenKind]) -> Vec<u64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = model
        .block(&mut tape, &model.layers[0], xv, kinds, None, &mut Forward::eval())
        .unwrap();
    tape.value(y).data.iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_banks_collapse_to_plain_attention() {
    let mut logi = Model::new(config(PeKind::LogiRpe, 16, 4, 1, 10), &mut Rng::seed_from_u64(1)).unwrap();
    randomize(&mut logi, 2);
    zero_banks(&mut logi);
    let mut rel = Model::new(config(PeKind::Relative, 16, 4, 1, 10), &mut Rng::seed_from_u64(1)).unwrap();
    copy_shared(&mut rel, &logi);
    zero_banks(&mut rel);
    let mut plain = Model::new(config(PeKind::Absolute, 16, 4, 1, 10), &mut Rng::seed_from_u64(1)).unwrap();
    copy_shared(&mut plain, &logi);

    let x = Tensor::uniform(&[7, 16], 1.0, &mut Rng::seed_from_u64(11));
    let kinds = [TokenKind::Entity, TokenKind::Relation, TokenKind::Parenthesis, TokenKind::Entity, TokenKind::Disjunction, TokenKind::Negation, TokenKind::Conjunction];
    let a = block_output(&logi, &x, &kinds);
    assert_eq!(a, block_output(&rel, &x, &kinds));
    assert_eq!(a, block_output(&plain, &x, &kinds));

    // and the banks do matter once they are non-zero
    randomize(&mut logi, 12);
    copy_shared(&mut plain, &logi);
    assert_ne!(block_output(&logi, &x, &kinds), block_output(&plain, &x, &kinds));
}

fn logits_of(model: &Model<f64>, x: &Tensor<f64>, kinds: &[TokenKind]) -> Vec<Tensor<f64>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (logits, _, _) = model.attention_logits(&mut tape, &model.layers[0], xv, kinds).unwrap();
    logits.into_iter().map(|v| tape.value(v).clone()).collect()
}

/// Places `core` rows at `offset` inside a `len`-row buffer of noise.
fn embed(core: &Tensor<f64>, core_kinds: &[TokenKind], offset: usize, len: usize, seed: u64) -> (Tensor<f64>, Vec<TokenKind>) {
    let mut rng = Rng::seed_from_u64(seed);
    let d = core.cols();
    let mut x = Tensor::uniform(&[len, d], 1.0, &mut rng);
    let mut kinds: Vec<TokenKind> = (0..len).map(|_| TokenKind::ALL[rng.gen_range(0..6)]).collect();
    for r in 0..core.rows() {
        x.row_mut(offset + r).copy_from_slice(core.row(r));
        kinds[offset + r] = core_kinds[r];
    }
    (x, kinds)
}

#[test]
fn relative_logits_depend_only_on_offsets() {
    let core = Tensor::uniform(&[5, 16], 1.0, &mut Rng::seed_from_u64(21));
    let core_kinds = [TokenKind::Parenthesis, TokenKind::Relation, TokenKind::Entity, TokenKind::Entity, TokenKind::Parenthesis];
    for pe in [PeKind::Relative, PeKind::LogiRpe, PeKind::Absolute] {
        let mut model = Model::new(config(pe, 16, 2, 1, 10), &mut Rng::seed_from_u64(22)).unwrap();
        randomize(&mut model, 23);
        let view = |offset: usize, seed: u64| {
            let (mut x, kinds) = embed(&core, &core_kinds, offset, 12, seed);
            if pe == PeKind::Absolute {
                let pe = sinusoid::<f64>(12, 16);
                x.add_assign(&pe);
            }
            let heads = logits_of(&model, &x, &kinds);
            heads
                .iter()
                .map(|e| {
                    let mut sub = Vec::new();
                    for i in 0..5 {
                        for j in 0..5 {
                            sub.push(e.at(offset + i, offset + j).to_bits());
                        }
                    }
                    sub
                })
                .collect::<Vec<_>>()
        };
        let same = view(1, 31) == view(6, 32);
        assert_eq!(same, pe != PeKind::Absolute, "{pe}");
    }
}

#[test]
fn bank_lookup_semantics() {
    use TokenKind::*;
    let model = Model::<f64>::new(config(PeKind::LogiRpe, 8, 2, 1, 10), &mut Rng::seed_from_u64(1)).unwrap();
    let len = model.config.max_seq_len;
    // distance is unsigned, type order is not
    let kinds = [Entity, Parenthesis, Parenthesis, Relation, Parenthesis];
    let rows = model.bias_rows(&kinds);
    let n = kinds.len();
    assert_eq!(rows[n + 3], lookup_bias(Parenthesis, Relation, 2, len));
    assert_eq!(rows[3 * n + 1], lookup_bias(Relation, Parenthesis, 2, len));
    assert_ne!(rows[n + 3], rows[3 * n + 1]);
    assert_eq!(rows[3], lookup_bias(Entity, Relation, 3, len));
    assert_eq!(lookup_bias(Entity, Relation, 4, len), lookup_bias(Entity, Relation, 4, len));
    assert_eq!(lookup_bias(Entity, Relation, len + 9, len), lookup_bias(Entity, Relation, len - 1, len));
    assert!(lookup_bias(Negation, Negation, len - 1, len) < 36 * len);
    // fresh banks are zero
    let bank = model.params.get(model.layers[0].bank_k.unwrap());
    assert!(bank.row(rows[3]).iter().all(|&v| v == 0.0));
    assert_eq!(bank.rows(), 36 * len);
}

#[test]
fn every_template_fits_the_encoder() {
    use efoent_core::syntax::{templates, Grounding};
    let model = Model::<f64>::new(config(PeKind::LogiRpe, 8, 2, 1, 10), &mut Rng::seed_from_u64(1)).unwrap();
    for t in templates::all() {
        let ast = t.template();
        let mut g = Grounding::default();
        for s in ast.relation_slots() {
            g.relations.insert(s, s % 3);
        }
        for s in ast.constant_slots() {
            g.constants.insert(s, s % 10);
        }
        let q = model.prepare(&ast.ground(&g).unwrap()).unwrap();
        let mut tape = Tape::new();
        let h = model.encode(&mut tape, &q, &mut Forward::eval()).unwrap();
        assert_eq!(tape.shape(h), &[q.len(), 8], "{}", t.name);
    }
}

#[test]
fn pooling_modes_and_locality() {
    let rows = Tensor::from_f64(&[4, 3], &[1.0, -2.0, 0.5, 9.0, 9.0, 9.0, 1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
    let run = |mode, pos: &[usize], h: &Tensor<f64>| {
        let mut tape = Tape::new();
        let x = tape.input(h.clone());
        let p = free_variable_pool(&mut tape, x, pos, mode).unwrap();
        let l = tape.sum_all(p);
        let g = tape.backward(l);
        (tape.value(p).data.clone(), g.of(x).unwrap().data.clone())
    };
    for mode in [Pooling::Sum, Pooling::Mean, Pooling::Max] {
        assert_eq!(run(mode, &[3], &rows).0, vec![3.0, 0.0, -1.0]);
    }
    assert_eq!(run(Pooling::Sum, &[0, 2], &rows).0, vec![2.0, -4.0, 1.0]);
    assert_eq!(run(Pooling::Mean, &[0, 2], &rows).0, vec![1.0, -2.0, 0.5]);
    assert_eq!(run(Pooling::Max, &[0, 2], &rows).0, vec![1.0, -2.0, 0.5]);
    for mode in [Pooling::Sum, Pooling::Mean, Pooling::Max] {
        let (out, grad) = run(mode, &[0, 3], &rows);
        assert!(grad[3..6].iter().chain(&grad[6..9]).all(|&g| g == 0.0));
        let mut bumped = rows.clone();
        bumped.data[4] += 0.7;
        bumped.data[7] -= 0.3;
        assert_eq!(run(mode, &[0, 3], &bumped).0, out);
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.input(rows.clone());
    assert!(matches!(free_variable_pool(&mut tape, x, &[], Pooling::Sum), Err(ModelError::EmptyPool)));
}

#[test]
fn scoring_by_dot_product() {
    let mut model = Model::<f64>::new(config(PeKind::Absolute, 16, 1, 1, 10), &mut Rng::seed_from_u64(1)).unwrap();
    let table = model.params.get_mut(model.embedding);
    for e in 0..10 {
        let row = table.row_mut(e);
        row.iter_mut().for_each(|v| *v = 0.0);
        row[e] = 1.0;
    }
    let score = |m: &Model<f64>, q: Vec<f64>| {
        let mut tape = Tape::new();
        let qv: Var = tape.constant(Tensor::new(&[1, 16], q).unwrap());
        let s = m.score(&mut tape, qv).unwrap();
        tape.value(s).data.clone()
    };
    let mut q = vec![0.0; 16];
    q[6] = 1.0;
    let s = score(&model, q);
    let best = (0..10).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    assert_eq!(best, 6);
    let s = score(&model, vec![0.0; 16]);
    assert!(s.iter().all(|&v| v == s[0]));
}
