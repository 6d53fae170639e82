use efoent_core::autodiff::{Reduce, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Build<'a> = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var + 'a;

/// Compares analytic gradients of every input against central differences.
fn check(shapes: &[&[usize]], seed: u64, f: &Build<'_>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| Tensor::uniform(s, 1.0, &mut rng))
        .collect();
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    let h = 1e-5;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .of(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&x.shape));
        for k in 0..x.len() {
            let mut plus = inputs.clone();
            plus[i].data[k] += h;
            let mut minus = inputs.clone();
            minus[i].data[k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data[k];
            let tol = 1e-5 * (1.0 + numeric.abs().max(a.abs()));
            assert!(
                (a - numeric).abs() < tol,
                "input {i} element {k}: analytic {a} numeric {numeric}"
            );
        }
    }
}

fn weighted(t: &mut Tape<'_, f64>, v: Var) -> Var {
    // Fixed non-uniform weights so the reduction does not hide errors.
    let n = t.value(v).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + (i as f64 * 0.37).sin()).collect();
    let w = t.constant(Tensor::new(&t.value(v).shape.clone(), w).unwrap());
    let p = t.mul(v, w).unwrap();
    t.sum_all(p)
}

#[test]
fn matmul_and_transposes() {
    check(&[&[3, 4], &[4, 2]], 1, &|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted(t, y)
    });
    check(&[&[3, 4], &[5, 4]], 2, &|t, v| {
        let y = t.matmul_bt(v[0], v[1]).unwrap();
        weighted(t, y)
    });
    check(&[&[3, 4]], 3, &|t, v| {
        let y = t.transpose(v[0]);
        weighted(t, y)
    });
}

#[test]
fn elementwise() {
    check(&[&[2, 3], &[2, 3], &[3]], 4, &|t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let b = t.add_row(a, v[2]).unwrap();
        let c = t.mul(b, v[0]).unwrap();
        let d = t.scale(c, -1.7);
        let e = t.gelu(d);
        weighted(t, e)
    });
}

#[test]
fn softmax_with_mask() {
    check(&[&[3, 4]], 5, &|t, v| {
        let keep = [
            true, false, true, true, true, true, true, true, false, true, false, true,
        ];
        let m = t.masked_fill(v[0], &keep).unwrap();
        let s = t.softmax(m);
        weighted(t, s)
    });
}

#[test]
fn layer_norm() {
    check(&[&[3, 5], &[5], &[5]], 6, &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted(t, y)
    });
}

#[test]
fn indexing_and_concat() {
    check(&[&[4, 3], &[2, 3]], 7, &|t, v| {
        let g = t.gather_rows(v[0], &[3, 0, 3, 1]).unwrap();
        let n = t.narrow_rows(v[0], 1, 2).unwrap();
        let s = t.slice_cols(g, 1, 2).unwrap();
        let r = t.concat_rows(&[n, v[1]]).unwrap();
        let c = t.concat_cols(&[s, r]).unwrap();
        weighted(t, c)
    });
}

#[test]
fn reductions() {
    for how in [Reduce::Sum, Reduce::Mean, Reduce::Max] {
        check(&[&[4, 3]], 8, &|t, v| {
            let y = t.reduce_rows(v[0], how).unwrap();
            weighted(t, y)
        });
    }
}

#[test]
fn pairwise_bank_ops() {
    check(&[&[3, 2], &[9, 2]], 9, &|t, v| {
        let y = t.row_dot(v[0], v[1]).unwrap();
        weighted(t, y)
    });
    check(&[&[3, 3], &[9, 2]], 10, &|t, v| {
        let y = t.row_weighted_sum(v[0], v[1]).unwrap();
        weighted(t, y)
    });
}

#[test]
fn smoothed_cross_entropy() {
    for eps in [0.0, 0.1] {
        check(&[&[3, 5]], 11, &|t, v| {
            t.smoothed_cross_entropy(v[0], &[vec![1], vec![0, 4], vec![2, 3, 4]], eps)
                .unwrap()
        });
    }
}

#[test]
fn dropout_uses_its_mask() {
    check(&[&[4, 4]], 12, &|t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout(v[0], 0.4, &mut rng);
        weighted(t, y)
    });
}

#[test]
fn shared_subexpression_accumulates() {
    check(&[&[2, 2]], 13, &|t, v| {
        let a = t.matmul(v[0], v[0]).unwrap();
        let b = t.add(a, v[0]).unwrap();
        weighted(t, b)
    });
}
