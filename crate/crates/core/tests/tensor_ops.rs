use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgcm::tensor::{Graph, Mat, ParamId, ParamStore, Var};

fn random_store(shapes: &[(usize, usize)], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            store.add(format!("p{i}"), Mat::from_vec(r, c, data))
        })
        .collect();
    (store, ids)
}

/// Compares backprop against central differences for every scalar parameter.
fn check<F>(shapes: &[(usize, usize)], seed: u64, f: F)
where
    F: for<'g> Fn(&'g Graph<'g>, &[Var<'g>]) -> Var<'g>,
{
    let (mut store, ids) = random_store(shapes, seed);
    let eval = |store: &ParamStore| {
        let g = Graph::new(store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        f(&g, &vars).item()
    };
    let analytic = {
        let g = Graph::new(&store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = f(&g, &vars);
        g.backward(out)
    };
    let h = 1e-6;
    for &id in &ids {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&store);
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |m| m.data()[i]);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            assert!(err < 1e-5, "param {} elem {i}: analytic {a} numeric {numeric}", store.name(id));
        }
    }
}

/// A fixed random projection so every output element influences the loss differently.
fn probe<'g>(g: &'g Graph<'g>, x: Var<'g>) -> Var<'g> {
    let (r, c) = x.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    x.mul(g.constant(w)).sum()
}

#[test]
fn matmul_and_linear() {
    check(&[(3, 4), (4, 2), (1, 2)], 1, |g, v| probe(g, v[0].linear(v[1], v[2])));
}

#[test]
fn elementwise_ops() {
    check(&[(2, 3), (2, 3)], 2, |g, v| {
        let a = v[0].add(v[1]).gelu();
        let b = v[0].sub(v[1]).sigmoid();
        probe(g, a.mul(b).scale(1.7).add_scalar(0.3))
    });
}

#[test]
fn row_broadcast_ops() {
    check(&[(3, 4), (1, 4), (1, 4)], 3, |g, v| probe(g, v[0].add_row(v[1]).mul_row(v[2])));
}

#[test]
fn layer_norm() {
    check(&[(3, 5), (1, 5), (1, 5)], 4, |g, v| probe(g, v[0].layer_norm(v[1], v[2])));
}

#[test]
fn attention_unmasked_and_masked() {
    check(&[(3, 4), (5, 4), (5, 4)], 5, |g, v| probe(g, v[0].attention(v[1], v[2], 2, None)));
    let mask: Vec<bool> = (0..15).map(|i| i % 5 <= i / 5 + 1).collect();
    check(&[(3, 4), (5, 4), (5, 4)], 6, move |g, v| probe(g, v[0].attention(v[1], v[2], 2, Some(&mask))));
}

#[test]
fn fully_masked_query_row_is_zero() {
    let (store, ids) = random_store(&[(2, 4), (3, 4), (3, 4)], 7);
    let g = Graph::new(&store);
    let q = g.param(ids[0]);
    let mask = [false, false, false, true, false, true];
    let out = q.attention(g.param(ids[1]), g.param(ids[2]), 2, Some(&mask)).value();
    assert!(out.row(0).iter().all(|&x| x == 0.0));
    assert!(out.row(1).iter().any(|&x| x != 0.0));
}

#[test]
fn shape_ops() {
    check(&[(2, 3), (2, 2), (1, 3)], 8, |g, v| {
        let c = Var::concat_cols(&[v[0], v[1]]);
        let r = Var::concat_rows(&[v[0], v[2]]);
        let s = r.slice_rows(1, 2).add(c.slice_cols(1, 3));
        probe(g, s.transpose().reshape(1, 6))
    });
}

#[test]
fn gather_normalize_log_softmax() {
    check(&[(4, 3)], 9, |g, v| {
        let e = v[0].gather_rows(&[2, 0, 2]);
        probe(g, e.l2_normalize_rows().scale(3.0).log_softmax_rows())
    });
}

#[test]
fn bce_with_logits() {
    let t = Mat::from_vec(1, 4, vec![1.0, 0.0, 1.0, 0.0]);
    check(&[(1, 4)], 10, move |_, v| v[0].scale(4.0).bce_with_logits(&t));
}

#[test]
fn bce_matches_closed_form() {
    let mut store = ParamStore::new();
    let id = store.add("z", Mat::from_vec(1, 2, vec![0.0, 2.0]));
    let g = Graph::new(&store);
    let loss = g.param(id).bce_with_logits(&Mat::from_vec(1, 2, vec![1.0, 0.0])).item();
    let expected = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
    assert!((loss - expected).abs() < 1e-12);
}

#[test]
fn shared_parameter_gradients_accumulate() {
    check(&[(2, 2)], 11, |g, v| probe(g, v[0].matmul(v[0]).add(v[0])));
}
