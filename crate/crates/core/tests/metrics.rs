use proptest::prelude::*;
use vgcm::eval::{compute_chain_metrics, compute_shd, BaselineKind, BaselinePredictor, MetricsReport, VideoPrediction};
use vgcm::types::CausalGraph;

fn graph(n: usize, bits: u64) -> CausalGraph {
    let mut g = CausalGraph::empty(n);
    let mut b = 0;
    for j in 1..n {
        for i in 0..j {
            if bits >> b & 1 == 1 {
                g.insert(i, j);
            }
            b += 1;
        }
    }
    g
}

/// Pairwise membership comparison, independent of the edge-set representation.
fn brute_shd(a: &CausalGraph, b: &CausalGraph) -> usize {
    let n = a.n_events();
    let mut d = 0;
    for i in 0..n {
        for j in i + 1..n {
            d += usize::from(a.contains(i, j) != b.contains(i, j));
        }
    }
    d
}

fn report(preds: &[Vec<bool>], truths: &[Vec<bool>]) -> MetricsReport {
    let ids: Vec<String> = (0..preds.len()).map(|i| format!("v{i:03}")).collect();
    compute_chain_metrics(preds.iter().zip(truths).zip(&ids).map(|((p, t), id)| VideoPrediction {
        video_id: id,
        chain_pred: p.clone(),
        chain_truth: t,
        graph_pred: None,
        graph_truth: None,
    }))
    .unwrap()
}

fn chains() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<Vec<bool>>)> {
    proptest::collection::vec((3usize..=10).prop_flat_map(|k| (proptest::collection::vec(any::<bool>(), k), proptest::collection::vec(any::<bool>(), k))), 1..20)
        .prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn shd_matches_pairwise_count(n in 2usize..=11, a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (graph(n, a), graph(n, b));
        prop_assert_eq!(compute_shd(&x, &y).unwrap(), brute_shd(&x, &y));
        prop_assert_eq!(compute_shd(&x, &y).unwrap(), compute_shd(&y, &x).unwrap());
    }

    #[test]
    fn complete_prediction_shd_is_the_non_edge_count(n in 2usize..=11, bits in any::<u64>()) {
        let truth = graph(n, bits);
        prop_assert_eq!(compute_shd(&CausalGraph::complete(n), &truth).unwrap(), n * (n - 1) / 2 - truth.edge_count());
    }

    #[test]
    fn accuracy_decomposes_over_classes((preds, truths) in chains()) {
        let r = report(&preds, &truths);
        let t = r.n_relations();
        let p = r.n_pos;
        prop_assert_eq!(r.correct(), r.correct_pos + r.correct_neg);
        prop_assert_eq!(t, r.n_pos + r.n_neg);
        if let (Some(acc), Some(pos), Some(neg)) = (r.acc(), r.pos(), r.neg()) {
            let lhs = acc * t as f64;
            let rhs = pos * p as f64 + neg * (t - p) as f64;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn complement_swaps_pos_and_neg((preds, truths) in chains()) {
        let r = report(&preds, &truths);
        let flip = |v: &[Vec<bool>]| v.iter().map(|c| c.iter().map(|b| !b).collect()).collect::<Vec<Vec<bool>>>();
        let f = report(&flip(&preds), &flip(&truths));
        prop_assert_eq!(r.pos(), f.neg());
        prop_assert_eq!(r.neg(), f.pos());
        prop_assert_eq!(r.acc(), f.acc());
    }

    #[test]
    fn constant_baselines(truths in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 3..10), 1..20)) {
        let positives: usize = truths.iter().flatten().filter(|&&b| b).count();
        let total: usize = truths.iter().map(Vec::len).sum();
        let all = |v: bool| truths.iter().map(|t| vec![v; t.len()]).collect::<Vec<_>>();
        let yes = report(&all(true), &truths);
        let no = report(&all(false), &truths);
        prop_assert_eq!(yes.correct(), positives);
        prop_assert_eq!(no.correct(), total - positives);
        if positives > 0 {
            prop_assert_eq!(yes.pos(), Some(100.0));
            prop_assert_eq!(no.pos(), Some(0.0));
        }
        if positives < total {
            prop_assert_eq!(yes.neg(), Some(0.0));
            prop_assert_eq!(no.neg(), Some(100.0));
        }
    }
}

#[test]
fn seeded_random_baseline_is_reproducible() {
    let seq = vgcm::types::EventSequence { video_id: "x".into(), events: Vec::new(), chain_labels: Vec::new(), complete_labels: None };
    let b = BaselinePredictor::new(BaselineKind::SeededRandom { p: 0.5, seed: 3 });
    assert_eq!(b.predict_chain(&seq), b.predict_chain(&seq));
    assert_eq!("all_noncausal".parse::<BaselineKind>().unwrap(), BaselineKind::AllNonCausal);
    assert!("sometimes".parse::<BaselineKind>().is_err());
}
