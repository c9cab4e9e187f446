use proptest::collection::vec;
use proptest::prelude::*;
use tpg_dnn::diagnostics::tiny_setup;
use tpg_dnn::eval::{auc, f1, regression_metrics};
use tpg_dnn::loss::{self, TaskLosses, PROB_MAX, PROB_MIN};
use tpg_dnn::model::{total_probability_value, GruFusion, MultiTaskModel, PurchaseHead};
use tpg_dnn::nn::{attention, Init, ParamStore, ResidualBlock, SequenceEncoder};
use tpg_dnn::tensor::{Graph, Tensor};

fn tensor(shape: &[usize]) -> impl Strategy<Value = Tensor> {
    let shape = shape.to_vec();
    let n: usize = shape.iter().product();
    vec(-3.0..3.0f64, n).prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=6, 1usize..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in dims().prop_flat_map(|(r, c)| tensor(&[r, c]))) {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let s = g.softmax(xv);
        let width = x.shape()[1];
        for row in g.value(s).data().chunks(width) {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_are_distributions(
        (q, k) in (1usize..=5, 1usize..=6, 1usize..=4)
            .prop_flat_map(|(t, tk, d)| (tensor(&[1, t, d]), tensor(&[1, tk, d])))
    ) {
        // With v = I each output row is the weight row itself.
        let tk = k.shape()[1];
        let mut eye = Tensor::zeros(&[1, tk, tk]);
        for i in 0..tk {
            eye.data_mut()[i * tk + i] = 1.0;
        }
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(eye));
        let w = attention(&mut g, qv, kv, vv).unwrap();
        for row in g.value(w).data().chunks(tk) {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_residual_is_the_identity(x in tensor(&[3, 4]), seed in 0u64..1000) {
        let mut store = ParamStore::new();
        let block = ResidualBlock::new(&mut store, &mut Init::new(seed), "res", 4, 8);
        for id in [block.expand.weight, block.project.weight, block.project.bias] {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::zeros(&shape);
        }
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = block.forward(&mut g, &p, xv).unwrap();
        prop_assert_eq!(g.value(out), &x);
    }

    #[test]
    fn encoder_without_positions_ignores_row_order(
        seq in (1usize..=6).prop_flat_map(|t| tensor(&[1, t, 3])),
        rotation in 0usize..6,
        seed in 0u64..1000,
    ) {
        let mut store = ParamStore::new();
        let enc = SequenceEncoder::new(&mut store, &mut Init::new(seed), "enc", 3, 4, 2, false).unwrap();
        let steps = seq.shape()[1];
        let rows: Vec<&[f64]> = seq.data().chunks(3).collect();
        let mut permuted: Vec<f64> = Vec::new();
        for i in 0..steps {
            permuted.extend_from_slice(rows[(steps - 1 - i + rotation) % steps]);
        }
        let permuted = Tensor::new(vec![1, steps, 3], permuted).unwrap();
        let pooled = |x: Tensor| {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            let xv = g.constant(x);
            let out = enc.forward(&mut g, &p, xv).unwrap();
            g.value(out).data().to_vec()
        };
        for (a, b) in pooled(seq).iter().zip(pooled(permuted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_output_is_bounded(
        cond in tensor(&[2, 4]),
        pur in tensor(&[2, 4]),
        seed in 0u64..1000,
    ) {
        let mut store = ParamStore::new();
        let fusion = GruFusion::new(&mut store, &mut Init::new(seed), "fusion", 4);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let (c, q) = (g.constant(cond.clone()), g.constant(pur));
        let out = fusion.forward(&mut g, &p, c, q).unwrap();
        for (o, h) in g.value(out).data().iter().zip(cond.data()) {
            prop_assert!(o.abs() <= h.abs().max(1.0));
        }
    }

    #[test]
    fn total_probability_is_symmetric(
        m in prop::array::uniform3(0.0..=1.0f64),
        q in prop::array::uniform3(0.0..=1.0f64),
    ) {
        let base = total_probability_value(m, q).unwrap();
        for perm in [[1, 0, 2], [2, 1, 0], [0, 2, 1], [1, 2, 0]] {
            let value = total_probability_value(perm.map(|i| m[i]), perm.map(|i| q[i])).unwrap();
            prop_assert!((value - base).abs() < 1e-15);
        }
        prop_assert!((0.0..=3.0).contains(&base));
    }

    #[test]
    fn forward_probabilities_are_clamped(seed in 0u64..200) {
        let (model, batch) = tiny_setup(seed, PurchaseHead::TotalProbability).unwrap();
        for out in model.predict(&batch).unwrap() {
            let q = out.conditionals.unwrap();
            for p in [out.p_browse, out.p_collect, out.p_cart, out.p_purchase].into_iter().chain(q) {
                prop_assert!((PROB_MIN..=PROB_MAX).contains(&p));
            }
        }
    }

    #[test]
    fn uncertainty_total_matches_its_breakdown_and_grows_with_each_loss(
        raw in prop::array::uniform5(0.0..5.0f64),
        s in prop::array::uniform5(-2.0..2.0f64),
        task in 0usize..5,
        bump in 0.01..1.0f64,
    ) {
        let total = |raw: [f64; 5]| {
            let mut g = Graph::new();
            let losses = TaskLosses {
                classification: [0, 1, 2, 3].map(|i| g.constant(Tensor::scalar(raw[i]))),
                regression: g.constant(Tensor::scalar(raw[4])),
            };
            let sv = g.constant(Tensor::vector(&s));
            let (t, breakdown) = loss::uncertainty_combine(&mut g, &losses, sv).unwrap();
            (g.value(t).item(), breakdown)
        };
        let (before, breakdown) = total(raw);
        prop_assert!((before - breakdown.recombined()).abs() < 1e-12);
        let mut bumped = raw;
        bumped[task] += bump;
        prop_assert!(total(bumped).0 > before);
    }

    #[test]
    fn auc_matches_pair_counting(
        cases in vec((0u8..12, any::<bool>()), 2..=50)
    ) {
        let scores: Vec<f64> = cases.iter().map(|(s, _)| f64::from(*s) / 12.0).collect();
        let labels: Vec<u8> = cases.iter().map(|(_, l)| u8::from(*l)).collect();
        let positives = labels.iter().filter(|l| **l == 1).count();
        prop_assume!(positives > 0 && positives < labels.len());
        let mut wins = 0.0;
        for (i, _) in labels.iter().enumerate().filter(|(_, l)| **l == 1) {
            for (j, _) in labels.iter().enumerate().filter(|(_, l)| **l == 0) {
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        let expected = wins / (positives * (labels.len() - positives)) as f64;
        let got = auc(&scores, &labels).unwrap();
        prop_assert!((got - expected).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1(&scores, &labels, 0.5).unwrap()));
    }

    #[test]
    fn regression_metrics_scale_as_stated(
        pairs in vec((0.0..10.0f64, 0u32..8), 1..40),
        c in 0.01..100.0f64,
    ) {
        let preds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let targets: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        prop_assume!(targets.iter().any(|t| *t > 0.0));
        let base = regression_metrics(&preds, &targets).unwrap();
        prop_assert!(base.mae >= 0.0 && base.wmape >= 0.0);
        let scaled = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let m = regression_metrics(&scaled(&preds), &scaled(&targets)).unwrap();
        prop_assert!((m.mae - c * base.mae).abs() <= 1e-9 * (1.0 + c * base.mae));
        prop_assert!((m.wmape - base.wmape).abs() <= 1e-9 * (1.0 + base.wmape));
        if targets.iter().all(|t| *t > 0.0) {
            prop_assert!((m.mape - base.mape).abs() <= 1e-9 * (1.0 + base.mape));
        }
    }
}

#[test]
fn forward_replay_is_bit_identical() {
    let (model, batch) = tiny_setup(9, PurchaseHead::TotalProbability).unwrap();
    let first = model.predict(&batch).unwrap();
    for _ in 0..3 {
        assert_eq!(model.predict(&batch).unwrap(), first);
    }
}
