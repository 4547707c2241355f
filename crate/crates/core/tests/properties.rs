use ldnn::conv::{maxpool_forward, Activation, ConvLayer, ConvStack, Maps, Stage};
use ldnn::init::{initialize_from_centroids, kmeans};
use ldnn::model::{disjunction, sigmoid};
use ldnn::seed::rng_from;
use ldnn::train::epoch_order;
use ldnn::{dnf_classify, DiscreteDnf, LdnnModel, LossKind};
use proptest::prelude::*;

fn model_strategy(max_n: usize, max_groups: usize, max_per: usize, r: f64) -> impl Strategy<Value = (LdnnModel, Vec<f64>)> {
    (1..=max_n, 1..=max_groups, 1..=max_per).prop_flat_map(move |(n, groups, per)| {
        (
            prop::collection::vec(-r..r, n * groups * per),
            prop::collection::vec(-r..r, groups * per),
            prop::collection::vec(-3.0..3.0f64, n),
        )
            .prop_map(move |(w, b, x)| (LdnnModel::from_parts(n, groups, per, w, b).unwrap(), x))
    })
}

fn permuted(model: &LdnnModel, groups: &[usize], within: &[Vec<usize>]) -> LdnnModel {
    let mut out = model.clone();
    for (i, &src_i) in groups.iter().enumerate() {
        for (j, &src_j) in within[i].iter().enumerate() {
            out.discriminant_mut(i, j).copy_from_slice(model.discriminant(src_i, src_j));
            out.set_bias(i, j, model.bias(src_i, src_j));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn output_is_a_probability((model, x) in model_strategy(6, 5, 5, 3.0)) {
        let f = model.output(&x).unwrap();
        prop_assert!(f > 0.0 && f < 1.0, "f = {f}");
    }

    #[test]
    fn output_is_finite_for_extreme_parameters((model, x) in model_strategy(4, 4, 4, 1e6)) {
        let t = model.forward(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.f));
        for kind in [LossKind::Quadratic, LossKind::CrossEntropy] {
            let g = model.backward(&t, &x, 1.0, kind).unwrap();
            prop_assert!(g.is_finite());
        }
    }

    #[test]
    fn disjunction_is_monotone_in_each_sigmoid(
        sigma in prop::collection::vec(0.0..1.0f64, 12),
        unit in 0usize..12,
        bump in 0.0..1.0f64,
    ) {
        // 3 groups of 4 sigmoids each.
        let eval = |s: &[f64]| {
            let g: Vec<f64> = s.chunks(4).map(|c| c.iter().product()).collect();
            disjunction(&g)
        };
        let base = eval(&sigma);
        let mut raised = sigma.clone();
        raised[unit] += (1.0 - raised[unit]) * bump;
        prop_assert!(eval(&raised) >= base - 1e-15);
    }

    #[test]
    fn one_by_one_is_logistic_regression(
        w in prop::collection::vec(-4.0..4.0f64, 1..6),
        b in -4.0..4.0f64,
        seed in any::<u64>(),
    ) {
        let n = w.len();
        let mut rng = rng_from(seed);
        let x: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let model = LdnnModel::from_parts(n, 1, 1, w.clone(), vec![b]).unwrap();
        let z: f64 = w.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b;
        let expected = 1.0 / (1.0 + (-z).exp());
        prop_assert!((model.output(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn permuting_groups_or_discriminants_keeps_output(
        (model, x) in model_strategy(4, 4, 4, 2.0),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut rng = rng_from(seed);
        let mut groups: Vec<usize> = (0..model.groups()).collect();
        groups.shuffle(&mut rng);
        let within: Vec<Vec<usize>> = (0..model.groups())
            .map(|_| {
                let mut p: Vec<usize> = (0..model.per_group()).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let other = permuted(&model, &groups, &within);
        let (a, b) = (model.output(&x).unwrap(), other.output(&x).unwrap());
        prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON, "{a} vs {b}");
    }

    #[test]
    fn perfect_fit_has_zero_quadratic_gradient((model, x) in model_strategy(4, 3, 3, 2.0)) {
        let t = model.forward(&x).unwrap();
        let g = model.backward(&t, &x, t.f, LossKind::Quadratic).unwrap();
        prop_assert!(g.weights.iter().chain(&g.biases).all(|&v| v == 0.0));
        let dx = model.input_sensitivity(&t, t.f, LossKind::Quadratic).unwrap();
        prop_assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_is_symmetric(t in -600.0..600.0f64) {
        prop_assert!((sigmoid(t) + sigmoid(-t) - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn epoch_order_is_a_permutation(len in 0usize..300, seed in any::<u64>()) {
        let mut order = epoch_order(len, &mut rng_from(seed));
        order.sort_unstable();
        prop_assert_eq!(order, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn centroid_init_normals_and_midpoints(
        pos in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..4),
        neg in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..4),
    ) {
        let model = initialize_from_centroids(&pos, &neg, 0).unwrap();
        for (i, p) in pos.iter().enumerate() {
            for (j, q) in neg.iter().enumerate() {
                let w = model.discriminant(i, j);
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-12);
                let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
                let z = model.preactivation(i * model.per_group() + j, &mid);
                prop_assert!((sigmoid(z) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_assigns_every_point_to_its_nearest_centroid(
        points in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 2), 4..40),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let c = kmeans(&points, k, 3, seed).unwrap();
        for (p, &a) in points.iter().zip(&c.assignment) {
            let d = |m: &Vec<f64>| m.iter().zip(p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            let own = d(&c.centroids[a]);
            prop_assert!(c.centroids.iter().all(|m| own <= d(m) + 1e-9));
        }
    }

    #[test]
    fn saturated_network_matches_discrete_dnf(
        (model, x) in model_strategy(3, 3, 3, 2.0),
    ) {
        let dnf = DiscreteDnf::new(model.clone());
        prop_assume!(dnf.margin(&x) > 0.05);
        let soft = model.scaled(1e4);
        prop_assert_eq!(soft.predict(&x).unwrap(), dnf_classify(&dnf, &x).unwrap());
    }

    #[test]
    fn stack_shape_is_symbolic(
        h in 6usize..16,
        w in 6usize..16,
        k in 1usize..4,
        maps in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = rng_from(seed);
        let layer = ConvLayer::random(1, maps, k, k, Activation::Relu, &mut rng).unwrap();
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut stages = vec![Stage::Conv(layer)];
        if oh % 2 == 0 && ow % 2 == 0 {
            stages.push(Stage::Pool { window: 2 });
        }
        let stack = ConvStack::new((1, h, w), stages).unwrap();
        let image: Vec<f64> = (0..h * w).map(|v| (v as f64 * 0.37).sin()).collect();
        prop_assert_eq!(stack.output_len().unwrap(), stack.features(&image).unwrap().len());
    }

    #[test]
    fn pooling_takes_window_maxima(data in prop::collection::vec(-1.0..1.0f64, 36)) {
        let maps = Maps::from_vec(1, 6, 6, data.clone()).unwrap();
        let (p, idx) = maxpool_forward(&maps, 3).unwrap();
        for (o, &at) in idx.iter().enumerate() {
            prop_assert_eq!(p.data[o], data[at]);
            let (r0, c0) = (o / 2 * 3, o % 2 * 3);
            for r in r0..r0 + 3 {
                for c in c0..c0 + 3 {
                    prop_assert!(data[r * 6 + c] <= p.data[o]);
                }
            }
        }
    }
}
