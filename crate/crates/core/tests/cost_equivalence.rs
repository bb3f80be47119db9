//! Randomized equivalence of analytic costs and empirical MAC counts.

use csl_core::cost::{conv_macs, csl_macs, network_cost, ConvShapeQuery};
use csl_core::graph::{build_csl_module, CslModuleSpec, CslVariant, GraphBuilder};
use csl_core::ops::{self, Padding};
use csl_core::tensor::{MacCounter, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn conv2d_counter_equals_closed_form_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..60 {
        let k = *[1usize, 3, 5].get(rng.random_range(0..3)).unwrap();
        let stride = rng.random_range(1..=2usize);
        let padding = if rng.random::<bool>() {
            Padding::Same
        } else {
            Padding::Valid
        };
        let c = rng.random_range(1..=12usize);
        let n = rng.random_range(1..=12usize);
        let h = rng.random_range(k..=14usize);
        let w = rng.random_range(k..=14usize);
        let x = Tensor::<f32>::filled(Shape::new(1, c, h, w), 0.5);
        let weights = Tensor::<f32>::filled(Shape::new(n, c, k, k), 0.1);
        let mut counter = MacCounter::new();
        let out = ops::conv2d(&x, &weights, stride, padding, &mut counter).unwrap();
        let q = ConvShapeQuery::new(out.shape().height, out.shape().width, c, n, k, 1.0);
        assert_eq!(
            counter.total(),
            conv_macs(&q),
            "k={k} stride={stride} {padding:?} c={c} n={n} {h}x{w}"
        );
    }
}

#[test]
fn depthwise_and_pointwise_counters_match_their_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let k = *[1usize, 3, 5].get(rng.random_range(0..3)).unwrap();
        let c = rng.random_range(1..=10usize);
        let mult = rng.random_range(1..=3usize);
        let h = rng.random_range(k..=12usize);
        let w = rng.random_range(k..=12usize);
        let x = Tensor::<f32>::filled(Shape::new(1, c, h, w), 1.0);
        let dw = Tensor::<f32>::filled(Shape::new(c * mult, 1, k, k), 1.0);
        let mut counter = MacCounter::new();
        let out = ops::depthwise_conv2d(&x, &dw, 1, Padding::Same, &mut counter).unwrap();
        let expected = (out.shape().height * out.shape().width * c * mult * k * k) as u64;
        assert_eq!(counter.total(), expected);

        let n = rng.random_range(1..=10usize);
        let pw = Tensor::<f32>::filled(Shape::new(n, c, 1, 1), 1.0);
        let mut counter = MacCounter::new();
        ops::pointwise_conv2d(&x, &pw, &mut counter).unwrap();
        assert_eq!(counter.total(), (h * w * c * n) as u64);
    }
}

#[test]
fn plain_csl_block_counter_equals_decomposition_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for trial in 0..50 {
        let t = rng.random_range(2..=3usize);
        let k = *[1usize, 3, 5].get(rng.random_range(0..3)).unwrap();
        let c = rng.random_range(1..=10usize);
        let n = 2 * rng.random_range(1..=8usize);
        let h = rng.random_range(k.max(2)..=12usize);
        let w = rng.random_range(k.max(2)..=12usize);
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, c, h, w), trial);
        let input = b.input();
        let spec = CslModuleSpec {
            in_ch: c,
            out_ch: n,
            expansion: t,
            kernel: k,
            variant: CslVariant::Plain,
            se_reduction: 4,
        };
        let out = build_csl_module(&mut b, input, &spec, "m").unwrap();
        let net = b.finish(vec![out]);
        let x = Tensor::<f32>::filled(Shape::new(1, c, h, w), 0.3);
        let mut counter = MacCounter::new();
        net.forward(&x, &mut counter).unwrap();
        let analytic = csl_macs(&ConvShapeQuery::new(h, w, c, n, k, t as f64)).unwrap();
        assert_eq!(
            counter.total(),
            analytic.total,
            "t={t} k={k} c={c} n={n} {h}x{w}"
        );
    }
}

#[test]
fn per_layer_analytic_cost_matches_counter_for_all_variants() {
    for variant in [
        CslVariant::Plain,
        CslVariant::Attention,
        CslVariant::Downsample,
    ] {
        let mut b = GraphBuilder::<f32>::new(Shape::new(1, 8, 12, 12), 5);
        let input = b.input();
        let spec = CslModuleSpec {
            in_ch: 8,
            out_ch: 8,
            expansion: 3,
            kernel: 3,
            variant,
            se_reduction: 4,
        };
        let out = build_csl_module(&mut b, input, &spec, "m").unwrap();
        let net = b.finish(vec![out]);
        let mut report = network_cost(&net);
        let x = Tensor::<f32>::filled(Shape::new(1, 8, 12, 12), 0.2);
        let mut counter = MacCounter::new();
        net.forward(&x, &mut counter).unwrap();
        report.attach_empirical(&counter);
        assert!(
            report.mismatches().is_empty(),
            "{variant:?}: {:?}",
            report
                .mismatches()
                .iter()
                .map(|r| (r.name.clone(), r.analytic_macs, r.empirical_macs))
                .collect::<Vec<_>>()
        );
        assert_eq!(report.total_empirical(), Some(report.total_analytic()));
    }
}

#[test]
fn batch_scaling_multiplies_counts() {
    let x1 = Tensor::<f32>::filled(Shape::new(1, 4, 8, 8), 1.0);
    let x3 = Tensor::<f32>::filled(Shape::new(3, 4, 8, 8), 1.0);
    let w = Tensor::<f32>::filled(Shape::new(6, 4, 3, 3), 1.0);
    let mut c1 = MacCounter::new();
    let mut c3 = MacCounter::new();
    ops::conv2d(&x1, &w, 1, Padding::Same, &mut c1).unwrap();
    ops::conv2d(&x3, &w, 1, Padding::Same, &mut c3).unwrap();
    assert_eq!(c3.total(), 3 * c1.total());
}
