use cnpkit::autodiff::{kl_diag_gaussian, Tensor};
use cnpkit::model::{
    aggregate, checkpoint, classify, decode, encode_one, latent_posterior, latent_prior, predict, predict_gaussian,
    represent, sample_coherent, sample_coherent_from, Activation, AggregateState, Aggregator, CallCounts, CnpParams,
    ContextSet, HeadOutput, LabelledSet, LatentGaussian, MlpLayout, ModelConfig, TargetSet,
};
use cnpkit::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(config: ModelConfig) -> ModelConfig {
    ModelConfig {
        repr_dim: 12,
        hidden: 10,
        ..config
    }
}

fn random_context(rng: &mut ChaCha8Rng, n: usize, x_dim: usize, y_dim: usize) -> ContextSet {
    let x = (0..n * x_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n * y_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    ContextSet::new(
        Tensor::matrix(n, x_dim, x).unwrap(),
        Tensor::matrix(n, y_dim, y).unwrap(),
    )
    .unwrap()
}

fn random_targets(rng: &mut ChaCha8Rng, m: usize, x_dim: usize) -> TargetSet {
    let x = (0..m * x_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    TargetSet::new(Tensor::matrix(m, x_dim, x).unwrap()).unwrap()
}

// Plain nested-loop MLP over the raw parameter tensors.
fn loop_mlp(params: &CnpParams, layout: &MlpLayout, blocks: &[&[f64]], activation: Activation) -> Vec<f64> {
    let t = &params.tensors;
    let bias = t[layout.first_bias].data();
    let mut h = bias.to_vec();
    for (block, &wi) in blocks.iter().zip(&layout.first_weights) {
        let w = &t[wi];
        for (i, &xi) in block.iter().enumerate() {
            for j in 0..h.len() {
                h[j] += xi * w.get(i, j);
            }
        }
    }
    for &(wi, bi) in &layout.rest {
        let act: Vec<f64> = h
            .iter()
            .map(|&v| match activation {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
            })
            .collect();
        let (w, b) = (&t[wi], t[bi].data());
        h = (0..b.len())
            .map(|j| b[j] + act.iter().enumerate().map(|(i, a)| a * w.get(i, j)).sum::<f64>())
            .collect();
    }
    h
}

fn loop_softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

#[test]
fn encoder_matches_plain_loop_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for activation in [Activation::Relu, Activation::Tanh] {
        let config = ModelConfig {
            activation,
            ..small(ModelConfig::regression(2, 3))
        };
        let params = CnpParams::init(config, 4).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let xy: Vec<f64> = x.iter().chain(&y).copied().collect();
            let expected = loop_mlp(&params, &params.layout().encoder, &[&xy], activation);
            let got = encode_one(&params, &x, &y).unwrap();
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn decoder_matches_plain_loop_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = CnpParams::init(small(ModelConfig::regression(1, 2)), 9).unwrap();
    let r: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = [0.37];
    let out = loop_mlp(&params, &params.layout().decoder, &[&x, &r], Activation::Relu);
    let HeadOutput::Gaussian { mu, sigma } = decode(&params, &r, &x, None).unwrap() else {
        panic!("gaussian head expected");
    };
    for k in 0..2 {
        assert!((mu[k] - out[k]).abs() < 1e-12);
        assert!((sigma[k] - (loop_softplus(out[2 + k]) + 0.01)).abs() < 1e-12);
    }
}

#[test]
fn zero_weights_give_zero_embedding_and_floor_sigma() {
    for activation in [Activation::Relu, Activation::Tanh] {
        let config = ModelConfig {
            activation,
            ..small(ModelConfig::regression(1, 1))
        };
        let params = CnpParams::init(config, 1).unwrap().zeroed();
        let e = encode_one(&params, &[0.5], &[-1.5]).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        let HeadOutput::Gaussian { mu, sigma } = decode(&params, &e, &[0.3], None).unwrap() else {
            panic!()
        };
        assert_eq!(mu, vec![0.0]);
        assert!((sigma[0] - (2f64.ln() + 0.01)).abs() < 1e-15);
    }
}

#[test]
fn encode_is_deterministic_and_rejects_bad_dims() {
    let params = CnpParams::init(small(ModelConfig::regression(1, 1)), 2).unwrap();
    assert_eq!(
        encode_one(&params, &[0.1], &[0.2]).unwrap(),
        encode_one(&params, &[0.1], &[0.2]).unwrap()
    );
    assert!(encode_one(&params, &[0.1, 0.2], &[0.2]).is_err());
    assert!(decode(&params, &[0.0; 5], &[0.1], None).is_err());
}

#[test]
fn sigma_floor_holds_for_extreme_raw_scale() {
    let mut params = CnpParams::init(small(ModelConfig::regression(1, 1)), 3).unwrap();
    let last = params.layout().decoder.rest.last().unwrap().1;
    params.tensors[last].data_mut()[1] = -1e6;
    let HeadOutput::Gaussian { sigma, .. } = decode(&params, &[0.0; 12], &[0.0], None).unwrap() else {
        panic!()
    };
    assert!(sigma[0] >= 0.01);
    assert!((sigma[0] - 0.01).abs() < 1e-12);
}

#[test]
fn aggregate_of_copies_and_empty_list() {
    let v = vec![0.25, -3.0, 7.5];
    assert_eq!(aggregate(&vec![v.clone(); 7]).unwrap(), v);
    assert!(aggregate(&[]).is_err());
}

#[test]
fn streaming_mean_matches_batch_over_100_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vs: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..16).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let batch = aggregate(&vs).unwrap();
    let mut state = AggregateState::new(16);
    assert_eq!(state.mean(), None);
    for v in &vs {
        state.update(v).unwrap();
    }
    let left = vs[..40].iter().fold(AggregateState::new(16), |mut s, v| {
        s.update(v).unwrap();
        s
    });
    let right = vs[40..].iter().fold(AggregateState::new(16), |mut s, v| {
        s.update(v).unwrap();
        s
    });
    let merged = left.merge(&right).unwrap();
    assert_eq!(merged.count(), 100);
    for (stream, m) in [(state.mean().unwrap(), 0), (merged.mean().unwrap(), 1)] {
        for (a, b) in stream.iter().zip(&batch) {
            assert!((a - b).abs() < 1e-9, "variant {m}");
        }
    }
    assert!(state.update(&[1.0]).is_err());
}

#[test]
fn predict_counts_exactly_n_encoder_and_m_decoder_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = CnpParams::init(small(ModelConfig::regression(1, 1)), 6).unwrap();
    for (n, m) in [(0, 1), (1, 1), (17, 3), (50, 200), (2500, 4)] {
        let ctx = random_context(&mut rng, n, 1, 1);
        let tgt = random_targets(&mut rng, m, 1);
        let before = CallCounts::current();
        predict(&params, &ctx, &tgt).unwrap();
        let used = CallCounts::current().since(before);
        assert_eq!(
            used,
            CallCounts {
                encoder: n as u64,
                decoder: m as u64
            }
        );
    }
}

#[test]
fn large_context_representation_matches_per_point_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for aggregator in [Aggregator::Mean, Aggregator::Sum] {
        let config = ModelConfig {
            aggregator,
            ..small(ModelConfig::regression(1, 1))
        };
        let params = CnpParams::init(config, 8).unwrap();
        let ctx = random_context(&mut rng, 2500, 1, 1);
        let per_point: Vec<Vec<f64>> = (0..ctx.len())
            .map(|i| encode_one(&params, ctx.x().row(i), ctx.y().row(i)).unwrap())
            .collect();
        let mut expected = aggregate(&per_point).unwrap();
        if aggregator == Aggregator::Sum {
            expected.iter_mut().for_each(|v| *v *= ctx.len() as f64);
        }
        let got = represent(&params, &ctx).unwrap();
        let scale = if aggregator == Aggregator::Sum {
            ctx.len() as f64
        } else {
            1.0
        };
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn empty_context_uses_learned_vector() {
    let mut params = CnpParams::init(small(ModelConfig::regression(1, 1)), 7).unwrap();
    let empty = ContextSet::empty(1, 1);
    assert_eq!(represent(&params, &empty).unwrap(), vec![0.0; 12]);
    params.tensor_mut("empty_repr").unwrap().data_mut()[3] = 2.5;
    let r = represent(&params, &empty).unwrap();
    assert_eq!(r[3], 2.5);
    let tgt = TargetSet::from_rows(&[vec![0.1]]).unwrap();
    assert!(predict(&params, &empty, &tgt).is_ok());
}

#[test]
fn permuting_targets_permutes_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = CnpParams::init(small(ModelConfig::regression(1, 1)), 8).unwrap();
    let ctx = random_context(&mut rng, 6, 1, 1);
    let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3 - 0.5]).collect();
    let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
    let a = predict(&params, &ctx, &TargetSet::from_rows(&rows).unwrap()).unwrap();
    let mut b = predict(&params, &ctx, &TargetSet::from_rows(&rev).unwrap()).unwrap();
    b.reverse();
    assert_eq!(a, b);
    let dup = predict(&params, &ctx, &TargetSet::from_rows(&[vec![0.4], vec![0.4]]).unwrap()).unwrap();
    assert_eq!(dup[0], dup[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predict_is_invariant_to_context_order(seed in any::<u64>(), n in 1usize..20, m in 1usize..6, x_dim in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = CnpParams::init(small(ModelConfig::regression(x_dim, 1)), seed).unwrap();
        let ctx = random_context(&mut rng, n, x_dim, 1);
        let tgt = random_targets(&mut rng, m, x_dim);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let a = predict_gaussian(&params, &ctx, &tgt).unwrap();
        let b = predict_gaussian(&params, &ctx.permuted(&order), &tgt).unwrap();
        prop_assert!(a.mu.max_abs_diff(&b.mu) < 1e-9);
        prop_assert!(a.sigma.max_abs_diff(&b.sigma) < 1e-9);
    }

    #[test]
    fn sigma_never_below_floor(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = CnpParams::init(small(ModelConfig::regression(1, 1)), seed).unwrap();
        for t in &mut params.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let p = predict_gaussian(&params, &random_context(&mut rng, 4, 1, 1), &random_targets(&mut rng, 8, 1)).unwrap();
        prop_assert!(p.sigma.data().iter().all(|&s| s >= 0.01));
    }

    #[test]
    fn streaming_prefix_orders_match_batch(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let batch = aggregate(&vs).unwrap();
        let mut state = AggregateState::new(4);
        for v in vs.iter().rev() {
            state.update(v).unwrap();
        }
        for (a, b) in state.mean().unwrap().iter().zip(&batch) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn classify_rows_sum_to_one(seed in any::<u64>(), classes in 2usize..5, shots in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = CnpParams::init(small(ModelConfig::classifier(3, classes)), seed).unwrap();
        let n = classes * shots;
        let x = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let support = LabelledSet { x, labels: (0..n).map(|i| i % classes).collect() };
        let q = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let p = classify(&params, &support, &q).unwrap();
        for i in 0..4 {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_kl_is_nonnegative(seed in any::<u64>(), n in 0usize..6, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = CnpParams::init(small(ModelConfig::latent(1, 1, 4)), seed).unwrap();
        let ctx = random_context(&mut rng, n, 1, 1);
        let tgt = random_context(&mut rng, m, 1, 1);
        let prior = latent_prior(&params, &ctx).unwrap();
        let post = latent_posterior(&params, &ctx, &tgt).unwrap();
        prop_assert!(prior.sigma.iter().chain(&post.sigma).all(|&s| s > 0.0));
        prop_assert!(kl_diag_gaussian(&post.mu, &post.sigma, &prior.mu, &prior.sigma) >= 0.0);
    }
}

#[test]
fn classify_within_class_permutation_and_class_swap() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = CnpParams::init(small(ModelConfig::classifier(4, 2)), 21).unwrap();
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let mk = |order: &[usize], labels: Vec<usize>| LabelledSet {
        x: Tensor::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap(),
        labels,
    };
    let q = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let base = classify(&params, &mk(&[0, 1, 2, 3, 4, 5], vec![0, 0, 0, 1, 1, 1]), &q).unwrap();
    let within = classify(&params, &mk(&[2, 0, 1, 5, 3, 4], vec![0, 0, 0, 1, 1, 1]), &q).unwrap();
    assert!(base.max_abs_diff(&within) < 1e-9);

    // Support sets swapped between the two classes, with label-blind encoder
    // rows and a decoder whose class blocks and output columns are mirrored:
    // probabilities swap.
    let d = 12;
    let mut params = params;
    {
        let i = params.layout().encoder.first_weights[0];
        let w = &mut params.tensors[i];
        let h = w.cols();
        for j in 0..h {
            w.data_mut()[5 * h + j] = w.data()[4 * h + j];
        }
    }
    let base = classify(&params, &mk(&[0, 1, 2, 3, 4, 5], vec![0, 0, 0, 1, 1, 1]), &q).unwrap();
    let mut mirrored = params.clone();
    let wr = mirrored.layout().decoder.first_weights[1];
    {
        let w = mirrored.tensors[wr].clone();
        let h = w.cols();
        let t = &mut mirrored.tensors[wr];
        for i in 0..d {
            for j in 0..h {
                t.data_mut()[i * h + j] = w.get(i + d, j);
                t.data_mut()[(i + d) * h + j] = w.get(i, j);
            }
        }
    }
    let (wl, bl) = *mirrored.layout().decoder.rest.last().unwrap();
    for idx in [wl, bl] {
        let src = mirrored.tensors[idx].clone();
        let cols = *src.shape().last().unwrap();
        let rows = src.len() / cols;
        let t = &mut mirrored.tensors[idx];
        for r in 0..rows {
            t.data_mut()[r * cols] = src.data()[r * cols + 1];
            t.data_mut()[r * cols + 1] = src.data()[r * cols];
        }
    }
    let swapped = classify(&mirrored, &mk(&[0, 1, 2, 3, 4, 5], vec![1, 1, 1, 0, 0, 0]), &q).unwrap();
    for i in 0..3 {
        assert!((swapped.get(i, 0) - base.get(i, 1)).abs() < 1e-12);
        assert!((swapped.get(i, 1) - base.get(i, 0)).abs() < 1e-12);
    }
}

#[test]
fn classify_rejects_missing_class() {
    let params = CnpParams::init(small(ModelConfig::classifier(2, 3)), 1).unwrap();
    let support = LabelledSet {
        x: Tensor::matrix(2, 2, vec![0.0; 4]).unwrap(),
        labels: vec![0, 2],
    };
    let q = Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap();
    assert!(matches!(classify(&params, &support, &q), Err(Error::MissingClass(1))));
}

#[test]
fn classify_uses_n_plus_m_passes() {
    let params = CnpParams::init(small(ModelConfig::classifier(2, 3)), 1).unwrap();
    let support = LabelledSet {
        x: Tensor::matrix(7, 2, vec![0.1; 14]).unwrap(),
        labels: vec![0, 1, 2, 0, 1, 2, 2],
    };
    let q = Tensor::matrix(5, 2, vec![0.5; 10]).unwrap();
    let before = CallCounts::current();
    classify(&params, &support, &q).unwrap();
    assert_eq!(
        CallCounts::current().since(before),
        CallCounts { encoder: 7, decoder: 5 }
    );
}

#[test]
fn kl_matches_hand_computed_two_dim_case() {
    // KL(N(μ1, σ1²) || N(μ2, σ2²)) = ln(σ2/σ1) + (σ1² + (μ1 − μ2)²)/(2σ2²) − 1/2, summed over dims.
    let kl = kl_diag_gaussian(&[0.5, -1.0], &[1.0, 0.5], &[0.0, 0.0], &[2.0, 1.0]);
    let d1 = 2f64.ln() + (1.0 + 0.25) / 8.0 - 0.5;
    let d2 = 2f64.ln() + (0.25 + 1.0) / 2.0 - 0.5;
    assert!((kl - (d1 + d2)).abs() < 1e-14);
    assert_eq!(kl_diag_gaussian(&[0.3], &[0.7], &[0.3], &[0.7]), 0.0);
}

#[test]
fn prior_equals_posterior_without_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let params = CnpParams::init(small(ModelConfig::latent(1, 1, 4)), 31).unwrap();
    let ctx = random_context(&mut rng, 5, 1, 1);
    assert_eq!(
        latent_prior(&params, &ctx).unwrap(),
        latent_posterior(&params, &ctx, &ContextSet::empty(1, 1)).unwrap()
    );
    let empty = ContextSet::empty(1, 1);
    assert!(latent_posterior(&params, &empty, &empty).is_err());
    assert!(latent_prior(&params, &empty).is_ok());
}

#[test]
fn coherent_samples_are_seeded_and_collapse_with_zero_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let params = CnpParams::init(small(ModelConfig::latent(1, 1, 4)), 41).unwrap();
    let ctx = random_context(&mut rng, 3, 1, 1);
    let tgt = random_targets(&mut rng, 10, 1);
    let a = sample_coherent(&params, &ctx, &tgt, 3, 99).unwrap();
    assert_eq!(a, sample_coherent(&params, &ctx, &tgt, 3, 99).unwrap());
    assert_ne!(a[0], a[1]);
    assert!(sample_coherent(&params, &ctx, &tgt, 0, 99).is_err());

    let prior = latent_prior(&params, &ctx).unwrap();
    let point = LatentGaussian {
        mu: prior.mu.clone(),
        sigma: vec![0.0; 4],
    };
    let draws = sample_coherent_from(&params, &ctx, &tgt, &point, 4, 5).unwrap();
    assert!(draws.iter().all(|d| d == &draws[0]));
    // Decoding at the prior mean is what predict reports.
    assert_eq!(draws[0], predict_gaussian(&params, &ctx, &tgt).unwrap());
}

#[test]
fn sampling_requires_latent_model() {
    let params = CnpParams::init(small(ModelConfig::regression(1, 1)), 1).unwrap();
    let ctx = ContextSet::empty(1, 1);
    let tgt = TargetSet::from_rows(&[vec![0.0]]).unwrap();
    assert!(sample_coherent(&params, &ctx, &tgt, 2, 0).is_err());
}

#[test]
fn checkpoint_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cnpk");
    for config in [
        ModelConfig::regression(1, 1),
        ModelConfig::latent(2, 1, 64),
        ModelConfig::classifier(784, 5),
    ] {
        let params = CnpParams::init(small(config), 17).unwrap();
        checkpoint::save(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"CNPK1");
        assert_eq!(checkpoint::load(&path).unwrap(), params);
    }
    assert!(matches!(
        checkpoint::load(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn default_architecture_shapes() {
    let params = CnpParams::init(ModelConfig::regression(1, 1), 0).unwrap();
    let table = params.shape_table();
    let enc: Vec<_> = table
        .iter()
        .filter(|(n, _)| n.starts_with("encoder") && n.ends_with(".b"))
        .collect();
    let dec: Vec<_> = table
        .iter()
        .filter(|(n, _)| n.starts_with("decoder") && n.ends_with(".b"))
        .collect();
    assert_eq!(enc.len(), 3);
    assert_eq!(dec.len(), 5);
    assert_eq!(enc.last().unwrap().1, vec![128]);
    assert_eq!(dec.last().unwrap().1, vec![2]);
    assert!(table.iter().any(|(n, s)| n == "empty_repr" && s == &vec![128]));
}
