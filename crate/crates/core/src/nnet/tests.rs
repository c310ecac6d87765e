use super::*;
use crate::rng::{seeded_rng, RngState};
use crate::tensor::Tensor;
use crate::Error;

fn random_batch(model: &Model, b: usize, rng: &mut RngState) -> Batch {
    let mut shape = vec![b];
    shape.extend_from_slice(model.input_shape());
    let n: usize = shape.iter().product();
    let inputs = Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap();
    let labels = (0..b).map(|_| rng.below(model.classes())).collect();
    Batch::new(inputs, labels).unwrap()
}

fn conv_spec(activation: LayerSpec) -> ModelSpec {
    ModelSpec {
        input: vec![6, 6, 2],
        layers: vec![
            LayerSpec::Conv2d {
                filters: 3,
                kernel: 3,
                stride: 1,
                padding: Padding::Same,
                bias: true,
            },
            activation.clone(),
            LayerSpec::MeanPool { window: 2 },
            LayerSpec::Conv2d {
                filters: 4,
                kernel: 2,
                stride: 2,
                padding: Padding::Valid,
                bias: false,
            },
            activation,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 5, bias: true },
        ],
    }
}

#[test]
fn untrained_loss_is_near_log_classes() {
    let model = Model::new(ModelSpec::mlp(2, &[16], 4, LayerSpec::Relu)).unwrap();
    let mut rng = seeded_rng(0);
    let params = model.init_params(&mut rng);
    // Balanced labels.
    let mut batch = random_batch(&model, 400, &mut rng);
    batch.labels = (0..400).map(|i| i % 4).collect();
    let loss = model.loss(&params, &batch).unwrap();
    assert!((loss - 4f64.ln()).abs() < 0.1, "loss {loss}");
}

#[test]
fn eval_mode_is_bitwise_repeatable() {
    let spec = ModelSpec {
        input: vec![3],
        layers: vec![
            LayerSpec::Dense { units: 8, bias: true },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::DropConnect { p: 0.3 },
            LayerSpec::Dense { units: 3, bias: true },
        ],
    };
    let model = Model::new(spec).unwrap();
    let mut rng = seeded_rng(1);
    let params = model.init_params(&mut rng);
    let batch = random_batch(&model, 10, &mut rng);
    let a = model.forward(&params, &batch, Mode::Eval, &mut seeded_rng(5)).unwrap();
    let b = model.forward(&params, &batch, Mode::Eval, &mut seeded_rng(99)).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.logits, b.logits);

    // Stripping the stochastic layers gives the same eval output.
    let plain = Model::new(ModelSpec::mlp(3, &[8], 3, LayerSpec::Relu)).unwrap();
    let c = plain
        .forward(&params, &batch, Mode::Eval, &mut seeded_rng(0))
        .unwrap_err();
    // Group names differ by layer index, so realign before comparing.
    assert!(matches!(c, Error::Misaligned(_)));
    let renamed = ParamSet::new(
        params
            .groups()
            .iter()
            .map(|g| {
                let name = g.name().replace("dense4", "dense2");
                ParamGroup::new(name, g.kind(), g.values.clone())
            })
            .collect(),
    )
    .unwrap();
    let c = plain.forward(&renamed, &batch, Mode::Eval, &mut seeded_rng(0)).unwrap();
    assert_eq!(a.loss.to_bits(), c.loss.to_bits());
}

#[test]
fn hand_computed_linear_loss() {
    let model = Model::new(ModelSpec {
        input: vec![2],
        layers: vec![LayerSpec::Dense { units: 2, bias: false }],
    })
    .unwrap();
    let params = ParamSet::new(vec![ParamGroup::new(
        "dense0.weight",
        ParamKind::Dense,
        Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap(),
    )])
    .unwrap();
    let batch = Batch::new(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), vec![0, 1]).unwrap();
    // Sample 1: logits (1, -1), label 0 -> ln(1 + e^-2).
    // Sample 2: logits (2, 0.5), label 1 -> ln(1 + e^1.5).
    let expect = ((1.0 + (-2f64).exp()).ln() + (1.0 + 1.5f64.exp()).ln()) / 2.0;
    let out = model.forward(&params, &batch, Mode::Eval, &mut seeded_rng(0)).unwrap();
    assert!((out.loss - expect).abs() < 1e-12);
    assert_eq!(out.per_example.len(), 2);
    assert_eq!(out.logits.data(), &[1.0, -1.0, 2.0, 0.5]);
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for activation in [LayerSpec::Tanh, LayerSpec::Relu] {
        let model = Model::new(ModelSpec::mlp(2, &[16], 2, activation)).unwrap();
        let mut rng = seeded_rng(2);
        let params = model.init_params(&mut rng);
        let batch = random_batch(&model, 8, &mut rng);
        let (_, g) = model.grad(&params, &batch, Mode::Eval, &mut rng).unwrap();
        let fd = model.finite_diff_grad(&params, &batch, 1e-5).unwrap();
        let err = max_relative_error(&g, &fd, 1e-3).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }
}

#[test]
fn conv_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let model = Model::new(conv_spec(LayerSpec::Tanh)).unwrap();
        let mut rng = seeded_rng(seed);
        let params = model.init_params(&mut rng);
        let batch = random_batch(&model, 3, &mut rng);
        let (_, g) = model.grad(&params, &batch, Mode::Eval, &mut rng).unwrap();
        let fd = model.finite_diff_grad(&params, &batch, 1e-5).unwrap();
        let err = max_relative_error(&g, &fd, 1e-3).unwrap();
        assert!(err < 1e-6, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn stochastic_layer_gradients_use_the_forward_masks() {
    let spec = ModelSpec {
        input: vec![4],
        layers: vec![
            LayerSpec::DropConnect { p: 0.4 },
            LayerSpec::Dense { units: 6, bias: true },
            LayerSpec::Tanh,
            LayerSpec::Dropout { p: 0.3 },
            LayerSpec::Dense { units: 3, bias: true },
        ],
    };
    let model = Model::new(spec).unwrap();
    let mut rng = seeded_rng(3);
    let params = model.init_params(&mut rng);
    let batch = random_batch(&model, 5, &mut rng);
    let mask_rng = seeded_rng(77);
    let (_, g) = model.grad(&params, &batch, Mode::Train, &mut mask_rng.clone()).unwrap();
    // Replaying the same rng fixes the masks, so the train-mode loss is a
    // deterministic function of the weights.
    let fd = finite_diff_grad(
        |p| Ok(model.forward(p, &batch, Mode::Train, &mut mask_rng.clone())?.loss),
        &params,
        1e-5,
    )
    .unwrap();
    let err = max_relative_error(&g, &fd, 1e-3).unwrap();
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn zero_inputs_give_zero_weight_gradient() {
    let model = Model::new(ModelSpec {
        input: vec![3],
        layers: vec![LayerSpec::Dense { units: 2, bias: false }],
    })
    .unwrap();
    let params = model.init_params(&mut seeded_rng(0));
    let batch = Batch::new(Tensor::zeros(&[4, 3]), vec![0, 1, 1, 0]).unwrap();
    let (_, g) = model.grad(&params, &batch, Mode::Eval, &mut seeded_rng(0)).unwrap();
    assert!(g.groups()[0].data().iter().all(|&x| x == 0.0));
}

#[test]
fn duplicated_batch_has_the_same_mean_gradient() {
    let model = Model::new(ModelSpec::mlp(2, &[5], 3, LayerSpec::Tanh)).unwrap();
    let mut rng = seeded_rng(4);
    let params = model.init_params(&mut rng);
    let batch = random_batch(&model, 6, &mut rng);
    let mut doubled = batch.inputs.data().to_vec();
    doubled.extend_from_slice(batch.inputs.data());
    let mut labels = batch.labels.clone();
    labels.extend_from_slice(&batch.labels);
    let big = Batch::new(Tensor::matrix(12, 2, doubled).unwrap(), labels).unwrap();
    let (l1, g1) = model.grad(&params, &batch, Mode::Eval, &mut rng).unwrap();
    let (l2, g2) = model.grad(&params, &big, Mode::Eval, &mut rng).unwrap();
    assert!((l1 - l2).abs() < 1e-15);
    assert!(max_relative_error(&g1, &g2, 1e-12).unwrap() < 1e-12);
}

#[test]
fn gradient_is_linear_in_batch_halves() {
    let model = Model::new(conv_spec(LayerSpec::Relu)).unwrap();
    for seed in 0..5 {
        let mut rng = seeded_rng(seed);
        let params = model.init_params(&mut rng);
        let a = random_batch(&model, 4, &mut rng);
        let b = random_batch(&model, 4, &mut rng);
        let mut data = a.inputs.data().to_vec();
        data.extend_from_slice(b.inputs.data());
        let mut labels = a.labels.clone();
        labels.extend_from_slice(&b.labels);
        let both = Batch::new(Tensor::new(vec![8, 6, 6, 2], data).unwrap(), labels).unwrap();
        let (_, ga) = model.grad(&params, &a, Mode::Eval, &mut rng).unwrap();
        let (_, gb) = model.grad(&params, &b, Mode::Eval, &mut rng).unwrap();
        let (_, gab) = model.grad(&params, &both, Mode::Eval, &mut rng).unwrap();
        let avg = ga.add(&gb).unwrap().scale(0.5);
        let diff = avg.sub(&gab).unwrap();
        let worst = diff.to_flat().iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-12 * gab.norm().max(1.0), "seed {seed}: {worst}");
    }
}

#[test]
fn finite_difference_oracle() {
    let p = ParamSet::new(vec![ParamGroup::new(
        "w",
        ParamKind::Dense,
        Tensor::from_vec(vec![3.0]),
    )])
    .unwrap();
    let g = finite_diff_grad(|p| Ok(0.5 * p.groups()[0].data()[0].powi(2)), &p, 1e-5).unwrap();
    assert!((g.groups()[0].data()[0] - 3.0).abs() < 1e-9);
    let g = finite_diff_grad(|_| Ok(2.5), &p, 1e-5).unwrap();
    assert_eq!(g.groups()[0].data()[0], 0.0);
    assert!(finite_diff_grad(|_| Ok(0.0), &p, 0.0).is_err());
    assert!(finite_diff_grad(|_| Ok(0.0), &p, -1.0).is_err());
}

#[test]
fn masks() {
    let mut rng = seeded_rng(8);
    let ones = dropout_mask(0.0, &[50], &mut rng).unwrap();
    assert!(ones.data().iter().all(|&x| x == 1.0));
    let half = dropout_mask(0.5, &[100_000], &mut rng).unwrap();
    let kept = half.data().iter().filter(|&&x| x > 0.0).count() as f64 / 1e5;
    assert!((kept - 0.5).abs() < 0.01, "kept {kept}");
    assert!(half.data().iter().all(|&x| x == 0.0 || x == 2.0));
    assert!(dropout_mask(1.0, &[3], &mut rng).is_err());
    assert!(dropout_mask(-0.1, &[3], &mut rng).is_err());
    let g = ParamGroup::new("w", ParamKind::Dense, Tensor::zeros(&[4, 5]));
    let m = dropconnect_mask(0.25, &g, &mut rng).unwrap();
    assert_eq!(m.shape(), &[4, 5]);
    assert!(dropconnect_mask(1.5, &g, &mut rng).is_err());
}

#[test]
fn shape_and_label_errors() {
    let model = Model::new(ModelSpec::mlp(2, &[3], 2, LayerSpec::Relu)).unwrap();
    let params = model.init_params(&mut seeded_rng(0));
    let bad = Batch::new(Tensor::zeros(&[2, 3]), vec![0, 1]).unwrap();
    assert!(matches!(model.loss(&params, &bad), Err(Error::Shape { .. })));
    let bad_label = Batch::new(Tensor::zeros(&[1, 2]), vec![7]).unwrap();
    assert!(model.loss(&params, &bad_label).is_err());
    assert!(Model::new(ModelSpec {
        input: vec![2],
        layers: vec![
            LayerSpec::DropConnect { p: 0.1 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 2, bias: true }
        ],
    })
    .is_err());
}

#[test]
fn overflowing_loss_is_reported() {
    let model = Model::new(ModelSpec {
        input: vec![1],
        layers: vec![LayerSpec::Dense { units: 2, bias: false }],
    })
    .unwrap();
    let params = ParamSet::new(vec![ParamGroup::new(
        "dense0.weight",
        ParamKind::Dense,
        Tensor::matrix(2, 1, vec![f64::MAX, -f64::MAX]).unwrap(),
    )])
    .unwrap();
    let batch = Batch::new(Tensor::matrix(1, 1, vec![10.0]).unwrap(), vec![1]).unwrap();
    assert!(matches!(model.loss(&params, &batch), Err(Error::NonFinite(_))));
}

#[test]
fn group_kinds_follow_layers() {
    let model = Model::new(conv_spec(LayerSpec::Relu)).unwrap();
    let params = model.init_params(&mut seeded_rng(0));
    let kinds: Vec<_> = params
        .groups()
        .iter()
        .map(|g| (g.name().to_string(), g.kind()))
        .collect();
    assert_eq!(
        kinds,
        vec![
            ("conv0.weight".to_string(), ParamKind::Conv),
            ("conv0.bias".to_string(), ParamKind::Bias),
            ("conv3.weight".to_string(), ParamKind::Conv),
            ("dense6.weight".to_string(), ParamKind::Dense),
            ("dense6.bias".to_string(), ParamKind::Bias),
        ]
    );
    assert_eq!(params.num_params(), model.num_params());
}
