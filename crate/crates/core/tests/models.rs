mod common;

use ecgstack::architectures::{build, build_with, instantiate, param_count, AttentionPlacement, BuildOptions, LayerSpec, ModelName};
use ecgstack::nn::{softmax_xent_batch, AdamConfig, AdamState, Context, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(shape: &[usize], batch: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let mut dims = vec![batch];
    dims.extend_from_slice(shape);
    let x = Tensor::from_vec(&dims, (0..batch * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels = (0..batch).map(|i| i % 4).collect();
    (x, labels)
}

fn loss(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> (f64, Tensor<f64>) {
    let logits = net.forward(x, &mut Context::new(false, 0)).unwrap();
    let (l, _, g) = softmax_xent_batch(&logits, labels).unwrap();
    (l, g)
}

#[test]
fn table_one_rows() {
    let pc = param_count(&build(ModelName::Cnn2d, &[227, 227, 3]).unwrap()).unwrap();
    let rows: Vec<(Vec<usize>, usize)> = pc.layers.iter().map(|l| (l.output_dims.clone(), l.params)).collect();
    assert_eq!(rows[0], (vec![223, 223, 32], 2_432));
    assert_eq!(rows[1], (vec![111, 111, 32], 0));
    assert_eq!(rows[2], (vec![107, 107, 64], 51_264));
    assert_eq!(rows[3], (vec![53, 53, 64], 0));
    // Flatten, then the fully connected stack.
    assert_eq!(rows[4], (vec![53 * 53 * 64], 0));
    assert_eq!(rows[5].0, vec![500]);
    assert_eq!(rows[7], (vec![256], 128_256));
    assert_eq!(rows[8], (vec![64], 16_448));
    assert_eq!(rows[9], (vec![4], 260));
}

/// The table lists 9,012,500 weights for the first fully connected layer,
/// which does not follow from a 53x53x64 flattened input.
#[test]
fn first_dense_row_diverges_from_table() {
    let pc = param_count(&build(ModelName::Cnn2d, &[227, 227, 3]).unwrap()).unwrap();
    assert_eq!(pc.layers[5].params, 53 * 53 * 64 * 500 + 500);
    assert_eq!(pc.layers[5].params, 89_888_500);
    assert_ne!(pc.layers[5].params, 9_012_500);
}

#[test]
fn attention_parameter_counts() {
    let sa = param_count(&build(ModelName::CnnSa, &[227, 227, 3]).unwrap()).unwrap();
    assert_eq!(sa.layers[4].params, 64 * 8 * 2 + 64 * 64 + 1);
    let mha = param_count(&build(ModelName::CnnMha, &[227, 227, 3]).unwrap()).unwrap();
    assert_eq!(mha.layers[4].params, 64 * 8 * 2 + 64 * 64 * 2 + 1);
    let early = build_with(
        ModelName::CnnSa,
        &[227, 227, 3],
        &BuildOptions { attention_placement: AttentionPlacement::AfterPool1, ..Default::default() },
    )
    .unwrap();
    assert_eq!(early.layers[2], LayerSpec::SelfAttention);
    assert_eq!(param_count(&early).unwrap().layers[2].params, 32 * 4 * 2 + 32 * 32 + 1);
}

#[test]
fn lstm_stack_has_three_layers_of_128() {
    let spec = build(ModelName::Cnn1dLstm, &[3136]).unwrap();
    let net = instantiate::<f32>(&spec, 0).unwrap();
    let lstm: Vec<_> = net.named_params().into_iter().filter(|(n, _)| n.contains("lstm")).collect();
    assert_eq!(lstm.len(), 9);
    assert!(lstm.iter().any(|(n, t)| n.ends_with("l2.w_hh") && t.dims() == [128, 512]));
}

/// Copies every parameter of `from` into the layers of `to`, skipping the
/// layer at `skip` in `to`.
fn copy_params_skipping(from: &Network<f64>, to: &mut Network<f64>, skip: usize) {
    let src: Vec<Vec<Tensor<f64>>> = from
        .layers()
        .iter()
        .map(|l| l.params().into_iter().map(|(_, t)| t.clone_values()).collect())
        .collect();
    let mut src = src.into_iter();
    for (i, layer) in to.layers_mut().iter_mut().enumerate() {
        if i == skip {
            continue;
        }
        let values = src.next().unwrap();
        for (p, v) in layer.params_mut().into_iter().zip(values) {
            p.1.data_mut().copy_from_slice(v.data());
        }
    }
}

#[test]
fn closed_attention_gate_reduces_to_plain_cnn() {
    let shape = [31, 31, 3];
    let mut base = instantiate::<f64>(&build(ModelName::Cnn2d, &shape).unwrap(), 5).unwrap();
    for name in [ModelName::CnnSa, ModelName::CnnMha] {
        let mut att = instantiate::<f64>(&build(name, &shape).unwrap(), 9).unwrap();
        let at = att.layers().iter().position(|l| l.kind().contains("attention")).unwrap();
        copy_params_skipping(&base, &mut att, at);
        let (x, _) = random_batch(&shape, 3, 1);
        let a = base.forward(&x, &mut Context::new(false, 0)).unwrap();
        let b = att.forward(&x, &mut Context::new(false, 0)).unwrap();
        assert_eq!(a.data(), b.data(), "{name}");
    }
}

#[test]
fn one_adam_step_decreases_batch_loss() {
    for name in ModelName::ALL {
        let shape: Vec<usize> = if name.is_1d() { vec![200] } else { vec![31, 31, 3] };
        let spec = build(name, &shape).unwrap();
        let mut net = instantiate::<f64>(&spec, 3).unwrap();
        let (x, labels) = random_batch(&spec.input_shape, 8, 2);
        let mut adam = AdamState::new(AdamConfig { lr: 1e-4, ..Default::default() });
        net.zero_grad();
        let (before, grad) = loss(&mut net, &x, &labels);
        net.backward(&grad).unwrap();
        adam.step(&mut net.params_mut()).unwrap();
        let (after, _) = loss(&mut net, &x, &labels);
        assert!(after < before, "{name}: {before} -> {after}");
    }
}

#[test]
fn instantiation_is_seeded() {
    let spec = build(ModelName::CnnMha, &[31, 31, 3]).unwrap();
    let a = instantiate::<f32>(&spec, 4).unwrap();
    let b = instantiate::<f32>(&spec, 4).unwrap();
    let c = instantiate::<f32>(&spec, 5).unwrap();
    let vals = |n: &Network<f32>| n.named_params().into_iter().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(vals(&a), vals(&b));
    assert_ne!(vals(&a), vals(&c));
}
