use edgesel_core::nn::Init;
use edgesel_core::{select_fuse, Backbone, EdgeModel, FeatureStack, ModelConfig, Mode, TrainFlags};
use edgesel_tensor::{Frame, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::uniform(vec![n, 3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn zero_store(store: &ParamStore<f32>) -> ParamStore<f32> {
    let mut z = store.clone();
    for p in z.iter_mut() {
        if !p.name.ends_with("running_var") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    z
}

#[test]
fn backbone_side_maps_are_full_resolution() {
    let cfg = ModelConfig::compact();
    let mut store = ParamStore::new();
    let b = Backbone::new(&mut Init::new(&mut store, 1), &cfg).unwrap();
    let tape = Tape::<f64>::new();
    let s64 = store.cast::<f64>();
    let f = Frame::new(&tape, &s64, false, |_| false);
    let x = tape.constant(image(1, 320, 320, 2));
    let stack = b.forward(&f, &x, false).unwrap();
    assert_eq!(stack.len(), 4);
    assert_eq!(stack.scales, [1, 2, 4, 8]);
    for side in &stack.sides {
        assert_eq!(side.shape(), [1, 1, 320, 320]);
    }
    assert_eq!(stack.volume().unwrap().shape(), [1, 4, 320, 320]);
}

#[test]
fn backbone_rejects_misaligned_input() {
    let cfg = ModelConfig::compact();
    let mut store = ParamStore::new();
    let b = Backbone::new(&mut Init::new(&mut store, 1), &cfg).unwrap();
    let tape = Tape::<f64>::new();
    let s64 = store.cast::<f64>();
    let f = Frame::new(&tape, &s64, false, |_| false);
    assert!(b.forward(&f, &tape.constant(image(1, 36, 32, 2)), false).is_err());
}

#[test]
fn zero_parameters_give_half_everywhere() {
    let cfg = ModelConfig::compact();
    let (model, store) = EdgeModel::new(&cfg, 3).unwrap();
    let z = zero_store(&store).cast::<f64>();
    let tape = Tape::<f64>::new();
    let f = Frame::new(&tape, &z, false, |_| false);
    let x = tape.constant(image(1, 32, 32, 4));
    let out = model.forward(&f, &x, Mode::Both, TrainFlags::EVAL).unwrap();
    for side in &out.stack.sides {
        assert!(side.tensor().data().iter().all(|&v| v == 0.5));
    }
    assert!(out.baseline.unwrap().tensor().data().iter().all(|&v| v == 0.5));
    // Zero logits in the weight head: uniform selection of equal sides.
    assert!(out.weights.unwrap().tensor().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    assert!(out.selected.unwrap().tensor().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn baseline_head_examples() {
    let cfg = ModelConfig::compact();
    let (model, mut store) = EdgeModel::new(&cfg, 5).unwrap();
    let x = image(1, 32, 32, 6);
    let run = |store: &ParamStore<f32>| {
        let s = store.cast::<f64>();
        let tape = Tape::<f64>::new();
        let f = Frame::new(&tape, &s, false, |_| false);
        let out = model.forward(&f, &tape.constant(x.clone()), Mode::Baseline, TrainFlags::EVAL).unwrap();
        let sides: Vec<Tensor<f64>> = out.stack.sides.iter().map(|s| s.tensor()).collect();
        (sides, out.baseline.unwrap().tensor())
    };
    store.set("backbone.fuse.weight", Tensor::zeros([1, 4, 1, 1])).unwrap();
    let (_, head) = run(&store);
    assert!(head.data().iter().all(|&v| v == 0.5));

    let mut one_hot = Tensor::zeros([1, 4, 1, 1]);
    one_hot.data_mut()[2] = 1.0;
    store.set("backbone.fuse.weight", one_hot).unwrap();
    store.set("backbone.fuse.bias", Tensor::full([1], 0.25)).unwrap();
    let (sides, head) = run(&store);
    for (h, s) in head.data().iter().zip(sides[2].data()) {
        assert!((h - 1.0 / (1.0 + (-(s + 0.25)).exp())).abs() < 1e-6);
    }
}

#[test]
fn default_fuse_is_uniform() {
    let (_, store) = EdgeModel::new(&ModelConfig::default(), 0).unwrap();
    assert!(store.by_name("backbone.fuse.weight").unwrap().value.data().iter().all(|&w| w == 0.25));
    assert_eq!(store.by_name("backbone.fuse.bias").unwrap().value.data(), &[0.0]);
}

#[test]
fn selector_weight_volume_at_full_tile() {
    let cfg = ModelConfig::compact();
    let (model, store) = EdgeModel::new(&cfg, 7).unwrap();
    let s = store.cast::<f64>();
    let tape = Tape::<f64>::new();
    let f = Frame::new(&tape, &s, false, |_| false);
    let w = model.selector.forward(&f, &tape.constant(image(1, 320, 320, 8)), false).unwrap().tensor();
    assert_eq!(w.shape(), &[1, 4, 320, 320]);
    let plane = 320 * 320;
    for p in 0..plane {
        let sum: f64 = (0..4).map(|k| w.data()[k * plane + p]).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}

#[test]
fn selector_requires_multiples_of_sixteen() {
    let (model, store) = EdgeModel::new(&ModelConfig::compact(), 7).unwrap();
    let s = store.cast::<f64>();
    let tape = Tape::<f64>::new();
    let f = Frame::new(&tape, &s, false, |_| false);
    assert!(model.selector.forward(&f, &tape.constant(image(1, 40, 32, 8)), false).is_err());
}

fn stack_of<'t>(tape: &'t Tape<f64>, sides: &[Tensor<f64>]) -> FeatureStack<'t, f64> {
    FeatureStack {
        sides: sides.iter().map(|s| tape.constant(s.clone())).collect(),
        scales: (0..sides.len()).map(|i| 1 << i).collect(),
    }
}

fn fuse(sides: &[Tensor<f64>], weights: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::<f64>::new();
    let stack = stack_of(&tape, sides);
    select_fuse(&stack, &tape.constant(weights.clone())).unwrap().tensor()
}

#[test]
fn select_fuse_vertices_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sides: Vec<_> = (0..3).map(|_| Tensor::uniform(vec![1, 1, 4, 5], 0.0, 1.0, &mut rng)).collect();
    for j in 0..3 {
        let w = Tensor::from_fn([1, 3, 4, 5], |i| if i / 20 == j { 1.0 } else { 0.0 });
        assert_eq!(fuse(&sides, &w), sides[j]);
    }
    let w = Tensor::full([1, 3, 4, 5], 1.0 / 3.0);
    let out = fuse(&sides, &w);
    for p in 0..20 {
        let mean = (sides[0].data()[p] + sides[1].data()[p] + sides[2].data()[p]) / 3.0;
        assert!((out.data()[p] - mean).abs() < 1e-15);
    }
}

#[test]
fn select_fuse_rejects_mismatched_weights() {
    let tape = Tape::<f64>::new();
    let sides = vec![Tensor::zeros([1, 1, 4, 4]), Tensor::zeros([1, 1, 4, 4])];
    let stack = stack_of(&tape, &sides);
    assert!(select_fuse(&stack, &tape.constant(Tensor::zeros([1, 3, 4, 4]))).is_err());
}

/// Selected and baseline outputs are functions of the very stack the model
/// returns.
#[test]
fn both_heads_consume_the_same_stack() {
    let cfg = ModelConfig::compact();
    let (model, store) = EdgeModel::new(&cfg, 9).unwrap();
    let s = store.cast::<f64>();
    let tape = Tape::<f64>::new();
    let f = Frame::new(&tape, &s, false, |_| false);
    let out = model.forward(&f, &tape.constant(image(2, 32, 48, 1)), Mode::Both, TrainFlags::EVAL).unwrap();
    let fused_again = select_fuse(&out.stack, &out.weights.unwrap()).unwrap();
    assert_eq!(fused_again.tensor(), out.selected.unwrap().tensor());
    let head = model.backbone.default_head(&f, &out.stack).unwrap();
    assert_eq!(head.tensor(), out.baseline.unwrap().tensor());
    assert!(out.edge(Mode::Selected).is_some() && out.edge(Mode::Baseline).is_some());
}

#[test]
fn modes_only_build_what_they_need() {
    let (model, store) = EdgeModel::new(&ModelConfig::compact(), 9).unwrap();
    let s = store.cast::<f64>();
    let tape = Tape::<f64>::new();
    let f = Frame::new(&tape, &s, false, |_| false);
    let x = tape.constant(image(1, 32, 32, 1));
    let base = model.forward(&f, &x, Mode::Baseline, TrainFlags::EVAL).unwrap();
    assert!(base.weights.is_none() && base.selected.is_none() && base.baseline.is_some());
    let sel = model.forward(&f, &x, Mode::Selected, TrainFlags::EVAL).unwrap();
    assert!(sel.baseline.is_none() && sel.selected.is_some());
    assert_eq!("selected".parse::<Mode>().unwrap(), Mode::Selected);
    assert!("fused".parse::<Mode>().is_err());
}

#[test]
fn parameter_names_follow_the_module_layout() {
    let (_, store) = EdgeModel::new(&ModelConfig::default(), 0).unwrap();
    for name in [
        "backbone.stage1.conv1.weight",
        "backbone.stage4.bn2.running_var",
        "backbone.side4.bias",
        "selector.extract.conv2.weight",
        "selector.down4.conv2.bias",
        "selector.encoder8.block6.attn.q.weight",
        "selector.encoder16.block1.mlp.norm.bias",
        "selector.up4.conv1.weight",
        "selector.residual4.weight",
        "selector.fuse.conv3.weight",
    ] {
        assert!(store.id(name).is_some(), "{name}");
    }
}
