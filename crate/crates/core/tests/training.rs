use edgesel_core::data::synth_dataset;
use edgesel_core::loss::{alpha, wbce_loss, WbceParams};
use edgesel_core::optim::Adam;
use edgesel_core::train::{run_stage, StagePlan, TrainConfig};
use edgesel_core::{EdgeModel, Mask, ModelConfig, Mode};
use edgesel_tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_of(pred: &[f64], h: usize, w: usize, gts: &[Mask], params: WbceParams) -> f64 {
    let tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new(vec![gts.len(), 1, h, w], pred.to_vec()).unwrap());
    let refs: Vec<&Mask> = gts.iter().collect();
    wbce_loss(&p, &refs, params).unwrap().item()
}

/// The class-balanced cross-entropy written out pixel by pixel.
fn scalar_wbce(pred: &[f64], gt: &Mask, lambda: f64, eps: f64) -> f64 {
    let n = gt.bits().len() as f64;
    let a = gt.bits().iter().filter(|&&b| !b).count() as f64 / n;
    let mut loss = 0.0;
    for (&p, &y) in pred.iter().zip(gt.bits()) {
        let p = p.clamp(eps, 1.0 - eps);
        if y {
            loss -= a * p.ln();
        } else {
            loss -= lambda * (1.0 - a) * (1.0 - p).ln();
        }
    }
    loss
}

#[test]
fn wbce_three_pixel_fixture() {
    let gt = Mask::new(1, 3, vec![true, false, false]).unwrap();
    assert!((alpha(&gt) - 2.0 / 3.0).abs() < 1e-15);
    let loss = loss_of(&[0.5; 3], 1, 3, &[gt], WbceParams::default());
    let expected = (2.0 / 3.0) * 2f64.ln() + 1.1 * (1.0 / 3.0) * 2.0 * 2f64.ln();
    assert!((loss - expected).abs() < 1e-12);
    assert!((loss - 0.9704).abs() < 1e-4);
}

#[test]
fn wbce_matches_scalar_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let lambda = rng.gen_range(0.5..2.0);
        let gt = Mask::from_fn(h, w, |y, x| (y * 31 + x * 17 + h) % 5 == 0);
        let pred: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let params = WbceParams { lambda, eps: 1e-6 };
        let got = loss_of(&pred, h, w, &[gt.clone()], params);
        assert!((got - scalar_wbce(&pred, &gt, lambda, 1e-6)).abs() < 1e-9);
    }
}

/// α = 1 when nothing is an edge and α = 0 when everything is: with the
/// weights as defined, both terms vanish in either case.
#[test]
fn wbce_degenerate_ground_truths() {
    let pred = [0.2, 0.7, 0.4, 0.9];
    let none = Mask::empty(2, 2);
    let all = Mask::from_fn(2, 2, |_, _| true);
    assert_eq!(alpha(&none), 1.0);
    assert_eq!(alpha(&all), 0.0);
    for gt in [none, all] {
        let got = loss_of(&pred, 2, 2, &[gt.clone()], WbceParams::default());
        assert_eq!(got, scalar_wbce(&pred, &gt, 1.1, 1e-6));
        assert_eq!(got, 0.0);
    }
}

#[test]
fn wbce_perfect_prediction_is_near_zero() {
    let eps = 1e-6;
    // the loss sums over pixels, about eps per pixel
    let gt = Mask::from_fn(8, 8, |y, x| (x + y) % 7 == 0);
    let pred: Vec<f64> = gt.bits().iter().map(|&b| if b { 1.0 - eps } else { eps }).collect();
    let loss = loss_of(&pred, 8, 8, &[gt.clone()], WbceParams::default());
    assert!(loss > 0.0 && loss < 1e-4, "{loss}");
    let exact = scalar_wbce(&pred, &gt, 1.1, eps);
    assert!((loss - exact).abs() < 1e-12);
}

#[test]
fn wbce_averages_over_the_batch() {
    let a = Mask::from_fn(3, 3, |y, _| y == 1);
    let b = Mask::from_fn(3, 3, |_, x| x == 0 || x == 2);
    let pa = vec![0.3; 9];
    let pb = vec![0.6; 9];
    let both: Vec<f64> = pa.iter().chain(&pb).copied().collect();
    let joint = loss_of(&both, 3, 3, &[a.clone(), b.clone()], WbceParams::default());
    let separate = loss_of(&pa, 3, 3, &[a], WbceParams::default()) + loss_of(&pb, 3, 3, &[b], WbceParams::default());
    assert!((joint - separate / 2.0).abs() < 1e-12);
}

#[test]
fn wbce_gradient_signs() {
    let gt = Mask::from_fn(4, 4, |y, x| y == x);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pred: Vec<f64> = (0..16).map(|_| rng.gen_range(0.05..0.95)).collect();
    let tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::new(vec![1, 1, 4, 4], pred).unwrap(), true);
    let loss = wbce_loss(&p, &[&gt], WbceParams::default()).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(&p).unwrap();
    for (&d, &y) in g.data().iter().zip(gt.bits()) {
        assert!(if y { d < 0.0 } else { d > 0.0 });
    }
}

#[test]
fn wbce_rejects_mismatched_batches() {
    let tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::full([2, 1, 2, 2], 0.5));
    assert!(wbce_loss(&p, &[&Mask::empty(2, 2)], WbceParams::default()).is_err());
    assert!(wbce_loss(&p, &[], WbceParams::default()).is_err());
}

fn scalar_store(value: f32) -> ParamStore<f32> {
    let mut store = ParamStore::new();
    store.add_weight("w", Tensor::full([1], value)).unwrap();
    store.add_buffer("b", Tensor::full([1], 3.0)).unwrap();
    store
}

fn set_grad(store: &mut ParamStore<f32>, g: f32) {
    for p in store.iter_mut() {
        p.grad.iter_mut().for_each(|v| *v = g);
    }
}

fn value(store: &ParamStore<f32>) -> f64 {
    store.by_name("w").unwrap().value.data()[0] as f64
}

#[test]
fn adam_zero_gradient_without_decay_is_identity() {
    let mut store = scalar_store(0.75);
    let mut adam = Adam::new(1e-3, 0.0);
    for _ in 0..5 {
        set_grad(&mut store, 0.0);
        adam.step(&mut store, |_| true);
    }
    assert_eq!(value(&store), 0.75);
    assert_eq!(store.by_name("b").unwrap().value.data()[0], 3.0);
}

#[test]
fn adam_first_step_matches_bias_corrected_recurrence() {
    let (lr, g, theta) = (1e-2, -0.3f64, 0.5f64);
    let mut store = scalar_store(theta as f32);
    let mut adam = Adam::new(lr, 0.0);
    set_grad(&mut store, g as f32);
    adam.step(&mut store, |_| true);
    let g = g as f32 as f64;
    let m_hat = (0.1 * g) / 0.1;
    let v_hat = (0.001 * g * g) / 0.001;
    let expected = theta - lr * m_hat / (v_hat.sqrt() + 1e-8);
    assert!((value(&store) - expected).abs() < 1e-7);
    // Which is a step of lr against the sign of g.
    assert!((value(&store) - (theta + lr)).abs() < 1e-7);
}

#[test]
fn adam_constant_gradient_steps_approach_lr() {
    let lr = 1e-3;
    let mut store = scalar_store(0.0);
    let mut adam = Adam::new(lr, 0.0);
    let mut last = 0.0;
    let mut steps = Vec::new();
    for _ in 0..200 {
        set_grad(&mut store, 2.5);
        adam.step(&mut store, |_| true);
        let v = value(&store);
        steps.push(last - v);
        last = v;
    }
    for s in &steps {
        assert!(*s <= lr * (1.0 + 1e-3));
    }
    assert!((steps[199] - lr).abs() < lr * 1e-3);
    assert_eq!(adam.steps(), 200);
}

#[test]
fn adam_decay_is_applied_after_the_update() {
    let (lr, wd) = (1e-2, 0.5);
    let mut store = scalar_store(2.0);
    let mut adam = Adam::new(lr, wd);
    set_grad(&mut store, 1.0);
    adam.step(&mut store, |_| true);
    let after_update = 2.0 - lr;
    let expected = after_update - lr * wd * after_update;
    assert!((value(&store) - expected).abs() < 1e-6);
}

#[test]
fn adam_skips_frozen_weights() {
    let mut store = scalar_store(1.0);
    let mut adam = Adam::new(1e-2, 0.1);
    set_grad(&mut store, 1.0);
    adam.step(&mut store, |n| n != "w");
    assert_eq!(value(&store), 1.0);
}

#[test]
fn stage_plans() {
    let names = ["backbone.stage1.conv1.weight", "selector.fuse.conv3.bias"];
    let p1 = StagePlan::new(1).unwrap();
    let p2 = StagePlan::new(2).unwrap();
    let p3 = StagePlan::new(3).unwrap();
    assert_eq!(names.map(|n| p1.trainable(n)), [true, false]);
    assert_eq!(names.map(|n| p2.trainable(n)), [false, true]);
    assert_eq!(names.map(|n| p3.trainable(n)), [true, true]);
    assert_eq!(p1.mode(), Mode::Baseline);
    assert_eq!(p2.mode(), Mode::Selected);
    assert!(!p2.flags().backbone && p2.flags().selector);
    assert!(p3.flags().backbone && p3.flags().selector);
    assert!(StagePlan::new(0).is_err() && StagePlan::new(4).is_err());
}

fn tiny_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        weight_decay: 1e-8,
        batch: 2,
        epochs,
        seed,
        crop: 32,
        refresh_every: 5,
        wbce: WbceParams::default(),
    }
}

#[test]
fn stage_two_leaves_the_backbone_untouched() {
    let samples = synth_dataset(2, 48, 1, false).unwrap();
    let (model, mut store) = EdgeModel::new(&ModelConfig::compact(), 1).unwrap();
    let cfg = tiny_config(2, 1);
    run_stage(&StagePlan::new(1).unwrap(), &samples, &model, &mut store, &cfg, &mut |_| {}).unwrap();
    let before = store.clone();
    run_stage(&StagePlan::new(2).unwrap(), &samples, &model, &mut store, &cfg, &mut |_| {}).unwrap();
    let mut selector_moved = false;
    for ((_, a), (_, b)) in before.iter().zip(store.iter()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if a.name.starts_with("backbone.") {
            assert!(same, "{} changed in stage 2", a.name);
        } else if !same {
            selector_moved = true;
        }
    }
    assert!(selector_moved);
}

#[test]
fn undersized_data_is_an_error() {
    let samples = synth_dataset(1, 32, 1, false).unwrap();
    let (model, mut store) = EdgeModel::new(&ModelConfig::compact(), 1).unwrap();
    let cfg = TrainConfig { crop: 48, ..tiny_config(1, 0) };
    assert!(run_stage(&StagePlan::new(1).unwrap(), &samples, &model, &mut store, &cfg, &mut |_| {}).is_err());
}

/// Median over three seeds of the stage-1 epoch losses on four images:
/// the trend over ten epochs is downward, with the last epochs below the
/// first ones.
#[test]
fn stage_one_loss_decreases() {
    let samples = synth_dataset(4, 64, 3, false).unwrap();
    let mut curves = Vec::new();
    for seed in 0..3 {
        let (model, mut store) = EdgeModel::new(&ModelConfig::compact(), seed).unwrap();
        let log = run_stage(&StagePlan::new(1).unwrap(), &samples, &model, &mut store, &tiny_config(10, seed), &mut |_| {}).unwrap();
        curves.push(log.iter().map(|r| r.mean_loss).collect::<Vec<_>>());
    }
    let median: Vec<f64> = (0..10)
        .map(|e| {
            let mut v: Vec<f64> = curves.iter().map(|c| c[e]).collect();
            v.sort_by(f64::total_cmp);
            v[1]
        })
        .collect();
    let first = (median[0] + median[1]) / 2.0;
    let last = (median[8] + median[9]) / 2.0;
    assert!(last < 0.8 * first, "{median:?}");
    let rises = median.windows(2).filter(|w| w[1] > w[0] * 1.05).count();
    assert!(rises <= 2, "{median:?}");
}
