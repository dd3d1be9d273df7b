use edgesel_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(k in 1usize..7, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let tape = Tape::<f32>::new();
        let x = Tensor::<f32>::uniform(vec![1, k, h, w], -8.0, 8.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let y = tape.constant(x).softmax(1).unwrap().tensor();
        for p in 0..h * w {
            let col: Vec<f32> = (0..k).map(|c| y.data()[c * h * w + p]).collect();
            let s: f32 = col.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(col.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn pooling_and_upsampling_are_linear(h in 2usize..9, w in 2usize..9, a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
        let x = rand_tensor(vec![1, 2, h, w], seed);
        let y = rand_tensor(vec![1, 2, h, w], seed ^ 1);
        let combo = Tensor::from_fn(vec![1, 2, h, w], |i| a * x.data()[i] + b * y.data()[i]);
        let tape = Tape::<f64>::new();
        type Op = fn(edgesel_tensor::Var<'_, f64>) -> edgesel_tensor::Var<'_, f64>;
        let ops: [Op; 2] = [
            |v| v.avg_pool(3, 2, 1).unwrap(),
            |v| v.upsample_bicubic_x2(-0.75).unwrap(),
        ];
        for op in ops {
            let fx = op(tape.constant(x.clone())).tensor();
            let fy = op(tape.constant(y.clone())).tensor();
            let fc = op(tape.constant(combo.clone())).tensor();
            let lin = Tensor::from_fn(fx.shape().to_vec(), |i| a * fx.data()[i] + b * fy.data()[i]);
            prop_assert!(fc.max_abs_diff(&lin) < 1e-5);
        }
    }

    #[test]
    fn conv2d_matches_direct_sum(
        n in 1usize..3, ci in 1usize..5, co in 1usize..5, h in 1usize..9, w in 1usize..9,
        k in prop::sample::select(vec![1usize, 3]), seed in any::<u64>(),
    ) {
        let pad = k / 2;
        let x = rand_tensor(vec![n, ci, h, w], seed);
        let wt = rand_tensor(vec![co, ci, k, k], seed ^ 2);
        let b = rand_tensor(vec![co], seed ^ 3);
        let tape = Tape::<f64>::new();
        let y = tape.constant(x.clone()).conv2d(&tape.constant(wt.clone()), &tape.constant(b.clone()), 1, pad).unwrap().tensor();
        prop_assert_eq!(y.shape(), &[n, co, h, w]);
        for bn in 0..n { for o in 0..co { for oy in 0..h { for ox in 0..w {
            let mut s = b.at(&[o]);
            for c in 0..ci { for ky in 0..k { for kx in 0..k {
                let iy = oy as isize + ky as isize - pad as isize;
                let ix = ox as isize + kx as isize - pad as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    s += x.at(&[bn, c, iy as usize, ix as usize]) * wt.at(&[o, c, ky, kx]);
                }
            }}}
            prop_assert!((y.at(&[bn, o, oy, ox]) - s).abs() < 1e-5);
        }}}}
    }

    #[test]
    fn linear_matches_dot_products(rows in 1usize..9, d_in in 1usize..9, d_out in 1usize..9, seed in any::<u64>()) {
        let x = rand_tensor(vec![rows, d_in], seed);
        let w = rand_tensor(vec![d_out, d_in], seed ^ 4);
        let b = rand_tensor(vec![d_out], seed ^ 5);
        let tape = Tape::<f64>::new();
        let y = tape.constant(x.clone()).linear(&tape.constant(w.clone()), &tape.constant(b.clone())).unwrap().tensor();
        for r in 0..rows { for o in 0..d_out {
            let s: f64 = b.at(&[o]) + (0..d_in).map(|i| x.at(&[r, i]) * w.at(&[o, i])).sum::<f64>();
            prop_assert!((y.at(&[r, o]) - s).abs() < 1e-5);
        }}
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let tape = Tape::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = tape.constant(Tensor::uniform(vec![2, 3, 16, 16], -1.0, 1.0, &mut rng));
        let w = tape.constant(Tensor::uniform(vec![8, 3, 3, 3], -0.5, 0.5, &mut rng));
        let b = tape.constant(Tensor::zeros(vec![8]));
        let g = tape.constant(Tensor::full(vec![8], 1.0));
        let (y, _, _) = x.conv2d(&w, &b, 1, 1).unwrap().batch_norm_train(&g, &b, 1e-5).unwrap();
        y.leaky_relu(0.01).unwrap().avg_pool(3, 2, 1).unwrap().upsample_bicubic_x2(-0.75).unwrap().softmax(1).unwrap().tensor()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
