use std::collections::HashSet;

use edgesel_core::data::{augment_epoch, boundary_mask, source_coord, Sample, TilePlan};
use edgesel_core::loss::{wbce_loss, WbceParams};
use edgesel_core::{select_fuse, FeatureStack, Mask};
use edgesel_tensor::{Tape, Tensor};
use proptest::prelude::*;

fn rotate_ccw<T: Copy>(v: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len());
    for i in 0..w {
        for j in 0..h {
            out.push(v[j * w + w - 1 - i]);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fused_output_stays_within_the_sides(
        k in 1usize..6, h in 1usize..8, w in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f64>::new();
        let sides: Vec<_> = (0..k)
            .map(|_| tape.constant(Tensor::uniform(vec![1, 1, h, w], 0.0, 1.0, &mut rng)))
            .collect();
        let logits = tape.constant(Tensor::uniform(vec![1, k, h, w], -4.0, 4.0, &mut rng));
        let weights = logits.softmax(1).unwrap();
        let stack = FeatureStack { sides, scales: vec![1; k] };
        let out = select_fuse(&stack, &weights).unwrap().tensor();
        let wt = weights.tensor();
        for p in 0..h * w {
            let vals: Vec<f64> = stack.sides.iter().map(|s| s.tensor().data()[p]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = out.data()[p];
            prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            let s: f64 = (0..k).map(|c| wt.data()[c * h * w + p]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wbce_is_nonnegative(bits in proptest::collection::vec(any::<bool>(), 1..40),
                           preds in proptest::collection::vec(0.0f64..=1.0, 40)) {
        let n = bits.len();
        let gt = Mask::new(1, n, bits).unwrap();
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(vec![1, 1, 1, n], preds[..n].to_vec()).unwrap());
        let l = wbce_loss(&p, &[&gt], WbceParams::default()).unwrap().item();
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn orientation_maps_are_bijections(rot in 0u8..4, flip in any::<bool>(), h in 1usize..9, w in 1usize..9) {
        let (oh, ow) = if rot % 2 == 1 { (w, h) } else { (h, w) };
        let mut seen = HashSet::new();
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = source_coord(rot, flip, h, w, y, x);
                prop_assert!(sy < h && sx < w);
                prop_assert!(seen.insert((sy, sx)));
            }
        }
    }

    #[test]
    fn boundary_rule_commutes_with_rotation(h in 1usize..6, w in 1usize..6,
                                            labels in proptest::collection::vec(0usize..3, 36 * 16)) {
        let f = 2;
        let sub = &labels[..h * f * w * f];
        let rotated = rotate_ccw(sub, h * f, w * f);
        let a = boundary_mask(sub, h, w, f);
        let b = boundary_mask(&rotated, w, h, f);
        prop_assert_eq!(rotate_ccw(a.bits(), h, w), b.bits().to_vec());
    }

    #[test]
    fn tiles_cover_the_image(h in 1usize..100, w in 1usize..100, tile in prop_oneof![Just(16usize), Just(32), Just(48)]) {
        let plan = TilePlan::new(h, w, tile);
        prop_assert!(plan.padded_h >= h && plan.padded_h < h + tile);
        prop_assert!(plan.padded_w >= w && plan.padded_w < w + tile);
        prop_assert_eq!(plan.tiles.len(), (plan.padded_h / tile) * (plan.padded_w / tile));
        let area: usize = plan.tiles.iter().map(|r| r.h * r.w).sum();
        prop_assert_eq!(area, plan.padded_h * plan.padded_w);
    }

    #[test]
    fn crops_fit_their_oriented_image(h in 16usize..40, w in 16usize..40, epoch in 0usize..20, seed in any::<u64>()) {
        let s = Sample::new("p", Tensor::full([3, h, w], 0.5f32), Mask::empty(h, w)).unwrap();
        let set = augment_epoch(&[s], epoch, seed, 16, 5);
        prop_assert_eq!(set.crops.len(), 8);
        for c in &set.crops {
            let (oh, ow) = if c.rotation % 2 == 1 { (w, h) } else { (h, w) };
            prop_assert!(c.y + 16 <= oh && c.x + 16 <= ow);
        }
    }
}
