use edgesel_core::config::threshold_levels;
use edgesel_core::metrics::{
    average_precision, dataset_metrics, delta_table, format_delta, match_pixels, metrics_from_sweeps, offsets,
    pr_sweep, DeltaRow, PrPoint,
};
use edgesel_core::{EdgeMap, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Exhaustive maximum matching, fine for a handful of points per side.
fn brute_matching(pred: &[(usize, usize)], gt: &[(usize, usize)], d: f64) -> usize {
    fn close(a: (usize, usize), b: (usize, usize), d: f64) -> bool {
        let dy = a.0 as f64 - b.0 as f64;
        let dx = a.1 as f64 - b.1 as f64;
        dy * dy + dx * dx <= d * d
    }
    fn go(i: usize, used: u32, pred: &[(usize, usize)], gt: &[(usize, usize)], d: f64) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, used, pred, gt, d);
        for (j, &g) in gt.iter().enumerate() {
            if used & (1 << j) == 0 && close(pred[i], g, d) {
                best = best.max(1 + go(i + 1, used | (1 << j), pred, gt, d));
            }
        }
        best
    }
    go(0, 0, pred, gt, d)
}

fn f_of(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

struct Oracle {
    ods: f64,
    ois: f64,
    ap: f64,
    counts: Vec<(usize, usize, usize)>,
}

fn oracle(preds: &[EdgeMap], gts: &[Mask], ts: &[f32], d: f64) -> Oracle {
    let mut per_image = vec![vec![(0, 0, 0); ts.len()]; preds.len()];
    for (k, (p, g)) in preds.iter().zip(gts).enumerate() {
        let gp = g.points();
        for (i, &t) in ts.iter().enumerate() {
            let mut pp = Vec::new();
            for y in 0..p.height() {
                for x in 0..p.width() {
                    if p.get(y, x) >= t {
                        pp.push((y, x));
                    }
                }
            }
            let tp = brute_matching(&pp, &gp, d);
            per_image[k][i] = (tp, pp.len() - tp, gp.len() - tp);
        }
    }
    let counts: Vec<(usize, usize, usize)> = (0..ts.len())
        .map(|i| {
            per_image.iter().fold((0, 0, 0), |a, c| (a.0 + c[i].0, a.1 + c[i].1, a.2 + c[i].2))
        })
        .collect();
    let ods = counts.iter().map(|&(a, b, c)| f_of(a, b, c)).fold(0.0, f64::max);
    let ois = per_image
        .iter()
        .map(|c| c.iter().map(|&(a, b, c)| f_of(a, b, c)).fold(0.0, f64::max))
        .sum::<f64>()
        / preds.len() as f64;
    let mut pr: Vec<(f64, f64)> = counts
        .iter()
        .map(|&(tp, fp, fn_)| {
            let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
            (r, p)
        })
        .collect();
    pr.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.partial_cmp(&a.1).unwrap()));
    let mut ap = pr[0].0 * pr[0].1;
    for i in 1..pr.len() {
        ap += (pr[i].0 - pr[i - 1].0) * (pr[i].1 + pr[i - 1].1) * 0.5;
    }
    Oracle { ods, ois, ap, counts }
}

// Up to 8 edge pixels on each side of a small image.
fn fixture(rng: &mut ChaCha8Rng, images: usize) -> (Vec<EdgeMap>, Vec<Mask>) {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let h = rng.gen_range(3..9);
        let w = rng.gen_range(3..9);
        let mut g = Mask::empty(h, w);
        for _ in 0..rng.gen_range(0..=8) {
            g.set(rng.gen_range(0..h), rng.gen_range(0..w), true);
        }
        let mut data = vec![0.0f32; h * w];
        for _ in 0..rng.gen_range(0..=8) {
            data[rng.gen_range(0..h * w)] = rng.gen_range(0.05..0.99);
        }
        preds.push(EdgeMap::new(h, w, data).unwrap());
        gts.push(g);
    }
    (preds, gts)
}

#[test]
fn matches_brute_force_on_random_fixtures() {
    let ts = threshold_levels(9);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = 1 + case % 4;
        let (preds, gts) = fixture(&mut rng, n);
        let r = dataset_metrics(&preds, &gts, &ts, 1.0).unwrap();
        let o = oracle(&preds, &gts, &ts, 1.0);
        for (p, c) in r.points.iter().zip(&o.counts) {
            assert_eq!((p.tp, p.fp, p.fn_), *c, "case {case}");
        }
        assert!((r.ods - o.ods).abs() < 1e-12, "case {case}");
        assert!((r.ois - o.ois).abs() < 1e-12, "case {case}");
        assert!((r.ap - o.ap).abs() < 1e-12, "case {case}");
        for v in [r.ods, r.ois, r.ois_pooled, r.ap] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(r.ois_pooled >= r.ods - 1e-12);
    }
}

#[test]
fn neighbour_within_one_pixel_matches() {
    let mut p = Mask::empty(10, 10);
    let mut g = Mask::empty(10, 10);
    p.set(5, 5, true);
    g.set(5, 6, true);
    let m = match_pixels(&p, &g, 1.0);
    assert_eq!((m.tp(), m.fp(), m.fn_()), (1, 0, 0));
    assert_eq!(m.pairs, vec![((5, 5), (5, 6))]);

    // diagonal neighbour is sqrt(2) away
    let mut g = Mask::empty(10, 10);
    g.set(6, 6, true);
    let m = match_pixels(&p, &g, 1.0);
    assert_eq!((m.tp(), m.fp(), m.fn_()), (0, 1, 1));
    assert_eq!(match_pixels(&p, &g, 1.5).tp(), 1);
}

#[test]
fn zero_tolerance_is_exact_coincidence() {
    assert_eq!(offsets(0.0), vec![(0, 0)]);
    assert_eq!(offsets(1.0).len(), 5);
    assert_eq!(offsets(1.5).len(), 9);
    let p = Mask::from_fn(6, 6, |y, x| (y + x) % 3 == 0);
    let g = Mask::from_fn(6, 6, |y, x| (y + x) % 3 == 0 || x == 5);
    let m = match_pixels(&p, &g, 0.0);
    assert_eq!(m.tp(), p.count());
    assert_eq!(m.fn_(), g.count() - p.count());
}

#[test]
fn one_to_one_matching() {
    // two predictions compete for one boundary pixel
    let mut p = Mask::empty(5, 5);
    let mut g = Mask::empty(5, 5);
    p.set(2, 1, true);
    p.set(2, 3, true);
    g.set(2, 2, true);
    let m = match_pixels(&p, &g, 1.0);
    assert_eq!((m.tp(), m.fp(), m.fn_()), (1, 1, 0));
}

#[test]
fn prediction_equal_to_gt() {
    let g = Mask::from_fn(12, 12, |y, x| x == 4 || y == 7);
    let m = match_pixels(&g, &g, 1.0);
    assert_eq!((m.tp(), m.fp(), m.fn_()), (g.count(), 0, 0));
    let ts = threshold_levels(99);
    let sweep = pr_sweep(&EdgeMap::from_mask(&g), &g, &ts, 1.0).unwrap();
    for p in &sweep {
        assert_eq!(p.precision(), 1.0);
        assert_eq!(p.recall(), 1.0);
    }
}

#[test]
fn perfect_prediction_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gts: Vec<Mask> = (0..4)
        .map(|_| Mask::new(16, 16, (0..256).map(|_| rng.gen_bool(0.2)).collect()).unwrap())
        .collect();
    let preds: Vec<EdgeMap> = gts.iter().map(EdgeMap::from_mask).collect();
    let r = dataset_metrics(&preds, &gts, &threshold_levels(99), 1.0).unwrap();
    assert_eq!(r.ods, 1.0);
    assert_eq!(r.ois, 1.0);
    assert_eq!(r.ap, 1.0);
}

#[test]
fn constant_half_map() {
    // everything above 0.5 is predicted, nothing is at or above 0.51
    let g = Mask::from_fn(8, 8, |y, _| y == 3);
    let pred = EdgeMap::new(8, 8, vec![0.5; 64]).unwrap();
    let ts = threshold_levels(99);
    let sweep = pr_sweep(&pred, &g, &ts, 1.0).unwrap();
    for p in &sweep {
        if p.threshold <= 0.5 {
            assert_eq!((p.tp, p.fp, p.fn_), (8, 56, 0), "t {}", p.threshold);
        } else {
            assert_eq!((p.tp, p.fp, p.fn_), (0, 0, 8), "t {}", p.threshold);
        }
    }
    let r = dataset_metrics(&[pred], &[g], &ts, 1.0).unwrap();
    let p = 8.0 / 64.0;
    assert!((r.ods - 2.0 * p / (p + 1.0)).abs() < 1e-12);
}

#[test]
fn reference_sweep_6x6() {
    let g = Mask::from_fn(6, 6, |_, x| x == 2);
    let mut data = vec![0.0f32; 36];
    data[2] = 0.9; // (0,2) exact
    data[6 + 3] = 0.7; // (1,3) one pixel off
    data[2 * 6 + 5] = 0.6; // (2,5) too far
    data[4 * 6 + 2] = 0.3; // (4,2) exact
    let pred = EdgeMap::new(6, 6, data).unwrap();
    let ts = [0.2, 0.5, 0.8];
    let s = pr_sweep(&pred, &g, &ts, 1.0).unwrap();
    let counts: Vec<_> = s.iter().map(|p| (p.tp, p.fp, p.fn_)).collect();
    assert_eq!(counts, vec![(3, 1, 3), (2, 1, 4), (1, 0, 5)]);
}

#[test]
fn ois_can_exceed_ods() {
    // each image wants a different threshold
    let g = Mask::from_fn(4, 4, |y, x| y == 1 && x == 1);
    let mut a = vec![0.0f32; 16];
    a[5] = 0.9;
    a[0] = 0.3;
    let mut b = vec![0.0f32; 16];
    b[5] = 0.3;
    let preds = vec![EdgeMap::new(4, 4, a).unwrap(), EdgeMap::new(4, 4, b).unwrap()];
    let gts = vec![g.clone(), g];
    let r = dataset_metrics(&preds, &gts, &[0.2, 0.5, 0.8], 1.0).unwrap();
    assert_eq!(r.ois, 1.0);
    assert!((r.ods - 0.8).abs() < 1e-12);
    assert!(r.ois_pooled >= r.ods);
}

#[test]
fn average_precision_convention() {
    let pt = |tp, fp, fn_| PrPoint { threshold: 0.5, tp, fp, fn_ };
    // single point: rectangle from recall 0
    assert!((average_precision(&[pt(1, 1, 1)]) - 0.25).abs() < 1e-12);
    // (r, p) = (0.5, 1) and (1, 0.5): 0.5 + 0.5 * 0.75
    let ap = average_precision(&[pt(2, 2, 0), pt(1, 0, 1)]);
    assert!((ap - 0.875).abs() < 1e-12);
    assert_eq!(average_precision(&[]), 0.0);
}

#[test]
fn delta_matches_published_arithmetic() {
    assert_eq!(format_delta(0.592, 0.655), "+10.64%");
    assert_eq!(format_delta(0.700, 0.693), "-1.00%");
    assert_eq!(format_delta(0.0, 0.5), "n/a");
    let t = delta_table(&[DeltaRow { metric: "ODS".into(), baseline: 0.592, selected: 0.655 }]);
    assert!(t.lines().nth(1).unwrap().contains("0.655 (+10.64%)"), "{t}");
}

#[test]
fn report_csv_layout() {
    let g = Mask::from_fn(6, 6, |y, _| y == 2);
    let r = dataset_metrics(&[EdgeMap::from_mask(&g)], &[g], &[0.25, 0.5, 0.75], 1.0).unwrap();
    let csv = r.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("threshold,precision,recall,f,tp,fp,fn"));
    assert_eq!(lines.next(), Some("0.25,1.000000,1.000000,1.000000,6,0,0"));
    assert!(csv.contains("\nods,1.000000\n"));
    assert!(csv.contains("\nap,1.000000\n"));
    assert_eq!(r.curve_csv().lines().count(), 4);
}

#[test]
fn contract_errors() {
    let g = Mask::empty(4, 4);
    let p = EdgeMap::new(4, 5, vec![0.0; 20]).unwrap();
    assert!(pr_sweep(&p, &g, &[0.5], 1.0).is_err());
    let p = EdgeMap::from_mask(&g);
    assert!(pr_sweep(&p, &g, &[], 1.0).is_err());
    assert!(pr_sweep(&p, &g, &[0.5, 0.4], 1.0).is_err());
    assert!(dataset_metrics(&[], &[], &[0.5], 1.0).is_err());
    assert!(dataset_metrics(&[p], &[], &[0.5], 1.0).is_err());
    assert!(metrics_from_sweeps(&[]).is_err());
}

fn small_mask() -> impl Strategy<Value = Mask> {
    (2usize..10, 2usize..10)
        .prop_flat_map(|(h, w)| proptest::collection::vec(proptest::bool::weighted(0.25), h * w).prop_map(move |b| Mask::new(h, w, b).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matching_is_valid(pair in small_mask().prop_flat_map(|g| {
        let (h, w) = (g.height(), g.width());
        (Just(g), proptest::collection::vec(proptest::bool::weighted(0.25), h * w).prop_map(move |b| Mask::new(h, w, b).unwrap()))
    }), d in prop_oneof![Just(0.0), Just(1.0), Just(1.5), Just(2.0)]) {
        let (g, p) = pair;
        let m = match_pixels(&p, &g, d);
        prop_assert_eq!(m.tp() + m.fp(), p.count());
        prop_assert_eq!(m.tp() + m.fn_(), g.count());
        let mut seen_p = std::collections::HashSet::new();
        let mut seen_g = std::collections::HashSet::new();
        for &(a, b) in &m.pairs {
            prop_assert!(p.get(a.0, a.1) && g.get(b.0, b.1));
            prop_assert!(seen_p.insert(a) && seen_g.insert(b));
            let dy = a.0 as f64 - b.0 as f64;
            let dx = a.1 as f64 - b.1 as f64;
            prop_assert!(dy * dy + dx * dx <= d * d);
        }
        // maximum matching is symmetric in its two sides
        prop_assert_eq!(match_pixels(&g, &p, d).tp(), m.tp());
    }
}
