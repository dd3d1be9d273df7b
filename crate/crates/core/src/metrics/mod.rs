//! Boundary-matching precision/recall, ODS, OIS and AP.

mod matching;
mod report;

use rayon::prelude::*;

pub use matching::{match_pixels, offsets, MatchResult};
pub use report::{delta_table, format_delta, DeltaRow};

use crate::error::{Error, Result};
use crate::mask::{EdgeMap, Mask};
use matching::{build_graph, Matcher};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f32,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PrPoint {
    /// `tp / (tp + fp)`, 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_thresholds(thresholds: &[f32]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Contract("empty threshold list".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) || thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Contract("thresholds must be strictly increasing inside (0, 1)".into()));
    }
    Ok(())
}

/// Counts at every threshold (`pred >= t` is an edge). Thresholds are
/// visited from high to low so each matching warm-starts the next.
pub fn pr_sweep(pred: &EdgeMap, gt: &Mask, thresholds: &[f32], d: f64) -> Result<Vec<PrPoint>> {
    check_thresholds(thresholds)?;
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Contract(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let w = pred.width();
    let lowest = thresholds[0];
    let mut candidates: Vec<(usize, usize)> = pred
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= lowest)
        .map(|(i, _)| (i / w, i % w))
        .collect();
    // Highest values first; ties keep row-major order.
    candidates.sort_by(|a, b| pred.get(b.0, b.1).total_cmp(&pred.get(a.0, a.1)).then(a.cmp(b)));
    let (adj, gt_points) = build_graph(&candidates, gt, d);
    let mut matcher = Matcher::new(adj, gt_points.len());
    let mut next = 0;
    let mut out = vec![
        PrPoint {
            threshold: 0.0,
            tp: 0,
            fp: 0,
            fn_: 0
        };
        thresholds.len()
    ];
    for (slot, &t) in thresholds.iter().enumerate().rev() {
        while next < candidates.len() && pred.get(candidates[next].0, candidates[next].1) >= t {
            matcher.activate(next);
            next += 1;
        }
        let tp = matcher.solve();
        out[slot] = PrPoint {
            threshold: t,
            tp,
            fp: next - tp,
            fn_: gt_points.len() - tp,
        };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageBest {
    pub threshold: f32,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Dataset-level counts per threshold.
    pub points: Vec<PrPoint>,
    pub per_image: Vec<ImageBest>,
    pub ods: f64,
    pub ods_threshold: f32,
    /// Mean over images of each image's best F.
    pub ois: f64,
    /// Best F of pooled counts when every image picks its own threshold.
    /// Never below `ods`.
    pub ois_pooled: f64,
    pub ap: f64,
}

/// Area under precision against recall. Points are sorted by recall (ties by
/// descending precision); the curve is extended to recall 0 at the precision
/// of its lowest-recall point and integrated with the trapezoid rule.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall(), p.precision())).collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let Some(&(r0, p0)) = pr.first() else {
        return 0.0;
    };
    let mut area = r0 * p0;
    for w in pr.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area.clamp(0.0, 1.0)
}

fn aggregate(sweeps: &[Vec<PrPoint>], slot: usize) -> PrPoint {
    let mut p = PrPoint {
        threshold: sweeps[0][slot].threshold,
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    for s in sweeps {
        p.tp += s[slot].tp;
        p.fp += s[slot].fp;
        p.fn_ += s[slot].fn_;
    }
    p
}

/// F of pooled counts with one threshold slot chosen per image.
fn pooled_f(sweeps: &[Vec<PrPoint>], choice: &[usize]) -> f64 {
    let mut p = PrPoint {
        threshold: 0.0,
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    for (s, &c) in sweeps.iter().zip(choice) {
        p.tp += s[c].tp;
        p.fp += s[c].fp;
        p.fn_ += s[c].fn_;
    }
    p.f()
}

/// Maximizes pooled F over per-image threshold choices. Pooled F equals
/// `2·TP / (2·TP + FP + FN)` except when both denominators vanish, so the
/// ratio is maximized by Dinkelbach iteration, started from the shared
/// threshold optimum.
fn pooled_ois(sweeps: &[Vec<PrPoint>], ods_slot: usize) -> f64 {
    let all_empty: Option<Vec<usize>> = sweeps
        .iter()
        .map(|s| s.iter().position(|p| p.tp + p.fp == 0 && p.fn_ == 0))
        .collect();
    if let Some(choice) = all_empty {
        return pooled_f(sweeps, &choice);
    }
    let mut best = pooled_f(sweeps, &vec![ods_slot; sweeps.len()]);
    loop {
        let lambda = best;
        let next: Vec<usize> = sweeps
            .iter()
            .map(|s| {
                let score = |p: &PrPoint| 2.0 * p.tp as f64 - lambda * (2 * p.tp + p.fp + p.fn_) as f64;
                let mut arg = 0;
                for (i, p) in s.iter().enumerate() {
                    if score(p) > score(&s[arg]) {
                        arg = i;
                    }
                }
                arg
            })
            .collect();
        let f = pooled_f(sweeps, &next);
        if f <= best {
            return best;
        }
        best = f;
    }
}

/// ODS, OIS and AP over aligned predictions and ground truths.
pub fn dataset_metrics(preds: &[EdgeMap], gts: &[Mask], thresholds: &[f32], d: f64) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(Error::Contract("dataset_metrics on an empty dataset".into()));
    }
    if preds.len() != gts.len() {
        return Err(Error::Contract(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    let sweeps: Vec<Vec<PrPoint>> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| pr_sweep(p, g, thresholds, d))
        .collect::<Result<_>>()?;
    metrics_from_sweeps(&sweeps)
}

/// Same as [`dataset_metrics`] from precomputed per-image sweeps.
pub fn metrics_from_sweeps(sweeps: &[Vec<PrPoint>]) -> Result<MetricReport> {
    if sweeps.is_empty() || sweeps.iter().any(|s| s.len() != sweeps[0].len() || s.is_empty()) {
        return Err(Error::Contract("sweeps must be non-empty and equally long".into()));
    }
    let n = sweeps[0].len();
    let points: Vec<PrPoint> = (0..n).map(|i| aggregate(sweeps, i)).collect();
    let mut ods_slot = 0;
    for (i, p) in points.iter().enumerate() {
        if p.f() > points[ods_slot].f() {
            ods_slot = i;
        }
    }
    let per_image: Vec<ImageBest> = sweeps
        .iter()
        .map(|s| {
            let mut best = 0;
            for (i, p) in s.iter().enumerate() {
                if p.f() > s[best].f() {
                    best = i;
                }
            }
            ImageBest {
                threshold: s[best].threshold,
                f: s[best].f(),
            }
        })
        .collect();
    let ois = per_image.iter().map(|b| b.f).sum::<f64>() / per_image.len() as f64;
    Ok(MetricReport {
        ods: points[ods_slot].f(),
        ods_threshold: points[ods_slot].threshold,
        ois,
        ois_pooled: pooled_ois(sweeps, ods_slot),
        ap: average_precision(&points),
        per_image,
        points,
    })
}
