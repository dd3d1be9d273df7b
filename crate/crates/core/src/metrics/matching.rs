//! Maximum-cardinality matching of predicted to ground-truth edge pixels.

use std::collections::VecDeque;

use crate::mask::Mask;

const NIL: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// `(pred, gt)` pixel coordinates.
    pub pairs: Vec<((usize, usize), (usize, usize))>,
    pub unmatched_pred: Vec<(usize, usize)>,
    pub unmatched_gt: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_pred.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_gt.len()
    }
}

/// Offsets `(dy, dx)` with Euclidean length at most `d`.
pub fn offsets(d: f64) -> Vec<(isize, isize)> {
    let r = d.floor() as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dy * dy + dx * dx) as f64) <= d * d {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Hopcroft-Karp over a left-to-right adjacency, supporting a warm start
/// and left vertices that are switched on over time.
pub(crate) struct Matcher {
    adj: Vec<Vec<usize>>,
    active: Vec<bool>,
    pair_l: Vec<usize>,
    pair_r: Vec<usize>,
    dist: Vec<usize>,
    cursor: Vec<usize>,
    size: usize,
}

impl Matcher {
    pub(crate) fn new(adj: Vec<Vec<usize>>, n_right: usize) -> Self {
        let n = adj.len();
        Matcher {
            adj,
            active: vec![false; n],
            pair_l: vec![NIL; n],
            pair_r: vec![NIL; n_right],
            dist: vec![NIL; n],
            cursor: vec![0; n],
            size: 0,
        }
    }

    pub(crate) fn activate(&mut self, u: usize) {
        self.active[u] = true;
    }

    pub(crate) fn partner(&self, u: usize) -> Option<usize> {
        (self.pair_l[u] != NIL).then_some(self.pair_l[u])
    }

    fn bfs(&mut self) -> bool {
        let mut queue = VecDeque::new();
        for u in 0..self.adj.len() {
            if self.active[u] && self.pair_l[u] == NIL {
                self.dist[u] = 0;
                queue.push_back(u);
            } else {
                self.dist[u] = NIL;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                let w = self.pair_r[v];
                if w == NIL {
                    found = true;
                } else if self.dist[w] == NIL {
                    self.dist[w] = self.dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        found
    }

    fn augment_from(&mut self, root: usize) -> bool {
        let mut stack = vec![root];
        let mut via: Vec<usize> = Vec::new();
        while let Some(&u) = stack.last() {
            if self.cursor[u] == self.adj[u].len() {
                self.dist[u] = NIL;
                stack.pop();
                via.pop();
                continue;
            }
            let v = self.adj[u][self.cursor[u]];
            self.cursor[u] += 1;
            let w = self.pair_r[v];
            if w == NIL {
                via.push(v);
                for (&a, &b) in stack.iter().zip(&via) {
                    self.pair_l[a] = b;
                    self.pair_r[b] = a;
                }
                return true;
            }
            if self.dist[w] != NIL && self.dist[w] == self.dist[u] + 1 {
                via.push(v);
                stack.push(w);
            }
        }
        false
    }

    /// Grows the current matching to maximum cardinality.
    pub(crate) fn solve(&mut self) -> usize {
        while self.bfs() {
            self.cursor.iter_mut().for_each(|c| *c = 0);
            for u in 0..self.adj.len() {
                if self.active[u] && self.pair_l[u] == NIL && self.augment_from(u) {
                    self.size += 1;
                }
            }
        }
        self.size
    }
}

/// Adjacency from each listed pred pixel to gt pixels within `d`, plus the
/// gt pixel list in row-major order.
pub(crate) fn build_graph(pred: &[(usize, usize)], gt: &Mask, d: f64) -> (Vec<Vec<usize>>, Vec<(usize, usize)>) {
    let (h, w) = (gt.height(), gt.width());
    let gt_points = gt.points();
    let mut slot = vec![NIL; h * w];
    for (i, &(y, x)) in gt_points.iter().enumerate() {
        slot[y * w + x] = i;
    }
    let offs = offsets(d);
    let adj = pred
        .iter()
        .map(|&(y, x)| {
            offs.iter()
                .filter_map(|&(dy, dx)| {
                    let (gy, gx) = (y as isize + dy, x as isize + dx);
                    if gy < 0 || gx < 0 || gy >= h as isize || gx >= w as isize {
                        return None;
                    }
                    let s = slot[gy as usize * w + gx as usize];
                    (s != NIL).then_some(s)
                })
                .collect()
        })
        .collect();
    (adj, gt_points)
}

/// Exact maximum matching between pred and gt pixels at distance `<= d`.
pub fn match_pixels(pred: &Mask, gt: &Mask, d: f64) -> MatchResult {
    assert_eq!((pred.height(), pred.width()), (gt.height(), gt.width()), "mask shapes differ");
    let pred_points = pred.points();
    let (adj, gt_points) = build_graph(&pred_points, gt, d);
    let mut m = Matcher::new(adj, gt_points.len());
    (0..pred_points.len()).for_each(|u| m.activate(u));
    m.solve();
    let mut pairs = Vec::new();
    let mut unmatched_pred = Vec::new();
    let mut used = vec![false; gt_points.len()];
    for (u, &p) in pred_points.iter().enumerate() {
        match m.partner(u) {
            Some(v) => {
                used[v] = true;
                pairs.push((p, gt_points[v]));
            }
            None => unmatched_pred.push(p),
        }
    }
    let unmatched_gt = gt_points
        .iter()
        .zip(&used)
        .filter(|(_, &u)| !u)
        .map(|(&p, _)| p)
        .collect();
    MatchResult {
        pairs,
        unmatched_pred,
        unmatched_gt,
    }
}
