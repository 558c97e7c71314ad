//! Regression forest: bootstrap rows, random feature subsets per split,
//! weighted squared-error splits, leaf means.

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;

use super::ForestParams;
use crate::stats;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf(f64),
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature as usize] <= threshold { left } else { right } as usize;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

struct Training<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    w: &'a [f64],
    min_leaf: usize,
    max_depth: usize,
    mtry: usize,
}

impl Forest {
    /// Rows are put in a canonical order before fitting, so the fitted forest
    /// does not depend on the order of the training rows.
    pub fn fit(x: ArrayView2<f64>, y: &[f64], w: &[f64], p: &ForestParams, seed: u64) -> Forest {
        let n = x.nrows();
        let k = x.ncols();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            for j in 0..k {
                let c = x[[a, j]].total_cmp(&x[[b, j]]);
                if c.is_ne() {
                    return c;
                }
            }
            y[a].total_cmp(&y[b]).then(w[a].total_cmp(&w[b]))
        });
        let cols: Vec<Vec<f64>> = (0..k).map(|j| order.iter().map(|&i| x[[i, j]]).collect()).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let ws: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let default_mtry = (k as f64).sqrt().ceil() as usize;
        let t = Training {
            cols: &cols,
            y: &ys,
            w: &ws,
            min_leaf: p.min_leaf.max(1),
            max_depth: p.max_depth.unwrap_or(usize::MAX),
            mtry: p.mtry.unwrap_or(default_mtry).clamp(1, k.max(1)),
        };
        let trees = (0..p.n_trees)
            .into_par_iter()
            .map(|b| grow(&t, stats::derive_seed(seed, &[b as u64])))
            .collect();
        Forest { trees }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        x.rows()
            .into_iter()
            .map(|r| {
                for (d, s) in row.iter_mut().zip(r.iter()) {
                    *d = *s;
                }
                let s: f64 = self.trees.iter().map(|t| t.predict(&row)).sum();
                s / self.trees.len() as f64
            })
            .collect()
    }
}

fn leaf_value(t: &Training, idx: &[u32]) -> f64 {
    let (mut sw, mut swy) = (0.0, 0.0);
    for &i in idx {
        sw += t.w[i as usize];
        swy += t.w[i as usize] * t.y[i as usize];
    }
    if sw > 0.0 {
        swy / sw
    } else {
        idx.iter().map(|&i| t.y[i as usize]).sum::<f64>() / idx.len() as f64
    }
}

fn grow(t: &Training, seed: u64) -> Tree {
    let mut rng = stats::rng(seed);
    let n = t.y.len();
    let mut idx: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
    idx.sort_unstable();
    let k = t.cols.len();
    let mut features: Vec<usize> = (0..k).collect();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    let mut buf: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    let mut scratch: Vec<u32> = Vec::with_capacity(n);
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let part = &mut idx[lo..hi];
        let m = part.len();
        let value = leaf_value(t, part);
        if k == 0 || m < 2 * t.min_leaf || depth >= t.max_depth {
            nodes[id] = Node::Leaf(value);
            continue;
        }
        let (mut sw, mut swy) = (0.0, 0.0);
        for &i in part.iter() {
            sw += t.w[i as usize];
            swy += t.w[i as usize] * t.y[i as usize];
        }
        if sw <= 0.0 {
            nodes[id] = Node::Leaf(value);
            continue;
        }
        let parent = swy * swy / sw;
        let mut best: Option<(f64, usize, f64)> = None;
        // Partial Fisher-Yates draw of mtry features.
        for s in 0..t.mtry {
            let r = rng.random_range(s..k);
            features.swap(s, r);
            let f = features[s];
            buf.clear();
            buf.extend(part.iter().map(|&i| {
                let i = i as usize;
                (t.cols[f][i], t.y[i], t.w[i])
            }));
            buf.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut lw, mut lwy) = (0.0, 0.0);
            for i in 0..m - 1 {
                lw += buf[i].2;
                lwy += buf[i].2 * buf[i].1;
                let left_n = i + 1;
                if left_n < t.min_leaf || m - left_n < t.min_leaf || buf[i].0 >= buf[i + 1].0 {
                    continue;
                }
                let rw = sw - lw;
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let rwy = swy - lwy;
                let gain = lwy * lwy / lw + rwy * rwy / rw;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (buf[i].0 + buf[i + 1].0)));
                }
            }
        }
        match best {
            Some((gain, f, thr)) if gain > parent + 1e-12 * parent.abs().max(1e-300) => {
                scratch.clear();
                scratch.extend(part.iter().copied().filter(|&i| t.cols[f][i as usize] <= thr));
                let n_left = scratch.len();
                scratch.extend(part.iter().copied().filter(|&i| t.cols[f][i as usize] > thr));
                part.copy_from_slice(&scratch);
                let left = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[id] = Node::Split {
                    feature: f as u32,
                    threshold: thr,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                stack.push((left + 1, lo + n_left, hi, depth + 1));
                stack.push((left, lo, lo + n_left, depth + 1));
            }
            _ => nodes[id] = Node::Leaf(value),
        }
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

    fn data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = stats::rng(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let y = (0..n)
            .map(|i| if x[[i, 0]] > 0.0 { 2.0 } else { -1.0 } + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn learns_a_step() {
        let (x, y) = data(400, 1);
        let f = Forest::fit(x.view(), &y, &vec![1.0; 400], &ForestParams { n_trees: 50, ..Default::default() }, 3);
        let test = ndarray::array![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]];
        let p = f.predict(test.view());
        assert!((p[0] - 2.0).abs() < 0.3, "{p:?}");
        assert!((p[1] + 1.0).abs() < 0.3, "{p:?}");
    }

    #[test]
    fn constant_target_gives_constant() {
        let (x, _) = data(50, 2);
        let f = Forest::fit(x.view(), &[0.0; 50], &[1.0; 50], &ForestParams { n_trees: 5, ..Default::default() }, 0);
        assert!(f.predict(x.view()).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn leaves_respect_min_size() {
        let (x, y) = data(100, 4);
        let mut t = Forest::fit(x.view(), &y, &[1.0; 100], &ForestParams { n_trees: 1, min_leaf: 20, ..Default::default() }, 0);
        let tree = t.trees.pop().unwrap();
        let leaves = tree.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count();
        assert!(leaves <= 100 / 20);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn row_order_invariant(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let (x, y) = data(60, seed);
            let mut perm: Vec<usize> = (0..60).collect();
            perm.shuffle(&mut stats::rng(shuffle_seed));
            let xp = x.select(ndarray::Axis(0), &perm);
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let p = ForestParams { n_trees: 10, ..Default::default() };
            let a = Forest::fit(x.view(), &y, &[1.0; 60], &p, 11).predict(x.view());
            let b = Forest::fit(xp.view(), &yp, &[1.0; 60], &p, 11).predict(x.view());
            prop_assert_eq!(a, b);
        }
    }
}
