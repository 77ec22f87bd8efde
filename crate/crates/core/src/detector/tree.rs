use serde::{Deserialize, Serialize};

use crate::numerics::SeededRng;

/// Split node (`children` set, go left when `x[feature] <= threshold`) or
/// leaf (`children` empty, output `value`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    pub children: Option<[usize; 2]>,
    pub value: f64,
}

/// Binary tree stored as a node list; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.children {
                Some([l, r]) => i = if x[n.feature] <= n.threshold { l } else { r },
                None => return n.value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].children {
                Some([l, r]) => 1 + go(t, l).max(go(t, r)),
                None => 0,
            }
        }
        go(self, 0)
    }

    pub(crate) fn is_valid(&self, dim: usize) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, n)| match n.children {
                Some([l, r]) => n.feature < dim && l > i && r > i && l < self.nodes.len() && r < self.nodes.len(),
                None => n.value.is_finite(),
            })
    }
}

/// Node statistic and split score.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Criterion {
    /// Per-sample stats `(label, 1)`; maximizes Σ (n₁² + n₀²)/n (Gini), leaf = n₁/n.
    Gini,
    /// Per-sample stats `(g, h)`; maximizes Σ G²/(H + λ), leaf = −G/(H + λ).
    Newton { lambda: f64 },
}

impl Criterion {
    fn score(self, s1: f64, s2: f64, count: usize) -> f64 {
        match self {
            Criterion::Gini => {
                let n = count as f64;
                (s1 * s1 + (n - s1) * (n - s1)) / n
            }
            Criterion::Newton { lambda } => s1 * s1 / (s2 + lambda),
        }
    }

    fn leaf(self, s1: f64, s2: f64, count: usize) -> f64 {
        match self {
            Criterion::Gini => s1 / count as f64,
            Criterion::Newton { lambda } => -s1 / (s2 + lambda),
        }
    }
}

pub(crate) struct GrowParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub max_features: usize,
    pub min_samples_leaf: usize,
}

/// Grows one tree over the (possibly repeated) sample indices `rows`.
pub(crate) fn grow(x: &[Vec<f64>], stats: &[(f64, f64)], rows: Vec<usize>, p: &GrowParams, rng: &mut SeededRng) -> Tree {
    let dim = x[0].len();
    let mut nodes = Vec::new();
    // (node index, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(TreeNode { feature: 0, threshold: 0.0, children: None, value: 0.0 });
    let mut features: Vec<usize> = (0..dim).collect();
    while let Some((id, rows, depth)) = stack.pop() {
        let (s1, s2) = rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + stats[i].0, b + stats[i].1));
        nodes[id].value = p.criterion.leaf(s1, s2, rows.len());
        let pure = matches!(p.criterion, Criterion::Gini) && (s1 == 0.0 || s1 == rows.len() as f64);
        if pure || rows.len() < 2 * p.min_samples_leaf || p.max_depth.is_some_and(|d| depth >= d) {
            continue;
        }
        let parent = p.criterion.score(s1, s2, rows.len());
        // partial Fisher-Yates: the first max_features entries are the sample
        let k = p.max_features.min(dim);
        if k < dim {
            for i in 0..k {
                let j = i + rng.below(dim - i);
                features.swap(i, j);
            }
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.clone();
        for &f in &features[..k] {
            sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            let (mut l1, mut l2) = (0.0, 0.0);
            for pos in 0..sorted.len() - 1 {
                let i = sorted[pos];
                l1 += stats[i].0;
                l2 += stats[i].1;
                let (nl, nr) = (pos + 1, sorted.len() - pos - 1);
                let (a, b) = (x[i][f], x[sorted[pos + 1]][f]);
                if a == b || nl < p.min_samples_leaf || nr < p.min_samples_leaf {
                    continue;
                }
                let gain = p.criterion.score(l1, l2, nl) + p.criterion.score(s1 - l1, s2 - l2, nr) - parent;
                if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                    let mut thr = a + (b - a) / 2.0;
                    if thr >= b {
                        thr = a;
                    }
                    best = Some((gain, f, thr));
                }
            }
        }
        if let Some((_, f, thr)) = best {
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= thr);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(TreeNode { feature: 0, threshold: 0.0, children: None, value: 0.0 });
            nodes.push(TreeNode { feature: 0, threshold: 0.0, children: None, value: 0.0 });
            nodes[id].feature = f;
            nodes[id].threshold = thr;
            nodes[id].children = Some([l, r]);
            stack.push((r, right, depth + 1));
            stack.push((l, left, depth + 1));
        }
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_tree_separates_a_threshold() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.0]).collect();
        let stats: Vec<(f64, f64)> = (0..10).map(|i| (if i >= 6 { 1.0 } else { 0.0 }, 1.0)).collect();
        let p = GrowParams { criterion: Criterion::Gini, max_depth: None, max_features: 2, min_samples_leaf: 1 };
        let t = grow(&x, &stats, (0..10).collect(), &p, &mut SeededRng::new(0));
        assert_eq!(t.nodes.len(), 3);
        assert_eq!((t.nodes[0].feature, t.nodes[0].threshold), (0, 5.5));
        assert_eq!(t.leaf_value(&[2.0, 0.0]), 0.0);
        assert_eq!(t.leaf_value(&[7.0, 0.0]), 1.0);
        assert!(t.is_valid(2));
    }

    #[test]
    fn newton_leaves_and_depth_cap() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let stats: Vec<(f64, f64)> = (0..8).map(|i| (if i < 4 { 0.5 } else { -0.5 }, 0.25)).collect();
        let p = GrowParams { criterion: Criterion::Newton { lambda: 1.0 }, max_depth: Some(1), max_features: 1, min_samples_leaf: 1 };
        let t = grow(&x, &stats, (0..8).collect(), &p, &mut SeededRng::new(0));
        assert_eq!(t.depth(), 1);
        // -G/(H+λ) = -(4·0.5)/(4·0.25+1)
        assert!((t.leaf_value(&[0.0]) + 1.0).abs() < 1e-12);
        assert!((t.leaf_value(&[7.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_features_give_a_leaf() {
        let x = vec![vec![1.0]; 4];
        let stats = vec![(0.0, 1.0), (1.0, 1.0), (0.0, 1.0), (1.0, 1.0)];
        let p = GrowParams { criterion: Criterion::Gini, max_depth: None, max_features: 1, min_samples_leaf: 1 };
        let t = grow(&x, &stats, (0..4).collect(), &p, &mut SeededRng::new(0));
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, 0.5);
    }
}
