//! Regression trees and quantile forests (QRF: variance splits, bootstrap with
//! replacement; GRF: distribution-difference splits, subsampling without
//! replacement).

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::seed;
use crate::domain::{QuantileForecast, QuantileLevels};
use crate::error::{Error, Result};
use crate::features::PredictorMatrix;
use crate::verify::sample_quantile_sorted;

/// Pilot levels whose exceedance indicators drive distribution splits.
pub const PILOT_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    Variance,
    Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        improvement: f64,
    },
    /// Training-case indices (with multiplicity) reaching this leaf.
    Leaf { cases: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf_for(&self, row: &[f64]) -> &[u32] {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { cases } => return cases,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => k = if row[*feature as usize] <= *threshold { *left } else { *right } as usize,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split {
                feature,
                threshold,
                improvement,
                ..
            } => Some((*feature as usize, *threshold, *improvement)),
            Node::Leaf { .. } => None,
        })
    }
}

/// Column-major view used while growing.
pub(crate) struct Columns<'a> {
    pub cols: Vec<Vec<f64>>,
    /// Rank of each column's name in lexicographic order (tie-breaking).
    pub name_rank: Vec<usize>,
    pub y: &'a [f64],
}

impl<'a> Columns<'a> {
    pub fn new(matrix: &PredictorMatrix, y: &'a [f64]) -> Self {
        let names = matrix.names();
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| names[a].cmp(&names[b]));
        let mut name_rank = vec![0; names.len()];
        for (r, &j) in order.iter().enumerate() {
            name_rank[j] = r;
        }
        Columns {
            cols: (0..matrix.n_cols()).map(|j| matrix.column(j)).collect(),
            name_rank,
            y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    pub criterion: f64,
    /// Number of sample entries going left in sorted order.
    pub n_left: usize,
}

impl BestSplit {
    pub(crate) fn beats(&self, other: &Option<BestSplit>, rank: &[usize]) -> bool {
        match other {
            None => true,
            Some(o) => {
                if self.criterion != o.criterion {
                    return self.criterion > o.criterion;
                }
                if rank[self.feature] != rank[o.feature] {
                    return rank[self.feature] < rank[o.feature];
                }
                self.threshold < o.threshold
            }
        }
    }
}

/// Per-entry targets of a criterion: one column for variance splits, the
/// pilot exceedance indicators for distribution splits.
fn targets(rule: SplitRule, y: &[f64], idx: &[u32]) -> Vec<Vec<f64>> {
    match rule {
        SplitRule::Variance => vec![idx.iter().map(|&i| y[i as usize]).collect()],
        SplitRule::Distribution => {
            let mut vals: Vec<f64> = idx.iter().map(|&i| y[i as usize]).collect();
            vals.sort_by(f64::total_cmp);
            PILOT_LEVELS
                .iter()
                .map(|&q| {
                    let pilot = sample_quantile_sorted(&vals, q);
                    idx.iter().map(|&i| f64::from(u8::from(y[i as usize] > pilot))).collect()
                })
                .collect()
        }
    }
}

/// Total within-node sum of squares of the targets, 0 when it is rounding
/// noise. A split criterion never exceeds it, so it scales the "no real
/// improvement" cut-off.
pub(crate) fn spread(tgt: &[Vec<f64>]) -> f64 {
    let mut ss = 0.0;
    let mut raw = 0.0;
    for t in tgt {
        let m = t.iter().sum::<f64>() / t.len() as f64;
        ss += t.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        raw += t.iter().map(|v| v * v).sum::<f64>();
    }
    if ss > 1e-14 * raw {
        ss
    } else {
        0.0
    }
}

/// `n_L n_R / n * sum_t (mean_L t - mean_R t)^2` for every admissible split of
/// `idx` on `feature`; returns the best.
pub(crate) fn best_split_on(
    data: &Columns,
    idx: &[u32],
    feature: usize,
    tgt: &[Vec<f64>],
    min_leaf: usize,
) -> Option<BestSplit> {
    let x = &data.cols[feature];
    let n = idx.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[idx[a] as usize].total_cmp(&x[idx[b] as usize]));
    let totals: Vec<f64> = tgt.iter().map(|t| t.iter().sum()).collect();
    let mut left = vec![0.0; tgt.len()];
    let mut best: Option<BestSplit> = None;
    for pos in 0..n - 1 {
        let e = order[pos];
        for (l, t) in left.iter_mut().zip(tgt) {
            *l += t[e];
        }
        let nl = pos + 1;
        let nr = n - nl;
        let xv = x[idx[e] as usize];
        let xn = x[idx[order[pos + 1]] as usize];
        if nl < min_leaf || nr < min_leaf || xv == xn {
            continue;
        }
        let (nlf, nrf) = (nl as f64, nr as f64);
        let crit = nlf * nrf / n as f64
            * left
                .iter()
                .zip(&totals)
                .map(|(l, tot)| (l / nlf - (tot - l) / nrf).powi(2))
                .sum::<f64>();
        let cand = BestSplit {
            feature,
            threshold: 0.5 * (xv + xn),
            criterion: crit,
            n_left: nl,
        };
        if cand.beats(&best, &data.name_rank) {
            best = Some(cand);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub rule: SplitRule,
    pub min_leaf: usize,
    /// Fraction of predictors tried at each node.
    pub predictor_fraction: f64,
}

/// Grows one tree on the sample `idx` (entries may repeat). Predictor
/// subsets are drawn from `rng` at each node.
pub(crate) fn grow_tree(data: &Columns, idx: Vec<u32>, cfg: &TreeConfig, rng: &mut impl Rng) -> RegressionTree {
    let p = data.cols.len();
    let mtry = ((p as f64 * cfg.predictor_fraction).floor() as usize).clamp(1, p);
    let mut nodes = vec![Node::Leaf { cases: vec![] }];
    let mut stack = vec![(0usize, idx)];
    while let Some((slot, idx)) = stack.pop() {
        let mut chosen = None;
        if idx.len() >= 2 * cfg.min_leaf {
            let tgt = targets(cfg.rule, data.y, &idx);
            let mut features: Vec<usize> = if mtry == p {
                (0..p).collect()
            } else {
                sample(rng, p, mtry).into_vec()
            };
            features.sort_unstable();
            let mut best: Option<BestSplit> = None;
            for f in features {
                if let Some(c) = best_split_on(data, &idx, f, &tgt, cfg.min_leaf) {
                    if c.beats(&best, &data.name_rank) {
                        best = Some(c);
                    }
                }
            }
            let ss = spread(&tgt);
            chosen = best.filter(|b| ss > 0.0 && b.criterion > 1e-10 * ss);
        }
        match chosen {
            None => nodes[slot] = Node::Leaf { cases: idx },
            Some(b) => {
                let x = &data.cols[b.feature];
                let (l, r): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&i| x[i as usize] <= b.threshold);
                debug_assert_eq!(l.len(), b.n_left);
                let li = nodes.len() as u32;
                nodes.push(Node::Leaf { cases: vec![] });
                nodes.push(Node::Leaf { cases: vec![] });
                nodes[slot] = Node::Split {
                    feature: b.feature as u32,
                    threshold: b.threshold,
                    left: li,
                    right: li + 1,
                    improvement: b.criterion,
                };
                stack.push((li as usize + 1, r));
                stack.push((li as usize, l));
            }
        }
    }
    RegressionTree { nodes }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestHyper {
    pub trees: usize,
    pub min_leaf: usize,
    pub sample_fraction: f64,
    pub predictor_fraction: f64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        ForestHyper {
            trees: 500,
            min_leaf: 5,
            sample_fraction: 0.5,
            predictor_fraction: 1.0 / 3.0,
        }
    }
}

impl ForestHyper {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.min_leaf == 0 {
            return Err(Error::Config("forest trees and min_leaf must be positive".into()));
        }
        for (k, v) in [("sample_fraction", self.sample_fraction), ("predictor_fraction", self.predictor_fraction)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("forest {k} must lie in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub rule: SplitRule,
    pub with_replacement: bool,
    pub hyper: ForestHyper,
    pub seed: u64,
    pub predictors: Vec<String>,
    pub trees: Vec<RegressionTree>,
    pub y_train: Vec<f64>,
}

/// Grows a forest. QRF: variance rule with replacement; GRF: distribution
/// rule without replacement.
pub fn fit_forest(
    matrix: &PredictorMatrix,
    y: &[f64],
    rule: SplitRule,
    with_replacement: bool,
    hyper: &ForestHyper,
    seed: u64,
) -> Result<Forest> {
    hyper.validate()?;
    let n = matrix.n_rows();
    if y.len() != n {
        return Err(Error::Structural("observation count differs from matrix rows".into()));
    }
    if n == 0 {
        return Err(Error::EmptyMatrix { dropped: matrix.dropped() });
    }
    let data = Columns::new(matrix, y);
    let m = ((n as f64 * hyper.sample_fraction).round() as usize).clamp(1, n);
    let cfg = TreeConfig {
        rule,
        min_leaf: hyper.min_leaf,
        predictor_fraction: hyper.predictor_fraction,
    };
    let trees = (0..hyper.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::stream(seed, &[seed::tag("tree"), t as u64]);
            let idx: Vec<u32> = if with_replacement {
                (0..m).map(|_| rng.random_range(0..n) as u32).collect()
            } else if m == n {
                (0..n as u32).collect()
            } else {
                sample(&mut rng, n, m).into_iter().map(|i| i as u32).collect()
            };
            grow_tree(&data, idx, &cfg, &mut rng)
        })
        .collect();
    Ok(Forest {
        rule,
        with_replacement,
        hyper: *hyper,
        seed,
        predictors: matrix.names().to_vec(),
        trees,
        y_train: y.to_vec(),
    })
}

/// Inverse of the weighted ECDF at each level; `pairs` sorted by value.
pub fn weighted_quantiles(pairs: &[(f64, f64)], levels: &[f64]) -> Vec<f64> {
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(levels.len());
    let mut k = 0;
    let mut cum = pairs[0].1 / total;
    for &q in levels {
        while cum < q - 1e-12 && k + 1 < pairs.len() {
            k += 1;
            cum += pairs[k].1 / total;
        }
        out.push(pairs[k].0);
    }
    out
}

impl Forest {
    /// Each tree spreads weight 1/trees evenly over its leaf entries.
    pub fn case_weights(&self, row: &[f64]) -> BTreeMap<u32, f64> {
        let mut w = BTreeMap::new();
        let t = self.trees.len() as f64;
        for tree in &self.trees {
            let leaf = tree.leaf_for(row);
            let each = 1.0 / (t * leaf.len() as f64);
            for &c in leaf {
                *w.entry(c).or_insert(0.0) += each;
            }
        }
        w
    }

    pub fn quantiles_row(&self, row: &[f64], levels: &QuantileLevels) -> Result<QuantileForecast> {
        let w = self.case_weights(row);
        if w.is_empty() {
            return Err(Error::Prediction("empty pooled leaf set".into()));
        }
        let mut pairs: Vec<(f64, f64)> = w.into_iter().map(|(c, wt)| (self.y_train[c as usize], wt)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        QuantileForecast::from_raw(levels.clone(), weighted_quantiles(&pairs, levels.as_slice()))
    }

    pub fn predict(&self, matrix: &PredictorMatrix, levels: &QuantileLevels) -> Result<Vec<QuantileForecast>> {
        if matrix.names() != self.predictors.as_slice() {
            let cols = super::qr::resolve(&self.predictors, matrix)?;
            return matrix
                .rows()
                .map(|r| self.quantiles_row(&cols.iter().map(|&j| r[j]).collect::<Vec<_>>(), levels))
                .collect();
        }
        matrix.rows().map(|r| self.quantiles_row(r, levels)).collect()
    }

    /// Sum of split improvements per predictor, averaged over trees.
    pub fn importance(&self) -> BTreeMap<String, f64> {
        let mut imp: BTreeMap<String, f64> = self.predictors.iter().map(|p| (p.clone(), 0.0)).collect();
        let t = self.trees.len() as f64;
        for tree in &self.trees {
            for (f, _, gain) in tree.splits() {
                *imp.get_mut(&self.predictors[f]).expect("known predictor") += gain / t;
            }
        }
        imp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_clusters(n: usize, seed: u64) -> (PredictorMatrix, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x1: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { -1.0 - rng.random::<f64>() } else { 1.0 + rng.random::<f64>() }).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y = x1.iter().map(|v| if *v < 0.0 { 0.2 } else { 0.9 }).collect();
        (PredictorMatrix::from_columns(vec!["X1".into(), "X2".into()], &[x1, x2]).unwrap(), y)
    }

    fn full(rule: SplitRule) -> TreeConfig {
        TreeConfig {
            rule,
            min_leaf: 5,
            predictor_fraction: 1.0,
        }
    }

    #[test]
    fn two_clusters_split_cleanly_under_both_rules() {
        let (m, y) = two_clusters(60, 1);
        let data = Columns::new(&m, &y);
        for rule in [SplitRule::Variance, SplitRule::Distribution] {
            let mut rng = seed::stream(0, &[]);
            let t = grow_tree(&data, (0..60).collect(), &full(rule), &mut rng);
            match &t.nodes[0] {
                Node::Split { feature, threshold, .. } => {
                    assert_eq!(*feature, 0);
                    assert!(*threshold > -1.0 && *threshold < 1.0);
                }
                other => panic!("{other:?}"),
            }
            // children are pure, so nothing below the root splits
            assert_eq!(t.n_leaves(), 2);
            for node in &t.nodes {
                if let Node::Leaf { cases } = node {
                    let v = y[cases[0] as usize];
                    assert!(cases.iter().all(|&c| y[c as usize] == v));
                }
            }
        }
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let (m, _) = two_clusters(40, 2);
        let y = vec![0.5; 40];
        let data = Columns::new(&m, &y);
        for rule in [SplitRule::Variance, SplitRule::Distribution] {
            let t = grow_tree(&data, (0..40).collect(), &full(rule), &mut seed::stream(0, &[]));
            assert_eq!(t.nodes.len(), 1);
        }
    }

    #[test]
    fn ten_cases_split_at_most_once() {
        let (m, y) = two_clusters(10, 3);
        let data = Columns::new(&m, &y);
        let t = grow_tree(&data, (0..10).collect(), &full(SplitRule::Variance), &mut seed::stream(0, &[]));
        assert!(t.splits().count() <= 1);
    }

    /// Brute-force evaluation of the distribution criterion for a split.
    fn brute_distribution(y: &[f64], left: &[usize], right: &[usize]) -> f64 {
        let mut all = y.to_vec();
        all.sort_by(f64::total_cmp);
        let (nl, nr) = (left.len() as f64, right.len() as f64);
        PILOT_LEVELS
            .iter()
            .map(|&q| {
                let pilot = sample_quantile_sorted(&all, q);
                let ml = left.iter().filter(|&&i| y[i] > pilot).count() as f64 / nl;
                let mr = right.iter().filter(|&&i| y[i] > pilot).count() as f64 / nr;
                (ml - mr).powi(2)
            })
            .sum::<f64>()
            * nl
            * nr
            / (nl + nr)
    }

    #[test]
    fn distribution_rule_separates_spread() {
        // Equal means: X1 < 0 has y in {0.4, 0.6}, X1 > 0 has y in {0.0, 1.0}.
        let n = 40;
        let x1: Vec<f64> = (0..n).map(|i| if i < 20 { -1.0 - i as f64 * 0.01 } else { 1.0 + i as f64 * 0.01 }).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| match (i < 20, i % 2 == 0) {
                (true, true) => 0.4,
                (true, false) => 0.6,
                (false, true) => 0.0,
                (false, false) => 1.0,
            })
            .collect();
        let m = PredictorMatrix::from_columns(vec!["X1".into(), "X2".into()], &[x1, x2]).unwrap();
        let data = Columns::new(&m, &y);
        let idx: Vec<u32> = (0..n as u32).collect();
        let var = best_split_on(&data, &idx, 0, &targets(SplitRule::Variance, &y, &idx), 5).unwrap();
        let left: Vec<usize> = (0..20).collect();
        let right: Vec<usize> = (20..40).collect();
        // variance criterion is indifferent at the group boundary
        let ybar = |s: &[usize]| s.iter().map(|&i| y[i]).sum::<f64>() / s.len() as f64;
        assert!((ybar(&left) - ybar(&right)).abs() < 1e-12);
        let dist = best_split_on(&data, &idx, 0, &targets(SplitRule::Distribution, &y, &idx), 5).unwrap();
        assert_eq!(dist.n_left, 20);
        let brute = brute_distribution(&y, &left, &right);
        assert!((dist.criterion - brute).abs() < 1e-12 && brute > 0.0);
        assert!(var.n_left != 20 || var.criterion < 1e-12);
    }

    #[test]
    fn single_leaf_forest_gives_empirical_quantiles() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 37;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let m = PredictorMatrix::from_columns(vec!["X".into()], &[x]).unwrap();
        let hyper = ForestHyper {
            trees: 10,
            min_leaf: 100,
            sample_fraction: 1.0,
            predictor_fraction: 1.0,
        };
        let f = fit_forest(&m, &y, SplitRule::Variance, false, &hyper, 1).unwrap();
        let lv = QuantileLevels::default();
        let q = f.quantiles_row(m.row(0), &lv).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        for (p, v) in lv.iter().zip(q.values()) {
            let k = ((p * n as f64).ceil() as usize).max(1);
            assert_eq!(*v, sorted[k - 1]);
        }
    }

    #[test]
    fn identical_trees_when_sampling_is_off() {
        let (m, y) = two_clusters(80, 5);
        let hyper = ForestHyper {
            trees: 4,
            min_leaf: 5,
            sample_fraction: 1.0,
            predictor_fraction: 1.0,
        };
        let f = fit_forest(&m, &y, SplitRule::Variance, false, &hyper, 2).unwrap();
        assert!(f.trees.windows(2).all(|w| w[0] == w[1]));
        let single = Forest {
            trees: vec![f.trees[0].clone()],
            ..f.clone()
        };
        let lv = QuantileLevels::default();
        assert_eq!(f.predict(&m, &lv).unwrap(), single.predict(&m, &lv).unwrap());
    }

    #[test]
    fn tree_order_and_determinism() {
        let (m, y) = two_clusters(100, 6);
        let hyper = ForestHyper {
            trees: 20,
            ..ForestHyper::default()
        };
        let f = fit_forest(&m, &y, SplitRule::Distribution, false, &hyper, 3).unwrap();
        assert_eq!(f, fit_forest(&m, &y, SplitRule::Distribution, false, &hyper, 3).unwrap());
        let mut rev = f.clone();
        rev.trees.reverse();
        let lv = QuantileLevels::default();
        let a = f.predict(&m, &lv).unwrap();
        let b = rev.predict(&m, &lv).unwrap();
        for (x, z) in a.iter().zip(&b) {
            for (u, v) in x.values().iter().zip(z.values()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn query_in_cluster_stays_in_cluster() {
        let (m, y) = two_clusters(200, 7);
        let f = fit_forest(&m, &y, SplitRule::Variance, true, &ForestHyper { trees: 50, ..Default::default() }, 4).unwrap();
        let q = f.quantiles_row(&[-1.5, 0.5], &QuantileLevels::default()).unwrap();
        assert!(q.values().iter().all(|v| *v == 0.2));
    }

    #[test]
    fn importance_ranks_informative_predictor() {
        let (m, y) = two_clusters(200, 8);
        let f = fit_forest(&m, &y, SplitRule::Variance, true, &ForestHyper { trees: 50, ..Default::default() }, 5).unwrap();
        let imp = f.importance();
        assert!(imp["X1"] > imp["X2"]);
    }

    proptest::proptest! {
        #[test]
        fn forest_quantiles_non_decreasing(q in 0.0f64..1.0, s in 0u64..1000) {
            let (m, y) = two_clusters(60, s);
            let f = fit_forest(&m, &y, SplitRule::Variance, true, &ForestHyper { trees: 5, ..Default::default() }, s).unwrap();
            let out = f.quantiles_row(&[q * 4.0 - 2.0, q], &QuantileLevels::default()).unwrap();
            proptest::prop_assert!(out.values().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
