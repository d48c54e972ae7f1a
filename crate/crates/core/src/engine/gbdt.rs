//! Gradient-boosted stumps under the pinball loss, one independent model per
//! quantile level; crossings are repaired by sorting at prediction time.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::seed;
use super::trees::{best_split_on, spread, Columns};
use crate::domain::{sanitize_quantiles, QuantileForecast, QuantileLevels};
use crate::error::{Error, Result};
use crate::features::PredictorMatrix;
use crate::verify::{pinball_unchecked, sample_quantile_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtHyper {
    pub trees: usize,
    pub min_leaf: usize,
    pub sample_fraction: f64,
    pub depth: usize,
    pub learning_rate: f64,
}

impl Default for GbdtHyper {
    fn default() -> Self {
        GbdtHyper {
            trees: 100,
            min_leaf: 5,
            sample_fraction: 0.5,
            depth: 1,
            learning_rate: 0.1,
        }
    }
}

impl GbdtHyper {
    pub fn validate(&self) -> Result<()> {
        if self.depth != 1 {
            return Err(Error::Config("gbdt.depth must be 1 (stumps)".into()));
        }
        if self.min_leaf == 0 || !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config("gbdt min_leaf must be positive and sample_fraction in (0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("gbdt.learning_rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Depth-1 tree with learning-rate-scaled leaf increments. A stump without a
/// split adds `left` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: Option<u32>,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
    /// Reduction of the subsample pinball loss produced by this stump.
    pub improvement: f64,
}

impl Stump {
    fn apply(&self, row: &[f64]) -> f64 {
        match self.feature {
            Some(f) if row[f as usize] > self.threshold => self.right,
            _ => self.left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBooster {
    pub level: f64,
    pub init: f64,
    pub stumps: Vec<Stump>,
    /// Full-sample mean training pinball loss after each iteration (index 0:
    /// initialization).
    pub train_loss: Vec<f64>,
}

impl LevelBooster {
    fn predict_row(&self, row: &[f64]) -> f64 {
        self.init + self.stumps.iter().map(|s| s.apply(row)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedQuantileModel {
    pub hyper: GbdtHyper,
    pub seed: u64,
    pub predictors: Vec<String>,
    pub levels: QuantileLevels,
    pub boosters: Vec<LevelBooster>,
}

fn quantile_of(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    sample_quantile_sorted(&v, q)
}

fn fit_level(data: &Columns, q: f64, level_idx: usize, hyper: &GbdtHyper, seed: u64) -> LevelBooster {
    let y = data.y;
    let n = y.len();
    let init = quantile_of(y.to_vec(), q);
    let mut f = vec![init; n];
    let mean_loss = |f: &[f64]| (0..n).map(|i| pinball_unchecked(q, y[i], f[i])).sum::<f64>() / n as f64;
    let mut train_loss = vec![mean_loss(&f)];
    let m = ((n as f64 * hyper.sample_fraction).round() as usize).clamp(1, n);
    let mut stumps = Vec::with_capacity(hyper.trees);
    let features: Vec<usize> = (0..data.cols.len()).collect();
    for it in 0..hyper.trees {
        let mut rng = seed::stream(seed, &[seed::tag("gbdt"), level_idx as u64, it as u64]);
        let mut idx: Vec<u32> = sample(&mut rng, n, m).into_iter().map(|i| i as u32).collect();
        idx.sort_unstable();
        let grad: Vec<f64> = idx
            .iter()
            .map(|&i| if y[i as usize] >= f[i as usize] { q } else { q - 1.0 })
            .collect();
        let tgt = vec![grad];
        let mut best = None;
        if idx.len() >= 2 * hyper.min_leaf {
            for &j in &features {
                if let Some(c) = best_split_on(data, &idx, j, &tgt, hyper.min_leaf) {
                    if c.beats(&best, &data.name_rank) {
                        best = Some(c);
                    }
                }
            }
        }
        let ss = spread(&tgt);
        let best = best.filter(|b| ss > 0.0 && b.criterion > 1e-10 * ss);
        let resid = |sel: &dyn Fn(u32) -> bool| -> Vec<f64> {
            idx.iter().filter(|&&i| sel(i)).map(|&i| y[i as usize] - f[i as usize]).collect()
        };
        let lr = hyper.learning_rate;
        let mut stump = match best {
            None => Stump {
                feature: None,
                threshold: 0.0,
                left: lr * quantile_of(resid(&|_| true), q),
                right: 0.0,
                improvement: 0.0,
            },
            Some(b) => {
                let x = &data.cols[b.feature];
                let goes_left = |i: u32| x[i as usize] <= b.threshold;
                Stump {
                    feature: Some(b.feature as u32),
                    threshold: b.threshold,
                    left: lr * quantile_of(resid(&goes_left), q),
                    right: lr * quantile_of(resid(&|i| !goes_left(i)), q),
                    improvement: 0.0,
                }
            }
        };
        let before: f64 = idx.iter().map(|&i| pinball_unchecked(q, y[i as usize], f[i as usize])).sum();
        for i in 0..n {
            let inc = match stump.feature {
                Some(j) if data.cols[j as usize][i] > stump.threshold => stump.right,
                _ => stump.left,
            };
            f[i] += inc;
        }
        let after: f64 = idx.iter().map(|&i| pinball_unchecked(q, y[i as usize], f[i as usize])).sum();
        stump.improvement = (before - after) / idx.len() as f64;
        stumps.push(stump);
        train_loss.push(mean_loss(&f));
    }
    LevelBooster {
        level: q,
        init,
        stumps,
        train_loss,
    }
}

pub fn fit_gbdt(
    matrix: &PredictorMatrix,
    y: &[f64],
    levels: &QuantileLevels,
    hyper: &GbdtHyper,
    seed: u64,
) -> Result<BoostedQuantileModel> {
    hyper.validate()?;
    if y.len() != matrix.n_rows() {
        return Err(Error::Structural("observation count differs from matrix rows".into()));
    }
    if y.len() < 10 {
        return Err(Error::fit("GBDT", format!("need at least 10 cases, got {}", y.len())));
    }
    let data = Columns::new(matrix, y);
    let boosters = levels
        .as_slice()
        .par_iter()
        .enumerate()
        .map(|(k, &q)| fit_level(&data, q, k, hyper, seed))
        .collect();
    Ok(BoostedQuantileModel {
        hyper: *hyper,
        seed,
        predictors: matrix.names().to_vec(),
        levels: levels.clone(),
        boosters,
    })
}

impl BoostedQuantileModel {
    pub fn predict(&self, matrix: &PredictorMatrix) -> Result<Vec<QuantileForecast>> {
        let cols = super::qr::resolve(&self.predictors, matrix)?;
        matrix
            .rows()
            .map(|r| {
                let row: Vec<f64> = cols.iter().map(|&j| r[j]).collect();
                let raw: Vec<f64> = self.boosters.iter().map(|b| b.predict_row(&row)).collect();
                sanitize_quantiles(&self.levels, &raw)
            })
            .collect()
    }

    /// Pinball-loss reduction per predictor, summed over stumps and averaged
    /// over levels.
    pub fn importance(&self) -> BTreeMap<String, f64> {
        let mut imp: BTreeMap<String, f64> = self.predictors.iter().map(|p| (p.clone(), 0.0)).collect();
        let l = self.boosters.len() as f64;
        for b in &self.boosters {
            for s in &b.stumps {
                if let Some(f) = s.feature {
                    *imp.get_mut(&self.predictors[f as usize]).expect("known predictor") += s.improvement / l;
                }
            }
        }
        imp
    }
}
