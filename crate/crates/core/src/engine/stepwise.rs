//! Forward/backward stepwise predictor selection on an information criterion.

use serde::{Deserialize, Serialize};

/// One accepted move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Move {
    Add(usize),
    Remove(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: Move,
    pub aic: f64,
}

#[derive(Debug, Clone)]
pub struct Stepwise<M> {
    pub selected: Vec<usize>,
    pub model: M,
    pub aic: f64,
    pub history: Vec<StepRecord>,
}

/// Runs at most `budget` moves. Each step scores every single addition from
/// `candidates` and every single removal, and takes the best one if it
/// strictly lowers the criterion. Ties go to the first move considered
/// (additions in candidate order, then removals).
///
/// `score(set, warm)` fits a model on `set` and returns `(aic, model)`, or
/// `None` when that fit fails; `warm` is the current model for warm starts.
pub fn stepwise_aic<M>(
    candidates: &[usize],
    initial: (Vec<usize>, f64, M),
    budget: usize,
    mut score: impl FnMut(&[usize], &M) -> Option<(f64, M)>,
) -> Stepwise<M> {
    let (mut selected, mut aic, mut model) = initial;
    let mut history = Vec::new();
    for _ in 0..budget {
        let mut best: Option<(f64, Move, Vec<usize>, M)> = None;
        let mut consider = |set: Vec<usize>, mv: Move, model: &M, best: &mut Option<(f64, Move, Vec<usize>, M)>| {
            if let Some((a, m)) = score(&set, model) {
                if a.is_finite() && best.as_ref().is_none_or(|b| a < b.0) {
                    *best = Some((a, mv, set, m));
                }
            }
        };
        for &c in candidates.iter().filter(|c| !selected.contains(c)) {
            let mut set = selected.clone();
            set.push(c);
            consider(set, Move::Add(c), &model, &mut best);
        }
        for &r in &selected {
            let set: Vec<usize> = selected.iter().copied().filter(|&s| s != r).collect();
            consider(set, Move::Remove(r), &model, &mut best);
        }
        match best {
            Some((a, mv, set, m)) if a < aic => {
                log::debug!("stepwise {mv:?}: aic {aic:.4} -> {a:.4}");
                aic = a;
                selected = set;
                model = m;
                history.push(StepRecord { step: mv, aic });
            }
            _ => break,
        }
    }
    Stepwise {
        selected,
        model,
        aic,
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    /// Gaussian AIC of an OLS fit on the chosen columns (+ intercept), with
    /// the variance counted as a parameter.
    fn ols_aic(cols: &[Vec<f64>], y: &[f64], set: &[usize]) -> f64 {
        let n = y.len();
        let x = DMatrix::from_fn(n, set.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[set[j - 1]][i] });
        let yv = DVector::from_column_slice(y);
        let beta = x.clone().svd(true, true).solve(&yv, 1e-12).unwrap();
        let rss = (yv - x * beta).norm_squared();
        let k = set.len() + 2;
        2.0 * k as f64 + n as f64 * ((rss / n as f64).ln() + 1.0 + (2.0 * std::f64::consts::PI).ln())
    }

    fn run(cols: &[Vec<f64>], y: &[f64], budget: usize) -> Stepwise<()> {
        let cand: Vec<usize> = (0..cols.len()).collect();
        let a0 = ols_aic(cols, y, &[]);
        stepwise_aic(&cand, (vec![], a0, ()), budget, |set, _| Some((ols_aic(cols, y, set), ())))
    }

    #[test]
    fn fixed_point_when_nothing_helps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let noise: Vec<f64> = (0..200).map(|_| nrm.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..200).map(|_| nrm.sample(&mut rng)).collect();
        // a column that is exactly constant cannot lower the criterion
        let cols = vec![vec![1.0; 200]];
        let r = run(&cols, &y, 5);
        assert!(r.selected.is_empty() && r.history.is_empty());
        let _ = noise;
    }

    #[test]
    fn dominant_predictor_first_and_aic_decreases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let n = 500;
        let cols: Vec<Vec<f64>> = (0..6).map(|_| (0..n).map(|_| nrm.sample(&mut rng)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| 3.0 * cols[4][i] + 0.5 * nrm.sample(&mut rng)).collect();
        let r = run(&cols, &y, 5);
        assert_eq!(r.history[0].step, Move::Add(4));
        let mut prev = ols_aic(&cols, &y, &[]);
        for h in &r.history {
            assert!(h.aic < prev);
            prev = h.aic;
        }
    }

    #[test]
    fn backward_step_removes_redundant_predictor() {
        // y = x1 + x2 exactly up to small noise; s = x1 + x2 + moderate noise
        // explains most of y on its own and is chosen first, then becomes
        // redundant once x1 and x2 are both in.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let n = 1000;
        let x1: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| nrm.sample(&mut rng)).collect();
        let s: Vec<f64> = (0..n).map(|i| x1[i] + x2[i] + 0.3 * nrm.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|i| x1[i] + x2[i] + 0.05 * nrm.sample(&mut rng)).collect();
        let cols = vec![x1, x2, s];
        let r = run(&cols, &y, 5);
        assert_eq!(r.history[0].step, Move::Add(2));
        assert!(r.history.iter().any(|h| h.step == Move::Remove(2)), "{:?}", r.history);
        let mut sel = r.selected.clone();
        sel.sort();
        assert_eq!(sel, vec![0, 1]);
    }

    #[test]
    fn zero_budget_keeps_initial() {
        let cols = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let y = [1.0, 2.0, 3.0, 4.1];
        let r = run(&cols, &y, 0);
        assert!(r.selected.is_empty());
    }
}
