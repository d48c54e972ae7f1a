//! Statistical post-processing engines.

pub mod gbdt;
pub mod importance;
pub mod mcqrnn;
pub mod optim;
pub mod parametric;
pub mod qr;
pub mod seed;
pub mod stepwise;
pub mod trees;

use crate::features::PredictorMatrix;

/// Column-major standardized copy of a predictor matrix.
#[derive(Debug, Clone)]
pub(crate) struct Standardized {
    pub z: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardized {
    pub fn new(matrix: &PredictorMatrix) -> Self {
        let n = matrix.n_rows() as f64;
        let mut z = Vec::with_capacity(matrix.n_cols());
        let mut mean = Vec::with_capacity(matrix.n_cols());
        let mut sd = Vec::with_capacity(matrix.n_cols());
        for j in 0..matrix.n_cols() {
            let col = matrix.column(j);
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            let scale = if s > 1e-12 * m.abs().max(1.0) { s } else { 0.0 };
            z.push(col.iter().map(|v| if scale > 0.0 { (v - m) / scale } else { 0.0 }).collect());
            mean.push(m);
            sd.push(scale);
        }
        Standardized { z, mean, sd }
    }

    /// Columns with non-zero spread.
    pub fn usable(&self) -> Vec<usize> {
        (0..self.sd.len()).filter(|&j| self.sd[j] > 0.0).collect()
    }

    /// Maps `[intercept, coefs..]` on the standardized scale of `set` back to
    /// raw-scale `(intercept, coefs)`.
    pub fn unstandardize(&self, set: &[usize], coef: &[f64]) -> (f64, Vec<f64>) {
        let mut intercept = coef[0];
        let mut raw = Vec::with_capacity(set.len());
        for (&j, &g) in set.iter().zip(&coef[1..]) {
            let b = g / self.sd[j];
            intercept -= b * self.mean[j];
            raw.push(b);
        }
        (intercept, raw)
    }
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{QuantileForecast, QuantileLevels};
use crate::error::{Error, Result};
use gbdt::{BoostedQuantileModel, GbdtHyper};
use mcqrnn::{McqrnnFit, McqrnnHyper};
use parametric::{Family, ParametricHyper, ParametricModel};
use qr::LinearQuantileModel;
use trees::{Forest, ForestHyper, SplitRule};

/// The seven post-processing methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EngineKind {
    GA,
    NOTR,
    QR,
    MCQRNN,
    QRF,
    GRF,
    GBDT,
}

impl EngineKind {
    pub const ALL: [EngineKind; 7] = [
        EngineKind::GA,
        EngineKind::NOTR,
        EngineKind::QR,
        EngineKind::MCQRNN,
        EngineKind::QRF,
        EngineKind::GRF,
        EngineKind::GBDT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::GA => "GA",
            EngineKind::NOTR => "NOTR",
            EngineKind::QR => "QR",
            EngineKind::MCQRNN => "MCQRNN",
            EngineKind::QRF => "QRF",
            EngineKind::GRF => "GRF",
            EngineKind::GBDT => "GBDT",
        }
    }

    /// Stepwise-selection engines rank predictors by selection counts; tree
    /// engines by split improvement.
    pub fn is_stepwise(self) -> bool {
        matches!(self, EngineKind::GA | EngineKind::NOTR | EngineKind::QR | EngineKind::MCQRNN)
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EngineKind::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let valid: Vec<&str> = EngineKind::ALL.iter().map(|e| e.name()).collect();
                Error::Config(format!("unknown engine `{s}`; valid engines: {}", valid.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrHyper {
    pub steps: usize,
}

impl Default for QrHyper {
    fn default() -> Self {
        QrHyper { steps: 5 }
    }
}

/// Per-engine hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EngineHyper {
    pub parametric: ParametricHyper,
    pub qr: QrHyper,
    pub mcqrnn: McqrnnHyper,
    pub qrf: ForestHyper,
    pub grf: ForestHyper,
    pub gbdt: GbdtHyper,
}

impl EngineHyper {
    pub fn validate(&self) -> Result<()> {
        self.mcqrnn.validate()?;
        self.qrf.validate()?;
        self.grf.validate()?;
        self.gbdt.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model")]
pub enum FittedModel {
    Parametric(ParametricModel),
    Qr(LinearQuantileModel),
    Mcqrnn(McqrnnFit),
    Forest(Forest),
    Gbdt(BoostedQuantileModel),
}

impl FittedModel {
    pub fn predict(&self, matrix: &PredictorMatrix, levels: &QuantileLevels) -> Result<Vec<QuantileForecast>> {
        match self {
            FittedModel::Parametric(m) => m.predict(matrix, levels),
            FittedModel::Qr(m) => check_levels(&m.levels, levels).and_then(|_| m.predict(matrix)),
            FittedModel::Mcqrnn(m) => m.net.predict(matrix, levels),
            FittedModel::Forest(m) => m.predict(matrix, levels),
            FittedModel::Gbdt(m) => check_levels(&m.levels, levels).and_then(|_| m.predict(matrix)),
        }
    }

    /// Predictors kept by stepwise selection, one entry per model component
    /// that keeps them (the parametric engines have separate mu and sigma
    /// components).
    pub fn selections(&self) -> Option<Vec<String>> {
        let v: Vec<String> = match self {
            FittedModel::Parametric(m) => m.selected_predictors().map(str::to_string).collect(),
            FittedModel::Qr(m) => m.predictors.clone(),
            FittedModel::Mcqrnn(m) => m.net.predictors.clone(),
            FittedModel::Forest(_) | FittedModel::Gbdt(_) => return None,
        };
        Some(v)
    }

    /// Split-improvement importance of tree models.
    pub fn tree_importance(&self) -> Option<BTreeMap<String, f64>> {
        match self {
            FittedModel::Forest(m) => Some(m.importance()),
            FittedModel::Gbdt(m) => Some(m.importance()),
            _ => None,
        }
    }
}

fn check_levels(model: &QuantileLevels, requested: &QuantileLevels) -> Result<()> {
    if model != requested {
        return Err(Error::Structural(format!(
            "model fitted for {} levels cannot predict the {} requested levels",
            model.len(),
            requested.len()
        )));
    }
    Ok(())
}

/// Fits one engine on a training matrix.
pub fn fit_engine(
    kind: EngineKind,
    matrix: &PredictorMatrix,
    y: &[f64],
    levels: &QuantileLevels,
    hyper: &EngineHyper,
    seed: u64,
) -> Result<FittedModel> {
    let seed = seed::derive(seed, &[seed::tag(kind.name())]);
    let h = &hyper.parametric;
    Ok(match kind {
        EngineKind::GA => FittedModel::Parametric(parametric::fit_sequential(
            Family::Gamma,
            matrix,
            y,
            h.steps_mu,
            h.steps_sigma,
        )?),
        EngineKind::NOTR => FittedModel::Parametric(parametric::fit_sequential(
            Family::TruncatedNormal,
            matrix,
            y,
            h.steps_mu,
            h.steps_sigma,
        )?),
        EngineKind::QR => FittedModel::Qr(qr::fit_qr(matrix, y, levels, hyper.qr.steps, seed)?),
        EngineKind::MCQRNN => FittedModel::Mcqrnn(mcqrnn::fit_mcqrnn(matrix, y, levels, &hyper.mcqrnn, seed)?),
        EngineKind::QRF => FittedModel::Forest(trees::fit_forest(
            matrix,
            y,
            SplitRule::Variance,
            true,
            &hyper.qrf,
            seed,
        )?),
        EngineKind::GRF => FittedModel::Forest(trees::fit_forest(
            matrix,
            y,
            SplitRule::Distribution,
            false,
            &hyper.grf,
            seed,
        )?),
        EngineKind::GBDT => FittedModel::Gbdt(gbdt::fit_gbdt(matrix, y, levels, &hyper.gbdt, seed)?),
    })
}
