//! Regularization path and validation-driven choice of lambda.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    froc, score_candidates, validate_fp_points, AssignmentRule, Candidate, PseudoGoldenGt, RocTable,
};
use crate::objective::{Bag, ModelWeights, Normalization, NormalizationMode, Objective};
use crate::optimizer::{
    fit_objective, stationarity_certificate, FitResult, OptimizerConfig, StationarityCertificate,
};

/// Everything needed to train on or evaluate one data split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub bags: Vec<Bag>,
    pub candidates: Vec<Candidate>,
    pub pseudo_gts: Vec<PseudoGoldenGt>,
    /// All images of the split, including those without any GT.
    pub images: Vec<u64>,
}

impl EvalSplit {
    pub fn roc(
        &self,
        w: &ModelWeights,
        fp_points: &[f64],
        rule: &AssignmentRule,
    ) -> Result<RocTable> {
        let scored = score_candidates(&self.candidates, w)?;
        froc(&scored, &self.pseudo_gts, &self.images, fp_points, rule)
    }
}

/// How the sweep turns scores into a chosen lambda.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Highest score; ties go to the larger lambda.
    Best,
    /// Largest lambda scoring within one binomial standard error of the best,
    /// the error taken from the best point's validation GT sensitivity at the
    /// first FP point.
    OneStandardError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub optimizer: OptimizerConfig,
    pub normalization: Normalization,
    pub use_annotator_weights: bool,
    /// Weight of the train/validation sensitivity gap in the selection score.
    pub gap_penalty: f64,
    pub warm_start: bool,
    pub rule: AssignmentRule,
    pub selection: SelectionRule,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            optimizer: OptimizerConfig::default(),
            normalization: Normalization::PerSample,
            use_annotator_weights: true,
            gap_penalty: 1.0,
            warm_start: true,
            rule: AssignmentRule::default(),
            selection: SelectionRule::OneStandardError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub fit: FitResult,
    pub certificate: StationarityCertificate,
    pub train: RocTable,
    pub validation: RocTable,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweepResult {
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    /// Lambda with the highest score.
    pub best_lambda: f64,
    pub selected_lambda: f64,
}

impl LambdaSweepResult {
    pub fn selected(&self) -> &SweepPoint {
        self.points
            .iter()
            .find(|p| p.lambda == self.selected_lambda)
            .expect("selected lambda is on the grid")
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Twenty log-spaced values over `[1e-3, 1]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1.0, 20)
}

/// Worst case over FP points and over GT/image sensitivity of
/// `validation - gap_penalty * |train - validation|`.
pub fn selection_score(train: &RocTable, validation: &RocTable, gap_penalty: f64) -> f64 {
    let pairs = train
        .gt_sensitivity
        .iter()
        .zip(&validation.gt_sensitivity)
        .chain(
            train
                .image_sensitivity
                .iter()
                .zip(&validation.image_sensitivity),
        );
    pairs
        .map(|(&t, &v)| v - gap_penalty * (t - v).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Binomial standard error, in percentage points, of a sensitivity measured
/// on `n` GTs.
pub fn sensitivity_standard_error(sensitivity_percent: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let s = (sensitivity_percent / 100.0).clamp(0.0, 1.0);
    100.0 * (s * (1.0 - s) / n as f64).sqrt()
}

/// Index of the chosen point under `rule`.
pub fn select_point(points: &[SweepPoint], rule: SelectionRule, n_validation_gts: usize) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.score >= points[best].score {
            best = i;
        }
    }
    match rule {
        SelectionRule::Best => best,
        SelectionRule::OneStandardError => {
            let s = points[best]
                .validation
                .gt_sensitivity
                .first()
                .copied()
                .unwrap_or(0.0);
            let floor = points[best].score - sensitivity_standard_error(s, n_validation_gts);
            (best..points.len())
                .rev()
                .find(|&i| points[i].score >= floor)
                .unwrap_or(best)
        }
    }
}

/// Fits every lambda of `grid` (ascending, warm-started from the previous
/// solution when configured) and selects one per `cfg.selection`.
pub fn lambda_sweep(
    train: &EvalSplit,
    validation: &EvalSplit,
    grid: &[f64],
    fp_points: &[f64],
    cfg: &SweepConfig,
) -> Result<LambdaSweepResult> {
    if grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    if grid.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::validation(
            "lambda grid values must be finite and >= 0",
        ));
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::validation("lambda grid must be strictly increasing"));
    }
    validate_fp_points(fp_points)?;

    let base = Objective::new(
        &train.bags,
        NormalizationMode::new(cfg.normalization, grid[0])?,
        cfg.use_annotator_weights,
    )?;
    let mut points: Vec<SweepPoint> = Vec::with_capacity(grid.len());
    let mut previous: Option<ModelWeights> = None;
    for &lambda in grid {
        let obj = base.with_lambda(lambda)?;
        let start = if cfg.warm_start {
            previous.as_ref()
        } else {
            None
        };
        let fit = fit_objective(&obj, &cfg.optimizer, start)?;
        let certificate = stationarity_certificate(&obj, &fit.weights)?;
        let train_roc = train.roc(&fit.weights, fp_points, &cfg.rule)?;
        let val_roc = validation.roc(&fit.weights, fp_points, &cfg.rule)?;
        let score = selection_score(&train_roc, &val_roc, cfg.gap_penalty);
        log::info!(
            "lambda {lambda:.4e}: nnz {} objective {:.6e} score {score:.3} converged {}",
            fit.nnz,
            fit.objective_value,
            fit.converged
        );
        previous = Some(fit.weights.clone());
        points.push(SweepPoint {
            lambda,
            fit,
            certificate,
            train: train_roc,
            validation: val_roc,
            score,
        });
    }
    let best = select_point(&points, SelectionRule::Best, 0);
    let chosen = select_point(&points, cfg.selection, validation.pseudo_gts.len());
    Ok(LambdaSweepResult {
        grid: grid.to_vec(),
        best_lambda: points[best].lambda,
        selected_lambda: points[chosen].lambda,
        points,
    })
}
