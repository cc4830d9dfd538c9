//! End-to-end orchestration: merge, label, bags, train or sweep, evaluate,
//! with every artifact written deterministically.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_jsonl, Dataset, ModelFile};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_bags, default_fp_points, pseudo_golden, score_candidates, validate_fp_points,
    AssignmentRule, FrocEvaluator, RocTable, ScoredCandidate,
};
use crate::labels::{assign_soft_targets, LabelConfig, SoftTarget};
use crate::marks::{merge_marks, EllipseMark, GroundTruthMark, HitConfig};
use crate::objective::{ModelWeights, Normalization, NormalizationMode, Objective};
use crate::optimizer::{fit_objective, stationarity_certificate, FitResult, OptimizerConfig};
use crate::sweep::{
    default_grid, lambda_sweep, EvalSplit, LambdaSweepResult, SelectionRule, SweepConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub hit: HitConfig,
    pub labels: LabelConfig,
    pub optimizer: OptimizerConfig,
    pub normalization: Normalization,
    pub annotator_weights: bool,
    /// Train at this lambda; when absent, sweep `grid` and select on validation.
    pub lambda: Option<f64>,
    /// Sweep grid; the default 20-point grid when absent.
    pub grid: Option<Vec<f64>>,
    pub fp_points: Vec<f64>,
    pub gap_penalty: f64,
    pub warm_start: bool,
    pub selection: SelectionRule,
    pub rule: AssignmentRule,
    pub merge_seed: u64,
    pub split_seed: u64,
    /// Treat a non-converged fit as an error.
    pub fail_on_nonconvergence: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hit: HitConfig::default(),
            labels: LabelConfig::default(),
            optimizer: OptimizerConfig::default(),
            normalization: Normalization::PerSample,
            annotator_weights: true,
            lambda: None,
            grid: None,
            fp_points: default_fp_points(),
            gap_penalty: 1.0,
            warm_start: true,
            selection: SelectionRule::OneStandardError,
            rule: AssignmentRule::default(),
            merge_seed: 0,
            split_seed: 0,
            fail_on_nonconvergence: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.hit.validate()?;
        self.labels.validate()?;
        self.optimizer.validate()?;
        validate_fp_points(&self.fp_points).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!(
                    "lambda must be finite and >= 0, got {l}"
                )));
            }
        }
        if !(self.gap_penalty >= 0.0 && self.gap_penalty.is_finite()) {
            return Err(Error::Config("gap_penalty must be finite and >= 0".into()));
        }
        if !(self.rule.ellipse_scale > 0.0 && self.rule.ellipse_scale.is_finite()) {
            return Err(Error::Config("rule.ellipse_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            optimizer: self.optimizer,
            normalization: self.normalization,
            use_annotator_weights: self.annotator_weights,
            gap_penalty: self.gap_penalty,
            warm_start: self.warm_start,
            rule: self.rule,
            selection: self.selection,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Merges the marks of every image and numbers GTs `0..` across the dataset
/// in image order.
pub fn merge_dataset(
    marks: &[EllipseMark],
    cfg: &HitConfig,
    seed: u64,
) -> Result<Vec<GroundTruthMark>> {
    cfg.validate()?;
    let mut by_image: BTreeMap<u64, Vec<EllipseMark>> = BTreeMap::new();
    for m in marks {
        by_image.entry(m.image_id).or_default().push(*m);
    }
    let mut out = Vec::new();
    for image_marks in by_image.values() {
        for mut gt in merge_marks(image_marks, cfg, seed)? {
            gt.gt_id = out.len() as u64;
            out.push(gt);
        }
    }
    Ok(out)
}

/// Shuffles image ids with `seed` and cuts them into three parts whose sizes
/// differ by at most one. Each part is returned sorted.
pub fn split_images(image_ids: &[u64], seed: u64) -> [Vec<u64>; 3] {
    let mut ids: Vec<u64> = image_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let cut1 = n.div_ceil(3);
    let cut2 = cut1 + (n - cut1).div_ceil(2);
    let mut parts = [
        ids[..cut1].to_vec(),
        ids[cut1..cut2].to_vec(),
        ids[cut2..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

/// Bags and evaluation inputs restricted to `images`.
pub fn make_split(
    dataset: &Dataset,
    gts: &[GroundTruthMark],
    targets: &[SoftTarget],
    images: &[u64],
    cfg: &PipelineConfig,
) -> Result<(EvalSplit, Vec<u64>)> {
    let keep: BTreeSet<u64> = images.iter().copied().collect();
    let candidates: Vec<_> = dataset
        .candidates
        .iter()
        .filter(|c| keep.contains(&c.image_id))
        .cloned()
        .collect();
    let split_gts: Vec<GroundTruthMark> = gts
        .iter()
        .filter(|g| keep.contains(&g.image_id))
        .cloned()
        .collect();
    let split_targets: Vec<SoftTarget> = targets
        .iter()
        .filter(|t| keep.contains(&t.image_id))
        .copied()
        .collect();
    let bag_set = build_bags(
        &candidates,
        &split_gts,
        &split_targets,
        &dataset.readers_per_image(),
        &cfg.labels,
        &cfg.rule,
    )?;
    Ok((
        EvalSplit {
            bags: bag_set.bags,
            candidates,
            pseudo_gts: pseudo_golden(&split_gts),
            images: keep.into_iter().collect(),
        },
        bag_set.missed_gts,
    ))
}

/// Test-set row of thresholds fixed on train+validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InducedPoint {
    pub fp_point: f64,
    pub threshold: f64,
    /// FP per image the transferred threshold produces on test.
    pub induced_fp: f64,
    pub gt_sensitivity: f64,
    pub image_sensitivity: f64,
}

/// Picks thresholds for `fp_points` on `calibration` and applies them
/// unchanged to `test`.
pub fn induced_operating_points(
    calibration: &[&EvalSplit],
    test: &EvalSplit,
    w: &ModelWeights,
    fp_points: &[f64],
    rule: &AssignmentRule,
) -> Result<Vec<InducedPoint>> {
    let mut scored: Vec<ScoredCandidate> = Vec::new();
    let mut pseudo = Vec::new();
    let mut images = Vec::new();
    for s in calibration {
        scored.extend(score_candidates(&s.candidates, w)?);
        pseudo.extend(s.pseudo_gts.iter().cloned());
        images.extend(s.images.iter().copied());
    }
    let calib = FrocEvaluator::new(&scored, &pseudo, &images, rule)?.table(fp_points)?;
    let test_eval = FrocEvaluator::new(
        &score_candidates(&test.candidates, w)?,
        &test.pseudo_gts,
        &test.images,
        rule,
    )?;
    Ok(calib
        .fp_points
        .iter()
        .zip(&calib.thresholds)
        .map(|(&fp_point, &threshold)| {
            let op = test_eval.at_threshold(threshold);
            InducedPoint {
                fp_point,
                threshold,
                induced_fp: op.fp_per_image,
                gt_sensitivity: op.gt_sensitivity,
                image_sensitivity: op.image_sensitivity,
            }
        })
        .collect())
}

pub fn write_induced_csv(path: &Path, rows: &[InducedPoint]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::validation(format!("{}: {e}", path.display()));
    w.write_record([
        "fp_point",
        "threshold",
        "induced_fp",
        "gt_sensitivity",
        "image_sensitivity",
    ])
    .map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.fp_point.to_string(),
            r.threshold.to_string(),
            r.induced_fp.to_string(),
            r.gt_sensitivity.to_string(),
            r.image_sensitivity.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_roc_csv(path: &Path, table: &RocTable) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    table.write_csv(BufWriter::new(file))
}

pub fn write_sweep_csv(path: &Path, sweep: &LambdaSweepResult) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let wrap = |e: csv::Error| Error::validation(format!("{}: {e}", path.display()));
    w.write_record([
        "lambda",
        "nnz",
        "objective",
        "iterations",
        "converged",
        "certificate",
        "score",
        "selected",
    ])
    .map_err(wrap)?;
    for p in &sweep.points {
        w.write_record([
            p.lambda.to_string(),
            p.fit.nnz.to_string(),
            p.fit.objective_value.to_string(),
            p.fit.iterations.to_string(),
            p.fit.converged.to_string(),
            p.certificate.satisfied.to_string(),
            p.score.to_string(),
            (p.lambda == sweep.selected_lambda).to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub model_format_version: u32,
    pub config_sha256: String,
    pub dataset_sha256: String,
    pub merge_seed: u64,
    pub split_seed: u64,
    pub split_sizes: [usize; 3],
    pub selected_lambda: f64,
    pub artifacts: Vec<String>,
}

/// In-memory summary of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub gts: Vec<GroundTruthMark>,
    pub targets: Vec<SoftTarget>,
    pub splits: [Vec<u64>; 3],
    pub missed_gts: Vec<u64>,
    pub lambda: f64,
    pub fit: FitResult,
    pub sweep: Option<LambdaSweepResult>,
    pub train_roc: RocTable,
    pub validation_roc: RocTable,
    pub test_induced: Vec<InducedPoint>,
    pub manifest: Manifest,
}

pub fn dataset_digest(dataset: &Dataset) -> String {
    let json = serde_json::to_vec(dataset).expect("dataset serializes");
    hex::encode(Sha256::digest(&json))
}

/// Runs merge, label, bags, train (or sweep) and eval, writing artifacts to
/// `out_dir` when given.
pub fn run_pipeline(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<PipelineReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    dataset.validate().map_err(|e| e.in_stage("ingest"))?;

    let gts =
        merge_dataset(&dataset.marks, &cfg.hit, cfg.merge_seed).map_err(|e| e.in_stage("merge"))?;
    let targets = assign_soft_targets(&gts, &dataset.readers_per_image(), &cfg.labels)
        .map_err(|e| e.in_stage("label"))?;

    let splits = split_images(&dataset.image_ids(), cfg.split_seed);
    let mut missed_gts = Vec::new();
    let mut parts = Vec::with_capacity(3);
    for images in &splits {
        let (split, missed) =
            make_split(dataset, &gts, &targets, images, cfg).map_err(|e| e.in_stage("bags"))?;
        missed_gts.extend(missed);
        parts.push(split);
    }
    missed_gts.sort_unstable();
    let [train, validation, test]: [EvalSplit; 3] = parts.try_into().expect("three splits");
    if !missed_gts.is_empty() {
        log::warn!(
            "{} GTs received no candidates and were left out of training",
            missed_gts.len()
        );
    }

    let (lambda, fit, sweep) = match cfg.lambda {
        Some(lambda) => {
            let obj = Objective::new(
                &train.bags,
                NormalizationMode::new(cfg.normalization, lambda)?,
                cfg.annotator_weights,
            )
            .map_err(|e| e.in_stage("train"))?;
            let fit = fit_objective(&obj, &cfg.optimizer, None).map_err(|e| e.in_stage("train"))?;
            let cert =
                stationarity_certificate(&obj, &fit.weights).map_err(|e| e.in_stage("train"))?;
            log::info!(
                "lambda {lambda}: nnz {} objective {:.6e} certificate {:.3e} (tol {:.3e})",
                fit.nnz,
                fit.objective_value,
                cert.max_violation,
                cert.tolerance
            );
            (lambda, fit, None)
        }
        None => {
            let grid = cfg.grid.clone().unwrap_or_else(default_grid);
            let result = lambda_sweep(
                &train,
                &validation,
                &grid,
                &cfg.fp_points,
                &cfg.sweep_config(),
            )
            .map_err(|e| e.in_stage("sweep"))?;
            let chosen = result.selected();
            (chosen.lambda, chosen.fit.clone(), Some(result))
        }
    };
    if cfg.fail_on_nonconvergence && !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        }
        .in_stage(if sweep.is_some() { "sweep" } else { "train" }));
    }

    let eval = |s: &EvalSplit| s.roc(&fit.weights, &cfg.fp_points, &cfg.rule);
    let train_roc = eval(&train).map_err(|e| e.in_stage("eval"))?;
    let validation_roc = eval(&validation).map_err(|e| e.in_stage("eval"))?;
    let test_induced = induced_operating_points(
        &[&train, &validation],
        &test,
        &fit.weights,
        &cfg.fp_points,
        &cfg.rule,
    )
    .map_err(|e| e.in_stage("eval"))?;

    let mut artifacts = vec![
        "gts.jsonl",
        "targets.jsonl",
        "model.json",
        "roc_train.csv",
        "roc_validation.csv",
        "test_induced.csv",
    ];
    if sweep.is_some() {
        artifacts.push("sweep.csv");
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model_format_version: crate::dataset::MODEL_FORMAT_VERSION,
        config_sha256: cfg.digest(),
        dataset_sha256: dataset_digest(dataset),
        merge_seed: cfg.merge_seed,
        split_seed: cfg.split_seed,
        split_sizes: [splits[0].len(), splits[1].len(), splits[2].len()],
        selected_lambda: lambda,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
    };

    let report = PipelineReport {
        gts,
        targets,
        splits,
        missed_gts,
        lambda,
        fit,
        sweep,
        train_roc,
        validation_roc,
        test_induced,
        manifest,
    };
    if let Some(dir) = out_dir {
        write_artifacts(dir, dataset, cfg, &report).map_err(|e| e.in_stage("write"))?;
    }
    Ok(report)
}

fn write_artifacts(
    dir: &Path,
    dataset: &Dataset,
    cfg: &PipelineConfig,
    report: &PipelineReport,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |name: &str| -> PathBuf { dir.join(name) };
    write_jsonl(&p("gts.jsonl"), &report.gts)?;
    write_jsonl(&p("targets.jsonl"), &report.targets)?;
    ModelFile::from_fit(
        &report.fit,
        &dataset.feature_names,
        report.lambda,
        cfg.normalization,
        cfg.annotator_weights,
    )?
    .write(&p("model.json"))?;
    write_roc_csv(&p("roc_train.csv"), &report.train_roc)?;
    write_roc_csv(&p("roc_validation.csv"), &report.validation_roc)?;
    write_induced_csv(&p("test_induced.csv"), &report.test_induced)?;
    if let Some(sweep) = &report.sweep {
        write_sweep_csv(&p("sweep.csv"), sweep)?;
    }
    let mut text = serde_json::to_string_pretty(&report.manifest).expect("manifest serializes");
    text.push('\n');
    let path = p("manifest.json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_balanced_disjoint_and_seeded() {
        let ids: Vec<u64> = (1..=10).collect();
        let parts = split_images(&ids, 3);
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let mut all: Vec<u64> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(parts, split_images(&ids, 3));
        assert_ne!(parts, split_images(&ids, 4));
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = PipelineConfig {
            lambda: Some(0.06),
            split_seed: 11,
            ..PipelineConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg: PipelineConfig =
            toml::from_str("lambda = 0.1\n[labels]\nn_readers_max = 20\n").unwrap();
        assert_eq!(cfg.lambda, Some(0.1));
        assert_eq!(cfg.labels.n_readers_max, 20);
        assert_eq!(cfg.labels.n_readers_min, 4);
        assert_eq!(cfg.fp_points, default_fp_points());
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = PipelineConfig {
            fp_points: vec![1.0, 0.5],
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
