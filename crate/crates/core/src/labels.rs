//! Target probabilities of malignancy from ground-truth reader counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marks::GroundTruthMark;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Smallest allowed number of readers per image.
    pub n_readers_min: usize,
    /// Largest number of readers per image; also normalizes annotator weights.
    pub n_readers_max: usize,
    /// Depression coefficient applied to single-reader GTs.
    pub depression: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            n_readers_min: 4,
            n_readers_max: 25,
            depression: 1.0 / 8.0,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_readers_min == 0 || self.n_readers_min > self.n_readers_max {
            return Err(Error::Config(format!(
                "need 1 <= n_readers_min <= n_readers_max, got {} and {}",
                self.n_readers_min, self.n_readers_max
            )));
        }
        if !(self.depression > 0.0 && self.depression <= 1.0) {
            return Err(Error::Config(format!(
                "depression must be in (0, 1], got {}",
                self.depression
            )));
        }
        Ok(())
    }

    /// Smallest meaningful probability: two positive readers out of the maximum.
    pub fn smallest_meaningful(&self) -> f64 {
        2.0 / self.n_readers_max as f64
    }

    /// Annotator-count weight n/n_max of a bag whose image had `n_annotators` readers.
    pub fn annotator_weight(&self, n_annotators: usize) -> Result<f64> {
        if n_annotators == 0 || n_annotators > self.n_readers_max {
            return Err(Error::validation(format!(
                "reader count {} outside 1..={}",
                n_annotators, self.n_readers_max
            )));
        }
        Ok(n_annotators as f64 / self.n_readers_max as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub gt_id: u64,
    pub image_id: u64,
    pub p_target: f64,
    pub n_annotators: usize,
}

/// Fraction of the image's readers that marked the region.
pub fn naive_probability(distinct_readers: usize, n_annotators: usize) -> Result<f64> {
    if distinct_readers == 0 || distinct_readers > n_annotators {
        return Err(Error::validation(format!(
            "need 1 <= distinct readers ({distinct_readers}) <= readers of the image ({n_annotators})"
        )));
    }
    Ok(distinct_readers as f64 / n_annotators as f64)
}

/// Depressed probability for a region marked by exactly one reader.
///
/// Starts at `depression * 2 / n_max` for an image read by `n_min` readers and
/// falls inversely with the number of readers beyond that.
pub fn single_annotator_probability(n_annotators: usize, cfg: &LabelConfig) -> Result<f64> {
    if n_annotators < cfg.n_readers_min {
        return Err(Error::validation(format!(
            "image read by {} readers, fewer than the minimum {}",
            n_annotators, cfg.n_readers_min
        )));
    }
    let base = cfg.depression * cfg.smallest_meaningful();
    if n_annotators == cfg.n_readers_min {
        Ok(base)
    } else {
        Ok(base / (n_annotators as f64 / cfg.n_readers_min as f64))
    }
}

pub fn assign_soft_targets(
    gts: &[GroundTruthMark],
    readers_per_image: &BTreeMap<u64, usize>,
    cfg: &LabelConfig,
) -> Result<Vec<SoftTarget>> {
    cfg.validate()?;
    gts.iter()
        .map(|gt| {
            let n = *readers_per_image.get(&gt.image_id).ok_or_else(|| {
                Error::validation(format!(
                    "GT {}: image {} has no reader roster",
                    gt.gt_id, gt.image_id
                ))
            })?;
            let p = if gt.distinct_readers == 1 {
                single_annotator_probability(n, cfg)
            } else {
                naive_probability(gt.distinct_readers, n)
            }
            .map_err(|e| Error::validation(format!("GT {}: {e}", gt.gt_id)))?;
            Ok(SoftTarget {
                gt_id: gt.gt_id,
                image_id: gt.image_id,
                p_target: p.clamp(0.0, 1.0),
                n_annotators: n,
            })
        })
        .collect()
}
