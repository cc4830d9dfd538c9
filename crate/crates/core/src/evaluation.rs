//! Bag construction from candidates and FROC-style evaluation against
//! pseudo golden ground truth (GTs marked by at least two readers).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelConfig, SoftTarget};
use crate::marks::{marks_overlap, EllipseMark, GroundTruthMark, HitConfig};
use crate::objective::{Bag, ModelWeights};

/// A lesion candidate produced upstream, with its extracted features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: u64,
    pub image_id: u64,
    pub x_mm: f64,
    pub y_mm: f64,
    /// Raw features, without the intercept component.
    pub features: Vec<f64>,
}

impl Candidate {
    pub fn location(&self) -> (f64, f64) {
        (self.x_mm, self.y_mm)
    }

    /// Features with the constant-1 intercept appended.
    pub fn instance(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.features.len() + 1);
        x.extend_from_slice(&self.features);
        x.push(1.0);
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGoldenGt {
    pub gt_id: u64,
    pub image_id: u64,
    pub representative_ellipse: EllipseMark,
}

pub fn pseudo_golden(gts: &[GroundTruthMark]) -> Vec<PseudoGoldenGt> {
    gts.iter()
        .filter(|g| g.distinct_readers >= 2)
        .map(|g| PseudoGoldenGt {
            gt_id: g.gt_id,
            image_id: g.image_id,
            representative_ellipse: g.representative_ellipse,
        })
        .collect()
}

/// Candidate-to-GT assignment rule: inside the representative ellipse with
/// both semi-axes multiplied by `ellipse_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignmentRule {
    pub ellipse_scale: f64,
}

impl Default for AssignmentRule {
    fn default() -> Self {
        AssignmentRule { ellipse_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagSet {
    pub bags: Vec<Bag>,
    /// GTs that received no candidate and so produced no bag.
    pub missed_gts: Vec<u64>,
}

/// Groups candidates into one soft bag per GT and one hard-negative bag per
/// unassigned candidate.
///
/// A candidate inside several GT ellipses goes to the GT with the highest
/// target, ties to the smallest `gt_id`. Bags are ordered by image, then GT
/// bags by `gt_id`, then negatives by `candidate_id`; `bag_id`s are `0..`.
pub fn build_bags(
    candidates: &[Candidate],
    gts: &[GroundTruthMark],
    targets: &[SoftTarget],
    readers_per_image: &BTreeMap<u64, usize>,
    label_cfg: &LabelConfig,
    rule: &AssignmentRule,
) -> Result<BagSet> {
    let target_of: BTreeMap<u64, &SoftTarget> = targets.iter().map(|t| (t.gt_id, t)).collect();
    let mut gts_by_image: BTreeMap<u64, Vec<&GroundTruthMark>> = BTreeMap::new();
    for gt in gts {
        if !target_of.contains_key(&gt.gt_id) {
            return Err(Error::validation(format!(
                "GT {} has no soft target",
                gt.gt_id
            )));
        }
        gts_by_image.entry(gt.image_id).or_default().push(gt);
    }
    let mut cands_by_image: BTreeMap<u64, Vec<&Candidate>> = BTreeMap::new();
    let dim = candidates.first().map_or(0, |c| c.features.len());
    for c in candidates {
        if c.features.len() != dim {
            return Err(Error::validation(format!(
                "candidate {} has {} features, expected {}",
                c.candidate_id,
                c.features.len(),
                dim
            )));
        }
        cands_by_image.entry(c.image_id).or_default().push(c);
    }

    let images: BTreeSet<u64> = gts_by_image
        .keys()
        .chain(cands_by_image.keys())
        .copied()
        .collect();
    let mut bags = Vec::new();
    let mut missed_gts = Vec::new();
    for image_id in images {
        let n_readers = *readers_per_image
            .get(&image_id)
            .ok_or_else(|| Error::validation(format!("image {image_id} has no reader roster")))?;
        let weight = label_cfg.annotator_weight(n_readers)?;
        let mut image_gts = gts_by_image.remove(&image_id).unwrap_or_default();
        image_gts.sort_by_key(|g| g.gt_id);
        let mut image_cands = cands_by_image.remove(&image_id).unwrap_or_default();
        image_cands.sort_by_key(|c| c.candidate_id);

        let mut members: Vec<Vec<&Candidate>> = vec![Vec::new(); image_gts.len()];
        let mut negatives = Vec::new();
        for &c in &image_cands {
            let best = image_gts
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    g.representative_ellipse
                        .contains(c.location(), rule.ellipse_scale)
                })
                .max_by(|(_, a), (_, b)| {
                    target_of[&a.gt_id]
                        .p_target
                        .total_cmp(&target_of[&b.gt_id].p_target)
                        .then(b.gt_id.cmp(&a.gt_id))
                });
            match best {
                Some((k, _)) => members[k].push(c),
                None => negatives.push(c),
            }
        }
        for (gt, cands) in image_gts.iter().zip(members) {
            if cands.is_empty() {
                log::info!(
                    "GT {} on image {image_id} has no candidates (candidate-generation miss)",
                    gt.gt_id
                );
                missed_gts.push(gt.gt_id);
                continue;
            }
            let bag = Bag::soft(
                bags.len() as u64,
                image_id,
                cands.iter().map(|c| c.instance()).collect(),
                target_of[&gt.gt_id].p_target,
                weight,
            )
            .with_candidates(cands.iter().map(|c| c.candidate_id).collect());
            bags.push(bag);
        }
        for c in negatives {
            let bag = Bag::hard_negative(bags.len() as u64, image_id, c.instance(), weight)
                .with_candidates(vec![c.candidate_id]);
            bags.push(bag);
        }
    }
    Ok(BagSet { bags, missed_gts })
}

/// A candidate with a model score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate_id: u64,
    pub image_id: u64,
    pub x_mm: f64,
    pub y_mm: f64,
    pub score: f64,
}

pub fn score_candidates(
    candidates: &[Candidate],
    w: &ModelWeights,
) -> Result<Vec<ScoredCandidate>> {
    candidates
        .iter()
        .map(|c| {
            let x = c.instance();
            if x.len() != w.dim() {
                return Err(Error::validation(format!(
                    "candidate {} has dimension {}, model has {}",
                    c.candidate_id,
                    x.len(),
                    w.dim()
                )));
            }
            Ok(ScoredCandidate {
                candidate_id: c.candidate_id,
                image_id: c.image_id,
                x_mm: c.x_mm,
                y_mm: c.y_mm,
                score: w.score(&x),
            })
        })
        .collect()
}

/// Sensitivities at fixed false-positive-per-image operating points.
/// Sensitivities are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocTable {
    pub fp_points: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// False positives per image actually reached at each threshold.
    pub achieved_fp: Vec<f64>,
    pub gt_sensitivity: Vec<f64>,
    pub image_sensitivity: Vec<f64>,
}

impl RocTable {
    /// Writes `fp_point,threshold,gt_sensitivity,image_sensitivity` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::validation(format!("writing ROC table: {e}"));
        w.write_record([
            "fp_point",
            "threshold",
            "gt_sensitivity",
            "image_sensitivity",
        ])
        .map_err(wrap)?;
        for i in 0..self.fp_points.len() {
            w.write_record([
                self.fp_points[i].to_string(),
                self.thresholds[i].to_string(),
                self.gt_sensitivity[i].to_string(),
                self.image_sensitivity[i].to_string(),
            ])
            .map_err(wrap)?;
        }
        w.flush()
            .map_err(|e| Error::validation(format!("writing ROC table: {e}")))?;
        Ok(())
    }
}

/// Detection outcome of all candidates at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fp_per_image: f64,
    pub gt_sensitivity: f64,
    pub image_sensitivity: f64,
}

/// Precomputed candidate/GT matching for repeated threshold queries.
#[derive(Debug, Clone)]
pub struct FrocEvaluator {
    n_images: usize,
    /// (score, matched pseudo GT indices) sorted by descending score.
    candidates: Vec<(f64, Vec<usize>)>,
    gt_image: Vec<usize>,
    n_gt_images: usize,
}

impl FrocEvaluator {
    pub fn new(
        scored: &[ScoredCandidate],
        pseudo_gts: &[PseudoGoldenGt],
        images: &[u64],
        rule: &AssignmentRule,
    ) -> Result<Self> {
        let image_index: BTreeMap<u64, usize> =
            images.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if image_index.len() != images.len() {
            return Err(Error::validation(
                "duplicate image id in evaluation image list",
            ));
        }
        let mut gt_image = Vec::with_capacity(pseudo_gts.len());
        let mut gts_by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (k, g) in pseudo_gts.iter().enumerate() {
            let idx = *image_index.get(&g.image_id).ok_or_else(|| {
                Error::validation(format!(
                    "pseudo GT {} on unknown image {}",
                    g.gt_id, g.image_id
                ))
            })?;
            gt_image.push(idx);
            gts_by_image.entry(g.image_id).or_default().push(k);
        }
        let mut candidates = Vec::with_capacity(scored.len());
        for c in scored {
            if !image_index.contains_key(&c.image_id) {
                return Err(Error::validation(format!(
                    "candidate {} on unknown image {}",
                    c.candidate_id, c.image_id
                )));
            }
            if !c.score.is_finite() {
                return Err(Error::validation(format!(
                    "candidate {} has a non-finite score",
                    c.candidate_id
                )));
            }
            let matched: Vec<usize> = gts_by_image
                .get(&c.image_id)
                .map(|ks| {
                    ks.iter()
                        .copied()
                        .filter(|&k| {
                            pseudo_gts[k]
                                .representative_ellipse
                                .contains((c.x_mm, c.y_mm), rule.ellipse_scale)
                        })
                        .collect()
                })
                .unwrap_or_default();
            candidates.push((c.score, matched));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let n_gt_images = gt_image.iter().collect::<BTreeSet<_>>().len();
        Ok(FrocEvaluator {
            n_images: images.len(),
            candidates,
            gt_image,
            n_gt_images,
        })
    }

    /// Candidate thresholds from strictest to loosest: every distinct score,
    /// then negative infinity. Detections are scores strictly above the threshold.
    pub fn threshold_ladder(&self) -> Vec<f64> {
        let mut ladder: Vec<f64> = Vec::new();
        for &(s, _) in &self.candidates {
            if ladder.last() != Some(&s) {
                ladder.push(s);
            }
        }
        ladder.push(f64::NEG_INFINITY);
        ladder
    }

    pub fn at_threshold(&self, threshold: f64) -> OperatingPoint {
        let mut fp = 0usize;
        let mut detected = vec![false; self.gt_image.len()];
        for (s, matched) in &self.candidates {
            if *s <= threshold {
                break;
            }
            if matched.is_empty() {
                fp += 1;
            }
            for &k in matched {
                detected[k] = true;
            }
        }
        self.summarize(threshold, fp, &detected)
    }

    fn summarize(&self, threshold: f64, fp: usize, detected: &[bool]) -> OperatingPoint {
        let hit_gts = detected.iter().filter(|&&d| d).count();
        let hit_images = detected
            .iter()
            .zip(&self.gt_image)
            .filter(|(&d, _)| d)
            .map(|(_, &i)| i)
            .collect::<BTreeSet<_>>()
            .len();
        OperatingPoint {
            threshold,
            fp_per_image: if self.n_images == 0 {
                0.0
            } else {
                fp as f64 / self.n_images as f64
            },
            gt_sensitivity: percent(hit_gts, self.gt_image.len()),
            image_sensitivity: percent(hit_images, self.n_gt_images),
        }
    }

    /// Loosest threshold whose false positives per image stay within each budget.
    pub fn table(&self, fp_points: &[f64]) -> Result<RocTable> {
        validate_fp_points(fp_points)?;
        let mut table = RocTable {
            fp_points: fp_points.to_vec(),
            thresholds: Vec::new(),
            achieved_fp: Vec::new(),
            gt_sensitivity: Vec::new(),
            image_sensitivity: Vec::new(),
        };
        // For each ladder level: how many leading candidates are detections,
        // and how many of those are false positives.
        let ladder = self.threshold_ladder();
        let mut prefix_len = Vec::with_capacity(ladder.len());
        let mut prefix_fp = Vec::with_capacity(ladder.len());
        let (mut n, mut fp) = (0usize, 0usize);
        for &t in &ladder {
            while n < self.candidates.len() && self.candidates[n].0 > t {
                if self.candidates[n].1.is_empty() {
                    fp += 1;
                }
                n += 1;
            }
            prefix_len.push(n);
            prefix_fp.push(fp);
        }
        let per_image = |fp: usize| {
            if self.n_images == 0 {
                0.0
            } else {
                fp as f64 / self.n_images as f64
            }
        };

        let mut level = 0usize;
        let mut counted = 0usize;
        let mut detected = vec![false; self.gt_image.len()];
        for &budget in fp_points {
            while level + 1 < ladder.len() && per_image(prefix_fp[level + 1]) <= budget {
                level += 1;
            }
            for (_, matched) in &self.candidates[counted..prefix_len[level]] {
                for &k in matched {
                    detected[k] = true;
                }
            }
            counted = prefix_len[level];
            let point = self.summarize(ladder[level], prefix_fp[level], &detected);
            table.thresholds.push(point.threshold);
            table.achieved_fp.push(point.fp_per_image);
            table.gt_sensitivity.push(point.gt_sensitivity);
            table.image_sensitivity.push(point.image_sensitivity);
        }
        Ok(table)
    }
}

fn percent(hit: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hit as f64 / total as f64
    }
}

pub fn validate_fp_points(fp_points: &[f64]) -> Result<()> {
    if fp_points.is_empty() {
        return Err(Error::validation("no FP operating points given"));
    }
    if fp_points.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(Error::validation(
            "FP operating points must be positive and finite",
        ));
    }
    if fp_points.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::validation(
            "FP operating points must be strictly increasing",
        ));
    }
    Ok(())
}

/// FROC table for scored candidates over the full image list (healthy images
/// included in the FP denominator).
pub fn froc(
    scored: &[ScoredCandidate],
    pseudo_gts: &[PseudoGoldenGt],
    images: &[u64],
    fp_points: &[f64],
    rule: &AssignmentRule,
) -> Result<RocTable> {
    FrocEvaluator::new(scored, pseudo_gts, images, rule)?.table(fp_points)
}

/// The FP grid 0.5, 1.0, ..., 3.0.
pub fn default_fp_points() -> Vec<f64> {
    (1..=6).map(|k| 0.5 * k as f64).collect()
}

/// One reader's agreement with the pseudo golden GTs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderStats {
    pub reader_id: u64,
    pub images_read: usize,
    pub pseudo_gts: usize,
    /// Fraction of pseudo golden GTs on read images hit by this reader's marks.
    pub sensitivity: f64,
    /// Marks hitting no pseudo golden GT, per image read.
    pub fp_rate: f64,
}

/// Per-reader sensitivity and FP rate; readers with no images are skipped.
pub fn reader_stats(
    marks: &[EllipseMark],
    gts: &[GroundTruthMark],
    rosters: &BTreeMap<u64, Vec<u64>>,
    cfg: &HitConfig,
) -> Vec<ReaderStats> {
    let golden = pseudo_golden(gts);
    let mut readers: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for (&image, roster) in rosters {
        for &r in roster {
            readers.entry(r).or_default().insert(image);
        }
    }
    for m in marks {
        readers.entry(m.reader_id).or_default();
    }
    let mut out = Vec::new();
    for (reader_id, images) in readers {
        if images.is_empty() {
            log::warn!("reader {reader_id} has marks but read no images; skipped");
            continue;
        }
        let own: Vec<&EllipseMark> = marks
            .iter()
            .filter(|m| m.reader_id == reader_id && images.contains(&m.image_id))
            .collect();
        let relevant: Vec<&PseudoGoldenGt> = golden
            .iter()
            .filter(|g| images.contains(&g.image_id))
            .collect();
        let hits = |m: &EllipseMark, g: &PseudoGoldenGt| {
            m.image_id == g.image_id && marks_overlap(m, &g.representative_ellipse, cfg)
        };
        let found = relevant
            .iter()
            .filter(|g| own.iter().any(|m| hits(m, g)))
            .count();
        let false_marks = own
            .iter()
            .filter(|m| !relevant.iter().any(|g| hits(m, g)))
            .count();
        out.push(ReaderStats {
            reader_id,
            images_read: images.len(),
            pseudo_gts: relevant.len(),
            sensitivity: if relevant.is_empty() {
                0.0
            } else {
                found as f64 / relevant.len() as f64
            },
            fp_rate: false_marks as f64 / images.len() as f64,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ellipse(image: u64, x: f64, y: f64, r: f64) -> EllipseMark {
        EllipseMark::new(0, image, 0, (x, y), (r, r), 0.0).unwrap()
    }

    fn gt(gt_id: u64, image_id: u64, x: f64, y: f64, r: f64, readers: usize) -> GroundTruthMark {
        GroundTruthMark {
            gt_id,
            image_id,
            referred_marks: (0..readers as u64).collect(),
            representative_ellipse: ellipse(image_id, x, y, r),
            score: readers,
            distinct_readers: readers,
        }
    }

    fn cand(id: u64, image: u64, x: f64, y: f64) -> Candidate {
        Candidate {
            candidate_id: id,
            image_id: image,
            x_mm: x,
            y_mm: y,
            features: vec![x, y],
        }
    }

    fn target(gt_id: u64, image_id: u64, p: f64) -> SoftTarget {
        SoftTarget {
            gt_id,
            image_id,
            p_target: p,
            n_annotators: 5,
        }
    }

    fn readers() -> BTreeMap<u64, usize> {
        BTreeMap::from([(1, 5), (2, 4)])
    }

    #[test]
    fn candidate_at_center_forms_single_instance_bag() {
        let set = build_bags(
            &[cand(1, 1, 10.0, 10.0)],
            &[gt(0, 1, 10.0, 10.0, 5.0, 3)],
            &[target(0, 1, 0.6)],
            &readers(),
            &LabelConfig::default(),
            &AssignmentRule::default(),
        )
        .unwrap();
        assert_eq!(set.bags.len(), 1);
        assert_eq!(set.bags[0].instances, vec![vec![10.0, 10.0, 1.0]]);
        assert_eq!(set.bags[0].p_target, 0.6);
        assert_eq!(set.bags[0].annotator_weight, 5.0 / 25.0);
    }

    #[test]
    fn three_inside_two_outside() {
        let cands = [
            cand(1, 1, 10.0, 10.0),
            cand(2, 1, 12.0, 9.0),
            cand(3, 1, 40.0, 40.0),
            cand(4, 1, 8.5, 11.0),
            cand(5, 1, 15.1, 10.0),
        ];
        let set = build_bags(
            &cands,
            &[gt(0, 1, 10.0, 10.0, 5.0, 3)],
            &[target(0, 1, 0.6)],
            &readers(),
            &LabelConfig::default(),
            &AssignmentRule::default(),
        )
        .unwrap();
        assert_eq!(set.bags.len(), 3);
        assert_eq!(set.bags[0].candidate_ids, vec![1, 2, 4]);
        assert_eq!(set.bags[1].candidate_ids, vec![3]);
        assert_eq!(set.bags[2].candidate_ids, vec![5]);
        assert!(set.bags[1..]
            .iter()
            .all(|b| b.p_target == 0.0 && b.instances.len() == 1));
    }

    #[test]
    fn overlapping_gts_prefer_higher_target_then_lower_id() {
        let gts = [
            gt(0, 1, 0.0, 0.0, 10.0, 2),
            gt(1, 1, 2.0, 0.0, 10.0, 4),
            gt(2, 1, 1.0, 0.0, 10.0, 4),
        ];
        let targets = [target(0, 1, 0.4), target(1, 1, 0.8), target(2, 1, 0.8)];
        let set = build_bags(
            &[cand(7, 1, 1.0, 0.0)],
            &gts,
            &targets,
            &readers(),
            &LabelConfig::default(),
            &AssignmentRule::default(),
        )
        .unwrap();
        assert_eq!(set.bags.len(), 1);
        assert_eq!(set.bags[0].p_target, 0.8);
        assert_eq!(set.missed_gts, vec![0, 2]);
    }

    fn scored(id: u64, image: u64, x: f64, score: f64) -> ScoredCandidate {
        ScoredCandidate {
            candidate_id: id,
            image_id: image,
            x_mm: x,
            y_mm: 0.0,
            score,
        }
    }

    fn golden(gt_id: u64, image_id: u64, x: f64) -> PseudoGoldenGt {
        PseudoGoldenGt {
            gt_id,
            image_id,
            representative_ellipse: ellipse(image_id, x, 0.0, 3.0),
        }
    }

    #[test]
    fn perfect_scorer_is_fully_sensitive() {
        let cands = [
            scored(1, 1, 0.0, 1.0),
            scored(2, 1, 50.0, 0.0),
            scored(3, 2, 50.0, 0.0),
        ];
        let table = froc(
            &cands,
            &[golden(0, 1, 0.0)],
            &[1, 2, 3],
            &default_fp_points(),
            &AssignmentRule::default(),
        )
        .unwrap();
        assert!(table.gt_sensitivity.iter().all(|&s| s == 100.0));
        assert!(table.image_sensitivity.iter().all(|&s| s == 100.0));
    }

    #[test]
    fn no_candidates_gives_zero_table() {
        let table = froc(
            &[],
            &[golden(0, 1, 0.0)],
            &[1],
            &[0.5, 1.0],
            &AssignmentRule::default(),
        )
        .unwrap();
        assert_eq!(table.gt_sensitivity, vec![0.0, 0.0]);
        assert_eq!(table.thresholds, vec![f64::NEG_INFINITY; 2]);
    }

    #[test]
    fn constant_scorer_is_all_or_nothing() {
        // Four images, two negatives: 0.5 FP/image admits both.
        let cands = [
            scored(1, 1, 0.0, 0.3),
            scored(2, 1, 50.0, 0.3),
            scored(3, 2, 50.0, 0.3),
        ];
        let table = froc(
            &cands,
            &[golden(0, 1, 0.0)],
            &[1, 2, 3, 4],
            &[0.25, 0.5],
            &AssignmentRule::default(),
        )
        .unwrap();
        assert_eq!(table.gt_sensitivity, vec![0.0, 100.0]);
        assert_eq!(table.achieved_fp, vec![0.0, 0.5]);
    }

    #[test]
    fn rejects_bad_fp_grid() {
        assert!(validate_fp_points(&[]).is_err());
        assert!(validate_fp_points(&[1.0, 0.5]).is_err());
        assert!(validate_fp_points(&[0.0, 0.5]).is_err());
    }

    #[test]
    fn reader_stats_for_two_readers() {
        let m = |id, reader, image, x| {
            EllipseMark::new(id, image, reader, (x, 0.0), (3.0, 3.0), 0.0).unwrap()
        };
        // Reader 1 finds the pseudo GT on image 1 and adds a stray mark on image 2.
        // Reader 2 reads both images and marks nothing.
        let marks = [m(1, 1, 1, 0.0), m(2, 1, 2, 80.0)];
        let gts = [gt(0, 1, 0.0, 0.0, 3.0, 2), gt(1, 2, 80.0, 0.0, 3.0, 1)];
        let rosters = BTreeMap::from([(1, vec![1, 2]), (2, vec![1, 2])]);
        let stats = reader_stats(&marks, &gts, &rosters, &HitConfig::default());
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].sensitivity, 1.0);
        assert_eq!(stats[0].fp_rate, 0.5);
        assert_eq!(stats[1].sensitivity, 0.0);
        assert_eq!(stats[1].fp_rate, 0.0);
    }
}
