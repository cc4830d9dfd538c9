//! Greedy seeded merging of reader marks into ground-truth marks.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ellipse::{ellipse_intersection_area, EllipseMark};
use crate::error::{Error, Result};

/// Thresholds of the adaptive hit rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HitConfig {
    /// Upper bound T0 on the normalized-overlap threshold.
    pub t0: f64,
    /// Two marks are "similar" in size when min(D)/max(D) exceeds this.
    pub similar_size_fraction: f64,
    /// ...and in position when center distance / max(D) is below this.
    pub similar_center_distance: f64,
}

impl Default for HitConfig {
    fn default() -> Self {
        HitConfig {
            t0: 0.63,
            similar_size_fraction: 0.7,
            similar_center_distance: 0.1,
        }
    }
}

impl HitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 <= 1.0) {
            return Err(Error::Config(format!(
                "t0 must be in (0, 1], got {}",
                self.t0
            )));
        }
        if !(self.similar_size_fraction > 0.0 && self.similar_size_fraction < 1.0) {
            return Err(Error::Config(format!(
                "similar_size_fraction must be in (0, 1), got {}",
                self.similar_size_fraction
            )));
        }
        if !(self.similar_center_distance > 0.0) {
            return Err(Error::Config(format!(
                "similar_center_distance must be positive, got {}",
                self.similar_center_distance
            )));
        }
        Ok(())
    }
}

/// Intermediate group formed around one seeding mark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimaryGt {
    /// Seed first, then its hitting marks in seeding order.
    pub referred_marks: Vec<u64>,
    pub representative: u64,
    pub score: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMark {
    pub gt_id: u64,
    pub image_id: u64,
    pub referred_marks: Vec<u64>,
    pub representative_ellipse: EllipseMark,
    /// Number of referred marks.
    pub score: usize,
    pub distinct_readers: usize,
}

/// Adaptive overlap threshold T for a pair of marks.
pub fn hit_threshold(a: &EllipseMark, b: &EllipseMark, cfg: &HitConfig) -> f64 {
    let (da, db) = (a.size_mm(), b.size_mm());
    let (small, large) = if da <= db { (da, db) } else { (db, da) };
    let similar = small / large > cfg.similar_size_fraction
        && a.center_distance(b) / large < cfg.similar_center_distance;
    let d = if similar { large } else { small };
    cfg.t0.min(cfg.t0 / 20.0 * d)
}

/// Normalized-overlap test without the different-reader requirement.
pub fn marks_overlap(a: &EllipseMark, b: &EllipseMark, cfg: &HitConfig) -> bool {
    let overlap = ellipse_intersection_area(a, b);
    if overlap <= 0.0 {
        return false;
    }
    overlap / a.area().max(b.area()) > hit_threshold(a, b, cfg)
}

/// Two marks hit when they come from different readers and overlap enough.
pub fn marks_hit(a: &EllipseMark, b: &EllipseMark, cfg: &HitConfig) -> bool {
    a.reader_id != b.reader_id && marks_overlap(a, b, cfg)
}

/// Runs the seeding loop and returns the primary GTs in creation order.
pub fn primary_gts(marks: &[EllipseMark], cfg: &HitConfig, seed: u64) -> Vec<PrimaryGt> {
    let n = marks.len();
    let mut hits: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if marks_hit(&marks[i], &marks[j], cfg) {
                hits[i].push(j);
                hits[j].push(i);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        hits[j]
            .len()
            .cmp(&hits[i].len())
            .then(marks[i].mark_id.cmp(&marks[j].mark_id))
    });
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut consumed = vec![false; n];
    let mut primaries = Vec::new();
    for &seed_idx in &order {
        if consumed[seed_idx] {
            continue;
        }
        let mut members: Vec<usize> = hits[seed_idx]
            .iter()
            .copied()
            .filter(|&j| !consumed[j])
            .collect();
        members.sort_by_key(|&j| rank[j]);
        members.insert(0, seed_idx);
        for &m in &members {
            consumed[m] = true;
        }
        let representative = representative_mark(marks, &members, seed);
        primaries.push(PrimaryGt {
            referred_marks: members.iter().map(|&m| marks[m].mark_id).collect(),
            representative: marks[representative].mark_id,
            score: members.len(),
        });
    }
    primaries
}

/// Median-size mark for three or more, a seeded coin flip for two.
fn representative_mark(marks: &[EllipseMark], members: &[usize], seed: u64) -> usize {
    match members.len() {
        1 => members[0],
        2 => {
            let mut ids = [marks[members[0]].mark_id, marks[members[1]].mark_id];
            ids.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &ids));
            let pick = ids[rng.random_range(0..2)];
            if marks[members[0]].mark_id == pick {
                members[0]
            } else {
                members[1]
            }
        }
        len => {
            let mut by_size = members.to_vec();
            by_size.sort_by(|&i, &j| {
                marks[i]
                    .size_mm()
                    .total_cmp(&marks[j].size_mm())
                    .then(marks[i].mark_id.cmp(&marks[j].mark_id))
            });
            by_size[(len - 1) / 2]
        }
    }
}

fn mix_seed(seed: u64, ids: &[u64]) -> u64 {
    // splitmix64 finalizer folded over the ids
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &id in ids {
        h = h.wrapping_add(id).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Fuses the marks of a single image into final ground-truth marks.
///
/// Primary GTs whose representatives overlap (reader constraint waived) are
/// joined transitively; the joined GT keeps the representative of its
/// earliest primary and refers to every mark of its members. `gt_id`s are
/// assigned `0..` in output order.
pub fn merge_marks(
    marks: &[EllipseMark],
    cfg: &HitConfig,
    seed: u64,
) -> Result<Vec<GroundTruthMark>> {
    let Some(first) = marks.first() else {
        return Ok(Vec::new());
    };
    let image_id = first.image_id;
    if let Some(stray) = marks.iter().find(|m| m.image_id != image_id) {
        return Err(Error::validation(format!(
            "merge_marks: mark {} is on image {}, expected {}",
            stray.mark_id, stray.image_id, image_id
        )));
    }
    let mut seen = BTreeSet::new();
    for m in marks {
        if !seen.insert(m.mark_id) {
            return Err(Error::validation(format!(
                "duplicate mark id {}",
                m.mark_id
            )));
        }
    }

    let by_id = |id: u64| {
        marks
            .iter()
            .find(|m| m.mark_id == id)
            .expect("known mark id")
    };
    let primaries = primary_gts(marks, cfg, seed);
    let reps: Vec<&EllipseMark> = primaries.iter().map(|p| by_id(p.representative)).collect();

    let mut parent: Vec<usize> = (0..primaries.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..primaries.len() {
        for j in (i + 1)..primaries.len() {
            if marks_overlap(reps[i], reps[j], cfg) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // Keep the earlier primary as the root.
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut gts: Vec<GroundTruthMark> = Vec::new();
    let mut slot_of_root: Vec<Option<usize>> = vec![None; primaries.len()];
    for (i, primary) in primaries.iter().enumerate() {
        let root = find(&mut parent, i);
        let slot = match slot_of_root[root] {
            Some(s) => s,
            None => {
                gts.push(GroundTruthMark {
                    gt_id: gts.len() as u64,
                    image_id,
                    referred_marks: Vec::new(),
                    representative_ellipse: *reps[root],
                    score: 0,
                    distinct_readers: 0,
                });
                slot_of_root[root] = Some(gts.len() - 1);
                gts.len() - 1
            }
        };
        gts[slot]
            .referred_marks
            .extend_from_slice(&primary.referred_marks);
    }
    for gt in &mut gts {
        gt.score = gt.referred_marks.len();
        gt.distinct_readers = gt
            .referred_marks
            .iter()
            .map(|&id| by_id(id).reader_id)
            .collect::<BTreeSet<_>>()
            .len();
    }
    Ok(gts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(id: u64, reader: u64, x: f64, y: f64, r: f64) -> EllipseMark {
        EllipseMark::new(id, 7, reader, (x, y), (r, r), 0.0).unwrap()
    }

    #[test]
    fn threshold_for_similar_small_marks() {
        let cfg = HitConfig::default();
        let a = circle(1, 1, 0.0, 0.0, 5.0);
        let b = circle(2, 2, 0.0, 0.0, 5.0);
        assert!((hit_threshold(&a, &b, &cfg) - 0.315).abs() < 1e-12);
    }

    #[test]
    fn threshold_saturates_for_large_marks() {
        let cfg = HitConfig::default();
        let a = circle(1, 1, 0.0, 0.0, 50.0);
        let b = circle(2, 2, 0.0, 0.0, 50.0);
        assert_eq!(hit_threshold(&a, &b, &cfg), 0.63);
    }

    #[test]
    fn threshold_for_dissimilar_marks_uses_smaller_size() {
        let cfg = HitConfig::default();
        let a = circle(1, 1, 0.0, 0.0, 20.0);
        let b = circle(2, 2, 0.0, 0.0, 5.0);
        assert!((hit_threshold(&a, &b, &cfg) - 0.315).abs() < 1e-12);
        assert_eq!(hit_threshold(&a, &b, &cfg), hit_threshold(&b, &a, &cfg));
    }

    #[test]
    fn same_reader_never_hits() {
        let cfg = HitConfig::default();
        let a = circle(1, 3, 0.0, 0.0, 5.0);
        let b = circle(2, 3, 0.0, 0.0, 5.0);
        assert!(!marks_hit(&a, &b, &cfg));
        assert!(marks_overlap(&a, &b, &cfg));
    }

    #[test]
    fn ten_mm_circles_with_forty_percent_overlap_hit() {
        let cfg = HitConfig::default();
        // Diameter 10 mm; 4.9 mm apart gives an overlap ratio of about 0.40.
        let a = circle(1, 1, 0.0, 0.0, 5.0);
        let b = circle(2, 2, 4.9, 0.0, 5.0);
        assert!((hit_threshold(&a, &b, &cfg) - 0.315).abs() < 1e-12);
        let ratio = ellipse_intersection_area(&a, &b) / a.area();
        assert!((ratio - 0.40).abs() < 0.01, "{ratio}");
        assert!(marks_hit(&a, &b, &cfg));
        assert!(marks_hit(&b, &a, &cfg));
    }

    #[test]
    fn two_identical_marks_fuse() {
        let marks = [circle(1, 1, 0.0, 0.0, 6.0), circle(2, 2, 0.0, 0.0, 6.0)];
        let gts = merge_marks(&marks, &HitConfig::default(), 0).unwrap();
        assert_eq!(gts.len(), 1);
        assert_eq!(gts[0].score, 2);
        assert_eq!(gts[0].distinct_readers, 2);
    }

    #[test]
    fn two_disjoint_marks_stay_apart() {
        let marks = [circle(1, 1, 0.0, 0.0, 6.0), circle(2, 2, 40.0, 0.0, 6.0)];
        let gts = merge_marks(&marks, &HitConfig::default(), 0).unwrap();
        assert_eq!(gts.len(), 2);
        assert!(gts.iter().all(|g| g.score == 1 && g.distinct_readers == 1));
    }

    #[test]
    fn empty_input_gives_no_gts() {
        assert!(merge_marks(&[], &HitConfig::default(), 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn mixed_images_are_rejected() {
        let mut b = circle(2, 2, 0.0, 0.0, 6.0);
        b.image_id = 8;
        assert!(merge_marks(&[circle(1, 1, 0.0, 0.0, 6.0), b], &HitConfig::default(), 0).is_err());
    }

    #[test]
    fn median_size_representative() {
        // Three concentric circles from three readers, all hitting each other.
        let marks = [
            circle(10, 1, 0.0, 0.0, 20.0),
            circle(11, 2, 0.0, 0.0, 18.0),
            circle(12, 3, 0.0, 0.0, 19.0),
        ];
        let primaries = primary_gts(&marks, &HitConfig::default(), 0);
        assert_eq!(primaries.len(), 1);
        assert_eq!(primaries[0].representative, 12);
        assert_eq!(primaries[0].referred_marks[0], 10);
    }

    #[test]
    fn pair_representative_depends_only_on_seed() {
        let marks = [circle(1, 1, 0.0, 0.0, 6.0), circle(2, 2, 0.5, 0.0, 6.0)];
        let reversed = [marks[1], marks[0]];
        let mut picks = BTreeSet::new();
        for seed in 0..32 {
            let a = primary_gts(&marks, &HitConfig::default(), seed);
            let b = primary_gts(&reversed, &HitConfig::default(), seed);
            assert_eq!(a[0].representative, b[0].representative);
            picks.insert(a[0].representative);
        }
        assert_eq!(picks.len(), 2, "both marks should be chosen for some seed");
    }
}
