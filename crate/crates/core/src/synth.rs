//! Seeded synthetic datasets following the multiple-instance generative model.
//!
//! Each image gets a reader roster, a few elliptical lesions and some
//! background candidates. Candidate features are standard normal; an
//! instance is positive with probability `sigma(w_true . x + b_true)`.
//! Lesion candidate sets are redrawn until at least one instance is positive,
//! background candidates until they are negative. Readers mark a lesion with
//! probability `1 - noise * (1 - p_bag)` where `p_bag` is the lesion's bag
//! probability, with geometric jitter and occasional spurious marks that grow
//! with `noise`.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::evaluation::Candidate;
use crate::marks::EllipseMark;
use crate::objective::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    /// Readers available; each image draws its roster from `1..=reader_pool`.
    pub reader_pool: usize,
    pub roster_min: usize,
    pub roster_max: usize,
    pub n_features: usize,
    /// Number of nonzero coordinates of the planted weight vector.
    pub support: usize,
    /// Absolute value of every planted weight; signs alternate.
    pub magnitude: f64,
    pub intercept: f64,
    /// Upper bound on lesions per image.
    pub max_lesions: usize,
    /// Probability of each potential lesion being present.
    pub lesion_probability: f64,
    pub min_candidates_per_lesion: usize,
    pub max_candidates_per_lesion: usize,
    pub background_candidates: usize,
    /// 0 gives unanimous, exact marks; 1 makes readers follow the bag probability.
    pub noise: f64,
    pub image_size_mm: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 300,
            reader_pool: 8,
            roster_min: 4,
            roster_max: 5,
            n_features: 50,
            support: 5,
            magnitude: 4.0,
            intercept: -1.0,
            max_lesions: 2,
            lesion_probability: 0.3,
            min_candidates_per_lesion: 1,
            max_candidates_per_lesion: 3,
            background_candidates: 6,
            noise: 0.3,
            image_size_mm: 300.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_images == 0 {
            return bad("n_images must be positive");
        }
        if self.roster_min == 0
            || self.roster_min > self.roster_max
            || self.roster_max > self.reader_pool
        {
            return bad("need 1 <= roster_min <= roster_max <= reader_pool");
        }
        if self.n_features == 0 || self.support > self.n_features {
            return bad("need support <= n_features and n_features >= 1");
        }
        if !(self.magnitude.is_finite() && self.intercept.is_finite()) {
            return bad("magnitude and intercept must be finite");
        }
        if !(0.0..=1.0).contains(&self.lesion_probability) || !(0.0..=1.0).contains(&self.noise) {
            return bad("lesion_probability and noise must be in [0, 1]");
        }
        if self.min_candidates_per_lesion == 0
            || self.min_candidates_per_lesion > self.max_candidates_per_lesion
        {
            return bad("need 1 <= min_candidates_per_lesion <= max_candidates_per_lesion");
        }
        if !(self.image_size_mm >= 150.0) {
            return bad("image_size_mm must be at least 150");
        }
        Ok(())
    }
}

/// A planted lesion, kept for reference alongside the generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLesion {
    pub image_id: u64,
    pub cx_mm: f64,
    pub cy_mm: f64,
    pub r1_mm: f64,
    pub r2_mm: f64,
    pub theta_rad: f64,
    pub bag_probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Planted weights over the features, intercept last.
    pub true_weights: Vec<f64>,
    pub lesions: Vec<PlantedLesion>,
}

const MAX_REDRAWS: usize = 10_000;

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    w_true: Vec<f64>,
}

impl Generator<'_> {
    fn logit(&self, x: &[f64]) -> f64 {
        self.cfg.intercept + x.iter().zip(&self.w_true).map(|(a, b)| a * b).sum::<f64>()
    }

    fn features(&mut self) -> Vec<f64> {
        (0..self.cfg.n_features)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect()
    }

    fn instance_positive(&mut self, x: &[f64]) -> bool {
        let p = sigmoid(self.logit(x));
        self.rng.random_bool(p)
    }

    fn negative_instance(&mut self) -> Result<Vec<f64>> {
        for _ in 0..MAX_REDRAWS {
            let x = self.features();
            if !self.instance_positive(&x) {
                return Ok(x);
            }
        }
        Err(Error::Config(
            "synth: could not draw a negative instance; check intercept".into(),
        ))
    }

    /// Instances of a bag conditioned on at least one being positive.
    fn positive_bag(&mut self, k: usize) -> Result<Vec<Vec<f64>>> {
        for _ in 0..MAX_REDRAWS {
            let xs: Vec<Vec<f64>> = (0..k).map(|_| self.features()).collect();
            let mut any = false;
            for x in &xs {
                any |= self.instance_positive(x);
            }
            if any {
                return Ok(xs);
            }
        }
        Err(Error::Config(
            "synth: could not draw a positive bag; check intercept".into(),
        ))
    }

    fn point_in_disk(&mut self, cx: f64, cy: f64, radius: f64) -> (f64, f64) {
        let r = radius * self.rng.random::<f64>().sqrt();
        let a = self.rng.random_range(0.0..2.0 * PI);
        (cx + r * a.cos(), cy + r * a.sin())
    }
}

/// Generates a dataset and the planted weights.
pub fn synth(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let support = sample(&mut rng, cfg.n_features, cfg.support).into_vec();
    let mut w_true = vec![0.0; cfg.n_features];
    let mut sorted_support = support.clone();
    sorted_support.sort_unstable();
    for (k, &i) in sorted_support.iter().enumerate() {
        w_true[i] = if k % 2 == 0 {
            cfg.magnitude
        } else {
            -cfg.magnitude
        };
    }
    let mut gen = Generator { cfg, rng, w_true };

    let size = cfg.image_size_mm;
    let margin = 40.0;
    let mut images = Vec::new();
    let mut marks = Vec::new();
    let mut candidates = Vec::new();
    let mut lesions = Vec::new();

    for i in 0..cfg.n_images {
        let image_id = i as u64 + 1;
        let roster_size = gen.rng.random_range(cfg.roster_min..=cfg.roster_max);
        let mut reader_ids: Vec<u64> = sample(&mut gen.rng, cfg.reader_pool, roster_size)
            .into_iter()
            .map(|r| r as u64 + 1)
            .collect();
        reader_ids.sort_unstable();

        let mut image_lesions: Vec<PlantedLesion> = Vec::new();
        for _ in 0..cfg.max_lesions {
            if !gen.rng.random_bool(cfg.lesion_probability) {
                continue;
            }
            let r1 = gen.rng.random_range(8.0..20.0);
            let r2 = r1 * gen.rng.random_range(0.6..1.0);
            let theta = gen.rng.random_range(0.0..PI);
            let mut placed = None;
            for _ in 0..100 {
                let cx = gen.rng.random_range(margin..size - margin);
                let cy = gen.rng.random_range(margin..size - margin);
                let clear = image_lesions
                    .iter()
                    .all(|l| (l.cx_mm - cx).hypot(l.cy_mm - cy) > l.r1_mm + r1 + 10.0);
                if clear {
                    placed = Some((cx, cy));
                    break;
                }
            }
            let Some((cx, cy)) = placed else { continue };
            let k = gen
                .rng
                .random_range(cfg.min_candidates_per_lesion..=cfg.max_candidates_per_lesion);
            let xs = gen.positive_bag(k)?;
            let log_q: f64 = xs.iter().map(|x| (1.0 - sigmoid(gen.logit(x))).ln()).sum();
            let bag_probability = -log_q.exp_m1();
            for x in xs {
                let (x_mm, y_mm) = gen.point_in_disk(cx, cy, 0.3 * r2);
                candidates.push(Candidate {
                    candidate_id: candidates.len() as u64 + 1,
                    image_id,
                    x_mm,
                    y_mm,
                    features: x,
                });
            }
            image_lesions.push(PlantedLesion {
                image_id,
                cx_mm: cx,
                cy_mm: cy,
                r1_mm: r1,
                r2_mm: r2,
                theta_rad: theta,
                bag_probability,
            });
        }

        let outside_lesions = |p: (f64, f64), lesions: &[PlantedLesion]| {
            lesions
                .iter()
                .all(|l| (l.cx_mm - p.0).hypot(l.cy_mm - p.1) > 1.5 * l.r1_mm + 5.0)
        };
        for _ in 0..cfg.background_candidates {
            let mut loc = (0.0, 0.0);
            for _ in 0..1000 {
                loc = (
                    gen.rng.random_range(0.0..size),
                    gen.rng.random_range(0.0..size),
                );
                if outside_lesions(loc, &image_lesions) {
                    break;
                }
            }
            let x = gen.negative_instance()?;
            candidates.push(Candidate {
                candidate_id: candidates.len() as u64 + 1,
                image_id,
                x_mm: loc.0,
                y_mm: loc.1,
                features: x,
            });
        }

        for &reader in &reader_ids {
            for l in &image_lesions {
                let p_mark = 1.0 - cfg.noise * (1.0 - l.bag_probability);
                if !gen.rng.random_bool(p_mark.clamp(0.0, 1.0)) {
                    continue;
                }
                let (cx, cy, a, b, theta) = if cfg.noise == 0.0 {
                    (l.cx_mm, l.cy_mm, l.r1_mm, l.r2_mm, l.theta_rad)
                } else {
                    let center = Normal::new(0.0, cfg.noise * 0.1 * l.r2_mm).expect("positive sd");
                    let scale = Normal::new(0.0, cfg.noise * 0.05).expect("positive sd");
                    let turn = Normal::new(0.0, cfg.noise * 0.1).expect("positive sd");
                    (
                        l.cx_mm + center.sample(&mut gen.rng),
                        l.cy_mm + center.sample(&mut gen.rng),
                        l.r1_mm * scale.sample(&mut gen.rng).exp(),
                        l.r2_mm * scale.sample(&mut gen.rng).exp(),
                        l.theta_rad + turn.sample(&mut gen.rng),
                    )
                };
                marks.push(EllipseMark::new(
                    marks.len() as u64 + 1,
                    image_id,
                    reader,
                    (cx, cy),
                    (a, b),
                    theta,
                )?);
            }
            if cfg.noise > 0.0 && gen.rng.random_bool(cfg.noise * 0.05) {
                let r = gen.rng.random_range(5.0..15.0);
                let mut loc = (0.0, 0.0);
                for _ in 0..1000 {
                    loc = (
                        gen.rng.random_range(margin..size - margin),
                        gen.rng.random_range(margin..size - margin),
                    );
                    if outside_lesions(loc, &image_lesions) {
                        break;
                    }
                }
                let ratio = gen.rng.random_range(0.6..1.0);
                let theta = gen.rng.random_range(0.0..PI);
                marks.push(EllipseMark::new(
                    marks.len() as u64 + 1,
                    image_id,
                    reader,
                    loc,
                    (r, r * ratio),
                    theta,
                )?);
            }
        }

        images.push(ImageRecord {
            image_id,
            reader_ids,
        });
        lesions.extend(image_lesions);
    }

    let mut true_weights = gen.w_true.clone();
    true_weights.push(cfg.intercept);
    let dataset = Dataset {
        images,
        marks,
        candidates,
        feature_names: (1..=cfg.n_features).map(|i| format!("f{i:03}")).collect(),
    };
    dataset.validate()?;
    Ok(SynthOutput {
        dataset,
        true_weights,
        lesions,
    })
}
