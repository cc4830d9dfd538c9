//! Central finite-difference verification of the analytic derivatives.
//!
//! Errors are reported scale-normalized: `max |a - b| / max(max |a|, max |b|)`
//! over all entries, with the denominator floored at `f64::MIN_POSITIVE`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::objective::{Bag, ModelWeights, Normalization, NormalizationMode, Objective};

pub const DEFAULT_STEP: f64 = 1e-5;

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// Central differences of the smooth divergence `N(w)`.
pub fn numerical_gradient(obj: &Objective<'_>, w: &ModelWeights, step: f64) -> Result<Vec<f64>> {
    let mut probe = w.clone();
    let mut out = Vec::with_capacity(w.dim());
    for i in 0..w.dim() {
        let orig = w.w[i];
        probe.w[i] = orig + step;
        let up = obj.divergence(&probe)?;
        probe.w[i] = orig - step;
        let down = obj.divergence(&probe)?;
        probe.w[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Central differences of the analytic gradient, column by column.
pub fn numerical_hessian(obj: &Objective<'_>, w: &ModelWeights, step: f64) -> Result<Array2<f64>> {
    let d = w.dim();
    let mut probe = w.clone();
    let mut out = Array2::zeros((d, d));
    for j in 0..d {
        let orig = w.w[j];
        probe.w[j] = orig + step;
        let up = obj.gradient(&probe)?;
        probe.w[j] = orig - step;
        let down = obj.gradient(&probe)?;
        probe.w[j] = orig;
        for i in 0..d {
            out[[i, j]] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeCheck {
    pub gradient_error: f64,
    pub hessian_error: f64,
}

pub fn check_derivatives(
    obj: &Objective<'_>,
    w: &ModelWeights,
    step: f64,
) -> Result<DerivativeCheck> {
    let analytic_g = obj.gradient(w)?;
    let numeric_g = numerical_gradient(obj, w, step)?;
    let analytic_h = obj.hessian(w)?;
    let numeric_h = numerical_hessian(obj, w, step)?;
    Ok(DerivativeCheck {
        gradient_error: max_relative_error(&analytic_g, &numeric_g),
        hessian_error: max_relative_error(
            analytic_h.as_slice().expect("standard layout"),
            numeric_h.as_slice().expect("standard layout"),
        ),
    })
}

/// Shape of a randomly drawn verification problem.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProblemShape {
    /// Total dimension including the intercept.
    pub dim: usize,
    pub bag_size: usize,
    pub n_soft: usize,
    pub n_hard: usize,
    pub normalization: Normalization,
    pub annotator_weights: bool,
}

/// Random bags and weights with O(1) features and O(1) margins.
pub fn random_problem<R: Rng>(rng: &mut R, shape: &ProblemShape) -> (Vec<Bag>, ModelWeights) {
    let d = shape.dim;
    let instance = |rng: &mut R| -> Vec<f64> {
        let mut x: Vec<f64> = (0..d - 1).map(|_| StandardNormal.sample(rng)).collect();
        x.push(1.0);
        x
    };
    let mut bags = Vec::new();
    for _ in 0..shape.n_soft {
        let instances = (0..shape.bag_size).map(|_| instance(rng)).collect();
        let target = match rng.random_range(0..4) {
            0 => 1.0,
            1 => 0.0,
            _ => rng.random_range(0.01..1.0),
        };
        let a = rng.random_range(4..=25) as f64 / 25.0;
        bags.push(Bag::soft(bags.len() as u64, 0, instances, target, a));
    }
    for _ in 0..shape.n_hard {
        let a = rng.random_range(4..=25) as f64 / 25.0;
        bags.push(Bag::hard_negative(bags.len() as u64, 0, instance(rng), a));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut w = ModelWeights::zeros_with_intercept(d);
    for v in &mut w.w {
        *v = scale * rng.random_range(-1.0..1.0);
    }
    (bags, w)
}

/// Draws a problem of the given shape and checks its derivatives.
pub fn check_random_problem<R: Rng>(
    rng: &mut R,
    shape: &ProblemShape,
    step: f64,
) -> Result<DerivativeCheck> {
    let (bags, w) = random_problem(rng, shape);
    let mode = NormalizationMode::new(shape.normalization, 0.0)?;
    let obj = Objective::new(&bags, mode, shape.annotator_weights)?;
    check_derivatives(&obj, &w, step)
}
