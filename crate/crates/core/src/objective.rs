//! Soft multiple-instance cross-entropy objective with analytic derivatives.
//!
//! A bag of instances `x_k` is positive with probability
//! `p = 1 - prod_k (1 - sigma(w . x_k))`. Each bag carries a target
//! probability `t` and contributes `D = -[t ln p + (1 - t) ln(1 - p)]`, which
//! differs from the KL divergence `KL(t || p)` only by the entropy of `t`.
//!
//! With `xg = sum_k sigma(z_k) x_k`, `S = sum_k sigma(z_k) sigma(-z_k) x_k x_k^T`:
//!
//! ```text
//! grad D = (1 - t/p) xg
//! hess D = (1 - t/p) S + t (1 - p)/p^2 xg xg^T
//! ```
//!
//! Single-instance bags with target 0 (hard negatives) reduce to plain
//! logistic terms `sigma(z) x` and `sigma(z) sigma(-z) x x^T` and are
//! dispatched to a dedicated path.
//!
//! All reductions run sequentially in bag order, so repeated evaluations are
//! bitwise identical.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp applied to bag probabilities before taking logs.
pub const PROBABILITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BagKind {
    SoftPositive,
    HardNegative,
}

/// A group of feature vectors sharing one target probability.
///
/// Every instance already carries the constant-1 intercept component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub bag_id: u64,
    pub image_id: u64,
    pub instances: Vec<Vec<f64>>,
    pub p_target: f64,
    /// Annotator-count weight `n / n_max`.
    pub annotator_weight: f64,
    pub kind: BagKind,
    /// Source candidates, parallel to `instances`.
    #[serde(default)]
    pub candidate_ids: Vec<u64>,
}

impl Bag {
    pub fn soft(
        bag_id: u64,
        image_id: u64,
        instances: Vec<Vec<f64>>,
        p_target: f64,
        annotator_weight: f64,
    ) -> Self {
        Bag {
            bag_id,
            image_id,
            instances,
            p_target,
            annotator_weight,
            kind: BagKind::SoftPositive,
            candidate_ids: Vec::new(),
        }
    }

    pub fn hard_negative(
        bag_id: u64,
        image_id: u64,
        instance: Vec<f64>,
        annotator_weight: f64,
    ) -> Self {
        Bag {
            bag_id,
            image_id,
            instances: vec![instance],
            p_target: 0.0,
            annotator_weight,
            kind: BagKind::HardNegative,
            candidate_ids: Vec::new(),
        }
    }

    pub fn with_candidates(mut self, candidate_ids: Vec<u64>) -> Self {
        self.candidate_ids = candidate_ids;
        self
    }

    pub fn dim(&self) -> usize {
        self.instances.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::validation(format!("bag {}: {msg}", self.bag_id)));
        if self.instances.is_empty() {
            return err("no instances".into());
        }
        let d = self.dim();
        if self.instances.iter().any(|x| x.len() != d) {
            return err("instances of differing dimension".into());
        }
        if self.instances.iter().flatten().any(|v| !v.is_finite()) {
            return err("non-finite feature value".into());
        }
        if !(0.0..=1.0).contains(&self.p_target) {
            return err(format!("target {} outside [0, 1]", self.p_target));
        }
        if !(self.annotator_weight > 0.0 && self.annotator_weight <= 1.0) {
            return err(format!(
                "annotator weight {} outside (0, 1]",
                self.annotator_weight
            ));
        }
        if self.kind == BagKind::HardNegative && (self.p_target != 0.0 || self.instances.len() != 1)
        {
            return err("hard negatives need exactly one instance and target 0".into());
        }
        if !self.candidate_ids.is_empty() && self.candidate_ids.len() != self.instances.len() {
            return err("candidate ids do not match instances".into());
        }
        Ok(())
    }
}

/// Dense weights; the penalty skips coordinates whose mask entry is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub w: Vec<f64>,
    pub penalized: Vec<bool>,
}

impl ModelWeights {
    /// Zero weights of total dimension `dim`, the last coordinate being an
    /// unpenalized intercept.
    pub fn zeros_with_intercept(dim: usize) -> Self {
        let mut penalized = vec![true; dim];
        if let Some(last) = penalized.last_mut() {
            *last = false;
        }
        ModelWeights {
            w: vec![0.0; dim],
            penalized,
        }
    }

    pub fn from_parts(w: Vec<f64>, penalized: Vec<bool>) -> Result<Self> {
        if w.len() != penalized.len() {
            return Err(Error::validation(
                "weights and penalty mask differ in length",
            ));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite weight"));
        }
        Ok(ModelWeights { w, penalized })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Count of nonzero penalized coordinates.
    pub fn nnz(&self) -> usize {
        self.w
            .iter()
            .zip(&self.penalized)
            .filter(|(v, &p)| p && **v != 0.0)
            .count()
    }

    pub fn l1_norm(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.penalized)
            .filter(|(_, &p)| p)
            .map(|(v, _)| v.abs())
            .sum()
    }

    /// Instance probability `sigma(w . x)`.
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.w, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Plain sum of bag divergences.
    Raw,
    /// Divided by the number of bags.
    PerSample,
    /// Soft-positive and hard-negative sums divided by their own bag counts.
    PerClass,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "per-sample" => Ok(Normalization::PerSample),
            "per-class" => Ok(Normalization::PerClass),
            other => Err(Error::Config(format!(
                "unknown normalization `{other}` (expected raw, per-sample or per-class)"
            ))),
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::Raw => "raw",
            Normalization::PerSample => "per-sample",
            Normalization::PerClass => "per-class",
        })
    }
}

/// Normalization together with the L1 strength. The penalty applied is
/// `(lambda / d) * sum |w_i|` over penalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMode {
    pub normalization: Normalization,
    pub lambda: f64,
}

impl NormalizationMode {
    pub fn new(normalization: Normalization, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(NormalizationMode {
            normalization,
            lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub value: f64,
    /// Gradient of the smooth divergence part only.
    pub gradient: Vec<f64>,
    pub hessian: Option<Array2<f64>>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(bag: &Bag, w: &ModelWeights) -> Result<()> {
    if bag.instances.iter().any(|x| x.len() != w.dim()) {
        return Err(Error::validation(format!(
            "bag {}: instance dimension {} does not match weight dimension {}",
            bag.bag_id,
            bag.dim(),
            w.dim()
        )));
    }
    Ok(())
}

/// `ln(1 - p)` of a bag, accumulated in log space.
fn log_negative_probability(bag: &Bag, w: &ModelWeights) -> f64 {
    -bag.instances
        .iter()
        .map(|x| softplus(dot(&w.w, x)))
        .sum::<f64>()
}

/// Clamped `(ln p, ln(1 - p))` for a bag.
fn clamped_log_probabilities(bag: &Bag, w: &ModelWeights) -> (f64, f64) {
    let lo = PROBABILITY_EPS.ln();
    let hi = (-PROBABILITY_EPS).ln_1p();
    let log_q = log_negative_probability(bag, w);
    let log_p = (-log_q.exp_m1()).ln();
    (log_p.clamp(lo, hi), log_q.clamp(lo, hi))
}

/// Target-weighted log-likelihood `t ln p + (1 - t) ln(1 - p)`.
fn cross_term(target: f64, log_p: f64, log_q: f64) -> f64 {
    target * log_p + (1.0 - target) * log_q
}

/// Probability that at least one instance of the bag is positive.
pub fn bag_positive_probability(bag: &Bag, w: &ModelWeights) -> Result<f64> {
    check_dim(bag, w)?;
    Ok(-log_negative_probability(bag, w).exp_m1())
}

/// Cross-entropy of the bag target against the modeled bag probability.
pub fn bag_divergence(bag: &Bag, w: &ModelWeights) -> Result<f64> {
    check_dim(bag, w)?;
    let (log_p, log_q) = clamped_log_probabilities(bag, w);
    Ok(-cross_term(bag.p_target, log_p, log_q))
}

/// Log-likelihood of binary-labelled bags, `sum_mu y ln p + (1 - y) ln(1 - p)`.
pub fn hard_label_log_likelihood(bags: &[Bag], w: &ModelWeights) -> Result<f64> {
    let mut total = 0.0;
    for bag in bags {
        check_dim(bag, w)?;
        let y = binary_label(bag)?;
        let (log_p, log_q) = clamped_log_probabilities(bag, w);
        total += cross_term(y, log_p, log_q);
    }
    Ok(total)
}

/// Raw, unpenalized, unweighted objective on binary-labelled bags; equals the
/// negated [`hard_label_log_likelihood`] bit for bit.
pub fn reduce_to_hard_label_objective(bags: &[Bag], w: &ModelWeights) -> Result<f64> {
    for bag in bags {
        binary_label(bag)?;
    }
    let mode = NormalizationMode::new(Normalization::Raw, 0.0)?;
    Objective::new(bags, mode, false)?.divergence(w)
}

fn binary_label(bag: &Bag) -> Result<f64> {
    if bag.p_target == 0.0 || bag.p_target == 1.0 {
        Ok(bag.p_target)
    } else {
        Err(Error::validation(format!(
            "bag {}: target {} is not a hard label",
            bag.bag_id, bag.p_target
        )))
    }
}

/// Sum of `weights[mu] * D_mu(w)` in bag order.
pub fn weighted_divergence(bags: &[Bag], weights: &[f64], w: &ModelWeights) -> Result<f64> {
    if bags.len() != weights.len() {
        return Err(Error::validation("one weight per bag required"));
    }
    let mut total = 0.0;
    for (bag, &c) in bags.iter().zip(weights) {
        total += c * bag_divergence(bag, w)?;
    }
    Ok(total)
}

/// Per-bag smooth terms accumulated into a gradient and optional Hessian.
struct Accumulator<'a> {
    grad: &'a mut [f64],
    hess: Option<&'a mut Array2<f64>>,
}

impl Accumulator<'_> {
    fn add_outer(&mut self, coef: f64, x: &[f64]) {
        if let Some(h) = self.hess.as_deref_mut() {
            if coef == 0.0 {
                return;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let ci = coef * xi;
                for (j, &xj) in x.iter().enumerate() {
                    h[[i, j]] += ci * xj;
                }
            }
        }
    }
}

/// General soft-bag path; `weight` multiplies the bag's contribution.
fn accumulate_soft(bag: &Bag, w: &ModelWeights, weight: f64, acc: &mut Accumulator<'_>) {
    let d = w.dim();
    let t = bag.p_target;
    let z: Vec<f64> = bag.instances.iter().map(|x| dot(&w.w, x)).collect();
    let log_q: f64 = -z.iter().map(|&zk| softplus(zk)).sum::<f64>();
    let p = -log_q.exp_m1();

    let mut xg = vec![0.0; d];
    for (x, &zk) in bag.instances.iter().zip(&z) {
        let s = sigmoid(zk);
        for (g, &xi) in xg.iter_mut().zip(x) {
            *g += s * xi;
        }
    }
    // (1 - t/p); the t = 0 case is kept exact even when p underflows.
    let ratio_term = if t == 0.0 { 1.0 } else { 1.0 - t / p };
    for (g, &v) in acc.grad.iter_mut().zip(&xg) {
        *g += weight * ratio_term * v;
    }
    if acc.hess.is_some() {
        for (x, &zk) in bag.instances.iter().zip(&z) {
            let c = sigmoid(zk) * sigmoid(-zk);
            acc.add_outer(weight * ratio_term * c, x);
        }
        if t != 0.0 {
            // t * beta (beta + 1) with beta = (1 - p) / p
            let curvature = t * (1.0 - p) / (p * p);
            acc.add_outer(weight * curvature, &xg);
        }
    }
}

/// Single-instance, zero-target path: plain logistic negative example.
fn accumulate_hard_negative(bag: &Bag, w: &ModelWeights, weight: f64, acc: &mut Accumulator<'_>) {
    let x = &bag.instances[0];
    let z = dot(&w.w, x);
    let s = sigmoid(z);
    for (g, &xi) in acc.grad.iter_mut().zip(x) {
        *g += weight * s * xi;
    }
    if acc.hess.is_some() {
        acc.add_outer(weight * s * sigmoid(-z), x);
    }
}

/// The penalized objective over a fixed set of bags.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    bags: &'a [Bag],
    mode: NormalizationMode,
    use_annotator_weights: bool,
    dim: usize,
    n_soft: usize,
    n_hard: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        bags: &'a [Bag],
        mode: NormalizationMode,
        use_annotator_weights: bool,
    ) -> Result<Self> {
        let first = bags
            .first()
            .ok_or_else(|| Error::validation("objective needs at least one bag"))?;
        let dim = first.dim();
        for bag in bags {
            bag.validate()?;
            if bag.dim() != dim {
                return Err(Error::validation(format!(
                    "bag {} has dimension {}, expected {}",
                    bag.bag_id,
                    bag.dim(),
                    dim
                )));
            }
        }
        let n_soft = bags
            .iter()
            .filter(|b| b.kind == BagKind::SoftPositive)
            .count();
        let n_hard = bags.len() - n_soft;
        if mode.normalization == Normalization::PerClass && (n_soft == 0 || n_hard == 0) {
            return Err(Error::Config(format!(
                "per-class normalization needs both bag kinds (soft-positive: {n_soft}, hard-negative: {n_hard})"
            )));
        }
        NormalizationMode::new(mode.normalization, mode.lambda)?;
        Ok(Objective {
            bags,
            mode,
            use_annotator_weights,
            dim,
            n_soft,
            n_hard,
        })
    }

    pub fn bags(&self) -> &'a [Bag] {
        self.bags
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same objective with a different L1 strength.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut out = self.clone();
        out.mode = NormalizationMode::new(self.mode.normalization, lambda)?;
        Ok(out)
    }

    /// Per-coordinate L1 weight `lambda / d`.
    pub fn l1_strength(&self) -> f64 {
        self.mode.lambda / self.dim as f64
    }

    fn mode_factor(&self, kind: BagKind) -> f64 {
        match self.mode.normalization {
            Normalization::Raw => 1.0,
            Normalization::PerSample => 1.0 / self.bags.len() as f64,
            Normalization::PerClass => match kind {
                BagKind::SoftPositive => 1.0 / self.n_soft as f64,
                BagKind::HardNegative => 1.0 / self.n_hard as f64,
            },
        }
    }

    fn annotator_factor(&self, bag: &Bag) -> f64 {
        if self.use_annotator_weights {
            bag.annotator_weight
        } else {
            1.0
        }
    }

    /// Effective multiplier of each bag's divergence under this normalization.
    pub fn bag_weights(&self) -> Vec<f64> {
        self.bags
            .iter()
            .map(|b| self.mode_factor(b.kind) * self.annotator_factor(b))
            .collect()
    }

    fn check_weights(&self, w: &ModelWeights) -> Result<()> {
        if w.dim() != self.dim {
            return Err(Error::validation(format!(
                "weight dimension {} does not match feature dimension {}",
                w.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Normalized divergence `N(w)`, summed per class before normalizing.
    pub fn divergence(&self, w: &ModelWeights) -> Result<f64> {
        self.check_weights(w)?;
        let mut soft = 0.0;
        let mut hard = 0.0;
        for bag in self.bags {
            let (log_p, log_q) = clamped_log_probabilities(bag, w);
            let term = self.annotator_factor(bag) * -cross_term(bag.p_target, log_p, log_q);
            match (self.mode.normalization, bag.kind) {
                (Normalization::PerClass, BagKind::HardNegative) => hard += term,
                _ => soft += term,
            }
        }
        Ok(match self.mode.normalization {
            Normalization::Raw => soft,
            Normalization::PerSample => soft / self.bags.len() as f64,
            Normalization::PerClass => soft / self.n_soft as f64 + hard / self.n_hard as f64,
        })
    }

    pub fn penalty(&self, w: &ModelWeights) -> f64 {
        self.l1_strength() * w.l1_norm()
    }

    /// `N(w) + (lambda / d) ||w||_1`.
    pub fn value(&self, w: &ModelWeights) -> Result<f64> {
        Ok(self.divergence(w)? + self.penalty(w))
    }

    /// Gradient of `N(w)`; the L1 term is left to the optimizer.
    pub fn gradient(&self, w: &ModelWeights) -> Result<Vec<f64>> {
        Ok(self.derivatives(w, false)?.0)
    }

    pub fn hessian(&self, w: &ModelWeights) -> Result<Array2<f64>> {
        Ok(self.derivatives(w, true)?.1.expect("hessian requested"))
    }

    pub fn evaluate(&self, w: &ModelWeights, with_hessian: bool) -> Result<ObjectiveReport> {
        let value = self.value(w)?;
        let (gradient, hessian) = self.derivatives(w, with_hessian)?;
        Ok(ObjectiveReport {
            value,
            gradient,
            hessian,
        })
    }

    fn derivatives(
        &self,
        w: &ModelWeights,
        with_hessian: bool,
    ) -> Result<(Vec<f64>, Option<Array2<f64>>)> {
        self.check_weights(w)?;
        let mut grad = vec![0.0; self.dim];
        let mut hess = with_hessian.then(|| Array2::zeros((self.dim, self.dim)));
        {
            let mut acc = Accumulator {
                grad: &mut grad,
                hess: hess.as_mut(),
            };
            for bag in self.bags {
                let weight = self.mode_factor(bag.kind) * self.annotator_factor(bag);
                match bag.kind {
                    BagKind::HardNegative => accumulate_hard_negative(bag, w, weight, &mut acc),
                    BagKind::SoftPositive => accumulate_soft(bag, w, weight, &mut acc),
                }
            }
        }
        if let Some(h) = hess.as_mut() {
            // Symmetrize away rounding asymmetry of the rank-one updates.
            for i in 0..self.dim {
                for j in (i + 1)..self.dim {
                    let m = 0.5 * (h[[i, j]] + h[[j, i]]);
                    h[[i, j]] = m;
                    h[[j, i]] = m;
                }
            }
        }
        Ok((grad, hess))
    }
}

/// Gradient and Hessian of one bag through the general soft path, whatever its kind.
pub fn bag_derivatives_general(bag: &Bag, w: &ModelWeights) -> Result<(Vec<f64>, Array2<f64>)> {
    check_dim(bag, w)?;
    let mut grad = vec![0.0; w.dim()];
    let mut hess = Array2::zeros((w.dim(), w.dim()));
    accumulate_soft(
        bag,
        w,
        1.0,
        &mut Accumulator {
            grad: &mut grad,
            hess: Some(&mut hess),
        },
    );
    Ok((grad, hess))
}

/// Gradient and Hessian of a single-instance zero-target bag via the logistic shortcut.
pub fn bag_derivatives_hard_negative(
    bag: &Bag,
    w: &ModelWeights,
) -> Result<(Vec<f64>, Array2<f64>)> {
    check_dim(bag, w)?;
    if bag.instances.len() != 1 || bag.p_target != 0.0 {
        return Err(Error::validation(format!(
            "bag {} is not a single-instance zero-target bag",
            bag.bag_id
        )));
    }
    let mut grad = vec![0.0; w.dim()];
    let mut hess = Array2::zeros((w.dim(), w.dim()));
    accumulate_hard_negative(
        bag,
        w,
        1.0,
        &mut Accumulator {
            grad: &mut grad,
            hess: Some(&mut hess),
        },
    );
    Ok((grad, hess))
}
