//! Orthant-wise limited-memory quasi-Newton minimization of
//! `F(w) = N(w) + c ||w||_1`, `c = lambda / d`.
//!
//! Each step follows the L-BFGS direction of the pseudo-gradient (the
//! minimum-norm subgradient of `F`), restricted to the orthant the current
//! point and the pseudo-gradient select. Trial points are projected back onto
//! that orthant, so coordinates leaving it become exact zeros.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{Bag, ModelWeights, NormalizationMode, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop once the relative objective decrease falls below this and the
    /// stationarity certificate holds.
    pub tolerance: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub lambda: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 500,
            tolerance: 1e-9,
            memory: 10,
            lambda: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.memory == 0 {
            return Err(Error::Config("memory must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: ModelWeights,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Nonzero penalized coordinates.
    pub nnz: usize,
    /// Objective after each accepted iteration, starting with the initial point.
    #[serde(skip)]
    pub history: Vec<f64>,
}

/// First-order optimality report for the nonsmooth objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub max_violation: f64,
    pub tolerance: f64,
    pub satisfied: bool,
}

/// Default certificate tolerance `1e-5 * max(1, |F|)`.
pub fn certificate_tolerance(objective_value: f64) -> f64 {
    1e-5 * objective_value.abs().max(1.0)
}

/// Checks subgradient optimality coordinate-wise:
/// zero penalized weights need `|g_i| <= c`, nonzero ones `g_i + c sign(w_i) = 0`,
/// unpenalized ones `g_i = 0`, each up to `1e-5 * max(1, |F|)`.
pub fn stationarity_certificate(
    obj: &Objective<'_>,
    w: &ModelWeights,
) -> Result<StationarityCertificate> {
    let value = obj.value(w)?;
    let grad = obj.gradient(w)?;
    let max_violation = coordinate_violations(&grad, w, obj.l1_strength()).fold(0.0_f64, f64::max);
    let tolerance = certificate_tolerance(value);
    Ok(StationarityCertificate {
        max_violation,
        tolerance,
        satisfied: max_violation <= tolerance,
    })
}

fn coordinate_violations<'a>(
    grad: &'a [f64],
    w: &'a ModelWeights,
    c: f64,
) -> impl Iterator<Item = f64> + 'a {
    grad.iter()
        .zip(&w.w)
        .zip(&w.penalized)
        .map(move |((&g, &wi), &pen)| {
            if !pen {
                g.abs()
            } else if wi == 0.0 {
                (g.abs() - c).max(0.0)
            } else {
                (g + c * wi.signum()).abs()
            }
        })
}

/// Minimum-norm subgradient of `F`.
fn pseudo_gradient(grad: &[f64], w: &ModelWeights, c: f64) -> Vec<f64> {
    grad.iter()
        .zip(&w.w)
        .zip(&w.penalized)
        .map(|((&g, &wi), &pen)| {
            if !pen {
                g
            } else if wi > 0.0 {
                g + c
            } else if wi < 0.0 {
                g - c
            } else if g + c < 0.0 {
                g + c
            } else if g - c > 0.0 {
                g - c
            } else {
                0.0
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: returns `-H pg`.
fn lbfgs_direction(pg: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = pg.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimizes the penalized objective over `bags`.
pub fn fit(
    bags: &[Bag],
    cfg: &OptimizerConfig,
    mode: NormalizationMode,
    use_annotator_weights: bool,
    w0: Option<&ModelWeights>,
) -> Result<FitResult> {
    let mode = NormalizationMode::new(mode.normalization, cfg.lambda)?;
    let obj = Objective::new(bags, mode, use_annotator_weights)?;
    fit_objective(&obj, cfg, w0)
}

/// Minimizes `obj` (its own lambda is used, `cfg.lambda` is ignored).
pub fn fit_objective(
    obj: &Objective<'_>,
    cfg: &OptimizerConfig,
    w0: Option<&ModelWeights>,
) -> Result<FitResult> {
    cfg.validate()?;
    let c = obj.l1_strength();
    let mut w = match w0 {
        Some(w0) => {
            if w0.dim() != obj.dim() {
                return Err(Error::validation(format!(
                    "initial weights have dimension {}, expected {}",
                    w0.dim(),
                    obj.dim()
                )));
            }
            w0.clone()
        }
        None => null_model(obj)?,
    };
    let mut f = obj.value(&w)?;
    if !f.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("objective is {f} at the initial point"),
        });
    }
    let mut g = obj.gradient(&w)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut history = vec![f];
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let pg = pseudo_gradient(&g, &w, c);
        let pg_norm = pg.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if pg_norm <= 1e-3 * certificate_tolerance(f) {
            break;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            let mut dir = lbfgs_direction(&pg, &memory);
            for (di, (&pgi, &pen)) in dir.iter_mut().zip(pg.iter().zip(&w.penalized)) {
                if pen && *di * pgi >= 0.0 {
                    *di = 0.0;
                }
            }
            if dot(&dir, &pg) >= 0.0 {
                dir = pg.iter().map(|v| -v).collect();
            }
            let orthant: Vec<f64> =
                w.w.iter()
                    .zip(&pg)
                    .map(|(&wi, &pgi)| {
                        if wi != 0.0 {
                            wi.signum()
                        } else {
                            -pgi.signum()
                        }
                    })
                    .collect();

            let mut step = if memory.is_empty() {
                (1.0 / dot(&pg, &pg).sqrt()).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                let mut trial = w.clone();
                for i in 0..trial.dim() {
                    let v = w.w[i] + step * dir[i];
                    trial.w[i] = if trial.penalized[i] && v * orthant[i] <= 0.0 {
                        0.0
                    } else {
                        v
                    };
                }
                let f_trial = obj.value(&trial)?;
                if !f_trial.is_finite() {
                    return Err(Error::Numerical {
                        iteration: iterations + 1,
                        message: format!("objective is {f_trial} at a trial point"),
                    });
                }
                let decrease: f64 = pg
                    .iter()
                    .zip(trial.w.iter().zip(&w.w))
                    .map(|(p, (a, b))| p * (a - b))
                    .sum();
                if f_trial <= f + ARMIJO * decrease {
                    accepted = Some((trial, f_trial));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((w_new, f_new)) = accepted else {
            log::debug!("line search failed at iteration {}", iterations + 1);
            break;
        };
        iterations += 1;
        let g_new = obj.gradient(&w_new)?;
        let s: Vec<f64> = w_new.w.iter().zip(&w.w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) && sy > 0.0 {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let relative_decrease = (f - f_new) / f.abs().max(f_new.abs()).max(1.0);
        w = w_new;
        f = f_new;
        g = g_new;
        history.push(f);

        if relative_decrease < cfg.tolerance {
            let violation = coordinate_violations(&g, &w, c).fold(0.0_f64, f64::max);
            if violation <= certificate_tolerance(f) {
                break;
            }
        }
    }

    let violation = coordinate_violations(&g, &w, c).fold(0.0_f64, f64::max);
    let converged = violation <= certificate_tolerance(f);
    if !converged {
        log::warn!(
            "optimizer stopped after {iterations} iterations with stationarity violation {violation:.3e}"
        );
    }
    Ok(FitResult {
        nnz: w.nnz(),
        weights: w,
        objective_value: f,
        iterations,
        converged,
        history,
    })
}

/// Penalized weights at zero, unpenalized ones minimizing `N` (damped Newton).
///
/// This is the solution of the fit for every lambda at or above [`lambda_max`].
pub fn null_model(obj: &Objective<'_>) -> Result<ModelWeights> {
    let mut w = ModelWeights::zeros_with_intercept(obj.dim());
    let free: Vec<usize> = (0..w.dim()).filter(|&i| !w.penalized[i]).collect();
    if free.is_empty() {
        return Ok(w);
    }
    let mut f = obj.divergence(&w)?;
    for iteration in 1..=100 {
        let g = obj.gradient(&w)?;
        let h = obj.hessian(&w)?;
        let gf: Vec<f64> = free.iter().map(|&i| g[i]).collect();
        if gf.iter().all(|v| v.abs() <= 1e-13 * f.abs().max(1.0)) {
            break;
        }
        let hf: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| free.iter().map(|&j| h[[i, j]]).collect())
            .collect();
        let step = solve_spd(hf, &gf).unwrap_or_else(|| gf.clone());
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = w.clone();
            for (k, &i) in free.iter().enumerate() {
                trial.w[i] -= t * step[k];
            }
            let f_trial = obj.divergence(&trial)?;
            if !f_trial.is_finite() {
                return Err(Error::Numerical {
                    iteration,
                    message: "non-finite objective while fitting the null model".into(),
                });
            }
            if f_trial <= f {
                improved = f_trial < f;
                w = trial;
                f = f_trial;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(w)
}

/// Cholesky solve; `None` when the matrix is not numerically positive definite.
fn solve_spd(mut a: Vec<Vec<f64>>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in (j + 1)..n {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / d;
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i][k] * y[k];
        }
        y[i] = v / a[i][i];
    }
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= a[k][i] * y[k];
        }
        y[i] = v / a[i][i];
    }
    Some(y)
}

/// Smallest lambda at which all penalized weights are optimal at zero:
/// `d * max_i |dN/dw_i|` over penalized `i`, evaluated at the [`null_model`].
pub fn lambda_max(obj: &Objective<'_>) -> Result<f64> {
    let w = null_model(obj)?;
    let g = obj.gradient(&w)?;
    let max = g
        .iter()
        .zip(&w.penalized)
        .filter(|(_, &p)| p)
        .fold(0.0_f64, |m, (v, _)| m.max(v.abs()));
    Ok(obj.dim() as f64 * max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Normalization;

    fn toy_bags() -> Vec<Bag> {
        // Overlapping one-dimensional classes plus intercept.
        let mut bags = Vec::new();
        let xs = [-2.0, -1.0, -0.5, 0.3, 0.8, 1.5, 2.2, -0.2, 0.1, 1.1];
        let ys = [0, 0, 1, 0, 1, 1, 1, 0, 1, 0];
        for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
            let inst = vec![x, 0.5 * x * x - 0.3, 1.0];
            if y == 1 {
                bags.push(Bag::soft(i as u64, 0, vec![inst], 0.9, 1.0));
            } else {
                bags.push(Bag::hard_negative(i as u64, 0, inst, 1.0));
            }
        }
        bags
    }

    fn per_sample() -> NormalizationMode {
        NormalizationMode::new(Normalization::PerSample, 0.0).unwrap()
    }

    #[test]
    fn smooth_problem_reaches_stationarity() {
        let bags = toy_bags();
        let res = fit(
            &bags,
            &OptimizerConfig::default(),
            per_sample(),
            false,
            None,
        )
        .unwrap();
        assert!(res.converged);
        let obj = Objective::new(&bags, per_sample(), false).unwrap();
        let g = obj.gradient(&res.weights).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-5), "{g:?}");
        assert!(res.history.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn lambda_above_max_zeroes_penalized_weights() {
        let bags = toy_bags();
        let obj = Objective::new(&bags, per_sample(), false).unwrap();
        let lmax = lambda_max(&obj).unwrap();
        let cfg = OptimizerConfig {
            lambda: lmax * 1.0001,
            ..OptimizerConfig::default()
        };
        let res = fit(&bags, &cfg, per_sample(), false, None).unwrap();
        assert_eq!(res.nnz, 0);
        assert!(res.weights.w[..2].iter().all(|v| v.to_bits() == 0));
        assert!(res.converged);
    }

    #[test]
    fn certificate_detects_non_stationary_point() {
        let bags = toy_bags();
        let obj = Objective::new(&bags, per_sample(), false).unwrap();
        let mut w = ModelWeights::zeros_with_intercept(3);
        w.w[0] = 3.0;
        assert!(!stationarity_certificate(&obj, &w).unwrap().satisfied);
    }

    #[test]
    fn rejects_bad_config() {
        let bags = toy_bags();
        let cfg = OptimizerConfig {
            max_iterations: 0,
            ..OptimizerConfig::default()
        };
        assert!(fit(&bags, &cfg, per_sample(), false, None).is_err());
        let w0 = ModelWeights::zeros_with_intercept(5);
        assert!(fit(
            &bags,
            &OptimizerConfig::default(),
            per_sample(),
            false,
            Some(&w0)
        )
        .is_err());
    }

    #[test]
    fn max_iterations_exhaustion_is_not_an_error() {
        let bags = toy_bags();
        let cfg = OptimizerConfig {
            max_iterations: 1,
            ..OptimizerConfig::default()
        };
        let res = fit(&bags, &cfg, per_sample(), false, None).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(!res.converged);
    }
}
