//! Entropy-balancing calibration weights.
//!
//! When the target sample is available only as summary statistics, source
//! rows are reweighted so their weighted moments hit the target exactly. The
//! weights minimize relative entropy from base weights subject to the moment
//! constraints, solved through the convex dual
//!
//! ```text
//!   g(lambda) = log sum_i base_i exp(lambda' f(x_i)) - lambda' target ,
//! ```
//!
//! whose gradient is the moment violation and whose Hessian is the weighted
//! feature covariance. A damped Newton iteration on standardized features
//! converges in a handful of steps on well-posed problems; targets outside
//! the convex hull of the feature values make the dual diverge, which is
//! detected and reported as infeasible.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Moment functions of the covariates that calibration can balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MomentFeature {
    /// E[x_j].
    Mean(usize),
    /// E[x_j^2].
    SecondMoment(usize),
}

impl MomentFeature {
    fn eval(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        match *self {
            MomentFeature::Mean(j) => x[(row, j)],
            MomentFeature::SecondMoment(j) => x[(row, j)] * x[(row, j)],
        }
    }
}

/// Target moments for the source-weight calibration.
#[derive(Debug, Clone, Serialize)]
pub struct MomentTarget {
    pub features: Vec<MomentFeature>,
    pub values: Vec<f64>,
}

impl MomentTarget {
    /// First moments of all `p` covariates.
    pub fn means(values: Vec<f64>) -> Self {
        let features = (0..values.len()).map(MomentFeature::Mean).collect();
        MomentTarget { features, values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.features.len() != self.values.len() {
            return Err(Error::InvalidConfig {
                reason: format!(
                    "moment target needs matching non-empty features/values, got {}/{}",
                    self.features.len(),
                    self.values.len()
                ),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: "non-finite moment target".into(),
            });
        }
        Ok(())
    }
}

/// Nonnegative source weights summing to one, with the dual solution and
/// convergence metadata.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationWeights {
    pub w: Vec<f64>,
    /// Lagrange multipliers on the original feature scale: the weights are
    /// proportional to `base_i * exp(dual' f(x_i))`.
    pub dual: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_moment_violation: f64,
}

const DUAL_NORM_LIMIT: f64 = 1e6;
const STALL_WINDOW: usize = 25;

/// Solves for entropy-balancing weights on the source rows.
///
/// `base_weights` default to uniform; `tol` bounds the maximum absolute
/// moment violation on the original feature scale (1e-8 is the usual
/// choice); `max_iter` caps Newton iterations (default 200 upstream).
pub fn entropy_balance(
    x_source: &DMatrix<f64>,
    target: &MomentTarget,
    base_weights: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CalibrationWeights> {
    target.validate()?;
    let n = x_source.nrows();
    if n == 0 {
        return Err(Error::DimensionMismatch {
            what: "calibration source",
            expected: 1,
            found: 0,
        });
    }
    for feature in &target.features {
        let j = match *feature {
            MomentFeature::Mean(j) | MomentFeature::SecondMoment(j) => j,
        };
        if j >= x_source.ncols() {
            return Err(Error::InvalidConfig {
                reason: format!("moment feature column {j} out of range"),
            });
        }
    }
    let base: Vec<f64> = match base_weights {
        Some(b) => {
            if b.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "base weights",
                    expected: n,
                    found: b.len(),
                });
            }
            if b.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig {
                    reason: "base weights must be positive and finite".into(),
                });
            }
            let sum: f64 = b.iter().sum();
            b.iter().map(|&v| v / sum).collect()
        }
        None => vec![1.0 / n as f64; n],
    };

    let q = target.features.len();
    // Raw feature matrix.
    let f = DMatrix::from_fn(n, q, |i, j| target.features[j].eval(x_source, i));
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig {
            reason: "non-finite feature values in calibration".into(),
        });
    }

    // Standardize features with base-weighted moments; constant features are
    // either trivially satisfied or outright infeasible.
    let mut mean = vec![0.0; q];
    let mut scale = vec![1.0; q];
    let mut active = Vec::new();
    for j in 0..q {
        let m: f64 = (0..n).map(|i| base[i] * f[(i, j)]).sum();
        let v: f64 = (0..n)
            .map(|i| base[i] * (f[(i, j)] - m) * (f[(i, j)] - m))
            .sum();
        mean[j] = m;
        let sd = v.sqrt();
        if sd > 1e-12 {
            scale[j] = sd;
            active.push(j);
        } else if (target.values[j] - m).abs() > tol.max(1e-12) {
            return Err(Error::Infeasible {
                iterations: 0,
                dual_norm: f64::INFINITY,
                violation: (target.values[j] - m).abs(),
            });
        }
    }
    let qa = active.len();
    let ft = DMatrix::from_fn(n, qa, |i, jj| {
        let j = active[jj];
        (f[(i, j)] - mean[j]) / scale[j]
    });
    let tgt = DVector::from_fn(qa, |jj, _| {
        let j = active[jj];
        (target.values[j] - mean[j]) / scale[j]
    });

    let weights_for = |lambda: &DVector<f64>| -> (Vec<f64>, f64) {
        // Stable normalized weights and the dual objective value.
        let mut t = vec![0.0; n];
        let mut tmax = f64::NEG_INFINITY;
        for i in 0..n {
            let mut acc = 0.0;
            for jj in 0..qa {
                acc += lambda[jj] * ft[(i, jj)];
            }
            t[i] = acc;
            tmax = tmax.max(acc);
        }
        let mut z = 0.0;
        let mut w = vec![0.0; n];
        for i in 0..n {
            w[i] = base[i] * (t[i] - tmax).exp();
            z += w[i];
        }
        for v in &mut w {
            *v /= z;
        }
        let obj = tmax + z.ln() - lambda.dot(&tgt);
        (w, obj)
    };

    let violation_on_original_scale = |grad: &DVector<f64>| -> f64 {
        (0..qa)
            .map(|jj| grad[jj].abs() * scale[active[jj]])
            .fold(0.0, f64::max)
    };

    let mut lambda = DVector::zeros(qa);
    let (mut w, mut obj) = weights_for(&lambda);
    let mut best_violation = f64::INFINITY;
    let mut stalled = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut max_violation = f64::INFINITY;

    for iter in 0..max_iter {
        iterations = iter;
        // Gradient: weighted feature means minus targets.
        let mut grad = DVector::zeros(qa);
        for i in 0..n {
            for jj in 0..qa {
                grad[jj] += w[i] * ft[(i, jj)];
            }
        }
        grad -= &tgt;
        max_violation = violation_on_original_scale(&grad);
        if max_violation <= tol {
            converged = true;
            break;
        }

        if max_violation < best_violation * (1.0 - 1e-12) {
            best_violation = max_violation;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if lambda.norm() > DUAL_NORM_LIMIT && stalled >= STALL_WINDOW {
            return Err(Error::Infeasible {
                iterations: iter,
                dual_norm: lambda.norm(),
                violation: max_violation,
            });
        }

        // Hessian: weighted covariance of the standardized features.
        let mut hess = DMatrix::zeros(qa, qa);
        let wmean = {
            let mut m: DVector<f64> = DVector::zeros(qa);
            for i in 0..n {
                for jj in 0..qa {
                    m[jj] += w[i] * ft[(i, jj)];
                }
            }
            m
        };
        for i in 0..n {
            for jj in 0..qa {
                let dj = ft[(i, jj)] - wmean[jj];
                for ll in jj..qa {
                    hess[(jj, ll)] += w[i] * dj * (ft[(i, ll)] - wmean[ll]);
                }
            }
        }
        for jj in 0..qa {
            for ll in 0..jj {
                hess[(jj, ll)] = hess[(ll, jj)];
            }
        }

        let mut jitter = 0.0;
        let delta = loop {
            let mut h = hess.clone();
            if jitter > 0.0 {
                for jj in 0..qa {
                    h[(jj, jj)] += jitter;
                }
            }
            match Cholesky::new(h) {
                Some(chol) => break chol.solve(&(-&grad)),
                None if jitter < 1e-4 => {
                    jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
                }
                None => {
                    return Err(Error::Singular {
                        what: "solving the calibration Newton system",
                    })
                }
            }
        };

        // Backtracking on the dual objective, with sub-epsilon slack so the
        // iteration does not stall once true progress drops below the
        // floating-point resolution of the objective.
        let slack = 1e-12 * (1.0 + obj.abs());
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..60 {
            let cand = &lambda + step * &delta;
            let (wc, oc) = weights_for(&cand);
            if oc.is_finite() && oc <= obj + slack {
                lambda = cand;
                w = wc;
                obj = oc;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }

    if !converged {
        // One last gradient check in case the loop exited at max_iter with a
        // solution already inside tolerance.
        let mut grad = DVector::zeros(qa);
        for i in 0..n {
            for jj in 0..qa {
                grad[jj] += w[i] * ft[(i, jj)];
            }
        }
        grad -= &tgt;
        max_violation = violation_on_original_scale(&grad);
        if max_violation <= tol {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: max_iter,
            grad_norm: max_violation,
        });
    }

    // Report the dual on the original feature scale and define the returned
    // weights from it, so recomputing w from the dual is exact by construction.
    let mut dual = vec![0.0; q];
    for (jj, &j) in active.iter().enumerate() {
        dual[j] = lambda[jj] / scale[j];
    }
    let mut t = vec![0.0; n];
    let mut tmax = f64::NEG_INFINITY;
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..q {
            acc += dual[j] * f[(i, j)];
        }
        t[i] = acc;
        tmax = tmax.max(acc);
    }
    let mut z = 0.0;
    let mut w = vec![0.0; n];
    for i in 0..n {
        w[i] = base[i] * (t[i] - tmax).exp();
        z += w[i];
    }
    for v in &mut w {
        *v /= z;
    }
    let mut final_violation = 0.0f64;
    for j in 0..q {
        let m: f64 = (0..n).map(|i| w[i] * f[(i, j)]).sum();
        final_violation = final_violation.max((m - target.values[j]).abs());
    }

    Ok(CalibrationWeights {
        w,
        dual,
        converged: true,
        iterations: iterations + 1,
        max_moment_violation: final_violation,
    })
}

/// Weighted within-arm (Hajek) outcome means on the study rows:
/// `psi_a = sum_i w_i 1{A_i=a} Y_i / pi_a(X_i)` normalized by the same sum
/// without `Y_i`. The propensities may be fitted values or known design
/// probabilities; rows align with study rows in dataset order.
pub fn calibrated_estimate(
    d: &Dataset,
    weights: &CalibrationWeights,
    pi: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let study: Vec<usize> = (0..d.n()).filter(|&i| d.selected(i)).collect();
    if weights.w.len() != study.len() {
        return Err(Error::DimensionMismatch {
            what: "calibration weights",
            expected: study.len(),
            found: weights.w.len(),
        });
    }
    if pi.nrows() != study.len() || pi.ncols() != d.n_arms() {
        return Err(Error::DimensionMismatch {
            what: "treatment probabilities",
            expected: study.len(),
            found: pi.nrows(),
        });
    }
    let arms = d.n_arms();
    let mut psi = vec![0.0; arms];
    for arm in 0..arms {
        let mut num = 0.0;
        let mut den = 0.0;
        for (pos, &i) in study.iter().enumerate() {
            if d.arm(i) == Some(arm) {
                let w = weights.w[pos] / pi[(pos, arm)];
                num += w * d.outcome(i).unwrap();
                den += w;
            }
        }
        if den == 0.0 {
            return Err(Error::EmptyArmUnderWeights { arm });
        }
        psi[arm] = num / den;
    }
    Ok(psi)
}
