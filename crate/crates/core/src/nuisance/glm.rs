//! Ridge-penalized generalized linear models.
//!
//! All three nuisance functions are fit with the same engine: gaussian
//! regression in closed form, binomial and multinomial logistic regression by
//! damped Newton iteration. The objective is
//!
//! ```text
//!   (negative log-likelihood) / n  +  (lambda / 2) * ||beta_noint||^2
//! ```
//!
//! Covariates are standardized internally by training statistics (the penalty
//! then does not depend on covariate units) and coefficients are mapped back
//! to the original scale, so fitted objects predict directly from raw rows.
//! Multinomial models use class 0 as the reference; a two-class multinomial
//! is exactly the binomial path.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

use super::make_folds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Binomial,
    /// `n_classes` >= 2, labels 0..n_classes with 0 as reference.
    Multinomial { n_classes: usize },
}

/// Penalty-selection settings for cross-validated ridge fits.
#[derive(Debug, Clone)]
pub struct RegularizationConfig {
    /// Strictly positive, sorted descending.
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub family: Family,
    /// Unpenalized intercept column (default on).
    pub intercept: bool,
}

impl RegularizationConfig {
    pub fn new(family: Family) -> Self {
        RegularizationConfig {
            lambda_grid: vec![10.0, 1.0, 0.1, 0.01, 0.001],
            cv_folds: 5,
            family,
            intercept: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidConfig {
                reason: "empty lambda grid".into(),
            });
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidConfig {
                reason: "lambda grid entries must be positive and finite".into(),
            });
        }
        if self.lambda_grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig {
                reason: "lambda grid must be strictly descending".into(),
            });
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidConfig {
                reason: "cv_folds must be at least 2".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GlmOptions {
    pub intercept: bool,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        GlmOptions {
            intercept: true,
            max_iter: 200,
            grad_tol: 1e-8,
        }
    }
}

/// A fitted ridge GLM with coefficients on the original covariate scale.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub family: Family,
    /// One row per coefficient block (a single row except for multinomial,
    /// which has `n_classes - 1` rows for classes 1..). Column 0 is the
    /// intercept, columns 1..=p the covariates.
    pub coef: DMatrix<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl GlmFit {
    fn eta(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let blocks = self.coef.nrows();
        let mut eta = DMatrix::zeros(n, blocks);
        for c in 0..blocks {
            for i in 0..n {
                let mut v = self.coef[(c, 0)];
                for j in 0..x.ncols() {
                    v += self.coef[(c, j + 1)] * x[(i, j)];
                }
                eta[(i, c)] = v;
            }
        }
        eta
    }

    /// Conditional mean: the linear predictor for gaussian fits, P(y = 1)
    /// for binomial fits.
    pub fn predict_mean(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let eta = self.eta(x);
        match self.family {
            Family::Gaussian => eta.column(0).into_owned(),
            Family::Binomial => eta.column(0).map(sigmoid),
            Family::Multinomial { .. } => {
                panic!("predict_mean is not defined for multinomial fits")
            }
        }
    }

    /// Class probabilities, one column per class starting at class 0.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n_classes = match self.family {
            Family::Gaussian => panic!("predict_proba is not defined for gaussian fits"),
            Family::Binomial => 2,
            Family::Multinomial { n_classes } => n_classes,
        };
        let eta = self.eta(x);
        let n = x.nrows();
        let mut probs = DMatrix::zeros(n, n_classes);
        for i in 0..n {
            // Stable softmax over (0, eta_1, .., eta_{C-1}).
            let mut max = 0.0f64;
            for c in 0..eta.ncols() {
                max = max.max(eta[(i, c)]);
            }
            let mut denom = (-max).exp();
            for c in 0..eta.ncols() {
                denom += (eta[(i, c)] - max).exp();
            }
            probs[(i, 0)] = (-max).exp() / denom;
            for c in 0..eta.ncols() {
                probs[(i, c + 1)] = (eta[(i, c)] - max).exp() / denom;
            }
        }
        probs
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Weighted column means and population standard deviations. Constant
    /// columns get scale 1 so they standardize to exactly zero.
    fn fit(x: &DMatrix<f64>, weights: &[f64]) -> Self {
        let (n, p) = (x.nrows(), x.ncols());
        let wsum: f64 = weights.iter().sum();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for j in 0..p {
            let mut m = 0.0;
            for i in 0..n {
                m += weights[i] * x[(i, j)];
            }
            m /= wsum;
            let mut v = 0.0;
            for i in 0..n {
                let d = x[(i, j)] - m;
                v += weights[i] * d * d;
            }
            v /= wsum;
            mean[j] = m;
            scale[j] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    fn identity(p: usize) -> Self {
        Standardizer {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    /// Design matrix [1 | standardized x] (intercept column always present;
    /// it is excluded from the penalty, and pinned at zero when the model is
    /// fit without an intercept).
    fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = (x.nrows(), x.ncols());
        let mut z = DMatrix::zeros(n, p + 1);
        for i in 0..n {
            z[(i, 0)] = 1.0;
            for j in 0..p {
                z[(i, j + 1)] = (x[(i, j)] - self.mean[j]) / self.scale[j];
            }
        }
        z
    }

    /// Maps one standardized coefficient block back to the original scale.
    fn original_scale(&self, gamma: &[f64]) -> Vec<f64> {
        let p = self.mean.len();
        let mut beta = vec![0.0; p + 1];
        let mut b0 = gamma[0];
        for j in 0..p {
            beta[j + 1] = gamma[j + 1] / self.scale[j];
            b0 -= gamma[j + 1] * self.mean[j] / self.scale[j];
        }
        beta[0] = b0;
        beta
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], lambda: f64, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "glm response",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            what: "glm design",
            expected: 1,
            found: 0,
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig {
            reason: format!("lambda must be nonnegative and finite, got {lambda}"),
        });
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig {
            reason: "non-finite values in glm inputs".into(),
        });
    }
    let w = match weights {
        Some(w) => {
            if w.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    what: "glm weights",
                    expected: y.len(),
                    found: w.len(),
                });
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig {
                    reason: "glm weights must be nonnegative and finite".into(),
                });
            }
            w.to_vec()
        }
        None => vec![1.0; y.len()],
    };
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConfig {
            reason: "glm weights sum to zero".into(),
        });
    }
    Ok(w)
}

/// Fits a ridge GLM with default options (intercept on, gradient tolerance
/// 1e-8, at most 200 Newton iterations).
pub fn fit_regularized_glm(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    lambda: f64,
    weights: Option<&[f64]>,
) -> Result<GlmFit> {
    fit_regularized_glm_with(x, y, family, lambda, weights, &GlmOptions::default())
}

pub fn fit_regularized_glm_with(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    lambda: f64,
    weights: Option<&[f64]>,
    opts: &GlmOptions,
) -> Result<GlmFit> {
    let w = check_inputs(x, y, lambda, weights)?;
    let std = if opts.intercept {
        Standardizer::fit(x, &w)
    } else {
        Standardizer::identity(x.ncols())
    };
    let z = std.design(x);
    let (gamma, iterations, grad_norm) = match family {
        Family::Gaussian => {
            let g = solve_gaussian(&z, y, &w, lambda, opts)?;
            (g, 1, 0.0)
        }
        Family::Binomial => {
            for &v in y {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidConfig {
                        reason: "binomial response must be 0/1".into(),
                    });
                }
            }
            newton_multinomial(&z, y, 2, &w, lambda, opts)?
        }
        Family::Multinomial { n_classes } => {
            if n_classes < 2 {
                return Err(Error::InvalidConfig {
                    reason: "multinomial needs at least 2 classes".into(),
                });
            }
            for &v in y {
                if v.fract() != 0.0 || v < 0.0 || v >= n_classes as f64 {
                    return Err(Error::InvalidConfig {
                        reason: format!("multinomial response {v} outside 0..{n_classes}"),
                    });
                }
            }
            newton_multinomial(&z, y, n_classes, &w, lambda, opts)?
        }
    };
    let blocks = gamma.nrows();
    let p = x.ncols();
    let mut coef = DMatrix::zeros(blocks, p + 1);
    for c in 0..blocks {
        let block: Vec<f64> = (0..=p).map(|j| gamma[(c, j)]).collect();
        let beta = std.original_scale(&block);
        for j in 0..=p {
            coef[(c, j)] = beta[j];
        }
    }
    Ok(GlmFit {
        family,
        coef,
        lambda,
        iterations,
        grad_norm,
    })
}

/// Closed-form weighted ridge solve: (Z'WZ/n + lambda D) g = Z'Wy/n.
fn solve_gaussian(
    z: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    lambda: f64,
    opts: &GlmOptions,
) -> Result<DMatrix<f64>> {
    let (n, m) = (z.nrows(), z.ncols());
    let nf = n as f64;
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for i in 0..n {
        let wi = w[i] / nf;
        for j in 0..m {
            let zij = z[(i, j)];
            b[j] += wi * zij * y[i];
            for l in j..m {
                a[(j, l)] += wi * zij * z[(i, l)];
            }
        }
    }
    for j in 0..m {
        for l in 0..j {
            a[(j, l)] = a[(l, j)];
        }
    }
    for j in 1..m {
        a[(j, j)] += lambda;
    }
    if !opts.intercept {
        // Pin the intercept at zero by turning its row into a trivial equation.
        for l in 0..m {
            a[(0, l)] = 0.0;
            a[(l, 0)] = 0.0;
        }
        a[(0, 0)] = 1.0;
        b[0] = 0.0;
    }
    let chol = Cholesky::new(a).ok_or(Error::Singular {
        what: "solving the gaussian ridge system",
    })?;
    let g = chol.solve(&b);
    Ok(DMatrix::from_row_slice(1, m, g.as_slice()))
}

/// Damped Newton for the reference-class multinomial logit (binomial when
/// `n_classes` = 2). Returns standardized-scale coefficients.
fn newton_multinomial(
    z: &DMatrix<f64>,
    y: &[f64],
    n_classes: usize,
    w: &[f64],
    lambda: f64,
    opts: &GlmOptions,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let (n, m) = (z.nrows(), z.ncols());
    let blocks = n_classes - 1;
    let dim = blocks * m;
    let nf = n as f64;
    let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();

    // Start intercepts at the empirical log odds against the reference class;
    // cuts the iteration count sharply for unbalanced responses.
    let mut gamma = DMatrix::zeros(blocks, m);
    if opts.intercept {
        let mut counts = vec![0.0f64; n_classes];
        for i in 0..n {
            counts[labels[i]] += w[i];
        }
        let floor = w.iter().sum::<f64>() * 1e-6 + 1e-12;
        for c in 0..blocks {
            gamma[(c, 0)] = (counts[c + 1].max(floor) / counts[0].max(floor)).ln();
        }
    }
    let mut probs = DMatrix::zeros(n, n_classes);

    let compute_probs = |gamma: &DMatrix<f64>, probs: &mut DMatrix<f64>| {
        for i in 0..n {
            let mut max = 0.0f64;
            for c in 0..blocks {
                let mut eta = 0.0;
                for j in 0..m {
                    eta += gamma[(c, j)] * z[(i, j)];
                }
                probs[(i, c + 1)] = eta;
                max = max.max(eta);
            }
            let mut denom = (-max).exp();
            for c in 0..blocks {
                denom += (probs[(i, c + 1)] - max).exp();
            }
            probs[(i, 0)] = (-max).exp() / denom;
            for c in 0..blocks {
                probs[(i, c + 1)] = (probs[(i, c + 1)] - max).exp() / denom;
            }
        }
    };

    let objective = |gamma: &DMatrix<f64>| -> f64 {
        let mut nll = 0.0;
        for i in 0..n {
            let mut max = 0.0f64;
            let mut eta_y = 0.0;
            let mut etas = [0.0f64; 8];
            let mut heap;
            let etas: &mut [f64] = if blocks <= 8 {
                &mut etas[..blocks]
            } else {
                heap = vec![0.0; blocks];
                &mut heap
            };
            for c in 0..blocks {
                let mut eta = 0.0;
                for j in 0..m {
                    eta += gamma[(c, j)] * z[(i, j)];
                }
                etas[c] = eta;
                max = max.max(eta);
                if labels[i] == c + 1 {
                    eta_y = eta;
                }
            }
            let mut lse = (-max).exp();
            for c in 0..blocks {
                lse += (etas[c] - max).exp();
            }
            nll += w[i] * (max + lse.ln() - eta_y);
        }
        let mut pen = 0.0;
        for c in 0..blocks {
            for j in 1..m {
                pen += gamma[(c, j)] * gamma[(c, j)];
            }
        }
        nll / nf + 0.5 * lambda * pen
    };

    let mut obj = objective(&gamma);
    let mut grad_norm = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        compute_probs(&gamma, &mut probs);

        // Gradient, block by block.
        let mut grad = DVector::zeros(dim);
        for c in 0..blocks {
            for i in 0..n {
                let resid = probs[(i, c + 1)] - if labels[i] == c + 1 { 1.0 } else { 0.0 };
                let wi = w[i] * resid / nf;
                for j in 0..m {
                    grad[c * m + j] += wi * z[(i, j)];
                }
            }
            for j in 1..m {
                grad[c * m + j] += lambda * gamma[(c, j)];
            }
            if !opts.intercept {
                grad[c * m] = 0.0;
            }
        }
        grad_norm = grad.norm();
        if grad_norm < opts.grad_tol {
            return Ok((gamma, iter - 1, grad_norm));
        }

        // Hessian: blocks (c,d) are Z' diag(w p_c (delta - p_d)) Z / n.
        let mut hess = DMatrix::zeros(dim, dim);
        for c in 0..blocks {
            for d in c..blocks {
                let mut v = vec![0.0; n];
                for i in 0..n {
                    let pc = probs[(i, c + 1)];
                    let pd = probs[(i, d + 1)];
                    let delta = if c == d { 1.0 } else { 0.0 };
                    v[i] = w[i] * pc * (delta - pd) / nf;
                }
                let block = weighted_gram(z, &v);
                for j in 0..m {
                    for l in 0..m {
                        hess[(c * m + j, d * m + l)] += block[(j, l)];
                        if c != d {
                            hess[(d * m + l, c * m + j)] += block[(j, l)];
                        }
                    }
                }
            }
            for j in 1..m {
                hess[(c * m + j, c * m + j)] += lambda;
            }
            if !opts.intercept {
                let r = c * m;
                for l in 0..dim {
                    hess[(r, l)] = 0.0;
                    hess[(l, r)] = 0.0;
                }
                hess[(r, r)] = 1.0;
            }
        }

        let mut jitter = 0.0;
        let delta = loop {
            let mut h = hess.clone();
            if jitter > 0.0 {
                for j in 0..dim {
                    h[(j, j)] += jitter;
                }
            }
            match Cholesky::new(h) {
                Some(chol) => break chol.solve(&(-&grad)),
                None if jitter < 1e-4 => {
                    jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
                }
                None => {
                    return Err(Error::Singular {
                        what: "solving the logistic Newton system",
                    })
                }
            }
        };

        // Backtracking line search on the penalized objective. The slack
        // tolerates sub-epsilon improvements near the optimum, where true
        // Newton progress is smaller than floating-point noise on the
        // objective and strict descent would stall the iteration.
        let slack = 1e-12 * (1.0 + obj.abs());
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = gamma.clone();
            for c in 0..blocks {
                for j in 0..m {
                    cand[(c, j)] += step * delta[c * m + j];
                }
            }
            let cand_obj = objective(&cand);
            if cand_obj.is_finite() && cand_obj <= obj + slack {
                gamma = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent direction progress left; report where we stopped.
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm,
    })
}

/// Z' diag(v) Z for a per-row weight vector `v`.
fn weighted_gram(z: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
    let (n, m) = (z.nrows(), z.ncols());
    let mut g = DMatrix::zeros(m, m);
    for i in 0..n {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for j in 0..m {
            let zj = vi * z[(i, j)];
            for l in j..m {
                g[(j, l)] += zj * z[(i, l)];
            }
        }
    }
    for j in 0..m {
        for l in 0..j {
            g[(j, l)] = g[(l, j)];
        }
    }
    g
}

/// Per-observation held-out loss: squared error for gaussian fits, deviance
/// (-2 log-likelihood) for the classification families.
fn heldout_loss(fit: &GlmFit, x: &DMatrix<f64>, y: &[f64]) -> f64 {
    const PMIN: f64 = 1e-12;
    match fit.family {
        Family::Gaussian => {
            let pred = fit.predict_mean(x);
            y.iter()
                .zip(pred.iter())
                .map(|(yi, pi)| (yi - pi) * (yi - pi))
                .sum()
        }
        Family::Binomial | Family::Multinomial { .. } => {
            let probs = fit.predict_proba(x);
            y.iter()
                .enumerate()
                .map(|(i, &yi)| {
                    let p = probs[(i, yi as usize)].max(PMIN);
                    -2.0 * p.ln()
                })
                .sum()
        }
    }
}

/// Selects the grid penalty minimizing cross-validated loss (CV-MSE for
/// gaussian, CV-deviance otherwise). Ties break toward the larger penalty.
/// Returns the winner together with the full (lambda, loss) curve.
pub fn select_lambda_cv(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    config: &RegularizationConfig,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    config.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "cv response",
            expected: n,
            found: y.len(),
        });
    }
    if config.lambda_grid.len() == 1 {
        return Ok((config.lambda_grid[0], vec![(config.lambda_grid[0], f64::NAN)]));
    }
    if n < 2 * config.cv_folds {
        return Err(Error::InvalidFoldCount {
            k: config.cv_folds,
            n,
        });
    }
    let folds = make_folds(n, config.cv_folds, seed)?;
    let opts = GlmOptions {
        intercept: config.intercept,
        ..GlmOptions::default()
    };

    let mut curve = Vec::with_capacity(config.lambda_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &config.lambda_grid {
        let mut total = 0.0;
        for fold in 0..config.cv_folds {
            let train: Vec<usize> = (0..n).filter(|&i| folds.fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds.fold_of[i] == fold).collect();
            let xt = select_rows(x, &train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let fit = fit_regularized_glm_with(&xt, &yt, family, lambda, None, &opts)?;
            let xv = select_rows(x, &test);
            let yv: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            total += heldout_loss(&fit, &xv, &yv);
        }
        let loss = total / n as f64;
        curve.push((lambda, loss));
        // Strict improvement required: on ties the earlier (larger) penalty wins.
        if best.map_or(true, |(_, b)| loss < b) {
            best = Some((lambda, loss));
        }
    }
    Ok((best.expect("non-empty grid").0, curve))
}

pub(crate) fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_noiseless_line_recovers_slope() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = [2.0, 4.0, 6.0];
        let fit = fit_regularized_glm(&x, &y, Family::Gaussian, 1e-10, None).unwrap();
        assert_abs_diff_eq!(fit.coef[(0, 1)], 2.0, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.coef[(0, 0)], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn gaussian_huge_penalty_shrinks_to_intercept() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -0.5, 3.0, 1.5, 4.0, 2.5]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = fit_regularized_glm(&x, &y, Family::Gaussian, 1e12, None).unwrap();
        assert_abs_diff_eq!(fit.coef[(0, 1)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coef[(0, 2)], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coef[(0, 0)], 4.0, epsilon = 1e-9);
    }

    /// Independent full-gradient-descent oracle on the same standardized
    /// penalized objective, for the binomial family.
    fn gradient_descent_binomial(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Vec<f64> {
        let n = x.nrows();
        let w = vec![1.0; n];
        let std = Standardizer::fit(x, &w);
        let z = std.design(x);
        let m = z.ncols();
        let mut gamma = vec![0.0; m];
        let lr = 0.5;
        for _ in 0..200_000 {
            let mut grad = vec![0.0; m];
            for i in 0..n {
                let mut eta = 0.0;
                for j in 0..m {
                    eta += gamma[j] * z[(i, j)];
                }
                let p = sigmoid(eta);
                for j in 0..m {
                    grad[j] += (p - y[i]) * z[(i, j)] / n as f64;
                }
            }
            for j in 1..m {
                grad[j] += lambda * gamma[j];
            }
            let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm < 1e-10 {
                break;
            }
            for j in 0..m {
                gamma[j] -= lr * grad[j];
            }
        }
        std.original_scale(&gamma)
    }

    #[test]
    fn binomial_balanced_orthogonal_matches_oracle() {
        // y balanced, X orthogonal to (2y - 1): coefficients 0, intercept logit(1/2) = 0.
        let x = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = [1.0, 1.0, 0.0, 0.0];
        let fit = fit_regularized_glm(&x, &y, Family::Binomial, 0.1, None).unwrap();
        let oracle = gradient_descent_binomial(&x, &y, 0.1);
        assert_abs_diff_eq!(fit.coef[(0, 0)], oracle[0], epsilon = 1e-6);
        assert_abs_diff_eq!(fit.coef[(0, 1)], oracle[1], epsilon = 1e-6);
        assert_abs_diff_eq!(fit.coef[(0, 0)], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.coef[(0, 1)], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn binomial_general_case_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let p = sigmoid(0.5 + x[(i, 0)] - 0.7 * x[(i, 1)]);
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let fit = fit_regularized_glm(&x, &y, Family::Binomial, 0.05, None).unwrap();
        let oracle = gradient_descent_binomial(&x, &y, 0.05);
        for j in 0..3 {
            assert_abs_diff_eq!(fit.coef[(0, j)], oracle[j], epsilon = 1e-5);
        }
    }

    #[test]
    fn two_class_multinomial_equals_binomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
        let b = fit_regularized_glm(&x, &y, Family::Binomial, 0.2, None).unwrap();
        let m = fit_regularized_glm(&x, &y, Family::Multinomial { n_classes: 2 }, 0.2, None).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(b.coef[(0, j)], m.coef[(0, j)], epsilon = 1e-12);
        }
    }

    #[test]
    fn multinomial_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 90;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n).map(|i| (i % 3) as f64).collect();
        let fit =
            fit_regularized_glm(&x, &y, Family::Multinomial { n_classes: 3 }, 0.1, None).unwrap();
        let probs = fit.predict_proba(&x);
        for i in 0..n {
            let sum: f64 = (0..3).map(|c| probs[(i, c)]).sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_all_ones_binomial_converges_to_high_probability() {
        let x = DMatrix::from_row_slice(6, 1, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let y = [1.0; 6];
        let fit = fit_regularized_glm(&x, &y, Family::Binomial, 0.01, None).unwrap();
        let p = fit.predict_mean(&x);
        for i in 0..6 {
            assert!(p[i] > 1.0 - 1e-6, "p[{i}] = {}", p[i]);
        }
    }

    #[test]
    fn ridge_norm_is_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + x[(i, 0)] - 2.0 * x[(i, 1)] + 0.3 * rng.random::<f64>())
            .collect();
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-2, 1.0, 100.0] {
            let fit = fit_regularized_glm(&x, &y, Family::Gaussian, lambda, None).unwrap();
            let norm: f64 = (1..4).map(|j| fit.coef[(0, j)].powi(2)).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-10, "norm grew at lambda {lambda}");
            last = norm;
        }
    }

    #[test]
    fn cv_selects_smallest_lambda_for_noiseless_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)] - x[(i, 1)]).collect();
        let config = RegularizationConfig {
            lambda_grid: vec![10.0, 1.0, 0.1, 0.001],
            cv_folds: 5,
            family: Family::Gaussian,
            intercept: true,
        };
        let (lambda, curve) = select_lambda_cv(&x, &y, Family::Gaussian, &config, 42).unwrap();
        assert_eq!(lambda, 0.001);
        // Derived oracle: on a noiseless linear signal CV-MSE is decreasing in lambda.
        for w in curve.windows(2) {
            assert!(w[0].1 > w[1].1);
        }
    }

    #[test]
    fn cv_prefers_largest_lambda_for_pure_noise() {
        // Monte Carlo over 100 seeds: independent X and y should pick the
        // heaviest penalty most of the time.
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let x = DMatrix::from_fn(n, 8, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let config = RegularizationConfig {
                lambda_grid: vec![100.0, 0.1, 0.001],
                cv_folds: 4,
                family: Family::Gaussian,
                intercept: true,
            };
            let (lambda, _) = select_lambda_cv(&x, &y, Family::Gaussian, &config, seed).unwrap();
            if lambda == 100.0 {
                hits += 1;
            }
        }
        assert!(hits >= 80, "largest lambda chosen only {hits}/100 times");
    }

    #[test]
    fn cv_single_point_grid_short_circuits() {
        let x = DMatrix::from_row_slice(10, 1, &[0., 1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let config = RegularizationConfig {
            lambda_grid: vec![0.5],
            cv_folds: 5,
            family: Family::Gaussian,
            intercept: true,
        };
        let (lambda, _) = select_lambda_cv(&x, &y, Family::Gaussian, &config, 0).unwrap();
        assert_eq!(lambda, 0.5);
    }
}
