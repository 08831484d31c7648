//! Nuisance estimation: outcome model, treatment propensity, and selection
//! propensity, fit with K-fold cross-fitting and CV-selected ridge penalties.
//!
//! Every row's predictions come from models trained on the other folds, so
//! downstream estimators can use them without own-observation bias. The
//! outcome model is fit per arm on study rows, the treatment propensity as a
//! multinomial over arms on study rows, and the selection propensity as a
//! binomial over all rows. Probabilities are trimmed to a configurable band
//! and (for the treatment head) renormalized onto the simplex.

pub mod glm;

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use glm::{
    fit_regularized_glm_with, select_lambda_cv, select_rows, Family, GlmOptions,
    RegularizationConfig,
};

/// Deterministic balanced assignment of rows to cross-fitting folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

/// Splits `n` rows into `k` folds whose sizes differ by at most one, via a
/// seeded shuffle. The same `(n, k, seed)` always yields the same assignment.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

/// Probability trimming band applied to fitted propensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimBounds {
    pub lo: f64,
    pub hi: f64,
}

impl TrimBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("trim bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1"),
            });
        }
        Ok(TrimBounds { lo, hi })
    }
}

impl Default for TrimBounds {
    fn default() -> Self {
        TrimBounds { lo: 0.01, hi: 0.99 }
    }
}

/// Cross-fitting and penalty-selection settings for all three nuisances.
#[derive(Debug, Clone)]
pub struct NuisanceConfig {
    /// Cross-fitting fold count.
    pub folds: usize,
    pub trim: TrimBounds,
    /// Outcome model (gaussian); the family field is fixed by role.
    pub mu: RegularizationConfig,
    /// Treatment propensity (multinomial over arms, resolved at fit time).
    pub pi: RegularizationConfig,
    /// Selection propensity (binomial).
    pub rho: RegularizationConfig,
    /// Seed for fold construction and inner CV splits.
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            folds: 5,
            trim: TrimBounds::default(),
            mu: RegularizationConfig::new(Family::Gaussian),
            pi: RegularizationConfig::new(Family::Multinomial { n_classes: 2 }),
            rho: RegularizationConfig::new(Family::Binomial),
            seed: 0,
        }
    }
}

/// Selected penalties, one per nuisance.
#[derive(Debug, Clone, Copy)]
pub struct SelectedLambdas {
    pub mu: f64,
    pub pi: f64,
    pub rho: f64,
}

/// Wall time attributable to each nuisance component (penalty selection plus
/// cross-fitting), summed over folds.
#[derive(Debug, Clone, Copy, Default)]
pub struct NuisanceTimings {
    pub mu_s: f64,
    pub pi_s: f64,
    pub rho_s: f64,
}

/// Cross-fitted out-of-fold nuisance predictions for every row.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    /// n x (K+1) outcome predictions per arm.
    pub mu: DMatrix<f64>,
    /// n x (K+1) treatment propensities, trimmed and renormalized.
    pub pi: DMatrix<f64>,
    /// n selection propensities, trimmed.
    pub rho: Vec<f64>,
    pub trim: TrimBounds,
    pub folds: FoldAssignment,
    pub lambda_mu: f64,
    pub lambda_pi: f64,
    pub lambda_rho: f64,
}

impl NuisanceFits {
    /// Wraps externally supplied nuisance values (audits, oracle checks,
    /// known-design probabilities). Probabilities must lie in (0, 1]; the
    /// trim band is recorded as metadata but not enforced, since supplied
    /// values were not produced by the clipping path.
    pub fn from_values(
        mu: DMatrix<f64>,
        pi: DMatrix<f64>,
        rho: Vec<f64>,
        trim: TrimBounds,
    ) -> Result<Self> {
        let n = mu.nrows();
        if pi.nrows() != n || rho.len() != n || pi.ncols() != mu.ncols() {
            return Err(Error::DimensionMismatch {
                what: "nuisance values",
                expected: n,
                found: pi.nrows().min(rho.len()),
            });
        }
        if mu.iter().any(|v| !v.is_finite())
            || rho.iter().any(|&r| !(r > 0.0 && r <= 1.0))
            || pi.iter().any(|&p| !(p > 0.0 && p <= 1.0))
        {
            return Err(Error::InvalidConfig {
                reason: "supplied nuisance values must be finite with probabilities in (0, 1]"
                    .into(),
            });
        }
        let folds = make_folds(n.max(2), 2, 0)?;
        Ok(NuisanceFits {
            mu,
            pi,
            rho,
            trim,
            folds,
            lambda_mu: f64::NAN,
            lambda_pi: f64::NAN,
            lambda_rho: f64::NAN,
        })
    }

    pub fn n(&self) -> usize {
        self.mu.nrows()
    }

    pub fn n_arms(&self) -> usize {
        self.mu.ncols()
    }

    pub fn lambdas(&self) -> SelectedLambdas {
        SelectedLambdas {
            mu: self.lambda_mu,
            pi: self.lambda_pi,
            rho: self.lambda_rho,
        }
    }

    /// Rows gathered (with repetition allowed) into a new container, keeping
    /// trim and penalty metadata. Used by the fixed-nuisance bootstrap.
    pub fn gather(&self, rows: &[usize]) -> NuisanceFits {
        let arms = self.n_arms();
        NuisanceFits {
            mu: DMatrix::from_fn(rows.len(), arms, |i, a| self.mu[(rows[i], a)]),
            pi: DMatrix::from_fn(rows.len(), arms, |i, a| self.pi[(rows[i], a)]),
            rho: rows.iter().map(|&r| self.rho[r]).collect(),
            trim: self.trim,
            folds: FoldAssignment {
                fold_of: rows.iter().map(|&r| self.folds.fold_of[r]).collect(),
                k: self.folds.k,
                seed: self.folds.seed,
            },
            lambda_mu: self.lambda_mu,
            lambda_pi: self.lambda_pi,
            lambda_rho: self.lambda_rho,
        }
    }

    /// Audit export: one row per observation with columns
    /// `row, rho, pi_0..pi_K, mu_0..mu_K`.
    pub fn export<P: AsRef<Path>>(&self, path: P, delimiter: u8) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let sep = delimiter as char;
        let mut header = String::from("row");
        header.push_str(&format!("{sep}rho"));
        for a in 0..self.n_arms() {
            header.push_str(&format!("{sep}pi_{a}"));
        }
        for a in 0..self.n_arms() {
            header.push_str(&format!("{sep}mu_{a}"));
        }
        writeln!(out, "{header}")?;
        for i in 0..self.n() {
            let mut line = format!("{i}{sep}{}", self.rho[i]);
            for a in 0..self.n_arms() {
                line.push_str(&format!("{sep}{}", self.pi[(i, a)]));
            }
            for a in 0..self.n_arms() {
                line.push_str(&format!("{sep}{}", self.mu[(i, a)]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Clips onto `[lo, hi]` and renormalizes to the simplex, iterating until the
/// result satisfies both the bounds and the sum constraint.
fn clip_renormalize(p: &mut [f64], lo: f64, hi: f64) {
    for _ in 0..100 {
        let mut clipped = false;
        for v in p.iter_mut() {
            let c = v.clamp(lo, hi);
            if c != *v {
                *v = c;
                clipped = true;
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() <= 1e-14 && !clipped {
            return;
        }
        if sum > 0.0 {
            for v in p.iter_mut() {
                *v /= sum;
            }
        }
        if !clipped && (sum - 1.0).abs() <= 1e-14 {
            return;
        }
    }
}

fn study_rows(d: &Dataset) -> Vec<usize> {
    (0..d.n()).filter(|&i| d.selected(i)).collect()
}

/// Picks the three penalties by cross-validated loss on the full sample:
/// the outcome penalty minimizes CV-MSE pooled over per-arm fits, the
/// propensity penalties minimize CV-deviance.
pub fn select_nuisance_lambdas(d: &Dataset, cfg: &NuisanceConfig) -> Result<SelectedLambdas> {
    let study = study_rows(d);
    let x_study = select_rows(d.x(), &study);

    // Outcome penalty: pooled CV-MSE of the per-arm gaussian fits.
    let mu = select_lambda_mu(d, &study, &x_study, cfg)?;

    // Treatment propensity penalty.
    let pi = if d.n_arms() == 1 {
        cfg.pi.lambda_grid[0]
    } else {
        let a_study: Vec<f64> = study.iter().map(|&i| d.arm(i).unwrap() as f64).collect();
        let mut pi_cfg = cfg.pi.clone();
        pi_cfg.family = Family::Multinomial {
            n_classes: d.n_arms(),
        };
        select_lambda_cv(&x_study, &a_study, pi_cfg.family, &pi_cfg, cfg.seed ^ 0x9e3779b9)?.0
    };

    // Selection propensity penalty, on all rows.
    let s_all: Vec<f64> = (0..d.n()).map(|i| if d.selected(i) { 1.0 } else { 0.0 }).collect();
    let rho = select_lambda_cv(
        d.x(),
        &s_all,
        Family::Binomial,
        &cfg.rho,
        cfg.seed ^ 0x51f15ead,
    )?
    .0;

    Ok(SelectedLambdas { mu, pi, rho })
}

fn select_lambda_mu(
    d: &Dataset,
    study: &[usize],
    x_study: &DMatrix<f64>,
    cfg: &NuisanceConfig,
) -> Result<f64> {
    cfg.mu.validate()?;
    if cfg.mu.lambda_grid.len() == 1 {
        return Ok(cfg.mu.lambda_grid[0]);
    }
    let n1 = study.len();
    if n1 < 2 * cfg.mu.cv_folds {
        return Err(Error::InvalidFoldCount {
            k: cfg.mu.cv_folds,
            n: n1,
        });
    }
    let folds = make_folds(n1, cfg.mu.cv_folds, cfg.seed ^ 0x6d75)?;
    let opts = GlmOptions {
        intercept: cfg.mu.intercept,
        ..GlmOptions::default()
    };
    let y_study: Vec<f64> = study.iter().map(|&i| d.outcome(i).unwrap()).collect();
    let a_study: Vec<usize> = study.iter().map(|&i| d.arm(i).unwrap()).collect();

    let mut best: Option<(f64, f64)> = None;
    for &lambda in &cfg.mu.lambda_grid {
        let mut total = 0.0;
        for fold in 0..cfg.mu.cv_folds {
            for arm in 0..d.n_arms() {
                let train: Vec<usize> = (0..n1)
                    .filter(|&i| folds.fold_of[i] != fold && a_study[i] == arm)
                    .collect();
                let test: Vec<usize> = (0..n1)
                    .filter(|&i| folds.fold_of[i] == fold && a_study[i] == arm)
                    .collect();
                if test.is_empty() {
                    continue;
                }
                if train.is_empty() {
                    return Err(Error::EmptyTrainingCell { fold, arm });
                }
                let xt = select_rows(x_study, &train);
                let yt: Vec<f64> = train.iter().map(|&i| y_study[i]).collect();
                let fit =
                    fit_regularized_glm_with(&xt, &yt, Family::Gaussian, lambda, None, &opts)?;
                let xv = select_rows(x_study, &test);
                let pred = fit.predict_mean(&xv);
                for (pos, &i) in test.iter().enumerate() {
                    let e = y_study[i] - pred[pos];
                    total += e * e;
                }
            }
        }
        let loss = total / n1 as f64;
        if best.map_or(true, |(_, b)| loss < b) {
            best = Some((lambda, loss));
        }
    }
    Ok(best.expect("non-empty grid").0)
}

/// Cross-fits all three nuisances with penalties selected by CV.
pub fn fit_nuisances(
    d: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
) -> Result<NuisanceFits> {
    let lambdas = select_nuisance_lambdas(d, cfg)?;
    fit_nuisances_fixed(d, folds, cfg, lambdas, None)
}

/// Convenience entry that also builds the fold assignment from the config.
pub fn fit_nuisances_default(d: &Dataset, cfg: &NuisanceConfig) -> Result<NuisanceFits> {
    let folds = make_folds(d.n(), cfg.folds, cfg.seed)?;
    fit_nuisances(d, &folds, cfg)
}

/// Cross-fits with fixed penalties and optional row weights (used by the
/// honest bootstrap, which refits coefficients per replicate at the penalties
/// selected on the original sample).
pub fn fit_nuisances_fixed(
    d: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
    lambdas: SelectedLambdas,
    weights: Option<&[f64]>,
) -> Result<NuisanceFits> {
    fit_nuisances_impl(d, folds, cfg, lambdas, weights, None)
}

/// As [`fit_nuisances`], additionally reporting per-component wall time.
pub fn fit_nuisances_timed(
    d: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
) -> Result<(NuisanceFits, NuisanceTimings)> {
    let timers = ComponentTimers::default();
    let t0 = Instant::now();
    let lambdas = select_nuisance_lambdas_timed(d, cfg, &timers)?;
    let _ = t0;
    let fits = fit_nuisances_impl(d, folds, cfg, lambdas, None, Some(&timers))?;
    Ok((fits, timers.snapshot()))
}

#[derive(Default)]
struct ComponentTimers {
    mu_ns: AtomicU64,
    pi_ns: AtomicU64,
    rho_ns: AtomicU64,
}

impl ComponentTimers {
    fn add(&self, which: usize, start: Instant) {
        let ns = start.elapsed().as_nanos() as u64;
        match which {
            0 => self.mu_ns.fetch_add(ns, Ordering::Relaxed),
            1 => self.pi_ns.fetch_add(ns, Ordering::Relaxed),
            _ => self.rho_ns.fetch_add(ns, Ordering::Relaxed),
        };
    }

    fn snapshot(&self) -> NuisanceTimings {
        NuisanceTimings {
            mu_s: self.mu_ns.load(Ordering::Relaxed) as f64 * 1e-9,
            pi_s: self.pi_ns.load(Ordering::Relaxed) as f64 * 1e-9,
            rho_s: self.rho_ns.load(Ordering::Relaxed) as f64 * 1e-9,
        }
    }
}

fn select_nuisance_lambdas_timed(
    d: &Dataset,
    cfg: &NuisanceConfig,
    timers: &ComponentTimers,
) -> Result<SelectedLambdas> {
    let study = study_rows(d);
    let x_study = select_rows(d.x(), &study);
    let t = Instant::now();
    let mu = select_lambda_mu(d, &study, &x_study, cfg)?;
    timers.add(0, t);

    let t = Instant::now();
    let pi = if d.n_arms() == 1 {
        cfg.pi.lambda_grid[0]
    } else {
        let a_study: Vec<f64> = study.iter().map(|&i| d.arm(i).unwrap() as f64).collect();
        let mut pi_cfg = cfg.pi.clone();
        pi_cfg.family = Family::Multinomial {
            n_classes: d.n_arms(),
        };
        select_lambda_cv(&x_study, &a_study, pi_cfg.family, &pi_cfg, cfg.seed ^ 0x9e3779b9)?.0
    };
    timers.add(1, t);

    let t = Instant::now();
    let s_all: Vec<f64> = (0..d.n()).map(|i| if d.selected(i) { 1.0 } else { 0.0 }).collect();
    let rho = select_lambda_cv(
        d.x(),
        &s_all,
        Family::Binomial,
        &cfg.rho,
        cfg.seed ^ 0x51f15ead,
    )?
    .0;
    timers.add(2, t);

    Ok(SelectedLambdas { mu, pi, rho })
}

fn fit_nuisances_impl(
    d: &Dataset,
    folds: &FoldAssignment,
    cfg: &NuisanceConfig,
    lambdas: SelectedLambdas,
    weights: Option<&[f64]>,
    timers: Option<&ComponentTimers>,
) -> Result<NuisanceFits> {
    let n = d.n();
    let arms = d.n_arms();
    if folds.fold_of.len() != n {
        return Err(Error::DimensionMismatch {
            what: "fold assignment",
            expected: n,
            found: folds.fold_of.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                what: "nuisance weights",
                expected: n,
                found: w.len(),
            });
        }
    }
    let trim = cfg.trim;
    if arms as f64 * trim.lo > 1.0 {
        return Err(Error::InvalidConfig {
            reason: format!("trim lower bound {} infeasible for {arms} arms", trim.lo),
        });
    }

    struct FoldBlock {
        rows: Vec<usize>,
        mu: Vec<Vec<f64>>,
        pi: Vec<Vec<f64>>,
        rho: Vec<f64>,
    }

    let fit_fold = |fold: usize| -> Result<FoldBlock> {
        let train: Vec<usize> = (0..n).filter(|&i| folds.fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds.fold_of[i] == fold).collect();
        let x_test = select_rows(d.x(), &test);
        let opts = GlmOptions::default();
        let sub_weights = |rows: &[usize]| -> Option<Vec<f64>> {
            weights.map(|w| rows.iter().map(|&i| w[i]).collect())
        };

        // Outcome model, one gaussian fit per arm on study training rows.
        let t = Instant::now();
        let mut mu_cols = Vec::with_capacity(arms);
        for arm in 0..arms {
            let rows: Vec<usize> = train
                .iter()
                .copied()
                .filter(|&i| d.selected(i) && d.arm(i) == Some(arm))
                .collect();
            if rows.is_empty() {
                return Err(Error::EmptyTrainingCell { fold, arm });
            }
            let xt = select_rows(d.x(), &rows);
            let yt: Vec<f64> = rows.iter().map(|&i| d.outcome(i).unwrap()).collect();
            let wt = sub_weights(&rows);
            let fit = fit_regularized_glm_with(
                &xt,
                &yt,
                Family::Gaussian,
                lambdas.mu,
                wt.as_deref(),
                &opts,
            )?;
            mu_cols.push(fit.predict_mean(&x_test).as_slice().to_vec());
        }
        if let Some(t9) = timers {
            t9.add(0, t);
        }

        // Treatment propensity on study training rows, predicted everywhere.
        let t = Instant::now();
        let pi_rows: Vec<Vec<f64>> = if arms == 1 {
            vec![vec![1.0]; test.len()]
        } else {
            let rows: Vec<usize> = train.iter().copied().filter(|&i| d.selected(i)).collect();
            if rows.is_empty() {
                return Err(Error::EmptyTrainingCell { fold, arm: 0 });
            }
            let xt = select_rows(d.x(), &rows);
            let at: Vec<f64> = rows.iter().map(|&i| d.arm(i).unwrap() as f64).collect();
            let wt = sub_weights(&rows);
            let fit = fit_regularized_glm_with(
                &xt,
                &at,
                Family::Multinomial { n_classes: arms },
                lambdas.pi,
                wt.as_deref(),
                &opts,
            )?;
            let probs = fit.predict_proba(&x_test);
            (0..test.len())
                .map(|i| {
                    let mut row: Vec<f64> = (0..arms).map(|a| probs[(i, a)]).collect();
                    clip_renormalize(&mut row, trim.lo, trim.hi);
                    row
                })
                .collect()
        };
        if let Some(t9) = timers {
            t9.add(1, t);
        }

        // Selection propensity on all training rows.
        let t = Instant::now();
        let st: Vec<f64> = train
            .iter()
            .map(|&i| if d.selected(i) { 1.0 } else { 0.0 })
            .collect();
        let xt = select_rows(d.x(), &train);
        let wt = sub_weights(&train);
        let fit = fit_regularized_glm_with(
            &xt,
            &st,
            Family::Binomial,
            lambdas.rho,
            wt.as_deref(),
            &opts,
        )?;
        let rho: Vec<f64> = fit
            .predict_mean(&x_test)
            .iter()
            .map(|p| p.clamp(trim.lo, trim.hi))
            .collect();
        if let Some(t9) = timers {
            t9.add(2, t);
        }

        // Column-major mu to row-major per test row.
        let mu = (0..test.len())
            .map(|i| (0..arms).map(|a| mu_cols[a][i]).collect())
            .collect();
        Ok(FoldBlock {
            rows: test,
            mu,
            pi: pi_rows,
            rho,
        })
    };

    let blocks: Vec<FoldBlock> = (0..folds.k)
        .into_par_iter()
        .map(fit_fold)
        .collect::<Result<_>>()?;

    let mut mu = DMatrix::zeros(n, arms);
    let mut pi = DMatrix::zeros(n, arms);
    let mut rho = vec![0.0; n];
    for block in &blocks {
        for (pos, &row) in block.rows.iter().enumerate() {
            for a in 0..arms {
                mu[(row, a)] = block.mu[pos][a];
                pi[(row, a)] = block.pi[pos][a];
            }
            rho[row] = block.rho[pos];
        }
    }
    Ok(NuisanceFits {
        mu,
        pi,
        rho,
        trim,
        folds: folds.clone(),
        lambda_mu: lambdas.mu,
        lambda_pi: lambdas.pi,
        lambda_rho: lambdas.rho,
    })
}
