//! Bootstrap standard errors and confidence intervals.
//!
//! Two schemes: the nonparametric bootstrap resamples full rows (including
//! the selection indicator) with replacement; the Bayesian bootstrap draws
//! unit-mean exponential row weights per replicate and hands them to the
//! statistic. Replicates get independent RNG streams derived from the seed
//! and replicate index, so results do not depend on execution order or
//! worker count.
//!
//! A replicate whose resample loses an arm or selection stratum (or whose
//! statistic fails for any other reason) is dropped and recorded; more than
//! 10% dropped is an error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::z_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapKind {
    Nonparametric,
    Bayesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    Percentile,
    Normal,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSpec {
    pub kind: BootstrapKind,
    /// Replicate count, at least 2.
    pub b: usize,
    pub seed: u64,
    pub ci_method: CiMethod,
    pub ci_level: f64,
    /// Resample within selection strata and arms, preserving their counts
    /// (nonparametric kind only). Off by default.
    pub stratified: bool,
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(Error::InvalidConfig {
                reason: format!("bootstrap needs B >= 2, got {}", self.b),
            });
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("ci_level {} outside (0, 1)", self.ci_level),
            });
        }
        Ok(())
    }
}

/// What a statistic sees for one evaluation.
///
/// * center evaluation: original data, no rows, no weights, `replicate` None;
/// * nonparametric replicate: resampled data plus the original row index of
///   each resampled row;
/// * Bayesian replicate: original data plus unit-mean row weights.
pub struct ReplicateCtx<'a> {
    pub data: &'a Dataset,
    pub source_rows: Option<&'a [usize]>,
    pub row_weights: Option<&'a [f64]>,
    pub replicate: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    /// Statistic on the original data.
    pub estimate: Vec<f64>,
    /// Retained replicate draws, in replicate order (B minus dropped rows).
    pub draws: Vec<Vec<f64>>,
    /// Per-component sample standard deviation of the draws.
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub dropped: usize,
    pub spec: BootstrapSpec,
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + replicate as u64);
    rng
}

fn draw_indices(d: &Dataset, rng: &mut ChaCha8Rng, stratified: bool) -> Vec<usize> {
    let n = d.n();
    if !stratified {
        return (0..n).map(|_| rng.random_range(0..n)).collect();
    }
    // Group rows by (stratum, arm) and resample within each group.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut key_of = vec![0usize; n];
    let mut keys: Vec<(bool, Option<usize>)> = Vec::new();
    for i in 0..n {
        let key = (d.selected(i), d.arm(i));
        let idx = match keys.iter().position(|&k| k == key) {
            Some(idx) => idx,
            None => {
                keys.push(key);
                groups.push(Vec::new());
                keys.len() - 1
            }
        };
        key_of[i] = idx;
        groups[idx].push(i);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let group = &groups[key_of[i]];
        out.push(group[rng.random_range(0..group.len())]);
    }
    out
}

fn draw_bayes_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    for v in &mut w {
        *v /= mean;
    }
    w
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Runs the bootstrap for an arbitrary vector statistic.
///
/// The statistic is first evaluated on the original data (the `estimate`
/// field), then once per replicate. Whether nuisances are refit inside each
/// replicate or held fixed is entirely up to the statistic closure; see the
/// analysis module for both constructions.
pub fn bootstrap<F>(stat: &F, d: &Dataset, spec: &BootstrapSpec) -> Result<BootstrapResult>
where
    F: Fn(&ReplicateCtx) -> Result<Vec<f64>> + Sync,
{
    spec.validate()?;
    let estimate = stat(&ReplicateCtx {
        data: d,
        source_rows: None,
        row_weights: None,
        replicate: None,
    })?;
    let m = estimate.len();

    let outcomes: Vec<Option<Vec<f64>>> = (0..spec.b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(spec.seed, rep);
            let value = match spec.kind {
                BootstrapKind::Nonparametric => {
                    let indices = draw_indices(d, &mut rng, spec.stratified);
                    match d.gather(&indices) {
                        Ok(d_rep) => stat(&ReplicateCtx {
                            data: &d_rep,
                            source_rows: Some(&indices),
                            row_weights: None,
                            replicate: Some(rep),
                        })
                        .ok(),
                        Err(_) => None,
                    }
                }
                BootstrapKind::Bayesian => {
                    let w = draw_bayes_weights(d.n(), &mut rng);
                    stat(&ReplicateCtx {
                        data: d,
                        source_rows: None,
                        row_weights: Some(&w),
                        replicate: Some(rep),
                    })
                    .ok()
                }
            };
            value.filter(|v| v.len() == m)
        })
        .collect();

    let dropped = outcomes.iter().filter(|o| o.is_none()).count();
    if dropped * 10 > spec.b {
        return Err(Error::DegenerateReplicates {
            dropped,
            total: spec.b,
        });
    }
    let draws: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    let kept = draws.len() as f64;

    let mut se = vec![0.0; m];
    let mut ci = vec![(0.0, 0.0); m];
    let z = z_quantile(spec.ci_level);
    for j in 0..m {
        let col: Vec<f64> = draws.iter().map(|row| row[j]).collect();
        let mean = col.iter().sum::<f64>() / kept;
        let var = if kept > 1.0 {
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (kept - 1.0)
        } else {
            0.0
        };
        se[j] = var.sqrt();
        ci[j] = match spec.ci_method {
            CiMethod::Normal => (estimate[j] - z * se[j], estimate[j] + z * se[j]),
            CiMethod::Percentile => {
                let mut sorted = col;
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let alpha = (1.0 - spec.ci_level) / 2.0;
                (quantile(&sorted, alpha), quantile(&sorted, 1.0 - alpha))
            }
        };
    }

    Ok(BootstrapResult {
        estimate,
        draws,
        se,
        ci,
        dropped,
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn tiny_dataset(values: &[f64]) -> Dataset {
        let n = values.len();
        Dataset::new(
            DMatrix::from_element(n, 1, 0.0),
            vec![true; n],
            vec![Some(0); n],
            values.iter().map(|&v| Some(v)).collect(),
            Some(1),
        )
        .unwrap()
    }

    fn mean_stat(ctx: &ReplicateCtx) -> Result<Vec<f64>> {
        let d = ctx.data;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..d.n() {
            let w = ctx.row_weights.map_or(1.0, |w| w[i]);
            num += w * d.outcome(i).unwrap();
            den += w;
        }
        Ok(vec![num / den])
    }

    #[test]
    fn se_of_the_mean_matches_population_formula() {
        // Derived oracle: plug-in se of the mean of {1,2,3} is
        // sqrt(population variance / n) = sqrt((2/3)/3).
        let d = tiny_dataset(&[1.0, 2.0, 3.0]);
        let spec = BootstrapSpec {
            kind: BootstrapKind::Nonparametric,
            b: 20_000,
            seed: 11,
            ci_method: CiMethod::Percentile,
            ci_level: 0.95,
            stratified: false,
        };
        let result = bootstrap(&mean_stat, &d, &spec).unwrap();
        let truth = (2.0f64 / 3.0 / 3.0).sqrt();
        assert!(
            (result.se[0] - truth).abs() / truth < 0.10,
            "bootstrap se {} vs {truth}",
            result.se[0]
        );
    }

    #[test]
    fn constant_statistic_collapses() {
        let d = tiny_dataset(&[5.0, 5.0, 5.0, 5.0]);
        let spec = BootstrapSpec {
            kind: BootstrapKind::Bayesian,
            b: 200,
            seed: 3,
            ci_method: CiMethod::Percentile,
            ci_level: 0.9,
            stratified: false,
        };
        let result = bootstrap(&mean_stat, &d, &spec).unwrap();
        assert_abs_diff_eq!(result.se[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(result.ci[0].0, result.ci[0].1, epsilon = 1e-12);
    }

    #[test]
    fn same_seed_reproduces_draws() {
        let d = tiny_dataset(&[1.0, 4.0, 9.0, 16.0, 25.0]);
        let spec = BootstrapSpec {
            kind: BootstrapKind::Nonparametric,
            b: 50,
            seed: 99,
            ci_method: CiMethod::Normal,
            ci_level: 0.95,
            stratified: false,
        };
        let r1 = bootstrap(&mean_stat, &d, &spec).unwrap();
        let r2 = bootstrap(&mean_stat, &d, &spec).unwrap();
        assert_eq!(r1.draws, r2.draws);
    }

    #[test]
    fn bayesian_weights_average_one() {
        for rep in 0..20 {
            let mut rng = replicate_rng(7, rep);
            let w = draw_bayes_weights(137, &mut rng);
            assert!(w.iter().all(|&v| v > 0.0));
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stratified_resampling_preserves_counts() {
        let n = 12;
        let s: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let a: Vec<Option<usize>> = (0..n)
            .map(|i| if i % 3 != 0 { Some(i % 2) } else { None })
            .collect();
        let y: Vec<Option<f64>> = (0..n)
            .map(|i| if i % 3 != 0 { Some(i as f64) } else { None })
            .collect();
        let d = Dataset::new(DMatrix::from_element(n, 1, 0.0), s, a, y, Some(2)).unwrap();
        let mut rng = replicate_rng(5, 0);
        let indices = draw_indices(&d, &mut rng, true);
        let count = |f: &dyn Fn(usize) -> bool| indices.iter().filter(|&&i| f(i)).count();
        assert_eq!(count(&|i| !d.selected(i)), d.n_external());
        assert_eq!(
            count(&|i| d.arm(i) == Some(0)),
            (0..n).filter(|&i| d.arm(i) == Some(0)).count()
        );
    }

    #[test]
    fn degenerate_replicates_are_limited() {
        // A statistic that always fails trips the 10% limit.
        let d = tiny_dataset(&[1.0, 2.0, 3.0]);
        let spec = BootstrapSpec {
            kind: BootstrapKind::Nonparametric,
            b: 30,
            seed: 1,
            ci_method: CiMethod::Normal,
            ci_level: 0.95,
            stratified: false,
        };
        let failing = |ctx: &ReplicateCtx| -> Result<Vec<f64>> {
            if ctx.replicate.is_some() {
                Err(Error::SingleStratum)
            } else {
                Ok(vec![0.0])
            }
        };
        let err = bootstrap(&failing, &d, &spec).unwrap_err();
        assert!(matches!(err, Error::DegenerateReplicates { dropped: 30, total: 30 }));
    }

    #[test]
    fn percentile_quantiles_interpolate() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile(&sorted, 0.0), 1.0);
        assert_abs_diff_eq!(quantile(&sorted, 1.0), 4.0);
        assert_abs_diff_eq!(quantile(&sorted, 0.5), 2.5);
    }
}
