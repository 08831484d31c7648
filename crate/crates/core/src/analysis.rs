//! End-to-end estimation runs: nuisance fitting, estimation, and bootstrap
//! inference composed behind one configuration struct.
//!
//! The bootstrap statistic is the concatenation of the per-arm marginal
//! means and all contrasts, in the order given by [`stat_labels`]. Two
//! bootstrap modes exist: the honest default refits nuisance coefficients
//! inside every replicate (fold assignment re-drawn per replicate, penalties
//! held at the values selected on the original sample), while the fast mode
//! keeps the original out-of-fold predictions and only re-evaluates the
//! estimator. Fast-mode intervals ignore nuisance estimation variability and
//! are labeled accordingly in reports.

use serde::Serialize;

use crate::bootstrap::{bootstrap, BootstrapResult, BootstrapSpec, ReplicateCtx};
use crate::data::Dataset;
use crate::error::Result;
use crate::estimators::{
    estimate_aisw, estimate_isw, estimate_om, point_estimates, EstimandKind, EstimateResult,
    EstimatorKind, InfluenceMatrix,
};
use crate::nuisance::{
    fit_nuisances, fit_nuisances_fixed, make_folds, NuisanceConfig, NuisanceFits, SelectedLambdas,
};

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapPlan {
    pub spec: BootstrapSpec,
    /// Refit nuisance coefficients inside each replicate (honest, default).
    pub refit: bool,
}

#[derive(Debug, Clone)]
pub struct EstimateConfig {
    pub estimand: EstimandKind,
    pub estimator: EstimatorKind,
    pub hajek: bool,
    pub ci_level: f64,
    pub nuisance: NuisanceConfig,
    pub bootstrap: Option<BootstrapPlan>,
}

pub struct AnalysisOutput {
    pub result: EstimateResult,
    pub influence: InfluenceMatrix,
    pub nuisances: NuisanceFits,
    pub bootstrap: Option<BootstrapResult>,
}

/// Component names of the bootstrap statistic vector: marginal means first,
/// then contrasts in the same order as `EstimateResult::contrasts`.
pub fn stat_labels(n_arms: usize) -> Vec<String> {
    let mut labels: Vec<String> = (0..n_arms).map(|a| format!("psi_{a}")).collect();
    for a in 1..n_arms {
        for a_prime in 0..a {
            labels.push(format!("tau_{a}_{a_prime}"));
        }
    }
    labels
}

fn stat_vector(
    d: &Dataset,
    nf: &NuisanceFits,
    cfg: &EstimateConfig,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let psi = point_estimates(d, nf, cfg.estimand, cfg.estimator, cfg.hajek, weights)?;
    let mut out = psi.clone();
    for a in 1..psi.len() {
        for a_prime in 0..a {
            out.push(psi[a] - psi[a_prime]);
        }
    }
    Ok(out)
}

fn replicate_seed(base: u64, replicate: usize) -> u64 {
    // splitmix-style spread so replicate fold seeds are well separated.
    let mut z = base ^ (replicate as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 31)
}

/// Runs the configured bootstrap against an already-fit analysis.
pub fn bootstrap_estimate(
    d: &Dataset,
    nf: &NuisanceFits,
    cfg: &EstimateConfig,
    plan: &BootstrapPlan,
) -> Result<BootstrapResult> {
    let lambdas = SelectedLambdas {
        mu: nf.lambda_mu,
        pi: nf.lambda_pi,
        rho: nf.lambda_rho,
    };
    let stat = |ctx: &ReplicateCtx| -> Result<Vec<f64>> {
        match ctx.replicate {
            None => stat_vector(d, nf, cfg, None),
            Some(rep) => {
                if plan.refit {
                    let folds = make_folds(
                        ctx.data.n(),
                        cfg.nuisance.folds,
                        replicate_seed(cfg.nuisance.seed, rep),
                    )?;
                    let nf_rep = fit_nuisances_fixed(
                        ctx.data,
                        &folds,
                        &cfg.nuisance,
                        lambdas,
                        ctx.row_weights,
                    )?;
                    stat_vector(ctx.data, &nf_rep, cfg, ctx.row_weights)
                } else {
                    match ctx.source_rows {
                        Some(rows) => {
                            let nf_rep = nf.gather(rows);
                            stat_vector(ctx.data, &nf_rep, cfg, None)
                        }
                        None => stat_vector(ctx.data, nf, cfg, ctx.row_weights),
                    }
                }
            }
        }
    };
    bootstrap(&stat, d, &plan.spec)
}

/// Full pipeline: fold construction, nuisance fitting with CV-selected
/// penalties, estimation, and (optionally) bootstrap inference.
pub fn run_estimate(d: &Dataset, cfg: &EstimateConfig) -> Result<AnalysisOutput> {
    let folds = make_folds(d.n(), cfg.nuisance.folds, cfg.nuisance.seed)?;
    let nf = fit_nuisances(d, &folds, &cfg.nuisance)?;
    let (result, influence) = match cfg.estimator {
        EstimatorKind::OutcomeModel => estimate_om(d, &nf, cfg.estimand)?,
        EstimatorKind::InverseSelection => estimate_isw(d, &nf, cfg.estimand, cfg.hajek)?,
        EstimatorKind::Augmented => {
            estimate_aisw(d, &nf, cfg.estimand, cfg.hajek, cfg.ci_level)?
        }
    };
    let bootstrap = match &cfg.bootstrap {
        Some(plan) => Some(bootstrap_estimate(d, &nf, cfg, plan)?),
        None => None,
    };
    Ok(AnalysisOutput {
        result,
        influence,
        nuisances: nf,
        bootstrap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::{BootstrapKind, CiMethod};
    use crate::simulation::{generate, FormKind, ScenarioSpec};

    fn small_config(boot: Option<BootstrapPlan>) -> EstimateConfig {
        let mut nuisance = NuisanceConfig::default();
        nuisance.folds = 3;
        nuisance.mu.lambda_grid = vec![0.01];
        nuisance.pi.lambda_grid = vec![0.1];
        nuisance.rho.lambda_grid = vec![0.1];
        EstimateConfig {
            estimand: EstimandKind::Generalize,
            estimator: EstimatorKind::Augmented,
            hajek: false,
            ci_level: 0.95,
            nuisance,
            bootstrap: boot,
        }
    }

    #[test]
    fn pipeline_runs_end_to_end() {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 300, 2);
        let (d, _) = generate(&spec).unwrap();
        let out = run_estimate(&d, &small_config(None)).unwrap();
        assert_eq!(out.result.psi.len(), 2);
        assert!(out.result.se_psi.is_some());
        assert_eq!(out.influence.n(), d.n());
    }

    #[test]
    fn stat_labels_align_with_vector() {
        let labels = stat_labels(3);
        assert_eq!(
            labels,
            vec!["psi_0", "psi_1", "psi_2", "tau_1_0", "tau_2_0", "tau_2_1"]
        );
    }

    #[test]
    fn fast_bootstrap_is_deterministic() {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 250, 8);
        let (d, _) = generate(&spec).unwrap();
        let plan = BootstrapPlan {
            spec: BootstrapSpec {
                kind: BootstrapKind::Nonparametric,
                b: 40,
                seed: 5,
                ci_method: CiMethod::Percentile,
                ci_level: 0.95,
                stratified: false,
            },
            refit: false,
        };
        let cfg = small_config(Some(plan));
        let out1 = run_estimate(&d, &cfg).unwrap();
        let out2 = run_estimate(&d, &cfg).unwrap();
        assert_eq!(
            out1.bootstrap.as_ref().unwrap().draws,
            out2.bootstrap.as_ref().unwrap().draws
        );
    }

    #[test]
    fn bayesian_refit_bootstrap_runs() {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 200, 4);
        let (d, _) = generate(&spec).unwrap();
        let plan = BootstrapPlan {
            spec: BootstrapSpec {
                kind: BootstrapKind::Bayesian,
                b: 10,
                seed: 1,
                ci_method: CiMethod::Normal,
                ci_level: 0.9,
                stratified: false,
            },
            refit: true,
        };
        let out = run_estimate(&d, &small_config(Some(plan))).unwrap();
        let boot = out.bootstrap.unwrap();
        assert_eq!(boot.draws.len(), 10);
        assert_eq!(boot.estimate.len(), 3); // psi_0, psi_1, tau_1_0
    }
}
