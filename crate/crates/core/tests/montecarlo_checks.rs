//! Seeded Monte Carlo checks of statistical behavior: the affine invariance
//! of the heterogeneity test, the naive baseline's behavior without
//! covariate shift, the PATE oracle cross-check, and the monotone-information
//! property of the augmented estimator.

use causal_transport::diagnostics::heterogeneity_test;
use causal_transport::nuisance::{fit_nuisances, make_folds, NuisanceConfig};
use causal_transport::simulation::{
    generate, run_study, true_pate, FormKind, PolyFn, ScenarioSpec, StudyConfig, StudyEstimator,
};
use causal_transport::Dataset;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn quick_cfg(seed: u64) -> NuisanceConfig {
    let mut cfg = NuisanceConfig {
        folds: 5,
        seed,
        ..NuisanceConfig::default()
    };
    cfg.mu.lambda_grid = vec![0.01];
    cfg.pi.lambda_grid = vec![0.1];
    cfg.rho.lambda_grid = vec![0.1];
    cfg
}

/// p-values of the heterogeneity test are invariant to Y -> c Y + b when the
/// whole pipeline (nuisances included) is refit on the transformed data.
#[test]
fn heterogeneity_p_value_is_affine_invariant() {
    let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 600, 31);
    let (d, _) = generate(&spec).unwrap();
    let cfg = quick_cfg(7);
    let folds = make_folds(d.n(), cfg.folds, cfg.seed).unwrap();
    let nf = fit_nuisances(&d, &folds, &cfg).unwrap();
    let base = heterogeneity_test(&d, &nf, 1, 0).unwrap();

    let (c, b) = (-2.5, 7.0);
    let transformed = Dataset::new(
        d.x().clone(),
        (0..d.n()).map(|i| d.selected(i)).collect(),
        (0..d.n()).map(|i| d.arm(i)).collect(),
        (0..d.n()).map(|i| d.outcome(i).map(|y| c * y + b)).collect(),
        Some(2),
    )
    .unwrap();
    let nf_t = fit_nuisances(&transformed, &folds, &cfg).unwrap();
    let t = heterogeneity_test(&transformed, &nf_t, 1, 0).unwrap();

    assert!(
        (base.p_value - t.p_value).abs() < 1e-9,
        "p-values {} vs {}",
        base.p_value,
        t.p_value
    );
    assert!(base.p_value >= 0.0 && base.p_value <= 1.0);
}

/// With selection independent of the covariates there is no covariate shift,
/// so the naive SATE is unbiased for the PATE up to Monte Carlo noise.
#[test]
fn naive_sate_unbiased_without_covariate_shift() {
    let mut spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 2000, 0);
    spec.selection = PolyFn {
        intercept: 0.2,
        ..PolyFn::default()
    };
    let replications = 500;
    let report = run_study(
        &[spec],
        &[StudyEstimator::NaiveSate],
        replications,
        2024,
        &StudyConfig::default(),
    )
    .unwrap();
    let cell = &report.cells[0];
    let mc_se = ((cell.rmse.powi(2) - cell.bias.powi(2)) / cell.n_used as f64).sqrt();
    assert!(
        cell.bias.abs() < 2.0 * mc_se,
        "naive bias {} exceeds 2 x MC se {mc_se}",
        cell.bias
    );
}

/// The analytic PATE matches a large Monte Carlo quadrature of E[tau(X)]
/// within three standard errors.
#[test]
fn analytic_pate_matches_monte_carlo_oracle() {
    for (sel, out) in [
        (FormKind::Linear, FormKind::Linear),
        (FormKind::Linear, FormKind::Nonlinear),
        (FormKind::Nonlinear, FormKind::Nonlinear),
    ] {
        let spec = ScenarioSpec::new(sel, out, 100, 0);
        let analytic = true_pate(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let draws = 10_000_000usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut x = vec![0.0; spec.p];
        for _ in 0..draws {
            for v in x.iter_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
            let t = spec.cate.eval(&x);
            sum += t;
            sumsq += t * t;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "scenario {:?}/{:?}: analytic {analytic} vs MC {mean} (se {se})",
            sel,
            out
        );
    }
}

/// Weights that balance covariate means onto the external sample drive the
/// weighted standardized mean differences to (numerically) zero.
#[test]
fn entropy_balance_zeroes_weighted_smd() {
    use causal_transport::calibration::{entropy_balance, MomentTarget};
    use causal_transport::diagnostics::smd_report;
    use nalgebra::DMatrix;

    let spec = ScenarioSpec::new(FormKind::Nonlinear, FormKind::Linear, 1500, 4);
    let (d, _) = generate(&spec).unwrap();
    let study: Vec<usize> = (0..d.n()).filter(|&i| d.selected(i)).collect();
    let external: Vec<usize> = (0..d.n()).filter(|&i| !d.selected(i)).collect();
    let p = d.n_covariates();
    let x_study = DMatrix::from_fn(study.len(), p, |i, j| d.x()[(study[i], j)]);
    let target_means: Vec<f64> = (0..p)
        .map(|j| external.iter().map(|&i| d.x()[(i, j)]).sum::<f64>() / external.len() as f64)
        .collect();
    let cw = entropy_balance(
        &x_study,
        &MomentTarget::means(target_means),
        None,
        1e-9,
        300,
    )
    .unwrap();
    let report = smd_report(&d, Some(&cw.w)).unwrap();
    for row in &report.rows {
        let smd = row.smd_weighted.unwrap();
        assert!(
            smd.abs() < 1e-7,
            "covariate {} weighted smd {smd}",
            row.covariate
        );
    }
    // Unweighted imbalance is material on the shifted coordinates, so the
    // comparison is not vacuous.
    assert!(report.rows.iter().any(|r| r.smd_unweighted.unwrap().abs() > 0.2));
}

/// More data cannot hurt: the augmented estimator's RMSE at n = 4000 is no
/// worse than at n = 1000 (seeded, R = 200).
#[test]
fn aisw_rmse_shrinks_with_sample_size() {
    let cfg = StudyConfig::default();
    let rmse_at = |n: usize| {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, n, 0);
        let report = run_study(&[spec], &[StudyEstimator::Aisw], 200, 99, &cfg).unwrap();
        report.cells[0].rmse
    };
    let small = rmse_at(1000);
    let large = rmse_at(4000);
    assert!(
        large <= small,
        "rmse grew with n: {small} at n=1000 vs {large} at n=4000"
    );
}
