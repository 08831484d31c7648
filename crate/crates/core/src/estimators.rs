//! Counterfactual mean and contrast estimators for multi-valued treatments.
//!
//! Three estimator families, each for two estimands:
//!
//! * `OM`, outcome modeling: average the fitted response surface over the
//!   target rows (all rows for generalization, external rows for transport).
//! * `ISW`, inverse selection weighting: reweight observed study outcomes by
//!   inverse selection and treatment propensities. Generalization weight:
//!   `S / rho * 1{A=a} / pi_a`; transport multiplies by `(1 - rho)` and
//!   rescales by the external fraction.
//! * `AISW`, augmented ISW: outcome model plus an inverse-weighted average
//!   of residuals; doubly robust in (rho, pi) versus mu.
//!
//! Every estimator also produces a per-observation influence matrix whose
//! column means equal the reported marginal means by construction. For AISW
//! the influence columns yield analytic standard errors (`sqrt(var/n)`);
//! OM and ISW standard errors come from the bootstrap module instead.
//! Horvitz-Thompson normalization (divide by n) is the default; the Hajek
//! flag divides each arm's weighted sums by that arm's realized weight sum,
//! with ratio-linearized influence columns.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimandKind {
    /// Counterfactual means in the overall sample (study plus external).
    Generalize,
    /// Counterfactual means in the external (S = 0) sample alone.
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[serde(rename = "om")]
    OutcomeModel,
    #[serde(rename = "isw")]
    InverseSelection,
    #[serde(rename = "aisw")]
    Augmented,
}

/// Per-observation influence values, one column per arm.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix {
    pub phi: DMatrix<f64>,
    pub estimand: EstimandKind,
    pub estimator: EstimatorKind,
    pub hajek: bool,
}

impl InfluenceMatrix {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_arms(&self) -> usize {
        self.phi.ncols()
    }

    pub fn column_mean(&self, arm: usize) -> f64 {
        self.phi.column(arm).iter().sum::<f64>() / self.n() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastResult {
    pub a: usize,
    pub a_prime: usize,
    pub tau: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    /// Marginal counterfactual means per arm.
    pub psi: Vec<f64>,
    /// Influence-function standard errors (AISW only; bootstrap elsewhere).
    pub se_psi: Option<Vec<f64>>,
    /// All ordered contrasts with a > a'.
    pub contrasts: Vec<ContrastResult>,
    pub ci_level: f64,
    pub n: usize,
    pub n_study: usize,
    pub n_external: usize,
    pub hajek: bool,
    pub estimator: EstimatorKind,
    pub estimand: EstimandKind,
}

pub(crate) fn z_quantile(ci_level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + ci_level / 2.0)
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
}

struct Inputs<'a> {
    d: &'a Dataset,
    nf: &'a NuisanceFits,
    weights: Option<&'a [f64]>,
}

impl<'a> Inputs<'a> {
    fn check(d: &'a Dataset, nf: &'a NuisanceFits, weights: Option<&'a [f64]>) -> Result<Self> {
        if nf.n() != d.n() || nf.n_arms() != d.n_arms() {
            return Err(Error::DimensionMismatch {
                what: "nuisance fits",
                expected: d.n(),
                found: nf.n(),
            });
        }
        if let Some(w) = weights {
            if w.len() != d.n() {
                return Err(Error::DimensionMismatch {
                    what: "row weights",
                    expected: d.n(),
                    found: w.len(),
                });
            }
        }
        Ok(Inputs { d, nf, weights })
    }

    fn w(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn wsum(&self) -> f64 {
        match self.weights {
            Some(w) => w.iter().sum(),
            None => self.d.n() as f64,
        }
    }

    /// Weighted external fraction, the plug-in for E[S = 0].
    fn external_fraction(&self) -> Result<f64> {
        let mut ext = 0.0;
        for i in 0..self.d.n() {
            if !self.d.selected(i) {
                ext += self.w(i);
            }
        }
        if ext <= 0.0 {
            return Err(Error::NoExternalRows);
        }
        Ok(ext / self.wsum())
    }

    /// Generalization weight `S / rho * 1{A=a} / pi_a` for row i.
    fn gen_weight(&self, i: usize, arm: usize) -> f64 {
        if self.d.selected(i) && self.d.arm(i) == Some(arm) {
            1.0 / (self.nf.rho[i] * self.nf.pi[(i, arm)])
        } else {
            0.0
        }
    }

    /// Transport weight `S (1 - rho) / rho * 1{A=a} / pi_a` for row i.
    fn transport_weight(&self, i: usize, arm: usize) -> f64 {
        if self.d.selected(i) && self.d.arm(i) == Some(arm) {
            (1.0 - self.nf.rho[i]) / (self.nf.rho[i] * self.nf.pi[(i, arm)])
        } else {
            0.0
        }
    }
}

/// Point estimates and optional influence matrix for any estimator/estimand
/// combination. Row weights (mean one) support the Bayesian bootstrap; the
/// influence matrix is only constructed for unweighted evaluations.
fn compute(
    d: &Dataset,
    nf: &NuisanceFits,
    estimand: EstimandKind,
    estimator: EstimatorKind,
    hajek: bool,
    weights: Option<&[f64]>,
    want_phi: bool,
) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    debug_assert!(!(want_phi && weights.is_some()));
    let inputs = Inputs::check(d, nf, weights)?;
    let n = d.n();
    let arms = d.n_arms();
    let wsum = inputs.wsum();
    let mut psi = vec![0.0; arms];
    let mut phi = want_phi.then(|| DMatrix::zeros(n, arms));

    match (estimand, estimator) {
        (EstimandKind::Generalize, EstimatorKind::OutcomeModel) => {
            for a in 0..arms {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += inputs.w(i) * nf.mu[(i, a)];
                    if let Some(phi) = phi.as_mut() {
                        phi[(i, a)] = nf.mu[(i, a)];
                    }
                }
                psi[a] = acc / wsum;
            }
        }
        (EstimandKind::Transport, EstimatorKind::OutcomeModel) => {
            let q0 = inputs.external_fraction()?;
            for a in 0..arms {
                let mut acc = 0.0;
                for i in 0..n {
                    if !d.selected(i) {
                        acc += inputs.w(i) * nf.mu[(i, a)];
                    }
                    if let Some(phi) = phi.as_mut() {
                        phi[(i, a)] = if d.selected(i) { 0.0 } else { nf.mu[(i, a)] / q0 };
                    }
                }
                psi[a] = acc / (wsum * q0);
            }
        }
        (_, EstimatorKind::InverseSelection) => {
            let q0 = match estimand {
                EstimandKind::Generalize => 1.0,
                EstimandKind::Transport => inputs.external_fraction()?,
            };
            for a in 0..arms {
                let weight = |i: usize| match estimand {
                    EstimandKind::Generalize => inputs.gen_weight(i, a),
                    EstimandKind::Transport => inputs.transport_weight(i, a),
                };
                if hajek {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for i in 0..n {
                        let w = weight(i);
                        if w > 0.0 {
                            num += inputs.w(i) * w * d.outcome(i).unwrap();
                            den += inputs.w(i) * w;
                        }
                    }
                    if den == 0.0 {
                        return Err(Error::ZeroWeightSum { arm: a });
                    }
                    psi[a] = num / den;
                    if let Some(phi) = phi.as_mut() {
                        let wbar = den / n as f64;
                        for i in 0..n {
                            let w = weight(i);
                            let resid = if w > 0.0 {
                                w * (d.outcome(i).unwrap() - psi[a]) / wbar
                            } else {
                                0.0
                            };
                            phi[(i, a)] = psi[a] + resid;
                        }
                    }
                } else {
                    let mut acc = 0.0;
                    for i in 0..n {
                        let w = weight(i);
                        if w > 0.0 {
                            let term = w * d.outcome(i).unwrap() / q0;
                            acc += inputs.w(i) * term;
                            if let Some(phi) = phi.as_mut() {
                                phi[(i, a)] = term;
                            }
                        }
                    }
                    psi[a] = acc / wsum;
                }
            }
        }
        (_, EstimatorKind::Augmented) => {
            let q0 = match estimand {
                EstimandKind::Generalize => 1.0,
                EstimandKind::Transport => inputs.external_fraction()?,
            };
            for a in 0..arms {
                let weight = |i: usize| match estimand {
                    EstimandKind::Generalize => inputs.gen_weight(i, a),
                    EstimandKind::Transport => inputs.transport_weight(i, a),
                };
                // Outcome-model anchor per row: mu everywhere for
                // generalization, (1-S) mu for transport.
                let anchor = |i: usize| match estimand {
                    EstimandKind::Generalize => nf.mu[(i, a)],
                    EstimandKind::Transport => {
                        if d.selected(i) {
                            0.0
                        } else {
                            nf.mu[(i, a)]
                        }
                    }
                };
                if hajek {
                    // Anchor ratio (already Hajek-style for transport) plus
                    // the residual term normalized by its realized weight sum.
                    let mut anchor_num = 0.0;
                    let mut anchor_den = 0.0;
                    let mut resid_num = 0.0;
                    let mut resid_den = 0.0;
                    for i in 0..n {
                        let vi = inputs.w(i);
                        match estimand {
                            EstimandKind::Generalize => {
                                anchor_num += vi * anchor(i);
                                anchor_den += vi;
                            }
                            EstimandKind::Transport => {
                                if !d.selected(i) {
                                    anchor_num += vi * anchor(i);
                                    anchor_den += vi;
                                }
                            }
                        }
                        let w = weight(i);
                        if w > 0.0 {
                            resid_num += vi * w * (d.outcome(i).unwrap() - nf.mu[(i, a)]);
                            resid_den += vi * w;
                        }
                    }
                    if resid_den == 0.0 {
                        return Err(Error::ZeroWeightSum { arm: a });
                    }
                    let anchor_mean = anchor_num / anchor_den;
                    let resid_mean = resid_num / resid_den;
                    psi[a] = anchor_mean + resid_mean;
                    if let Some(phi) = phi.as_mut() {
                        let wbar = resid_den / n as f64;
                        for i in 0..n {
                            let w = weight(i);
                            let resid_part = if w > 0.0 {
                                w * (d.outcome(i).unwrap() - nf.mu[(i, a)] - resid_mean) / wbar
                            } else {
                                0.0
                            };
                            let anchor_part = match estimand {
                                EstimandKind::Generalize => nf.mu[(i, a)] - anchor_mean,
                                EstimandKind::Transport => {
                                    let u = if d.selected(i) { 0.0 } else { nf.mu[(i, a)] };
                                    let s0 = if d.selected(i) { 0.0 } else { 1.0 };
                                    (u - anchor_mean * s0) / q0
                                }
                            };
                            phi[(i, a)] = psi[a] + anchor_part + resid_part;
                        }
                    }
                } else {
                    let mut acc = 0.0;
                    for i in 0..n {
                        let w = weight(i);
                        let resid = if w > 0.0 {
                            w * (d.outcome(i).unwrap() - nf.mu[(i, a)])
                        } else {
                            0.0
                        };
                        let term = (anchor(i) + resid) / q0;
                        acc += inputs.w(i) * term;
                        if let Some(phi) = phi.as_mut() {
                            phi[(i, a)] = term;
                        }
                    }
                    psi[a] = acc / wsum;
                }
            }
        }
    }
    Ok((psi, phi))
}

fn assemble_result(
    d: &Dataset,
    psi: Vec<f64>,
    phi: DMatrix<f64>,
    estimand: EstimandKind,
    estimator: EstimatorKind,
    hajek: bool,
    ci_level: f64,
) -> (EstimateResult, InfluenceMatrix) {
    let n = d.n();
    let arms = d.n_arms();
    let with_se = estimator == EstimatorKind::Augmented;
    let z = z_quantile(ci_level);

    let se_psi = with_se.then(|| {
        (0..arms)
            .map(|a| (sample_variance(phi.column(a).iter().copied()) / n as f64).sqrt())
            .collect::<Vec<f64>>()
    });

    let mut contrasts = Vec::new();
    for a in 1..arms {
        for a_prime in 0..a {
            let tau = psi[a] - psi[a_prime];
            let (se, ci_lo, ci_hi) = if with_se {
                let diff = (0..n).map(|i| phi[(i, a)] - phi[(i, a_prime)]);
                let se = (sample_variance(diff) / n as f64).sqrt();
                (Some(se), Some(tau - z * se), Some(tau + z * se))
            } else {
                (None, None, None)
            };
            contrasts.push(ContrastResult {
                a,
                a_prime,
                tau,
                se,
                ci_lo,
                ci_hi,
            });
        }
    }

    let result = EstimateResult {
        psi,
        se_psi,
        contrasts,
        ci_level,
        n,
        n_study: d.n_study(),
        n_external: d.n_external(),
        hajek,
        estimator,
        estimand,
    };
    let im = InfluenceMatrix {
        phi,
        estimand,
        estimator,
        hajek,
    };
    (result, im)
}

/// Outcome-modeling estimator. Standard errors require the bootstrap.
pub fn estimate_om(
    d: &Dataset,
    nf: &NuisanceFits,
    estimand: EstimandKind,
) -> Result<(EstimateResult, InfluenceMatrix)> {
    let (psi, phi) = compute(d, nf, estimand, EstimatorKind::OutcomeModel, false, None, true)?;
    Ok(assemble_result(
        d,
        psi,
        phi.unwrap(),
        estimand,
        EstimatorKind::OutcomeModel,
        false,
        0.95,
    ))
}

/// Inverse-selection-weighting estimator, Horvitz-Thompson by default or
/// Hajek-normalized. Standard errors require the bootstrap.
pub fn estimate_isw(
    d: &Dataset,
    nf: &NuisanceFits,
    estimand: EstimandKind,
    hajek: bool,
) -> Result<(EstimateResult, InfluenceMatrix)> {
    let (psi, phi) = compute(
        d,
        nf,
        estimand,
        EstimatorKind::InverseSelection,
        hajek,
        None,
        true,
    )?;
    Ok(assemble_result(
        d,
        psi,
        phi.unwrap(),
        estimand,
        EstimatorKind::InverseSelection,
        hajek,
        0.95,
    ))
}

/// Augmented (doubly robust) estimator with influence-function standard
/// errors and normal-quantile confidence intervals.
pub fn estimate_aisw(
    d: &Dataset,
    nf: &NuisanceFits,
    estimand: EstimandKind,
    hajek: bool,
    ci_level: f64,
) -> Result<(EstimateResult, InfluenceMatrix)> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("ci_level {ci_level} outside (0, 1)"),
        });
    }
    let (psi, phi) = compute(d, nf, estimand, EstimatorKind::Augmented, hajek, None, true)?;
    Ok(assemble_result(
        d,
        psi,
        phi.unwrap(),
        estimand,
        EstimatorKind::Augmented,
        hajek,
        ci_level,
    ))
}

/// Weighted point estimates for bootstrap statistics; no influence matrix.
pub fn point_estimates(
    d: &Dataset,
    nf: &NuisanceFits,
    estimand: EstimandKind,
    estimator: EstimatorKind,
    hajek: bool,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    compute(d, nf, estimand, estimator, hajek, weights, false).map(|(psi, _)| psi)
}

/// Contrast between two arms from an influence matrix. The analytic standard
/// error is reported for AISW; OM and ISW contrasts return `None` there
/// (bootstrap required).
pub fn contrast(
    im: &InfluenceMatrix,
    a: usize,
    a_prime: usize,
    ci_level: f64,
) -> Result<ContrastResult> {
    let arms = im.n_arms();
    if a >= arms {
        return Err(Error::ArmOutOfRange { arm: a, n_arms: arms });
    }
    if a_prime >= arms {
        return Err(Error::ArmOutOfRange {
            arm: a_prime,
            n_arms: arms,
        });
    }
    let n = im.n();
    let diff = (0..n).map(|i| im.phi[(i, a)] - im.phi[(i, a_prime)]);
    let tau = diff.clone().sum::<f64>() / n as f64;
    if im.estimator == EstimatorKind::Augmented {
        let se = (sample_variance(diff) / n as f64).sqrt();
        let z = z_quantile(ci_level);
        Ok(ContrastResult {
            a,
            a_prime,
            tau,
            se: Some(se),
            ci_lo: Some(tau - z * se),
            ci_hi: Some(tau + z * se),
        })
    } else {
        Ok(ContrastResult {
            a,
            a_prime,
            tau,
            se: None,
            ci_lo: None,
            ci_hi: None,
        })
    }
}
