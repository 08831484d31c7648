//! Data-generating processes and a replication harness.
//!
//! Four scenarios crossed over (linear, nonlinear) selection and outcome
//! models: covariates are iid U[-1, 1], treatment is randomized with a fixed
//! probability independent of the covariates, selection follows a logistic
//! model in the covariates, and outcomes are a baseline surface plus a
//! heterogeneous effect times treatment plus standard normal noise. Because
//! selection depends on effect-modifying covariates, the study-sample effect
//! differs from the population effect, which is what the reweighting
//! estimators are supposed to repair.
//!
//! The harness replays each scenario R times, runs the requested estimators,
//! and reports bias, RMSE, CI coverage, and attributable runtime against the
//! analytic population effect. Replications draw independent RNG streams
//! from (master seed, scenario, replicate), so reports are identical across
//! worker counts.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_aisw, estimate_isw, estimate_om, z_quantile, EstimandKind,
};
use crate::nuisance::{fit_nuisances_timed, make_folds, NuisanceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormKind {
    Linear,
    Nonlinear,
}

/// Sparse function of the covariates: intercept, linear, squared, and cubed
/// terms, pairwise interactions, and step terms `coef * 1{x_j > cutoff}`.
/// Column indices are zero-based.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PolyFn {
    pub intercept: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, f64)>,
    pub cubic: Vec<(usize, f64)>,
    pub interactions: Vec<(usize, usize, f64)>,
    /// (column, cutoff, coefficient) step terms.
    pub thresholds: Vec<(usize, f64, f64)>,
}

impl PolyFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.intercept;
        for &(j, c) in &self.linear {
            v += c * x[j];
        }
        for &(j, c) in &self.quadratic {
            v += c * x[j] * x[j];
        }
        for &(j, c) in &self.cubic {
            v += c * x[j] * x[j] * x[j];
        }
        for &(j, l, c) in &self.interactions {
            v += c * x[j] * x[l];
        }
        for &(j, cutoff, c) in &self.thresholds {
            if x[j] > cutoff {
                v += c;
            }
        }
        v
    }

    /// Exact expectation under X ~ U[-1,1]^p: odd monomials vanish,
    /// E[x_j^2] = 1/3, distinct-coordinate interactions vanish, and a step
    /// at `t` has mass (1 - t) / 2.
    pub fn mean_under_uniform_cube(&self) -> f64 {
        let mut v = self.intercept;
        for &(_, c) in &self.quadratic {
            v += c / 3.0;
        }
        for &(_, cutoff, c) in &self.thresholds {
            v += c * ((1.0 - cutoff.clamp(-1.0, 1.0)) / 2.0);
        }
        v
    }

    fn max_index(&self) -> Option<usize> {
        self.linear
            .iter()
            .map(|&(j, _)| j)
            .chain(self.quadratic.iter().map(|&(j, _)| j))
            .chain(self.cubic.iter().map(|&(j, _)| j))
            .chain(self.interactions.iter().flat_map(|&(j, l, _)| [j, l]))
            .chain(self.thresholds.iter().map(|&(j, _, _)| j))
            .max()
    }
}

/// One simulation scenario: forms, sample size, and the coefficient sets
/// actually used (populated with documented defaults by the constructor,
/// overridable field by field).
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSpec {
    pub selection_form: FormKind,
    pub outcome_form: FormKind,
    pub n: usize,
    pub p: usize,
    pub treat_prob: f64,
    pub selection: PolyFn,
    pub baseline: PolyFn,
    pub cate: PolyFn,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Builds a scenario with the default coefficient sets:
    /// selection logit -0.5 + x1 + x2, with the nonlinear form adding a
    /// sharp low-selection pocket, -4 + 4 * 1{x3 > -0.5};
    /// baseline sum of all covariates (+ x1^2 + x2 x3 when nonlinear);
    /// effect 1 + x1 + x2 (+ 3 x1^2 when nonlinear).
    ///
    /// The nonlinear terms are arranged so each misspecification is
    /// individually material: a linear-logit selection fit cannot track the
    /// mid-band selection shape, which distorts inverse weights where the
    /// effect varies, and a linear outcome model misses the x1 curvature of
    /// the effect under x1-shifted selection. The two error functions live
    /// on different coordinates, so their product stays near zero and the
    /// doubly-misspecified scenario remains informative about augmentation.
    pub fn new(selection_form: FormKind, outcome_form: FormKind, n: usize, seed: u64) -> Self {
        let p = 10;
        let mut selection = PolyFn {
            intercept: -0.5,
            linear: vec![(0, 1.0), (1, 1.0)],
            ..PolyFn::default()
        };
        if selection_form == FormKind::Nonlinear {
            selection.intercept = -4.5;
            selection.thresholds = vec![(1, -0.6, 4.0), (1, 0.6, -4.0)];
        }
        let mut baseline = PolyFn {
            linear: (0..p).map(|j| (j, 1.0)).collect(),
            ..PolyFn::default()
        };
        let mut cate = PolyFn {
            intercept: 1.0,
            linear: vec![(0, 1.0), (1, 1.0)],
            ..PolyFn::default()
        };
        if outcome_form == FormKind::Nonlinear {
            baseline.quadratic = vec![(0, 1.0)];
            baseline.interactions = vec![(1, 2, 1.0)];
            cate.quadratic = vec![(0, 3.0)];
        }
        ScenarioSpec {
            selection_form,
            outcome_form,
            n,
            p,
            treat_prob: 0.5,
            selection,
            baseline,
            cate,
            seed,
        }
    }

    /// Scenario from a two-letter code: selection then outcome,
    /// l = linear, n = nonlinear (e.g. "ln" is linear selection,
    /// nonlinear outcome).
    pub fn from_code(code: &str, n: usize, seed: u64) -> Result<Self> {
        let form = |c: char| match c {
            'l' => Ok(FormKind::Linear),
            'n' => Ok(FormKind::Nonlinear),
            _ => Err(Error::InvalidConfig {
                reason: format!("unknown scenario code `{code}`"),
            }),
        };
        let mut chars = code.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(s), Some(o), None) => Ok(ScenarioSpec::new(form(s)?, form(o)?, n, seed)),
            _ => Err(Error::InvalidConfig {
                reason: format!("unknown scenario code `{code}`"),
            }),
        }
    }

    pub fn code(&self) -> String {
        let c = |f: FormKind| match f {
            FormKind::Linear => 'l',
            FormKind::Nonlinear => 'n',
        };
        format!("{}{}", c(self.selection_form), c(self.outcome_form))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return Err(Error::InvalidConfig {
                reason: format!("treat_prob {} outside (0, 1)", self.treat_prob),
            });
        }
        if self.p == 0 || self.n < 2 {
            return Err(Error::InvalidConfig {
                reason: "scenario needs p >= 1 and n >= 2".into(),
            });
        }
        for f in [&self.selection, &self.baseline, &self.cate] {
            if let Some(max) = f.max_index() {
                if max >= self.p {
                    return Err(Error::InvalidConfig {
                        reason: format!("coefficient index {max} exceeds p = {}", self.p),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Oracle bookkeeping kept alongside a generated dataset.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// Per-row effect tau(X_i).
    pub tau: Vec<f64>,
    /// Per-row potential outcomes (y0, y1), including unselected rows.
    pub potential: Vec<(f64, f64)>,
    /// Analytic E[tau(X)] under the covariate distribution.
    pub pate: f64,
}

fn expit(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Analytic population average effect for the scenario.
pub fn true_pate(spec: &ScenarioSpec) -> f64 {
    spec.cate.mean_under_uniform_cube()
}

/// Draws one dataset: X ~ U[-1,1]^p, A ~ Bernoulli(treat_prob) independent
/// of X, S ~ Bernoulli(expit(g(X))), Y = m(X) + tau(X) A + N(0,1), with A
/// and Y recorded only where S = 1.
pub fn generate(spec: &ScenarioSpec) -> Result<(Dataset, TruthRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let p = spec.p;
    let mut x = DMatrix::zeros(n, p);
    let mut s = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut potential = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            row[j] = rng.random::<f64>() * 2.0 - 1.0;
            x[(i, j)] = row[j];
        }
        let arm = usize::from(rng.random::<f64>() < spec.treat_prob);
        let selected = rng.random::<f64>() < expit(spec.selection.eval(&row));
        let eps: f64 = StandardNormal.sample(&mut rng);
        let t = spec.cate.eval(&row);
        let m = spec.baseline.eval(&row);
        tau.push(t);
        potential.push((m + eps, m + t + eps));
        s.push(selected);
        if selected {
            a.push(Some(arm));
            y.push(Some(m + t * arm as f64 + eps));
        } else {
            a.push(None);
            y.push(None);
        }
    }
    let d = Dataset::new(x, s, a, y, Some(2))?;
    Ok((
        d,
        TruthRecord {
            tau,
            potential,
            pate: true_pate(spec),
        },
    ))
}

/// Difference of arm means among study rows with the unequal-variance
/// two-sample normal interval.
#[derive(Debug, Clone, Serialize)]
pub struct NaiveSate {
    pub tau: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn naive_sate(d: &Dataset, a: usize, a_prime: usize, ci_level: f64) -> Result<NaiveSate> {
    let collect = |arm: usize| -> Vec<f64> {
        (0..d.n())
            .filter(|&i| d.selected(i) && d.arm(i) == Some(arm))
            .map(|i| d.outcome(i).unwrap())
            .collect()
    };
    let ya = collect(a);
    let yb = collect(a_prime);
    if ya.is_empty() || yb.is_empty() {
        return Err(Error::EmptyArm {
            arm: if ya.is_empty() { a } else { a_prime },
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| {
        if v.len() < 2 {
            0.0
        } else {
            v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
        }
    };
    let (ma, mb) = (mean(&ya), mean(&yb));
    let tau = ma - mb;
    let se = (var(&ya, ma) / ya.len() as f64 + var(&yb, mb) / yb.len() as f64).sqrt();
    let z = z_quantile(ci_level);
    Ok(NaiveSate {
        tau,
        se,
        ci_lo: tau - z * se,
        ci_hi: tau + z * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StudyEstimator {
    #[serde(rename = "naive")]
    NaiveSate,
    #[serde(rename = "om")]
    Om,
    #[serde(rename = "isw")]
    Isw,
    #[serde(rename = "isw-hajek")]
    IswHajek,
    #[serde(rename = "aisw")]
    Aisw,
    #[serde(rename = "aisw-hajek")]
    AiswHajek,
}

impl StudyEstimator {
    pub const ALL: [StudyEstimator; 6] = [
        StudyEstimator::NaiveSate,
        StudyEstimator::Om,
        StudyEstimator::Isw,
        StudyEstimator::IswHajek,
        StudyEstimator::Aisw,
        StudyEstimator::AiswHajek,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            StudyEstimator::NaiveSate => "naive",
            StudyEstimator::Om => "om",
            StudyEstimator::Isw => "isw",
            StudyEstimator::IswHajek => "isw-hajek",
            StudyEstimator::Aisw => "aisw",
            StudyEstimator::AiswHajek => "aisw-hajek",
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.label() == label)
            .ok_or_else(|| Error::InvalidConfig {
                reason: format!("unknown estimator `{label}`"),
            })
    }

    fn needs_nuisances(&self) -> bool {
        !matches!(self, StudyEstimator::NaiveSate)
    }
}

/// Harness settings beyond the scenario specs themselves.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub nuisance: NuisanceConfig,
    pub ci_level: f64,
    /// Record wall-clock runtimes in the report. Off by default so that
    /// report artifacts are byte-identical across reruns.
    pub record_timings: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            nuisance: NuisanceConfig::default(),
            ci_level: 0.95,
            record_timings: false,
        }
    }
}

/// Aggregated metrics for one (scenario, estimator) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub scenario: String,
    pub estimator: &'static str,
    pub true_pate: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Fraction of replications whose CI covered the true effect; absent for
    /// estimators without analytic intervals (OM/ISW need the bootstrap).
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_runtime_s: Option<f64>,
    pub n_used: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub cells: Vec<CellReport>,
    pub replications: usize,
    pub master_seed: u64,
    pub scenarios: Vec<String>,
}

impl SimulationReport {
    /// Plot-ready long format: scenario, estimator, metric, value.
    pub fn long_table(&self) -> String {
        let mut out = String::from("scenario\testimator\tmetric\tvalue\n");
        for cell in &self.cells {
            let mut push = |metric: &str, value: f64| {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    cell.scenario, cell.estimator, metric, value
                ));
            };
            push("bias", cell.bias);
            push("rmse", cell.rmse);
            if let Some(cov) = cell.coverage {
                push("coverage", cov);
            }
            if let Some(rt) = cell.mean_runtime_s {
                push("runtime_s", rt);
            }
        }
        out
    }
}

struct RepOutcome {
    scenario: usize,
    /// Per estimator: point estimate, optional CI, runtime seconds.
    results: Vec<Option<(f64, Option<(f64, f64)>, f64)>>,
    failed: bool,
}

/// Runs the full replication study. Estimates target the contrast between
/// arms 1 and 0 under the generalization estimand.
pub fn run_study(
    specs: &[ScenarioSpec],
    estimators: &[StudyEstimator],
    replications: usize,
    master_seed: u64,
    cfg: &StudyConfig,
) -> Result<SimulationReport> {
    if specs.is_empty() || estimators.is_empty() || replications == 0 {
        return Err(Error::InvalidConfig {
            reason: "run_study needs scenarios, estimators, and R >= 1".into(),
        });
    }
    for spec in specs {
        spec.validate()?;
    }
    let need_nuisances = estimators.iter().any(StudyEstimator::needs_nuisances);

    let tasks: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..replications).map(move |r| (s, r)))
        .collect();

    let outcomes: Vec<RepOutcome> = tasks
        .par_iter()
        .map(|&(s_idx, rep)| {
            let mut stream = ChaCha8Rng::seed_from_u64(master_seed);
            stream.set_stream(((s_idx as u64) << 32) | rep as u64);
            let data_seed: u64 = stream.random();
            let nuisance_seed: u64 = stream.random();

            let mut spec = specs[s_idx].clone();
            spec.seed = data_seed;
            let generated = generate(&spec);
            let (d, _truth) = match generated {
                Ok(v) => v,
                Err(_) => {
                    return RepOutcome {
                        scenario: s_idx,
                        results: vec![None; estimators.len()],
                        failed: true,
                    }
                }
            };

            let nuisances = if need_nuisances {
                let mut ncfg = cfg.nuisance.clone();
                ncfg.seed = nuisance_seed;
                match make_folds(d.n(), ncfg.folds, nuisance_seed)
                    .and_then(|folds| fit_nuisances_timed(&d, &folds, &ncfg))
                {
                    Ok(v) => Some(v),
                    Err(_) => {
                        return RepOutcome {
                            scenario: s_idx,
                            results: vec![None; estimators.len()],
                            failed: true,
                        }
                    }
                }
            } else {
                None
            };

            let results = estimators
                .iter()
                .map(|est| {
                    let start = Instant::now();
                    let value = match est {
                        StudyEstimator::NaiveSate => naive_sate(&d, 1, 0, cfg.ci_level)
                            .ok()
                            .map(|n| (n.tau, Some((n.ci_lo, n.ci_hi)))),
                        _ => {
                            let (nf, _) = nuisances.as_ref().unwrap();
                            let hajek = matches!(
                                est,
                                StudyEstimator::IswHajek | StudyEstimator::AiswHajek
                            );
                            match est {
                                StudyEstimator::Om => estimate_om(&d, nf, EstimandKind::Generalize)
                                    .ok()
                                    .map(|(r, _)| (r.psi[1] - r.psi[0], None)),
                                StudyEstimator::Isw | StudyEstimator::IswHajek => {
                                    estimate_isw(&d, nf, EstimandKind::Generalize, hajek)
                                        .ok()
                                        .map(|(r, _)| (r.psi[1] - r.psi[0], None))
                                }
                                StudyEstimator::Aisw | StudyEstimator::AiswHajek => {
                                    estimate_aisw(
                                        &d,
                                        nf,
                                        EstimandKind::Generalize,
                                        hajek,
                                        cfg.ci_level,
                                    )
                                    .ok()
                                    .map(|(r, _)| {
                                        let c = &r.contrasts[0];
                                        debug_assert_eq!((c.a, c.a_prime), (1, 0));
                                        (c.tau, c.ci_lo.zip(c.ci_hi))
                                    })
                                }
                                StudyEstimator::NaiveSate => unreachable!(),
                            }
                        }
                    };
                    value.map(|(tau, ci)| {
                        let mut runtime = start.elapsed().as_secs_f64();
                        if let Some((_, timings)) = nuisances.as_ref() {
                            runtime += match est {
                                StudyEstimator::NaiveSate => 0.0,
                                StudyEstimator::Om => timings.mu_s,
                                StudyEstimator::Isw | StudyEstimator::IswHajek => {
                                    timings.pi_s + timings.rho_s
                                }
                                StudyEstimator::Aisw | StudyEstimator::AiswHajek => {
                                    timings.mu_s + timings.pi_s + timings.rho_s
                                }
                            };
                        }
                        (tau, ci, runtime)
                    })
                })
                .collect();
            RepOutcome {
                scenario: s_idx,
                results,
                failed: false,
            }
        })
        .collect();

    let mut cells = Vec::new();
    for (s_idx, spec) in specs.iter().enumerate() {
        let scenario_outcomes: Vec<&RepOutcome> =
            outcomes.iter().filter(|o| o.scenario == s_idx).collect();
        let failed = scenario_outcomes.iter().filter(|o| o.failed).count();
        if failed * 20 > replications {
            return Err(Error::TooManyFailures {
                failed,
                total: replications,
            });
        }
        let pate = true_pate(spec);
        for (e_idx, est) in estimators.iter().enumerate() {
            let mut estimates = Vec::new();
            let mut covered = 0usize;
            let mut with_ci = 0usize;
            let mut runtime_total = 0.0;
            for outcome in &scenario_outcomes {
                if let Some((tau, ci, runtime)) = &outcome.results[e_idx] {
                    estimates.push(*tau);
                    runtime_total += runtime;
                    if let Some((lo, hi)) = ci {
                        with_ci += 1;
                        if *lo <= pate && pate <= *hi {
                            covered += 1;
                        }
                    }
                }
            }
            let n_used = estimates.len();
            let bias = estimates.iter().sum::<f64>() / n_used as f64 - pate;
            let rmse = (estimates
                .iter()
                .map(|e| (e - pate) * (e - pate))
                .sum::<f64>()
                / n_used as f64)
                .sqrt();
            cells.push(CellReport {
                scenario: spec.code(),
                estimator: est.label(),
                true_pate: pate,
                bias,
                rmse,
                coverage: (with_ci > 0).then(|| covered as f64 / with_ci as f64),
                mean_runtime_s: cfg
                    .record_timings
                    .then(|| runtime_total / n_used.max(1) as f64),
                n_used,
                n_failed: replications - n_used,
            });
        }
    }
    Ok(SimulationReport {
        cells,
        replications,
        master_seed,
        scenarios: specs.iter().map(|s| s.code()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariates_stay_in_the_cube() {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 500, 7);
        let (d, _) = generate(&spec).unwrap();
        assert!(d.x().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn treatment_share_matches_probability() {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 5000, 21);
        let (d, _) = generate(&spec).unwrap();
        let study: Vec<usize> = (0..d.n()).filter(|&i| d.selected(i)).collect();
        let treated = study.iter().filter(|&&i| d.arm(i) == Some(1)).count();
        let share = treated as f64 / study.len() as f64;
        assert!((share - 0.5).abs() < 0.03, "treated share {share}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ScenarioSpec::new(FormKind::Nonlinear, FormKind::Nonlinear, 300, 99);
        let (d1, _) = generate(&spec).unwrap();
        let (d2, _) = generate(&spec).unwrap();
        assert_eq!(d1.x(), d2.x());
        for i in 0..d1.n() {
            assert_eq!(d1.selected(i), d2.selected(i));
            assert_eq!(d1.arm(i), d2.arm(i));
            assert_eq!(
                d1.outcome(i).map(f64::to_bits),
                d2.outcome(i).map(f64::to_bits)
            );
        }
    }

    #[test]
    fn analytic_pate_values() {
        // Constant effect.
        let mut spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 100, 0);
        spec.cate = PolyFn {
            intercept: 1.0,
            ..PolyFn::default()
        };
        assert_abs_diff_eq!(true_pate(&spec), 1.0);

        // Odd terms integrate out.
        spec.cate = PolyFn {
            intercept: 1.0,
            linear: vec![(0, 2.0)],
            ..PolyFn::default()
        };
        assert_abs_diff_eq!(true_pate(&spec), 1.0);

        // Squared terms contribute coefficient / 3.
        spec.cate = PolyFn {
            intercept: 1.0,
            quadratic: vec![(0, 3.0)],
            ..PolyFn::default()
        };
        assert_abs_diff_eq!(true_pate(&spec), 2.0);
    }

    #[test]
    fn default_scenarios_have_expected_pate() {
        let ll = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 100, 0);
        assert_abs_diff_eq!(true_pate(&ll), 1.0);
        // Nonlinear effect adds 3 x1^2, and E[x1^2] = 1/3.
        let nn = ScenarioSpec::new(FormKind::Nonlinear, FormKind::Nonlinear, 100, 0);
        assert_abs_diff_eq!(true_pate(&nn), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn threshold_terms_evaluate_and_average() {
        let f = PolyFn {
            intercept: -4.5,
            thresholds: vec![(0, -0.6, 4.0), (0, 0.6, -4.0)],
            ..PolyFn::default()
        };
        assert_abs_diff_eq!(f.eval(&[-0.9]), -4.5);
        assert_abs_diff_eq!(f.eval(&[0.0]), -0.5);
        assert_abs_diff_eq!(f.eval(&[0.9]), -4.5);
        // Mass above -0.6 is 0.8, above 0.6 is 0.2.
        assert_abs_diff_eq!(
            f.mean_under_uniform_cube(),
            -4.5 + 4.0 * 0.8 - 4.0 * 0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn scenario_codes_round_trip() {
        for code in ["ll", "ln", "nl", "nn"] {
            let spec = ScenarioSpec::from_code(code, 100, 0).unwrap();
            assert_eq!(spec.code(), code);
        }
        assert!(ScenarioSpec::from_code("xy", 100, 0).is_err());
    }

    #[test]
    fn naive_sate_two_sample_arithmetic() {
        let x = DMatrix::from_element(4, 1, 0.0);
        let d = Dataset::new(
            x,
            vec![true; 4],
            vec![Some(1), Some(1), Some(0), Some(0)],
            vec![Some(3.0), Some(5.0), Some(1.0), Some(2.0)],
            Some(2),
        )
        .unwrap();
        let n = naive_sate(&d, 1, 0, 0.95).unwrap();
        assert_abs_diff_eq!(n.tau, 2.5, epsilon = 1e-12);
        // var1 = 2, var0 = 0.5, se = sqrt(2/2 + 0.5/2) = sqrt(1.25).
        assert_abs_diff_eq!(n.se, 1.25f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn oracle_estimator_report_is_clean() {
        // Covariate-free selection means SATE = PATE: naive bias is pure
        // Monte Carlo noise, bounded by a multiple of its own standard error.
        let mut spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 800, 5);
        spec.selection = PolyFn {
            intercept: 0.5,
            ..PolyFn::default()
        };
        spec.cate = PolyFn {
            intercept: 1.0,
            ..PolyFn::default()
        };
        let replications = 150;
        let report = run_study(
            &[spec],
            &[StudyEstimator::NaiveSate],
            replications,
            11,
            &StudyConfig::default(),
        )
        .unwrap();
        let cell = &report.cells[0];
        let mc_se = ((cell.rmse * cell.rmse - cell.bias * cell.bias) / cell.n_used as f64).sqrt();
        assert!(
            cell.bias.abs() < 3.0 * mc_se,
            "bias {} vs mc se {mc_se}",
            cell.bias
        );
        assert!(cell.coverage.unwrap() > 0.85);
        assert!(cell.rmse * cell.rmse - cell.bias * cell.bias >= -1e-12);
    }

    #[test]
    fn study_report_is_deterministic_across_worker_counts() {
        let spec = ScenarioSpec::new(FormKind::Linear, FormKind::Linear, 200, 3);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                run_study(
                    std::slice::from_ref(&spec),
                    &[StudyEstimator::NaiveSate, StudyEstimator::Aisw],
                    8,
                    17,
                    &StudyConfig::default(),
                )
                .unwrap()
            })
        };
        let r1 = run(1);
        let r2 = run(4);
        let key = |r: &SimulationReport| {
            r.cells
                .iter()
                .map(|c| (c.bias.to_bits(), c.rmse.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&r1), key(&r2));
    }
}
