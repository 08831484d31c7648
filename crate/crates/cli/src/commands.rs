//! Subcommand implementations. Every artifact embeds a `schema_version`, the
//! resolved analysis config, and the seed, so reruns reproduce it exactly.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use causal_transport::analysis::{bootstrap_estimate, stat_labels, BootstrapPlan, EstimateConfig};
use causal_transport::bootstrap::{BootstrapKind, CiMethod};
use causal_transport::calibration::{
    calibrated_estimate, entropy_balance, MomentFeature, MomentTarget,
};
use causal_transport::data::{load_dataset, validate_selection_pattern, Dataset};
use causal_transport::diagnostics::{
    bias_decomposition, heterogeneity_test, overlap_report, smd_report, StratifiedDistribution,
    STABILITY_CAVEAT,
};
use causal_transport::error::{Error, Result};
use causal_transport::estimators::{
    estimate_aisw, estimate_isw, estimate_om, EstimandKind, EstimatorKind,
};
use causal_transport::nuisance::{fit_nuisances, make_folds, NuisanceFits};
use causal_transport::simulation::{run_study, ScenarioSpec, StudyConfig, StudyEstimator};

use crate::runcfg::{
    default_lambda_grid, parse_comma_list, parse_f64_list, pick, DataConfig, FileConfig,
    NuisanceSettings,
};
use crate::{CliDataArgs, CliNuisanceArgs};

const SCHEMA_VERSION: u32 = 1;

pub fn write_or_stdout(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = std::fs::File::create(p)?;
            f.write_all(content.as_bytes())?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn to_json_artifact<T: Serialize>(
    command: &str,
    seed: u64,
    config: Value,
    body: &T,
) -> Result<String> {
    let mut root = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
    });
    let body_value = serde_json::to_value(body).map_err(|e| Error::InvalidConfig {
        reason: format!("serialization failed: {e}"),
    })?;
    if let (Value::Object(root_map), Value::Object(body_map)) = (&mut root, body_value) {
        for (k, v) in body_map {
            root_map.insert(k, v);
        }
    }
    let text = serde_json::to_string_pretty(&root).map_err(|e| Error::InvalidConfig {
        reason: format!("serialization failed: {e}"),
    })?;
    Ok(text + "\n")
}

fn resolve_data(args: &CliDataArgs) -> Result<(DataConfig, Dataset)> {
    let file = FileConfig::load(args.config.as_deref())?;
    if !args.input.exists() {
        return Err(Error::InvalidConfig {
            reason: format!("input file {} does not exist", args.input.display()),
        });
    }
    let covariates = pick(
        args.covariates.as_deref().map(parse_comma_list),
        file.covariates.clone(),
        Vec::new(),
    );
    if covariates.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "no covariates given (flag --covariates or config key `covariates`)".into(),
        });
    }
    let required = |flag: &Option<String>, file_v: &Option<String>, name: &str| -> Result<String> {
        let value = pick(flag.clone(), file_v.clone(), String::new());
        if value.is_empty() {
            return Err(Error::InvalidConfig {
                reason: format!("missing column role `{name}`"),
            });
        }
        Ok(value)
    };
    let treatment = required(&args.treatment, &file.treatment, "treatment")?;
    let outcome = required(&args.outcome, &file.outcome, "outcome")?;
    let selection = required(&args.selection, &file.selection, "selection")?;
    let delimiter = pick(args.delimiter, file.delimiter, ',');
    if !delimiter.is_ascii() {
        return Err(Error::InvalidConfig {
            reason: format!("delimiter `{delimiter}` must be a single ASCII character"),
        });
    }
    let arms = args.arms.or(file.arms);
    let cfg = DataConfig {
        input: args.input.display().to_string(),
        covariates,
        treatment,
        outcome,
        selection,
        delimiter,
        arms,
    };
    let dataset = load_dataset(&args.input, &cfg.schema(), delimiter as u8, arms)?;
    Ok((cfg, dataset))
}

fn resolve_nuisance(args: &CliNuisanceArgs, config_path: Option<&Path>) -> Result<NuisanceSettings> {
    let file = FileConfig::load(config_path)?;
    let lambda_grid = match &args.lambda_grid {
        Some(s) => parse_f64_list(s)?,
        None => file.lambda_grid.clone().unwrap_or_else(default_lambda_grid),
    };
    Ok(NuisanceSettings {
        folds: pick(args.folds, file.folds, 5),
        trim_lo: pick(args.trim_lo, file.trim_lo, 0.01),
        trim_hi: pick(args.trim_hi, file.trim_hi, 0.99),
        lambda_grid,
        cv_folds: pick(args.cv_folds, file.cv_folds, 5),
        seed: pick(args.seed, file.seed, 0),
    })
}

fn parse_estimator(s: &str) -> Result<EstimatorKind> {
    match s {
        "om" => Ok(EstimatorKind::OutcomeModel),
        "isw" => Ok(EstimatorKind::InverseSelection),
        "aisw" => Ok(EstimatorKind::Augmented),
        _ => Err(Error::InvalidConfig {
            reason: format!("unknown estimator `{s}` (om, isw, aisw)"),
        }),
    }
}

fn parse_estimand(s: &str) -> Result<EstimandKind> {
    match s {
        "generalize" => Ok(EstimandKind::Generalize),
        "transport" => Ok(EstimandKind::Transport),
        _ => Err(Error::InvalidConfig {
            reason: format!("unknown estimand `{s}` (generalize, transport)"),
        }),
    }
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

pub struct EstimateArgs {
    pub data: CliDataArgs,
    pub nuisance: CliNuisanceArgs,
    pub estimator: String,
    pub estimand: String,
    pub hajek: bool,
    pub ci_level: f64,
    pub boot: String,
    pub b: usize,
    pub ci: String,
    pub boot_fast: bool,
    pub boot_stratified: bool,
    pub out: Option<PathBuf>,
    pub audit: Option<PathBuf>,
}

#[derive(Serialize)]
struct ComponentInterval {
    component: String,
    estimate: f64,
    se: f64,
    ci_lo: f64,
    ci_hi: f64,
}

#[derive(Serialize)]
struct BootstrapSection {
    kind: &'static str,
    replicates: usize,
    refit: bool,
    stratified: bool,
    ci_method: &'static str,
    dropped: usize,
    components: Vec<ComponentInterval>,
}

#[derive(Serialize)]
struct EstimateBody {
    estimate: causal_transport::EstimateResult,
    lambdas: Value,
    validation: causal_transport::data::ValidationReport,
    ignored_cells: causal_transport::data::LoadWarnings,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapSection>,
    caveats: Vec<String>,
}

/// Human-readable summary printed to stderr; the JSON artifact is the
/// machine-readable output.
fn render_estimate_table(
    result: &causal_transport::EstimateResult,
    boot: Option<&BootstrapSection>,
) -> String {
    let estimator = match result.estimator {
        EstimatorKind::OutcomeModel => "OM",
        EstimatorKind::InverseSelection => "ISW",
        EstimatorKind::Augmented => "AISW",
    };
    let estimand = match result.estimand {
        EstimandKind::Generalize => "generalize",
        EstimandKind::Transport => "transport",
    };
    let mut out = format!(
        "{estimator}{} / {estimand}  (n = {}, study {}, external {})\n",
        if result.hajek { " (Hajek)" } else { "" },
        result.n,
        result.n_study,
        result.n_external
    );
    out.push_str(&format!("{:<12}{:>12}{:>12}\n", "arm", "mean", "se"));
    for (a, psi) in result.psi.iter().enumerate() {
        let se = result
            .se_psi
            .as_ref()
            .map(|se| format!("{:.4}", se[a]))
            .or_else(|| boot.map(|b| format!("{:.4}*", b.components[a].se)))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!("{:<12}{:>12.4}{:>12}\n", a, psi, se));
    }
    out.push_str(&format!(
        "{:<12}{:>12}{:>12}{:>24}\n",
        "contrast", "tau", "se", format!("{:.0}% ci", result.ci_level * 100.0)
    ));
    for (idx, c) in result.contrasts.iter().enumerate() {
        let boot_c = boot.map(|b| &b.components[result.psi.len() + idx]);
        let se = c
            .se
            .map(|v| format!("{v:.4}"))
            .or_else(|| boot_c.map(|b| format!("{:.4}*", b.se)))
            .unwrap_or_else(|| "-".to_string());
        let ci = c
            .ci_lo
            .zip(c.ci_hi)
            .map(|(lo, hi)| format!("[{lo:.4}, {hi:.4}]"))
            .or_else(|| boot_c.map(|b| format!("[{:.4}, {:.4}]*", b.ci_lo, b.ci_hi)))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<12}{:>12.4}{:>12}{:>24}\n",
            format!("{} - {}", c.a, c.a_prime),
            c.tau,
            se,
            ci
        ));
    }
    if boot.is_some() {
        out.push_str("* bootstrap\n");
    }
    out
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let (data_cfg, dataset) = resolve_data(&args.data)?;
    let settings = resolve_nuisance(&args.nuisance, args.data.config.as_deref())?;
    let estimator = parse_estimator(&args.estimator)?;
    let estimand = parse_estimand(&args.estimand)?;
    let boot_kind = match args.boot.as_str() {
        "none" => None,
        "np" => Some(BootstrapKind::Nonparametric),
        "bayes" => Some(BootstrapKind::Bayesian),
        other => {
            return Err(Error::InvalidConfig {
                reason: format!("unknown bootstrap `{other}` (none, np, bayes)"),
            })
        }
    };
    let ci_method = match args.ci.as_str() {
        "percentile" => CiMethod::Percentile,
        "normal" => CiMethod::Normal,
        other => {
            return Err(Error::InvalidConfig {
                reason: format!("unknown ci method `{other}` (percentile, normal)"),
            })
        }
    };

    let cfg = EstimateConfig {
        estimand,
        estimator,
        hajek: args.hajek,
        ci_level: args.ci_level,
        nuisance: settings.to_config()?,
        bootstrap: boot_kind.map(|kind| BootstrapPlan {
            spec: causal_transport::bootstrap::BootstrapSpec {
                kind,
                b: args.b,
                seed: settings.seed,
                ci_method,
                ci_level: args.ci_level,
                stratified: args.boot_stratified,
            },
            refit: !args.boot_fast,
        }),
    };

    let folds = make_folds(dataset.n(), cfg.nuisance.folds, cfg.nuisance.seed)?;
    let nf = fit_nuisances(&dataset, &folds, &cfg.nuisance)?;
    let (result, _influence) = match estimator {
        EstimatorKind::OutcomeModel => estimate_om(&dataset, &nf, estimand)?,
        EstimatorKind::InverseSelection => estimate_isw(&dataset, &nf, estimand, args.hajek)?,
        EstimatorKind::Augmented => {
            estimate_aisw(&dataset, &nf, estimand, args.hajek, args.ci_level)?
        }
    };
    let bootstrap = match &cfg.bootstrap {
        Some(plan) => {
            let br = bootstrap_estimate(&dataset, &nf, &cfg, plan)?;
            let labels = stat_labels(dataset.n_arms());
            let components = labels
                .into_iter()
                .enumerate()
                .map(|(j, component)| ComponentInterval {
                    component,
                    estimate: br.estimate[j],
                    se: br.se[j],
                    ci_lo: br.ci[j].0,
                    ci_hi: br.ci[j].1,
                })
                .collect();
            Some(BootstrapSection {
                kind: match plan.spec.kind {
                    BootstrapKind::Nonparametric => "nonparametric",
                    BootstrapKind::Bayesian => "bayesian",
                },
                replicates: plan.spec.b,
                refit: plan.refit,
                stratified: plan.spec.stratified,
                ci_method: match plan.spec.ci_method {
                    CiMethod::Percentile => "percentile",
                    CiMethod::Normal => "normal",
                },
                dropped: br.dropped,
                components,
            })
        }
        None => None,
    };

    if let Some(audit) = &args.audit {
        nf.export(audit, data_cfg.delimiter as u8)?;
    }

    let mut caveats = Vec::new();
    if estimand == EstimandKind::Transport {
        caveats.push(STABILITY_CAVEAT.to_string());
    }
    if args.boot_fast && bootstrap.is_some() {
        caveats.push(
            "bootstrap held nuisances fixed; intervals ignore nuisance estimation \
             variability"
                .to_string(),
        );
    }

    eprint!("{}", render_estimate_table(&result, bootstrap.as_ref()));

    let body = EstimateBody {
        estimate: result,
        lambdas: json!({"mu": nf.lambda_mu, "pi": nf.lambda_pi, "rho": nf.lambda_rho}),
        validation: validate_selection_pattern(&dataset),
        ignored_cells: dataset.warnings(),
        bootstrap,
        caveats,
    };
    let config = json!({
        "data": data_cfg,
        "nuisance": settings,
        "estimator": args.estimator,
        "estimand": args.estimand,
        "hajek": args.hajek,
        "ci_level": args.ci_level,
        "boot": args.boot,
        "b": args.b,
        "ci": args.ci,
        "boot_fast": args.boot_fast,
        "boot_stratified": args.boot_stratified,
    });
    let text = to_json_artifact("estimate", settings.seed, config, &body)?;
    write_or_stdout(args.out.as_deref(), &text)
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

pub struct WeightsArgs {
    pub data: CliDataArgs,
    pub target_moments: Option<PathBuf>,
    pub targets: Vec<String>,
    pub tol: f64,
    pub max_iter: usize,
    pub design_probs: Option<String>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

fn parse_feature(name: &str, covariates: &[String]) -> Result<MomentFeature> {
    let (base, second) = match name.strip_suffix("^2") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let col = covariates
        .iter()
        .position(|c| c == base)
        .ok_or_else(|| Error::InvalidConfig {
            reason: format!("target feature `{name}` is not a declared covariate"),
        })?;
    Ok(if second {
        MomentFeature::SecondMoment(col)
    } else {
        MomentFeature::Mean(col)
    })
}

fn load_moment_targets(
    path: Option<&Path>,
    inline: &[String],
    covariates: &[String],
) -> Result<MomentTarget> {
    let mut features = Vec::new();
    let mut values = Vec::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line
                .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
                .filter(|p| !p.is_empty())
                .collect();
            if parts.len() != 2 {
                return Err(Error::InvalidConfig {
                    reason: format!("moment file line {}: expected `name value`", lineno + 1),
                });
            }
            if parts[0] == "feature" || parts[0] == "name" {
                continue; // optional header
            }
            features.push(parse_feature(parts[0], covariates)?);
            values.push(parts[1].parse::<f64>().map_err(|_| Error::InvalidConfig {
                reason: format!("moment file line {}: bad value `{}`", lineno + 1, parts[1]),
            })?);
        }
    }
    for spec in inline {
        let (name, value) = spec.split_once('=').ok_or_else(|| Error::InvalidConfig {
            reason: format!("inline target `{spec}` must look like name=value"),
        })?;
        features.push(parse_feature(name.trim(), covariates)?);
        values.push(value.trim().parse::<f64>().map_err(|_| Error::InvalidConfig {
            reason: format!("inline target `{spec}` has a bad value"),
        })?);
    }
    if features.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "no target moments given (--target-moments file or --target name=value)"
                .into(),
        });
    }
    Ok(MomentTarget { features, values })
}

#[derive(Serialize)]
struct MomentBalanceRow {
    feature: String,
    target: f64,
    source_mean: f64,
    weighted_mean: f64,
    gap: f64,
}

#[derive(Serialize)]
struct WeightsBody {
    converged: bool,
    iterations: usize,
    max_moment_violation: f64,
    dual: Vec<f64>,
    n_source: usize,
    /// Declared moments before and after weighting against their targets.
    moment_balance: Vec<MomentBalanceRow>,
    /// Full SMD report against the external stratum, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    smd: Option<causal_transport::diagnostics::BalanceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated_psi: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated_contrasts: Option<Vec<Value>>,
}

fn feature_name(feature: &MomentFeature, covariates: &[String]) -> String {
    match feature {
        MomentFeature::Mean(j) => covariates[*j].clone(),
        MomentFeature::SecondMoment(j) => format!("{}^2", covariates[*j]),
    }
}

fn feature_value(feature: &MomentFeature, x: &DMatrix<f64>, row: usize) -> f64 {
    match feature {
        MomentFeature::Mean(j) => x[(row, *j)],
        MomentFeature::SecondMoment(j) => x[(row, *j)] * x[(row, *j)],
    }
}

pub fn weights(args: WeightsArgs) -> Result<()> {
    let (data_cfg, dataset) = resolve_data(&args.data)?;
    let target = load_moment_targets(
        args.target_moments.as_deref(),
        &args.targets,
        &data_cfg.covariates,
    )?;

    // Source = study rows. The target sample may be entirely absent from the
    // file; only its moments are needed.
    let study: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.selected(i)).collect();
    let x_study = DMatrix::from_fn(study.len(), dataset.n_covariates(), |i, j| {
        dataset.x()[(study[i], j)]
    });
    let cw = entropy_balance(&x_study, &target, None, args.tol, args.max_iter)?;

    if let Some(out) = &args.out {
        let mut f = std::fs::File::create(out)?;
        writeln!(f, "row{}weight", data_cfg.delimiter)?;
        for (pos, &row) in study.iter().enumerate() {
            writeln!(f, "{row}{}{}", data_cfg.delimiter, cw.w[pos])?;
        }
    }

    let n_source = study.len() as f64;
    let moment_balance: Vec<MomentBalanceRow> = target
        .features
        .iter()
        .zip(&target.values)
        .map(|(feature, &tval)| {
            let mut source_mean = 0.0;
            let mut weighted_mean = 0.0;
            for pos in 0..study.len() {
                let v = feature_value(feature, &x_study, pos);
                source_mean += v / n_source;
                weighted_mean += cw.w[pos] * v;
            }
            MomentBalanceRow {
                feature: feature_name(feature, &data_cfg.covariates),
                target: tval,
                source_mean,
                weighted_mean,
                gap: weighted_mean - tval,
            }
        })
        .collect();

    let smd = if dataset.n_external() > 0 {
        Some(smd_report(&dataset, Some(&cw.w))?)
    } else {
        None
    };

    let (calibrated_psi, calibrated_contrasts) = match &args.design_probs {
        Some(spec) => {
            let probs = parse_f64_list(spec)?;
            if probs.len() != dataset.n_arms() {
                return Err(Error::InvalidConfig {
                    reason: format!(
                        "--design-probs needs {} entries, got {}",
                        dataset.n_arms(),
                        probs.len()
                    ),
                });
            }
            let pi = DMatrix::from_fn(study.len(), probs.len(), |_, a| probs[a]);
            let psi = calibrated_estimate(&dataset, &cw, &pi)?;
            let mut contrasts = Vec::new();
            for a in 1..psi.len() {
                for a_prime in 0..a {
                    contrasts.push(json!({
                        "a": a,
                        "a_prime": a_prime,
                        "tau": psi[a] - psi[a_prime],
                    }));
                }
            }
            (Some(psi), Some(contrasts))
        }
        None => (None, None),
    };

    let body = WeightsBody {
        converged: cw.converged,
        iterations: cw.iterations,
        max_moment_violation: cw.max_moment_violation,
        dual: cw.dual.clone(),
        n_source: study.len(),
        moment_balance,
        smd,
        calibrated_psi,
        calibrated_contrasts,
    };
    let config = json!({
        "data": data_cfg,
        "targets": target,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "design_probs": args.design_probs,
    });
    let text = to_json_artifact("weights", 0, config, &body)?;
    write_or_stdout(args.report.as_deref(), &text)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

pub struct DiagnoseArgs {
    pub data: CliDataArgs,
    pub nuisance: CliNuisanceArgs,
    pub het_arms: String,
    pub bins: usize,
    pub decompose_by: Option<String>,
    pub out: Option<PathBuf>,
    pub smd_table: Option<PathBuf>,
}

#[derive(Serialize)]
struct DecompositionSection {
    covariate: String,
    arms: (usize, usize),
    decomposition: causal_transport::diagnostics::BiasDecomposition,
    /// Strata present only in the target sample, whose effects cannot be
    /// estimated from study data (their tau is set to zero above).
    tau_unavailable: Vec<String>,
    unrepresented_target_share: f64,
}

#[derive(Serialize)]
struct DiagnoseBody {
    smd: causal_transport::diagnostics::BalanceReport,
    overlap: causal_transport::diagnostics::OverlapReport,
    heterogeneity: causal_transport::diagnostics::HeterogeneityTest,
    lambdas: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    decomposition: Option<DecompositionSection>,
    caveats: Vec<String>,
}

pub fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let (data_cfg, dataset) = resolve_data(&args.data)?;
    let settings = resolve_nuisance(&args.nuisance, args.data.config.as_deref())?;
    let arms_pair = parse_f64_list(&args.het_arms)?;
    if arms_pair.len() != 2 || arms_pair.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("--het-arms expects two arm indices, got `{}`", args.het_arms),
        });
    }
    let (a, a_prime) = (arms_pair[0] as usize, arms_pair[1] as usize);

    let ncfg = settings.to_config()?;
    let folds = make_folds(dataset.n(), ncfg.folds, ncfg.seed)?;
    let nf = fit_nuisances(&dataset, &folds, &ncfg)?;

    // Weighted SMDs under the fitted transport weights (1 - rho) / rho.
    let study: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.selected(i)).collect();
    let transport_weights: Vec<f64> = study
        .iter()
        .map(|&i| (1.0 - nf.rho[i]) / nf.rho[i])
        .collect();
    let smd = smd_report(&dataset, Some(&transport_weights))?;
    let overlap = overlap_report(&dataset, &nf, args.bins);
    let heterogeneity = heterogeneity_test(&dataset, &nf, a, a_prime)?;

    let decomposition = match &args.decompose_by {
        Some(name) => Some(decompose_by(&dataset, &nf, name, a, a_prime)?),
        None => None,
    };

    if let Some(table) = &args.smd_table {
        let mut out = String::from("covariate\tscheme\tsmd\n");
        for row in &smd.rows {
            if let Some(v) = row.smd_unweighted {
                out.push_str(&format!("{}\tunweighted\t{v}\n", row.covariate));
            }
            if let Some(v) = row.smd_weighted {
                out.push_str(&format!("{}\tisw\t{v}\n", row.covariate));
            }
        }
        std::fs::write(table, out)?;
    }

    let body = DiagnoseBody {
        smd,
        overlap,
        heterogeneity,
        lambdas: json!({"mu": nf.lambda_mu, "pi": nf.lambda_pi, "rho": nf.lambda_rho}),
        decomposition,
        caveats: vec![STABILITY_CAVEAT.to_string()],
    };
    let config = json!({
        "data": data_cfg,
        "nuisance": settings,
        "het_arms": [a, a_prime],
        "bins": args.bins,
        "decompose_by": args.decompose_by,
    });
    let text = to_json_artifact("diagnose", settings.seed, config, &body)?;
    write_or_stdout(args.out.as_deref(), &text)
}

fn decompose_by(
    d: &Dataset,
    nf: &NuisanceFits,
    covariate: &str,
    a: usize,
    a_prime: usize,
) -> Result<DecompositionSection> {
    let col = d
        .covariate_names()
        .iter()
        .position(|c| c == covariate)
        .ok_or_else(|| Error::InvalidConfig {
            reason: format!("unknown covariate `{covariate}`"),
        })?;
    let mut levels: Vec<f64> = (0..d.n()).map(|i| d.x()[(i, col)]).collect();
    levels.sort_by(|x, y| x.partial_cmp(y).unwrap());
    levels.dedup();
    if levels.len() > 64 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "covariate `{covariate}` has {} distinct values; decomposition needs a \
                 discrete column",
                levels.len()
            ),
        });
    }
    let n_study = d.n_study() as f64;
    let n_external = d.n_external() as f64;
    if n_external == 0.0 {
        return Err(Error::SingleStratum);
    }

    let mut p_study = vec![0.0; levels.len()];
    let mut p_target = vec![0.0; levels.len()];
    let mut tau_sum = vec![0.0; levels.len()];
    let mut tau_n = vec![0usize; levels.len()];
    for i in 0..d.n() {
        let idx = levels
            .iter()
            .position(|&v| v == d.x()[(i, col)])
            .expect("level present");
        if d.selected(i) {
            p_study[idx] += 1.0 / n_study;
            let y = d.outcome(i).unwrap();
            let arm = d.arm(i).unwrap();
            let mut phi = nf.mu[(i, a)] - nf.mu[(i, a_prime)];
            if arm == a {
                phi += (y - nf.mu[(i, a)]) / nf.pi[(i, a)];
            }
            if arm == a_prime {
                phi -= (y - nf.mu[(i, a_prime)]) / nf.pi[(i, a_prime)];
            }
            tau_sum[idx] += phi;
            tau_n[idx] += 1;
        } else {
            p_target[idx] += 1.0 / n_external;
        }
    }
    let mut tau = vec![0.0; levels.len()];
    let mut tau_unavailable = Vec::new();
    let mut unrepresented_share = 0.0;
    for idx in 0..levels.len() {
        if tau_n[idx] > 0 {
            tau[idx] = tau_sum[idx] / tau_n[idx] as f64;
        } else {
            tau_unavailable.push(format!("{}", levels[idx]));
            unrepresented_share += p_target[idx];
        }
    }
    let labels = levels.iter().map(|v| format!("{v}")).collect();
    let sd = StratifiedDistribution::new(labels, p_study, p_target, tau)?;
    Ok(DecompositionSection {
        covariate: covariate.to_string(),
        arms: (a, a_prime),
        decomposition: bias_decomposition(&sd),
        tau_unavailable,
        unrepresented_target_share: unrepresented_share,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub struct SimulateArgs {
    pub scenario: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Option<String>,
    pub out: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub timings: bool,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let codes: Vec<String> = if args.scenario == "all" {
        ["ll", "ln", "nl", "nn"].iter().map(|s| s.to_string()).collect()
    } else {
        vec![args.scenario.clone()]
    };
    let specs: Vec<ScenarioSpec> = codes
        .iter()
        .map(|c| ScenarioSpec::from_code(c, args.n, 0))
        .collect::<Result<_>>()?;
    let estimators: Vec<StudyEstimator> = match &args.estimators {
        Some(s) => parse_comma_list(s)
            .iter()
            .map(|l| StudyEstimator::parse(l))
            .collect::<Result<_>>()?,
        None => StudyEstimator::ALL.to_vec(),
    };
    let cfg = StudyConfig {
        record_timings: args.timings,
        ..StudyConfig::default()
    };
    let report = run_study(&specs, &estimators, args.reps, args.seed, &cfg)?;

    if let Some(table) = &args.table {
        std::fs::write(table, report.long_table())?;
    }
    let config = json!({
        "scenario": args.scenario,
        "n": args.n,
        "reps": args.reps,
        "estimators": estimators.iter().map(|e| e.label()).collect::<Vec<_>>(),
        "timings": args.timings,
    });
    let text = to_json_artifact("simulate", args.seed, config, &report)?;
    write_or_stdout(args.out.as_deref(), &text)
}
