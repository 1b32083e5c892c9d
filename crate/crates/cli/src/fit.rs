use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use svyglm::{
    build_model_frame, coefficient_table, fit_pseudo_mle, sandwich_variance, wald_test, Centering,
    ContrastMatrix, DesignBindings, DesignSummary, DfMode, DispersionRule, Error, Family,
    FamilyKind, FitConfig, FitResult, Link, LinkKind, ModelFrame, ModelSpec, SingletonPolicy,
    SmallSample, SurveyDataset, VarianceOptions,
};

use crate::report::{
    CoefInfo, DesignInfo, FitInfo, InferenceInfo, InputInfo, ModelInfo, Report, StratumInfo,
    TestInfo, SCHEMA,
};
use crate::{EXIT_NOT_CONVERGED, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SingletonArg {
    Error,
    Centered,
    Certainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmallSampleArg {
    Observations,
    Psus,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenteringArg {
    Weighted,
    Unweighted,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Read flags from a `key = value` file; command-line flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Sampling weight column (default: unit weights).
    #[arg(long, value_name = "COLUMN")]
    pub weight: Option<String>,
    /// Stratum column (default: one stratum).
    #[arg(long, value_name = "COLUMN")]
    pub strata: Option<String>,
    /// PSU column (default: each row is its own PSU).
    #[arg(long, value_name = "COLUMN")]
    pub psu: Option<String>,
    /// Per-stratum sampling fraction column.
    #[arg(long, value_name = "COLUMN")]
    pub fpc: Option<String>,
    /// Columns read as categorical even when numeric.
    #[arg(long, value_name = "COLUMN", value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Model formula, e.g. `y ~ 1 + x + C(g, ref=a) + center(age)`.
    #[arg(long, value_name = "FORMULA")]
    pub model: String,
    #[arg(long, default_value = "normal")]
    pub family: FamilyKind,
    /// Link function (default: the family's canonical link).
    #[arg(long)]
    pub link: Option<Link>,
    /// Negative-binomial `k` in `V(μ) = μ + kμ²`.
    #[arg(long, value_name = "K")]
    pub nb_k: Option<f64>,
    /// Estimate the negative-binomial `k` by Pearson moments.
    #[arg(long)]
    pub estimate_k: bool,
    /// Dispersion rule: fixed, moments or mle (default depends on the family).
    #[arg(long, value_name = "RULE")]
    pub dispersion: Option<DispersionRule>,
    /// Wald test: comma-separated coefficient or term labels, or `@FILE` with a
    /// contrast matrix. Repeatable.
    #[arg(long, value_name = "SPEC")]
    pub test: Vec<String>,
    /// Denominator df: design (PSUs − strata), weights (Σw − rank) or a number.
    #[arg(long, default_value = "design", value_name = "MODE")]
    pub df_mode: DfMode,
    /// Confidence level for coefficient intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = SingletonArg::Error)]
    pub singleton: SingletonArg,
    #[arg(long, value_enum, default_value_t = SmallSampleArg::Observations)]
    pub small_sample: SmallSampleArg,
    #[arg(long, value_enum, default_value_t = CenteringArg::Weighted)]
    pub centering: CenteringArg,
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Relative log-likelihood convergence threshold.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    pub out_format: OutFormat,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

fn variance_options(a: &FitArgs) -> VarianceOptions {
    VarianceOptions {
        singleton: match a.singleton {
            SingletonArg::Error => SingletonPolicy::Error,
            SingletonArg::Centered => SingletonPolicy::Centered,
            SingletonArg::Certainty => SingletonPolicy::Certainty,
        },
        small_sample: match a.small_sample {
            SmallSampleArg::Observations => SmallSample::Observations,
            SmallSampleArg::Psus => SmallSample::Psus,
            SmallSampleArg::Off => SmallSample::Off,
        },
    }
}

fn family(a: &FitArgs) -> Result<Family> {
    let ancillary = match (a.family, a.nb_k, a.estimate_k) {
        (FamilyKind::NegativeBinomial, Some(k), _) => Some(k),
        (FamilyKind::NegativeBinomial, None, true) => Some(0.0),
        (FamilyKind::NegativeBinomial, None, false) => {
            bail!("negative binomial needs --nb-k or --estimate-k")
        }
        (_, Some(_), _) | (_, _, true) => bail!("--nb-k and --estimate-k apply to the negative binomial only"),
        _ => None,
    };
    let mut fam = Family::new(a.family, ancillary)?;
    if let Some(rule) = a.dispersion {
        fam = fam.with_dispersion(rule)?;
    }
    Ok(fam)
}

/// Name of the `exp(β)` column for ratio-scale links.
fn exp_label(fam: &Family, link: Link, frame: &ModelFrame) -> Option<String> {
    let binary = frame.y.iter().all(|&y| y == 0.0 || y == 1.0);
    let label = match (link.kind, fam.kind) {
        (LinkKind::Logit, _) => "odds ratio",
        (LinkKind::Log, FamilyKind::Binomial) => "risk ratio",
        (LinkKind::Log, FamilyKind::Poisson | FamilyKind::NegativeBinomial) if binary => "risk ratio",
        (LinkKind::Log, FamilyKind::Poisson | FamilyKind::NegativeBinomial) => "rate ratio",
        (LinkKind::Log, _) => "mean ratio",
        _ => return None,
    };
    Some(label.to_string())
}

fn contrast(spec: &str, frame: &ModelFrame) -> Result<(String, ContrastMatrix)> {
    if let Some(path) = spec.strip_prefix('@') {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read contrast file {path}"))?;
        let c = ContrastMatrix::parse(&text).with_context(|| format!("contrast file {path}"))?;
        return Ok((path.to_string(), c));
    }
    let names: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        bail!("empty --test specification");
    }
    let c = ContrastMatrix::select(frame, &names).with_context(|| format!("--test {spec}"))?;
    Ok((names.join(","), c))
}

/// Adds standard errors, intervals, the covariance and Wald tests.
fn attach_inference(
    report: &mut Report,
    a: &FitArgs,
    fit: &FitResult,
    frame: &ModelFrame,
    design: &DesignSummary,
    options: VarianceOptions,
    link: Link,
) -> Result<()> {
    let vc = sandwich_variance(fit, frame, design, options)?;
    let table = coefficient_table(fit, frame, &vc, design, a.level, a.df_mode)?;
    let exp = exp_label(&fit.family, link, frame);
    for (c, row) in report.coefficients.iter_mut().zip(&table.rows) {
        c.std_error = Some(row.std_error);
        c.t = Some(row.t);
        c.p_value = Some(row.p_value);
        c.ci_lower = Some(row.ci_lower);
        c.ci_upper = Some(row.ci_upper);
        if exp.is_some() {
            c.exp_estimate = Some(row.estimate.exp());
            c.exp_ci_lower = Some(row.ci_lower.exp());
            c.exp_ci_upper = Some(row.ci_upper.exp());
        }
    }
    let mut tests = Vec::new();
    for spec in &a.test {
        let (label, l) = contrast(spec, frame)?;
        let r = wald_test(&fit.beta, &vc.vbeta, &l, a.df_mode, design).with_context(|| format!("--test {spec}"))?;
        tests.push(TestInfo {
            label,
            rows: l.labels.clone(),
            f: r.f_stat,
            ndf: r.ndf,
            ddf: r.ddf,
            p_value: r.p_value,
            df_mode: r.df_mode.to_string(),
        });
    }
    report.tests = tests;
    report.inference = Some(InferenceInfo {
        df_mode: a.df_mode.to_string(),
        ddf: table.ddf,
        level: a.level,
        t_critical: table.critical,
        exp_label: exp,
    });
    report.vcov = Some((0..vc.vbeta.nrows()).map(|i| vc.vbeta.row(i).iter().copied().collect()).collect());
    Ok(())
}

pub fn run(a: &FitArgs) -> Result<u8> {
    if !(a.level > 0.0 && a.level < 1.0) {
        bail!("--level must lie in (0, 1)");
    }
    let data_name = a.data.display().to_string();
    let bindings = DesignBindings {
        weight: a.weight.clone(),
        stratum: a.strata.clone(),
        psu: a.psu.clone(),
        fpc: a.fpc.clone(),
        categorical: a.categorical.clone(),
    };
    let ds = SurveyDataset::from_path(&a.data, &bindings).with_context(|| data_name.clone())?;
    let mut spec = ModelSpec::parse(&a.model).with_context(|| format!("model `{}`", a.model))?;
    spec.centering = match a.centering {
        CenteringArg::Weighted => Centering::Weighted,
        CenteringArg::Unweighted => Centering::Unweighted,
    };
    let frame = build_model_frame(&ds, &spec).with_context(|| data_name.clone())?;
    let fam = family(a)?;
    let link = a.link.unwrap_or(a.family.default_link());
    let config = FitConfig {
        max_iter: a.max_iter,
        tol: a.tol,
        estimate_nb_k: a.estimate_k,
        ..FitConfig::default()
    };
    let fit = fit_pseudo_mle(&frame, &fam, link, &config)?;
    let design = frame.design_summary();
    let options = variance_options(a);

    let mut report = Report {
        schema: SCHEMA,
        input: InputInfo { data: data_name, rows_read: ds.n_rows(), rows_used: frame.n() },
        model: ModelInfo {
            formula: a.model.clone(),
            response: spec.response.clone(),
            family: fit.family.kind.name().to_string(),
            link: link.name().to_string(),
            nb_k: fit.family.ancillary,
            dispersion_rule: format!("{:?}", fit.family.dispersion).to_lowercase(),
            columns: frame.column_labels.clone(),
        },
        design: DesignInfo {
            n: design.n,
            n_strata: design.h(),
            n_psu: design.n_psu,
            sum_weights: design.sum_weights,
            df_design: design.design_df(),
            singleton: format!("{:?}", options.singleton).to_lowercase(),
            small_sample: format!("{:?}", options.small_sample).to_lowercase(),
            strata: design
                .strata
                .iter()
                .map(|s| StratumInfo {
                    label: s.label.clone(),
                    n_psu: s.n_psu,
                    n_obs: s.n_obs,
                    fpc: s.fpc,
                    sum_weights: s.sum_weights,
                })
                .collect(),
        },
        fit: FitInfo {
            converged: fit.converged,
            iterations: fit.iterations,
            loglik: fit.loglik,
            dispersion: fit.phi,
        },
        inference: None,
        coefficients: frame
            .column_labels
            .iter()
            .zip(fit.beta.iter())
            .map(|(l, &b)| CoefInfo {
                label: l.clone(),
                estimate: b,
                std_error: None,
                t: None,
                p_value: None,
                ci_lower: None,
                ci_upper: None,
                exp_estimate: None,
                exp_ci_lower: None,
                exp_ci_upper: None,
            })
            .collect(),
        vcov: None,
        variance_note: None,
        tests: Vec::new(),
    };

    if fit.converged {
        match attach_inference(&mut report, a, &fit, &frame, &design, options, link) {
            Ok(()) => {}
            Err(e) if matches!(e.downcast_ref::<Error>(), Some(Error::NonPositiveDf(_))) => {
                let note = format!("variance unavailable: {e:#}");
                eprintln!("svyglm: warning: {note}");
                report.variance_note = Some(note);
            }
            Err(e) => return Err(e),
        }
    } else {
        eprintln!(
            "svyglm: warning: fit did not converge after {} iterations; standard errors and tests omitted",
            fit.iterations
        );
    }

    let rendered = match a.out_format {
        OutFormat::Text => report.to_text(),
        OutFormat::Json => report.to_json(),
        OutFormat::Csv => report.to_csv()?,
    };
    match &a.output {
        Some(path) => std::fs::write(path, rendered).with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().write_all(rendered.as_bytes())?,
    }
    Ok(if fit.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}
