use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use svyglm::{simulate, Family, FamilyKind, Link, SimSpec, WeightScheme};

/// `unit` or `uniform:LO:HI`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightArg(pub WeightScheme);

impl FromStr for WeightArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "unit" {
            return Ok(WeightArg(WeightScheme::Unit));
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["uniform", lo, hi] => {
                let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
                let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
                Ok(WeightArg(WeightScheme::Uniform { lo, hi }))
            }
            _ => Err(format!("expected `unit` or `uniform:LO:HI`, got `{s}`")),
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SimArgs {
    /// Read flags from a `key = value` file; command-line flags take precedence.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of strata.
    #[arg(long, default_value_t = 2)]
    pub strata: usize,
    #[arg(long, default_value_t = 2)]
    pub psus_per_stratum: usize,
    #[arg(long, default_value_t = 25)]
    pub obs_per_psu: usize,
    /// Mean model over the generated columns x, age, gender, educ.
    #[arg(long, default_value = "y ~ 1 + x", value_name = "FORMULA")]
    pub model: String,
    /// True coefficients in design-matrix column order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.5,-0.2")]
    pub beta: Vec<f64>,
    #[arg(long, default_value = "poisson")]
    pub family: FamilyKind,
    #[arg(long)]
    pub link: Option<Link>,
    #[arg(long, value_name = "K")]
    pub nb_k: Option<f64>,
    /// Normal variance, or gamma and inverse Gaussian dispersion.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// `unit` or `uniform:LO:HI`.
    #[arg(long, default_value = "unit")]
    pub weights: WeightArg,
    /// Sampling fraction written to an `fpc` column.
    #[arg(long)]
    pub fpc: Option<f64>,
    /// Standard deviation of a shared PSU effect on the linear predictor.
    #[arg(long, default_value_t = 0.0)]
    pub psu_sd: f64,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// JSON file documenting the true parameters.
    #[arg(long, value_name = "FILE", default_value = "sim_truth.json")]
    pub truth: PathBuf,
}

#[derive(Debug, Serialize)]
struct TruthCoef<'a> {
    label: &'a str,
    value: f64,
}

#[derive(Debug, Serialize)]
struct Truth<'a> {
    schema: &'static str,
    seed: u64,
    strata: usize,
    psus_per_stratum: usize,
    obs_per_psu: usize,
    formula: &'a str,
    family: &'static str,
    link: &'static str,
    nb_k: Option<f64>,
    scale: f64,
    weights: String,
    fpc: Option<f64>,
    psu_sd: f64,
    coefficients: Vec<TruthCoef<'a>>,
}

pub fn run(a: &SimArgs) -> Result<()> {
    let ancillary = match (a.family, a.nb_k) {
        (FamilyKind::NegativeBinomial, k) => Some(k.unwrap_or(0.0)),
        (_, Some(_)) => bail!("--nb-k applies to the negative binomial only"),
        _ => None,
    };
    let family = Family::new(a.family, ancillary)?;
    let link = a.link.unwrap_or(a.family.default_link());
    let spec = SimSpec {
        strata: a.strata,
        psus_per_stratum: a.psus_per_stratum,
        obs_per_psu: a.obs_per_psu,
        formula: a.model.clone(),
        beta: a.beta.clone(),
        family,
        link,
        dispersion: a.scale,
        weights: a.weights.0,
        fpc: a.fpc,
        psu_effect_sd: a.psu_sd,
        seed: a.seed,
    };
    let data = simulate(&spec)?;
    let csv = data.to_csv_string()?;

    let truth = Truth {
        schema: "svyglm.sim_truth/1",
        seed: a.seed,
        strata: a.strata,
        psus_per_stratum: a.psus_per_stratum,
        obs_per_psu: a.obs_per_psu,
        formula: &a.model,
        family: a.family.name(),
        link: link.name(),
        nb_k: ancillary,
        scale: a.scale,
        weights: match a.weights.0 {
            WeightScheme::Unit => "unit".into(),
            WeightScheme::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
        },
        fpc: a.fpc,
        psu_sd: a.psu_sd,
        coefficients: data
            .truth
            .column_labels
            .iter()
            .zip(&data.truth.beta)
            .map(|(l, &v)| TruthCoef { label: l, value: v })
            .collect(),
    };
    let truth_json = serde_json::to_string_pretty(&truth)? + "\n";
    std::fs::write(&a.truth, truth_json).with_context(|| format!("cannot write {}", a.truth.display()))?;

    match &a.output {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}
