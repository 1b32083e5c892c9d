//! Synthetic stratified cluster samples with a known mean model.
//!
//! Each of `H` strata holds `psus_per_stratum` PSUs of `obs_per_psu` rows.
//! Covariates are drawn independently per row:
//!
//! | column   | distribution                                               |
//! |----------|------------------------------------------------------------|
//! | `x`      | N(0, 1)                                                    |
//! | `age`    | integer uniform on 18..=85                                 |
//! | `gender` | Female 0.45, Male 0.45, Other 0.10                         |
//! | `educ`   | `0-8 years` 0.30, `9-15 years` 0.45, `16+ years` 0.25      |
//!
//! The response `y` is drawn from the requested family at
//! `μ = g⁻¹(xᵢᵗβ + u_psu)`, where `xᵢ` is the design row the formula builds
//! and `u_psu ~ N(0, psu_effect_sd²)` is shared within a PSU.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, InverseGaussian, Normal, Poisson};

use crate::design::{DesignBindings, SurveyDataset};
use crate::error::{Error, Result};
use crate::family::{Family, FamilyKind, Link};
use crate::frame::{build_model_frame, ModelSpec};

pub const GENDER_LEVELS: [(&str, f64); 3] = [("Female", 0.45), ("Male", 0.45), ("Other", 0.10)];
pub const EDUC_LEVELS: [(&str, f64); 3] = [("0-8 years", 0.30), ("9-15 years", 0.45), ("16+ years", 0.25)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Unit,
    /// Independent uniform draws on `[lo, hi)` per row.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub strata: usize,
    pub psus_per_stratum: usize,
    pub obs_per_psu: usize,
    /// Mean model over the generated columns; the response must be `y`.
    pub formula: String,
    pub beta: Vec<f64>,
    pub family: Family,
    pub link: Link,
    /// `σ²` for normal, `φ` for gamma and inverse Gaussian; ignored otherwise.
    pub dispersion: f64,
    pub weights: WeightScheme,
    /// Sampling fraction written to an `fpc` column for every stratum.
    pub fpc: Option<f64>,
    pub psu_effect_sd: f64,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            strata: 2,
            psus_per_stratum: 2,
            obs_per_psu: 25,
            formula: "y ~ 1 + x".into(),
            beta: vec![0.5, -0.2],
            family: Family::poisson(),
            link: Link::LOG,
            dispersion: 1.0,
            weights: WeightScheme::Unit,
            fpc: None,
            psu_effect_sd: 0.0,
            seed: 1,
        }
    }
}

impl SimSpec {
    fn validate(&self) -> Result<()> {
        if self.strata == 0 || self.psus_per_stratum == 0 || self.obs_per_psu == 0 {
            return Err(Error::InvalidConfig("strata, PSUs and rows per PSU must be positive".into()));
        }
        if !self.family.supports_link(self.link) {
            return Err(Error::InvalidConfig(format!(
                "family {} does not support the {} link",
                self.family.kind.name(),
                self.link
            )));
        }
        if !(self.dispersion.is_finite() && self.dispersion > 0.0) {
            return Err(Error::InvalidConfig("dispersion must be positive".into()));
        }
        if !(self.psu_effect_sd.is_finite() && self.psu_effect_sd >= 0.0) {
            return Err(Error::InvalidConfig("PSU effect SD must be non-negative".into()));
        }
        if let WeightScheme::Uniform { lo, hi } = self.weights {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidConfig("weight range must satisfy 0 < lo < hi".into()));
            }
        }
        if let Some(f) = self.fpc {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("fpc {f} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// True coefficients aligned with the design-matrix columns of the formula.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub column_labels: Vec<String>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub truth: SimTruth,
}

impl SimulatedData {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(sink);
        wtr.write_record(&self.header)?;
        for row in &self.rows {
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    /// Loads the generated table with its design columns bound.
    pub fn dataset(&self) -> Result<SurveyDataset> {
        let has_fpc = self.header.iter().any(|h| h == "fpc");
        let mut b = DesignBindings::new().weight("w").stratum("stratum").psu("psu");
        if has_fpc {
            b = b.fpc("fpc");
        }
        SurveyDataset::from_reader(self.to_csv_string()?.as_bytes(), &b)
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, levels: &[(&'a str, f64)]) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (name, p) in levels {
        acc += p;
        if u < acc {
            return name;
        }
    }
    levels[levels.len() - 1].0
}

fn draw(rng: &mut ChaCha8Rng, spec: &SimSpec, mu: f64) -> Result<f64> {
    let bad = |what: &str| Error::Domain(format!("cannot draw {what} at mean {mu}"));
    let phi = spec.dispersion;
    Ok(match spec.family.kind {
        FamilyKind::Normal => Normal::new(mu, phi.sqrt()).map_err(|_| bad("normal"))?.sample(rng),
        FamilyKind::Poisson => poisson(rng, mu)?,
        FamilyKind::Binomial => {
            let b = Bernoulli::new(mu).map_err(|_| bad("Bernoulli"))?;
            if b.sample(rng) {
                1.0
            } else {
                0.0
            }
        }
        FamilyKind::Gamma => Gamma::new(1.0 / phi, mu * phi).map_err(|_| bad("gamma"))?.sample(rng),
        FamilyKind::InverseGaussian => InverseGaussian::new(mu, 1.0 / phi)
            .map_err(|_| bad("inverse Gaussian"))?
            .sample(rng),
        FamilyKind::NegativeBinomial => {
            let k = spec.family.ancillary.unwrap_or(0.0);
            let rate = if k > 0.0 {
                Gamma::new(1.0 / k, k * mu).map_err(|_| bad("gamma mixing"))?.sample(rng)
            } else {
                mu
            };
            poisson(rng, rate)?
        }
    })
}

fn poisson(rng: &mut ChaCha8Rng, mu: f64) -> Result<f64> {
    if mu == 0.0 {
        return Ok(0.0);
    }
    Ok(Poisson::new(mu)
        .map_err(|_| Error::Domain(format!("cannot draw Poisson at mean {mu}")))?
        .sample(rng))
}

/// Draws one synthetic sample. Identical specs give identical output.
pub fn simulate(spec: &SimSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let model = ModelSpec::parse(&spec.formula)?;
    if model.response != "y" {
        return Err(Error::InvalidConfig(format!(
            "simulated response is `y`, formula names `{}`",
            model.response
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut header: Vec<String> = ["stratum", "psu", "w"].iter().map(|s| s.to_string()).collect();
    if spec.fpc.is_some() {
        header.push("fpc".into());
    }
    header.extend(["x", "age", "gender", "educ", "y"].iter().map(|s| s.to_string()));

    let mut rows = Vec::new();
    let mut psu_effects = Vec::new();
    for h in 1..=spec.strata {
        for p in 1..=spec.psus_per_stratum {
            let u = spec.psu_effect_sd * std_normal.sample(&mut rng);
            for _ in 0..spec.obs_per_psu {
                let w = match spec.weights {
                    WeightScheme::Unit => 1.0,
                    WeightScheme::Uniform { lo, hi } => rng.random_range(lo..hi),
                };
                let mut row = vec![format!("h{h}"), format!("h{h}_p{p}"), w.to_string()];
                if let Some(f) = spec.fpc {
                    row.push(f.to_string());
                }
                let x: f64 = std_normal.sample(&mut rng);
                let age: u32 = rng.random_range(18..=85);
                row.push(x.to_string());
                row.push(age.to_string());
                row.push(pick(&mut rng, &GENDER_LEVELS).to_string());
                row.push(pick(&mut rng, &EDUC_LEVELS).to_string());
                row.push("0".into());
                rows.push(row);
                psu_effects.push(u);
            }
        }
    }

    let mut data = SimulatedData {
        header,
        rows,
        truth: SimTruth { column_labels: Vec::new(), beta: spec.beta.clone() },
    };
    let frame = build_model_frame(&data.dataset()?, &model)?;
    if frame.p() != spec.beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "formula builds {} columns ({}), {} true coefficients given",
            frame.p(),
            frame.column_labels.join(", "),
            spec.beta.len()
        )));
    }
    let eta = &frame.x * DVector::from_column_slice(&spec.beta);
    let y_col = data.header.len() - 1;
    for (i, row) in data.rows.iter_mut().enumerate() {
        let mu = spec.link.invert(eta[i] + psu_effects[i])?;
        if !spec.family.in_mean_domain(mu) {
            return Err(Error::Domain(format!(
                "true mean {mu} at row {} is outside the {} mean domain",
                i + 1,
                spec.family.kind.name()
            )));
        }
        let y = draw(&mut rng, spec, mu)?;
        row[y_col] = y.to_string();
    }
    data.truth.column_labels = frame.column_labels;
    Ok(data)
}

/// Plain-text summary of a simulation spec and its truth, one `key=value` per line.
pub fn describe(spec: &SimSpec, truth: &SimTruth) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "family={}", spec.family.kind.name());
    let _ = writeln!(s, "link={}", spec.link);
    for (l, b) in truth.column_labels.iter().zip(&truth.beta) {
        let _ = writeln!(s, "beta[{l}]={b}");
    }
    s
}
