//! Distribution families and link functions.
//!
//! A [`Family`] supplies the variance function `V(μ)` with its derivative, the
//! per-observation log-density and the rule used to estimate the dispersion
//! `φ`. A [`Link`] supplies `g`, `g⁻¹`, `g′` and `g″`, all evaluated on the
//! mean scale.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma, trigamma};

/// Clamp applied to the logistic inverse link so `μ` never reaches 0 or 1.
pub const LOGIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    Identity,
    Log,
    Logit,
    Inverse,
}

/// Monotone map `η = g(μ)` between the mean and the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub kind: LinkKind,
}

impl Link {
    pub const IDENTITY: Link = Link { kind: LinkKind::Identity };
    pub const LOG: Link = Link { kind: LinkKind::Log };
    pub const LOGIT: Link = Link { kind: LinkKind::Logit };
    pub const INVERSE: Link = Link { kind: LinkKind::Inverse };

    pub const ALL: [Link; 4] = [Link::IDENTITY, Link::LOG, Link::LOGIT, Link::INVERSE];

    fn check_domain(self, mu: f64) -> Result<()> {
        let ok = mu.is_finite()
            && match self.kind {
                LinkKind::Identity => true,
                LinkKind::Log => mu > 0.0,
                LinkKind::Logit => mu > 0.0 && mu < 1.0,
                LinkKind::Inverse => mu != 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("mean {mu} outside the domain of the {self} link")))
        }
    }

    /// `η = g(μ)`.
    pub fn apply(self, mu: f64) -> Result<f64> {
        self.check_domain(mu)?;
        Ok(match self.kind {
            LinkKind::Identity => mu,
            LinkKind::Log => mu.ln(),
            LinkKind::Logit => (mu / (1.0 - mu)).ln(),
            LinkKind::Inverse => 1.0 / mu,
        })
    }

    /// `μ = g⁻¹(η)`. The logistic output is clamped to `(ε, 1 − ε)`.
    pub fn invert(self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::Domain(format!("non-finite linear predictor {eta}")));
        }
        let mu = match self.kind {
            LinkKind::Identity => eta,
            LinkKind::Log => eta.exp(),
            LinkKind::Logit => {
                let p = if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                };
                p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS)
            }
            LinkKind::Inverse => {
                if eta == 0.0 {
                    return Err(Error::Domain("inverse link evaluated at η = 0".into()));
                }
                1.0 / eta
            }
        };
        if mu.is_finite() {
            Ok(mu)
        } else {
            Err(Error::Domain(format!("{self} link overflowed at η = {eta}")))
        }
    }

    /// `(g′(μ), g″(μ))`.
    pub fn derivs(self, mu: f64) -> Result<(f64, f64)> {
        self.check_domain(mu)?;
        Ok(match self.kind {
            LinkKind::Identity => (1.0, 0.0),
            LinkKind::Log => (1.0 / mu, -1.0 / (mu * mu)),
            LinkKind::Logit => {
                let v = mu * (1.0 - mu);
                (1.0 / v, (2.0 * mu - 1.0) / (v * v))
            }
            LinkKind::Inverse => (-1.0 / (mu * mu), 2.0 / (mu * mu * mu)),
        })
    }

    pub fn name(self) -> &'static str {
        match self.kind {
            LinkKind::Identity => "identity",
            LinkKind::Log => "log",
            LinkKind::Logit => "logit",
            LinkKind::Inverse => "inverse",
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(Link::IDENTITY),
            "log" => Ok(Link::LOG),
            "logit" => Ok(Link::LOGIT),
            "inverse" => Ok(Link::INVERSE),
            other => Err(Error::InvalidConfig(format!("unknown link `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Normal,
    Poisson,
    Binomial,
    Gamma,
    NegativeBinomial,
    InverseGaussian,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 6] = [
        FamilyKind::Normal,
        FamilyKind::Poisson,
        FamilyKind::Binomial,
        FamilyKind::Gamma,
        FamilyKind::NegativeBinomial,
        FamilyKind::InverseGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Normal => "normal",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Binomial => "binomial",
            FamilyKind::Gamma => "gamma",
            FamilyKind::NegativeBinomial => "negative_binomial",
            FamilyKind::InverseGaussian => "inverse_gaussian",
        }
    }

    /// Canonical (or conventional) link used when none is given.
    pub fn default_link(self) -> Link {
        match self {
            FamilyKind::Normal => Link::IDENTITY,
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => Link::LOG,
            FamilyKind::Binomial => Link::LOGIT,
            FamilyKind::Gamma | FamilyKind::InverseGaussian => Link::INVERSE,
        }
    }

    pub fn default_dispersion(self) -> DispersionRule {
        match self {
            FamilyKind::Normal => DispersionRule::Mle,
            FamilyKind::Gamma | FamilyKind::InverseGaussian => DispersionRule::Moments,
            FamilyKind::Poisson | FamilyKind::Binomial | FamilyKind::NegativeBinomial => {
                DispersionRule::Fixed
            }
        }
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "normal" | "gaussian" => Ok(FamilyKind::Normal),
            "poisson" => Ok(FamilyKind::Poisson),
            "binomial" | "bernoulli" => Ok(FamilyKind::Binomial),
            "gamma" => Ok(FamilyKind::Gamma),
            "negative_binomial" | "negbin" | "nb" => Ok(FamilyKind::NegativeBinomial),
            "inverse_gaussian" | "inverse_normal" | "ig" => Ok(FamilyKind::InverseGaussian),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }
}

/// How `φ` is obtained once `β̂` has converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DispersionRule {
    /// `φ = 1`.
    Fixed,
    /// Weighted Pearson statistic over `Σw − p`.
    Moments,
    /// Maximum likelihood given `μ̂`.
    Mle,
}

impl FromStr for DispersionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" | "fixed(1)" | "1" => Ok(DispersionRule::Fixed),
            "moments" | "pearson" => Ok(DispersionRule::Moments),
            "mle" | "ml" => Ok(DispersionRule::Mle),
            other => Err(Error::InvalidConfig(format!("unknown dispersion rule `{other}`"))),
        }
    }
}

/// Distribution family with its dispersion rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family {
    pub kind: FamilyKind,
    /// Negative-binomial `k` in `V(μ) = μ + kμ²`; `None` for every other family.
    pub ancillary: Option<f64>,
    pub dispersion: DispersionRule,
}

impl Family {
    pub fn new(kind: FamilyKind, ancillary: Option<f64>) -> Result<Self> {
        match (kind, ancillary) {
            (FamilyKind::NegativeBinomial, Some(k)) if k.is_finite() && k >= 0.0 => {}
            (FamilyKind::NegativeBinomial, Some(k)) => {
                return Err(Error::InvalidConfig(format!("negative binomial k = {k} must be ≥ 0")))
            }
            (FamilyKind::NegativeBinomial, None) => {
                return Err(Error::InvalidConfig("negative binomial requires k".into()))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidConfig(format!(
                    "family {} takes no ancillary parameter",
                    kind.name()
                )))
            }
            (_, None) => {}
        }
        Ok(Family {
            kind,
            ancillary,
            dispersion: kind.default_dispersion(),
        })
    }

    pub fn normal() -> Self {
        Self::new(FamilyKind::Normal, None).unwrap()
    }

    pub fn poisson() -> Self {
        Self::new(FamilyKind::Poisson, None).unwrap()
    }

    pub fn binomial() -> Self {
        Self::new(FamilyKind::Binomial, None).unwrap()
    }

    pub fn gamma() -> Self {
        Self::new(FamilyKind::Gamma, None).unwrap()
    }

    pub fn inverse_gaussian() -> Self {
        Self::new(FamilyKind::InverseGaussian, None).unwrap()
    }

    pub fn negative_binomial(k: f64) -> Result<Self> {
        Self::new(FamilyKind::NegativeBinomial, Some(k))
    }

    pub fn with_dispersion(mut self, rule: DispersionRule) -> Result<Self> {
        if rule == DispersionRule::Mle
            && matches!(
                self.kind,
                FamilyKind::Poisson | FamilyKind::Binomial | FamilyKind::NegativeBinomial
            )
        {
            return Err(Error::InvalidConfig(format!(
                "family {} has no likelihood dispersion parameter",
                self.kind.name()
            )));
        }
        self.dispersion = rule;
        Ok(self)
    }

    fn nb_k(&self) -> f64 {
        self.ancillary.unwrap_or(0.0)
    }

    /// Links accepted for this family.
    pub fn supports_link(&self, link: Link) -> bool {
        use LinkKind::*;
        match self.kind {
            FamilyKind::Normal => matches!(link.kind, Identity | Log | Inverse),
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => {
                matches!(link.kind, Log | Identity)
            }
            FamilyKind::Binomial => matches!(link.kind, Logit | Log | Identity),
            FamilyKind::Gamma | FamilyKind::InverseGaussian => {
                matches!(link.kind, Inverse | Log | Identity)
            }
        }
    }

    pub fn in_mean_domain(&self, mu: f64) -> bool {
        mu.is_finite()
            && match self.kind {
                FamilyKind::Normal => true,
                FamilyKind::Binomial => mu > 0.0 && mu < 1.0,
                _ => mu > 0.0,
            }
    }

    /// Pulls `μ` at least `floor` away from the boundary of the mean domain.
    pub fn clamp_mean(&self, mu: f64, floor: f64) -> f64 {
        match self.kind {
            FamilyKind::Normal => mu,
            FamilyKind::Binomial => mu.clamp(floor, 1.0 - floor),
            _ => mu.max(floor),
        }
    }

    /// Whether `y` lies in the support of the response distribution.
    pub fn valid_response(&self, y: f64) -> bool {
        y.is_finite()
            && match self.kind {
                FamilyKind::Normal => true,
                FamilyKind::Poisson | FamilyKind::NegativeBinomial => y >= 0.0,
                FamilyKind::Binomial => (0.0..=1.0).contains(&y),
                FamilyKind::Gamma | FamilyKind::InverseGaussian => y > 0.0,
            }
    }

    /// `(V(μ), V′(μ))`.
    pub fn variance(&self, mu: f64) -> Result<(f64, f64)> {
        if !self.in_mean_domain(mu) {
            return Err(Error::Domain(format!(
                "mean {mu} outside the domain of the {} family",
                self.kind.name()
            )));
        }
        Ok(match self.kind {
            FamilyKind::Normal => (1.0, 0.0),
            FamilyKind::Poisson => (mu, 1.0),
            FamilyKind::Binomial => (mu * (1.0 - mu), 1.0 - 2.0 * mu),
            FamilyKind::Gamma => (mu * mu, 2.0 * mu),
            FamilyKind::NegativeBinomial => {
                let k = self.nb_k();
                (mu + k * mu * mu, 1.0 + 2.0 * k * mu)
            }
            FamilyKind::InverseGaussian => (mu * mu * mu, 3.0 * mu * mu),
        })
    }

    /// `log f(y; μ, φ)` for one observation. Poisson, binomial and negative
    /// binomial densities carry no dispersion, so `phi` is ignored for them.
    pub fn log_density(&self, y: f64, mu: f64, phi: f64) -> Result<f64> {
        if !self.in_mean_domain(mu) {
            return Err(Error::Domain(format!(
                "mean {mu} outside the domain of the {} family",
                self.kind.name()
            )));
        }
        Ok(match self.kind {
            FamilyKind::Normal => {
                let r = y - mu;
                -0.5 * ((2.0 * PI * phi).ln() + r * r / phi)
            }
            FamilyKind::Poisson => xlogy(y, mu) - mu - ln_gamma(y + 1.0),
            FamilyKind::Binomial => xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu),
            FamilyKind::Gamma => {
                let nu = 1.0 / phi;
                nu * nu.ln() - nu * mu.ln() + (nu - 1.0) * y.ln() - nu * y / mu - ln_gamma(nu)
            }
            FamilyKind::NegativeBinomial => {
                let k = self.nb_k();
                if k == 0.0 {
                    xlogy(y, mu) - mu - ln_gamma(y + 1.0)
                } else {
                    let r = 1.0 / k;
                    ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) + xlogy(y, k * mu)
                        - (y + r) * (k * mu).ln_1p()
                }
            }
            FamilyKind::InverseGaussian => {
                let r = y - mu;
                -0.5 * ((2.0 * PI * phi * y * y * y).ln() + r * r / (phi * mu * mu * y))
            }
        })
    }

    /// Weighted Pearson statistic `Σ wᵢ (yᵢ − μᵢ)² / V(μᵢ)`.
    pub fn pearson_chi2(&self, y: &[f64], mu: &[f64], w: &[f64]) -> Result<f64> {
        let mut chi2 = 0.0;
        for ((&yi, &mi), &wi) in y.iter().zip(mu).zip(w) {
            let (v, _) = self.variance(mi)?;
            chi2 += wi * (yi - mi) * (yi - mi) / v;
        }
        Ok(chi2)
    }

    /// Estimate `φ` at fitted means according to the family's dispersion rule.
    pub fn estimate_dispersion(&self, y: &[f64], mu: &[f64], w: &[f64], p: usize) -> Result<f64> {
        if y.len() != mu.len() || y.len() != w.len() {
            return Err(Error::DimensionMismatch(format!(
                "y, mu and w have lengths {}, {}, {}",
                y.len(),
                mu.len(),
                w.len()
            )));
        }
        let sum_w: f64 = w.iter().sum();
        match self.dispersion {
            DispersionRule::Fixed => Ok(1.0),
            DispersionRule::Moments => {
                let df = sum_w - p as f64;
                if df <= 0.0 {
                    return Err(Error::NonPositiveDf(df));
                }
                Ok(self.pearson_chi2(y, mu, w)? / df)
            }
            DispersionRule::Mle => match self.kind {
                FamilyKind::Normal => {
                    let rss: f64 = y
                        .iter()
                        .zip(mu)
                        .zip(w)
                        .map(|((yi, mi), wi)| wi * (yi - mi) * (yi - mi))
                        .sum();
                    Ok(rss / sum_w)
                }
                FamilyKind::InverseGaussian => {
                    let s: f64 = y
                        .iter()
                        .zip(mu)
                        .zip(w)
                        .map(|((yi, mi), wi)| wi * (yi - mi) * (yi - mi) / (mi * mi * yi))
                        .sum();
                    Ok(s / sum_w)
                }
                FamilyKind::Gamma => gamma_mle_dispersion(y, mu, w),
                _ => Ok(1.0),
            },
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ancillary {
            Some(k) => write!(f, "{}(k={k})", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

/// `x·ln(y)` with the convention `0·ln(0) = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Solves `ln ν − ψ(ν) = D̄` for the gamma shape `ν`, where `D̄` is the
/// weighted mean of `y/μ − ln(y/μ) − 1`, and returns `φ = 1/ν`.
fn gamma_mle_dispersion(y: &[f64], mu: &[f64], w: &[f64]) -> Result<f64> {
    let sum_w: f64 = w.iter().sum();
    let mut dbar = 0.0;
    for ((&yi, &mi), &wi) in y.iter().zip(mu).zip(w) {
        if yi <= 0.0 || mi <= 0.0 {
            return Err(Error::Domain("gamma dispersion needs positive y and μ".into()));
        }
        let r = yi / mi;
        dbar += wi * (r - r.ln() - 1.0);
    }
    dbar /= sum_w;
    if dbar <= 0.0 {
        return Ok(0.0);
    }
    // ln ν − ψ(ν) ≈ 1/(2ν) for large ν gives the starting point.
    let mut nu = (1.0 / (2.0 * dbar)).max(1e-3);
    for _ in 0..100 {
        let f = nu.ln() - digamma(nu) - dbar;
        let fp = 1.0 / nu - trigamma(nu);
        let mut next = nu - f / fp;
        if next <= 0.0 {
            next = nu / 2.0;
        }
        if (next - nu).abs() <= 1e-14 * nu {
            nu = next;
            break;
        }
        nu = next;
    }
    Ok(1.0 / nu)
}
