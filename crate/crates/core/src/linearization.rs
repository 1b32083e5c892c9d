//! Design-based sandwich covariance by Taylor-series linearization.
//!
//! ```text
//! V̂(β̂) = Q̂⁻¹ Ĝ Q̂⁻¹
//! Q̂     = Σ wᵢ xᵢxᵢᵗ / (V(μᵢ) g′(μᵢ)²)
//! e_hi· = Σ_{j ∈ PSU hi} w_hij (y_hij − μ_hij) / (V(μ_hij) g′(μ_hij)) · x_hij
//! Ĝ     = (n−1)/(n−p) Σ_h n_h(1−f_h)/(n_h−1) Σ_i (e_hi· − ē_h··)(e_hi· − ē_h··)ᵗ
//! ```
//!
//! The dispersion cancels between `Q̂` and the scores, so neither carries it.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::design::DesignSummary;
use crate::error::{Error, Result};
use crate::frame::ModelFrame;
use crate::pmle::{xt_diag_x, FitResult};

/// Treatment of strata that contain a single PSU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingletonPolicy {
    #[default]
    Error,
    /// Deviation taken from the grand mean of all PSU totals, scale `(1 − f_h)`.
    Centered,
    /// The stratum contributes nothing.
    Certainty,
}

/// Which count plays `n` in the `(n−1)/(n−p)` small-sample factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmallSample {
    #[default]
    Observations,
    Psus,
    /// Factor fixed at 1.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VarianceOptions {
    pub singleton: SingletonPolicy,
    pub small_sample: SmallSample,
}

/// (stratum, PSU) key; ordered lexicographically.
pub type PsuKey = (String, String);

#[derive(Debug, Clone)]
pub struct VarianceComponents {
    pub q: DMatrix<f64>,
    pub score_psu: BTreeMap<PsuKey, DVector<f64>>,
    pub stratum_means: BTreeMap<String, DVector<f64>>,
    /// Each stratum's scaled contribution to `Ĝ` (before the `(n−1)/(n−p)` factor).
    pub stratum_g: BTreeMap<String, DMatrix<f64>>,
    pub small_sample_factor: f64,
    pub g: DMatrix<f64>,
    pub vbeta: DMatrix<f64>,
    pub df_design: f64,
}

impl VarianceComponents {
    pub fn std_errors(&self) -> DVector<f64> {
        self.vbeta.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Linearized score contribution of each observation (rows of an n×p matrix).
fn observation_scores(fit: &FitResult, frame: &ModelFrame) -> Result<DMatrix<f64>> {
    let n = frame.n();
    if fit.mu.len() != n || fit.beta.len() != frame.p() {
        return Err(Error::DimensionMismatch("fit does not belong to this frame".into()));
    }
    let mut u = frame.x.clone();
    for i in 0..n {
        let m = fit.mu[i];
        let (v, _) = fit.family.variance(m)?;
        let (g1, _) = fit.link.derivs(m)?;
        let scale = frame.weights[i] * (frame.y[i] - m) / (v * g1);
        u.row_mut(i).scale_mut(scale);
    }
    Ok(u)
}

/// PSU totals `e_hi·` of the linearized scores.
pub fn psu_score_sums(fit: &FitResult, frame: &ModelFrame) -> Result<BTreeMap<PsuKey, DVector<f64>>> {
    let u = observation_scores(fit, frame)?;
    let p = frame.p();
    let mut sums: BTreeMap<PsuKey, DVector<f64>> = BTreeMap::new();
    for i in 0..frame.n() {
        let key = (frame.strata[i].clone(), frame.psus[i].clone());
        let e = sums.entry(key).or_insert_with(|| DVector::zeros(p));
        *e += u.row(i).transpose();
    }
    Ok(sums)
}

/// `V̂(β̂) = Q̂⁻¹ Ĝ Q̂⁻¹` with stratification, clustering and finite population correction.
pub fn sandwich_variance(
    fit: &FitResult,
    frame: &ModelFrame,
    design: &DesignSummary,
    options: VarianceOptions,
) -> Result<VarianceComponents> {
    let (n, p) = (frame.n(), frame.p());
    if design.n != n {
        return Err(Error::DimensionMismatch(format!(
            "design summary covers {} rows, frame has {n}",
            design.n
        )));
    }

    let mut qw = DVector::zeros(n);
    for i in 0..n {
        let m = fit.mu[i];
        let (v, _) = fit.family.variance(m)?;
        let (g1, _) = fit.link.derivs(m)?;
        qw[i] = frame.weights[i] / (v * g1 * g1);
    }
    let q = xt_diag_x(&frame.x, &qw);
    let q_inv = q
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::RankDeficient {
            rank: q.rank(1e-12 * q.amax()),
            p,
            aliased: Vec::new(),
        })?;

    let score_psu = psu_score_sums(fit, frame)?;
    let mut by_stratum: BTreeMap<&str, Vec<&DVector<f64>>> = BTreeMap::new();
    for ((h, _), e) in &score_psu {
        by_stratum.entry(h.as_str()).or_default().push(e);
    }
    let grand_mean = score_psu.values().fold(DVector::zeros(p), |a, e| a + e) / score_psu.len() as f64;

    let mut stratum_means = BTreeMap::new();
    let mut stratum_g = BTreeMap::new();
    let mut g_sum = DMatrix::zeros(p, p);
    for stratum in &design.strata {
        let Some(totals) = by_stratum.get(stratum.label.as_str()) else {
            continue;
        };
        let n_h = totals.len();
        let f_h = stratum.fpc;
        let mean = totals.iter().fold(DVector::zeros(p), |a, e| a + *e) / n_h as f64;
        let (center, scale) = if n_h >= 2 {
            (mean.clone(), n_h as f64 * (1.0 - f_h) / (n_h as f64 - 1.0))
        } else {
            match options.singleton {
                SingletonPolicy::Error => return Err(Error::SingletonStratum(stratum.label.clone())),
                SingletonPolicy::Centered => (grand_mean.clone(), 1.0 - f_h),
                SingletonPolicy::Certainty => (mean.clone(), 0.0),
            }
        };
        let mut contrib = DMatrix::zeros(p, p);
        for e in totals {
            let d = *e - &center;
            contrib += &d * d.transpose();
        }
        contrib *= scale;
        g_sum += &contrib;
        stratum_means.insert(stratum.label.clone(), mean);
        stratum_g.insert(stratum.label.clone(), contrib);
    }

    let small_sample_factor = match options.small_sample {
        SmallSample::Observations => (n as f64 - 1.0) / (n as f64 - p as f64),
        SmallSample::Psus => {
            let m = score_psu.len() as f64;
            (m - 1.0) / (m - p as f64)
        }
        SmallSample::Off => 1.0,
    };
    if !(small_sample_factor.is_finite() && small_sample_factor > 0.0) {
        return Err(Error::NonPositiveDf(small_sample_factor));
    }
    let g = g_sum * small_sample_factor;
    let v = &q_inv * &g * &q_inv;
    let vbeta = (&v + v.transpose()) * 0.5;

    Ok(VarianceComponents {
        q,
        score_psu,
        stratum_means,
        stratum_g,
        small_sample_factor,
        g,
        vbeta,
        df_design: design.design_df(),
    })
}
