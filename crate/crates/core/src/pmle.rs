//! Pseudo-maximum-likelihood fitting.
//!
//! The survey-weighted log-likelihood `Σ wᵢ log f(yᵢ; μᵢ, φ)` is maximized by
//! Newton-Raphson on the observed Hessian. With `μᵢ = g⁻¹(xᵢᵗβ)`:
//!
//! ```text
//! s       = Σ wᵢ (yᵢ − μᵢ) / (V(μᵢ) g′(μᵢ) φ) · xᵢ
//! H       = −Xᵗ W₀ X
//! W₀[i,i] = wₑᵢ + wᵢ (yᵢ − μᵢ) (V g″ + V′ g′) / (V² g′³ φ)
//! wₑᵢ     = wᵢ / (V (g′)² φ)
//! ```
//!
//! A step that fails to raise the pseudo log-likelihood, or a `−H` that is not
//! positive definite, is retried on `−H + λ diag(−H)` with geometrically
//! growing `λ`; `λ` resets after every accepted step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{Family, FamilyKind, Link};
use crate::frame::ModelFrame;

/// Mean-domain floor used by the free-standing evaluation functions.
pub const DEFAULT_MU_FLOOR: f64 = 1e-10;
/// Lower bound on the reported dispersion.
pub const PHI_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change threshold.
    pub tol: f64,
    /// Threshold on `max |Δβ|`.
    pub beta_tol: f64,
    pub ridge_init: f64,
    pub ridge_growth: f64,
    /// Ridge retries per iteration before the fit is declared stalled.
    pub max_ridge_steps: usize,
    /// Minimum distance of `μ` from the boundary of the mean domain.
    pub mu_floor: f64,
    /// Starting coefficients; the IRLS warm start is used when `None`.
    pub start: Option<Vec<f64>>,
    /// Re-estimate the negative-binomial `k` by Pearson moments between fits.
    pub estimate_nb_k: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 50,
            tol: 1e-10,
            beta_tol: 1e-8,
            ridge_init: 1e-4,
            ridge_growth: 10.0,
            max_ridge_steps: 40,
            mu_floor: DEFAULT_MU_FLOOR,
            start: None,
            estimate_nb_k: false,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            self.tol,
            self.beta_tol,
            self.ridge_init,
            self.ridge_growth,
            self.mu_floor,
        ];
        if self.max_iter == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("fit options must be positive".into()));
        }
        if self.ridge_growth <= 1.0 {
            return Err(Error::InvalidConfig("ridge growth must exceed 1".into()));
        }
        if self.mu_floor >= 0.5 {
            return Err(Error::InvalidConfig("mean floor must be below 0.5".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub phi: f64,
    /// Pseudo log-likelihood at `β̂` and `φ̂`.
    pub loglik: f64,
    /// Pseudo log-likelihood (at the working dispersion `φ = 1`) of the start
    /// and of every accepted step of the final Newton run. Non-decreasing up to
    /// `tol · (1 + |ℓ|)`.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `−H` at `β̂` and `φ̂`.
    pub neg_hessian: DMatrix<f64>,
    /// `wₑᵢ` at `β̂` and `φ̂`.
    pub we_diag: DVector<f64>,
    /// Family as fitted (carries the estimated `k` for negative binomial).
    pub family: Family,
    pub link: Link,
}

impl FitResult {
    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged { iterations: self.iterations })
        }
    }
}

/// Per-observation quantities at the current linear predictor.
struct State {
    eta: DVector<f64>,
    mu: DVector<f64>,
    loglik: f64,
}

struct Model<'a> {
    frame: &'a ModelFrame,
    family: Family,
    link: Link,
    floor: f64,
}

impl Model<'_> {
    fn state(&self, beta: &DVector<f64>, phi: f64) -> Result<State> {
        let eta = &self.frame.x * beta;
        let mut mu = DVector::zeros(eta.len());
        let mut loglik = 0.0;
        for i in 0..eta.len() {
            let m = self.family.clamp_mean(self.link.invert(eta[i])?, self.floor);
            loglik += self.frame.weights[i] * self.family.log_density(self.frame.y[i], m, phi)?;
            mu[i] = m;
        }
        if !loglik.is_finite() {
            return Err(Error::Domain("pseudo log-likelihood is not finite".into()));
        }
        Ok(State { eta, mu, loglik })
    }

    /// Score, `W₀` diagonal and `wₑ` diagonal at the given means.
    fn derivatives(&self, mu: &DVector<f64>, phi: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let n = mu.len();
        let mut score_w = DVector::zeros(n);
        let mut w0 = DVector::zeros(n);
        let mut we = DVector::zeros(n);
        for i in 0..n {
            let m = mu[i];
            let w = self.frame.weights[i];
            let r = self.frame.y[i] - m;
            let (v, vp) = self.family.variance(m)?;
            let (g1, g2) = self.link.derivs(m)?;
            score_w[i] = w * r / (v * g1 * phi);
            we[i] = w / (v * g1 * g1 * phi);
            w0[i] = we[i] + w * r * (v * g2 + vp * g1) / (v * v * g1 * g1 * g1 * phi);
        }
        let score = self.frame.x.tr_mul(&score_w);
        Ok((score, w0, we))
    }
}

/// `Xᵗ diag(d) X`.
pub(crate) fn xt_diag_x(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= d[i];
    }
    let m = x.tr_mul(&scaled);
    (&m + m.transpose()) * 0.5
}

fn check_inputs(frame: &ModelFrame, family: &Family, link: Link, beta: &DVector<f64>) -> Result<()> {
    if !family.supports_link(link) {
        return Err(Error::InvalidConfig(format!(
            "link {link} is not supported for family {}",
            family.kind.name()
        )));
    }
    if beta.len() != frame.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, design has {} columns",
            beta.len(),
            frame.p()
        )));
    }
    Ok(())
}

/// Survey-weighted log-likelihood `Σ wᵢ log f(yᵢ; μᵢ, φ)`.
pub fn weighted_loglik(
    frame: &ModelFrame,
    family: &Family,
    link: Link,
    beta: &DVector<f64>,
    phi: f64,
) -> Result<f64> {
    check_inputs(frame, family, link, beta)?;
    let model = Model { frame, family: *family, link, floor: DEFAULT_MU_FLOOR };
    Ok(model.state(beta, phi)?.loglik)
}

/// Gradient of the pseudo log-likelihood with respect to `β`.
pub fn score_vector(
    frame: &ModelFrame,
    family: &Family,
    link: Link,
    beta: &DVector<f64>,
    phi: f64,
) -> Result<DVector<f64>> {
    check_inputs(frame, family, link, beta)?;
    let model = Model { frame, family: *family, link, floor: DEFAULT_MU_FLOOR };
    let state = model.state(beta, phi)?;
    Ok(model.derivatives(&state.mu, phi)?.0)
}

/// Observed Hessian `H = −XᵗW₀X` together with the `W₀` diagonal.
pub fn hessian_matrix(
    frame: &ModelFrame,
    family: &Family,
    link: Link,
    beta: &DVector<f64>,
    phi: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_inputs(frame, family, link, beta)?;
    let model = Model { frame, family: *family, link, floor: DEFAULT_MU_FLOOR };
    let state = model.state(beta, phi)?;
    let (_, w0, _) = model.derivatives(&state.mu, phi)?;
    Ok((-xt_diag_x(&frame.x, &w0), w0))
}

/// Detects linear dependence among the columns of `X` with a column-pivoted QR.
pub fn check_rank(frame: &ModelFrame) -> Result<()> {
    let p = frame.p();
    let qr = frame.x.clone().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let rank = (0..r.nrows().min(p))
        .take_while(|&k| lead > 0.0 && r[(k, k)].abs() > 1e-10 * lead)
        .count();
    if rank == p {
        return Ok(());
    }
    let mut order = DMatrix::from_fn(1, p, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    let mut aliased: Vec<usize> = (rank..p).map(|k| order[(0, k)] as usize).collect();
    aliased.sort_unstable();
    Err(Error::RankDeficient {
        rank,
        p,
        aliased: aliased.into_iter().map(|j| frame.column_labels[j].clone()).collect(),
    })
}

/// Weighted least squares `(XᵗWX)⁻¹XᵗWz`.
fn weighted_ls(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let xtwx = xt_diag_x(x, w);
    let xtwz = x.tr_mul(&w.component_mul(z));
    match xtwx.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&xtwz)),
        None => xtwx
            .lu()
            .solve(&xtwz)
            .ok_or_else(|| Error::Domain("singular weighted least-squares system".into())),
    }
}

/// IRLS warm start: one weighted least-squares solve on the linearized link at
/// `μ⁰ = (y + ȳ_w) / 2`.
fn warm_start(model: &Model<'_>) -> Result<DVector<f64>> {
    let frame = model.frame;
    let sum_w: f64 = frame.weights.iter().sum();
    let ybar = frame.y.iter().zip(&frame.weights).map(|(y, w)| y * w).sum::<f64>() / sum_w;
    let start_floor = model.floor.max(1e-4);
    let n = frame.n();
    let mut z = DVector::zeros(n);
    let mut eta0 = DVector::zeros(n);
    let mut wt = DVector::zeros(n);
    for i in 0..n {
        let mut m = model.family.clamp_mean(0.5 * (frame.y[i] + ybar), start_floor);
        if model.link.apply(m).is_err() {
            m = if model.link.apply(ybar).is_ok() { ybar } else { 0.5 };
        }
        let eta = model.link.apply(m)?;
        let (v, _) = model.family.variance(m)?;
        let (g1, _) = model.link.derivs(m)?;
        eta0[i] = eta;
        z[i] = eta + (frame.y[i] - m) * g1;
        wt[i] = frame.weights[i] / (v * g1 * g1);
    }
    let beta = weighted_ls(&frame.x, &wt, &z)?;
    if model.state(&beta, 1.0).is_ok() {
        return Ok(beta);
    }
    let beta = weighted_ls(&frame.x, &wt, &eta0)?;
    model.state(&beta, 1.0)?;
    Ok(beta)
}

struct NewtonOutcome {
    beta: DVector<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn newton(model: &Model<'_>, config: &FitConfig, start: DVector<f64>) -> Result<NewtonOutcome> {
    const PHI: f64 = 1.0;
    let p = start.len();
    let mut beta = start;
    let mut state = model.state(&beta, PHI)?;
    let mut trace = vec![state.loglik];

    for iter in 1..=config.max_iter {
        let (score, w0, _) = model.derivatives(&state.mu, PHI)?;
        let neg_h = xt_diag_x(&model.frame.x, &w0);
        let diag_max = neg_h.diagonal().iter().fold(0.0_f64, |a, d| a.max(d.abs()));
        let ridge_diag = DVector::from_iterator(
            p,
            neg_h.diagonal().iter().map(|d| d.abs().max(1e-12 * diag_max).max(1e-300)),
        );
        let roundoff = config.tol * (1.0 + state.loglik.abs());

        let mut accepted = None;
        let mut lambda = 0.0;
        for attempt in 0..=config.max_ridge_steps {
            if attempt > 0 {
                lambda = if attempt == 1 {
                    config.ridge_init
                } else {
                    lambda * config.ridge_growth
                };
            }
            let mut a = neg_h.clone();
            for j in 0..p {
                a[(j, j)] += lambda * ridge_diag[j];
            }
            let Some(chol) = a.cholesky() else { continue };
            let delta = chol.solve(&score);
            // predicted increase under the local quadratic model
            let gain = 0.5 * score.dot(&delta);
            let candidate = &beta + &delta;
            match model.state(&candidate, PHI) {
                Ok(next) if next.loglik >= state.loglik => {
                    accepted = Some((delta, candidate, next));
                    break;
                }
                Ok(next) if attempt == 0 && gain <= roundoff && state.loglik - next.loglik <= roundoff => {
                    // The loglik cannot resolve a step this small; trust the quadratic model.
                    accepted = Some((delta, candidate, next));
                    break;
                }
                _ => {}
            }
        }

        let Some((delta, candidate, next)) = accepted else {
            let converged = score.amax() <= 1e-6 * (1.0 + state.loglik.abs());
            return Ok(NewtonOutcome { beta, trace, iterations: iter, converged });
        };
        let change = (next.loglik - state.loglik).abs();
        beta = candidate;
        state = next;
        trace.push(state.loglik);
        if change <= config.tol * (1.0 + trace[trace.len() - 2].abs()) && delta.amax() < config.beta_tol {
            return Ok(NewtonOutcome { beta, trace, iterations: iter, converged: true });
        }
    }
    Ok(NewtonOutcome { beta, trace, iterations: config.max_iter, converged: false })
}

/// Finds `k ∈ [0, 1e6]` with Pearson χ²(k) / (Σw − p) = 1 by bisection.
fn moments_nb_k(frame: &ModelFrame, mu: &DVector<f64>) -> Result<f64> {
    let df = frame.weights.iter().sum::<f64>() - frame.p() as f64;
    if df <= 0.0 {
        return Err(Error::NonPositiveDf(df));
    }
    let ratio = |k: f64| -> Result<f64> {
        let fam = Family::negative_binomial(k)?;
        Ok(fam.pearson_chi2(frame.y.as_slice(), mu.as_slice(), &frame.weights)? / df)
    };
    let (mut lo, mut hi) = (0.0, 1e6);
    if ratio(lo)? <= 1.0 {
        return Ok(0.0);
    }
    if ratio(hi)? > 1.0 {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fits `β̂` by ridge-stabilized Newton-Raphson on the pseudo log-likelihood,
/// then estimates `φ` by the family's dispersion rule.
pub fn fit_pseudo_mle(
    frame: &ModelFrame,
    family: &Family,
    link: Link,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let (n, p) = (frame.n(), frame.p());
    if n < p {
        return Err(Error::TooFewObservations { n, p });
    }
    check_inputs(frame, family, link, &DVector::zeros(p))?;
    if let Some((i, y)) = frame.y.iter().enumerate().find(|(_, y)| !family.valid_response(**y)) {
        return Err(Error::Domain(format!(
            "response {y} (row {}) outside the support of the {} family",
            frame.kept_rows.get(i).copied().unwrap_or(i) + 1,
            family.kind.name()
        )));
    }
    if frame.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidConfig("weights must be finite and positive".into()));
    }
    check_rank(frame)?;

    let mut family = *family;
    let mut model = Model { frame, family, link, floor: config.mu_floor };
    let mut beta = match &config.start {
        Some(b) if b.len() == p => DVector::from_column_slice(b),
        Some(b) => {
            return Err(Error::DimensionMismatch(format!(
                "start has {} entries, design has {p} columns",
                b.len()
            )))
        }
        None => warm_start(&model)?,
    };

    let estimate_k = config.estimate_nb_k && family.kind == FamilyKind::NegativeBinomial;
    let mut total_iter = 0;
    let outcome = loop {
        let outcome = newton(&model, config, beta)?;
        total_iter += outcome.iterations;
        if !estimate_k || !outcome.converged || total_iter >= 25 * config.max_iter {
            break outcome;
        }
        let mu = model.state(&outcome.beta, 1.0)?.mu;
        let k = moments_nb_k(frame, &mu)?;
        let old = family.ancillary.unwrap_or(0.0);
        if (k - old).abs() <= 1e-8 * (1.0 + k) {
            break outcome;
        }
        family = Family { ancillary: Some(k), ..family };
        model.family = family;
        beta = outcome.beta;
    };

    let state = model.state(&outcome.beta, 1.0)?;
    let phi = family
        .estimate_dispersion(frame.y.as_slice(), state.mu.as_slice(), &frame.weights, p)?
        .max(PHI_FLOOR);
    let final_state = model.state(&outcome.beta, phi)?;
    let (_, w0, we) = model.derivatives(&final_state.mu, phi)?;
    Ok(FitResult {
        neg_hessian: xt_diag_x(&frame.x, &w0),
        we_diag: we,
        beta: outcome.beta,
        eta: final_state.eta,
        mu: final_state.mu,
        phi,
        loglik: final_state.loglik,
        loglik_trace: outcome.trace,
        iterations: total_iter,
        converged: outcome.converged,
        family,
        link,
    })
}
