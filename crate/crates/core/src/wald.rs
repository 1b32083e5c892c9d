//! Wald F tests on groups of coefficients and per-coefficient inference.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::design::DesignSummary;
use crate::error::{Error, Result};
use crate::frame::ModelFrame;
use crate::linearization::VarianceComponents;
use crate::pmle::FitResult;
use crate::special::{beta_inc_complement, gamma_q};

/// Upper tail `P(F > f)` of Fisher's F with `(d1, d2)` degrees of freedom.
/// `d2 = ∞` gives the scaled chi-square limit.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f.is_nan() || f < 0.0 || !(d1 > 0.0 && d1.is_finite()) || !(d2 > 0.0) {
        return Err(Error::Domain(format!("F survival undefined at f={f}, d1={d1}, d2={d2}")));
    }
    if f == 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    if d2.is_infinite() {
        return Ok(gamma_q(0.5 * d1, 0.5 * d1 * f));
    }
    let denom = d2 + d1 * f;
    Ok(beta_inc_complement(0.5 * d2, 0.5 * d1, d2 / denom, d1 * f / denom))
}

/// Two-sided `P(|T| > |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    f_survival(t * t, 1.0, df)
}

/// `t` such that `P(|T| > t) = alpha`.
pub fn t_critical(alpha: f64, df: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut hi = 1.0;
    while t_two_sided_p(hi, df)? > alpha {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_two_sided_p(mid, df)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Denominator degrees-of-freedom rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DfMode {
    /// `n_psu − H`.
    #[default]
    Design,
    /// `Σw − rank`.
    SumWeights,
    Fixed(f64),
}

impl DfMode {
    pub fn ddf(self, design: &DesignSummary, rank: usize) -> Result<f64> {
        let ddf = match self {
            DfMode::Design => design.design_df(),
            DfMode::SumWeights => design.sum_weights - rank as f64,
            DfMode::Fixed(v) => v,
        };
        if ddf > 0.0 {
            Ok(ddf)
        } else {
            Err(Error::NonPositiveDf(ddf))
        }
    }
}

impl fmt::Display for DfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DfMode::Design => f.write_str("design"),
            DfMode::SumWeights => f.write_str("weights"),
            DfMode::Fixed(v) => write!(f, "fixed({v})"),
        }
    }
}

impl FromStr for DfMode {
    type Err = Error;

    /// `design`, `weights`, `fixed:<v>`, `fixed(<v>)`, `inf` or a bare number.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "design" => return Ok(DfMode::Design),
            "weights" | "paper" => return Ok(DfMode::SumWeights),
            _ => {}
        }
        let v = t
            .strip_prefix("fixed:")
            .or_else(|| t.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')))
            .unwrap_or(&t);
        match v.trim() {
            "inf" | "infinity" => Ok(DfMode::Fixed(f64::INFINITY)),
            num => num
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .map(DfMode::Fixed)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown df mode `{s}`"))),
        }
    }
}

/// `L` in `H₀: Lβ = 0`, one labelled row per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    pub l: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl ContrastMatrix {
    pub fn new(l: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if l.nrows() == 0 {
            return Err(Error::InvalidConfig("contrast needs at least one row".into()));
        }
        if labels.len() != l.nrows() {
            return Err(Error::DimensionMismatch("one label per contrast row".into()));
        }
        if let Some(i) = (0..l.nrows()).find(|&i| l.row(i).iter().all(|v| *v == 0.0)) {
            return Err(Error::InvalidConfig(format!("contrast row {} is all zero", i + 1)));
        }
        Ok(ContrastMatrix { l, labels })
    }

    /// Unit rows selecting the named coefficients. A name may also be a term
    /// label such as `C(educ)`, which expands to every column of that term.
    pub fn select(frame: &ModelFrame, names: &[&str]) -> Result<Self> {
        let mut cols = Vec::new();
        for name in names {
            let name = name.trim();
            if let Some(j) = frame.column_index(name) {
                cols.push(j);
            } else if let Some((_, range)) = frame.term_columns.iter().find(|(t, _)| t == name) {
                cols.extend(range.clone());
            } else {
                return Err(Error::UnknownColumn(name.to_string()));
            }
        }
        let p = frame.p();
        let l = DMatrix::from_fn(cols.len(), p, |i, j| if cols[i] == j { 1.0 } else { 0.0 });
        let labels = cols.iter().map(|&j| frame.column_labels[j].clone()).collect();
        Self::new(l, labels)
    }

    /// Parses rows of comma- or whitespace-separated numbers; `#` starts a comment.
    /// A row may carry a label before a colon: `educ: 0,0,1,0`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (label, body) = match line.split_once(':') {
                Some((l, b)) => (l.trim().to_string(), b),
                None => (format!("row{}", rows.len() + 1), line),
            };
            let row = body
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        message: format!("bad contrast entry `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("expected {} entries, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
            labels.push(label);
        }
        if rows.is_empty() {
            return Err(Error::InvalidConfig("contrast file has no rows".into()));
        }
        let l = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        Self::new(l, labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    pub f_stat: f64,
    /// `rank(L V̂ Lᵗ)`.
    pub ndf: usize,
    pub ddf: f64,
    pub p_value: f64,
    pub df_mode: DfMode,
}

/// Pseudoinverse and rank of a symmetric PSD matrix; eigenvalues at or below
/// `1e−12 · max |λ|` are treated as zero.
pub fn pinv_symmetric(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale;
    let n = m.nrows();
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if scale > 0.0 && lam > tol {
            let v = eig.eigenvectors.column(k);
            pinv += (&v * v.transpose()) / lam;
            rank += 1;
        }
    }
    (pinv, rank)
}

/// `F = (Lβ̂)ᵗ (L V̂ Lᵗ)⁺ (Lβ̂) / rank(L V̂ Lᵗ)`.
pub fn wald_test(
    beta: &DVector<f64>,
    vbeta: &DMatrix<f64>,
    contrast: &ContrastMatrix,
    df_mode: DfMode,
    design: &DesignSummary,
) -> Result<WaldResult> {
    let p = beta.len();
    let l = &contrast.l;
    if l.ncols() != p || vbeta.nrows() != p || vbeta.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "L is {}×{}, V̂ is {}×{}, β has {p} entries",
            l.nrows(),
            l.ncols(),
            vbeta.nrows(),
            vbeta.ncols()
        )));
    }
    let lb = l * beta;
    let middle = l * vbeta * l.transpose();
    let (pinv, rank) = pinv_symmetric(&middle);
    if rank == 0 {
        return Err(Error::SingularContrast);
    }
    let quad = (lb.transpose() * &pinv * &lb)[(0, 0)];
    let f_stat = (quad / rank as f64).max(0.0);
    let ddf = df_mode.ddf(design, rank)?;
    Ok(WaldResult {
        f_stat,
        ndf: rank,
        ddf,
        p_value: f_survival(f_stat, rank as f64, ddf)?,
        df_mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub rows: Vec<CoefficientRow>,
    pub ddf: f64,
    pub level: f64,
    pub critical: f64,
}

/// Estimates, linearization SEs, t statistics, p-values and confidence intervals
/// in design-matrix column order.
pub fn coefficient_table(
    fit: &FitResult,
    frame: &ModelFrame,
    vc: &VarianceComponents,
    design: &DesignSummary,
    level: f64,
    df_mode: DfMode,
) -> Result<CoefficientTable> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level {level} outside (0, 1)")));
    }
    let ddf = df_mode.ddf(design, 1)?;
    let critical = t_critical(1.0 - level, ddf)?;
    let se = vc.std_errors();
    let rows = (0..frame.p())
        .map(|j| {
            let est = fit.beta[j];
            let s = se[j];
            let (t, p) = if s > 0.0 {
                let t = est / s;
                (t, t_two_sided_p(t, ddf)?)
            } else if est == 0.0 {
                (0.0, 1.0)
            } else {
                (est.signum() * f64::INFINITY, 0.0)
            };
            Ok(CoefficientRow {
                label: frame.column_labels[j].clone(),
                estimate: est,
                std_error: s,
                t,
                p_value: p,
                ci_lower: est - critical * s,
                ci_upper: est + critical * s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoefficientTable { rows, ddf, level, critical })
}
