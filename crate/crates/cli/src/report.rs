//! Fit reports and their text, JSON and CSV renderings.

use std::fmt::Write as _;

use serde::Serialize;

pub const SCHEMA: &str = "svyglm.report/1";

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub input: InputInfo,
    pub model: ModelInfo,
    pub design: DesignInfo,
    pub fit: FitInfo,
    /// Absent when the fit did not converge.
    pub inference: Option<InferenceInfo>,
    pub coefficients: Vec<CoefInfo>,
    /// Linearization covariance in coefficient order.
    pub vcov: Option<Vec<Vec<f64>>>,
    /// Why the variance section is missing from a converged fit.
    pub variance_note: Option<String>,
    pub tests: Vec<TestInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputInfo {
    pub data: String,
    pub rows_read: usize,
    pub rows_used: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub formula: String,
    pub response: String,
    pub family: String,
    pub link: String,
    pub nb_k: Option<f64>,
    pub dispersion_rule: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumInfo {
    pub label: String,
    pub n_psu: usize,
    pub n_obs: usize,
    pub fpc: f64,
    pub sum_weights: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignInfo {
    pub n: usize,
    pub n_strata: usize,
    pub n_psu: usize,
    pub sum_weights: f64,
    pub df_design: f64,
    pub singleton: String,
    pub small_sample: String,
    pub strata: Vec<StratumInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitInfo {
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub dispersion: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceInfo {
    pub df_mode: String,
    pub ddf: f64,
    pub level: f64,
    pub t_critical: f64,
    /// Name of the `exp(β)` column, when the link gives it a ratio meaning.
    pub exp_label: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefInfo {
    pub label: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub t: Option<f64>,
    pub p_value: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub exp_estimate: Option<f64>,
    pub exp_ci_lower: Option<f64>,
    pub exp_ci_upper: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestInfo {
    pub label: String,
    pub rows: Vec<String>,
    pub f: f64,
    pub ndf: usize,
    pub ddf: f64,
    pub p_value: f64,
    pub df_mode: String,
}

/// `%g`-style rendering with six significant digits.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = format!("{v:.5e}");
    let (mantissa, e) = exp.split_once('e').expect("exponent form");
    let e: i32 = e.parse().expect("integer exponent");
    if !(-5..6).contains(&e) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (5 - e).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_else(|| "-".into())
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Survey-weighted GLM ({SCHEMA})");
        let _ = writeln!(
            s,
            "Data:       {} ({} rows read, {} used)",
            self.input.data, self.input.rows_read, self.input.rows_used
        );
        let _ = writeln!(s, "Model:      {}", self.model.formula);
        let k = self.model.nb_k.map(|k| format!(", k = {}", sig6(k))).unwrap_or_default();
        let _ = writeln!(s, "Family:     {}{k}, link {}", self.model.family, self.model.link);
        let d = &self.design;
        let _ = writeln!(
            s,
            "Design:     {} strata, {} PSUs, {} observations, sum of weights {}",
            d.n_strata,
            d.n_psu,
            d.n,
            sig6(d.sum_weights)
        );
        let _ = writeln!(
            s,
            "Variance:   linearization, design df {}, singleton strata: {}, small-sample factor: {}",
            sig6(d.df_design),
            d.singleton,
            d.small_sample
        );
        let f = &self.fit;
        let _ = writeln!(
            s,
            "Converged:  {} after {} iterations",
            if f.converged { "yes" } else { "NO" },
            f.iterations
        );
        let _ = writeln!(s, "Log pseudo-likelihood: {}", sig6(f.loglik));
        let _ = writeln!(s, "Dispersion: {} ({})", sig6(f.dispersion), self.model.dispersion_rule);

        if let Some(note) = &self.variance_note {
            let _ = writeln!(s, "Note:       {note}");
        }
        let exp_label = self.inference.as_ref().and_then(|i| i.exp_label.clone());
        if let Some(inf) = &self.inference {
            let _ = writeln!(
                s,
                "Inference:  t reference with {} df ({}), {}% intervals",
                sig6(inf.ddf),
                inf.df_mode,
                sig6(100.0 * inf.level)
            );
        }
        let _ = writeln!(s);
        let mut header = vec!["Coefficient", "Estimate", "Std.Err", "t", "p", "CI low", "CI high"];
        if let Some(l) = &exp_label {
            header.extend([l.as_str(), "low", "high"]);
        }
        let rows: Vec<Vec<String>> = self
            .coefficients
            .iter()
            .map(|c| {
                let mut r = vec![
                    c.label.clone(),
                    sig6(c.estimate),
                    opt(c.std_error),
                    opt(c.t),
                    opt(c.p_value),
                    opt(c.ci_lower),
                    opt(c.ci_upper),
                ];
                if exp_label.is_some() {
                    r.extend([opt(c.exp_estimate), opt(c.exp_ci_lower), opt(c.exp_ci_upper)]);
                }
                r
            })
            .collect();
        table(&mut s, &header, &rows);

        if !self.tests.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Wald tests:");
            let rows: Vec<Vec<String>> = self
                .tests
                .iter()
                .map(|t| {
                    vec![
                        t.label.clone(),
                        sig6(t.f),
                        t.ndf.to_string(),
                        sig6(t.ddf),
                        sig6(t.p_value),
                    ]
                })
                .collect();
            table(&mut s, &["Test", "F", "ndf", "ddf", "p"], &rows);
        }
        s
    }

    /// One row per coefficient (`kind = coef`) and per Wald test (`kind = wald`).
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "kind", "label", "estimate", "std_error", "statistic", "df1", "df2", "p_value",
            "ci_lower", "ci_upper", "exp_estimate", "exp_ci_lower", "exp_ci_upper",
        ])?;
        let ddf = self.inference.as_ref().map(|i| i.ddf);
        for c in &self.coefficients {
            w.write_record([
                "coef".to_string(),
                c.label.clone(),
                c.estimate.to_string(),
                num(c.std_error),
                num(c.t),
                String::new(),
                num(ddf),
                num(c.p_value),
                num(c.ci_lower),
                num(c.ci_upper),
                num(c.exp_estimate),
                num(c.exp_ci_lower),
                num(c.exp_ci_upper),
            ])?;
        }
        for t in &self.tests {
            w.write_record([
                "wald".to_string(),
                t.label.clone(),
                String::new(),
                String::new(),
                t.f.to_string(),
                t.ndf.to_string(),
                t.ddf.to_string(),
                t.p_value.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}
