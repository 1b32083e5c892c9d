//! Model specifications and dense design matrices.
//!
//! Formula grammar:
//!
//! ```text
//! formula := name "~" rhs
//! rhs     := ["-"] term (("+" | "-") term)*
//! term    := "1" | "0" | name | "C(" name ["," "ref" "=" level] ")" | "center(" name ")"
//! ```
//!
//! `- 1` or `+ 0` drops the intercept. `level` is either a bare token or a
//! double-quoted string.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::design::{DesignSummary, SurveyDataset};
use crate::error::{Error, Result};

pub const INTERCEPT_LABEL: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Numeric(String),
    /// Dummy-coded factor; `None` reference means the first level in sort order.
    Categorical { column: String, reference: Option<String> },
    /// Numeric column minus its mean over the kept rows.
    Centered(String),
}

impl Term {
    pub fn column(&self) -> &str {
        match self {
            Term::Numeric(c) | Term::Centered(c) => c,
            Term::Categorical { column, .. } => column,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Term::Numeric(c) => c.clone(),
            Term::Centered(c) => format!("center({c})"),
            Term::Categorical { column, .. } => format!("C({column})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Subtract `Σwᵢxᵢ / Σwᵢ`.
    #[default]
    Weighted,
    /// Subtract the plain mean.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<Term>,
    pub intercept: bool,
    pub centering: Centering,
}

impl ModelSpec {
    pub fn new(response: impl Into<String>) -> Self {
        ModelSpec {
            response: response.into(),
            terms: Vec::new(),
            intercept: true,
            centering: Centering::Weighted,
        }
    }

    pub fn term(mut self, term: Term) -> Self {
        self.terms.push(term);
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    /// Parses `resp ~ 1 + x + C(g, ref=a) + center(age)`.
    pub fn parse(formula: &str) -> Result<Self> {
        FormulaParser { src: formula, pos: 0 }.formula()
    }

    fn validate(&self) -> Result<()> {
        if self.terms.iter().any(|t| t.column() == self.response) {
            return Err(Error::InvalidModel(format!(
                "response `{}` also appears as a term",
                self.response
            )));
        }
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            if !seen.insert(t.label()) {
                return Err(Error::InvalidModel(format!("term `{}` repeated", t.label())));
            }
        }
        if !self.intercept && self.terms.is_empty() {
            return Err(Error::InvalidModel("model has no columns".into()));
        }
        Ok(())
    }
}

struct FormulaParser<'a> {
    src: &'a str,
    pos: usize,
}

impl FormulaParser<'_> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Formula { offset: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn name(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '.' {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if start == self.pos {
            return self.err("expected a column name");
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn level(&mut self) -> Result<String> {
        self.skip_ws();
        if self.eat('"') {
            let start = self.pos;
            match self.src[start..].find('"') {
                Some(end) => {
                    self.pos = start + end + 1;
                    Ok(self.src[start..start + end].to_string())
                }
                None => self.err("unterminated string"),
            }
        } else {
            let start = self.pos;
            match self.src[start..].find(')') {
                Some(end) if end > 0 => {
                    self.pos = start + end;
                    Ok(self.src[start..start + end].trim().to_string())
                }
                _ => self.err("expected a reference level"),
            }
        }
    }

    fn formula(mut self) -> Result<ModelSpec> {
        let response = self.name()?;
        self.expect('~')?;
        let mut spec = ModelSpec::new(response);
        let mut negate = self.eat('-');
        loop {
            self.skip_ws();
            let at = self.pos;
            let name = self.name()?;
            match name.as_str() {
                "1" => spec.intercept = !negate,
                "0" if !negate => spec.intercept = false,
                "C" | "center" if self.eat('(') => {
                    let column = self.name()?;
                    let term = if name == "C" {
                        let reference = if self.eat(',') {
                            let key = self.name()?;
                            if key != "ref" {
                                return self.err("expected `ref=`");
                            }
                            self.expect('=')?;
                            Some(self.level()?)
                        } else {
                            None
                        };
                        Term::Categorical { column, reference }
                    } else {
                        Term::Centered(column)
                    };
                    self.expect(')')?;
                    if negate {
                        self.pos = at;
                        return self.err("only the intercept can be removed");
                    }
                    spec.terms.push(term);
                }
                _ => {
                    if negate {
                        self.pos = at;
                        return self.err("only the intercept can be removed");
                    }
                    spec.terms.push(Term::Numeric(name));
                }
            }
            self.skip_ws();
            if self.pos == self.src.len() {
                break;
            }
            negate = if self.eat('+') {
                false
            } else if self.eat('-') {
                true
            } else {
                return self.err("expected `+` or `-`");
            };
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Response, design matrix and aligned design vectors after listwise deletion.
#[derive(Debug, Clone)]
pub struct ModelFrame {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub column_labels: Vec<String>,
    /// Indices into the source dataset of the rows that survived deletion.
    pub kept_rows: Vec<usize>,
    pub weights: Vec<f64>,
    pub strata: Vec<String>,
    pub psus: Vec<String>,
    pub fpc: BTreeMap<String, f64>,
    /// Column ranges owned by each term, keyed by term label.
    pub term_columns: Vec<(String, Range<usize>)>,
}

impl ModelFrame {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn design_summary(&self) -> DesignSummary {
        DesignSummary::from_parts(&self.weights, &self.strata, &self.psus, &self.fpc)
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.column_labels.iter().position(|l| l == label)
    }

    /// Builds a frame directly from arrays; every row is kept.
    pub fn from_parts(
        y: DVector<f64>,
        x: DMatrix<f64>,
        column_labels: Vec<String>,
        weights: Vec<f64>,
        strata: Vec<String>,
        psus: Vec<String>,
        fpc: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || weights.len() != n || strata.len() != n || psus.len() != n {
            return Err(Error::DimensionMismatch("frame parts have unequal lengths".into()));
        }
        if column_labels.len() != x.ncols() {
            return Err(Error::DimensionMismatch("one label per column required".into()));
        }
        let term_columns = column_labels
            .iter()
            .enumerate()
            .map(|(j, l)| (l.clone(), j..j + 1))
            .collect();
        Ok(ModelFrame {
            y,
            x,
            column_labels,
            kept_rows: (0..n).collect(),
            weights,
            strata,
            psus,
            fpc,
            term_columns,
        })
    }

    /// Same frame with every weight multiplied by `c`.
    pub fn with_scaled_weights(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        out
    }
}

enum Resolved<'a> {
    Numeric(&'a [Option<f64>]),
    Factor(&'a [Option<String>]),
}

fn resolve<'a>(ds: &'a SurveyDataset, name: &str, numeric: bool) -> Result<Resolved<'a>> {
    let col = ds.column(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
    if numeric {
        col.values
            .as_deref()
            .map(Resolved::Numeric)
            .ok_or_else(|| Error::NotNumeric(name.to_string()))
    } else {
        Ok(Resolved::Factor(&col.cells))
    }
}

fn present(r: &Resolved<'_>, i: usize) -> bool {
    match r {
        Resolved::Numeric(v) => v[i].is_some(),
        Resolved::Factor(v) => v[i].is_some(),
    }
}

/// Builds the response vector and design matrix for `spec` over `ds`.
pub fn build_model_frame(ds: &SurveyDataset, spec: &ModelSpec) -> Result<ModelFrame> {
    spec.validate()?;
    let response = match resolve(ds, &spec.response, true)? {
        Resolved::Numeric(v) => v,
        Resolved::Factor(_) => unreachable!(),
    };
    let resolved: Vec<Resolved<'_>> = spec
        .terms
        .iter()
        .map(|t| resolve(ds, t.column(), !matches!(t, Term::Categorical { .. })))
        .collect::<Result<_>>()?;

    let kept_rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&i| response[i].is_some() && resolved.iter().all(|r| present(r, i)))
        .collect();
    if kept_rows.is_empty() {
        return Err(Error::AllRowsDropped);
    }
    let n = kept_rows.len();
    let weights: Vec<f64> = kept_rows.iter().map(|&i| ds.weights[i]).collect();

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut term_columns = Vec::new();
    if spec.intercept {
        columns.push(vec![1.0; n]);
        labels.push(INTERCEPT_LABEL.to_string());
        term_columns.push((INTERCEPT_LABEL.to_string(), 0..1));
    }

    for (term, r) in spec.terms.iter().zip(&resolved) {
        let start = columns.len();
        match (term, r) {
            (Term::Numeric(name), Resolved::Numeric(v)) => {
                columns.push(kept_rows.iter().map(|&i| v[i].unwrap()).collect());
                labels.push(name.clone());
            }
            (Term::Centered(_), Resolved::Numeric(v)) => {
                let raw: Vec<f64> = kept_rows.iter().map(|&i| v[i].unwrap()).collect();
                let mean = match spec.centering {
                    Centering::Weighted => {
                        raw.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>()
                            / weights.iter().sum::<f64>()
                    }
                    Centering::Unweighted => raw.iter().sum::<f64>() / n as f64,
                };
                columns.push(raw.iter().map(|x| x - mean).collect());
                labels.push(term.label());
            }
            (Term::Categorical { column, reference }, Resolved::Factor(v)) => {
                let observed: BTreeSet<&str> =
                    kept_rows.iter().map(|&i| v[i].as_deref().unwrap()).collect();
                let reference = match reference {
                    Some(level) => {
                        if !observed.contains(level.as_str()) {
                            return Err(Error::UnknownReferenceLevel {
                                column: column.clone(),
                                level: level.clone(),
                            });
                        }
                        level.as_str()
                    }
                    None => observed.iter().next().copied().unwrap(),
                };
                for level in observed.iter().filter(|l| **l != reference) {
                    columns.push(
                        kept_rows
                            .iter()
                            .map(|&i| if v[i].as_deref() == Some(*level) { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    labels.push(format!("{column}={level}"));
                }
            }
            _ => unreachable!("term kinds resolved above"),
        }
        term_columns.push((term.label(), start..columns.len()));
    }

    let mut unique = BTreeSet::new();
    for l in &labels {
        if !unique.insert(l) {
            return Err(Error::InvalidModel(format!("duplicate column label `{l}`")));
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidModel("model has no columns".into()));
    }

    let p = columns.len();
    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let y = DVector::from_iterator(n, kept_rows.iter().map(|&i| response[i].unwrap()));
    Ok(ModelFrame {
        y,
        x,
        column_labels: labels,
        weights,
        strata: kept_rows.iter().map(|&i| ds.strata[i].clone()).collect(),
        psus: kept_rows.iter().map(|&i| ds.psus[i].clone()).collect(),
        fpc: ds.fpc.clone(),
        kept_rows,
        term_columns,
    })
}
