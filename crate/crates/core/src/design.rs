//! Survey data model and CSV ingestion.
//!
//! A dataset is a table of named columns plus the four design vectors: case
//! weights, stratum labels, PSU labels and a per-stratum sampling fraction.
//! Cells that are empty or `.` are missing. A column is numeric when every
//! non-missing cell parses as a real number, unless the caller forces it to be
//! categorical.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Names of the design columns. Any binding left as `None` falls back to the
/// IID default: unit weights, one stratum `"0"`, one PSU per row, `f = 0`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DesignBindings {
    pub weight: Option<String>,
    pub stratum: Option<String>,
    pub psu: Option<String>,
    pub fpc: Option<String>,
    /// Columns to treat as categorical even when every cell is numeric.
    pub categorical: Vec<String>,
}

impl DesignBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn weight(mut self, name: impl Into<String>) -> Self {
        self.weight = Some(name.into());
        self
    }

    pub fn stratum(mut self, name: impl Into<String>) -> Self {
        self.stratum = Some(name.into());
        self
    }

    pub fn psu(mut self, name: impl Into<String>) -> Self {
        self.psu = Some(name.into());
        self
    }

    pub fn fpc(mut self, name: impl Into<String>) -> Self {
        self.fpc = Some(name.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// Raw cell text, `None` where missing.
    pub cells: Vec<Option<String>>,
    /// Parsed values when the column is numeric.
    pub values: Option<Vec<Option<f64>>>,
}

impl Column {
    pub fn is_numeric(&self) -> bool {
        self.values.is_some()
    }
}

/// Validated survey dataset. Immutable after loading.
#[derive(Debug, Clone)]
pub struct SurveyDataset {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    pub weights: Vec<f64>,
    pub strata: Vec<String>,
    pub psus: Vec<String>,
    /// Sampling fraction `f_h` per stratum label.
    pub fpc: BTreeMap<String, f64>,
    pub bindings: DesignBindings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    pub label: String,
    /// Number of PSUs `n_h`.
    pub n_psu: usize,
    pub n_obs: usize,
    pub fpc: f64,
    pub sum_weights: f64,
}

/// Counts derived from the design vectors. Strata are ordered by label.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    pub strata: Vec<StratumSummary>,
    pub n: usize,
    pub n_psu: usize,
    pub sum_weights: f64,
}

impl DesignSummary {
    /// Number of strata `H`.
    pub fn h(&self) -> usize {
        self.strata.len()
    }

    /// PSU counts `n_h` in stratum order.
    pub fn psus_per_stratum(&self) -> Vec<usize> {
        self.strata.iter().map(|s| s.n_psu).collect()
    }

    /// Design degrees of freedom `n_psu − H`.
    pub fn design_df(&self) -> f64 {
        self.n_psu as f64 - self.h() as f64
    }

    /// Summarizes aligned design vectors.
    pub fn from_parts(
        weights: &[f64],
        strata: &[String],
        psus: &[String],
        fpc: &BTreeMap<String, f64>,
    ) -> Self {
        let mut per: BTreeMap<&str, (BTreeMap<&str, ()>, usize, f64)> = BTreeMap::new();
        for ((w, h), p) in weights.iter().zip(strata).zip(psus) {
            let e = per.entry(h.as_str()).or_default();
            e.0.insert(p.as_str(), ());
            e.1 += 1;
            e.2 += w;
        }
        let strata: Vec<StratumSummary> = per
            .into_iter()
            .map(|(label, (psus, n_obs, sw))| StratumSummary {
                label: label.to_string(),
                n_psu: psus.len(),
                n_obs,
                fpc: fpc.get(label).copied().unwrap_or(0.0),
                sum_weights: sw,
            })
            .collect();
        DesignSummary {
            n: weights.len(),
            n_psu: strata.iter().map(|s| s.n_psu).sum(),
            sum_weights: weights.iter().sum(),
            strata,
        }
    }
}

fn csv_error(err: csv::Error) -> Error {
    match err.position() {
        Some(pos) => {
            let line = pos.line() as usize;
            let message = match err.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    format!("expected {expected_len} fields, found {len}")
                }
                _ => err.to_string(),
            };
            Error::Parse { line, message }
        }
        None => Error::Csv(err),
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "."
}

impl SurveyDataset {
    /// Reads a comma-separated table with a header row and validates the design.
    pub fn from_reader<R: Read>(source: R, bindings: &DesignBindings) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
        let mut seen = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if h.is_empty() {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("header field {} is empty", i + 1),
                });
            }
            if seen.insert(h.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("duplicate column name `{h}`"),
                });
            }
        }

        let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
        let mut lines = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            for (col, cell) in cells.iter_mut().zip(record.iter()) {
                col.push(if is_missing(cell) { None } else { Some(cell.to_string()) });
            }
            lines.push(line);
        }
        if lines.is_empty() {
            return Err(Error::EmptyData);
        }

        let columns = headers
            .into_iter()
            .zip(cells)
            .map(|(name, cells)| {
                let forced = bindings.categorical.iter().any(|c| c == &name);
                let values = if forced {
                    None
                } else {
                    cells
                        .iter()
                        .map(|c| match c {
                            None => Some(None),
                            Some(s) => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
                        })
                        .collect::<Option<Vec<_>>>()
                };
                Column { name, cells, values }
            })
            .collect();
        for forced in &bindings.categorical {
            if !seen.contains_key(forced) {
                return Err(Error::MissingColumn(forced.clone()));
            }
        }
        Self::from_columns(columns, bindings, &lines)
    }

    pub fn from_path(path: impl AsRef<Path>, bindings: &DesignBindings) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::Parse {
            line: 0,
            message: format!("cannot open {}: {e}", path.as_ref().display()),
        })?;
        Self::from_reader(std::io::BufReader::new(file), bindings)
    }

    fn from_columns(columns: Vec<Column>, bindings: &DesignBindings, lines: &[usize]) -> Result<Self> {
        let n = lines.len();
        let index: HashMap<String, usize> =
            columns.iter().enumerate().map(|(i, c)| (c.name.clone(), i)).collect();
        let bound = |name: &Option<String>| -> Result<Option<&Column>> {
            match name {
                None => Ok(None),
                Some(n) => index
                    .get(n)
                    .map(|&i| Some(&columns[i]))
                    .ok_or_else(|| Error::MissingColumn(n.clone())),
            }
        };
        let weight_col = bound(&bindings.weight)?;
        let stratum_col = bound(&bindings.stratum)?;
        let psu_col = bound(&bindings.psu)?;
        let fpc_col = bound(&bindings.fpc)?;

        let weights = match weight_col {
            None => vec![1.0; n],
            Some(col) => col
                .cells
                .iter()
                .zip(lines)
                .map(|(cell, &line)| {
                    let text = cell.as_deref().unwrap_or(".");
                    match text.parse::<f64>() {
                        Ok(w) if w.is_finite() && w > 0.0 => Ok(w),
                        _ => Err(Error::BadWeight { line, value: text.to_string() }),
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };

        let labels = |col: Option<&Column>, default: &dyn Fn(usize) -> String| -> Result<Vec<String>> {
            match col {
                None => Ok((0..n).map(default).collect()),
                Some(c) => c
                    .cells
                    .iter()
                    .zip(lines)
                    .map(|(cell, &line)| {
                        cell.clone().ok_or_else(|| Error::MissingDesignValue {
                            line,
                            column: c.name.clone(),
                        })
                    })
                    .collect(),
            }
        };
        let strata = labels(stratum_col, &|_| "0".to_string())?;
        let psus = labels(psu_col, &|i| (i + 1).to_string())?;

        let mut psu_home: HashMap<&str, &str> = HashMap::new();
        for (p, h) in psus.iter().zip(&strata) {
            if let Some(&first) = psu_home.get(p.as_str()) {
                if first != h {
                    return Err(Error::PsuStratumConflict {
                        psu: p.clone(),
                        first: first.to_string(),
                        second: h.clone(),
                    });
                }
            } else {
                psu_home.insert(p, h);
            }
        }

        let mut fpc = BTreeMap::new();
        for h in &strata {
            fpc.entry(h.clone()).or_insert(0.0);
        }
        if let Some(col) = fpc_col {
            let mut given: BTreeMap<&str, f64> = BTreeMap::new();
            for ((cell, h), &line) in col.cells.iter().zip(&strata).zip(lines) {
                let text = cell.as_deref().unwrap_or(".");
                let f = match text.parse::<f64>() {
                    Ok(f) if (0.0..1.0).contains(&f) => f,
                    _ => return Err(Error::BadFpc { line, value: text.to_string() }),
                };
                match given.get(h.as_str()) {
                    Some(&prev) if prev != f => {
                        return Err(Error::FpcConflict {
                            stratum: h.clone(),
                            first: prev,
                            second: f,
                        })
                    }
                    _ => {
                        given.insert(h, f);
                    }
                }
            }
            for (h, f) in given {
                fpc.insert(h.to_string(), f);
            }
        }

        Ok(SurveyDataset {
            columns,
            index,
            weights,
            strata,
            psus,
            fpc,
            bindings: bindings.clone(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.weights.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index.get(name).map(|&i| &self.columns[i])
    }

    pub fn fpc_of(&self, stratum: &str) -> f64 {
        self.fpc.get(stratum).copied().unwrap_or(0.0)
    }

    pub fn design_summary(&self) -> DesignSummary {
        DesignSummary::from_parts(&self.weights, &self.strata, &self.psus, &self.fpc)
    }

    /// Writes every column back out as CSV; missing cells become empty fields.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(sink);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n_rows() {
            wtr.write_record(self.columns.iter().map(|c| c.cells[i].as_deref().unwrap_or("")))?;
        }
        wtr.flush().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
        Ok(())
    }
}
