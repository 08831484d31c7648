//! Observed-data structures, file ingestion, and structural validation.
//!
//! A [`Dataset`] holds n rows of (X, S, S·A, S·Y): covariates for everyone,
//! treatment and outcome only where the selection indicator S is 1 (the study
//! sample). Rows with S = 0 form the external sample and carry an explicit
//! absence mask for A and Y instead of sentinel values, so unobserved cells
//! can never silently enter arithmetic.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-role mapping for delimited text ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    pub selection: String,
}

/// Which slice of the data a [`SampleView`] exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    /// S = 1 rows.
    Study,
    /// S = 0 rows.
    External,
    /// All rows.
    Overall,
}

/// Counts of ignored cells encountered during construction: values supplied
/// for rows where S = 0 are dropped, not read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadWarnings {
    pub treatment_without_selection: usize,
    pub outcome_without_selection: usize,
}

/// Immutable observed-data container. Safe to share across threads once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    s: Vec<bool>,
    a: Vec<Option<usize>>,
    y: Vec<Option<f64>>,
    n_arms: usize,
    covariate_names: Vec<String>,
    arm_labels: Option<Vec<String>>,
    warnings: LoadWarnings,
}

impl Dataset {
    /// Builds and validates a dataset.
    ///
    /// `declared_arms`, when given, fixes the treatment arity K+1 and gates
    /// validation; otherwise arity is inferred as max observed A plus one.
    /// A or Y values supplied on S = 0 rows are dropped and counted in
    /// [`Dataset::warnings`].
    pub fn new(
        x: DMatrix<f64>,
        s: Vec<bool>,
        a: Vec<Option<usize>>,
        y: Vec<Option<f64>>,
        declared_arms: Option<usize>,
    ) -> Result<Self> {
        let mut d = Self::assemble(x, s, a, y, declared_arms)?;
        let report = validate_selection_pattern(&d);
        if let Some(err) = report.first_error() {
            return Err(err);
        }
        d.covariate_names = default_names(d.x.ncols());
        Ok(d)
    }

    /// Like [`Dataset::new`] but skips the selection-pattern validation.
    /// Intended for diagnostic construction of deliberately invalid data;
    /// estimators assume validated input.
    pub fn new_unchecked(
        x: DMatrix<f64>,
        s: Vec<bool>,
        a: Vec<Option<usize>>,
        y: Vec<Option<f64>>,
        declared_arms: Option<usize>,
    ) -> Result<Self> {
        let mut d = Self::assemble(x, s, a, y, declared_arms)?;
        d.covariate_names = default_names(d.x.ncols());
        Ok(d)
    }

    fn assemble(
        x: DMatrix<f64>,
        s: Vec<bool>,
        mut a: Vec<Option<usize>>,
        mut y: Vec<Option<f64>>,
        declared_arms: Option<usize>,
    ) -> Result<Self> {
        let n = x.nrows();
        if s.len() != n || a.len() != n || y.len() != n {
            return Err(Error::InconsistentColumns {
                what: format!(
                    "x has {n} rows, s/a/y have {}/{}/{}",
                    s.len(),
                    a.len(),
                    y.len()
                ),
            });
        }
        let mut warnings = LoadWarnings::default();
        for i in 0..n {
            if !s[i] {
                if a[i].take().is_some() {
                    warnings.treatment_without_selection += 1;
                }
                if y[i].take().is_some() {
                    warnings.outcome_without_selection += 1;
                }
            }
        }
        let inferred = a.iter().flatten().copied().max().map(|m| m + 1);
        let n_arms = declared_arms.or(inferred).unwrap_or(1);
        Ok(Dataset {
            x,
            s,
            a,
            y,
            n_arms,
            covariate_names: Vec::new(),
            arm_labels: None,
            warnings,
        })
    }

    pub fn with_arm_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_arms {
            return Err(Error::InconsistentColumns {
                what: format!("{} arm labels for {} arms", labels.len(), self.n_arms),
            });
        }
        self.arm_labels = Some(labels);
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return Err(Error::InconsistentColumns {
                what: format!("{} names for {} covariates", names.len(), self.x.ncols()),
            });
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Number of treatment arms, K + 1.
    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn arm_labels(&self) -> Option<&[String]> {
        self.arm_labels.as_deref()
    }

    pub fn selected(&self, row: usize) -> bool {
        self.s[row]
    }

    pub fn arm(&self, row: usize) -> Option<usize> {
        self.a[row]
    }

    pub fn outcome(&self, row: usize) -> Option<f64> {
        self.y[row]
    }

    pub fn warnings(&self) -> LoadWarnings {
        self.warnings
    }

    pub fn n_study(&self) -> usize {
        self.s.iter().filter(|&&v| v).count()
    }

    pub fn n_external(&self) -> usize {
        self.n() - self.n_study()
    }

    pub fn view(&self, selector: Selector) -> SampleView<'_> {
        let indices = (0..self.n())
            .filter(|&i| match selector {
                Selector::Study => self.s[i],
                Selector::External => !self.s[i],
                Selector::Overall => true,
            })
            .collect();
        SampleView {
            parent: self,
            selector,
            indices,
        }
    }

    /// Rows gathered with replacement into a new dataset (bootstrap support).
    /// Validation runs on the gathered rows, so a resample that loses an arm
    /// or stratum surfaces as an error.
    pub fn gather(&self, rows: &[usize]) -> Result<Dataset> {
        let p = self.n_covariates();
        let x = DMatrix::from_fn(rows.len(), p, |i, j| self.x[(rows[i], j)]);
        let s = rows.iter().map(|&r| self.s[r]).collect();
        let a = rows.iter().map(|&r| self.a[r]).collect();
        let y = rows.iter().map(|&r| self.y[r]).collect();
        let mut d = Dataset::new(x, s, a, y, Some(self.n_arms))?;
        d.covariate_names = self.covariate_names.clone();
        d.arm_labels = self.arm_labels.clone();
        Ok(d)
    }

    /// Writes the dataset as delimited text. Finite values round-trip
    /// bit-for-bit through [`load_dataset`]; absent cells are written empty.
    pub fn write<P: AsRef<Path>>(&self, path: P, delimiter: u8) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        let sep = delimiter as char;
        let mut header = self.covariate_names.join(&sep.to_string());
        for name in ["treatment", "outcome", "selection"] {
            header.push(sep);
            header.push_str(name);
        }
        writeln!(w, "{header}")?;
        for i in 0..self.n() {
            let mut line = String::new();
            for j in 0..self.n_covariates() {
                if j > 0 {
                    line.push(sep);
                }
                line.push_str(&format!("{}", self.x[(i, j)]));
            }
            line.push(sep);
            if let Some(arm) = self.a[i] {
                line.push_str(&format!("{arm}"));
            }
            line.push(sep);
            if let Some(y) = self.y[i] {
                line.push_str(&format!("{y}"));
            }
            line.push(sep);
            line.push_str(if self.s[i] { "1" } else { "0" });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// A read-only slice of a dataset by selection stratum.
#[derive(Debug, Clone)]
pub struct SampleView<'a> {
    parent: &'a Dataset,
    pub selector: Selector,
    indices: Vec<usize>,
}

impl<'a> SampleView<'a> {
    pub fn parent(&self) -> &'a Dataset {
        self.parent
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Structural validation result for the selection pattern.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub n_study: usize,
    pub n_external: usize,
    /// Observation count per arm among S = 1 rows.
    pub arm_counts: Vec<usize>,
    pub failures: Vec<String>,
    pub pass: bool,
}

impl ValidationReport {
    fn first_error(&self) -> Option<Error> {
        if self.pass {
            return None;
        }
        // Re-derive the first structural failure as a typed error.
        if self.n < 2 {
            return Some(Error::TooFewRows {
                n: self.n,
                min: 2,
            });
        }
        if self.n_study == 0 {
            return Some(Error::NoStudyRows);
        }
        if let Some(arm) = self.arm_counts.iter().position(|&c| c == 0) {
            return Some(Error::EmptyArm { arm });
        }
        Some(Error::InconsistentColumns {
            what: self.failures.join("; "),
        })
    }
}

/// Checks the [`Dataset`] invariants and reports arm and stratum counts.
/// Construction via [`Dataset::new`] enforces a passing report; this runs
/// standalone on unchecked data.
pub fn validate_selection_pattern(d: &Dataset) -> ValidationReport {
    let n = d.n();
    let mut failures = Vec::new();
    let mut arm_counts = vec![0usize; d.n_arms()];
    let mut n_study = 0usize;
    for i in 0..n {
        if d.selected(i) {
            n_study += 1;
            match (d.arm(i), d.outcome(i)) {
                (Some(arm), Some(y)) => {
                    if arm >= d.n_arms() {
                        failures.push(format!("row {i}: arm {arm} out of range"));
                    } else {
                        arm_counts[arm] += 1;
                    }
                    if !y.is_finite() {
                        failures.push(format!("row {i}: non-finite outcome"));
                    }
                }
                _ => failures.push(format!("row {i}: study row missing treatment or outcome")),
            }
        }
    }
    if n < 2 {
        failures.push(format!("need at least 2 rows, found {n}"));
    }
    if n_study == 0 {
        failures.push("no study rows".to_string());
    } else {
        for (arm, &count) in arm_counts.iter().enumerate() {
            if count == 0 {
                failures.push(format!("EmptyArm({arm})"));
            }
        }
    }
    if d.x().iter().any(|v| !v.is_finite()) {
        failures.push("non-finite covariate entries".to_string());
    }
    ValidationReport {
        n,
        n_study,
        n_external: n - n_study,
        arm_counts,
        pass: failures.is_empty(),
        failures,
    }
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Loads a delimited text file with a header row into a [`Dataset`].
///
/// Numeric parsing is strict (`str::parse::<f64>` on trimmed cells, no
/// locale handling); empty cells mean absent values. S = 0 rows may leave
/// treatment and outcome empty; populated cells there are ignored with a
/// warning count in the dataset metadata.
pub fn load_dataset<P: AsRef<Path>>(
    path: P,
    schema: &ColumnSchema,
    delimiter: u8,
    declared_arms: Option<usize>,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                name: name.to_string(),
            })
    };
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let a_idx = col_index(&schema.treatment)?;
    let y_idx = col_index(&schema.outcome)?;
    let s_idx = col_index(&schema.selection)?;

    let mut x_rows: Vec<f64> = Vec::new();
    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, &ci) in cov_idx.iter().enumerate() {
            let cell = record.get(ci).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::MalformedValue {
                row,
                col: schema.covariates[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCovariate {
                    row,
                    col: schema.covariates[j].clone(),
                });
            }
            x_rows.push(v);
        }
        let s_cell = record.get(s_idx).unwrap_or("").trim();
        let selected = match s_cell {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::MalformedValue {
                    row,
                    col: schema.selection.clone(),
                    value: other.to_string(),
                })
            }
        };
        s.push(selected);
        let a_cell = record.get(a_idx).unwrap_or("").trim();
        if a_cell.is_empty() {
            a.push(None);
        } else {
            let arm: i64 = a_cell.parse().map_err(|_| Error::MalformedValue {
                row,
                col: schema.treatment.clone(),
                value: a_cell.to_string(),
            })?;
            let max_arm = declared_arms.map(|m| m - 1).unwrap_or(usize::MAX);
            if arm < 0 || (arm as usize) > max_arm {
                return Err(Error::TreatmentOutOfRange { row, arm, max_arm });
            }
            a.push(Some(arm as usize));
        }
        let y_cell = record.get(y_idx).unwrap_or("").trim();
        if y_cell.is_empty() {
            y.push(None);
        } else {
            let v: f64 = y_cell.parse().map_err(|_| Error::MalformedValue {
                row,
                col: schema.outcome.clone(),
                value: y_cell.to_string(),
            })?;
            y.push(Some(v));
        }
    }
    let n = s.len();
    let p = cov_idx.len();
    let x = DMatrix::from_row_slice(n, p, &x_rows);
    let d = Dataset::new(x, s, a, y, declared_arms)?;
    d.with_covariate_names(schema.covariates.clone())
}
