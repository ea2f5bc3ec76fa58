//! Observed-data container, CSV ingestion and subgroup indexing.
//!
//! A [`TrialDataset`] holds one row per unit: outcome `y`, treatment `a`,
//! source `s` (1 = target trial, 0 = external), an integer subgroup code `v`
//! and the remaining covariates `xtilde`. Construction only checks structure
//! (equal lengths, binary indicators); [`TrialDataset::validate`] reports the
//! remaining invariants as data so callers can decide what to do with them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column mapping for CSV ingestion, read from a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub outcome: String,
    pub treatment: String,
    pub source: String,
    pub subgroup: String,
    /// Covariate columns. When absent every column not named above is used,
    /// in header order.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Immutable table of `(y, a, s, v, xtilde)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    y: Vec<f64>,
    a: Vec<u8>,
    s: Vec<u8>,
    v: Vec<i64>,
    xtilde: DMatrix<f64>,
    covariate_names: Vec<String>,
    subgroup_labels: BTreeMap<i64, String>,
}

impl TrialDataset {
    /// Builds a dataset, checking that all columns have the same length and
    /// that `a` and `s` are 0/1.
    pub fn new(
        y: Vec<f64>,
        a: Vec<u8>,
        s: Vec<u8>,
        v: Vec<i64>,
        xtilde: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if a.len() != n || s.len() != n || v.len() != n || xtilde.nrows() != n {
            return Err(Error::Shape(format!(
                "column lengths differ: y={}, a={}, s={}, v={}, xtilde rows={}",
                n,
                a.len(),
                s.len(),
                v.len(),
                xtilde.nrows()
            )));
        }
        for (name, col) in [("treatment", &a), ("source", &s)] {
            if let Some(row) = col.iter().position(|&x| x > 1) {
                return Err(Error::NonBinary {
                    column: name.into(),
                    row: row + 1,
                    value: col[row].to_string(),
                });
            }
        }
        let covariate_names = (0..xtilde.ncols()).map(|j| format!("x{}", j + 1)).collect();
        let subgroup_labels = v.iter().map(|&c| (c, c.to_string())).collect();
        Ok(Self { y, a, s, v, xtilde, covariate_names, subgroup_labels })
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::Shape(format!(
                "{} covariate names for {} columns",
                names.len(),
                self.p()
            )));
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn with_subgroup_labels(mut self, labels: BTreeMap<i64, String>) -> Self {
        self.subgroup_labels = labels;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.xtilde.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    pub fn v(&self) -> &[i64] {
        &self.v
    }

    pub fn xtilde(&self) -> &DMatrix<f64> {
        &self.xtilde
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn subgroup_labels(&self) -> &BTreeMap<i64, String> {
        &self.subgroup_labels
    }

    /// Subgroup codes present among trial units (`s = 1`), ascending.
    pub fn trial_subgroups(&self) -> Vec<i64> {
        let set: BTreeSet<i64> =
            self.v.iter().zip(&self.s).filter(|(_, &s)| s == 1).map(|(&v, _)| v).collect();
        set.into_iter().collect()
    }

    pub fn n_trial(&self) -> usize {
        self.s.iter().filter(|&&s| s == 1).count()
    }

    pub fn n_external(&self) -> usize {
        self.n() - self.n_trial()
    }

    /// Design matrix `[xtilde | v]` used by the default nuisance models.
    pub fn design(&self) -> DMatrix<f64> {
        let n = self.n();
        let p = self.p();
        DMatrix::from_fn(n, p + 1, |i, j| if j < p { self.xtilde[(i, j)] } else { self.v[i] as f64 })
    }

    /// Rows `idx` in the given order; indices may repeat.
    pub fn select(&self, idx: &[usize]) -> TrialDataset {
        let xtilde = DMatrix::from_fn(idx.len(), self.p(), |i, j| self.xtilde[(idx[i], j)]);
        TrialDataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            v: idx.iter().map(|&i| self.v[i]).collect(),
            xtilde,
            covariate_names: self.covariate_names.clone(),
            subgroup_labels: self.subgroup_labels.clone(),
        }
    }

    /// Returns every invariant violation; empty means the dataset is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let bad_y: Vec<usize> = (0..self.n()).filter(|&i| !self.y[i].is_finite()).collect();
        if !bad_y.is_empty() {
            out.push(Violation::new(Invariant::NonFinite { column: "outcome".into() }, bad_y));
        }
        let bad_x: Vec<usize> = (0..self.n())
            .filter(|&i| self.xtilde.row(i).iter().any(|x| !x.is_finite()))
            .collect();
        if !bad_x.is_empty() {
            out.push(Violation::new(Invariant::NonFinite { column: "covariates".into() }, bad_x));
        }
        for v in self.trial_subgroups() {
            for arm in [1u8, 0u8] {
                let present = (0..self.n())
                    .any(|i| self.s[i] == 1 && self.v[i] == v && self.a[i] == arm);
                if !present {
                    let rows = (0..self.n())
                        .filter(|&i| self.s[i] == 1 && self.v[i] == v)
                        .collect();
                    out.push(Violation::new(Invariant::EmptyTrialCell { a: arm, v }, rows));
                }
            }
        }
        out
    }

    /// Index sets for `{V=v, S=1}`, `{A=1, V=v}` and `{A=0, V=v}`.
    pub fn subgroup_masks(&self, target: &SubgroupTarget) -> Result<SubgroupMasks> {
        let masks = self.masks_unchecked(target.v);
        if masks.trial.is_empty() {
            return Err(Error::SubgroupNotFound(target.v));
        }
        Ok(masks)
    }

    /// Like `subgroup_masks` but allows an empty trial subgroup.
    pub(crate) fn masks_unchecked(&self, v: i64) -> SubgroupMasks {
        let trial = (0..self.n()).filter(|&i| self.v[i] == v && self.s[i] == 1).collect();
        let treated = (0..self.n()).filter(|&i| self.v[i] == v && self.a[i] == 1).collect();
        let control = (0..self.n()).filter(|&i| self.v[i] == v && self.a[i] == 0).collect();
        SubgroupMasks { n: self.n(), trial, treated, control }
    }

    pub fn target(&self, v: i64) -> Result<SubgroupTarget> {
        if !self.trial_subgroups().contains(&v) {
            return Err(Error::SubgroupNotFound(v));
        }
        let label = self.subgroup_labels.get(&v).cloned().unwrap_or_else(|| v.to_string());
        Ok(SubgroupTarget { v, label })
    }

    /// Loads and validates a CSV file.
    pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Self> {
        let file = File::open(path)?;
        let data = Self::read_csv(file, schema)?;
        let violations = data.validate();
        if violations.is_empty() {
            Ok(data)
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Parses CSV without running [`validate`](Self::validate).
    ///
    /// Row numbers in errors count data records from 1 (the header is not a
    /// row). Subgroup values that are not integers are treated as labels and
    /// mapped to codes `0, 1, ...` in sorted label order.
    pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let iy = find(&schema.outcome)?;
        let ia = find(&schema.treatment)?;
        let is = find(&schema.source)?;
        let iv = find(&schema.subgroup)?;
        let cov_names: Vec<String> = match &schema.covariates {
            Some(c) => c.clone(),
            None => headers
                .iter()
                .enumerate()
                .filter(|(j, _)| ![iy, ia, is, iv].contains(j))
                .map(|(_, h)| h.clone())
                .collect(),
        };
        let icov = cov_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

        let mut y = Vec::new();
        let mut a = Vec::new();
        let mut s = Vec::new();
        let mut v_raw = Vec::new();
        let mut x = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k + 1;
            let field = |j: usize| rec.get(j).unwrap_or("").trim();
            let num = |j: usize, col: &str| -> Result<f64> {
                field(j).parse::<f64>().map_err(|_| Error::Parse {
                    column: col.to_string(),
                    row,
                    value: field(j).to_string(),
                })
            };
            let binary = |j: usize, col: &str| -> Result<u8> {
                let value = num(j, col)?;
                if value == 0.0 {
                    Ok(0)
                } else if value == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::NonBinary { column: col.to_string(), row, value: field(j).into() })
                }
            };
            y.push(num(iy, &schema.outcome)?);
            a.push(binary(ia, &schema.treatment)?);
            s.push(binary(is, &schema.source)?);
            v_raw.push(field(iv).to_string());
            for (&j, name) in icov.iter().zip(&cov_names) {
                x.push(num(j, name)?);
            }
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("CSV has a header but no data rows".into()));
        }

        let (v, labels) = encode_subgroups(&v_raw);
        let n = y.len();
        let p = cov_names.len();
        let xtilde = DMatrix::from_row_slice(n, p, &x);
        Ok(Self::new(y, a, s, v, xtilde)?
            .with_covariate_names(cov_names)?
            .with_subgroup_labels(labels))
    }

    /// Writes the dataset with the column names of `schema`. Floats use the
    /// shortest representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &ColumnSchema) -> Result<()> {
        let cov_names = schema.covariates.clone().unwrap_or_else(|| self.covariate_names.clone());
        if cov_names.len() != self.p() {
            return Err(Error::Shape(format!(
                "schema names {} covariates, dataset has {}",
                cov_names.len(),
                self.p()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            schema.outcome.clone(),
            schema.treatment.clone(),
            schema.source.clone(),
            schema.subgroup.clone(),
        ];
        header.extend(cov_names);
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![
                self.y[i].to_string(),
                self.a[i].to_string(),
                self.s[i].to_string(),
                self.v[i].to_string(),
            ];
            rec.extend(self.xtilde.row(i).iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn encode_subgroups(raw: &[String]) -> (Vec<i64>, BTreeMap<i64, String>) {
    let ints: Option<Vec<i64>> = raw.iter().map(|r| parse_int(r)).collect();
    match ints {
        Some(v) => {
            let labels = v.iter().map(|&c| (c, c.to_string())).collect();
            (v, labels)
        }
        None => {
            let distinct: BTreeSet<&String> = raw.iter().collect();
            let code: BTreeMap<&String, i64> =
                distinct.into_iter().enumerate().map(|(k, l)| (l, k as i64)).collect();
            let v = raw.iter().map(|r| code[r]).collect();
            let labels = code.into_iter().map(|(l, c)| (c, l.clone())).collect();
            (v, labels)
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    if let Ok(i) = s.parse::<i64>() {
        return Some(i);
    }
    // "1.0" style codes written by numeric tools
    let f = s.parse::<f64>().ok()?;
    (f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

/// A pre-planned subgroup of interest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupTarget {
    pub v: i64,
    pub label: String,
}

impl SubgroupTarget {
    pub fn new(v: i64) -> Self {
        Self { v, label: v.to_string() }
    }
}

/// Materialized indicator sets for one subgroup. Indices are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgroupMasks {
    pub n: usize,
    /// `V = v` and `S = 1`.
    pub trial: Vec<usize>,
    /// `A = 1` and `V = v`, any source.
    pub treated: Vec<usize>,
    /// `A = 0` and `V = v`, any source.
    pub control: Vec<usize>,
}

impl SubgroupMasks {
    pub fn indicator(idx: &[usize], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &i in idx {
            out[i] = 1.0;
        }
        out
    }

    pub fn trial_indicator(&self) -> Vec<f64> {
        Self::indicator(&self.trial, self.n)
    }

    pub fn treated_indicator(&self) -> Vec<f64> {
        Self::indicator(&self.treated, self.n)
    }

    pub fn control_indicator(&self) -> Vec<f64> {
        Self::indicator(&self.control, self.n)
    }

    /// Sample proportion of `1(V=v, S=1)` over all `n` units.
    pub fn alpha_hat(&self) -> f64 {
        self.trial.len() as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Invariant {
    NonFinite { column: String },
    /// No trial unit in arm `a` of subgroup `v`.
    EmptyTrialCell { a: u8, v: i64 },
}

/// A violated dataset invariant with the offending 0-based unit indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub invariant: Invariant,
    pub rows: Vec<usize>,
}

impl Violation {
    fn new(invariant: Invariant, rows: Vec<usize>) -> Self {
        Self { invariant, rows }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.invariant {
            Invariant::NonFinite { column } => {
                write!(f, "non-finite {column} value at unit(s) {:?}", self.rows)
            }
            Invariant::EmptyTrialCell { a, v } => {
                write!(f, "trial cell (a={a}, v={v}, s=1) has no units")
            }
        }
    }
}

/// Overlap diagnostics for fitted treatment and source probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityDiagnostics {
    /// Smallest fitted treatment probability among external units (over all
    /// units when there are none).
    pub min_pi: f64,
    /// `max_i eta_i / pi_i`.
    pub max_ratio: f64,
    /// `max_i eta_i / (1 - pi_i)`.
    pub max_ratio_control: f64,
    #[serde(skip)]
    pi: Vec<f64>,
}

impl PositivityDiagnostics {
    pub fn new(data: &TrialDataset, pi: &[f64], eta: &[f64]) -> Self {
        let ext: Vec<f64> =
            (0..data.n()).filter(|&i| data.s()[i] == 0).map(|i| pi[i]).collect();
        let pool = if ext.is_empty() { pi.to_vec() } else { ext };
        let min_pi = pool.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ratio = eta.iter().zip(pi).map(|(e, p)| e / p).fold(f64::NEG_INFINITY, f64::max);
        let max_ratio_control =
            eta.iter().zip(pi).map(|(e, p)| e / (1.0 - p)).fold(f64::NEG_INFINITY, f64::max);
        Self { min_pi, max_ratio, max_ratio_control, pi: pi.to_vec() }
    }

    /// Number of units with fitted treatment probability below `threshold`.
    pub fn count_below(&self, threshold: f64) -> usize {
        self.pi.iter().filter(|&&p| p < threshold).count()
    }
}
