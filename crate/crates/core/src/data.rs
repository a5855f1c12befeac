//! Data model shared by every other module: the observed sample, candidate
//! parameter points, sign patterns of linear indices and Bernoulli
//! probability vectors.
//!
//! Row index `i` is the identity of an observation. Nothing in this crate
//! sorts, deduplicates or reweights rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Row-major `n × K` covariate matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::validation("n ≥ 1 required"));
        }
        let k = rows[0].as_ref().len();
        if k == 0 {
            return Err(Error::validation("K ≥ 1 required"));
        }
        let mut data = Vec::with_capacity(n * k);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            check_dim(k, row.len())?;
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite covariate at row {i}, column {}",
                    j + 1
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, k, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.k)
    }

    /// `X_i · v`, accumulated left to right.
    pub fn dot(&self, i: usize, v: &[f64]) -> f64 {
        dot(self.row(i), v)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Binary outcomes together with their covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    y: Vec<u8>,
    x: Covariates,
}

impl Sample {
    pub fn new(y: Vec<u8>, x: Covariates) -> Result<Self> {
        check_dim(x.n(), y.len())?;
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::validation(format!(
                "outcome at row {i} is {}, expected 0 or 1",
                y[i]
            )));
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn k(&self) -> usize {
        self.x.k()
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn x(&self) -> &Covariates {
        &self.x
    }
}

/// A candidate coefficient vector `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(b: Vec<f64>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::validation("parameter vector must be nonempty"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("parameter vector must be finite"));
        }
        Ok(Self(b))
    }

    /// `(sign, θ)` under the `|b_1| = 1` normalization.
    pub fn normalized_2d(sign: i8, theta: f64) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::validation("sign branch must be +1 or -1"));
        }
        Self::new(vec![f64::from(sign), theta])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

impl AsRef<[f64]> for ParamPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `sign(X_i · b)` for every observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignPattern(Vec<i8>);

impl SignPattern {
    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    /// `1{X_i · b ≥ 0}`
    pub fn r_upper(&self) -> Vec<bool> {
        self.0.iter().map(|&s| s >= 0).collect()
    }

    /// `1{X_i · b ≤ 0}`
    pub fn r_lower(&self) -> Vec<bool> {
        self.0.iter().map(|&s| s <= 0).collect()
    }

    pub fn has_zero(&self) -> bool {
        self.0.contains(&0)
    }
}

/// Sign of every linear index `X_i · b`. Zero means the computed dot product
/// is exactly `0.0`; no tolerance is applied.
pub fn sign_pattern(x: &Covariates, b: &[f64]) -> Result<SignPattern> {
    check_dim(x.k(), b.len())?;
    Ok(SignPattern(
        (0..x.n()).map(|i| sign_of(x.dot(i, b))).collect(),
    ))
}

pub(crate) fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v == 0.0 {
        0
    } else {
        -1
    }
}

/// Conditional success probabilities `p_i = P(Y_i = 1 | X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondProbs(Vec<f64>);

impl CondProbs {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(format!(
                "probability at row {i} is {}, expected a value in [0, 1]",
                p[i]
            )));
        }
        Ok(Self(p))
    }

    pub fn uniform_half(n: usize) -> Self {
        Self(vec![0.5; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reads a sample from CSV: a header row, an outcome column `y` and
/// covariate columns `x1..xK`. Other columns are ignored.
pub fn load_sample(path: impl AsRef<Path>) -> Result<Sample> {
    let table = read_table(path.as_ref(), true)?;
    Sample::new(table.y.unwrap_or_default(), table.x)
}

/// Reads only the covariate columns `x1..xK`.
pub fn load_covariates(path: impl AsRef<Path>) -> Result<Covariates> {
    Ok(read_table(path.as_ref(), false)?.x)
}

/// Reads a probability vector from the column `p`.
pub fn load_probs(path: impl AsRef<Path>) -> Result<CondProbs> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h.trim() == "p")
        .ok_or_else(|| Error::validation(format!("{}: no column named `p`", path.display())))?;
    let mut p = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |pos| pos.line());
        p.push(parse_field(path, line, &record, col)?);
    }
    if p.is_empty() {
        return Err(Error::validation("n ≥ 1 required"));
    }
    CondProbs::new(p)
}

struct Table {
    y: Option<Vec<u8>>,
    x: Covariates,
}

fn read_table(path: &Path, need_y: bool) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let y_col = headers.iter().position(|h| h.trim() == "y");
    if need_y && y_col.is_none() {
        return Err(Error::validation(format!(
            "{}: no outcome column named `y`",
            path.display()
        )));
    }
    let mut x_cols = Vec::new();
    for j in 1.. {
        let name = format!("x{j}");
        match headers.iter().position(|h| h.trim() == name) {
            Some(c) => x_cols.push(c),
            None => break,
        }
    }
    if x_cols.is_empty() {
        return Err(Error::validation(format!(
            "{}: no covariate columns x1..xK",
            path.display()
        )));
    }

    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => Error::Parse {
                path: path.to_path_buf(),
                line: pos.line(),
                message: e.to_string(),
            },
            None => Error::Csv(e),
        })?;
        let line = record.position().map_or(0, |pos| pos.line());
        if let (true, Some(c)) = (need_y, y_col) {
            let v = parse_field(path, line, &record, c)?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::validation(format!(
                    "{}: line {line}: outcome {v} is not 0 or 1",
                    path.display()
                )));
            }
            y.push(v as u8);
        }
        let row = x_cols
            .iter()
            .map(|&c| parse_field(path, line, &record, c))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::validation("n ≥ 1 required"));
    }
    Ok(Table {
        y: need_y.then_some(y),
        x: Covariates::from_rows(&rows)?,
    })
}

fn parse_field(path: &Path, line: u64, record: &csv::StringRecord, col: usize) -> Result<f64> {
    let raw = record.get(col).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing field {}", col + 1),
    })?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}
