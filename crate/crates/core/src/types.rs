//! Shared domain types: sparse datasets, parameter vectors and run traces.

use crate::error::{DrlError, Result};
use crate::rng::RngState;

/// Borrowed view of one sparse row.
#[derive(Debug, Clone, Copy)]
pub struct SparseRow<'a> {
    pub indices: &'a [u32],
    pub values: &'a [f64],
}

impl SparseRow<'_> {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&j, &v)| v * dense[j as usize])
            .sum()
    }

    /// `out += scale * x`
    pub fn axpy_into(&self, scale: f64, out: &mut [f64]) {
        for (&j, &v) in self.indices.iter().zip(self.values) {
            out[j as usize] += scale * v;
        }
    }

    pub fn to_dense(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d];
        self.axpy_into(1.0, &mut out);
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Row-major (CSR) sparse feature matrix with ±1 labels.
///
/// Rows are the finite support of the empirical distribution. Exact zeros are
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    n_features: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from CSR arrays, validating every invariant.
    pub fn from_csr(
        name: impl Into<String>,
        n_features: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(DrlError::invalid("dataset needs at least one feature"));
        }
        if labels.is_empty() {
            return Err(DrlError::invalid("dataset needs at least one row"));
        }
        if row_ptr.len() != labels.len() + 1 || row_ptr[0] != 0 {
            return Err(DrlError::invalid("row pointer does not match label count"));
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != values.len() {
            return Err(DrlError::invalid("column/value arrays do not match row pointer"));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(DrlError::invalid(format!(
                "label {} at row {i} is not -1 or +1",
                labels[i]
            )));
        }
        for (i, w) in row_ptr.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(DrlError::invalid("row pointer is not monotone"));
            }
            let cols = &col_idx[w[0]..w[1]];
            if cols.windows(2).any(|c| c[1] <= c[0]) {
                return Err(DrlError::invalid(format!(
                    "row {i}: column indices are not strictly increasing"
                )));
            }
            if cols.last().is_some_and(|&c| c as usize >= n_features) {
                return Err(DrlError::invalid(format!(
                    "row {i}: column index out of range for d = {n_features}"
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(DrlError::invalid(format!("non-finite feature value {v}")));
        }
        Ok(Self {
            name: name.into(),
            n_features,
            row_ptr,
            col_idx,
            values,
            labels,
        })
    }

    /// Builds a dataset from dense rows, dropping exact zeros.
    pub fn from_dense(name: impl Into<String>, rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut builder = DatasetBuilder::new(d);
        for (row, &y) in rows.iter().zip(&labels) {
            if row.len() != d {
                return Err(DrlError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            builder.push_dense(row, y);
        }
        if rows.len() != labels.len() {
            return Err(DrlError::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        builder.finish(name)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> SparseRow<'_> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        SparseRow {
            indices: &self.col_idx[a..b],
            values: &self.values[a..b],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (SparseRow<'_>, f64)> + '_ {
        (0..self.n_rows()).map(move |i| (self.row(i), self.labels[i]))
    }

    /// New dataset holding the given rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            let r = self.row(i);
            col_idx.extend_from_slice(r.indices);
            values.extend_from_slice(r.values);
            row_ptr.push(values.len());
            labels.push(self.labels[i]);
        }
        Dataset {
            name: self.name.clone(),
            n_features: self.n_features,
            row_ptr,
            col_idx,
            values,
            labels,
        }
    }

    /// Same rows with every label negated.
    pub fn flipped_labels(&self) -> Dataset {
        let mut out = self.clone();
        out.labels.iter_mut().for_each(|y| *y = -*y);
        out
    }
}

/// Incremental CSR construction used by the loaders and generators.
#[derive(Debug, Clone)]
pub struct DatasetBuilder {
    n_features: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl DatasetBuilder {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push_dense(&mut self, row: &[f64], label: f64) {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.col_idx.push(j as u32);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.values.len());
        self.labels.push(label);
    }

    /// Appends a sparse row given as (0-based column, value) pairs in
    /// increasing column order.
    pub fn push_sparse(&mut self, entries: &[(u32, f64)], label: f64) {
        for &(j, v) in entries {
            if v != 0.0 {
                self.col_idx.push(j);
                self.values.push(v);
            }
        }
        self.row_ptr.push(self.values.len());
        self.labels.push(label);
    }

    pub fn set_n_features(&mut self, d: usize) {
        self.n_features = d;
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn finish(self, name: impl Into<String>) -> Result<Dataset> {
        Dataset::from_csr(
            name,
            self.n_features,
            self.row_ptr,
            self.col_idx,
            self.values,
            self.labels,
        )
    }
}

/// Parameter vector `θ` of a linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    /// Uniform on `[-1, 1]^d`.
    pub fn random_uniform(d: usize, rng: &mut RngState) -> Self {
        Self((0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, data: &Dataset) -> Result<()> {
        if self.dim() != data.n_features() {
            return Err(DrlError::DimensionMismatch {
                expected: data.n_features(),
                got: self.dim(),
            });
        }
        Ok(())
    }

    /// `θ ← θ - step * g`
    pub fn step(&mut self, step: f64, g: &[f64]) {
        for (t, gi) in self.0.iter_mut().zip(g) {
            *t -= step * gi;
        }
    }
}

/// One evaluation point of an optimizer run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cumulative_samples: u64,
    pub wall_clock_s: f64,
    pub train_robust_loss_estimate: f64,
    pub test_misclassification: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub const CSV_HEADER: &'static str =
        "iteration,cumulative_samples,wall_clock_s,train_robust_loss_estimate,test_misclassification";

    /// Appends a record, enforcing the ordering invariants.
    pub fn push(&mut self, rec: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.iteration <= last.iteration {
                return Err(DrlError::invalid("trace iterations must increase"));
            }
            if rec.cumulative_samples < last.cumulative_samples {
                return Err(DrlError::invalid("trace sample counts must not decrease"));
            }
        }
        if !(0.0..=1.0).contains(&rec.test_misclassification) {
            return Err(DrlError::invalid("misclassification outside [0, 1]"));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.iteration,
                r.cumulative_samples,
                r.wall_clock_s,
                r.train_robust_loss_estimate,
                r.test_misclassification
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let mut trace = RunTrace::default();
        for rec in reader.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i)
                    .ok_or_else(|| DrlError::invalid(format!("trace row missing column {i}")))
            };
            let num = |i: usize| -> Result<f64> {
                field(i)?
                    .parse::<f64>()
                    .map_err(|e| DrlError::invalid(format!("trace column {i}: {e}")))
            };
            trace.push(TraceRecord {
                iteration: field(0)?
                    .parse()
                    .map_err(|e| DrlError::invalid(format!("trace iteration: {e}")))?,
                cumulative_samples: field(1)?
                    .parse()
                    .map_err(|e| DrlError::invalid(format!("trace samples: {e}")))?,
                wall_clock_s: num(2)?,
                train_robust_loss_estimate: num(3)?,
                test_misclassification: num(4)?,
            })?;
        }
        Ok(trace)
    }
}

/// Random disjoint train/test partition; the test part has
/// `round(test_fraction * N)` rows.
pub fn split_train_test(
    data: &Dataset,
    test_fraction: f64,
    rng: &mut RngState,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DrlError::invalid(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = data.n_rows();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DrlError::DegenerateSplit {
            train: n.saturating_sub(n_test),
            test: n_test,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        perm.swap(i, j);
    }
    let (test_idx, train_idx) = perm.split_at(n_test);
    Ok((data.subset(train_idx), data.subset(test_idx)))
}
