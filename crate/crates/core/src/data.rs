//! Dataset ingestion and synthetic workloads.
//!
//! Two on-disk formats are supported, both read transparently through gzip:
//!
//! * LIBSVM text, `<label> <index>:<value> ...` with 1-based indices;
//! * dense CSV with a configurable label column and an optional header.
//!
//! Labels may be given as `{0, 1}` or `{-1, +1}` and are always stored as
//! `±1`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DrlError, Result};
use crate::rng::RngState;
use crate::sampling::IndexSampler;
use crate::types::{Dataset, DatasetBuilder};

/// Opens `path`, decompressing if the file starts with the gzip magic bytes.
pub fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut reader = BufReader::new(File::open(path)?);
    let is_gz = reader.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if is_gz {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(reader))))
    } else {
        Ok(Box::new(reader))
    }
}

fn dataset_name(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".gz").map(str::to_owned).unwrap_or(name)
}

/// Maps raw label values onto `±1` once every row has been read.
#[derive(Default)]
struct LabelMap {
    seen: BTreeSet<u64>,
}

impl LabelMap {
    fn record(&mut self, y: f64) {
        self.seen.insert(y.to_bits());
    }

    fn values(&self) -> Vec<f64> {
        self.seen.iter().map(|&b| f64::from_bits(b)).collect()
    }

    /// Returns the function applied to every raw label.
    fn resolve(&self, path: &Path) -> Result<fn(f64) -> f64> {
        let vals = self.values();
        let within = |allowed: &[f64]| vals.iter().all(|v| allowed.contains(v));
        if within(&[-1.0, 1.0]) {
            Ok(|y| y)
        } else if within(&[0.0, 1.0]) {
            Ok(|y| if y == 0.0 { -1.0 } else { 1.0 })
        } else {
            Err(DrlError::NonBinaryLabels {
                path: path.to_path_buf(),
                labels: vals.iter().map(|v| v.to_string()).collect(),
            })
        }
    }
}

/// Reads a LIBSVM file; `d` is one past the largest index seen.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    load_libsvm_with(path, None)
}

/// Reads a LIBSVM file, optionally forcing the feature dimension (useful
/// when a test split does not touch the highest feature index).
pub fn load_libsvm_with(path: impl AsRef<Path>, n_features: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = open_maybe_gz(path)?;
    parse_libsvm(reader, path, n_features)
}

fn parse_libsvm(reader: impl BufRead, path: &Path, n_features: Option<usize>) -> Result<Dataset> {
    let perr = |line: usize, message: String| DrlError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows: Vec<(Vec<(u32, f64)>, f64)> = Vec::new();
    let mut labels = LabelMap::default();
    let mut max_col: Option<u32> = None;
    let mut entries = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let y: f64 = label_tok
            .parse()
            .map_err(|_| perr(lineno, format!("bad label {label_tok:?}")))?;
        if !y.is_finite() {
            return Err(perr(lineno, format!("bad label {label_tok:?}")));
        }
        labels.record(y);

        entries.clear();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(lineno, format!("expected index:value, got {tok:?}")))?;
            let idx: u32 = idx
                .parse()
                .map_err(|_| perr(lineno, format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(perr(lineno, "feature indices are 1-based, got 0".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| perr(lineno, format!("bad feature value {val:?}")))?;
            if !val.is_finite() {
                return Err(perr(lineno, format!("non-finite feature value {val}")));
            }
            entries.push((idx - 1, val));
        }
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(perr(lineno, format!("duplicate feature index {}", w[0].0 + 1)));
        }
        if let Some(&(last, _)) = entries.last() {
            max_col = Some(max_col.map_or(last, |m| m.max(last)));
        }
        rows.push((entries.clone(), y));
    }

    if rows.is_empty() {
        return Err(DrlError::NoRows {
            path: path.to_path_buf(),
        });
    }
    let seen_d = max_col.map_or(1, |m| m as usize + 1);
    let d = match n_features {
        Some(d) if d < seen_d => {
            return Err(DrlError::invalid(format!(
                "{}: feature index {seen_d} exceeds the requested dimension {d}",
                path.display()
            )))
        }
        Some(d) => d,
        None => seen_d,
    };
    let map = labels.resolve(path)?;
    let mut builder = DatasetBuilder::new(d);
    for (entries, y) in &rows {
        builder.push_sparse(entries, map(*y));
    }
    builder.finish(dataset_name(path))
}

/// Writes `data` in LIBSVM format with shortest round-trip decimals.
pub fn write_libsvm<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    for (row, y) in data.rows() {
        write!(out, "{}", if y > 0.0 { "+1" } else { "-1" })?;
        for (&j, &v) in row.indices.iter().zip(row.values) {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    /// Zero-based position.
    Index(usize),
    /// Header name, or `"first"` / `"last"`.
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("last".into())
    }
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_owned()),
        })
    }
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Name(s) => f.write_str(s),
        }
    }
}

/// Reads a dense CSV file. A first row containing any non-numeric field is
/// treated as a header.
pub fn load_csv(path: impl AsRef<Path>, label_column: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = open_maybe_gz(path)?;
    parse_csv(reader, path, label_column)
}

fn parse_csv(reader: impl Read, path: &Path, label_column: &LabelColumn) -> Result<Dataset> {
    let perr = |line: usize, message: String| DrlError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records().peekable();

    let mut header: Option<Vec<String>> = None;
    if let Some(Ok(first)) = records.peek() {
        if first.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(first.iter().map(str::to_owned).collect());
            records.next();
        }
    }

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut labels = LabelMap::default();
    let mut width: Option<usize> = None;
    let mut label_idx = 0usize;

    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let ncol = rec.len();
        match width {
            None => {
                if ncol < 2 {
                    return Err(perr(line, "need at least one feature and a label".into()));
                }
                width = Some(ncol);
                label_idx = resolve_label_column(label_column, header.as_deref(), ncol)
                    .map_err(|m| perr(line, m))?;
            }
            Some(w) if w != ncol => {
                return Err(perr(line, format!("expected {w} fields, found {ncol}")));
            }
            Some(_) => {}
        }
        let mut features = Vec::with_capacity(ncol - 1);
        let mut y = 0.0;
        for (col, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| perr(line, format!("column {}: not a number: {field:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(perr(line, format!("column {}: non-finite value {field}", col + 1)));
            }
            if col == label_idx {
                y = v;
            } else {
                features.push(v);
            }
        }
        labels.record(y);
        rows.push((features, y));
    }

    let Some(w) = width else {
        return Err(DrlError::NoRows {
            path: path.to_path_buf(),
        });
    };
    let map = labels.resolve(path)?;
    let mut builder = DatasetBuilder::new(w - 1);
    for (features, y) in &rows {
        builder.push_dense(features, map(*y));
    }
    builder.finish(dataset_name(path))
}

fn resolve_label_column(
    col: &LabelColumn,
    header: Option<&[String]>,
    ncol: usize,
) -> std::result::Result<usize, String> {
    let idx = match col {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(n) if n == "last" => ncol - 1,
        LabelColumn::Name(n) if n == "first" => 0,
        LabelColumn::Name(n) => header
            .and_then(|h| h.iter().position(|c| c == n))
            .ok_or_else(|| format!("label column {n:?} not found in header"))?,
    };
    if idx >= ncol {
        return Err(format!("label column {idx} out of range for {ncol} columns"));
    }
    Ok(idx)
}

/// On-disk dataset format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Libsvm,
    Csv,
}

impl DataFormat {
    /// Guesses the format from the file extension, ignoring a `.gz` suffix.
    pub fn from_path(path: &Path) -> DataFormat {
        let name = dataset_name(path).to_ascii_lowercase();
        if name.ends_with(".csv") {
            DataFormat::Csv
        } else {
            DataFormat::Libsvm
        }
    }
}

pub fn load_dataset(path: &Path, format: Option<DataFormat>, label_column: &LabelColumn) -> Result<Dataset> {
    match format.unwrap_or_else(|| DataFormat::from_path(path)) {
        DataFormat::Libsvm => load_libsvm(path),
        DataFormat::Csv => load_csv(path, label_column),
    }
}

/// Two Gaussian classes at `±class_sep·e₁`, with a fraction of rows moved
/// to a far cluster under the opposite label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_class_sep() -> f64 {
    2.0
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, class_sep: f64, outlier_fraction: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            class_sep,
            outlier_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.d < 1 {
            return Err(DrlError::invalid(format!(
                "synthetic data needs N >= 2 and d >= 1, got N = {}, d = {}",
                self.n, self.d
            )));
        }
        if !(self.class_sep.is_finite() && self.class_sep >= 0.0) {
            return Err(DrlError::invalid("class_sep must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(DrlError::invalid("outlier_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Draws the dataset described by `spec`. Labels are fair coin flips; each
/// point is its class centre plus standard normal noise. The
/// `round(outlier_fraction·N)` outliers sit at `3·class_sep·y·e₁` (plus
/// noise) and carry the label `−y`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed);
    let n_out = (spec.outlier_fraction * spec.n as f64).round() as usize;
    let mut is_outlier = vec![false; spec.n];
    for i in IndexSampler::new(spec.n).draw(n_out, &mut rng)? {
        is_outlier[i] = true;
    }

    let mut builder = DatasetBuilder::new(spec.d);
    let mut x = vec![0.0; spec.d];
    for &outlier in &is_outlier {
        let y = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        for v in x.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let shift = if outlier { 3.0 } else { 1.0 };
        x[0] += shift * spec.class_sep * y;
        builder.push_dense(&x, if outlier { -y } else { y });
    }
    builder.finish(format!("synthetic-n{}-d{}-s{}", spec.n, spec.d, spec.seed))
}

/// Rescales every nonzero row to unit Euclidean norm.
pub fn normalize_rows(data: &Dataset) -> Result<Dataset> {
    let mut builder = DatasetBuilder::new(data.n_features());
    let mut entries = Vec::new();
    for (row, y) in data.rows() {
        let norm = row.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        entries.clear();
        entries.extend(row.indices.iter().zip(row.values).map(|(&j, &v)| (j, v * scale)));
        builder.push_sparse(&entries, y);
    }
    builder.finish(data.name().to_owned())
}
