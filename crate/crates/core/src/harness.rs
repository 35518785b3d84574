//! Experiment driver: config files, repeated runs and CSV output.
//!
//! A config is a TOML file:
//!
//! ```toml
//! test_fraction = 0.2
//! n_seeds = 5
//! seed = 100
//! output_dir = "out"
//!
//! [dataset]
//! synthetic = { n = 1024, d = 5, class_sep = 2.0, outlier_fraction = 0.0, seed = 1 }
//! # or: path = "data/train.svm", format = "libsvm"
//!
//! [[method]]
//! method = "gssg"
//! rho = 0.1
//!
//! [[method]]
//! method = "fsg"
//! step = { kind = "constant", gamma = 0.1 }
//!
//! [cv]          # optional ERM baseline
//! k = 10
//! ```
//!
//! Seed `s` (for `s` in `0..n_seeds`) uses run seed `seed + s` for both the
//! train/test partition and every method, so the methods of one seed see the
//! same split.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, make_synthetic, normalize_rows, DataFormat, LabelColumn, SyntheticSpec};
use crate::erm::{kfold_cv, CvConfig};
use crate::error::{DrlError, Result};
use crate::loss::misclassification;
use crate::optim::{self, Method, OptimizerConfig};
use crate::rng::RngState;
use crate::stats::{ci95_halfwidth, mean};
use crate::types::{split_train_test, Dataset, RunTrace};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DRL_THREADS";
pub const SUMMARY_HEADER: &str = "method,mean_misclass,ci95_halfwidth,mean_wall_s,mean_cumulative_samples";
pub const PLOT_HEADER: &str = "method,seed,iteration,cumulative_samples,wall_clock_s,test_misclassification";
const MANIFEST_HEADER: &str = "method,seed,status,trace_file,final_misclass,wall_s,cumulative_samples,error";
/// Method name used for the cross-validated ERM baseline in summaries.
pub const ERM_LABEL: &str = "erm_cv";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DataFormat>,
    #[serde(default)]
    pub label_column: LabelColumn,
    /// Scale every row to unit norm after loading.
    #[serde(default)]
    pub normalize: bool,
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        let data = match (&self.synthetic, &self.path) {
            (Some(spec), None) => make_synthetic(spec)?,
            (None, Some(path)) => load_dataset(path, self.format, &self.label_column)?,
            _ => {
                return Err(DrlError::Config(
                    "dataset needs exactly one of `synthetic` or `path`".into(),
                ))
            }
        };
        if self.normalize {
            normalize_rows(&data)
        } else {
            Ok(data)
        }
    }
}

fn d_test_fraction() -> f64 {
    0.2
}
fn d_seeds() -> usize {
    1
}
fn d_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "d_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    #[serde(default, rename = "method")]
    pub methods: Vec<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvConfig>,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub rho: Option<f64>,
    /// Keep only the listed methods.
    pub methods: Vec<Method>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DrlError::Config(e.to_string()))
    }

    /// Reads a config file. Relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &cfg.dataset.path {
            if p.is_relative() {
                cfg.dataset.path = Some(base.join(p));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(rho) = o.rho {
            self.methods.iter_mut().for_each(|m| m.rho = rho);
        }
        if !o.methods.is_empty() {
            self.methods.retain(|m| o.methods.contains(&m.method));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() && self.cv.is_none() {
            return Err(DrlError::Config("no [[method]] sections and no [cv] section".into()));
        }
        if self.n_seeds == 0 {
            return Err(DrlError::Config("n_seeds must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DrlError::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        let mut labels: Vec<&str> = Vec::new();
        for m in &self.methods {
            m.validate()?;
            if labels.contains(&m.label()) {
                return Err(DrlError::Config(format!("duplicate method label '{}'", m.label())));
            }
            if m.label() == ERM_LABEL || m.label().contains(['/', '\\']) || m.label().contains("_seed") {
                return Err(DrlError::Config(format!("method label '{}' is reserved or unusable in file names", m.label())));
            }
            labels.push(m.label());
        }
        if let Some(cv) = &self.cv {
            cv.validate()?;
        }
        Ok(())
    }

    pub fn run_seed(&self, s: usize) -> u64 {
        self.seed.wrapping_add(s as u64)
    }
}

/// Outcome of one (method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub trace_file: Option<PathBuf>,
    pub final_misclass: f64,
    pub wall_s: f64,
    pub cumulative_samples: u64,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub mean_misclass: f64,
    pub ci95_halfwidth: f64,
    pub mean_wall_s: f64,
    pub mean_cumulative_samples: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub output_dir: PathBuf,
}

impl ExperimentOutcome {
    pub fn n_failed(&self) -> usize {
        self.runs.iter().filter(|r| !r.ok()).count()
    }

    pub fn all_failed(&self) -> bool {
        self.runs.iter().all(|r| !r.ok())
    }
}

/// Thread count from `DRL_THREADS`, defaulting to one.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

pub fn trace_file_name(label: &str, seed: u64) -> String {
    format!("trace_{label}_seed{seed}.csv")
}

/// Splits `trace_{label}_seed{seed}.csv` into its label and seed.
pub fn parse_trace_file_name(path: &Path) -> Option<(String, u64)> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_prefix("trace_")?.strip_suffix(".csv")?;
    let (label, seed) = stem.rsplit_once("_seed")?;
    Some((label.to_owned(), seed.parse().ok()?))
}

enum Job<'a> {
    Method(&'a OptimizerConfig),
    Cv(&'a CvConfig),
}

/// Runs every method (and the CV baseline, if configured) on every seed,
/// writing traces, `manifest.csv` and `summary.csv` under `output_dir`.
/// Individual failures are recorded in the manifest; the call itself only
/// fails on I/O, config or data errors, or when every run failed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let data = config.dataset.load()?;
    fs::create_dir_all(&config.output_dir)?;

    let splits: Vec<(u64, Dataset, Dataset)> = (0..config.n_seeds)
        .map(|s| {
            let seed = config.run_seed(s);
            let mut rng = RngState::with_stream(seed, 7);
            split_train_test(&data, config.test_fraction, &mut rng).map(|(tr, te)| (seed, tr, te))
        })
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(usize, Job<'_>)> = Vec::new();
    for s in 0..config.n_seeds {
        for m in &config.methods {
            jobs.push((s, Job::Method(m)));
        }
        if let Some(cv) = &config.cv {
            jobs.push((s, Job::Cv(cv)));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| DrlError::Config(format!("thread pool: {e}")))?;
    let dir = &config.output_dir;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|(s, job)| {
                let (seed, train, test) = &splits[*s];
                match job {
                    Job::Method(m) => run_method(m, *seed, train, test, dir),
                    Job::Cv(cv) => run_cv_job(cv, *seed, train, test, dir),
                }
            })
            .collect()
    });

    write_manifest(&dir.join("manifest.csv"), &runs)?;
    let summary = summarize(&runs);
    write_summary(&dir.join("summary.csv"), &summary)?;
    let outcome = ExperimentOutcome {
        runs,
        summary,
        output_dir: dir.clone(),
    };
    if outcome.all_failed() {
        let first = outcome.runs.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(DrlError::Config(format!("all runs failed; first error: {first}")));
    }
    Ok(outcome)
}

fn failed(method: &str, seed: u64, e: impl ToString) -> RunRecord {
    RunRecord {
        method: method.to_owned(),
        seed,
        trace_file: None,
        final_misclass: f64::NAN,
        wall_s: f64::NAN,
        cumulative_samples: 0,
        error: Some(e.to_string()),
    }
}

fn run_method(m: &OptimizerConfig, seed: u64, train: &Dataset, test: &Dataset, dir: &Path) -> RunRecord {
    let mut cfg = m.clone();
    cfg.seed = seed;
    let label = cfg.label().to_owned();
    let (theta, trace) = match optim::run(&cfg, train, test) {
        Ok(r) => r,
        Err(e) => return failed(&label, seed, e),
    };
    let path = dir.join(trace_file_name(&label, seed));
    if let Err(e) = write_trace(&path, &trace) {
        return failed(&label, seed, e);
    }
    let (wall_s, samples) = trace
        .last()
        .map_or((0.0, 0), |r| (r.wall_clock_s, r.cumulative_samples));
    RunRecord {
        method: label,
        seed,
        trace_file: Some(path),
        final_misclass: misclassification(&theta, test).unwrap_or(f64::NAN),
        wall_s,
        cumulative_samples: samples,
        error: None,
    }
}

/// ERM baseline on one split. Its cost in samples is the number of
/// per-row gradient evaluations over all fold trainings and the retrain.
fn run_cv_job(cv: &CvConfig, seed: u64, train: &Dataset, test: &Dataset, dir: &Path) -> RunRecord {
    let mut cfg = cv.clone();
    cfg.seed = seed;
    let start = Instant::now();
    let res = match kfold_cv(train, &cfg) {
        Ok(r) => r,
        Err(e) => return failed(ERM_LABEL, seed, e),
    };
    let _ = start;
    let path = dir.join(format!("cv_report_seed{seed}.csv"));
    let written = File::create(&path).and_then(|f| {
        let mut w = BufWriter::new(f);
        res.write_report_csv(&mut w)?;
        w.flush()
    });
    if let Err(e) = written {
        return failed(ERM_LABEL, seed, e);
    }
    let n_train = train.n_rows();
    let fold_rows = n_train - n_train / cfg.k;
    let per_call = (cfg.max_iters * cfg.sgd_batch.min(fold_rows)) as u64;
    let samples = per_call * res.train_calls() as u64 + (cfg.max_iters * cfg.sgd_batch.min(n_train)) as u64;
    RunRecord {
        method: ERM_LABEL.to_owned(),
        seed,
        trace_file: Some(path),
        final_misclass: misclassification(&res.model, test).unwrap_or(f64::NAN),
        wall_s: res.total_train_seconds,
        cumulative_samples: samples,
        error: None,
    }
}

pub fn write_trace(path: &Path, trace: &RunTrace) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_csv(&mut w)?;
    w.flush()
}

fn write_manifest(path: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER.split(','))?;
    for r in runs {
        let file = r
            .trace_file
            .as_ref()
            .and_then(|p| p.file_name())
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            if r.ok() { "ok".into() } else { "failed".into() },
            file,
            r.final_misclass.to_string(),
            r.wall_s.to_string(),
            r.cumulative_samples.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per method over its successful runs, in first-seen order.
pub fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    order
        .into_iter()
        .map(|method| {
            let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method && r.ok()).collect();
            let mis: Vec<f64> = ok.iter().map(|r| r.final_misclass).collect();
            let wall: Vec<f64> = ok.iter().map(|r| r.wall_s).collect();
            let samples: Vec<f64> = ok.iter().map(|r| r.cumulative_samples as f64).collect();
            SummaryRow {
                method: method.to_owned(),
                mean_misclass: mean(&mis),
                ci95_halfwidth: ci95_halfwidth(&mis),
                mean_wall_s: mean(&wall),
                mean_cumulative_samples: mean(&samples),
            }
        })
        .collect()
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method, r.mean_misclass, r.ci95_halfwidth, r.mean_wall_s, r.mean_cumulative_samples
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Trace files expected in an output directory: those named in
/// `manifest.csv` if present (including failed runs, which then show up as
/// missing), otherwise every `trace_*.csv` file.
pub fn collect_trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join("manifest.csv");
    if manifest.exists() {
        let mut rdr = csv::Reader::from_path(&manifest)?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let (method, seed) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            if method == ERM_LABEL {
                continue;
            }
            let seed: u64 = seed
                .parse()
                .map_err(|_| DrlError::Config(format!("bad seed '{seed}' in manifest")))?;
            out.push(dir.join(trace_file_name(method, seed)));
        }
        return Ok(out);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| parse_trace_file_name(p).is_some())
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotDataReport {
    pub rows: usize,
    pub missing: Vec<PathBuf>,
}

/// Concatenates trace files into one long-format CSV with `method` and
/// `seed` columns. Unreadable or missing traces are skipped and listed.
pub fn emit_plot_data<W: Write>(traces: &[PathBuf], mut out: W) -> Result<PlotDataReport> {
    writeln!(out, "{PLOT_HEADER}")?;
    let mut report = PlotDataReport::default();
    for path in traces {
        let parsed = parse_trace_file_name(path);
        let trace = File::open(path).map_err(DrlError::from).and_then(RunTrace::read_csv);
        let (Some((method, seed)), Ok(trace)) = (parsed, trace) else {
            report.missing.push(path.clone());
            continue;
        };
        for r in &trace.records {
            writeln!(
                out,
                "{method},{seed},{},{},{},{}",
                r.iteration, r.cumulative_samples, r.wall_clock_s, r.test_misclassification
            )?;
            report.rows += 1;
        }
    }
    out.flush()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
test_fraction = 0.25
n_seeds = 2
seed = 5
output_dir = "{}"

[dataset]
synthetic = {{ n = 120, d = 3, class_sep = 2.0, seed = 1 }}

[[method]]
method = "gssg"
max_iters = 30

[[method]]
method = "fsg"
max_iters = 30
"#,
            dir.display()
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn trace_names_round_trip() {
        let name = trace_file_name("pssg_fast", 12);
        assert_eq!(parse_trace_file_name(Path::new(&name)), Some(("pssg_fast".into(), 12)));
        assert_eq!(parse_trace_file_name(Path::new("summary.csv")), None);
    }

    #[test]
    fn experiment_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path());
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.runs.len(), 4);
        assert_eq!(out.n_failed(), 0);
        for label in ["gssg", "fsg"] {
            for seed in [5, 6] {
                assert!(dir.path().join(trace_file_name(label, seed)).exists());
            }
        }
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("gssg,"));
    }

    #[test]
    fn plot_data_counts_rows_and_lists_missing() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&config(dir.path())).unwrap();
        let mut files = collect_trace_files(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        files.push(dir.path().join("trace_nothing_seed1.csv"));
        let mut buf = Vec::new();
        let rep = emit_plot_data(&files, &mut buf).unwrap();
        assert_eq!(rep.missing.len(), 1);
        let expect: usize = out.runs.len() * 3;
        assert_eq!(rep.rows, expect);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), expect + 1);
    }

    #[test]
    fn failures_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.methods[1].method = Method::Sgd;
        cfg.methods[1].label = Some("sgd_big".into());
        cfg.methods[1].batch_m = 10_000;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.n_failed(), 2);
        let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(manifest.matches(",failed,").count(), 2);

        cfg.methods.remove(0);
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn overrides_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.apply(&Overrides {
            seed: Some(9),
            rho: Some(0.3),
            methods: vec![Method::Fsg],
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.methods.len(), 1);
        assert_eq!(cfg.methods[0].rho, 0.3);
        cfg.n_seeds = 0;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("n_seeds = 1\n").is_err());
    }
}
