//! Seeded benchmark runs with the simulated oracle, and strategy
//! comparisons built from them.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hitl_core::corpus::{descriptor, parse_train_test, partition};
use hitl_core::session::run_benchmark;
use hitl_core::{par, DataFormat, Document, LabelSchema, LearningCurve, Oracle, Protocol, SchemaSource, SessionConfig, Strategy};

use crate::error::{classify, CliError, Result};
use crate::output::OutputSet;
use crate::svg::{line_chart, Series};

pub const METRICS: [&str; 3] = ["accuracy", "precision_macro", "recall_macro"];

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub dataset: PathBuf,
    pub test: Option<PathBuf>,
    /// Guessed from the dataset extension when absent.
    pub format: Option<DataFormat>,
    /// JSON `{"labels": [...]}`; inferred from the data when absent.
    pub schema: Option<PathBuf>,
    /// Built-in descriptor to check row and label counts against.
    pub descriptor: Option<String>,
    pub config: SessionConfig,
    pub seeds: Vec<u64>,
    pub noise: f64,
    /// Held-out share of labeled rows when there is no test file.
    pub eval_fraction: f64,
    pub split_seed: u64,
    pub out_dir: PathBuf,
    pub svg: bool,
}

impl BenchSpec {
    pub fn new(dataset: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset: dataset.into(),
            test: None,
            format: None,
            schema: None,
            descriptor: None,
            config: SessionConfig::default(),
            seeds: vec![42],
            noise: 0.0,
            eval_fraction: 0.5,
            split_seed: 42,
            out_dir: out_dir.into(),
            svg: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(CliError::Config(format!("seed {s} given twice")));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(CliError::Config(format!("noise {} not in [0, 1)", self.noise)));
        }
        if self.test.is_none() && !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(CliError::Config(format!("eval fraction {} not in (0, 1)", self.eval_fraction)));
        }
        Ok(())
    }
}

/// Documents ready for a run: the selection pool, the evaluation set and
/// the schema.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub pool: Vec<Document>,
    pub eval: Vec<Document>,
    pub schema: LabelSchema,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Dataset(format!("{}: {e}", path.display())))
}

pub fn load_inputs(spec: &BenchSpec) -> Result<Inputs> {
    let format = match spec.format {
        Some(f) => f,
        None => DataFormat::from_path(&spec.dataset).ok_or_else(|| {
            CliError::Config(format!("cannot tell the format of {}; pass --format", spec.dataset.display()))
        })?,
    };
    let schema = match &spec.schema {
        Some(p) => SchemaSource::Provided(
            serde_json::from_slice(&read(p)?).map_err(|e| CliError::Dataset(format!("{}: {e}", p.display())))?,
        ),
        None => SchemaSource::Infer,
    };
    let train_bytes = read(&spec.dataset)?;
    let test_bytes = spec.test.as_deref().map(read).transpose()?;
    let (train, test, schema) = parse_train_test(&train_bytes[..], test_bytes.as_deref(), format, schema).map_err(classify)?;

    if let Some(name) = &spec.descriptor {
        let d = descriptor(name).ok_or_else(|| CliError::Config(format!("unknown descriptor `{name}`")))?;
        for w in d.check(train.len(), test.as_ref().map(Vec::len), &schema) {
            eprintln!("warning: {w}");
        }
    }

    let (pool, eval) = partition(&train, test.as_deref(), spec.eval_fraction, spec.split_seed).map_err(classify)?;
    if let Some(d) = eval.iter().find(|d| d.gold_label.is_none()) {
        return Err(CliError::Dataset(format!("evaluation row `{}` has no gold label", d.doc_id)));
    }
    Ok(Inputs { pool, eval, schema })
}

/// Preconditions that depend on both the data and the strategy.
pub fn check_preconditions(inputs: &Inputs, config: &SessionConfig) -> Result<()> {
    if config.protocol != Protocol::PoolProtocol {
        return Ok(());
    }
    let missing = inputs.pool.iter().find(|d| d.gold_label.is_none());
    match missing {
        Some(d) if config.strategy.needs_gold() => Err(CliError::Config(format!(
            "strategy {} needs gold labels in the pool; `{}` has none",
            config.strategy, d.doc_id
        ))),
        Some(d) => Err(CliError::Dataset(format!(
            "the simulated oracle needs gold labels for every pool row; `{}` has none",
            d.doc_id
        ))),
        None if inputs.pool.is_empty() => Err(CliError::Dataset("pool_protocol needs a non-empty pool".into())),
        None => Ok(()),
    }
}

/// One full simulated run per seed, seeds in parallel. The seed drives both
/// the oracle's noise and the random strategy.
pub fn run_seeds(inputs: &Inputs, config: SessionConfig, seeds: &[u64], noise: f64) -> Result<Vec<LearningCurve>> {
    check_preconditions(inputs, &config)?;
    let results = par::map(seeds, |&seed| {
        let mut oracle = Oracle::from_documents(inputs.pool.iter().chain(&inputs.eval), inputs.schema.len(), noise, seed)?;
        let cfg = SessionConfig { seed, ..config };
        run_benchmark(&inputs.eval, &inputs.pool, &inputs.schema, cfg, &mut oracle)
    });
    results.into_iter().map(|r| r.map_err(classify)).collect()
}

/// Metric values of one round as printed in the curve CSV.
fn printed(r: &hitl_core::RoundMetrics) -> [f64; 3] {
    let p = |v: f64| format!("{v:.6}").parse::<f64>().expect("formatted float parses");
    [p(r.accuracy), p(r.precision_macro), p(r.recall_macro)]
}

/// Per-round mean/min/max across seeds, computed from the values as they
/// appear in the per-seed CSVs so the two files agree exactly.
pub fn summary_csv(curves: &[LearningCurve]) -> Result<String> {
    let rounds = curves[0].len();
    if curves.iter().any(|c| c.len() != rounds) {
        return Err(CliError::Runtime("seeds produced curves of different lengths".into()));
    }
    let mut out = String::from("n_labels,n_seeds");
    for m in METRICS {
        let _ = write!(out, ",{m}_mean,{m}_min,{m}_max");
    }
    out.push('\n');
    for i in 0..rounds {
        let n = curves[0].rounds()[i].n_labels;
        if curves.iter().any(|c| c.rounds()[i].n_labels != n) {
            return Err(CliError::Runtime(format!("round {i} has different label counts across seeds")));
        }
        let vals: Vec<[f64; 3]> = curves.iter().map(|c| printed(&c.rounds()[i])).collect();
        let _ = write!(out, "{n},{}", curves.len());
        for m in 0..3 {
            let col: Vec<f64> = vals.iter().map(|v| v[m]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(out, ",{mean:.10},{min:.6},{max:.6}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn metric(r: &hitl_core::RoundMetrics, m: usize) -> f64 {
    printed(r)[m]
}

fn mean_series(name: &str, curves: &[LearningCurve], m: usize) -> Series {
    let points = (0..curves[0].len())
        .map(|i| {
            let x = curves[0].rounds()[i].n_labels as f64;
            let y = curves.iter().map(|c| metric(&c.rounds()[i], m)).sum::<f64>() / curves.len() as f64;
            (x, y)
        })
        .collect();
    Series { name: name.to_string(), points, faint: false }
}

#[derive(Debug)]
pub struct BenchReport {
    pub curves: Vec<(u64, LearningCurve)>,
    pub files: Vec<PathBuf>,
}

/// `curve_seed{S}.csv` per seed, `summary.csv`, and with `svg` one chart per
/// metric. Nothing is left behind on failure.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    let inputs = load_inputs(spec)?;
    let curves = run_seeds(&inputs, spec.config, &spec.seeds, spec.noise)?;

    let mut files: Vec<(String, Vec<u8>)> = spec
        .seeds
        .iter()
        .zip(&curves)
        .map(|(s, c)| (format!("curve_seed{s}.csv"), c.to_csv().into_bytes()))
        .collect();
    files.push(("summary.csv".into(), summary_csv(&curves)?.into_bytes()));
    if spec.svg {
        for (m, name) in METRICS.iter().enumerate() {
            let mut series: Vec<Series> = spec
                .seeds
                .iter()
                .zip(&curves)
                .map(|(s, c)| Series {
                    name: format!("seed {s}"),
                    points: c.rounds().iter().map(|r| (r.n_labels as f64, metric(r, m))).collect(),
                    faint: true,
                })
                .collect();
            series.push(mean_series(&format!("mean ({})", spec.config.strategy), &curves, m));
            let svg = line_chart(&format!("{name} vs labels"), "labels", name, &series);
            files.push((format!("{name}.svg"), svg.into_bytes()));
        }
    }
    let written = OutputSet::write_all(&spec.out_dir, &files)?;
    Ok(BenchReport { curves: spec.seeds.iter().copied().zip(curves).collect(), files: written })
}

pub const COMPARE_HEADER: &str = "strategy,seed,n_labels,accuracy,precision_macro,recall_macro";

#[derive(Debug)]
pub struct CompareReport {
    /// Per strategy, the curve of every seed in seed order.
    pub runs: Vec<(Strategy, Vec<LearningCurve>)>,
    pub csv: String,
    pub files: Vec<PathBuf>,
}

impl CompareReport {
    /// Mean printed metric across seeds at the round with `n_labels`.
    pub fn mean_at(&self, strategy: Strategy, n_labels: usize, metric_index: usize) -> Option<f64> {
        let (_, curves) = self.runs.iter().find(|(s, _)| *s == strategy)?;
        let vals: Option<Vec<f64>> = curves
            .iter()
            .map(|c| c.rounds().iter().find(|r| r.n_labels == n_labels).map(|r| metric(r, metric_index)))
            .collect();
        let vals = vals?;
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Runs every strategy over the same seeds and writes `compare.csv` in long
/// format (plus one chart per metric with `svg`).
pub fn run_compare(spec: &BenchSpec, strategies: &[Strategy]) -> Result<CompareReport> {
    spec.validate()?;
    if strategies.len() < 2 {
        return Err(CliError::Config("compare needs at least two strategies".into()));
    }
    let mut seen = HashSet::new();
    if let Some(s) = strategies.iter().find(|s| !seen.insert(**s)) {
        return Err(CliError::Config(format!("strategy {s} given twice")));
    }
    let inputs = load_inputs(spec)?;
    for s in strategies {
        check_preconditions(&inputs, &SessionConfig { strategy: *s, ..spec.config })?;
    }

    let mut runs = Vec::with_capacity(strategies.len());
    for s in strategies {
        let cfg = SessionConfig { strategy: *s, ..spec.config };
        runs.push((*s, run_seeds(&inputs, cfg, &spec.seeds, spec.noise)?));
    }

    let mut csv = format!("{COMPARE_HEADER}\n");
    for (s, curves) in &runs {
        for (seed, c) in spec.seeds.iter().zip(curves) {
            for r in c.rounds() {
                let _ = writeln!(
                    csv,
                    "{s},{seed},{},{:.6},{:.6},{:.6}",
                    r.n_labels, r.accuracy, r.precision_macro, r.recall_macro
                );
            }
        }
    }
    let mut files = vec![("compare.csv".to_string(), csv.clone().into_bytes())];
    if spec.svg {
        for (m, name) in METRICS.iter().enumerate() {
            let series: Vec<Series> = runs.iter().map(|(s, c)| mean_series(s.as_str(), c, m)).collect();
            let svg = line_chart(&format!("{name} by strategy"), "labels", name, &series);
            files.push((format!("compare_{name}.svg"), svg.into_bytes()));
        }
    }
    let written = OutputSet::write_all(&spec.out_dir, &files)?;
    Ok(CompareReport { runs, csv, files: written })
}
