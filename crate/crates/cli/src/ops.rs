//! Dataset ingest, synthetic corpus generation, session export and serving.

use std::fs;
use std::path::{Path, PathBuf};

use hitl_core::corpus::{descriptor, write_jsonl};
use hitl_core::synthetic::KeywordCorpus;
use hitl_core::{DataFormat, Document, LabelSchema};
use hitl_service::events::replay;
use hitl_service::store::{self, Dataset};
use hitl_service::{AppState, ExportBundle, ServiceConfig};

use crate::error::{classify, CliError, Result};
use crate::output::OutputSet;

pub struct IngestSpec {
    pub name: String,
    pub dataset: PathBuf,
    pub test: Option<PathBuf>,
    pub format: Option<DataFormat>,
    pub schema: Option<PathBuf>,
    pub descriptor: Option<String>,
    pub data_dir: PathBuf,
}

/// Parses the files and stores them under the data directory.
pub fn ingest(spec: &IngestSpec) -> Result<Dataset> {
    store::validate_name(&spec.name).map_err(|e| CliError::Config(e.to_string()))?;
    let format = match spec.format {
        Some(f) => f,
        None => DataFormat::from_path(&spec.dataset)
            .ok_or_else(|| CliError::Config(format!("cannot tell the format of {}", spec.dataset.display())))?,
    };
    let read = |p: &Path| fs::read(p).map_err(|e| CliError::Dataset(format!("{}: {e}", p.display())));
    let schema: Option<LabelSchema> = match &spec.schema {
        Some(p) => Some(serde_json::from_slice(&read(p)?).map_err(|e| CliError::Dataset(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let train = read(&spec.dataset)?;
    let test = spec.test.as_deref().map(read).transpose()?;
    let (train, test, schema) = store::read_dataset(&train, test.as_deref(), format, schema).map_err(classify)?;
    if let Some(name) = &spec.descriptor {
        let d = descriptor(name).ok_or_else(|| CliError::Config(format!("unknown descriptor `{name}`")))?;
        for w in d.check(train.len(), test.as_ref().map(Vec::len), &schema) {
            eprintln!("warning: {w}");
        }
    }
    let ds = Dataset { name: spec.name.clone(), schema, train, test };
    store::save(&spec.data_dir, &ds)?;
    Ok(ds)
}

fn csv_bytes(docs: &[Document], schema: &LabelSchema) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["id", "text", "label"]).map_err(err)?;
    for d in docs {
        let label = d.gold_label.and_then(|l| schema.name(l)).unwrap_or("");
        w.write_record([d.doc_id.as_str(), d.text.as_str(), label]).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Writes `train.<ext>` (the pool), `test.<ext>` (the evaluation set) and
/// `schema.json` for a keyword corpus.
pub fn synth(spec: &KeywordCorpus, format: DataFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if spec.eval_size == 0 {
        return Err(CliError::Config("eval size must be positive".into()));
    }
    let (pool, eval, schema) = spec.generate();
    let (ext, train, test) = match format {
        DataFormat::Csv => ("csv", csv_bytes(&pool, &schema)?, csv_bytes(&eval, &schema)?),
        DataFormat::Jsonl => {
            let mut a = Vec::new();
            let mut b = Vec::new();
            write_jsonl(&mut a, &pool, &schema).map_err(classify)?;
            write_jsonl(&mut b, &eval, &schema).map_err(classify)?;
            ("jsonl", a, b)
        }
    };
    let schema_json = serde_json::to_vec_pretty(&schema).map_err(|e| CliError::Runtime(e.to_string()))?;
    OutputSet::write_all(
        out_dir,
        &[
            (format!("train.{ext}"), train),
            (format!("test.{ext}"), test),
            ("schema.json".into(), schema_json),
        ],
    )
}

/// Replays a session log and writes `model.json`, `vocabulary.json`,
/// `annotations.jsonl`, `curve.csv` and `bundle.json`.
pub fn export(log: &Path, out_dir: &Path) -> Result<ExportBundle> {
    if !log.is_file() {
        return Err(CliError::Dataset(format!("{}: no such session log", log.display())));
    }
    let r = replay(log)?;
    let bundle = ExportBundle::from_state(&r.state, &r.dataset)?;
    let pretty = |v: &serde_json::Value| serde_json::to_vec_pretty(v).map_err(|e| CliError::Runtime(e.to_string()));
    let bundle_json = serde_json::to_vec_pretty(&bundle).map_err(|e| CliError::Runtime(e.to_string()))?;
    OutputSet::write_all(
        out_dir,
        &[
            ("model.json".into(), pretty(&bundle.model)?),
            ("vocabulary.json".into(), pretty(&bundle.vocabulary)?),
            ("annotations.jsonl".into(), bundle.annotations_jsonl.clone().into_bytes()),
            ("curve.csv".into(), r.state.curve().to_csv().into_bytes()),
            ("bundle.json".into(), bundle_json),
        ],
    )?;
    Ok(bundle)
}

/// Binds first so an occupied port is reported before anything else starts.
pub fn serve(config: &ServiceConfig) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.listen).await.map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                CliError::PortInUse(format!("{} is already in use", config.listen))
            } else {
                CliError::Runtime(format!("cannot listen on {}: {e}", config.listen))
            }
        })?;
        let state = AppState::open(&config.data_dir)?;
        eprintln!("listening on http://{} (data in {})", listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?, config.data_dir.display());
        hitl_service::serve(listener, state).await.map_err(|e| CliError::Runtime(e.to_string()))
    })
}
