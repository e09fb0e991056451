//! On-disk dataset registry: `<data_dir>/datasets/<name>/{schema.json,
//! train.jsonl, test.jsonl}`. Datasets are immutable once stored.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hitl_core::corpus::{load_dataset, parse_train_test, write_jsonl};
use hitl_core::{DataFormat, Document, LabelSchema, SchemaSource};
use serde::Serialize;

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: LabelSchema,
    pub train: Vec<Document>,
    pub test: Option<Vec<Document>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetInfo {
    pub name: String,
    pub labels: Vec<String>,
    pub n_train: usize,
    pub n_test: Option<usize>,
}

impl Dataset {
    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            name: self.name.clone(),
            labels: self.schema.labels().to_vec(),
            n_train: self.train.len(),
            n_test: self.test.as_ref().map(Vec::len),
        }
    }
}

/// Parses a train file and an optional test file under one schema, inferred
/// over both files when not given.
pub fn read_dataset(
    train: &[u8],
    test: Option<&[u8]>,
    format: DataFormat,
    schema: Option<LabelSchema>,
) -> hitl_core::Result<(Vec<Document>, Option<Vec<Document>>, LabelSchema)> {
    let source = schema.map_or(SchemaSource::Infer, SchemaSource::Provided);
    parse_train_test(train, test, format, source)
}

/// Dataset names double as directory names.
pub fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 128
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Dataset(format!(
            "invalid dataset name `{name}`: use ASCII letters, digits, `-`, `_` or `.`"
        )))
    }
}

pub fn datasets_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("datasets")
}

/// Writes the dataset into a scratch directory and renames it into place.
pub fn save(data_dir: &Path, ds: &Dataset) -> Result<PathBuf> {
    validate_name(&ds.name)?;
    let root = datasets_dir(data_dir);
    fs::create_dir_all(&root)?;
    let target = root.join(&ds.name);
    if target.exists() {
        return Err(ServiceError::DatasetExists(ds.name.clone()));
    }
    let scratch = root.join(format!(".tmp-{}-{}", ds.name, uuid::Uuid::new_v4().simple()));
    fs::create_dir(&scratch)?;
    let written = (|| -> Result<()> {
        fs::write(scratch.join("schema.json"), serde_json::to_vec_pretty(&ds.schema)?)?;
        write_jsonl(BufWriter::new(fs::File::create(scratch.join("train.jsonl"))?), &ds.train, &ds.schema)?;
        if let Some(test) = &ds.test {
            write_jsonl(BufWriter::new(fs::File::create(scratch.join("test.jsonl"))?), test, &ds.schema)?;
        }
        Ok(())
    })();
    let renamed = written.and_then(|()| {
        if target.exists() {
            return Err(ServiceError::DatasetExists(ds.name.clone()));
        }
        fs::rename(&scratch, &target).map_err(Into::into)
    });
    if let Err(e) = renamed {
        let _ = fs::remove_dir_all(&scratch);
        return Err(e);
    }
    Ok(target)
}

/// `Ok(None)` when no dataset of that name is stored.
pub fn load(data_dir: &Path, name: &str) -> Result<Option<Dataset>> {
    if validate_name(name).is_err() {
        return Ok(None);
    }
    let dir = datasets_dir(data_dir).join(name);
    if !dir.is_dir() {
        return Ok(None);
    }
    let schema: LabelSchema = serde_json::from_slice(&fs::read(dir.join("schema.json"))?)?;
    let (train, _) = load_dataset(&dir.join("train.jsonl"), DataFormat::Jsonl, SchemaSource::Provided(schema.clone()))?;
    let test_path = dir.join("test.jsonl");
    let test = if test_path.exists() {
        Some(load_dataset(&test_path, DataFormat::Jsonl, SchemaSource::Provided(schema.clone()))?.0)
    } else {
        None
    };
    Ok(Some(Dataset {
        name: name.to_string(),
        schema,
        train,
        test,
    }))
}

/// Names of stored datasets, sorted.
pub fn list(data_dir: &Path) -> Result<Vec<String>> {
    let root = datasets_dir(data_dir);
    if !root.is_dir() {
        return Ok(Vec::new());
    }
    let mut names: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| validate_name(n).is_ok())
        .collect();
    names.sort();
    Ok(names)
}
