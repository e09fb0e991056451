//! Dataset loading, validation and splitting.
//!
//! Datasets arrive as UTF-8 CSV (header `id,text,label`) or JSONL
//! (`{"id": .., "text": .., "label": ..}`, label optional). Labels are matched
//! exactly after trimming outer whitespace.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    /// Index into the dataset's [`LabelSchema`].
    pub gold_label: Option<usize>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, gold_label: Option<usize>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            gold_label,
        }
    }
}

/// Ordered, duplicate-free list of class names. Position is the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSchema {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelSchema {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(|s| s.into().trim().to_string()).collect();
        if labels.iter().any(|l| l.is_empty()) {
            return Err(Error::InvalidSchema("empty label name".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidSchema(format!("duplicate label `{l}`")));
            }
        }
        if labels.len() < 2 {
            return Err(Error::SchemaTooSmall(labels.len()));
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name.trim()).copied()
    }

    /// Hex SHA-256 over the JSON-encoded label list.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.labels).expect("label list serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl<'de> Deserialize<'de> for LabelSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            labels: Vec<String>,
        }
        let raw = Raw::deserialize(d)?;
        LabelSchema::new(raw.labels).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    /// Guess from a file extension (`.csv`, `.jsonl`, `.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "jsonl" | "ndjson" | "json" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

/// Where the label schema of a dataset comes from.
#[derive(Debug, Clone)]
pub enum SchemaSource {
    Provided(LabelSchema),
    /// Sorted set of distinct non-empty labels found in the file.
    Infer,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
}

pub fn load_dataset(path: &Path, format: DataFormat, schema: SchemaSource) -> Result<(Vec<Document>, LabelSchema)> {
    let file = File::open(path)?;
    parse_dataset(BufReader::new(file), format, schema)
}

/// Same as [`load_dataset`] over any reader.
pub fn parse_dataset<R: Read>(reader: R, format: DataFormat, schema: SchemaSource) -> Result<(Vec<Document>, LabelSchema)> {
    let rows = match format {
        DataFormat::Csv => read_csv_rows(reader)?,
        DataFormat::Jsonl => read_jsonl_rows(reader)?,
    };
    rows_to_documents(rows, schema)
}

/// A train file and an optional test file under one schema. An inferred
/// schema covers the labels of both files.
pub fn parse_train_test<R: Read, T: Read>(
    train: R,
    test: Option<T>,
    format: DataFormat,
    schema: SchemaSource,
) -> Result<(Vec<Document>, Option<Vec<Document>>, LabelSchema)> {
    let read = |r: &mut dyn Read| match format {
        DataFormat::Csv => read_csv_rows(r),
        DataFormat::Jsonl => read_jsonl_rows(r),
    };
    let mut train = train;
    let train_rows = read(&mut train)?;
    let test_rows = match test {
        Some(mut t) => Some(read(&mut t)?),
        None => None,
    };
    let schema = match schema {
        SchemaSource::Provided(s) => s,
        SchemaSource::Infer => {
            let all = train_rows.iter().chain(test_rows.iter().flatten());
            infer_schema(all)?
        }
    };
    let (train_docs, schema) = rows_to_documents(train_rows, SchemaSource::Provided(schema))?;
    let test_docs = match test_rows {
        Some(rows) => Some(rows_to_documents(rows, SchemaSource::Provided(schema.clone()))?.0),
        None => None,
    };
    Ok((train_docs, test_docs, schema))
}

fn infer_schema<'a>(rows: impl Iterator<Item = &'a RawRow>) -> Result<LabelSchema> {
    let distinct: BTreeSet<&str> = rows
        .filter_map(|r| r.label.as_deref().map(str::trim))
        .filter(|l| !l.is_empty())
        .collect();
    if distinct.len() < 2 {
        return Err(Error::SchemaTooSmall(distinct.len()));
    }
    LabelSchema::new(distinct)
}

fn read_csv_rows<R: Read>(reader: R) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["id", "text"] {
        if !headers.iter().any(|h| h.trim() == required) {
            return Err(Error::MalformedDataset(format!("CSV header is missing column `{required}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

fn read_jsonl_rows<R: Read>(reader: R) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RawRow = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedDataset(format!("line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_documents(rows: Vec<RawRow>, schema: SchemaSource) -> Result<(Vec<Document>, LabelSchema)> {
    let schema = match schema {
        SchemaSource::Provided(s) => s,
        SchemaSource::Infer => infer_schema(rows.iter())?,
    };

    let mut seen = HashSet::with_capacity(rows.len());
    let mut docs = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let rowno = i + 1;
        let id = row.id.trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        if row.text.trim().is_empty() {
            return Err(Error::EmptyText(rowno));
        }
        let gold_label = match row.label.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(l) => Some(schema.index_of(l).ok_or_else(|| Error::UnknownLabel {
                row: rowno,
                label: l.to_string(),
            })?),
        };
        docs.push(Document {
            doc_id: id,
            text: row.text.trim().to_string(),
            gold_label,
        });
    }
    Ok((docs, schema))
}

#[derive(Serialize)]
struct OutRow<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

/// Writes documents back out in the JSONL input format.
pub fn write_jsonl<W: Write>(mut out: W, docs: &[Document], schema: &LabelSchema) -> Result<()> {
    for d in docs {
        let row = OutRow {
            id: &d.doc_id,
            text: &d.text,
            label: d.gold_label.and_then(|l| schema.name(l)),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded shuffle-and-cut into `(pool, eval)`.
///
/// The shuffle runs over documents sorted by id, so the partition depends only
/// on the id set, the fraction and the seed. Both halves keep input order.
pub fn split(documents: &[Document], eval_fraction: f64, seed: u64) -> Result<(Vec<Document>, Vec<Document>)> {
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("eval_fraction {eval_fraction} not in (0, 1)")));
    }
    if let Some(d) = documents.iter().find(|d| d.gold_label.is_none()) {
        return Err(Error::MissingGold(d.doc_id.clone()));
    }
    let mut ids: Vec<&str> = documents.iter().map(|d| d.doc_id.as_str()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_eval = (eval_fraction * documents.len() as f64).round() as usize;
    let eval_ids: HashSet<&str> = ids[..n_eval].iter().copied().collect();
    let (eval, pool): (Vec<Document>, Vec<Document>) = documents
        .iter()
        .cloned()
        .partition(|d| eval_ids.contains(d.doc_id.as_str()));
    Ok((pool, eval))
}

/// `(pool, eval)` for a session: the explicit test set when there is one,
/// otherwise a seeded split of the gold-labeled training rows. Unlabeled
/// training rows always stay in the pool.
pub fn partition(
    train: &[Document],
    test: Option<&[Document]>,
    eval_fraction: f64,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>)> {
    if let Some(test) = test {
        return Ok((train.to_vec(), test.to_vec()));
    }
    let (labeled, unlabeled): (Vec<Document>, Vec<Document>) =
        train.iter().cloned().partition(|d| d.gold_label.is_some());
    let (mut pool, eval) = split(&labeled, eval_fraction, seed)?;
    pool.extend(unlabeled);
    Ok((pool, eval))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub expected_train_rows: usize,
    /// `None` for datasets that ship as one file and are split locally.
    pub expected_test_rows: Option<usize>,
    pub label_names: Vec<String>,
    pub source_url: String,
}

impl DatasetDescriptor {
    /// Compares loaded row and label counts against the descriptor. Mismatches
    /// are returned (and logged) as warnings; public mirrors drift.
    pub fn check(&self, train_rows: usize, test_rows: Option<usize>, schema: &LabelSchema) -> Vec<String> {
        let mut warnings = Vec::new();
        if train_rows != self.expected_train_rows {
            warnings.push(format!(
                "{}: expected {} train rows, found {train_rows}",
                self.name, self.expected_train_rows
            ));
        }
        if let (Some(expected), Some(found)) = (self.expected_test_rows, test_rows) {
            if expected != found {
                warnings.push(format!("{}: expected {expected} test rows, found {found}", self.name));
            }
        }
        if schema.len() != self.label_names.len() {
            warnings.push(format!(
                "{}: expected {} labels, found {}",
                self.name,
                self.label_names.len(),
                schema.len()
            ));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        warnings
    }
}

const BANKING77: [&str; 77] = [
    "activate_my_card",
    "age_limit",
    "apple_pay_or_google_pay",
    "atm_support",
    "automatic_top_up",
    "balance_not_updated_after_bank_transfer",
    "balance_not_updated_after_cheque_or_cash_deposit",
    "beneficiary_not_allowed",
    "cancel_transfer",
    "card_about_to_expire",
    "card_acceptance",
    "card_arrival",
    "card_delivery_estimate",
    "card_linking",
    "card_not_working",
    "card_payment_fee_charged",
    "card_payment_not_recognised",
    "card_payment_wrong_exchange_rate",
    "card_swallowed",
    "cash_withdrawal_charge",
    "cash_withdrawal_not_recognised",
    "change_pin",
    "compromised_card",
    "contactless_not_working",
    "country_support",
    "declined_card_payment",
    "declined_cash_withdrawal",
    "declined_transfer",
    "direct_debit_payment_not_recognised",
    "disposable_card_limits",
    "edit_personal_details",
    "exchange_charge",
    "exchange_rate",
    "exchange_via_app",
    "extra_charge_on_statement",
    "failed_transfer",
    "fiat_currency_support",
    "get_disposable_virtual_card",
    "get_physical_card",
    "getting_spare_card",
    "getting_virtual_card",
    "lost_or_stolen_card",
    "lost_or_stolen_phone",
    "order_physical_card",
    "passcode_forgotten",
    "pending_card_payment",
    "pending_cash_withdrawal",
    "pending_top_up",
    "pending_transfer",
    "pin_blocked",
    "receiving_money",
    "Refund_not_showing_up",
    "request_refund",
    "reverted_card_payment?",
    "supported_cards_and_currencies",
    "terminate_account",
    "top_up_by_bank_transfer_charge",
    "top_up_by_card_charge",
    "top_up_by_cash_or_cheque",
    "top_up_failed",
    "top_up_limits",
    "top_up_reverted",
    "topping_up_by_card",
    "transaction_charged_twice",
    "transfer_fee_charged",
    "transfer_into_account",
    "transfer_not_received_by_recipient",
    "transfer_timing",
    "unable_to_verify_identity",
    "verify_my_identity",
    "verify_source_of_funds",
    "verify_top_up",
    "virtual_card_not_working",
    "visa_or_mastercard",
    "why_verify_identity",
    "wrong_amount_of_cash_received",
    "wrong_exchange_rate_for_cash_withdrawal",
];

const TREC_FINE: [&str; 50] = [
    "ABBR:abb", "ABBR:exp", "ENTY:animal", "ENTY:body", "ENTY:color", "ENTY:cremat", "ENTY:currency",
    "ENTY:dismed", "ENTY:event", "ENTY:food", "ENTY:instru", "ENTY:lang", "ENTY:letter", "ENTY:other",
    "ENTY:plant", "ENTY:product", "ENTY:religion", "ENTY:sport", "ENTY:substance", "ENTY:symbol",
    "ENTY:techmeth", "ENTY:termeq", "ENTY:veh", "ENTY:word", "DESC:def", "DESC:desc", "DESC:manner",
    "DESC:reason", "HUM:gr", "HUM:ind", "HUM:title", "HUM:desc", "LOC:city", "LOC:country", "LOC:mount",
    "LOC:other", "LOC:state", "NUM:code", "NUM:count", "NUM:date", "NUM:dist", "NUM:money", "NUM:ord",
    "NUM:other", "NUM:period", "NUM:perc", "NUM:speed", "NUM:temp", "NUM:volsize", "NUM:weight",
];

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Descriptors for the six benchmark datasets. The data itself is not bundled.
pub fn builtin_descriptors() -> Vec<DatasetDescriptor> {
    vec![
        DatasetDescriptor {
            name: "amazon".into(),
            expected_train_rows: 6001,
            expected_test_rows: Some(2001),
            label_names: strings(&["Excellent", "Very Good", "Neutral", "Good", "Bad"]),
            source_url: String::new(),
        },
        DatasetDescriptor {
            name: "banking".into(),
            expected_train_rows: 200,
            expected_test_rows: Some(2000),
            label_names: strings(&BANKING77),
            source_url: "https://huggingface.co/datasets/PolyAI/banking77".into(),
        },
        // The five listing categories; the published description also attaches
        // the TREC coarse tags to this dataset, which is left unresolved.
        DatasetDescriptor {
            name: "craigslist".into(),
            expected_train_rows: 201,
            expected_test_rows: Some(1001),
            label_names: strings(&["phone", "furniture", "housing", "electronics", "car"]),
            source_url: String::new(),
        },
        DatasetDescriptor {
            name: "financial-phrasebank".into(),
            expected_train_rows: 4850,
            expected_test_rows: None,
            label_names: strings(&["positive", "negative", "neutral"]),
            source_url: "https://huggingface.co/datasets/takala/financial_phrasebank".into(),
        },
        DatasetDescriptor {
            name: "trec-coarse".into(),
            expected_train_rows: 5452,
            expected_test_rows: Some(500),
            label_names: strings(&["ABBR", "ENTY", "DESC", "HUM", "LOC", "NUM"]),
            source_url: "https://huggingface.co/datasets/CogComp/trec".into(),
        },
        DatasetDescriptor {
            name: "trec-fine".into(),
            expected_train_rows: 5452,
            expected_test_rows: Some(500),
            label_names: strings(&TREC_FINE),
            source_url: "https://huggingface.co/datasets/CogComp/trec".into(),
        },
    ]
}

pub fn descriptor(name: &str) -> Option<DatasetDescriptor> {
    builtin_descriptors().into_iter().find(|d| d.name.eq_ignore_ascii_case(name))
}
