//! Append-only session logs. Each line is one event; replaying the events in
//! order rebuilds the session exactly, because the loop is deterministic.
//!
//! The `created` event carries the documents and any round-0 predictions, so a
//! log replays without the dataset store or the backend that produced them.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use hitl_core::backends::ZeroShot;
use hitl_core::session::create_session;
use hitl_core::{Annotation, Document, Error as CoreError, LabelSchema, RoundMetrics, SessionConfig, SessionState};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartRow {
    pub text: String,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        v: u32,
        session_id: String,
        dataset: String,
        created_at: DateTime<Utc>,
        config: SessionConfig,
        labels: Vec<String>,
        pool: Vec<Document>,
        eval: Vec<Document>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cold_start: Option<Vec<ColdStartRow>>,
    },
    Annotated {
        v: u32,
        round: usize,
        annotations: Vec<Annotation>,
    },
    Evaluated {
        v: u32,
        round: usize,
        metrics: RoundMetrics,
    },
}

/// Wraps a predictor and keeps every distribution it hands out.
pub struct Recording<'a> {
    inner: &'a dyn ZeroShot,
    rows: Mutex<Vec<ColdStartRow>>,
}

impl<'a> Recording<'a> {
    pub fn new(inner: &'a dyn ZeroShot) -> Self {
        Self { inner, rows: Mutex::new(Vec::new()) }
    }

    pub fn into_rows(self) -> Vec<ColdStartRow> {
        self.rows.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}

impl ZeroShot for Recording<'_> {
    fn predict_batch(&self, texts: &[&str], schema: &LabelSchema) -> hitl_core::Result<Vec<Vec<f64>>> {
        let out = self.inner.predict_batch(texts, schema)?;
        let mut rows = self.rows.lock().unwrap_or_else(|p| p.into_inner());
        rows.extend(texts.iter().zip(&out).map(|(t, p)| ColdStartRow { text: t.to_string(), probs: p.clone() }));
        Ok(out)
    }
}

/// Plays back recorded distributions by text.
pub struct Recorded(HashMap<String, Vec<f64>>);

impl Recorded {
    pub fn new(rows: &[ColdStartRow]) -> Self {
        Self(rows.iter().map(|r| (r.text.clone(), r.probs.clone())).collect())
    }
}

impl ZeroShot for Recorded {
    fn predict_batch(&self, texts: &[&str], _schema: &LabelSchema) -> hitl_core::Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                self.0
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| CoreError::BackendProtocolError(format!("no recorded prediction for `{t}`")))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes a new log holding only `created`; fails if the file exists.
    pub fn create(path: impl Into<PathBuf>, created: &Event) -> Result<Self> {
        let path = path.into();
        let dir = path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp", uuid::Uuid::new_v4().simple()));
        let mut line = serde_json::to_vec(created)?;
        line.push(b'\n');
        let mut f = File::create(&tmp)?;
        f.write_all(&line)?;
        f.sync_all()?;
        drop(f);
        if path.exists() {
            let _ = fs::remove_file(&tmp);
            return Err(ServiceError::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} already exists", path.display()),
            )));
        }
        fs::rename(&tmp, &path)?;
        Ok(Self { path })
    }

    /// Appends events with a single write so a crash leaves at most one torn
    /// trailing line.
    pub fn append(&self, events: &[Event]) -> Result<()> {
        let mut buf = Vec::new();
        for e in events {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct Replayed {
    pub state: SessionState,
    pub dataset: String,
    pub created_at: DateTime<Utc>,
    /// Byte length of the complete lines; anything after it was a torn write.
    pub valid_len: u64,
}

/// Rebuilds a session from its log, checking every logged evaluation against
/// the recomputed one.
pub fn replay(path: &Path) -> Result<Replayed> {
    let fail = |reason: String| ServiceError::Replay { path: path.to_path_buf(), reason };
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut lines: Vec<(usize, String)> = Vec::new();
    let mut valid_len = 0u64;
    let mut line_no = 0;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !line.ends_with('\n') {
            log::warn!("{}: ignoring torn trailing line {line_no}", path.display());
            break;
        }
        valid_len += n as u64;
        if !line.trim().is_empty() {
            lines.push((line_no, line));
        }
    }

    let mut events = lines.into_iter().map(|(no, l)| {
        serde_json::from_str::<Event>(&l).map_err(|e| fail(format!("line {no}: {e}")))
    });
    let (mut state, dataset, created_at) = match events.next().transpose()? {
        Some(Event::Created {
            v,
            session_id,
            dataset,
            created_at,
            config,
            labels,
            pool,
            eval,
            cold_start,
        }) => {
            if v != LOG_VERSION {
                return Err(fail(format!("unsupported log version {v}")));
            }
            let schema = LabelSchema::new(labels)?;
            let mut state = create_session(session_id, &pool, &eval, &schema, config)?;
            if let Some(rows) = cold_start {
                state.attach_cold_start(&Recorded::new(&rows))?;
            }
            (state, dataset, created_at)
        }
        Some(_) => return Err(fail("first event is not `created`".into())),
        None => return Err(fail("empty log".into())),
    };

    for event in events {
        match event? {
            Event::Created { .. } => return Err(fail("second `created` event".into())),
            Event::Annotated { round, annotations, .. } => {
                if round != state.round() + 1 {
                    return Err(fail(format!("annotated round {round} after round {}", state.round())));
                }
                let first = annotations.first().ok_or_else(|| fail(format!("round {round} has no annotations")))?;
                let (source, ts) = (first.source, first.timestamp);
                let pairs: Vec<(String, usize)> = annotations.iter().map(|a| (a.doc_id.clone(), a.label)).collect();
                state.submit_annotations(&pairs, source, ts)?;
            }
            Event::Evaluated { round, metrics, .. } => {
                let recomputed = state.curve().rounds().get(round);
                if round != state.round() || recomputed != Some(&metrics) {
                    return Err(fail(format!("round {round} metrics do not match the replay")));
                }
            }
        }
    }
    Ok(Replayed {
        state,
        dataset,
        created_at,
        valid_len,
    })
}

/// Drops a torn trailing line left by an interrupted append.
pub fn repair(path: &Path, valid_len: u64) -> Result<()> {
    let f = OpenOptions::new().write(true).open(path)?;
    if f.metadata()?.len() > valid_len {
        log::warn!("{}: truncating to {valid_len} bytes", path.display());
        f.set_len(valid_len)?;
    }
    Ok(())
}

/// Events recording one submitted round of `state`.
pub fn round_events(state: &SessionState) -> Vec<Event> {
    let round = state.round();
    vec![
        Event::Annotated {
            v: LOG_VERSION,
            round,
            annotations: state.labeled().iter().filter(|a| a.round == round).cloned().collect(),
        },
        Event::Evaluated {
            v: LOG_VERSION,
            round,
            metrics: state.curve().last().expect("curve is never empty").clone(),
        },
    ]
}
