//! Active-learning text classification.
//!
//! Documents are featurized with TF-IDF, scored by a softmax regression
//! model, and ranked by prediction uncertainty so that a human (or a
//! simulated [`oracle::Oracle`]) labels the most informative rows first.
//! After every batch the model is retrained from scratch and evaluated,
//! producing a [`evaluation::LearningCurve`].
//!
//! Inner loops (prediction over a pool, per-class gradient rows) run on
//! rayon with the default `parallel` feature and sequentially without it;
//! results are bit-identical either way.

pub mod backends;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod featurizer;
pub mod oracle;
pub mod par;
pub mod session;
pub mod synthetic;
pub mod uncertainty;

pub use classifier::{Model, TrainConfig};
pub use corpus::{DataFormat, DatasetDescriptor, Document, LabelSchema, SchemaSource};
pub use error::{Error, Result};
pub use evaluation::{LearningCurve, RoundMetrics};
pub use featurizer::{FeaturizerConfig, SparseVector, Vocabulary};
pub use oracle::Oracle;
pub use session::{Annotation, AnnotationSource, Protocol, SessionConfig, SessionState};
pub use uncertainty::{Prediction, Strategy};
