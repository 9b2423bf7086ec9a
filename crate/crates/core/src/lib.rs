//! Taxonomy-conditional labeling of radiology reports through chat-completion
//! endpoints.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: taxonomies, annotated reports, loaders and finding filters
//! - [`splitter`]: multilabel iterative stratification and stratified subsampling
//! - [`promptgen`]: instruction grammar, few-shot bundles, canonical answers, SFT export
//! - [`backend`]: chat-completion clients (HTTP and mock) with bounded batching
//! - [`extractor`]: recovery and validation of label maps from model text
//! - [`metrics`]: per-finding F1, macro/weighted aggregates, mismatches, METEOR
//! - [`augment`]: translation-based augmentation of training sets

pub mod augment;
pub mod backend;
pub mod corpus;
pub mod extractor;
pub mod metrics;
pub mod promptgen;
pub mod splitter;

pub use backend::{
    ChatBackend, ChatMessage, ChatRequest, ChatResponse, Client, FinishReason, GenerationParams, MockBackend,
    RawAnswer, Role,
};
pub use corpus::{AnnotatedReport, Code, Labels, Language, MentionClass, Report, TaxonomySpec};
pub use extractor::{ParsedPrediction, RawObject, Repair};
pub use metrics::{EvalReport, PredictionRecord};
pub use promptgen::{PromptBundle, SftRecord, Shot};
pub use splitter::{SplitAssignment, Subset};
