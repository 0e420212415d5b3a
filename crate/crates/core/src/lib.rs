//! Narrative explanations for opaque model predictions.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`model_io`] loads the standardized model output (feature vectors and
//!    prediction scores) and exposes scoring channels onto the model.
//! 2. [`interpreter`] attributes each prediction to features (LIME,
//!    KernelSHAP, K-LIME, exact Shapley values).
//! 3. [`design`] and [`narrative`] turn attributions into ranked sentences
//!    using a feature hierarchy and narrative templates.
//! 4. [`export`] writes the results as JSONL, Markdown, HTML or e-mail text.
//!
//! [`pipeline`] wires the stages together from a single run configuration.

pub mod design;
pub mod export;
pub mod interpreter;
pub mod linalg;
pub mod model_io;
pub mod narrative;
pub mod pipeline;
