//! Insights Design: the Feature Info File, narrative templates, the
//! user-feature side file, and the super-feature mapping linking them to the
//! model's feature vector.

mod expr;
mod feature_info;
mod mapping;
mod templates;
mod user_values;

pub use expr::{
    eval_expression, parse_threshold, BinOp, CmpOp, Comparison, EvalError, Expr, ParseError,
    ThresholdExpr,
};
pub use feature_info::{parse_feature_info, FeatureInfoRecord, FeatureInfoTable, Source};
pub use mapping::{build_super_feature_mapping, Member, SuperFeature, SuperFeatureMapping};
pub use templates::{
    parse_templates, ExtraItem, ItemFormat, NarrativeTemplate, Segment, TemplateSet, SUPER_NAME,
};
pub use user_values::{UserValue, UserValues};

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model_io::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnboundReason {
    /// No feature under the super-feature provides the item.
    Missing,
    /// More than one feature provides it.
    Ambiguous,
}

impl fmt::Display for UnboundReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnboundReason::Missing => "no feature provides it",
            UnboundReason::Ambiguous => "bound by more than one feature",
        })
    }
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("feature info line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("feature info header: {0}")]
    BadHeader(String),
    #[error("feature info line {line}: `{column}` is empty")]
    MissingValue { column: String, line: usize },
    #[error("feature info line {line}: invalid `{column}` value `{value}`")]
    InvalidValue {
        column: String,
        value: String,
        line: usize,
    },
    #[error("original feature `{feature}` listed twice (line {line})")]
    DuplicateOriginalFeature { feature: String, line: usize },
    #[error("super-feature `{super_feature}` has conflicting `{field}` (line {line})")]
    InconsistentSuperFeature {
        super_feature: String,
        field: String,
        line: usize,
    },
    #[error("insight weight {weight} of `{feature}` is outside [0, 1] (line {line})")]
    WeightOutOfRange {
        feature: String,
        weight: f64,
        line: usize,
    },
    #[error("model feature `{feature}` is not in the bundle (line {line})")]
    UnknownModelFeature { feature: String, line: usize },
    #[error("super-feature `{super_feature}` has only user-source features")]
    UnpairedUserFeature { super_feature: String },
    #[error("template `{insight_type}` position {position}: {message}")]
    MalformedPlaceholder {
        insight_type: String,
        position: usize,
        message: String,
    },
    #[error("insight type `{0}` defined twice")]
    DuplicateInsightType(String),
    #[error("{context}, position {position}: {message}")]
    BadExpression {
        context: String,
        position: usize,
        message: String,
    },
    #[error("super-feature `{super_feature}`: placeholder `{placeholder}` {reason}")]
    UnboundPlaceholder {
        super_feature: String,
        placeholder: String,
        reason: UnboundReason,
    },
    #[error("no template for insight type `{insight_type}` (super-feature `{super_feature}`)")]
    MissingTemplate {
        insight_type: String,
        super_feature: String,
    },
    #[error("{0}")]
    Document(String),
    #[error("user values line {line}: {message}")]
    UserValues { line: usize, message: String },
}

pub(crate) fn read_file(path: &Path) -> Result<String, DesignError> {
    if !path.is_file() {
        return Err(DesignError::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|source| DesignError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Everything the narrative engine needs from the operator.
#[derive(Debug, Clone, PartialEq)]
pub struct InsightsDesign {
    pub info: FeatureInfoTable,
    pub mapping: SuperFeatureMapping,
    pub user_values: UserValues,
}

impl InsightsDesign {
    pub fn load(
        feature_info: impl AsRef<Path>,
        templates: impl AsRef<Path>,
        user_values: Option<&Path>,
        manifest: &DatasetManifest,
    ) -> Result<Self, DesignError> {
        let info = parse_feature_info(feature_info, manifest)?;
        let templates = parse_templates(templates)?;
        let mapping = build_super_feature_mapping(&info, &templates, manifest)?;
        let user_values = match user_values {
            Some(p) => UserValues::load(p)?,
            None => UserValues::default(),
        };
        Ok(Self {
            info,
            mapping,
            user_values,
        })
    }
}
