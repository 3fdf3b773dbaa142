//! SQL analysis: parsing, normalization, feature extraction, taxonomy
//! classification and structural comparison.

pub mod ast;
pub mod exact_match;
pub mod features;
pub mod normalize;
pub mod parse;
pub mod taxonomy;
pub mod visit;

use std::collections::BTreeMap;

pub use exact_match::{exact_match, ComponentDiff, MatchMode};
pub use features::{extract_features, FeatureSet};
pub use normalize::{ast_fingerprint, normalize, normalize_with, NormalizeOptions, NormalizedAst};
pub use parse::{parse_sql, QueryAst, SqlDialect};
pub use taxonomy::{classify, Category, Subcategory, TaxonomyLabel};

/// Table name to ordered column names, all lowercase.
pub type SchemaMap = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SqlError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("ambiguous column `{column}` matches tables {candidates:?}")]
    AmbiguousColumn {
        column: String,
        candidates: Vec<String>,
    },
}
