// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dump schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaVersion { expected: String, found: String },
    #[error("dump has no schema header line")]
    MissingHeader,
    #[error("empty function body")]
    EmptyFunctionBody,
    #[error("zero standard deviation for feature `{0}`")]
    DegenerateFeature(String),
    #[error("zero rank variance")]
    ZeroRankVariance,
    #[error("degenerate labels: both classes are required")]
    DegenerateLabels,
    #[error("non-identified confusion parameters (tpr {tpr}, fpr {fpr})")]
    NonIdentified { tpr: f64, fpr: f64 },
    #[error("no correction parameters for groups: {}", .0.join(", "))]
    MissingParams(Vec<String>),
    #[error("regressor `{0}` is collinear with fixed effects")]
    CollinearWithFixedEffects(String),
    #[error("singular design; aliased columns: {}", .0.join(", "))]
    Singular(Vec<String>),
    #[error("at least two clusters are required")]
    SingleCluster,
    #[error("scorer protocol violation on output line {line}: {message}")]
    Protocol { line: usize, message: String },
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("category map required for coarsened outcomes")]
    MissingCategoryMap,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
