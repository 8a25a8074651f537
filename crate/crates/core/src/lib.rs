// SPDX-License-Identifier: Apache-2.0

//! Measuring AI-generated code in commit histories.
//!
//! The crate is organised as a pipeline. [`ingest`] turns commit dumps (or
//! local git checkouts) into function-level changes, [`scoring`] attaches an
//! AI probability to each change, [`correction`] converts raw detection
//! rates into misclassification-corrected prevalence, [`panel`] aggregates
//! everything into a user-quarter panel and [`econometrics`] estimates
//! two-way fixed-effects models on it. [`libnet`] builds the library
//! co-occurrence network used for coarsened novelty outcomes, [`valuation`]
//! holds the economic-value calculators and [`simulate`] generates synthetic
//! corpora with known ground truth for every statistical stage.

pub mod codemetrics;
pub mod correction;
pub mod diff;
pub mod econometrics;
mod error;
pub mod ingest;
pub mod libnet;
pub mod panel;
pub mod pylex;
pub mod quarter;
pub mod scoring;
pub mod seed;
pub mod simulate;
pub mod stats;
pub mod valuation;

pub use error::{Error, Result};

pub use codemetrics::{CorpusStats, VerbosityFeatures};
pub use correction::{CorrectionParams, PrevalenceEstimate};
pub use econometrics::{AttenuationInput, FEFit, MovingAverageSeries};
pub use ingest::{CommitMeta, CommitRecord, FileChange, FunctionChange, MinedRecord};
pub use libnet::{CommunityMap, LibraryGraph};
pub use panel::{PanelRow, UserProfile};
pub use quarter::Quarter;
pub use scoring::{BaselineModel, EvalMetrics, ScoreRecord};
pub use simulate::SimScenario;
pub use valuation::{SurplusInputs, WageTaskTable};
