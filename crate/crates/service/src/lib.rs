//! Command-line and HTTP front end: ingest corpora and documents, run the
//! agent pipeline, take post-edits back into the memories, and export
//! evaluation sheets, vetting bundles and cost reports.

pub mod api;
pub mod cli;
pub mod config;
pub mod workspace;

pub use config::ServiceConfig;
pub use workspace::{PostEditSubmission, Workspace, WorkspaceError};
