//! Fine-grained evaluation of text-to-SQL models.

pub mod bundled;
pub mod datastore;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod repair;
pub mod reporting;
pub mod sql;
pub mod workload;
