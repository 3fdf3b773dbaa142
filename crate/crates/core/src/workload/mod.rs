//! Versioned question/SQL workloads: loading, alignment and augmentation.

pub mod align;
pub mod augment;
pub mod model;
pub mod store;

pub use align::{align_workload, aligned_id, max_aligned_size, AlignError, TargetDistribution};
pub use augment::{
    augment_workload, select_weak_subcategories, validate_candidate, AugmentOutcome, AugmentParams, FingerprintIndex,
    Rejection, DEFAULT_MIN_SUPPORT,
};
pub use model::{
    load_workload, query_fingerprint, validate_points, DataPoint, Provenance, Split, SplitStats, ValidateOptions,
    ValidationError, Workload,
};
pub use store::{StoreError, VersionMeta, WorkloadMeta, WorkloadStore};
