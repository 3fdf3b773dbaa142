use std::collections::BTreeSet;

use sqleval_core::bundled;
use sqleval_core::datastore::Catalog;
use sqleval_core::gateway::{template_pair, CandidatePair, ModelAdapter, Mutation};
use sqleval_core::pipeline::{augment_from_run, run_evaluation, AugmentJob, AugmentJobError, RunConfig, RunContext, WorkloadRef};
use sqleval_core::sql::{classify, parse_sql, SqlDialect, Subcategory};
use sqleval_core::workload::{validate_candidate, FingerprintIndex, Rejection, ValidateOptions, WorkloadStore};

fn sub(s: &str) -> Subcategory {
    s.parse().unwrap()
}

fn setup() -> (tempfile::TempDir, Catalog) {
    let wd = tempfile::tempdir().unwrap();
    bundled::install(wd.path()).unwrap();
    let cat = Catalog::load(&wd.path().join("catalog.json")).unwrap();
    (wd, cat)
}

#[test]
fn candidate_rejection_reasons() {
    let (wd, cat) = setup();
    let store = WorkloadStore::new(wd.path().join("workloads"));
    let w = store.load("demo_medium", None, &cat, ValidateOptions::default()).unwrap();
    let mut idx = FingerprintIndex::from_workload(&w, &cat);
    let pair = |sql: &str, db: &str| CandidatePair {
        question: "q".into(),
        sql: sql.into(),
        db_id: db.into(),
    };
    let (_, sql) = template_pair(sub("4.2"), 0);
    assert_eq!(validate_candidate(&pair(&sql, "company"), sub("4.2"), &cat, &mut idx, 5000), Ok(()));
    // accepted pairs join the index
    assert_eq!(validate_candidate(&pair(&sql, "company"), sub("4.2"), &cat, &mut idx, 5000), Err(Rejection::Duplicate));
    let existing = &w.data_points[0];
    assert_eq!(
        validate_candidate(&pair(&existing.gt_sql, &existing.db_id), existing.label().subcategory, &cat, &mut idx, 5000),
        Err(Rejection::Duplicate)
    );
    let (_, exists_sql) = template_pair(sub("4.3"), 0);
    assert_eq!(
        validate_candidate(&pair(&exists_sql, "company"), sub("4.2"), &cat, &mut idx, 5000),
        Err(Rejection::LabelMismatch)
    );
    assert_eq!(
        validate_candidate(&pair("SELECT nosuch FROM emp", "company"), sub("1.2"), &cat, &mut idx, 5000),
        Err(Rejection::ExecFailure)
    );
    assert_eq!(
        validate_candidate(&pair("SELECT name FROM emp", "nowhere"), sub("1.2"), &cat, &mut idx, 5000),
        Err(Rejection::UnknownDb)
    );
    assert_eq!(
        validate_candidate(&pair("SELEC name", "company"), sub("1.2"), &cat, &mut idx, 5000),
        Err(Rejection::ParseFailure)
    );
}

#[test]
fn augmentation_publishes_a_superset_version() {
    let (wd, cat) = setup();
    let mut cfg = RunConfig::new(
        WorkloadRef::stored("demo_hard", None),
        vec![ModelAdapter::mutant("noorder", Mutation::DropOrderBy)],
    );
    cfg.run_id = Some("base".into());
    run_evaluation(&cfg, &RunContext::new(wd.path())).unwrap();

    let mut job = AugmentJob::new("base", 0.1, 3);
    job.min_support = 1;
    let summary = augment_from_run(wd.path(), &job).unwrap();
    assert_eq!(summary.weak, vec![sub("1.6"), sub("3.5")]);
    assert_eq!((summary.parent_version, summary.version), (1, 2));
    assert_eq!(summary.added.len(), 6);

    let store = WorkloadStore::new(wd.path().join("workloads"));
    let v1 = store.load("demo_hard", Some(1), &cat, ValidateOptions::default()).unwrap();
    let v2 = store.load("demo_hard", Some(2), &cat, ValidateOptions::default()).unwrap();
    assert_eq!(v2.parent_version, Some(1));
    assert!(v1.data_points.iter().all(|d| v2.data_points.contains(d)));
    let added: Vec<_> = v2.data_points.iter().filter(|d| summary.added.contains(&d.id)).collect();
    assert_eq!(added.len(), 6);
    for d in added {
        let label = classify(&parse_sql(&d.gt_sql, SqlDialect::Sqlite).unwrap());
        assert!(summary.weak.contains(&label.subcategory));
    }
    let meta = store.meta("demo_hard").unwrap();
    assert_eq!(meta.latest(), Some(2));

    let unknown = augment_from_run(wd.path(), &AugmentJob::new("nope", 0.5, 3)).unwrap_err();
    assert!(matches!(unknown, AugmentJobError::Run(_)));
    let none = augment_from_run(wd.path(), &AugmentJob::new("base", 0.0, 3)).unwrap_err();
    assert!(matches!(none, AugmentJobError::NoWeakSubcategories(_)));
    let ids: BTreeSet<_> = v2.data_points.iter().map(|d| &d.id).collect();
    assert_eq!(ids.len(), v2.data_points.len());
}
