mod common;

use common::scaling::*;
use sqleval_core::bundled;
use sqleval_core::datastore::{scale_database, Catalog};

#[test]
fn tenfold_scaling_is_faithful() {
    let wd = tempfile::tempdir().unwrap();
    bundled::install(wd.path()).unwrap();
    for db in ["company", "store"] {
        let f = fidelity(wd.path(), db);
        assert!(f.exact_counts, "{db}: row counts");
        assert_eq!(f.orphans, 0, "{db}: orphans");
        assert!(f.max_null_drift <= 0.05, "{db}: null drift {}", f.max_null_drift);
        assert!(f.max_tvd <= 0.1, "{db}: tvd {}", f.max_tvd);
    }
}

#[test]
fn scaling_is_deterministic_and_leaves_the_base_untouched() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut dumps = Vec::new();
    for wd in [&a, &b] {
        bundled::install(wd.path()).unwrap();
        let cat = Catalog::load(&wd.path().join("catalog.json")).unwrap();
        let base = cat.open("company").unwrap();
        let before = std::fs::read(&base.location).unwrap();
        let scaled = scale_database(&base, 3, 9, wd.path()).unwrap();
        assert_eq!(std::fs::read(&base.location).unwrap(), before);
        let c = open(&scaled.location);
        let mut dump = Vec::new();
        for t in &scaled.schema.tables {
            for col in &t.columns {
                dump.push(column(&c, &t.name, &col.name).iter().map(key).collect::<Vec<_>>());
            }
        }
        dumps.push(dump);
        // factor 1 is the identity
        let same = scale_database(&base, 1, 9, wd.path()).unwrap();
        assert_eq!(same, base);
    }
    assert_eq!(dumps[0], dumps[1]);
}
