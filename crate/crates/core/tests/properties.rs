mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::align::*;

use proptest::prelude::*;
use sqleval_core::datastore::{Cell, ResultTable, TimingStats};
use sqleval_core::gateway::{GenConfig, Gateway, GatewayOptions, GenerationRequest, ModelAdapter, Mutation};
use sqleval_core::metrics::{
    complexity_consistency, compare_result_tables, execution_accuracy, execution_time_consistency, ComparisonPolicy,
};
use sqleval_core::repair::{apply_sequence, suggest_repairs};
use sqleval_core::sql::{Category, Subcategory, TaxonomyLabel};
use sqleval_core::workload::align_workload;

fn cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        Just(Cell::Null),
        (-5i64..5).prop_map(Cell::Integer),
        (-50i64..50).prop_map(|x| Cell::Real(x as f64 / 4.0)),
        "[a-c]{0,2}".prop_map(Cell::Text),
    ]
}

fn table(max_rows: usize) -> impl Strategy<Value = ResultTable> {
    (1usize..4).prop_flat_map(move |w| {
        prop::collection::vec(prop::collection::vec(cell(), w), 0..max_rows).prop_map(move |rows| ResultTable {
            columns: (0..w).map(|i| format!("c{i}")).collect(),
            rows,
            ordered: false,
            truncated: false,
        })
    })
}

fn exact() -> ComparisonPolicy {
    ComparisonPolicy {
        float_rel_tol: 0.0,
        ..ComparisonPolicy::default()
    }
}

fn shuffled(t: &ResultTable, keys: &[u32]) -> ResultTable {
    let mut idx: Vec<usize> = (0..t.rows.len()).collect();
    idx.sort_by_key(|&i| (keys.get(i).copied().unwrap_or(0), i));
    ResultTable {
        rows: idx.iter().map(|&i| t.rows[i].clone()).collect(),
        ..t.clone()
    }
}

proptest! {
    #[test]
    fn comparison_is_an_equivalence_on_bags(a in table(7), c in table(7), keys in prop::collection::vec(any::<u32>(), 7)) {
        let p = exact();
        prop_assert!(compare_result_tables(&a, &a, &p));
        let b = shuffled(&a, &keys);
        prop_assert!(compare_result_tables(&a, &b, &p));
        prop_assert!(compare_result_tables(&b, &a, &p));
        prop_assert_eq!(compare_result_tables(&a, &c, &p), compare_result_tables(&c, &a, &p));
        let b2 = shuffled(&b, &keys.iter().rev().copied().collect::<Vec<_>>());
        prop_assert!(compare_result_tables(&a, &b2, &p));
    }

    #[test]
    fn permuted_columns_depend_on_policy(t in table(6)) {
        prop_assume!(t.columns.len() >= 2);
        let swapped = ResultTable {
            columns: t.columns.iter().rev().cloned().collect(),
            rows: t.rows.iter().map(|r| r.iter().rev().cloned().collect()).collect(),
            ..t.clone()
        };
        let strict = ComparisonPolicy::default();
        let loose = ComparisonPolicy { column_order_sensitive: false, ..ComparisonPolicy::default() };
        prop_assert_eq!(execution_accuracy(Ok(&swapped), &t, &loose).as_bool(), Some(true));
        let bag = |rows: &[Vec<Cell>]| {
            let mut v: Vec<String> = rows.iter().map(|r| format!("{r:?}")).collect();
            v.sort();
            v
        };
        let same_bag = bag(&swapped.rows) == bag(&t.rows);
        prop_assert_eq!(execution_accuracy(Ok(&swapped), &t, &strict).as_bool(), Some(same_bag));
    }

    #[test]
    fn repairs_are_sound_and_minimal(gt in table(6), ordered in any::<bool>(), op in 0u8..6, keys in prop::collection::vec(any::<u32>(), 6)) {
        let gt = ResultTable { ordered, ..gt };
        let mut gen = gt.clone();
        gen.ordered = false;
        match op {
            0 => gen = ResultTable {
                columns: gen.columns.iter().rev().cloned().collect(),
                rows: gen.rows.iter().map(|r| r.iter().rev().cloned().collect()).collect(),
                ..gen
            },
            1 => {
                gen.columns.push("extra".into());
                for (i, r) in gen.rows.iter_mut().enumerate() {
                    r.push(Cell::Integer(i as i64));
                }
            }
            2 => {
                let dup = gen.rows.clone();
                gen.rows.extend(dup);
            }
            3 => gen = shuffled(&gen, &keys),
            4 => gen.rows.push(gen.rows.first().cloned().unwrap_or_else(|| vec![Cell::Null; gen.columns.len()])),
            _ => {
                for r in &mut gen.rows {
                    for c in r.iter_mut() {
                        if let Cell::Real(x) = c {
                            *x += 0.001;
                        }
                    }
                }
            }
        }
        let p = ComparisonPolicy::default();
        let found = suggest_repairs("dp", "m", &gen, &gt, 2, &p);
        if compare_result_tables(&gen, &gt, &p) {
            prop_assert!(found.is_empty());
        }
        let reconciles = |seq: &[_]| {
            apply_sequence(&gen, &gt, seq, &p)
                .map(|o| compare_result_tables(&o.generated, &o.ground_truth, &p))
                .unwrap_or(false)
        };
        for s in &found {
            prop_assert!(reconciles(&s.transforms), "unsound {:?}", s.transforms);
            for k in 1..s.transforms.len() {
                prop_assert!(!reconciles(&s.transforms[..k]), "not minimal {:?}", s.transforms);
            }
        }
        let lens: std::collections::BTreeSet<usize> = found.iter().map(|s| s.transforms.len()).collect();
        prop_assert!(lens.len() <= 1, "mixed lengths {:?}", lens);
    }

    #[test]
    fn etc_bounds(gen_ms in 0.0f64..1e4, gt_ms in 0.0f64..1e4, floor in 0.0f64..10.0, tau in 0.0f64..5.0) {
        let t = |ms: f64| TimingStats::from_samples(vec![ms], false);
        let is = |o: sqleval_core::metrics::MetricOutcome| o.as_bool() == Some(true);
        prop_assert!(is(execution_time_consistency(&t(gen_ms), &t(gt_ms), f64::INFINITY, floor)));
        prop_assert!(is(execution_time_consistency(&t(gt_ms), &t(gt_ms), 0.0, floor)));
        // a looser bound never turns a pass into a failure
        if is(execution_time_consistency(&t(gen_ms), &t(gt_ms), tau, floor)) {
            prop_assert!(is(execution_time_consistency(&t(gen_ms), &t(gt_ms), tau + 1.0, floor)));
        }
        let timed_out = TimingStats::from_samples(vec![], true);
        prop_assert!(!is(execution_time_consistency(&timed_out, &t(gt_ms), f64::INFINITY, floor)));
    }

    #[test]
    fn cc_is_monotone_in_ground_truth(g in 1u8..=6, a in 1u8..=6, b in 1u8..=6) {
        let label = |c: u8| -> TaxonomyLabel { Subcategory::new(Category::from_number(c).unwrap(), 1).unwrap().into() };
        let (lo, hi) = (a.min(b), a.max(b));
        if complexity_consistency(Some(label(g)), label(lo)).as_bool() == Some(true) {
            prop_assert_eq!(complexity_consistency(Some(label(g)), label(hi)).as_bool(), Some(true));
        }
    }
}

fn weights_strategy() -> impl Strategy<Value = [u64; 6]> {
    prop::collection::vec(0u64..=20, 6)
        .prop_filter("some weight", |v| v.iter().any(|x| *x > 0))
        .prop_map(|v| {
            // 50ths scaled to thousandths; the last positive weight absorbs rounding
            let total: u64 = v.iter().sum();
            let mut w = [0u64; 6];
            for i in 0..6 {
                w[i] = v[i] * 1000 / total / 50 * 50;
            }
            let last = (0..6).rev().find(|&i| v[i] > 0).unwrap();
            w[last] += 1000 - w.iter().sum::<u64>();
            w
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn alignment_matches_brute_force(weights in weights_strategy(), avail in prop::array::uniform6(0usize..=5), seed in any::<u64>()) {
        let w = workload(&avail);
        let t = target(&weights);
        let infeasible = (0..6).any(|c| weights[c] > 0 && avail[c] == 0);
        match align_workload(&w, &t, seed) {
            Err(_) => prop_assert!(infeasible),
            Ok(a) => {
                prop_assert!(!infeasible);
                let n = brute_force_max(&weights, &avail);
                let got = category_counts(&a);
                prop_assert_eq!(got.iter().sum::<usize>() as u64, n);
                let want = oracle_quotas(&weights, n);
                prop_assert!(got.iter().zip(&want).all(|(g, q)| *g as u64 == *q), "{:?} vs {:?}", got, want);
                prop_assert_eq!(align_workload(&w, &t, seed).unwrap(), a);
            }
        }
    }

    #[test]
    fn batch_equals_sequential(n in 0usize..25, in_flight in 1usize..9, swap in any::<bool>(), fail in 0usize..30) {
        let g = Gateway::new(GatewayOptions { max_in_flight: in_flight, backoff: Duration::ZERO, ..Default::default() });
        let mut a = if swap {
            ModelAdapter::mutant("m", Mutation::SwapFirstTwoSelectColumns)
        } else {
            ModelAdapter::oracle("o")
        };
        a.settings.fail_on = vec![format!("dp{fail}")];
        let reqs: Vec<GenerationRequest> = (0..n)
            .map(|i| GenerationRequest {
                dp_id: format!("dp{i}"),
                question: format!("q{i}"),
                schema_text: "CREATE TABLE r (a, b);".into(),
                db_id: "t".into(),
                gt_sql: Some(format!("SELECT a, b FROM r WHERE a > {i}")),
                ..Default::default()
            })
            .collect();
        let gen = GenConfig::default();
        let strip = |r: &sqleval_core::gateway::GenerationRecord| (r.dp_id.clone(), r.sql_text.clone(), r.error.is_some());
        let batch: Vec<_> = g.submit_batch(&a, &reqs, &gen).iter().map(strip).collect();
        let seq: Vec<_> = reqs.iter().map(|r| strip(&g.generate_sql(&a, r, &gen))).collect();
        prop_assert_eq!(batch, seq);
    }
}

#[test]
fn alignment_acceptance_case() {
    let mut avail = [0usize; 6];
    avail[..3].copy_from_slice(&[10, 10, 10]);
    let weights = [500, 300, 200, 0, 0, 0];
    let w = workload(&avail);
    let a = align_workload(&w, &target(&weights), 7).unwrap();
    assert_eq!(brute_force_max(&weights, &avail), 20);
    assert_eq!(&category_counts(&a)[..3], &[10, 6, 4]);
    let counts: BTreeMap<String, usize> = a.eval_points().fold(BTreeMap::new(), |mut m, dp| {
        *m.entry(dp.id.clone()).or_insert(0) += 1;
        m
    });
    assert_eq!(counts.len(), 20);
}
