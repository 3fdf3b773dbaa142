mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::corpus::*;
use sqleval_core::sql::{ast_fingerprint, classify, exact_match, normalize, parse_sql, MatchMode, QueryAst, Subcategory, SqlDialect};

#[test]
fn classifier_agrees_with_hand_labels() {
    let mut wrong = Vec::new();
    let mut per_sub: BTreeMap<String, usize> = BTreeMap::new();
    for e in corpus() {
        let got = classify(&parse(&e.sql)).subcategory.to_string();
        if got != e.label {
            wrong.push(format!("{} expected {} got {}", e.id, e.label, got));
        }
        *per_sub.entry(e.label).or_default() += 1;
    }
    assert!(wrong.is_empty(), "{wrong:#?}");
    let all: BTreeSet<String> = Subcategory::all().map(|s| s.to_string()).collect();
    assert_eq!(per_sub.keys().cloned().collect::<BTreeSet<_>>(), all);
    assert!(per_sub.values().all(|&n| n == 2));
}

#[test]
fn corpus_round_trips_and_is_distinct() {
    let schemas = schemas();
    let mut prints = BTreeSet::new();
    for e in corpus() {
        let ast = parse(&e.sql);
        let again = parse(&ast.render());
        assert_eq!(again.root, ast.root, "{}", e.id);
        let n = normalize(&ast, Some(&schemas[&e.db_id])).unwrap();
        let n2 = normalize(&n.to_query_ast(), Some(&schemas[&e.db_id])).unwrap();
        assert_eq!(n2.render(), n.render(), "normalize is idempotent for {}", e.id);
        prints.insert(ast_fingerprint(&n));
    }
    assert_eq!(prints.len(), 72);
}

#[test]
fn perturbations_preserve_exact_match_and_label() {
    let schemas = schemas();
    let mut failures = Vec::new();
    let mut value_checked = 0;
    for e in corpus() {
        let schema = Some(&schemas[&e.db_id]);
        let gt = parse(&e.sql);
        let label = classify(&gt);
        let variants = [
            ("whitespace", perturb_whitespace(&e.sql)),
            ("case", perturb_case(&e.sql)),
            ("alias", perturb_aliases(&e.sql)),
        ];
        for (kind, sql) in variants {
            let v = match parse_sql(&sql, SqlDialect::Sqlite) {
                Ok(v) => v,
                Err(err) => {
                    failures.push(format!("{} {kind}: does not parse: {err}\n{sql}", e.id));
                    continue;
                }
            };
            for mode in [MatchMode::Strict, MatchMode::SpiderCompatible] {
                let (ok, diff) = exact_match(&v, &gt, mode, schema);
                if !ok {
                    failures.push(format!("{} {kind} {mode:?}: {diff:?}\n{sql}", e.id));
                }
            }
            if classify(&v) != label {
                failures.push(format!("{} {kind}: label changed\n{sql}", e.id));
            }
        }
        if let Some(sql) = perturb_values(&e.sql) {
            value_checked += 1;
            let v = parse(&sql);
            if !exact_match(&v, &gt, MatchMode::SpiderCompatible, schema).0 {
                failures.push(format!("{} values: spider mode rejected\n{sql}", e.id));
            }
            if exact_match(&v, &gt, MatchMode::Strict, schema).0 {
                failures.push(format!("{} values: strict mode accepted\n{sql}", e.id));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n\n"));
    // corpus queries that carry at least one literal
    assert_eq!(value_checked, 34);
}

#[test]
fn exact_match_is_reflexive_symmetric_and_label_preserving() {
    let schemas = schemas();
    let entries = corpus();
    let asts: Vec<QueryAst> = entries.iter().map(|e| parse(&e.sql)).collect();
    for (i, a) in asts.iter().enumerate() {
        let schema = Some(&schemas[&entries[i].db_id]);
        assert!(exact_match(a, a, MatchMode::Strict, schema).0, "{}", entries[i].id);
        for (j, b) in asts.iter().enumerate() {
            if entries[i].db_id != entries[j].db_id {
                continue;
            }
            let ab = exact_match(a, b, MatchMode::Strict, schema).0;
            assert_eq!(ab, exact_match(b, a, MatchMode::Strict, schema).0);
            if ab {
                assert_eq!(classify(a), classify(b));
            }
            assert_eq!(ab, i == j, "{} vs {}", entries[i].id, entries[j].id);
        }
    }
}

#[test]
fn wrapping_never_lowers_the_category() {
    for e in corpus() {
        let base = classify(&parse(&e.sql)).category;
        let wrapped = [
            format!("SELECT * FROM ({}) AS w UNION SELECT * FROM ({}) AS w2", e.sql, e.sql),
            format!("SELECT * FROM ({}) AS w", e.sql),
            format!("SELECT COUNT(*) FROM ({}) AS w", e.sql),
        ];
        for sql in wrapped {
            let c = classify(&parse(&sql)).category;
            assert!(c >= base, "{}: {base} became {c} in {sql}", e.id);
        }
    }
}
