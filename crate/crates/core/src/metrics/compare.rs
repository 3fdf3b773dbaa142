//! Result-table equivalence under a configurable comparison policy.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::datastore::{Cell, ResultTable};

pub const ABS_TOLERANCE: f64 = 1e-9;
/// Column-permutation search is exhaustive up to this width.
pub const MAX_PERMUTATION_WIDTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonPolicy {
    pub order_sensitive_iff_gt_ordered: bool,
    pub float_rel_tol: f64,
    pub null_equals_null: bool,
    pub column_order_sensitive: bool,
}

impl Default for ComparisonPolicy {
    fn default() -> Self {
        ComparisonPolicy {
            order_sensitive_iff_gt_ordered: true,
            float_rel_tol: 1e-6,
            null_equals_null: true,
            column_order_sensitive: true,
        }
    }
}

impl ComparisonPolicy {
    pub fn is_valid(&self) -> bool {
        self.float_rel_tol >= 0.0 && self.float_rel_tol.is_finite()
    }
}

pub fn cells_equal(a: &Cell, b: &Cell, policy: &ComparisonPolicy) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => policy.null_equals_null,
        (Cell::Integer(x), Cell::Integer(y)) => x == y,
        (Cell::Text(x), Cell::Text(y)) => x == y,
        (Cell::Blob(x), Cell::Blob(y)) => x == y,
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => {
                if x == y {
                    return true;
                }
                let diff = (x - y).abs();
                diff <= ABS_TOLERANCE.max(policy.float_rel_tol * x.abs().max(y.abs()))
            }
            _ => false,
        },
    }
}

fn rows_equal(a: &[Cell], b: &[Cell], policy: &ComparisonPolicy) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y, policy))
}

fn cell_rank(c: &Cell) -> u8 {
    match c {
        Cell::Null => 0,
        Cell::Integer(_) | Cell::Real(_) => 1,
        Cell::Text(_) => 2,
        Cell::Blob(_) => 3,
    }
}

/// Total order used to canonicalize bags: NULL, numbers, text, blobs.
pub fn cell_cmp(a: &Cell, b: &Cell) -> Ordering {
    cell_rank(a).cmp(&cell_rank(b)).then_with(|| match (a, b) {
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
        (Cell::Blob(x), Cell::Blob(y)) => x.cmp(y),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        },
    })
}

fn row_cmp(a: &[Cell], b: &[Cell]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| cell_cmp(x, y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

fn bags_equal(a: &[Vec<Cell>], b: &[Vec<Cell>], policy: &ComparisonPolicy) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut x: Vec<&Vec<Cell>> = a.iter().collect();
    let mut y: Vec<&Vec<Cell>> = b.iter().collect();
    x.sort_by(|p, q| row_cmp(p, q));
    y.sort_by(|p, q| row_cmp(p, q));
    if x.iter().zip(&y).all(|(p, q)| rows_equal(p, q, policy)) {
        return true;
    }
    // Values within tolerance can sort differently; fall back to matching.
    let has_real = |rows: &[&Vec<Cell>]| rows.iter().any(|r| r.iter().any(|c| matches!(c, Cell::Real(_))));
    if !(has_real(&x) || has_real(&y)) || x.len() > 5000 {
        return false;
    }
    let mut used = vec![false; y.len()];
    x.iter().all(|p| {
        match (0..y.len()).find(|&j| !used[j] && rows_equal(p, y[j], policy)) {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

/// Row comparison with the column order fixed.
fn rows_match(a: &ResultTable, b: &ResultTable, policy: &ComparisonPolicy) -> bool {
    if b.ordered && policy.order_sensitive_iff_gt_ordered {
        a.rows.len() == b.rows.len() && a.rows.iter().zip(&b.rows).all(|(x, y)| rows_equal(x, y, policy))
    } else {
        bags_equal(&a.rows, &b.rows, policy)
    }
}

/// Selects columns of `t` in the order given by `map`.
pub fn project(t: &ResultTable, map: &[usize]) -> ResultTable {
    ResultTable {
        columns: map.iter().map(|&i| t.columns[i].clone()).collect(),
        rows: t
            .rows
            .iter()
            .map(|r| map.iter().map(|&i| r[i].clone()).collect())
            .collect(),
        ordered: t.ordered,
        truncated: t.truncated,
    }
}

fn column_values(t: &ResultTable, i: usize) -> Vec<&Cell> {
    let mut v: Vec<&Cell> = t.rows.iter().map(|r| &r[i]).collect();
    v.sort_by(|a, b| cell_cmp(a, b));
    v
}

/// Finds an injective map from `b`'s columns into `a`'s columns under which
/// the rows of `a` match `b`. Candidates are columns with the same name,
/// then columns with the same value multiset, then any column.
pub fn find_column_map(a: &ResultTable, b: &ResultTable, policy: &ComparisonPolicy) -> Option<Vec<usize>> {
    let (wa, wb) = (a.columns.len(), b.columns.len());
    if wb > wa || (wb == 0 && wa > 0) {
        return None;
    }
    let a_vals: Vec<Vec<&Cell>> = (0..wa).map(|i| column_values(a, i)).collect();
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(wb);
    for j in 0..wb {
        let named: Vec<usize> = (0..wa)
            .filter(|&i| a.columns[i].eq_ignore_ascii_case(&b.columns[j]))
            .collect();
        let b_vals = column_values(b, j);
        let by_value: Vec<usize> = (0..wa)
            .filter(|&i| {
                a_vals[i].len() == b_vals.len()
                    && a_vals[i].iter().zip(&b_vals).all(|(x, y)| cells_equal(x, y, policy))
            })
            .collect();
        let mut c = named;
        for i in by_value {
            if !c.contains(&i) {
                c.push(i);
            }
        }
        if wa <= MAX_PERMUTATION_WIDTH {
            for i in 0..wa {
                if !c.contains(&i) {
                    c.push(i);
                }
            }
        } else if c.is_empty() {
            return None;
        } else {
            c.truncate(1);
        }
        candidates.push(c);
    }
    let mut map = Vec::with_capacity(wb);
    let mut used = vec![false; wa];
    let mut budget = 50_000usize;
    search(a, b, policy, &candidates, &mut map, &mut used, &mut budget).then_some(map)
}

fn search(
    a: &ResultTable,
    b: &ResultTable,
    policy: &ComparisonPolicy,
    candidates: &[Vec<usize>],
    map: &mut Vec<usize>,
    used: &mut [bool],
    budget: &mut usize,
) -> bool {
    if map.len() == candidates.len() {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        return rows_match(&project(a, map), b, policy);
    }
    for &i in &candidates[map.len()] {
        if used[i] {
            continue;
        }
        used[i] = true;
        map.push(i);
        if search(a, b, policy, candidates, map, used, budget) {
            return true;
        }
        map.pop();
        used[i] = false;
    }
    false
}

/// Whether generated result `a` is equivalent to ground truth `b`.
pub fn compare_result_tables(a: &ResultTable, b: &ResultTable, policy: &ComparisonPolicy) -> bool {
    if a.columns.len() != b.columns.len() {
        return false;
    }
    if policy.column_order_sensitive {
        rows_match(a, b, policy)
    } else {
        find_column_map(a, b, policy).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: Vec<Vec<Cell>>, ordered: bool) -> ResultTable {
        ResultTable {
            columns: cols.iter().map(|s| s.to_string()).collect(),
            rows,
            ordered,
            truncated: false,
        }
    }

    fn ia(i: i64, s: &str) -> Vec<Cell> {
        vec![Cell::Integer(i), Cell::Text(s.into())]
    }

    #[test]
    fn bag_and_order_semantics() {
        let p = ComparisonPolicy::default();
        let a = table(&["x", "y"], vec![ia(1, "a"), ia(2, "b")], false);
        let b = table(&["x", "y"], vec![ia(2, "b"), ia(1, "a")], false);
        assert!(compare_result_tables(&a, &b, &p));
        let b_ordered = ResultTable { ordered: true, ..b };
        assert!(!compare_result_tables(&a, &b_ordered, &p));
    }

    #[test]
    fn float_tolerance() {
        let p = ComparisonPolicy::default();
        assert!(cells_equal(&Cell::Real(3.1415926), &Cell::Real(3.1415927), &p));
        assert!(!cells_equal(&Cell::Real(3.14), &Cell::Real(3.15), &p));
        assert!(cells_equal(&Cell::Integer(2), &Cell::Real(2.0), &p));
        assert!(cells_equal(&Cell::Real(0.0), &Cell::Real(1e-10), &p));
        assert!(!cells_equal(&Cell::Text("1".into()), &Cell::Integer(1), &p));
        let strict = ComparisonPolicy {
            null_equals_null: false,
            ..p
        };
        assert!(!cells_equal(&Cell::Null, &Cell::Null, &strict));
    }

    #[test]
    fn duplicates_matter_in_bags() {
        let p = ComparisonPolicy::default();
        let a = table(&["x"], vec![vec![Cell::Integer(1)], vec![Cell::Integer(1)]], false);
        let b = table(&["x"], vec![vec![Cell::Integer(1)]], false);
        assert!(!compare_result_tables(&a, &b, &p));
    }

    #[test]
    fn column_order_policy() {
        let a = table(&["y", "x"], vec![vec![Cell::Text("a".into()), Cell::Integer(1)]], false);
        let b = table(&["x", "y"], vec![ia(1, "a")], false);
        let mut p = ComparisonPolicy::default();
        assert!(!compare_result_tables(&a, &b, &p));
        p.column_order_sensitive = false;
        assert!(compare_result_tables(&a, &b, &p));
        let extra = table(&["x", "y", "z"], vec![vec![Cell::Integer(1), Cell::Text("a".into()), Cell::Null]], false);
        assert!(!compare_result_tables(&extra, &b, &p));
    }

    #[test]
    fn near_equal_values_sorting_apart_still_match() {
        let p = ComparisonPolicy::default();
        let a = table(&["x"], vec![vec![Cell::Real(1.0)], vec![Cell::Real(1.0000000001)], vec![Cell::Real(1.00000000005)]], false);
        let b = table(&["x"], vec![vec![Cell::Real(1.00000000005)], vec![Cell::Real(1.0)], vec![Cell::Real(1.0000000001)]], false);
        assert!(compare_result_tables(&a, &b, &p));
    }
}
