//! Error analysis: short sequences of result transformations that reconcile
//! a wrong generated result with the ground truth, phrased as query fixes.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datastore::{Cell, ResultTable};
use crate::metrics::compare::{cell_cmp, project};
use crate::metrics::{compare_result_tables, find_column_map, ComparisonPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    ColumnReorder,
    ColumnProject,
    RowDedup,
    IgnoreOrder,
    RoundValues { decimals: u8 },
    LimitTruncate,
}

impl Transform {
    /// Search order; `RoundValues` tries finer precision first.
    pub const CATALOG: [Transform; 8] = [
        Transform::ColumnReorder,
        Transform::ColumnProject,
        Transform::RowDedup,
        Transform::IgnoreOrder,
        Transform::RoundValues { decimals: 4 },
        Transform::RoundValues { decimals: 2 },
        Transform::RoundValues { decimals: 0 },
        Transform::LimitTruncate,
    ];

    fn family(self) -> u8 {
        match self {
            Transform::ColumnReorder => 0,
            Transform::ColumnProject => 1,
            Transform::RowDedup => 2,
            Transform::IgnoreOrder => 3,
            Transform::RoundValues { .. } => 4,
            Transform::LimitTruncate => 5,
        }
    }

    pub fn fix_text(self, gt: &ResultTable) -> String {
        match self {
            Transform::ColumnReorder => "reorder the SELECT list to match the expected column order".into(),
            Transform::ColumnProject => "remove the extra columns from the SELECT list".into(),
            Transform::RowDedup => "add DISTINCT to remove duplicate rows".into(),
            Transform::IgnoreOrder => "add matching ORDER BY".into(),
            Transform::RoundValues { decimals } => format!("round numeric results to {decimals} decimal places"),
            Transform::LimitTruncate => format!("add LIMIT {}", gt.rows.len()),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::ColumnReorder => f.write_str("column_reorder"),
            Transform::ColumnProject => f.write_str("column_project"),
            Transform::RowDedup => f.write_str("row_dedup"),
            Transform::IgnoreOrder => f.write_str("ignore_order"),
            Transform::RoundValues { decimals } => write!(f, "round_values({decimals})"),
            Transform::LimitTruncate => f.write_str("limit_truncate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairSuggestion {
    pub dp_id: String,
    pub model_id: String,
    pub transforms: Vec<Transform>,
    pub fix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0} is not applicable")]
pub struct NotApplicable(pub Transform);

/// The two operands as the comparison sees them after a transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Operands {
    pub generated: ResultTable,
    pub ground_truth: ResultTable,
}

fn round_cell(c: &Cell, decimals: u8) -> Cell {
    match c {
        Cell::Real(r) => {
            let p = 10f64.powi(i32::from(decimals));
            Cell::Real((r * p).round() / p)
        }
        other => other.clone(),
    }
}

fn round_table(t: &ResultTable, decimals: u8) -> ResultTable {
    ResultTable {
        rows: t
            .rows
            .iter()
            .map(|r| r.iter().map(|c| round_cell(c, decimals)).collect())
            .collect(),
        ..t.clone()
    }
}

fn row_key(row: &[Cell]) -> String {
    serde_json::to_string(row).expect("cells serialize")
}

/// Applies `t`. `IgnoreOrder` clears the ground truth's ordered flag and
/// `RoundValues` rounds both operands; the others change the generated side.
pub fn apply_transform(
    r: &ResultTable,
    t: Transform,
    gt: &ResultTable,
    policy: &ComparisonPolicy,
) -> Result<Operands, NotApplicable> {
    let na = || NotApplicable(t);
    let keep_gt = |generated: ResultTable| Operands {
        generated,
        ground_truth: gt.clone(),
    };
    match t {
        Transform::ColumnReorder => {
            if r.columns.len() != gt.columns.len() || r.columns.len() < 2 {
                return Err(na());
            }
            let map = column_map(r, gt, policy).ok_or_else(na)?;
            if map.iter().enumerate().all(|(i, &j)| i == j) {
                return Err(na());
            }
            Ok(keep_gt(project(r, &map)))
        }
        Transform::ColumnProject => {
            if r.columns.len() <= gt.columns.len() {
                return Err(na());
            }
            let map = column_map(r, gt, policy).ok_or_else(na)?;
            Ok(keep_gt(project(r, &map)))
        }
        Transform::RowDedup => {
            let mut seen = HashSet::new();
            let rows: Vec<Vec<Cell>> = r.rows.iter().filter(|row| seen.insert(row_key(row))).cloned().collect();
            if rows.len() == r.rows.len() {
                return Err(na());
            }
            Ok(keep_gt(ResultTable { rows, ..r.clone() }))
        }
        Transform::IgnoreOrder => {
            if !gt.ordered {
                return Err(na());
            }
            Ok(Operands {
                generated: r.clone(),
                ground_truth: ResultTable {
                    ordered: false,
                    ..gt.clone()
                },
            })
        }
        Transform::RoundValues { decimals } => {
            let has_real = |x: &ResultTable| x.rows.iter().flatten().any(|c| matches!(c, Cell::Real(_)));
            if !has_real(r) && !has_real(gt) {
                return Err(na());
            }
            Ok(Operands {
                generated: round_table(r, decimals),
                ground_truth: round_table(gt, decimals),
            })
        }
        Transform::LimitTruncate => {
            if r.rows.len() <= gt.rows.len() {
                return Err(na());
            }
            Ok(keep_gt(ResultTable {
                rows: r.rows[..gt.rows.len()].to_vec(),
                ..r.clone()
            }))
        }
    }
}

/// Columns of `r` for each column of `gt`: a map under which the rows match
/// if one exists, else a greedy match by name and then by value multiset.
fn column_map(r: &ResultTable, gt: &ResultTable, policy: &ComparisonPolicy) -> Option<Vec<usize>> {
    if let Some(m) = find_column_map(r, gt, policy) {
        return Some(m);
    }
    fn values(t: &ResultTable, i: usize) -> Vec<&Cell> {
        let mut v: Vec<&Cell> = t.rows.iter().map(|row| &row[i]).collect();
        v.sort_by(|a, b| cell_cmp(a, b));
        v
    }
    let mut used = vec![false; r.columns.len()];
    let mut map = Vec::with_capacity(gt.columns.len());
    for j in 0..gt.columns.len() {
        let by_name = (0..r.columns.len()).find(|&i| !used[i] && r.columns[i].eq_ignore_ascii_case(&gt.columns[j]));
        let pick = by_name.or_else(|| {
            let want = values(gt, j);
            (0..r.columns.len()).find(|&i| {
                let have = values(r, i);
                !used[i]
                    && have.len() == want.len()
                    && have.iter().zip(&want).all(|(a, b)| crate::metrics::cells_equal(a, b, policy))
            })
        })?;
        used[pick] = true;
        map.push(pick);
    }
    Some(map)
}

/// Applies a sequence, threading both operands through.
pub fn apply_sequence(
    gen: &ResultTable,
    gt: &ResultTable,
    seq: &[Transform],
    policy: &ComparisonPolicy,
) -> Result<Operands, NotApplicable> {
    let mut ops = Operands {
        generated: gen.clone(),
        ground_truth: gt.clone(),
    };
    for &t in seq {
        ops = apply_transform(&ops.generated, t, &ops.ground_truth, policy)?;
    }
    Ok(ops)
}

fn reconciles(gen: &ResultTable, gt: &ResultTable, seq: &[Transform], policy: &ComparisonPolicy) -> bool {
    apply_sequence(gen, gt, seq, policy)
        .map(|o| compare_result_tables(&o.generated, &o.ground_truth, policy))
        .unwrap_or(false)
}

/// Breadth-first search over transform sequences of length at most
/// `max_depth`; returns every success of the shortest successful length.
pub fn suggest_repairs(
    dp_id: &str,
    model_id: &str,
    gen: &ResultTable,
    gt: &ResultTable,
    max_depth: usize,
    policy: &ComparisonPolicy,
) -> Vec<RepairSuggestion> {
    if compare_result_tables(gen, gt, policy) {
        return Vec::new();
    }
    let mut frontier: Vec<Vec<Transform>> = vec![Vec::new()];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for prefix in &frontier {
            for t in Transform::CATALOG {
                if prefix.iter().any(|p| p.family() == t.family()) {
                    continue;
                }
                let mut seq = prefix.clone();
                seq.push(t);
                // only extend sequences whose every step applies
                if apply_sequence(gen, gt, &seq, policy).is_ok() {
                    next.push(seq);
                }
            }
        }
        let found: Vec<RepairSuggestion> = next
            .iter()
            .filter(|seq| reconciles(gen, gt, seq, policy))
            .map(|seq| RepairSuggestion {
                dp_id: dp_id.to_string(),
                model_id: model_id.to_string(),
                transforms: seq.clone(),
                fix: seq.iter().map(|t| t.fix_text(gt)).collect::<Vec<_>>().join("; then "),
            })
            .collect();
        if !found.is_empty() {
            return found;
        }
        frontier = next;
    }
    Vec::new()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(cols: &[&str], rows: Vec<Vec<Cell>>, ordered: bool) -> ResultTable {
        ResultTable {
            columns: cols.iter().map(|s| s.to_string()).collect(),
            rows,
            ordered,
            truncated: false,
        }
    }

    fn i(v: i64) -> Cell {
        Cell::Integer(v)
    }

    fn s(v: &str) -> Cell {
        Cell::Text(v.into())
    }

    fn repairs(gen: &ResultTable, gt: &ResultTable) -> Vec<Vec<Transform>> {
        let p = ComparisonPolicy::default();
        let out = suggest_repairs("dp", "m", gen, gt, 2, &p);
        for r in &out {
            assert!(reconciles(gen, gt, &r.transforms, &p), "unsound: {:?}", r.transforms);
        }
        out.into_iter().map(|r| r.transforms).collect()
    }

    #[test]
    fn column_swap() {
        let gt = t(&["name", "age"], vec![vec![s("a"), i(30)], vec![s("b"), i(40)]], false);
        let gen = t(&["age", "name"], vec![vec![i(30), s("a")], vec![i(40), s("b")]], false);
        assert_eq!(repairs(&gen, &gt), vec![vec![Transform::ColumnReorder]]);
    }

    #[test]
    fn duplicates() {
        let gt = t(&["x"], vec![vec![i(1)], vec![i(2)]], false);
        let gen = t(&["x"], vec![vec![i(1)], vec![i(1)], vec![i(2)], vec![i(2)]], false);
        let found = repairs(&gen, &gt);
        assert!(found.contains(&vec![Transform::RowDedup]));
        assert!(found.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn missing_order() {
        let gt = t(&["x"], vec![vec![i(1)], vec![i(2)]], true);
        let gen = t(&["x"], vec![vec![i(2)], vec![i(1)]], false);
        let p = ComparisonPolicy::default();
        let out = suggest_repairs("dp", "m", &gen, &gt, 2, &p);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].transforms, [Transform::IgnoreOrder]);
        assert_eq!(out[0].fix, "add matching ORDER BY");
    }

    #[test]
    fn rounding() {
        let gt = t(&["x"], vec![vec![Cell::Real(2.50)]], false);
        let gen = t(&["x"], vec![vec![Cell::Real(2.4999)]], false);
        assert_eq!(repairs(&gen, &gt), vec![vec![Transform::RoundValues { decimals: 2 }]]);
        let gen = t(&["x"], vec![vec![Cell::Real(2.4999999)]], false);
        let ops = apply_transform(&gen, Transform::RoundValues { decimals: 2 }, &gt, &ComparisonPolicy::default()).unwrap();
        assert_eq!(ops.generated.rows[0][0], Cell::Real(2.5));
    }

    #[test]
    fn two_step_fix() {
        let gt = t(&["a", "b"], vec![vec![i(1), s("x")], vec![i(2), s("y")]], false);
        let gen = t(
            &["b", "a", "c"],
            vec![vec![s("x"), i(1), i(0)], vec![s("y"), i(2), i(0)], vec![s("y"), i(2), i(0)]],
            false,
        );
        let found = repairs(&gen, &gt);
        assert!(found.contains(&vec![Transform::ColumnProject, Transform::RowDedup]));
        assert!(found.iter().all(|s| s.len() == 2));
    }

    #[test]
    fn wrong_aggregate_has_no_fix() {
        let gt = t(&["count"], vec![vec![i(12)]], false);
        let gen = t(&["count"], vec![vec![i(13)]], false);
        assert!(repairs(&gen, &gt).is_empty());
    }

    #[test]
    fn equal_results_need_no_repair() {
        let gt = t(&["x"], vec![vec![i(1)]], false);
        assert!(repairs(&gt, &gt).is_empty());
    }

    #[test]
    fn truncation() {
        let gt = t(&["x"], vec![vec![i(3)], vec![i(2)]], true);
        let gen = t(&["x"], vec![vec![i(3)], vec![i(2)], vec![i(1)]], true);
        let p = ComparisonPolicy::default();
        let out = suggest_repairs("dp", "m", &gen, &gt, 2, &p);
        assert_eq!(out[0].transforms, [Transform::LimitTruncate]);
        assert_eq!(out[0].fix, "add LIMIT 2");
    }
}
