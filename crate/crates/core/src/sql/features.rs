//! Construct flags and counters gathered by a full traversal of a query,
//! including subqueries and CTE bodies.

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::parse::QueryAst;
use super::visit::{expr_subqueries, table_factors, walk_expr};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub aggregate: bool,
    pub distinct: bool,
    pub group_by: bool,
    pub having: bool,
    pub inner_join: bool,
    pub outer_join: bool,
    pub self_join: bool,
    pub non_equi_join: bool,
    pub cross_join: bool,
    pub scalar_subquery: bool,
    pub in_subquery: bool,
    pub exists: bool,
    pub any_all: bool,
    pub derived_table: bool,
    pub select_subquery: bool,
    pub union: bool,
    pub intersect: bool,
    pub except: bool,
    pub case_expr: bool,
    pub cte: bool,
    pub multi_cte: bool,
    pub recursive_cte: bool,
    pub window_rank: bool,
    pub window_agg: bool,
    pub partition_by: bool,
    pub window_frame: bool,
    pub like: bool,
    pub between: bool,
    pub in_list: bool,
    pub is_null: bool,
    pub comparison: bool,
    pub logical_connective: bool,
    pub order_by: bool,
    pub limit: bool,
    pub arithmetic_expr: bool,
    pub star_select: bool,
    pub column_projection: bool,
    /// Largest number of GROUP BY keys in any SELECT.
    pub group_by_keys: usize,
    /// Largest number of table factors in any single FROM clause.
    pub join_table_count: usize,
    pub nesting_depth: usize,
    pub cte_count: usize,
}

impl FeatureSet {
    pub fn has_set_op(&self) -> bool {
        self.union || self.intersect || self.except
    }

    pub fn has_window(&self) -> bool {
        self.window_rank || self.window_agg
    }
}

pub fn extract_features(q: &QueryAst) -> FeatureSet {
    let mut f = FeatureSet::default();
    f.nesting_depth = q.subqueries().iter().map(|(d, _)| *d).max().unwrap_or(0);
    query(&q.root, &mut f);
    f
}

fn query(q: &Query, f: &mut FeatureSet) {
    if let Some(w) = &q.with {
        f.cte = true;
        f.cte_count += w.ctes.len();
        f.multi_cte |= f.cte_count >= 2;
        f.recursive_cte |= w.recursive;
        for c in &w.ctes {
            query(&c.query, f);
        }
    }
    f.order_by |= !q.order_by.is_empty();
    f.limit |= q.limit.is_some();
    body(&q.body, f);
    for o in &q.order_by {
        scalar(&o.expr, f, Clause::Other);
    }
    for e in q.limit.iter().chain(q.offset.iter()) {
        scalar(e, f, Clause::Other);
    }
}

fn body(b: &SetExpr, f: &mut FeatureSet) {
    match b {
        SetExpr::Select(s) => select(s, f),
        SetExpr::SetOp {
            op, left, right, ..
        } => {
            match op {
                SetOperator::Union => f.union = true,
                SetOperator::Intersect => f.intersect = true,
                SetOperator::Except => f.except = true,
            }
            body(left, f);
            body(right, f);
        }
        SetExpr::Query(q) => query(q, f),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Clause {
    Items,
    Predicate,
    Other,
}

fn select(s: &Select, f: &mut FeatureSet) {
    f.distinct |= s.distinct;
    if !s.group_by.is_empty() {
        f.group_by = true;
        f.group_by_keys = f.group_by_keys.max(s.group_by.len());
    }
    f.having |= s.having.is_some();

    let mut tables = 0;
    let mut names: Vec<&str> = Vec::new();
    for (i, item) in s.from.iter().enumerate() {
        if i > 0 {
            f.inner_join = true;
        }
        table_factors(item, &mut |tf| {
            tables += 1;
            match tf {
                TableFactor::Table { name, .. } => names.push(name),
                TableFactor::Derived { subquery, .. } => {
                    f.derived_table = true;
                    query(subquery, f);
                }
                TableFactor::Nested { .. } => {}
            }
        });
        joins(item, f);
    }
    f.join_table_count = f.join_table_count.max(tables);
    let mut lowered: Vec<String> = names.iter().map(|n| n.to_ascii_lowercase()).collect();
    lowered.sort();
    f.self_join |= lowered.windows(2).any(|w| w[0] == w[1]);

    for item in &s.items {
        match item {
            SelectItem::Wildcard | SelectItem::QualifiedWildcard(_) => f.star_select = true,
            SelectItem::Expr { expr, .. } => {
                let mut has_column = false;
                walk_expr(expr, &mut |e| has_column |= matches!(e, Expr::Column { .. }));
                f.column_projection |= has_column;
                scalar(expr, f, Clause::Items);
            }
        }
    }
    if let Some(w) = &s.selection {
        scalar(w, f, Clause::Predicate);
    }
    for g in &s.group_by {
        scalar(g, f, Clause::Other);
    }
    if let Some(h) = &s.having {
        scalar(h, f, Clause::Predicate);
    }
}

fn joins(item: &FromItem, f: &mut FeatureSet) {
    let nested = |tf: &TableFactor, f: &mut FeatureSet| {
        if let TableFactor::Nested { item, .. } = tf {
            joins(item, f);
        }
    };
    nested(&item.relation, f);
    for j in &item.joins {
        nested(&j.relation, f);
        match j.kind {
            JoinKind::Inner => f.inner_join = true,
            JoinKind::Cross => {
                f.inner_join = true;
                f.cross_join = true;
            }
            _ => f.outer_join = true,
        }
        match &j.constraint {
            JoinConstraint::On(e) => {
                let mut non_equi = false;
                walk_expr(e, &mut |x| match x {
                    Expr::Binary { op, .. } if op.is_comparison() && *op != BinaryOp::Eq => {
                        non_equi = true
                    }
                    Expr::Between { .. } | Expr::Like { .. } => non_equi = true,
                    _ => {}
                });
                f.non_equi_join |= non_equi;
                scalar(e, f, Clause::Predicate);
            }
            JoinConstraint::None if j.kind == JoinKind::Inner => f.cross_join = true,
            _ => {}
        }
    }
}

/// Flags constructs inside one expression tree and recurses into its
/// subqueries.
fn scalar(e: &Expr, f: &mut FeatureSet, clause: Clause) {
    walk_expr(e, &mut |x| match x {
        Expr::Function(func) => {
            let agg = func.is_aggregate_name();
            match (&func.over, agg) {
                (Some(w), _) => {
                    if agg {
                        f.window_agg = true;
                    } else {
                        f.window_rank = true;
                    }
                    f.partition_by |= !w.partition_by.is_empty();
                    f.window_frame |= w.frame.is_some();
                }
                (None, true) => {
                    f.aggregate = true;
                    f.distinct |= func.distinct;
                }
                (None, false) => {
                    if clause == Clause::Items {
                        f.arithmetic_expr = true;
                    }
                }
            }
        }
        Expr::Binary { op, .. } => {
            if op.is_arithmetic() && clause == Clause::Items {
                f.arithmetic_expr = true;
            }
            if clause == Clause::Predicate {
                f.comparison |= op.is_comparison();
                f.logical_connective |= op.is_logical();
            }
        }
        Expr::Cast { .. } if clause == Clause::Items => f.arithmetic_expr = true,
        Expr::Unary {
            op: UnaryOp::Not, ..
        } if clause == Clause::Predicate => f.logical_connective = true,
        Expr::Case { .. } => f.case_expr = true,
        Expr::Like { .. } => f.like = true,
        Expr::Between { .. } => f.between = true,
        Expr::InList { .. } => f.in_list = true,
        Expr::IsNull { .. } => f.is_null = true,
        Expr::InSubquery { .. } => f.in_subquery = true,
        Expr::Exists { .. } => f.exists = true,
        Expr::Quantified { .. } => {
            f.any_all = true;
            if clause == Clause::Predicate {
                f.comparison = true;
            }
        }
        Expr::Subquery(_) => {
            if clause == Clause::Items {
                f.select_subquery = true;
            } else {
                f.scalar_subquery = true;
            }
        }
        _ => {}
    });
    let mut subs = Vec::new();
    expr_subqueries(e, &mut |q| subs.push(q));
    for q in subs {
        query(q, f);
    }
}
