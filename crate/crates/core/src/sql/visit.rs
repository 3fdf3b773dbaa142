//! Read-only traversal helpers over the query tree.

use super::ast::*;

/// Calls `f` for every SELECT in a set-expression body, descending through
/// set operations and parenthesized operands but not into subqueries.
pub fn for_each_select<'a>(body: &'a SetExpr, f: &mut impl FnMut(&'a Select)) {
    match body {
        SetExpr::Select(s) => f(s),
        SetExpr::SetOp { left, right, .. } => {
            for_each_select(left, f);
            for_each_select(right, f);
        }
        SetExpr::Query(q) => for_each_select(&q.body, f),
    }
}

/// Visits every expression node reachable from `e` in pre-order without
/// entering subqueries.
pub fn walk_expr<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Expr)) {
    f(e);
    match e {
        Expr::Column { .. } | Expr::Literal(_) | Expr::Exists { .. } | Expr::Subquery(_) => {}
        Expr::Unary { expr, .. } | Expr::Cast { expr, .. } | Expr::IsNull { expr, .. } => {
            walk_expr(expr, f)
        }
        Expr::Binary { left, right, .. } => {
            walk_expr(left, f);
            walk_expr(right, f);
        }
        Expr::Function(func) => {
            for arg in &func.args {
                if let FunctionArg::Expr(a) = arg {
                    walk_expr(a, f);
                }
            }
            if let Some(w) = &func.over {
                for p in &w.partition_by {
                    walk_expr(p, f);
                }
                for o in &w.order_by {
                    walk_expr(&o.expr, f);
                }
                if let Some(frame) = &w.frame {
                    for b in std::iter::once(&frame.start).chain(frame.end.iter()) {
                        if let FrameBound::Preceding(Some(x)) | FrameBound::Following(Some(x)) = b
                        {
                            walk_expr(x, f);
                        }
                    }
                }
            }
        }
        Expr::Case {
            operand,
            whens,
            else_result,
        } => {
            if let Some(o) = operand {
                walk_expr(o, f);
            }
            for (c, r) in whens {
                walk_expr(c, f);
                walk_expr(r, f);
            }
            if let Some(x) = else_result {
                walk_expr(x, f);
            }
        }
        Expr::InList { expr, list, .. } => {
            walk_expr(expr, f);
            for x in list {
                walk_expr(x, f);
            }
        }
        Expr::InSubquery { expr, .. } => walk_expr(expr, f),
        Expr::Between {
            expr, low, high, ..
        } => {
            walk_expr(expr, f);
            walk_expr(low, f);
            walk_expr(high, f);
        }
        Expr::Like { expr, pattern, .. } => {
            walk_expr(expr, f);
            walk_expr(pattern, f);
        }
        Expr::Quantified { left, .. } => walk_expr(left, f),
        Expr::Tuple(items) => {
            for x in items {
                walk_expr(x, f);
            }
        }
    }
}

/// Subqueries directly attached to an expression tree.
pub fn expr_subqueries<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Query)) {
    walk_expr(e, &mut |node| match node {
        Expr::InSubquery { subquery, .. }
        | Expr::Exists { subquery, .. }
        | Expr::Subquery(subquery)
        | Expr::Quantified { subquery, .. } => f(subquery),
        _ => {}
    });
}

/// Every expression held directly by a SELECT, in clause order.
pub fn select_exprs<'a>(s: &'a Select, f: &mut impl FnMut(&'a Expr)) {
    for item in &s.items {
        if let SelectItem::Expr { expr, .. } = item {
            f(expr);
        }
    }
    for item in &s.from {
        from_item_exprs(item, f);
    }
    if let Some(w) = &s.selection {
        f(w);
    }
    for g in &s.group_by {
        f(g);
    }
    if let Some(h) = &s.having {
        f(h);
    }
}

fn from_item_exprs<'a>(item: &'a FromItem, f: &mut impl FnMut(&'a Expr)) {
    if let TableFactor::Nested { item, .. } = &item.relation {
        from_item_exprs(item, f);
    }
    for j in &item.joins {
        if let TableFactor::Nested { item, .. } = &j.relation {
            from_item_exprs(item, f);
        }
        if let JoinConstraint::On(e) = &j.constraint {
            f(e);
        }
    }
}

/// Every table factor of a FROM item, flattening nested joins.
pub fn table_factors<'a>(item: &'a FromItem, f: &mut impl FnMut(&'a TableFactor)) {
    fn go<'a>(item: &'a FromItem, f: &mut dyn FnMut(&'a TableFactor)) {
        for tf in std::iter::once(&item.relation).chain(item.joins.iter().map(|j| &j.relation)) {
            match tf {
                TableFactor::Nested { item, .. } => go(item, f),
                other => f(other),
            }
        }
    }
    go(item, f)
}

/// Subqueries nested one level below `q`, excluding its own CTE bodies:
/// derived tables and expression subqueries in the body, ORDER BY and
/// LIMIT. Parenthesized set operands are the same level, so their own
/// CTEs and subqueries are reported here.
pub fn query_children<'a>(q: &'a Query, f: &mut impl FnMut(&'a Query)) {
    body_children(&q.body, f);
    for o in &q.order_by {
        expr_subqueries(&o.expr, f);
    }
    for e in q.limit.iter().chain(q.offset.iter()) {
        expr_subqueries(e, f);
    }
}

fn body_children<'a>(body: &'a SetExpr, f: &mut impl FnMut(&'a Query)) {
    match body {
        SetExpr::Select(s) => {
            for item in &s.from {
                table_factors(item, &mut |tf| {
                    if let TableFactor::Derived { subquery, .. } = tf {
                        f(subquery);
                    }
                });
            }
            select_exprs(s, &mut |e| expr_subqueries(e, f));
        }
        SetExpr::SetOp { left, right, .. } => {
            body_children(left, f);
            body_children(right, f);
        }
        SetExpr::Query(inner) => {
            if let Some(w) = &inner.with {
                for cte in &w.ctes {
                    f(&cte.query);
                }
            }
            query_children(inner, f);
        }
    }
}
