//! Clause-by-clause structural comparison of two queries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::normalize::{normalize_with, walk_query_mut, NormalizeOptions};
use super::parse::QueryAst;
use super::SchemaMap;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Literal values are ignored.
    #[default]
    SpiderCompatible,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentMismatch {
    pub component: String,
    pub generated: Vec<String>,
    pub ground_truth: Vec<String>,
}

/// The clause components that differ between two queries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDiff {
    pub mismatches: Vec<ComponentMismatch>,
}

impl ComponentDiff {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn components(&self) -> Vec<&str> {
        self.mismatches.iter().map(|m| m.component.as_str()).collect()
    }
}

pub fn exact_match(
    gen: &QueryAst,
    gt: &QueryAst,
    mode: MatchMode,
    schema: Option<&SchemaMap>,
) -> (bool, ComponentDiff) {
    let a = components(gen, mode, schema);
    let b = components(gt, mode, schema);
    let mut diff = ComponentDiff::default();
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let empty = Vec::new();
    for key in keys {
        let x = a.get(key).unwrap_or(&empty);
        let y = b.get(key).unwrap_or(&empty);
        if x != y {
            diff.mismatches.push(ComponentMismatch {
                component: key.clone(),
                generated: x.clone(),
                ground_truth: y.clone(),
            });
        }
    }
    (diff.is_empty(), diff)
}

type Components = BTreeMap<String, Vec<String>>;

/// Clause components of the normalized query; multiset components are
/// sorted, sequence components keep their order.
pub fn components(q: &QueryAst, mode: MatchMode, schema: Option<&SchemaMap>) -> Components {
    let opts = NormalizeOptions {
        lenient: true,
        mask_literals: mode == MatchMode::SpiderCompatible,
    };
    let mut query = match normalize_with(q, schema, opts) {
        Ok(n) => n.query,
        Err(_) => q.root.clone(),
    };
    // Aliases inside expression subqueries are unreferenceable.
    walk_query_mut(&mut query, &mut |e| match e {
        Expr::InSubquery { subquery, .. }
        | Expr::Exists { subquery, .. }
        | Expr::Subquery(subquery)
        | Expr::Quantified { subquery, .. } => strip_aliases(&mut subquery.body),
        _ => {}
    });

    let mut out = Components::new();
    let mut put = |k: &str, v: Vec<String>| {
        if !v.is_empty() {
            out.entry(k.to_string()).or_default().extend(v);
        }
    };
    if let Some(w) = &query.with {
        let mut ctes: Vec<String> = w
            .ctes
            .iter()
            .map(|c| {
                let cols = if c.columns.is_empty() {
                    String::new()
                } else {
                    format!("({})", c.columns.join(", "))
                };
                format!("{}{cols} AS ({})", c.name, c.query)
            })
            .collect();
        if w.recursive {
            ctes.push("RECURSIVE".into());
        }
        put("ctes", ctes);
    }
    let mut ops = Vec::new();
    set_ops(&query.body, &mut ops);
    put("set_operators", ops);
    let mut leaves = Vec::new();
    leaf_selects(&query.body, &mut leaves);
    let multi = leaves.len() > 1;
    for (i, s) in leaves.iter().enumerate() {
        let prefix = if multi {
            format!("#{} ", i + 1)
        } else {
            String::new()
        };
        for (k, v) in select_components(s) {
            put(k, v.into_iter().map(|x| format!("{prefix}{x}")).collect());
        }
    }
    put(
        "order_by",
        query.order_by.iter().map(|o| o.to_string()).collect(),
    );
    if query.limit.is_some() || query.offset.is_some() {
        let mut l = String::new();
        if let Some(x) = &query.limit {
            l.push_str(&format!("LIMIT {x}"));
        }
        if let Some(x) = &query.offset {
            l.push_str(&format!(" OFFSET {x}"));
        }
        put("limit", vec![l.trim().to_string()]);
    }
    for (k, v) in out.iter_mut() {
        if k != "order_by" && k != "set_operators" {
            v.sort();
        }
    }
    out
}

fn strip_aliases(body: &mut SetExpr) {
    match body {
        SetExpr::Select(s) => {
            for item in &mut s.items {
                if let SelectItem::Expr { alias, .. } = item {
                    *alias = None;
                }
            }
        }
        SetExpr::SetOp { left, right, .. } => {
            strip_aliases(left);
            strip_aliases(right);
        }
        SetExpr::Query(q) => strip_aliases(&mut q.body),
    }
}

fn set_ops(body: &SetExpr, out: &mut Vec<String>) {
    match body {
        SetExpr::Select(_) => {}
        SetExpr::SetOp {
            op,
            all,
            left,
            right,
        } => {
            out.push(if *all {
                format!("{op} ALL")
            } else {
                op.to_string()
            });
            set_ops(left, out);
            set_ops(right, out);
        }
        SetExpr::Query(q) => out.push(format!("({q})")),
    }
}

fn leaf_selects<'a>(body: &'a SetExpr, out: &mut Vec<&'a Select>) {
    match body {
        SetExpr::Select(s) => out.push(s),
        SetExpr::SetOp { left, right, .. } => {
            leaf_selects(left, out);
            leaf_selects(right, out);
        }
        // parenthesized operands are compared whole through `set_operators`
        SetExpr::Query(_) => {}
    }
}

fn conjuncts(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Binary {
            left,
            op: BinaryOp::And,
            right,
        } => {
            conjuncts(left, out);
            conjuncts(right, out);
        }
        other => out.push(other.to_string()),
    }
}

fn select_components(s: &Select) -> Vec<(&'static str, Vec<String>)> {
    let items = s
        .items
        .iter()
        .map(|i| match i {
            SelectItem::Expr { expr, .. } => expr.to_string(),
            other => other.to_string(),
        })
        .collect();
    let mut tables = Vec::new();
    let mut conditions = Vec::new();
    for item in &s.from {
        from_components(item, "FROM", &mut tables, &mut conditions);
    }
    let mut where_ = Vec::new();
    if let Some(w) = &s.selection {
        conjuncts(w, &mut where_);
    }
    let mut having = Vec::new();
    if let Some(h) = &s.having {
        conjuncts(h, &mut having);
    }
    vec![
        ("select_items", items),
        (
            "distinct",
            if s.distinct {
                vec!["DISTINCT".into()]
            } else {
                vec![]
            },
        ),
        ("from_tables", tables),
        ("join_conditions", conditions),
        ("where_conjuncts", where_),
        ("group_by", s.group_by.iter().map(|g| g.to_string()).collect()),
        ("having_conjuncts", having),
    ]
}

fn factor_text(tf: &TableFactor) -> Option<String> {
    match tf {
        TableFactor::Nested { .. } => None,
        other => Some(other.to_string()),
    }
}

fn from_components(
    item: &FromItem,
    first_kind: &str,
    tables: &mut Vec<String>,
    conditions: &mut Vec<String>,
) {
    let add = |tf: &TableFactor, kind: &str, tables: &mut Vec<String>, c: &mut Vec<String>| {
        match factor_text(tf) {
            Some(t) => tables.push(format!("{kind} {t}")),
            None => {
                if let TableFactor::Nested { item, .. } = tf {
                    from_components(item, kind, tables, c);
                }
            }
        }
    };
    add(&item.relation, first_kind, tables, conditions);
    for j in &item.joins {
        let mut kind = match (j.kind, &j.constraint) {
            (JoinKind::Inner, JoinConstraint::None) | (JoinKind::Cross, _) => "CROSS JOIN",
            (JoinKind::Inner, _) => "JOIN",
            (JoinKind::Left, _) => "LEFT JOIN",
            (JoinKind::Right, _) => "RIGHT JOIN",
            (JoinKind::Full, _) => "FULL JOIN",
        }
        .to_string();
        if matches!(j.constraint, JoinConstraint::Natural) {
            kind = format!("NATURAL {kind}");
        }
        add(&j.relation, &kind, tables, conditions);
        match &j.constraint {
            JoinConstraint::On(e) => conjuncts(e, conditions),
            JoinConstraint::Using(cols) => conditions.push(format!("USING ({})", cols.join(", "))),
            JoinConstraint::Natural | JoinConstraint::None => {}
        }
    }
}
