use std::collections::{BTreeMap, BTreeSet};

use sqleval_core::bundled;
use sqleval_core::datastore::Catalog;
use sqleval_core::sql::ast::{Expr, Literal, Query, SelectItem, SetExpr, TableFactor};
use sqleval_core::sql::normalize::walk_query_mut;
use sqleval_core::sql::{parse_sql, QueryAst, SchemaMap, SqlDialect};

#[derive(serde::Deserialize)]
pub struct Entry {
    pub id: String,
    pub db_id: String,
    pub sql: String,
    pub label: String,
}

pub fn corpus() -> Vec<Entry> {
    include_str!("../../data/corpus/labelled_queries.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn parse(sql: &str) -> QueryAst {
    parse_sql(sql, SqlDialect::Sqlite).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

pub fn schemas() -> BTreeMap<String, SchemaMap> {
    let wd = tempfile::tempdir().unwrap();
    bundled::install(wd.path()).unwrap();
    let cat = Catalog::load(&wd.path().join("catalog.json")).unwrap();
    cat.ids()
        .map(|id| (id.to_string(), cat.open(id).unwrap().schema.column_map()))
        .collect()
}

/// Splits into (quoted, text) runs so rewrites can skip literals and
/// quoted identifiers.
pub fn segments(sql: &str) -> Vec<(bool, String)> {
    let mut out: Vec<(bool, String)> = Vec::new();
    let mut quote: Option<char> = None;
    for ch in sql.chars() {
        let quoted = match quote {
            Some(q) => {
                if ch == q {
                    quote = None;
                }
                true
            }
            None if ch == '\'' || ch == '"' => {
                quote = Some(ch);
                true
            }
            None => false,
        };
        match out.last_mut() {
            Some((q, s)) if *q == quoted => s.push(ch),
            _ => out.push((quoted, ch.to_string())),
        }
    }
    out
}

pub fn map_unquoted(sql: &str, f: impl Fn(&str) -> String) -> String {
    segments(sql)
        .into_iter()
        .map(|(q, s)| if q { s } else { f(&s) })
        .collect()
}

pub fn perturb_whitespace(sql: &str) -> String {
    let s = map_unquoted(sql, |s| s.replace(' ', " \n\t  ").replace(',', " ,  ").replace('(', "( "));
    format!("  \n{s}\n ")
}

pub fn perturb_case(sql: &str) -> String {
    map_unquoted(sql, |s| {
        s.chars()
            .map(|c| {
                if c.is_ascii_lowercase() {
                    c.to_ascii_uppercase()
                } else {
                    c.to_ascii_lowercase()
                }
            })
            .collect()
    })
}

/// Visits table factors and select items in every scope except
/// expression subqueries, which the caller reaches via `walk_query_mut`.
pub fn scopes_mut(q: &mut Query, f: &mut dyn FnMut(&mut TableFactor), items: &mut dyn FnMut(&mut SelectItem)) {
    if let Some(w) = &mut q.with {
        for c in &mut w.ctes {
            scopes_mut(&mut c.query, f, items);
        }
    }
    fn body(b: &mut SetExpr, f: &mut dyn FnMut(&mut TableFactor), items: &mut dyn FnMut(&mut SelectItem)) {
        match b {
            SetExpr::Select(s) => {
                s.items.iter_mut().for_each(&mut *items);
                for item in &mut s.from {
                    from(item, f, items);
                }
            }
            SetExpr::SetOp { left, right, .. } => {
                body(left, f, items);
                body(right, f, items);
            }
            SetExpr::Query(q) => scopes_mut(q, f, items),
        }
    }
    fn factor(tf: &mut TableFactor, f: &mut dyn FnMut(&mut TableFactor), items: &mut dyn FnMut(&mut SelectItem)) {
        f(tf);
        match tf {
            TableFactor::Derived { subquery, .. } => scopes_mut(subquery, f, items),
            TableFactor::Nested { item, .. } => from(item, f, items),
            TableFactor::Table { .. } => {}
        }
    }
    fn from(
        item: &mut sqleval_core::sql::ast::FromItem,
        f: &mut dyn FnMut(&mut TableFactor),
        items: &mut dyn FnMut(&mut SelectItem),
    ) {
        factor(&mut item.relation, f, items);
        for j in &mut item.joins {
            factor(&mut j.relation, f, items);
        }
    }
    body(&mut q.body, f, items);
}

pub fn all_scopes_mut(q: &mut Query, f: &mut dyn FnMut(&mut TableFactor), items: &mut dyn FnMut(&mut SelectItem)) {
    scopes_mut(q, f, items);
    walk_query_mut(q, &mut |e| match e {
        Expr::InSubquery { subquery, .. }
        | Expr::Exists { subquery, .. }
        | Expr::Subquery(subquery)
        | Expr::Quantified { subquery, .. } => scopes_mut(subquery, f, items),
        _ => {}
    });
}

/// Renames every table alias and names unaliased expression outputs of
/// an unordered outermost query.
pub fn perturb_aliases(sql: &str) -> String {
    let mut ast = parse(sql);
    let mut tables = BTreeSet::new();
    let mut aliases = BTreeSet::new();
    all_scopes_mut(
        &mut ast.root,
        &mut |tf| match tf {
            TableFactor::Table { name, alias } => {
                tables.insert(name.to_ascii_lowercase());
                if let Some(a) = alias {
                    aliases.insert(a.to_ascii_lowercase());
                }
            }
            TableFactor::Derived { alias: Some(a), .. } | TableFactor::Nested { alias: Some(a), .. } => {
                aliases.insert(a.to_ascii_lowercase());
            }
            _ => {}
        },
        &mut |_| {},
    );
    let renamed: BTreeSet<String> = aliases.difference(&tables).cloned().collect();
    let rename = |a: &mut String| {
        if renamed.contains(&a.to_ascii_lowercase()) {
            *a = format!("zz_{a}");
        }
    };
    all_scopes_mut(
        &mut ast.root,
        &mut |tf| match tf {
            TableFactor::Table { alias: Some(a), .. }
            | TableFactor::Derived { alias: Some(a), .. }
            | TableFactor::Nested { alias: Some(a), .. } => rename(a),
            _ => {}
        },
        &mut |item| {
            if let SelectItem::QualifiedWildcard(t) = item {
                rename(t)
            }
        },
    );
    walk_query_mut(&mut ast.root, &mut |e| {
        if let Expr::Column { table: Some(t), .. } = e {
            rename(t)
        }
    });
    if ast.root.order_by.is_empty() {
        if let SetExpr::Select(s) = &mut ast.root.body {
            for (i, item) in s.items.iter_mut().enumerate() {
                if let SelectItem::Expr { alias: alias @ None, .. } = item {
                    *alias = Some(format!("out_{i}"));
                }
            }
        }
    }
    ast.render()
}

/// Changes every literal value; None when the query has none.
pub fn perturb_values(sql: &str) -> Option<String> {
    let mut ast = parse(sql);
    let mut changed = false;
    walk_query_mut(&mut ast.root, &mut |e| {
        if let Expr::Literal(l) = e {
            match l {
                Literal::Number(n) => {
                    *n = match n.parse::<i64>() {
                        Ok(i) => (i + 1).to_string(),
                        Err(_) => format!("{n}1"),
                    };
                    changed = true;
                }
                Literal::String(s) => {
                    s.push('x');
                    changed = true;
                }
                Literal::Boolean(b) => {
                    *b = !*b;
                    changed = true;
                }
                _ => {}
            }
        }
    });
    changed.then(|| ast.render())
}
