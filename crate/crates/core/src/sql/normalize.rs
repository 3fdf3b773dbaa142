//! Canonical form of a query for structural comparison.
//!
//! Identifiers are lowercased, every column reference is qualified with the
//! canonical name of the table it binds to, and AND/OR chains and symmetric
//! operators are put into a fixed operand order. Canonical table names are
//! the base table name, suffixed `__<n>` when the same table is already bound
//! in the current or an enclosing scope; derived tables become
//! `derived_<n>` and CTEs `cte_<n>`. All names are allocated from the chain
//! of enclosing scopes so the result does not depend on sibling order.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::ast::*;
use super::parse::{QueryAst, SqlDialect};
use super::{SchemaMap, SqlError};

/// Equality and hashing consider the canonical tree only, not the alias map.
#[derive(Debug, Clone)]
pub struct NormalizedAst {
    pub query: Query,
    /// Original alias (lowercase) to the canonical name it was rewritten to.
    pub alias_map: BTreeMap<String, String>,
    pub dialect: SqlDialect,
}

impl PartialEq for NormalizedAst {
    fn eq(&self, other: &Self) -> bool {
        self.query == other.query && self.dialect == other.dialect
    }
}

impl Eq for NormalizedAst {}

impl std::hash::Hash for NormalizedAst {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.query.hash(state);
        self.dialect.hash(state);
    }
}

impl NormalizedAst {
    pub fn render(&self) -> String {
        self.query.to_string()
    }

    /// Re-wraps the normalized tree as a parsed query.
    pub fn to_query_ast(&self) -> QueryAst {
        QueryAst {
            root: self.query.clone(),
            dialect: self.dialect,
            source_text: self.render(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormalizeOptions {
    /// Leave ambiguous unqualified columns unqualified instead of failing.
    pub lenient: bool,
    /// Replace every literal with a placeholder.
    pub mask_literals: bool,
}

pub fn normalize(q: &QueryAst, schema: Option<&SchemaMap>) -> Result<NormalizedAst, SqlError> {
    normalize_with(q, schema, NormalizeOptions::default())
}

pub fn normalize_with(
    q: &QueryAst,
    schema: Option<&SchemaMap>,
    opts: NormalizeOptions,
) -> Result<NormalizedAst, SqlError> {
    let mut ctx = Ctx {
        schema,
        lenient: opts.lenient,
        no_resolve: false,
        scopes: Vec::new(),
        ctes: Vec::new(),
        alias_map: BTreeMap::new(),
    };
    let (mut query, _) = ctx.query(&q.root)?;
    walk_query_mut(&mut query, &mut canon_node);
    if opts.mask_literals {
        walk_query_mut(&mut query, &mut |e| {
            if let Expr::Literal(l) = e {
                *l = Literal::Placeholder;
            }
        });
        walk_query_mut(&mut query, &mut canon_node);
    }
    Ok(NormalizedAst {
        query,
        alias_map: ctx.alias_map,
        dialect: q.dialect,
    })
}

/// Stable 64-bit hash of the canonical rendering.
pub fn ast_fingerprint(n: &NormalizedAst) -> u64 {
    let digest = Sha256::digest(n.render().as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

struct Binding {
    key: String,
    canonical: String,
    cols: Option<Vec<String>>,
}

#[derive(Default)]
struct Scope {
    bindings: Vec<Binding>,
    using: Vec<String>,
    natural: bool,
}

struct CteEntry {
    name: String,
    canonical: String,
    cols: Option<Vec<String>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum AliasMode {
    None,
    /// Select-list aliases win over columns (ORDER BY).
    First,
    /// Aliases are used when no table definitely has the column.
    Fallback,
}

enum Resolution {
    Definite(String),
    Guess(String),
    Ambiguous(Vec<String>),
    NotFound,
}

struct Ctx<'s> {
    schema: Option<&'s SchemaMap>,
    lenient: bool,
    no_resolve: bool,
    scopes: Vec<Scope>,
    ctes: Vec<Vec<CteEntry>>,
    alias_map: BTreeMap<String, String>,
}

type Aliases = [(String, Expr)];

impl Ctx<'_> {
    fn query(&mut self, q: &Query) -> Result<(Query, Option<Vec<String>>), SqlError> {
        let with = match &q.with {
            Some(w) => {
                self.ctes.push(Vec::new());
                let mut ctes = Vec::new();
                for cte in &w.ctes {
                    let canonical = self.fresh_cte();
                    let name = cte.name.to_lowercase();
                    let declared: Vec<String> =
                        cte.columns.iter().map(|c| c.to_lowercase()).collect();
                    let declared_cols = (!declared.is_empty()).then(|| declared.clone());
                    if w.recursive {
                        self.push_cte(&name, &canonical, declared_cols.clone());
                    }
                    let (body, out) = self.query(&cte.query)?;
                    if w.recursive {
                        self.ctes.last_mut().unwrap().pop();
                    }
                    self.push_cte(&name, &canonical, declared_cols.or(out));
                    self.alias_map.insert(name, canonical.clone());
                    ctes.push(Cte {
                        name: canonical,
                        columns: declared,
                        query: body,
                    });
                }
                Some(With {
                    recursive: w.recursive,
                    ctes,
                })
            }
            None => None,
        };

        let (body, order_by, out) = match &q.body {
            SetExpr::Select(s) => {
                self.scopes.push(Scope::default());
                let result = self.select(s).and_then(|(sel, out)| {
                    let aliases = item_aliases(&sel);
                    let order_by = self.order_items(&q.order_by, &aliases, AliasMode::First)?;
                    Ok((SetExpr::Select(Box::new(sel)), order_by, out))
                });
                self.scopes.pop();
                result?
            }
            other => {
                let (body, out) = self.set_expr(other)?;
                let saved = std::mem::replace(&mut self.no_resolve, true);
                let order_by = self.order_items(&q.order_by, &[], AliasMode::None);
                self.no_resolve = saved;
                (body, order_by?, out)
            }
        };
        let saved = std::mem::replace(&mut self.no_resolve, true);
        let limit = q.limit.as_ref().map(|e| self.expr(e, &[], AliasMode::None));
        let offset = q.offset.as_ref().map(|e| self.expr(e, &[], AliasMode::None));
        self.no_resolve = saved;

        if with.is_some() {
            self.ctes.pop();
        }
        Ok((
            Query {
                with,
                body,
                order_by,
                limit: limit.transpose()?,
                offset: offset.transpose()?,
            },
            out,
        ))
    }

    fn push_cte(&mut self, name: &str, canonical: &str, cols: Option<Vec<String>>) {
        self.ctes.last_mut().unwrap().push(CteEntry {
            name: name.to_string(),
            canonical: canonical.to_string(),
            cols,
        });
    }

    fn set_expr(&mut self, body: &SetExpr) -> Result<(SetExpr, Option<Vec<String>>), SqlError> {
        match body {
            SetExpr::Select(s) => {
                self.scopes.push(Scope::default());
                let result = self.select(s);
                self.scopes.pop();
                let (sel, out) = result?;
                Ok((SetExpr::Select(Box::new(sel)), out))
            }
            SetExpr::SetOp {
                op,
                all,
                left,
                right,
            } => {
                let (l, out) = self.set_expr(left)?;
                let (r, _) = self.set_expr(right)?;
                Ok((
                    SetExpr::SetOp {
                        op: *op,
                        all: *all,
                        left: Box::new(l),
                        right: Box::new(r),
                    },
                    out,
                ))
            }
            SetExpr::Query(q) => {
                let (q, out) = self.query(q)?;
                Ok((SetExpr::Query(Box::new(q)), out))
            }
        }
    }

    /// Normalizes a SELECT whose scope has already been pushed.
    fn select(&mut self, s: &Select) -> Result<(Select, Option<Vec<String>>), SqlError> {
        let mut from = Vec::with_capacity(s.from.len());
        for item in &s.from {
            from.push(self.bind_from_item(item)?);
        }
        for item in &mut from {
            self.resolve_join_conditions(item)?;
        }

        let mut items = Vec::with_capacity(s.items.len());
        for item in &s.items {
            items.push(match item {
                SelectItem::Wildcard => SelectItem::Wildcard,
                SelectItem::QualifiedWildcard(t) => {
                    let t = t.to_lowercase();
                    SelectItem::QualifiedWildcard(self.qualifier(&t).unwrap_or(t))
                }
                SelectItem::Expr { expr, alias } => SelectItem::Expr {
                    expr: self.expr(expr, &[], AliasMode::None)?,
                    alias: alias.as_ref().map(|a| a.to_lowercase()),
                },
            });
        }
        let out = self.output_columns(&items);
        let sel_aliases = items_aliases(&items);

        let selection = match &s.selection {
            Some(e) => Some(self.expr(e, &sel_aliases, AliasMode::Fallback)?),
            None => None,
        };
        let mut group_by = Vec::with_capacity(s.group_by.len());
        for g in &s.group_by {
            group_by.push(self.expr(g, &sel_aliases, AliasMode::Fallback)?);
        }
        let having = match &s.having {
            Some(e) => Some(self.expr(e, &sel_aliases, AliasMode::Fallback)?),
            None => None,
        };
        Ok((
            Select {
                distinct: s.distinct,
                items,
                from,
                selection,
                group_by,
                having,
            },
            out,
        ))
    }

    fn output_columns(&self, items: &[SelectItem]) -> Option<Vec<String>> {
        let scope = self.scopes.last()?;
        let mut out = Vec::new();
        for item in items {
            match item {
                SelectItem::Wildcard => {
                    for b in &scope.bindings {
                        out.extend(b.cols.clone()?);
                    }
                }
                SelectItem::QualifiedWildcard(t) => {
                    let b = scope.bindings.iter().find(|b| &b.canonical == t)?;
                    out.extend(b.cols.clone()?);
                }
                SelectItem::Expr { expr, alias } => out.push(match (alias, expr) {
                    (Some(a), _) => a.clone(),
                    (None, Expr::Column { name, .. }) => name.clone(),
                    (None, e) => e.to_string().to_lowercase(),
                }),
            }
        }
        Some(out)
    }

    fn bind_from_item(&mut self, item: &FromItem) -> Result<FromItem, SqlError> {
        let relation = self.bind_factor(&item.relation)?;
        let mut joins = Vec::with_capacity(item.joins.len());
        for j in &item.joins {
            let relation = self.bind_factor(&j.relation)?;
            let constraint = match &j.constraint {
                JoinConstraint::Using(cols) => {
                    let cols: Vec<String> = cols.iter().map(|c| c.to_lowercase()).collect();
                    self.top().using.extend(cols.iter().cloned());
                    JoinConstraint::Using(cols)
                }
                JoinConstraint::Natural => {
                    self.top().natural = true;
                    JoinConstraint::Natural
                }
                other => other.clone(),
            };
            joins.push(Join {
                kind: j.kind,
                relation,
                constraint,
            });
        }
        Ok(FromItem { relation, joins })
    }

    fn top(&mut self) -> &mut Scope {
        self.scopes.last_mut().expect("scope pushed")
    }

    fn bind_factor(&mut self, tf: &TableFactor) -> Result<TableFactor, SqlError> {
        match tf {
            TableFactor::Table { name, alias } => {
                let name = name.to_lowercase();
                let (base, cols) = match self.lookup_cte(&name) {
                    Some(c) => (c.canonical.clone(), c.cols.clone()),
                    None => (
                        name.clone(),
                        self.schema.and_then(|s| s.get(&name)).cloned(),
                    ),
                };
                let canonical = self.fresh_table(&base);
                let key = alias.as_ref().map(|a| a.to_lowercase()).unwrap_or(name);
                self.record_alias(alias.is_some(), &key, &canonical);
                self.top().bindings.push(Binding {
                    key,
                    canonical: canonical.clone(),
                    cols,
                });
                Ok(TableFactor::Table {
                    alias: (canonical != base).then_some(canonical),
                    name: base,
                })
            }
            TableFactor::Derived { subquery, alias } => {
                let (sub, cols) = self.query(subquery)?;
                let canonical = self.fresh_numbered("derived");
                let key = alias
                    .as_ref()
                    .map(|a| a.to_lowercase())
                    .unwrap_or_else(|| canonical.clone());
                self.record_alias(alias.is_some(), &key, &canonical);
                self.top().bindings.push(Binding {
                    key,
                    canonical: canonical.clone(),
                    cols,
                });
                Ok(TableFactor::Derived {
                    subquery: Box::new(sub),
                    alias: Some(canonical),
                })
            }
            TableFactor::Nested { item, .. } => Ok(TableFactor::Nested {
                item: Box::new(self.bind_from_item(item)?),
                alias: None,
            }),
        }
    }

    fn record_alias(&mut self, aliased: bool, key: &str, canonical: &str) {
        if aliased {
            self.alias_map.insert(key.to_string(), canonical.to_string());
        }
    }

    fn resolve_join_conditions(&mut self, item: &mut FromItem) -> Result<(), SqlError> {
        if let TableFactor::Nested { item, .. } = &mut item.relation {
            self.resolve_join_conditions(item)?;
        }
        for j in &mut item.joins {
            if let TableFactor::Nested { item, .. } = &mut j.relation {
                self.resolve_join_conditions(item)?;
            }
            if let JoinConstraint::On(e) = &j.constraint {
                j.constraint = JoinConstraint::On(self.expr(e, &[], AliasMode::None)?);
            }
        }
        Ok(())
    }

    fn lookup_cte(&self, name: &str) -> Option<&CteEntry> {
        self.ctes.iter().rev().flat_map(|l| l.iter().rev()).find(|c| c.name == name)
    }

    fn used(&self, name: &str) -> bool {
        self.scopes
            .iter()
            .any(|s| s.bindings.iter().any(|b| b.canonical == name))
    }

    fn fresh_table(&self, base: &str) -> String {
        if !self.used(base) {
            return base.to_string();
        }
        (2..)
            .map(|i| format!("{base}__{i}"))
            .find(|n| !self.used(n))
            .unwrap()
    }

    fn fresh_numbered(&self, prefix: &str) -> String {
        (1..)
            .map(|i| format!("{prefix}_{i}"))
            .find(|n| !self.used(n))
            .unwrap()
    }

    fn fresh_cte(&self) -> String {
        (1..)
            .map(|i| format!("cte_{i}"))
            .find(|n| !self.ctes.iter().flatten().any(|c| &c.canonical == n))
            .unwrap()
    }

    fn qualifier(&self, key: &str) -> Option<String> {
        self.scopes
            .iter()
            .rev()
            .flat_map(|s| s.bindings.iter())
            .find(|b| b.key == key)
            .map(|b| b.canonical.clone())
    }

    fn resolve(&self, column: &str) -> Resolution {
        for scope in self.scopes.iter().rev() {
            let shared = scope.natural || scope.using.iter().any(|u| u == column);
            let definite: Vec<&Binding> = scope
                .bindings
                .iter()
                .filter(|b| b.cols.as_ref().is_some_and(|c| c.iter().any(|x| x == column)))
                .collect();
            match definite.len() {
                1 => return Resolution::Definite(definite[0].canonical.clone()),
                n if n > 1 && shared => return Resolution::Definite(definite[0].canonical.clone()),
                n if n > 1 => {
                    return Resolution::Ambiguous(
                        definite.iter().map(|b| b.canonical.clone()).collect(),
                    )
                }
                _ => {}
            }
            let unknown: Vec<&Binding> =
                scope.bindings.iter().filter(|b| b.cols.is_none()).collect();
            match unknown.len() {
                0 => {}
                1 => return Resolution::Guess(unknown[0].canonical.clone()),
                _ if shared => return Resolution::Guess(unknown[0].canonical.clone()),
                _ => {
                    return Resolution::Ambiguous(
                        unknown.iter().map(|b| b.canonical.clone()).collect(),
                    )
                }
            }
        }
        Resolution::NotFound
    }

    fn column(
        &mut self,
        table: Option<&str>,
        name: &str,
        aliases: &Aliases,
        mode: AliasMode,
    ) -> Result<Expr, SqlError> {
        let name = name.to_lowercase();
        if self.no_resolve {
            return Ok(Expr::Column {
                table: table.map(str::to_lowercase),
                name,
            });
        }
        if let Some(t) = table {
            let t = t.to_lowercase();
            let canonical = self.qualifier(&t).unwrap_or(t);
            return Ok(Expr::Column {
                table: Some(canonical),
                name,
            });
        }
        let alias = aliases
            .iter()
            .find(|(a, _)| *a == name)
            .map(|(_, e)| e.clone());
        if mode == AliasMode::First {
            if let Some(a) = alias {
                return Ok(a);
            }
        }
        let fallback = if mode == AliasMode::None { None } else { alias };
        let qualified = |t: String| Expr::Column {
            table: Some(t),
            name: name.clone(),
        };
        Ok(match self.resolve(&name) {
            Resolution::Definite(t) => qualified(t),
            Resolution::Guess(t) => fallback.unwrap_or_else(|| qualified(t)),
            Resolution::Ambiguous(candidates) => match fallback {
                Some(a) => a,
                None if self.lenient => Expr::Column { table: None, name },
                None => return Err(SqlError::AmbiguousColumn { column: name, candidates }),
            },
            Resolution::NotFound => fallback.unwrap_or(Expr::Column { table: None, name }),
        })
    }

    fn order_items(
        &mut self,
        items: &[OrderItem],
        aliases: &Aliases,
        mode: AliasMode,
    ) -> Result<Vec<OrderItem>, SqlError> {
        items
            .iter()
            .map(|o| {
                Ok(OrderItem {
                    expr: self.expr(&o.expr, aliases, mode)?,
                    desc: o.desc,
                    nulls_first: o.nulls_first,
                })
            })
            .collect()
    }

    fn sub(&mut self, q: &Query) -> Result<Box<Query>, SqlError> {
        // Subqueries never see an enclosing query's ORDER BY-only name rules.
        let saved = std::mem::replace(&mut self.no_resolve, false);
        let r = self.query(q);
        self.no_resolve = saved;
        Ok(Box::new(r?.0))
    }

    fn expr(&mut self, e: &Expr, aliases: &Aliases, mode: AliasMode) -> Result<Expr, SqlError> {
        macro_rules! n {
            ($x:expr) => {
                Box::new(self.expr($x, aliases, mode)?)
            };
        }
        Ok(match e {
            Expr::Column { table, name } => self.column(table.as_deref(), name, aliases, mode)?,
            Expr::Literal(l) => Expr::Literal(l.clone()),
            Expr::Unary { op, expr } => Expr::Unary {
                op: *op,
                expr: n!(expr),
            },
            Expr::Binary { left, op, right } => Expr::Binary {
                left: n!(left),
                op: *op,
                right: n!(right),
            },
            Expr::Function(func) => {
                let mut args = Vec::with_capacity(func.args.len());
                for a in &func.args {
                    args.push(match a {
                        FunctionArg::Star => FunctionArg::Star,
                        FunctionArg::Expr(x) => FunctionArg::Expr(*n!(x)),
                    });
                }
                let over = match &func.over {
                    None => None,
                    Some(w) => {
                        let mut partition_by = Vec::new();
                        for p in &w.partition_by {
                            partition_by.push(*n!(p));
                        }
                        let order_by = self.order_items(&w.order_by, aliases, AliasMode::None)?;
                        let frame = match &w.frame {
                            None => None,
                            Some(fr) => Some(WindowFrame {
                                units: fr.units,
                                start: self.bound(&fr.start)?,
                                end: match &fr.end {
                                    Some(b) => Some(self.bound(b)?),
                                    None => None,
                                },
                            }),
                        };
                        Some(WindowSpec {
                            partition_by,
                            order_by,
                            frame,
                        })
                    }
                };
                Expr::Function(Box::new(Function {
                    name: func.name.to_lowercase(),
                    distinct: func.distinct,
                    args,
                    over,
                }))
            }
            Expr::Case {
                operand,
                whens,
                else_result,
            } => {
                let operand = match operand {
                    Some(o) => Some(n!(o)),
                    None => None,
                };
                let mut ws = Vec::with_capacity(whens.len());
                for (c, r) in whens {
                    ws.push((*n!(c), *n!(r)));
                }
                let else_result = match else_result {
                    Some(x) => Some(n!(x)),
                    None => None,
                };
                Expr::Case {
                    operand,
                    whens: ws,
                    else_result,
                }
            }
            Expr::InList {
                expr,
                list,
                negated,
            } => {
                let expr = n!(expr);
                let mut l = Vec::with_capacity(list.len());
                for x in list {
                    l.push(*n!(x));
                }
                Expr::InList {
                    expr,
                    list: l,
                    negated: *negated,
                }
            }
            Expr::InSubquery {
                expr,
                subquery,
                negated,
            } => Expr::InSubquery {
                expr: n!(expr),
                subquery: self.sub(subquery)?,
                negated: *negated,
            },
            Expr::Exists { subquery, negated } => Expr::Exists {
                subquery: self.sub(subquery)?,
                negated: *negated,
            },
            Expr::Subquery(q) => Expr::Subquery(self.sub(q)?),
            Expr::Between {
                expr,
                low,
                high,
                negated,
            } => Expr::Between {
                expr: n!(expr),
                low: n!(low),
                high: n!(high),
                negated: *negated,
            },
            Expr::Like {
                expr,
                pattern,
                negated,
                escape,
            } => Expr::Like {
                expr: n!(expr),
                pattern: n!(pattern),
                negated: *negated,
                escape: escape.clone(),
            },
            Expr::IsNull { expr, negated } => Expr::IsNull {
                expr: n!(expr),
                negated: *negated,
            },
            Expr::Quantified {
                left,
                op,
                quantifier,
                subquery,
            } => Expr::Quantified {
                left: n!(left),
                op: *op,
                quantifier: *quantifier,
                subquery: self.sub(subquery)?,
            },
            Expr::Cast { expr, data_type } => Expr::Cast {
                expr: n!(expr),
                data_type: data_type.to_uppercase(),
            },
            Expr::Tuple(items) => {
                let mut out = Vec::with_capacity(items.len());
                for x in items {
                    out.push(*n!(x));
                }
                Expr::Tuple(out)
            }
        })
    }

    fn bound(&mut self, b: &FrameBound) -> Result<FrameBound, SqlError> {
        Ok(match b {
            FrameBound::CurrentRow => FrameBound::CurrentRow,
            FrameBound::Preceding(x) => FrameBound::Preceding(match x {
                Some(x) => Some(Box::new(self.expr(x, &[], AliasMode::None)?)),
                None => None,
            }),
            FrameBound::Following(x) => FrameBound::Following(match x {
                Some(x) => Some(Box::new(self.expr(x, &[], AliasMode::None)?)),
                None => None,
            }),
        })
    }
}

fn items_aliases(items: &[SelectItem]) -> Vec<(String, Expr)> {
    items
        .iter()
        .filter_map(|i| match i {
            SelectItem::Expr {
                expr,
                alias: Some(a),
            } => Some((a.clone(), expr.clone())),
            _ => None,
        })
        .collect()
}

fn item_aliases(s: &Select) -> Vec<(String, Expr)> {
    items_aliases(&s.items)
}

// ---------------------------------------------------------------------------
// Canonical operand order

fn order_key(e: &Expr) -> (u8, String) {
    let rank = match e {
        Expr::Literal(_) => 2,
        Expr::Subquery(_) => 1,
        _ => 0,
    };
    (rank, e.to_string())
}

fn flatten(e: Expr, op: BinaryOp, out: &mut Vec<Expr>) {
    match e {
        Expr::Binary {
            left,
            op: inner,
            right,
        } if inner == op => {
            flatten(*left, op, out);
            flatten(*right, op, out);
        }
        other => out.push(other),
    }
}

/// Canonicalizes one node whose children are already canonical.
fn canon_node(e: &mut Expr) {
    let Expr::Binary { op, .. } = e else {
        return;
    };
    let op = *op;
    let taken = std::mem::replace(e, Expr::Literal(Literal::Null));
    let Expr::Binary { left, right, .. } = taken else {
        unreachable!()
    };
    if op.is_logical() {
        let mut operands = Vec::new();
        flatten(*left, op, &mut operands);
        flatten(*right, op, &mut operands);
        operands.sort_by_cached_key(order_key);
        let mut iter = operands.into_iter();
        let first = iter.next().expect("binary has operands");
        *e = iter.fold(first, |acc, x| Expr::binary(acc, op, x));
        return;
    }
    match op.flipped() {
        Some(flipped) if order_key(&right) < order_key(&left) => {
            *e = Expr::binary(*right, flipped, *left);
        }
        _ => *e = Expr::binary(*left, op, *right),
    }
}

// ---------------------------------------------------------------------------
// Post-order mutable traversal over every expression, subqueries included

pub fn walk_query_mut(q: &mut Query, f: &mut dyn FnMut(&mut Expr)) {
    if let Some(w) = &mut q.with {
        for c in &mut w.ctes {
            walk_query_mut(&mut c.query, f);
        }
    }
    walk_set_mut(&mut q.body, f);
    for o in &mut q.order_by {
        walk_expr_mut(&mut o.expr, f);
    }
    if let Some(l) = &mut q.limit {
        walk_expr_mut(l, f);
    }
    if let Some(o) = &mut q.offset {
        walk_expr_mut(o, f);
    }
}

fn walk_set_mut(body: &mut SetExpr, f: &mut dyn FnMut(&mut Expr)) {
    match body {
        SetExpr::Select(s) => {
            for item in &mut s.items {
                if let SelectItem::Expr { expr, .. } = item {
                    walk_expr_mut(expr, f);
                }
            }
            for item in &mut s.from {
                walk_from_mut(item, f);
            }
            if let Some(w) = &mut s.selection {
                walk_expr_mut(w, f);
            }
            for g in &mut s.group_by {
                walk_expr_mut(g, f);
            }
            if let Some(h) = &mut s.having {
                walk_expr_mut(h, f);
            }
        }
        SetExpr::SetOp { left, right, .. } => {
            walk_set_mut(left, f);
            walk_set_mut(right, f);
        }
        SetExpr::Query(q) => walk_query_mut(q, f),
    }
}

fn walk_factor_mut(tf: &mut TableFactor, f: &mut dyn FnMut(&mut Expr)) {
    match tf {
        TableFactor::Table { .. } => {}
        TableFactor::Derived { subquery, .. } => walk_query_mut(subquery, f),
        TableFactor::Nested { item, .. } => walk_from_mut(item, f),
    }
}

fn walk_from_mut(item: &mut FromItem, f: &mut dyn FnMut(&mut Expr)) {
    walk_factor_mut(&mut item.relation, f);
    for j in &mut item.joins {
        walk_factor_mut(&mut j.relation, f);
        if let JoinConstraint::On(e) = &mut j.constraint {
            walk_expr_mut(e, f);
        }
    }
}

fn walk_expr_mut(e: &mut Expr, f: &mut dyn FnMut(&mut Expr)) {
    match e {
        Expr::Column { .. } | Expr::Literal(_) => {}
        Expr::Unary { expr, .. } | Expr::Cast { expr, .. } | Expr::IsNull { expr, .. } => {
            walk_expr_mut(expr, f)
        }
        Expr::Binary { left, right, .. } => {
            walk_expr_mut(left, f);
            walk_expr_mut(right, f);
        }
        Expr::Function(func) => {
            for a in &mut func.args {
                if let FunctionArg::Expr(x) = a {
                    walk_expr_mut(x, f);
                }
            }
            if let Some(w) = &mut func.over {
                for p in &mut w.partition_by {
                    walk_expr_mut(p, f);
                }
                for o in &mut w.order_by {
                    walk_expr_mut(&mut o.expr, f);
                }
                if let Some(fr) = &mut w.frame {
                    for b in std::iter::once(&mut fr.start).chain(fr.end.iter_mut()) {
                        if let FrameBound::Preceding(Some(x)) | FrameBound::Following(Some(x)) = b
                        {
                            walk_expr_mut(x, f);
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
                walk_expr_mut(o, f);
            }
            for (c, r) in whens {
                walk_expr_mut(c, f);
                walk_expr_mut(r, f);
            }
            if let Some(x) = else_result {
                walk_expr_mut(x, f);
            }
        }
        Expr::InList { expr, list, .. } => {
            walk_expr_mut(expr, f);
            for x in list {
                walk_expr_mut(x, f);
            }
        }
        Expr::InSubquery { expr, subquery, .. } => {
            walk_expr_mut(expr, f);
            walk_query_mut(subquery, f);
        }
        Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => walk_query_mut(subquery, f),
        Expr::Between {
            expr, low, high, ..
        } => {
            walk_expr_mut(expr, f);
            walk_expr_mut(low, f);
            walk_expr_mut(high, f);
        }
        Expr::Like { expr, pattern, .. } => {
            walk_expr_mut(expr, f);
            walk_expr_mut(pattern, f);
        }
        Expr::Quantified { left, subquery, .. } => {
            walk_expr_mut(left, f);
            walk_query_mut(subquery, f);
        }
        Expr::Tuple(items) => {
            for x in items {
                walk_expr_mut(x, f);
            }
        }
    }
    f(e);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse::parse_sql;

    fn schema() -> SchemaMap {
        let mut s = SchemaMap::new();
        s.insert("students".into(), vec!["name".into(), "age".into()]);
        s.insert("emp".into(), vec!["id".into(), "name".into(), "m".into()]);
        s.insert("dept".into(), vec!["id".into(), "name".into()]);
        s
    }

    fn norm(sql: &str, schema: Option<&SchemaMap>) -> NormalizedAst {
        normalize(&parse_sql(sql, SqlDialect::Sqlite).unwrap(), schema).unwrap()
    }

    fn renorm(n: &NormalizedAst, schema: Option<&SchemaMap>) -> NormalizedAst {
        normalize(&parse_sql(&n.render(), SqlDialect::Sqlite).unwrap(), schema).unwrap()
    }

    #[test]
    fn alias_and_case_are_resolved() {
        let s = schema();
        let a = norm("select T1.name from students as T1", Some(&s));
        let b = norm("SELECT name FROM students", Some(&s));
        assert_eq!(a.query, b.query);
        assert_eq!(a.render(), "SELECT students.name FROM students");
        assert_eq!(a.alias_map.get("t1").map(String::as_str), Some("students"));
        // a single table needs no schema to qualify
        assert_eq!(norm("SELECT name FROM students", None).query, b.query);
    }

    #[test]
    fn conjunct_order_is_irrelevant() {
        let a = norm("SELECT a FROM r WHERE x=1 AND y=2", None);
        let b = norm("SELECT a FROM r WHERE y=2 AND x=1", None);
        assert_eq!(a, b);
        let c = norm("SELECT a FROM r WHERE (y=2 AND z=3) AND x=1", None);
        assert_eq!(c.render(), "SELECT r.a FROM r WHERE r.x = 1 AND r.y = 2 AND r.z = 3");
    }

    #[test]
    fn comparisons_put_literals_right() {
        let a = norm("SELECT a FROM r WHERE 20 < age", None);
        assert_eq!(a.render(), "SELECT r.a FROM r WHERE r.age > 20");
        let b = norm("SELECT a FROM r WHERE r.y = r.x", None);
        assert_eq!(b.render(), "SELECT r.a FROM r WHERE r.x = r.y");
    }

    #[test]
    fn ambiguous_column_without_schema_fails() {
        let q = parse_sql("SELECT name FROM emp, dept", SqlDialect::Sqlite).unwrap();
        assert!(matches!(
            normalize(&q, None),
            Err(SqlError::AmbiguousColumn { .. })
        ));
        let s = schema();
        assert!(matches!(
            normalize(&q, Some(&s)),
            Err(SqlError::AmbiguousColumn { .. })
        ));
        let lenient = normalize_with(
            &q,
            None,
            NormalizeOptions {
                lenient: true,
                mask_literals: false,
            },
        )
        .unwrap();
        assert_eq!(lenient.render(), "SELECT name FROM emp, dept");
        // the schema disambiguates a column that only one table has
        let ok = normalize(
            &parse_sql("SELECT m FROM emp, dept", SqlDialect::Sqlite).unwrap(),
            Some(&s),
        )
        .unwrap();
        assert_eq!(ok.render(), "SELECT emp.m FROM emp, dept");
    }

    #[test]
    fn self_join_aliases_are_canonical() {
        let a = norm("SELECT e1.name FROM emp e1 JOIN emp e2 ON e1.m = e2.id", None);
        let b = norm("SELECT x.name FROM emp AS x JOIN emp AS y ON y.id = x.m", None);
        assert_eq!(a.query, b.query);
        assert_eq!(
            a.render(),
            "SELECT emp.name FROM emp JOIN emp AS emp__2 ON emp.m = emp__2.id"
        );
    }

    #[test]
    fn correlated_subquery_keeps_outer_binding() {
        let n = norm(
            "SELECT e.name FROM emp e WHERE e.m > (SELECT AVG(x.m) FROM emp x WHERE x.id = e.id)",
            None,
        );
        assert_eq!(
            n.render(),
            "SELECT emp.name FROM emp WHERE emp.m > (SELECT avg(emp__2.m) FROM emp AS emp__2 \
             WHERE emp.id = emp__2.id)"
        );
        assert_eq!(renorm(&n, None), n);
    }

    #[test]
    fn derived_tables_and_ctes_are_renamed() {
        let n = norm(
            "WITH big AS (SELECT id FROM dept) SELECT t.c FROM (SELECT COUNT(*) AS c FROM big) t",
            None,
        );
        assert_eq!(
            n.render(),
            "WITH cte_1 AS (SELECT dept.id FROM dept) SELECT derived_1.c FROM \
             (SELECT count(*) AS c FROM cte_1) AS derived_1"
        );
        assert_eq!(renorm(&n, None), n);
    }

    #[test]
    fn order_by_resolves_select_aliases() {
        let n = norm("SELECT title, COUNT(*) AS n FROM emp GROUP BY title ORDER BY n DESC", None);
        assert_eq!(
            n.render(),
            "SELECT emp.title, count(*) AS n FROM emp GROUP BY emp.title ORDER BY count(*) DESC"
        );
    }

    #[test]
    fn masking_replaces_literals() {
        let q = parse_sql("SELECT a FROM r WHERE 20 < age LIMIT 3", SqlDialect::Sqlite).unwrap();
        let opts = NormalizeOptions {
            lenient: false,
            mask_literals: true,
        };
        let n = normalize_with(&q, None, opts).unwrap();
        assert_eq!(n.render(), "SELECT r.a FROM r WHERE r.age > ? LIMIT ?");
        let again = normalize_with(&n.to_query_ast(), None, opts).unwrap();
        assert_eq!(again, n);
    }

    #[test]
    fn fingerprint_is_stable_and_alias_invariant() {
        let a = norm("SELECT e.name FROM emp e WHERE e.id = 3", None);
        let b = norm("select NAME from EMP where 3 = ID", None);
        assert_eq!(ast_fingerprint(&a), ast_fingerprint(&b));
        // frozen value guards against accidental changes to the canonical form
        assert_eq!(a.render(), "SELECT emp.name FROM emp WHERE emp.id = 3");
        let digest = Sha256::digest(b"SELECT emp.name FROM emp WHERE emp.id = 3");
        assert_eq!(
            ast_fingerprint(&a),
            u64::from_be_bytes(digest[..8].try_into().unwrap())
        );
    }
}
