//! Parsing SQL text into the owned query tree.
//!
//! Tokenizing and grammar are delegated to `sqlparser`; this module lowers
//! its syntax tree into [`crate::sql::ast`] and rejects anything outside the
//! supported SELECT subset.

use serde::{Deserialize, Serialize};
use sqlparser::ast as sp;
use sqlparser::dialect::{MySqlDialect, SQLiteDialect};
use sqlparser::parser::Parser;

use super::ast::*;
use super::SqlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SqlDialect {
    #[default]
    Sqlite,
    Mysql,
}

/// A parsed single SELECT statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub root: Query,
    pub dialect: SqlDialect,
    pub source_text: String,
}

impl QueryAst {
    /// Renders the tree back to SQL.
    pub fn render(&self) -> String {
        self.root.to_string()
    }

    /// True when the outermost query has an ORDER BY.
    pub fn is_ordered(&self) -> bool {
        !self.root.order_by.is_empty()
    }

    /// Every subquery in the tree paired with its nesting depth; the
    /// top-level query is depth 0 and is not included.
    pub fn subqueries(&self) -> Vec<(usize, &Query)> {
        let mut out = Vec::new();
        collect_subqueries(&self.root, 0, &mut out);
        out
    }
}

fn collect_subqueries<'a>(q: &'a Query, depth: usize, out: &mut Vec<(usize, &'a Query)>) {
    let visit = |sub: &'a Query, out: &mut Vec<(usize, &'a Query)>| {
        out.push((depth + 1, sub));
        collect_subqueries(sub, depth + 1, out);
    };
    if let Some(with) = &q.with {
        for cte in &with.ctes {
            visit(&cte.query, out);
        }
    }
    let mut nested = Vec::new();
    super::visit::query_children(q, &mut |child| nested.push(child));
    for child in nested {
        visit(child, out);
    }
}

pub fn parse_sql(text: &str, dialect: SqlDialect) -> Result<QueryAst, SqlError> {
    if text.trim().is_empty() {
        return Err(SqlError::Parse {
            offset: 0,
            message: "empty query".into(),
        });
    }
    let parsed = match dialect {
        SqlDialect::Sqlite => Parser::parse_sql(&SQLiteDialect {}, text),
        SqlDialect::Mysql => Parser::parse_sql(&MySqlDialect {}, text),
    };
    let mut statements = parsed.map_err(|e| parse_error(text, e))?;
    if statements.len() != 1 {
        return Err(SqlError::Parse {
            offset: second_statement_offset(text),
            message: format!("expected exactly one statement, found {}", statements.len()),
        });
    }
    let root = match statements.pop() {
        Some(sp::Statement::Query(q)) => lower_query(&q)?,
        Some(other) => {
            let kind = other.to_string();
            let kind = kind.split_whitespace().next().unwrap_or("statement");
            return Err(SqlError::Unsupported(format!(
                "{} statements are not queries",
                kind.to_ascii_uppercase()
            )));
        }
        None => unreachable!("length checked above"),
    };
    Ok(QueryAst {
        root,
        dialect,
        source_text: text.to_string(),
    })
}

fn second_statement_offset(text: &str) -> usize {
    text.find(';').map(|i| i + 1).unwrap_or(0)
}

fn parse_error(text: &str, err: sqlparser::parser::ParserError) -> SqlError {
    let message = err.to_string();
    let offset = locate(&message)
        .map(|(line, col)| line_col_to_offset(text, line, col))
        .unwrap_or(0);
    SqlError::Parse { offset, message }
}

fn locate(message: &str) -> Option<(usize, usize)> {
    let idx = message.rfind("Line: ")?;
    let rest = &message[idx + 6..];
    let (line, rest) = rest.split_once(", Column: ")?;
    let col: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    Some((line.trim().parse().ok()?, col.parse().ok()?))
}

fn line_col_to_offset(text: &str, line: usize, col: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            let within: usize = l.chars().take(col.saturating_sub(1)).map(char::len_utf8).sum();
            return (offset + within).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

fn unsupported<T>(what: impl Into<String>) -> Result<T, SqlError> {
    Err(SqlError::Unsupported(what.into()))
}

fn ident(i: &sp::Ident) -> String {
    i.value.clone()
}

fn object_name(name: &sp::ObjectName) -> Result<String, SqlError> {
    match name.0.last() {
        Some(sp::ObjectNamePart::Identifier(i)) => Ok(ident(i)),
        _ => unsupported(format!("object name {name}")),
    }
}

fn lower_query(q: &sp::Query) -> Result<Query, SqlError> {
    if q.fetch.is_some() || !q.locks.is_empty() || !q.pipe_operators.is_empty() {
        return unsupported("FETCH, locking clauses and pipe operators");
    }
    let with = match &q.with {
        Some(w) => Some(With {
            recursive: w.recursive,
            ctes: w
                .cte_tables
                .iter()
                .map(|c| {
                    Ok(Cte {
                        name: ident(&c.alias.name),
                        columns: c.alias.columns.iter().map(|c| ident(&c.name)).collect(),
                        query: lower_query(&c.query)?,
                    })
                })
                .collect::<Result<_, SqlError>>()?,
        }),
        None => None,
    };
    let order_by = match &q.order_by {
        None => Vec::new(),
        Some(ob) => match &ob.kind {
            sp::OrderByKind::Expressions(items) => lower_order_items(items)?,
            sp::OrderByKind::All(_) => return unsupported("ORDER BY ALL"),
        },
    };
    let (limit, offset) = match &q.limit_clause {
        None => (None, None),
        Some(sp::LimitClause::LimitOffset {
            limit,
            offset,
            limit_by,
        }) => {
            if !limit_by.is_empty() {
                return unsupported("LIMIT BY");
            }
            (
                limit.as_ref().map(lower_expr).transpose()?,
                offset.as_ref().map(|o| lower_expr(&o.value)).transpose()?,
            )
        }
        Some(sp::LimitClause::OffsetCommaLimit { offset, limit }) => {
            (Some(lower_expr(limit)?), Some(lower_expr(offset)?))
        }
    };
    Ok(Query {
        with,
        body: lower_set_expr(&q.body)?,
        order_by,
        limit,
        offset,
    })
}

fn lower_order_items(items: &[sp::OrderByExpr]) -> Result<Vec<OrderItem>, SqlError> {
    items
        .iter()
        .map(|o| {
            Ok(OrderItem {
                expr: lower_expr(&o.expr)?,
                desc: o.options.asc == Some(false),
                nulls_first: o.options.nulls_first,
            })
        })
        .collect()
}

fn lower_set_expr(body: &sp::SetExpr) -> Result<SetExpr, SqlError> {
    match body {
        sp::SetExpr::Select(s) => Ok(SetExpr::Select(Box::new(lower_select(s)?))),
        sp::SetExpr::Query(q) => Ok(SetExpr::Query(Box::new(lower_query(q)?))),
        sp::SetExpr::SetOperation {
            op,
            set_quantifier,
            left,
            right,
        } => {
            let op = match op {
                sp::SetOperator::Union => SetOperator::Union,
                sp::SetOperator::Intersect => SetOperator::Intersect,
                sp::SetOperator::Except | sp::SetOperator::Minus => SetOperator::Except,
            };
            let all = match set_quantifier {
                sp::SetQuantifier::All => true,
                sp::SetQuantifier::Distinct | sp::SetQuantifier::None => false,
                other => return unsupported(format!("set quantifier {other}")),
            };
            Ok(SetExpr::SetOp {
                op,
                all,
                left: Box::new(lower_set_expr(left)?),
                right: Box::new(lower_set_expr(right)?),
            })
        }
        sp::SetExpr::Values(_) => unsupported("VALUES lists"),
        sp::SetExpr::Table(_) => unsupported("TABLE statements"),
        _ => unsupported("data-modifying statements"),
    }
}

fn lower_select(s: &sp::Select) -> Result<Select, SqlError> {
    if s.top.is_some()
        || s.into.is_some()
        || !s.lateral_views.is_empty()
        || s.prewhere.is_some()
        || s.qualify.is_some()
        || !s.named_window.is_empty()
        || s.connect_by.is_some()
        || !s.cluster_by.is_empty()
        || !s.sort_by.is_empty()
    {
        return unsupported("dialect-specific SELECT clause");
    }
    let distinct = match &s.distinct {
        None => false,
        Some(sp::Distinct::Distinct) => true,
        Some(sp::Distinct::On(_)) => return unsupported("DISTINCT ON"),
    };
    let items = s
        .projection
        .iter()
        .map(|item| match item {
            sp::SelectItem::UnnamedExpr(e) => Ok(SelectItem::Expr {
                expr: lower_expr(e)?,
                alias: None,
            }),
            sp::SelectItem::ExprWithAlias { expr, alias } => Ok(SelectItem::Expr {
                expr: lower_expr(expr)?,
                alias: Some(ident(alias)),
            }),
            sp::SelectItem::Wildcard(_) => Ok(SelectItem::Wildcard),
            sp::SelectItem::QualifiedWildcard(kind, _) => match kind {
                sp::SelectItemQualifiedWildcardKind::ObjectName(n) => {
                    Ok(SelectItem::QualifiedWildcard(object_name(n)?))
                }
                sp::SelectItemQualifiedWildcardKind::Expr(_) => {
                    unsupported("wildcard over an expression")
                }
            },
        })
        .collect::<Result<_, SqlError>>()?;
    let from = s
        .from
        .iter()
        .map(lower_from_item)
        .collect::<Result<_, SqlError>>()?;
    let group_by = match &s.group_by {
        sp::GroupByExpr::Expressions(exprs, modifiers) => {
            if !modifiers.is_empty() {
                return unsupported("GROUP BY modifiers");
            }
            exprs.iter().map(lower_expr).collect::<Result<_, _>>()?
        }
        sp::GroupByExpr::All(_) => return unsupported("GROUP BY ALL"),
    };
    Ok(Select {
        distinct,
        items,
        from,
        selection: s.selection.as_ref().map(lower_expr).transpose()?,
        group_by,
        having: s.having.as_ref().map(lower_expr).transpose()?,
    })
}

fn lower_from_item(t: &sp::TableWithJoins) -> Result<FromItem, SqlError> {
    let relation = lower_table_factor(&t.relation)?;
    let joins = t
        .joins
        .iter()
        .map(|j| {
            use sp::JoinOperator as J;
            let (kind, constraint) = match &j.join_operator {
                J::Join(c) | J::Inner(c) => (JoinKind::Inner, c),
                J::Left(c) | J::LeftOuter(c) => (JoinKind::Left, c),
                J::Right(c) | J::RightOuter(c) => (JoinKind::Right, c),
                J::FullOuter(c) => (JoinKind::Full, c),
                J::CrossJoin(c) => (JoinKind::Cross, c),
                other => return unsupported(format!("join operator {other:?}")),
            };
            let constraint = match constraint {
                sp::JoinConstraint::On(e) => JoinConstraint::On(lower_expr(e)?),
                sp::JoinConstraint::Using(cols) => JoinConstraint::Using(
                    cols.iter().map(object_name).collect::<Result<_, _>>()?,
                ),
                sp::JoinConstraint::Natural => JoinConstraint::Natural,
                sp::JoinConstraint::None => JoinConstraint::None,
            };
            Ok(Join {
                kind,
                relation: lower_table_factor(&j.relation)?,
                constraint,
            })
        })
        .collect::<Result<_, SqlError>>()?;
    Ok(FromItem { relation, joins })
}

fn table_alias(alias: &Option<sp::TableAlias>) -> Result<Option<String>, SqlError> {
    match alias {
        None => Ok(None),
        Some(a) if a.columns.is_empty() => Ok(Some(ident(&a.name))),
        Some(_) => unsupported("table alias column lists"),
    }
}

fn lower_table_factor(t: &sp::TableFactor) -> Result<TableFactor, SqlError> {
    match t {
        sp::TableFactor::Table {
            name, alias, args, ..
        } => {
            if args.is_some() {
                return unsupported("table-valued functions");
            }
            Ok(TableFactor::Table {
                name: object_name(name)?,
                alias: table_alias(alias)?,
            })
        }
        sp::TableFactor::Derived {
            lateral,
            subquery,
            alias,
        } => {
            if *lateral {
                return unsupported("LATERAL derived tables");
            }
            Ok(TableFactor::Derived {
                subquery: Box::new(lower_query(subquery)?),
                alias: table_alias(alias)?,
            })
        }
        sp::TableFactor::NestedJoin {
            table_with_joins,
            alias,
        } => Ok(TableFactor::Nested {
            item: Box::new(lower_from_item(table_with_joins)?),
            alias: table_alias(alias)?,
        }),
        other => unsupported(format!("table factor {other}")),
    }
}

fn binary_op(op: &sp::BinaryOperator) -> Result<BinaryOp, SqlError> {
    use sp::BinaryOperator as B;
    Ok(match op {
        B::Plus => BinaryOp::Plus,
        B::Minus => BinaryOp::Minus,
        B::Multiply => BinaryOp::Multiply,
        B::Divide => BinaryOp::Divide,
        B::Modulo => BinaryOp::Modulo,
        B::StringConcat => BinaryOp::Concat,
        B::Gt => BinaryOp::Gt,
        B::Lt => BinaryOp::Lt,
        B::GtEq => BinaryOp::GtEq,
        B::LtEq => BinaryOp::LtEq,
        B::Eq => BinaryOp::Eq,
        B::NotEq => BinaryOp::NotEq,
        B::And => BinaryOp::And,
        B::Or => BinaryOp::Or,
        other => return unsupported(format!("operator {other}")),
    })
}

fn boxed(e: &sp::Expr) -> Result<Box<Expr>, SqlError> {
    lower_expr(e).map(Box::new)
}

fn lower_value(v: &sp::Value) -> Result<Literal, SqlError> {
    Ok(match v {
        sp::Value::Number(n, _) => Literal::Number(n.to_string()),
        sp::Value::SingleQuotedString(s)
        | sp::Value::DoubleQuotedString(s)
        | sp::Value::NationalStringLiteral(s) => Literal::String(s.clone()),
        sp::Value::Boolean(b) => Literal::Boolean(*b),
        sp::Value::Null => Literal::Null,
        sp::Value::Placeholder(_) => Literal::Placeholder,
        other => return unsupported(format!("literal {other}")),
    })
}

fn lower_subquery_operand(e: &sp::Expr) -> Result<Box<Query>, SqlError> {
    match e {
        sp::Expr::Subquery(q) => Ok(Box::new(lower_query(q)?)),
        sp::Expr::Nested(inner) => lower_subquery_operand(inner),
        _ => unsupported("ANY/ALL over a non-subquery operand"),
    }
}

fn lower_expr(e: &sp::Expr) -> Result<Expr, SqlError> {
    use sp::Expr as E;
    Ok(match e {
        E::Identifier(i) => Expr::Column {
            table: None,
            name: ident(i),
        },
        E::CompoundIdentifier(parts) => match parts.as_slice() {
            [t, c] => Expr::Column {
                table: Some(ident(t)),
                name: ident(c),
            },
            [_, t, c] => Expr::Column {
                table: Some(ident(t)),
                name: ident(c),
            },
            _ => return unsupported(format!("identifier {e}")),
        },
        E::Value(v) => Expr::Literal(lower_value(&v.value)?),
        E::Nested(inner) => lower_expr(inner)?,
        E::IsNull(x) => Expr::IsNull {
            expr: boxed(x)?,
            negated: false,
        },
        E::IsNotNull(x) => Expr::IsNull {
            expr: boxed(x)?,
            negated: true,
        },
        E::InList {
            expr,
            list,
            negated,
        } => Expr::InList {
            expr: boxed(expr)?,
            list: list.iter().map(lower_expr).collect::<Result<_, _>>()?,
            negated: *negated,
        },
        E::InSubquery {
            expr,
            subquery,
            negated,
        } => Expr::InSubquery {
            expr: boxed(expr)?,
            subquery: Box::new(lower_query(subquery)?),
            negated: *negated,
        },
        E::Between {
            expr,
            negated,
            low,
            high,
        } => Expr::Between {
            expr: boxed(expr)?,
            low: boxed(low)?,
            high: boxed(high)?,
            negated: *negated,
        },
        E::BinaryOp { left, op, right } => Expr::Binary {
            left: boxed(left)?,
            op: binary_op(op)?,
            right: boxed(right)?,
        },
        E::Like {
            negated,
            any,
            expr,
            pattern,
            escape_char,
        } => {
            if *any {
                return unsupported("LIKE ANY");
            }
            Expr::Like {
                expr: boxed(expr)?,
                pattern: boxed(pattern)?,
                negated: *negated,
                escape: match escape_char {
                    None => None,
                    Some(sp::Value::SingleQuotedString(s)) => Some(s.clone()),
                    Some(other) => return unsupported(format!("escape {other}")),
                },
            }
        }
        E::AnyOp {
            left,
            compare_op,
            right,
            ..
        } => Expr::Quantified {
            left: boxed(left)?,
            op: binary_op(compare_op)?,
            quantifier: Quantifier::Any,
            subquery: lower_subquery_operand(right)?,
        },
        E::AllOp {
            left,
            compare_op,
            right,
        } => Expr::Quantified {
            left: boxed(left)?,
            op: binary_op(compare_op)?,
            quantifier: Quantifier::All,
            subquery: lower_subquery_operand(right)?,
        },
        E::UnaryOp { op, expr } => Expr::Unary {
            op: match op {
                sp::UnaryOperator::Not => UnaryOp::Not,
                sp::UnaryOperator::Minus => UnaryOp::Minus,
                sp::UnaryOperator::Plus => UnaryOp::Plus,
                other => return unsupported(format!("unary operator {other}")),
            },
            expr: boxed(expr)?,
        },
        E::Cast {
            kind,
            expr,
            data_type,
            format,
        } => {
            if !matches!(kind, sp::CastKind::Cast) || format.is_some() {
                return unsupported("non-standard cast");
            }
            Expr::Cast {
                expr: boxed(expr)?,
                data_type: data_type.to_string(),
            }
        }
        E::Function(f) => Expr::Function(Box::new(lower_function(f)?)),
        E::Case {
            operand,
            conditions,
            else_result,
            ..
        } => Expr::Case {
            operand: operand.as_deref().map(lower_expr).transpose()?.map(Box::new),
            whens: conditions
                .iter()
                .map(|w| Ok((lower_expr(&w.condition)?, lower_expr(&w.result)?)))
                .collect::<Result<_, SqlError>>()?,
            else_result: else_result
                .as_deref()
                .map(lower_expr)
                .transpose()?
                .map(Box::new),
        },
        E::Exists { subquery, negated } => Expr::Exists {
            subquery: Box::new(lower_query(subquery)?),
            negated: *negated,
        },
        E::Subquery(q) => Expr::Subquery(Box::new(lower_query(q)?)),
        E::Tuple(items) => Expr::Tuple(items.iter().map(lower_expr).collect::<Result<_, _>>()?),
        other => return unsupported(format!("expression {other}")),
    })
}

fn lower_function(f: &sp::Function) -> Result<Function, SqlError> {
    if f.filter.is_some() || f.null_treatment.is_some() || !f.within_group.is_empty() {
        return unsupported(format!("function modifiers in {f}"));
    }
    if !matches!(f.parameters, sp::FunctionArguments::None) {
        return unsupported("parametric functions");
    }
    let (distinct, args) = match &f.args {
        sp::FunctionArguments::None => (false, Vec::new()),
        sp::FunctionArguments::Subquery(_) => return unsupported("subquery function argument"),
        sp::FunctionArguments::List(list) => {
            if !list.clauses.is_empty() {
                return unsupported("clauses inside a function argument list");
            }
            let distinct = matches!(
                list.duplicate_treatment,
                Some(sp::DuplicateTreatment::Distinct)
            );
            let args = list
                .args
                .iter()
                .map(|a| match a {
                    sp::FunctionArg::Unnamed(sp::FunctionArgExpr::Expr(e)) => {
                        Ok(FunctionArg::Expr(lower_expr(e)?))
                    }
                    sp::FunctionArg::Unnamed(sp::FunctionArgExpr::Wildcard) => {
                        Ok(FunctionArg::Star)
                    }
                    other => unsupported(format!("function argument {other}")),
                })
                .collect::<Result<_, SqlError>>()?;
            (distinct, args)
        }
    };
    let over = match &f.over {
        None => None,
        Some(sp::WindowType::NamedWindow(_)) => return unsupported("named windows"),
        Some(sp::WindowType::WindowSpec(spec)) => {
            if spec.window_name.is_some() {
                return unsupported("named windows");
            }
            Some(WindowSpec {
                partition_by: spec
                    .partition_by
                    .iter()
                    .map(lower_expr)
                    .collect::<Result<_, _>>()?,
                order_by: lower_order_items(&spec.order_by)?,
                frame: spec.window_frame.as_ref().map(lower_frame).transpose()?,
            })
        }
    };
    Ok(Function {
        name: object_name(&f.name)?,
        distinct,
        args,
        over,
    })
}

fn lower_frame(frame: &sp::WindowFrame) -> Result<WindowFrame, SqlError> {
    fn bound(b: &sp::WindowFrameBound) -> Result<FrameBound, SqlError> {
        Ok(match b {
            sp::WindowFrameBound::CurrentRow => FrameBound::CurrentRow,
            sp::WindowFrameBound::Preceding(e) => {
                FrameBound::Preceding(e.as_deref().map(lower_expr).transpose()?.map(Box::new))
            }
            sp::WindowFrameBound::Following(e) => {
                FrameBound::Following(e.as_deref().map(lower_expr).transpose()?.map(Box::new))
            }
        })
    }
    Ok(WindowFrame {
        units: match frame.units {
            sp::WindowFrameUnits::Rows => FrameUnits::Rows,
            sp::WindowFrameUnits::Range => FrameUnits::Range,
            sp::WindowFrameUnits::Groups => FrameUnits::Groups,
        },
        start: bound(&frame.start_bound)?,
        end: frame.end_bound.as_ref().map(bound).transpose()?,
    })
}
