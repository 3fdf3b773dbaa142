//! Deterministic adapters that need no network.

use serde::{Deserialize, Serialize};

use crate::sql::ast::{Expr, FromItem, Select, SelectItem, SetExpr, TableFactor};
use crate::sql::visit::table_factors;
use crate::sql::{parse_sql, SchemaMap, SqlDialect, Subcategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[serde(alias = "column_swap", alias = "col_swap")]
    SwapFirstTwoSelectColumns,
    #[serde(alias = "drop_order")]
    DropOrderBy,
}

/// Applies `m` to the ground truth; unparsable or inapplicable input is
/// returned unchanged.
pub fn mutate(gt_sql: &str, m: Mutation, schema: Option<&SchemaMap>) -> String {
    let Ok(mut ast) = parse_sql(gt_sql, SqlDialect::Sqlite) else {
        return gt_sql.to_string();
    };
    let changed = match m {
        Mutation::DropOrderBy => {
            let had = !ast.root.order_by.is_empty();
            ast.root.order_by.clear();
            had
        }
        Mutation::SwapFirstTwoSelectColumns => swap_body(&mut ast.root.body, schema),
    };
    if changed {
        ast.render()
    } else {
        gt_sql.to_string()
    }
}

fn swap_body(body: &mut SetExpr, schema: Option<&SchemaMap>) -> bool {
    match body {
        SetExpr::Select(s) => swap_select(s, schema),
        SetExpr::SetOp { left, right, .. } => {
            let l = swap_body(left, schema);
            let r = swap_body(right, schema);
            l || r
        }
        SetExpr::Query(q) => swap_body(&mut q.body, schema),
    }
}

fn swap_select(s: &mut Select, schema: Option<&SchemaMap>) -> bool {
    let needs_expansion = s.items.iter().take(2).any(|i| !matches!(i, SelectItem::Expr { .. }));
    if needs_expansion {
        let Some(items) = schema.and_then(|m| expand_items(s, m)) else {
            return false;
        };
        s.items = items;
    }
    if s.items.len() < 2 {
        return false;
    }
    s.items.swap(0, 1);
    true
}

/// Replaces `*` and `t.*` with explicit columns from the schema.
fn expand_items(s: &Select, schema: &SchemaMap) -> Option<Vec<SelectItem>> {
    let mut bound: Vec<(String, Vec<String>)> = Vec::new();
    let mut ok = true;
    for item in &s.from {
        collect_tables(item, schema, &mut bound, &mut ok);
    }
    if !ok {
        return None;
    }
    let cols = |binding: &(String, Vec<String>)| -> Vec<SelectItem> {
        binding
            .1
            .iter()
            .map(|c| SelectItem::Expr {
                expr: Expr::column(Some(&binding.0), c),
                alias: None,
            })
            .collect()
    };
    let mut out = Vec::new();
    for item in &s.items {
        match item {
            SelectItem::Wildcard => bound.iter().for_each(|b| out.extend(cols(b))),
            SelectItem::QualifiedWildcard(t) => {
                let b = bound.iter().find(|b| b.0.eq_ignore_ascii_case(t))?;
                out.extend(cols(b));
            }
            other => out.push(other.clone()),
        }
    }
    Some(out)
}

fn collect_tables(item: &FromItem, schema: &SchemaMap, out: &mut Vec<(String, Vec<String>)>, ok: &mut bool) {
    table_factors(item, &mut |tf| match tf {
        TableFactor::Table { name, alias } => match schema.get(&name.to_lowercase()) {
            Some(cols) => out.push((alias.clone().unwrap_or_else(|| name.clone()), cols.clone())),
            None => *ok = false,
        },
        TableFactor::Derived { .. } => *ok = false,
        TableFactor::Nested { .. } => {}
    });
}

/// Question and SQL for `target`, varied by `attempt`. Templates target the
/// bundled `company` database.
pub fn template_pair(target: Subcategory, attempt: u32) -> (String, String) {
    let a = attempt;
    let y = 2005 + a;
    let s = 50_000 + 1_000 * a;
    let b = 100_000 + 10_000 * a;
    let h = 5 + a;
    let k = 2 + a;
    const TABLES: [&str; 4] = ["dept", "emp", "project", "assignment"];
    const PROJECTIONS: [&str; 8] = [
        "name, title",
        "name, salary",
        "title, hire_year",
        "name, email",
        "name, hire_year",
        "email",
        "title, salary",
        "name, title, salary",
    ];
    let (q, sql) = match (target.category.number(), target.index) {
        (1, 1) => {
            let t = TABLES[a as usize % TABLES.len()];
            (format!("Show every row of the {t} table."), format!("SELECT * FROM {t}"))
        }
        (1, 2) => {
            let p = PROJECTIONS[a as usize % PROJECTIONS.len()];
            (format!("List {p} for all employees."), format!("SELECT {p} FROM emp"))
        }
        (1, 3) => (format!("Which employees were hired after {y}?"), format!("SELECT name FROM emp WHERE hire_year > {y}")),
        (1, 4) => (
            format!("Which employees hired after {y} earn less than {s}?"),
            format!("SELECT name FROM emp WHERE hire_year > {y} AND salary < {s}"),
        ),
        (1, 5) => (
            format!("Which employees earn between {s} and {}?", s + 20_000),
            format!("SELECT name FROM emp WHERE salary BETWEEN {s} AND {}", s + 20_000),
        ),
        (1, 6) => (
            format!("Who are the {k} best paid employees?"),
            format!("SELECT name, salary FROM emp ORDER BY salary DESC LIMIT {k}"),
        ),
        (2, 1) => (format!("How many employees were hired after {y}?"), format!("SELECT COUNT(*) FROM emp WHERE hire_year > {y}")),
        (2, 2) => (
            format!("Which distinct titles do employees hired after {y} hold?"),
            format!("SELECT DISTINCT title FROM emp WHERE hire_year > {y}"),
        ),
        (2, 3) => (
            format!("How many employees hired after {y} hold each title?"),
            format!("SELECT title, COUNT(*) FROM emp WHERE hire_year > {y} GROUP BY title"),
        ),
        (2, 4) => (
            format!("Count employees hired after {y} per department and title."),
            format!("SELECT dept_id, title, COUNT(*) FROM emp WHERE hire_year > {y} GROUP BY dept_id, title"),
        ),
        (2, 5) => (
            format!("Which titles have an average salary above {s}?"),
            format!("SELECT title, AVG(salary) FROM emp GROUP BY title HAVING AVG(salary) > {s}"),
        ),
        (2, 6) => (
            format!("What is the salary spread among employees hired after {y}?"),
            format!("SELECT MAX(salary) - MIN(salary) FROM emp WHERE hire_year > {y}"),
        ),
        (3, 1) => (
            format!("Name each employee hired after {y} with their department."),
            format!("SELECT e.name, d.name FROM emp AS e JOIN dept AS d ON e.dept_id = d.id WHERE e.hire_year > {y}"),
        ),
        (3, 2) => (
            format!("Which employees work more than {h} hours on which projects?"),
            format!(
                "SELECT e.name, p.name FROM emp AS e JOIN assignment AS a ON a.emp_id = e.id \
                 JOIN project AS p ON a.project_id = p.id WHERE a.hours > {h}"
            ),
        ),
        (3, 3) => (
            format!("List departments with budget above {b} and their projects, including departments without any."),
            format!("SELECT d.name, p.name FROM dept AS d LEFT JOIN project AS p ON p.dept_id = d.id WHERE d.budget > {b}"),
        ),
        (3, 4) => (
            format!("Name each employee hired after {y} together with their manager."),
            format!("SELECT e.name, m.name FROM emp AS e JOIN emp AS m ON e.manager_id = m.id WHERE e.hire_year > {y}"),
        ),
        (3, 5) => (
            format!("How many employees earning over {s} does each department have?"),
            format!(
                "SELECT d.name, COUNT(*) FROM emp AS e JOIN dept AS d ON e.dept_id = d.id \
                 WHERE e.salary > {s} GROUP BY d.name"
            ),
        ),
        (3, 6) => (
            format!("Pair every department with every project whose budget exceeds {b}."),
            format!("SELECT d.name, p.name FROM dept AS d CROSS JOIN project AS p WHERE p.budget > {b}"),
        ),
        (4, 1) => (
            format!("Who earns more than the average salary of employees hired after {y}?"),
            format!("SELECT name FROM emp WHERE salary > (SELECT AVG(salary) FROM emp WHERE hire_year > {y})"),
        ),
        (4, 2) => (
            format!("Which employees work in departments with a budget above {b}?"),
            format!("SELECT name FROM emp WHERE dept_id IN (SELECT id FROM dept WHERE budget > {b})"),
        ),
        (4, 3) => (
            format!("Which departments run a project with a budget above {b}?"),
            format!(
                "SELECT d.name FROM dept AS d WHERE EXISTS \
                 (SELECT 1 FROM project AS p WHERE p.dept_id = d.id AND p.budget > {b})"
            ),
        ),
        (4, 4) => (
            format!("Who earns more than everyone hired before {y}?"),
            format!("SELECT name FROM emp WHERE salary > ALL (SELECT salary FROM emp WHERE hire_year < {y})"),
        ),
        (4, 5) => (
            format!("For each title, how many employees were hired after {y}?"),
            format!(
                "SELECT t.title, t.n FROM (SELECT title, COUNT(*) AS n FROM emp \
                 WHERE hire_year > {y} GROUP BY title) AS t"
            ),
        ),
        (4, 6) => (
            format!("For each employee, how many assignments exceed {h} hours?"),
            format!(
                "SELECT e.name, (SELECT COUNT(*) FROM assignment AS a \
                 WHERE a.emp_id = e.id AND a.hours > {h}) FROM emp AS e"
            ),
        ),
        (5, 1) => (
            format!("List names of employees hired after {y} and of all projects."),
            format!("SELECT name FROM emp WHERE hire_year > {y} UNION SELECT name FROM project"),
        ),
        (5, 2) => (
            format!("Which departments have both an employee earning over {s} and a project?"),
            format!("SELECT dept_id FROM emp WHERE salary > {s} INTERSECT SELECT dept_id FROM project"),
        ),
        (5, 3) => (
            format!("Which departments have an employee earning over {s} but no project?"),
            format!("SELECT dept_id FROM emp WHERE salary > {s} EXCEPT SELECT dept_id FROM project"),
        ),
        (5, 4) => (
            format!("Label each employee as high or low paid using a {s} threshold."),
            format!("SELECT name, CASE WHEN salary > {s} THEN 'high' ELSE 'low' END FROM emp"),
        ),
        (5, 5) => (
            format!("Using a named subquery of employees hired after {y}, list their names."),
            format!("WITH recent AS (SELECT * FROM emp WHERE hire_year > {y}) SELECT name FROM recent"),
        ),
        (5, 6) => (
            format!("Which employees hired after {y} work in departments with a budget above {b}?"),
            format!(
                "WITH recent AS (SELECT * FROM emp WHERE hire_year > {y}), \
                 rich AS (SELECT id FROM dept WHERE budget > {b}) \
                 SELECT recent.name FROM recent JOIN rich ON recent.dept_id = rich.id"
            ),
        ),
        (6, 1) => (
            format!("Rank employees hired after {y} by salary."),
            format!("SELECT name, RANK() OVER (ORDER BY salary DESC) FROM emp WHERE hire_year > {y}"),
        ),
        (6, 2) => (
            format!("Show a running salary total for employees hired after {y}."),
            format!("SELECT name, SUM(salary) OVER (ORDER BY hire_year) FROM emp WHERE hire_year > {y}"),
        ),
        (6, 3) => (
            format!("Rank employees hired after {y} by salary within their department."),
            format!(
                "SELECT name, RANK() OVER (PARTITION BY dept_id ORDER BY salary DESC) FROM emp WHERE hire_year > {y}"
            ),
        ),
        (6, 4) => (
            format!("Show a moving average of salary over the previous {} hires.", a + 1),
            format!(
                "SELECT name, AVG(salary) OVER (ORDER BY hire_year ROWS BETWEEN {} PRECEDING AND CURRENT ROW) FROM emp",
                a + 1
            ),
        ),
        (6, 5) => (
            format!("List the integers from 1 to {}.", k + 3),
            format!(
                "WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < {}) SELECT i FROM n",
                k + 3
            ),
        ),
        _ => (
            format!("Who are the three best paid employees hired after {y}?"),
            format!(
                "SELECT * FROM (SELECT name, RANK() OVER (ORDER BY salary DESC) AS r FROM emp \
                 WHERE hire_year > {y}) AS t WHERE t.r <= 3"
            ),
        ),
    };
    (q, sql)
}
