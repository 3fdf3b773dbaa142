//! Relational schema as introspected from a live database.

use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use crate::sql::SchemaMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Affinity {
    Integer,
    Real,
    Text,
    Blob,
    Numeric,
}

impl Affinity {
    /// SQLite's column-affinity rules applied to a declared type.
    pub fn from_declared(decl: &str) -> Affinity {
        let d = decl.to_ascii_uppercase();
        if d.contains("INT") {
            Affinity::Integer
        } else if d.contains("CHAR") || d.contains("CLOB") || d.contains("TEXT") {
            Affinity::Text
        } else if d.is_empty() || d.contains("BLOB") {
            Affinity::Blob
        } else if d.contains("REAL") || d.contains("FLOA") || d.contains("DOUB") {
            Affinity::Real
        } else {
            Affinity::Numeric
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub declared_type: String,
    pub affinity: Affinity,
    pub nullable: bool,
    pub pk: bool,
    /// Covered alone by a UNIQUE constraint or is the sole primary key.
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub columns: Vec<String>,
    pub parent_table: String,
    pub parent_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Whether every column of the foreign key accepts NULL.
    pub fn fk_nullable(&self, fk: &ForeignKey) -> bool {
        fk.columns
            .iter()
            .all(|c| self.column(c).is_some_and(|c| c.nullable))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<Table>,
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Lowercased table to column-name map used for name resolution.
    pub fn column_map(&self) -> SchemaMap {
        self.tables
            .iter()
            .map(|t| {
                (
                    t.name.to_lowercase(),
                    t.columns.iter().map(|c| c.name.to_lowercase()).collect(),
                )
            })
            .collect()
    }

    /// Compact DDL-like rendering used in model prompts.
    pub fn prompt_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let mut parts: Vec<String> = t
                .columns
                .iter()
                .map(|c| {
                    let mut s = format!("{} {}", c.name, c.declared_type);
                    if c.pk {
                        s.push_str(" PRIMARY KEY");
                    } else if c.unique {
                        s.push_str(" UNIQUE");
                    }
                    if !c.nullable && !c.pk {
                        s.push_str(" NOT NULL");
                    }
                    s
                })
                .collect();
            for fk in &t.foreign_keys {
                parts.push(format!(
                    "FOREIGN KEY ({}) REFERENCES {}({})",
                    fk.columns.join(", "),
                    fk.parent_table,
                    fk.parent_columns.join(", ")
                ));
            }
            out.push_str(&format!("CREATE TABLE {} ({});\n", t.name, parts.join(", ")));
        }
        out
    }

    pub fn introspect(conn: &Connection) -> rusqlite::Result<Schema> {
        let mut stmt = conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' \
             AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )?;
        let names: Vec<String> = stmt
            .query_map([], |r| r.get(0))?
            .collect::<Result<_, _>>()?;
        let mut tables = Vec::with_capacity(names.len());
        for name in names {
            tables.push(introspect_table(conn, &name)?);
        }
        Ok(Schema { tables })
    }
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

fn introspect_table(conn: &Connection, name: &str) -> rusqlite::Result<Table> {
    let mut cols = Vec::new();
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote(name)))?;
    let mut rows = stmt.query([])?;
    let mut pk_count = 0;
    while let Some(r) = rows.next()? {
        let declared: String = r.get::<_, Option<String>>(2)?.unwrap_or_default();
        let notnull: bool = r.get(3)?;
        let pk: i64 = r.get(5)?;
        pk_count += usize::from(pk > 0);
        cols.push(Column {
            name: r.get(1)?,
            affinity: Affinity::from_declared(&declared),
            declared_type: declared,
            nullable: !notnull && pk == 0,
            pk: pk > 0,
            unique: false,
        });
    }
    if pk_count == 1 {
        for c in cols.iter_mut().filter(|c| c.pk) {
            c.unique = true;
        }
    }

    let mut idx = conn.prepare(&format!("PRAGMA index_list({})", quote(name)))?;
    let unique_indexes: Vec<String> = idx
        .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, bool>(2)?)))?
        .filter_map(|r| match r {
            Ok((n, true)) => Some(Ok(n)),
            Ok(_) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_, _>>()?;
    for index in unique_indexes {
        let mut info = conn.prepare(&format!("PRAGMA index_info({})", quote(&index)))?;
        let members: Vec<String> = info
            .query_map([], |r| r.get::<_, Option<String>>(2))?
            .filter_map(|r| r.transpose())
            .collect::<Result<_, _>>()?;
        if let [only] = members.as_slice() {
            if let Some(c) = cols.iter_mut().find(|c| &c.name == only) {
                c.unique = true;
            }
        }
    }

    let mut fk_stmt = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote(name)))?;
    let mut fks: Vec<(i64, ForeignKey)> = Vec::new();
    let mut rows = fk_stmt.query([])?;
    while let Some(r) = rows.next()? {
        let id: i64 = r.get(0)?;
        let parent: String = r.get(2)?;
        let from: String = r.get(3)?;
        let to: Option<String> = r.get(4)?;
        let to = match to {
            Some(t) => t,
            None => parent_pk(conn, &parent)?,
        };
        match fks.iter_mut().find(|(i, _)| *i == id) {
            Some((_, fk)) => {
                fk.columns.push(from);
                fk.parent_columns.push(to);
            }
            None => fks.push((
                id,
                ForeignKey {
                    columns: vec![from],
                    parent_table: parent,
                    parent_columns: vec![to],
                },
            )),
        }
    }
    fks.sort_by_key(|(id, _)| -id);
    Ok(Table {
        name: name.to_string(),
        columns: cols,
        foreign_keys: fks.into_iter().map(|(_, fk)| fk).collect(),
    })
}

fn parent_pk(conn: &Connection, table: &str) -> rusqlite::Result<String> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote(table)))?;
    let mut rows = stmt.query([])?;
    while let Some(r) = rows.next()? {
        if r.get::<_, i64>(5)? > 0 {
            return r.get(1);
        }
    }
    Ok("rowid".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn introspects_keys_and_constraints() {
        let conn = Connection::open_in_memory().unwrap();
        conn.execute_batch(
            "CREATE TABLE dept (id INTEGER PRIMARY KEY, name TEXT NOT NULL UNIQUE);
             CREATE TABLE emp (id INTEGER PRIMARY KEY, dept_id INTEGER NOT NULL REFERENCES dept(id),
                               boss INTEGER REFERENCES emp, pay REAL, note VARCHAR(10));",
        )
        .unwrap();
        let s = Schema::introspect(&conn).unwrap();
        assert_eq!(
            s.tables.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
            ["dept", "emp"]
        );
        let dept = s.table("dept").unwrap();
        assert!(dept.column("name").unwrap().unique);
        assert!(!dept.column("name").unwrap().nullable);
        let emp = s.table("EMP").unwrap();
        assert_eq!(emp.foreign_keys.len(), 2);
        let boss = emp
            .foreign_keys
            .iter()
            .find(|f| f.columns == ["boss"])
            .unwrap();
        assert_eq!(boss.parent_columns, ["id"]);
        assert!(emp.fk_nullable(boss));
        assert_eq!(emp.column("pay").unwrap().affinity, Affinity::Real);
        assert_eq!(emp.column("note").unwrap().affinity, Affinity::Text);
        assert_eq!(s.column_map()["emp"], ["id", "dept_id", "boss", "pay", "note"]);
        assert!(s.prompt_text().contains("FOREIGN KEY (dept_id) REFERENCES dept(id)"));
    }
}
