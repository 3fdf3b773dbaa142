//! Six-category, 36-subcategory structural taxonomy.
//!
//! Categories are ordered by increasing complexity. A query belongs to the
//! highest category whose trigger fires and, within it, to the highest
//! triggered subcategory.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureSet};
use super::parse::QueryAst;

pub const TAXONOMY_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::C1,
        Category::C2,
        Category::C3,
        Category::C4,
        Category::C5,
        Category::C6,
    ];

    /// 1-based position in the complexity order.
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Category> {
        Category::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::C1 => "basic single-table",
            Category::C2 => "aggregation",
            Category::C3 => "joins",
            Category::C4 => "nesting",
            Category::C5 => "set operations and advanced",
            Category::C6 => "windows and recursion",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.number())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('c')
            .and_then(|n| n.parse().ok())
            .and_then(Category::from_number)
            .ok_or_else(|| format!("invalid category `{s}`"))
    }
}

/// A subcategory such as `4.2`; ordered by category, then index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Subcategory {
    pub category: Category,
    pub index: u8,
}

impl Subcategory {
    pub fn new(category: Category, index: u8) -> Option<Subcategory> {
        (1..=6)
            .contains(&index)
            .then_some(Subcategory { category, index })
    }

    /// All 36 subcategories in order.
    pub fn all() -> impl Iterator<Item = Subcategory> {
        Category::ALL
            .into_iter()
            .flat_map(|c| (1..=6).map(move |i| Subcategory { category: c, index: i }))
    }

    pub fn description(self) -> &'static str {
        DESCRIPTIONS[usize::from(self.category.number() - 1) * 6 + usize::from(self.index - 1)]
    }
}

impl fmt::Display for Subcategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.category.number(), self.index)
    }
}

impl FromStr for Subcategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || format!("invalid subcategory `{s}`");
        let (c, i) = s.split_once('.').ok_or_else(err)?;
        let c = Category::from_number(c.parse().map_err(|_| err())?).ok_or_else(err)?;
        Subcategory::new(c, i.parse().map_err(|_| err())?).ok_or_else(err)
    }
}

impl TryFrom<String> for Subcategory {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Subcategory> for String {
    fn from(s: Subcategory) -> String {
        s.to_string()
    }
}

/// Category plus subcategory; serialized as the subcategory code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaxonomyLabel {
    pub category: Category,
    pub subcategory: Subcategory,
}

impl From<Subcategory> for TaxonomyLabel {
    fn from(s: Subcategory) -> Self {
        TaxonomyLabel {
            category: s.category,
            subcategory: s,
        }
    }
}

impl fmt::Display for TaxonomyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.category, self.subcategory)
    }
}

impl TryFrom<String> for TaxonomyLabel {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse::<Subcategory>().map(Into::into)
    }
}

impl From<TaxonomyLabel> for String {
    fn from(l: TaxonomyLabel) -> String {
        l.subcategory.to_string()
    }
}

const DESCRIPTIONS: [&str; 36] = [
    "SELECT * only",
    "column projection",
    "comparison predicate",
    "logical connectives (AND/OR/NOT)",
    "LIKE, BETWEEN, IN list or IS NULL",
    "ORDER BY or LIMIT",
    "aggregate without GROUP BY",
    "DISTINCT",
    "GROUP BY one key",
    "GROUP BY multiple keys",
    "HAVING",
    "arithmetic or scalar-function expressions in SELECT with aggregation",
    "two-table inner join",
    "inner join of three or more tables",
    "outer join",
    "self-join",
    "join with aggregation",
    "non-equi or cross join",
    "scalar subquery in a predicate",
    "IN / NOT IN subquery",
    "EXISTS / NOT EXISTS",
    "ANY / ALL comparison",
    "derived table in FROM",
    "subquery in the SELECT list or nesting depth of two or more",
    "UNION / UNION ALL",
    "INTERSECT",
    "EXCEPT",
    "CASE expression",
    "single CTE",
    "multiple CTEs or a CTE combined with a set operator",
    "ranking window function",
    "aggregate window function",
    "PARTITION BY",
    "explicit window frame (ROWS/RANGE)",
    "recursive CTE",
    "window function combined with nesting or set operations",
];

/// Trigger flags for the six subcategories of `c`.
fn triggers(c: Category, f: &FeatureSet) -> [bool; 6] {
    let joined = f.join_table_count >= 2;
    match c {
        Category::C1 => [
            f.star_select,
            f.column_projection,
            f.comparison,
            f.logical_connective,
            f.like || f.between || f.in_list || f.is_null,
            f.order_by || f.limit,
        ],
        Category::C2 => [
            f.aggregate && !f.group_by,
            f.distinct,
            f.group_by && f.group_by_keys == 1,
            f.group_by_keys >= 2,
            f.having,
            f.arithmetic_expr && f.aggregate,
        ],
        Category::C3 => [
            joined && f.inner_join && f.join_table_count == 2,
            joined && f.inner_join && f.join_table_count >= 3,
            joined && f.outer_join,
            joined && f.self_join,
            joined && (f.aggregate || f.group_by),
            joined && (f.non_equi_join || f.cross_join),
        ],
        Category::C4 => [
            f.scalar_subquery,
            f.in_subquery,
            f.exists,
            f.any_all,
            f.derived_table,
            f.select_subquery || f.nesting_depth >= 2,
        ],
        Category::C5 => [
            f.union,
            f.intersect,
            f.except,
            f.case_expr,
            f.cte,
            f.multi_cte || (f.cte && f.has_set_op()),
        ],
        Category::C6 => [
            f.window_rank,
            f.window_agg,
            f.partition_by,
            f.window_frame,
            f.recursive_cte,
            f.has_window() && (f.nesting_depth >= 1 || f.has_set_op()),
        ],
    }
}

/// Category triggers: c1 always applies; c3 needs two joined tables.
fn category_triggered(c: Category, f: &FeatureSet) -> bool {
    match c {
        Category::C1 => true,
        Category::C2 => f.aggregate || f.distinct || f.group_by || f.having,
        Category::C3 => f.join_table_count >= 2,
        _ => triggers(c, f).iter().any(|t| *t),
    }
}

pub fn classify_features(f: &FeatureSet) -> TaxonomyLabel {
    let category = Category::ALL
        .into_iter()
        .rev()
        .find(|c| category_triggered(*c, f))
        .unwrap_or(Category::C1);
    let index = triggers(category, f)
        .iter()
        .rposition(|t| *t)
        .map(|i| i as u8 + 1)
        .unwrap_or(1);
    Subcategory { category, index }.into()
}

pub fn classify(q: &QueryAst) -> TaxonomyLabel {
    classify_features(&extract_features(q))
}

/// Human-readable trigger table, shipped as `data/taxonomy.txt`.
pub fn reference_text() -> String {
    let mut out = format!(
        "SQL structural taxonomy, version {TAXONOMY_VERSION}\n\
         \n\
         A query is assigned the highest category whose trigger fires and,\n\
         within that category, the highest-numbered subcategory it triggers.\n\
         A query with no recognised construct is 1.1.\n"
    );
    for c in Category::ALL {
        out.push_str(&format!("\n{c} {}\n", c.title()));
        for s in Subcategory::all().filter(|s| s.category == c) {
            out.push_str(&format!("  {s}  {}\n", s.description()));
        }
    }
    out
}
