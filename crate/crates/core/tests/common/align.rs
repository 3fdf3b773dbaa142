use sqleval_core::sql::{classify, parse_sql, Category, SqlDialect};
use sqleval_core::workload::{DataPoint, Provenance, Split, TargetDistribution, Workload};

pub const TEMPLATES: [&str; 6] = [
    "SELECT name FROM emp WHERE id = {i}",
    "SELECT COUNT(*) FROM emp WHERE id > {i}",
    "SELECT e.name FROM emp e JOIN dept d ON e.dept_id = d.id WHERE e.id = {i}",
    "SELECT name FROM emp WHERE dept_id IN (SELECT id FROM dept WHERE id > {i})",
    "SELECT name FROM emp WHERE id = {i} UNION SELECT name FROM dept",
    "SELECT name, RANK() OVER (ORDER BY salary) FROM emp WHERE id > {i}",
];

pub fn workload(counts: &[usize; 6]) -> Workload {
    let mut data_points = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let sql = TEMPLATES[c].replace("{i}", &i.to_string());
            let label = classify(&parse_sql(&sql, SqlDialect::Sqlite).unwrap());
            assert_eq!(label.category.number() as usize, c + 1, "{sql}");
            data_points.push(DataPoint {
                id: format!("c{}-{i}", c + 1),
                question: format!("q {c} {i}"),
                gt_sql: sql,
                db_id: "company".into(),
                split: Split::Eval,
                provenance: Provenance::SeedBenchmark("synthetic".into()),
                label: Some(label),
            });
        }
    }
    Workload {
        workload_id: "w".into(),
        version: 1,
        parent_version: None,
        created_at: "2020-01-01T00:00:00Z".into(),
        data_points,
    }
}

/// Largest-remainder quotas in exact integer arithmetic; weights are in
/// thousandths.
pub fn oracle_quotas(weights: &[u64; 6], n: u64) -> [u64; 6] {
    let mut q = [0u64; 6];
    let mut rem = Vec::new();
    for c in 0..6 {
        q[c] = weights[c] * n / 1000;
        rem.push((weights[c] * n % 1000, c));
    }
    let left = n - q.iter().sum::<u64>();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in rem.iter().take(left as usize) {
        q[c] += 1;
    }
    q
}

/// Maximum N over every per-category count vector that is exactly the
/// quota vector of its own total.
pub fn brute_force_max(weights: &[u64; 6], avail: &[usize; 6]) -> u64 {
    let mut best = 0;
    let mut v = [0usize; 6];
    loop {
        let n: usize = v.iter().sum();
        if n as u64 > best && oracle_quotas(weights, n as u64).iter().zip(&v).all(|(q, x)| *q == *x as u64) {
            best = n as u64;
        }
        let mut i = 0;
        loop {
            if i == 6 {
                return best;
            }
            if v[i] < avail[i] {
                v[i] += 1;
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

pub fn target(weights: &[u64; 6]) -> TargetDistribution {
    TargetDistribution::new(
        Category::ALL
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0)
            .map(|(c, w)| (c, *w as f64 / 1000.0)),
    )
    .unwrap()
}

pub fn category_counts(w: &Workload) -> [usize; 6] {
    let mut out = [0; 6];
    for dp in w.eval_points() {
        out[dp.label().category.number() as usize - 1] += 1;
    }
    out
}
