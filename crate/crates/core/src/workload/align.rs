//! Selecting the largest sub-workload that matches a target category mix.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Split, Workload};
use crate::sql::Category;

/// Category weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetDistribution {
    pub weights: BTreeMap<Category, f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("invalid target distribution: {0}")]
    InvalidTarget(String),
    #[error("no eval data points in required categories {0:?}")]
    InfeasibleAlignment(Vec<Category>),
}

impl TargetDistribution {
    pub fn new(weights: impl IntoIterator<Item = (Category, f64)>) -> Result<Self, AlignError> {
        let t = TargetDistribution {
            weights: weights.into_iter().collect(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        if let Some((c, w)) = self.weights.iter().find(|(_, w)| !(0.0..=1.0).contains(*w)) {
            return Err(AlignError::InvalidTarget(format!("weight of {c} is {w}")));
        }
        let sum: f64 = self.weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AlignError::InvalidTarget(format!("weights sum to {sum}")));
        }
        Ok(())
    }

    /// Per-category quotas for `n` points by largest-remainder rounding;
    /// ties go to the lower category.
    pub fn quotas(&self, n: usize) -> BTreeMap<Category, usize> {
        let exact: Vec<(Category, f64)> = self.weights.iter().map(|(c, w)| (*c, w * n as f64)).collect();
        let floor = |x: f64| (x + 1e-9).floor();
        let mut out: BTreeMap<Category, usize> = exact.iter().map(|(c, x)| (*c, floor(*x) as usize)).collect();
        let assigned: usize = out.values().sum();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        // remainders within 1e-9 tie
        let rem = |i: usize| ((exact[i].1 - floor(exact[i].1)).max(0.0) * 1e9).round() as u64;
        order.sort_by(|&a, &b| rem(b).cmp(&rem(a)).then(a.cmp(&b)));
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            *out.get_mut(&exact[i].0).expect("category present") += 1;
        }
        out
    }
}

/// Largest `n` whose quotas fit in `available`.
pub fn max_aligned_size(available: &BTreeMap<Category, usize>, target: &TargetDistribution) -> usize {
    let total: usize = available.values().sum();
    (0..=total)
        .rev()
        .find(|&n| {
            target
                .quotas(n)
                .iter()
                .all(|(c, q)| *q <= available.get(c).copied().unwrap_or(0))
        })
        .unwrap_or(0)
}

/// Id under which an aligned copy of `w` is published.
pub fn aligned_id(w: &Workload, target: &TargetDistribution, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(target).expect("target serializes"));
    h.update(seed.to_be_bytes());
    let d = h.finalize();
    format!("{}-v{}-aligned-{:02x}{:02x}{:02x}{:02x}", w.workload_id, w.version, d[0], d[1], d[2], d[3])
}

/// Eval points of `w` reduced to the largest subset matching `target`.
/// Train points are kept unchanged; original order is preserved.
pub fn align_workload(w: &Workload, target: &TargetDistribution, seed: u64) -> Result<Workload, AlignError> {
    target.validate()?;
    let mut by_cat: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for (i, dp) in w.data_points.iter().enumerate() {
        if dp.split == Split::Eval {
            by_cat.entry(dp.label().category).or_default().push(i);
        }
    }
    let empty: Vec<Category> = target
        .weights
        .iter()
        .filter(|(c, w)| **w > 0.0 && by_cat.get(c).is_none_or(Vec::is_empty))
        .map(|(c, _)| *c)
        .collect();
    if !empty.is_empty() {
        return Err(AlignError::InfeasibleAlignment(empty));
    }
    let available: BTreeMap<Category, usize> = by_cat.iter().map(|(c, v)| (*c, v.len())).collect();
    let n = max_aligned_size(&available, target);
    let quotas = target.quotas(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; w.data_points.len()];
    for (c, members) in &by_cat {
        let q = quotas.get(c).copied().unwrap_or(0);
        let mut m = members.clone();
        m.shuffle(&mut rng);
        for &i in m.iter().take(q) {
            keep[i] = true;
        }
    }
    let data_points = w
        .data_points
        .iter()
        .enumerate()
        .filter(|(i, dp)| dp.split == Split::Train || keep[*i])
        .map(|(_, dp)| dp.clone())
        .collect();
    Ok(Workload {
        workload_id: aligned_id(w, target, seed),
        version: 1,
        parent_version: None,
        created_at: w.created_at.clone(),
        data_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(ws: &[(u8, f64)]) -> TargetDistribution {
        TargetDistribution::new(ws.iter().map(|(c, w)| (Category::from_number(*c).unwrap(), *w))).unwrap()
    }

    #[test]
    fn quotas_by_largest_remainder() {
        let t = target(&[(1, 0.5), (2, 0.3), (3, 0.2)]);
        let q: Vec<usize> = t.quotas(20).into_values().collect();
        assert_eq!(q, [10, 6, 4]);
        let q: Vec<usize> = t.quotas(7).into_values().collect();
        assert_eq!(q.iter().sum::<usize>(), 7);
        assert_eq!(q, [4, 2, 1]);
    }

    #[test]
    fn maximum_size() {
        let t = target(&[(1, 0.5), (2, 0.3), (3, 0.2)]);
        let avail: BTreeMap<Category, usize> = [(Category::C1, 10), (Category::C2, 10), (Category::C3, 10)].into();
        assert_eq!(max_aligned_size(&avail, &t), 20);
    }

    #[test]
    fn invalid_targets() {
        assert!(TargetDistribution::new([(Category::C1, 0.5)]).is_err());
        assert!(TargetDistribution::new([(Category::C1, 1.5), (Category::C2, -0.5)]).is_err());
        let t: TargetDistribution = serde_json::from_str(r#"{"c1": 0.25, "c4": 0.75}"#).unwrap();
        assert!(t.validate().is_ok());
    }
}
