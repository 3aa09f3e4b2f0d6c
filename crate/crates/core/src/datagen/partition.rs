use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::tensor::Rng;

pub const MAX_PARTITION_ATTEMPTS: usize = 100;

/// Disjoint per-client sample index lists covering `[0, M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub num_clients: usize,
    pub alpha: f64,
    pub seed: u64,
    pub min_per_client: usize,
    /// Sorted ascending.
    pub clients: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn client(&self, n: usize) -> &[usize] {
        &self.clients[n]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    /// `counts[n][k]`: samples of class `k` held by client `n`.
    pub fn class_counts(&self, labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
        self.clients
            .iter()
            .map(|idx| {
                let mut c = vec![0; num_classes];
                for &i in idx {
                    c[labels[i]] += 1;
                }
                c
            })
            .collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), DataError> {
        let body = serde_json::to_string_pretty(self).expect("plan serializes");
        fs::write(path, body + "\n").map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// For each class, shuffles its samples, draws `p ~ Dir(α·1_N)` and hands
/// client `n` a contiguous run of `round(p_n · m_k)` of them, rounded by
/// largest remainder so the counts sum to `m_k`. Whole plans are redrawn
/// until every client holds at least `min_per_client` samples.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    alpha: f64,
    seed: u64,
    min_per_client: usize,
) -> Result<PartitionPlan, DataError> {
    if num_clients == 0 {
        return Err(DataError::InvalidPartition(
            "at least one client is required".into(),
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DataError::InvalidPartition(format!(
            "alpha {alpha} must be positive"
        )));
    }
    let floor = min_per_client.max(1);
    if labels.len() < num_clients * floor {
        return Err(DataError::InvalidPartition(format!(
            "{} samples cannot give {num_clients} clients {floor} each",
            labels.len()
        )));
    }

    let num_classes = labels.iter().max().map_or(0, |&l| l + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut rng = Rng::new(seed);
    for _ in 0..MAX_PARTITION_ATTEMPTS {
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            rng.shuffle(&mut members);
            let counts = if num_clients == 1 {
                vec![members.len()]
            } else {
                largest_remainder(&rng.dirichlet(alpha, num_clients), members.len())
            };
            let mut start = 0;
            for (client, count) in clients.iter_mut().zip(counts) {
                client.extend_from_slice(&members[start..start + count]);
                start += count;
            }
        }
        if clients.iter().all(|c| c.len() >= floor) {
            clients.iter_mut().for_each(|c| c.sort_unstable());
            return Ok(PartitionPlan {
                num_clients,
                alpha,
                seed,
                min_per_client,
                clients,
            });
        }
    }
    Err(DataError::InfeasiblePartition {
        min_per_client: floor,
        attempts: MAX_PARTITION_ATTEMPTS,
    })
}

/// Integer counts summing to `total`, proportional to `p`. Leftover units go
/// to the largest fractional parts, lower index first on ties.
fn largest_remainder(p: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|&q| q * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    // Floors can overshoot only if the proportions sum above one by rounding.
    let deficit = total - assigned.min(total);
    for &i in order.iter().cycle().take(deficit) {
        counts[i] += 1;
    }
    let mut excess = counts.iter().sum::<usize>().saturating_sub(total);
    for c in counts.iter_mut().rev() {
        let take = excess.min(*c);
        *c -= take;
        excess -= take;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn balanced_labels(classes: usize, per_class: usize) -> Vec<usize> {
        (0..classes * per_class).map(|i| i / per_class).collect()
    }

    fn assert_exact_partition(plan: &PartitionPlan, m: usize) {
        let mut seen = vec![false; m];
        for c in &plan.clients {
            assert!(!c.is_empty());
            assert!(c.windows(2).all(|w| w[0] < w[1]));
            for &i in c {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_client_gets_everything() {
        let labels = balanced_labels(3, 5);
        let plan = dirichlet_partition(&labels, 1, 0.3, 9, 2).unwrap();
        assert_eq!(plan.clients, vec![(0..15).collect::<Vec<_>>()]);
    }

    #[test]
    fn same_seed_same_plan() {
        let labels = balanced_labels(4, 50);
        let a = dirichlet_partition(&labels, 5, 0.5, 17, 2).unwrap();
        let b = dirichlet_partition(&labels, 5, 0.5, 17, 2).unwrap();
        assert_eq!(a, b);
        let c = dirichlet_partition(&labels, 5, 0.5, 18, 2).unwrap();
        assert_ne!(a.clients, c.clients);
    }

    #[test]
    fn huge_alpha_is_near_uniform() {
        let labels = balanced_labels(10, 1000);
        let plan = dirichlet_partition(&labels, 10, 1e9, 4, 2).unwrap();
        assert_exact_partition(&plan, labels.len());
        for row in plan.class_counts(&labels, 10) {
            for c in row {
                assert!((80..=120).contains(&c), "count {c}");
            }
        }
    }

    #[test]
    fn infeasible_minimum_errors() {
        let labels = balanced_labels(2, 3);
        assert!(matches!(
            dirichlet_partition(&labels, 4, 1.0, 0, 2),
            Err(DataError::InvalidPartition(_))
        ));
        // Enough samples overall, but α this small almost never gives all
        // four clients two samples from a single class.
        let labels = vec![0; 8];
        assert!(matches!(
            dirichlet_partition(&labels, 4, 1e-3, 0, 2),
            Err(DataError::InfeasiblePartition { .. })
        ));
    }

    #[test]
    fn rejects_bad_arguments() {
        let labels = balanced_labels(2, 10);
        assert!(dirichlet_partition(&labels, 0, 1.0, 0, 2).is_err());
        assert!(dirichlet_partition(&labels, 2, 0.0, 0, 2).is_err());
        assert!(dirichlet_partition(&labels, 2, f64::NAN, 0, 2).is_err());
    }

    #[test]
    fn json_lists_sorted_indices() {
        let labels = balanced_labels(2, 6);
        let plan = dirichlet_partition(&labels, 2, 1e9, 1, 2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["clients"].as_array().unwrap().len(), 2);
        let back: PartitionPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(largest_remainder(&[1.0, 0.0], 7), vec![7, 0]);
    }

    proptest! {
        #[test]
        fn plans_are_exact_partitions(n in 1usize..=32, log_alpha in -1.0f64..9.0, seed in 0u64..u64::MAX) {
            let labels = balanced_labels(10, 100);
            let alpha = 10f64.powf(log_alpha);
            match dirichlet_partition(&labels, n, alpha, seed, 2) {
                Ok(plan) => {
                    prop_assert_eq!(plan.clients.len(), n);
                    let mut all: Vec<usize> = plan.clients.concat();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                    prop_assert!(plan.clients.iter().all(|c| c.len() >= 2));
                }
                Err(DataError::InfeasiblePartition { .. }) => prop_assert!(alpha < 1.0),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
