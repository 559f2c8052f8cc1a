//! Seeded random clusters for property checks and benchmarks.

use crate::model::ClusterSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceLimits {
    pub max_servers: usize,
    pub max_users: usize,
    pub max_resources: usize,
    /// Capacities and demands are log-uniform in `[low, high]`.
    pub low: f64,
    pub high: f64,
    /// Weights are log-uniform in `[1 / weight_spread, weight_spread]`.
    pub weight_spread: f64,
    /// Chance that a demand component is zero (one stays positive).
    pub zero_demand_prob: f64,
    /// Chance that a (user, server) pair is declared ineligible (one
    /// server stays eligible).
    pub ineligible_prob: f64,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        Self {
            max_servers: 4,
            max_users: 5,
            max_resources: 3,
            low: 0.1,
            high: 10.0,
            weight_spread: 2.0,
            zero_demand_prob: 0.15,
            ineligible_prob: 0.3,
        }
    }
}

impl InstanceLimits {
    pub fn servers(mut self, n: usize) -> Self {
        self.max_servers = n;
        self
    }

    pub fn resources(mut self, n: usize) -> Self {
        self.max_resources = n;
        self
    }

    pub fn all_positive_demands(mut self) -> Self {
        self.zero_demand_prob = 0.0;
        self
    }
}

fn log_uniform<R: Rng>(rng: &mut R, low: f64, high: f64) -> f64 {
    (rng.gen_range(low.ln()..=high.ln())).exp()
}

/// Draws one cluster. Sizes are uniform in `1..=max`; `max_servers` and
/// friends equal to 1 pin the dimension.
pub fn random_instance<R: Rng>(rng: &mut R, limits: &InstanceLimits) -> ClusterSpec {
    let k = rng.gen_range(1..=limits.max_servers);
    let n = rng.gen_range(1..=limits.max_users);
    let m = rng.gen_range(1..=limits.max_resources);
    let capacities = (0..k)
        .map(|_| {
            (0..m)
                .map(|_| log_uniform(rng, limits.low, limits.high))
                .collect()
        })
        .collect();
    let users = (0..n)
        .map(|_| {
            let mut demand: Vec<f64> = (0..m)
                .map(|_| {
                    if rng.gen_bool(limits.zero_demand_prob) {
                        0.0
                    } else {
                        log_uniform(rng, limits.low, limits.high)
                    }
                })
                .collect();
            if demand.iter().all(|&d| d == 0.0) {
                let r = rng.gen_range(0..m);
                demand[r] = log_uniform(rng, limits.low, limits.high);
            }
            let weight = log_uniform(rng, 1.0 / limits.weight_spread, limits.weight_spread);
            let mut eligible: Vec<bool> = (0..k)
                .map(|_| !rng.gen_bool(limits.ineligible_prob))
                .collect();
            if !eligible.iter().any(|&e| e) {
                let i = rng.gen_range(0..k);
                eligible[i] = true;
            }
            (demand, weight, eligible)
        })
        .collect();
    ClusterSpec::from_parts(capacities, users)
}

/// `count` instances from a ChaCha stream seeded with `seed`.
pub fn random_instances(seed: u64, count: usize, limits: &InstanceLimits) -> Vec<ClusterSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_instance(&mut rng, limits))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;

    #[test]
    fn instances_are_valid_and_reproducible() {
        let limits = InstanceLimits::default();
        let a = random_instances(7, 50, &limits);
        assert_eq!(a, random_instances(7, 50, &limits));
        for spec in &a {
            assert!(validate_scenario(spec).passed());
            assert!(spec.num_servers() <= 4 && spec.num_users() <= 5 && spec.num_resources() <= 3);
            for s in &spec.servers {
                assert!(s.capacities.iter().all(|&c| (0.1..=10.0).contains(&c)));
            }
        }
    }

    #[test]
    fn pinned_dimensions() {
        let limits = InstanceLimits::default()
            .servers(1)
            .resources(1)
            .all_positive_demands();
        for spec in random_instances(3, 20, &limits) {
            assert_eq!(spec.num_servers(), 1);
            assert_eq!(spec.num_resources(), 1);
            assert!(spec.users.iter().all(|u| u.demand[0] > 0.0));
        }
    }
}
