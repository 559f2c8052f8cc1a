//! Small named clusters used by tests, examples and the acceptance suite.

use crate::model::{Allocation, ClusterSpec};

/// Two servers, three users; u1 and u2 need bandwidth that only the first
/// server offers, and u3 has twice the weight.
pub fn ex1() -> ClusterSpec {
    ClusterSpec::from_parts(
        vec![vec![9.0, 12.0, 100.0], vec![12.0, 12.0, 0.0]],
        vec![
            (vec![1.0, 2.0, 10.0], 1.0, vec![true, true]),
            (vec![1.0, 2.0, 1.0], 1.0, vec![true, true]),
            (vec![1.0, 2.0, 0.0], 2.0, vec![true, true]),
        ],
    )
    .with_resource_names(["cpu", "ram", "bw"])
}

/// Same servers as [`ex1`], four equally weighted users.
pub fn ex2() -> ClusterSpec {
    ClusterSpec::from_parts(
        vec![vec![9.0, 12.0, 100.0], vec![12.0, 12.0, 0.0]],
        vec![
            (vec![1.5, 1.0, 10.0], 1.0, vec![true, true]),
            (vec![1.0, 2.0, 10.0], 1.0, vec![true, true]),
            (vec![0.5, 1.0, 0.0], 1.0, vec![true, true]),
            (vec![1.0, 0.5, 0.0], 1.0, vec![true, true]),
        ],
    )
    .with_resource_names(["cpu", "ram", "bw"])
}

/// Monopoly task counts of the four-class cluster, one row per user and one
/// column per server class.
pub const EX3_GAMMA: [[f64; 4]; 4] = [
    [80.0, 340.0, 82.5, 55.0],
    [40.0, 170.0, 41.25, 41.25],
    [0.0, 0.0, 82.5, 27.5],
    [0.0, 0.0, 27.5, 27.5],
];

/// Four aggregated server classes driven entirely by [`EX3_GAMMA`]. The
/// first two users are weighted twice; the last two can only use classes C
/// and D. Capacities are the per-class CPU/memory configuration; demands
/// are unit placeholders, since only time-sharing semantics apply here.
pub fn ex3() -> ClusterSpec {
    let cd_only = vec![false, false, true, true];
    ClusterSpec::from_parts(
        vec![
            vec![1.0, 1.0],
            vec![0.5, 0.5],
            vec![0.5, 0.25],
            vec![0.5, 0.75],
        ],
        vec![
            (vec![1.0, 1.0], 2.0, vec![true; 4]),
            (vec![1.0, 1.0], 2.0, vec![true; 4]),
            (vec![1.0, 1.0], 1.0, cd_only.clone()),
            (vec![1.0, 1.0], 1.0, cd_only),
        ],
    )
    .with_resource_names(["cpu", "mem"])
    .with_gamma_override(EX3_GAMMA.iter().map(|r| r.to_vec()).collect())
}

/// Servers per class in [`ex3_physical`], 120 in total.
pub const EX3_CLASS_COUNTS: [usize; 4] = [8, 68, 33, 11];
/// Per-server CPU/memory configuration of the four classes.
pub const EX3_CLASS_CONFIG: [[f64; 2]; 4] = [[1.0, 1.0], [0.5, 0.5], [0.5, 0.25], [0.5, 0.75]];

/// A physical counterpart of [`ex3`]: each class is one aggregated server
/// holding `count * config`, and the demand vectors are chosen so the
/// derived monopoly task counts equal [`EX3_GAMMA`].
pub fn ex3_physical() -> ClusterSpec {
    let cd_only = vec![false, false, true, true];
    let capacities = EX3_CLASS_COUNTS
        .iter()
        .zip(EX3_CLASS_CONFIG)
        .map(|(&k, c)| c.iter().map(|v| v * k as f64).collect())
        .collect();
    ClusterSpec::from_parts(
        capacities,
        vec![
            (vec![0.1, 0.1], 2.0, vec![true; 4]),
            (vec![2.0 / 15.0, 0.2], 2.0, vec![true; 4]),
            (vec![0.2, 0.1], 1.0, cd_only.clone()),
            (vec![0.2, 0.3], 1.0, cd_only),
        ],
    )
    .with_resource_names(["cpu", "mem"])
}

/// The fair allocation of [`ex1`]: RAM split in proportion to weights.
pub fn ex1_psdsf() -> Allocation {
    Allocation::from_rows(vec![vec![3.0, 0.0], vec![3.0, 0.0], vec![0.0, 6.0]])
}

/// Task-share-fair allocation of [`ex1`].
pub fn ex1_tsf() -> Allocation {
    Allocation::from_rows(vec![vec![2.0, 0.0], vec![2.0, 0.0], vec![2.0, 6.0]])
}

pub fn ex2_psdsf() -> Allocation {
    Allocation::from_rows(vec![
        vec![3.6, 0.0],
        vec![3.6, 0.0],
        vec![0.0, 8.0],
        vec![0.0, 8.0],
    ])
}

/// Per-class split of the fair allocation of [`ex3`].
pub fn ex3_psdsf() -> Allocation {
    Allocation::from_rows(vec![
        vec![40.0, 170.0, 0.0, 0.0],
        vec![20.0, 85.0, 0.0, 0.0],
        vec![0.0, 0.0, 82.5, 0.0],
        vec![0.0, 0.0, 0.0, 27.5],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gamma_matrix;

    #[test]
    fn physical_ex3_reproduces_the_gamma_table() {
        let spec = ex3_physical();
        assert_eq!(EX3_CLASS_COUNTS.iter().sum::<usize>(), 120);
        let g = gamma_matrix(&spec);
        for (n, row) in EX3_GAMMA.iter().enumerate() {
            for (i, &want) in row.iter().enumerate() {
                assert!(
                    (g.get(n, i) - want).abs() < 1e-9,
                    "gamma[{n}][{i}] = {}",
                    g.get(n, i)
                );
            }
        }
    }
}
