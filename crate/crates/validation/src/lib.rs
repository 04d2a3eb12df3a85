//! Statistics used by the acceptance gates in `tests/acceptance.rs`.
//!
//! The gates live in their own package so that a workspace test run reaches
//! them only after the unit and CLI suites.

use ebrd::rng::{rng_from_seed, Rng};
use ebrd::sources::SampleBatch;
use rand::Rng as _;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyTest {
    /// `2E|X−Y| − E|X−X'| − E|Y−Y'|` with U-statistic within-group means.
    pub statistic: f64,
    pub p_value: f64,
}

/// Pairwise Euclidean distances of the rows of `a` followed by those of `b`.
fn distance_matrix(a: &SampleBatch, b: &SampleBatch) -> (Vec<f32>, usize) {
    let rows: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let n = rows.len();
    let mut m = vec![0.0_f32; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt() as f32;
            m[i * n + j] = d;
            m[j * n + i] = d;
        }
    }
    (m, n)
}

fn energy_statistic(m: &[f32], n: usize, in_first: &[bool]) -> f64 {
    let (mut xx, mut yy, mut xy) = (0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let (mut same, mut other) = (0.0_f64, 0.0_f64);
        for (j, d) in row.iter().enumerate().skip(i + 1) {
            if in_first[i] == in_first[j] {
                same += *d as f64;
            } else {
                other += *d as f64;
            }
        }
        if in_first[i] {
            xx += same;
        } else {
            yy += same;
        }
        xy += other;
    }
    let nx = in_first.iter().filter(|b| **b).count() as f64;
    let ny = n as f64 - nx;
    2.0 * xy / (nx * ny) - 2.0 * xx / (nx * (nx - 1.0)) - 2.0 * yy / (ny * (ny - 1.0))
}

/// Two-sample energy-distance test with a permutation p-value
/// `(1 + #{T_perm ≥ T}) / (1 + permutations)`.
pub fn energy_distance_test(a: &SampleBatch, b: &SampleBatch, permutations: usize, seed: u64) -> EnergyTest {
    assert_eq!(a.dim, b.dim, "samples must share a dimension");
    assert!(a.n >= 2 && b.n >= 2, "each sample needs two points");
    let (m, n) = distance_matrix(a, b);
    let mut labels: Vec<bool> = (0..n).map(|i| i < a.n).collect();
    let statistic = energy_statistic(&m, n, &labels);
    let mut rng = rng_from_seed(seed);
    let mut at_least = 0;
    for _ in 0..permutations {
        for i in (1..n).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        if energy_statistic(&m, n, &labels) >= statistic {
            at_least += 1;
        }
    }
    EnergyTest {
        statistic,
        p_value: (1 + at_least) as f64 / (1 + permutations) as f64,
    }
}

/// `exp(−E_k)` normalised to sum to one.
pub fn boltzmann_weights(energies: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let e: Vec<f64> = energies.into_iter().collect();
    let m = e.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = e.iter().map(|v| (m - v).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// `n` exact draws from the unnormalised categorical `weights` over `grid`,
/// by inverse CDF.
pub fn categorical_draws(grid: &[f64], weights: &[f64], n: usize, rng: &mut Rng) -> Vec<f64> {
    assert_eq!(grid.len(), weights.len());
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            grid[cdf.partition_point(|c| *c <= u).min(grid.len() - 1)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ebrd::sources::SourceSpec;

    fn gaussian(mean: f64, n: usize, seed: u64) -> SampleBatch {
        SourceSpec::ScalarGaussian { mean, std: 1.0 }.sample(n, seed).unwrap()
    }

    #[test]
    fn same_distribution_is_not_rejected() {
        let t = energy_distance_test(&gaussian(0.0, 300, 1), &gaussian(0.0, 300, 2), 99, 3);
        assert!(t.p_value > 0.05, "{t:?}");
    }

    #[test]
    fn shifted_distribution_is_rejected() {
        let t = energy_distance_test(&gaussian(0.0, 300, 1), &gaussian(0.5, 300, 2), 99, 3);
        assert_eq!(t.p_value, 0.01);
        assert!(t.statistic > 0.0);
    }

    #[test]
    fn statistic_by_hand() {
        // Points {0, 1} against {3, 3}.
        let a = SampleBatch::from_rows(vec![0.0, 1.0], 1, 0).unwrap();
        let b = SampleBatch::from_rows(vec![3.0, 3.0], 1, 0).unwrap();
        let t = energy_distance_test(&a, &b, 0, 0);
        // 2·mean(3,3,2,2) − |0−1| − |3−3| = 5 − 1 − 0.
        assert!((t.statistic - 4.0).abs() < 1e-6);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn boltzmann_weights_normalise() {
        let w = boltzmann_weights([0.0, 2f64.ln(), 1e4]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut rng = rng_from_seed(4);
        let draws = categorical_draws(&[1.0, 2.0, 3.0], &[0.0, 1.0, 3.0], 4000, &mut rng);
        assert!(draws.iter().all(|d| *d != 1.0));
        let threes = draws.iter().filter(|d| **d == 3.0).count() as f64 / 4000.0;
        assert!((threes - 0.75).abs() < 0.03);
    }
}
