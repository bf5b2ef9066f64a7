//! Seeded workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftwatch_core::{PRange, PRangeMatrix, TreatmentDataset};

/// `n × m` p-range matrix whose first tenth of records is anomalous.
pub fn pranges(n: usize, m: usize, seed: u64) -> PRangeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            (0..m)
                .map(|_| {
                    let hot = i < n / 10;
                    let lo: f64 = if hot { rng.random_range(0.0..0.05) } else { rng.random_range(0.0..0.8) };
                    PRange::new(lo, lo + rng.random_range(0.01..0.2))
                })
                .collect()
        })
        .collect();
    PRangeMatrix::from_rows((0..m).map(|j| format!("a{j}")).collect(), rows).expect("valid ranges")
}

/// Randomised experiment with a step effect of 0.4 where `x0 > 0.5`.
pub fn step_effect(n: usize, features: usize, seed: u64) -> TreatmentDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: Vec<f64> = (0..features).map(|_| rng.random()).collect();
        let di = rng.random_bool(0.5);
        let tau = if xi[0] > 0.5 { 0.4 } else { 0.0 };
        y.push(xi[1] + if di { tau } else { 0.0 } + rng.random_range(-0.1..0.1));
        x.push(xi);
        d.push(di);
    }
    let names = (0..features).map(|j| format!("x{j}")).collect();
    TreatmentDataset::new(x, y, d, names).expect("both arms present")
}
