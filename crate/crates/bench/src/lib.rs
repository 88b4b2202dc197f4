//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simg::active_learning::{synth_simg, OracleRules};
use simg::SimgGraph;
use simg::synth::{dataset, SynthConfig};

pub use simg::Molecule;

/// Square cost matrices with entries in [0, 10).
pub fn cost_matrices(seed: u64, n: usize, size: usize) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..size).map(|_| (0..size).map(|_| rng.random_range(0.0..10.0)).collect()).collect()).collect()
}

pub fn molecules(seed: u64, n: usize) -> Vec<Molecule> {
    dataset(seed, n, &SynthConfig::default())
}

pub fn labeled(seed: u64, n: usize) -> Vec<SimgGraph> {
    let rules = OracleRules::default();
    molecules(seed, n).iter().map(|m| synth_simg(m, &rules).expect("oracle labels synthetic molecules")).collect()
}
