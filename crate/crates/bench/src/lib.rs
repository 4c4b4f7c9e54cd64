//! Shared inputs for the benchmarks.

use cate_core::dgp::{generate_dataset_seeded, SimulationDesign};
use cate_core::SimulatedDataset;

/// A draw from the main design.
pub fn main_design_sample(n: usize, seed: u64) -> SimulatedDataset {
    generate_dataset_seeded(&SimulationDesign::main(), n, seed).expect("main design draws")
}
