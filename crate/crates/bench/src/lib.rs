//! Fixtures for the criterion benches.

use koopflow::flows::{build_architecture, ArchName, ArchitectureSpec, FlowStack};
use koopflow::numcore::seeded;
use koopflow::{ParamStore, Tensor};

/// Randomized flow of the given architecture, depth 4, hidden `[64, 64]`.
pub fn random_flow(name: ArchName, dim: usize) -> (FlowStack, ParamStore) {
    let mut store = ParamStore::new();
    let flow = build_architecture(&mut store, "flow", &ArchitectureSpec::new(name, dim, 4, vec![64, 64])).unwrap();
    flow.randomize(&mut store, &mut seeded(1), 0.3);
    flow.power_iterate(&mut store, 50);
    (flow, store)
}

/// Deterministic smooth batch in roughly `[-1, 1]`.
pub fn batch(rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim).map(|i| (i as f64 * 0.37).sin()).collect();
    Tensor::new([rows, dim], data).unwrap()
}
