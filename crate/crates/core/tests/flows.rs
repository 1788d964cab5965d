mod common;

use common::{gaussian, grad_cases, random_flow, worst_log_det_error};
use koopflow::flows::{ArchName, Block};
use koopflow::numcore::seeded;
use koopflow::pipeline::invertibility_error;
use proptest::prelude::*;

const EXACT: [ArchName; 4] = [ArchName::Nice, ArchName::Realnvp, ArchName::Allinone, ArchName::Revnet];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_flows_round_trip(arch in 0usize..4, dim in 2usize..9, depth in 1usize..5, seed in any::<u64>()) {
        let (flow, store) = random_flow(EXACT[arch], dim, depth, &[12], seed);
        let x = gaussian(&mut seeded(seed), 64, dim);
        prop_assert!(invertibility_error(&flow, &store, &x).unwrap() <= 1e-10);
    }

    #[test]
    fn iresnet_round_trip(dim in 1usize..7, depth in 1usize..4, seed in any::<u64>()) {
        let (flow, store) = random_flow(ArchName::Iresnet, dim, depth, &[12], seed);
        let x = gaussian(&mut seeded(seed), 32, dim);
        prop_assert!(invertibility_error(&flow, &store, &x).unwrap() <= 1e-8);
    }

    #[test]
    fn exact_log_det_matches_jacobian(arch in 0usize..3, dim in 2usize..7, seed in any::<u64>()) {
        let name = [ArchName::Realnvp, ArchName::Allinone, ArchName::Iresnet][arch];
        let (flow, store) = random_flow(name, dim, 2, &[8], seed);
        let x = gaussian(&mut seeded(seed), 5, dim);
        prop_assert!(worst_log_det_error(&flow, &store, &x) < 1e-6);
    }
}

#[test]
fn volume_preserving_flows_have_zero_log_det() {
    for name in [ArchName::Nice, ArchName::Revnet] {
        let (flow, store) = random_flow(name, 5, 3, &[8], 4);
        let (_, ld) = flow.forward_log_det(&store, &gaussian(&mut seeded(1), 7, 5)).unwrap();
        assert!(ld.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn randomized_spectral_blocks_stay_contractive() {
    let (flow, store) = random_flow(ArchName::Iresnet, 6, 3, &[16, 16], 11);
    for blk in &flow.blocks {
        let Block::SpectralResidual(r) = blk else {
            unreachable!()
        };
        for w in r.normalized_weights(&store).unwrap() {
            let m = nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.data());
            assert!(m.singular_values().max() <= 0.9 + 1e-6);
        }
    }
}

#[test]
fn layer_gradients_match_central_differences() {
    for seed in 0..4 {
        for case in grad_cases(seed) {
            let err = case.check(1e-5).unwrap();
            assert!(err < 1e-5, "{} seed {seed}: {err:.3e}", case.name);
        }
    }
}
