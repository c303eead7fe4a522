//! Property tests for the structural invariants.

use derev_core::metrics::si_sdr;
use derev_core::operators::convolve;
use derev_core::sampler::zeta_prime;
use derev_core::stft::{istft, stft, StftConfig};
use proptest::prelude::*;

fn small_cfg() -> StftConfig {
    StftConfig::new(16, 4, 16, 16e3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stft_roundtrip_any_length(len in 1usize..2000, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let back = istft(&stft(&x, &small_cfg()).unwrap()).unwrap();
        let num: f64 = x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(num <= 1e-10 * den.max(1e-12));
    }

    #[test]
    fn convolution_commutes(ka in prop::collection::vec(-2.0f64..2.0, 1..20),
                            xa in prop::collection::vec(-2.0f64..2.0, 1..50)) {
        let ab = convolve(&ka, &xa).unwrap();
        let ba = convolve(&xa, &ka).unwrap();
        let scale: f64 = ab.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (u, v) in ab.iter().zip(&ba) {
            prop_assert!((u - v).abs() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn si_sdr_invariant_to_estimate_scale(seed in 0u64..1000, scale in -1e4f64..1e4) {
        prop_assume!(scale.abs() > 1e-6);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let reference: Vec<f64> = (0..256).map(|_| rng.random::<f64>() - 0.5).collect();
        let estimate: Vec<f64> = (0..256).map(|_| rng.random::<f64>() - 0.5).collect();
        let base = si_sdr(&estimate, &reference).unwrap();
        let scaled: Vec<f64> = estimate.iter().map(|v| scale * v).collect();
        let v = si_sdr(&scaled, &reference).unwrap();
        prop_assert!((v - base).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn sawtooth_stays_in_range(tau in 0.0f64..=1.0, peak in 0.0f64..1e4,
                               breakpoint in 0.05f64..0.95) {
        let z = zeta_prime(tau, peak, breakpoint).unwrap();
        prop_assert!(z >= 0.0 && z <= peak + 1e-9);
        // apex at the breakpoint
        let apex = zeta_prime(breakpoint, peak, breakpoint).unwrap();
        prop_assert!((apex - peak).abs() <= 1e-12 * (1.0 + peak));
    }
}
