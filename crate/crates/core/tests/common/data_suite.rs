//! Generator output checks.

use mcu_core::hsi::lmm_forward;
use mcu_core::synth::{generate, SynthConfig};

pub fn small() -> SynthConfig {
    SynthConfig { patch: 4, grid: 3, endmembers: 3, bands: 20, filter_size: 5, ..SynthConfig::default() }
}

pub fn clean_cube_is_exact_product() {
    let d = generate(&small()).unwrap();
    let y = lmm_forward(&d.endmembers, &d.abundances).unwrap();
    assert_eq!(y.data(), d.y_clean.data());
}

pub fn ground_truth_satisfies_constraints() {
    for seed in 0..5 {
        let d = generate(&SynthConfig { seed, ..small() }).unwrap();
        for col in d.abundances.matrix().columns() {
            assert!((col.sum() - 1.0).abs() < 1e-9);
            assert!(col.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
        assert!(d.endmembers.matrix().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

pub fn full_size_realized_snr_matches_target() {
    let cfg = SynthConfig::default();
    assert_eq!((cfg.side(), cfg.bands), (100, 224));
    for target in [20.0, 30.0, 40.0] {
        let d = generate(&SynthConfig { snr_db: target, ..cfg.clone() }).unwrap();
        assert!((d.realized_snr_db - target).abs() <= 0.2, "target {target}: got {}", d.realized_snr_db);
        assert_eq!(d.y.data().dim(), (224, 100, 100));
    }
}
