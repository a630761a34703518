//! Denoiser and RED energy checks.

use mcu_core::red::{nlm_denoise, red_value, red_value_with, NlmConfig, RedState, Strength};
use ndarray::{Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn((c, h, w), || rng.random_range(-1.0..1.0))
}

pub fn zero_denoiser(x: &Array3<f64>) -> Array3<f64> {
    Array3::zeros(x.raw_dim())
}

pub fn identity(x: &Array3<f64>) -> Array3<f64> {
    x.clone()
}

pub fn nlm_keeps_constant_images() {
    let x = Array3::from_elem((2, 9, 7), 0.37f64);
    let y = nlm_denoise(&x, &NlmConfig::default());
    for v in y.iter() {
        assert!((v - 0.37).abs() < 1e-10);
    }
    let abs = NlmConfig { strength: Strength::Absolute(0.05), ..NlmConfig::default() };
    let y = nlm_denoise(&x, &abs);
    assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-10));
}

pub fn red_value_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_image(2, 5, 5, &mut rng);
    assert_eq!(red_value(&x, &identity), 0.0);
    let half = 0.5 * x.mapv(|v| v * v).sum();
    assert!((red_value(&x, &zero_denoiser) - half).abs() < 1e-12);
    let c = Array3::from_elem((1, 6, 6), 0.4f64);
    assert!(red_value(&c, &NlmConfig::default()).abs() < 1e-10);
    assert_eq!(red_value_with(&x, &x), 0.0);
}

/// Random states, estimates and weights; the sweep must land on the convex
/// combination of the denoised image and estimate-plus-dual.
pub fn fixed_point_is_convex_combination(trials: u64) {
    let cfg = NlmConfig::default();
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a4, a5, mu_e, mu_a) =
            (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(1e-3..2.0), rng.random_range(1e-3..2.0));
        let mut s = RedState::zeros(4, 2, 3, 3, mu_e, mu_a).unwrap();
        s.x_e = random_image(1, 4, 2, &mut rng);
        s.d_e = random_image(1, 4, 2, &mut rng);
        s.x_a = random_image(2, 3, 3, &mut rng);
        s.d_a = random_image(2, 3, 3, &mut rng);
        let e = random_image(1, 4, 2, &mut rng);
        let a = random_image(2, 3, 3, &mut rng);
        let (fd_e, fd_a) = (nlm_denoise(&s.x_e, &cfg), nlm_denoise(&s.x_a, &cfg));
        let (t_e, t_a) = (&e + &s.d_e, &a + &s.d_a);
        s.fixed_point_update(&e, &a, a4, a5, &cfg).unwrap();
        for (x, fd, t, alpha, mu) in [(&s.x_e, &fd_e, &t_e, a4, mu_e), (&s.x_a, &fd_a, &t_a, a5, mu_a)] {
            let (ca, cm) = (alpha / (alpha + mu), mu / (alpha + mu));
            assert!((ca + cm - 1.0).abs() < 1e-15);
            Zip::from(x).and(fd).and(t).for_each(|&x, &f, &t| {
                assert!((x - (ca * f + cm * t)).abs() < 1e-15, "seed {seed}");
                assert!(x >= f.min(t) - 1e-15 && x <= f.max(t) + 1e-15, "seed {seed}");
            });
        }
    }
}
