//! Proximal-gradient oracles for the reference ADMM solvers.

use mcu_core::hsi::{AbundanceMatrix, EndmemberMatrix, HsiCube};
use mcu_core::reference::{
    admm_ae, admm_ee, dense_operator, AdmmConfig, ConvDictionary1D, ConvDictionary2D, McuAdmm,
};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simplex_columns(r: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_simple_fn((r, n), || rng.random_range(0.05..1.0));
    for mut c in a.columns_mut() {
        let s = c.sum();
        c /= s;
    }
    a
}

/// Accelerated proximal gradient for `½‖y − Mγ‖² + λ‖γ‖₁` (optionally
/// γ ≥ 0), step `1/‖M‖_F²`, run until successive iterates agree to 1e-12
/// and the prox-gradient map is stationary to 1e-10.
pub fn prox_gradient(m: &Array2<f64>, y: &Array1<f64>, lambda: f64, nonneg: bool) -> Array1<f64> {
    let step = 1.0 / m.iter().map(|v| v * v).sum::<f64>();
    let prox = |v: f64| {
        let s = v.signum() * (v.abs() - lambda * step).max(0.0);
        if nonneg { s.max(0.0) } else { s }
    };
    let mtm = m.t().dot(m);
    let mty = m.t().dot(y);
    let mut x = Array1::<f64>::zeros(m.ncols());
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let grad = mtm.dot(&z) - &mty;
        let next = (&z - &(grad * step)).mapv(prox);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let diff = &next - &x;
        z = &next + &(&diff * ((t - 1.0) / t_next));
        t = t_next;
        let moved = diff.dot(&diff).sqrt();
        x = next;
        if moved < 1e-12 {
            let g = mtm.dot(&x) - &mty;
            let fixed = (&x - &(g * step)).mapv(prox);
            let r = &fixed - &x;
            if r.dot(&r).sqrt() < 1e-10 {
                return x;
            }
            z = x.clone();
            t = 1.0;
        }
    }
    panic!("oracle did not reach stationarity");
}

pub fn objective(m: &Array2<f64>, y: &Array1<f64>, lambda: f64, g: &Array1<f64>) -> f64 {
    let r = y - &m.dot(g);
    0.5 * r.dot(&r) + lambda * g.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn ee_instance(seed: u64) -> (HsiCube<f64>, AbundanceMatrix<f64>, ConvDictionary1D<f64>) {
    let mut r = rng(seed);
    // P=8, N=6 (2×3), R=2, m=2, k=3
    let y = HsiCube::new(Array3::from_shape_simple_fn((8, 2, 3), || r.random_range(0.0..1.0))).unwrap();
    let a = AbundanceMatrix::new(simplex_columns(2, 6, &mut r), 2, 3).unwrap();
    let d = ConvDictionary1D::new(Array2::from_shape_simple_fn((2, 3), || r.random_range(-1.0..1.0))).unwrap();
    (y, a, d)
}

pub fn ae_instance(seed: u64) -> (HsiCube<f64>, EndmemberMatrix<f64>, ConvDictionary2D<f64>) {
    let mut r = rng(seed);
    // P=6, R=2, 4×4 image, m=2, k=3
    let y = HsiCube::new(Array3::from_shape_simple_fn((6, 4, 4), || r.random_range(0.0..1.0))).unwrap();
    let e = EndmemberMatrix::new(Array2::from_shape_simple_fn((6, 2), || r.random_range(0.0..1.0)));
    let d = ConvDictionary2D::new(Array3::from_shape_simple_fn((2, 3, 3), || r.random_range(-1.0..1.0))).unwrap();
    (y, e, d)
}

/// Oracle system for the endmember problem, built straight from the
/// definition: row (n, p) of Aᵀ D_E Γ is Σ_r A[r,n] (D_E Γ)[r,p].
pub fn ee_system(a: &AbundanceMatrix<f64>, de: &Array2<f64>, p: usize) -> Array2<f64> {
    let (r, n) = (a.count(), a.pixels());
    Array2::from_shape_fn((n * p, de.ncols()), |(row, col)| {
        let (pix, band) = (row / p, row % p);
        (0..r).map(|k| a.matrix()[[k, pix]] * de[[k * p + band, col]]).sum()
    })
}

pub fn ae_system(e: &EndmemberMatrix<f64>, da: &Array2<f64>, n: usize) -> Array2<f64> {
    let (p, r) = (e.bands(), e.count());
    Array2::from_shape_fn((p * n, da.ncols()), |(row, col)| {
        let (band, pix) = (row / n, row % n);
        (0..r).map(|k| e.matrix()[[band, k]] * da[[k * n + pix, col]]).sum()
    })
}

pub fn ee_objective_matches_proximal_gradient() {
    for seed in 0..3 {
        let (y, a, d) = ee_instance(seed);
        let lambda = 0.05;
        let cfg = AdmmConfig::new(lambda, 1.0, 20_000);
        let sol = admm_ee(&y, &a, &d, &cfg).unwrap();
        let m = ee_system(&a, &dense_operator(&d, &[2, 8]).unwrap(), 8);
        let target: Array1<f64> = y.flat().t().iter().copied().collect();
        let oracle = prox_gradient(&m, &target, lambda, false);
        let f_oracle = objective(&m, &target, lambda, &oracle);
        let f_admm = objective(&m, &target, lambda, &sol.state.gamma);
        assert!((sol.objective - f_admm).abs() < 1e-12);
        assert!((f_admm - f_oracle).abs() < 1e-4, "seed {seed}: admm {f_admm} oracle {f_oracle}");
    }
}

pub fn ae_objective_matches_projected_proximal_gradient() {
    for seed in 0..3 {
        let (y, e, d) = ae_instance(10 + seed);
        let lambda = 0.05;
        let cfg = AdmmConfig::new(lambda, 1.0, 20_000);
        let solver = McuAdmm::abundance(&y, &e, &d, &cfg).unwrap();
        let mut state = solver.initial_state();
        for _ in 0..cfg.iters {
            solver.step(&mut state);
            assert!(state.gamma.iter().all(|&v| v >= 0.0), "Γ_A went negative at iteration {}", state.iteration);
        }
        let sol = admm_ae(&y, &e, &d, &cfg).unwrap();
        assert_eq!(sol.state.gamma, state.gamma);
        let m = ae_system(&e, &dense_operator(&d, &[2, 4, 4]).unwrap(), 16);
        let target: Array1<f64> = y.flat().iter().copied().collect();
        let oracle = prox_gradient(&m, &target, lambda, true);
        let f_oracle = objective(&m, &target, lambda, &oracle);
        let f_admm = objective(&m, &target, lambda, &state.gamma);
        assert!((f_admm - f_oracle).abs() < 1e-4, "seed {seed}: admm {f_admm} oracle {f_oracle}");
    }
}
