//! One unrolled layer against one iteration of the reference solver.

use mcu_core::hsi::{AbundanceMatrix, EndmemberMatrix, HsiCube};
use mcu_core::ndgraph::{Graph, Var};
use mcu_core::nets::{uadip_layer, uadip_shared, uedip_layer, uedip_shared, Uadip, UadipLayer, Uedip, UedipLayer};
use mcu_core::reference::{AdmmConfig, AdmmState, ConvDictionary1D, ConvDictionary2D, McuAdmm};
use mcu_core::Tensor;
use ndarray::{Array1, Array2, Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

pub fn scalar(g: &mut Graph<f64>, v: f64) -> Var {
    g.constant(Tensor::from_elem(IxDyn(&[]), v))
}

pub fn delta_1d(g: &mut Graph<f64>, k: usize) -> Var {
    let mut t = Tensor::zeros(IxDyn(&[1, 1, k]));
    t[[0, 0, k / 2]] = 1.0;
    g.constant(t)
}

/// `c_out = c_in = c` identity mapping with centered `k × k` taps.
pub fn delta_2d(g: &mut Graph<f64>, c: usize, k: usize) -> Var {
    let mut t = Tensor::zeros(IxDyn(&[c, c, k, k]));
    for i in 0..c {
        t[[i, i, k / 2, k / 2]] = 1.0;
    }
    g.constant(t)
}

/// `(G + ρI)⁻¹` by Gauss–Jordan elimination.
pub fn regularized_inverse(gram: &Array2<f64>, rho: f64) -> Array2<f64> {
    let n = gram.nrows();
    let mut a = gram + &(Array2::<f64>::eye(n) * rho);
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs())).unwrap();
        for k in 0..n {
            a.swap([col, k], [piv, k]);
            inv.swap([col, k], [piv, k]);
        }
        let d = a[[col, col]];
        for k in 0..n {
            a[[col, k]] /= d;
            inv[[col, k]] /= d;
        }
        for row in 0..n {
            if row != col {
                let f = a[[row, col]];
                for k in 0..n {
                    a[[row, k]] -= f * a[[col, k]];
                    inv[[row, k]] -= f * inv[[col, k]];
                }
            }
        }
    }
    inv
}

pub fn random_state(len: usize, rng: &mut ChaCha8Rng, zero: bool) -> AdmmState<f64> {
    let mut s = AdmmState::zeros(len);
    if !zero {
        s.gamma = Array1::from_shape_simple_fn(len, || rng.random_range(-0.5..0.5));
        s.u = Array1::from_shape_simple_fn(len, || rng.random_range(-0.2..0.2));
    }
    s
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs one UEDIP layer with `A1 = A`, `A2 = a2`, delta convolutions,
/// `s1 = ρ`, `s3 = ρ/L`, `s2 = λ/L`, and one `admm_ee` iteration from
/// the same state; returns the worst (Γ, u) discrepancy.
pub fn ee_discrepancy(
    y: &HsiCube<f64>,
    a: &AbundanceMatrix<f64>,
    a2: &Array2<f64>,
    cfg: &AdmmConfig<f64>,
    k: usize,
    state: AdmmState<f64>,
) -> f64 {
    let solver = McuAdmm::endmember(y, a, &ConvDictionary1D::delta(k).unwrap(), cfg).unwrap();
    let l = solver.lipschitz();
    let (r, p) = (a.count(), y.bands());

    let mut g = Graph::<f64>::new();
    let net = Uedip {
        a1: g.constant(a.matrix().clone().into_dyn()),
        f1: delta_1d(&mut g, k),
        layers: vec![UedipLayer {
            a2: g.constant(a2.clone().into_dyn()),
            f2: delta_1d(&mut g, k),
            f3: delta_1d(&mut g, k),
            s1: scalar(&mut g, cfg.rho),
            s2: scalar(&mut g, cfg.lambda / l),
            s3: scalar(&mut g, cfg.rho / l),
        }],
        f_out: delta_1d(&mut g, k),
    };
    let y_t = g.constant(y.flat().t().as_standard_layout().into_owned().into_dyn());
    let shared = uedip_shared(&mut g, y_t, &net).unwrap();
    let code = |v: &Array1<f64>| Tensor::from_shape_vec(IxDyn(&[1, r, p]), v.to_vec()).unwrap();
    let gamma = g.constant(code(&state.gamma));
    let u = g.constant(code(&state.u));
    let out = uedip_layer(&mut g, shared, gamma, u, &net.layers[0]).unwrap();

    let mut reference = state;
    solver.step(&mut reference);
    let dg = max_abs_diff(g.value(out.gamma), &reference.gamma);
    let du = max_abs_diff(g.value(out.u), &reference.u);
    let dw = max_abs_diff(g.value(out.omega), &reference.omega);
    dg.max(du).max(dw)
}

pub fn ae_discrepancy(
    y: &HsiCube<f64>,
    e: &EndmemberMatrix<f64>,
    e2: &Array2<f64>,
    cfg: &AdmmConfig<f64>,
    k: usize,
    state: AdmmState<f64>,
) -> f64 {
    let solver = McuAdmm::abundance(y, e, &ConvDictionary2D::delta(k).unwrap(), cfg).unwrap();
    let l = solver.lipschitz();
    let (r, h, w) = (e.count(), y.height(), y.width());

    // With a single delta kernel the solver code is (1, R, H, W); the
    // network code is (m_A, H, W) with m_A = R.
    let mut g = Graph::<f64>::new();
    let net = Uadip {
        e1: g.constant(e.matrix().t().as_standard_layout().into_owned().into_dyn()),
        u1: delta_2d(&mut g, r, k),
        layers: vec![UadipLayer {
            e2: g.constant(e2.clone().into_dyn()),
            u2: delta_2d(&mut g, r, k),
            u3: delta_2d(&mut g, r, k),
            v1: scalar(&mut g, cfg.rho),
            v2: scalar(&mut g, cfg.lambda / l),
            v3: scalar(&mut g, cfg.rho / l),
        }],
        u_out: delta_2d(&mut g, r, k),
    };
    let yv = g.constant(y.to_flat().into_dyn());
    let shared = uadip_shared(&mut g, yv, h, w, &net).unwrap();
    let code = |v: &Array1<f64>| Tensor::from_shape_vec(IxDyn(&[r, h, w]), v.to_vec()).unwrap();
    let gamma = g.constant(code(&state.gamma));
    let u = g.constant(code(&state.u));
    let out = uadip_layer(&mut g, shared, gamma, u, &net.layers[0]).unwrap();

    let mut reference = state;
    solver.step(&mut reference);
    let dg = max_abs_diff(g.value(out.gamma), &reference.gamma);
    let du = max_abs_diff(g.value(out.u), &reference.u);
    let dw = max_abs_diff(g.value(out.omega), &reference.omega);
    dg.max(du).max(dw)
}

pub fn cube(p: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> HsiCube<f64> {
    HsiCube::new(Array3::from_shape_simple_fn((p, h, w), || rng.random_range(0.0..1.0))).unwrap()
}

pub fn uedip_layer_reproduces_one_admm_iteration() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, h, w, r) = (9, 2, 3, 3);
        let y = cube(p, h, w, &mut rng);
        let a = AbundanceMatrix::new(Array2::from_shape_simple_fn((r, h * w), || rng.random_range(0.0..1.0)), h, w)
            .unwrap();
        let cfg = AdmmConfig::new(0.02, rng.random_range(0.5..2.0), 1);
        let a2 = regularized_inverse(&a.matrix().dot(&a.matrix().t()), cfg.rho);
        for zero in [true, false] {
            let state = random_state(r * p, &mut rng, zero);
            let d = ee_discrepancy(&y, &a, &a2, &cfg, 3, state);
            assert!(d < TOL, "seed {seed} zero-start {zero}: discrepancy {d:e}");
        }
    }
}

pub fn uedip_layer_with_identity_mixer_on_orthogonal_instance() {
    // A = c [I | 0] with c² = 1 − ρ makes AAᵀ + ρI = I, so A2 = I is exact.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (p, h, w, r) = (6, 2, 2, 2);
    let rho = 0.75;
    let c = (1.0f64 - rho).sqrt();
    let a = AbundanceMatrix::new(Array2::from_shape_fn((r, h * w), |(i, j)| if i == j { c } else { 0.0 }), h, w)
        .unwrap();
    let y = cube(p, h, w, &mut rng);
    let cfg = AdmmConfig::new(0.01, rho, 1);
    let state = random_state(r * p, &mut rng, false);
    let d = ee_discrepancy(&y, &a, &Array2::eye(r), &cfg, 5, state);
    assert!(d < TOL, "discrepancy {d:e}");
}

pub fn uadip_layer_reproduces_one_admm_iteration() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (p, h, w, r) = (7, 3, 4, 3);
        let y = cube(p, h, w, &mut rng);
        let e = EndmemberMatrix::new(Array2::from_shape_simple_fn((p, r), || rng.random_range(0.0..1.0)));
        let cfg = AdmmConfig::new(0.02, rng.random_range(0.5..2.0), 1);
        let e2 = regularized_inverse(&e.matrix().t().dot(e.matrix()), cfg.rho);
        for zero in [true, false] {
            let mut state = random_state(r * h * w, &mut rng, zero);
            state.gamma.mapv_inplace(|v| v.abs());
            let d = ae_discrepancy(&y, &e, &e2, &cfg, 3, state);
            assert!(d < TOL, "seed {seed} zero-start {zero}: discrepancy {d:e}");
        }
    }
}
