//! Exhaustive volume oracle for SiVM and planted-simplex checks for FCLS.

use mcu_core::baselines::{default_delta, fcls_solve, sivm_extract};
use mcu_core::hsi::{validate_constraints, EndmemberMatrix, HsiCube};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cube(flat: Array2<f64>) -> HsiCube<f64> {
    let n = flat.ncols();
    HsiCube::from_flat(flat, 1, n).unwrap()
}

pub fn simplex_point(r: usize, rng: &mut ChaCha8Rng, interior: bool) -> Array1<f64> {
    let lo = if interior { 0.05 } else { 0.0 };
    let mut a = Array1::from_shape_simple_fn(r, || rng.random_range(lo..1.0));
    a /= a.sum();
    a
}

/// Determinant by Gaussian elimination.
pub fn det(mut m: Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut d = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
        if m[[piv, c]] == 0.0 {
            return 0.0;
        }
        if piv != c {
            for k in 0..n {
                m.swap([c, k], [piv, k]);
            }
            d = -d;
        }
        d *= m[[c, c]];
        for r in c + 1..n {
            let f = m[[r, c]] / m[[c, c]];
            for k in c..n {
                m[[r, k]] -= f * m[[c, k]];
            }
        }
    }
    d
}

/// Squared simplex volume (up to a constant) via the Gram determinant of
/// mean-centered vertices.
pub fn volume2(points: &[Array1<f64>]) -> f64 {
    let k = points.len();
    let mean = points.iter().fold(Array1::<f64>::zeros(points[0].len()), |acc, p| acc + p) / k as f64;
    let centered: Vec<Array1<f64>> = points.iter().map(|p| p - &mean).collect();
    // Dropping one centered vector leaves a basis of the same span.
    let b = &centered[..k - 1];
    det(Array2::from_shape_fn((k - 1, k - 1), |(i, j)| b[i].dot(&b[j])))
}

pub fn best_subset(flat: &Array2<f64>, r: usize) -> Vec<usize> {
    let n = flat.ncols();
    let mut best = (f64::NEG_INFINITY, vec![]);
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        let pts: Vec<Array1<f64>> = idx.iter().map(|&i| flat.column(i).to_owned()).collect();
        let v = volume2(&pts);
        if v > best.0 {
            best = (v, idx.clone());
        }
        // next combination
        let mut i = r;
        while i > 0 && idx[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best.1;
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn sivm_selects_the_maximum_volume_vertices() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, r) = (6, 4);
        let vertices = Array2::from_shape_simple_fn((p, r), || rng.random_range(0.0..1.0));
        let mut cols: Vec<Array1<f64>> = (0..r).map(|k| vertices.column(k).to_owned()).collect();
        for _ in 0..50 {
            cols.push(vertices.dot(&simplex_point(r, &mut rng, true)));
        }
        cols.shuffle(&mut rng);
        let flat = Array2::from_shape_fn((p, cols.len()), |(b, n)| cols[n][b]);
        let got = sivm_extract(&cube(flat.clone()), r).unwrap();

        let mut selected = got.indices.clone();
        selected.sort_unstable();
        let mut oracle = best_subset(&flat, r);
        oracle.sort_unstable();
        assert_eq!(selected, oracle, "seed {seed}");
        for (k, &i) in got.indices.iter().enumerate() {
            assert_eq!(got.endmembers.matrix().column(k), flat.column(i));
            assert!((0..r).any(|v| vertices.column(v) == flat.column(i)));
        }
    }
}

pub fn fcls_recovers_planted_abundances() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (p, r, n) = (12, 4, 60);
        let e = EndmemberMatrix::new(Array2::from_shape_simple_fn((p, r), || rng.random_range(0.0..1.0)));
        // Interior points and points on faces (some exact zeros).
        let a = Array2::from_shape_fn((r, n), |_| 0.0);
        let mut a = a;
        for j in 0..n {
            let mut col = simplex_point(r, &mut rng, j % 2 == 0);
            if j % 3 == 0 {
                col[j % r] = 0.0;
                col /= col.sum();
            }
            a.column_mut(j).assign(&col);
        }
        let y = cube(e.matrix().dot(&a));
        let got = fcls_solve(&y, &e, default_delta(&e)).unwrap();
        let err = (got.matrix() - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "seed {seed}: max error {err:e}");
        assert!(validate_constraints(&e, &got, 1e-12).is_empty());
    }
}
