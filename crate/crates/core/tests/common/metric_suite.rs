//! Metric examples and alignment against exhaustive search.

use mcu_core::hsi::{AbundanceMatrix, EndmemberMatrix};
use mcu_core::metrics::{aad, align, angle_deg, assign, rmse, sad, score};
use mcu_core::synth::{generate, SynthConfig};
use ndarray::{array, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data_suite::small;

pub fn one_pixel(v: &[f64]) -> AbundanceMatrix<f64> {
    AbundanceMatrix::new(Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap(), 1, 1).unwrap()
}

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn metric_worked_examples() {
    let a = one_pixel(&[1.0, 0.0, 0.0]);
    assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    let b = one_pixel(&[0.0, 1.0, 0.0]);
    assert!((rmse(&a, &b).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!((aad(&a, &b).unwrap().mean - 90.0).abs() < 1e-12);
    let c = one_pixel(&[0.5, 0.5, 0.0]);
    assert!((aad(&a, &c).unwrap().mean - 45.0).abs() < 1e-12);

    let e = EndmemberMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]);
    let f = EndmemberMatrix::new(array![[3.0, 1.0], [0.0, 1.0]]);
    let rep = sad(&e, &f).unwrap();
    assert_eq!(rep.per_column[0], Some(0.0));
    assert!((rep.per_column[1].unwrap() - 45.0).abs() < 1e-12);
    assert!((rep.mean - 22.5).abs() < 1e-12);
}

pub fn nearly_parallel_vectors_do_not_produce_nan() {
    let a = array![0.1f64, 0.2, 0.3];
    let b = &a * (1.0 + 1e-16);
    let ang = angle_deg(a.view(), b.view()).unwrap();
    assert!(ang.is_finite() && ang < 1e-6);
    let c = array![1e-300f64, 1e-300];
    assert!(angle_deg(c.view(), c.view()).unwrap().is_finite());
}

pub fn zero_pixels_are_skipped_and_counted() {
    let gt = AbundanceMatrix::new(array![[1.0, 0.0], [0.0, 0.0]], 1, 2).unwrap();
    let est = AbundanceMatrix::new(array![[1.0, 0.3], [0.0, 0.7]], 1, 2).unwrap();
    let rep = aad(&gt, &est).unwrap();
    assert_eq!(rep.skipped, 1);
    assert_eq!(rep.per_column[1], None);
    assert_eq!(rep.mean, 0.0);
}

pub fn assignment_matches_exhaustive_oracle_for_four() {
    let perms = all_permutations(4);
    assert_eq!(perms.len(), 24);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let cost = Array2::from_shape_simple_fn((4, 4), || rng.random_range(0.0..90.0));
        let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>();
        let best = perms.iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
        let got = assign(&cost);
        assert!((total(&got) - best).abs() < 1e-9);
    }
}

pub fn permuted_estimate_scores_zero() {
    let d = generate(&SynthConfig { endmembers: 4, ..small() }).unwrap();
    let perm = [2usize, 0, 3, 1];
    let est_e = EndmemberMatrix::new(d.endmembers.matrix().select(Axis(1), &perm));
    let est_a = d.abundances.permute_rows(&perm);
    let al = align(&d.endmembers, &est_e, &est_a).unwrap();
    assert_eq!(al.endmembers.matrix(), d.endmembers.matrix());
    assert_eq!(al.abundances.matrix(), d.abundances.matrix());
    let s = score(&d.endmembers, &d.abundances, &est_e, &est_a).unwrap();
    assert!(s.rmse < 1e-15 && s.aad < 1e-6 && s.sad_mean < 1e-6);
}

/// Assignment and alignment are optimal over all permutations for every
/// `R ≤ 4`.
pub fn alignment_is_optimal_up_to_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for r in 1..=4 {
        let perms = all_permutations(r);
        for _ in 0..100 {
            let cost = Array2::from_shape_simple_fn((r, r), || rng.random_range(0.0..90.0));
            let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>();
            let best = perms.iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
            assert!((total(&assign(&cost)) - best).abs() < 1e-9, "R = {r}");

            let gt = EndmemberMatrix::new(Array2::from_shape_simple_fn((6, r), || rng.random_range(0.0..1.0)));
            let est = EndmemberMatrix::new(Array2::from_shape_simple_fn((6, r), || rng.random_range(0.0..1.0)));
            let ones = AbundanceMatrix::new(Array2::from_elem((r, 1), 1.0 / r as f64), 1, 1).unwrap();
            let al = align(&gt, &est, &ones).unwrap();
            let sad_of = |p: &[usize]| {
                let m = EndmemberMatrix::new(est.matrix().select(Axis(1), p));
                sad(&gt, &m).unwrap().mean
            };
            let best = perms.iter().map(|p| sad_of(p)).fold(f64::INFINITY, f64::min);
            assert!((sad_of(&al.perm) - best).abs() < 1e-9, "R = {r}");
        }
    }
}
