//! Abundance RMSE/AAD, endmember SAD, and the endmember matching that
//! must precede scoring.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::hsi::{AbundanceMatrix, EndmemberMatrix};
use crate::{Error, Result, Scalar};

/// Assignment is exhaustive up to this many endmembers, Hungarian above.
pub const EXHAUSTIVE_MAX: usize = 8;

fn check_same<T: Scalar>(op: &'static str, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean over pixels of `sqrt(mean_r (a − â)²)`.
pub fn rmse<T: Scalar>(gt: &AbundanceMatrix<T>, est: &AbundanceMatrix<T>) -> Result<f64> {
    rmse_matrix(gt.matrix().view(), est.matrix().view())
}

pub fn rmse_matrix<T: Scalar>(gt: ArrayView2<'_, T>, est: ArrayView2<'_, T>) -> Result<f64> {
    check_same("rmse", gt, est)?;
    let r = gt.nrows() as f64;
    let n = gt.ncols();
    let total: f64 = gt
        .columns()
        .into_iter()
        .zip(est.columns())
        .map(|(a, b)| {
            let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
            (s / r).sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

/// Angle in degrees between two vectors, or `None` if either is zero.
/// Inputs are rescaled by their largest magnitude so tiny or huge vectors
/// do not underflow; the cosine is clamped to `[-1, 1]` before `acos`.
pub fn angle_deg<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Option<f64> {
    let peak = |v: &ArrayView1<'_, T>| v.iter().fold(0.0f64, |m, x| m.max(x.as_f64().abs()));
    let (sa, sb) = (peak(&a), peak(&b));
    if sa == 0.0 || sb == 0.0 || !sa.is_finite() || !sb.is_finite() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (x.as_f64() / sa, y.as_f64() / sb);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Some(clamped_acos_deg(dot / (na * nb).sqrt()))
}

pub fn clamped_acos_deg(cos: f64) -> f64 {
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleReport {
    /// One angle per column; `None` where a column had zero norm.
    pub per_column: Vec<Option<f64>>,
    pub mean: f64,
    pub skipped: usize,
}

fn column_angles<T: Scalar>(gt: ArrayView2<'_, T>, est: ArrayView2<'_, T>) -> AngleReport {
    let per_column: Vec<Option<f64>> =
        gt.columns().into_iter().zip(est.columns()).map(|(a, b)| angle_deg(a, b)).collect();
    let valid: Vec<f64> = per_column.iter().flatten().copied().collect();
    let skipped = per_column.len() - valid.len();
    if skipped > 0 {
        log::warn!("{skipped} zero-norm column(s) skipped in angle metric");
    }
    let mean = if valid.is_empty() { f64::NAN } else { valid.iter().sum::<f64>() / valid.len() as f64 };
    AngleReport { per_column, mean, skipped }
}

/// Abundance angle distance per pixel, averaged (degrees).
pub fn aad<T: Scalar>(gt: &AbundanceMatrix<T>, est: &AbundanceMatrix<T>) -> Result<AngleReport> {
    check_same("aad", gt.matrix().view(), est.matrix().view())?;
    Ok(column_angles(gt.matrix().view(), est.matrix().view()))
}

/// Spectral angle distance per endmember column (degrees).
pub fn sad<T: Scalar>(gt: &EndmemberMatrix<T>, est: &EndmemberMatrix<T>) -> Result<AngleReport> {
    check_same("sad", gt.matrix().view(), est.matrix().view())?;
    Ok(column_angles(gt.matrix().view(), est.matrix().view()))
}

/// `cost[i][j]` = SAD between ground-truth column `i` and estimate `j`.
/// Zero-norm pairs cost 90°.
pub fn sad_cost<T: Scalar>(gt: &EndmemberMatrix<T>, est: &EndmemberMatrix<T>) -> Result<Array2<f64>> {
    if gt.bands() != est.bands() || gt.count() != est.count() {
        return Err(Error::shape("align", gt.matrix().shape(), est.matrix().shape()));
    }
    let r = gt.count();
    Ok(Array2::from_shape_fn((r, r), |(i, j)| {
        angle_deg(gt.matrix().column(i), est.matrix().column(j)).unwrap_or(90.0)
    }))
}

/// Minimum-cost assignment: `perm[i]` is the column assigned to row `i`.
pub fn assign(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n <= EXHAUSTIVE_MAX {
        exhaustive_assignment(cost)
    } else {
        hungarian(cost)
    }
}

fn exhaustive_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>();
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let t = total(&perm);
    if t < best_cost {
        best_cost = t;
        best.clone_from(&perm);
    }
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let t = total(&perm);
            if t < best_cost {
                best_cost = t;
                best.clone_from(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// O(n³) Hungarian method (potentials + augmenting paths).
fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

#[derive(Clone, Debug)]
pub struct Alignment<T> {
    /// `perm[i]` = estimated endmember matched to ground-truth endmember `i`.
    pub perm: Vec<usize>,
    pub endmembers: EndmemberMatrix<T>,
    pub abundances: AbundanceMatrix<T>,
}

/// Reorders the estimate to minimize total SAD against the ground truth;
/// abundance rows follow the same permutation.
pub fn align<T: Scalar>(
    gt: &EndmemberMatrix<T>,
    est_e: &EndmemberMatrix<T>,
    est_a: &AbundanceMatrix<T>,
) -> Result<Alignment<T>> {
    if est_a.count() != est_e.count() {
        return Err(Error::shape("align", est_e.matrix().shape(), est_a.matrix().shape()));
    }
    let perm = assign(&sad_cost(gt, est_e)?);
    let endmembers = EndmemberMatrix::new(est_e.matrix().select(ndarray::Axis(1), &perm));
    let abundances = est_a.permute_rows(&perm);
    Ok(Alignment { perm, endmembers, abundances })
}

/// Aligned scores of an estimate against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub rmse: f64,
    pub aad: f64,
    pub sad_per_endmember: Vec<f64>,
    pub sad_mean: f64,
    pub skipped_pixels: usize,
}

pub fn score<T: Scalar>(
    gt_e: &EndmemberMatrix<T>,
    gt_a: &AbundanceMatrix<T>,
    est_e: &EndmemberMatrix<T>,
    est_a: &AbundanceMatrix<T>,
) -> Result<Scores> {
    let al = align(gt_e, est_e, est_a)?;
    let aad_rep = aad(gt_a, &al.abundances)?;
    let sad_rep = sad(gt_e, &al.endmembers)?;
    Ok(Scores {
        rmse: rmse(gt_a, &al.abundances)?,
        aad: aad_rep.mean,
        sad_per_endmember: sad_rep.per_column.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        sad_mean: sad_rep.mean,
        skipped_pixels: aad_rep.skipped,
    })
}
