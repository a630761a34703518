//! SiVM endmember extraction and FCLS abundance estimation, which
//! together produce the training guidance.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::hsi::{validate_constraints, AbundanceMatrix, EndmemberMatrix, Guidance, HsiCube};
use crate::linalg::lstsq;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct SivmResult<T> {
    /// Selected pixel indices in selection order.
    pub indices: Vec<usize>,
    pub endmembers: EndmemberMatrix<T>,
}

/// Greedy simplex volume maximization.
///
/// Starts from the pixel of largest norm, then repeatedly adds the pixel
/// farthest from the affine hull of those already chosen. That distance
/// is the ratio of Gram determinants of the centered simplices, so each
/// step maximizes the volume. Ties go to the lowest pixel index.
pub fn sivm_extract<T: Scalar>(y: &HsiCube<T>, r: usize) -> Result<SivmResult<T>> {
    let flat = y.flat();
    let n = flat.ncols();
    if r == 0 || r > n {
        return Err(Error::Config(format!("cannot select {r} endmembers from {n} pixels")));
    }
    let data: Array2<f64> = flat.mapv(|v| v.as_f64());
    let norms: Vec<f64> = data.columns().into_iter().map(|c| c.dot(&c)).collect();
    let first = argmax(&norms, &[]);
    let scale = norms[first];
    let mut indices = vec![first];

    // Residuals of every pixel after removing the affine hull so far.
    let origin = data.column(first).to_owned();
    let mut resid = &data - &origin.view().insert_axis(Axis(1));
    for it in 1..r {
        let d2: Vec<f64> = resid.columns().into_iter().map(|c| c.dot(&c)).collect();
        let next = argmax(&d2, &indices);
        if !(d2[next] > 1e-20 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::RankCollapse { iteration: it });
        }
        let q = resid.column(next).to_owned() / d2[next].sqrt();
        let proj = q.dot(&resid);
        for (mut col, &p) in resid.columns_mut().into_iter().zip(proj.iter()) {
            col.scaled_add(-p, &q);
        }
        indices.push(next);
    }
    let e = flat.select(Axis(1), &indices);
    Ok(SivmResult { indices, endmembers: EndmemberMatrix::new(e) })
}

fn argmax(v: &[f64], exclude: &[usize]) -> usize {
    let mut best = usize::MAX;
    for (i, &x) in v.iter().enumerate() {
        if exclude.contains(&i) {
            continue;
        }
        if best == usize::MAX || x > v[best] {
            best = i;
        }
    }
    best
}

/// Lawson–Hanson active-set solution of `min ‖A x − b‖` subject to
/// `x ≥ 0`. Returns `None` if a passive-set subproblem is rank deficient.
pub fn nnls(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let n = a.ncols();
    let mut x = Array1::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())) * b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale.max(1e-300) * (a.nrows() as f64);
    let max_outer = 3 * n + 10;
    for _ in 0..max_outer {
        let w = a.t().dot(&(&b - &a.dot(&x)));
        let cand = (0..n).filter(|&j| !passive[j] && w[j] > tol).fold(None, |best: Option<usize>, j| match best {
            Some(k) if w[k] >= w[j] => Some(k),
            _ => Some(j),
        });
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select(Axis(1), &idx);
            let z = lstsq(sub.view(), b)?;
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (&k, &v) in idx.iter().zip(z.iter()) {
                    x[k] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&k, &zk) in idx.iter().zip(z.iter()) {
                if zk <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - zk));
                }
            }
            let mut s = Array1::<f64>::zeros(n);
            for (&k, &v) in idx.iter().zip(z.iter()) {
                s[k] = v;
            }
            x = &x + &((&s - &x) * alpha);
            for &k in &idx {
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Some(x)
}

/// Columns that lie (numerically) in the span of earlier columns.
pub fn collinear_columns(e: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (j, col) in e.columns().into_iter().enumerate() {
        let norm0 = col.dot(&col).sqrt();
        let mut v = col.to_owned();
        for q in &basis {
            let p = q.dot(&v);
            v.scaled_add(-p, q);
        }
        let norm = v.dot(&v).sqrt();
        if norm <= 1e-10 * norm0.max(f64::MIN_POSITIVE) || norm0 == 0.0 {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

/// Default weight on the data rows: `1e-3` over the mean endmember
/// magnitude, so the sum-to-one row dominates.
pub fn default_delta<T: Scalar>(e: &EndmemberMatrix<T>) -> f64 {
    let m = e.matrix();
    let mean = m.iter().map(|v| v.as_f64().abs()).sum::<f64>() / m.len().max(1) as f64;
    if mean > 0.0 {
        1e-3 / mean
    } else {
        1e-3
    }
}

/// Fully constrained least squares per pixel: nonnegative least squares on
/// `[δE; 1ᵀ] a ≈ [δy; 1]`, then exact renormalization to sum one.
pub fn fcls_solve<T: Scalar>(y: &HsiCube<T>, e: &EndmemberMatrix<T>, delta: f64) -> Result<AbundanceMatrix<T>> {
    if e.bands() != y.bands() {
        return Err(Error::shape("fcls", e.matrix().shape(), &[y.bands(), y.pixels()]));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("FCLS delta must be positive, got {delta}")));
    }
    let em: Array2<f64> = e.matrix().mapv(|v| v.as_f64());
    let bad = collinear_columns(em.view());
    if !bad.is_empty() {
        return Err(Error::RankDeficient { columns: bad });
    }
    let (p, r) = em.dim();
    let mut aug = Array2::<f64>::ones((p + 1, r));
    aug.slice_mut(s![..p, ..]).assign(&(&em * delta));
    let flat = y.flat();
    let cols: Vec<Option<Array1<f64>>> = (0..y.pixels())
        .into_par_iter()
        .map(|n| {
            let mut b = Array1::<f64>::ones(p + 1);
            for i in 0..p {
                b[i] = delta * flat[[i, n]].as_f64();
            }
            let mut a = nnls(aug.view(), b.view())?;
            let sum = a.sum();
            if sum > 0.0 {
                a /= sum;
            } else {
                a.fill(1.0 / r as f64);
            }
            Some(a)
        })
        .collect();
    let mut out = Array2::<T>::zeros((r, y.pixels()));
    for (n, c) in cols.into_iter().enumerate() {
        let c = c.ok_or_else(|| Error::RankDeficient { columns: collinear_columns(aug.view()) })?;
        for k in 0..r {
            out[[k, n]] = T::lit(c[k]);
        }
    }
    AbundanceMatrix::new(out, y.height(), y.width())
}

/// SiVM endmembers followed by FCLS abundances, checked against the
/// mixing-model constraints.
pub fn make_guidance<T: Scalar>(y: &HsiCube<T>, r: usize) -> Result<Guidance<T>> {
    let sivm = sivm_extract(y, r)?;
    let delta = default_delta(&sivm.endmembers);
    let abundances = fcls_solve(y, &sivm.endmembers, delta)?;
    let report = validate_constraints(&sivm.endmembers, &abundances, 1e-6);
    if !report.is_empty() {
        return Err(Error::Contract(format!("guidance violates constraints: {report}")));
    }
    Ok(Guidance { endmembers: sivm.endmembers, abundances })
}
