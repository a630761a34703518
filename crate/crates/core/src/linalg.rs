//! Small dense factorizations used by the reference solvers and the
//! classical baselines. Sizes here are tiny (tens to a few thousand
//! unknowns), so straightforward column-oriented loops are enough.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::{Error, Result, Scalar};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape("cholesky", a.shape(), &[n, n]));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > T::zero()) {
                return Err(Error::Numeric(format!(
                    "matrix not positive definite at pivot {j} (value {:e})",
                    d.as_f64()
                )));
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, T>) -> Array1<T> {
        let n = self.dim();
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[[k, i]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    /// `A⁻¹` column by column.
    pub fn inverse(&self) -> Array2<T> {
        let n = self.dim();
        let mut inv = Array2::zeros((n, n));
        let mut e = Array1::zeros(n);
        for j in 0..n {
            e.fill(T::zero());
            e[j] = T::one();
            inv.column_mut(j).assign(&self.solve(e.view()));
        }
        inv
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by
/// power iteration from the all-ones vector.
pub fn power_iteration<T: Scalar>(a: ArrayView2<'_, T>, iters: usize) -> T {
    let n = a.nrows();
    if n == 0 {
        return T::zero();
    }
    let mut v = Array1::from_elem(n, T::one() / T::lit(n as f64).sqrt());
    let mut lambda = T::zero();
    for _ in 0..iters {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == T::zero() {
            return T::zero();
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda.max(v.dot(&a.dot(&v)))
}

/// Least-squares solution of `min ‖A x − b‖₂` for full-column-rank `A`
/// via Householder QR. Returns `None` if a column is (numerically)
/// dependent on the previous ones.
pub fn lstsq<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView1<'_, T>) -> Option<Array1<T>> {
    let (m, n) = a.dim();
    if m < n {
        return None;
    }
    let mut r = a.to_owned();
    let mut y = b.to_owned();
    let scale = r.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = T::epsilon() * T::lit(m.max(n) as f64) * scale * T::lit(16.0);
    for k in 0..n {
        let mut norm = T::zero();
        for i in k..m {
            norm += r[[i, k]] * r[[i, k]];
        }
        let norm = norm.sqrt();
        if norm <= tiny {
            return None;
        }
        let alpha = if r[[k, k]] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| r[[i, k]]).collect();
        v[0] -= alpha;
        let vnorm2 = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vnorm2 > T::zero() {
            for j in k..n {
                let mut dot = T::zero();
                for (t, i) in (k..m).enumerate() {
                    dot += v[t] * r[[i, j]];
                }
                let f = T::lit(2.0) * dot / vnorm2;
                for (t, i) in (k..m).enumerate() {
                    r[[i, j]] -= f * v[t];
                }
            }
            let mut dot = T::zero();
            for (t, i) in (k..m).enumerate() {
                dot += v[t] * y[i];
            }
            let f = T::lit(2.0) * dot / vnorm2;
            for (t, i) in (k..m).enumerate() {
                y[i] -= f * v[t];
            }
        }
        if r[[k, k]].abs() <= tiny {
            return None;
        }
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= r[[i, j]] * x[j];
        }
        x[i] = s / r[[i, i]];
    }
    Some(x)
}
