//! Linear mixing model types: `Y = E A` with `E ≥ 0`, `A ≥ 0` and
//! columns of `A` summing to one.
//!
//! Pixels are flattened row-major: pixel `n = row · width + col`.

use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::{Error, Result, Scalar};

/// Observed reflectances, `bands × height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube<T> {
    data: Array3<T>,
}

impl<T: Scalar> HsiCube<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (p, h, w) = data.dim();
        if p == 0 || h == 0 || w == 0 {
            return Err(Error::shape("HsiCube::new", &[p, h, w], &[1, 1, 1]));
        }
        Ok(HsiCube { data: data.as_standard_layout().into_owned() })
    }

    /// Builds a cube from a `P × N` matrix with `N = height · width`.
    pub fn from_flat(flat: Array2<T>, height: usize, width: usize) -> Result<Self> {
        let (p, n) = flat.dim();
        if n != height * width {
            return Err(Error::shape("HsiCube::from_flat", &[p, n], &[height, width]));
        }
        let flat = flat.as_standard_layout().into_owned();
        let data = flat
            .into_shape_with_order((p, height, width))
            .map_err(|_| Error::shape("HsiCube::from_flat", &[p, n], &[height, width]))?;
        Self::new(data)
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    /// `P × N` view of the cube.
    pub fn flat(&self) -> ArrayView2<'_, T> {
        self.data
            .view()
            .into_shape_with_order((self.bands(), self.pixels()))
            .expect("cube is stored in standard layout")
    }

    pub fn to_flat(&self) -> Array2<T> {
        self.flat().to_owned()
    }
}

/// Endmember signatures, one per column (`P × R`).
#[derive(Clone, Debug, PartialEq)]
pub struct EndmemberMatrix<T>(pub Array2<T>);

impl<T: Scalar> EndmemberMatrix<T> {
    pub fn new(e: Array2<T>) -> Self {
        EndmemberMatrix(e)
    }

    pub fn bands(&self) -> usize {
        self.0.nrows()
    }

    pub fn count(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.0
    }
}

/// Abundance fractions, `R × N`, remembering the image geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct AbundanceMatrix<T> {
    data: Array2<T>,
    height: usize,
    width: usize,
}

impl<T: Scalar> AbundanceMatrix<T> {
    pub fn new(data: Array2<T>, height: usize, width: usize) -> Result<Self> {
        if data.ncols() != height * width {
            return Err(Error::shape("AbundanceMatrix::new", data.shape(), &[height, width]));
        }
        Ok(AbundanceMatrix { data, height, width })
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.data
    }

    /// `R × height × width` copy.
    pub fn to_image(&self) -> Array3<T> {
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.count(), self.height, self.width))
            .expect("pixel count matches geometry")
    }

    /// Reorders rows: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let data = self.data.select(Axis(0), perm);
        AbundanceMatrix { data, height: self.height, width: self.width }
    }
}

/// Reference endmembers and abundances produced by a classical unmixer.
#[derive(Clone, Debug, PartialEq)]
pub struct Guidance<T> {
    pub endmembers: EndmemberMatrix<T>,
    pub abundances: AbundanceMatrix<T>,
}

/// Noiseless reconstruction `E · A` as a cube.
pub fn lmm_forward<T: Scalar>(e: &EndmemberMatrix<T>, a: &AbundanceMatrix<T>) -> Result<HsiCube<T>> {
    if e.count() != a.count() {
        return Err(Error::shape("lmm_forward", e.0.shape(), a.data.shape()));
    }
    HsiCube::from_flat(e.0.dot(&a.data), a.height, a.width)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// Endmember nonnegativity.
    Enc,
    /// Abundance nonnegativity.
    Anc,
    /// Abundance sum-to-one.
    Asc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    pub max_violation: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn get(&self, c: Constraint) -> Option<&Violation> {
        self.violations.iter().find(|v| v.constraint == c)
    }
}

impl fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "all constraints satisfied");
        }
        for v in &self.violations {
            writeln!(f, "{:?}: {} entries, max violation {:.3e}", v.constraint, v.count, v.max_violation)?;
        }
        Ok(())
    }
}

fn negativity<T: Scalar>(it: impl Iterator<Item = T>, tol: f64, c: Constraint) -> Option<Violation> {
    let (mut worst, mut count) = (0.0f64, 0usize);
    for v in it {
        let neg = -v.as_f64();
        if neg > tol {
            count += 1;
            worst = worst.max(neg);
        }
    }
    (count > 0).then_some(Violation { constraint: c, max_violation: worst, count })
}

/// Lists every violated ENC/ANC/ASC constraint beyond `tol`.
pub fn validate_constraints<T: Scalar>(
    e: &EndmemberMatrix<T>,
    a: &AbundanceMatrix<T>,
    tol: f64,
) -> ConstraintReport {
    let mut violations = Vec::new();
    violations.extend(negativity(e.0.iter().copied(), tol, Constraint::Enc));
    violations.extend(negativity(a.data.iter().copied(), tol, Constraint::Anc));

    let (mut worst, mut count) = (0.0f64, 0usize);
    for col in a.data.columns() {
        let dev = (col.sum().as_f64() - 1.0).abs();
        if dev > tol {
            count += 1;
            worst = worst.max(dev);
        }
    }
    if count > 0 {
        violations.push(Violation { constraint: Constraint::Asc, max_violation: worst, count });
    }
    ConstraintReport { violations }
}
