//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] is a tape: every operation appends a node whose parents
//! already exist, so node order is a topological order and
//! [`Graph::backward`] is a single reverse sweep. Handles ([`Var`]) are
//! plain indices into the tape.
//!
//! Only the operations the unrolled unmixing networks need are provided:
//! matrix product, "same"-padded cross-correlation in one and two spatial
//! dimensions, a handful of pointwise maps, reshapes and reductions.

use ndarray::{Array2, ArrayView2, Axis, Ix2, IxDyn};

use crate::{Error, Result, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise maps. `SoftThreshold` and `ShiftRelu` read their threshold
/// from a scalar node; negative thresholds are clamped to zero at use.
#[derive(Clone, Copy, Debug)]
pub enum Pointwise<T> {
    Relu,
    Sigmoid,
    Softmax { axis: usize },
    SoftThreshold(Var),
    ShiftRelu(Var),
    ScaleAdd { scale: T, shift: T },
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c_in: usize,
    c_out: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cols: Array2<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    MulScalar {
        x: Var,
        s: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    SoftThreshold {
        x: Var,
        z: Var,
    },
    ShiftRelu {
        x: Var,
        z: Var,
    },
    ScaleAdd {
        x: Var,
        scale: T,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Sum(Var),
    SumSquares(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Differentiable computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn scalar_tensor<T: Scalar>(v: T) -> Tensor<T> {
    Tensor::from_elem(IxDyn(&[]), v)
}

fn as_matrix<T: Scalar>(t: &Tensor<T>) -> ArrayView2<'_, T> {
    t.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

fn reshaped<T: Scalar>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let data: Vec<T> = t.iter().copied().collect();
    Tensor::from_shape_vec(IxDyn(shape), data).expect("reshape preserves length")
}

#[inline]
fn effective_threshold<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

#[inline]
fn soft<T: Scalar>(x: T, z: T) -> T {
    let m = x.abs() - z;
    if m > T::zero() {
        x.signum() * m
    } else {
        T::zero()
    }
}

/// Lays out every `kh×kw` window of a zero-padded `(c, h, w)` image as a
/// column: row index `(ci·kh + dy)·kw + dx`, column index `y·w + x`.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Array2<T> {
    let (h, w) = (g.height, g.width);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let rows = g.c_in * g.kh * g.kw;
    let mut cols = vec![T::zero(); rows * h * w];
    for ci in 0..g.c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (ci * g.kh + dy) * g.kw + dx;
                let dst = &mut cols[row * h * w..(row + 1) * h * w];
                let x_lo = pw.saturating_sub(dx);
                let x_hi = (w + pw).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let sy = sy - ph;
                    let sx_lo = x_lo + dx - pw;
                    let n = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[sy * w + sx_lo..sy * w + sx_lo + n]);
                }
            }
        }
    }
    Array2::from_shape_vec((rows, h * w), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: ArrayView2<'_, T>, g: &ConvGeom) -> Vec<T> {
    let (h, w) = (g.height, g.width);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let cols = cols.as_standard_layout();
    let src_all = cols.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); g.c_in * h * w];
    for ci in 0..g.c_in {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (ci * g.kh + dy) * g.kw + dx;
                let src = &src_all[row * h * w..(row + 1) * h * w];
                let x_lo = pw.saturating_sub(dx);
                let x_hi = (w + pw).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < ph || sy - ph >= h {
                        continue;
                    }
                    let sy = sy - ph;
                    let sx_lo = x_lo + dx - pw;
                    let n = x_hi - x_lo;
                    let dst = &mut plane[sy * w + sx_lo..sy * w + sx_lo + n];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a learnable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds a leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_param(&mut self, v: T) -> Var {
        self.param(scalar_tensor(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Clears all gradients so that [`Graph::backward`] may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let out = as_matrix(self.value(a)).dot(&as_matrix(self.value(b))).into_dyn();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// One-dimensional cross-correlation along the last axis.
    ///
    /// `x` is `(C_in, R, P)` and `kernels` `(C_out, C_in, k)`; each of the
    /// `R` rows is filtered independently with `(k-1)/2` zeros of padding
    /// on both ends, so the output is `(C_out, R, P)`.
    pub fn conv1d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernels).to_vec());
        if sx.len() != 3 || sk.len() != 3 || sk[1] != sx[0] {
            return Err(Error::shape("conv1d", &sx, &sk));
        }
        if sk[2] % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size {} must be odd", sk[2])));
        }
        let geom = ConvGeom {
            c_in: sx[0],
            c_out: sk[0],
            height: sx[1],
            width: sx[2],
            kh: 1,
            kw: sk[2],
        };
        Ok(self.conv(x, kernels, geom))
    }

    /// Two-dimensional cross-correlation with "same" zero padding.
    ///
    /// `x` is `(C_in, H, W)` and `kernels` `(C_out, C_in, k, k)`.
    pub fn conv2d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernels).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sk[1] != sx[0] || sk[2] != sk[3] {
            return Err(Error::shape("conv2d", &sx, &sk));
        }
        if sk[2] % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel size {} must be odd", sk[2])));
        }
        let geom = ConvGeom {
            c_in: sx[0],
            c_out: sk[0],
            height: sx[1],
            width: sx[2],
            kh: sk[2],
            kw: sk[3],
        };
        Ok(self.conv(x, kernels, geom))
    }

    fn conv(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let xs = self.value(x).as_standard_layout();
        let cols = im2col(xs.as_slice().expect("standard layout"), &geom);
        let w2 = reshaped(self.value(w), &[geom.c_out, geom.c_in * geom.kh * geom.kw]);
        let out = as_matrix(&w2).dot(&cols);
        let out = reshaped(&out.into_dyn(), &[geom.c_out, geom.height, geom.width]);
        let rg = self.rg(x) || self.rg(w);
        self.push(out, Op::Conv { x, w, geom, cols }, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// `s · x` for a single-element node `s`.
    pub fn mul_scalar(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar", self.shape(s), &[]));
        }
        let sv = self.scalar_of(s);
        let out = self.value(x).mapv(|v| v * sv);
        let rg = self.rg(s) || self.rg(x);
        Ok(self.push(out, Op::MulScalar { x, s }, rg))
    }

    fn scalar_of(&self, s: Var) -> T {
        *self.value(s).iter().next().expect("single element")
    }

    pub fn pointwise(&mut self, x: Var, kind: Pointwise<T>) -> Result<Var> {
        let xv = self.value(x);
        let rg_x = self.rg(x);
        let (out, op, rg) = match kind {
            Pointwise::Relu => (xv.mapv(|v| v.max(T::zero())), Op::Relu(x), rg_x),
            Pointwise::Sigmoid => (
                xv.mapv(|v| T::one() / (T::one() + (-v).exp())),
                Op::Sigmoid(x),
                rg_x,
            ),
            Pointwise::Softmax { axis } => {
                if axis >= xv.ndim() {
                    return Err(Error::shape("softmax", xv.shape(), &[axis]));
                }
                let mut out = xv.clone();
                for mut lane in out.lanes_mut(Axis(axis)) {
                    let m = lane.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                    lane.mapv_inplace(|v| (v - m).exp());
                    let s = lane.sum();
                    lane.mapv_inplace(|v| v / s);
                }
                (out, Op::Softmax { x, axis }, rg_x)
            }
            Pointwise::SoftThreshold(z) => {
                if self.value(z).len() != 1 {
                    return Err(Error::shape("soft_threshold", self.shape(z), &[]));
                }
                let zt = effective_threshold(self.scalar_of(z));
                (xv.mapv(|v| soft(v, zt)), Op::SoftThreshold { x, z }, rg_x || self.rg(z))
            }
            Pointwise::ShiftRelu(z) => {
                if self.value(z).len() != 1 {
                    return Err(Error::shape("shift_relu", self.shape(z), &[]));
                }
                let zt = effective_threshold(self.scalar_of(z));
                (
                    xv.mapv(|v| (v - zt).max(T::zero())),
                    Op::ShiftRelu { x, z },
                    rg_x || self.rg(z),
                )
            }
            Pointwise::ScaleAdd { scale, shift } => {
                (xv.mapv(|v| v * scale + shift), Op::ScaleAdd { x, scale }, rg_x)
            }
        };
        Ok(self.push(out, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.pointwise(x, Pointwise::Relu).expect("relu is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.pointwise(x, Pointwise::Sigmoid).expect("sigmoid is total")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.pointwise(x, Pointwise::Softmax { axis })
    }

    pub fn soft_threshold(&mut self, x: Var, z: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::SoftThreshold(z))
    }

    pub fn shift_relu(&mut self, x: Var, z: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::ShiftRelu(z))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.pointwise(x, Pointwise::ScaleAdd { scale: c, shift: T::zero() })
            .expect("scale is total")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = reshaped(self.value(x), shape);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let nd = self.value(x).ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", self.shape(x), axes));
        }
        let out = self
            .value(x)
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .into_owned();
        let rg = self.rg(x);
        Ok(self.push(out, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    /// Transpose of a matrix node.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = scalar_tensor(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = scalar_tensor(self.value(x).iter().fold(T::zero(), |a, &v| a + v * v));
        let rg = self.rg(x);
        self.push(out, Op::SumSquares(x), rg)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.backward_done {
            return Err(Error::Contract("backward already ran; call zero_grad first".into()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::from_elem(self.value(loss).raw_dim(), T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Tensor<T>)> = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let g2 = as_matrix(g);
                if self.rg(*a) {
                    let bv = as_matrix(self.value(*b));
                    out.push((*a, g2.dot(&bv.t()).into_dyn()));
                }
                if self.rg(*b) {
                    let av = as_matrix(self.value(*a));
                    out.push((*b, av.t().dot(&g2).into_dyn()));
                }
            }
            Op::Conv { x, w, geom, cols } => {
                let gy = reshaped(g, &[geom.c_out, geom.height * geom.width]);
                let gy = as_matrix(&gy);
                if self.rg(*w) {
                    let dw = gy.dot(&cols.t());
                    out.push((*w, reshaped(&dw.into_dyn(), self.shape(*w))));
                }
                if self.rg(*x) {
                    let w2 = reshaped(self.value(*w), &[geom.c_out, geom.c_in * geom.kh * geom.kw]);
                    let dcols = as_matrix(&w2).t().dot(&gy);
                    let dx = col2im(dcols.view(), geom);
                    let dx = Tensor::from_shape_vec(
                        IxDyn(&[geom.c_in, geom.height, geom.width]),
                        dx,
                    )
                    .expect("col2im shape");
                    out.push((*x, dx));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.mapv(|v| -v)));
            }
            Op::MulScalar { x, s } => {
                let sv = self.scalar_of(*s);
                if self.rg(*x) {
                    out.push((*x, g.mapv(|v| v * sv)));
                }
                if self.rg(*s) {
                    let ds = g.iter().zip(self.value(*x).iter()).fold(T::zero(), |a, (&gv, &xv)| a + gv * xv);
                    out.push((*s, Tensor::from_elem(self.value(*s).raw_dim(), ds)));
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                d.zip_mut_with(self.value(*x), |gv, &xv| {
                    if xv <= T::zero() {
                        *gv = T::zero()
                    }
                });
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                d.zip_mut_with(&node.value, |gv, &y| *gv = *gv * y * (T::one() - y));
                out.push((*x, d));
            }
            Op::Softmax { x, axis } => {
                let mut d = g.clone();
                for (mut dl, yl) in d.lanes_mut(Axis(*axis)).into_iter().zip(node.value.lanes(Axis(*axis))) {
                    let s = dl.iter().zip(yl.iter()).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
                    dl.zip_mut_with(&yl, |gv, &yv| *gv = yv * (*gv - s));
                }
                out.push((*x, d));
            }
            Op::SoftThreshold { x, z } => {
                let zraw = self.scalar_of(*z);
                let zt = effective_threshold(zraw);
                let xv = self.value(*x);
                if self.rg(*x) {
                    let mut d = g.clone();
                    d.zip_mut_with(xv, |gv, &v| {
                        if v.abs() <= zt {
                            *gv = T::zero()
                        }
                    });
                    out.push((*x, d));
                }
                if self.rg(*z) && zraw > T::zero() {
                    let dz = g.iter().zip(xv.iter()).fold(T::zero(), |a, (&gv, &v)| {
                        if v.abs() > zt {
                            a - v.signum() * gv
                        } else {
                            a
                        }
                    });
                    out.push((*z, Tensor::from_elem(self.value(*z).raw_dim(), dz)));
                }
            }
            Op::ShiftRelu { x, z } => {
                let zraw = self.scalar_of(*z);
                let zt = effective_threshold(zraw);
                let xv = self.value(*x);
                if self.rg(*x) {
                    let mut d = g.clone();
                    d.zip_mut_with(xv, |gv, &v| {
                        if v <= zt {
                            *gv = T::zero()
                        }
                    });
                    out.push((*x, d));
                }
                if self.rg(*z) && zraw > T::zero() {
                    let dz = g
                        .iter()
                        .zip(xv.iter())
                        .fold(T::zero(), |a, (&gv, &v)| if v > zt { a - gv } else { a });
                    out.push((*z, Tensor::from_elem(self.value(*z).raw_dim(), dz)));
                }
            }
            Op::ScaleAdd { x, scale } => {
                let c = *scale;
                out.push((*x, g.mapv(|v| v * c)));
            }
            Op::Reshape(x) => {
                out.push((*x, reshaped(g, self.shape(*x))));
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let d = g.view().permuted_axes(IxDyn(&inverse)).as_standard_layout().into_owned();
                out.push((*x, d));
            }
            Op::Sum(x) => {
                let gv = self.scalar_of_tensor(g);
                out.push((*x, Tensor::from_elem(self.value(*x).raw_dim(), gv)));
            }
            Op::SumSquares(x) => {
                let gv = self.scalar_of_tensor(g);
                let two = T::lit(2.0);
                out.push((*x, self.value(*x).mapv(|v| two * v * gv)));
            }
        }
        for (v, d) in out {
            self.accumulate(v, d);
        }
    }

    fn scalar_of_tensor(&self, t: &Tensor<T>) -> T {
        *t.iter().next().expect("single element")
    }
}
