//! Unrolled ADMM networks: UEDIP (endmembers), UADIP (abundances) and
//! their assembly NBA, which reconstructs `Ŷ = Ê Â`.
//!
//! Each UEDIP layer computes
//!
//! ```text
//! B  = shared + s1 (Γ + u)              shared = F1 ∗ (A1 × Yᵀ), computed once
//! Ω  = F2 ∗ (A2 ×_R (F3 ∗ B))
//! Γ' = Soft_{s2}((1 − s3) Γ + s3 (Ω − u))
//! u' = u + (Γ' − Ω)
//! ```
//!
//! with codes of shape `(m_E, R, P)`, 1D convolutions along the spectral
//! axis and `A2` mixing along the endmember axis. The output is
//! `Ê = sigmoid(F_out ∗ Γ)ᵀ`. UADIP is the same recipe on
//! `(m_A, N1, N2)` codes with 2D convolutions, `E2` mixing code channels,
//! a shifted ReLU in place of the soft threshold, and a softmax over the
//! endmember axis at the output.
//!
//! Parameter containers are generic over the leaf type so the same
//! structure holds arrays (`Nba<Tensor<T>>`), graph handles
//! (`Nba<Var>`) or gradients.

use ndarray::{Array2, IxDyn};
use rand::Rng;

use crate::hsi::{AbundanceMatrix, EndmemberMatrix, HsiCube};
use crate::ndgraph::{Graph, Var};
use crate::{Error, Result, Scalar, Tensor};

/// Network geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub endmembers: usize,
    pub layers_e: usize,
    pub layers_a: usize,
    pub kernels_e: usize,
    pub kernels_a: usize,
    pub ksize_e: usize,
    pub ksize_a: usize,
}

impl NetShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.ksize_e.is_multiple_of(2) || self.ksize_a.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel sizes must be odd (k_E = {}, k_A = {})",
                self.ksize_e, self.ksize_a
            )));
        }
        let dims = [
            self.bands,
            self.height,
            self.width,
            self.endmembers,
            self.kernels_e,
            self.kernels_a,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UedipLayer<P> {
    pub a2: P,
    pub f2: P,
    pub f3: P,
    pub s1: P,
    pub s2: P,
    pub s3: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Uedip<P> {
    pub a1: P,
    pub f1: P,
    pub layers: Vec<UedipLayer<P>>,
    pub f_out: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UadipLayer<P> {
    pub e2: P,
    pub u2: P,
    pub u3: P,
    pub v1: P,
    pub v2: P,
    pub v3: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Uadip<P> {
    pub e1: P,
    pub u1: P,
    pub layers: Vec<UadipLayer<P>>,
    pub u_out: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nba<P> {
    pub uedip: Uedip<P>,
    pub uadip: Uadip<P>,
}

pub type UedipParams<T> = Uedip<Tensor<T>>;
pub type UadipParams<T> = Uadip<Tensor<T>>;
pub type NbaParams<T> = Nba<Tensor<T>>;

impl<P> UedipLayer<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> UedipLayer<Q> {
        UedipLayer {
            a2: f(&self.a2),
            f2: f(&self.f2),
            f3: f(&self.f3),
            s1: f(&self.s1),
            s2: f(&self.s2),
            s3: f(&self.s3),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        for (n, p) in [
            ("a2", &self.a2),
            ("f2", &self.f2),
            ("f3", &self.f3),
            ("s1", &self.s1),
            ("s2", &self.s2),
            ("s3", &self.s3),
        ] {
            out.push((format!("{prefix}.{n}"), p));
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([
            &mut self.a2,
            &mut self.f2,
            &mut self.f3,
            &mut self.s1,
            &mut self.s2,
            &mut self.s3,
        ]);
    }
}

impl<P> UadipLayer<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> UadipLayer<Q> {
        UadipLayer {
            e2: f(&self.e2),
            u2: f(&self.u2),
            u3: f(&self.u3),
            v1: f(&self.v1),
            v2: f(&self.v2),
            v3: f(&self.v3),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        for (n, p) in [
            ("e2", &self.e2),
            ("u2", &self.u2),
            ("u3", &self.u3),
            ("v1", &self.v1),
            ("v2", &self.v2),
            ("v3", &self.v3),
        ] {
            out.push((format!("{prefix}.{n}"), p));
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([
            &mut self.e2,
            &mut self.u2,
            &mut self.u3,
            &mut self.v1,
            &mut self.v2,
            &mut self.v3,
        ]);
    }
}

impl<P> Uedip<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Uedip<Q> {
        Uedip {
            a1: f(&self.a1),
            f1: f(&self.f1),
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            f_out: f(&self.f_out),
        }
    }

    fn named_into<'a>(&'a self, out: &mut Vec<(String, &'a P)>) {
        out.push(("uedip.a1".into(), &self.a1));
        out.push(("uedip.f1".into(), &self.f1));
        for (j, l) in self.layers.iter().enumerate() {
            l.named(&format!("uedip.layer{j}"), out);
        }
        out.push(("uedip.f_out".into(), &self.f_out));
    }

    fn leaves_mut_into<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.push(&mut self.a1);
        out.push(&mut self.f1);
        for l in &mut self.layers {
            l.leaves_mut(out);
        }
        out.push(&mut self.f_out);
    }
}

impl<P> Uadip<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Uadip<Q> {
        Uadip {
            e1: f(&self.e1),
            u1: f(&self.u1),
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            u_out: f(&self.u_out),
        }
    }

    fn named_into<'a>(&'a self, out: &mut Vec<(String, &'a P)>) {
        out.push(("uadip.e1".into(), &self.e1));
        out.push(("uadip.u1".into(), &self.u1));
        for (j, l) in self.layers.iter().enumerate() {
            l.named(&format!("uadip.layer{j}"), out);
        }
        out.push(("uadip.u_out".into(), &self.u_out));
    }

    fn leaves_mut_into<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.push(&mut self.e1);
        out.push(&mut self.u1);
        for l in &mut self.layers {
            l.leaves_mut(out);
        }
        out.push(&mut self.u_out);
    }
}

impl<P> Nba<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Nba<Q> {
        Nba { uedip: self.uedip.map(f), uadip: self.uadip.map(f) }
    }

    /// Leaves with dotted names, in a fixed traversal order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.uedip.named_into(&mut out);
        self.uadip.named_into(&mut out);
        out
    }

    /// Mutable leaves in the same order as [`Nba::named`].
    pub fn leaves_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.uedip.leaves_mut_into(&mut out);
        self.uadip.leaves_mut_into(&mut out);
        out
    }
}

fn zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(IxDyn(shape))
}

fn scalar<T: Scalar>(v: f64) -> Tensor<T> {
    Tensor::from_elem(IxDyn(&[]), T::lit(v))
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let bound = gain / (fan_in.max(1) as f64).sqrt();
    Tensor::from_shape_simple_fn(IxDyn(shape), || T::lit(rng.random_range(-bound..bound)))
}

/// Variance-preserving gain for the UEDIP arrays; at unit gain the code
/// starts below `S2_INIT` when `k_E = 5`.
const GAIN_E: f64 = 1.732_050_807_568_877_2;

const S1_INIT: f64 = 1.0;
const S2_INIT: f64 = 0.01;
const S3_INIT: f64 = 0.5;

impl<T: Scalar> Nba<Tensor<T>> {
    /// Random initialisation: UEDIP arrays uniform in `±√(3/fan_in)`, UADIP
    /// arrays in `±1/√fan_in`, step scalars at fixed starting values.
    pub fn init<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let NetShape { bands: p, endmembers: r, kernels_e: me, kernels_a: ma, ksize_e: ke, ksize_a: ka, .. } =
            *shape;
        let n = shape.pixels();
        let uedip = Uedip {
            a1: uniform(rng, &[r, n], n, GAIN_E),
            f1: uniform(rng, &[me, 1, ke], ke, GAIN_E),
            layers: (0..shape.layers_e)
                .map(|_| UedipLayer {
                    a2: uniform(rng, &[r, r], r, GAIN_E),
                    f2: uniform(rng, &[me, me, ke], me * ke, GAIN_E),
                    f3: uniform(rng, &[me, me, ke], me * ke, GAIN_E),
                    s1: scalar(S1_INIT),
                    s2: scalar(S2_INIT),
                    s3: scalar(S3_INIT),
                })
                .collect(),
            f_out: uniform(rng, &[1, me, ke], me * ke, GAIN_E),
        };
        let uadip = Uadip {
            e1: uniform(rng, &[r, p], p, 1.0),
            u1: uniform(rng, &[ma, r, ka, ka], r * ka * ka, 1.0),
            layers: (0..shape.layers_a)
                .map(|_| UadipLayer {
                    e2: uniform(rng, &[ma, ma], ma, 1.0),
                    u2: uniform(rng, &[ma, ma, ka, ka], ma * ka * ka, 1.0),
                    u3: uniform(rng, &[ma, ma, ka, ka], ma * ka * ka, 1.0),
                    v1: scalar(S1_INIT),
                    v2: scalar(S2_INIT),
                    v3: scalar(S3_INIT),
                })
                .collect(),
            u_out: uniform(rng, &[r, ma, ka, ka], ma * ka * ka, 1.0),
        };
        Ok(Nba { uedip, uadip })
    }

    /// Every array and scalar set to zero.
    pub fn zeros(shape: &NetShape) -> Result<Self> {
        shape.validate()?;
        let NetShape { bands: p, endmembers: r, kernels_e: me, kernels_a: ma, ksize_e: ke, ksize_a: ka, .. } =
            *shape;
        let n = shape.pixels();
        let uedip = Uedip {
            a1: zeros(&[r, n]),
            f1: zeros(&[me, 1, ke]),
            layers: (0..shape.layers_e)
                .map(|_| UedipLayer {
                    a2: zeros(&[r, r]),
                    f2: zeros(&[me, me, ke]),
                    f3: zeros(&[me, me, ke]),
                    s1: zeros(&[]),
                    s2: zeros(&[]),
                    s3: zeros(&[]),
                })
                .collect(),
            f_out: zeros(&[1, me, ke]),
        };
        let uadip = Uadip {
            e1: zeros(&[r, p]),
            u1: zeros(&[ma, r, ka, ka]),
            layers: (0..shape.layers_a)
                .map(|_| UadipLayer {
                    e2: zeros(&[ma, ma]),
                    u2: zeros(&[ma, ma, ka, ka]),
                    u3: zeros(&[ma, ma, ka, ka]),
                    v1: zeros(&[]),
                    v2: zeros(&[]),
                    v3: zeros(&[]),
                })
                .collect(),
            u_out: zeros(&[r, ma, ka, ka]),
        };
        Ok(Nba { uedip, uadip })
    }

    /// Number of scalar learnable parameters.
    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every array as a learnable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Nba<Var> {
        self.map(&mut |t: &Tensor<T>| g.param(t.clone()))
    }

    /// Overwrites parameters from `(name, array)` pairs, requiring the
    /// same names and shapes in the same order.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        let names: Vec<String> = self.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != named.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} arrays, network expects {}",
                named.len(),
                names.len()
            )));
        }
        for ((slot, expected), (name, value)) in self.leaves_mut().into_iter().zip(&names).zip(named) {
            if &name != expected || slot.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint entry {name} {:?} does not match {expected} {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(())
    }
}

/// `param_count` for a (θ_E, θ_A) pair.
pub fn param_count<T: Scalar>(params: &NbaParams<T>) -> usize {
    params.param_count()
}

impl Nba<Var> {
    /// Gradients of every leaf after [`Graph::backward`]; leaves that
    /// received none get zeros.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>) -> NbaParams<T> {
        self.map(&mut |v: &Var| {
            g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(*v).raw_dim()))
        })
    }
}

/// Multiplies `mat` (`R × R`) into axis 1 of a `(m, R, P)` node.
fn mix_middle_axis<T: Scalar>(g: &mut Graph<T>, mat: Var, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (m, r, p) = (s[0], s[1], s[2]);
    let t = g.permute(x, &[1, 0, 2])?;
    let t = g.reshape(t, &[r, m * p])?;
    let t = g.matmul(mat, t)?;
    let t = g.reshape(t, &[r, m, p])?;
    g.permute(t, &[1, 0, 2])
}

/// Multiplies `mat` (`m × m`) into the channel axis of a `(m, H, W)` node.
fn mix_channels<T: Scalar>(g: &mut Graph<T>, mat: Var, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (m, h, w) = (s[0], s[1], s[2]);
    let t = g.reshape(x, &[m, h * w])?;
    let t = g.matmul(mat, t)?;
    g.reshape(t, &[m, h, w])
}

/// Result of one unrolled layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerState {
    pub gamma: Var,
    pub u: Var,
    pub omega: Var,
}

/// One UEDIP layer on codes of shape `(m_E, R, P)`.
pub fn uedip_layer<T: Scalar>(
    g: &mut Graph<T>,
    shared: Var,
    gamma: Var,
    u: Var,
    layer: &UedipLayer<Var>,
) -> Result<LayerState> {
    let gu = g.add(gamma, u)?;
    let gu = g.mul_scalar(layer.s1, gu)?;
    let b = g.add(shared, gu)?;
    let x = g.conv1d(b, layer.f3)?;
    let x = mix_middle_axis(g, layer.a2, x)?;
    let omega = g.conv1d(x, layer.f2)?;
    let pre = relaxation(g, gamma, omega, u, layer.s3)?;
    let gamma_next = g.soft_threshold(pre, layer.s2)?;
    let d = g.sub(gamma_next, omega)?;
    let u_next = g.add(u, d)?;
    Ok(LayerState { gamma: gamma_next, u: u_next, omega })
}

/// One UADIP layer on codes of shape `(m_A, N1, N2)`.
pub fn uadip_layer<T: Scalar>(
    g: &mut Graph<T>,
    shared: Var,
    gamma: Var,
    u: Var,
    layer: &UadipLayer<Var>,
) -> Result<LayerState> {
    let gu = g.add(gamma, u)?;
    let gu = g.mul_scalar(layer.v1, gu)?;
    let b = g.add(shared, gu)?;
    let x = g.conv2d(b, layer.u3)?;
    let x = mix_channels(g, layer.e2, x)?;
    let omega = g.conv2d(x, layer.u2)?;
    let pre = relaxation(g, gamma, omega, u, layer.v3)?;
    let gamma_next = g.shift_relu(pre, layer.v2)?;
    let d = g.sub(gamma_next, omega)?;
    let u_next = g.add(u, d)?;
    Ok(LayerState { gamma: gamma_next, u: u_next, omega })
}

/// `(1 − s) Γ + s (Ω − u)`, written as `Γ + s (Ω − u − Γ)`.
fn relaxation<T: Scalar>(g: &mut Graph<T>, gamma: Var, omega: Var, u: Var, s: Var) -> Result<Var> {
    let d = g.sub(omega, u)?;
    let d = g.sub(d, gamma)?;
    let d = g.mul_scalar(s, d)?;
    g.add(gamma, d)
}

/// Shared UEDIP input term `F1 ∗ (A1 × Yᵀ)`, shape `(m_E, R, P)`.
pub fn uedip_shared<T: Scalar>(g: &mut Graph<T>, y_t: Var, net: &Uedip<Var>) -> Result<Var> {
    let (n, p) = (g.shape(y_t)[0], g.shape(y_t)[1]);
    if g.shape(net.a1).get(1) != Some(&n) {
        return Err(Error::shape("uedip A1 × Yᵀ", g.shape(net.a1), &[n, p]));
    }
    let r = g.shape(net.a1)[0];
    let ay = g.matmul(net.a1, y_t)?;
    let ay = g.reshape(ay, &[1, r, p])?;
    g.conv1d(ay, net.f1)
}

/// Shared UADIP input term `U1 ∗ reshape(E1 × Y)`, shape `(m_A, N1, N2)`.
pub fn uadip_shared<T: Scalar>(
    g: &mut Graph<T>,
    y: Var,
    height: usize,
    width: usize,
    net: &Uadip<Var>,
) -> Result<Var> {
    let (p, n) = (g.shape(y)[0], g.shape(y)[1]);
    if g.shape(net.e1).get(1) != Some(&p) || n != height * width {
        return Err(Error::shape("uadip E1 × Y", g.shape(net.e1), &[p, n]));
    }
    let r = g.shape(net.e1)[0];
    let ey = g.matmul(net.e1, y)?;
    let ey = g.reshape(ey, &[r, height, width])?;
    g.conv2d(ey, net.u1)
}

/// Full UEDIP on the graph. `y_t` is `Yᵀ` (`N × P`); returns `Ê` (`P × R`).
pub fn uedip_graph<T: Scalar>(g: &mut Graph<T>, y_t: Var, net: &Uedip<Var>) -> Result<Var> {
    let shared = uedip_shared(g, y_t, net)?;
    let zero = g.constant(Tensor::zeros(IxDyn(g.shape(shared))));
    let (mut gamma, mut u) = (zero, zero);
    for layer in &net.layers {
        let s = uedip_layer(g, shared, gamma, u, layer)?;
        gamma = s.gamma;
        u = s.u;
    }
    let out = g.conv1d(gamma, net.f_out)?;
    let (r, p) = (g.shape(out)[1], g.shape(out)[2]);
    let out = g.reshape(out, &[r, p])?;
    let out = g.sigmoid(out);
    g.transpose(out)
}

/// Full UADIP on the graph. `y` is `P × N`; returns `Â` (`R × N`).
pub fn uadip_graph<T: Scalar>(
    g: &mut Graph<T>,
    y: Var,
    height: usize,
    width: usize,
    net: &Uadip<Var>,
) -> Result<Var> {
    let shared = uadip_shared(g, y, height, width, net)?;
    let zero = g.constant(Tensor::zeros(IxDyn(g.shape(shared))));
    let (mut gamma, mut u) = (zero, zero);
    for layer in &net.layers {
        let s = uadip_layer(g, shared, gamma, u, layer)?;
        gamma = s.gamma;
        u = s.u;
    }
    let out = g.conv2d(gamma, net.u_out)?;
    let out = g.softmax(out, 0)?;
    let r = g.shape(out)[0];
    g.reshape(out, &[r, height * width])
}

/// Graph handles of the three NBA outputs.
#[derive(Clone, Copy, Debug)]
pub struct NbaNodes {
    pub endmembers: Var,
    pub abundances: Var,
    pub reconstruction: Var,
}

/// Builds the NBA forward pass for cube `y` onto `g`.
pub fn nba_graph<T: Scalar>(g: &mut Graph<T>, y: &HsiCube<T>, net: &Nba<Var>) -> Result<NbaNodes> {
    let flat = y.to_flat();
    let y_t = g.constant(flat.t().as_standard_layout().into_owned().into_dyn());
    let y_c = g.constant(flat.into_dyn());
    let e = uedip_graph(g, y_t, &net.uedip)?;
    let a = uadip_graph(g, y_c, y.height(), y.width(), &net.uadip)?;
    if g.shape(e)[1] != g.shape(a)[0] {
        return Err(Error::shape("nba endmember count", g.shape(e), g.shape(a)));
    }
    let yh = g.matmul(e, a)?;
    Ok(NbaNodes { endmembers: e, abundances: a, reconstruction: yh })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NbaOutputs<T> {
    pub endmembers: EndmemberMatrix<T>,
    pub abundances: AbundanceMatrix<T>,
    pub reconstruction: HsiCube<T>,
}

fn matrix_of<T: Scalar>(t: &Tensor<T>) -> Array2<T> {
    t.clone().into_dimensionality().expect("rank-2 node")
}

impl NbaNodes {
    pub fn outputs<T: Scalar>(&self, g: &Graph<T>, height: usize, width: usize) -> Result<NbaOutputs<T>> {
        Ok(NbaOutputs {
            endmembers: EndmemberMatrix::new(matrix_of(g.value(self.endmembers))),
            abundances: AbundanceMatrix::new(matrix_of(g.value(self.abundances)), height, width)?,
            reconstruction: HsiCube::from_flat(matrix_of(g.value(self.reconstruction)), height, width)?,
        })
    }
}

/// `Ê = f_θE(Y)`.
pub fn uedip_forward<T: Scalar>(y: &HsiCube<T>, params: &UedipParams<T>) -> Result<EndmemberMatrix<T>> {
    let mut g = Graph::new();
    let vars = params.map(&mut |t: &Tensor<T>| g.constant(t.clone()));
    let y_t = g.constant(y.flat().t().as_standard_layout().into_owned().into_dyn());
    let e = uedip_graph(&mut g, y_t, &vars)?;
    Ok(EndmemberMatrix::new(matrix_of(g.value(e))))
}

/// `Â = f_θA(Y)`.
pub fn uadip_forward<T: Scalar>(y: &HsiCube<T>, params: &UadipParams<T>) -> Result<AbundanceMatrix<T>> {
    let mut g = Graph::new();
    let vars = params.map(&mut |t: &Tensor<T>| g.constant(t.clone()));
    let y_c = g.constant(y.to_flat().into_dyn());
    let a = uadip_graph(&mut g, y_c, y.height(), y.width(), &vars)?;
    AbundanceMatrix::new(matrix_of(g.value(a)), y.height(), y.width())
}

/// Inference-only NBA pass.
pub fn nba_forward<T: Scalar>(y: &HsiCube<T>, params: &NbaParams<T>) -> Result<NbaOutputs<T>> {
    let mut g = Graph::new();
    let vars = params.map(&mut |t: &Tensor<T>| g.constant(t.clone()));
    let nodes = nba_graph(&mut g, y, &vars)?;
    nodes.outputs(&g, y.height(), y.width())
}
