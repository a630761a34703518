//! Literal ADMM solvers for the convolutional-sparse-coding endmember
//! (EE) and abundance (AE) problems with known dictionaries.
//!
//! Both problems have the form
//!
//! ```text
//! min_Γ ½‖y − M vec(Γ)‖² + λ‖Γ‖₁        (AE additionally: Γ ≥ 0)
//! ```
//!
//! where `M` chains the dense convolution operator with the known mixing
//! factor: `M = (Aᵀ ⊗ I_P) D_E` for EE (target `vec(Yᵀ)`) and
//! `M = (E ⊗ I_N) D_A` for AE (target `vec(Y)`). Codes are laid out as
//! `(kernel, endmember, spectral)` for EE and
//! `(kernel, endmember, row, col)` for AE, each endmember row/plane being
//! synthesized independently by the shared kernels.
//!
//! Everything here builds explicit dense matrices and is meant for
//! oracle-scale instances only.

use ndarray::{Array1, Array2, Array3, ArrayView2};

use crate::hsi::{AbundanceMatrix, EndmemberMatrix, HsiCube};
use crate::linalg::{power_iteration, Cholesky};
use crate::{Error, Result, Scalar};

/// Upper bound on the number of entries of any dense operator built here.
pub const MAX_DENSE_ENTRIES: usize = 1_000_000;

const POWER_ITERATIONS: usize = 50;

fn guard(rows: usize, cols: usize) -> Result<()> {
    if rows.saturating_mul(cols) > MAX_DENSE_ENTRIES {
        return Err(Error::Config(format!(
            "dense operator {rows}×{cols} exceeds {MAX_DENSE_ENTRIES} entries"
        )));
    }
    Ok(())
}

/// A bank of convolution kernels with an implied dense operator.
pub trait ConvDictionary<T> {
    fn kernel_count(&self) -> usize;

    /// Shape of the sparse code that synthesizes a signal of `target` shape.
    fn code_shape(&self, target: &[usize]) -> Result<Vec<usize>>;

    /// Explicit matrix mapping `vec(Γ)` to the synthesized signal.
    fn dense_operator(&self, target: &[usize]) -> Result<Array2<T>>;
}

/// Free-function form of [`ConvDictionary::dense_operator`].
pub fn dense_operator<T, D: ConvDictionary<T>>(d: &D, target: &[usize]) -> Result<Array2<T>> {
    d.dense_operator(target)
}

/// One-dimensional kernels `m × k` acting along the spectral axis.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDictionary1D<T> {
    kernels: Array2<T>,
}

impl<T: Scalar> ConvDictionary1D<T> {
    pub fn new(kernels: Array2<T>) -> Result<Self> {
        let (m, k) = kernels.dim();
        if m == 0 || k % 2 == 0 {
            return Err(Error::Config(format!("1D dictionary needs m ≥ 1 and odd k, got {m}×{k}")));
        }
        Ok(ConvDictionary1D { kernels })
    }

    /// Single centered unit impulse of length `k`.
    pub fn delta(k: usize) -> Result<Self> {
        let mut kernels = Array2::zeros((1, k.max(1)));
        kernels[[0, k / 2]] = T::one();
        Self::new(kernels)
    }

    pub fn kernels(&self) -> &Array2<T> {
        &self.kernels
    }
}

impl<T: Scalar> ConvDictionary<T> for ConvDictionary1D<T> {
    fn kernel_count(&self) -> usize {
        self.kernels.nrows()
    }

    fn code_shape(&self, target: &[usize]) -> Result<Vec<usize>> {
        match *target {
            [r, p] => Ok(vec![self.kernel_count(), r, p]),
            _ => Err(Error::shape("ConvDictionary1D", target, &[0, 0])),
        }
    }

    /// `target = [R, P]`; rows index `(r, p)`, columns `(i, r, p')`.
    fn dense_operator(&self, target: &[usize]) -> Result<Array2<T>> {
        let code = self.code_shape(target)?;
        let (m, r, p) = (code[0], code[1], code[2]);
        guard(r * p, m * r * p)?;
        let k = self.kernels.ncols();
        let c = (k / 2) as isize;
        let mut d = Array2::zeros((r * p, m * r * p));
        for row in 0..r {
            for out in 0..p {
                for i in 0..m {
                    for tap in 0..k {
                        let src = out as isize + tap as isize - c;
                        if src < 0 || src >= p as isize {
                            continue;
                        }
                        d[[row * p + out, (i * r + row) * p + src as usize]] = self.kernels[[i, tap]];
                    }
                }
            }
        }
        Ok(d)
    }
}

/// Two-dimensional kernels `m × k × k` acting on abundance planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvDictionary2D<T> {
    kernels: Array3<T>,
}

impl<T: Scalar> ConvDictionary2D<T> {
    pub fn new(kernels: Array3<T>) -> Result<Self> {
        let (m, kh, kw) = kernels.dim();
        if m == 0 || kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!(
                "2D dictionary needs m ≥ 1 and odd square kernels, got {m}×{kh}×{kw}"
            )));
        }
        Ok(ConvDictionary2D { kernels })
    }

    pub fn delta(k: usize) -> Result<Self> {
        let k = k.max(1);
        let mut kernels = Array3::zeros((1, k, k));
        kernels[[0, k / 2, k / 2]] = T::one();
        Self::new(kernels)
    }

    pub fn kernels(&self) -> &Array3<T> {
        &self.kernels
    }
}

impl<T: Scalar> ConvDictionary<T> for ConvDictionary2D<T> {
    fn kernel_count(&self) -> usize {
        self.kernels.dim().0
    }

    fn code_shape(&self, target: &[usize]) -> Result<Vec<usize>> {
        match *target {
            [r, h, w] => Ok(vec![self.kernel_count(), r, h, w]),
            _ => Err(Error::shape("ConvDictionary2D", target, &[0, 0, 0])),
        }
    }

    /// `target = [R, H, W]`; rows index `(r, y, x)`, columns `(i, r, y', x')`.
    fn dense_operator(&self, target: &[usize]) -> Result<Array2<T>> {
        let code = self.code_shape(target)?;
        let (m, r, h, w) = (code[0], code[1], code[2], code[3]);
        let plane = h * w;
        guard(r * plane, m * r * plane)?;
        let k = self.kernels.dim().1;
        let c = (k / 2) as isize;
        let mut d = Array2::zeros((r * plane, m * r * plane));
        for ch in 0..r {
            for y in 0..h {
                for x in 0..w {
                    let row = ch * plane + y * w + x;
                    for i in 0..m {
                        for dy in 0..k {
                            let sy = y as isize + dy as isize - c;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for dx in 0..k {
                                let sx = x as isize + dx as isize - c;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let col = (i * r + ch) * plane + sy as usize * w + sx as usize;
                                d[[row, col]] = self.kernels[[i, dy, dx]];
                            }
                        }
                    }
                }
            }
        }
        Ok(d)
    }
}

/// Solver hyperparameters. `lipschitz = None` selects the largest
/// eigenvalue of `MᵀM + ρI` (power iteration).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmConfig<T> {
    pub lambda: T,
    pub rho: T,
    pub lipschitz: Option<T>,
    pub iters: usize,
}

impl<T: Scalar> AdmmConfig<T> {
    pub fn new(lambda: T, rho: T, iters: usize) -> Self {
        AdmmConfig { lambda, rho, lipschitz: None, iters }
    }
}

/// ADMM iterate; `gamma`, `omega` and `u` are flattened codes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState<T> {
    pub gamma: Array1<T>,
    pub omega: Array1<T>,
    pub u: Array1<T>,
    pub iteration: usize,
}

impl<T: Scalar> AdmmState<T> {
    pub fn zeros(n: usize) -> Self {
        AdmmState {
            gamma: Array1::zeros(n),
            omega: Array1::zeros(n),
            u: Array1::zeros(n),
            iteration: 0,
        }
    }

    /// Primal residual `‖Γ − Ω‖₂`.
    pub fn residual(&self) -> T {
        let d = &self.gamma - &self.omega;
        d.dot(&d).sqrt()
    }
}

/// Prepared linearized-ADMM iteration for one MCU subproblem.
#[derive(Clone, Debug)]
pub struct McuAdmm<T> {
    system: Array2<T>,
    target: Array1<T>,
    system_t_target: Array1<T>,
    normal: Cholesky<T>,
    lambda: T,
    rho: T,
    lipschitz: T,
    nonnegative: bool,
    code_shape: Vec<usize>,
}

/// `(X ⊗ I_len) · D` without forming the Kronecker product.
fn kron_identity_times<T: Scalar>(x: ArrayView2<'_, T>, len: usize, d: &Array2<T>) -> Result<Array2<T>> {
    let (rows, inner) = x.dim();
    guard(rows * len, d.ncols())?;
    let mut out = Array2::zeros((rows * len, d.ncols()));
    for n in 0..rows {
        for r in 0..inner {
            let c = x[[n, r]];
            if c == T::zero() {
                continue;
            }
            for p in 0..len {
                let mut dst = out.row_mut(n * len + p);
                dst.scaled_add(c, &d.row(r * len + p));
            }
        }
    }
    Ok(out)
}

impl<T: Scalar> McuAdmm<T> {
    fn build(
        system: Array2<T>,
        target: Array1<T>,
        code_shape: Vec<usize>,
        cfg: &AdmmConfig<T>,
        nonnegative: bool,
    ) -> Result<Self> {
        if !(cfg.rho > T::zero()) {
            return Err(Error::Config("ADMM penalty ρ must be positive".into()));
        }
        if cfg.lambda < T::zero() {
            return Err(Error::Config("ADMM sparsity weight λ must be nonnegative".into()));
        }
        let n = system.ncols();
        guard(n, n)?;
        let mut normal = system.t().dot(&system);
        for i in 0..n {
            normal[[i, i]] += cfg.rho;
        }
        let lipschitz = match cfg.lipschitz {
            Some(l) if l > T::zero() => l,
            Some(_) => return Err(Error::Config("ADMM step constant L must be positive".into())),
            None => power_iteration(normal.view(), POWER_ITERATIONS),
        };
        let chol = Cholesky::factor(normal.view())
            .map_err(|e| Error::Numeric(format!("ADMM normal matrix is not SPD despite ρ > 0: {e}")))?;
        let system_t_target = system.t().dot(&target);
        Ok(McuAdmm {
            system,
            target,
            system_t_target,
            normal: chol,
            lambda: cfg.lambda,
            rho: cfg.rho,
            lipschitz,
            nonnegative,
            code_shape,
        })
    }

    /// Endmember problem: `min ½‖Yᵀ − Aᵀ D_E Γ‖² + λ‖Γ‖₁`.
    pub fn endmember(
        y: &HsiCube<T>,
        a: &AbundanceMatrix<T>,
        d: &ConvDictionary1D<T>,
        cfg: &AdmmConfig<T>,
    ) -> Result<Self> {
        let (p, n) = (y.bands(), y.pixels());
        if a.pixels() != n {
            return Err(Error::shape("admm_ee", &[p, n], a.matrix().shape()));
        }
        let r = a.count();
        let de = d.dense_operator(&[r, p])?;
        let system = kron_identity_times(a.matrix().t(), p, &de)?;
        let target: Array1<T> = y.flat().t().iter().copied().collect();
        Self::build(system, target, d.code_shape(&[r, p])?, cfg, false)
    }

    /// Abundance problem: `min ½‖Y − E D_A Γ‖² + λ‖Γ‖₁, Γ ≥ 0`.
    pub fn abundance(
        y: &HsiCube<T>,
        e: &EndmemberMatrix<T>,
        d: &ConvDictionary2D<T>,
        cfg: &AdmmConfig<T>,
    ) -> Result<Self> {
        let (p, n) = (y.bands(), y.pixels());
        if e.bands() != p {
            return Err(Error::shape("admm_ae", &[p, n], e.matrix().shape()));
        }
        let target_shape = [e.count(), y.height(), y.width()];
        let da = d.dense_operator(&target_shape)?;
        let system = kron_identity_times(e.matrix().view(), n, &da)?;
        let target: Array1<T> = y.flat().iter().copied().collect();
        Self::build(system, target, d.code_shape(&target_shape)?, cfg, true)
    }

    pub fn code_len(&self) -> usize {
        self.system.ncols()
    }

    pub fn code_shape(&self) -> &[usize] {
        &self.code_shape
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn system(&self) -> &Array2<T> {
        &self.system
    }

    /// `(MᵀM + ρI)⁻¹`, the operator the unrolled layers learn to imitate.
    pub fn normal_inverse(&self) -> Array2<T> {
        self.normal.inverse()
    }

    pub fn initial_state(&self) -> AdmmState<T> {
        AdmmState::zeros(self.code_len())
    }

    /// One sweep of the Ω-, Γ- and u-updates.
    pub fn step(&self, s: &mut AdmmState<T>) {
        let rhs = &self.system_t_target + &((&s.gamma + &s.u) * self.rho);
        s.omega = self.normal.solve(rhs.view());
        let step = self.rho / self.lipschitz;
        let threshold = self.lambda / self.lipschitz;
        let one = T::one();
        let mut gamma = Array1::zeros(s.gamma.len());
        for i in 0..gamma.len() {
            let v = (one - step) * s.gamma[i] + step * (s.omega[i] - s.u[i]);
            let m = v.abs() - threshold;
            let mut g = if m > T::zero() { v.signum() * m } else { T::zero() };
            if self.nonnegative && g < T::zero() {
                g = T::zero();
            }
            gamma[i] = g;
        }
        s.gamma = gamma;
        s.u = &s.u + &(&s.gamma - &s.omega);
        s.iteration += 1;
    }

    /// `½‖y − MΓ‖² + λ‖Γ‖₁`.
    pub fn objective(&self, gamma: &Array1<T>) -> T {
        let r = &self.target - &self.system.dot(gamma);
        T::lit(0.5) * r.dot(&r) + self.lambda * gamma.iter().fold(T::zero(), |a, v| a + v.abs())
    }

    pub fn run(&self, iters: usize) -> AdmmState<T> {
        let mut s = self.initial_state();
        for _ in 0..iters {
            self.step(&mut s);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct EeSolution<T> {
    pub state: AdmmState<T>,
    pub endmembers: EndmemberMatrix<T>,
    pub objective: T,
}

#[derive(Clone, Debug)]
pub struct AeSolution<T> {
    pub state: AdmmState<T>,
    pub abundances: AbundanceMatrix<T>,
    pub objective: T,
}

/// Runs the endmember ADMM from all-zero state; returns `Γ_E` and
/// `Ê = (D_E Γ_E)ᵀ` clipped at zero.
pub fn admm_ee<T: Scalar>(
    y: &HsiCube<T>,
    a: &AbundanceMatrix<T>,
    d: &ConvDictionary1D<T>,
    cfg: &AdmmConfig<T>,
) -> Result<EeSolution<T>> {
    let solver = McuAdmm::endmember(y, a, d, cfg)?;
    let state = solver.run(cfg.iters);
    let (r, p) = (a.count(), y.bands());
    let et = d.dense_operator(&[r, p])?.dot(&state.gamma);
    let e = Array2::from_shape_vec((r, p), et.to_vec())
        .expect("operator rows match R·P")
        .t()
        .mapv(|v| v.max(T::zero()));
    let objective = solver.objective(&state.gamma);
    Ok(EeSolution { state, endmembers: EndmemberMatrix::new(e), objective })
}

/// Runs the abundance ADMM; `Γ_A ≥ 0` holds after every iteration and
/// `Â = D_A Γ_A`.
pub fn admm_ae<T: Scalar>(
    y: &HsiCube<T>,
    e: &EndmemberMatrix<T>,
    d: &ConvDictionary2D<T>,
    cfg: &AdmmConfig<T>,
) -> Result<AeSolution<T>> {
    let solver = McuAdmm::abundance(y, e, d, cfg)?;
    let state = solver.run(cfg.iters);
    let (r, h, w) = (e.count(), y.height(), y.width());
    let a = d.dense_operator(&[r, h, w])?.dot(&state.gamma);
    let a = Array2::from_shape_vec((r, h * w), a.to_vec()).expect("operator rows match R·N");
    let objective = solver.objective(&state.gamma);
    Ok(AeSolution { state, abundances: AbundanceMatrix::new(a, h, w)?, objective })
}
