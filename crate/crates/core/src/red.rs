//! Regularization by denoising: the non-local means denoiser, the RED
//! energy, and the outer ADMM loop that wraps NBA training (NBARED).

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::hsi::{AbundanceMatrix, EndmemberMatrix};
use crate::nets::NbaOutputs;
use crate::train::{AugTerms, EpochRecord, Trainer};
use crate::{Error, Result, Scalar};

/// How the NLM filtering strength `h` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strength {
    /// Fixed `h`.
    Absolute(f64),
    /// `h = fraction · (max − min)` of each channel.
    RangeFraction(f64),
}

/// Weighting of squared differences inside a patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PatchWeighting {
    Uniform,
    /// Gaussian in the patch offset with the given standard deviation.
    Gaussian(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NlmConfig {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub strength: Strength,
    pub weighting: PatchWeighting,
}

impl Default for NlmConfig {
    fn default() -> Self {
        NlmConfig {
            patch_radius: 1,
            search_radius: 5,
            strength: Strength::RangeFraction(0.1),
            weighting: PatchWeighting::Uniform,
        }
    }
}

impl NlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 || self.search_radius < 1 {
            return Err(Error::Config("NLM radii must be at least 1".into()));
        }
        let h = match self.strength {
            Strength::Absolute(h) | Strength::RangeFraction(h) => h,
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("NLM strength must be positive, got {h}")));
        }
        if let PatchWeighting::Gaussian(s) = self.weighting {
            if !(s > 0.0) {
                return Err(Error::Config(format!("NLM patch sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }

    fn patch_weights(&self) -> Vec<f64> {
        let r = self.patch_radius as isize;
        let mut w = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                w.push(match self.weighting {
                    PatchWeighting::Uniform => 1.0,
                    PatchWeighting::Gaussian(s) => (-((dy * dy + dx * dx) as f64) / (2.0 * s * s)).exp(),
                });
            }
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }
}

static DEGENERATE_WARNED: AtomicBool = AtomicBool::new(false);

/// Channel-wise non-local means on a `C × H × W` array.
///
/// Each pixel becomes a weighted mean over its search window (clipped at
/// the border) with weights `exp(−d²/h²)`, where `d²` is the weighted mean
/// squared difference of the two patches (patch pixels past the border
/// are clamped to the edge). A constant channel is returned unchanged.
pub fn nlm_denoise<T: Scalar>(x: &Array3<T>, cfg: &NlmConfig) -> Array3<T> {
    let (c, h, w) = x.dim();
    let min_side = 2 * cfg.patch_radius + 1;
    if h < min_side || w < min_side {
        if !DEGENERATE_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("NLM skipped: {h}×{w} image is smaller than a {min_side}×{min_side} patch");
        }
        return x.clone();
    }
    let mut out = x.clone();
    for ch in 0..c {
        let plane = x.index_axis(Axis(0), ch);
        let denoised = nlm_plane(plane, cfg);
        out.index_axis_mut(Axis(0), ch).assign(&denoised);
    }
    out
}

fn nlm_plane<T: Scalar>(plane: ArrayView2<'_, T>, cfg: &NlmConfig) -> Array2<T> {
    let (h, w) = plane.dim();
    let data: Vec<f64> = plane.iter().map(|v| v.as_f64()).collect();
    let hs = match cfg.strength {
        Strength::Absolute(v) => v,
        Strength::RangeFraction(f) => {
            let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            f * (hi - lo)
        }
    };
    if !(hs > 0.0) {
        return plane.to_owned();
    }
    let inv_h2 = 1.0 / (hs * hs);
    let pw = cfg.patch_weights();
    let pr = cfg.patch_radius as isize;
    let sr = cfg.search_radius as isize;
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        data[y * w + x]
    };
    let rows: Vec<Vec<f64>> = (0..h as isize)
        .into_par_iter()
        .map(|py| {
            (0..w as isize)
                .map(|px| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for qy in (py - sr).max(0)..=(py + sr).min(h as isize - 1) {
                        for qx in (px - sr).max(0)..=(px + sr).min(w as isize - 1) {
                            let mut d2 = 0.0;
                            let mut k = 0;
                            for oy in -pr..=pr {
                                for ox in -pr..=pr {
                                    let diff = at(py + oy, px + ox) - at(qy + oy, qx + ox);
                                    d2 += pw[k] * diff * diff;
                                    k += 1;
                                }
                            }
                            let wgt = (-d2 * inv_h2).exp();
                            num += wgt * at(qy, qx);
                            den += wgt;
                        }
                    }
                    num / den
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((h, w), |(i, j)| T::lit(rows[i][j]))
}

/// A denoising operator `f_D` on `C × H × W` arrays.
pub trait Denoiser<T> {
    fn denoise(&self, x: &Array3<T>) -> Array3<T>;
}

impl<T: Scalar> Denoiser<T> for NlmConfig {
    fn denoise(&self, x: &Array3<T>) -> Array3<T> {
        nlm_denoise(x, self)
    }
}

impl<T, F: Fn(&Array3<T>) -> Array3<T>> Denoiser<T> for F {
    fn denoise(&self, x: &Array3<T>) -> Array3<T> {
        self(x)
    }
}

/// `½⟨X, X − f_D(X)⟩` given `f_D(X)`.
pub fn red_value_with<T: Scalar>(x: &Array3<T>, fx: &Array3<T>) -> T {
    let s = x.iter().zip(fx.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * (a - b));
    s * T::lit(0.5)
}

/// `½⟨X, X − f_D(X)⟩`.
pub fn red_value<T: Scalar, D: Denoiser<T> + ?Sized>(x: &Array3<T>, f_d: &D) -> T {
    red_value_with(x, &f_d.denoise(x))
}

/// Settings of the outer loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RedConfig {
    pub mu_e: f64,
    pub mu_a: f64,
    /// Number of outer iterations `T`.
    pub outer_iters: usize,
    /// Training epochs per outer iteration.
    pub inner_epochs: usize,
    /// Stop when `‖Ê−X_E‖ + ‖Â−X_A‖ < tol · (‖Ê‖ + ‖Â‖)`.
    pub tol: f64,
    pub nlm: NlmConfig,
}

impl Default for RedConfig {
    fn default() -> Self {
        RedConfig { mu_e: 0.1, mu_a: 0.1, outer_iters: 5000, inner_epochs: 1, tol: 1e-4, nlm: NlmConfig::default() }
    }
}

impl RedConfig {
    /// False when `α4 = α5 = μ_E = μ_A = 0`: the loop then degenerates to
    /// plain NBA training.
    pub fn active(&self, alpha4: f64, alpha5: f64) -> bool {
        !(alpha4 == 0.0 && alpha5 == 0.0 && self.mu_e == 0.0 && self.mu_a == 0.0)
    }

    pub fn validate(&self, alpha4: f64, alpha5: f64) -> Result<()> {
        if self.outer_iters < 1 {
            return Err(Error::Config("outer iteration count T must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("outer tolerance must be nonnegative, got {}", self.tol)));
        }
        if self.active(alpha4, alpha5) {
            check_mu(self.mu_e, "mu_E")?;
            check_mu(self.mu_a, "mu_A")?;
        }
        self.nlm.validate()
    }
}

fn check_mu(mu: f64, name: &str) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive, got {mu}")));
    }
    Ok(())
}

/// Auxiliary variables and scaled duals of the outer loop. The endmember
/// matrix is held as a `1 × P × R` gray image.
#[derive(Clone, Debug, PartialEq)]
pub struct RedState<T> {
    pub x_e: Array3<T>,
    pub x_a: Array3<T>,
    pub d_e: Array3<T>,
    pub d_a: Array3<T>,
    pub mu_e: f64,
    pub mu_a: f64,
    pub t: usize,
}

/// `P × R` endmembers as a `1 × P × R` image.
pub fn endmember_image<T: Scalar>(e: &EndmemberMatrix<T>) -> Array3<T> {
    e.matrix().clone().insert_axis(Axis(0))
}

impl<T: Scalar> RedState<T> {
    pub fn zeros(bands: usize, endmembers: usize, height: usize, width: usize, mu_e: f64, mu_a: f64) -> Result<Self> {
        check_mu(mu_e, "mu_E")?;
        check_mu(mu_a, "mu_A")?;
        let e = Array3::zeros((1, bands, endmembers));
        let a = Array3::zeros((endmembers, height, width));
        Ok(RedState { x_e: e.clone(), d_e: e, x_a: a.clone(), d_a: a, mu_e, mu_a, t: 0 })
    }

    fn check(&self, e: &Array3<T>, a: &Array3<T>) -> Result<()> {
        if e.dim() != self.x_e.dim() {
            return Err(Error::shape("red endmembers", e.shape(), self.x_e.shape()));
        }
        if a.dim() != self.x_a.dim() {
            return Err(Error::shape("red abundances", a.shape(), self.x_a.shape()));
        }
        Ok(())
    }

    /// One fixed-point sweep given `f_D(X_E)` and `f_D(X_A)` of the
    /// current auxiliaries.
    pub fn fixed_point_with(
        &mut self,
        e_hat: &Array3<T>,
        a_hat: &Array3<T>,
        fd_e: &Array3<T>,
        fd_a: &Array3<T>,
        alpha4: f64,
        alpha5: f64,
    ) -> Result<()> {
        self.check(e_hat, a_hat)?;
        self.check(fd_e, fd_a)?;
        sweep(&mut self.x_e, e_hat, &self.d_e, fd_e, alpha4, self.mu_e);
        sweep(&mut self.x_a, a_hat, &self.d_a, fd_a, alpha5, self.mu_a);
        Ok(())
    }

    /// `X ← (α f_D(X) + μ(Ê + d)) / (α + μ)` for both auxiliaries.
    pub fn fixed_point_update<D: Denoiser<T> + ?Sized>(
        &mut self,
        e_hat: &Array3<T>,
        a_hat: &Array3<T>,
        alpha4: f64,
        alpha5: f64,
        f_d: &D,
    ) -> Result<()> {
        let fd_e = f_d.denoise(&self.x_e);
        let fd_a = f_d.denoise(&self.x_a);
        self.fixed_point_with(e_hat, a_hat, &fd_e, &fd_a, alpha4, alpha5)
    }

    /// `d ← d + Ê − X` for both duals.
    pub fn dual_update(&mut self, e_hat: &Array3<T>, a_hat: &Array3<T>) -> Result<()> {
        self.check(e_hat, a_hat)?;
        Zip::from(&mut self.d_e).and(e_hat).and(&self.x_e).for_each(|d, &e, &x| *d += e - x);
        Zip::from(&mut self.d_a).and(a_hat).and(&self.x_a).for_each(|d, &a, &x| *d += a - x);
        self.t += 1;
        Ok(())
    }

    /// The penalty data for the next training epochs.
    pub fn aug_terms(&self) -> AugTerms<T> {
        let (_, p, r) = self.x_e.dim();
        let (ra, h, w) = self.x_a.dim();
        let flat = |x: &Array3<T>, rows: usize, cols: usize| {
            x.as_standard_layout().into_owned().into_shape_with_order((rows, cols)).expect("contiguous")
        };
        AugTerms {
            x_e: flat(&self.x_e, p, r),
            d_e: flat(&self.d_e, p, r),
            mu_e: self.mu_e,
            x_a: flat(&self.x_a, ra, h * w),
            d_a: flat(&self.d_a, ra, h * w),
            mu_a: self.mu_a,
        }
    }
}

fn sweep<T: Scalar>(x: &mut Array3<T>, est: &Array3<T>, d: &Array3<T>, fd: &Array3<T>, alpha: f64, mu: f64) {
    let denom = alpha + mu;
    let (ca, cm) = (T::lit(alpha / denom), T::lit(mu / denom));
    Zip::from(x).and(est).and(d).and(fd).for_each(|x, &e, &d, &f| *x = ca * f + cm * (e + d));
}

fn frob<T: Scalar>(a: &Array3<T>, b: &Array3<T>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>().sqrt()
}

fn norm<T: Scalar>(a: &Array3<T>) -> f64 {
    a.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
}

/// One row of the outer-loop trace.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterRecord {
    pub t: usize,
    pub res_e: f64,
    pub res_a: f64,
    pub red_e: f64,
    pub red_a: f64,
}

#[derive(Clone, Debug)]
pub struct RedRun<T> {
    pub outputs: NbaOutputs<T>,
    pub epochs: Vec<EpochRecord>,
    pub outer: Vec<OuterRecord>,
    /// Outer iteration at which the residual test passed, if it did.
    pub converged_at: Option<usize>,
    pub state: Option<RedState<T>>,
}

/// The outer loop: per iteration, `inner_epochs` of training against the
/// augmented loss, one fixed-point sweep, one dual update. Each training
/// forward pass is reused as the estimate for the following sweep.
pub fn nbared_run<T: Scalar, D: Denoiser<T> + ?Sized>(
    trainer: &mut Trainer<T>,
    cfg: &RedConfig,
    f_d: &D,
) -> Result<RedRun<T>> {
    let (alpha4, alpha5) = (trainer.weights().alpha4, trainer.weights().alpha5);
    cfg.validate(alpha4, alpha5)?;
    let mut epochs = Vec::with_capacity(cfg.outer_iters * cfg.inner_epochs);

    if !cfg.active(alpha4, alpha5) {
        for _ in 0..cfg.outer_iters * cfg.inner_epochs {
            epochs.push(trainer.step(None)?);
        }
        let outputs = trainer.outputs()?;
        return Ok(RedRun { outputs, epochs, outer: Vec::new(), converged_at: None, state: None });
    }

    let y = trainer.cube();
    let r = trainer.guidance().endmembers.count();
    let mut state = RedState::zeros(y.bands(), r, y.height(), y.width(), cfg.mu_e, cfg.mu_a)?;
    let mut fd_e = f_d.denoise(&state.x_e);
    let mut fd_a = f_d.denoise(&state.x_a);
    let mut outer = Vec::with_capacity(cfg.outer_iters);
    let mut converged_at = None;
    let mut fwd = trainer.forward()?;
    for t in 0..cfg.outer_iters {
        if cfg.inner_epochs > 0 {
            let aug = state.aug_terms();
            for _ in 0..cfg.inner_epochs {
                epochs.push(trainer.update(fwd, Some(&aug))?);
                fwd = trainer.forward()?;
            }
        }
        let out = fwd.outputs()?;
        let e_img = endmember_image(&out.endmembers);
        let a_img = out.abundances.to_image();
        state.fixed_point_with(&e_img, &a_img, &fd_e, &fd_a, alpha4, alpha5)?;
        fd_e = f_d.denoise(&state.x_e);
        fd_a = f_d.denoise(&state.x_a);
        state.dual_update(&e_img, &a_img)?;

        let rec = OuterRecord {
            t,
            res_e: frob(&e_img, &state.x_e),
            res_a: frob(&a_img, &state.x_a),
            red_e: red_value_with(&state.x_e, &fd_e).as_f64(),
            red_a: red_value_with(&state.x_a, &fd_a).as_f64(),
        };
        if ![rec.res_e, rec.res_a, rec.red_e, rec.red_a].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: format!("outer-loop trace at t={t}"), epoch: trainer.epoch() });
        }
        let scale = norm(&e_img) + norm(&a_img);
        let done = rec.res_e + rec.res_a < cfg.tol * scale;
        if t % 100 == 0 {
            log::debug!("outer {t}: |E-X_E| {:.3e} |A-X_A| {:.3e}", rec.res_e, rec.res_a);
        }
        outer.push(rec);
        if done {
            converged_at = Some(t);
            break;
        }
    }
    let outputs = fwd.outputs()?;
    Ok(RedRun { outputs, epochs, outer, converged_at, state: Some(state) })
}

/// Writes the outer-loop trace as CSV.
pub fn write_outer_trace<W: std::io::Write>(mut w: W, trace: &[OuterRecord]) -> Result<()> {
    writeln!(w, "t,res_E,res_A,red_E,red_A")?;
    for r in trace {
        writeln!(w, "{},{:e},{:e},{:e},{:e}", r.t, r.res_e, r.res_a, r.red_e, r.red_a)?;
    }
    Ok(())
}

/// Abundances of an `R × H × W` image.
pub fn abundance_from_image<T: Scalar>(x: &Array3<T>) -> AbundanceMatrix<T> {
    let (r, h, w) = x.dim();
    let m = x.as_standard_layout().into_owned().into_shape_with_order((r, h * w)).expect("contiguous");
    AbundanceMatrix::new(m, h, w).expect("geometry matches")
}
