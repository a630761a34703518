//! Synthetic scenes: patchwise two-endmember mixtures, Gaussian smoothing,
//! pixel renormalization, and additive white Gaussian noise.

use ndarray::{Array2, Array3, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::hsi::{lmm_forward, AbundanceMatrix, EndmemberMatrix, HsiCube};
use crate::metrics::angle_deg;
use crate::rng::{substream, Stream};
use crate::{Error, Result};

/// Minimum pairwise spectral angle between procedural signatures.
pub const MIN_PAIRWISE_SAD_DEG: f64 = 5.0;
/// Draw budget for the procedural rejection sampler.
pub const MAX_SIGNATURE_DRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub enum EndmemberSource {
    /// Smooth random spectra built from Gaussian bumps.
    Procedural,
    /// A `P × M` signature library; `R` distinct columns are drawn.
    Library(Array2<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Patch edge `a`.
    pub patch: usize,
    /// Patches per image side; the image is `patch · grid` pixels square.
    pub grid: usize,
    /// Fraction of the dominant endmember in each patch.
    pub gamma: f64,
    pub endmembers: usize,
    pub bands: usize,
    /// Smoothing filter edge; `a + 1` by default.
    pub filter_size: usize,
    pub filter_variance: f64,
    /// Signal-to-noise ratio in dB; `f64::INFINITY` for clean data.
    pub snr_db: f64,
    pub seed: u64,
    pub source: EndmemberSource,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patch: 10,
            grid: 10,
            gamma: 0.8,
            endmembers: 6,
            bands: 224,
            filter_size: 11,
            filter_variance: 2.0,
            snr_db: 30.0,
            seed: 0,
            source: EndmemberSource::Procedural,
        }
    }
}

impl SynthConfig {
    pub fn side(&self) -> usize {
        self.patch * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch < 2 {
            return fail(format!("patch edge must be at least 2, got {}", self.patch));
        }
        if self.grid < 1 {
            return fail("grid must be at least 1".into());
        }
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0.5, 1], got {}", self.gamma));
        }
        if self.endmembers < 2 {
            return fail(format!("need at least 2 endmembers, got {}", self.endmembers));
        }
        if self.bands < 1 || self.filter_size < 1 {
            return fail("bands and filter size must be positive".into());
        }
        if !(self.filter_variance > 0.0 && self.filter_variance.is_finite()) {
            return fail(format!("filter variance must be positive, got {}", self.filter_variance));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return fail(format!("invalid SNR {}", self.snr_db));
        }
        if let EndmemberSource::Library(lib) = &self.source {
            if lib.nrows() != self.bands {
                return fail(format!("library has {} bands, config asks for {}", lib.nrows(), self.bands));
            }
            if lib.ncols() < self.endmembers {
                return fail(format!("library has {} signatures, need {}", lib.ncols(), self.endmembers));
            }
        }
        Ok(())
    }
}

/// Piecewise abundances before smoothing: each patch mixes two distinct
/// endmembers with fractions `γ` and `1 − γ`.
pub fn patch_abundances<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<AbundanceMatrix<f64>> {
    cfg.validate()?;
    let (a, side, r) = (cfg.patch, cfg.side(), cfg.endmembers);
    let mut img = Array3::<f64>::zeros((r, side, side));
    for py in 0..cfg.grid {
        for px in 0..cfg.grid {
            let pick = sample(rng, r, 2);
            let (first, second) = (pick.index(0), pick.index(1));
            for y in py * a..(py + 1) * a {
                for x in px * a..(px + 1) * a {
                    img[[first, y, x]] = cfg.gamma;
                    img[[second, y, x]] = 1.0 - cfg.gamma;
                }
            }
        }
    }
    let flat = img.into_shape_with_order((r, side * side)).expect("contiguous");
    AbundanceMatrix::new(flat, side, side)
}

/// Unit-sum Gaussian kernel of edge `size` and variance `variance`,
/// centered at `(size − 1)/2`.
pub fn gaussian_kernel(size: usize, variance: f64) -> Array2<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k = Array2::from_shape_fn((size, size), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * variance)).exp()
    });
    let s = k.sum();
    k / s
}

/// Same-size filtering with zero padding; output pixel `(y, x)` sees
/// input `(y + i − o, x + j − o)` with `o = ⌊(size − 1)/2⌋`.
pub fn filter_same(plane: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let k = kernel.nrows();
    let o = (k - 1) / 2;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for i in 0..k {
            let sy = y + i;
            if sy < o || sy - o >= h {
                continue;
            }
            for j in 0..k {
                let sx = x + j;
                if sx < o || sx - o >= w {
                    continue;
                }
                acc += kernel[[i, j]] * plane[[sy - o, sx - o]];
            }
        }
        acc
    })
}

/// Smooths each abundance plane, then rescales each pixel to sum one.
pub fn smooth_abundances(a: &AbundanceMatrix<f64>, cfg: &SynthConfig) -> Result<AbundanceMatrix<f64>> {
    let kernel = gaussian_kernel(cfg.filter_size, cfg.filter_variance);
    let img = a.to_image();
    let mut out = Array3::<f64>::zeros(img.raw_dim());
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(img.axis_iter(Axis(0))) {
        dst.assign(&filter_same(&src.to_owned(), &kernel));
    }
    let (r, h, w) = out.dim();
    let mut flat = out.into_shape_with_order((r, h * w)).expect("contiguous");
    for mut col in flat.columns_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
    AbundanceMatrix::new(flat, h, w)
}

/// Ground-truth abundances: patch mixtures, smoothed and renormalized.
pub fn gen_abundances<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<AbundanceMatrix<f64>> {
    let raw = patch_abundances(cfg, rng)?;
    smooth_abundances(&raw, cfg)
}

fn procedural_signature<R: Rng + ?Sized>(bands: usize, rng: &mut R) -> Vec<f64> {
    let bumps = rng.random_range(3..=6);
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.03..0.25), rng.random_range(0.2..1.0)))
        .collect();
    let base = rng.random_range(0.02..0.15);
    let raw: Vec<f64> = (0..bands)
        .map(|b| {
            let l = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
            base + params.iter().map(|&(c, w, amp)| amp * (-(l - c) * (l - c) / (2.0 * w * w)).exp()).sum::<f64>()
        })
        .collect();
    let peak = raw.iter().cloned().fold(0.0, f64::max);
    let top = rng.random_range(0.5..1.0);
    raw.iter().map(|v| v / peak * top).collect()
}

/// Ground-truth endmembers from the configured source.
pub fn gen_endmembers<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<EndmemberMatrix<f64>> {
    cfg.validate()?;
    let (p, r) = (cfg.bands, cfg.endmembers);
    match &cfg.source {
        EndmemberSource::Library(lib) => {
            let mut idx = sample(rng, lib.ncols(), r).into_vec();
            idx.sort_unstable();
            Ok(EndmemberMatrix::new(lib.select(Axis(1), &idx)))
        }
        EndmemberSource::Procedural => {
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
            let mut draws = 0;
            while cols.len() < r {
                if draws == MAX_SIGNATURE_DRAWS {
                    return Err(Error::Numeric(format!(
                        "could not draw {r} signatures with pairwise SAD ≥ {MIN_PAIRWISE_SAD_DEG}° in {MAX_SIGNATURE_DRAWS} draws"
                    )));
                }
                draws += 1;
                let s = procedural_signature(p, rng);
                let sv = ndarray::ArrayView1::from(&s);
                let distinct = cols.iter().all(|c| {
                    angle_deg(ndarray::ArrayView1::from(c), sv).is_some_and(|a| a >= MIN_PAIRWISE_SAD_DEG)
                });
                if distinct {
                    cols.push(s);
                }
            }
            Ok(EndmemberMatrix::new(Array2::from_shape_fn((p, r), |(b, k)| cols[k][b])))
        }
    }
}

/// Noise variance for a target SNR: `mean(x²) / 10^(snr/10)`.
pub fn noise_variance(y: &HsiCube<f64>, snr_db: f64) -> f64 {
    let power = y.data().iter().map(|v| v * v).sum::<f64>() / y.data().len() as f64;
    power / 10f64.powf(snr_db / 10.0)
}

/// Adds white Gaussian noise at the given SNR; `∞` returns the input.
pub fn add_awgn<R: Rng + ?Sized>(y: &HsiCube<f64>, snr_db: f64, rng: &mut R) -> Result<HsiCube<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(y.clone());
    }
    let sigma = noise_variance(y, snr_db).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numeric(format!("noise distribution: {e}")))?;
    let noisy = y.data().mapv(|v| v + normal.sample(rng));
    HsiCube::new(noisy)
}

/// `10 log10(‖clean‖² / ‖noisy − clean‖²)`.
pub fn realized_snr_db(clean: &HsiCube<f64>, noisy: &HsiCube<f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for (&c, &y) in clean.data().iter().zip(noisy.data().iter()) {
        s += c * c;
        n += (y - c) * (y - c);
    }
    10.0 * (s / n).log10()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub y: HsiCube<f64>,
    pub y_clean: HsiCube<f64>,
    pub endmembers: EndmemberMatrix<f64>,
    pub abundances: AbundanceMatrix<f64>,
    /// Measured SNR of `y` against `y_clean` (`∞` when noiseless).
    pub realized_snr_db: f64,
}

/// The full pipeline. Endmembers and abundances draw from the data
/// substream, noise from the noise substream.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut data_rng: ChaCha8Rng = substream(cfg.seed, Stream::Data);
    let endmembers = gen_endmembers(cfg, &mut data_rng)?;
    let abundances = gen_abundances(cfg, &mut data_rng)?;
    let y_clean = lmm_forward(&endmembers, &abundances)?;
    let y = add_awgn(&y_clean, cfg.snr_db, &mut substream(cfg.seed, Stream::Noise))?;
    let realized_snr_db = if cfg.snr_db == f64::INFINITY { f64::INFINITY } else { realized_snr_db(&y_clean, &y) };
    Ok(SynthData { y, y_clean, endmembers, abundances, realized_snr_db })
}
