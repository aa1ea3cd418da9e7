//! Per-feature signal/noise power estimation and the closed-form Wiener
//! deconvolution operator, applied in the Fourier domain to every feature
//! plane: `response = conj(F(K)) / (|F(K)|^2 + s_n/s_x)`.

use num_complex::Complex;
use rayon::prelude::*;

use crate::bank::FeatureStack;
use crate::convolve::{Boundary, Stencil};
use crate::error::{Error, Result};
use crate::fft::{filter_plane, kernel_spectrum};
use crate::image::Image;
use crate::kernel::Kernel;

/// Floor added to every denominator so zero-noise operators stay finite at
/// spectral zeros of the kernel.
pub const DENOM_EPSILON: f64 = 1e-12;

/// Floor for the signal power of degenerate (constant) feature planes.
pub const SX_FLOOR: f64 = 1e-12;

/// How the regularization ratio is formed from the estimates. `s_x` is
/// always recorded as the feature standard deviation; with `squared_sx`
/// the denominator uses its square (a power, matching the units of `s_n`),
/// which is the default because the mixed-unit variant systematically
/// under-regularizes. The literal mixed-unit ratio stays available for
/// ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsConfig {
    pub squared_sx: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { squared_sx: true }
    }
}

/// Per-feature signal and noise statistics feeding the Wiener denominator:
/// `s_x` the standard deviation of each blurry feature plane, `s_n` the
/// estimated noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerStats {
    s_x: Vec<f64>,
    s_n: Vec<f64>,
    squared_sx: bool,
}

impl WienerStats {
    pub fn new(s_x: Vec<f64>, s_n: Vec<f64>, cfg: StatsConfig) -> Result<WienerStats> {
        if s_x.len() != s_n.len() || s_x.is_empty() {
            return Err(Error::dimension("stats vectors must be non-empty and equal"));
        }
        if !s_x.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::numeric("signal powers must be finite and positive"));
        }
        if !s_n.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::numeric("noise powers must be finite and non-negative"));
        }
        Ok(WienerStats {
            s_x,
            s_n,
            squared_sx: cfg.squared_sx,
        })
    }

    pub fn len(&self) -> usize {
        self.s_x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.s_x.is_empty()
    }
    pub fn s_x(&self, i: usize) -> f64 {
        self.s_x[i]
    }
    pub fn s_n(&self, i: usize) -> f64 {
        self.s_n[i]
    }

    /// The denominator ratio `s_n / s_x` (or `s_n / s_x^2`).
    pub fn ratio(&self, i: usize) -> f64 {
        let d = if self.squared_sx {
            self.s_x[i] * self.s_x[i]
        } else {
            self.s_x[i]
        };
        self.s_n[i] / d
    }

    /// The same regularization ratio for every feature.
    pub fn uniform(m: usize, ratio: f64) -> Result<WienerStats> {
        if !(ratio >= 0.0) || !ratio.is_finite() {
            return Err(Error::parameter("ratio must be finite and non-negative"));
        }
        WienerStats::new(
            vec![1.0; m],
            vec![ratio; m],
            StatsConfig { squared_sx: false },
        )
    }
}

/// Either estimate the powers from the blurry features or override the
/// ratio s_n/s_x with a fixed value (the CLI's `--snr-ratio`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatsOrRatio {
    Estimate(StatsConfig),
    Fixed(f64),
}

impl Default for StatsOrRatio {
    fn default() -> Self {
        StatsOrRatio::Estimate(StatsConfig::default())
    }
}

impl StatsOrRatio {
    pub fn resolve(&self, stack: &FeatureStack) -> Result<WienerStats> {
        match self {
            StatsOrRatio::Estimate(cfg) => Ok(estimate_stats(stack, *cfg)),
            StatsOrRatio::Fixed(ratio) => WienerStats::uniform(stack.m(), *ratio),
        }
    }
}

/// Estimate the signal power as the standard deviation of each blurry
/// feature plane and the noise power as the variance of the plane minus
/// its 3x3 box-mean (an i.i.d.-noise detector: that difference carries
/// 8/9 of the noise variance).
pub fn estimate_stats(stack: &FeatureStack, cfg: StatsConfig) -> WienerStats {
    let (h, w) = (stack.height(), stack.width());
    let box3 = Stencil::box3();
    let mut s_x = Vec::with_capacity(stack.m());
    let mut s_n = Vec::with_capacity(stack.m());
    for plane in stack.planes() {
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        s_x.push(var.sqrt().max(SX_FLOOR));

        let smoothed = box3.apply(h, w, plane, Boundary::Circular);
        let diffs: Vec<f64> = plane.iter().zip(&smoothed).map(|(a, b)| a - b).collect();
        let dmean = diffs.iter().sum::<f64>() / n;
        let dvar = diffs.iter().map(|v| (v - dmean) * (v - dmean)).sum::<f64>() / n;
        s_n.push(dvar);
    }
    WienerStats {
        s_x,
        s_n,
        squared_sx: cfg.squared_sx,
    }
}

/// The frequency response `conj(F(K)) / (|F(K)|^2 + lambda_i)` on an
/// image-extent grid, one regularization ratio per feature.
#[derive(Debug, Clone)]
pub struct WienerOperator {
    height: usize,
    width: usize,
    fk: Vec<Complex<f64>>,
    lambda: Vec<f64>,
}

/// Build the per-feature deconvolution operator for a kernel at the given
/// extent.
pub fn build_operator(
    k: &Kernel,
    stats: &WienerStats,
    extent: (usize, usize),
) -> Result<WienerOperator> {
    let (height, width) = extent;
    let fk = kernel_spectrum(k, height, width)?;
    let lambda = (0..stats.len()).map(|i| stats.ratio(i)).collect();
    Ok(WienerOperator {
        height,
        width,
        fk: fk.values().to_vec(),
        lambda,
    })
}

impl WienerOperator {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn features(&self) -> usize {
        self.lambda.len()
    }
    pub fn lambda(&self, i: usize) -> f64 {
        self.lambda[i]
    }

    /// Materialize the response grid for feature `i`.
    pub fn response(&self, i: usize) -> Vec<Complex<f64>> {
        let lam = self.lambda[i];
        self.fk
            .iter()
            .map(|g| g.conj() / (g.norm_sqr() + lam + DENOM_EPSILON))
            .collect()
    }

    /// Responses for all features (shared by the training graph).
    pub fn responses(&self) -> Vec<Vec<Complex<f64>>> {
        (0..self.features()).map(|i| self.response(i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.features()).all(|i| self.response(i).iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

/// Deconvolve every feature plane with its operator response (the
/// frequency-domain form of the per-feature normal equations).
pub fn deconvolve_features(stack: &FeatureStack, op: &WienerOperator) -> Result<FeatureStack> {
    if stack.height() != op.height || stack.width() != op.width {
        return Err(Error::dimension(format!(
            "stack extent {}x{} does not match operator {}x{}",
            stack.height(),
            stack.width(),
            op.height,
            op.width
        )));
    }
    if stack.m() != op.features() {
        return Err(Error::dimension(format!(
            "stack has {} planes, operator {}",
            stack.m(),
            op.features()
        )));
    }
    let (h, w) = (stack.height(), stack.width());
    let planes: Vec<Result<Vec<f64>>> = (0..stack.m())
        .into_par_iter()
        .map(|i| filter_plane(h, w, stack.plane(i), &op.response(i)))
        .collect();
    let mut data = Vec::with_capacity(stack.m() * h * w);
    for p in planes {
        data.extend(p?);
    }
    FeatureStack::new(stack.m(), h, w, data, stack.provenance().clone())
}

/// Classical image-space Wiener deconvolution: the feature path with the
/// intensity bank. With `ReplicatePadCrop` the image is replicate-padded by
/// the kernel radius, edge-tapered, deconvolved circularly, and cropped
/// back; stats are estimated on the tapered planes.
pub fn wiener_image(
    y: &Image,
    k: &Kernel,
    reg: StatsOrRatio,
    boundary: Boundary,
) -> Result<Image> {
    if !k.fits(y.height(), y.width()) {
        return Err(Error::dimension("kernel larger than image"));
    }
    let (work, crop) = match boundary {
        Boundary::Circular => (y.clone(), None),
        Boundary::ReplicatePadCrop => {
            let (rh, rw) = k.radius();
            let padded = y.pad_replicate(rh, rh, rw, rw);
            let tapered = crate::convolve::edge_taper(&padded, k)?;
            (tapered, Some((rh, rw)))
        }
    };
    let bank = crate::bank::builtin_bank(crate::bank::BankKind::Intensity)?;
    let stack = crate::bank::apply_bank(&bank, &work, Boundary::Circular)?;
    let stats = reg.resolve(&stack)?;
    let op = build_operator(k, &stats, (work.height(), work.width()))?;
    let dec = deconvolve_features(&stack, &op)?;
    let img = Image::new(
        work.height(),
        work.width(),
        y.channels(),
        dec.data().to_vec(),
    )?;
    let out = match crop {
        Some((rh, rw)) => img.crop(rh, rw, y.height(), y.width())?,
        None => img,
    };
    out.assert_finite("wiener output")?;
    Ok(out)
}
