use num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::kernel::Kernel;

/// Largest imaginary residue tolerated when a real inverse transform is
/// requested for a conjugate-symmetric spectrum.
pub const IMAG_RESIDUE_TOL: f64 = 1e-6;

/// Complex frequency grid in the unnormalized forward-transform convention:
/// `ifft2(fft2(p)) == p` with the `1/(H*W)` factor applied on the inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    values: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, values: Vec<Complex<f64>>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dimension("spectrum extents must be non-zero"));
        }
        if values.len() != height * width {
            return Err(Error::dimension(format!(
                "spectrum value count {} does not match {height}x{width}",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[Complex<f64>] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.values
    }

    pub fn conj(&self) -> Spectrum {
        Spectrum {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    /// Pointwise product; panics on extent mismatch in debug builds.
    pub fn mul(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::dimension("spectrum extents differ"));
        }
        Ok(Spectrum {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }
}

fn fft2_inplace(height: usize, width: usize, buf: &mut [Complex<f64>], dir: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, dir);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(width) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    // Transpose, transform the columns, transpose back.
    let mut t = transpose(height, width, buf);
    let col_fft = planner.plan_fft(height, dir);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::default());
    for col in t.chunks_exact_mut(height) {
        col_fft.process_with_scratch(col, &mut scratch);
    }
    let back = transpose(width, height, &t);
    buf.copy_from_slice(&back);
}

fn transpose(rows: usize, cols: usize, m: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut t = vec![Complex::default(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Forward 2-D DFT of a real row-major plane.
pub fn fft2(height: usize, width: usize, plane: &[f64]) -> Result<Spectrum> {
    if height == 0 || width == 0 || plane.is_empty() {
        return Err(Error::dimension("fft2 input must be non-empty"));
    }
    if plane.len() != height * width {
        return Err(Error::dimension(format!(
            "fft2 plane length {} does not match {height}x{width}",
            plane.len()
        )));
    }
    if !plane.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("fft2 input contains non-finite values"));
    }
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_inplace(height, width, &mut buf, FftDirection::Forward);
    Spectrum::new(height, width, buf)
}

/// Inverse 2-D DFT returning the complex plane, normalized by `1/(H*W)`.
pub fn ifft2_complex(spec: &Spectrum) -> Vec<Complex<f64>> {
    let mut buf = spec.values.clone();
    fft2_inplace(spec.height, spec.width, &mut buf, FftDirection::Inverse);
    let scale = 1.0 / (spec.height * spec.width) as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Inverse 2-D DFT of the spectrum of a real signal. Fails if the imaginary
/// residue exceeds [`IMAG_RESIDUE_TOL`] relative to the real magnitude.
pub fn ifft2(spec: &Spectrum) -> Result<Vec<f64>> {
    let buf = ifft2_complex(spec);
    let max_re = buf.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    let max_im = buf.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if max_im > IMAG_RESIDUE_TOL * max_re.max(1.0) {
        return Err(Error::numeric(format!(
            "imaginary residue {max_im:.3e} above tolerance for real inverse transform"
        )));
    }
    Ok(buf.into_iter().map(|v| v.re).collect())
}

/// Filter one real plane by a frequency response: `ifft2(resp .* fft2(p))`.
/// The response must be conjugate-symmetric (come from a real filter) for
/// the output to be real.
pub fn filter_plane(
    height: usize,
    width: usize,
    plane: &[f64],
    response: &[Complex<f64>],
) -> Result<Vec<f64>> {
    if response.len() != height * width {
        return Err(Error::dimension("response grid does not match plane extent"));
    }
    let mut spec = fft2(height, width, plane)?;
    for (v, r) in spec.values_mut().iter_mut().zip(response) {
        *v *= r;
    }
    ifft2(&spec)
}

/// Spectrum of a kernel zero-padded to `height x width` with its center tap
/// shifted to the origin, so the convolution theorem holds without a phase
/// ramp.
pub fn kernel_spectrum(k: &Kernel, height: usize, width: usize) -> Result<Spectrum> {
    if !k.fits(height, width) {
        return Err(Error::dimension(format!(
            "kernel {}x{} larger than target extent {height}x{width}",
            k.kh(),
            k.kw()
        )));
    }
    let (rh, rw) = k.radius();
    let mut plane = vec![0.0; height * width];
    for u in 0..k.kh() {
        for v in 0..k.kw() {
            let y = (u + height - rh) % height;
            let x = (v + width - rw) % width;
            plane[y * width + x] += k.tap(u, v);
        }
    }
    fft2(height, width, &plane)
}
