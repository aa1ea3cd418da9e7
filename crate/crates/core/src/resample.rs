use crate::error::{Error, Result};
use crate::image::Image;

/// Resampling factors supported by the pyramid machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Down2,
    Up2,
}

/// Keys cubic convolution kernel with a = -0.5, support [-2, 2].
fn cubic(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// One-dimensional resampling plan: for every output sample, a window of
/// input indices (possibly out of range, clamped on use) and normalized
/// weights. Downscaling stretches the kernel by the inverse scale so it
/// antialiases.
#[derive(Debug, Clone)]
pub struct Plan1D {
    n_in: usize,
    n_out: usize,
    windows: Vec<(isize, Vec<f64>)>,
}

impl Plan1D {
    pub fn new(n_in: usize, n_out: usize) -> Plan1D {
        let scale = n_out as f64 / n_in as f64;
        // Center-aligned mapping from output to input coordinates.
        let (kscale, support) = if scale < 1.0 {
            (scale, 2.0 / scale)
        } else {
            (1.0, 2.0)
        };
        let mut windows = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let lo = (u - support).ceil() as isize;
            let hi = (u + support).floor() as isize;
            let mut w: Vec<f64> = (lo..=hi).map(|j| cubic((u - j as f64) * kscale)).collect();
            let sum: f64 = w.iter().sum();
            for v in &mut w {
                *v /= sum;
            }
            windows.push((lo, w));
        }
        Plan1D {
            n_in,
            n_out,
            windows,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }
    pub fn n_out(&self) -> usize {
        self.n_out
    }

    #[inline]
    fn clamp(&self, j: isize) -> usize {
        j.clamp(0, self.n_in as isize - 1) as usize
    }

    /// Resample every row of a `rows x n_in` matrix to `rows x n_out`.
    pub fn apply_rows(&self, rows: usize, data: &[f64]) -> Vec<f64> {
        debug_assert_eq!(data.len(), rows * self.n_in);
        let mut out = vec![0.0; rows * self.n_out];
        for r in 0..rows {
            let src = &data[r * self.n_in..(r + 1) * self.n_in];
            let dst = &mut out[r * self.n_out..(r + 1) * self.n_out];
            for (i, (lo, w)) in self.windows.iter().enumerate() {
                let mut acc = 0.0;
                for (dj, &wt) in w.iter().enumerate() {
                    acc += wt * src[self.clamp(lo + dj as isize)];
                }
                dst[i] = acc;
            }
        }
        out
    }

    /// Adjoint of [`apply_rows`]: scatter `rows x n_out` gradients back to
    /// `rows x n_in`.
    pub fn apply_rows_transpose(&self, rows: usize, grad: &[f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), rows * self.n_out);
        let mut out = vec![0.0; rows * self.n_in];
        for r in 0..rows {
            let src = &grad[r * self.n_out..(r + 1) * self.n_out];
            let dst = &mut out[r * self.n_in..(r + 1) * self.n_in];
            for (i, (lo, w)) in self.windows.iter().enumerate() {
                let g = src[i];
                for (dj, &wt) in w.iter().enumerate() {
                    dst[self.clamp(lo + dj as isize)] += wt * g;
                }
            }
        }
        out
    }
}

fn transpose(rows: usize, cols: usize, m: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Separable bicubic resampling of one plane.
pub fn resample_plane(
    height: usize,
    width: usize,
    plane: &[f64],
    scale: Scale,
) -> Result<(usize, usize, Vec<f64>)> {
    let (nh, nw) = match scale {
        Scale::Down2 => {
            if height % 2 != 0 || width % 2 != 0 {
                return Err(Error::dimension(format!(
                    "down2 requires even extents, got {height}x{width}"
                )));
            }
            (height / 2, width / 2)
        }
        Scale::Up2 => (height * 2, width * 2),
    };
    let col_plan = Plan1D::new(width, nw);
    let row_plan = Plan1D::new(height, nh);
    let horizontally = col_plan.apply_rows(height, plane);
    let t = transpose(height, nw, &horizontally);
    let vertically = row_plan.apply_rows(nw, &t);
    Ok((nh, nw, transpose(nw, nh, &vertically)))
}

/// Adjoint of [`resample_plane`] with respect to the input plane: maps a
/// gradient of extent (out) back to extent (in).
pub fn resample_plane_adjoint(
    in_height: usize,
    in_width: usize,
    grad_out: &[f64],
    scale: Scale,
) -> Vec<f64> {
    let (nh, nw) = match scale {
        Scale::Down2 => (in_height / 2, in_width / 2),
        Scale::Up2 => (in_height * 2, in_width * 2),
    };
    debug_assert_eq!(grad_out.len(), nh * nw);
    let col_plan = Plan1D::new(in_width, nw);
    let row_plan = Plan1D::new(in_height, nh);
    // Reverse the forward order: undo the vertical pass, then horizontal.
    let t = transpose(nh, nw, grad_out);
    let vertically = row_plan.apply_rows_transpose(nw, &t);
    let horizontally = transpose(nw, in_height, &vertically);
    col_plan.apply_rows_transpose(in_height, &horizontally)
}

/// Bicubic resampling by a factor of two in either direction. `Down2`
/// requires even spatial extents.
pub fn resample_bicubic(img: &Image, scale: Scale) -> Result<Image> {
    let mut nh = 0;
    let mut nw = 0;
    let mut out = Vec::with_capacity(img.data().len());
    for p in img.planes() {
        let (h, w, plane) = resample_plane(img.height(), img.width(), p, scale)?;
        nh = h;
        nw = w;
        out.extend(plane);
    }
    Image::new(nh, nw, img.channels(), out)
}
