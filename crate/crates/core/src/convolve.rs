use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2, kernel_spectrum};
use crate::image::Image;
use crate::kernel::Kernel;

/// Boundary handling for convolution and deconvolution.
///
/// `Circular` treats the image as periodic, which makes FFT-domain
/// filtering exact. `ReplicatePadCrop` replicate-pads by the kernel
/// radius, filters the padded plane circularly, and crops back; this is
/// the practical mode for photographs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Circular,
    ReplicatePadCrop,
}

impl FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Boundary::Circular),
            "replicate" | "replicate_pad_crop" => Ok(Boundary::ReplicatePadCrop),
            other => Err(Error::parameter(format!("unknown boundary mode `{other}`"))),
        }
    }
}

impl Boundary {
    pub fn as_str(&self) -> &'static str {
        match self {
            Boundary::Circular => "circular",
            Boundary::ReplicatePadCrop => "replicate",
        }
    }
}

/// Circular convolution of one plane via pointwise spectral multiplication.
pub fn convolve_plane_circular(
    height: usize,
    width: usize,
    plane: &[f64],
    k: &Kernel,
) -> Result<Vec<f64>> {
    let spec = fft2(height, width, plane)?;
    let kspec = kernel_spectrum(k, height, width)?;
    ifft2(&spec.mul(&kspec)?)
}

/// Convolve an image with a normalized kernel. Output extent equals input
/// extent in both boundary modes.
pub fn convolve(img: &Image, k: &Kernel, boundary: Boundary) -> Result<Image> {
    if !k.fits(img.height(), img.width()) {
        return Err(Error::dimension(format!(
            "kernel {}x{} larger than image {}x{}",
            k.kh(),
            k.kw(),
            img.height(),
            img.width()
        )));
    }
    // A 1x1 normalized kernel is the identity.
    if k.kh() == 1 && k.kw() == 1 {
        return Ok(img.clone());
    }
    match boundary {
        Boundary::Circular => {
            img.map_planes(|p| convolve_plane_circular(img.height(), img.width(), p, k))
        }
        Boundary::ReplicatePadCrop => {
            let (rh, rw) = k.radius();
            let padded = img.pad_replicate(rh, rh, rw, rw);
            let conv = padded
                .map_planes(|p| convolve_plane_circular(padded.height(), padded.width(), p, k))?;
            conv.crop(rh, rw, img.height(), img.width())
        }
    }
}

/// Small 2-D stencil with odd extents. Unlike [`Kernel`], taps may be
/// negative and need not sum to one; this is what derivative filters use.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    h: usize,
    w: usize,
    taps: Vec<f64>,
}

impl Stencil {
    pub fn new(h: usize, w: usize, taps: Vec<f64>) -> Result<Self> {
        if h % 2 == 0 || w % 2 == 0 || h == 0 || w == 0 {
            return Err(Error::dimension("stencil extents must be odd"));
        }
        if taps.len() != h * w {
            return Err(Error::dimension("stencil tap count mismatch"));
        }
        if !taps.iter().all(|t| t.is_finite()) {
            return Err(Error::numeric("stencil taps must be finite"));
        }
        Ok(Self { h, w, taps })
    }

    pub fn identity() -> Self {
        Self {
            h: 1,
            w: 1,
            taps: vec![1.0],
        }
    }

    /// Forward difference along x: output(y, x) = p(y, x+1) - p(y, x).
    pub fn grad_x() -> Self {
        Self {
            h: 1,
            w: 3,
            taps: vec![1.0, -1.0, 0.0],
        }
    }

    /// Forward difference along y.
    pub fn grad_y() -> Self {
        Self {
            h: 3,
            w: 1,
            taps: vec![1.0, -1.0, 0.0],
        }
    }

    /// 3x3 box mean, the neighborhood used by the noise-power estimator.
    pub fn box3() -> Self {
        Self {
            h: 3,
            w: 3,
            taps: vec![1.0 / 9.0; 9],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Convolve one plane directly. Convolution convention: the tap at
    /// offset (u, v) from the stencil origin weighs the sample at
    /// `(y - (u - ch), x - (v - cw))` where (ch, cw) is the center.
    pub fn apply(&self, height: usize, width: usize, plane: &[f64], boundary: Boundary) -> Vec<f64> {
        debug_assert_eq!(plane.len(), height * width);
        let ch = (self.h / 2) as isize;
        let cw = (self.w / 2) as isize;
        let mut out = vec![0.0; height * width];
        for y in 0..height as isize {
            for x in 0..width as isize {
                let mut acc = 0.0;
                for u in 0..self.h as isize {
                    for v in 0..self.w as isize {
                        let t = self.taps[(u * self.w as isize + v) as usize];
                        if t == 0.0 {
                            continue;
                        }
                        let (sy, sx) = match boundary {
                            Boundary::Circular => (
                                (y - (u - ch)).rem_euclid(height as isize),
                                (x - (v - cw)).rem_euclid(width as isize),
                            ),
                            Boundary::ReplicatePadCrop => (
                                (y - (u - ch)).clamp(0, height as isize - 1),
                                (x - (v - cw)).clamp(0, width as isize - 1),
                            ),
                        };
                        acc += t * plane[(sy * width as isize + sx) as usize];
                    }
                }
                out[(y * width as isize + x) as usize] = acc;
            }
        }
        out
    }
}

/// Blend image borders toward their kernel-blurred version so that circular
/// FFT deconvolution does not ring at the wrap-around seam. Pixels at least
/// a kernel radius away from every border are returned bit-identically.
pub fn edge_taper(img: &Image, k: &Kernel) -> Result<Image> {
    let (rh, rw) = k.radius();
    if rh == 0 && rw == 0 {
        return Ok(img.clone());
    }
    if !k.fits(img.height(), img.width()) {
        return Err(Error::dimension("kernel larger than image in edge_taper"));
    }
    let blurred = convolve(img, k, Boundary::ReplicatePadCrop)?;
    let h = img.height();
    let w = img.width();
    let row_w: Vec<f64> = (0..h)
        .map(|y| {
            if rh == 0 {
                1.0
            } else {
                (y.min(h - 1 - y) as f64 / rh as f64).min(1.0)
            }
        })
        .collect();
    let col_w: Vec<f64> = (0..w)
        .map(|x| {
            if rw == 0 {
                1.0
            } else {
                (x.min(w - 1 - x) as f64 / rw as f64).min(1.0)
            }
        })
        .collect();
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let a = row_w[y] * col_w[x];
                if a < 1.0 {
                    let v = a * img.get(c, y, x) + (1.0 - a) * blurred.get(c, y, x);
                    out.set(c, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::new(h, w, c, data).unwrap()
    }

    fn rand_kernel(size: usize, seed: u64) -> Kernel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let taps = (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
        Kernel::normalized(size, size, taps).unwrap()
    }

    #[test]
    fn identity_kernel_is_exact_identity() {
        let img = rand_image(9, 7, 3, 1);
        for b in [Boundary::Circular, Boundary::ReplicatePadCrop] {
            let out = convolve(&img, &Kernel::delta(), b).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn constant_image_stays_constant_in_both_modes() {
        let img = Image::constant(12, 10, 1, 0.42);
        let k = rand_kernel(5, 2);
        for b in [Boundary::Circular, Boundary::ReplicatePadCrop] {
            let out = convolve(&img, &k, b).unwrap();
            for v in out.data() {
                assert!((v - 0.42).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn circular_matches_wraparound_loop() {
        let img = rand_image(12, 12, 1, 3);
        let k = rand_kernel(5, 4);
        let out = convolve(&img, &k, Boundary::Circular).unwrap();
        // Brute-force double loop with wrap-around indexing.
        let (rh, rw) = k.radius();
        for y in 0..12usize {
            for x in 0..12usize {
                let mut acc = 0.0;
                for u in 0..5usize {
                    for v in 0..5usize {
                        let sy = (y + 12 + rh - u) % 12;
                        let sx = (x + 12 + rw - v) % 12;
                        acc += k.tap(u, v) * img.get(0, sy, sx);
                    }
                }
                assert!(
                    (acc - out.get(0, y, x)).abs() < 1e-10,
                    "mismatch at ({y},{x})"
                );
            }
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let img = rand_image(4, 4, 1, 5);
        let k = rand_kernel(5, 6);
        assert!(matches!(
            convolve(&img, &k, Boundary::Circular),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn convolution_theorem_holds_across_sizes() {
        use crate::fft::{fft2, ifft2, kernel_spectrum};
        for &n in &[8usize, 16, 32] {
            let img = rand_image(n, n, 1, n as u64 + 10);
            let k = rand_kernel(5, n as u64 + 20);
            let spatial = convolve(&img, &k, Boundary::Circular).unwrap();
            let spec = fft2(n, n, img.plane(0)).unwrap();
            let kspec = kernel_spectrum(&k, n, n).unwrap();
            let freq = ifft2(&spec.mul(&kspec).unwrap()).unwrap();
            for (a, b) in spatial.plane(0).iter().zip(&freq) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn stencil_identity_and_gradient() {
        let img = rand_image(6, 6, 1, 8);
        let id = Stencil::identity().apply(6, 6, img.plane(0), Boundary::Circular);
        assert_eq!(id, img.plane(0));

        let gx = Stencil::grad_x().apply(6, 6, img.plane(0), Boundary::Circular);
        for y in 0..6usize {
            for x in 0..6usize {
                let expect = img.get(0, y, (x + 1) % 6) - img.get(0, y, x);
                assert!((gx[y * 6 + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_taper_preserves_constants_and_interior() {
        let k = rand_kernel(5, 9);
        let constant = Image::constant(16, 16, 1, 0.7);
        let tapered = edge_taper(&constant, &k).unwrap();
        for v in tapered.data() {
            assert!((v - 0.7).abs() < 1e-12);
        }

        let img = rand_image(16, 16, 1, 10);
        let tapered = edge_taper(&img, &k).unwrap();
        let (rh, rw) = k.radius();
        for y in rh..16 - rh {
            for x in rw..16 - rw {
                assert_eq!(tapered.get(0, y, x), img.get(0, y, x));
            }
        }
        // Borders move toward the blurred version.
        assert_ne!(tapered.get(0, 0, 0), img.get(0, 0, 0));
    }
}
