use crate::error::{Error, Result};
use crate::image::Image;

/// Peak signal-to-noise ratio in decibels over all channels jointly.
/// Identical images report `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_extent(b) {
        return Err(Error::dimension(format!(
            "psnr extent mismatch: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_PEAK: f64 = 1.0;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-mode Gaussian filtering; output shrinks by window-1.
fn filter_valid(h: usize, w: usize, plane: &[f64], win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &wt) in win.iter().enumerate() {
                acc += wt * plane[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &wt) in win.iter().enumerate() {
                acc += wt * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5) and stabilizers (0.01*peak)^2, (0.03*peak)^2 at peak 1.0.
/// Channels are averaged jointly. Symmetric in its arguments.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_extent(b) {
        return Err(Error::dimension("ssim extent mismatch"));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::dimension(format!(
            "ssim needs extents >= {SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let win = gaussian_window();
    let c1 = (0.01 * SSIM_PEAK) * (0.01 * SSIM_PEAK);
    let c2 = (0.03 * SSIM_PEAK) * (0.03 * SSIM_PEAK);
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.planes().zip(b.planes()) {
        let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(h, w, pa, &win);
        let mu_b = filter_valid(h, w, pb, &win);
        let m_aa = filter_valid(h, w, &sq_a, &win);
        let m_bb = filter_valid(h, w, &sq_b, &win);
        let m_ab = filter_valid(h, w, &ab, &win);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
