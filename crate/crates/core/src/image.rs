use crate::error::{Error, Result};

/// Planar floating-point raster with 1 or 3 channels, values nominally in
/// `[0, 1]`. Samples are stored channel by channel, row-major inside each
/// plane, so `data.len() == height * width * channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dimension("image extents must be non-zero"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::parameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::dimension(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("image contains non-finite samples"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Single-channel image from a raw plane.
    pub fn from_plane(height: usize, width: usize, plane: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, plane)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.height * self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Build an image by transforming each plane independently.
    pub fn map_planes<F>(&self, mut f: F) -> Result<Image>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut out = Vec::with_capacity(self.data.len());
        let mut extent = None;
        for p in self.planes() {
            let mapped = f(p)?;
            match extent {
                None => extent = Some(mapped.len()),
                Some(n) if n == mapped.len() => {}
                _ => return Err(Error::internal("map_planes produced ragged planes")),
            }
            out.extend_from_slice(&mapped);
        }
        let n = extent.unwrap_or(0);
        if n == self.height * self.width {
            Image::new(self.height, self.width, self.channels, out)
        } else {
            Err(Error::internal(
                "map_planes changed the plane extent; use explicit constructors",
            ))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::numeric(format!("{what} contains non-finite samples")))
        }
    }

    pub fn same_extent(&self, other: &Image) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    /// Replicate-pad on all four sides.
    pub fn pad_replicate(&self, top: usize, bottom: usize, left: usize, right: usize) -> Image {
        let nh = self.height + top + bottom;
        let nw = self.width + left + right;
        let mut out = Image::zeros(nh, nw, self.channels);
        for c in 0..self.channels {
            for y in 0..nh {
                let sy = y.saturating_sub(top).min(self.height - 1);
                for x in 0..nw {
                    let sx = x.saturating_sub(left).min(self.width - 1);
                    out.set(c, y, x, self.get(c, sy, sx));
                }
            }
        }
        out
    }

    /// Crop a window starting at (top, left).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::dimension(format!(
                "crop {}x{}+{}+{} exceeds image {}x{}",
                height, width, top, left, self.height, self.width
            )));
        }
        let mut out = Image::zeros(height, width, self.channels);
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    out.set(c, y, x, self.get(c, top + y, left + x));
                }
            }
        }
        Ok(out)
    }

    /// Convert to single channel by averaging; identity on grayscale input.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let mut plane = vec![0.0; n];
        for p in self.planes() {
            for (dst, &v) in plane.iter_mut().zip(p) {
                *dst += v;
            }
        }
        for v in &mut plane {
            *v /= self.channels as f64;
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: plane,
        }
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }
}
