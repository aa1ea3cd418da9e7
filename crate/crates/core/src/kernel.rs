use crate::error::{Error, Result};

/// Normalization slack accepted on construction; tighter than visible effects.
const SUM_TOL: f64 = 1e-6;

/// Normalized 2-D point-spread function with odd side lengths so the center
/// tap is well defined. Taps are non-negative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kh: usize,
    kw: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Validates invariants without rescaling the taps.
    pub fn new(kh: usize, kw: usize, taps: Vec<f64>) -> Result<Self> {
        if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dimension(format!(
                "kernel extents must be odd and non-zero, got {kh}x{kw}"
            )));
        }
        if taps.len() != kh * kw {
            return Err(Error::dimension(format!(
                "tap count {} does not match {kh}x{kw}",
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::numeric("kernel taps must be finite and non-negative"));
        }
        let sum: f64 = taps.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::numeric(format!(
                "kernel taps must sum to 1 (got {sum})"
            )));
        }
        Ok(Self { kh, kw, taps })
    }

    /// Rescales non-negative taps to unit sum, then validates. Taps already
    /// normalized to rounding noise are kept bit-identical, so normalizing
    /// is idempotent and text round-trips are stable.
    pub fn normalized(kh: usize, kw: usize, mut taps: Vec<f64>) -> Result<Self> {
        if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::numeric("kernel taps must be finite and non-negative"));
        }
        let sum: f64 = taps.iter().sum();
        if sum <= 0.0 {
            return Err(Error::numeric("kernel taps sum to zero"));
        }
        if (sum - 1.0).abs() > 1e-9 {
            for t in &mut taps {
                *t /= sum;
            }
        }
        Self::new(kh, kw, taps)
    }

    /// The 1x1 identity blur.
    pub fn delta() -> Self {
        Self {
            kh: 1,
            kw: 1,
            taps: vec![1.0],
        }
    }

    /// Centered delta of the given odd size.
    pub fn delta_sized(size: usize) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::dimension("delta kernel size must be odd"));
        }
        let mut taps = vec![0.0; size * size];
        taps[(size / 2) * size + size / 2] = 1.0;
        Self::new(size, size, taps)
    }

    /// Isotropic Gaussian, truncated to the given odd size and renormalized.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::dimension("gaussian kernel size must be odd"));
        }
        if sigma <= 0.0 {
            return Err(Error::parameter("gaussian sigma must be positive"));
        }
        let c = (size / 2) as f64;
        let mut taps = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let dy = y as f64 - c;
                let dx = x as f64 - c;
                taps.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
            }
        }
        Self::normalized(size, size, taps)
    }

    pub fn kh(&self) -> usize {
        self.kh
    }
    pub fn kw(&self) -> usize {
        self.kw
    }
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Half-extents; the pad margin needed around an image.
    pub fn radius(&self) -> (usize, usize) {
        (self.kh / 2, self.kw / 2)
    }

    #[inline]
    pub fn tap(&self, u: usize, v: usize) -> f64 {
        self.taps[u * self.kw + v]
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.kh <= height && self.kw <= width
    }

    /// Adds zero-mean Gaussian noise of standard deviation `frac * tap` to
    /// each tap, clamps at zero and renormalizes. Models an inaccurate
    /// kernel estimate.
    pub fn perturb_relative(&self, frac: f64, seed: u64) -> Result<Kernel> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).map_err(|e| Error::parameter(e.to_string()))?;
        let taps = self
            .taps
            .iter()
            .map(|&t| (t * (1.0 + frac * normal.sample(&mut rng))).max(0.0))
            .collect();
        Kernel::normalized(self.kh, self.kw, taps)
    }

    /// Parse the plain-text kernel format: first line `kh kw`, then `kh`
    /// rows of `kw` decimal taps. Taps are normalized to unit sum;
    /// negatives are rejected.
    pub fn from_text(text: &str) -> Result<Kernel> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty kernel file"))?;
        let mut it = header.split_whitespace();
        let kh: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("kernel header must be `kh kw`"))?;
        let kw: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("kernel header must be `kh kw`"))?;
        if it.next().is_some() {
            return Err(Error::format("kernel header must be exactly `kh kw`"));
        }
        let mut taps = Vec::with_capacity(kh * kw);
        for _ in 0..kh {
            let row = lines
                .next()
                .ok_or_else(|| Error::format("kernel file truncated"))?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::format(format!("bad kernel tap `{s}`")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != kw {
                return Err(Error::format(format!(
                    "kernel row has {} taps, expected {kw}",
                    vals.len()
                )));
            }
            if vals.iter().any(|v| *v < 0.0) {
                return Err(Error::format("kernel taps must be non-negative"));
            }
            taps.extend(vals);
        }
        if lines.next().is_some() {
            return Err(Error::format("trailing data after kernel rows"));
        }
        Kernel::normalized(kh, kw, taps)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.kh, self.kw);
        for row in self.taps.chunks_exact(self.kw) {
            let line: Vec<String> = row.iter().map(|t| format!("{t:.17e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}
