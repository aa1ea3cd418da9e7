//! Observation synthesis: trajectory point-spread functions, calibrated
//! additive Gaussian noise, and fixture datasets laid out on disk.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::convolve::{convolve, Boundary};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{self, BitDepth};
use crate::kernel::Kernel;

/// Additive zero-mean Gaussian noise, `sigma` expressed as a fraction of
/// the intensity peak (0.01 means "1% noise").
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { sigma: 0.0, seed: 0 }
    }
}

/// Parameters of the random-trajectory kernel generator: a direction walk
/// whose heading is perturbed by Gaussian increments of scale `anxiety`,
/// rasterized by bilinear splatting and lightly smoothed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryKernelSpec {
    pub size: usize,
    pub steps: usize,
    pub anxiety: f64,
    pub seed: u64,
}

/// Stable per-tuple seed derivation so parallel and serial dataset
/// generation agree (splitmix64 over seed and index).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generate a motion-blur point-spread function from a random trajectory.
/// Deterministic in the seed; the support is connected and fits the
/// requested side length.
pub fn gen_kernel(spec: &TrajectoryKernelSpec) -> Result<Kernel> {
    if spec.size % 2 == 0 || !(3..=101).contains(&spec.size) {
        return Err(Error::parameter(format!(
            "kernel size must be odd and within [3, 101], got {}",
            spec.size
        )));
    }
    if !spec.anxiety.is_finite() || spec.anxiety < 0.0 {
        return Err(Error::parameter("anxiety must be finite and non-negative"));
    }
    if spec.steps == 0 {
        return Kernel::delta_sized(spec.size);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Heading walk with sub-pixel step length so consecutive splats stay
    // 8-connected.
    let step_len = 0.5;
    let mut theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut pos = (0.0f64, 0.0f64);
    let mut points = Vec::with_capacity(spec.steps + 1);
    points.push(pos);
    for _ in 0..spec.steps {
        theta += spec.anxiety * normal.sample(&mut rng);
        pos = (pos.0 + step_len * theta.sin(), pos.1 + step_len * theta.cos());
        points.push(pos);
    }

    // Center on the centroid and shrink (never stretch) into the grid,
    // leaving margin for the bilinear stamp and the smoothing tap.
    let n = points.len() as f64;
    let cy = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cx = points.iter().map(|p| p.1).sum::<f64>() / n;
    let max_abs = points
        .iter()
        .map(|p| (p.0 - cy).abs().max((p.1 - cx).abs()))
        .fold(0.0, f64::max);
    let avail = ((spec.size / 2) as f64 - 2.0).max(0.0);
    let scale = if max_abs > avail && max_abs > 0.0 {
        avail / max_abs
    } else {
        1.0
    };

    let center = (spec.size / 2) as f64;
    let mut grid = vec![0.0f64; spec.size * spec.size];
    for p in &points {
        let y = center + (p.0 - cy) * scale;
        let x = center + (p.1 - cx) * scale;
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        for (dy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let gy = y0 as usize + dy;
                let gx = x0 as usize + dx;
                grid[gy * spec.size + gx] += wy * wx;
            }
        }
    }

    // 3x3 binomial smoothing; zero padding is safe thanks to the margin.
    let s = spec.size as isize;
    let binom = [1.0, 2.0, 1.0];
    let mut smooth = vec![0.0f64; grid.len()];
    for y in 0..s {
        for x in 0..s {
            let mut acc = 0.0;
            for (du, wu) in binom.iter().enumerate() {
                for (dv, wv) in binom.iter().enumerate() {
                    let sy = y + du as isize - 1;
                    let sx = x + dv as isize - 1;
                    if sy >= 0 && sy < s && sx >= 0 && sx < s {
                        acc += wu * wv * grid[(sy * s + sx) as usize];
                    }
                }
            }
            smooth[(y * s + x) as usize] = acc / 16.0;
        }
    }

    Kernel::normalized(spec.size, spec.size, smooth)
}

/// The forward observation model: convolve with the kernel and add i.i.d.
/// Gaussian noise. Values are not clipped to `[0, 1]`; clipping would
/// correlate the noise with the signal.
pub fn blur(x: &Image, k: &Kernel, noise: &NoiseSpec, boundary: Boundary) -> Result<Image> {
    if noise.sigma < 0.0 || !noise.sigma.is_finite() {
        return Err(Error::parameter("noise sigma must be finite and >= 0"));
    }
    let mut out = convolve(x, k, boundary)?;
    if noise.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let normal = Normal::new(0.0, noise.sigma).expect("valid sigma");
        // Canonical order: channel-major, row-major, independent of any
        // parallel execution elsewhere.
        for v in out.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    out.assert_finite("blurred image")?;
    Ok(out)
}

/// Dataset synthesis parameters (the observation protocol).
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub count: usize,
    pub patch: usize,
    /// Inclusive odd kernel-size range.
    pub kernel_min: usize,
    pub kernel_max: usize,
    /// Inclusive noise sigma range as fractions of peak.
    pub noise_lo: f64,
    pub noise_hi: f64,
    pub seed: u64,
    pub boundary: Boundary,
    /// Convert sources to this channel count (1 or 3).
    pub channels: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 8,
            patch: 64,
            kernel_min: 13,
            kernel_max: 27,
            noise_lo: 0.0,
            noise_hi: 0.05,
            seed: 0,
            boundary: Boundary::ReplicatePadCrop,
            channels: 1,
        }
    }
}

/// Per-tuple description recorded in each fixture's `meta` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureMeta {
    pub index: usize,
    pub src: String,
    pub crop_y: usize,
    pub crop_x: usize,
    pub sigma: f64,
    pub noise_seed: u64,
    pub kernel_size: usize,
    pub kernel_seed: u64,
    pub steps: usize,
    pub anxiety: f64,
    pub boundary: Boundary,
}

impl FixtureMeta {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("index".into(), self.index.to_string()),
            ("src".into(), self.src.clone()),
            ("crop_y".into(), self.crop_y.to_string()),
            ("crop_x".into(), self.crop_x.to_string()),
            ("sigma".into(), self.sigma.to_string()),
            ("seed".into(), self.noise_seed.to_string()),
            ("kernel_size".into(), self.kernel_size.to_string()),
            ("kernel_seed".into(), self.kernel_seed.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("anxiety".into(), self.anxiety.to_string()),
            ("boundary".into(), self.boundary.as_str().into()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<FixtureMeta> {
        fn parse<T: std::str::FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
            io::kv_get(pairs, key)?
                .parse::<T>()
                .map_err(|_| Error::format(format!("bad metadata value for `{key}`")))
        }
        Ok(FixtureMeta {
            index: parse(pairs, "index")?,
            src: io::kv_get(pairs, "src")?.to_string(),
            crop_y: parse(pairs, "crop_y")?,
            crop_x: parse(pairs, "crop_x")?,
            sigma: parse(pairs, "sigma")?,
            noise_seed: parse(pairs, "seed")?,
            kernel_size: parse(pairs, "kernel_size")?,
            kernel_seed: parse(pairs, "kernel_seed")?,
            steps: parse(pairs, "steps")?,
            anxiety: parse(pairs, "anxiety")?,
            boundary: io::kv_get(pairs, "boundary")?.parse()?,
        })
    }
}

/// One on-disk fixture tuple.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub clean: Image,
    pub blurry: Image,
    pub kernel: Kernel,
    pub meta: FixtureMeta,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "pgm" || e == "ppm"
    )
}

/// Quantize in memory to the 16-bit grid the PNG writer uses, so that
/// regenerating a fixture from its stored files reproduces it exactly.
fn snap_to_16bit(img: &Image) -> Image {
    let data = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0 + 0.5).floor() / 65535.0)
        .collect();
    Image::new(img.height(), img.width(), img.channels(), data).expect("same shape")
}

fn convert_channels(img: Image, channels: usize) -> Result<Image> {
    match (img.channels(), channels) {
        (a, b) if a == b => Ok(img),
        (3, 1) => Ok(img.to_gray()),
        (1, 3) => {
            let n = img.height() * img.width();
            let mut data = Vec::with_capacity(n * 3);
            for _ in 0..3 {
                data.extend_from_slice(img.plane(0));
            }
            Image::new(img.height(), img.width(), 3, data)
        }
        _ => Err(Error::parameter("channels must be 1 or 3")),
    }
}

/// Build the training tuple for index `i` deterministically from the spec
/// seed and the usable source pool.
fn synth_tuple(
    spec: &DatasetSpec,
    sources: &[(PathBuf, Image)],
    index: usize,
) -> Result<Fixture> {
    let tuple_seed = derive_seed(spec.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(tuple_seed);
    let (src_path, src) = &sources[rng.gen_range(0..sources.len())];
    let crop_y = rng.gen_range(0..=src.height() - spec.patch);
    let crop_x = rng.gen_range(0..=src.width() - spec.patch);
    let n_sizes = (spec.kernel_max - spec.kernel_min) / 2 + 1;
    let kernel_size = spec.kernel_min + 2 * rng.gen_range(0..n_sizes);
    let sigma = if spec.noise_hi > spec.noise_lo {
        rng.gen_range(spec.noise_lo..=spec.noise_hi)
    } else {
        spec.noise_lo
    };
    let steps = kernel_size * 3;
    let anxiety = rng.gen_range(0.05..0.5);
    let kernel_seed = derive_seed(tuple_seed, 1);
    let noise_seed = derive_seed(tuple_seed, 2);

    let clean = snap_to_16bit(&src.crop(crop_y, crop_x, spec.patch, spec.patch)?);
    let kernel = gen_kernel(&TrajectoryKernelSpec {
        size: kernel_size,
        steps,
        anxiety,
        seed: kernel_seed,
    })?;
    let blurry = blur(
        &clean,
        &kernel,
        &NoiseSpec {
            sigma,
            seed: noise_seed,
        },
        spec.boundary,
    )?;
    Ok(Fixture {
        clean,
        blurry,
        kernel,
        meta: FixtureMeta {
            index,
            src: src_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            crop_y,
            crop_x,
            sigma,
            noise_seed,
            kernel_size,
            kernel_seed,
            steps,
            anxiety,
            boundary: spec.boundary,
        },
    })
}

/// Synthesize `spec.count` fixtures from the images in `clean_dir` into
/// numbered subfolders of `out_dir` (clean.png, blurry.png, kernel.txt,
/// meta). Unreadable or undersized sources are skipped with a warning;
/// an empty usable pool is an input error. Deterministic per seed.
pub fn make_dataset(clean_dir: &Path, out_dir: &Path, spec: &DatasetSpec) -> Result<Vec<FixtureMeta>> {
    if spec.count == 0 {
        return Err(Error::parameter("dataset count must be positive"));
    }
    if spec.kernel_min % 2 == 0 || spec.kernel_max % 2 == 0 || spec.kernel_min > spec.kernel_max {
        return Err(Error::parameter("kernel range must be odd and ordered"));
    }
    if spec.noise_lo < 0.0 || spec.noise_hi < spec.noise_lo {
        return Err(Error::parameter("noise range must satisfy 0 <= lo <= hi"));
    }
    if spec.kernel_max >= spec.patch {
        return Err(Error::parameter("kernel_max must be smaller than patch"));
    }

    let mut entries: Vec<PathBuf> = std::fs::read_dir(clean_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    entries.sort();

    let mut sources = Vec::new();
    for path in entries {
        match io::load_image(&path) {
            Ok(img) if img.height() >= spec.patch && img.width() >= spec.patch => {
                let img = convert_channels(img, spec.channels)?;
                sources.push((path, img));
            }
            Ok(img) => {
                log::warn!(
                    "skipping {} ({}x{} smaller than patch {})",
                    path.display(),
                    img.height(),
                    img.width(),
                    spec.patch
                );
            }
            Err(e) => {
                log::warn!("skipping unreadable {}: {e}", path.display());
            }
        }
    }
    if sources.is_empty() {
        return Err(Error::input(format!(
            "no usable source images of at least {0}x{0} in {1}",
            spec.patch,
            clean_dir.display()
        )));
    }

    std::fs::create_dir_all(out_dir)?;
    let fixtures: Vec<Result<Fixture>> = (0..spec.count)
        .into_par_iter()
        .map(|i| synth_tuple(spec, &sources, i))
        .collect();

    let mut manifest = Vec::with_capacity(spec.count);
    for fx in fixtures {
        let fx = fx?;
        let dir = out_dir.join(format!("{:03}", fx.meta.index));
        std::fs::create_dir_all(&dir)?;
        io::save_image(&dir.join("clean.png"), &fx.clean, BitDepth::Sixteen)?;
        io::save_image(&dir.join("blurry.png"), &fx.blurry, BitDepth::Sixteen)?;
        io::save_kernel(&dir.join("kernel.txt"), &fx.kernel)?;
        io::save_kv(&dir.join("meta"), &fx.meta.to_pairs())?;
        manifest.push(fx.meta);
    }
    Ok(manifest)
}

/// Enumerate the numbered fixture subfolders of a dataset directory.
pub fn list_fixture_dirs(dataset: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dataset)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("meta").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::input(format!(
            "no fixtures found under {}",
            dataset.display()
        )));
    }
    Ok(dirs)
}

pub fn load_fixture(dir: &Path) -> Result<Fixture> {
    let clean = io::load_image(&dir.join("clean.png"))?;
    let blurry = io::load_image(&dir.join("blurry.png"))?;
    let kernel = io::load_kernel(&dir.join("kernel.txt"))?;
    let meta = FixtureMeta::from_pairs(&io::load_kv(&dir.join("meta"))?)?;
    Ok(Fixture {
        clean,
        blurry,
        kernel,
        meta,
    })
}
