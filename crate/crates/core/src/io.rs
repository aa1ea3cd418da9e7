use std::fs;
use std::io::Read;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::Kernel;

/// Output sample depth. Stored samples are `value / max_code` on read and
/// `floor(clamp(value, 0, 1) * max_code + 0.5)` (round half up) on write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn quantize(v: f64, max: f64) -> u16 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor() as u16
}

/// Load a PNG, PGM, or PPM file into a float image in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(&bytes);
    }
    let dynimg = image::load_from_memory(&bytes)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Image::new(h, w, 1, data)
        }
        DynamicImage::ImageLuma16(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            Image::new(h, w, 1, data)
        }
        DynamicImage::ImageRgb8(buf) => {
            Ok(interleaved_to_planar(h, w, &buf.into_raw(), 255.0))
        }
        DynamicImage::ImageRgb16(buf) => {
            Ok(interleaved_to_planar(h, w, &buf.into_raw(), 65535.0))
        }
        // Alpha variants: drop the alpha plane.
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let buf = dynimg.to_luma16();
            let data = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            Image::new(h, w, 1, data)
        }
        other => {
            let buf = other.to_rgb16();
            Ok(interleaved_to_planar(h, w, &buf.into_raw(), 65535.0))
        }
    }
}

fn interleaved_to_planar<T: Copy + Into<f64>>(
    h: usize,
    w: usize,
    raw: &[T],
    max: f64,
) -> Image {
    let n = h * w;
    let mut data = vec![0.0; n * 3];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = raw[i * 3 + c].into() / max;
        }
    }
    Image::new(h, w, 3, data).expect("planar conversion preserves shape")
}

/// Save as PNG/PGM/PPM, chosen by file extension. The write is atomic:
/// data goes to a sibling temp file that is renamed into place.
pub fn save_image(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(img, depth)?,
        "pgm" => {
            if img.channels() != 1 {
                return Err(Error::parameter("pgm requires a single-channel image"));
            }
            encode_pnm(img, depth)
        }
        "ppm" => {
            if img.channels() != 3 {
                return Err(Error::parameter("ppm requires a three-channel image"));
            }
            encode_pnm(img, depth)
        }
        other => {
            return Err(Error::parameter(format!(
                "unsupported image extension `{other}` (png, pgm, ppm)"
            )))
        }
    };
    write_atomic(path, &bytes)
}

/// Write bytes through a temp file plus rename so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let n = img.height() * img.width();
    let mut out = Vec::new();
    let cursor = std::io::Cursor::new(&mut out);
    let max = depth.max_code();
    match (img.channels(), depth) {
        (1, BitDepth::Eight) => {
            let raw: Vec<u8> = img.plane(0).iter().map(|&v| quantize(v, max) as u8).collect();
            let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(w, h, raw).unwrap();
            buf.write_to(&mut std::io::BufWriter::new(cursor), image::ImageFormat::Png)?;
        }
        (1, BitDepth::Sixteen) => {
            let raw: Vec<u16> = img.plane(0).iter().map(|&v| quantize(v, max)).collect();
            let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(w, h, raw).unwrap();
            buf.write_to(&mut std::io::BufWriter::new(cursor), image::ImageFormat::Png)?;
        }
        (3, BitDepth::Eight) => {
            let mut raw = vec![0u8; n * 3];
            for i in 0..n {
                for c in 0..3 {
                    raw[i * 3 + c] = quantize(img.plane(c)[i], max) as u8;
                }
            }
            let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w, h, raw).unwrap();
            buf.write_to(&mut std::io::BufWriter::new(cursor), image::ImageFormat::Png)?;
        }
        (3, BitDepth::Sixteen) => {
            let mut raw = vec![0u16; n * 3];
            for i in 0..n {
                for c in 0..3 {
                    raw[i * 3 + c] = quantize(img.plane(c)[i], max);
                }
            }
            let buf: ImageBuffer<Rgb<u16>, _> = ImageBuffer::from_raw(w, h, raw).unwrap();
            buf.write_to(&mut std::io::BufWriter::new(cursor), image::ImageFormat::Png)?;
        }
        _ => return Err(Error::internal("unreachable channel count")),
    }
    Ok(out)
}

/// Binary netpbm (P5 grayscale / P6 color); 16-bit samples are big-endian.
fn encode_pnm(img: &Image, depth: BitDepth) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let max = depth.max_code();
    let mut out = format!(
        "{magic}\n{} {}\n{}\n",
        img.width(),
        img.height(),
        max as u32
    )
    .into_bytes();
    let n = img.height() * img.width();
    for i in 0..n {
        for c in 0..img.channels() {
            let q = quantize(img.plane(c)[i], max);
            match depth {
                BitDepth::Eight => out.push(q as u8),
                BitDepth::Sixteen => out.extend_from_slice(&q.to_be_bytes()),
            }
        }
    }
    out
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format("not a binary pnm file")),
    };
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        // Skip whitespace and `#` comments between header fields.
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated pnm header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::format("bad pnm header"))?;
        fields.push(
            text.parse::<usize>()
                .map_err(|_| Error::format("bad pnm header number"))?,
        );
    }
    // Exactly one whitespace byte separates the header from raster data.
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("unsupported pnm maxval {maxval}")));
    }
    let two_byte = maxval > 255;
    let n = h * w;
    let expected = n * channels * if two_byte { 2 } else { 1 };
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::format(format!(
            "pnm raster truncated: {} bytes, expected {expected}",
            raster.len()
        )));
    }
    let mut data = vec![0.0; n * channels];
    let maxf = maxval as f64;
    for i in 0..n {
        for c in 0..channels {
            let idx = i * channels + c;
            let v = if two_byte {
                u16::from_be_bytes([raster[idx * 2], raster[idx * 2 + 1]]) as f64
            } else {
                raster[idx] as f64
            };
            data[c * n + i] = v / maxf;
        }
    }
    Image::new(h, w, channels, data)
}

pub fn load_kernel(path: &Path) -> Result<Kernel> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    Kernel::from_text(&text)
}

pub fn save_kernel(path: &Path, k: &Kernel) -> Result<()> {
    write_atomic(path, k.to_text().as_bytes())
}

/// Plain-text `key=value` metadata, one pair per line, keys sorted on write.
pub fn save_kv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut sorted: Vec<_> = pairs.to_vec();
    sorted.sort();
    let mut text = String::new();
    for (k, v) in sorted {
        text.push_str(&format!("{k}={v}\n"));
    }
    write_atomic(path, text.as_bytes())
}

pub fn load_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(format!("line {} is not key=value", lineno + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn kv_get<'a>(pairs: &'a [(String, String)], key: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::format(format!("missing metadata key `{key}`")))
}
