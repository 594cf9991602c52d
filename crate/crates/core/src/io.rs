//! Image files and datasets.
//!
//! Binary PGM (P5) and PPM (P6) are read and written here; PNG goes through
//! the `png` codec. Only 8-bit samples are accepted. On write, samples are
//! clipped to `[0, 255]` and rounded half to even.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::{ImageBuffer, ImageBufferError, Role};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("input not found: {0}")]
    NotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}: unknown image format")]
    UnknownFormat(PathBuf),
    #[error("{0}: file is truncated")]
    Truncated(PathBuf),
    #[error("{path}: unsupported bit depth {depth}, only 8-bit images are supported")]
    UnsupportedBitDepth { path: PathBuf, depth: u32 },
    #[error("{path}: malformed image: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{0}: extension must be .pgm, .ppm or .png")]
    UnsupportedExtension(PathBuf),
    #[error("crop {size} exceeds image size {height}x{width}")]
    CropTooLarge { size: usize, height: usize, width: usize },
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Image(#[from] ImageBufferError),
}

impl IoError {
    /// Stable machine-readable name of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::NotFound(_) => "input-not-found",
            IoError::Io { .. } => "io",
            IoError::UnknownFormat(_) => "unknown-format",
            IoError::Truncated(_) => "truncated-file",
            IoError::UnsupportedBitDepth { .. } => "unsupported-bit-depth",
            IoError::Malformed { .. } => "malformed-image",
            IoError::UnsupportedExtension(_) => "unsupported-extension",
            IoError::CropTooLarge { .. } => "crop-too-large",
            IoError::DuplicateId(_) => "duplicate-id",
            IoError::Image(_) => "invalid-image",
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    if source.kind() == std::io::ErrorKind::NotFound {
        IoError::NotFound(path.to_path_buf())
    } else {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// ITU-R BT.601 luma.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Grayscale version of a colour image; grayscale images are returned as is.
pub fn to_gray(img: &ImageBuffer) -> ImageBuffer {
    if img.channels() == 1 {
        return img.clone();
    }
    let plane = img.height() * img.width();
    let d = img.data();
    let data = (0..plane).map(|i| luma(d[i], d[plane + i], d[2 * plane + i])).collect();
    let out = ImageBuffer::gray(img.role(), img.height(), img.width(), data).expect("finite luma");
    match img.noise() {
        Some(level) => out.with_noise(level),
        None => out,
    }
}

/// Loads a P5, P6 or 8-bit PNG file as a clean image, detected by content.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_netpbm(path, &bytes)
    } else {
        Err(IoError::UnknownFormat(path.to_path_buf()))
    }
}

/// Header tokens of a binary Netpbm file, then the offset of the raster.
fn netpbm_header(path: &Path, bytes: &[u8]) -> Result<([usize; 3], usize), IoError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                None => return Err(IoError::Truncated(path.to_path_buf())),
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| malformed(path, format!("header field {text} out of range")))?;
    }
    match bytes.get(pos) {
        None => Err(IoError::Truncated(path.to_path_buf())),
        Some(b) if b.is_ascii_whitespace() => Ok((fields, pos + 1)),
        Some(_) => Err(malformed(path, "header must end with one whitespace byte")),
    }
}

fn decode_netpbm(path: &Path, bytes: &[u8]) -> Result<ImageBuffer, IoError> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let ([width, height, maxval], offset) = netpbm_header(path, bytes)?;
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero image dimension"));
    }
    match maxval {
        1..=255 => {}
        256..=65535 => {
            return Err(IoError::UnsupportedBitDepth {
                path: path.to_path_buf(),
                depth: 16,
            })
        }
        _ => return Err(malformed(path, format!("maxval {maxval} outside 1..=65535"))),
    }
    let n = width * height * channels;
    let raster = bytes
        .get(offset..offset + n)
        .ok_or_else(|| IoError::Truncated(path.to_path_buf()))?;
    let scale = 255.0 / maxval as f64;
    let mut data = vec![0.0; n];
    let plane = width * height;
    for (i, &b) in raster.iter().enumerate() {
        let (pixel, c) = (i / channels, i % channels);
        data[c * plane + pixel] = if maxval == 255 { b as f64 } else { b as f64 * scale };
    }
    Ok(ImageBuffer::new(Role::Clean, channels, height, width, data)?)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImageBuffer, IoError> {
    use png::{BitDepth, ColorType, Transformations};
    let map = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            IoError::Truncated(path.to_path_buf())
        }
        other => malformed(path, other.to_string()),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(map)?;
    let depth = reader.info().bit_depth;
    if depth == BitDepth::Sixteen {
        return Err(IoError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            depth: 16,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(map)?;
    let (width, height) = (info.width as usize, info.height as usize);
    // Alpha is dropped.
    let (stride, channels) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(malformed(path, "palette was not expanded")),
    };
    let plane = width * height;
    let mut data = vec![0.0; plane * channels];
    for y in 0..height {
        let row = &buf[y * info.line_size..][..width * stride];
        for x in 0..width {
            for c in 0..channels {
                data[c * plane + y * width + x] = row[x * stride + c] as f64;
            }
        }
    }
    Ok(ImageBuffer::new(Role::Clean, channels, height, width, data)?)
}

/// Clip to `[0, 255]` and round half to even.
pub fn to_byte(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Interleaved bytes with `channels` samples per pixel.
fn interleave(img: &ImageBuffer, channels: usize) -> Vec<u8> {
    let plane = img.height() * img.width();
    let d = img.data();
    let mut out = Vec::with_capacity(plane * channels);
    for i in 0..plane {
        for c in 0..channels {
            let src = if img.channels() == 1 { 0 } else { c };
            out.push(to_byte(d[src * plane + i]));
        }
    }
    out
}

/// Writes by extension: `.pgm` (colour converted to luma), `.ppm` (gray
/// replicated to three channels) or `.png` (gray or RGB as stored).
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (w, h) = (img.width(), img.height());
    let bytes = match ext.as_str() {
        "pgm" => {
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend(interleave(&to_gray(img), 1));
            out
        }
        "ppm" => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend(interleave(img, 3));
            out
        }
        "png" => encode_png(img).map_err(|e| malformed(path, e.to_string()))?,
        _ => return Err(IoError::UnsupportedExtension(path.to_path_buf())),
    };
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&interleave(img, img.channels()))?;
        writer.finish()?;
    }
    Ok(out)
}

/// Centred `size × size` window at offsets `floor((dim − size) / 2)`.
pub fn center_crop(img: &ImageBuffer, size: usize) -> Result<ImageBuffer, IoError> {
    let (c, h, w) = img.dims();
    if size == 0 || size > h || size > w {
        return Err(IoError::CropTooLarge { size, height: h, width: w });
    }
    let (oy, ox) = ((h - size) / 2, (w - size) / 2);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in oy..oy + size {
            let row = (ch * h + y) * w;
            data.extend_from_slice(&img.data()[row + ox..row + ox + size]);
        }
    }
    let out = ImageBuffer::new(img.role(), c, size, size, data)?;
    Ok(match img.noise() {
        Some(level) => out.with_noise(level),
        None => out,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    #[default]
    Grayscale,
    Color,
}

/// Named list of image files with a channel mode and optional centre crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub entries: Vec<(String, PathBuf)>,
    pub mode: ChannelMode,
    pub crop: Option<usize>,
}

fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "png")
    )
}

impl Dataset {
    /// Checks that ids are unique.
    pub fn new(name: impl Into<String>, entries: Vec<(String, PathBuf)>, mode: ChannelMode, crop: Option<usize>) -> Result<Self, IoError> {
        let mut seen = std::collections::HashSet::new();
        for (id, _) in &entries {
            if !seen.insert(id) {
                return Err(IoError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            entries,
            mode,
            crop,
        })
    }

    /// Every `.pgm`, `.ppm` and `.png` file in `dir`, sorted by name; ids are file stems.
    pub fn from_dir(dir: impl AsRef<Path>, mode: ChannelMode, crop: Option<usize>) -> Result<Self, IoError> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_path(p))
            .collect();
        paths.sort();
        let entries = paths
            .into_iter()
            .map(|p| {
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                (id, p)
            })
            .collect();
        let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
        Self::new(name, entries, mode, crop)
    }

    /// Loads, converts and crops every entry in order.
    pub fn load(&self) -> Result<Vec<(String, ImageBuffer)>, IoError> {
        self.entries
            .iter()
            .map(|(id, path)| {
                let mut img = load_image(path)?;
                if self.mode == ChannelMode::Grayscale {
                    img = to_gray(&img);
                } else if img.channels() == 1 {
                    let plane = img.data().to_vec();
                    let data = [plane.as_slice(); 3].concat();
                    img = ImageBuffer::new(Role::Clean, 3, img.height(), img.width(), data)?;
                }
                if let Some(size) = self.crop {
                    img = center_crop(&img, size)?;
                }
                Ok((id.clone(), img))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_to_even_and_clipped() {
        assert_eq!(to_byte(127.5), 128);
        assert_eq!(to_byte(128.5), 128);
        assert_eq!(to_byte(255.7), 255);
        assert_eq!(to_byte(-3.0), 0);
    }

    #[test]
    fn crop_offsets() {
        let img = ImageBuffer::gray(Role::Clean, 5, 5, (0..25).map(|v| v as f64).collect()).unwrap();
        let c = center_crop(&img, 4).unwrap();
        assert_eq!(c.data()[..4], [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(center_crop(&img, 5).unwrap(), img);
        assert!(center_crop(&img, 6).is_err());
        let big = ImageBuffer::gray(Role::Clean, 512, 512, (0..512 * 512).map(|v| v as f64).collect()).unwrap();
        let c = center_crop(&big, 64).unwrap();
        assert_eq!(c.at(0, 0, 0), (224 * 512 + 224) as f64);
    }

    #[test]
    fn luma_weights() {
        assert!((luma(255.0, 255.0, 255.0) - 255.0).abs() < 1e-12);
        assert!((luma(100.0, 0.0, 0.0) - 29.9).abs() < 1e-12);
    }
}
