//! File boundary of the engine: DCFT feature tensors, label PNGs, RGB images
//! and the optional JSON metadata sidecar.
//!
//! DCFT v1 layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | ASCII `DCFT`                  |
//! | 4      | 4    | u32 version = 1               |
//! | 8      | 4    | u32 height                    |
//! | 12     | 4    | u32 width                     |
//! | 16     | 4    | u32 dim                       |
//! | 20     | 4    | u32 dtype (0 = f32 LE)        |
//! | 24     | 4·n  | payload, row-major channel-last |

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DCFT_MAGIC: [u8; 4] = *b"DCFT";
pub const DCFT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const DCFT_HEADER_LEN: usize = 24;
pub const DEFAULT_IGNORE_INDEX: u16 = 255;

/// Grid of patch embeddings, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::InvalidDimensions { height, width, dim });
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(dim))
            .ok_or(Error::InvalidDimensions { height, width, dim })?;
        if data.len() != expected {
            return Err(Error::TruncatedPayload {
                expected: expected * 4,
                found: data.len() * 4,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// Builds a map from a closure over `(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * dim);
        for r in 0..height {
            for c in 0..width {
                for k in 0..dim {
                    data.push(f(r, c, k));
                }
            }
        }
        Self::new(height, width, dim, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of patches.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Embedding of the patch at flat index `h * width + w`.
    pub fn patch(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn patches(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// Multiplies every value by `s`.
    pub fn scaled(&self, s: f32) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.dim,
            self.data.iter().map(|v| v * s).collect(),
        )
    }
}

/// Per-pixel integer labels, as stored in ground-truth and prediction PNGs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
    pub ignore_index: u16,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>, ignore_index: u16) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions {
                height,
                width,
                dim: 1,
            });
        }
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            ignore_index,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }
}

/// RGB image with channels rescaled to `[0, 1]`, row-major, 3 values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ColorImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * 3..index * 3 + 3]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub encoder_id: String,
    pub timestep: u32,
    pub prompt: String,
    pub image_path: String,
    pub image_height: u32,
    pub image_width: u32,
}

impl RunMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.timestep > 1000 {
            return Err(Error::InvalidMetadata(format!(
                "timestep {} exceeds 1000",
                self.timestep
            )));
        }
        Ok(())
    }
}

pub fn encode_features(fm: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(DCFT_HEADER_LEN + fm.data.len() * 4);
    out.extend_from_slice(&DCFT_MAGIC);
    for v in [
        DCFT_VERSION,
        fm.height as u32,
        fm.width as u32,
        fm.dim as u32,
        DTYPE_F32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &fm.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 || bytes[..4] != DCFT_MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic { found });
    }
    if bytes.len() < DCFT_HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: DCFT_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != DCFT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (height, width, dim) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let dtype = word(4);
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let count = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(dim))
        .ok_or(Error::InvalidDimensions { height, width, dim })?;
    let payload = &bytes[DCFT_HEADER_LEN..];
    let expected = count * 4;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes {
            extra: payload.len() - expected,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::new(height, width, dim, data)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn save_features(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_features(fm))
}

/// Path of the JSON sidecar that accompanies a feature file.
pub fn sidecar_path(features: &Path) -> PathBuf {
    let mut name = features.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Reads the sidecar next to `features`; a missing sidecar is `Ok(None)`.
pub fn load_metadata(features: impl AsRef<Path>) -> Result<Option<RunMetadata>> {
    let path = sidecar_path(features.as_ref());
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let meta: RunMetadata = serde_json::from_str(&text)?;
    meta.validate()?;
    Ok(Some(meta))
}

pub fn save_metadata(meta: &RunMetadata, features: impl AsRef<Path>) -> Result<()> {
    meta.validate()?;
    let text = serde_json::to_string_pretty(meta)?;
    write_atomic(&sidecar_path(features.as_ref()), text.as_bytes())
}

fn read_png(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::UnsupportedPng(format!(
            "{} is not a PNG file",
            path.display()
        )));
    }
    reader.decode().map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a single-channel 8- or 16-bit PNG as labels.
pub fn load_labels(path: impl AsRef<Path>, ignore_index: u16) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = read_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        other => {
            return Err(Error::UnsupportedPng(format!(
                "{}: expected single-channel grayscale, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    LabelMap::new(h, w, labels, ignore_index)
}

pub fn encode_labels_png(map: &LabelMap) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, map.labels.clone())
            .ok_or_else(|| Error::DimensionMismatch("label buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|source| Error::Codec {
            path: PathBuf::from("<memory>"),
            source,
        })?;
    Ok(out.into_inner())
}

/// Writes labels as a 16-bit grayscale PNG.
pub fn save_segmentation(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_labels_png(map)?)
}

/// Loads an RGB(A) PNG, dropping alpha and rescaling to `[0, 1]`.
pub fn load_rgb_image(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let img = read_png(path)?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 255.0)
        .collect();
    ColorImage::new(h, w, data)
}

/// 256-entry render palette. Colour of index `i` interleaves the bits of `i`
/// across the three channels, most significant first.
pub fn palette_color(index: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = index;
    for shift in (0..8).rev() {
        for (ch, out) in rgb.iter_mut().enumerate() {
            *out |= ((c >> ch) & 1) << shift;
        }
        c >>= 3;
    }
    rgb
}

/// Colourised rendering of a label map; labels wrap modulo 256.
pub fn save_render(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut raw = Vec::with_capacity(map.labels.len() * 3);
    for &l in &map.labels {
        raw.extend_from_slice(&palette_color((l % 256) as u8));
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, raw)
            .ok_or_else(|| Error::DimensionMismatch("render buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|source| Error::Codec {
            path: path.as_ref().to_path_buf(),
            source,
        })?;
    write_atomic(path.as_ref(), &out.into_inner())
}

/// Writes `bytes` to a temporary file in the target directory, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
