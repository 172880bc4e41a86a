//! Instance label images and their PNG encodings.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("{0}")]
    Image(#[from] image::ImageError),
    #[error("mask is not single-channel ({0})")]
    NotSingleChannel(String),
    #[error("label {0} does not fit in a 16-bit PNG")]
    LabelOverflow(u32),
    #[error("label buffer has {got} entries, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// Row-major image of instance ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl InstanceMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if labels.len() != expected {
            return Err(MaskError::SizeMismatch {
                expected,
                got: labels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: u32) {
        let i = self.index(x, y);
        self.labels[i] = label;
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distinct non-zero ids, ascending.
    pub fn instance_ids(&self) -> Vec<u32> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l > 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Single-channel 16-bit PNG, pixel value = instance id.
    pub fn to_png16(&self) -> Result<Vec<u8>, MaskError> {
        let mut raw = Vec::with_capacity(self.labels.len());
        for &l in &self.labels {
            raw.push(u16::try_from(l).map_err(|_| MaskError::LabelOverflow(l))?);
        }
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, raw).expect("buffer sized from mask");
        encode(DynamicImage::ImageLuma16(img))
    }

    /// 8-bit RGB rendering with a fixed per-id palette, background black.
    pub fn to_color_png(&self) -> Result<Vec<u8>, MaskError> {
        let img = RgbImage::from_fn(self.width, self.height, |x, y| Rgb(palette_color(self.get(x, y))));
        encode(DynamicImage::ImageRgb8(img))
    }

    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<(), MaskError> {
        let bytes = self.to_png16()?;
        std::fs::write(path, bytes).map_err(|e| MaskError::Image(image::ImageError::IoError(e)))
    }

    /// Decode an 8- or 16-bit single-channel PNG.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, MaskError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::from_dynamic(img)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MaskError> {
        Self::from_dynamic(image::open(path)?)
    }

    fn from_dynamic(img: DynamicImage) -> Result<Self, MaskError> {
        let (width, height) = (img.width(), img.height());
        let labels = match img {
            DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
            DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
            other => return Err(MaskError::NotSingleChannel(format!("{:?}", other.color()))),
        };
        Ok(Self {
            width,
            height,
            labels,
        })
    }
}

fn encode(img: DynamicImage) -> Result<Vec<u8>, MaskError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Stable color for an instance id (black for background).
pub fn palette_color(id: u32) -> [u8; 3] {
    if id == 0 {
        return [0, 0, 0];
    }
    // splitmix-style integer hash, brightened so ids never map to near-black
    let mut h = id as u64 ^ 0x9e37_79b9_7f4a_7c15;
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    [
        64 + (h & 0xbf) as u8,
        64 + ((h >> 8) & 0xbf) as u8,
        64 + ((h >> 16) & 0xbf) as u8,
    ]
}

/// Flat RGB image (used for previews).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbFrame {
    pub fn black(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0; 3]; width as usize * height as usize],
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, MaskError> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = RgbImage::from_raw(self.width, self.height, raw).expect("buffer sized from frame");
        encode(DynamicImage::ImageRgb8(img))
    }
}
