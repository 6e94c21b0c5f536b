//! Single-channel 8-bit rasters and their PNG encoding.
//!
//! [`GrayImage`] is the unit exchanged between the corpus generator, the
//! networks, the screener and the HTTP service. Network tensors use the
//! normalized range `[-1, 1]`; the mapping is `v / 127.5 - 1`.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

/// Canvas width used throughout the canonical configuration.
pub const DEFAULT_WIDTH: usize = 512;
/// Canvas height used throughout the canonical configuration.
pub const DEFAULT_HEIGHT: usize = 128;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer holds {actual} values, expected {width}x{height}")]
    BufferSize {
        width: usize,
        height: usize,
        actual: usize,
    },
    #[error("unsupported PNG layout {0}; expected 8-bit grayscale")]
    UnsupportedPng(String),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Row-major grayscale raster, intensities in `0..=255`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::BufferSize {
                width,
                height,
                actual: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Inverse of [`GrayImage::to_normalized`]; values are clamped to `[-1, 1]`
    /// and rounded to the nearest intensity.
    pub fn from_normalized(
        width: usize,
        height: usize,
        values: &[f32],
    ) -> Result<Self, ImageError> {
        if values.len() != width * height {
            return Err(ImageError::BufferSize {
                width,
                height,
                actual: values.len(),
            });
        }
        let pixels = values
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> GrayImage {
        let mut out = self.clone();
        for row in out.pixels.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }

    pub fn is_mirror_symmetric(&self) -> bool {
        self.pixels
            .chunks(self.width)
            .all(|row| row.iter().eq(row.iter().rev()))
    }

    /// Maps `[0, 255]` onto `[-1, 1]`.
    pub fn to_normalized(&self) -> Vec<f32> {
        self.pixels
            .iter()
            .map(|&v| v as f32 / 127.5 - 1.0)
            .collect()
    }

    /// Box-filter downsampling by integer factors.
    pub fn downsample(&self, fx: usize, fy: usize) -> GrayImage {
        assert!(fx > 0 && fy > 0, "downsample factors must be positive");
        let w = self.width / fx;
        let h = self.height / fy;
        let area = (fx * fy) as u32;
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0u32;
                for dy in 0..fy {
                    let row = (y * fy + dy) * self.width;
                    for dx in 0..fx {
                        sum += self.pixels[row + x * fx + dx] as u32;
                    }
                }
                pixels.push(((sum + area / 2) / area) as u8);
            }
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Encodes as a non-interlaced 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.pixels)?;
            writer.finish()?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<GrayImage, ImageError> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info()?;
        let (color, depth) = reader.output_color_type();
        if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
            return Err(ImageError::UnsupportedPng(format!("{color:?}/{depth:?}")));
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| ImageError::UnsupportedPng("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        GrayImage::from_pixels(info.width as usize, info.height as usize, buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes = self.to_png()?;
        fs::write(path, bytes).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<GrayImage, ImageError> {
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        GrayImage::from_png(&bytes)
    }
}
