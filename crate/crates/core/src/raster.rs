//! 8-bit raster images, the pixel type exchanged between curation, ingestion
//! and preprocessing.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major `height × width × channels` image with 8-bit samples.
/// `channels` is 1 (grayscale) or 3 (RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

/// SHA-256 over the decoded pixel buffer and its shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::invalid(format!("bad content hash {s:?}: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::invalid(format!("content hash {s:?} is not 32 bytes")))?;
        Ok(ContentHash(arr))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("raster dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "buffer of {} bytes does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_gray_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Raster {
            height,
            width,
            channels: 1,
            data,
        }
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn is_portrait(&self) -> bool {
        self.height > self.width
    }

    /// First `rows` rows, all columns and channels.
    pub fn top_rows(&self, rows: usize) -> Raster {
        let rows = rows.min(self.height);
        let stride = self.width * self.channels;
        Raster {
            height: rows,
            width: self.width,
            channels: self.channels,
            data: self.data[..rows * stride].to_vec(),
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        h.update((self.channels as u64).to_le_bytes());
        h.update(&self.data);
        ContentHash(h.finalize().into())
    }

    /// Decode PNG/JPEG bytes. 16-bit and alpha inputs are reduced to 8-bit
    /// grayscale or RGB.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: image::DynamicImage) -> Self {
        use image::DynamicImage as D;
        match img {
            D::ImageLuma8(_) | D::ImageLumaA8(_) | D::ImageLuma16(_) | D::ImageLumaA16(_) => {
                let g = img.to_luma8();
                let (w, h) = g.dimensions();
                Raster {
                    height: h as usize,
                    width: w as usize,
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Raster {
                    height: h as usize,
                    width: w as usize,
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        }
    }

    /// Load a raster from disk. `.dcm` files go through the medical decoder
    /// when the `dicom` feature is enabled.
    pub fn load(path: &Path) -> Result<Self> {
        let is_dicom = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("dcm"));
        if is_dicom {
            return crate::dataset::medical::load_dicom_raster(path);
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|message| Error::Decode {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let encoder = image::codecs::png::PngEncoder::new(Cursor::new(&mut out));
        use image::ImageEncoder;
        encoder
            .write_image(&self.data, self.width as u32, self.height as u32, color)
            .expect("png encoding into memory cannot fail for a valid raster");
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    /// Average the channels into one grayscale plane.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| ((p[0] as u32 + p[1] as u32 + p[2] as u32 + 1) / 3) as u8)
            .collect();
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}
