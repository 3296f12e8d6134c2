//! Medical-format pixel decoding.
//!
//! Decoders only produce stored sample values plus the photometric
//! interpretation. Conversion to 8-bit grayscale happens here so that every
//! decoder maps pixels identically.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Photometric {
    /// Lowest stored value displays as black (MONOCHROME2).
    BlackIsLow,
    /// Lowest stored value displays as white (MONOCHROME1).
    WhiteIsLow,
}

/// Single-frame grayscale pixel array as stored in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MedicalPixels {
    pub rows: usize,
    pub columns: usize,
    pub samples: Vec<u16>,
    pub photometric: Photometric,
}

pub trait MedicalDecoder: Send + Sync {
    fn decode(&self, path: &Path) -> Result<MedicalPixels>;
}

/// Linear rescale of the stored value range onto 0..=255, inverted for
/// white-is-low data. A constant image maps to all zeros (all 255 when
/// inverted).
pub fn to_gray8(px: &MedicalPixels) -> Result<Raster> {
    if px.samples.len() != px.rows * px.columns {
        return Err(Error::invalid(format!(
            "pixel array of {} samples does not match {}x{}",
            px.samples.len(),
            px.rows,
            px.columns
        )));
    }
    let lo = px.samples.iter().copied().min().unwrap_or(0) as f64;
    let hi = px.samples.iter().copied().max().unwrap_or(0) as f64;
    let span = hi - lo;
    let data = px
        .samples
        .iter()
        .map(|&v| {
            let t = if span > 0.0 { (v as f64 - lo) / span } else { 0.0 };
            let t = match px.photometric {
                Photometric::BlackIsLow => t,
                Photometric::WhiteIsLow => 1.0 - t,
            };
            (t * 255.0).round() as u8
        })
        .collect();
    Raster::new(px.rows, px.columns, 1, data)
}

#[cfg(feature = "dicom")]
#[derive(Debug, Default, Clone, Copy)]
pub struct DicomDecoder;

#[cfg(feature = "dicom")]
impl MedicalDecoder for DicomDecoder {
    fn decode(&self, path: &Path) -> Result<MedicalPixels> {
        use dicom_pixeldata::{PhotometricInterpretation, PixelDecoder};

        let fail = |message: String| Error::Decode {
            path: path.to_path_buf(),
            message,
        };
        let obj = dicom_object::open_file(path).map_err(|e| fail(e.to_string()))?;
        let decoded = obj.decode_pixel_data().map_err(|e| fail(e.to_string()))?;
        if decoded.samples_per_pixel() != 1 {
            return Err(fail(format!(
                "expected one sample per pixel, found {}",
                decoded.samples_per_pixel()
            )));
        }
        let photometric = match decoded.photometric_interpretation() {
            PhotometricInterpretation::Monochrome1 => Photometric::WhiteIsLow,
            PhotometricInterpretation::Monochrome2 => Photometric::BlackIsLow,
            other => return Err(fail(format!("unsupported photometric interpretation {other:?}"))),
        };
        let frame = decoded.frame_data(0).map_err(|e| fail(e.to_string()))?;
        let samples = match decoded.bits_allocated() {
            8 => frame.iter().map(|&b| b as u16).collect(),
            16 => frame
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
            b => return Err(fail(format!("unsupported bits allocated {b}"))),
        };
        Ok(MedicalPixels {
            rows: decoded.rows() as usize,
            columns: decoded.columns() as usize,
            samples,
            photometric,
        })
    }
}

/// Decoder used for `.dcm` paths found in manifests.
#[cfg(feature = "dicom")]
pub fn default_decoder() -> Box<dyn MedicalDecoder> {
    Box::new(DicomDecoder)
}

pub(crate) fn load_dicom_raster(path: &Path) -> Result<Raster> {
    #[cfg(feature = "dicom")]
    {
        to_gray8(&DicomDecoder.decode(path)?)
    }
    #[cfg(not(feature = "dicom"))]
    {
        Err(Error::Decode {
            path: path.to_path_buf(),
            message: "built without the `dicom` feature".into(),
        })
    }
}
