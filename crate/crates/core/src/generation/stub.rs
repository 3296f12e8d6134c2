//! Deterministic procedural stand-in for a text-to-image service.
//!
//! Images are portrait grayscale "radiographs": a tilted torso with two dark
//! lung fields, spine, heart shadow and rib arcs, an abdomen filling the
//! lower part of the frame and a small bright watermark in the bottom-right
//! corner. Pneumonia images add one or two bright opacity blobs inside the
//! lung fields; their positions are reported in the metadata.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::class_of_prompt;
use super::{GenerationProvider, ProviderError, ProviderImage};
use crate::dataset::ClassLabel;
use crate::raster::Raster;

/// Opacity blob in raster pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl BlobSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (x - self.cx).powi(2) + (y - self.cy).powi(2) <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubMetadata {
    pub generator: String,
    pub image_seed: u64,
    pub class: ClassLabel,
    pub height: usize,
    pub width: usize,
    pub blobs: Vec<BlobSpec>,
}

#[derive(Debug, Clone)]
pub struct StubProvider {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub watermark: bool,
}

impl StubProvider {
    pub fn new(seed: u64) -> Self {
        StubProvider {
            seed,
            height: 320,
            width: 256,
            watermark: true,
        }
    }

    pub fn image_seed(&self, tag: &str, k: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag.as_bytes());
        h.update((k as u64).to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn render(&self, class: ClassLabel, image_seed: u64) -> (Raster, StubMetadata) {
        render(self.height, self.width, self.watermark, class, image_seed)
    }
}

impl GenerationProvider for StubProvider {
    fn name(&self) -> &str {
        "procedural_stub"
    }

    fn request(
        &self,
        prompt: &str,
        count: usize,
        tag: &str,
    ) -> Result<Vec<ProviderImage>, ProviderError> {
        let class = class_of_prompt(prompt)
            .ok_or_else(|| ProviderError::Refused("prompt names no known class".into()))?;
        Ok((0..count)
            .map(|k| {
                let (raster, meta) = self.render(class, self.image_seed(tag, k));
                ProviderImage {
                    bytes: raster.encode_png(),
                    metadata: serde_json::to_string(&meta).expect("metadata serializes"),
                }
            })
            .collect())
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft membership in an axis-aligned ellipse: 1 inside, 0 outside.
fn ellipse(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let d = ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2);
    1.0 - smoothstep(0.85, 1.15, d)
}

fn render(
    height: usize,
    width: usize,
    watermark: bool,
    class: ClassLabel,
    image_seed: u64,
) -> (Raster, StubMetadata) {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed);
    let (h, w) = (height as f64, width as f64);

    let tilt = rng.random_range(-7.0f64..7.0).to_radians();
    let (sin_t, cos_t) = tilt.sin_cos();
    let x0 = w / 2.0 + rng.random_range(-0.04..0.04) * w;
    let half_width = w * rng.random_range(0.36..0.45);
    let top = h * rng.random_range(0.05..0.10);
    let diaphragm = h * rng.random_range(0.58..0.65);
    let background = rng.random_range(8.0..20.0);
    let tissue = rng.random_range(95.0..112.0);
    let lung_drop = rng.random_range(48.0..60.0);
    let rib_period = h * rng.random_range(0.045..0.055);
    let rib_phase = rng.random_range(0.0..std::f64::consts::TAU);

    let lung_cy = top + (diaphragm - top) * 0.52;
    let lung_ry = (diaphragm - top) * 0.45;
    let lung_rx = half_width * 0.36;
    let lung_cx = [x0 - half_width * 0.47, x0 + half_width * 0.47];
    let centre = (w / 2.0, h / 2.0);

    // torso frame -> image frame
    let to_image = |u: f64, v: f64| {
        let (du, dv) = (u - centre.0, v - centre.1);
        (
            centre.0 + du * cos_t - dv * sin_t,
            centre.1 + du * sin_t + dv * cos_t,
        )
    };

    let mut blobs = Vec::new();
    if class == ClassLabel::Pneumonia {
        let n = rng.random_range(1..=2);
        for _ in 0..n {
            let side = rng.random_range(0..2);
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let rad = rng.random_range(0.0..0.55f64).sqrt();
            let u = lung_cx[side] + lung_rx * rad * ang.cos() * 0.6;
            let v = lung_cy + lung_ry * rad * ang.sin() * 0.6;
            let (cx, cy) = to_image(u, v);
            blobs.push(BlobSpec {
                cx,
                cy,
                radius: w * rng.random_range(0.09..0.13),
            });
        }
    }
    let blob_gain: Vec<f64> = blobs.iter().map(|_| rng.random_range(70.0..90.0)).collect();
    let noise = Normal::new(0.0, 3.5).expect("valid sigma");

    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            // image frame -> torso frame
            let (dx, dy) = (px - centre.0, py - centre.1);
            let u = centre.0 + dx * cos_t + dy * sin_t;
            let v = centre.1 - dx * sin_t + dy * cos_t;

            let body = {
                let nu = (u - x0) / half_width;
                let nv = (v - (top + h)) / (h * 1.02);
                let shoulders = smoothstep(top - 0.02 * h, top + 0.04 * h, v);
                (1.0 - smoothstep(0.9, 1.1, nu * nu + nv.powi(4))) * shoulders
            };
            let mut val = background + (tissue - background) * body;

            let lungs = lung_cx
                .iter()
                .map(|&cx| ellipse(u, v, cx, lung_cy, lung_rx, lung_ry))
                .fold(0.0f64, f64::max)
                * (1.0 - smoothstep(diaphragm - 0.03 * h, diaphragm + 0.01 * h, v));
            val -= lung_drop * lungs;

            let heart = ellipse(u, v, x0 - half_width * 0.1, diaphragm - 0.1 * h, half_width * 0.3, 0.1 * h);
            val += 28.0 * heart * lungs.max(body * 0.3);
            let spine = 1.0 - smoothstep(0.06, 0.1, ((u - x0) / half_width).abs());
            val += 30.0 * spine * body;
            let bend = v + 0.18 * (u - x0).powi(2) / half_width;
            let rib = (bend / rib_period * std::f64::consts::TAU + rib_phase).sin().max(0.0).powi(8);
            val += 14.0 * rib * lungs;
            val += 12.0 * body * smoothstep(diaphragm, diaphragm + 0.05 * h, v);

            for (b, gain) in blobs.iter().zip(&blob_gain) {
                let d2 = (px - b.cx).powi(2) + (py - b.cy).powi(2);
                let sigma = b.radius / 1.6;
                val += gain * (-d2 / (2.0 * sigma * sigma)).exp() * lungs.max(0.25);
            }

            if watermark {
                let (wx, wy) = (w - 0.08 * w, h - 0.06 * h);
                let (ax, ay) = ((px - wx).abs(), (py - wy).abs());
                let size = 0.035 * w;
                if ax.sqrt() + ay.sqrt() <= size.sqrt() {
                    val = 235.0;
                }
            }

            val += noise.sample(&mut rng);
            data.push(val.round().clamp(0.0, 255.0) as u8);
        }
    }
    let raster = Raster::new(height, width, 1, data).expect("buffer sized to shape");
    let meta = StubMetadata {
        generator: "procedural_stub".into(),
        image_seed,
        class,
        height,
        width,
        blobs,
    };
    (raster, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = StubProvider::new(1);
        let (a, ma) = p.render(ClassLabel::Pneumonia, 42);
        let (b, mb) = p.render(ClassLabel::Pneumonia, 42);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = p.render(ClassLabel::Pneumonia, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn blobs_only_for_pneumonia_and_inside_upper_frame() {
        let p = StubProvider::new(1);
        for s in 0..20 {
            let (_, healthy) = p.render(ClassLabel::Healthy, s);
            assert!(healthy.blobs.is_empty());
            let (img, sick) = p.render(ClassLabel::Pneumonia, s);
            assert!(!sick.blobs.is_empty());
            for b in &sick.blobs {
                assert!(b.cy < 0.7 * img.height() as f64);
                assert!(b.cx > 0.0 && b.cx < img.width() as f64);
            }
        }
    }

    #[test]
    fn blob_region_is_brighter() {
        let p = StubProvider::new(5);
        let (img, meta) = p.render(ClassLabel::Pneumonia, 7);
        let b = meta.blobs[0];
        let centre = img.get(b.cy as usize, b.cx as usize, 0) as i32;
        let (_, healthy_meta) = p.render(ClassLabel::Healthy, 7);
        assert!(healthy_meta.blobs.is_empty());
        assert!(centre > 90, "blob centre value {centre}");
    }

    #[test]
    fn unknown_prompt_is_refused() {
        let p = StubProvider::new(0);
        assert!(matches!(
            p.request("draw a cat", 1, "t"),
            Err(ProviderError::Refused(_))
        ));
    }
}
