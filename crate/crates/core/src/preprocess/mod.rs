//! Fixed-size network inputs and training-time augmentation.
//!
//! Geometry uses continuous pixel coordinates with pixel centers at `i + 0.5`.
//! Plain resizing and every augmentation go through one inverse-mapping
//! bilinear sampler, so an identity augmentation reproduces the plain resize
//! exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub const INPUT_SIZE: usize = 224;
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Three-channel planar image with values on the 0-255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Channel-major (CHW) samples.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Mirror columns: j -> W-1-j.
    pub fn mirrored(&self) -> FloatImage {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        FloatImage { data, ..*self }
    }

    /// Round back to 8-bit grayscale (channel mean).
    pub fn to_gray_raster(&self) -> Raster {
        let plane = self.height * self.width;
        Raster::from_gray_fn(self.height, self.width, |y, x| {
            let i = y * self.width + x;
            let v = (self.data[i] + self.data[plane + i] + self.data[2 * plane + i]) / 3.0;
            v.round().clamp(0.0, 255.0) as u8
        })
    }
}

/// Normalized network input, CHW, 3×224×224.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tensor: Vec<f32>,
    pub record_id: String,
}

impl ModelInput {
    pub const LEN: usize = 3 * INPUT_SIZE * INPUT_SIZE;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Range of the crop area as a fraction of the image area.
    pub crop_scale_range: (f64, f64),
    pub affine_max_translate_frac: f64,
    pub affine_max_shear_deg: f64,
    pub rotation_max_deg: f64,
    pub hflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_scale_range: (0.8, 1.0),
            affine_max_translate_frac: 0.05,
            affine_max_shear_deg: 5.0,
            rotation_max_deg: 10.0,
            hflip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No-op configuration: full crop, no affine, no flip, no rotation.
    pub fn identity() -> Self {
        AugmentConfig {
            crop_scale_range: (1.0, 1.0),
            affine_max_translate_frac: 0.0,
            affine_max_shear_deg: 0.0,
            rotation_max_deg: 0.0,
            hflip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "crop_scale_range {:?} must satisfy 0 < lo <= hi <= 1",
                self.crop_scale_range
            )));
        }
        if !(0.0..=0.5).contains(&self.affine_max_translate_frac) {
            return Err(Error::invalid("affine_max_translate_frac must be in [0, 0.5]"));
        }
        if !(0.0..45.0).contains(&self.affine_max_shear_deg) {
            return Err(Error::invalid("affine_max_shear_deg must be in [0, 45)"));
        }
        if !(0.0..=180.0).contains(&self.rotation_max_deg) {
            return Err(Error::invalid("rotation_max_deg must be in [0, 180]"));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::invalid("hflip_prob must be in [0, 1]"));
        }
        Ok(())
    }
}

/// 2×3 affine map on continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine([f64; 6]);

impl Affine {
    const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }

    /// self ∘ other (other first).
    fn after(&self, other: &Affine) -> Affine {
        let (a, b) = (&self.0, &other.0);
        Affine([
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        ])
    }

    fn inverse(&self) -> Affine {
        let m = &self.0;
        let det = m[0] * m[4] - m[1] * m[3];
        let (a, b, c, d) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
        Affine([a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])])
    }

    /// Linear part `l` applied about `(cx, cy)`.
    fn about(l: [f64; 4], cx: f64, cy: f64) -> Affine {
        Affine([
            l[0],
            l[1],
            cx - l[0] * cx - l[1] * cy,
            l[2],
            l[3],
            cy - l[2] * cx - l[3] * cy,
        ])
    }
}

/// Source window (x0, y0, w, h) in source pixel coordinates.
type Window = (f64, f64, f64, f64);

fn plane_value(img: &Raster, y: usize, x: usize, c: usize) -> f64 {
    if img.channels() == 1 {
        img.get(y, x, 0) as f64
    } else {
        img.get(y, x, c) as f64
    }
}

/// Bilinear sample with edge clamping; `(sx, sy)` are continuous coordinates.
fn bilinear(img: &Raster, c: usize, sx: f64, sy: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let top = plane_value(img, y0, x0, c) * (1.0 - ax) + plane_value(img, y0, x1, c) * ax;
    let bot = plane_value(img, y1, x0, c) * (1.0 - ax) + plane_value(img, y1, x1, c) * ax;
    top * (1.0 - ay) + bot * ay
}

/// Render `size`×`size` output: output point q is mapped through `inv` onto
/// the crop grid, then into `window` of the source. Points falling outside
/// the source are black.
fn render(img: &Raster, window: Window, inv: Affine, size: usize) -> FloatImage {
    let (x0, y0, ww, wh) = window;
    let (sw, sh) = (img.width() as f64, img.height() as f64);
    let (kx, ky) = (ww / size as f64, wh / size as f64);
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    let gray = img.channels() == 1;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = if inv == Affine::IDENTITY {
                (x as f64 + 0.5, y as f64 + 0.5)
            } else {
                inv.apply(x as f64 + 0.5, y as f64 + 0.5)
            };
            let sx = x0 + u * kx;
            let sy = y0 + v * ky;
            if !(0.0..=sw).contains(&sx) || !(0.0..=sh).contains(&sy) {
                continue;
            }
            let i = y * size + x;
            if gray {
                let g = bilinear(img, 0, sx, sy) as f32;
                data[i] = g;
                data[plane + i] = g;
                data[2 * plane + i] = g;
            } else {
                for c in 0..3 {
                    data[c * plane + i] = bilinear(img, c, sx, sy) as f32;
                }
            }
        }
    }
    FloatImage {
        height: size,
        width: size,
        data,
    }
}

/// Bilinear resize of one row-major plane, pixel centers aligned the same way
/// as [`resize`].
pub fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w, "plane size");
    let mut out = Vec::with_capacity(oh * ow);
    let at = |y: usize, x: usize| src[y * w + x] as f64;
    let (kx, ky) = (w as f64 / ow as f64, h as f64 / oh as f64);
    for i in 0..oh {
        let fy = ((i as f64 + 0.5) * ky - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ay = fy - y0 as f64;
        for j in 0..ow {
            let fx = ((j as f64 + 0.5) * kx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let ax = fx - x0 as f64;
            let top = at(y0, x0) * (1.0 - ax) + at(y0, x1) * ax;
            let bot = at(y1, x0) * (1.0 - ax) + at(y1, x1) * ax;
            out.push((top * (1.0 - ay) + bot * ay) as f32);
        }
    }
    out
}

/// Plain bilinear resize to 224×224 (no aspect preservation), grayscale
/// replicated to three channels.
pub fn resize(image: &Raster) -> FloatImage {
    resize_to(image, INPUT_SIZE)
}

pub fn resize_to(image: &Raster, size: usize) -> FloatImage {
    let window = (0.0, 0.0, image.width() as f64, image.height() as f64);
    render(image, window, Affine::IDENTITY, size)
}

pub fn normalize(img: &FloatImage, record_id: impl Into<String>) -> ModelInput {
    let plane = img.height * img.width;
    let tensor = img
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            (v / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
        })
        .collect();
    ModelInput {
        tensor,
        record_id: record_id.into(),
    }
}

pub fn resize_normalize(image: &Raster, record_id: impl Into<String>) -> ModelInput {
    normalize(&resize(image), record_id)
}

/// Random resized crop, affine (translate + shear), horizontal flip and
/// rotation, sampled from `rng` in that order and applied as one resampling.
pub fn augment(image: &Raster, cfg: &AugmentConfig, rng: &mut impl Rng) -> FloatImage {
    let size = INPUT_SIZE;
    let (w, h) = (image.width() as f64, image.height() as f64);

    // crop keeps the source aspect ratio
    let (lo, hi) = cfg.crop_scale_range;
    let scale = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let side = scale.sqrt();
    let (cw, ch) = (w * side, h * side);
    let cx0 = rng.random::<f64>() * (w - cw);
    let cy0 = rng.random::<f64>() * (h - ch);

    let n = size as f64;
    let c = n / 2.0;
    let sym = |rng: &mut dyn rand::RngCore, m: f64| {
        if m > 0.0 {
            rng.random_range(-m..=m)
        } else {
            0.0
        }
    };
    let tx = sym(rng, cfg.affine_max_translate_frac) * n;
    let ty = sym(rng, cfg.affine_max_translate_frac) * n;
    let shear = sym(rng, cfg.affine_max_shear_deg).to_radians().tan();
    let flip = rng.random::<f64>() < cfg.hflip_prob;
    let angle = sym(rng, cfg.rotation_max_deg).to_radians();

    let mut affine = Affine::about([1.0, shear, 0.0, 1.0], c, c);
    affine.0[2] += tx;
    affine.0[5] += ty;
    let flip_m = if flip {
        Affine([-1.0, 0.0, n, 0.0, 1.0, 0.0])
    } else {
        Affine::IDENTITY
    };
    let rot = if angle != 0.0 {
        let (s, co) = angle.sin_cos();
        Affine::about([co, -s, s, co], c, c)
    } else {
        Affine::IDENTITY
    };
    let forward = rot.after(&flip_m).after(&affine);
    render(image, (cx0, cy0, cw, ch), forward.inverse(), size)
}

/// Per-item stream for augmentation, independent of scheduling order.
pub fn item_rng(seed: u64, epoch: usize, record_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    h.update(record_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent naive bilinear resampler (align_corners = false).
    fn reference_resize(img: &Raster, oh: usize, ow: usize) -> Vec<Vec<f64>> {
        let (h, w) = (img.height() as f64, img.width() as f64);
        (0..oh)
            .map(|i| {
                (0..ow)
                    .map(|j| {
                        let sy = ((i as f64 + 0.5) * h / oh as f64 - 0.5).max(0.0).min(h - 1.0);
                        let sx = ((j as f64 + 0.5) * w / ow as f64 - 0.5).max(0.0).min(w - 1.0);
                        let (y0, x0) = (sy as usize, sx as usize);
                        let y1 = if (y0 as f64) < h - 1.0 { y0 + 1 } else { y0 };
                        let x1 = if (x0 as f64) < w - 1.0 { x0 + 1 } else { x0 };
                        let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
                        let p = |y: usize, x: usize| img.get(y, x, 0) as f64;
                        p(y0, x0) * (1.0 - dy) * (1.0 - dx)
                            + p(y0, x1) * (1.0 - dy) * dx
                            + p(y1, x0) * dy * (1.0 - dx)
                            + p(y1, x1) * dy * dx
                    })
                    .collect()
            })
            .collect()
    }

    fn checker(n: usize) -> Raster {
        Raster::from_gray_fn(n, n, |y, x| if (y / 7 + x / 5) % 2 == 0 { 230 } else { 20 })
    }

    #[test]
    fn constant_images_normalize_by_formula() {
        let white = Raster::from_gray_fn(50, 30, |_, _| 255);
        let out = resize_normalize(&white, "w");
        let plane = INPUT_SIZE * INPUT_SIZE;
        let expect = (1.0 - IMAGENET_MEAN[0]) / IMAGENET_STD[0];
        assert!(out.tensor[..plane].iter().all(|&v| (v - expect).abs() < 1e-6));

        let v = (IMAGENET_MEAN[0] * 255.0).round() as u8;
        let rgb = Raster::new(4, 4, 3, [v, 0, 0].repeat(16)).unwrap();
        let out = resize_normalize(&rgb, "m");
        let resid = (v as f32 / 255.0 - IMAGENET_MEAN[0]) / IMAGENET_STD[0];
        assert!(out.tensor[..plane].iter().all(|&x| (x - resid).abs() < 1e-6));
        assert!(resid.abs() < 0.01);
    }

    #[test]
    fn checkerboard_matches_reference_resampler() {
        let img = checker(448);
        let ours = resize(&img);
        let refr = reference_resize(&img, INPUT_SIZE, INPUT_SIZE);
        let norm = normalize(&ours, "c");
        for (y, row) in refr.iter().enumerate() {
            for (x, &r) in row.iter().enumerate() {
                let expect = (r / 255.0 - IMAGENET_MEAN[0] as f64) / IMAGENET_STD[0] as f64;
                let got = norm.tensor[y * INPUT_SIZE + x] as f64;
                assert!((got - expect).abs() < 1e-6, "({y},{x}) {got} vs {expect}");
            }
        }
    }

    #[test]
    fn non_square_upsample_matches_reference() {
        let img = Raster::from_gray_fn(37, 91, |y, x| ((y * 13 + x * 29) % 251) as u8);
        let ours = resize(&img);
        let refr = reference_resize(&img, INPUT_SIZE, INPUT_SIZE);
        for y in (0..INPUT_SIZE).step_by(17) {
            for x in 0..INPUT_SIZE {
                assert!((ours.get(1, y, x) as f64 - refr[y][x]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn plane_resize_agrees_with_image_resize() {
        let img = Raster::from_gray_fn(9, 13, |y, x| ((y * 40 + x * 11) % 256) as u8);
        let plane: Vec<f32> = img.data().iter().map(|&v| v as f32).collect();
        let a = resize_plane(&plane, 9, 13, INPUT_SIZE, INPUT_SIZE);
        let b = resize(&img);
        assert_eq!(&a[..], &b.data()[..INPUT_SIZE * INPUT_SIZE]);
    }

    #[test]
    fn identity_augment_equals_resize() {
        let img = Raster::from_gray_fn(300, 240, |y, x| ((y * 3 + x * 5) % 256) as u8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&img, &AugmentConfig::identity(), &mut rng), resize(&img));
    }

    #[test]
    fn forced_flip_mirrors_resize() {
        let img = Raster::from_gray_fn(300, 240, |y, x| ((y * 3 + x * 5) % 256) as u8);
        let cfg = AugmentConfig {
            hflip_prob: 1.0,
            ..AugmentConfig::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(augment(&img, &cfg, &mut rng), resize(&img).mirrored());
    }

    #[test]
    fn augment_is_deterministic_per_stream() {
        let img = checker(100);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut item_rng(4, 1, "r1"));
        let b = augment(&img, &cfg, &mut item_rng(4, 1, "r1"));
        let c = augment(&img, &cfg, &mut item_rng(4, 2, "r1"));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.height(), a.width()), (INPUT_SIZE, INPUT_SIZE));
    }

    #[test]
    fn pure_rotation_keeps_center_pixel() {
        let img = Raster::from_gray_fn(224, 224, |y, x| ((y * 7 + x * 3) % 256) as u8);
        let cfg = AugmentConfig {
            rotation_max_deg: 30.0,
            ..AugmentConfig::identity()
        };
        let out = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        // the rotation fixes (112, 112), which lies on a pixel corner
        let around: f32 = [(111, 111), (111, 112), (112, 111), (112, 112)]
            .iter()
            .map(|&(y, x)| img.get(y, x, 0) as f32)
            .sum::<f32>()
            / 4.0;
        let got: f32 = [(111, 111), (111, 112), (112, 111), (112, 112)]
            .iter()
            .map(|&(y, x)| out.get(0, y, x))
            .sum::<f32>()
            / 4.0;
        assert!((got - around).abs() < 20.0);
        assert_ne!(out, resize(&img));
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig::identity().validate().is_ok());
        let bad = [
            AugmentConfig { crop_scale_range: (0.9, 0.8), ..Default::default() },
            AugmentConfig { crop_scale_range: (0.0, 1.0), ..Default::default() },
            AugmentConfig { hflip_prob: 1.5, ..Default::default() },
            AugmentConfig { rotation_max_deg: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    proptest! {
        #[test]
        fn any_shape_gives_fixed_size_and_bounded_values(h in 1usize..60, w in 1usize..60, c in prop::sample::select(vec![1usize, 3]), seed in any::<u64>()) {
            let data: Vec<u8> = (0..h * w * c).map(|i| (seed.wrapping_mul(2 * i as u64 + 1) >> 24) as u8).collect();
            let img = Raster::new(h, w, c, data).unwrap();
            let out = resize_normalize(&img, "p");
            prop_assert_eq!(out.tensor.len(), ModelInput::LEN);
            let plane = INPUT_SIZE * INPUT_SIZE;
            for (i, &v) in out.tensor.iter().enumerate() {
                let ch = i / plane;
                let back = v * IMAGENET_STD[ch] + IMAGENET_MEAN[ch];
                prop_assert!((-1e-6..=1.0 + 1e-6).contains(&back));
            }
        }
    }
}
