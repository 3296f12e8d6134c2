use cxrsynth::model::CamMap;
use cxrsynth::preprocess::resize_to;
use cxrsynth::raster::Raster;

pub const ALPHA: f32 = 0.4;

/// Jet-style colormap: blue (0) through green to red (1).
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |c: f32| ((1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// RGB raster of the CAM blended at [`ALPHA`] over the grayscale image
/// resized to the CAM grid.
pub fn render(image: &Raster, cam: &CamMap) -> Raster {
    assert_eq!(cam.height, cam.width, "square CAM grid");
    let base = resize_to(image, cam.height).to_gray_raster();
    let mut data = Vec::with_capacity(cam.height * cam.width * 3);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let g = base.get(y, x, 0) as f32;
            for c in colormap(cam.at(y, x)) {
                data.push(((1.0 - ALPHA) * g + ALPHA * c as f32).round() as u8);
            }
        }
    }
    Raster::new(cam.height, cam.width, 3, data).expect("buffer sized to shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use cxrsynth::dataset::ClassLabel;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0, 0, 128]);
        assert_eq!(colormap(1.0), [128, 0, 0]);
        assert_eq!(colormap(0.5), [128, 255, 128]);
    }

    #[test]
    fn blend_is_alpha_weighted() {
        let img = Raster::from_gray_fn(8, 8, |_, _| 100);
        let cam = CamMap {
            record_id: "r".into(),
            target_class: ClassLabel::Pneumonia,
            score: 0.5,
            height: 4,
            width: 4,
            values: vec![1.0; 16],
        };
        let out = render(&img, &cam);
        assert_eq!((out.height(), out.width(), out.channels()), (4, 4, 3));
        // 0.6 * 100 + 0.4 * [128, 0, 0]
        assert_eq!(&out.data()[..3], &[111, 60, 60]);
    }
}
