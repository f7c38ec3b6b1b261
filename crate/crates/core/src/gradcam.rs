//! Gradient-weighted class activation maps.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{Backbone, LayerError, Mode, Tensor};
use crate::pixels::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub sample_id: String,
    pub target_layer: String,
    pub target_class: usize,
    pub raw_height: usize,
    pub raw_width: usize,
    /// Rectified channel-weighted activation sum, row-major.
    pub raw_map: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// `raw_map` upsampled to the input size and divided by `global_scale`.
    pub upsampled_map: Vec<f64>,
    pub global_scale: f64,
}

impl ActivationMap {
    pub fn raw_max(&self) -> f64 {
        self.raw_map.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GradCamError {
    #[error("class {class} out of range for a {classes}-class model")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("images in a batch must share one shape")]
    MixedShapes,
    #[error("backbone recorded no activations for `{0}`")]
    NothingCaptured(String),
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s as usize).min(len - 1);
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Raw maps for a batch of images, in input order.
fn raw_maps(
    backbone: &mut dyn Backbone,
    images: &[&Image],
    target_class: usize,
    target_layer: &str,
) -> Result<Vec<(usize, usize, Vec<f64>)>, GradCamError> {
    let classes = backbone.num_classes();
    if target_class >= classes {
        return Err(GradCamError::ClassOutOfRange {
            class: target_class,
            classes,
        });
    }
    backbone.set_capture(Some(target_layer))?;
    if images.is_empty() {
        backbone.set_capture(None)?;
        return Ok(Vec::new());
    }
    let (c, h, w) = (images[0].channels, images[0].height, images[0].width);
    if images.iter().any(|i| (i.channels, i.height, i.width) != (c, h, w)) {
        backbone.set_capture(None)?;
        return Err(GradCamError::MixedShapes);
    }
    let n = images.len();
    let mut data = Vec::with_capacity(n * c * h * w);
    for img in images {
        data.extend_from_slice(&img.data);
    }
    let input = Tensor::from_vec(n, c, h, w, data).expect("checked shapes");
    backbone.forward(&input, Mode::Eval);
    let mut d_logits = vec![0.0f32; n * classes];
    for i in 0..n {
        d_logits[i * classes + target_class] = 1.0;
    }
    backbone.backward(&vec![0.0; n * backbone.embedding_dim()], &d_logits);

    let maps = match backbone.captured() {
        None => Err(GradCamError::NothingCaptured(target_layer.to_string())),
        Some((act, grad)) => {
            let plane = act.h * act.w;
            Ok((0..n)
                .map(|i| {
                    let (a, g) = (act.sample(i), grad.sample(i));
                    let mut map = vec![0.0f64; plane];
                    for ch in 0..act.c {
                        let gs = &g[ch * plane..(ch + 1) * plane];
                        let weight = gs.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
                        for (m, &v) in map.iter_mut().zip(&a[ch * plane..(ch + 1) * plane]) {
                            *m += weight * v as f64;
                        }
                    }
                    for m in &mut map {
                        *m = m.max(0.0);
                    }
                    (act.h, act.w, map)
                })
                .collect())
        }
    };
    backbone.set_capture(None)?;
    backbone.zero_grad();
    maps
}

fn finish(
    sample_id: String,
    target_layer: &str,
    target_class: usize,
    (raw_height, raw_width, raw_map): (usize, usize, Vec<f64>),
    image: &Image,
    global_scale: f64,
) -> ActivationMap {
    let mut upsampled_map = upsample_bilinear(&raw_map, raw_height, raw_width, image.height, image.width);
    for v in &mut upsampled_map {
        *v /= global_scale;
    }
    ActivationMap {
        sample_id,
        target_layer: target_layer.to_string(),
        target_class,
        raw_height,
        raw_width,
        raw_map,
        height: image.height,
        width: image.width,
        upsampled_map,
        global_scale,
    }
}

/// Grad-CAM of `target_class` at `target_layer` for one normalized image.
/// The upsampled map is left unscaled (`global_scale` = 1).
pub fn gradcam(
    backbone: &mut dyn Backbone,
    sample_id: &str,
    image: &Image,
    target_class: usize,
    target_layer: &str,
) -> Result<ActivationMap, GradCamError> {
    let raw = raw_maps(backbone, &[image], target_class, target_layer)?
        .pop()
        .expect("one map per image");
    Ok(finish(sample_id.to_string(), target_layer, target_class, raw, image, 1.0))
}

/// Rescales every upsampled map by one shared scale: the largest raw value
/// across `maps` (1 when every map is zero).
pub fn share_scale(maps: &mut [ActivationMap]) {
    let max = maps.iter().map(ActivationMap::raw_max).fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    for m in maps {
        let factor = m.global_scale / scale;
        for v in &mut m.upsampled_map {
            *v *= factor;
        }
        m.global_scale = scale;
    }
}

/// Grad-CAM for several images, all upsampled maps divided by one shared
/// scale as in [`share_scale`].
pub fn gradcam_batch(
    backbone: &mut dyn Backbone,
    samples: &[(String, Image)],
    target_class: usize,
    target_layer: &str,
) -> Result<Vec<ActivationMap>, GradCamError> {
    let images: Vec<&Image> = samples.iter().map(|(_, i)| i).collect();
    let raws = raw_maps(backbone, &images, target_class, target_layer)?;
    let mut maps: Vec<ActivationMap> = samples
        .iter()
        .zip(raws)
        .map(|((id, img), raw)| finish(id.clone(), target_layer, target_class, raw, img, 1.0))
        .collect();
    share_scale(&mut maps);
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ResNet, ResNetConfig};

    fn image(seed: u32, size: usize) -> Image {
        let data = (0..3 * size * size)
            .map(|i| {
                let x = (i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed.wrapping_mul(40_503));
                (x >> 8) as f32 / (1u32 << 24) as f32 - 0.5
            })
            .collect();
        Image::new(3, size, size, data).unwrap()
    }

    #[test]
    fn upsample_identity_and_constant() {
        let src = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(upsample_bilinear(&src, 2, 2, 2, 2), src.to_vec());
        let flat = upsample_bilinear(&[5.0; 4], 2, 2, 7, 3);
        assert!(flat.iter().all(|&v| (v - 5.0).abs() < 1e-12));
        // 1×2 → 1×4: clamped outer pixels, interpolated inner ones.
        assert_eq!(upsample_bilinear(&[0.0, 4.0], 1, 2, 1, 4), vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn map_shapes_and_rectification() {
        let mut net = ResNet::new(ResNetConfig::tiny(4, 2), 3);
        let img = image(1, 16);
        let map = gradcam(&mut net, "s", &img, 1, "stage3").unwrap();
        assert_eq!((map.raw_height, map.raw_width), (4, 4));
        assert_eq!((map.height, map.width), (16, 16));
        assert_eq!(map.upsampled_map.len(), 256);
        assert!(map.raw_map.iter().all(|&v| v >= 0.0));
        assert_eq!(map.global_scale, 1.0);
    }

    #[test]
    fn zero_input_gives_zero_map() {
        let mut net = ResNet::new(ResNetConfig::tiny(4, 2), 0);
        let img = Image::new(3, 8, 8, vec![0.0; 192]).unwrap();
        let map = gradcam(&mut net, "z", &img, 0, "stage2").unwrap();
        assert!(map.raw_map.iter().all(|&v| v == 0.0));
        assert!(map.upsampled_map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_shares_one_scale() {
        let mut net = ResNet::new(ResNetConfig::tiny(4, 2), 5);
        let samples: Vec<(String, Image)> = (0..3).map(|i| (alloc::format!("s{i}"), image(i, 16))).collect();
        let maps = gradcam_batch(&mut net, &samples, 0, "stage2").unwrap();
        let max = maps.iter().map(|m| m.raw_max()).fold(0.0, f64::max);
        for (m, (_, img)) in maps.iter().zip(&samples) {
            assert_eq!(m.global_scale, max);
            assert!(m.upsampled_map.iter().all(|&v| v <= 1.0 + 1e-12));
            // Batched and single computations agree on the raw map.
            let single = gradcam(&mut net, "x", img, 0, "stage2").unwrap();
            for (a, b) in single.raw_map.iter().zip(&m.raw_map) {
                assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
            }
        }
        let mut singles: Vec<ActivationMap> = samples
            .iter()
            .map(|(id, img)| gradcam(&mut net, id, img, 0, "stage2").unwrap())
            .collect();
        share_scale(&mut singles);
        for (s, m) in singles.iter().zip(&maps) {
            assert!((s.global_scale - m.global_scale).abs() <= 1e-5 * m.global_scale);
            for (a, b) in s.upsampled_map.iter().zip(&m.upsampled_map) {
                assert!((a - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn errors() {
        let mut net = ResNet::new(ResNetConfig::tiny(4, 2), 0);
        let img = image(0, 8);
        assert_eq!(
            gradcam(&mut net, "a", &img, 2, "stage1"),
            Err(GradCamError::ClassOutOfRange { class: 2, classes: 2 })
        );
        assert!(matches!(
            gradcam(&mut net, "a", &img, 0, "fc"),
            Err(GradCamError::Layer(LayerError::NotSpatial(_)))
        ));
        assert!(matches!(
            gradcam(&mut net, "a", &img, 0, "stage9"),
            Err(GradCamError::Layer(LayerError::Unknown(_)))
        ));
    }
}
