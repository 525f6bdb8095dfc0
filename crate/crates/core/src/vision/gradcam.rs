//! Gradient-weighted class activation maps.
//!
//! The activation of a target convolution is taken after its immediately
//! following ReLU when there is one (the usual "rectified feature map"),
//! otherwise the raw convolution output.

use serde::{Deserialize, Serialize};

use super::image::{encode_ppm, to_byte};
use super::net::{CnnModel, LayerSpec, Tensor};
use super::{ImageTensor, VisionError};

/// Saliency at feature-map resolution plus its bilinear upsampling to the
/// input. Both grids are independently max-normalized to [0, 1] (or all
/// zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub grid_height: usize,
    pub grid_width: usize,
    pub grid: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub overlay: Vec<f64>,
    /// Unnormalized `relu(sum_c alpha_c A_c)`.
    pub raw: Vec<f64>,
    /// Channel weights `alpha_c` (empty for averaged maps).
    pub channel_weights: Vec<f64>,
}

impl SaliencyMap {
    pub fn is_zero(&self) -> bool {
        self.grid.iter().all(|&v| v == 0.0)
    }

    pub fn flip_horizontal(&self) -> SaliencyMap {
        let flip = |v: &[f64], h: usize, w: usize| -> Vec<f64> {
            (0..h * w).map(|p| v[(p / w) * w + (w - 1 - p % w)]).collect()
        };
        SaliencyMap {
            grid: flip(&self.grid, self.grid_height, self.grid_width),
            raw: flip(&self.raw, self.grid_height, self.grid_width),
            overlay: flip(&self.overlay, self.height, self.width),
            ..self.clone()
        }
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter().map(|x| x / max).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Bilinear resize with half-pixel centers (edges clamped).
pub fn upsample_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let coord = |d: usize, s: usize, dn: usize| -> (usize, usize, f64) {
        let pos = ((d as f64 + 0.5) * s as f64 / dn as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Grad-CAM of the logit with respect to convolution layer `target_layer`.
pub fn grad_cam(model: &CnnModel, image: &ImageTensor, target_layer: usize) -> Result<SaliencyMap, VisionError> {
    let layer = model.layers.get(target_layer).ok_or(VisionError::LayerNotFound(target_layer))?;
    if !layer.spec.is_conv() {
        return Err(VisionError::NotConv(target_layer));
    }
    let x = Tensor::from(image);
    model.check_input(&x)?;
    let acts = model.forward(&x);
    let back = model.backward(&acts, 1.0);
    let act_index = match model.layers.get(target_layer + 1) {
        Some(l) if l.spec == LayerSpec::Relu => target_layer + 2,
        _ => target_layer + 1,
    };
    let a = &acts[act_index];
    let g = &back.acts[act_index];
    let (c, h, w) = (a.shape.c, a.shape.h, a.shape.w);
    let area = (h * w) as f64;
    let alpha: Vec<f64> = (0..c)
        .map(|ch| g.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / area)
        .collect();
    let raw: Vec<f64> = (0..h * w)
        .map(|p| {
            let s: f64 = (0..c).map(|ch| alpha[ch] * a.data[ch * h * w + p]).sum();
            s.max(0.0)
        })
        .collect();
    let grid = normalized(&raw);
    let overlay = normalized(&upsample_bilinear(&grid, h, w, image.height(), image.width()));
    Ok(SaliencyMap {
        grid_height: h,
        grid_width: w,
        grid,
        height: image.height(),
        width: image.width(),
        overlay,
        raw,
        channel_weights: alpha,
    })
}

/// Pixelwise mean of (already normalized) maps, re-normalized.
pub fn average_maps(maps: &[SaliencyMap]) -> Result<SaliencyMap, VisionError> {
    let first = maps.first().ok_or_else(|| VisionError::Empty("no maps to average".into()))?;
    let dims = |m: &SaliencyMap| (m.grid_height, m.grid_width, m.height, m.width);
    if maps.iter().any(|m| dims(m) != dims(first)) {
        return Err(VisionError::Shape("maps differ in size".into()));
    }
    let mean = |get: fn(&SaliencyMap) -> &Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; get(first).len()];
        for m in maps {
            for (a, v) in acc.iter_mut().zip(get(m)) {
                *a += v;
            }
        }
        acc.iter().map(|v| v / maps.len() as f64).collect()
    };
    Ok(SaliencyMap {
        grid: normalized(&mean(|m| &m.grid)),
        overlay: normalized(&mean(|m| &m.overlay)),
        raw: mean(|m| &m.raw),
        channel_weights: Vec::new(),
        ..first.clone()
    })
}

/// Pixelwise mean image.
pub fn average_faces(images: &[ImageTensor]) -> Result<ImageTensor, VisionError> {
    let first = images.first().ok_or_else(|| VisionError::Empty("no images to average".into()))?;
    if images.iter().any(|i| i.shape() != first.shape()) {
        return Err(VisionError::Shape("images differ in size".into()));
    }
    let mut acc = vec![0.0; first.data().len()];
    for img in images {
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    let data = acc.into_iter().map(|v| (v / n).clamp(0.0, 1.0)).collect();
    ImageTensor::new(first.channels(), first.height(), first.width(), data)
}

fn hot(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [(3.0 * t).min(1.0), (3.0 * t - 1.0).clamp(0.0, 1.0), (3.0 * t - 2.0).clamp(0.0, 1.0)]
}

/// Opacity of the heat layer in overlays.
pub const HEAT_OPACITY: f64 = 0.4;

/// Face blended with a red-heat rendering of the map at 40% opacity.
pub fn overlay_ppm(face: &ImageTensor, map: &SaliencyMap) -> Result<Vec<u8>, VisionError> {
    if (face.height(), face.width()) != (map.height, map.width) {
        return Err(VisionError::Shape("face and map differ in size".into()));
    }
    let (h, w) = (face.height(), face.width());
    let mut rgb = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        let heat = hot(map.overlay[p]);
        for (c, hv) in heat.iter().enumerate() {
            let base = face.data()[(c % face.channels()) * h * w + p];
            rgb.push(to_byte((1.0 - HEAT_OPACITY) * base + HEAT_OPACITY * hv));
        }
    }
    Ok(encode_ppm(w, h, &rgb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// Fraction of total overlay mass inside a quadrant (0 for a zero map).
pub fn quadrant_mass(map: &SaliencyMap, q: Quadrant) -> f64 {
    let (h, w) = (map.height, map.width);
    let total: f64 = map.overlay.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let (top, left) = match q {
        Quadrant::TopLeft => (true, true),
        Quadrant::TopRight => (true, false),
        Quadrant::BottomLeft => (false, true),
        Quadrant::BottomRight => (false, false),
    };
    let inside: f64 = (0..h * w)
        .filter(|p| ((p / w) < h / 2) == top && ((p % w) < w / 2) == left)
        .map(|p| map.overlay[p])
        .sum();
    inside / total
}
