//! Grad-CAM for the convolutional model and map-to-image rendering.

use std::path::Path;

use crate::data::{write_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::model::{cnn_activation_grad, forward, Architecture, ModelParams, CNN_CHANNELS};
use crate::numcore::Matrix;

/// Non-negative class-activation grid at the resolution of a conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, all entries `>= 0`.
    pub values: Vec<f64>,
    pub class: usize,
    pub layer: String,
}

impl SaliencyMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Position `(x, y)` of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Channel weights: the spatial mean of `dY/dA` per channel.
pub fn channel_weights(grads: &[f64], channels: usize, height: usize, width: usize) -> Result<Vec<f64>> {
    let area = height * width;
    if grads.len() != channels * area || area == 0 {
        return Err(Error::Shape(format!(
            "{} gradient values for {channels} maps of {height}x{width}",
            grads.len()
        )));
    }
    Ok(grads
        .chunks(area)
        .map(|g| g.iter().sum::<f64>() / area as f64)
        .collect())
}

/// `ReLU(sum_k alpha_k A_k)` from channel-major activations and gradients.
pub fn combine_maps(activations: &[f64], grads: &[f64], channels: usize, height: usize, width: usize) -> Result<Vec<f64>> {
    if activations.len() != grads.len() {
        return Err(Error::Shape("activations and gradients differ in size".into()));
    }
    let alpha = channel_weights(grads, channels, height, width)?;
    let area = height * width;
    let mut out = vec![0.0; area];
    for (k, a) in alpha.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(&activations[k * area..(k + 1) * area]) {
            *o += a * v;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

fn require_cnn(params: &ModelParams) -> Result<()> {
    if params.architecture() != Architecture::TinyCnn {
        return Err(Error::UnsupportedArchitecture(format!(
            "grad-cam needs spatial activations; {} has none",
            params.architecture()
        )));
    }
    Ok(())
}

/// Grad-CAM of `class` for a model input given as features in `[0, 1]`.
///
/// `Y` is the sigmoid probability of the class and `A` the post-ReLU maps
/// of the convolution layer.
pub fn grad_cam_features(params: &ModelParams, features: &[f64], class: usize) -> Result<SaliencyMap> {
    require_cnn(params)?;
    if class >= params.num_classes() {
        return Err(Error::Contract(format!(
            "class {class} out of range for {} classes",
            params.num_classes()
        )));
    }
    let (h, w) = params.image_shape().expect("tiny-cnn has an image shape");
    let x = Matrix::from_vec(1, features.len(), features.to_vec())?;
    let (_, trace) = forward(params, &x)?;
    let grads = cnn_activation_grad(params, &trace, 0, class)?;
    let acts = trace.conv_activations().expect("cnn trace").row(0);
    Ok(SaliencyMap {
        width: w,
        height: h,
        values: combine_maps(acts, &grads, CNN_CHANNELS, h, w)?,
        class,
        layer: "conv".into(),
    })
}

pub fn grad_cam(params: &ModelParams, image: &GrayImage, class: usize) -> Result<SaliencyMap> {
    require_cnn(params)?;
    let (h, w) = params.image_shape().expect("tiny-cnn has an image shape");
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "image is {}x{}, model expects {w}x{h}",
            image.width(),
            image.height()
        )));
    }
    grad_cam_features(params, &image.to_unit_features(), class)
}

fn sample_coord(i: usize, out: usize, src: usize) -> f64 {
    if out == 1 {
        (src - 1) as f64 / 2.0
    } else {
        i as f64 * (src - 1) as f64 / (out - 1) as f64
    }
}

/// Bilinear resize (corner-aligned) to `width x height`, then min-max
/// normalization to `0..=255`. A constant map becomes all zeros.
pub fn rescale_map(map: &SaliencyMap, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::Shape(format!("cannot rescale to {width}x{height}")));
    }
    if map.width == 0 || map.height == 0 || map.values.len() != map.width * map.height {
        return Err(Error::Shape("saliency map is empty or malformed".into()));
    }
    let mut vals = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = sample_coord(y, height, map.height);
        let y0 = (sy.floor() as usize).min(map.height - 1);
        let y1 = (y0 + 1).min(map.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = sample_coord(x, width, map.width);
            let x0 = (sx.floor() as usize).min(map.width - 1);
            let x1 = (x0 + 1).min(map.width - 1);
            let fx = sx - x0 as f64;
            let top = map.get(x0, y0) * (1.0 - fx) + map.get(x1, y0) * fx;
            let bottom = map.get(x0, y1) * (1.0 - fx) + map.get(x1, y1) * fx;
            vals.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        vals.iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; width * height]
    };
    GrayImage::new(width, height, pixels)
}

/// Input on the left, `0.5 * input + 0.5 * saliency` on the right.
pub fn composite(image: &GrayImage, saliency: &GrayImage) -> Result<GrayImage> {
    if (image.width(), image.height()) != (saliency.width(), saliency.height()) {
        return Err(Error::Shape("saliency and image differ in size".into()));
    }
    let blended: Vec<u8> = image
        .pixels()
        .iter()
        .zip(saliency.pixels())
        .map(|(&a, &b)| ((a as f64 + b as f64) / 2.0).round() as u8)
        .collect();
    image.hconcat(&GrayImage::new(image.width(), image.height(), blended)?)
}

/// Writes the rescaled saliency map and the side-by-side composite.
pub fn write_saliency(image: &GrayImage, map: &SaliencyMap, saliency_path: &Path, composite_path: &Path) -> Result<GrayImage> {
    let sal = rescale_map(map, image.width(), image.height())?;
    write_pgm(saliency_path, &sal)?;
    write_pgm(composite_path, &composite(image, &sal)?)?;
    Ok(sal)
}
