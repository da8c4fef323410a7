//! Input-gradient saliency: how strongly each input pixel moves the
//! log-likelihood of a transcript, rendered as colour overlays.

use std::path::{Path, PathBuf};

use crate::colormap::VIRIDIS;
use crate::ctc::ctc_logit_grad;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::util::write_atomic;

/// Largest overlay opacity, reached where saliency is 1.
pub const MAX_ALPHA: f64 = 0.6;

/// `(CTC loss, d(-loss)/d input)` for one `[T, H, W, C]` clip, with the
/// model in eval mode.
pub fn input_gradient<S: Scalar>(model: &Model<S>, clip: &Tensor<S>, target: &[usize]) -> Result<(S, Tensor<S>)> {
    if clip.rank() != 4 {
        return Err(Error::Shape(format!("saliency expects one [T,H,W,C] clip, got {:?}", clip.shape())));
    }
    let tape = model.forward_eval_tape(clip)?;
    let (loss, mut g) = ctc_logit_grad(&tape.probs, target)?;
    g.scale(-S::one());
    let (gin, _) = model.backward_logits(&tape, &g)?;
    Ok((loss, gin))
}

/// Absolute input gradient divided by its largest value over the clip, so
/// the map peaks at exactly 1. An all-zero gradient gives an all-zero map.
pub fn saliency<S: Scalar>(model: &Model<S>, clip: &Tensor<S>, target: &[usize]) -> Result<Tensor<S>> {
    let (_, g) = input_gradient(model, clip, target)?;
    Ok(normalize(&g))
}

pub fn normalize<S: Scalar>(grad: &Tensor<S>) -> Tensor<S> {
    let max = grad.max_abs();
    if max == S::zero() || !max.is_finite() {
        return Tensor::zeros(grad.shape());
    }
    grad.map(|v| (v.abs() / max).min(S::one()))
}

/// Blends one grayscale pixel with the colormap entry for saliency `s`.
///
/// With `g = round(255 * clamp(gray, 0, 1))`, `c = VIRIDIS[round(255 * s)]`
/// and `a = MAX_ALPHA * s`, each channel is `round((1 - a) * g + a * c)`.
pub fn blend_pixel(gray: f64, s: f64) -> [u8; 3] {
    let g = (gray.clamp(0.0, 1.0) * 255.0).round();
    let s = if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.0 };
    let c = VIRIDIS[(s * 255.0).round() as usize];
    let a = MAX_ALPHA * s;
    c.map(|ch| ((1.0 - a) * g + a * ch as f64).round() as u8)
}

/// Binary P6 image bytes of one overlaid frame. `clip` and `map` are
/// `[T, H, W, C]`; channel 0 is used.
pub fn heatmap_frame<S: Scalar>(map: &Tensor<S>, clip: &Tensor<S>, t: usize) -> Vec<u8> {
    let s = clip.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let i = ((t * h + y) * w + x) * c;
            let px = blend_pixel(clip.data()[i].to_f64().unwrap(), map.data()[i].to_f64().unwrap());
            out.extend_from_slice(&px);
        }
    }
    out
}

/// Writes `<prefix>_<t>.ppm` per frame into `out_dir`.
pub fn export_heatmaps<S: Scalar>(map: &Tensor<S>, clip: &Tensor<S>, out_dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    if map.shape() != clip.shape() || clip.rank() != 4 {
        return Err(Error::Shape(format!(
            "saliency map {:?} and clip {:?} must share one [T,H,W,C] shape",
            map.shape(),
            clip.shape()
        )));
    }
    (0..clip.shape()[0])
        .map(|t| {
            let path = out_dir.join(format!("{prefix}_{t:03}.ppm"));
            write_atomic(&path, &heatmap_frame(map, clip, t))?;
            Ok(path)
        })
        .collect()
}
