use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned box `[x1, y1, x2, y2]` in input-pixel coordinates.
pub type BBox = [f64; 4];

/// Intersection over union. Symmetric, in `[0, 1]`, and exactly 1 for
/// identical non-degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let area = |r: &BBox| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
}

impl Detection {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("detections serialize")
    }
}

/// Ground-truth object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: usize,
}

/// Layout of raw head outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub reg_bins: usize,
    pub num_classes: usize,
}

impl HeadLayout {
    pub fn channels(&self) -> usize {
        4 * self.reg_bins + self.num_classes
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax expectation over `bins` logits read with a stride.
fn expectation(logits: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut e) = (0.0, 0.0);
    for (i, l) in logits.enumerate() {
        let p = (l - max).exp();
        z += p;
        e += p * i as f64;
    }
    e / z
}

fn check_outputs(outputs: &[Tensor], strides: &[usize], layout: HeadLayout) -> Result<()> {
    if outputs.len() != strides.len() {
        return Err(Error::shape("decode", "head count", strides.len(), outputs.len()));
    }
    for o in outputs {
        if o.rank() != 4 {
            return Err(Error::shape("decode", "head rank", 4, o.rank()));
        }
        if o.shape()[1] != layout.channels() {
            return Err(Error::shape("decode", "head channels", layout.channels(), o.shape()[1]));
        }
    }
    Ok(())
}

/// Turns raw head outputs into detections, one per cell and image (its
/// best class), dropping cells scoring below `conf`. Returns one list per
/// batch image. Box sides are the softmax expectation over the regression
/// bins, in units of the cell's stride, measured from the cell center.
pub fn decode_batch(outputs: &[Tensor], strides: &[usize], layout: HeadLayout, conf: f64) -> Result<Vec<Vec<Detection>>> {
    check_outputs(outputs, strides, layout)?;
    let batch = outputs.first().map_or(0, |o| o.shape()[0]);
    let r = layout.reg_bins;
    let mut all = vec![Vec::new(); batch];
    for (o, &s) in outputs.iter().zip(strides) {
        let [_, c, h, w] = [o.shape()[0], o.shape()[1], o.shape()[2], o.shape()[3]];
        let (img_w, img_h) = ((w * s) as f64, (h * s) as f64);
        let plane = h * w;
        let d = o.data();
        for (b, dets) in all.iter_mut().enumerate() {
            let base = b * c * plane;
            for i in 0..h {
                for j in 0..w {
                    let at = |ch: usize| d[base + ch * plane + i * w + j];
                    let (class, logit) = (0..layout.num_classes)
                        .map(|k| (k, at(4 * r + k)))
                        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                    let score = sigmoid(logit);
                    if score < conf {
                        continue;
                    }
                    let side = |k: usize| expectation((0..r).map(move |bin| at(k * r + bin))) * s as f64;
                    let (cx, cy) = ((j as f64 + 0.5) * s as f64, (i as f64 + 0.5) * s as f64);
                    let bbox = [
                        (cx - side(0)).clamp(0.0, img_w),
                        (cy - side(1)).clamp(0.0, img_h),
                        (cx + side(2)).clamp(0.0, img_w),
                        (cy + side(3)).clamp(0.0, img_h),
                    ];
                    if bbox[0] < bbox[2] && bbox[1] < bbox[3] {
                        dets.push(Detection { bbox, class, score });
                    }
                }
            }
        }
    }
    Ok(all)
}

/// [`decode_batch`] for a single image.
pub fn decode(outputs: &[Tensor], strides: &[usize], layout: HeadLayout, conf: f64) -> Result<Vec<Detection>> {
    Ok(decode_batch(outputs, strides, layout, conf)?.into_iter().next().unwrap_or_default())
}

/// Index of the pyramid level responsible for a box: the finest level
/// whose stride is at least a quarter of the box's longer side (the last
/// level takes everything larger).
pub fn assign_level(bbox: &BBox, strides: &[usize]) -> usize {
    let side = (bbox[2] - bbox[0]).max(bbox[3] - bbox[1]);
    strides
        .iter()
        .position(|&s| side <= 4.0 * s as f64)
        .unwrap_or(strides.len() - 1)
}

/// Cell containing the box center at `stride`, clamped into the grid.
pub fn center_cell(bbox: &BBox, stride: usize, h: usize, w: usize) -> (usize, usize) {
    let cx = 0.5 * (bbox[0] + bbox[2]) / stride as f64;
    let cy = 0.5 * (bbox[1] + bbox[3]) / stride as f64;
    ((cy.floor().max(0.0) as usize).min(h - 1), (cx.floor().max(0.0) as usize).min(w - 1))
}

/// Distances (left, top, right, bottom) from the center of cell `(i, j)`
/// to the box edges, in units of `stride`.
pub fn side_distances(bbox: &BBox, stride: usize, i: usize, j: usize) -> [f64; 4] {
    let s = stride as f64;
    let (cx, cy) = ((j as f64 + 0.5) * s, (i as f64 + 0.5) * s);
    [(cx - bbox[0]) / s, (cy - bbox[1]) / s, (bbox[2] - cx) / s, (bbox[3] - cy) / s]
}

/// Logit value standing in for −∞.
pub const NEG_LOGIT: f64 = -1e4;

/// Builds head outputs that decode to exactly `gts`: each box is written at
/// its center cell on its assigned level as a two-hot bin distribution
/// with a confident class logit; every other logit is [`NEG_LOGIT`].
pub fn encode(gts: &[GtBox], image_hw: (usize, usize), strides: &[usize], layout: HeadLayout) -> Result<Vec<Tensor>> {
    let (ih, iw) = image_hw;
    let r = layout.reg_bins;
    let mut outs: Vec<Tensor> = strides
        .iter()
        .map(|&s| Tensor::full([1, layout.channels(), ih / s, iw / s], NEG_LOGIT))
        .collect();
    for gt in gts {
        if gt.class >= layout.num_classes {
            return Err(Error::invalid("encode", format!("class {} out of range", gt.class)));
        }
        let level = assign_level(&gt.bbox, strides);
        let s = strides[level];
        let (h, w) = (ih / s, iw / s);
        let (i, j) = center_cell(&gt.bbox, s, h, w);
        let dist = side_distances(&gt.bbox, s, i, j);
        let t = &mut outs[level];
        let plane = h * w;
        let data = t.data_mut();
        for (k, &dk) in dist.iter().enumerate() {
            if !(0.0..=(r - 1) as f64).contains(&dk) {
                return Err(Error::invalid("encode", format!("side {dk:.2} outside the {r}-bin range at stride {s}")));
            }
            let lo = dk.floor() as usize;
            let frac = dk - lo as f64;
            let ch = |bin: usize| (k * r + bin) * plane + i * w + j;
            data[ch(lo)] = (1.0 - frac).max(f64::MIN_POSITIVE).ln();
            if frac > 0.0 {
                data[ch(lo + 1)] = frac.ln();
            }
        }
        data[(4 * r + gt.class) * plane + i * w + j] = 20.0;
    }
    Ok(outs)
}
