//! View splitting, face boxes and cropping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optflow::GrayImage;

/// Narrowest composite frame that can be split into two views.
pub const MIN_COMPOSITE_WIDTH: usize = 64;

/// Splits a side-by-side composite at `floor(width / 2)`.
pub fn split_views(image: &GrayImage) -> Result<(GrayImage, GrayImage)> {
    let w = image.width();
    if w < MIN_COMPOSITE_WIDTH {
        return Err(Error::data(format!(
            "composite width {w} below {MIN_COMPOSITE_WIDTH}"
        )));
    }
    let half = w / 2;
    let h = image.height();
    Ok((image.crop(0, 0, half, h)?, image.crop(half, 0, w - half, h)?))
}

/// Axis-aligned box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Intersection with a `width × height` frame; may be empty.
    pub fn clamped(&self, width: usize, height: usize) -> Self {
        let x = self.x.min(width);
        let y = self.y.min(height);
        Self {
            x,
            y,
            w: self.w.min(width - x),
            h: self.h.min(height - y),
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }
}

/// Minimum share of the frame the face component must cover.
const MIN_FACE_FRACTION: f64 = 0.05;
/// Total growth applied to the component box, split evenly per side.
const BOX_EXPANSION: f64 = 0.10;

/// Threshold maximizing between-class variance over a 256-bin histogram.
/// Foreground is `value > threshold`.
pub fn otsu_threshold(frame: &GrayImage) -> f32 {
    let mut hist = [0u64; 256];
    for &v in frame.data() {
        hist[((v * 255.0).round() as usize).min(255)] += 1;
    }
    let total = frame.data().len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 255usize);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best {
            best = between;
            best_t = t;
        }
    }
    (best_t as f32 + 0.5) / 255.0
}

/// Face box for one frame: the supplied box when present, otherwise the
/// largest bright component (4-connected) above the Otsu threshold, grown by
/// 10%. Falls back to the whole frame when nothing covers 5% of it.
pub fn detect_bbox(frame: &GrayImage, supplied: Option<BBox>) -> BBox {
    let (w, h) = (frame.width(), frame.height());
    if let Some(b) = supplied {
        return b;
    }
    let t = otsu_threshold(frame);
    let fg: Vec<bool> = frame.data().iter().map(|&v| v > t).collect();
    let mut label = vec![false; w * h];
    let mut stack = Vec::new();
    let mut best: Option<(usize, BBox)> = None;
    for start in 0..w * h {
        if !fg[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut count = 0;
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if fg[j] && !label[j] {
                    label[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)));
        }
    }
    match best {
        Some((count, b)) if count as f64 >= MIN_FACE_FRACTION * (w * h) as f64 => expand(b, w, h),
        _ => BBox::full(w, h),
    }
}

fn expand(b: BBox, width: usize, height: usize) -> BBox {
    let gx = (b.w as f64 * BOX_EXPANSION / 2.0).round() as usize;
    let gy = (b.h as f64 * BOX_EXPANSION / 2.0).round() as usize;
    let x = b.x.saturating_sub(gx);
    let y = b.y.saturating_sub(gy);
    BBox::new(x, y, b.x + b.w + gx - x, b.y + b.h + gy - y).clamped(width, height)
}

/// Largest-area box of a sequence (earliest on ties), clamped to the frame.
pub fn select_sequence_bbox(boxes: &[BBox], width: usize, height: usize) -> Result<BBox> {
    let mut best = *boxes
        .first()
        .ok_or_else(|| Error::usage("no boxes to select from"))?;
    for b in &boxes[1..] {
        if b.area() > best.area() {
            best = *b;
        }
    }
    Ok(best.clamped(width, height))
}

/// Crop at native resolution.
pub fn crop(frame: &GrayImage, bbox: BBox) -> Result<GrayImage> {
    let b = bbox.clamped(frame.width(), frame.height());
    if b.area() == 0 {
        return Err(Error::data(format!("crop box {bbox:?} has zero area inside the frame")));
    }
    frame.crop(b.x, b.y, b.w, b.h)
}

/// Crop followed by a direct bilinear resize to `side × side`.
pub fn crop_resize(frame: &GrayImage, bbox: BBox, side: usize) -> Result<GrayImage> {
    if side == 0 {
        return Err(Error::config("resize side must be positive"));
    }
    Ok(crop(frame, bbox)?.resize(side, side))
}
