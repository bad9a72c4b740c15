use serde::{Deserialize, Serialize};

use super::farneback::{farneback_flow, FarnebackParams, FlowField};
use super::image::{GrayImage, Grid};
use crate::error::{Error, Result};
use crate::tensorgrad::{Real, Tensor};

/// Per-pixel flow magnitude `√(u² + v²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeMap {
    pub width: usize,
    pub height: usize,
    pub m: Vec<f64>,
}

/// Sum of flow magnitudes over a frame, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MotionIntensity(pub f64);

pub fn flow_magnitude(flow: &FlowField) -> MagnitudeMap {
    MagnitudeMap {
        width: flow.width,
        height: flow.height,
        m: flow.u.iter().zip(&flow.v).map(|(u, v)| u.hypot(*v)).collect(),
    }
}

/// Total motion intensity over every pixel.
pub fn motion_intensity(flow: &FlowField) -> MotionIntensity {
    motion_intensity_interior(flow, 0)
}

/// Motion intensity over the pixels at least `border` away from every edge.
pub fn motion_intensity_interior(flow: &FlowField, border: usize) -> MotionIntensity {
    let mut total = 0.0;
    if flow.width > 2 * border && flow.height > 2 * border {
        for y in border..flow.height - border {
            for x in border..flow.width - border {
                let i = y * flow.width + x;
                total += flow.u[i].hypot(flow.v[i]);
            }
        }
    }
    MotionIntensity(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApexConfig {
    /// Pixels excluded at each edge when summing intensities.
    pub border_exclusion: usize,
    /// Low-motion threshold per summed pixel.
    pub motion_epsilon_per_pixel: f64,
}

impl Default for ApexConfig {
    fn default() -> Self {
        Self {
            border_exclusion: 2,
            motion_epsilon_per_pixel: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApexResult {
    pub index: usize,
    /// `intensities[f - 1]` is the intensity of frame `f` relative to frame 0.
    pub intensities: Vec<f64>,
    /// Peak intensity fell below the low-motion threshold.
    pub low_confidence: bool,
}

/// Flow from the onset (frame 0) to every later frame; the apex is the frame
/// of largest intensity, earliest index on ties.
pub fn detect_apex(frames: &[GrayImage], params: &FarnebackParams, cfg: &ApexConfig) -> Result<ApexResult> {
    if frames.len() < 3 {
        return Err(Error::data(format!(
            "apex detection needs at least 3 frames, got {}",
            frames.len()
        )));
    }
    let mut intensities = Vec::with_capacity(frames.len() - 1);
    for next in &frames[1..] {
        let flow = farneback_flow(&frames[0], next, params)?;
        intensities.push(motion_intensity_interior(&flow, cfg.border_exclusion).0);
    }
    let mut best = 0;
    for (i, &v) in intensities.iter().enumerate() {
        if v > intensities[best] {
            best = i;
        }
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    let b = cfg.border_exclusion;
    let pixels = w.saturating_sub(2 * b) * h.saturating_sub(2 * b);
    let eps_motion = cfg.motion_epsilon_per_pixel * pixels as f64;
    Ok(ApexResult {
        index: best + 1,
        low_confidence: intensities[best] < eps_motion,
        intensities,
    })
}

/// Three-channel motion descriptor `(u, v, m)` stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFeature {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl MotionFeature {
    pub fn from_flow(flow: &FlowField) -> Self {
        let n = flow.width * flow.height;
        let mut data = Vec::with_capacity(3 * n);
        data.extend(flow.u.iter().map(|&x| x as f32));
        data.extend(flow.v.iter().map(|&x| x as f32));
        let mags: Vec<f32> = data[..n]
            .iter()
            .zip(&data[n..])
            .map(|(&u, &v)| (u as f64).hypot(v as f64) as f32)
            .collect();
        data.extend(mags);
        Self {
            width: flow.width,
            height: flow.height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn plane(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        &self.data[k * self.plane()..(k + 1) * self.plane()]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[k * p..(k + 1) * p]
    }

    /// Bilinear per-channel resize. Displacements keep their native pixel
    /// units.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(3 * width * height);
        for k in 0..3 {
            let g = Grid {
                width: self.width,
                height: self.height,
                data: self.channel(k).iter().map(|&v| v as f64).collect(),
            }
            .resize(width, height);
            data.extend(g.data.iter().map(|&v| v as f32));
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// `[3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![3, self.height, self.width],
            self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        )
        .expect("feature extent")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseFeatures {
    pub onset_apex: MotionFeature,
    pub apex_offset: MotionFeature,
    /// The apex is the last frame, so the apex-offset phase is empty.
    pub degenerate: bool,
}

/// Cumulative flow features for onset→apex and apex→last frame.
pub fn extract_phase_features(
    frames: &[GrayImage],
    apex: usize,
    params: &FarnebackParams,
) -> Result<PhaseFeatures> {
    if frames.len() < 2 || apex == 0 || apex >= frames.len() {
        return Err(Error::data(format!(
            "apex index {apex} invalid for a sequence of {} frames",
            frames.len()
        )));
    }
    let onset_apex = MotionFeature::from_flow(&farneback_flow(&frames[0], &frames[apex], params)?);
    let last = frames.len() - 1;
    let (apex_offset, degenerate) = if apex == last {
        (MotionFeature::zeros(frames[0].width(), frames[0].height()), true)
    } else {
        (
            MotionFeature::from_flow(&farneback_flow(&frames[apex], &frames[last], params)?),
            false,
        )
    };
    Ok(PhaseFeatures {
        onset_apex,
        apex_offset,
        degenerate,
    })
}
