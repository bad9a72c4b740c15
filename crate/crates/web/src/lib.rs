//! WebAssembly bindings for the demo page in `www/`. Every export takes
//! plain numbers or text and returns JSON.

use microatt::evaluation::{default_grid, threshold_sweep};
use microatt::optflow::{
    detect_apex, extract_phase_features, farneback_flow, flow_magnitude, smooth_texture, ApexConfig,
    FarnebackParams, GrayImage,
};
use microatt::pipeline::crop_sequence;
use microatt::pipeline::synth::{synth_generate, SynthConfig};
use microatt::types::{Labels, NUM_CLASSES};
use microatt::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_SIDE: usize = 160;

/// Grayscale image as 8-bit values, row-major.
#[derive(Clone, Debug, Serialize)]
pub struct Picture {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Picture {
    fn gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            pixels: img.to_u8(),
        }
    }

    /// Scales `values` so the largest maps to 255.
    fn normalized(width: usize, height: usize, values: &[f64]) -> Self {
        let top = values.iter().copied().fold(0.0, f64::max);
        let scale = if top > 0.0 { 255.0 / top } else { 0.0 };
        Self {
            width,
            height,
            pixels: values.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowDemo {
    pub mean_u: f64,
    pub mean_v: f64,
    /// Mean endpoint error against the true shift, border excluded.
    pub endpoint_error: f64,
    pub prev: Picture,
    pub next: Picture,
    pub magnitude: Picture,
}

/// Flow between a texture and its copy shifted by `(dx, dy)` pixels.
pub fn flow_pair(dx: f64, dy: f64, side: usize, seed: u64) -> Result<FlowDemo> {
    if !(16..=MAX_SIDE).contains(&side) {
        return Err(Error::Config(format!("side must be within 16..={MAX_SIDE}")));
    }
    if !(dx.abs() <= 8.0 && dy.abs() <= 8.0) {
        return Err(Error::Config("shifts are limited to ±8 px".into()));
    }
    let m = 10;
    let big = smooth_texture(side + 2 * m, side + 2 * m, seed);
    let prev = GrayImage::from_fn_clamped(side, side, |x, y| big.get(x + m, y + m));
    let next = GrayImage::from_fn_clamped(side, side, |x, y| {
        big.sample((x + m) as f64 - dx, (y + m) as f64 - dy)
    });
    let flow = farneback_flow(&prev, &next, &FarnebackParams::default())?;
    let border = side / 8;
    let (mut su, mut sv, mut se, mut n) = (0.0, 0.0, 0.0, 0);
    for y in border..side - border {
        for x in border..side - border {
            let i = y * side + x;
            su += flow.u[i];
            sv += flow.v[i];
            se += (flow.u[i] - dx).hypot(flow.v[i] - dy);
            n += 1;
        }
    }
    let n = n as f64;
    let mag = flow_magnitude(&flow);
    Ok(FlowDemo {
        mean_u: su / n,
        mean_v: sv / n,
        endpoint_error: se / n,
        prev: Picture::gray(&prev),
        next: Picture::gray(&next),
        magnitude: Picture::normalized(side, side, &mag.m),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ApexDemo {
    pub intensities: Vec<f64>,
    pub apex: usize,
    pub true_apex: usize,
    pub low_confidence: bool,
    /// Generator motif amplitude per frame.
    pub amplitudes: Vec<f64>,
    pub onset: Picture,
    pub apex_frame: Picture,
    /// Onset-to-apex flow magnitude.
    pub motion: Picture,
}

/// Apex detection on the left view of one generated sequence.
pub fn apex_curve(class: usize, peak: f64, frames: usize, seed: u64) -> Result<ApexDemo> {
    if class >= NUM_CLASSES {
        return Err(Error::Config(format!("class must be below {NUM_CLASSES}")));
    }
    let mut counts = [0; NUM_CLASSES];
    counts[class] = 1;
    let cfg = SynthConfig {
        counts_per_class: counts,
        multi_label_fraction: 0.0,
        view_width: 64,
        height: 64,
        frames_min: frames,
        frames_max: frames,
        peak_min: peak,
        peak_max: peak,
        subjects: 3,
        ..SynthConfig::default()
    };
    let seq = synth_generate(&cfg, seed)?.remove(0);
    let rec = seq.records()?.remove(0);
    let crop = crop_sequence(&rec)?;
    let params = FarnebackParams::default();
    let apex = detect_apex(&crop.frames, &params, &ApexConfig::default())?;
    let phases = extract_phase_features(&crop.frames, apex.index, &params)?;
    let m = &phases.onset_apex;
    let motion: Vec<f64> = m.channel(2).iter().map(|&v| v as f64).collect();
    Ok(ApexDemo {
        apex: apex.index,
        true_apex: seq.truth.apex,
        low_confidence: apex.low_confidence,
        intensities: apex.intensities,
        amplitudes: seq.truth.amplitudes.clone(),
        onset: Picture::gray(&crop.frames[0]),
        apex_frame: Picture::gray(&crop.frames[apex.index]),
        motion: Picture::normalized(m.width, m.height, &motion),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepDemo {
    pub curve: Vec<(f64, f64)>,
    pub best_theta: f64,
    pub best_uf1: f64,
    pub sequences: usize,
}

type Scores = [f64; NUM_CLASSES];

/// Parses one sequence per line: five probabilities then five 0/1 labels,
/// separated by commas or whitespace. Blank lines and `#` comments are
/// skipped.
pub fn parse_scores(text: &str) -> Result<(Vec<Vec<Scores>>, Vec<Labels>)> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let vals = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 2 * NUM_CLASSES {
            return Err(bad(format!("expected {} values, found {}", 2 * NUM_CLASSES, vals.len())));
        }
        if vals[..NUM_CLASSES].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(bad("probabilities must lie in [0, 1]".into()));
        }
        let mut l = [0u8; NUM_CLASSES];
        for (k, &v) in vals[NUM_CLASSES..].iter().enumerate() {
            l[k] = match v {
                0.0 => 0,
                1.0 => 1,
                _ => return Err(bad(format!("label {v} is not 0 or 1"))),
            };
        }
        probs.push(vec![std::array::from_fn(|k| vals[k])]);
        labels.push(l);
    }
    if labels.is_empty() {
        return Err(Error::Data("no score lines".into()));
    }
    Ok((probs, labels))
}

/// UF1 over the default threshold grid.
pub fn sweep_text(text: &str) -> Result<SweepDemo> {
    let (probs, labels) = parse_scores(text)?;
    let sw = threshold_sweep(&probs, &labels, &default_grid())?;
    Ok(SweepDemo {
        sequences: labels.len(),
        curve: sw.curve,
        best_theta: sw.best_theta,
        best_uf1: sw.best_uf1,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("demo output serializes"))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = flowPair)]
pub fn flow_pair_js(dx: f64, dy: f64, side: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(flow_pair(dx, dy, side as usize, seed.into()))
}

#[wasm_bindgen(js_name = apexCurve)]
pub fn apex_curve_js(class: u32, peak: f64, frames: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(apex_curve(class as usize, peak, frames as usize, seed.into()))
}

#[wasm_bindgen(js_name = sweepScores)]
pub fn sweep_scores_js(text: &str) -> std::result::Result<String, JsValue> {
    to_js(sweep_text(text))
}
