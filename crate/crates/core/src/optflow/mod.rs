//! Dense optical flow (Farneback polynomial expansion), motion magnitude and
//! intensity, apex-frame detection and phase features.
//!
//! Flow fields follow the convention `prev(x, y) ≈ next(x + u, y + v)`, so
//! content moving right between frames has positive `u`.

mod apex;
pub mod dump;
mod farneback;
mod image;
mod poly;

pub use apex::{
    detect_apex, extract_phase_features, flow_magnitude, motion_intensity, motion_intensity_interior,
    ApexConfig, ApexResult, MagnitudeMap, MotionFeature, MotionIntensity, PhaseFeatures,
};
pub use farneback::{farneback_flow, FarnebackParams, FlowField, MIN_FLOW_EXTENT};
pub use image::{GrayImage, Grid};
pub use poly::{poly_expansion, PolyCoeffs};

/// Smoothed random texture in roughly `[0.1, 0.9]`, used by tests and the
/// synthetic generator.
pub fn smooth_texture(width: usize, height: usize, seed: u64) -> Grid {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Grid::from_fn(width, height, |_, _| rng.random::<f64>());
    let g = noise.blur5().blur5();
    let (lo, hi) = g
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    Grid {
        width,
        height,
        data: g.data.iter().map(|v| 0.1 + 0.8 * (v - lo) / span).collect(),
    }
}
