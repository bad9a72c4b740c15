use serde::{Deserialize, Serialize};

use super::image::{GrayImage, Grid};
use super::poly::{poly_expansion, PolyCoeffs};
use crate::error::{Error, Result};

/// Minimum image extent accepted for flow estimation.
pub const MIN_FLOW_EXTENT: usize = 32;

/// Regularizer added to the 2x2 system determinant; keeps textureless
/// regions at zero displacement.
const DET_REG: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FarnebackParams {
    pub pyramid_scale: f64,
    /// Number of pyramid levels including the full-resolution one.
    pub levels: usize,
    pub window_size: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self {
            pyramid_scale: 0.5,
            levels: 3,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.2,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(Error::config(format!(
                "pyramid_scale must lie in (0, 1), got {}",
                self.pyramid_scale
            )));
        }
        if self.levels == 0 || self.iterations == 0 {
            return Err(Error::config("levels and iterations must be positive"));
        }
        if self.poly_n < 3 || self.poly_n.is_multiple_of(2) {
            return Err(Error::config(format!("poly_n must be odd and >= 3, got {}", self.poly_n)));
        }
        if self.window_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "window_size must be odd, got {}",
                self.window_size
            )));
        }
        if !(self.poly_sigma > 0.0) {
            return Err(Error::config("poly_sigma must be positive"));
        }
        Ok(())
    }
}

/// Dense displacement field: `prev(x, y) ≈ next(x + u, y + v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    fn resize_scaled(&self, width: usize, height: usize) -> Self {
        let su = width as f64 / self.width as f64;
        let sv = height as f64 / self.height as f64;
        let gu = Grid {
            width: self.width,
            height: self.height,
            data: self.u.clone(),
        }
        .resize(width, height);
        let gv = Grid {
            width: self.width,
            height: self.height,
            data: self.v.clone(),
        }
        .resize(width, height);
        Self {
            width,
            height,
            u: gu.data.into_iter().map(|x| x * su).collect(),
            v: gv.data.into_iter().map(|x| x * sv).collect(),
        }
    }
}

fn pyramid(base: Grid, params: &FarnebackParams) -> Vec<Grid> {
    let mut levels = vec![base];
    let min_side = MIN_FLOW_EXTENT.min(params.poly_n * 2).max(params.poly_n);
    while levels.len() < params.levels {
        let prev = levels.last().expect("non-empty");
        let w = (prev.width as f64 * params.pyramid_scale).round() as usize;
        let h = (prev.height as f64 * params.pyramid_scale).round() as usize;
        if w < min_side || h < min_side {
            break;
        }
        levels.push(prev.blur5().resize(w, h));
    }
    levels
}

/// Refines `flow` in place from the polynomial expansions of both frames.
fn refine(r0: &PolyCoeffs, r1: &PolyCoeffs, flow: &mut FlowField, window: usize) {
    let (w, h) = (r0.width, r0.height);
    let n = w * h;
    let field = |data: &[f64]| Grid {
        width: w,
        height: h,
        data: data.to_vec(),
    };
    let f1 = [
        field(&r1.b1),
        field(&r1.b2),
        field(&r1.a11),
        field(&r1.a22),
        field(&r1.a12),
    ];
    // Per-pixel products of the local system A d = Δb.
    let mut g11 = Grid::zeros(w, h);
    let mut g12 = Grid::zeros(w, h);
    let mut g22 = Grid::zeros(w, h);
    let mut h1 = Grid::zeros(w, h);
    let mut h2 = Grid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (flow.u[i], flow.v[i]);
            let (sx, sy) = (x as f64 + dx, y as f64 + dy);
            let s = |g: &Grid| g.sample(sx, sy);
            let a11 = 0.5 * (r0.a11[i] + s(&f1[2]));
            let a22 = 0.5 * (r0.a22[i] + s(&f1[3]));
            let a12 = 0.5 * (r0.a12[i] + s(&f1[4]));
            let db1 = -0.5 * (s(&f1[0]) - r0.b1[i]) + a11 * dx + a12 * dy;
            let db2 = -0.5 * (s(&f1[1]) - r0.b2[i]) + a12 * dx + a22 * dy;
            g11.data[i] = a11 * a11 + a12 * a12;
            g12.data[i] = a12 * (a11 + a22);
            g22.data[i] = a12 * a12 + a22 * a22;
            h1.data[i] = a11 * db1 + a12 * db2;
            h2.data[i] = a12 * db1 + a22 * db2;
        }
    }
    let [g11, g12, g22, h1, h2] = [g11, g12, g22, h1, h2].map(|g| g.box_mean(window));
    for i in 0..n {
        let det = g11.data[i] * g22.data[i] - g12.data[i] * g12.data[i] + DET_REG;
        flow.u[i] = (g22.data[i] * h1.data[i] - g12.data[i] * h2.data[i]) / det;
        flow.v[i] = (g11.data[i] * h2.data[i] - g12.data[i] * h1.data[i]) / det;
    }
}

/// Coarse-to-fine Farneback dense flow from `prev` to `next`.
pub fn farneback_flow(prev: &GrayImage, next: &GrayImage, params: &FarnebackParams) -> Result<FlowField> {
    params.validate()?;
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::dim(format!(
            "flow frames differ in extent: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    if prev.width() < MIN_FLOW_EXTENT || prev.height() < MIN_FLOW_EXTENT {
        return Err(Error::dim(format!(
            "flow needs frames of at least {MIN_FLOW_EXTENT}x{MIN_FLOW_EXTENT}, got {}x{}",
            prev.width(),
            prev.height()
        )));
    }
    let p0 = pyramid(prev.to_grid(), params);
    let p1 = pyramid(next.to_grid(), params);
    let coarsest = p0.last().expect("non-empty pyramid");
    let mut flow = FlowField::zeros(coarsest.width, coarsest.height);
    for level in (0..p0.len()).rev() {
        let (a, b) = (&p0[level], &p1[level]);
        if flow.width != a.width || flow.height != a.height {
            flow = flow.resize_scaled(a.width, a.height);
        }
        let r0 = poly_expansion(a, params.poly_n, params.poly_sigma)?;
        let r1 = poly_expansion(b, params.poly_n, params.poly_sigma)?;
        for _ in 0..params.iterations {
            refine(&r0, &r1, &mut flow, params.window_size);
        }
    }
    if !flow.is_finite() {
        return Err(Error::numeric("farneback_flow"));
    }
    Ok(flow)
}
