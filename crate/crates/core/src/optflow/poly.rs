use super::image::Grid;
use crate::error::{Error, Result};

/// Per-pixel quadratic model `f(p) ≈ pᵀAp + bᵀp + c` around each pixel,
/// `p = (x, y)` the offset in pixels, `A = [[a11, a12], [a12, a22]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyCoeffs {
    pub width: usize,
    pub height: usize,
    pub c: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub a11: Vec<f64>,
    pub a22: Vec<f64>,
    pub a12: Vec<f64>,
    /// Set when the normal equations were singular and the gradient-only
    /// fallback was used for every pixel.
    pub degenerate: bool,
}

/// Inverse of a small dense matrix by Gauss-Jordan elimination with partial
/// pivoting; `None` when a pivot vanishes relative to the matrix scale.
pub(crate) fn invert<const N: usize>(m: [[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut a = m;
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for k in 0..N {
            a[col][k] /= p;
            inv[col][k] /= p;
        }
        for r in 0..N {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in 0..N {
                        a[r][k] -= f * a[col][k];
                        inv[r][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Gaussian applicability over offsets `-r..=r`.
fn applicability(poly_n: usize, sigma: f64) -> Vec<f64> {
    let r = (poly_n / 2) as isize;
    (-r..=r)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Weighted least-squares quadratic fit in a `poly_n × poly_n` window with
/// Gaussian weights of standard deviation `poly_sigma`, replicate-edge
/// padding.
pub fn poly_expansion(img: &Grid, poly_n: usize, poly_sigma: f64) -> Result<PolyCoeffs> {
    if poly_n < 3 || poly_n.is_multiple_of(2) {
        return Err(Error::config(format!("poly_n must be odd and >= 3, got {poly_n}")));
    }
    if !(poly_sigma > 0.0) {
        return Err(Error::config(format!("poly_sigma must be positive, got {poly_sigma}")));
    }
    if img.width < poly_n || img.height < poly_n {
        return Err(Error::dim(format!(
            "image {}x{} smaller than polynomial window {poly_n}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width, img.height);
    let g = applicability(poly_n, poly_sigma);
    let r = (poly_n / 2) as isize;
    let offs: Vec<f64> = (-r..=r).map(|t| t as f64).collect();

    // Normal matrix over basis [1, x, y, x², y², xy]; identical at every pixel.
    let mut gram = [[0.0; 6]; 6];
    for (iy, &dy) in offs.iter().enumerate() {
        for (ix, &dx) in offs.iter().enumerate() {
            let wgt = g[ix] * g[iy];
            let phi = [1.0, dx, dy, dx * dx, dy * dy, dx * dy];
            for i in 0..6 {
                for j in 0..6 {
                    gram[i][j] += wgt * phi[i] * phi[j];
                }
            }
        }
    }

    let n = w * h;
    let Some(ginv) = invert(gram) else {
        let mut out = PolyCoeffs {
            width: w,
            height: h,
            c: img.data.clone(),
            b1: vec![0.0; n],
            b2: vec![0.0; n],
            a11: vec![0.0; n],
            a22: vec![0.0; n],
            a12: vec![0.0; n],
            degenerate: true,
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                out.b1[i] = 0.5 * (img.get_clamped(x + 1, y) - img.get_clamped(x - 1, y));
                out.b2[i] = 0.5 * (img.get_clamped(x, y + 1) - img.get_clamped(x, y - 1));
            }
        }
        return Ok(out);
    };

    // Vertical passes with g, g·dy, g·dy².
    let mut vert = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = [0.0; 3];
            for (k, &dy) in offs.iter().enumerate() {
                let v = g[k] * img.get_clamped(x, y + dy as isize);
                acc[0] += v;
                acc[1] += v * dy;
                acc[2] += v * dy * dy;
            }
            let i = y as usize * w + x as usize;
            for p in 0..3 {
                vert[p][i] = acc[p];
            }
        }
    }
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;

    let mut out = PolyCoeffs {
        width: w,
        height: h,
        c: vec![0.0; n],
        b1: vec![0.0; n],
        b2: vec![0.0; n],
        a11: vec![0.0; n],
        a22: vec![0.0; n],
        a12: vec![0.0; n],
        degenerate: false,
    };
    for y in 0..h {
        for x in 0..w as isize {
            // rhs[k] = Σ w φ_k f
            let mut rhs = [0.0; 6];
            for (k, &dx) in offs.iter().enumerate() {
                let xi = y * w + clamp_x(x + dx as isize);
                let (v0, v1, v2) = (vert[0][xi], vert[1][xi], vert[2][xi]);
                let gx = g[k];
                rhs[0] += gx * v0;
                rhs[1] += gx * dx * v0;
                rhs[2] += gx * v1;
                rhs[3] += gx * dx * dx * v0;
                rhs[4] += gx * v2;
                rhs[5] += gx * dx * v1;
            }
            let mut theta = [0.0; 6];
            for i in 0..6 {
                theta[i] = (0..6).map(|j| ginv[i][j] * rhs[j]).sum();
            }
            let i = y * w + x as usize;
            out.c[i] = theta[0];
            out.b1[i] = theta[1];
            out.b2[i] = theta[2];
            out.a11[i] = theta[3];
            out.a22[i] = theta[4];
            out.a12[i] = 0.5 * theta[5];
        }
    }
    Ok(out)
}
