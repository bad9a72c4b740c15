use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Largest relative error per checked point.
    pub per_point: Vec<f64>,
    /// `(point index, coordinate)` of the worst mismatch.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

fn evaluate<T, F>(points: &[Tensor<T>], f: &mut F) -> Result<(Graph<T>, Vec<Var>, Var)>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = points
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::usage(format!(
            "gradcheck needs a scalar function, got shape {:?}",
            g.value(out).shape()
        )));
    }
    Ok((g, vars, out))
}

/// Compares the analytic gradient of `f` at `points` against central
/// differences `(f(x+ε) − f(x−ε)) / 2ε`, coordinate by coordinate. The
/// relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn gradcheck_multi<T, F>(points: &[Tensor<T>], f: F, eps: f64) -> Result<GradcheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    gradcheck_steps(points, f, &[eps])
}

/// Relative error below which further step sizes are not tried.
const SETTLED: f64 = 1e-7;

/// Like [`gradcheck_multi`], but each coordinate keeps the smallest error
/// over the step sizes in `steps`, tried in order until one settles. Near
/// a ReLU or pooling kink only small steps are exact, and for tiny
/// gradients only larger steps rise above rounding noise; a wrong gradient
/// disagrees at every step.
pub fn gradcheck_steps<T, F>(points: &[Tensor<T>], mut f: F, steps: &[f64]) -> Result<GradcheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if steps.is_empty() || steps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::usage("gradcheck needs positive step sizes"));
    }
    let (g, vars, out) = evaluate(points, &mut f)?;
    let mut grads = g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut work = points.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        per_point: vec![0.0; points.len()],
        worst: None,
        coordinates: 0,
    };
    let scalar = |work: &[Tensor<T>], f: &mut F| -> Result<f64> {
        let (g, _, out) = evaluate(work, f)?;
        Ok(g.value(out).data()[0].to_f64_lossless())
    };
    for pi in 0..points.len() {
        for ci in 0..points[pi].numel() {
            let orig = work[pi].data()[ci];
            let a = analytic[pi].data()[ci].to_f64_lossless();
            let mut rel = f64::INFINITY;
            for &eps in steps {
                work[pi].data_mut()[ci] = orig + T::lit(eps);
                let plus = scalar(&work, &mut f)?;
                work[pi].data_mut()[ci] = orig - T::lit(eps);
                let minus = scalar(&work, &mut f)?;
                work[pi].data_mut()[ci] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                rel = rel.min((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
                if rel <= SETTLED {
                    break;
                }
            }
            report.coordinates += 1;
            if rel > report.per_point[pi] {
                report.per_point[pi] = rel;
            }
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, ci));
            }
        }
    }
    Ok(report)
}

/// Single-point form of [`gradcheck_multi`]; returns the max relative error.
pub fn gradcheck<T, F>(point: &Tensor<T>, mut f: F, eps: f64) -> Result<f64>
where
    T: Real,
    F: FnMut(&mut Graph<T>, Var) -> Result<Var>,
{
    gradcheck_multi(std::slice::from_ref(point), |g, v| f(g, v[0]), eps).map(|r| r.max_rel_error)
}
