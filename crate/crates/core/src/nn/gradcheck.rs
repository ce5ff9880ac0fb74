//! Central finite differences, the independent reference for every analytic
//! gradient in the crate.

use super::Params;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Floor on the denominator of the relative error so that parameter groups
/// whose true gradient is exactly zero compare on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every scalar parameter, grouped
/// like [`Params::param_slices`].
pub fn numeric_gradient<M, F>(model: &M, f: F, step: f64) -> Vec<Vec<f64>>
where
    M: Params + Clone,
    F: Fn(&M) -> f64,
{
    let mut probe = model.clone();
    let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (group, &len) in shapes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = probe.param_slices()[group][i];
            probe.param_slices_mut()[group][i] = orig + step;
            let plus = f(&probe);
            probe.param_slices_mut()[group][i] = orig - step;
            let minus = f(&probe);
            probe.param_slices_mut()[group][i] = orig;
            *gi = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Central differences of a scalar function of a plain vector.
pub fn numeric_gradient_vec<F>(x: &[f64], f: F, step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `‖a - n‖ / max(‖a‖ + ‖n‖, floor)` for one group.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient group length");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / (norm(analytic) + norm(numeric)).max(RELATIVE_ERROR_FLOOR)
}

/// Worst [`relative_error`] over all groups.
pub fn max_relative_error(analytic: &[&[f64]], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient group count");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
