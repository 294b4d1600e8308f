//! Central finite differences as an independent gradient oracle.

/// Compares `analytic` against central differences of `loss_fn` around
/// `params`, returning `max_i |a_i − n_i| / max(1e-8, |n_i|)`.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let numeric = numeric_gradient(&mut loss_fn, params, step);
    max_relative_error(analytic, &numeric)
}

/// Central-difference gradient of `loss_fn` at `params`.
pub fn numeric_gradient<F>(loss_fn: &mut F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = loss_fn(&probe);
            probe[i] = orig - step;
            let down = loss_fn(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Fourth-order central differences,
/// `(−f(θ+2h) + 8f(θ+h) − 8f(θ−h) + f(θ−2h)) / 12h`. The smaller truncation
/// error allows a larger step, which keeps roundoff down when the loss is large
/// relative to individual gradient entries.
pub fn numeric_gradient_4th<F>(loss_fn: &mut F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    let mut at = |probe: &mut Vec<f64>, i: usize, x: f64| {
        probe[i] = x;
        loss_fn(probe)
    };
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            let f2 = at(&mut probe, i, orig + 2.0 * step);
            let f1 = at(&mut probe, i, orig + step);
            let b1 = at(&mut probe, i, orig - step);
            let b2 = at(&mut probe, i, orig - 2.0 * step);
            probe[i] = orig;
            (-f2 + 8.0 * f1 - 8.0 * b1 + b2) / (12.0 * step)
        })
        .collect()
}

/// `max_i |a_i − n_i| / max(1e-8, |n_i|)`, the error measure of [`finite_diff_check`].
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    numeric
        .iter()
        .zip(analytic)
        .map(|(n, a)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max)
}
