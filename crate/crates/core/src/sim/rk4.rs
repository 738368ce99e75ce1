//! Classical fourth-order Runge-Kutta on flat real state vectors.

use crate::error::Result;

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// One step from `(t, x)`. `k1` may be supplied when the derivative at
/// the step start is already known.
pub fn rk4_step<F>(t: f64, x: &[f64], dt: f64, k1: Option<Vec<f64>>, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = match k1 {
        Some(k) => k,
        None => f(t, x)?,
    };
    let h = 0.5 * dt;
    let k2 = f(t + h, &axpy(x, h, &k1))?;
    let k3 = f(t + h, &axpy(x, h, &k2))?;
    let k4 = f(t + dt, &axpy(x, dt, &k3))?;
    Ok((0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}
