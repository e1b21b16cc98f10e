//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// One RK4 step of `y' = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let axpy = |a: &[f64], c: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, k)| x + c * k).collect() };
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1))?;
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2))?;
    let k4 = f(t + h, &axpy(y, h, &k3))?;
    if [&k1, &k2, &k3, &k4].iter().any(|k| k.len() != n) {
        return Err(Error::dims("right-hand side changed the state dimension"));
    }
    Ok((0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Integrates `steps` steps of size `h` from `(t0, y0)`, calling
/// `observe(t, y)` after every step; returns the final state.
pub fn rk4<F, O>(mut f: F, t0: f64, y0: &[f64], h: f64, steps: usize, mut observe: O) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    O: FnMut(f64, &[f64]),
{
    let mut y = y0.to_vec();
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        y = rk4_step(&mut f, t, &y, h)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("integration blew up at t = {}", t + h)));
        }
        observe(t + h, &y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_is_fourth_order() {
        let err = |steps: usize| {
            let y = rk4(|_, y| Ok(vec![y[0]]), 0.0, &[1.0], 1.0 / steps as f64, steps, |_, _| {}).unwrap();
            (y[0] - 1f64.exp()).abs()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }
}
