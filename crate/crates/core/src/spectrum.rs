//! Fourier-weighted complexity of periodic samples.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// `Σ_ω |ω|·|c_ω|` over `ω ∈ [−N/2, N/2)`, with `c_ω = (1/N) Σ_j Q_j e^{−iωx_j}`.
///
/// `samples` are values on `N` equally spaced points covering one period
/// `[0, 2π)`, endpoint excluded.
pub fn complexity(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::invalid("samples", "need at least 4 samples"));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample { index: i });
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let n_i = n as i64;
    let mut total = 0.0;
    for (k, c) in buf.iter().enumerate() {
        // bin k carries frequency k, or k − N above the Nyquist index
        let mut w = k as i64;
        if 2 * w >= n_i {
            w -= n_i;
        }
        total += w.unsigned_abs() as f64 * c.norm() * scale;
    }
    Ok(total)
}

/// Like [`complexity`], for samples taken at explicit abscissae that must be
/// equally spaced.
pub fn complexity_on(xs: &[f64], samples: &[f64]) -> Result<f64> {
    if xs.len() != samples.len() {
        return Err(Error::DimensionMismatch {
            context: "complexity abscissae",
            expected: samples.len(),
            got: xs.len(),
        });
    }
    if xs.len() >= 2 {
        let h = xs[1] - xs[0];
        let uniform = h > 0.0 && xs.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
        if !uniform {
            return Err(Error::NonUniformGrid);
        }
    }
    complexity(samples)
}

/// `n` equally spaced points of `[0, 2π)`.
pub fn periodic_points(n: usize) -> Vec<f64> {
    let h = std::f64::consts::TAU / n as f64;
    (0..n).map(|j| j as f64 * h).collect()
}
