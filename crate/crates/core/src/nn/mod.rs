//! Minimal dense / 1-D convolution network substrate.

mod loss;
mod network;
mod param;

use serde::{Deserialize, Serialize};

pub use loss::{LossKind, BCE_CLAMP};
pub use network::{Activation, LayerKind, LayerSpec, Network};
pub(crate) use network::{Modulation, Tape};
pub(crate) use param::concat_layouts;
pub use param::{ParamVector, Role, Segment};

use crate::error::{Error, Result};

/// One labelled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Central differences of a scalar function, one coordinate at a time.
pub fn central_difference<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe)?;
        probe[i] = orig - step;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative() {
        let g = central_difference(|p| Ok(p[0] * p[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = central_difference(|_| Ok(4.2), &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn step_must_be_positive() {
        assert!(central_difference(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }
}
