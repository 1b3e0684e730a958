//! Data-fidelity terms on sinogram vectors.

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// Sum of squared differences, midpoint quadrature.
    Ssd,
    /// One minus squared normalised cross correlation.
    Ncc,
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssd" => Ok(DistanceKind::Ssd),
            "ncc" => Ok(DistanceKind::Ncc),
            _ => Err(Error::InvalidInput(format!("unknown distance '{s}'"))),
        }
    }
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistanceKind::Ssd => "ssd",
            DistanceKind::Ncc => "ncc",
        })
    }
}

/// Value, gradient in the first argument, and the scalar `w` of the curvature surrogate `w * I`.
#[derive(Debug, Clone)]
pub struct DistanceEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub gn_weight: f64,
}

/// `h_y/2 |x - y|^2`.
pub fn ssd(x: &[f64], y: &[f64], h_y: f64) -> Result<DistanceEval> {
    check_len("distance arguments", x.len(), y.len())?;
    let grad: Vec<f64> = x.iter().zip(y).map(|(a, b)| h_y * (a - b)).collect();
    let value = 0.5 * h_y * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(DistanceEval {
        value,
        grad,
        gn_weight: h_y,
    })
}

/// `1 - (x.y)^2 / (|x|^2 |y|^2)`; undefined when either argument vanishes.
///
/// The curvature surrogate is `h_y I`, the same as for [`ssd`].
pub fn ncc(x: &[f64], y: &[f64], h_y: f64) -> Result<DistanceEval> {
    check_len("distance arguments", x.len(), y.len())?;
    let guard = 1e-14 * (x.len() as f64).sqrt();
    let xx: f64 = x.iter().map(|a| a * a).sum();
    let yy: f64 = y.iter().map(|a| a * a).sum();
    if xx.sqrt() < guard || yy.sqrt() < guard {
        return Err(Error::Domain("NCC undefined at 0".into()));
    }
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let rho2 = xy * xy / (xx * yy);
    let c1 = -2.0 * xy / (xx * yy);
    let c2 = 2.0 * xy * xy / (xx * xx * yy);
    let grad = x.iter().zip(y).map(|(a, b)| c1 * b + c2 * a).collect();
    Ok(DistanceEval {
        value: (1.0 - rho2).clamp(0.0, 1.0),
        grad,
        gn_weight: h_y,
    })
}

pub fn evaluate(kind: DistanceKind, x: &[f64], y: &[f64], h_y: f64) -> Result<DistanceEval> {
    match kind {
        DistanceKind::Ssd => ssd(x, y, h_y),
        DistanceKind::Ncc => ncc(x, y, h_y),
    }
}
