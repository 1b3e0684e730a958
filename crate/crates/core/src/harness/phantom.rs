//! Synthetic template/target pairs and measurement noise.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::radon::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    /// Centred disk (radius 0.2, intensity 1) against a disk of half the area and twice the intensity.
    DiskPair,
    /// Three Gaussian blobs and a smooth warp of them; the parameter scales the displacement.
    BlobWarp(f64),
    /// A composite shape and its 10 degree rotation with 5% enlargement.
    AffineWarp,
    /// A composite shape and a rotated copy at twice the intensity.
    ContrastRotation,
}

impl PhantomKind {
    pub const NAMES: [&'static str; 4] = ["disk_pair", "blob_warp", "affine_warp", "contrast_rotation"];
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk_pair" => Ok(PhantomKind::DiskPair),
            "blob_warp" => Ok(PhantomKind::BlobWarp(1.0)),
            "affine_warp" => Ok(PhantomKind::AffineWarp),
            "contrast_rotation" => Ok(PhantomKind::ContrastRotation),
            _ => Err(Error::InvalidInput(format!(
                "unknown phantom '{s}' (expected one of {})",
                PhantomKind::NAMES.join(", ")
            ))),
        }
    }
}

/// Disk whose edge ramps linearly in `r^2` over roughly `2h`; the ramp is symmetric in `r^2`,
/// so the integral is exactly `intensity * pi * radius^2`.
fn soft_disk(p: &[f64], c: [f64; 2], radius: f64, intensity: f64, h: f64) -> f64 {
    let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
    let a = 2.0 * radius * h;
    intensity * ((radius * radius + a - r2) / (2.0 * a)).clamp(0.0, 1.0)
}

/// Ellipse with semi-axes `ax`, rotated by `phi`, edge smoothed over about `2h`.
fn soft_ellipse(p: &[f64], c: [f64; 2], ax: [f64; 2], phi: f64, h: f64) -> f64 {
    let (s, co) = phi.sin_cos();
    let dx = p[0] - c[0];
    let dy = p[1] - c[1];
    let u = (co * dx + s * dy) / ax[0];
    let w = (-s * dx + co * dy) / ax[1];
    let rho = (u * u + w * w).sqrt();
    // distance to the boundary along the ray, approximately
    let scale = ax[0].min(ax[1]);
    ((scale * (1.0 - rho) + h) / (2.0 * h)).clamp(0.0, 1.0)
}

/// Asymmetric composite used by the affine and contrast phantoms, in local coordinates.
fn composite(p: &[f64], h: f64) -> f64 {
    let body = soft_ellipse(p, [0.5, 0.5], [0.26, 0.17], 0.3, h);
    let knob = soft_ellipse(p, [0.62, 0.66], [0.08, 0.06], 0.0, h);
    let hole = soft_ellipse(p, [0.42, 0.47], [0.07, 0.05], -0.4, h);
    (body + 0.8 * knob).min(1.0) * (1.0 - 0.6 * hole)
}

/// Maps `x` through the inverse of `c + s R(theta) (y - c)`.
fn inverse_similarity(p: &[f64], theta: f64, scale: f64) -> [f64; 2] {
    let (s, co) = theta.sin_cos();
    let dx = (p[0] - 0.5) / scale;
    let dy = (p[1] - 0.5) / scale;
    [0.5 + co * dx + s * dy, 0.5 - s * dx + co * dy]
}

fn blobs(p: &[f64]) -> f64 {
    const B: [([f64; 2], f64, f64); 3] = [([0.38, 0.42], 0.08, 1.0), ([0.62, 0.40], 0.06, 0.8), ([0.50, 0.64], 0.07, 1.2)];
    B.iter()
        .map(|&(c, s, a)| a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (2.0 * s * s)).exp())
        .sum()
}

/// Smooth displacement vanishing on the boundary of the unit square.
fn blob_displacement(p: &[f64], amplitude: f64) -> [f64; 2] {
    let b = (std::f64::consts::PI * p[0]).sin().powi(2) * (std::f64::consts::PI * p[1]).sin().powi(2);
    [0.05 * amplitude * b, -0.03 * amplitude * b]
}

/// `(template, target)` on the 2D grid with `m` cells per axis.
pub fn make_phantom(kind: PhantomKind, m: usize) -> Result<(ScalarField, ScalarField)> {
    let grid = GridSpec::new(2, m)?;
    let h = grid.h();
    match kind {
        PhantomKind::DiskPair => {
            let r = 0.2;
            let t = ScalarField::from_fn(grid, |p| soft_disk(p, [0.5, 0.5], r, 1.0, h))?;
            let g = ScalarField::from_fn(grid, |p| soft_disk(p, [0.5, 0.5], r / 2f64.sqrt(), 2.0, h))?;
            Ok((t, g))
        }
        PhantomKind::BlobWarp(a) => {
            let t = ScalarField::from_fn(grid, blobs)?;
            let g = ScalarField::from_fn(grid, |p| {
                let u = blob_displacement(p, a);
                blobs(&[p[0] - u[0], p[1] - u[1]])
            })?;
            Ok((t, g))
        }
        PhantomKind::AffineWarp => {
            let t = ScalarField::from_fn(grid, |p| composite(p, h))?;
            let g = ScalarField::from_fn(grid, |p| composite(&inverse_similarity(p, 10f64.to_radians(), 1.05), h))?;
            Ok((t, g))
        }
        PhantomKind::ContrastRotation => {
            let t = ScalarField::from_fn(grid, |p| composite(p, h))?;
            let g = ScalarField::from_fn(grid, |p| 2.0 * composite(&inverse_similarity(p, 12f64.to_radians(), 1.0), h))?;
            Ok((t, g))
        }
    }
}

/// Adds i.i.d. Gaussian noise of standard deviation `level * mean(|s|)`.
pub fn add_noise(s: &Sinogram, level: f64, seed: u64) -> Result<Sinogram> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidInput(format!("noise level must be non-negative, got {level}")));
    }
    if level == 0.0 {
        return Ok(s.clone());
    }
    let samples = s.samples();
    let mean_abs = samples.iter().map(|x| x.abs()).sum::<f64>() / samples.len() as f64;
    let normal = Normal::new(0.0, level * mean_abs).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = samples.iter().map(|x| x + normal.sample(&mut rng)).collect();
    Sinogram::new(s.geometry().clone(), s.slices(), noisy)
}
