//! Image quality scores.

use crate::error::{check_len, Error, Result};
use crate::grid::ScalarField;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, x) in w.iter_mut().enumerate() {
        *x = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Separable "valid" filtering of an `m x m` image with the SSIM window.
fn filter_valid(img: &[f64], m: usize, w: &[f64; WINDOW]) -> Vec<f64> {
    let out_m = m + 1 - WINDOW;
    let mut rows = vec![0.0; out_m * m];
    for y in 0..m {
        for x in 0..out_m {
            rows[y * out_m + x] = (0..WINDOW).map(|k| w[k] * img[y * m + x + k]).sum();
        }
    }
    let mut out = vec![0.0; out_m * out_m];
    for y in 0..out_m {
        for x in 0..out_m {
            out[y * out_m + x] = (0..WINDOW).map(|k| w[k] * rows[(y + k) * out_m + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], m: usize, range: f64) -> f64 {
    let w = gaussian_window();
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>();
    let mu_a = filter_valid(a, m, &w);
    let mu_b = filter_valid(b, m, &w);
    let aa = filter_valid(&prod(|x, _| x * x), m, &w);
    let bb = filter_valid(&prod(|_, y| y * y), m, &w);
    let ab = filter_valid(&prod(|x, y| x * y), m, &w);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean structural similarity of `a` against the reference `b`
/// (Gaussian 11x11 window, sigma 1.5, dynamic range of `b`). Volumes are scored per slice.
pub fn ssim(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if a.grid().dim() != b.grid().dim() || a.grid().m() != b.grid().m() {
        return Err(Error::InvalidGrid("ssim needs images on the same grid".into()));
    }
    let m = a.grid().m();
    if m < WINDOW {
        return Err(Error::InvalidGrid(format!("ssim needs at least {WINDOW} cells per axis")));
    }
    if a.samples() == b.samples() {
        return Ok(1.0);
    }
    let (lo, hi) = b.min_max();
    let range = hi - lo;
    let plane = m * m;
    let planes = a.samples().len() / plane;
    let total: f64 = (0..planes)
        .map(|k| ssim_plane(&a.samples()[k * plane..(k + 1) * plane], &b.samples()[k * plane..(k + 1) * plane], m, range))
        .sum();
    Ok(total / planes as f64)
}

/// Dice overlap of the masks `a >= max(a)/2` and `b >= max(b)/2`.
pub fn dice(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    check_len("dice operands", a.samples().len(), b.samples().len())?;
    let mask = |f: &ScalarField| {
        let t = 0.5 * f.min_max().1;
        f.samples().iter().map(|&x| x >= t && x > 0.0).collect::<Vec<bool>>()
    };
    let (ma, mb) = (mask(a), mask(b));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let total = ma.iter().filter(|x| **x).count() + mb.iter().filter(|x| **x).count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn square(m: usize, lo: f64, hi: f64, off: f64) -> ScalarField {
        ScalarField::from_fn(GridSpec::new(2, m).unwrap(), |p| {
            if (0.3..0.7).contains(&p[0]) && (0.3..0.7).contains(&p[1]) {
                hi + off
            } else {
                lo + off
            }
        })
        .unwrap()
    }

    #[test]
    fn identical_images() {
        let a = square(32, 0.0, 1.0, 0.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn inverted_contrast_is_dissimilar() {
        let a = square(32, 0.0, 1.0, 0.0);
        let b = square(32, 1.0, 0.0, 0.0);
        assert!(ssim(&b, &a).unwrap() < 0.1);
    }

    #[test]
    fn joint_shift_invariance() {
        // Pixel-period stripes have (almost) equal local means, where the luminance
        // term is 1 and only the shift-invariant contrast/structure terms remain.
        let g = GridSpec::new(2, 32).unwrap();
        let stripe = |p: &[f64]| if ((p[0] * 32.0) as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
        let a = ScalarField::from_fn(g, |p| 1.0 + 0.5 * stripe(p) * (1.0 + p[1])).unwrap();
        let b = ScalarField::from_fn(g, |p| 1.0 + 0.3 * stripe(p) * (2.0 - p[1])).unwrap();
        let shift = |f: &ScalarField| ScalarField::new(g, f.samples().iter().map(|x| x + 5.0).collect()).unwrap();
        let s0 = ssim(&a, &b).unwrap();
        let s1 = ssim(&shift(&a), &shift(&b)).unwrap();
        assert!((s0 - s1).abs() < 1e-6, "{s0} {s1}");
    }

    #[test]
    fn dice_cases() {
        let a = square(32, 0.0, 1.0, 0.0);
        let b = square(32, 0.0, 2.0, 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 1.0);
        let z = ScalarField::zeros(*a.grid());
        assert_eq!(dice(&a, &z).unwrap(), 0.0);
    }
}
