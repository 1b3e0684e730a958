//! Matrix-free parallel-beam Radon transform.
//!
//! Rays are marched with a step of about one pixel, bilinearly interpolating
//! the cell-centred image (zero outside the unit square). Line integrals are
//! measured in pixel lengths, so halving the resolution halves the data; the
//! sinogram restriction below relies on that. Volumes are handled slice by
//! slice along the last axis, which is the rotation axis.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{check_len, Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// Detector length covering the unit square at every angle.
pub const DEFAULT_DETECTOR_LENGTH: f64 = std::f64::consts::SQRT_2;

/// Parallel-beam acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonGeometry {
    angles_deg: Vec<f64>,
    q: usize,
    detector_length: f64,
    level: u32,
}

impl RadonGeometry {
    pub fn new(angles_deg: Vec<f64>, q: usize, detector_length: f64, level: u32) -> Result<Self> {
        if angles_deg.is_empty() {
            return Err(Error::InvalidInput("at least one projection angle is required".into()));
        }
        if q == 0 {
            return Err(Error::InvalidInput("detector needs at least one bin".into()));
        }
        if !(detector_length > 0.0 && detector_length.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid detector length {detector_length}")));
        }
        if angles_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("non-finite projection angle".into()));
        }
        Ok(Self {
            angles_deg,
            q,
            detector_length,
            level,
        })
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn num_angles(&self) -> usize {
        self.angles_deg.len()
    }

    /// Detector bins.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn detector_length(&self) -> f64 {
        self.detector_length
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Bin width `L / q`.
    pub fn h_y(&self) -> f64 {
        self.detector_length / self.q as f64
    }

    /// Signed offset of bin `j` from the domain centre.
    pub fn bin_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h_y() - 0.5 * self.detector_length
    }
}

/// Number of detector bins at pyramid level `k`: `round(1.5 * 2^k)`.
pub fn bins_for_level(k: u32) -> usize {
    (1.5 * f64::from(1u32 << k)).round() as usize
}

/// Geometry for pyramid level `k` with the default detector length.
pub fn geometry_for_level(angles_deg: &[f64], k: u32) -> Result<RadonGeometry> {
    if k == 0 || k > 24 {
        return Err(Error::InvalidInput(format!("pyramid level must be in 1..=24, got {k}")));
    }
    RadonGeometry::new(angles_deg.to_vec(), bins_for_level(k), DEFAULT_DETECTOR_LENGTH, k)
}

/// `count` equally spaced angles starting at `lo`, ending at `hi` for `count > 1`.
pub fn equally_spaced_angles(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Projection data, angle-major (`slice, angle, bin` for volumes).
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: RadonGeometry,
    slices: usize,
    samples: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: RadonGeometry, slices: usize, samples: Vec<f64>) -> Result<Self> {
        check_len(
            "sinogram samples",
            slices * geometry.num_angles() * geometry.q(),
            samples.len(),
        )?;
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite sinogram sample".into()));
        }
        Ok(Self {
            geometry,
            slices,
            samples,
        })
    }

    pub fn zeros(geometry: RadonGeometry, slices: usize) -> Self {
        let len = slices * geometry.num_angles() * geometry.q();
        Self {
            geometry,
            slices,
            samples: vec![0.0; len],
        }
    }

    pub fn geometry(&self) -> &RadonGeometry {
        &self.geometry
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Bins of one angle of one slice.
    pub fn row(&self, slice: usize, angle: usize) -> &[f64] {
        let q = self.geometry.q();
        let off = (slice * self.geometry.num_angles() + angle) * q;
        &self.samples[off..off + q]
    }
}

/// Ray parameters in index coordinates for one (angle, bin).
struct Ray {
    u0: [f64; 2],
    du: [f64; 2],
    k_lo: usize,
    k_hi: usize,
}

/// Per-sample weight in pixel units and the rays of one geometry on an `m x m` grid.
struct Marcher {
    m: usize,
    weight: f64,
    rays: Vec<Ray>,
}

impl Marcher {
    fn new(geom: &RadonGeometry, m: usize) -> Self {
        let half = 0.5 * DEFAULT_DETECTOR_LENGTH.max(geom.detector_length());
        let mf = m as f64;
        let nsteps = (2.0 * half * mf).ceil() as usize;
        let dtau = 2.0 * half / nsteps as f64;
        let mut rays = Vec::with_capacity(geom.num_angles() * geom.q());
        for &deg in geom.angles_deg() {
            let th = deg.to_radians();
            let (e, d) = ([th.cos(), th.sin()], [-th.sin(), th.cos()]);
            for j in 0..geom.q() {
                let s = geom.bin_center(j);
                let mut u0 = [0.0; 2];
                let mut du = [0.0; 2];
                let (mut lo, mut hi) = (0.0f64, nsteps as f64);
                for a in 0..2 {
                    let x0 = 0.5 + s * e[a] + (-half + 0.5 * dtau) * d[a];
                    u0[a] = x0 * mf - 0.5;
                    du[a] = dtau * d[a] * mf;
                    // keep samples with -1 < u < m
                    if du[a].abs() < 1e-14 {
                        if u0[a] <= -1.0 || u0[a] >= mf {
                            hi = 0.0;
                        }
                    } else {
                        let (k1, k2) = ((-1.0 - u0[a]) / du[a], (mf - u0[a]) / du[a]);
                        lo = lo.max(k1.min(k2));
                        hi = hi.min(k1.max(k2));
                    }
                }
                let k_lo = lo.max(0.0).floor() as usize;
                let k_hi = (hi.ceil().max(0.0) as usize).min(nsteps);
                rays.push(Ray { u0, du, k_lo, k_hi });
            }
        }
        Self {
            m,
            weight: dtau * mf,
            rays,
        }
    }

    /// Visits the bilinear taps `(pixel, weight)` of every sample along `ray`.
    #[inline]
    fn taps(&self, ray: &Ray, mut visit: impl FnMut(usize, f64)) {
        let m = self.m as i64;
        for k in ray.k_lo..ray.k_hi {
            let ux = ray.u0[0] + k as f64 * ray.du[0];
            let uy = ray.u0[1] + k as f64 * ray.du[1];
            let (fx, fy) = (ux.floor(), uy.floor());
            let (ix, iy) = (fx as i64, fy as i64);
            let (ax, ay) = (ux - fx, uy - fy);
            let wx = [1.0 - ax, ax];
            let wy = [1.0 - ay, ay];
            for (dy, &wyv) in wy.iter().enumerate() {
                let y = iy + dy as i64;
                if y < 0 || y >= m {
                    continue;
                }
                for (dx, &wxv) in wx.iter().enumerate() {
                    let x = ix + dx as i64;
                    if x < 0 || x >= m {
                        continue;
                    }
                    visit((y * m + x) as usize, wxv * wyv);
                }
            }
        }
    }
}

fn slices_of(grid: &GridSpec) -> usize {
    if grid.dim() == 3 {
        grid.m()
    } else {
        1
    }
}

/// Forward projection `K f`.
pub fn radon_forward(f: &ScalarField, geom: &RadonGeometry) -> Sinogram {
    let grid = f.grid();
    let m = grid.m();
    let slices = slices_of(grid);
    let marcher = Marcher::new(geom, m);
    let rays_per_slice = marcher.rays.len();
    let mut out = vec![0.0; slices * rays_per_slice];
    for s in 0..slices {
        let img = &f.samples()[s * m * m..(s + 1) * m * m];
        for (r, ray) in marcher.rays.iter().enumerate() {
            let mut acc = 0.0;
            marcher.taps(ray, |p, w| acc += w * img[p]);
            out[s * rays_per_slice + r] = acc * marcher.weight;
        }
    }
    Sinogram {
        geometry: geom.clone(),
        slices,
        samples: out,
    }
}

/// Exact transpose of [`radon_forward`].
pub fn radon_adjoint(s: &Sinogram, grid: &GridSpec) -> Result<ScalarField> {
    let slices = slices_of(grid);
    if slices != s.slices() {
        return Err(Error::DimensionMismatch {
            what: "sinogram slices",
            expected: slices,
            actual: s.slices(),
        });
    }
    let m = grid.m();
    let marcher = Marcher::new(s.geometry(), m);
    let rays_per_slice = marcher.rays.len();
    let mut out = vec![0.0; grid.num_cells()];
    for sl in 0..slices {
        let img = &mut out[sl * m * m..(sl + 1) * m * m];
        for (r, ray) in marcher.rays.iter().enumerate() {
            let g = s.samples()[sl * rays_per_slice + r] * marcher.weight;
            if g == 0.0 {
                continue;
            }
            marcher.taps(ray, |p, w| img[p] += w * g);
        }
    }
    ScalarField::new(*grid, out)
}

/// Restricts level-`k` data to level `k-1`: coarse bin `j` is `(g[2j] + g[2j+1]) / 4`.
/// Volumes additionally average slice pairs.
pub fn restrict_sinogram(s: &Sinogram) -> Result<Sinogram> {
    let geom = s.geometry();
    let q = geom.q();
    if !q.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("cannot restrict a sinogram with odd q = {q}")));
    }
    if geom.level() == 0 {
        return Err(Error::InvalidInput("cannot restrict below level 0".into()));
    }
    let coarse_geom = RadonGeometry::new(geom.angles_deg().to_vec(), q / 2, geom.detector_length(), geom.level() - 1)?;
    let p = geom.num_angles();
    let qc = q / 2;
    if s.slices() == 1 {
        let mut out = Vec::with_capacity(p * qc);
        for a in 0..p {
            let row = s.row(0, a);
            out.extend((0..qc).map(|j| (row[2 * j] + row[2 * j + 1]) / 4.0));
        }
        return Sinogram::new(coarse_geom, 1, out);
    }
    if !s.slices().is_multiple_of(2) {
        return Err(Error::InvalidInput("cannot restrict an odd number of slices".into()));
    }
    let sc = s.slices() / 2;
    let mut out = Vec::with_capacity(sc * p * qc);
    for sl in 0..sc {
        for a in 0..p {
            let (r0, r1) = (s.row(2 * sl, a), s.row(2 * sl + 1, a));
            out.extend((0..qc).map(|j| (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) / 8.0));
        }
    }
    Sinogram::new(coarse_geom, sc, out)
}

/// Ram-Lak filtered rows (physical units), applied by FFT with zero padding.
fn ramp_filter_rows(s: &Sinogram, pixel: f64) -> Vec<f64> {
    let q = s.geometry().q();
    let tau = s.geometry().h_y();
    let len = (2 * q).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);

    let kernel_at = |k: i64| -> f64 {
        if k == 0 {
            1.0 / (4.0 * tau * tau)
        } else if k % 2 == 0 {
            0.0
        } else {
            -1.0 / ((k * k) as f64 * PI * PI * tau * tau)
        }
    };
    let mut kernel: Vec<Complex<f64>> = (0..len)
        .map(|i| {
            let k = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
            Complex::new(kernel_at(k), 0.0)
        })
        .collect();
    fwd.process(&mut kernel);

    let mut out = Vec::with_capacity(s.samples().len());
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for row in s.samples().chunks(q) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < q { row[i] * pixel } else { 0.0 }, 0.0);
        }
        fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kernel) {
            *b *= k;
        }
        inv.process(&mut buf);
        // inverse FFT is unnormalised; tau is the convolution quadrature weight
        out.extend(buf[..q].iter().map(|c| c.re / len as f64 * tau));
    }
    out
}

/// Filtered backprojection baseline.
pub fn fbp(s: &Sinogram, grid: &GridSpec) -> Result<ScalarField> {
    let p = s.geometry().num_angles();
    let filtered = Sinogram::new(s.geometry().clone(), s.slices(), ramp_filter_rows(s, grid.h()))?;
    let back = radon_adjoint(&filtered, grid)?;
    let scale = PI / p as f64 * s.geometry().h_y() / grid.h();
    ScalarField::new(*grid, back.into_samples().into_iter().map(|x| x * scale).collect())
}
