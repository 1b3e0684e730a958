//! Cell-centred discretisation of the unit cube, cubic B-spline image
//! interpolation and block-mean restriction.
//!
//! Samples are stored lexicographically with the first coordinate varying
//! fastest. Cell `i` along an axis has its centre at `(i + 1/2) h`.

use crate::error::{check_len, Error, Result};
use crate::lattice;

/// Regular grid of `m^dim` cells on `(0,1)^dim`, plus the padding used by the
/// velocity grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    dim: usize,
    m: usize,
    pad: usize,
}

impl GridSpec {
    /// Grid with the default velocity padding `max(4, m/8)`.
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        Self::with_pad(dim, m, default_pad(m))
    }

    pub fn with_pad(dim: usize, m: usize, pad: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if m == 0 || !m.is_power_of_two() {
            return Err(Error::InvalidGrid(format!("cells per axis must be a power of two, got {m}")));
        }
        Ok(Self { dim, m, pad })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Cell edge length `1/m`.
    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn num_cells(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    /// `log2(m)`.
    pub fn level(&self) -> u32 {
        self.m.trailing_zeros()
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.m; self.dim]
    }

    /// Nodes per axis of the padded velocity grid.
    pub fn padded_extent(&self) -> usize {
        self.m + 2 * self.pad
    }

    pub fn padded_shape(&self) -> Vec<usize> {
        vec![self.padded_extent(); self.dim]
    }

    pub fn num_nodes(&self) -> usize {
        self.padded_extent().pow(self.dim as u32)
    }

    /// Coordinate of velocity node `i` along an axis; node `pad` sits on the first cell centre.
    pub fn node_coord(&self, i: usize) -> f64 {
        (i as f64 - self.pad as f64 + 0.5) * self.h()
    }

    /// Grid with half the cells per axis and default padding.
    pub fn coarsen(&self) -> Result<Self> {
        if self.m < 2 {
            return Err(Error::InvalidGrid("cannot coarsen a single-cell grid".into()));
        }
        Self::new(self.dim, self.m / 2)
    }
}

/// Default velocity padding for `m` cells per axis.
pub fn default_pad(m: usize) -> usize {
    (m / 8).max(4)
}

/// Lexicographically ordered cell-centre coordinates, flattened `m^n x n`.
pub fn cell_centers(grid: &GridSpec) -> Vec<f64> {
    let n = grid.dim();
    let m = grid.m();
    let h = grid.h();
    let mut out = Vec::with_capacity(grid.num_cells() * n);
    for lin in 0..grid.num_cells() {
        let mut rem = lin;
        for _ in 0..n {
            out.push(((rem % m) as f64 + 0.5) * h);
            rem /= m;
        }
    }
    out
}

/// Image or density samples at cell centres, optionally carrying cubic B-spline coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    samples: Vec<f64>,
    coeffs: Option<Vec<f64>>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, samples: Vec<f64>) -> Result<Self> {
        check_len("field samples", grid.num_cells(), samples.len())?;
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            grid,
            samples,
            coeffs: None,
        })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            samples: vec![0.0; grid.num_cells()],
            coeffs: None,
        }
    }

    /// Samples a function of the cell-centre coordinates.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let n = grid.dim();
        let samples = cell_centers(&grid).chunks(n).map(f).collect();
        Self::new(grid, samples)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn coeffs(&self) -> Option<&[f64]> {
        self.coeffs.as_deref()
    }

    /// `sum(samples) * h^n`.
    pub fn mass(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)))
    }

    pub fn fitted(self) -> Result<Self> {
        bspline_fit(&self)
    }
}

/// Cubic B-spline kernel.
fn beta3(s: f64) -> f64 {
    let a = s.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

fn dbeta3(s: f64) -> f64 {
    let a = s.abs();
    let sign = if s < 0.0 { -1.0 } else { 1.0 };
    if a < 1.0 {
        sign * (-2.0 * a + 1.5 * a * a)
    } else if a < 2.0 {
        let b = 2.0 - a;
        -sign * 0.5 * b * b
    } else {
        0.0
    }
}

/// Solves the per-axis interpolation system. Interior rows are `(c[i-1] + 4 c[i] + c[i+1]) / 6`;
/// the linearly extrapolated ghosts collapse the end rows to `c[0] = f[0]`, `c[m-1] = f[m-1]`.
fn solve_axis(line: &mut [f64]) {
    let m = line.len();
    if m <= 2 {
        return;
    }
    // Thomas algorithm; first and last rows are identity rows.
    let mut cprime = vec![0.0; m];
    let mut dprime = vec![0.0; m];
    cprime[0] = 0.0;
    dprime[0] = line[0];
    let (a, b, c) = (1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0);
    for i in 1..m - 1 {
        let denom = b - a * cprime[i - 1];
        cprime[i] = c / denom;
        dprime[i] = (line[i] - a * dprime[i - 1]) / denom;
    }
    // line[m - 1] already holds its own solution
    for i in (0..m - 1).rev() {
        line[i] = dprime[i] - cprime[i] * line[i + 1];
    }
}

/// Fits interpolating cubic B-spline coefficients on the cell-centred grid.
pub fn bspline_fit(f: &ScalarField) -> Result<ScalarField> {
    if let Some(i) = f.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
    }
    let shape = f.grid.shape();
    let mut coeffs = f.samples.clone();
    for axis in 0..shape.len() {
        lattice::for_each_line(&shape, axis, &mut coeffs, solve_axis);
    }
    Ok(ScalarField {
        grid: f.grid,
        samples: f.samples.clone(),
        coeffs: Some(coeffs),
    })
}

/// Up to four distinct coefficient indices with value and derivative weights along one axis.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct AxisStencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dw: [f64; 4],
    pub len: usize,
}

impl AxisStencil {
    fn add(&mut self, idx: usize, w: f64, dw: f64) {
        for k in 0..self.len {
            if self.idx[k] == idx {
                self.w[k] += w;
                self.dw[k] += dw;
                return;
            }
        }
        self.idx[self.len] = idx;
        self.w[self.len] = w;
        self.dw[self.len] = dw;
        self.len += 1;
    }
}

/// B-spline stencil at coordinate `x` in `[0,1]`, with ghost coefficients folded onto the
/// real ones by linear extrapolation.
pub(crate) fn spline_axis_stencil(x: f64, m: usize) -> AxisStencil {
    let inv_h = m as f64;
    let u = x * inv_h - 0.5;
    let j0 = u.floor() as i64;
    let mut st = AxisStencil::default();
    let last = m as i64 - 1;
    for j in (j0 - 1)..=(j0 + 2) {
        let s = u - j as f64;
        let w = beta3(s);
        let dw = dbeta3(s) * inv_h;
        if w == 0.0 && dw == 0.0 {
            continue;
        }
        if m == 1 {
            st.add(0, w, dw);
        } else if j < 0 {
            // c_j = (1 - j) c_0 + j c_1
            let jf = j as f64;
            st.add(0, (1.0 - jf) * w, (1.0 - jf) * dw);
            st.add(1, jf * w, jf * dw);
        } else if j > last {
            let d = (j - last) as f64;
            st.add(m - 1, (1.0 + d) * w, (1.0 + d) * dw);
            st.add(m - 2, -d * w, -d * dw);
        } else {
            st.add(j as usize, w, dw);
        }
    }
    st
}

fn inside_unit(p: &[f64]) -> bool {
    p.iter().all(|&x| (0.0..=1.0).contains(&x))
}

/// Evaluates the interpolant and its gradient at one point; zero outside the closed unit cube.
pub(crate) fn spline_value_grad(grid: &GridSpec, coeffs: &[f64], p: &[f64]) -> (f64, [f64; 3]) {
    let n = grid.dim();
    let m = grid.m();
    if !inside_unit(p) {
        return (0.0, [0.0; 3]);
    }
    let st: Vec<AxisStencil> = p.iter().map(|&x| spline_axis_stencil(x, m)).collect();
    let mut val = 0.0;
    let mut grad = [0.0; 3];
    if n == 2 {
        let (sx, sy) = (&st[0], &st[1]);
        for b in 0..sy.len {
            let row = sy.idx[b] * m;
            let (mut acc, mut accd) = (0.0, 0.0);
            for a in 0..sx.len {
                let c = coeffs[row + sx.idx[a]];
                acc += c * sx.w[a];
                accd += c * sx.dw[a];
            }
            val += acc * sy.w[b];
            grad[0] += accd * sy.w[b];
            grad[1] += acc * sy.dw[b];
        }
    } else {
        let (sx, sy, sz) = (&st[0], &st[1], &st[2]);
        for c3 in 0..sz.len {
            for b in 0..sy.len {
                let row = (sz.idx[c3] * m + sy.idx[b]) * m;
                let (mut acc, mut accd) = (0.0, 0.0);
                for a in 0..sx.len {
                    let c = coeffs[row + sx.idx[a]];
                    acc += c * sx.w[a];
                    accd += c * sx.dw[a];
                }
                val += acc * sy.w[b] * sz.w[c3];
                grad[0] += accd * sy.w[b] * sz.w[c3];
                grad[1] += acc * sy.dw[b] * sz.w[c3];
                grad[2] += acc * sy.w[b] * sz.dw[c3];
            }
        }
    }
    (val, grad)
}

/// Interpolant values and gradients (flattened `len x n`) at the given points.
pub fn bspline_eval(f: &ScalarField, pts: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let coeffs = f
        .coeffs()
        .ok_or_else(|| Error::InvalidInput("field has no spline coefficients; call bspline_fit".into()))?;
    let n = f.grid.dim();
    if !pts.len().is_multiple_of(n) {
        return Err(Error::InvalidInput(format!(
            "point list length {} is not a multiple of the dimension {n}",
            pts.len()
        )));
    }
    let count = pts.len() / n;
    let mut vals = Vec::with_capacity(count);
    let mut grads = Vec::with_capacity(count * n);
    for p in pts.chunks(n) {
        let (v, g) = spline_value_grad(&f.grid, coeffs, p);
        vals.push(v);
        grads.extend_from_slice(&g[..n]);
    }
    Ok((vals, grads))
}

/// Block-mean restriction onto the grid with `m/2` cells per axis.
pub fn restrict_image(f: &ScalarField) -> Result<ScalarField> {
    let m = f.grid.m();
    if !m.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!("cannot restrict a grid with odd m = {m}")));
    }
    let coarse = f.grid.coarsen()?;
    let mut shape = f.grid.shape();
    let mut data = f.samples.clone();
    for axis in 0..shape.len() {
        data = lattice::map_lines(&shape, axis, &data, m / 2, |inp, out| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = 0.5 * (inp[2 * j] + inp[2 * j + 1]);
            }
        });
        shape[axis] = m / 2;
    }
    ScalarField::new(coarse, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2(m: usize) -> GridSpec {
        GridSpec::new(2, m).unwrap()
    }

    #[test]
    fn centres_2x2() {
        let c = cell_centers(&grid2(2));
        assert_eq!(c, vec![0.25, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.75]);
    }

    #[test]
    fn centres_first_on_m4_and_count_3d() {
        assert_eq!(cell_centers(&grid2(4))[0], 0.125);
        let g3 = GridSpec::new(3, 8).unwrap();
        let c = cell_centers(&g3);
        assert_eq!(c.len(), 512 * 3);
        assert!(c.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(GridSpec::new(1, 8).is_err());
        assert!(GridSpec::new(2, 12).is_err());
        assert!(GridSpec::new(2, 0).is_err());
        assert_eq!(GridSpec::new(2, 128).unwrap().pad(), 16);
        assert_eq!(GridSpec::new(2, 16).unwrap().pad(), 4);
    }

    #[test]
    fn zero_and_constant_fit() {
        let z = ScalarField::zeros(grid2(8)).fitted().unwrap();
        assert!(z.coeffs().unwrap().iter().all(|&c| c == 0.0));

        let c = ScalarField::new(grid2(16), vec![3.5; 256]).unwrap().fitted().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        let (v, g) = bspline_eval(&c, &pts).unwrap();
        for x in v {
            assert!((x - 3.5).abs() < 1e-12, "{x}");
        }
        for x in g {
            assert!(x.abs() < 1e-10, "{x}");
        }
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn fit_matches_dense_oracle_and_reproduces_samples() {
        let g = grid2(8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = ScalarField::new(g, samples.clone()).unwrap().fitted().unwrap();

        // Oracle: assemble the full 64x64 collocation matrix from the kernel directly.
        let centres = cell_centers(&g);
        let m = 8;
        let basis_1d = |x: f64, j: usize| -> f64 {
            // value of the j-th basis (with ghost extrapolation folded in) at x
            let st = spline_axis_stencil(x, m);
            (0..st.len).filter(|&k| st.idx[k] == j).map(|k| st.w[k]).sum()
        };
        let mut a = vec![vec![0.0; 64]; 64];
        for (r, p) in centres.chunks(2).enumerate() {
            for col in 0..64 {
                a[r][col] = basis_1d(p[0], col % m) * basis_1d(p[1], col / m);
            }
        }
        let oracle = dense_solve(a, samples.clone());
        for (c, o) in f.coeffs().unwrap().iter().zip(&oracle) {
            assert!((c - o).abs() < 1e-12);
        }
        let (vals, _) = bspline_eval(&f, &centres).unwrap();
        for (v, s) in vals.iter().zip(&samples) {
            assert!((v - s).abs() <= 1e-10 * (1.0 + 1.0));
        }
    }

    #[test]
    fn linear_ramp_gradient() {
        let g = grid2(32);
        let f = ScalarField::from_fn(g, |p| p[0]).unwrap().fitted().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = g.h();
        let pts: Vec<f64> = (0..200).map(|_| rng.random_range(2.0 * h..1.0 - 2.0 * h)).collect();
        let (v, gr) = bspline_eval(&f, &pts).unwrap();
        let fd_step = 1e-5;
        for (i, p) in pts.chunks(2).enumerate() {
            assert!((v[i] - p[0]).abs() < 1e-10);
            assert!((gr[2 * i] - 1.0).abs() < 1e-8);
            assert!(gr[2 * i + 1].abs() < 1e-8);
            let plus = bspline_eval(&f, &[p[0] + fd_step, p[1]]).unwrap().0[0];
            let minus = bspline_eval(&f, &[p[0] - fd_step, p[1]]).unwrap().0[0];
            assert!(((plus - minus) / (2.0 * fd_step) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_smooth_field() {
        let g = grid2(32);
        let f = ScalarField::from_fn(g, |p| (6.0 * p[0]).sin() * (4.0 * p[1]).cos() + p[0] * p[1])
            .unwrap()
            .fitted()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-5;
        for _ in 0..100 {
            let p = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let (_, gr) = bspline_eval(&f, &p).unwrap();
            for d in 0..2 {
                let mut a = p;
                let mut b = p;
                a[d] += eps;
                b[d] -= eps;
                let fd = (bspline_eval(&f, &a).unwrap().0[0] - bspline_eval(&f, &b).unwrap().0[0]) / (2.0 * eps);
                assert!((fd - gr[d]).abs() <= 1e-4 * (1.0 + gr[d].abs()), "{fd} vs {}", gr[d]);
            }
        }
    }

    #[test]
    fn outside_is_zero_and_missing_coeffs_rejected() {
        let f = ScalarField::new(grid2(8), vec![1.0; 64]).unwrap();
        assert!(bspline_eval(&f, &[0.5, 0.5]).is_err());
        let f = f.fitted().unwrap();
        let (v, g) = bspline_eval(&f, &[-0.01, 0.5, 0.5, 1.2]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(ScalarField::new(grid2(2), vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn fit_3d_reproduces_samples() {
        let g = GridSpec::new(3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<f64> = (0..512).map(|_| rng.random_range(0.0..2.0)).collect();
        let f = ScalarField::new(g, s.clone()).unwrap().fitted().unwrap();
        let (v, _) = bspline_eval(&f, &cell_centers(&g)).unwrap();
        for (a, b) in v.iter().zip(&s) {
            assert!((a - b).abs() < 1e-10 * 3.0);
        }
    }

    #[test]
    fn restriction_examples() {
        let f = ScalarField::new(grid2(2), vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let r = restrict_image(&f).unwrap();
        assert_eq!(r.grid().m(), 1);
        assert_eq!(r.samples(), &[3.0]);

        let c = ScalarField::new(grid2(16), vec![1.25; 256]).unwrap();
        assert!(restrict_image(&c).unwrap().samples().iter().all(|&x| x == 1.25));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..256).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f = ScalarField::new(grid2(16), s.clone()).unwrap();
        let r = restrict_image(&f).unwrap();
        let mean_in: f64 = s.iter().sum::<f64>() / 256.0;
        assert!((r.mean() - mean_in).abs() <= 1e-12 * mean_in.abs().max(1.0));
        // each coarse sample is the mean of its 4 children
        assert!((r.samples()[0] - (s[0] + s[1] + s[16] + s[17]) / 4.0).abs() < 1e-14);
    }
}
