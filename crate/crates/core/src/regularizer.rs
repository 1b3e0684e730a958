//! Quadratic velocity regularisation `R(v) = (h_t h^n / 2) v^T B^T B v`.
//!
//! `B` stacks a weighted spatial operator (gradient, Laplacian, or per-axis third
//! differences), a forward difference across the time planes, and the identity.
//! Stencils never reach beyond the padded grid (zero Neumann).

use crate::error::{check_len, Error, Result};
use crate::flow::VelocityField;
use crate::grid::GridSpec;
use crate::lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    /// `B = grad`.
    Diffusion,
    /// `B = Laplacian`.
    Curvature,
    /// Third derivative along each axis.
    ThirdOrder,
}

impl std::str::FromStr for RegKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(RegKind::Diffusion),
            "curvature" => Ok(RegKind::Curvature),
            "third-order" | "third_order" | "third" => Ok(RegKind::ThirdOrder),
            _ => Err(Error::InvalidInput(format!("unknown regulariser '{s}'"))),
        }
    }
}

impl std::fmt::Display for RegKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegKind::Diffusion => "diffusion",
            RegKind::Curvature => "curvature",
            RegKind::ThirdOrder => "third-order",
        })
    }
}

impl RegKind {
    /// Spatial weight of the order used with NCC data terms.
    pub fn default_gamma(self) -> f64 {
        match self {
            RegKind::ThirdOrder => 1e-3,
            RegKind::Curvature => 1e0,
            RegKind::Diffusion => 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegConfig {
    pub kind: RegKind,
    pub gamma_s: f64,
    pub gamma_t: f64,
    pub gamma_0: f64,
    pub grid: GridSpec,
    pub m_t: usize,
}

impl RegConfig {
    pub fn new(kind: RegKind, gamma_s: f64, gamma_t: f64, gamma_0: f64, grid: GridSpec, m_t: usize) -> Result<Self> {
        if !(gamma_s > 0.0) || !(gamma_t >= 0.0) || !(gamma_0 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "regularisation weights must satisfy gamma_s > 0, gamma_t >= 0, gamma_0 >= 0 (got {gamma_s}, {gamma_t}, {gamma_0})"
            )));
        }
        if m_t == 0 {
            return Err(Error::InvalidInput("m_t must be at least 1".into()));
        }
        Ok(Self {
            kind,
            gamma_s,
            gamma_t,
            gamma_0,
            grid,
            m_t,
        })
    }

    /// Defaults for `kind`: weight by kind, `gamma_t = 1e2`, `gamma_0 = 1e-6`.
    pub fn with_defaults(kind: RegKind, grid: GridSpec, m_t: usize) -> Self {
        Self {
            kind,
            gamma_s: kind.default_gamma(),
            gamma_t: 1e2,
            gamma_0: 1e-6,
            grid,
            m_t,
        }
    }

    /// Same weights on another grid.
    pub fn on_grid(&self, grid: GridSpec) -> Self {
        Self { grid, ..*self }
    }

    /// Quadrature weight `h_t h^n`.
    pub fn cell_weight(&self) -> f64 {
        self.grid.cell_volume() / self.m_t as f64
    }

    fn check(&self, len: usize) -> Result<()> {
        check_len("velocity dofs", VelocityField::len_for(&self.grid, self.m_t), len)
    }
}

/// Banded one-dimensional operator, one entry list per output row.
struct Op1d {
    rows: Vec<Vec<(usize, f64)>>,
    cols: usize,
}

impl Op1d {
    fn forward_diff(n: usize, h: f64) -> Self {
        let rows = (0..n.saturating_sub(1)).map(|i| vec![(i, -1.0 / h), (i + 1, 1.0 / h)]).collect();
        Self { rows, cols: n }
    }

    fn neumann_laplacian(n: usize, h: f64) -> Self {
        let s = 1.0 / (h * h);
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::with_capacity(3);
                if n == 1 {
                    return vec![(0, 0.0)];
                }
                if i > 0 {
                    r.push((i - 1, s));
                }
                let centre = if i == 0 || i == n - 1 { -s } else { -2.0 * s };
                r.push((i, centre));
                if i + 1 < n {
                    r.push((i + 1, s));
                }
                r
            })
            .collect();
        Self { rows, cols: n }
    }

    fn third_diff(n: usize, h: f64) -> Self {
        let s = 1.0 / (h * h * h);
        let rows = (0..n.saturating_sub(3))
            .map(|i| vec![(i, -s), (i + 1, 3.0 * s), (i + 2, -3.0 * s), (i + 3, s)])
            .collect();
        Self { rows, cols: n }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            y[r] = row.iter().map(|&(c, a)| a * x[c]).sum();
        }
    }

    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, a) in row {
                y[c] += a * x[r];
            }
        }
    }

    /// `sum_r A[r][j]^2` per column.
    fn col_norms2(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in &self.rows {
            for &(c, a) in row {
                out[c] += a * a;
            }
        }
        out
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, a) in row {
                if c == r {
                    out[c] += a;
                }
            }
        }
        out
    }
}

fn spatial_op(kind: RegKind, n: usize, h: f64) -> Op1d {
    match kind {
        RegKind::Diffusion => Op1d::forward_diff(n, h),
        RegKind::Curvature => Op1d::neumann_laplacian(n, h),
        RegKind::ThirdOrder => Op1d::third_diff(n, h),
    }
}

/// `B_s^T B_s` applied to one spatial plane, plus `|B_s u|^2`.
fn spatial_normal(kind: RegKind, op: &Op1d, shape: &[usize], u: &[f64]) -> (Vec<f64>, f64) {
    let dim = shape.len();
    let ext = shape[0];
    match kind {
        RegKind::Curvature => {
            let mut lap = vec![0.0; u.len()];
            for axis in 0..dim {
                let part = lattice::map_lines(shape, axis, u, ext, |i, o| op.apply(i, o));
                lap.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            let norm2 = lap.iter().map(|x| x * x).sum();
            let mut out = vec![0.0; u.len()];
            for axis in 0..dim {
                let part = lattice::map_lines(shape, axis, &lap, ext, |i, o| op.apply_t(i, o));
                out.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            (out, norm2)
        }
        RegKind::Diffusion | RegKind::ThirdOrder => {
            let mut out = vec![0.0; u.len()];
            let mut norm2 = 0.0;
            let rows = op.rows.len();
            for axis in 0..dim {
                let bu = lattice::map_lines(shape, axis, u, rows, |i, o| op.apply(i, o));
                norm2 += bu.iter().map(|x| x * x).sum::<f64>();
                let mut bshape = shape.to_vec();
                bshape[axis] = rows;
                let part = lattice::map_lines(&bshape, axis, &bu, ext, |i, o| op.apply_t(i, o));
                out.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            (out, norm2)
        }
    }
}

/// `(B^T B v, v^T B^T B v)` with the gamma weights folded in (no quadrature weight).
fn normal_apply(cfg: &RegConfig, v: &[f64]) -> (Vec<f64>, f64) {
    let grid = cfg.grid;
    let dim = grid.dim();
    let np = grid.num_nodes();
    let planes = cfg.m_t + 1;
    let shape = grid.padded_shape();
    let op = spatial_op(cfg.kind, grid.padded_extent(), grid.h());

    let mut out = vec![0.0; v.len()];
    let mut quad = 0.0;
    for k in 0..planes {
        for c in 0..dim {
            let off = (k * dim + c) * np;
            let (bu, n2) = spatial_normal(cfg.kind, &op, &shape, &v[off..off + np]);
            quad += cfg.gamma_s * n2;
            for (o, b) in out[off..off + np].iter_mut().zip(&bu) {
                *o += cfg.gamma_s * b;
            }
        }
    }
    if cfg.gamma_t > 0.0 && planes > 1 {
        let top = Op1d::forward_diff(planes, 1.0 / cfg.m_t as f64);
        let mut line = vec![0.0; planes];
        let mut diff = vec![0.0; planes - 1];
        let mut back = vec![0.0; planes];
        for c in 0..dim {
            for node in 0..np {
                for (k, l) in line.iter_mut().enumerate() {
                    *l = v[(k * dim + c) * np + node];
                }
                top.apply(&line, &mut diff);
                quad += cfg.gamma_t * diff.iter().map(|d| d * d).sum::<f64>();
                top.apply_t(&diff, &mut back);
                for (k, b) in back.iter().enumerate() {
                    out[(k * dim + c) * np + node] += cfg.gamma_t * b;
                }
            }
        }
    }
    if cfg.gamma_0 > 0.0 {
        quad += cfg.gamma_0 * v.iter().map(|x| x * x).sum::<f64>();
        out.iter_mut().zip(v).for_each(|(o, x)| *o += cfg.gamma_0 * x);
    }
    (out, quad)
}

/// Regulariser value and gradient.
pub fn reg_eval(cfg: &RegConfig, v: &[f64]) -> Result<(f64, Vec<f64>)> {
    cfg.check(v.len())?;
    let w = cfg.cell_weight();
    let (mut g, quad) = normal_apply(cfg, v);
    g.iter_mut().for_each(|x| *x *= w);
    Ok((0.5 * w * quad, g))
}

/// Hessian-vector product; the Hessian does not depend on `v`.
pub fn reg_hessvec(cfg: &RegConfig, w: &[f64]) -> Result<Vec<f64>> {
    Ok(reg_eval(cfg, w)?.1)
}

/// Exact diagonal of the regulariser Hessian.
pub fn reg_diag(cfg: &RegConfig) -> Vec<f64> {
    let grid = cfg.grid;
    let dim = grid.dim();
    let ext = grid.padded_extent();
    let np = grid.num_nodes();
    let planes = cfg.m_t + 1;
    let op = spatial_op(cfg.kind, ext, grid.h());
    let colsq = op.col_norms2();
    let centre = op.diagonal();

    let mut spatial = vec![0.0; np];
    for (node, s) in spatial.iter_mut().enumerate() {
        let mut rem = node;
        let mut idx = [0usize; 3];
        for d in idx.iter_mut().take(dim) {
            *d = rem % ext;
            rem /= ext;
        }
        *s = match cfg.kind {
            RegKind::Curvature => {
                let diag_sum: f64 = idx[..dim].iter().map(|&i| centre[i]).sum();
                diag_sum * diag_sum + idx[..dim].iter().map(|&i| colsq[i] - centre[i] * centre[i]).sum::<f64>()
            }
            _ => idx[..dim].iter().map(|&i| colsq[i]).sum(),
        };
    }
    let tcol = Op1d::forward_diff(planes, 1.0 / cfg.m_t as f64).col_norms2();
    let w = cfg.cell_weight();
    let mut out = vec![0.0; planes * dim * np];
    for k in 0..planes {
        for c in 0..dim {
            let off = (k * dim + c) * np;
            for (o, s) in out[off..off + np].iter_mut().zip(&spatial) {
                *o = w * (cfg.gamma_s * s + cfg.gamma_t * tcol[k] + cfg.gamma_0);
            }
        }
    }
    out
}

/// Eigenvalues of the one-dimensional Neumann operator `D^T D` (forward differences of step `h`)
/// on `n` points, in DCT-II order.
fn neumann_eigs(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = 2.0 * (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin() / h;
            s * s
        })
        .collect()
}

/// Inverse of `R'' + shift` in the cosine basis of the padded space-time grid.
///
/// Exact for diffusion and curvature (both are polynomials in the Neumann Laplacian
/// along each axis). The third-order operator has no interior-only rows to match
/// that structure exactly, so it is approximated by the cube of `D^T D` per axis.
pub struct RegInverse {
    cfg: RegConfig,
    /// Per spatial mode, `gamma_s` times the spatial symbol.
    spatial: Vec<f64>,
    /// Per time mode, `gamma_t` times the temporal symbol.
    temporal: Vec<f64>,
    shift: f64,
    dct: std::sync::Arc<dyn rustdct::TransformType2And3<f64>>,
    dct_t: std::sync::Arc<dyn rustdct::TransformType2And3<f64>>,
}

impl RegInverse {
    pub fn new(cfg: &RegConfig, shift: f64) -> Self {
        let grid = cfg.grid;
        let dim = grid.dim();
        let ext = grid.padded_extent();
        let planes = cfg.m_t + 1;
        let mu = neumann_eigs(ext, grid.h());
        let symbol = |k: &[usize]| -> f64 {
            match cfg.kind {
                RegKind::Diffusion => k.iter().map(|&i| mu[i]).sum(),
                RegKind::Curvature => k.iter().map(|&i| mu[i]).sum::<f64>().powi(2),
                RegKind::ThirdOrder => k.iter().map(|&i| mu[i].powi(3)).sum(),
            }
        };
        let spatial = (0..grid.num_nodes())
            .map(|node| {
                let mut idx = [0usize; 3];
                let mut rem = node;
                for d in idx.iter_mut().take(dim) {
                    *d = rem % ext;
                    rem /= ext;
                }
                cfg.gamma_s * symbol(&idx[..dim])
            })
            .collect();
        let temporal = neumann_eigs(planes, 1.0 / cfg.m_t as f64)
            .into_iter()
            .map(|e| cfg.gamma_t * e)
            .collect();
        let mut planner = rustdct::DctPlanner::new();
        Self {
            cfg: *cfg,
            spatial,
            temporal,
            shift,
            dct: planner.plan_dct2(ext),
            dct_t: planner.plan_dct2(planes),
        }
    }

    /// `(R'' + shift)^{-1} r`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.cfg.check(r.len())?;
        let grid = self.cfg.grid;
        let dim = grid.dim();
        let np = grid.num_nodes();
        let ext = grid.padded_extent();
        let planes = self.cfg.m_t + 1;
        let shape = grid.padded_shape();
        let mut x = r.to_vec();

        let spatial = |x: &mut [f64], inverse: bool| {
            for block in x.chunks_mut(np) {
                for axis in 0..dim {
                    lattice::for_each_line(&shape, axis, block, |line| {
                        if inverse {
                            self.dct.process_dct3(line);
                        } else {
                            self.dct.process_dct2(line);
                        }
                    });
                }
            }
        };
        let temporal = |x: &mut [f64], inverse: bool| {
            if planes < 2 {
                return;
            }
            let mut line = vec![0.0; planes];
            for c in 0..dim {
                for node in 0..np {
                    for (k, l) in line.iter_mut().enumerate() {
                        *l = x[(k * dim + c) * np + node];
                    }
                    if inverse {
                        self.dct_t.process_dct3(&mut line);
                    } else {
                        self.dct_t.process_dct2(&mut line);
                    }
                    for (k, l) in line.iter().enumerate() {
                        x[(k * dim + c) * np + node] = *l;
                    }
                }
            }
        };

        spatial(&mut x, false);
        temporal(&mut x, false);
        // DCT-III after DCT-II multiplies by n/2 per transformed axis
        let mut norm = (2.0 / ext as f64).powi(dim as i32);
        if planes >= 2 {
            norm *= 2.0 / planes as f64;
        }
        let w = self.cfg.cell_weight();
        for k in 0..planes {
            let tk = if planes >= 2 { self.temporal[k] } else { 0.0 };
            for c in 0..dim {
                let off = (k * dim + c) * np;
                for (xi, s) in x[off..off + np].iter_mut().zip(&self.spatial) {
                    *xi *= norm / (w * (s + tk + self.cfg.gamma_0) + self.shift);
                }
            }
        }
        temporal(&mut x, true);
        spatial(&mut x, true);
        Ok(x)
    }
}
