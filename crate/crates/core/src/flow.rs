//! Space-time velocity fields and explicit Runge-Kutta integration of the
//! characteristic ODE `dX/dt = v(t, X)`, differentiated exactly through every stage.
//!
//! Velocities live on the nodes of the padded grid (cell centres extended by
//! `pad` cells on each side) at `m_t + 1` equally spaced time planes. In space
//! they are interpolated multilinearly, in time linearly. Nodes beyond the
//! padded grid count as zero, so particles that leave it freeze.

use crate::error::{check_len, Error, Result};
use crate::grid::GridSpec;

/// Velocity unknowns, laid out time-major, component-second, space lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: GridSpec,
    m_t: usize,
    dofs: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(grid: GridSpec, m_t: usize) -> Self {
        let len = Self::len_for(&grid, m_t);
        Self {
            grid,
            m_t,
            dofs: vec![0.0; len],
        }
    }

    pub fn new(grid: GridSpec, m_t: usize, dofs: Vec<f64>) -> Result<Self> {
        if m_t == 0 {
            return Err(Error::InvalidInput("m_t must be at least 1".into()));
        }
        check_len("velocity dofs", Self::len_for(&grid, m_t), dofs.len())?;
        if dofs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite velocity entry".into()));
        }
        Ok(Self { grid, m_t, dofs })
    }

    /// Fills every node of every time plane from `f(t, x) -> v`.
    pub fn from_fn(grid: GridSpec, m_t: usize, f: impl Fn(f64, &[f64]) -> [f64; 3]) -> Result<Self> {
        let mut v = Self::zeros(grid, m_t);
        let n = grid.dim();
        let np = grid.num_nodes();
        let ext = grid.padded_extent();
        let mut x = vec![0.0; n];
        for k in 0..=m_t {
            let t = k as f64 / m_t as f64;
            for node in 0..np {
                let mut rem = node;
                for xd in x.iter_mut() {
                    *xd = grid.node_coord(rem % ext);
                    rem /= ext;
                }
                let val = f(t, &x);
                for c in 0..n {
                    v.dofs[(k * n + c) * np + node] = val[c];
                }
            }
        }
        Self::new(grid, m_t, v.dofs)
    }

    pub fn len_for(grid: &GridSpec, m_t: usize) -> usize {
        (m_t + 1) * grid.dim() * grid.num_nodes()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn m_t(&self) -> usize {
        self.m_t
    }

    /// Time cell length `1/m_t`.
    pub fn h_t(&self) -> f64 {
        1.0 / self.m_t as f64
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        &mut self.dofs
    }

    pub fn into_dofs(self) -> Vec<f64> {
        self.dofs
    }

    pub fn max_abs(&self) -> f64 {
        self.dofs.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Direction of characteristic integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// From `t = 0` to `t = 1`, `dt = +1/N_t`.
    Forward,
    /// From `t = 1` to `t = 0`, `dt = -1/N_t`.
    Backward,
}

/// Explicit one-step method used for the characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

struct Tableau {
    a: &'static [&'static [f64]],
    b: &'static [f64],
    c: &'static [f64],
}

const EULER: Tableau = Tableau {
    a: &[&[]],
    b: &[1.0],
    c: &[0.0],
};

const RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    c: &[0.0, 0.5, 0.5, 1.0],
};

impl Integrator {
    fn tableau(self) -> &'static Tableau {
        match self {
            Integrator::Euler => &EULER,
            Integrator::Rk4 => &RK4,
        }
    }

    pub fn stages(self) -> usize {
        self.tableau().b.len()
    }
}

/// Multilinear space / linear time interpolation weights at one `(t, x)`.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    nodes: [usize; 8],
    w: [f64; 8],
    /// Spatial derivative of `w`, per axis.
    dw: [[f64; 3]; 8],
    len: usize,
    planes: [usize; 2],
    pw: [f64; 2],
}

fn stencil(grid: &GridSpec, m_t: usize, t: f64, x: &[f64]) -> Stencil {
    let n = grid.dim();
    let ext = grid.padded_extent() as i64;
    let inv_h = grid.m() as f64;
    let pad = grid.pad() as f64;

    let mut lo = [0i64; 3];
    let mut fr = [0.0; 3];
    for d in 0..n {
        let u = x[d] * inv_h - 0.5 + pad;
        let i0 = u.floor();
        lo[d] = i0 as i64;
        fr[d] = u - i0;
    }

    let mut st = Stencil {
        nodes: [0; 8],
        w: [0.0; 8],
        dw: [[0.0; 3]; 8],
        len: 0,
        planes: [0; 2],
        pw: [0.0; 2],
    };
    'corner: for corner in 0..(1usize << n) {
        let mut node = 0usize;
        let mut stride = 1usize;
        let mut w = 1.0;
        let mut dw = [1.0; 3];
        for d in 0..n {
            let bit = (corner >> d) & 1;
            let idx = lo[d] + bit as i64;
            if idx < 0 || idx >= ext {
                continue 'corner;
            }
            node += idx as usize * stride;
            stride *= ext as usize;
            let (wd, dwd) = if bit == 1 { (fr[d], inv_h) } else { (1.0 - fr[d], -inv_h) };
            w *= wd;
            for (e, de) in dw.iter_mut().enumerate().take(n) {
                *de *= if e == d { dwd } else { wd };
            }
        }
        st.nodes[st.len] = node;
        st.w[st.len] = w;
        st.dw[st.len] = dw;
        st.len += 1;
    }

    let s = (t * m_t as f64).clamp(0.0, m_t as f64);
    let k0 = (s.floor() as usize).min(m_t - 1);
    let alpha = s - k0 as f64;
    st.planes = [k0, k0 + 1];
    st.pw = [1.0 - alpha, alpha];
    st
}

impl Stencil {
    /// Velocity value at the stencil point.
    fn value(&self, dofs: &[f64], n: usize, np: usize, out: &mut [f64; 3]) {
        *out = [0.0; 3];
        for p in 0..2 {
            if self.pw[p] == 0.0 {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate().take(n) {
                let base = (self.planes[p] * n + c) * np;
                let mut acc = 0.0;
                for k in 0..self.len {
                    acc += self.w[k] * dofs[base + self.nodes[k]];
                }
                *o += self.pw[p] * acc;
            }
        }
    }

    /// Spatial Jacobian `jac[c][d] = d v_c / d x_d`.
    fn jacobian(&self, dofs: &[f64], n: usize, np: usize) -> [[f64; 3]; 3] {
        let mut jac = [[0.0; 3]; 3];
        for p in 0..2 {
            if self.pw[p] == 0.0 {
                continue;
            }
            for (c, row) in jac.iter_mut().enumerate().take(n) {
                let base = (self.planes[p] * n + c) * np;
                for k in 0..self.len {
                    let val = self.pw[p] * dofs[base + self.nodes[k]];
                    for d in 0..n {
                        row[d] += val * self.dw[k][d];
                    }
                }
            }
        }
        jac
    }

    /// Adds `cot` (per component) onto the velocity cotangent at this stencil.
    fn scatter(&self, cot: &[f64; 3], n: usize, np: usize, out: &mut [f64]) {
        for p in 0..2 {
            if self.pw[p] == 0.0 {
                continue;
            }
            for (c, &z) in cot.iter().enumerate().take(n) {
                if z == 0.0 {
                    continue;
                }
                let base = (self.planes[p] * n + c) * np;
                let zp = self.pw[p] * z;
                for k in 0..self.len {
                    out[base + self.nodes[k]] += zp * self.w[k];
                }
            }
        }
    }
}

/// Interpolated velocities (flattened `len x n`) at time `t` and the given points.
pub fn interp_velocity(v: &VelocityField, t: f64, pts: &[f64]) -> Vec<f64> {
    let n = v.grid.dim();
    let np = v.grid.num_nodes();
    let mut out = Vec::with_capacity(pts.len());
    let mut val = [0.0; 3];
    for p in pts.chunks(n) {
        stencil(&v.grid, v.m_t, t, p).value(&v.dofs, n, np, &mut val);
        out.extend_from_slice(&val[..n]);
    }
    out
}

/// Endpoints of the characteristics together with every stage location, which is all
/// the derivative maps need.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    grid: GridSpec,
    m_t: usize,
    direction: Direction,
    integrator: Integrator,
    steps: usize,
    npts: usize,
    /// Velocity dofs the trace was computed with (needed for `dI/dX`).
    velocity: Vec<f64>,
    /// `steps x stages x npts x n`.
    stage_points: Vec<f64>,
    endpoints: Vec<f64>,
}

impl FlowTrace {
    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_points(&self) -> usize {
        self.npts
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }

    pub fn velocity_len(&self) -> usize {
        self.velocity.len()
    }

    fn dt(&self) -> f64 {
        match self.direction {
            Direction::Forward => 1.0 / self.steps as f64,
            Direction::Backward => -1.0 / self.steps as f64,
        }
    }

    fn t_start(&self) -> f64 {
        match self.direction {
            Direction::Forward => 0.0,
            Direction::Backward => 1.0,
        }
    }

    fn stage_point(&self, step: usize, stage: usize, pt: usize) -> &[f64] {
        let n = self.grid.dim();
        let s = self.integrator.stages();
        let off = ((step * s + stage) * self.npts + pt) * n;
        &self.stage_points[off..off + n]
    }

    fn stage_time(&self, step: usize, stage: usize) -> f64 {
        let c = self.integrator.tableau().c[stage];
        self.t_start() + (step as f64 + c) * self.dt()
    }
}

/// Integrates the characteristics from `x0` over unit time with `steps` equal steps.
pub fn integrate_characteristics(
    v: &VelocityField,
    x0: &[f64],
    direction: Direction,
    steps: usize,
    integrator: Integrator,
) -> Result<FlowTrace> {
    if steps == 0 {
        return Err(Error::InvalidInput("number of time steps must be at least 1".into()));
    }
    let n = v.grid.dim();
    if !x0.len().is_multiple_of(n) {
        return Err(Error::InvalidInput("point list length is not a multiple of the dimension".into()));
    }
    let npts = x0.len() / n;
    let np = v.grid.num_nodes();
    let tab = integrator.tableau();
    let s = tab.b.len();

    let mut trace = FlowTrace {
        grid: v.grid,
        m_t: v.m_t,
        direction,
        integrator,
        steps,
        npts,
        velocity: v.dofs.clone(),
        stage_points: vec![0.0; steps * s * npts * n],
        endpoints: x0.to_vec(),
    };
    let dt = trace.dt();
    let mut k = vec![[0.0f64; 3]; s];
    let mut y = [0.0f64; 3];
    for step in 0..steps {
        for pt in 0..npts {
            let x = &trace.endpoints[pt * n..pt * n + n];
            let mut xn = [0.0; 3];
            xn[..n].copy_from_slice(x);
            for i in 0..s {
                for d in 0..n {
                    y[d] = xn[d] + dt * (0..i).map(|j| tab.a[i][j] * k[j][d]).sum::<f64>();
                }
                let off = ((step * s + i) * npts + pt) * n;
                trace.stage_points[off..off + n].copy_from_slice(&y[..n]);
                let t = trace.stage_time(step, i);
                stencil(&v.grid, v.m_t, t, &y[..n]).value(&v.dofs, n, np, &mut k[i]);
            }
            for d in 0..n {
                xn[d] += dt * (0..s).map(|i| tab.b[i] * k[i][d]).sum::<f64>();
            }
            trace.endpoints[pt * n..pt * n + n].copy_from_slice(&xn[..n]);
        }
    }
    Ok(trace)
}

/// Directional derivative of the endpoints with respect to the velocity dofs.
pub fn flow_jacvec(trace: &FlowTrace, w: &[f64]) -> Result<Vec<f64>> {
    check_len("velocity perturbation", trace.velocity.len(), w.len())?;
    let n = trace.grid.dim();
    let np = trace.grid.num_nodes();
    let tab = trace.integrator.tableau();
    let s = tab.b.len();
    let dt = trace.dt();
    let mut out = vec![0.0; trace.npts * n];
    let mut dk = vec![[0.0f64; 3]; s];
    for pt in 0..trace.npts {
        let mut dx = [0.0f64; 3];
        for step in 0..trace.steps {
            for i in 0..s {
                let mut dy = [0.0; 3];
                for d in 0..n {
                    dy[d] = dx[d] + dt * (0..i).map(|j| tab.a[i][j] * dk[j][d]).sum::<f64>();
                }
                let st = stencil(
                    &trace.grid,
                    trace.m_t,
                    trace.stage_time(step, i),
                    trace.stage_point(step, i, pt),
                );
                let mut val = [0.0; 3];
                st.value(w, n, np, &mut val);
                let jac = st.jacobian(&trace.velocity, n, np);
                for c in 0..n {
                    dk[i][c] = val[c] + (0..n).map(|d| jac[c][d] * dy[d]).sum::<f64>();
                }
            }
            for d in 0..n {
                dx[d] += dt * (0..s).map(|i| tab.b[i] * dk[i][d]).sum::<f64>();
            }
        }
        out[pt * n..pt * n + n].copy_from_slice(&dx[..n]);
    }
    Ok(out)
}

/// Transpose of [`flow_jacvec`]: maps an endpoint cotangent to a velocity cotangent.
pub fn flow_jacvec_transpose(trace: &FlowTrace, z: &[f64]) -> Result<Vec<f64>> {
    let n = trace.grid.dim();
    check_len("endpoint cotangent", trace.npts * n, z.len())?;
    let mut out = vec![0.0; trace.velocity.len()];
    flow_jacvec_transpose_into(trace, z, &mut out);
    Ok(out)
}

pub(crate) fn flow_jacvec_transpose_into(trace: &FlowTrace, z: &[f64], out: &mut [f64]) {
    let n = trace.grid.dim();
    let np = trace.grid.num_nodes();
    let tab = trace.integrator.tableau();
    let s = tab.b.len();
    let dt = trace.dt();
    let mut lk = vec![[0.0f64; 3]; s];
    for pt in 0..trace.npts {
        let zp = &z[pt * n..pt * n + n];
        if zp.iter().all(|&x| x == 0.0) {
            continue;
        }
        let mut lx = [0.0f64; 3];
        lx[..n].copy_from_slice(zp);
        for step in (0..trace.steps).rev() {
            for i in 0..s {
                for d in 0..n {
                    lk[i][d] = dt * tab.b[i] * lx[d];
                }
            }
            for i in (0..s).rev() {
                let st = stencil(
                    &trace.grid,
                    trace.m_t,
                    trace.stage_time(step, i),
                    trace.stage_point(step, i, pt),
                );
                st.scatter(&lk[i], n, np, out);
                let jac = st.jacobian(&trace.velocity, n, np);
                let mut ly = [0.0; 3];
                for d in 0..n {
                    ly[d] = (0..n).map(|c| jac[c][d] * lk[i][c]).sum();
                }
                for d in 0..n {
                    lx[d] += ly[d];
                }
                for j in 0..i {
                    let a = tab.a[i][j];
                    if a != 0.0 {
                        for d in 0..n {
                            lk[j][d] += dt * a * ly[d];
                        }
                    }
                }
            }
        }
    }
}

/// Multilinear prolongation of every time plane onto the velocity grid of `fine`.
/// Coordinates beyond the coarse node range are clamped to its edge.
pub fn prolong_velocity(v: &VelocityField, fine: GridSpec) -> Result<VelocityField> {
    let coarse = v.grid;
    if fine.dim() != coarse.dim() {
        return Err(Error::InvalidGrid("prolongation between grids of different dimension".into()));
    }
    let n = coarse.dim();
    let npc = coarse.num_nodes();
    let npf = fine.num_nodes();
    let ext_c = coarse.padded_extent();
    let ext_f = fine.padded_extent();
    let mut out = VelocityField::zeros(fine, v.m_t);

    // Per-axis (lo index, fraction) in coarse node coordinates for every fine node index.
    let axis_map: Vec<(usize, f64)> = (0..ext_f)
        .map(|i| {
            let x = fine.node_coord(i);
            let u = (x * coarse.m() as f64 - 0.5 + coarse.pad() as f64).clamp(0.0, (ext_c - 1) as f64);
            let lo = (u.floor() as usize).min(ext_c.saturating_sub(2));
            (lo, u - lo as f64)
        })
        .collect();

    for node in 0..npf {
        let mut idx = [0usize; 3];
        let mut rem = node;
        for d in idx.iter_mut().take(n) {
            *d = rem % ext_f;
            rem /= ext_f;
        }
        for corner in 0..(1usize << n) {
            let mut cnode = 0;
            let mut stride = 1;
            let mut w = 1.0;
            for d in 0..n {
                let bit = (corner >> d) & 1;
                let (lo, fr) = axis_map[idx[d]];
                cnode += (lo + bit) * stride;
                stride *= ext_c;
                w *= if bit == 1 { fr } else { 1.0 - fr };
            }
            if w == 0.0 {
                continue;
            }
            for k in 0..=v.m_t {
                for c in 0..n {
                    out.dofs[(k * n + c) * npf + node] += w * v.dofs[(k * n + c) * npc + cnode];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::cell_centers;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn smooth_random_velocity(grid: GridSpec, m_t: usize, amp: f64, seed: u64) -> VelocityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        VelocityField::from_fn(grid, m_t, |t, x| {
            let bump = (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.08).exp();
            [
                amp * bump * (coef[0] + coef[1] * x[1] + coef[2] * t + coef[3] * (3.0 * x[0]).sin()),
                amp * bump * (coef[4] + coef[5] * x[0] + coef[6] * t + coef[7] * (2.0 * x[1]).cos()),
                0.0,
            ]
        })
        .unwrap()
    }

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn interpolation_basics() {
        let g = GridSpec::new(2, 16).unwrap();
        let v = VelocityField::from_fn(g, 1, |_, _| [0.3, -0.2, 0.0]).unwrap();
        let pts = [0.1, 0.7, 0.5, 0.5, -0.1, 1.05];
        let vals = interp_velocity(&v, 0.4, &pts);
        for p in vals.chunks(2) {
            assert!((p[0] - 0.3).abs() < 1e-14 && (p[1] + 0.2).abs() < 1e-14);
        }
        let z = VelocityField::zeros(g, 1);
        assert!(interp_velocity(&z, 0.5, &pts).iter().all(|&x| x == 0.0));

        let lin = VelocityField::from_fn(g, 1, |t, _| [t * 2.0, t * -4.0, 0.0]).unwrap();
        let vals = interp_velocity(&lin, 0.5, &pts);
        for p in vals.chunks(2) {
            assert!((p[0] - 1.0).abs() < 1e-14 && (p[1] + 2.0).abs() < 1e-14);
        }
        // far outside the padded grid
        assert_eq!(interp_velocity(&v, 0.5, &[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_and_constant_flows() {
        let g = GridSpec::new(2, 16).unwrap();
        let x0 = cell_centers(&g);
        let z = VelocityField::zeros(g, 1);
        let tr = integrate_characteristics(&z, &x0, Direction::Forward, 5, Integrator::Rk4).unwrap();
        assert_eq!(tr.endpoints(), &x0[..]);

        let c = [0.05, -0.03];
        let v = VelocityField::from_fn(g, 1, |_, _| [c[0], c[1], 0.0]).unwrap();
        let tr = integrate_characteristics(&v, &x0, Direction::Forward, 5, Integrator::Rk4).unwrap();
        for (e, s) in tr.endpoints().chunks(2).zip(x0.chunks(2)) {
            assert!((e[0] - s[0] - c[0]).abs() < 1e-14);
            assert!((e[1] - s[1] - c[1]).abs() < 1e-14);
        }
        let tr = integrate_characteristics(&v, &x0, Direction::Backward, 5, Integrator::Rk4).unwrap();
        for (e, s) in tr.endpoints().chunks(2).zip(x0.chunks(2)) {
            assert!((e[0] - s[0] + c[0]).abs() < 1e-14);
        }
        assert!(integrate_characteristics(&v, &x0, Direction::Forward, 0, Integrator::Rk4).is_err());
    }

    fn rotation(g: GridSpec, omega: f64) -> VelocityField {
        VelocityField::from_fn(g, 1, |_, x| [-omega * (x[1] - 0.5), omega * (x[0] - 0.5), 0.0]).unwrap()
    }

    #[test]
    fn forward_then_backward_returns_home() {
        let g = GridSpec::new(2, 16).unwrap();
        let omega = std::f64::consts::FRAC_PI_2;
        let v = rotation(g, omega);
        let x0 = cell_centers(&g);
        let fw = integrate_characteristics(&v, &x0, Direction::Forward, 5, Integrator::Rk4).unwrap();
        let bw = integrate_characteristics(&v, fw.endpoints(), Direction::Backward, 5, Integrator::Rk4).unwrap();
        let tol = 10.0 * (1.0f64 / 5.0).powi(4) * v.max_abs();
        for (a, b) in bw.endpoints().iter().zip(&x0) {
            assert!((a - b).abs() <= tol, "{a} vs {b}");
        }
    }

    #[test]
    fn euler_single_step_derivative() {
        let g = GridSpec::new(2, 8).unwrap();
        let v = VelocityField::zeros(g, 1);
        let x0 = cell_centers(&g);
        let tr = integrate_characteristics(&v, &x0, Direction::Forward, 1, Integrator::Euler).unwrap();
        let w = VelocityField::from_fn(g, 1, |_, _| [0.7, -0.4, 0.0]).unwrap();
        let d = flow_jacvec(&tr, w.dofs()).unwrap();
        for p in d.chunks(2) {
            assert!((p[0] - 0.7).abs() < 1e-14 && (p[1] + 0.4).abs() < 1e-14);
        }
    }

    #[test]
    fn euler_single_step_transpose_scatters_onto_stencil() {
        // One point at a generic location, v = 0, one Euler step at t = 0:
        // the transpose is dt * z spread with the bilinear weights on plane 0.
        let g = GridSpec::new(2, 8).unwrap();
        let v = VelocityField::zeros(g, 1);
        let p = [0.33, 0.61];
        let tr = integrate_characteristics(&v, &p, Direction::Forward, 1, Integrator::Euler).unwrap();
        let z = [2.0, -1.0];
        let out = flow_jacvec_transpose(&tr, &z).unwrap();

        let ext = g.padded_extent();
        let np = g.num_nodes();
        let mut expect = vec![0.0; out.len()];
        let ux = p[0] * 8.0 - 0.5 + g.pad() as f64;
        let uy = p[1] * 8.0 - 0.5 + g.pad() as f64;
        let (ix, iy) = (ux.floor() as usize, uy.floor() as usize);
        let (fx, fy) = (ux - ix as f64, uy - iy as f64);
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                let node = (iy + dy) * ext + ix + dx;
                expect[node] += z[0] * wx * wy;
                expect[np + node] += z[1] * wx * wy;
            }
        }
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn jacvec_matches_finite_differences() {
        let g = GridSpec::new(2, 16).unwrap();
        let v = smooth_random_velocity(g, 1, 0.1, 1);
        let w = smooth_random_velocity(g, 1, 0.1, 2);
        let x0 = cell_centers(&g);
        for dir in [Direction::Forward, Direction::Backward] {
            let tr = integrate_characteristics(&v, &x0, dir, 5, Integrator::Rk4).unwrap();
            let jw = flow_jacvec(&tr, w.dofs()).unwrap();
            let mut prev = f64::INFINITY;
            for &h in &[1e-2, 1e-3, 1e-4] {
                let mut vp = v.clone();
                vp.dofs_mut().iter_mut().zip(w.dofs()).for_each(|(a, b)| *a += h * b);
                let trp = integrate_characteristics(&vp, &x0, dir, 5, Integrator::Rk4).unwrap();
                let err: f64 = trp
                    .endpoints()
                    .iter()
                    .zip(tr.endpoints())
                    .zip(&jw)
                    .map(|((a, b), j)| (a - b - h * j).abs())
                    .fold(0.0, f64::max);
                assert!(err < prev * 0.02 || err < 1e-13, "remainder not quadratic: {err} after {prev}");
                prev = err;
            }
        }
    }

    #[test]
    fn transpose_identity() {
        let g = GridSpec::new(2, 16).unwrap();
        let v = smooth_random_velocity(g, 2, 0.15, 4);
        let x0 = cell_centers(&g);
        let tr = integrate_characteristics(&v, &x0, Direction::Backward, 5, Integrator::Rk4).unwrap();
        for seed in 0..5 {
            let w = random_vec(v.dofs().len(), 100 + seed);
            let z = random_vec(x0.len(), 200 + seed);
            let lhs = dot(&flow_jacvec(&tr, &w).unwrap(), &z);
            let rhs = dot(&w, &flow_jacvec_transpose(&tr, &z).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
        }
        assert!(flow_jacvec(&tr, &[0.0; 3]).is_err());
        assert!(flow_jacvec_transpose(&tr, &[0.0; 3]).is_err());
        let zero = flow_jacvec_transpose(&tr, &vec![0.0; x0.len()]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn prolongation_of_constant_is_constant() {
        let gc = GridSpec::new(2, 32).unwrap();
        let gf = GridSpec::new(2, 64).unwrap();
        let v = VelocityField::from_fn(gc, 1, |_, _| [0.2, -0.1, 0.0]).unwrap();
        let p = prolong_velocity(&v, gf).unwrap();
        let np = gf.num_nodes();
        for k in 0..2 {
            for node in 0..np {
                assert!((p.dofs()[(2 * k) * np + node] - 0.2).abs() < 1e-14);
                assert!((p.dofs()[(2 * k + 1) * np + node] + 0.1).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn prolongation_reproduces_affine_fields_inside() {
        let gc = GridSpec::new(2, 16).unwrap();
        let gf = GridSpec::new(2, 32).unwrap();
        let f = |_: f64, x: &[f64]| [x[0] - 2.0 * x[1], 0.5 * x[0], 0.0];
        let v = VelocityField::from_fn(gc, 1, f).unwrap();
        let p = prolong_velocity(&v, gf).unwrap();
        let pts = [0.3, 0.4, 0.71, 0.12];
        let a = interp_velocity(&p, 0.5, &pts);
        let b = interp_velocity(&v, 0.5, &pts);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
