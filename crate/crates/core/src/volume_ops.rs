//! Volume potentials `𝒢_V φ = ∫ Φ(·, y) V(y) φ(y) dy` over the cells of a
//! [`VolumeMesh`], their boundary traces and the functional `U_V`.
//!
//! Cell integrals of the kernel:
//!
//! * same cell: exact integral of `Φ0` over the equal-area disc plus
//!   `h²·(−ln k/2π + c₂)` for the smooth remainder;
//! * nearby cells (`r < 1.5h`): exact integral of `Φ0` over the square plus a
//!   4×4 midpoint rule for `Re(Φ − Φ0)`;
//! * otherwise the midpoint rule `h² Φ(r)`.
//!
//! The imaginary part is always `h² J0(kr)/4` so that the discrete operator
//! keeps the positive semi-definite imaginary part of the continuous one.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, ScatterError};
use crate::geometry::{BoundaryMesh, Point, VolumeMesh};
use crate::specfun::{c2, cyl_bessel};

type C = Complex64;

/// Kernel of a volume potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VolumeKernel {
    Helmholtz(f64),
    Laplace,
}

impl VolumeKernel {
    fn check(self) -> Result<()> {
        match self {
            VolumeKernel::Helmholtz(k) if !(k > 0.0) || !k.is_finite() => Err(
                ScatterError::InvalidInput(format!("wavenumber must be positive, got {k}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Contrast `V` sampled at the cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumField {
    pub values: Vec<C>,
    /// `Some(q)` when every cell carries the same value `q`.
    pub uniform: Option<C>,
}

impl MediumField {
    pub fn constant(mesh: &VolumeMesh, q: C) -> Result<Self> {
        if q.im < 0.0 || !q.re.is_finite() || !q.im.is_finite() {
            return Err(ScatterError::InvalidInput(format!(
                "contrast must be finite with Im V ≥ 0, got {q}"
            )));
        }
        Ok(MediumField {
            values: vec![q; mesh.len()],
            uniform: Some(q),
        })
    }

    pub fn zero(mesh: &VolumeMesh) -> Self {
        MediumField {
            values: vec![C::new(0.0, 0.0); mesh.len()],
            uniform: Some(C::new(0.0, 0.0)),
        }
    }

    pub fn from_values(values: Vec<C>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.im < 0.0 || !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(ScatterError::InvalidInput(format!(
                "cell {i}: contrast must be finite with Im V ≥ 0, got {v}"
            )));
        }
        let uniform = match values.first() {
            Some(&f) if values.iter().all(|&v| v == f) => Some(f),
            None => Some(C::new(0.0, 0.0)),
            _ => None,
        };
        Ok(MediumField { values, uniform })
    }

    /// Reads CSV rows `cx, cy, re, im`; each row must match a cell center
    /// within `h/4`. Cells without a row get `V = 0`.
    pub fn from_csv(mesh: &VolumeMesh, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut values = vec![C::new(0.0, 0.0); mesh.len()];
        let index: std::collections::HashMap<[i64; 2], usize> = mesh
            .lattice
            .iter()
            .enumerate()
            .map(|(c, &l)| (l, c))
            .collect();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Vec<f64> = match fields.iter().map(|f| f.parse::<f64>()).collect() {
                Ok(v) => v,
                // header line
                Err(_) if line_no == 0 => continue,
                Err(e) => return Err(ScatterError::Format(format!("line {}: {e}", line_no + 1))),
            };
            if parsed.len() != 4 {
                return Err(ScatterError::Format(format!(
                    "line {}: expected 4 fields, found {}",
                    line_no + 1,
                    parsed.len()
                )));
            }
            let (i, j) = (
                (parsed[0] / mesh.h).round() as i64,
                (parsed[1] / mesh.h).round() as i64,
            );
            let cell = index.get(&[i, j]).copied().filter(|&c| {
                let p = mesh.cell_centers[c];
                (p[0] - parsed[0]).hypot(p[1] - parsed[1]) <= 0.25 * mesh.h
            });
            match cell {
                Some(c) => values[c] = C::new(parsed[2], parsed[3]),
                None => {
                    return Err(ScatterError::Format(format!(
                        "line {}: ({}, {}) is not a cell center",
                        line_no + 1,
                        parsed[0],
                        parsed[1]
                    )))
                }
            }
        }
        Self::from_values(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == C::new(0.0, 0.0))
    }

    pub fn scaled(&self, a: C) -> MediumField {
        MediumField {
            values: self.values.iter().map(|v| v * a).collect(),
            uniform: self.uniform.map(|v| v * a),
        }
    }
}

fn check_shapes(mesh: &VolumeMesh, v: &MediumField) -> Result<()> {
    if mesh.len() != v.len() {
        return Err(ScatterError::InvalidInput(format!(
            "medium has {} values for {} cells",
            v.len(),
            mesh.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cell integrals

/// `∫∫ ln(u² + v²) du dv`.
fn log_antideriv(u: f64, v: f64) -> f64 {
    let r2 = u * u + v * v;
    let mut g = if r2 > 0.0 {
        u * v * (r2.ln() - 3.0)
    } else {
        0.0
    };
    if u != 0.0 {
        g += u * u * (v / u).atan();
    }
    if v != 0.0 {
        g += v * v * (u / v).atan();
    }
    g
}

/// `∫ ln(u² + v²) dv`.
fn log_antideriv_v(u: f64, v: f64) -> f64 {
    let r2 = u * u + v * v;
    let mut g = if r2 > 0.0 { v * r2.ln() } else { 0.0 } - 2.0 * v;
    if u != 0.0 {
        g += 2.0 * u * (v / u).atan();
    }
    g
}

/// `∫_cell Φ0(x, y) dy` and its `x`-gradient for the square of side `h`
/// centered at `d = x − y_c` away from `x`.
fn laplace_square(d: Point, h: f64) -> (f64, Point) {
    let (u0, u1) = (d[0] - 0.5 * h, d[0] + 0.5 * h);
    let (v0, v1) = (d[1] - 0.5 * h, d[1] + 0.5 * h);
    let s = -1.0 / (4.0 * PI);
    let val = log_antideriv(u1, v1) - log_antideriv(u0, v1) - log_antideriv(u1, v0)
        + log_antideriv(u0, v0);
    let gx = (log_antideriv_v(u1, v1) - log_antideriv_v(u1, v0))
        - (log_antideriv_v(u0, v1) - log_antideriv_v(u0, v0));
    let gy = (log_antideriv_v(v1, u1) - log_antideriv_v(v1, u0))
        - (log_antideriv_v(v0, u1) - log_antideriv_v(v0, u0));
    (s * val, [s * gx, s * gy])
}

/// Integral of `Φ0` over the disc of area `h²` about its center.
fn laplace_disc_self(h: f64) -> f64 {
    let rho = h / PI.sqrt();
    0.25 * rho * rho * (1.0 - 2.0 * rho.ln())
}

/// `Re(Φ − Φ0)` and its `x`-gradient at separation `d`.
fn smooth_part(k: f64, d: Point) -> (f64, Point) {
    let r = d[0].hypot(d[1]);
    if r < 1e-12 {
        return ((-k.ln() / (2.0 * PI) + c2().re), [0.0, 0.0]);
    }
    let b = cyl_bessel(k * r).expect("positive argument");
    let val = -0.25 * b.y0 + r.ln() / (2.0 * PI);
    // d/dr: (k/4) Y1(kr) − ... ; ∇_x Re Φ = (k/4) Y1 (x−y)/r, ∇_x Φ0 = −(x−y)/(2π r²)
    let g = 0.25 * k * b.y1 / r + 1.0 / (2.0 * PI * r * r);
    (val, [g * d[0], g * d[1]])
}

const NEAR: f64 = 1.5;
const SUB: usize = 4;

/// Approximation of `∫_cell K(x, y) dy` and its `x`-gradient for a target at
/// offset `d = x − y_c` (`self_cell` selects the same-cell rule).
fn cell_integral(kernel: VolumeKernel, d: Point, h: f64, self_cell: bool) -> (C, [C; 2]) {
    let r = d[0].hypot(d[1]);
    let h2 = h * h;
    match kernel {
        VolumeKernel::Laplace => {
            if self_cell {
                (C::new(laplace_disc_self(h), 0.0), [C::new(0.0, 0.0); 2])
            } else if r < NEAR * h {
                let (v, g) = laplace_square(d, h);
                (C::new(v, 0.0), [C::new(g[0], 0.0), C::new(g[1], 0.0)])
            } else {
                let g = -1.0 / (2.0 * PI * r * r);
                (
                    C::new(-r.ln() / (2.0 * PI) * h2, 0.0),
                    [C::new(g * d[0] * h2, 0.0), C::new(g * d[1] * h2, 0.0)],
                )
            }
        }
        VolumeKernel::Helmholtz(k) => {
            let b = cyl_bessel(k * r).ok();
            // imaginary part: point sample of J0(kr)/4
            let (im, im_g) = match b {
                Some(b) if r > 0.0 => (0.25 * b.j0 * h2, -0.25 * k * b.j1 / r * h2),
                _ => (0.25 * h2, 0.0),
            };
            let im_grad = [im_g * d[0], im_g * d[1]];
            let (re, re_grad) = if self_cell {
                (
                    laplace_disc_self(h) + (-k.ln() / (2.0 * PI) + c2().re) * h2,
                    [0.0, 0.0],
                )
            } else if r < NEAR * h {
                let (v0, g0) = laplace_square(d, h);
                let (mut v1, mut g1) = (0.0, [0.0, 0.0]);
                let hs = h / SUB as f64;
                for a in 0..SUB {
                    for c in 0..SUB {
                        let off = [
                            -0.5 * h + (a as f64 + 0.5) * hs,
                            -0.5 * h + (c as f64 + 0.5) * hs,
                        ];
                        let (sv, sg) = smooth_part(k, [d[0] - off[0], d[1] - off[1]]);
                        v1 += sv;
                        g1[0] += sg[0];
                        g1[1] += sg[1];
                    }
                }
                let w = hs * hs;
                (v0 + w * v1, [g0[0] + w * g1[0], g0[1] + w * g1[1]])
            } else {
                let b = b.expect("positive argument");
                let g = 0.25 * k * b.y1 / r * h2;
                (-0.25 * b.y0 * h2, [g * d[0], g * d[1]])
            };
            (
                C::new(re, im),
                [
                    C::new(re_grad[0], im_grad[0]),
                    C::new(re_grad[1], im_grad[1]),
                ],
            )
        }
    }
}

// ---------------------------------------------------------------------------
// dense assembly

/// Where a volume potential is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum VolumeTargets<'a> {
    /// The cell centers of the mesh itself.
    SelfCells,
    Points(&'a [Point]),
}

/// Dense matrix mapping cell values `φ` to `(𝒢_V φ)` at the targets.
#[derive(Debug, Clone)]
pub struct VolumeOperatorMatrix {
    pub entries: DMatrix<C>,
    pub kernel: VolumeKernel,
}

/// Degenerate distance between an external target and a cell center.
pub const DEGENERATE_DISTANCE: f64 = 1e-14;

fn target_rows<F>(
    kernel: VolumeKernel,
    mesh: &VolumeMesh,
    v: &MediumField,
    targets: VolumeTargets,
    pick: F,
) -> Result<DMatrix<C>>
where
    F: Fn((C, [C; 2]), usize) -> C + Sync,
{
    kernel.check()?;
    check_shapes(mesh, v)?;
    let (pts, is_self): (Vec<Point>, bool) = match targets {
        VolumeTargets::SelfCells => (mesh.cell_centers.clone(), true),
        VolumeTargets::Points(p) => (p.to_vec(), false),
    };
    let nc = mesh.len();
    let h = mesh.h;
    let rows: Vec<Result<Vec<C>>> = pts
        .par_iter()
        .enumerate()
        .map(|(t, &x)| {
            let mut row = Vec::with_capacity(nc);
            for c in 0..nc {
                let y = mesh.cell_centers[c];
                let d = [x[0] - y[0], x[1] - y[1]];
                let same = is_self && t == c;
                if !same && d[0].hypot(d[1]) < DEGENERATE_DISTANCE {
                    return Err(ScatterError::InvalidInput(format!(
                        "target {t} coincides with the center of cell {c}"
                    )));
                }
                row.push(pick(cell_integral(kernel, d, h, same), t) * v.values[c]);
            }
            Ok(row)
        })
        .collect();
    let mut m = DMatrix::zeros(pts.len(), nc);
    for (t, row) in rows.into_iter().enumerate() {
        let row = row?;
        for c in 0..nc {
            m[(t, c)] = row[c];
        }
    }
    Ok(m)
}

/// Dense volume-potential matrix (the contrast is folded into the columns).
pub fn assemble_volume(
    kernel: VolumeKernel,
    mesh: &VolumeMesh,
    v: &MediumField,
    targets: VolumeTargets,
) -> Result<VolumeOperatorMatrix> {
    Ok(VolumeOperatorMatrix {
        entries: target_rows(kernel, mesh, v, targets, |e, _| e.0)?,
        kernel,
    })
}

/// Matrices mapping cell values to `∂_x 𝒢_V φ` and `∂_y 𝒢_V φ` at `points`.
pub fn assemble_volume_gradient(
    kernel: VolumeKernel,
    mesh: &VolumeMesh,
    v: &MediumField,
    points: &[Point],
) -> Result<[DMatrix<C>; 2]> {
    let pts = VolumeTargets::Points(points);
    Ok([
        target_rows(kernel, mesh, v, pts, |e, _| e.1[0])?,
        target_rows(kernel, mesh, v, pts, |e, _| e.1[1])?,
    ])
}

/// Matrices mapping cell values to `G_V φ` and `∂_ν G_V φ` at the boundary nodes.
pub fn trace_and_normal_trace(
    kernel: VolumeKernel,
    mesh: &VolumeMesh,
    v: &MediumField,
    boundary: &BoundaryMesh,
) -> Result<(DMatrix<C>, DMatrix<C>)> {
    let pts = VolumeTargets::Points(&boundary.nodes);
    let g = target_rows(kernel, mesh, v, pts, |e, _| e.0)?;
    let dg = target_rows(kernel, mesh, v, pts, |e, t| {
        let nu = boundary.normals[t];
        e.1[0] * nu[0] + e.1[1] * nu[1]
    })?;
    Ok((g, dg))
}

/// `U_V φ = Σ_c V_c φ_c h²`.
pub fn u_v_functional(mesh: &VolumeMesh, v: &MediumField, phi: &[C]) -> Result<C> {
    check_shapes(mesh, v)?;
    if phi.len() != mesh.len() {
        return Err(ScatterError::InvalidInput(format!(
            "φ has {} values for {} cells",
            phi.len(),
            mesh.len()
        )));
    }
    Ok(v.values.iter().zip(phi).map(|(a, b)| a * b).sum::<C>() * mesh.cell_area)
}

// ---------------------------------------------------------------------------
// FFT convolution on the lattice

fn fft_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Fast application of `φ ↦ 𝒢_V φ` at the cell centers through a zero-padded
/// 2D FFT of the lattice-Toeplitz kernel.
pub struct VolumeConvolution {
    nx: usize,
    ny: usize,
    /// Grid position `(ix, iy)` of every cell.
    pos: Vec<(usize, usize)>,
    kernel_hat: Vec<C>,
    v: Vec<C>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for VolumeConvolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VolumeConvolution")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("cells", &self.pos.len())
            .finish()
    }
}

fn fft_rows(data: &mut [C], nx: usize, plan: &Arc<dyn Fft<f64>>) {
    data.par_chunks_mut(nx).for_each(|row| plan.process(row));
}

fn fft_cols(data: &mut [C], nx: usize, ny: usize, plan: &Arc<dyn Fft<f64>>) {
    // transpose, transform rows, transpose back
    let mut t = vec![C::new(0.0, 0.0); nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            t[ix * ny + iy] = data[iy * nx + ix];
        }
    }
    t.par_chunks_mut(ny).for_each(|col| plan.process(col));
    for iy in 0..ny {
        for ix in 0..nx {
            data[iy * nx + ix] = t[ix * ny + iy];
        }
    }
}

impl VolumeConvolution {
    pub fn new(kernel: VolumeKernel, mesh: &VolumeMesh, v: &MediumField) -> Result<Self> {
        kernel.check()?;
        check_shapes(mesh, v)?;
        let h = mesh.h;
        let ([i0, i1], [j0, j1]) = mesh.lattice_bounds().unwrap_or(([0, 0], [0, 0]));
        let (lx, ly) = ((i1 - i0 + 1) as usize, (j1 - j0 + 1) as usize);
        let (nx, ny) = (fft_size(2 * lx - 1), fft_size(2 * ly - 1));
        let pos = mesh
            .lattice
            .iter()
            .map(|l| ((l[0] - i0) as usize, (l[1] - j0) as usize))
            .collect();
        // kernel table indexed by lattice offset, wrapped into the padded grid
        let offsets: Vec<(i64, i64)> = (-(ly as i64 - 1)..ly as i64)
            .flat_map(|dj| (-(lx as i64 - 1)..lx as i64).map(move |di| (di, dj)))
            .collect();
        let vals: Vec<C> = offsets
            .par_iter()
            .map(|&(di, dj)| {
                let d = [di as f64 * h, dj as f64 * h];
                cell_integral(kernel, d, h, di == 0 && dj == 0).0
            })
            .collect();
        let mut kernel_hat = vec![C::new(0.0, 0.0); nx * ny];
        for (&(di, dj), &val) in offsets.iter().zip(&vals) {
            let ix = di.rem_euclid(nx as i64) as usize;
            let iy = dj.rem_euclid(ny as i64) as usize;
            kernel_hat[iy * nx + ix] = val;
        }
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(nx);
        let inv_x = planner.plan_fft_inverse(nx);
        let fwd_y = planner.plan_fft_forward(ny);
        let inv_y = planner.plan_fft_inverse(ny);
        fft_rows(&mut kernel_hat, nx, &fwd_x);
        fft_cols(&mut kernel_hat, nx, ny, &fwd_y);
        let scale = 1.0 / (nx * ny) as f64;
        for k in kernel_hat.iter_mut() {
            *k *= scale;
        }
        Ok(VolumeConvolution {
            nx,
            ny,
            pos,
            kernel_hat,
            v: v.values.clone(),
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
        })
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// `(𝒢_V φ)` at every cell center.
    pub fn apply(&self, phi: &[C]) -> Vec<C> {
        assert_eq!(phi.len(), self.pos.len(), "cell count mismatch");
        if self.pos.is_empty() {
            return Vec::new();
        }
        let (nx, ny) = (self.nx, self.ny);
        let mut grid = vec![C::new(0.0, 0.0); nx * ny];
        for (c, &(ix, iy)) in self.pos.iter().enumerate() {
            grid[iy * nx + ix] = self.v[c] * phi[c];
        }
        fft_rows(&mut grid, nx, &self.fwd_x);
        fft_cols(&mut grid, nx, ny, &self.fwd_y);
        grid.par_iter_mut()
            .zip(self.kernel_hat.par_iter())
            .for_each(|(g, k)| *g *= k);
        fft_cols(&mut grid, nx, ny, &self.inv_y);
        fft_rows(&mut grid, nx, &self.inv_x);
        self.pos
            .iter()
            .map(|&(ix, iy)| grid[iy * nx + ix])
            .collect()
    }
}
