//! Forward scattering by a sound-soft or sound-hard obstacle `D` embedded in
//! an inhomogeneous medium with contrast `V` supported in `Ω`.
//!
//! The unknowns are the total field at the volume cells and a density on
//! `∂D`. For each wavenumber the boundary block is factorised once. The cell
//! unknowns are then found by restarted GMRES on the Schur complement, with
//! the volume potential applied by FFT convolution:
//!
//! ```text
//! u − k² G_V u − B A⁻¹(r − k² T_V u) = u^i
//! ```
//!
//! where `A` is the boundary operator of the chosen formulation, `B` maps
//! densities to cells through the representation and `T_V` is the trace (or
//! normal trace) of the volume potential on `∂D`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::boundary_ops::{
    assemble_aux, assemble_helmholtz, far_field_row, potential_gradient_matrix, potential_matrix,
    AuxKind, FarFieldKind, HelmholtzKind, NearField, PotentialKernel, PotentialKind, Wavenumber,
};
use crate::error::{Result, ScatterError};
use crate::geometry::{
    build_volume_mesh, discretize_boundary, BoundaryCurve, BoundaryMesh, CurveClassifier, Point,
    VolumeMesh,
};
use crate::specfun::{bessel_jn_seq, bessel_yn_seq};
use crate::volume_ops::{
    assemble_volume, assemble_volume_gradient, trace_and_normal_trace, MediumField,
    VolumeConvolution, VolumeKernel, VolumeTargets,
};

type C = Complex64;

const I: C = C::new(0.0, 1.0);
const ZERO: C = C::new(0.0, 0.0);

/// Relative residual every accepted solution must reach.
pub const RESIDUAL_BOUND: f64 = 1e-10;
/// Below this wavenumber the automatic policy picks the `ln k`-stable soft formulation.
pub const LOGK_THRESHOLD: f64 = 0.2;
/// Plain sound-hard systems above this condition number are reported as resonant.
pub const RESONANCE_CONDITION: f64 = 1e8;
/// Any boundary block above this condition number is rejected.
pub const MAX_CONDITION: f64 = 1e12;

const CELL_CHUNK: usize = 2048;

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Soft,
    Hard,
    None,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = ScatterError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(BoundaryCondition::Soft),
            "hard" => Ok(BoundaryCondition::Hard),
            "none" => Ok(BoundaryCondition::None),
            other => Err(ScatterError::InvalidInput(format!(
                "unknown boundary condition '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub curve: BoundaryCurve,
    pub bc: BoundaryCondition,
}

/// Contrast `V` on the medium support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContrastSpec {
    Constant {
        re: f64,
        #[serde(default)]
        im: f64,
    },
    /// Per-cell values, CSV rows `cx, cy, re, im`.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub curve: BoundaryCurve,
    pub contrast: ContrastSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererConfig {
    #[serde(default)]
    pub obstacle: Option<ObstacleSpec>,
    #[serde(default)]
    pub medium: Option<MediumSpec>,
    /// Radius of the ball `B_R`; defaults to 1.5 times the largest circumradius.
    #[serde(default)]
    pub radius: Option<f64>,
}

impl ScattererConfig {
    /// Kite obstacle inside the rounded square with constant contrast `q`.
    pub fn benchmark(bc: BoundaryCondition, q: f64) -> Self {
        ScattererConfig {
            obstacle: Some(ObstacleSpec {
                curve: BoundaryCurve::kite(),
                bc,
            }),
            medium: Some(MediumSpec {
                curve: BoundaryCurve::rounded_square(),
                contrast: ContrastSpec::Constant { re: q, im: 0.0 },
            }),
            radius: None,
        }
    }

    pub fn obstacle_only(curve: BoundaryCurve, bc: BoundaryCondition) -> Self {
        ScattererConfig {
            obstacle: Some(ObstacleSpec { curve, bc }),
            medium: None,
            radius: None,
        }
    }

    pub fn medium_only(curve: BoundaryCurve, q: C) -> Self {
        ScattererConfig {
            obstacle: None,
            medium: Some(MediumSpec {
                curve,
                contrast: ContrastSpec::Constant { re: q.re, im: q.im },
            }),
            radius: None,
        }
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.obstacle
            .as_ref()
            .map_or(BoundaryCondition::None, |o| o.bc)
    }

    /// `R`, explicit or 1.5 times the largest circumradius (1 in free space).
    pub fn eval_radius(&self) -> f64 {
        if let Some(r) = self.radius {
            return r;
        }
        let rc = self
            .obstacle
            .iter()
            .map(|o| o.curve.circumradius())
            .chain(self.medium.iter().map(|m| m.curve.circumradius()))
            .fold(0.0, f64::max);
        if rc > 0.0 {
            1.5 * rc
        } else {
            1.0
        }
    }
}

/// Discretisation parameters shared by all solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    /// Nyström nodes on `∂D` (even).
    pub n_boundary: usize,
    /// Volume cell size.
    pub h: f64,
    /// Largest density upsampling factor for cells close to `∂D`.
    pub max_refine: usize,
    /// GMRES tolerance on the relative residual.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization {
            n_boundary: 256,
            h: 0.05,
            max_refine: 32,
            tol: 1e-12,
            restart: 200,
            max_iter: 5000,
        }
    }
}

// ---------------------------------------------------------------------------
// discretised problem

/// Meshes and contrast for one configuration, reused across wavenumbers.
#[derive(Debug, Clone)]
pub struct ForwardProblem {
    pub config: ScattererConfig,
    pub disc: Discretization,
    /// `∂D` nodes when the obstacle is soft or hard.
    pub boundary: Option<BoundaryMesh>,
    pub volume: VolumeMesh,
    pub medium: MediumField,
    pub radius: f64,
    obstacle_cls: Option<CurveClassifier>,
}

impl ForwardProblem {
    pub fn new(config: &ScattererConfig, disc: &Discretization) -> Result<Self> {
        let bc = config.bc();
        if bc == BoundaryCondition::None && config.obstacle.is_some() && config.medium.is_none() {
            return Err(ScatterError::InvalidInput(
                "an obstacle without boundary condition needs a medium".into(),
            ));
        }
        let radius = config.eval_radius();
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(ScatterError::InvalidInput(format!(
                "radius must be positive, got {radius}"
            )));
        }
        let obstacle = config
            .obstacle
            .as_ref()
            .filter(|o| o.bc != BoundaryCondition::None);
        for (name, curve) in obstacle
            .map(|o| ("obstacle", &o.curve))
            .into_iter()
            .chain(config.medium.as_ref().map(|m| ("medium", &m.curve)))
        {
            let rc = curve.circumradius();
            if rc >= radius {
                return Err(ScatterError::Geometry(format!(
                    "{name} (circumradius {rc}) is not inside the ball of radius {radius}"
                )));
            }
        }
        let boundary = obstacle
            .map(|o| discretize_boundary(&o.curve, disc.n_boundary))
            .transpose()?;
        let (volume, medium) = match &config.medium {
            Some(m) => {
                let mesh = build_volume_mesh(&m.curve, obstacle.map(|o| &o.curve), disc.h)?;
                let v = match &m.contrast {
                    ContrastSpec::Constant { re, im } => {
                        MediumField::constant(&mesh, C::new(*re, *im))?
                    }
                    ContrastSpec::File { path } => MediumField::from_csv(&mesh, path)?,
                };
                (mesh, v)
            }
            None => {
                let mesh = VolumeMesh::empty(disc.h);
                let v = MediumField::zero(&mesh);
                (mesh, v)
            }
        };
        Ok(ForwardProblem {
            config: config.clone(),
            disc: disc.clone(),
            obstacle_cls: obstacle.map(|o| CurveClassifier::new(&o.curve)),
            boundary,
            volume,
            medium,
            radius,
        })
    }

    pub fn bc(&self) -> BoundaryCondition {
        if self.boundary.is_some() {
            self.config.bc()
        } else {
            BoundaryCondition::None
        }
    }

    pub fn n_cells(&self) -> usize {
        self.volume.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.boundary.as_ref().map_or(0, |b| b.len())
    }

    /// True when there is nothing to scatter off.
    pub fn is_free_space(&self) -> bool {
        self.boundary.is_none() && self.medium.is_zero()
    }

    fn check_outside_obstacle(&self, points: &[Point]) -> Result<()> {
        if let Some(cls) = &self.obstacle_cls {
            for (i, &p) in points.iter().enumerate() {
                if cls.contains(p)? {
                    return Err(ScatterError::InvalidInput(format!(
                        "point {i} ({}, {}) lies inside the obstacle",
                        p[0], p[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// formulations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// `u = u^i + k²𝒢_V u + (𝒦 − i𝒮)ψ`.
    SoftCombined,
    /// `u = u^i + k²𝒢_V u + (𝒦 + 𝒮∘(W − 2π/ln k))ψ`.
    SoftLogk,
    /// `u = u^i + k²𝒢_V u + (𝒮 + ik³𝒦∘S_i²)φ`, `S_i` the single layer at `k = i`.
    HardRegularized,
    /// `u = u^i + k²𝒢_V u + 𝒮φ`.
    HardPlain,
}

impl Formulation {
    pub fn bc(self) -> BoundaryCondition {
        match self {
            Formulation::SoftCombined | Formulation::SoftLogk => BoundaryCondition::Soft,
            Formulation::HardRegularized | Formulation::HardPlain => BoundaryCondition::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormulationPolicy {
    /// Soft: `SoftLogk` below [`LOGK_THRESHOLD`], `SoftCombined` above. Hard: `HardRegularized`.
    #[default]
    Auto,
    Fixed(Formulation),
}

impl FormulationPolicy {
    pub fn select(self, bc: BoundaryCondition, k: f64) -> Result<Option<Formulation>> {
        let f = match (self, bc) {
            (_, BoundaryCondition::None) => return Ok(None),
            (FormulationPolicy::Auto, BoundaryCondition::Soft) if k < LOGK_THRESHOLD => {
                Formulation::SoftLogk
            }
            (FormulationPolicy::Auto, BoundaryCondition::Soft) => Formulation::SoftCombined,
            (FormulationPolicy::Auto, BoundaryCondition::Hard) => Formulation::HardRegularized,
            (FormulationPolicy::Fixed(f), bc) => {
                if f.bc() != bc {
                    return Err(ScatterError::Formulation(format!(
                        "{f:?} does not apply to a {bc:?} obstacle"
                    )));
                }
                f
            }
        };
        if f == Formulation::SoftLogk && k.ln().abs() <= 0.1 {
            return Err(ScatterError::Formulation(format!(
                "|ln k| = {:.3} ≤ 0.1 at k = {k}; use the combined soft formulation",
                k.ln().abs()
            )));
        }
        Ok(Some(f))
    }
}

/// Density transform inside one representation term.
#[derive(Debug, Clone)]
enum Transform {
    Scale(C),
    Matrix(DMatrix<C>),
}

impl Transform {
    fn apply(&self, x: &DVector<C>) -> DVector<C> {
        match self {
            Transform::Scale(s) => x * *s,
            Transform::Matrix(m) => m * x,
        }
    }

    fn right_mul(&self, p: DMatrix<C>) -> DMatrix<C> {
        match self {
            Transform::Scale(s) => p * *s,
            Transform::Matrix(m) => p * m,
        }
    }
}

/// `u^s_∂D = Σ potential_kind(T · density)`.
#[derive(Debug, Clone)]
struct Representation {
    terms: Vec<(PotentialKind, Transform)>,
}

fn representation(mesh: &BoundaryMesh, k: f64, f: Formulation) -> Result<Representation> {
    let terms = match f {
        Formulation::SoftCombined => vec![
            (PotentialKind::Double, Transform::Scale(C::new(1.0, 0.0))),
            (PotentialKind::Single, Transform::Scale(-I)),
        ],
        Formulation::SoftLogk => {
            let mut w = assemble_aux(AuxKind::W, mesh)?.entries;
            let shift = -2.0 * PI / k.ln();
            for i in 0..w.nrows() {
                w[(i, i)] += shift;
            }
            vec![
                (PotentialKind::Double, Transform::Scale(C::new(1.0, 0.0))),
                (PotentialKind::Single, Transform::Matrix(w)),
            ]
        }
        Formulation::HardRegularized => {
            let si = assemble_helmholtz(HelmholtzKind::S, Wavenumber::ImagUnit, mesh)?.entries;
            let si2 = &si * &si * (I * k.powi(3));
            vec![
                (PotentialKind::Single, Transform::Scale(C::new(1.0, 0.0))),
                (PotentialKind::Double, Transform::Matrix(si2)),
            ]
        }
        Formulation::HardPlain => {
            vec![(PotentialKind::Single, Transform::Scale(C::new(1.0, 0.0)))]
        }
    };
    Ok(Representation { terms })
}

/// Boundary operator of a formulation (the equation on `∂D`).
fn boundary_operator(mesh: &BoundaryMesh, k: f64, f: Formulation) -> Result<DMatrix<C>> {
    let n = mesh.len();
    let kw = Wavenumber::Real(k);
    let eye = DMatrix::<C>::identity(n, n);
    Ok(match f {
        Formulation::SoftCombined => {
            let kk = assemble_helmholtz(HelmholtzKind::K, kw, mesh)?.entries;
            let s = assemble_helmholtz(HelmholtzKind::S, kw, mesh)?.entries;
            eye * C::new(0.5, 0.0) + kk - s * I
        }
        Formulation::SoftLogk => {
            let kk = assemble_helmholtz(HelmholtzKind::K, kw, mesh)?.entries;
            let s = assemble_helmholtz(HelmholtzKind::S, kw, mesh)?.entries;
            let Transform::Matrix(w) = &representation(mesh, k, f)?.terms[1].1 else {
                unreachable!()
            };
            eye * C::new(0.5, 0.0) + kk + s * w
        }
        Formulation::HardRegularized => {
            let kp = assemble_helmholtz(HelmholtzKind::Kp, kw, mesh)?.entries;
            let t = assemble_helmholtz(HelmholtzKind::T, kw, mesh)?.entries;
            let si = assemble_helmholtz(HelmholtzKind::S, Wavenumber::ImagUnit, mesh)?.entries;
            eye * C::new(-0.5, 0.0) + kp + t * (&si * &si) * (I * k.powi(3))
        }
        Formulation::HardPlain => {
            let kp = assemble_helmholtz(HelmholtzKind::Kp, kw, mesh)?.entries;
            eye * C::new(-0.5, 0.0) + kp
        }
    })
}

/// 2-norm condition number of a formulation's boundary operator.
pub fn boundary_condition_number(mesh: &BoundaryMesh, k: f64, f: Formulation) -> Result<f64> {
    check_wavenumber(k)?;
    Ok(condition_number(&boundary_operator(mesh, k, f)?))
}

fn condition_number(a: &DMatrix<C>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_wavenumber(k: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(ScatterError::InvalidInput(format!(
            "wavenumber must be positive, got {k}"
        )));
    }
    Ok(())
}

fn check_direction(d: Point) -> Result<()> {
    let n = d[0].hypot(d[1]);
    if (n - 1.0).abs() > 1e-12 {
        return Err(ScatterError::InvalidInput(format!(
            "direction must be a unit vector, |d| = {n}"
        )));
    }
    Ok(())
}

/// Unit vector at `deg` degrees from the positive x-axis.
pub fn unit_from_deg(deg: f64) -> Point {
    let (s, c) = deg.to_radians().sin_cos();
    [c, s]
}

fn incident(k: f64, d: Point, x: Point) -> C {
    C::from_polar(1.0, k * (d[0] * x[0] + d[1] * x[1]))
}

// ---------------------------------------------------------------------------
// GMRES

#[derive(Debug, Clone)]
pub(crate) struct GmresOutcome {
    pub x: Vec<C>,
    pub iterations: usize,
}

fn norm(v: &[C]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted GMRES (modified Gram–Schmidt, Givens rotations). `tol` applies
/// to the true relative residual, recomputed at every restart.
pub(crate) fn gmres<F>(
    op: F,
    b: &[C],
    x0: Vec<C>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome>
where
    F: Fn(&[C]) -> Vec<C>,
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![ZERO; n],
            iterations: 0,
        });
    }
    let restart = restart.max(1);
    let mut x = x0;
    let mut total = 0;
    loop {
        let ax = op(&x);
        let r: Vec<C> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= tol {
            return Ok(GmresOutcome {
                x,
                iterations: total,
            });
        }
        if total >= max_iter {
            return Err(ScatterError::NoConvergence {
                iterations: total,
                residual: rel,
            });
        }
        let mut basis: Vec<Vec<C>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<C>> = Vec::new();
        let mut rot: Vec<(f64, C)> = Vec::new();
        let mut g = vec![C::new(beta, 0.0)];
        for j in 0..restart {
            let mut w = op(&basis[j]);
            total += 1;
            let mut col = vec![ZERO; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij: C = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
                col[i] = hij;
            }
            let hnext = norm(&w);
            col[j + 1] = C::new(hnext, 0.0);
            for (i, &(c, s)) in rot.iter().enumerate() {
                let t = c * col[i] + s * col[i + 1];
                col[i + 1] = -s.conj() * col[i] + c * col[i + 1];
                col[i] = t;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let rr = a.norm().hypot(bb.norm());
            let (c, s) = if a.norm() == 0.0 {
                (0.0, C::new(1.0, 0.0))
            } else {
                (a.norm() / rr, a / a.norm() * bb.conj() / rr)
            };
            col[j] = c * a + s * bb;
            col[j + 1] = ZERO;
            let gj = g[j];
            g.push(-s.conj() * gj);
            g[j] = c * gj;
            rot.push((c, s));
            hess.push(col);
            let est = g[j + 1].norm() / bnorm;
            if est <= 0.5 * tol || total >= max_iter || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // back substitution on the triangular factor
        let m = hess.len();
        let mut y = vec![ZERO; m];
        for i in (0..m).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().skip(i + 1) {
                s -= hess[l][i] * yl;
            }
            y[i] = s / hess[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            for (xk, vk) in x.iter_mut().zip(v) {
                *xk += yi * vk;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// solver

/// One solved `(k, d)` sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardSolution {
    pub k: f64,
    pub d: Point,
    /// Total field at the volume cells.
    pub u_cells: Vec<C>,
    /// Boundary density (empty without an obstacle).
    pub density: Vec<C>,
    pub formulation: Option<Formulation>,
    /// Relative residual of the full coupled system.
    pub residual: f64,
    pub iterations: usize,
}

struct BoundaryBlock {
    formulation: Formulation,
    a: DMatrix<C>,
    lu: nalgebra::LU<C, nalgebra::Dyn, nalgebra::Dyn>,
    rep: Representation,
    condition: f64,
}

struct Coupling {
    /// Cells × nodes: density to representation at the cell centers.
    to_cells: DMatrix<C>,
    /// Nodes × cells: `k² G_V` (soft) or `k² ∂ν G_V` (hard) on `∂D`.
    trace: DMatrix<C>,
}

/// Operators for one wavenumber; solves any number of incident directions.
pub struct FrequencySolver<'a> {
    problem: &'a ForwardProblem,
    k: f64,
    block: Option<BoundaryBlock>,
    conv: Option<VolumeConvolution>,
    coupling: Option<Coupling>,
}

impl<'a> FrequencySolver<'a> {
    pub fn new(problem: &'a ForwardProblem, k: f64, policy: FormulationPolicy) -> Result<Self> {
        check_wavenumber(k)?;
        let formulation = policy.select(problem.bc(), k)?;
        let block = match (&problem.boundary, formulation) {
            (Some(mesh), Some(f)) => {
                let a = boundary_operator(mesh, k, f)?;
                let condition = condition_number(&a);
                if f == Formulation::HardPlain && condition > RESONANCE_CONDITION {
                    return Err(ScatterError::Resonance { k, condition });
                }
                if !(condition <= MAX_CONDITION) {
                    return Err(ScatterError::Conditioning {
                        context: format!("{f:?} boundary block at k = {k}"),
                        condition,
                    });
                }
                Some(BoundaryBlock {
                    formulation: f,
                    lu: a.clone().lu(),
                    a,
                    rep: representation(mesh, k, f)?,
                    condition,
                })
            }
            _ => None,
        };
        let has_medium = !problem.volume.is_empty() && !problem.medium.is_zero();
        let conv = if has_medium {
            Some(VolumeConvolution::new(
                VolumeKernel::Helmholtz(k),
                &problem.volume,
                &problem.medium,
            )?)
        } else {
            None
        };
        let coupling = match (&block, &problem.boundary) {
            (Some(b), Some(mesh)) if !problem.volume.is_empty() => {
                let to_cells = representation_matrix(
                    mesh,
                    k,
                    &b.rep,
                    &problem.volume.cell_centers,
                    problem.disc.max_refine,
                )?;
                let trace = if has_medium {
                    let kern = VolumeKernel::Helmholtz(k);
                    let m = match b.formulation.bc() {
                        BoundaryCondition::Hard => {
                            trace_and_normal_trace(kern, &problem.volume, &problem.medium, mesh)?.1
                        }
                        _ => {
                            let pts = VolumeTargets::Points(&mesh.nodes);
                            assemble_volume(kern, &problem.volume, &problem.medium, pts)?.entries
                        }
                    };
                    m * C::new(k * k, 0.0)
                } else {
                    DMatrix::zeros(mesh.len(), problem.volume.len())
                };
                Some(Coupling { to_cells, trace })
            }
            _ => None,
        };
        Ok(FrequencySolver {
            problem,
            k,
            block,
            conv,
            coupling,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn formulation(&self) -> Option<Formulation> {
        self.block.as_ref().map(|b| b.formulation)
    }

    /// 2-norm condition number of the boundary block.
    pub fn boundary_condition(&self) -> Option<f64> {
        self.block.as_ref().map(|b| b.condition)
    }

    fn lu_solve(&self, rhs: &DVector<C>) -> Result<DVector<C>> {
        let b = self.block.as_ref().expect("boundary block");
        b.lu.solve(rhs).ok_or_else(|| ScatterError::Conditioning {
            context: "boundary LU".into(),
            condition: f64::INFINITY,
        })
    }

    /// `u − k² G_V u` at the cells.
    fn volume_part(&self, u: &[C]) -> Vec<C> {
        match &self.conv {
            Some(conv) => {
                let g = conv.apply(u);
                let k2 = self.k * self.k;
                u.iter().zip(&g).map(|(a, b)| a - b * k2).collect()
            }
            None => u.to_vec(),
        }
    }

    pub fn solve(&self, d: Point) -> Result<ForwardSolution> {
        check_direction(d)?;
        let p = self.problem;
        let k = self.k;
        let ui_cells: Vec<C> = p
            .volume
            .cell_centers
            .iter()
            .map(|&x| incident(k, d, x))
            .collect();
        let r_b: Option<DVector<C>> = match (&self.block, &p.boundary) {
            (Some(b), Some(mesh)) => Some(DVector::from_iterator(
                mesh.len(),
                (0..mesh.len()).map(|j| {
                    let x = mesh.nodes[j];
                    let ui = incident(k, d, x);
                    match b.formulation.bc() {
                        BoundaryCondition::Hard => {
                            let dn = d[0] * mesh.normals[j][0] + d[1] * mesh.normals[j][1];
                            -(I * k * dn * ui)
                        }
                        _ => -ui,
                    }
                }),
            )),
            _ => None,
        };
        let formulation = self.formulation();

        let (u_cells, iterations) = match (&r_b, &self.coupling) {
            (Some(rb), Some(cp)) => {
                let a_rb = self.lu_solve(rb)?;
                let lift = &cp.to_cells * &a_rb;
                let rhs: Vec<C> = ui_cells
                    .iter()
                    .zip(lift.iter())
                    .map(|(a, b)| a + b)
                    .collect();
                let op = |u: &[C]| -> Vec<C> {
                    let mut out = self.volume_part(u);
                    if self.conv.is_some() {
                        let t = &cp.trace * DVector::from_column_slice(u);
                        let y = self.lu_solve(&t).expect("factorised block");
                        let c = &cp.to_cells * y;
                        for (o, v) in out.iter_mut().zip(c.iter()) {
                            *o += v;
                        }
                    }
                    out
                };
                let g = gmres(
                    op,
                    &rhs,
                    rhs.clone(),
                    p.disc.tol,
                    p.disc.restart,
                    p.disc.max_iter,
                )?;
                (g.x, g.iterations)
            }
            (None, _) if self.conv.is_some() => {
                let op = |u: &[C]| self.volume_part(u);
                let g = gmres(
                    op,
                    &ui_cells,
                    ui_cells.clone(),
                    p.disc.tol,
                    p.disc.restart,
                    p.disc.max_iter,
                )?;
                (g.x, g.iterations)
            }
            _ => (ui_cells.clone(), 0),
        };

        let density = match (&r_b, &self.coupling) {
            (Some(rb), Some(cp)) => {
                let t = &cp.trace * DVector::from_column_slice(&u_cells);
                self.lu_solve(&(rb - t))?
            }
            (Some(rb), None) => self.lu_solve(rb)?,
            _ => DVector::zeros(0),
        };
        let u_cells = match (&self.coupling, self.conv.is_some()) {
            // V ≡ 0 on the mesh: the cells carry the representation only
            (Some(cp), false) => {
                let c = &cp.to_cells * &density;
                ui_cells.iter().zip(c.iter()).map(|(a, b)| a + b).collect()
            }
            _ => u_cells,
        };

        let residual = self.residual(&ui_cells, r_b.as_ref(), &u_cells, &density);
        if !(residual <= RESIDUAL_BOUND) {
            return Err(ScatterError::NoConvergence {
                iterations,
                residual,
            });
        }
        Ok(ForwardSolution {
            k,
            d,
            u_cells,
            density: density.as_slice().to_vec(),
            formulation,
            residual,
            iterations,
        })
    }

    /// Relative residual of the unreduced (cells + nodes) system.
    fn residual(
        &self,
        ui_cells: &[C],
        r_b: Option<&DVector<C>>,
        u: &[C],
        density: &DVector<C>,
    ) -> f64 {
        let mut num = 0.0;
        let mut den = norm(ui_cells).powi(2);
        let mut r1 = self.volume_part(u);
        if let Some(cp) = &self.coupling {
            let c = &cp.to_cells * density;
            for (o, v) in r1.iter_mut().zip(c.iter()) {
                *o -= v;
            }
        }
        for (a, b) in r1.iter().zip(ui_cells) {
            num += (a - b).norm_sqr();
        }
        if let (Some(rb), Some(b)) = (r_b, &self.block) {
            let mut r2 = &b.a * density - rb;
            if let Some(cp) = &self.coupling {
                r2 += &cp.trace * DVector::from_column_slice(u);
            }
            num += r2.norm_squared();
            den += rb.norm_squared();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Far-field pattern `u^∞(x̂)` of a solution.
    pub fn far_field(&self, sol: &ForwardSolution, xhats: &[Point]) -> Result<Vec<C>> {
        far_field_with(
            self.problem,
            self.block.as_ref().map(|b| &b.rep),
            sol,
            xhats,
        )
    }

    /// Total field at points of `B_R ∖ D̄` through the representation formula.
    pub fn total_field(&self, sol: &ForwardSolution, points: &[Point]) -> Result<Vec<C>> {
        self.check_solution(sol)?;
        let p = self.problem;
        p.check_outside_obstacle(points)?;
        let k = self.k;
        let mut u: Vec<C> = points.iter().map(|&x| incident(k, sol.d, x)).collect();
        if self.conv.is_some() {
            let g = assemble_volume(
                VolumeKernel::Helmholtz(k),
                &p.volume,
                &p.medium,
                VolumeTargets::Points(points),
            )?
            .entries;
            let v = g * DVector::from_column_slice(&sol.u_cells) * C::new(k * k, 0.0);
            for (o, x) in u.iter_mut().zip(v.iter()) {
                *o += x;
            }
        }
        if let (Some(b), Some(mesh)) = (&self.block, &p.boundary) {
            let m = representation_matrix(mesh, k, &b.rep, points, p.disc.max_refine)?;
            let v = m * DVector::from_column_slice(&sol.density);
            for (o, x) in u.iter_mut().zip(v.iter()) {
                *o += x;
            }
        }
        Ok(u)
    }

    /// `(∂_x u, ∂_y u)` at points at least two node spacings away from `∂D`.
    pub fn total_gradient(&self, sol: &ForwardSolution, points: &[Point]) -> Result<[Vec<C>; 2]> {
        self.check_solution(sol)?;
        let p = self.problem;
        p.check_outside_obstacle(points)?;
        let k = self.k;
        let mut gx = Vec::with_capacity(points.len());
        let mut gy = Vec::with_capacity(points.len());
        for &x in points {
            let ui = incident(k, sol.d, x) * I * k;
            gx.push(ui * sol.d[0]);
            gy.push(ui * sol.d[1]);
        }
        if self.conv.is_some() {
            let [mx, my] =
                assemble_volume_gradient(VolumeKernel::Helmholtz(k), &p.volume, &p.medium, points)?;
            let uc = DVector::from_column_slice(&sol.u_cells) * C::new(k * k, 0.0);
            add_into(&mut gx, &(mx * &uc));
            add_into(&mut gy, &(my * &uc));
        }
        if let (Some(b), Some(mesh)) = (&self.block, &p.boundary) {
            let dens = DVector::from_column_slice(&sol.density);
            for (kind, t) in &b.rep.terms {
                let td = t.apply(&dens);
                let [mx, my] =
                    potential_gradient_matrix(*kind, PotentialKernel::Helmholtz(k), mesh, points)?;
                add_into(&mut gx, &(mx * &td));
                add_into(&mut gy, &(my * &td));
            }
        }
        Ok([gx, gy])
    }

    fn check_solution(&self, sol: &ForwardSolution) -> Result<()> {
        if sol.k != self.k
            || sol.u_cells.len() != self.problem.n_cells()
            || sol.density.len() != self.block.as_ref().map_or(0, |_| self.problem.n_nodes())
        {
            return Err(ScatterError::InvalidInput(
                "solution does not belong to this solver".into(),
            ));
        }
        Ok(())
    }
}

fn add_into(acc: &mut [C], v: &DVector<C>) {
    for (a, b) in acc.iter_mut().zip(v.iter()) {
        *a += b;
    }
}

/// Targets × nodes matrix of the representation, assembled in row chunks.
fn representation_matrix(
    mesh: &BoundaryMesh,
    k: f64,
    rep: &Representation,
    targets: &[Point],
    max_refine: usize,
) -> Result<DMatrix<C>> {
    let n = mesh.len();
    let mut out = DMatrix::<C>::zeros(targets.len(), n);
    let near = NearField::Refined {
        max_factor: max_refine,
    };
    for (ci, chunk) in targets.chunks(CELL_CHUNK).enumerate() {
        let mut acc = DMatrix::<C>::zeros(chunk.len(), n);
        for (kind, t) in &rep.terms {
            let pm = potential_matrix(*kind, PotentialKernel::Helmholtz(k), mesh, chunk, near)?;
            acc += t.right_mul(pm);
        }
        out.rows_mut(ci * CELL_CHUNK, chunk.len()).copy_from(&acc);
    }
    Ok(out)
}

fn far_field_with(
    p: &ForwardProblem,
    rep: Option<&Representation>,
    sol: &ForwardSolution,
    xhats: &[Point],
) -> Result<Vec<C>> {
    let k = sol.k;
    for &x in xhats {
        check_direction(x)?;
    }
    let mut out = vec![ZERO; xhats.len()];
    if let (Some(rep), Some(mesh)) = (rep, &p.boundary) {
        let dens = DVector::from_column_slice(&sol.density);
        for (kind, t) in &rep.terms {
            let td = t.apply(&dens);
            let fk = match kind {
                PotentialKind::Single => FarFieldKind::Single,
                PotentialKind::Double => FarFieldKind::Double,
                other => return Err(ScatterError::Unsupported(format!("far field of {other:?}"))),
            };
            for (o, &x) in out.iter_mut().zip(xhats) {
                let row = far_field_row(fk, k, mesh, x)?;
                *o += row.iter().zip(td.iter()).map(|(a, b)| a * b).sum::<C>();
            }
        }
    }
    if !p.volume.is_empty() && !p.medium.is_zero() {
        let w = k * k * p.volume.cell_area;
        for (o, &x) in out.iter_mut().zip(xhats) {
            let s: C = p
                .volume
                .cell_centers
                .iter()
                .zip(&p.medium.values)
                .zip(&sol.u_cells)
                .map(|((y, v), u)| C::from_polar(1.0, -k * (x[0] * y[0] + x[1] * y[1])) * v * u)
                .sum();
            *o += s * w;
        }
    }
    Ok(out)
}

/// Far-field pattern of a stored solution (rebuilds the representation only).
pub fn far_field(
    problem: &ForwardProblem,
    sol: &ForwardSolution,
    xhats: &[Point],
) -> Result<Vec<C>> {
    if sol.u_cells.len() != problem.n_cells() {
        return Err(ScatterError::InvalidInput(
            "solution does not match the problem".into(),
        ));
    }
    let rep = match (&problem.boundary, sol.formulation) {
        (Some(mesh), Some(f)) => {
            if sol.density.len() != mesh.len() {
                return Err(ScatterError::InvalidInput(
                    "density does not match the boundary mesh".into(),
                ));
            }
            Some(representation(mesh, sol.k, f)?)
        }
        _ => None,
    };
    far_field_with(problem, rep.as_ref(), sol, xhats)
}

fn require_bc(problem: &ForwardProblem, bc: BoundaryCondition) -> Result<()> {
    if problem.bc() != bc {
        return Err(ScatterError::Formulation(format!(
            "configuration has a {:?} obstacle, not {bc:?}",
            problem.bc()
        )));
    }
    Ok(())
}

pub fn solve_soft(problem: &ForwardProblem, k: f64, d: Point) -> Result<ForwardSolution> {
    require_bc(problem, BoundaryCondition::Soft)?;
    FrequencySolver::new(
        problem,
        k,
        FormulationPolicy::Fixed(Formulation::SoftCombined),
    )?
    .solve(d)
}

pub fn solve_soft_logk(problem: &ForwardProblem, k: f64, d: Point) -> Result<ForwardSolution> {
    require_bc(problem, BoundaryCondition::Soft)?;
    FrequencySolver::new(problem, k, FormulationPolicy::Fixed(Formulation::SoftLogk))?.solve(d)
}

pub fn solve_hard(
    problem: &ForwardProblem,
    k: f64,
    d: Point,
    regularized: bool,
) -> Result<ForwardSolution> {
    require_bc(problem, BoundaryCondition::Hard)?;
    let f = if regularized {
        Formulation::HardRegularized
    } else {
        Formulation::HardPlain
    };
    FrequencySolver::new(problem, k, FormulationPolicy::Fixed(f))?.solve(d)
}

// ---------------------------------------------------------------------------
// energy flux

/// Both sides of `Im ∮_{|x|=R} u ∂ν ū ds = k² ∫ Im V |u|² dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxBalance {
    pub flux: f64,
    pub absorption: f64,
}

impl FluxBalance {
    pub fn relative_gap(&self) -> f64 {
        (self.flux - self.absorption).abs() / self.flux.abs().max(self.absorption.abs())
    }
}

/// Evaluates the flux identity on the circle of radius `problem.radius`.
pub fn flux_balance(solver: &FrequencySolver, sol: &ForwardSolution) -> Result<FluxBalance> {
    let p = solver.problem;
    let r = p.radius;
    let nq = 2 * ((solver.k * r).ceil() as usize + 48);
    let pts: Vec<Point> = (0..nq)
        .map(|j| {
            let (s, c) = (2.0 * PI * j as f64 / nq as f64).sin_cos();
            [r * c, r * s]
        })
        .collect();
    let u = solver.total_field(sol, &pts)?;
    let [gx, gy] = solver.total_gradient(sol, &pts)?;
    let ds = 2.0 * PI * r / nq as f64;
    let flux: f64 = (0..nq)
        .map(|j| {
            let nu = [pts[j][0] / r, pts[j][1] / r];
            let dn = gx[j] * nu[0] + gy[j] * nu[1];
            (u[j] * dn.conj()).im
        })
        .sum::<f64>()
        * ds;
    let absorption = solver.k.powi(2)
        * p.volume.cell_area
        * p.medium
            .values
            .iter()
            .zip(&sol.u_cells)
            .map(|(v, u)| v.im * u.norm_sqr())
            .sum::<f64>();
    Ok(FluxBalance { flux, absorption })
}

// ---------------------------------------------------------------------------
// disc oracle

/// Far field of a disc of radius `a` centred at the origin, from the
/// partial-wave series truncated at `⌈ka⌉ + 40`.
pub fn mie_disc_farfield(
    k: f64,
    a: f64,
    bc: BoundaryCondition,
    d: Point,
    xhats: &[Point],
) -> Result<Vec<C>> {
    check_wavenumber(k)?;
    check_direction(d)?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(ScatterError::InvalidInput(format!(
            "radius must be positive, got {a}"
        )));
    }
    let x = k * a;
    let n_max = x.ceil() as usize + 40;
    let j = bessel_jn_seq(n_max + 1, x)?;
    let y = bessel_yn_seq(n_max + 1, x)?;
    let coef: Vec<C> = (0..=n_max)
        .map(|n| {
            let (jn, yn) = match bc {
                BoundaryCondition::Soft => (j[n], y[n]),
                BoundaryCondition::Hard => {
                    if n == 0 {
                        (-j[1], -y[1])
                    } else {
                        let nf = n as f64;
                        (j[n - 1] - nf / x * j[n], y[n - 1] - nf / x * y[n])
                    }
                }
                BoundaryCondition::None => (0.0, 1.0),
            };
            if !yn.is_finite() {
                ZERO
            } else {
                -jn / C::new(jn, yn)
            }
        })
        .collect();
    let tail = coef[n_max].norm();
    if tail > 1e-14 {
        return Err(ScatterError::Truncation { n_max, tail });
    }
    let thd = d[1].atan2(d[0]);
    for &xh in xhats {
        check_direction(xh)?;
    }
    Ok(xhats
        .iter()
        .map(|xh| {
            let dt = xh[1].atan2(xh[0]) - thd;
            let s = coef[0]
                + coef[1..]
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * (2.0 * ((i + 1) as f64 * dt).cos()))
                    .sum::<C>();
            -4.0 * I * s
        })
        .collect())
}

// ---------------------------------------------------------------------------
// data sets

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub delta: f64,
    pub seed: u64,
}

/// Multi-frequency far-field data `u^∞(x̂_l, k_m, d_n)`, stored flat with `n`
/// outermost and `l` innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldTensor {
    pub angles_deg: Vec<f64>,
    pub wavenumbers: Vec<f64>,
    pub directions_deg: Vec<f64>,
    pub values: Vec<C>,
    pub noise: Option<NoiseRecord>,
    pub provenance: BTreeMap<String, String>,
}

impl FarFieldTensor {
    pub fn zeros(
        angles_deg: Vec<f64>,
        wavenumbers: Vec<f64>,
        directions_deg: Vec<f64>,
    ) -> Result<Self> {
        let len = angles_deg.len() * wavenumbers.len() * directions_deg.len();
        let t = FarFieldTensor {
            angles_deg,
            wavenumbers,
            directions_deg,
            values: vec![ZERO; len],
            noise: None,
            provenance: BTreeMap::new(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, m, n) = self.shape();
        if l == 0 || m == 0 || n == 0 {
            return Err(ScatterError::InvalidInput(
                "tensor axes must be nonempty".into(),
            ));
        }
        if self.values.len() != l * m * n {
            return Err(ScatterError::InvalidInput(format!(
                "tensor holds {} values for shape {l}×{m}×{n}",
                self.values.len()
            )));
        }
        if self
            .wavenumbers
            .iter()
            .any(|&k| !(k > 0.0) || !k.is_finite())
            || self.wavenumbers.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ScatterError::InvalidInput(
                "wavenumbers must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `(L, M, N)`: observation angles, wavenumbers, directions.
    pub fn shape(&self) -> (usize, usize, usize) {
        (
            self.angles_deg.len(),
            self.wavenumbers.len(),
            self.directions_deg.len(),
        )
    }

    pub fn index(&self, l: usize, m: usize, n: usize) -> usize {
        let (nl, nm, _) = self.shape();
        (n * nm + m) * nl + l
    }

    pub fn get(&self, l: usize, m: usize, n: usize) -> C {
        self.values[self.index(l, m, n)]
    }

    pub fn observation_dirs(&self) -> Vec<Point> {
        self.angles_deg.iter().map(|&a| unit_from_deg(a)).collect()
    }

    pub fn incident_dirs(&self) -> Vec<Point> {
        self.directions_deg
            .iter()
            .map(|&a| unit_from_deg(a))
            .collect()
    }

    /// Samples for fixed `(m, n)` over all observation angles.
    pub fn slice(&self, m: usize, n: usize) -> &[C] {
        let start = self.index(0, m, n);
        &self.values[start..start + self.angles_deg.len()]
    }

    /// Sub-tensor with the chosen incident directions, in the given order.
    pub fn select_directions(&self, dirs: &[usize]) -> Result<FarFieldTensor> {
        let nl = self.angles_deg.len();
        let nm = self.wavenumbers.len();
        let mut values = Vec::with_capacity(nl * nm * dirs.len());
        for &n in dirs {
            if n >= self.directions_deg.len() {
                return Err(ScatterError::InvalidInput(format!(
                    "direction index {n} out of range"
                )));
            }
            for m in 0..nm {
                values.extend_from_slice(self.slice(m, n));
            }
        }
        let t = FarFieldTensor {
            angles_deg: self.angles_deg.clone(),
            wavenumbers: self.wavenumbers.clone(),
            directions_deg: dirs.iter().map(|&n| self.directions_deg[n]).collect(),
            values,
            noise: self.noise,
            provenance: self.provenance.clone(),
        };
        t.validate()?;
        Ok(t)
    }
}

/// `L` equispaced observation angles `360·l/L` degrees.
pub fn equispaced_angles_deg(l: usize) -> Vec<f64> {
    (0..l).map(|i| 360.0 * i as f64 / l as f64).collect()
}

/// `M` equispaced wavenumbers from `k_min` to `k_max` inclusive.
pub fn wavenumber_band(k_min: f64, k_max: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![k_min];
    }
    (0..m)
        .map(|i| k_min + (k_max - k_min) * i as f64 / (m - 1) as f64)
        .collect()
}

/// Solves every `(k_m, d_n)` and fills the far-field tensor.
pub fn generate_dataset(
    problem: &ForwardProblem,
    angles_deg: &[f64],
    wavenumbers: &[f64],
    directions_deg: &[f64],
    policy: FormulationPolicy,
) -> Result<FarFieldTensor> {
    generate_dataset_with(
        problem,
        angles_deg,
        wavenumbers,
        directions_deg,
        policy,
        |_, _, _| {},
    )
}

/// [`generate_dataset`] with a callback after every solved sample.
pub fn generate_dataset_with<F>(
    problem: &ForwardProblem,
    angles_deg: &[f64],
    wavenumbers: &[f64],
    directions_deg: &[f64],
    policy: FormulationPolicy,
    mut progress: F,
) -> Result<FarFieldTensor>
where
    F: FnMut(usize, usize, &ForwardSolution),
{
    let mut t = FarFieldTensor::zeros(
        angles_deg.to_vec(),
        wavenumbers.to_vec(),
        directions_deg.to_vec(),
    )?;
    let xhats = t.observation_dirs();
    let dirs = t.incident_dirs();
    let at = |m: usize, n: usize| {
        move |e: ScatterError| ScatterError::AtSample {
            m,
            n,
            source: Box::new(e),
        }
    };
    for (m, &k) in wavenumbers.iter().enumerate() {
        let solver = FrequencySolver::new(problem, k, policy).map_err(at(m, 0))?;
        for (n, &d) in dirs.iter().enumerate() {
            let sol = solver.solve(d).map_err(at(m, n))?;
            let ff = solver.far_field(&sol, &xhats).map_err(at(m, n))?;
            let start = t.index(0, m, n);
            t.values[start..start + xhats.len()].copy_from_slice(&ff);
            progress(m, n, &sol);
        }
    }
    Ok(t)
}
