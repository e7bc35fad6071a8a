//! Low-wavenumber expansions of the total field built from Laplace boundary
//! operators, and ladders that compare them against forward solves.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use serde::Serialize;
use std::f64::consts::PI;

use crate::boundary_ops::{
    assemble_aux, assemble_laplace, potential_matrix, AuxKind, LaplaceKind, NearField,
    PotentialKernel, PotentialKind,
};
use crate::error::{Result, ScatterError};
use crate::forward::{
    BoundaryCondition, Formulation, FormulationPolicy, ForwardProblem, FrequencySolver,
};
use crate::geometry::{BoundaryMesh, CurveClassifier, Point};
use crate::specfun::c2;
use crate::volume_ops::{
    assemble_volume, trace_and_normal_trace, u_v_functional, VolumeKernel, VolumeTargets,
};

/// Inverse residuals above this are reported as a failed calculus.
pub const INVERSE_RESIDUAL: f64 = 1e-10;
/// `|1 − L∘A(1)|` below this makes the sign check inadmissible.
pub const ADMISSIBILITY_GAP: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e12;
const NEAR: NearField = NearField::Refined { max_factor: 64 };

/// Laplace boundary operators on one mesh together with `A` and `B`.
#[derive(Debug, Clone)]
pub struct LaplaceCalculus {
    pub mesh: BoundaryMesh,
    pub s: DMatrix<C>,
    pub k: DMatrix<C>,
    pub kp: DMatrix<C>,
    /// `1 × N` row.
    pub l: DMatrix<C>,
    pub w: DMatrix<C>,
    pub m: DMatrix<C>,
    pub n: DMatrix<C>,
    pub p: DMatrix<C>,
    pub pp: DMatrix<C>,
    pub q: DMatrix<C>,
    pub qp: DMatrix<C>,
    /// `(I/2 + K̃ + L + S̃∘W)⁻¹`
    pub a: DMatrix<C>,
    /// `(I/2 − K̃′)⁻¹`
    pub b: DMatrix<C>,
    pub a_residual: f64,
    pub b_residual: f64,
    pub a_condition: f64,
    pub b_condition: f64,
}

fn condition(m: &DMatrix<C>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn inverse_residual(inv: &DMatrix<C>, op: &DMatrix<C>) -> f64 {
    let n = op.nrows();
    let r = inv * op - DMatrix::<C>::identity(n, n);
    r.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn invert(op: &DMatrix<C>, what: &str) -> Result<(DMatrix<C>, f64, f64)> {
    let cond = condition(op);
    if !(cond < MAX_CONDITION) {
        return Err(ScatterError::Geometry(format!(
            "{what} is near-singular (condition {cond:e})"
        )));
    }
    let inv = op
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| ScatterError::Geometry(format!("{what} is singular")))?;
    let res = inverse_residual(&inv, op);
    Ok((inv, res, cond))
}

/// Assemble the Laplace operators on `mesh` and invert the two boundary
/// systems of the low-frequency expansions.
pub fn build_calculus(mesh: &BoundaryMesh) -> Result<LaplaceCalculus> {
    let s = assemble_laplace(LaplaceKind::S, mesh)?.entries;
    let k = assemble_laplace(LaplaceKind::K, mesh)?.entries;
    let kp = assemble_laplace(LaplaceKind::Kp, mesh)?.entries;
    let aux = |kind| assemble_aux(kind, mesh).map(|m| m.entries);
    let l = aux(AuxKind::L)?;
    let w = aux(AuxKind::W)?;
    let n = mesh.len();
    let half = DMatrix::<C>::identity(n, n) * C::new(0.5, 0.0);
    let ones = DMatrix::<C>::from_element(n, 1, C::new(1.0, 0.0));
    let a_op = &half + &k + &ones * &l + &s * &w;
    let b_op = &half - &kp;
    let (a, a_residual, a_condition) = invert(&a_op, "I/2 + K̃ + L + S̃W")?;
    let (b, b_residual, b_condition) = invert(&b_op, "I/2 − K̃′")?;
    Ok(LaplaceCalculus {
        mesh: mesh.clone(),
        m: aux(AuxKind::M)?,
        n: aux(AuxKind::N)?,
        p: aux(AuxKind::P)?,
        pp: aux(AuxKind::Pp)?,
        q: aux(AuxKind::Q)?,
        qp: aux(AuxKind::Qp)?,
        s,
        k,
        kp,
        l,
        w,
        a,
        b,
        a_residual,
        b_residual,
        a_condition,
        b_condition,
    })
}

impl LaplaceCalculus {
    /// `L φ`.
    pub fn integrate(&self, phi: &[C]) -> C {
        (&self.l * DVector::from_column_slice(phi))[0]
    }

    pub fn apply_a(&self, g: &[C]) -> Vec<C> {
        (&self.a * DVector::from_column_slice(g))
            .as_slice()
            .to_vec()
    }

    pub fn apply_b(&self, g: &[C]) -> Vec<C> {
        (&self.b * DVector::from_column_slice(g))
            .as_slice()
            .to_vec()
    }

    /// `L∘A(1)`.
    pub fn l_a_one(&self) -> C {
        let one = vec![C::new(1.0, 0.0); self.mesh.len()];
        self.integrate(&self.apply_a(&one))
    }

    /// `𝒮̃φ` at points off the curve.
    pub fn single_layer(&self, phi: &[C], points: &[Point]) -> Result<Vec<C>> {
        let m = potential_matrix(
            PotentialKind::Single,
            PotentialKernel::Laplace,
            &self.mesh,
            points,
            NEAR,
        )?;
        Ok((m * DVector::from_column_slice(phi)).as_slice().to_vec())
    }

    /// `𝒦̃φ` at points off the curve.
    pub fn double_layer(&self, phi: &[C], points: &[Point]) -> Result<Vec<C>> {
        let m = potential_matrix(
            PotentialKind::Double,
            PotentialKernel::Laplace,
            &self.mesh,
            points,
            NEAR,
        )?;
        Ok((m * DVector::from_column_slice(phi)).as_slice().to_vec())
    }
}

/// `𝓕(g)(x) = g(x) − (𝒦̃ + L + 𝒮̃∘W)(A g)(x)` for boundary data `g` given as a
/// function that also supplies its extension off the curve.
pub fn cal_f<G>(calc: &LaplaceCalculus, g: G, points: &[Point]) -> Result<Vec<C>>
where
    G: Fn(Point) -> C,
{
    let nodes: Vec<C> = calc.mesh.nodes.iter().map(|&x| g(x)).collect();
    let psi = calc.apply_a(&nodes);
    let wpsi = (&calc.w * DVector::from_column_slice(&psi))
        .as_slice()
        .to_vec();
    let lpsi = calc.integrate(&psi);
    let dl = calc.double_layer(&psi, points)?;
    let sl = calc.single_layer(&wpsi, points)?;
    Ok(points
        .iter()
        .zip(dl.iter().zip(&sl))
        .map(|(&x, (a, b))| g(x) - a - lpsi - b)
        .collect())
}

/// `𝓕(1)`.
pub fn cal_f_one(calc: &LaplaceCalculus, points: &[Point]) -> Result<Vec<C>> {
    cal_f(calc, |_| C::new(1.0, 0.0), points)
}

#[derive(Debug, Clone, Serialize)]
pub struct SignReport {
    /// `1 − L∘A(1)`.
    pub bound: f64,
    pub min: f64,
    pub max: f64,
    /// Largest imaginary part of `𝓕(1)` over the probes.
    pub max_imag: f64,
    pub all_within: bool,
}

fn check_exterior(mesh: &BoundaryMesh, points: &[Point]) -> Result<()> {
    let cls = CurveClassifier::new(&mesh.curve);
    for (i, &p) in points.iter().enumerate() {
        if cls.contains(p)? {
            return Err(ScatterError::InvalidInput(format!(
                "probe {i} at ({}, {}) lies inside D",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

/// Check that `𝓕(1)` lies strictly between `0` and `1 − L∘A(1)` at the probes.
pub fn sign_check_f1(calc: &LaplaceCalculus, probes: &[Point]) -> Result<SignReport> {
    check_exterior(&calc.mesh, probes)?;
    let la = calc.l_a_one();
    let gap = C::new(1.0, 0.0) - la;
    if gap.norm() < ADMISSIBILITY_GAP {
        return Err(ScatterError::Admissibility {
            value: la.re,
            gap: gap.norm(),
        });
    }
    let f = cal_f_one(calc, probes)?;
    let bound = gap.re;
    let (lo, hi) = if bound > 0.0 {
        (0.0, bound)
    } else {
        (bound, 0.0)
    };
    let min = f.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let max = f.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(SignReport {
        bound,
        min,
        max,
        max_imag: f.iter().map(|z| z.im.abs()).fold(0.0, f64::max),
        all_within: min > lo && max < hi,
    })
}

// ---------------------------------------------------------------------------
// expansions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerTag {
    One,
    K,
    K2LnK,
    K2,
    InvLnK,
}

impl PowerTag {
    pub fn prefactor(self, k: f64) -> f64 {
        match self {
            PowerTag::One => 1.0,
            PowerTag::K => k,
            PowerTag::K2LnK => k * k * k.ln(),
            PowerTag::K2 => k * k,
            PowerTag::InvLnK => 1.0 / k.ln(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Term {
    pub tag: PowerTag,
    pub values: Vec<C>,
}

/// Terms of a low-k expansion sampled at fixed probe points.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticField {
    pub points: Vec<Point>,
    pub terms: Vec<Term>,
    pub k_validity: (f64, f64),
}

impl AsymptoticField {
    fn new(points: &[Point], k_validity: (f64, f64)) -> Self {
        AsymptoticField {
            points: points.to_vec(),
            terms: Vec::new(),
            k_validity,
        }
    }

    fn push(&mut self, tag: PowerTag, values: Vec<C>) {
        assert!(self.term(tag).is_none(), "duplicate term {tag:?}");
        self.terms.push(Term { tag, values });
    }

    pub fn term(&self, tag: PowerTag) -> Option<&[C]> {
        self.terms
            .iter()
            .find(|t| t.tag == tag)
            .map(|t| t.values.as_slice())
    }

    pub fn evaluate(&self, k: f64) -> Vec<C> {
        let mut out = vec![C::new(0.0, 0.0); self.points.len()];
        for t in &self.terms {
            let f = t.tag.prefactor(k);
            for (o, v) in out.iter_mut().zip(&t.values) {
                *o += v * f;
            }
        }
        out
    }
}

/// Which `k²ln k` / `k²` coefficients to use in the sound-hard expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HardVariant {
    /// Coefficients obtained by expanding the single-layer representation,
    /// including the monopole `L φ₂ = −|D|` of the second-order density.
    #[default]
    Derived,
    /// The coefficients exactly as displayed.
    AsPrinted,
}

impl std::str::FromStr for HardVariant {
    type Err = ScatterError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derived" => Ok(HardVariant::Derived),
            "as_printed" | "printed" => Ok(HardVariant::AsPrinted),
            _ => Err(ScatterError::InvalidInput(format!(
                "unknown expansion variant {s:?}"
            ))),
        }
    }
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Sound-hard expansion through order `k²` at `points` of `B_R ∖ D̄`.
///
/// `calc` must be built on the obstacle mesh of `problem`.
pub fn hard_expansion_2d(
    calc: &LaplaceCalculus,
    problem: &ForwardProblem,
    d: Point,
    points: &[Point],
    order: usize,
    variant: HardVariant,
) -> Result<AsymptoticField> {
    if problem.bc() != BoundaryCondition::Hard {
        return Err(ScatterError::InvalidInput(
            "the hard expansion needs a sound-hard obstacle".into(),
        ));
    }
    if order > 2 {
        return Err(ScatterError::InvalidInput(format!(
            "expansion order {order} not available"
        )));
    }
    check_exterior(&calc.mesh, points)?;
    let mesh = &calc.mesh;
    let np = points.len();
    let mut field = AsymptoticField::new(points, (0.0, 0.2));
    field.push(PowerTag::One, vec![C::new(1.0, 0.0); np]);
    if order == 0 {
        return Ok(field);
    }

    let dnu: Vec<C> = mesh
        .normals
        .iter()
        .map(|&n| C::new(dot(d, n), 0.0))
        .collect();
    let w = calc.single_layer(&calc.apply_b(&dnu), points)?;
    let i = C::new(0.0, 1.0);
    field.push(
        PowerTag::K,
        points
            .iter()
            .zip(&w)
            .map(|(&x, w)| i * (dot(x, d) + w))
            .collect(),
    );
    if order == 1 {
        return Ok(field);
    }

    let has_medium = !problem.medium.is_zero() && !problem.volume.is_empty();
    let mut g2: Vec<C> = mesh
        .nodes
        .iter()
        .zip(&dnu)
        .map(|(&x, dn)| -dn * dot(x, d))
        .collect();
    let (gv_points, uv) = if has_medium {
        let (_, dg) = trace_and_normal_trace(
            VolumeKernel::Laplace,
            &problem.volume,
            &problem.medium,
            mesh,
        )?;
        let ones = DVector::from_element(problem.volume.len(), C::new(1.0, 0.0));
        for (g, v) in g2.iter_mut().zip((dg * &ones).iter()) {
            *g += v;
        }
        let gv = assemble_volume(
            VolumeKernel::Laplace,
            &problem.volume,
            &problem.medium,
            VolumeTargets::Points(points),
        )?
        .entries
            * &ones;
        let uv = u_v_functional(&problem.volume, &problem.medium, ones.as_slice())?;
        (gv.as_slice().to_vec(), uv)
    } else {
        (vec![C::new(0.0, 0.0); np], C::new(0.0, 0.0))
    };
    let phi2 = calc.apply_b(&g2);
    let s2 = calc.single_layer(&phi2, points)?;
    let lphi2 = calc.integrate(&phi2);
    let two_pi = 2.0 * PI;
    let (log_coef, extra) = match variant {
        HardVariant::Derived => (-(lphi2 + uv) / two_pi, c2() * lphi2),
        HardVariant::AsPrinted => (uv / two_pi, C::new(0.0, 0.0)),
    };
    field.push(PowerTag::K2LnK, vec![log_coef; np]);
    field.push(
        PowerTag::K2,
        points
            .iter()
            .zip(s2.iter().zip(&gv_points))
            .map(|(&x, (s, g))| -0.5 * dot(x, d).powi(2) + s + g + c2() * uv + extra)
            .collect(),
    );
    Ok(field)
}

/// Leading sound-soft term `𝓕(1)`.
pub fn soft_leading_2d(calc: &LaplaceCalculus, points: &[Point]) -> Result<AsymptoticField> {
    check_exterior(&calc.mesh, points)?;
    let mut field = AsymptoticField::new(points, (0.0, 0.2));
    field.push(PowerTag::One, cal_f_one(calc, points)?);
    Ok(field)
}

// ---------------------------------------------------------------------------
// remainder ladders

/// Least-squares slope of `ln y` against `ln k`.
pub fn fit_exponent(ks: &[f64], ys: &[f64]) -> f64 {
    let xs: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ls.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Exponent `p` of the model `y ≈ C k^p |ln k|`.
pub fn fit_exponent_log(ks: &[f64], ys: &[f64]) -> f64 {
    let scaled: Vec<f64> = ks.iter().zip(ys).map(|(k, y)| y / k.ln().abs()).collect();
    fit_exponent(ks, &scaled)
}

#[derive(Debug, Clone, Serialize)]
pub struct HardLadder {
    pub variant: HardVariant,
    pub ks: Vec<f64>,
    pub probes: Vec<Point>,
    /// `remainders[j][p]` at `ks[j]` and probe `p`.
    pub remainders: Vec<Vec<f64>>,
    /// Plain log-log slope per probe.
    pub exponents: Vec<f64>,
    /// Slope per probe after dividing out `|ln k|`.
    pub exponents_log: Vec<f64>,
}

/// Remainders `|u(x, k) − expansion|` of the order-2 hard expansion.
pub fn hard_remainder_ladder(
    problem: &ForwardProblem,
    d: Point,
    probes: &[Point],
    ks: &[f64],
    variants: &[HardVariant],
) -> Result<Vec<HardLadder>> {
    let mesh = problem
        .boundary
        .as_ref()
        .ok_or_else(|| ScatterError::InvalidInput("the hard ladder needs an obstacle".into()))?;
    let calc = build_calculus(mesh)?;
    let fields: Vec<AsymptoticField> = variants
        .iter()
        .map(|&v| hard_expansion_2d(&calc, problem, d, probes, 2, v))
        .collect::<Result<_>>()?;
    let mut totals = Vec::with_capacity(ks.len());
    for &k in ks {
        let solver = FrequencySolver::new(
            problem,
            k,
            FormulationPolicy::Fixed(Formulation::HardRegularized),
        )?;
        let sol = solver.solve(d)?;
        totals.push(solver.total_field(&sol, probes)?);
    }
    Ok(variants
        .iter()
        .zip(&fields)
        .map(|(&variant, f)| {
            let remainders: Vec<Vec<f64>> = ks
                .iter()
                .zip(&totals)
                .map(|(&k, u)| {
                    f.evaluate(k)
                        .iter()
                        .zip(u)
                        .map(|(a, b)| (a - b).norm())
                        .collect()
                })
                .collect();
            let per_probe = |p: usize| remainders.iter().map(|r| r[p]).collect::<Vec<_>>();
            HardLadder {
                variant,
                ks: ks.to_vec(),
                probes: probes.to_vec(),
                exponents: (0..probes.len())
                    .map(|p| fit_exponent(ks, &per_probe(p)))
                    .collect(),
                exponents_log: (0..probes.len())
                    .map(|p| fit_exponent_log(ks, &per_probe(p)))
                    .collect(),
                remainders,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SoftLadder {
    pub ks: Vec<f64>,
    pub probes: Vec<Point>,
    /// `|u − 𝓕(1)|·|ln k|` per k and probe.
    pub scaled: Vec<Vec<f64>>,
    /// Per probe: largest over smallest scaled remainder along the ladder.
    pub spread: Vec<f64>,
    /// Per probe: relative change of the scaled remainder between the two
    /// smallest wavenumbers.
    pub tail_change: Vec<f64>,
}

impl SoftLadder {
    /// `C` stays within a factor 2 along the ladder and settles to 10% at
    /// its low end.
    pub fn is_stable(&self) -> bool {
        self.spread.iter().all(|&s| s <= 2.0) && self.tail_change.iter().all(|&c| c <= 0.1)
    }
}

/// `k = k_max·2^{-j}` down to `k_min`.
pub fn dyadic_ladder(k_max: f64, k_min: f64) -> Vec<f64> {
    let mut ks = Vec::new();
    let mut k = k_max;
    while k >= k_min * (1.0 - 1e-12) {
        ks.push(k);
        k *= 0.5;
    }
    ks
}

/// Scaled remainders of the soft leading term, solved with the `ln k`
/// formulation.
pub fn soft_remainder_ladder(
    problem: &ForwardProblem,
    d: Point,
    probes: &[Point],
    ks: &[f64],
) -> Result<SoftLadder> {
    if ks.len() < 2 {
        return Err(ScatterError::InvalidInput(
            "a ladder needs at least two wavenumbers".into(),
        ));
    }
    let mesh = problem
        .boundary
        .as_ref()
        .ok_or_else(|| ScatterError::InvalidInput("the soft ladder needs an obstacle".into()))?;
    let calc = build_calculus(mesh)?;
    let lead = soft_leading_2d(&calc, probes)?.evaluate(1.0);
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|&a, &b| ks[b].total_cmp(&ks[a]));
    let mut scaled = Vec::with_capacity(ks.len());
    for &j in &order {
        let k = ks[j];
        let solver =
            FrequencySolver::new(problem, k, FormulationPolicy::Fixed(Formulation::SoftLogk))?;
        let sol = solver.solve(d)?;
        let u = solver.total_field(&sol, probes)?;
        scaled.push(
            u.iter()
                .zip(&lead)
                .map(|(a, b)| (a - b).norm() * k.ln().abs())
                .collect::<Vec<f64>>(),
        );
    }
    let np = probes.len();
    let nk = scaled.len();
    let spread = (0..np)
        .map(|p| {
            let col = scaled.iter().map(|r| r[p]);
            col.clone().fold(0.0, f64::max) / col.fold(f64::INFINITY, f64::min)
        })
        .collect();
    let tail_change = (0..np)
        .map(|p| (scaled[nk - 1][p] - scaled[nk - 2][p]).abs() / scaled[nk - 1][p])
        .collect();
    Ok(SoftLadder {
        ks: order.iter().map(|&j| ks[j]).collect(),
        probes: probes.to_vec(),
        scaled,
        spread,
        tail_change,
    })
}
