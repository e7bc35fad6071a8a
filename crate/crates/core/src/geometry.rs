//! Parametric boundary curves, Nyström boundary meshes, uniform volume meshes
//! for the medium support and rectangular sampling grids.
//!
//! Every curve is a 2π-periodic, counter-clockwise parametrisation, so the
//! outward normal is `(x2', −x1') / |x'|` and `det[tangent, normal] < 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScatterError};

pub type Point = [f64; 2];

/// Curve families understood by [`make_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// `params = [radius]`
    Circle,
    /// `params = []` or `[a, b]`: `(cos t + a cos 2t − a, b sin t)`, default `a = 0.65, b = 1.5`
    Kite,
    /// `params = []` or `[s]`: `s (cos³t + cos t, sin³t + sin t)`, default `s = 2.25`
    RoundedSquare,
    /// `params = [a0, a1, b1, a2, b2, ...]`: star-shaped radius `a0 + Σ aj cos jt + bj sin jt`
    TrigPoly,
}

impl std::str::FromStr for CurveKind {
    type Err = ScatterError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(CurveKind::Circle),
            "kite" => Ok(CurveKind::Kite),
            "rounded_square" => Ok(CurveKind::RoundedSquare),
            "trig_poly" => Ok(CurveKind::TrigPoly),
            other => Err(ScatterError::InvalidInput(format!(
                "unknown curve kind '{other}'"
            ))),
        }
    }
}

/// A smooth closed curve: a shape from [`CurveKind`] followed by a rotation
/// about the origin and a translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct BoundaryCurve {
    pub kind: CurveKind,
    pub params: Vec<f64>,
    #[serde(default)]
    pub center: Point,
    #[serde(default)]
    pub rotation: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    kind: CurveKind,
    #[serde(default)]
    params: Vec<f64>,
    #[serde(default)]
    center: Point,
    #[serde(default)]
    rotation: f64,
}

impl TryFrom<RawCurve> for BoundaryCurve {
    type Error = ScatterError;

    fn try_from(r: RawCurve) -> Result<Self> {
        if !r.center.iter().all(|v| v.is_finite()) || !r.rotation.is_finite() {
            return Err(ScatterError::InvalidInput(
                "center and rotation must be finite".into(),
            ));
        }
        let c = make_curve(r.kind, &r.params)?;
        Ok(BoundaryCurve {
            center: r.center,
            rotation: r.rotation,
            ..c
        })
    }
}

/// Builds and validates a curve.
pub fn make_curve(kind: CurveKind, params: &[f64]) -> Result<BoundaryCurve> {
    let params = match kind {
        CurveKind::Circle => {
            if params.len() != 1 || !(params[0] > 0.0) || !params[0].is_finite() {
                return Err(ScatterError::InvalidInput(format!(
                    "circle needs one positive radius, got {params:?}"
                )));
            }
            params.to_vec()
        }
        CurveKind::Kite => match params.len() {
            0 => vec![0.65, 1.5],
            2 if params[1] > 0.0 => params.to_vec(),
            _ => {
                return Err(ScatterError::InvalidInput(format!(
                    "kite takes [] or [a, b > 0], got {params:?}"
                )))
            }
        },
        CurveKind::RoundedSquare => match params.len() {
            0 => vec![2.25],
            1 if params[0] > 0.0 => params.to_vec(),
            _ => {
                return Err(ScatterError::InvalidInput(format!(
                    "rounded_square takes [] or [scale > 0], got {params:?}"
                )))
            }
        },
        CurveKind::TrigPoly => {
            if params.is_empty() || params.len().is_multiple_of(2) {
                return Err(ScatterError::InvalidInput(
                    "trig_poly needs [a0, a1, b1, ...] (odd length)".into(),
                ));
            }
            let bound: f64 = params[1..].iter().map(|c| c.abs()).sum();
            if params[0] <= bound {
                return Err(ScatterError::InvalidInput(
                    "trig_poly radius is not strictly positive".into(),
                ));
            }
            params.to_vec()
        }
    };
    Ok(BoundaryCurve {
        kind,
        params,
        center: [0.0, 0.0],
        rotation: 0.0,
    })
}

impl BoundaryCurve {
    pub fn circle(radius: f64) -> Result<Self> {
        make_curve(CurveKind::Circle, &[radius])
    }

    /// The kite obstacle of the reference benchmark.
    pub fn kite() -> Self {
        make_curve(CurveKind::Kite, &[]).expect("default kite")
    }

    /// The rounded-square medium support of the reference benchmark.
    pub fn rounded_square() -> Self {
        make_curve(CurveKind::RoundedSquare, &[]).expect("default rounded square")
    }

    pub fn translated(mut self, by: Point) -> Self {
        self.center = [self.center[0] + by[0], self.center[1] + by[1]];
        self
    }

    /// Rotates the curve (and its current center) about the origin.
    pub fn rotated(mut self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let [x, y] = self.center;
        self.center = [c * x - s * y, s * x + c * y];
        self.rotation += angle;
        self
    }

    /// Shape-frame position and first two derivatives at `t`.
    fn local(&self, t: f64) -> [Point; 3] {
        let p = &self.params;
        let (s, c) = t.sin_cos();
        match self.kind {
            CurveKind::Circle => {
                let r = p[0];
                [[r * c, r * s], [-r * s, r * c], [-r * c, -r * s]]
            }
            CurveKind::Kite => {
                let (a, b) = (p[0], p[1]);
                let (s2, c2) = (2.0 * t).sin_cos();
                [
                    [c + a * c2 - a, b * s],
                    [-s - 2.0 * a * s2, b * c],
                    [-c - 4.0 * a * c2, -b * s],
                ]
            }
            CurveKind::RoundedSquare => {
                let k = p[0];
                [
                    [k * (c * c * c + c), k * (s * s * s + s)],
                    [k * (-3.0 * c * c * s - s), k * (3.0 * s * s * c + c)],
                    [
                        k * (6.0 * c * s * s - 3.0 * c * c * c - c),
                        k * (6.0 * s * c * c - 3.0 * s * s * s - s),
                    ],
                ]
            }
            CurveKind::TrigPoly => {
                let mut r = p[0];
                let mut dr = 0.0;
                let mut ddr = 0.0;
                for (j, ab) in p[1..].chunks(2).enumerate() {
                    let m = (j + 1) as f64;
                    let (sm, cm) = (m * t).sin_cos();
                    r += ab[0] * cm + ab[1] * sm;
                    dr += m * (-ab[0] * sm + ab[1] * cm);
                    ddr -= m * m * (ab[0] * cm + ab[1] * sm);
                }
                [
                    [r * c, r * s],
                    [dr * c - r * s, dr * s + r * c],
                    [
                        ddr * c - 2.0 * dr * s - r * c,
                        ddr * s + 2.0 * dr * c - r * s,
                    ],
                ]
            }
        }
    }

    fn to_world(&self, v: Point, translate: bool) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let mut w = [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        if translate {
            w[0] += self.center[0];
            w[1] += self.center[1];
        }
        w
    }

    pub fn point(&self, t: f64) -> Point {
        self.to_world(self.local(t)[0], true)
    }

    pub fn tangent(&self, t: f64) -> Point {
        self.to_world(self.local(t)[1], false)
    }

    pub fn second_derivative(&self, t: f64) -> Point {
        self.to_world(self.local(t)[2], false)
    }

    /// Unit outward normal.
    pub fn normal(&self, t: f64) -> Point {
        let d = self.tangent(t);
        let n = d[0].hypot(d[1]);
        [d[1] / n, -d[0] / n]
    }

    /// Enclosed area by the periodic trapezoid rule on `x dy`.
    pub fn area(&self) -> f64 {
        let n = 2048;
        (0..n)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / n as f64;
                let p = self.point(t);
                let d = self.tangent(t);
                0.5 * (p[0] * d[1] - p[1] * d[0])
            })
            .sum::<f64>()
            * (2.0 * PI / n as f64)
    }

    /// Area centroid, `(1/A) ∮ (x²/2 dy, −y²/2 dx)`.
    pub fn centroid(&self) -> Point {
        let n = 2048;
        let w = 2.0 * PI / n as f64;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for j in 0..n {
            let t = w * j as f64;
            let p = self.point(t);
            let d = self.tangent(t);
            cx += 0.5 * p[0] * p[0] * d[1];
            cy -= 0.5 * p[1] * p[1] * d[0];
        }
        let a = self.area();
        [cx * w / a, cy * w / a]
    }

    pub fn perimeter(&self) -> f64 {
        let n = 2048;
        (0..n)
            .map(|j| {
                let d = self.tangent(2.0 * PI * j as f64 / n as f64);
                d[0].hypot(d[1])
            })
            .sum::<f64>()
            * (2.0 * PI / n as f64)
    }

    /// Largest distance of the curve from the origin.
    pub fn circumradius(&self) -> f64 {
        (0..2048)
            .map(|j| {
                let p = self.point(2.0 * PI * j as f64 / 2048.0);
                p[0].hypot(p[1])
            })
            .fold(0.0, f64::max)
    }

    /// Axis-aligned bounding box `(xmin, xmax, ymin, ymax)` from a dense sampling.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for j in 0..4096 {
            let p = self.point(2.0 * PI * j as f64 / 4096.0);
            b.0 = b.0.min(p[0]);
            b.1 = b.1.max(p[0]);
            b.2 = b.2.min(p[1]);
            b.3 = b.3.max(p[1]);
        }
        b
    }
}

// ---------------------------------------------------------------------------
// boundary mesh

/// Equispaced Nyström nodes `t_j = 2πj/N` on a curve.
#[derive(Debug, Clone)]
pub struct BoundaryMesh {
    pub curve: BoundaryCurve,
    pub params: Vec<f64>,
    pub nodes: Vec<Point>,
    /// Unit outward normals.
    pub normals: Vec<Point>,
    /// `|x'(t_j)|`.
    pub jacobians: Vec<f64>,
    /// `x'(t_j)`.
    pub tangents: Vec<Point>,
    /// `x''(t_j)`.
    pub second: Vec<Point>,
    /// Trapezoid weight `2π/N`.
    pub weight: f64,
}

impl BoundaryMesh {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Arc-length quadrature weights `|x'(t_j)| 2π/N`.
    pub fn ds(&self) -> Vec<f64> {
        self.jacobians.iter().map(|j| j * self.weight).collect()
    }

    pub fn length(&self) -> f64 {
        self.jacobians.iter().sum::<f64>() * self.weight
    }

    /// Largest distance between consecutive nodes.
    pub fn spacing(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|j| {
                let a = self.nodes[j];
                let b = self.nodes[(j + 1) % n];
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .fold(0.0, f64::max)
    }
}

/// Places `n` equispaced parameter nodes on `curve`.
pub fn discretize_boundary(curve: &BoundaryCurve, n: usize) -> Result<BoundaryMesh> {
    if n < 8 || !n.is_multiple_of(2) {
        return Err(ScatterError::InvalidInput(format!(
            "boundary node count must be even and at least 8, got {n}"
        )));
    }
    let mesh = resample(curve, n)?;
    let (nodes, tangents) = (&mesh.nodes, &mesh.tangents);
    // counter-clockwise orientation (positive signed area)
    let signed: f64 = nodes
        .iter()
        .zip(tangents)
        .map(|(p, d)| p[0] * d[1] - p[1] * d[0])
        .sum();
    if signed <= 0.0 {
        return Err(ScatterError::Geometry(
            "curve must be oriented counter-clockwise".into(),
        ));
    }
    if polygon_self_intersects(nodes) {
        return Err(ScatterError::Geometry("curve self-intersects".into()));
    }
    Ok(mesh)
}

/// Nodes on a curve that is already known to be valid (no orientation or
/// self-intersection checks).
pub(crate) fn resample(curve: &BoundaryCurve, n: usize) -> Result<BoundaryMesh> {
    let weight = 2.0 * PI / n as f64;
    let params: Vec<f64> = (0..n).map(|j| weight * j as f64).collect();
    let nodes: Vec<Point> = params.iter().map(|&t| curve.point(t)).collect();
    let tangents: Vec<Point> = params.iter().map(|&t| curve.tangent(t)).collect();
    let second: Vec<Point> = params.iter().map(|&t| curve.second_derivative(t)).collect();
    let jacobians: Vec<f64> = tangents.iter().map(|d| d[0].hypot(d[1])).collect();
    if jacobians.iter().any(|&j| !(j > 1e-12)) {
        return Err(ScatterError::Geometry(
            "parametrisation is not regular".into(),
        ));
    }
    let normals: Vec<Point> = tangents
        .iter()
        .zip(&jacobians)
        .map(|(d, j)| [d[1] / j, -d[0] / j])
        .collect();

    Ok(BoundaryMesh {
        curve: curve.clone(),
        params,
        nodes,
        normals,
        jacobians,
        tangents,
        second,
        weight,
    })
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn polygon_self_intersects(p: &[Point]) -> bool {
    let n = p.len();
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (p[j], p[(j + 1) % n]);
            let d1 = orient(a, b, c);
            let d2 = orient(a, b, d);
            let d3 = orient(c, d, a);
            let d4 = orient(c, d, b);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return true;
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// point membership

/// Cached dense polyline for repeated inside/outside queries against one curve.
#[derive(Debug, Clone)]
pub struct CurveClassifier {
    curve: BoundaryCurve,
    ts: Vec<f64>,
    poly: Vec<Point>,
    seg_max: f64,
}

/// Distance below which a point counts as lying on the curve.
pub const ON_CURVE_TOL: f64 = 1e-12;

impl CurveClassifier {
    pub fn new(curve: &BoundaryCurve) -> Self {
        let m = 4096;
        let ts: Vec<f64> = (0..m).map(|j| 2.0 * PI * j as f64 / m as f64).collect();
        let poly: Vec<Point> = ts.iter().map(|&t| curve.point(t)).collect();
        let seg_max = (0..m)
            .map(|j| {
                let a = poly[j];
                let b = poly[(j + 1) % m];
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .fold(0.0, f64::max);
        CurveClassifier {
            curve: curve.clone(),
            ts,
            poly,
            seg_max,
        }
    }

    /// Closest curve parameter and distance to `p`.
    pub fn nearest(&self, p: Point) -> (f64, f64) {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (j, q) in self.poly.iter().enumerate() {
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < bd {
                bd = d;
                best = j;
            }
        }
        // Newton on g(t) = (x(t) − p)·x'(t)
        let h = 2.0 * PI / self.poly.len() as f64;
        let mut t = self.ts[best];
        for _ in 0..30 {
            let x = self.curve.point(t);
            let d1 = self.curve.tangent(t);
            let d2 = self.curve.second_derivative(t);
            let r = [x[0] - p[0], x[1] - p[1]];
            let g = r[0] * d1[0] + r[1] * d1[1];
            let gp = d1[0] * d1[0] + d1[1] * d1[1] + r[0] * d2[0] + r[1] * d2[1];
            if gp <= 0.0 {
                break;
            }
            let step = (g / gp).clamp(-h, h);
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let x = self.curve.point(t);
        let d = (x[0] - p[0]).hypot(x[1] - p[1]);
        if d.powi(2) > bd {
            (self.ts[best], bd.sqrt())
        } else {
            (t, d)
        }
    }

    /// Winding number of the dense polyline about `p` (crossing rule).
    fn winding(&self, p: Point) -> i32 {
        let n = self.poly.len();
        let mut w = 0;
        for i in 0..n {
            let a = self.poly[i];
            let b = self.poly[(i + 1) % n];
            if a[1] <= p[1] {
                if b[1] > p[1] && orient(a, b, p) > 0.0 {
                    w += 1;
                }
            } else if b[1] <= p[1] && orient(a, b, p) < 0.0 {
                w -= 1;
            }
        }
        w
    }

    /// `Ok(true)` iff the curve winds once around `p`.
    pub fn contains(&self, p: Point) -> Result<bool> {
        let (t, d) = self.nearest(p);
        if d < ON_CURVE_TOL {
            return Err(ScatterError::BoundaryAmbiguity {
                x: p[0],
                y: p[1],
                distance: d,
            });
        }
        if d < 4.0 * self.seg_max {
            // the polyline chord may sit on the wrong side; use the exact normal
            let x = self.curve.point(t);
            let nu = self.curve.normal(t);
            return Ok((p[0] - x[0]) * nu[0] + (p[1] - x[1]) * nu[1] < 0.0);
        }
        Ok(self.winding(p) == 1)
    }

    pub fn distance(&self, p: Point) -> f64 {
        self.nearest(p).1
    }
}

/// True iff the winding number of `curve` about `p` is one.
pub fn point_in_curve(curve: &BoundaryCurve, p: Point) -> Result<bool> {
    CurveClassifier::new(curve).contains(p)
}

// ---------------------------------------------------------------------------
// volume mesh

/// Square cells of side `h` whose centers lie on the lattice `h·(i, j)` and
/// inside `Ω ∖ D̄`.
#[derive(Debug, Clone)]
pub struct VolumeMesh {
    pub h: f64,
    pub cell_centers: Vec<Point>,
    /// Lattice indices `(i, j)` with center `h·(i, j)`.
    pub lattice: Vec<[i64; 2]>,
    pub cell_area: f64,
}

impl VolumeMesh {
    pub fn empty(h: f64) -> Self {
        VolumeMesh {
            h,
            cell_centers: Vec::new(),
            lattice: Vec::new(),
            cell_area: h * h,
        }
    }

    pub fn len(&self) -> usize {
        self.cell_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_centers.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.cell_area * self.len() as f64
    }

    /// Inclusive lattice index ranges `([imin, imax], [jmin, jmax])`.
    pub fn lattice_bounds(&self) -> Option<([i64; 2], [i64; 2])> {
        let first = self.lattice.first()?;
        let mut b = ([first[0], first[0]], [first[1], first[1]]);
        for l in &self.lattice {
            b.0[0] = b.0[0].min(l[0]);
            b.0[1] = b.0[1].max(l[0]);
            b.1[0] = b.1[0].min(l[1]);
            b.1[1] = b.1[1].max(l[1]);
        }
        Some(b)
    }
}

/// Cells of the `h`-lattice inside `omega` and outside `obstacle`.
pub fn build_volume_mesh(
    omega: &BoundaryCurve,
    obstacle: Option<&BoundaryCurve>,
    h: f64,
) -> Result<VolumeMesh> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(ScatterError::InvalidInput(format!(
            "cell size must be positive, got {h}"
        )));
    }
    let outer = CurveClassifier::new(omega);
    let inner = obstacle.map(CurveClassifier::new);
    if let Some(d) = obstacle {
        for j in 0..512 {
            let p = d.point(2.0 * PI * j as f64 / 512.0);
            let inside = outer.contains(p).unwrap_or(false);
            if !inside || outer.distance(p) < 1e-9 {
                return Err(ScatterError::Geometry(
                    "obstacle is not compactly contained in the medium support".into(),
                ));
            }
        }
    }
    let (x0, x1, y0, y1) = omega.bbox();
    let (i0, i1) = ((x0 / h).floor() as i64, (x1 / h).ceil() as i64);
    let (j0, j1) = ((y0 / h).floor() as i64, (y1 / h).ceil() as i64);
    let mut mesh = VolumeMesh::empty(h);
    for j in j0..=j1 {
        for i in i0..=i1 {
            let p = [i as f64 * h, j as f64 * h];
            if !matches!(outer.contains(p), Ok(true)) {
                continue;
            }
            if let Some(inner) = &inner {
                if !matches!(inner.contains(p), Ok(false)) {
                    continue;
                }
            }
            mesh.cell_centers.push(p);
            mesh.lattice.push([i, j]);
        }
    }
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// sampling grid

/// Equispaced `n × n` grid, row-major with `y` outer and `x` inner:
/// index `iy·n + ix` holds `(xmin + ix·dx, ymin + iy·dy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub bbox: [f64; 4],
    pub n_per_axis: usize,
    pub points: Vec<Point>,
}

pub fn make_grid(bbox: [f64; 4], n: usize) -> Result<SamplingGrid> {
    let [xmin, xmax, ymin, ymax] = bbox;
    if !(xmin < xmax) || !(ymin < ymax) || n < 2 {
        return Err(ScatterError::InvalidInput(format!(
            "degenerate sampling grid {bbox:?} with n = {n}"
        )));
    }
    let dx = (xmax - xmin) / (n - 1) as f64;
    let dy = (ymax - ymin) / (n - 1) as f64;
    let mut points = Vec::with_capacity(n * n);
    for iy in 0..n {
        // pin the last row/column to the bbox edge exactly
        let y = if iy == n - 1 {
            ymax
        } else {
            ymin + iy as f64 * dy
        };
        for ix in 0..n {
            let x = if ix == n - 1 {
                xmax
            } else {
                xmin + ix as f64 * dx
            };
            points.push([x, y]);
        }
    }
    Ok(SamplingGrid {
        bbox,
        n_per_axis: n,
        points,
    })
}

impl SamplingGrid {
    pub fn spacing(&self) -> (f64, f64) {
        let n = (self.n_per_axis - 1) as f64;
        (
            (self.bbox[1] - self.bbox[0]) / n,
            (self.bbox[3] - self.bbox[2]) / n,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
