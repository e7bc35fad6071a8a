use std::f64::consts::PI;

use num_complex::Complex64 as C;
use proptest::prelude::*;
use scatter2d::forward::*;
use scatter2d::geometry::{BoundaryCurve, Point};
use scatter2d::specfun::{bessel_jn_seq, bessel_yn_seq};

const I: C = C::new(0.0, 1.0);

fn rel_l2(a: &[C], b: &[C]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn ring(l: usize) -> Vec<Point> {
    equispaced_angles_deg(l)
        .into_iter()
        .map(unit_from_deg)
        .collect()
}

/// `(Z_n(x), Z_n'(x))` for `n = 0..=nmax`, `Z ∈ {J, Y}`.
fn with_derivs(v: &[f64], x: f64, nmax: usize) -> Vec<(f64, f64)> {
    (0..=nmax)
        .map(|n| {
            let d = if n == 0 {
                -v[1]
            } else {
                v[n - 1] - n as f64 / x * v[n]
            };
            (v[n], d)
        })
        .collect()
}

/// Far field of a disc of radius `b` with contrast `q`, optionally with a
/// concentric soft or hard core of radius `a`.
fn layered_disc(
    k: f64,
    q: f64,
    b: f64,
    core: Option<(f64, BoundaryCondition)>,
    d: Point,
    xh: &[Point],
) -> Vec<C> {
    let k1 = k * (1.0 + q).sqrt();
    let nmax = (k1 * b).ceil() as usize + 30;
    let jb = with_derivs(&bessel_jn_seq(nmax + 1, k * b).unwrap(), k * b, nmax);
    let yb = with_derivs(&bessel_yn_seq(nmax + 1, k * b).unwrap(), k * b, nmax);
    let j1b = with_derivs(&bessel_jn_seq(nmax + 1, k1 * b).unwrap(), k1 * b, nmax);
    let y1b = with_derivs(&bessel_yn_seq(nmax + 1, k1 * b).unwrap(), k1 * b, nmax);
    let core_vals = core.map(|(a, bc)| {
        let j = with_derivs(&bessel_jn_seq(nmax + 1, k1 * a).unwrap(), k1 * a, nmax);
        let y = with_derivs(&bessel_yn_seq(nmax + 1, k1 * a).unwrap(), k1 * a, nmax);
        (j, y, bc)
    });
    let coef: Vec<C> = (0..=nmax)
        .map(|n| {
            // shell solution f = α J_n(k1 r) + β Y_n(k1 r) meeting the core condition
            let (alpha, beta) = match &core_vals {
                None => (1.0, 0.0),
                Some((j, y, BoundaryCondition::Soft)) => (y[n].0, -j[n].0),
                Some((j, y, _)) => (y[n].1, -j[n].1),
            };
            let f = alpha * j1b[n].0 + beta * y1b[n].0;
            let fp = k1 * (alpha * j1b[n].1 + beta * y1b[n].1);
            let h = C::new(jb[n].0, yb[n].0);
            let hp = C::new(jb[n].1, yb[n].1) * k;
            let (j, jp) = (jb[n].0, k * jb[n].1);
            -(f * jp - fp * j) / (f * hp - fp * h)
        })
        .collect();
    let thd = d[1].atan2(d[0]);
    xh.iter()
        .map(|x| {
            let t = x[1].atan2(x[0]) - thd;
            let s = coef[0]
                + coef[1..]
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * (2.0 * ((i + 1) as f64 * t).cos()))
                    .sum::<C>();
            -4.0 * I * s
        })
        .collect()
}

fn disc(n: usize, h: f64) -> Discretization {
    Discretization {
        n_boundary: n,
        h,
        ..Discretization::default()
    }
}

fn solve_ff(cfg: &ScattererConfig, dz: &Discretization, k: f64, d: Point, xh: &[Point]) -> Vec<C> {
    let p = ForwardProblem::new(cfg, dz).unwrap();
    let s = FrequencySolver::new(&p, k, FormulationPolicy::Auto).unwrap();
    let sol = s.solve(d).unwrap();
    s.far_field(&sol, xh).unwrap()
}

#[test]
fn layered_oracle_reduces_to_mie_without_contrast() {
    let xh = ring(16);
    let d = [1.0, 0.0];
    for bc in [BoundaryCondition::Soft, BoundaryCondition::Hard] {
        let a = layered_disc(1.3, 0.0, 1.5, Some((0.7, bc)), d, &xh);
        let b = mie_disc_farfield(1.3, 0.7, bc, d, &xh).unwrap();
        assert!(rel_l2(&a, &b) < 1e-12);
    }
}

#[test]
fn penetrable_disc_converges_to_series() {
    let xh = ring(32);
    let (k, q, d) = (1.5, 0.5, unit_from_deg(20.0));
    let exact = layered_disc(k, q, 1.0, None, d, &xh);
    let cfg = ScattererConfig::medium_only(BoundaryCurve::circle(1.0).unwrap(), C::new(q, 0.0));
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| rel_l2(&solve_ff(&cfg, &disc(64, h), k, d, &xh), &exact))
        .collect();
    assert!(errs[2] < 2e-2, "{errs:?}");
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
}

#[test]
fn obstacle_in_medium_converges_to_layered_series() {
    let xh = ring(32);
    let (k, q, d) = (1.0, 0.5, [-1.0, 0.0]);
    for bc in [BoundaryCondition::Soft, BoundaryCondition::Hard] {
        let exact = layered_disc(k, q, 1.5, Some((0.6, bc)), d, &xh);
        let cfg = ScattererConfig {
            obstacle: Some(ObstacleSpec {
                curve: BoundaryCurve::circle(0.6).unwrap(),
                bc,
            }),
            medium: Some(MediumSpec {
                curve: BoundaryCurve::circle(1.5).unwrap(),
                contrast: ContrastSpec::Constant { re: q, im: 0.0 },
            }),
            radius: None,
        };
        let errs: Vec<f64> = [0.1, 0.05, 0.025]
            .iter()
            .map(|&h| rel_l2(&solve_ff(&cfg, &disc(64, h), k, d, &xh), &exact))
            .collect();
        assert!(errs[2] < 2e-2, "{bc:?} {errs:?}");
        assert!(errs[2] < errs[0], "{bc:?} {errs:?}");
    }
}

fn small_benchmark(bc: BoundaryCondition, q: C) -> ScattererConfig {
    ScattererConfig {
        obstacle: Some(ObstacleSpec {
            curve: BoundaryCurve::kite(),
            bc,
        }),
        medium: Some(MediumSpec {
            curve: BoundaryCurve::circle(2.2).unwrap().translated([-0.3, 0.0]),
            contrast: ContrastSpec::Constant { re: q.re, im: q.im },
        }),
        radius: None,
    }
}

#[test]
fn flux_identity_on_kite_in_medium() {
    let dz = disc(128, 0.08);
    let p = ForwardProblem::new(
        &small_benchmark(BoundaryCondition::Soft, C::new(0.5, 0.0)),
        &dz,
    )
    .unwrap();
    let s = FrequencySolver::new(&p, 1.0, FormulationPolicy::Auto).unwrap();
    let f = flux_balance(&s, &s.solve(unit_from_deg(200.0)).unwrap()).unwrap();
    assert!(f.flux.abs() < 1e-6, "{f:?}");

    let p = ForwardProblem::new(
        &small_benchmark(BoundaryCondition::Soft, C::new(0.5, 0.2)),
        &dz,
    )
    .unwrap();
    let s = FrequencySolver::new(&p, 1.0, FormulationPolicy::Auto).unwrap();
    let f = flux_balance(&s, &s.solve(unit_from_deg(200.0)).unwrap()).unwrap();
    assert!(f.absorption > 0.1 && f.relative_gap() < 1e-4, "{f:?}");

    // Neumann data of cells touching ∂D are under-resolved at this N
    let p = ForwardProblem::new(
        &small_benchmark(BoundaryCondition::Hard, C::new(0.5, 0.0)),
        &dz,
    )
    .unwrap();
    let s = FrequencySolver::new(&p, 1.0, FormulationPolicy::Auto).unwrap();
    let f = flux_balance(&s, &s.solve(unit_from_deg(200.0)).unwrap()).unwrap();
    assert!(f.flux.abs() < 1e-4, "{f:?}");
}

#[test]
fn reciprocity_for_soft_hard_and_medium() {
    let dz = disc(128, 0.08);
    let (xh, d) = (unit_from_deg(35.0), unit_from_deg(150.0));
    let cases = [
        small_benchmark(BoundaryCondition::Soft, C::new(0.5, 0.0)),
        small_benchmark(BoundaryCondition::Hard, C::new(0.5, 0.0)),
        ScattererConfig::medium_only(
            BoundaryCurve::rounded_square().rotated(0.3),
            C::new(0.3, 0.1),
        ),
    ];
    for cfg in &cases {
        let p = ForwardProblem::new(cfg, &dz).unwrap();
        let s = FrequencySolver::new(&p, 1.0, FormulationPolicy::Auto).unwrap();
        let a = s.far_field(&s.solve(d).unwrap(), &[xh]).unwrap()[0];
        let b = s
            .far_field(&s.solve([-xh[0], -xh[1]]).unwrap(), &[[-d[0], -d[1]]])
            .unwrap()[0];
        assert!((a - b).norm() / a.norm() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn rotating_everything_leaves_far_field_unchanged() {
    let alpha: f64 = 0.7;
    let rot = |p: Point| {
        let (s, c) = alpha.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    };
    let xh = ring(12);
    let d = unit_from_deg(-10.0);
    for bc in [BoundaryCondition::Soft, BoundaryCondition::Hard] {
        let a = ScattererConfig::obstacle_only(BoundaryCurve::kite().translated([0.2, 0.1]), bc);
        let b = ScattererConfig::obstacle_only(
            BoundaryCurve::kite().translated([0.2, 0.1]).rotated(alpha),
            bc,
        );
        let fa = solve_ff(&a, &disc(128, 0.05), 1.7, d, &xh);
        let xr: Vec<Point> = xh.iter().map(|&x| rot(x)).collect();
        let fb = solve_ff(&b, &disc(128, 0.05), 1.7, rot(d), &xr);
        assert!(rel_l2(&fb, &fa) < 1e-10, "{bc:?}");
    }
}

#[test]
fn far_field_matches_scattered_field_at_large_radius() {
    let cfg = small_benchmark(BoundaryCondition::Soft, C::new(0.5, 0.0));
    let p = ForwardProblem::new(&cfg, &disc(128, 0.1)).unwrap();
    let k = 1.2;
    let s = FrequencySolver::new(&p, k, FormulationPolicy::Auto).unwrap();
    let d = [0.0, 1.0];
    let sol = s.solve(d).unwrap();
    let r = 1e4;
    for xh in ring(6) {
        let x = [r * xh[0], r * xh[1]];
        let us = s.total_field(&sol, &[x]).unwrap()[0]
            - C::from_polar(1.0, k * (d[0] * x[0] + d[1] * x[1]));
        let ff = s.far_field(&sol, &[xh]).unwrap()[0];
        let pred = scatter2d::boundary_ops::gamma2(k) * C::from_polar(1.0, k * r) / r.sqrt() * ff;
        assert!((us - pred).norm() / pred.norm() < 1e-3);
    }
}

#[test]
fn representation_matches_cell_values() {
    let cfg = small_benchmark(BoundaryCondition::Soft, C::new(0.5, 0.0));
    let p = ForwardProblem::new(&cfg, &disc(128, 0.1)).unwrap();
    let s = FrequencySolver::new(&p, 1.0, FormulationPolicy::Auto).unwrap();
    let sol = s.solve([1.0, 0.0]).unwrap();
    // midpoints between horizontally adjacent cells, away from ∂D
    let c = &p.volume.cell_centers;
    let mut pts = Vec::new();
    let mut avg = Vec::new();
    for i in (0..c.len() - 1).step_by(97) {
        if p.volume.lattice[i + 1][0] == p.volume.lattice[i][0] + 1 {
            pts.push([(c[i][0] + c[i + 1][0]) / 2.0, c[i][1]]);
            avg.push((sol.u_cells[i] + sol.u_cells[i + 1]) / 2.0);
        }
    }
    let u = s.total_field(&sol, &pts).unwrap();
    assert!(rel_l2(&u, &avg) < 0.05);
}

#[test]
fn hard_low_k_field_tends_to_one() {
    let cfg = ScattererConfig {
        obstacle: Some(ObstacleSpec {
            curve: BoundaryCurve::circle(0.5).unwrap(),
            bc: BoundaryCondition::Hard,
        }),
        medium: Some(MediumSpec {
            curve: BoundaryCurve::circle(1.2).unwrap(),
            contrast: ContrastSpec::Constant { re: 0.5, im: 0.0 },
        }),
        radius: None,
    };
    let p = ForwardProblem::new(&cfg, &disc(64, 0.1)).unwrap();
    let probe = [[1.5, 0.4]];
    let err: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&k| {
            let s = FrequencySolver::new(&p, k, FormulationPolicy::Auto).unwrap();
            let sol = s.solve([1.0, 0.0]).unwrap();
            (s.total_field(&sol, &probe).unwrap()[0] - 1.0).norm()
        })
        .collect();
    for w in err.windows(2) {
        let slope = (w[0] / w[1]).log10();
        assert!((slope - 1.0).abs() < 0.15, "{err:?}");
    }
}

#[test]
fn dataset_is_deterministic_and_matches_single_solves() {
    let cfg = small_benchmark(BoundaryCondition::Soft, C::new(0.5, 0.0));
    let p = ForwardProblem::new(&cfg, &disc(64, 0.15)).unwrap();
    let angles = equispaced_angles_deg(16);
    let ks = [0.1, 0.8];
    let dirs = [180.0, 45.0];
    let a = generate_dataset(&p, &angles, &ks, &dirs, FormulationPolicy::Auto).unwrap();
    let b = generate_dataset(&p, &angles, &ks, &dirs, FormulationPolicy::Auto).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), (16, 2, 2));
    let s = FrequencySolver::new(&p, 0.8, FormulationPolicy::Auto).unwrap();
    let sol = s.solve(unit_from_deg(45.0)).unwrap();
    let ff = s.far_field(&sol, &ring(16)).unwrap();
    assert_eq!(a.slice(1, 1), &ff[..]);
    assert_eq!(s.formulation(), Some(Formulation::SoftCombined));
    let low = FrequencySolver::new(&p, 0.1, FormulationPolicy::Auto).unwrap();
    assert_eq!(low.formulation(), Some(Formulation::SoftLogk));
}

#[test]
fn dataset_errors_carry_sample_indices() {
    let p = ForwardProblem::new(
        &ScattererConfig::obstacle_only(
            BoundaryCurve::circle(1.0).unwrap(),
            BoundaryCondition::Soft,
        ),
        &disc(64, 0.1),
    )
    .unwrap();
    let err = generate_dataset(
        &p,
        &[0.0],
        &[0.5, 1.0],
        &[0.0],
        FormulationPolicy::Fixed(Formulation::SoftLogk),
    )
    .unwrap_err();
    match err {
        scatter2d::error::ScatterError::AtSample { m, n, .. } => assert_eq!((m, n), (1, 0)),
        other => panic!("{other}"),
    }
}

#[test]
fn paper_dataset_shape() {
    let cfg = ScattererConfig::obstacle_only(BoundaryCurve::kite(), BoundaryCondition::Soft);
    let p = ForwardProblem::new(&cfg, &disc(64, 0.1)).unwrap();
    let t = generate_dataset(
        &p,
        &equispaced_angles_deg(64),
        &wavenumber_band(0.1, 2.0, 10),
        &[180.0],
        FormulationPolicy::Auto,
    )
    .unwrap();
    assert_eq!(t.shape(), (64, 10, 1));
    assert_eq!(unit_from_deg(180.0)[0], -1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn obstacle_reciprocity(a in 0.0..360.0f64, b in 0.0..360.0f64, hard in any::<bool>()) {
        let bc = if hard { BoundaryCondition::Hard } else { BoundaryCondition::Soft };
        let cfg = ScattererConfig::obstacle_only(BoundaryCurve::kite(), bc);
        let p = ForwardProblem::new(&cfg, &disc(96, 0.1)).unwrap();
        let s = FrequencySolver::new(&p, 2.0, FormulationPolicy::Auto).unwrap();
        let (xh, d) = (unit_from_deg(a), unit_from_deg(b));
        let u = s.far_field(&s.solve(d).unwrap(), &[xh]).unwrap()[0];
        let v = s.far_field(&s.solve([-xh[0], -xh[1]]).unwrap(), &[[-d[0], -d[1]]]).unwrap()[0];
        prop_assert!((u - v).norm() < 1e-8 * u.norm().max(1.0));
    }

    #[test]
    fn mie_far_field_is_even_about_incidence(t in 0.0..PI, k in 0.2..4.0f64) {
        let d = [1.0, 0.0];
        let up = [t.cos(), t.sin()];
        let dn = [t.cos(), -t.sin()];
        for bc in [BoundaryCondition::Soft, BoundaryCondition::Hard] {
            let f = mie_disc_farfield(k, 1.0, bc, d, &[up, dn]).unwrap();
            prop_assert!((f[0] - f[1]).norm() < 1e-12 * f[0].norm().max(1.0));
        }
    }
}
