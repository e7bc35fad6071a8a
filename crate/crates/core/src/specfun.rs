//! Bessel functions of order 0 and 1 and the 2D free-space kernels built on them.
//!
//! `J0, J1, Y0, Y1` come from `libm`. `K0, K1` use the ascending series for
//! `x <= 2` and Steed's continued fraction above.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Result, ScatterError};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `c2 = ln 2 / 2π − C / 2π + i/4`, the constant of the 2D low-frequency
/// expansion of the fundamental solution.
pub fn c2() -> Complex64 {
    Complex64::new((std::f64::consts::LN_2 - EULER_GAMMA) / (2.0 * PI), 0.25)
}

/// Values of `J0, J1, Y0, Y1` at one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylBessel {
    pub j0: f64,
    pub j1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// Kernel value together with its gradient in the source variable `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub value: Complex64,
    pub gradient_y: [Complex64; 2],
}

// ---------------------------------------------------------------------------
// J0, J1, Y0, Y1

/// `J0, J1, Y0, Y1` at `x`. Requires `x > 0`; use [`bessel_j01`] at zero.
pub fn cyl_bessel(x: f64) -> Result<CylBessel> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ScatterError::Domain {
            func: "cyl_bessel",
            arg: x,
        });
    }
    Ok(CylBessel {
        j0: libm::j0(x),
        j1: libm::j1(x),
        y0: libm::y0(x),
        y1: libm::y1(x),
    })
}

/// `(J0, J1)` for `x >= 0`.
pub fn bessel_j01(x: f64) -> Result<(f64, f64)> {
    if x == 0.0 {
        return Ok((1.0, 0.0));
    }
    if x < 0.0 {
        // J0 even, J1 odd
        let b = cyl_bessel(-x)?;
        return Ok((b.j0, -b.j1));
    }
    let b = cyl_bessel(x)?;
    Ok((b.j0, b.j1))
}

/// `H_n^{(1)}(x) = J_n(x) + i Y_n(x)` for `n ∈ {0, 1}`.
pub fn hankel1(order: u32, x: f64) -> Result<Complex64> {
    let b = cyl_bessel(x)?;
    match order {
        0 => Ok(Complex64::new(b.j0, b.y0)),
        1 => Ok(Complex64::new(b.j1, b.y1)),
        _ => Err(ScatterError::InvalidInput(format!(
            "hankel1 supports orders 0 and 1, got {order}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// modified Bessel functions

/// `(I0, I1)` by the ascending series; intended for moderate arguments.
pub fn bessel_i01(x: f64) -> (f64, f64) {
    let t = 0.25 * x * x;
    let mut a0 = 1.0;
    let mut a1 = 1.0;
    let mut i0 = 1.0;
    let mut i1 = 1.0;
    let mut k = 0.0;
    loop {
        k += 1.0;
        a0 *= t / (k * k);
        a1 *= t / (k * (k + 1.0));
        i0 += a0;
        i1 += a1;
        if a0 < 1e-17 * i0 && a1 < 1e-17 * i1 {
            break;
        }
    }
    (i0, 0.5 * x * i1)
}

/// `(K0, K1)` for `x > 0`.
pub fn mod_bessel_k(x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ScatterError::Domain {
            func: "mod_bessel_k",
            arg: x,
        });
    }
    if x <= 2.0 {
        let t = 0.25 * x * x;
        let (i0, i1) = bessel_i01(x);
        let lg = (0.5 * x).ln() + EULER_GAMMA;
        let mut a0 = 1.0;
        let mut a1 = 1.0;
        let mut h_next = 1.0;
        let mut s0 = 0.0;
        let mut s1 = 1.0;
        let mut k = 0.0;
        loop {
            k += 1.0;
            a0 *= t / (k * k);
            a1 *= t / (k * (k + 1.0));
            let h = h_next;
            h_next += 1.0 / (k + 1.0);
            s0 += h * a0;
            s1 += (h + h_next) * a1;
            if a0 < 1e-18 && a1 < 1e-18 {
                break;
            }
        }
        let k0 = -lg * i0 + s0;
        let k1 = 1.0 / x + lg * i1 - 0.25 * x * s1;
        return Ok((k0, k1));
    }
    // Steed's method (CF2) for order zero
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let a1 = 0.25;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..100_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    Ok((k0, k1))
}

// ---------------------------------------------------------------------------
// integer orders

/// `J_0(x), …, J_nmax(x)` for `x ≥ 0` by Miller's downward recurrence,
/// normalised with `J0 + 2 Σ J_2m = 1`.
pub fn bessel_jn_seq(nmax: usize, x: f64) -> Result<Vec<f64>> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(ScatterError::Domain {
            func: "bessel_jn_seq",
            arg: x,
        });
    }
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    let top = nmax.max(x as usize);
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    start += start % 2;
    let (mut jp1, mut j) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    for m in (1..=start).rev() {
        let jm1 = 2.0 * m as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp1 *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
        // j now holds J_{m-1}
        let idx = m - 1;
        if idx <= nmax {
            out[idx] = j;
        }
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * j;
        }
    }
    norm += j;
    for v in out.iter_mut() {
        *v /= norm;
    }
    Ok(out)
}

/// `Y_0(x), …, Y_nmax(x)` for `x > 0` by upward recurrence from `Y0, Y1`.
pub fn bessel_yn_seq(nmax: usize, x: f64) -> Result<Vec<f64>> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ScatterError::Domain {
            func: "bessel_yn_seq",
            arg: x,
        });
    }
    let b = cyl_bessel(x)?;
    let mut out = Vec::with_capacity(nmax + 1);
    out.push(b.y0);
    if nmax >= 1 {
        out.push(b.y1);
    }
    for m in 1..nmax {
        let next = 2.0 * m as f64 / x * out[m] - out[m - 1];
        out.push(next);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// kernels

/// 2D Helmholtz fundamental solution `Φ = (i/4) H0^{(1)}(k r)`.
pub fn phi(k: f64, r: f64) -> Result<Complex64> {
    if !(k > 0.0) {
        return Err(ScatterError::Domain {
            func: "phi",
            arg: k,
        });
    }
    if r == 0.0 {
        return Err(ScatterError::Singularity { func: "phi" });
    }
    if r < 0.0 {
        return Err(ScatterError::Domain {
            func: "phi",
            arg: r,
        });
    }
    let h = hankel1(0, k * r)?;
    Ok(Complex64::i() * 0.25 * h)
}

/// 2D Laplace fundamental solution `Φ0 = (1/2π) ln(1/r)`.
pub fn phi0(r: f64) -> Result<f64> {
    if r == 0.0 {
        return Err(ScatterError::Singularity { func: "phi0" });
    }
    if r < 0.0 || !r.is_finite() {
        return Err(ScatterError::Domain {
            func: "phi0",
            arg: r,
        });
    }
    Ok(-r.ln() / (2.0 * PI))
}

/// `Ψ(r) = r²/8π (ln(r/2) + C − 1 − iπ/2)`, continuous at `r = 0`.
pub fn psi_kernel(r: f64) -> Complex64 {
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let w = r * r / (8.0 * PI);
    Complex64::new(w * ((0.5 * r).ln() + EULER_GAMMA - 1.0), -w * 0.5 * PI)
}

/// Single-layer kernel at the imaginary wavenumber `k = i`:
/// `(i/4) H0^{(1)}(i r) = K0(r) / 2π`.
pub fn phi_imag_unit(r: f64) -> Result<f64> {
    if r == 0.0 {
        return Err(ScatterError::Singularity {
            func: "phi_imag_unit",
        });
    }
    Ok(mod_bessel_k(r)?.0 / (2.0 * PI))
}

/// Remainder of `Φ(k, r)` after the low-frequency partial sum through the
/// requested order:
///
/// * order 0: `−ln k/2π + Φ0(r) + c2`
/// * order 1: same as order 0 (the expansion has no `k` or `k ln k` term)
/// * order 2: adds `r²/8π k² ln k + Ψ(r) k²`
pub fn phi_lowk_remainder(k: f64, r: f64, order: u32) -> Result<Complex64> {
    if order > 2 {
        return Err(ScatterError::InvalidInput(format!(
            "expansion order must be 0, 1 or 2, got {order}"
        )));
    }
    let full = phi(k, r)?;
    let mut partial = c2() + phi0(r)? - k.ln() / (2.0 * PI);
    if order == 2 {
        partial += r * r / (8.0 * PI) * k * k * k.ln() + psi_kernel(r) * (k * k);
    }
    Ok(full - partial)
}

#[inline]
fn diff(x: [f64; 2], y: [f64; 2]) -> ([f64; 2], f64) {
    let d = [x[0] - y[0], x[1] - y[1]];
    (d, d[0].hypot(d[1]))
}

/// `Φ(x, y)` and `∇_y Φ(x, y)` for the Helmholtz kernel.
pub fn helmholtz_kernel(k: f64, x: [f64; 2], y: [f64; 2]) -> Result<KernelEval> {
    let (d, r) = diff(x, y);
    if r == 0.0 {
        return Err(ScatterError::Singularity {
            func: "helmholtz_kernel",
        });
    }
    let b = cyl_bessel(k * r)?;
    let value = Complex64::new(-0.25 * b.y0, 0.25 * b.j0);
    // ∇_y Φ = (ik/4) H1(kr) (x − y)/r
    let g = Complex64::new(-0.25 * k * b.y1, 0.25 * k * b.j1) / r;
    Ok(KernelEval {
        value,
        gradient_y: [g * d[0], g * d[1]],
    })
}

/// `Φ0(x, y)` and `∇_y Φ0(x, y)` for the Laplace kernel.
pub fn laplace_kernel(x: [f64; 2], y: [f64; 2]) -> Result<KernelEval> {
    let (d, r) = diff(x, y);
    if r == 0.0 {
        return Err(ScatterError::Singularity {
            func: "laplace_kernel",
        });
    }
    let g = 1.0 / (2.0 * PI * r * r);
    Ok(KernelEval {
        value: Complex64::new(-r.ln() / (2.0 * PI), 0.0),
        gradient_y: [Complex64::new(g * d[0], 0.0), Complex64::new(g * d[1], 0.0)],
    })
}
