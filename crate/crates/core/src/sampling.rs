//! Multiplicative noise and the multi-frequency direct-sampling indicators.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScatterError};
use crate::forward::{FarFieldTensor, NoiseRecord};
use crate::geometry::{Point, SamplingGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub delta: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(ScatterError::InvalidInput(format!(
                "noise level must lie in [0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// `u_δ = (1 + δ(s₁ + i s₂)/|s|)·u^∞` with `s₁, s₂` uniform in `(−1, 1)`, one
/// draw per entry in storage order.
pub fn add_noise(tensor: &FarFieldTensor, spec: NoiseSpec) -> Result<FarFieldTensor> {
    if let Some(n) = &tensor.noise {
        return Err(ScatterError::DoubleNoise {
            delta: n.delta,
            seed: n.seed,
        });
    }
    spec.validate()?;
    let mut out = tensor.clone();
    out.noise = Some(NoiseRecord {
        delta: spec.delta,
        seed: spec.seed,
    });
    if spec.delta == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in out.values.iter_mut() {
        let s = loop {
            let s = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if s.norm() > 0.0 {
                break s;
            }
        };
        *v *= C::new(1.0, 0.0) + s * (spec.delta / s.norm());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndicatorKind {
    #[serde(rename = "potthast1")]
    Potthast1,
    #[serde(rename = "liu1")]
    Liu1,
    #[serde(rename = "potthastN")]
    PotthastN,
    #[serde(rename = "liuN")]
    LiuN,
}

impl IndicatorKind {
    pub fn is_single(self) -> bool {
        matches!(self, IndicatorKind::Potthast1 | IndicatorKind::Liu1)
    }

    pub fn name(self) -> &'static str {
        match self {
            IndicatorKind::Potthast1 => "potthast1",
            IndicatorKind::Liu1 => "liu1",
            IndicatorKind::PotthastN => "potthastN",
            IndicatorKind::LiuN => "liuN",
        }
    }
}

impl std::str::FromStr for IndicatorKind {
    type Err = ScatterError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "potthast1" => Ok(IndicatorKind::Potthast1),
            "liu1" => Ok(IndicatorKind::Liu1),
            "potthastn" => Ok(IndicatorKind::PotthastN),
            "liun" => Ok(IndicatorKind::LiuN),
            _ => Err(ScatterError::InvalidInput(format!(
                "unknown indicator {s:?}"
            ))),
        }
    }
}

/// Indicator values on a sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorField {
    pub grid: SamplingGrid,
    pub values: Vec<f64>,
    pub kind: IndicatorKind,
    /// Direction index for the single-direction indicators.
    pub direction: Option<usize>,
    /// Largest raw value, used for normalisation.
    pub max_value: f64,
}

impl IndicatorField {
    /// All values zero; the normalised field is then zero too.
    pub fn is_degenerate(&self) -> bool {
        !(self.max_value > 0.0)
    }

    pub fn normalized(&self) -> Vec<f64> {
        if self.is_degenerate() {
            return vec![0.0; self.values.len()];
        }
        self.values.iter().map(|v| v / self.max_value).collect()
    }

    /// First grid index attaining the maximum.
    pub fn argmax(&self) -> (usize, Point) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best, self.grid.points[best])
    }

    /// Every grid index attaining the maximum exactly.
    pub fn argmax_set(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i] == self.max_value)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x,y,value")?;
        for (p, v) in self.grid.points.iter().zip(&self.values) {
            writeln!(w, "{:.16e},{:.16e},{:.16e}", p[0], p[1], v)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary 8-bit PGM of the normalised field, top row at `y = ymax`.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let n = self.grid.n_per_axis;
        let norm = self.normalized();
        let mut bytes = format!("P5\n{n} {n}\n255\n").into_bytes();
        for iy in (0..n).rev() {
            for ix in 0..n {
                bytes.push((norm[iy * n + ix] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

fn check_direction(tensor: &FarFieldTensor, n: usize) -> Result<()> {
    if n >= tensor.directions_deg.len() {
        return Err(ScatterError::InvalidInput(format!(
            "direction index {n} out of range (tensor has {})",
            tensor.directions_deg.len()
        )));
    }
    Ok(())
}

/// `S_{mn}(z) = Σ_l u^∞(x̂_l, k_m, d_n) e^{i k_m x̂_l·z}` for every `m` and the
/// given `n`s, returned as `(n, m)` pairs in input order.
fn inner_sums(tensor: &FarFieldTensor, xhats: &[Point], dirs: &[usize], z: Point) -> Vec<C> {
    let mut out = Vec::with_capacity(dirs.len() * tensor.wavenumbers.len());
    let proj: Vec<f64> = xhats.iter().map(|x| x[0] * z[0] + x[1] * z[1]).collect();
    for &n in dirs {
        for (m, &k) in tensor.wavenumbers.iter().enumerate() {
            let u = tensor.slice(m, n);
            let s: C = u
                .iter()
                .zip(&proj)
                .map(|(v, p)| v * C::from_polar(1.0, k * p))
                .sum();
            out.push(s);
        }
    }
    out
}

fn evaluate<F>(tensor: &FarFieldTensor, grid: &SamplingGrid, dirs: &[usize], f: F) -> Vec<f64>
where
    F: Fn(Point, &[C]) -> f64 + Sync,
{
    let xhats = tensor.observation_dirs();
    grid.points
        .par_iter()
        .map(|&z| f(z, &inner_sums(tensor, &xhats, dirs, z)))
        .collect()
}

/// `Σ_n Σ_m e^{−i k_m d_n·z} S_{mn}(z)`.
fn compensated_sum(tensor: &FarFieldTensor, dirs: &[usize], z: Point, s: &[C]) -> C {
    let all = tensor.incident_dirs();
    let nm = tensor.wavenumbers.len();
    let mut acc = C::new(0.0, 0.0);
    for (j, &n) in dirs.iter().enumerate() {
        let d = all[n];
        let dz = d[0] * z[0] + d[1] * z[1];
        for (m, &k) in tensor.wavenumbers.iter().enumerate() {
            acc += C::from_polar(1.0, -k * dz) * s[j * nm + m];
        }
    }
    acc
}

fn field(
    grid: &SamplingGrid,
    values: Vec<f64>,
    kind: IndicatorKind,
    direction: Option<usize>,
) -> IndicatorField {
    let max_value = values.iter().cloned().fold(0.0, f64::max);
    IndicatorField {
        grid: grid.clone(),
        values,
        kind,
        direction,
        max_value,
    }
}

pub fn indicator_potthast_single(
    tensor: &FarFieldTensor,
    n: usize,
    grid: &SamplingGrid,
) -> Result<IndicatorField> {
    check_direction(tensor, n)?;
    let v = evaluate(tensor, grid, &[n], |_, s| {
        s.iter().map(|x| x.norm_sqr()).sum()
    });
    Ok(field(grid, v, IndicatorKind::Potthast1, Some(n)))
}

pub fn indicator_liu_single(
    tensor: &FarFieldTensor,
    n: usize,
    grid: &SamplingGrid,
) -> Result<IndicatorField> {
    check_direction(tensor, n)?;
    let v = evaluate(tensor, grid, &[n], |z, s| {
        compensated_sum(tensor, &[n], z, s).norm_sqr()
    });
    Ok(field(grid, v, IndicatorKind::Liu1, Some(n)))
}

pub fn indicator_potthast_multi(
    tensor: &FarFieldTensor,
    grid: &SamplingGrid,
) -> Result<IndicatorField> {
    let dirs = all_directions(tensor)?;
    let v = evaluate(tensor, grid, &dirs, |_, s| {
        s.iter().map(|x| x.norm_sqr()).sum()
    });
    Ok(field(grid, v, IndicatorKind::PotthastN, None))
}

pub fn indicator_liu_multi(tensor: &FarFieldTensor, grid: &SamplingGrid) -> Result<IndicatorField> {
    let dirs = all_directions(tensor)?;
    let v = evaluate(tensor, grid, &dirs, |z, s| {
        compensated_sum(tensor, &dirs, z, s).norm_sqr()
    });
    Ok(field(grid, v, IndicatorKind::LiuN, None))
}

fn all_directions(tensor: &FarFieldTensor) -> Result<Vec<usize>> {
    if tensor.directions_deg.is_empty() {
        return Err(ScatterError::InvalidInput(
            "tensor has no incident directions".into(),
        ));
    }
    Ok((0..tensor.directions_deg.len()).collect())
}

/// Dispatch on the indicator kind; single-direction kinds need `direction`.
pub fn indicator(
    tensor: &FarFieldTensor,
    kind: IndicatorKind,
    direction: Option<usize>,
    grid: &SamplingGrid,
) -> Result<IndicatorField> {
    let need = || {
        direction.ok_or_else(|| {
            ScatterError::InvalidInput(format!("indicator {} needs a direction index", kind.name()))
        })
    };
    match kind {
        IndicatorKind::Potthast1 => indicator_potthast_single(tensor, need()?, grid),
        IndicatorKind::Liu1 => indicator_liu_single(tensor, need()?, grid),
        IndicatorKind::PotthastN => indicator_potthast_multi(tensor, grid),
        IndicatorKind::LiuN => indicator_liu_multi(tensor, grid),
    }
}

/// `values ≥ level·max`.
pub fn support_estimate(field: &IndicatorField, level: f64) -> Result<Vec<bool>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ScatterError::InvalidInput(format!(
            "threshold level must lie in (0, 1), got {level}"
        )));
    }
    let norm = field.normalized();
    Ok(norm.iter().map(|&v| v >= level).collect())
}

/// Mean of the selected grid points, `None` for an empty mask.
pub fn mask_centroid(grid: &SamplingGrid, mask: &[bool]) -> Option<Point> {
    let (mut sx, mut sy, mut c) = (0.0, 0.0, 0usize);
    for (p, &m) in grid.points.iter().zip(mask) {
        if m {
            sx += p[0];
            sy += p[1];
            c += 1;
        }
    }
    (c > 0).then(|| [sx / c as f64, sy / c as f64])
}

/// Fraction of `truth` covered by `mask`.
pub fn coverage(mask: &[bool], truth: &[bool]) -> f64 {
    let total = truth.iter().filter(|&&t| t).count();
    if total == 0 {
        return 0.0;
    }
    let hit = mask.iter().zip(truth).filter(|(&m, &t)| m && t).count();
    hit as f64 / total as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldSummary {
    pub indicator: IndicatorKind,
    pub direction: Option<usize>,
    pub argmax: Point,
    pub peak: f64,
    pub degenerate: bool,
    pub threshold: f64,
    pub mask_points: usize,
    pub mask_centroid: Option<Point>,
}

pub fn summarize(field: &IndicatorField, threshold: f64) -> Result<FieldSummary> {
    let mask = support_estimate(field, threshold)?;
    Ok(FieldSummary {
        indicator: field.kind,
        direction: field.direction,
        argmax: field.argmax().1,
        peak: field.max_value,
        degenerate: field.is_degenerate(),
        threshold,
        mask_points: mask.iter().filter(|&&m| m).count(),
        mask_centroid: mask_centroid(&field.grid, &mask),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{equispaced_angles_deg, wavenumber_band};
    use crate::geometry::make_grid;

    fn point_tensor(z0: Point, dirs: Vec<f64>, born: bool) -> FarFieldTensor {
        let mut t = FarFieldTensor::zeros(
            equispaced_angles_deg(16),
            wavenumber_band(0.5, 2.0, 4),
            dirs,
        )
        .unwrap();
        let xh = t.observation_dirs();
        let ds = t.incident_dirs();
        let ks = t.wavenumbers.clone();
        for n in 0..ds.len() {
            for (m, &k) in ks.iter().enumerate() {
                for l in 0..xh.len() {
                    let mut ph = -k * (xh[l][0] * z0[0] + xh[l][1] * z0[1]);
                    if born {
                        ph += k * (ds[n][0] * z0[0] + ds[n][1] * z0[1]);
                    }
                    let i = t.index(l, m, n);
                    t.values[i] = C::from_polar(1.0, ph);
                }
            }
        }
        t
    }

    fn grid() -> SamplingGrid {
        make_grid([-2.0, 2.0, -2.0, 2.0], 21).unwrap()
    }

    #[test]
    fn potthast_peaks_at_point_scatterer() {
        let z0 = [0.6, -0.4];
        let t = point_tensor(z0, vec![180.0], false);
        let f = indicator_potthast_single(&t, 0, &grid()).unwrap();
        let (i, p) = f.argmax();
        assert!((p[0] - z0[0]).abs() < 1e-12 && (p[1] - z0[1]).abs() < 1e-12);
        assert!((f.values[i] - 4.0 * 256.0).abs() < 1e-9);
        assert_eq!(f.argmax_set(), vec![i]);
    }

    #[test]
    fn liu_cancels_born_phase() {
        let z0 = [-0.8, 1.2];
        let t = point_tensor(z0, vec![0.0, 90.0, 180.0, 270.0], true);
        let g = grid();
        let single = indicator_liu_single(&t, 1, &g).unwrap();
        let (i, _) = single.argmax();
        assert!((single.values[i] - (4.0 * 16.0f64).powi(2)).abs() < 1e-8);
        let multi = indicator_liu_multi(&t, &g).unwrap();
        let (j, p) = multi.argmax();
        assert!((p[0] - z0[0]).abs() < 1e-12 && (p[1] - z0[1]).abs() < 1e-12);
        assert!((multi.values[j] - (4.0 * 4.0 * 16.0f64).powi(2)).abs() < 1e-6);
        let sum: f64 = (0..4)
            .map(|n| indicator_liu_single(&t, n, &g).unwrap().values[j])
            .sum();
        assert!(multi.values[j] > sum);
    }

    #[test]
    fn multi_indicators_reduce_to_single() {
        let t = point_tensor([0.3, 0.2], vec![45.0], false);
        let g = grid();
        assert_eq!(
            indicator_potthast_multi(&t, &g).unwrap().values,
            indicator_potthast_single(&t, 0, &g).unwrap().values
        );
        assert_eq!(
            indicator_liu_multi(&t, &g).unwrap().values,
            indicator_liu_single(&t, 0, &g).unwrap().values
        );
    }

    #[test]
    fn potthast_multi_is_sum_of_singles() {
        let t = point_tensor([0.3, 0.2], vec![0.0, 120.0, 240.0], true);
        let g = grid();
        let multi = indicator_potthast_multi(&t, &g).unwrap();
        let singles: Vec<IndicatorField> = (0..3)
            .map(|n| indicator_potthast_single(&t, n, &g).unwrap())
            .collect();
        for i in 0..g.len() {
            let s: f64 = singles.iter().map(|f| f.values[i]).sum();
            assert!((multi.values[i] - s).abs() <= 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn zero_tensor_gives_degenerate_field() {
        let t = FarFieldTensor::zeros(equispaced_angles_deg(8), vec![1.0], vec![0.0]).unwrap();
        for kind in [
            IndicatorKind::Potthast1,
            IndicatorKind::Liu1,
            IndicatorKind::PotthastN,
            IndicatorKind::LiuN,
        ] {
            let f = indicator(&t, kind, Some(0), &grid()).unwrap();
            assert!(f.values.iter().all(|&v| v == 0.0));
            assert!(f.is_degenerate());
            assert!(f.normalized().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_indicator_requires_valid_direction() {
        let t = point_tensor([0.0, 0.0], vec![0.0], false);
        assert!(indicator(&t, IndicatorKind::Liu1, None, &grid()).is_err());
        assert!(indicator_potthast_single(&t, 3, &grid()).is_err());
    }

    #[test]
    fn noise_has_exact_relative_modulus() {
        let t = point_tensor([0.1, 0.2], vec![0.0, 90.0], true);
        let noisy = add_noise(
            &t,
            NoiseSpec {
                delta: 0.1,
                seed: 42,
            },
        )
        .unwrap();
        for (a, b) in noisy.values.iter().zip(&t.values) {
            assert!(((a - b).norm() - 0.1 * b.norm()).abs() < 1e-15);
        }
        assert_eq!(
            noisy.noise,
            Some(NoiseRecord {
                delta: 0.1,
                seed: 42
            })
        );
        let again = add_noise(
            &t,
            NoiseSpec {
                delta: 0.1,
                seed: 42,
            },
        )
        .unwrap();
        assert_eq!(noisy.values, again.values);
        let other = add_noise(
            &t,
            NoiseSpec {
                delta: 0.1,
                seed: 43,
            },
        )
        .unwrap();
        assert_ne!(noisy.values, other.values);
    }

    #[test]
    fn zero_noise_is_bit_exact() {
        let t = point_tensor([0.1, 0.2], vec![0.0], true);
        let n = add_noise(
            &t,
            NoiseSpec {
                delta: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert!(n
            .values
            .iter()
            .zip(&t.values)
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
    }

    #[test]
    fn double_noise_refused() {
        let t = point_tensor([0.1, 0.2], vec![0.0], true);
        let n = add_noise(
            &t,
            NoiseSpec {
                delta: 0.1,
                seed: 1,
            },
        )
        .unwrap();
        assert!(matches!(
            add_noise(
                &n,
                NoiseSpec {
                    delta: 0.1,
                    seed: 2
                }
            ),
            Err(ScatterError::DoubleNoise { .. })
        ));
        assert!(add_noise(
            &t,
            NoiseSpec {
                delta: 1.0,
                seed: 1
            }
        )
        .is_err());
    }

    #[test]
    fn thresholds_nest() {
        let t = point_tensor([0.4, 0.6], vec![0.0], false);
        let f = indicator_potthast_single(&t, 0, &grid()).unwrap();
        let hi = support_estimate(&f, 0.7).unwrap();
        let lo = support_estimate(&f, 0.4).unwrap();
        assert!(hi.iter().zip(&lo).all(|(&h, &l)| !h || l));
        let top = support_estimate(&f, 1.0 - 1e-12).unwrap();
        assert_eq!(top.iter().filter(|&&m| m).count(), 1);
        assert!(support_estimate(&f, 1e-300).unwrap().iter().all(|&m| m));
        assert!(support_estimate(&f, 0.0).is_err());
    }

    #[test]
    fn scaling_keeps_argmax() {
        let mut t = point_tensor([0.4, -0.2], vec![0.0, 180.0], true);
        let g = grid();
        let before: Vec<usize> = [
            IndicatorKind::Potthast1,
            IndicatorKind::Liu1,
            IndicatorKind::PotthastN,
            IndicatorKind::LiuN,
        ]
        .iter()
        .map(|&k| indicator(&t, k, Some(1), &g).unwrap().argmax().0)
        .collect();
        for v in t.values.iter_mut() {
            *v *= C::new(-2.5, 0.7);
        }
        let after: Vec<usize> = [
            IndicatorKind::Potthast1,
            IndicatorKind::Liu1,
            IndicatorKind::PotthastN,
            IndicatorKind::LiuN,
        ]
        .iter()
        .map(|&k| indicator(&t, k, Some(1), &g).unwrap().argmax().0)
        .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn exports_have_expected_shape() {
        let t = point_tensor([0.0, 0.0], vec![0.0], false);
        let f = indicator_potthast_single(&t, 0, &grid()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("f.csv");
        let pgm = dir.path().join("f.pgm");
        f.write_csv(&csv).unwrap();
        f.write_pgm(&pgm).unwrap();
        assert_eq!(
            std::fs::read_to_string(&csv).unwrap().lines().count(),
            1 + 21 * 21
        );
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n21 21\n255\n"));
        assert_eq!(bytes.len(), "P5\n21 21\n255\n".len() + 441);
        assert!(bytes.contains(&255));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "liuN".parse::<IndicatorKind>().unwrap(),
            IndicatorKind::LiuN
        );
        assert_eq!(
            "potthast1".parse::<IndicatorKind>().unwrap(),
            IndicatorKind::Potthast1
        );
        assert!("mf".parse::<IndicatorKind>().is_err());
    }
}
