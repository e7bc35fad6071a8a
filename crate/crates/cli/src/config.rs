use std::path::Path;

use scatter2d::forward::{BoundaryCondition, Discretization, ScattererConfig};
use scatter2d::geometry::{make_grid, SamplingGrid};
use scatter2d::sampling::{IndicatorKind, NoiseSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A configuration problem, located by a JSON pointer.
#[derive(Debug)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let at = if self.pointer.is_empty() {
            "/"
        } else {
            &self.pointer
        };
        write!(f, "config error at {at}: {}", self.message)
    }
}

fn err(pointer: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        pointer: pointer.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Number of equispaced observation angles.
    pub angles: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub n_freq: usize,
    pub directions_deg: Vec<f64>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            angles: 64,
            k_min: 0.1,
            k_max: 2.0,
            n_freq: 10,
            directions_deg: vec![180.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// `[xmin, xmax, ymin, ymax]`
    pub bbox: [f64; 4],
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            bbox: [-6.0, 6.0, -6.0, 6.0],
            n: 121,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSpec {
    pub indicator: IndicatorKind,
    pub direction: Option<usize>,
    /// Level of the support mask on the max-normalised field.
    pub threshold: f64,
}

impl Default for ReconstructSpec {
    fn default() -> Self {
        ReconstructSpec {
            indicator: IndicatorKind::Liu1,
            direction: Some(0),
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scatterer: ScattererConfig,
    pub discretization: Discretization,
    pub dataset: DatasetSpec,
    pub noise: Option<NoiseSpec>,
    pub grid: GridSpec,
    pub reconstruct: ReconstructSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scatterer: ScattererConfig::benchmark(BoundaryCondition::Soft, 0.5),
            discretization: Discretization::default(),
            dataset: DatasetSpec::default(),
            noise: None,
            grid: GridSpec::default(),
            reconstruct: ReconstructSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = e
                .path()
                .iter()
                .filter_map(|s| match s {
                    serde_path_to_error::Segment::Seq { index } => Some(index.to_string()),
                    serde_path_to_error::Segment::Map { key } => Some(key.clone()),
                    serde_path_to_error::Segment::Enum { variant } => Some(variant.clone()),
                    serde_path_to_error::Segment::Unknown => None,
                })
                .fold(String::new(), |acc, s| format!("{acc}/{s}"));
            err(&pointer, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(r) = self.scatterer.radius {
            if !(r > 0.0) {
                return Err(err("/scatterer/radius", "must be positive"));
            }
        }
        let d = &self.discretization;
        if d.n_boundary < 8 || !d.n_boundary.is_multiple_of(2) {
            return Err(err(
                "/discretization/n_boundary",
                "must be an even number ≥ 8",
            ));
        }
        if !(d.h > 0.0) {
            return Err(err("/discretization/h", "must be positive"));
        }
        let s = &self.dataset;
        if s.angles == 0 {
            return Err(err("/dataset/angles", "must be positive"));
        }
        if !(s.k_min > 0.0) {
            return Err(err("/dataset/k_min", "must be positive"));
        }
        if s.n_freq == 0 {
            return Err(err("/dataset/n_freq", "must be positive"));
        }
        if s.n_freq > 1 && !(s.k_max > s.k_min) {
            return Err(err("/dataset/k_max", "must exceed k_min"));
        }
        if s.directions_deg.is_empty() {
            return Err(err(
                "/dataset/directions_deg",
                "needs at least one direction",
            ));
        }
        if let Some((i, _)) = s
            .directions_deg
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite())
        {
            return Err(err(
                &format!("/dataset/directions_deg/{i}"),
                "must be finite",
            ));
        }
        if let Some(n) = &self.noise {
            n.validate()
                .map_err(|e| err("/noise/delta", e.to_string()))?;
        }
        self.sampling_grid().map_err(|e| err("/grid", e.message))?;
        let r = &self.reconstruct;
        if !(r.threshold > 0.0 && r.threshold < 1.0) {
            return Err(err("/reconstruct/threshold", "must lie in (0, 1)"));
        }
        if r.indicator.is_single() {
            match r.direction {
                None => {
                    return Err(err(
                        "/reconstruct/direction",
                        "single-direction indicators need a direction index",
                    ))
                }
                Some(n) if n >= s.directions_deg.len() => {
                    return Err(err(
                        "/reconstruct/direction",
                        "index exceeds the dataset directions",
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn sampling_grid(&self) -> Result<SamplingGrid, ConfigError> {
        make_grid(self.grid.bbox, self.grid.n).map_err(|e| err("/grid", e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
