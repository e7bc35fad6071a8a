//! The `fft-1` JSON archive for far-field tensors.
//!
//! Reals are written with 17 significant digits so that a write/read cycle is
//! bit-exact. `data` holds `[re, im]` pairs with `n` outermost and `l`
//! innermost, the storage order of [`FarFieldTensor`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, ScatterError};
use crate::forward::{FarFieldTensor, NoiseRecord};

pub const FORMAT: &str = "fft-1";

fn num(out: &mut String, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(ScatterError::Format(format!("non-finite value {x}")));
    }
    write!(out, "{x:.16e}").expect("string write");
    Ok(())
}

fn list(out: &mut String, key: &str, xs: &[f64]) -> Result<()> {
    write!(out, "  \"{key}\": [").expect("string write");
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        num(out, x)?;
    }
    out.push_str("],\n");
    Ok(())
}

pub fn to_archive_string(t: &FarFieldTensor) -> Result<String> {
    t.validate()?;
    let mut s = String::with_capacity(64 * t.values.len() + 1024);
    s.push_str("{\n");
    writeln!(s, "  \"format\": \"{FORMAT}\",").expect("string write");
    list(&mut s, "angles_deg", &t.angles_deg)?;
    list(&mut s, "wavenumbers", &t.wavenumbers)?;
    list(&mut s, "directions_deg", &t.directions_deg)?;
    match &t.noise {
        Some(n) => {
            s.push_str("  \"noise\": {\"delta\": ");
            num(&mut s, n.delta)?;
            writeln!(s, ", \"seed\": {}}},", n.seed).expect("string write");
        }
        None => s.push_str("  \"noise\": null,\n"),
    }
    writeln!(
        s,
        "  \"provenance\": {},",
        serde_json::to_string(&t.provenance)?
    )
    .expect("string write");
    s.push_str("  \"data\": [");
    for (i, v) in t.values.iter().enumerate() {
        s.push_str(if i == 0 { "\n    [" } else { ",\n    [" });
        num(&mut s, v.re)?;
        s.push_str(", ");
        num(&mut s, v.im)?;
        s.push(']');
    }
    s.push_str("\n  ]\n}\n");
    Ok(s)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    format: String,
    angles_deg: Vec<f64>,
    wavenumbers: Vec<f64>,
    directions_deg: Vec<f64>,
    noise: Option<NoiseRecord>,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
    data: Vec<[f64; 2]>,
}

pub fn from_archive_str(text: &str) -> Result<FarFieldTensor> {
    let doc: Doc = serde_json::from_str(text).map_err(|e| ScatterError::Format(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(ScatterError::Format(format!(
            "expected format {FORMAT:?}, found {:?}",
            doc.format
        )));
    }
    let want = doc.angles_deg.len() * doc.wavenumbers.len() * doc.directions_deg.len();
    if doc.data.len() != want {
        return Err(ScatterError::Format(format!(
            "data has {} entries, axes require {want}",
            doc.data.len()
        )));
    }
    let t = FarFieldTensor {
        angles_deg: doc.angles_deg,
        wavenumbers: doc.wavenumbers,
        directions_deg: doc.directions_deg,
        values: doc
            .data
            .iter()
            .map(|&[re, im]| num_complex::Complex64::new(re, im))
            .collect(),
        noise: doc.noise,
        provenance: doc.provenance,
    };
    t.validate()
        .map_err(|e| ScatterError::Format(e.to_string()))?;
    Ok(t)
}

pub fn write_archive(path: &Path, t: &FarFieldTensor) -> Result<()> {
    std::fs::write(path, to_archive_string(t)?)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<FarFieldTensor> {
    from_archive_str(&std::fs::read_to_string(path)?)
}
