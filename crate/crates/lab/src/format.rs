//! Field files.
//!
//! Binary layout, all little-endian:
//!
//! | offset | type      | content                                   |
//! |--------|-----------|-------------------------------------------|
//! | 0      | `[u8; 4]` | magic `KPLF`                              |
//! | 4      | `u32`     | format version (1)                        |
//! | 8      | `u32`     | kind: 0 spatial, 1 space-time             |
//! | 12     | `u64`     | `K`                                       |
//! | 20     | `u64`     | `M`                                       |
//! | 28     | `u64`     | `J` (0 for spatial fields)                |
//! | 36     | `f64`     | `T_w` (0 for spatial fields)              |
//! | 44     | `u64`     | coefficient count `n`                     |
//! | 52     | `f64` × 2n | `(re, im)` pairs in storage order        |
//!
//! Storage order is `k` slowest, then `η₁`, `η₂`, and `τ_j` fastest, each
//! index running from its lower bound up. The JSON debug form lists nonzero
//! modes explicitly.

use std::io::{Read, Write};

use kplab_core::field::FrequencyField;
use kplab_core::{Complex64, FreqPoint, GridSpec, SpaceTimeSpectrum, SpatialGrid, SpatialSpectrum};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"KPLF";
const VERSION: u32 = 1;
const HEADER: usize = 52;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed field file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Field(#[from] kplab_core::Error),
}

fn bad(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

/// Either kind of field, as read from a file.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Spatial(SpatialSpectrum),
    SpaceTime(SpaceTimeSpectrum),
}

impl From<SpatialSpectrum> for Field {
    fn from(u: SpatialSpectrum) -> Self {
        Field::Spatial(u)
    }
}

impl From<SpaceTimeSpectrum> for Field {
    fn from(u: SpaceTimeSpectrum) -> Self {
        Field::SpaceTime(u)
    }
}

impl Field {
    fn parts(&self) -> (u32, [u64; 3], f64, &[Complex64]) {
        match self {
            Field::Spatial(u) => (0, [u.grid.k_max as u64, u.grid.m_max as u64, 0], 0.0, u.coeffs()),
            Field::SpaceTime(u) => {
                let g = u.grid;
                (1, [g.k_max as u64, g.m_max as u64, g.j_max as u64], g.t_window, u.coeffs())
            }
        }
    }

    pub fn into_spatial(self) -> Result<SpatialSpectrum, FormatError> {
        match self {
            Field::Spatial(u) => Ok(u),
            Field::SpaceTime(_) => Err(bad("expected a spatial field, found a space-time field")),
        }
    }

    pub fn into_space_time(self) -> Result<SpaceTimeSpectrum, FormatError> {
        match self {
            Field::SpaceTime(u) => Ok(u),
            Field::Spatial(_) => Err(bad("expected a space-time field, found a spatial field")),
        }
    }
}

pub fn write_binary(w: &mut impl Write, field: &Field) -> Result<(), FormatError> {
    let (kind, [k, m, j], tw, coeffs) = field.parts();
    let mut buf = Vec::with_capacity(HEADER + 16 * coeffs.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&kind.to_le_bytes());
    for x in [k, m, j] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf.extend_from_slice(&tw.to_le_bytes());
    buf.extend_from_slice(&(coeffs.len() as u64).to_le_bytes());
    for c in coeffs {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(r: &mut impl Read) -> Result<Field, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(bad(format!("unsupported version {}", u32_at(4))));
    }
    let kind = u32_at(8);
    let (k, m, j, tw, n) = (u64_at(12), u64_at(20), u64_at(28), f64_at(36), u64_at(44));
    let n = usize::try_from(n).map_err(|_| bad("coefficient count overflows"))?;
    if bytes.len() != HEADER + 16 * n {
        return Err(bad(format!("expected {} payload bytes, found {}", 16 * n, bytes.len() - HEADER)));
    }
    let coeffs: Vec<Complex64> = (0..n).map(|i| Complex64::new(f64_at(HEADER + 16 * i), f64_at(HEADER + 16 * i + 8))).collect();
    let dim = |x: u64| usize::try_from(x).map_err(|_| bad("grid bound overflows"));
    match kind {
        0 => {
            let g = SpatialGrid::new(dim(k)?, dim(m)?)?;
            Ok(Field::Spatial(SpatialSpectrum::from_coeffs(g, coeffs)?))
        }
        1 => {
            let g = GridSpec::new(dim(k)?, dim(m)?, dim(j)?, tw)?;
            Ok(Field::SpaceTime(SpaceTimeSpectrum::from_coeffs(g, coeffs)?))
        }
        _ => Err(bad(format!("unknown field kind {kind}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct JsonMode {
    k: i64,
    eta: [i64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    j: Option<i64>,
    re: f64,
    im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct JsonField {
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "J", default)]
    j: usize,
    #[serde(default)]
    t_window: f64,
    modes: Vec<JsonMode>,
}

pub fn to_json(field: &Field) -> Result<String, FormatError> {
    let nz = |c: Complex64| c.re != 0.0 || c.im != 0.0;
    let doc = match field {
        Field::Spatial(u) => JsonField {
            kind: "spatial".into(),
            k: u.grid.k_max,
            m: u.grid.m_max,
            j: 0,
            t_window: 0.0,
            modes: u
                .modes()
                .filter(|(_, c)| nz(*c))
                .map(|(xi, c)| JsonMode { k: xi.k, eta: xi.eta, j: None, re: c.re, im: c.im })
                .collect(),
        },
        Field::SpaceTime(u) => JsonField {
            kind: "space_time".into(),
            k: u.grid.k_max,
            m: u.grid.m_max,
            j: u.grid.j_max,
            t_window: u.grid.t_window,
            modes: u
                .modes()
                .filter(|(_, _, c)| nz(*c))
                .map(|(xi, j, c)| JsonMode { k: xi.k, eta: xi.eta, j: Some(j), re: c.re, im: c.im })
                .collect(),
        },
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn from_json(s: &str) -> Result<Field, FormatError> {
    let doc: JsonField = serde_json::from_str(s)?;
    match doc.kind.as_str() {
        "spatial" => {
            let mut u = SpatialSpectrum::zeros(SpatialGrid::new(doc.k, doc.m)?);
            for md in doc.modes {
                u.set(FreqPoint::new(md.k, md.eta), Complex64::new(md.re, md.im))?;
            }
            Ok(Field::Spatial(u))
        }
        "space_time" => {
            let mut u = SpaceTimeSpectrum::zeros(GridSpec::new(doc.k, doc.m, doc.j, doc.t_window)?);
            for md in doc.modes {
                let j = md.j.ok_or_else(|| bad("space-time mode without 'j'"))?;
                u.set(FreqPoint::new(md.k, md.eta), j, Complex64::new(md.re, md.im))?;
            }
            Ok(Field::SpaceTime(u))
        }
        other => Err(bad(format!("unknown kind '{other}'"))),
    }
}

/// Reads either form, choosing by the leading bytes.
pub fn read_path(path: &std::path::Path) -> Result<Field, FormatError> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        read_binary(&mut bytes.as_slice())
    } else {
        let s = String::from_utf8(bytes).map_err(|_| bad("neither binary nor JSON"))?;
        from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let u = one_mode();
        let mut buf = Vec::new();
        write_binary(&mut buf, &Field::Spatial(u.clone())).unwrap();
        assert_eq!(&buf[..4], b"KPLF");
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 2);
        assert_eq!(buf.len(), HEADER + 16 * u.grid.len());
        // (k, η) = (1, (0, 0)) sits at ((1 + 1)·5 + 2)·5 + 2 = 62.
        let o = HEADER + 16 * 62;
        assert_eq!(f64::from_le_bytes(buf[o..o + 8].try_into().unwrap()), 0.5);
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridSpec::new(2, 1, 3, 1.5).unwrap();
        let f = Field::SpaceTime(SpaceTimeSpectrum::random_gaussian(g, &mut rng));
        let mut buf = Vec::new();
        write_binary(&mut buf, &f).unwrap();
        assert_eq!(read_binary(&mut buf.as_slice()).unwrap(), f);
        assert_eq!(from_json(&to_json(&f).unwrap()).unwrap(), f);
        let s = Field::Spatial(SpatialSpectrum::random_gaussian(g.spatial(), &mut rng, true));
        assert_eq!(from_json(&to_json(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn rejects_damage() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &Field::Spatial(one_mode())).unwrap();
        assert!(read_binary(&mut &buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(read_binary(&mut buf.as_slice()).is_err());
    }

    fn one_mode() -> SpatialSpectrum {
        let mut u = SpatialSpectrum::zeros(SpatialGrid::new(1, 2).unwrap());
        u.set(FreqPoint::new(1, [0, 0]), Complex64::new(0.5, 0.0)).unwrap();
        u
    }
}
