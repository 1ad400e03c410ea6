//! Binary matrix files and the tab-separated cohort manifest.
//!
//! Matrix layout (little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 0..2  | magic, `b"MX"` (f32 payload) or `b"MD"` (f64 payload) |
//! | 2..6  | rows, `u32`                               |
//! | 6..8  | cols, `u16`                               |
//! | 8..   | `rows * cols` values, row-major           |

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC_F32: [u8; 2] = *b"MX";
pub const MAGIC_F64: [u8; 2] = *b"MD";
pub const HEADER_LEN: usize = 8;

pub const MANIFEST_HEADER: &str = "sample_id\tbag\tgenomic\ttime\tcensor\tfold";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

pub fn encode_matrix(m: &Matrix, precision: Precision) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::Config("too many rows".into()))?;
    let cols = u16::try_from(m.cols()).map_err(|_| Error::Config("too many columns".into()))?;
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + m.len() * width);
    out.extend_from_slice(match precision {
        Precision::F32 => &MAGIC_F32,
        Precision::F64 => &MAGIC_F64,
    });
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        match precision {
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8], what: &str) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::load(what, "truncated header"));
    }
    let precision = match [bytes[0], bytes[1]] {
        MAGIC_F32 => Precision::F32,
        MAGIC_F64 => Precision::F64,
        other => return Err(Error::load(what, format!("bad magic {other:?}"))),
    };
    let rows = u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize;
    let cols = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
    let width = if precision == Precision::F32 { 4 } else { 8 };
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * width {
        return Err(Error::load(
            what,
            format!(
                "expected {} payload bytes for {rows}x{cols}, found {}",
                rows * cols * width,
                payload.len()
            ),
        ));
    }
    let data: Vec<f64> = match precision {
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::load(what, "non-finite value"));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_matrix(path: &Path, m: &Matrix, precision: Precision) -> Result<()> {
    let bytes = encode_matrix(m, precision)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, &path.display().to_string())
}

/// Rounds every entry through `f32`, i.e. the values an `MX` file holds.
pub fn quantize_f32(m: &Matrix) -> Matrix {
    m.map(|v| v as f32 as f64)
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub bag: PathBuf,
    pub genomic: Option<PathBuf>,
    pub time: f64,
    pub censor: bool,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            let genomic = e
                .genomic
                .as_ref()
                .map_or_else(|| "-".to_string(), |p| p.display().to_string());
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.sample_id,
                e.bag.display(),
                genomic,
                e.time,
                u8::from(e.censor),
                e.fold
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => {
                return Err(Error::load(
                    "manifest",
                    format!("first line must be `{MANIFEST_HEADER}`"),
                ))
            }
        }
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let what = format!("manifest line {}", lineno + 1);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::load(
                    what,
                    format!("expected 6 columns, got {}", cols.len()),
                ));
            }
            let time: f64 = cols[3]
                .parse()
                .map_err(|_| Error::load(&what, format!("bad time `{}`", cols[3])))?;
            if !(time > 0.0 && time.is_finite()) {
                return Err(Error::load(
                    &what,
                    format!("time must be positive, got {time}"),
                ));
            }
            let censor = match cols[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::load(
                        &what,
                        format!("censor must be 0 or 1, got `{other}`"),
                    ))
                }
            };
            let fold: usize = cols[5]
                .parse()
                .map_err(|_| Error::load(&what, format!("bad fold `{}`", cols[5])))?;
            entries.push(ManifestEntry {
                sample_id: cols[0].to_string(),
                bag: PathBuf::from(cols[1]),
                genomic: (cols[2] != "-").then(|| PathBuf::from(cols[2])),
                time,
                censor,
                fold,
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
