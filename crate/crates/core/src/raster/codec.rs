use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Fingerprint, Grid, TamperMask, Tile};
use crate::{Error, Result};

/// The only payload encoding: row-major IEEE-754 binary32, little-endian.
pub const DTYPE: &str = "f32le";

/// JSON metadata stored next to every `.f32` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub height: usize,
    pub width: usize,
    pub product_id: String,
    #[serde(default)]
    pub provenance: Vec<String>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor_id: Option<String>,
}

/// `tile.f32` -> `tile.json`.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub(crate) fn write_payload(path: &Path, grid: &Grid, meta: &Sidecar) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(grid.len() * 4);
    for v in grid.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(meta).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub(crate) fn read_payload(path: &Path) -> Result<(Grid, Sidecar)> {
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar = serde_json::from_slice(&text).map_err(|e| Error::json(&side, e))?;
    if meta.dtype != DTYPE {
        return Err(Error::Format {
            path: side,
            reason: format!("dtype `{}` (only `{DTYPE}` is supported)", meta.dtype),
        });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta.height * meta.width * 4;
    if meta.height == 0 || meta.width == 0 || bytes.len() != expected {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            reason: format!(
                "{} payload bytes, sidecar declares {}x{} ({expected} bytes)",
                bytes.len(),
                meta.height,
                meta.width
            ),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((Grid::new(meta.height, meta.width, data)?, meta))
}

pub fn save_tile(tile: &Tile, path: &Path) -> Result<()> {
    let meta = Sidecar {
        height: tile.height(),
        width: tile.width(),
        product_id: tile.product_id().to_string(),
        provenance: tile.provenance().to_vec(),
        dtype: DTYPE.into(),
        extractor_id: None,
    };
    write_payload(path, tile.pixels(), &meta)
}

pub fn load_tile(path: &Path) -> Result<Tile> {
    let (grid, meta) = read_payload(path)?;
    Tile::new(grid, meta.product_id, meta.provenance)
}

pub fn save_fingerprint(fp: &Fingerprint, path: &Path) -> Result<()> {
    let meta = Sidecar {
        height: fp.height(),
        width: fp.width(),
        product_id: String::new(),
        provenance: vec![format!("extract:{}", fp.extractor_id())],
        dtype: DTYPE.into(),
        extractor_id: Some(fp.extractor_id().to_string()),
    };
    write_payload(path, fp.values(), &meta)
}

/// Loads any `.f32` payload as a fingerprint; tiles load with an empty extractor id.
pub fn load_fingerprint(path: &Path) -> Result<Fingerprint> {
    let (grid, meta) = read_payload(path)?;
    Fingerprint::new(grid, meta.extractor_id.unwrap_or_default())
}

/// Binary PGM (P5, maxval 255): 0 pristine, 255 spliced.
pub fn save_mask(mask: &TamperMask, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::with_capacity(mask.bits().len() + 32);
    write!(out, "P5\n{} {}\n255\n", mask.width(), mask.height()).expect("write to Vec");
    out.extend(mask.bits().iter().map(|&b| if b == 1 { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<TamperMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };

    // Header: magic, width, height, maxval, separated by whitespace or comments,
    // then exactly one whitespace byte before the raster.
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if pos >= bytes.len() && fields[0] == "P5" {
        return Err(format_err("missing raster".into()));
    }
    pos += 1;

    if fields[0] != "P5" {
        return Err(format_err(format!("magic `{}` is not P5", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("bad header field `{s}`")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format_err(format!("maxval {maxval}, expected 255")));
    }
    let raster = &bytes[pos.min(bytes.len())..];
    if raster.len() != width * height {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            reason: format!("{} raster bytes for {width}x{height}", raster.len()),
        });
    }
    let mut bits = Vec::with_capacity(raster.len());
    for (i, &b) in raster.iter().enumerate() {
        match b {
            0 => bits.push(0),
            255 => bits.push(1),
            v => {
                return Err(format_err(format!(
                    "pixel ({}, {}) has value {v}; masks hold only 0 and 255",
                    i / width,
                    i % width
                )))
            }
        }
    }
    TamperMask::new(height, width, bits)
}
