//! `.amap` files and image export.
//!
//! Binary layout, little-endian:
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `b"AMAP"`               |
//! | 4      | 4         | version (`u32`, currently 1)  |
//! | 8      | 4 × 3     | `K`, `A`, `E` (`u32`)         |
//! | 20     | 4·K·A·E   | `f32` values, `[band][az][el]`|
//!
//! Metadata (bands, grid angles, beamformer, normalization) lives in a JSON sidecar
//! at `<path>.json`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamform::BeamformerKind;
use crate::error::{Error, Result};
use crate::geometry::AngularGrid;
use crate::map::{AcousticMap, BandConfig, Normalization};

pub const MAGIC: &[u8; 4] = b"AMAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapMetadata {
    pub shape: [usize; 3],
    pub bands: BandConfig,
    pub azimuths_deg: Vec<f64>,
    pub elevations_deg: Vec<f64>,
    pub beamformer: BeamformerKind,
    pub normalization: Normalization,
    pub source_id: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Binary payload of a map (header plus `f32` values).
pub fn encode_map(m: &AcousticMap) -> Vec<u8> {
    let (k, a, e) = m.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * k * a * e);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [k, a, e] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in m.to_f32() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the binary payload into `(shape, values)`.
pub fn decode_payload(bytes: &[u8]) -> Result<([usize; 3], Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse(format!(
            "map file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Parse("bad map magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported map version {version}")));
    }
    let shape = [word(8) as usize, word(12) as usize, word(16) as usize];
    let count = shape.iter().product::<usize>();
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * count {
        return Err(Error::Shape(format!(
            "header declares {}×{}×{} values but payload holds {} bytes",
            shape[0],
            shape[1],
            shape[2],
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((shape, values))
}

pub fn metadata_of(m: &AcousticMap) -> MapMetadata {
    let (k, a, e) = m.shape();
    MapMetadata {
        shape: [k, a, e],
        bands: m.bands().clone(),
        azimuths_deg: m.grid().azimuths().to_vec(),
        elevations_deg: m.grid().elevations().to_vec(),
        beamformer: m.beamformer(),
        normalization: m.normalization(),
        source_id: m.source_id().to_string(),
        warnings: m.warnings().to_vec(),
    }
}

pub fn save_map(m: &AcousticMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_map(m)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&metadata_of(m))?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<AcousticMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, values) = decode_payload(&bytes)?;
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: MapMetadata =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("map sidecar: {e}")))?;
    let grid = AngularGrid::new(meta.azimuths_deg, meta.elevations_deg)?;
    let declared = [meta.bands.len(), grid.n_azimuths(), grid.n_elevations()];
    if shape != declared || meta.shape != declared {
        return Err(Error::Shape(format!(
            "payload shape {shape:?} disagrees with sidecar {declared:?}"
        )));
    }
    let mut m = AcousticMap::from_values(
        values.into_iter().map(f64::from).collect(),
        meta.bands,
        grid,
        meta.beamformer,
        meta.source_id,
    )?;
    m.set_normalization(meta.normalization);
    Ok(m)
}

/// 8-bit intensities of one band, image row 0 = highest elevation, column = azimuth.
/// Values are scaled by the band maximum.
pub fn band_image(m: &AcousticMap, band: usize) -> Result<(u32, u32, Vec<u8>)> {
    let (k, na, ne) = m.shape();
    if band >= k {
        return Err(Error::InvalidInput(format!(
            "band index {band} out of range (map has {k} bands)"
        )));
    }
    let slice = m.band_slice(band);
    let peak = slice.iter().copied().fold(0.0, f64::max);
    let mut pixels = vec![0u8; na * ne];
    for a in 0..na {
        for e in 0..ne {
            let v = slice[a * ne + e];
            let level = if peak > 0.0 { (v / peak).clamp(0.0, 1.0) } else { 0.0 };
            let row = ne - 1 - e;
            pixels[row * na + a] = (level * 255.0).round() as u8;
        }
    }
    Ok((na as u32, ne as u32, pixels))
}

/// Writes one band as PNG, or binary PGM when the extension is `.pgm`.
pub fn render_map(m: &AcousticMap, band: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h, pixels) = band_image(m, band)?;
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(&pixels);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    } else {
        let img = image::GrayImage::from_raw(w, h, pixels).expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}
