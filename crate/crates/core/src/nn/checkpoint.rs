//! Binary tensor blob plus JSON manifest.
//!
//! Blob: `b"ACNN"`, `u32` version, `u64` value count, then every tensor of
//! [`ModelParams::named_tensors`] as little-endian `f32`, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, ModelParams};
use super::train::{History, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::MicArrayGeometry;
use crate::map::{BandConfig, MapConfig};
use crate::mapio::sidecar_path;

pub const MAGIC: &[u8; 4] = b"ACNN";
pub const VERSION: u32 = 1;

/// Everything that determines how a recording becomes network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub sample_rate: u32,
    pub geometry: MicArrayGeometry,
    pub map: MapConfig,
    /// Bands as resolved for `sample_rate`.
    pub bands: BandConfig,
}

impl Preprocessing {
    pub fn new(geometry: &MicArrayGeometry, sample_rate: u32, map: &MapConfig) -> Self {
        Self {
            sample_rate,
            geometry: geometry.clone(),
            map: map.clone(),
            bands: map.bands_for(sample_rate),
        }
    }

    /// `Err(Mismatch)` naming the first differing field.
    pub fn ensure_matches(&self, request: &Preprocessing) -> Result<()> {
        let fields: [(&str, bool); 8] = [
            ("sample rate", self.sample_rate == request.sample_rate),
            ("array geometry", self.geometry == request.geometry),
            ("STFT settings", self.map.stft == request.map.stft),
            ("beamformer", self.map.beamformer == request.map.beamformer),
            (
                "grid dimensions",
                (self.map.n_azimuths, self.map.n_elevations) == (request.map.n_azimuths, request.map.n_elevations),
            ),
            ("normalization", self.map.normalization == request.map.normalization),
            ("band configuration", self.bands == request.bands),
            ("map configuration", self.map == request.map),
        ];
        match fields.iter().find(|(_, ok)| !ok) {
            None => Ok(()),
            Some((name, _)) => Err(Error::Mismatch(format!("checkpoint {name} differs from the requested preprocessing"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub parameter_count: usize,
    pub tensors: Vec<TensorEntry>,
    pub preprocessing: Preprocessing,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub history: Option<History>,
}

pub fn manifest_of(params: &ModelParams<f32>, preprocessing: &Preprocessing) -> CheckpointManifest {
    CheckpointManifest {
        format_version: VERSION,
        architecture: params.arch.clone(),
        parameter_count: params.parameter_count(),
        tensors: params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
        preprocessing: preprocessing.clone(),
        train_config: None,
        history: None,
    }
}

pub fn encode_params(params: &ModelParams<f32>) -> Vec<u8> {
    let tensors = params.named_tensors();
    let count: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(16 + 4 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8], manifest: &CheckpointManifest) -> Result<ModelParams<f32>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Parse("not a checkpoint blob (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + 4 * count {
        return Err(Error::Parse(format!(
            "checkpoint blob holds {} bytes of values, header declares {count} values",
            bytes.len() - 16
        )));
    }
    let mut params = ModelParams::<f32>::zeros(&manifest.architecture)?;
    let expected: Vec<TensorEntry> = manifest_of(&params, &manifest.preprocessing).tensors;
    if expected != manifest.tensors {
        return Err(Error::Mismatch("manifest tensor list does not match its architecture".into()));
    }
    let total: usize = expected.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if total != count {
        return Err(Error::Mismatch(format!("architecture needs {total} values, blob has {count}")));
    }
    let mut values = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("counted");
        }
    }
    if !params.all_finite() {
        return Err(Error::Numerical("checkpoint contains non-finite values".into()));
    }
    Ok(params)
}

/// Writes `path` (blob) and `path.json` (manifest).
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams<f32>, manifest: &CheckpointManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams<f32>, CheckpointManifest)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = decode_params(&bytes, &manifest)?;
    Ok((params, manifest))
}

/// Loads a checkpoint and refuses it unless its preprocessing equals `request`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, request: &Preprocessing) -> Result<(ModelParams<f32>, CheckpointManifest)> {
    let (p, m) = load_checkpoint(path)?;
    m.preprocessing.ensure_matches(request)?;
    Ok((p, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::BeamformerKind;
    use crate::geometry::builtin_geometry;
    use crate::map::Normalization;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (ModelParams<f32>, CheckpointManifest) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::<f32>::init(&Architecture::stock(4), &mut rng).unwrap();
        let g = builtin_geometry("hex-6", 0.05).unwrap();
        let pre = Preprocessing::new(&g, 44100, &MapConfig::default());
        let m = manifest_of(&p, &pre);
        (p, m)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (p, m) = fixture();
        save_checkpoint(&path, &p, &m).unwrap();
        let (q, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(m, m2);
        let path2 = dir.path().join("again.ckpt");
        save_checkpoint(&path2, &q, &m2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
        assert_eq!(m.tensors.len(), p.named_tensors().len());
        assert_eq!(m.parameter_count, 6312);
    }

    #[test]
    fn preprocessing_mismatch_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let (p, m) = fixture();
        save_checkpoint(&path, &p, &m).unwrap();
        let g = builtin_geometry("hex-6", 0.05).unwrap();
        assert!(load_checkpoint_for(&path, &Preprocessing::new(&g, 44100, &MapConfig::default())).is_ok());

        let cases = [
            Preprocessing::new(&g, 16000, &MapConfig::default()),
            Preprocessing::new(&builtin_geometry("linear-4", 0.05).unwrap(), 44100, &MapConfig::default()),
            Preprocessing::new(
                &g,
                44100,
                &MapConfig {
                    normalization: Normalization::None,
                    ..MapConfig::default()
                },
            ),
            Preprocessing::new(
                &g,
                44100,
                &MapConfig {
                    beamformer: BeamformerKind::mvdr(),
                    ..MapConfig::default()
                },
            ),
        ];
        for req in cases {
            assert!(matches!(load_checkpoint_for(&path, &req), Err(Error::Mismatch(_))));
        }
    }

    #[test]
    fn corrupt_blobs_rejected() {
        let (p, m) = fixture();
        let bytes = encode_params(&p);
        assert!(decode_params(&bytes[..bytes.len() - 4], &m).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_params(&bad, &m).is_err());
        let mut other = m.clone();
        other.architecture = Architecture::stock(3);
        assert!(decode_params(&bytes, &other).is_err());
    }
}
