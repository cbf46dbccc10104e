use std::fs;
use std::path::{Path, PathBuf};

use acmap::audio::{read_wav, segment, write_wav, PcmFormat};
use acmap::beamform::BeamformerKind;
use acmap::eval::{
    evaluate, evaluate_checkpoint, extract_dataset, load_manifest, make_splits, write_manifest, Device, Environment,
    EvalConfig, EvalReport, Label, ManifestEntry, Split, SplitMode,
};
use acmap::geometry::{resolve_geometry, Direction, MicArrayGeometry};
use acmap::map::{AcousticMapper, Band, BandConfig, MapConfig, Normalization};
use acmap::mapio::{load_map, render_map, save_map};
use acmap::nn::checkpoint::manifest_of;
use acmap::nn::{load_checkpoint, save_checkpoint, train_model, Dataset, Precision, Preprocessing, TrainConfig};
use acmap::sim::{make_synthetic_dataset, simulate_plane_wave, synthetic_recordings, PlaneWaveSpec, SourceSignal, SyntheticConfig};
use acmap::stft::{StftConfig, Window};
use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::{
    ArrayArgs, EvalArgs, InspectArgs, MapArgs, MapOptions, NormalizationArg, SampleFormatArg, SimulateArgs, SplitOptions,
    TrainArgs, TrainOptions,
};
use crate::UsageError;

/// Synthetic recordings are short, so their default STFT is smaller than the general one.
const SYNTHETIC_STFT: StftConfig = StftConfig {
    n_fft: 256,
    hop: 128,
    window: Window::Hann,
};

fn usage<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| UsageError(format!("--{flag} {value}: {e}")).into())
}

fn geometry(a: &ArrayArgs) -> Result<MicArrayGeometry> {
    resolve_geometry(&a.geometry, a.spacing).with_context(|| format!("geometry '{}'", a.geometry))
}

fn parse_bands(spec: &str) -> Result<BandConfig> {
    let bands = spec
        .split(',')
        .enumerate()
        .map(|(i, part)| {
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| UsageError(format!("--bands: '{part}' is not lo-hi")))?;
            Ok(Band::new(format!("band{}", i + 1), usage("bands", lo.trim())?, usage("bands", hi.trim())?))
        })
        .collect::<Result<Vec<_>>>()?;
    BandConfig::new(bands).map_err(|e| UsageError(format!("--bands: {e}")).into())
}

pub fn map_config(o: &MapOptions, base_stft: StftConfig) -> Result<MapConfig> {
    let mut beamformer: BeamformerKind = usage("beamformer", &o.beamformer)?;
    match (&mut beamformer, o.diag_load, o.phat_eps) {
        (BeamformerKind::Mvdr { diag_load_rel }, Some(v), _) => *diag_load_rel = v,
        (BeamformerKind::SrpPhat { eps }, _, Some(v)) => *eps = v,
        (_, Some(_), _) => return Err(UsageError("--diag-load applies to --beamformer mvdr only".into()).into()),
        (_, _, Some(_)) => return Err(UsageError("--phat-eps applies to --beamformer srp-phat only".into()).into()),
        _ => {}
    }
    beamformer.validate().map_err(|e| UsageError(e.to_string()))?;
    let stft = StftConfig::new(
        o.n_fft.unwrap_or(base_stft.n_fft),
        o.hop.unwrap_or(o.n_fft.map_or(base_stft.hop, |n| n / 2)),
        usage("window", &o.window)?,
    )
    .map_err(|e| UsageError(e.to_string()))?;
    let normalization = match o.normalization {
        NormalizationArg::Max => Normalization::PerBandMax,
        NormalizationArg::Log => {
            if !(o.floor_db.is_finite() && o.floor_db > 0.0) {
                return Err(UsageError(format!("--floor-db must be positive, got {}", o.floor_db)).into());
            }
            Normalization::PerBandLog { floor_db: o.floor_db }
        }
        NormalizationArg::None => Normalization::None,
    };
    Ok(MapConfig {
        stft,
        beamformer,
        n_azimuths: o.azimuths,
        n_elevations: o.elevations,
        bands: o.bands.as_deref().map(parse_bands).transpose()?,
        normalization,
    })
}

fn train_config(o: &TrainOptions, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.lr,
        optimizer: usage("optimizer", &o.optimizer)?,
        mixup_alpha: o.mixup_alpha,
        seed,
        precision: if o.f64 { Precision::F64 } else { Precision::F32 },
        target_train_accuracy: o.target_accuracy,
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn split_mode(o: &SplitOptions) -> Result<SplitMode> {
    match (o.mode.as_str(), &o.holdout) {
        ("env-dependent", None) => Ok(SplitMode::EnvDependent),
        ("env-dependent", Some(_)) => Err(UsageError("--holdout applies to --mode env-independent only".into()).into()),
        ("env-independent", Some(env)) => Ok(SplitMode::EnvIndependent(usage::<Environment>("holdout", env)?)),
        ("env-independent", None) => Err(UsageError("--mode env-independent needs --holdout".into()).into()),
        (other, _) => Err(UsageError(format!("--mode {other}: expected env-dependent or env-independent")).into()),
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(a: &SimulateArgs, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let format = match a.format {
        SampleFormatArg::Int16 => PcmFormat::Int16,
        SampleFormatArg::Int32 => PcmFormat::Int32,
        SampleFormatArg::Float32 => PcmFormat::Float32,
    };
    match (&a.out, a.dataset, &a.out_dir) {
        (Some(out), None, None) => {
            let g = geometry(&a.array)?;
            let spec = PlaneWaveSpec {
                direction: Direction::new(a.az, a.el).map_err(|e| UsageError(e.to_string()))?,
                signal: usage::<SourceSignal>("signal", &a.signal)?,
                amplitude: a.amplitude,
                snr_db: a.snr,
                duration_s: a.duration,
                sample_rate: a.fs,
            };
            spec.validate().map_err(|e| UsageError(e.to_string()))?;
            let seg = simulate_plane_wave(&g, &spec, &mut rng)?;
            write_wav(&seg, out, format)?;
            log::info!("wrote {} ({} channels, {} samples)", out.display(), seg.channel_count(), seg.len());
            Ok(())
        }
        (None, Some(n), Some(dir)) => simulate_dataset(a, n, dir, format, &mut rng),
        _ => Err(UsageError("simulate needs --out FILE or --dataset N --out-dir DIR".into()).into()),
    }
}

/// Writes `2n` recordings labeled by source hemisphere (positive azimuth counts as
/// genuine), spread over the four environments with a quarter of each in the test split.
fn simulate_dataset(a: &SimulateArgs, n: usize, dir: &Path, format: PcmFormat, rng: &mut ChaCha8Rng) -> Result<()> {
    if n == 0 {
        return Err(UsageError("--dataset must be ≥ 1".into()).into());
    }
    let device: Device = usage("device", &a.device)?;
    let cfg = SyntheticConfig {
        geometry: a.array.geometry.clone(),
        spacing_m: a.array.spacing,
        sample_rate: a.fs,
        duration_s: a.duration,
        snr_db: a.snr.unwrap_or(SyntheticConfig::default().snr_db),
        ..SyntheticConfig::default()
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let recordings = synthetic_recordings(n, rng, &cfg)?;
    let mut entries = Vec::with_capacity(recordings.len());
    for (i, r) in recordings.iter().enumerate() {
        let name = format!("rec-{i:04}.wav");
        write_wav(&r.segment, dir.join(&name), format)?;
        entries.push(ManifestEntry {
            wav_path: name,
            label: if r.label == 1 { Label::Genuine } else { Label::Replay },
            device,
            environment: Environment::ALL[(i / 2) % Environment::ALL.len()],
            speaker_id: format!("s{}", i / 8),
            split: if (i / 8) % 4 == 3 { Split::Test } else { Split::Train },
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&entries, &manifest)?;
    println!("{}", manifest.display());
    Ok(())
}

fn numbered(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{i}"),
    };
    path.with_file_name(name)
}

pub fn map(a: &MapArgs) -> Result<()> {
    let cfg = map_config(&a.map, StftConfig::default())?;
    let g = geometry(&a.array)?;
    let rec = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mapper = AcousticMapper::new(&g, rec.sample_rate(), cfg)?;
    let pieces = match a.max_seconds {
        Some(s) => segment(&rec, s, mapper.config().stft.n_fft).map_err(|e| UsageError(e.to_string()))?,
        None => vec![rec],
    };
    let many = pieces.len() > 1;
    for (i, piece) in pieces.iter().enumerate() {
        let m = mapper.map(piece)?;
        let out = if many { numbered(&a.out, i) } else { a.out.clone() };
        save_map(&m, &out)?;
        if let Some(png) = &a.png {
            let png = if many { numbered(png, i) } else { png.clone() };
            render_map(&m, a.png_band, &png).map_err(|e| UsageError(e.to_string()))?;
        }
        println!("{}", out.display());
    }
    Ok(())
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let tc = train_config(&a.train, seed)?;
    let (train_set, validation, pre) = match (a.synthetic, &a.split.manifest) {
        (Some(n), None) => {
            if n == 0 {
                return Err(UsageError("--synthetic must be ≥ 1".into()).into());
            }
            let g = geometry(&a.array)?;
            let cfg = SyntheticConfig {
                geometry: a.array.geometry.clone(),
                spacing_m: a.array.spacing,
                sample_rate: a.fs,
                map: map_config(&a.map, SYNTHETIC_STFT)?,
                ..SyntheticConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let maps = make_synthetic_dataset(n, &mut rng, &cfg)?;
            let pre = Preprocessing::new(&g, cfg.sample_rate, &cfg.map);
            (Dataset::from_labeled(&maps)?, None, pre)
        }
        (None, Some(manifest)) => {
            let device: Device = usage("device", &a.split.device)?;
            let entries = load_manifest(manifest)?;
            let (tr, te) = make_splits(&entries, Some(device), split_mode(&a.split)?)?;
            let g = geometry(&a.array)?;
            let cfg = map_config(&a.map, StftConfig::default())?;
            let dir = manifest_dir(manifest);
            let (train_set, pre) = extract_dataset(&tr, &dir, &g, &cfg)?;
            let (test_set, test_pre) = extract_dataset(&te, &dir, &g, &cfg)?;
            pre.ensure_matches(&test_pre)?;
            (train_set, Some(test_set), pre)
        }
        _ => return Err(UsageError("train needs --manifest or --synthetic".into()).into()),
    };
    let arch = train_set.architecture();
    log::info!("training on {} maps of shape {:?}", train_set.len(), train_set.shape());
    let out = train_model(&arch, &train_set, validation.as_ref(), &tc)?;
    let mut manifest = manifest_of(&out.params, &pre);
    manifest.train_config = Some(tc);
    manifest.history = Some(out.history.clone());
    save_checkpoint(&a.out, &out.params, &manifest)?;
    if let Some(h) = &a.history {
        write_text(h, serde_json::to_string_pretty(&out.history)?)?;
    }
    if let Some(last) = out.history.epochs.last() {
        println!(
            "epochs {} loss {:.4} train accuracy {:.3}{}",
            last.epoch,
            last.loss,
            last.train_accuracy,
            last.validation_eer.map(|e| format!(" validation EER {e:.3}")).unwrap_or_default()
        );
    }
    Ok(())
}

pub fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    let manifest = a
        .split
        .manifest
        .as_ref()
        .ok_or_else(|| UsageError("eval needs --manifest".into()))?;
    if a.runs == 0 {
        return Err(UsageError("--runs must be ≥ 1".into()).into());
    }
    let device: Device = usage("device", &a.split.device)?;
    let mode = split_mode(&a.split)?;
    let entries = load_manifest(manifest)?;
    let dir = manifest_dir(manifest);
    let report: EvalReport = match &a.checkpoint {
        Some(path) => {
            // The checkpoint fixes the preprocessing; map flags are not consulted.
            let (params, ckpt) = load_checkpoint(path)?;
            let pre = ckpt.preprocessing;
            let cfg = EvalConfig {
                device,
                mode,
                geometry: pre.geometry.clone(),
                map: pre.map.clone(),
                train: train_config(&a.train, seed)?,
                runs: 1,
            };
            evaluate_checkpoint(&params, &pre, &entries, &dir, &cfg)?
        }
        None => {
            let cfg = EvalConfig {
                device,
                mode,
                geometry: geometry(&a.array)?,
                map: map_config(&a.map, StftConfig::default())?,
                train: train_config(&a.train, seed)?,
                runs: a.runs,
            };
            evaluate(&entries, &dir, &cfg)?
        }
    };
    write_text(&a.out, serde_json::to_string_pretty(&report)?)?;
    for c in &report.cells {
        let ci = c.ci_half_width.map(|h| format!(" ± {:.2}", 100.0 * h)).unwrap_or_default();
        println!(
            "{} {} {:<4} EER {:.2}%{ci} ({} genuine, {} replay)",
            c.device,
            c.mode,
            c.environment,
            100.0 * c.mean,
            c.n_genuine,
            c.n_replay
        );
    }
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let m = load_map(&a.path)?;
    let (k, na, ne) = m.shape();
    let bands: Vec<serde_json::Value> = m
        .bands()
        .bands()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let slice = m.band_slice(i);
            let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
            let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (ai, ei) = m.argmax(i);
            json!({
                "name": b.name,
                "low_hz": b.low_hz,
                "high_hz": b.high_hz,
                "min": min,
                "max": max,
                "argmax": {
                    "azimuth_deg": m.grid().azimuths()[ai],
                    "elevation_deg": m.grid().elevations()[ei],
                },
            })
        })
        .collect();
    let summary = json!({
        "path": a.path.display().to_string(),
        "shape": [k, na, ne],
        "beamformer": m.beamformer(),
        "normalization": m.normalization(),
        "source_id": m.source_id(),
        "bands": bands,
        "warnings": m.warnings(),
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    }
    println!("{}", a.path.display());
    println!("  shape      {k} bands × {na} azimuths × {ne} elevations");
    println!("  beamformer {}", m.beamformer().label());
    println!("  source     {}", m.source_id());
    for b in &bands {
        println!(
            "  {:<10} [{:>7.1}, {:>7.1}) Hz  min {:.4e}  max {:.4e}  argmax az {:+.1}° el {:+.1}°",
            b["name"].as_str().unwrap_or_default(),
            b["low_hz"].as_f64().unwrap_or_default(),
            b["high_hz"].as_f64().unwrap_or_default(),
            b["min"].as_f64().unwrap_or(f64::NAN),
            b["max"].as_f64().unwrap_or(f64::NAN),
            b["argmax"]["azimuth_deg"].as_f64().unwrap_or_default(),
            b["argmax"]["elevation_deg"].as_f64().unwrap_or_default(),
        );
    }
    for w in m.warnings() {
        println!("  warning: {w}");
    }
    Ok(())
}
