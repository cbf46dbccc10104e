//! Manifests, dataset splits, equal error rate and multi-run statistics.
//!
//! Scores follow one convention throughout: higher means more likely genuine.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::geometry::MicArrayGeometry;
use crate::map::{AcousticMapper, MapConfig};
use crate::nn::{dataset_scores, train_model, Dataset, Example, ModelParams, Preprocessing, TrainConfig, GENUINE_CLASS};

pub const MANIFEST_HEADER: [&str; 6] = ["wav_path", "label", "device", "environment", "speaker_id", "split"];

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Parse(format!(
                        concat!("unknown ", stringify!($name), " '{}' (expected one of {:?})"),
                        s,
                        [$($text),+]
                    ))),
                }
            }
        }
    };
}

text_enum!(Label { Genuine => "genuine", Replay => "replay" });
text_enum!(Device { D1 => "D1", D2 => "D2", D3 => "D3", D4 => "D4" });
text_enum!(Environment { EnvA => "EnvA", EnvB => "EnvB", EnvC => "EnvC", EnvD => "EnvD" });
text_enum!(Split { Train => "train", Test => "test" });

impl Label {
    /// Network class index.
    pub fn class_index(&self) -> usize {
        match self {
            Label::Genuine => GENUINE_CLASS,
            Label::Replay => 1 - GENUINE_CLASS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub wav_path: String,
    pub label: Label,
    pub device: Device,
    pub environment: Environment,
    pub speaker_id: String,
    pub split: Split,
}

/// Reads a manifest CSV; errors name the offending line.
pub fn read_manifest(reader: impl std::io::Read) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Parse(format!("manifest header {header:?}, expected {MANIFEST_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse(format!("manifest line {line}: {e}")))?;
        if rec.len() != 6 {
            return Err(Error::Parse(format!("manifest line {line}: expected 6 fields, got {}", rec.len())));
        }
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let wrap = |e: Error| Error::Parse(format!("manifest line {line}: {e}"));
        let entry = ManifestEntry {
            wav_path: field(0).to_string(),
            label: field(1).parse().map_err(wrap)?,
            device: field(2).parse().map_err(wrap)?,
            environment: field(3).parse().map_err(wrap)?,
            speaker_id: field(4).to_string(),
            split: field(5).parse().map_err(wrap)?,
        };
        if entry.wav_path.is_empty() {
            return Err(Error::Parse(format!("manifest line {line}: empty wav_path")));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(f)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        w.write_record([
            e.wav_path.as_str(),
            e.label.as_str(),
            e.device.as_str(),
            e.environment.as_str(),
            e.speaker_id.as_str(),
            e.split.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Relative WAV paths are taken relative to the manifest's directory.
pub fn resolve_wav_path(manifest_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.wav_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "holdout")]
pub enum SplitMode {
    /// Train/test as flagged in the manifest.
    EnvDependent,
    /// Test on one environment, train on the others.
    EnvIndependent(Environment),
}

impl SplitMode {
    pub fn name(&self) -> &'static str {
        match self {
            SplitMode::EnvDependent => "env-dependent",
            SplitMode::EnvIndependent(_) => "env-independent",
        }
    }
}

/// Train and test entries for one device.
pub fn make_splits(entries: &[ManifestEntry], device: Option<Device>, mode: SplitMode) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    let pool: Vec<&ManifestEntry> = entries.iter().filter(|e| device.is_none_or(|d| e.device == d)).collect();
    let (train, test): (Vec<&ManifestEntry>, Vec<&ManifestEntry>) = match mode {
        SplitMode::EnvDependent => pool.into_iter().partition(|e| e.split == Split::Train),
        SplitMode::EnvIndependent(env) => pool.into_iter().partition(|e| e.environment != env),
    };
    let dev = device.map(|d| d.to_string()).unwrap_or_else(|| "all devices".into());
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} split for {dev} leaves an empty side ({} train, {} test)",
            mode.name(),
            train.len(),
            test.len()
        )));
    }
    if mode == SplitMode::EnvDependent {
        for env in Environment::ALL {
            let in_train = train.iter().any(|e| e.environment == *env);
            let in_test = test.iter().any(|e| e.environment == *env);
            if in_train != in_test {
                log::warn!("{env} appears only on the {} side for {dev}", if in_train { "train" } else { "test" });
            }
        }
    }
    Ok((train.into_iter().cloned().collect(), test.into_iter().cloned().collect()))
}

/// Equal error rate and the threshold where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

fn check_scores(genuine: &[f64], replay: &[f64]) -> Result<()> {
    if genuine.is_empty() || replay.is_empty() {
        return Err(Error::InvalidInput(format!(
            "EER needs both classes ({} genuine, {} replay scores)",
            genuine.len(),
            replay.len()
        )));
    }
    if genuine.iter().chain(replay).any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Sweeps thresholds over every distinct score plus `+∞`, with
/// `FAR(θ) = #{replay ≥ θ} / R` and `FRR(θ) = #{genuine < θ} / G`, and linearly
/// interpolates FAR and FRR between the two sweep points where FAR − FRR changes sign.
pub fn compute_eer(genuine: &[f64], replay: &[f64]) -> Result<Eer> {
    check_scores(genuine, replay)?;
    let g = sorted(genuine);
    let r = sorted(replay);
    let (ng, nr) = (g.len() as f64, r.len() as f64);
    let mut thresholds: Vec<f64> = g.iter().chain(&r).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let rates = |t: f64| {
        let far = (r.len() - r.partition_point(|&s| s < t)) as f64 / nr;
        let frr = g.partition_point(|&s| s < t) as f64 / ng;
        (far, frr)
    };
    let mut prev = (thresholds[0], rates(thresholds[0]));
    for &t in &thresholds {
        let (far, frr) = rates(t);
        if far <= frr {
            let d1 = prev.1 .0 - prev.1 .1;
            let d2 = far - frr;
            if d1 == d2 {
                return Ok(Eer { eer: far, threshold: t });
            }
            let w = d1 / (d1 - d2);
            let eer = prev.1 .0 + w * (far - prev.1 .0);
            let threshold = if t.is_finite() { prev.0 + w * (t - prev.0) } else { prev.0 };
            return Ok(Eer { eer, threshold });
        }
        prev = (t, (far, frr));
    }
    unreachable!("FAR(+inf) = 0 ≤ FRR(+inf) = 1")
}

/// ROC as `(FAR, TPR)` from `(0, 0)` to `(1, 1)`, thresholds descending.
pub fn roc_points(genuine: &[f64], replay: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores(genuine, replay)?;
    let g = sorted(genuine);
    let r = sorted(replay);
    let mut thresholds: Vec<f64> = g.iter().chain(&r).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let far = (r.len() - r.partition_point(|&s| s < t)) as f64 / r.len() as f64;
        let tpr = (g.len() - g.partition_point(|&s| s < t)) as f64 / g.len() as f64;
        pts.push((far, tpr));
    }
    Ok(pts)
}

/// Trapezoidal area under [`roc_points`].
pub fn roc_auc(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Two-sided 95% Student-t quantiles for df = 1..=30.
const T95: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
    2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

/// Two-sided 95% t quantile; tabulated to three decimals up to df = 30, a
/// Cornish-Fisher expansion beyond.
pub fn t_quantile_95(df: usize) -> Result<f64> {
    match df {
        0 => Err(Error::InvalidInput("t quantile undefined for 0 degrees of freedom".into())),
        1..=30 => Ok(T95[df - 1]),
        _ => {
            let z: f64 = 1.959_963_984_540_054;
            let n = df as f64;
            Ok(z + (z.powi(3) + z) / (4.0 * n) + (5.0 * z.powi(5) + 16.0 * z.powi(3) + 3.0 * z) / (96.0 * n * n))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub ci_half_width: f64,
}

/// Mean and 95% t-interval half-width `t · s / √n` (sample standard deviation).
pub fn summarize_runs(values: &[f64]) -> Result<RunSummary> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "confidence interval needs at least 2 runs, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite run value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std_dev = var.sqrt();
    Ok(RunSummary {
        values: values.to_vec(),
        mean,
        std_dev,
        ci_half_width: t_quantile_95(values.len() - 1)? * std_dev / n.sqrt(),
    })
}

/// Maps every entry's recording; runs in parallel, output in entry order.
pub fn extract_dataset(
    entries: &[ManifestEntry],
    manifest_dir: &Path,
    geometry: &MicArrayGeometry,
    map: &MapConfig,
) -> Result<(Dataset, Preprocessing)> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("no manifest entries to map".into()));
    }
    let first = read_wav(resolve_wav_path(manifest_dir, &entries[0]))?;
    let fs = first.sample_rate();
    let mapper = AcousticMapper::new(geometry, fs, map.clone())?;
    let examples: Vec<Example> = entries
        .par_iter()
        .map(|e| {
            let path = resolve_wav_path(manifest_dir, e);
            let seg = read_wav(&path)?.with_source_id(e.wav_path.clone());
            let m = mapper.map(&seg).map_err(|err| match err {
                Error::Mismatch(msg) => Error::Mismatch(format!("{}: {msg}", path.display())),
                other => other,
            })?;
            Ok(Example {
                input: m.to_f32(),
                label: e.label.class_index(),
            })
        })
        .collect::<Result<_>>()?;
    let shape = (mapper.bands().len(), mapper.grid().n_azimuths(), mapper.grid().n_elevations());
    Ok((Dataset::new(shape, examples)?, Preprocessing::new(geometry, fs, map)))
}

/// One (device, mode, environment) cell of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub device: Device,
    pub mode: String,
    /// `"all"` for the whole test side, otherwise an environment name.
    pub environment: String,
    pub n_genuine: usize,
    pub n_replay: usize,
    pub eers: Vec<f64>,
    pub mean: f64,
    /// `None` with a single run.
    pub ci_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub beamformer: String,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    pub cells: Vec<ReportCell>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub device: Device,
    pub mode: SplitMode,
    pub geometry: MicArrayGeometry,
    pub map: MapConfig,
    pub train: TrainConfig,
    pub runs: usize,
}

/// Seed of run `i`: runs differ only in training seed.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

fn class_split(scores: &[f64], labels: &[usize], keep: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::new();
    let mut r = Vec::new();
    for (i, (&s, &l)) in scores.iter().zip(labels).enumerate() {
        if !keep(i) {
            continue;
        }
        if l == GENUINE_CLASS {
            g.push(s);
        } else {
            r.push(s);
        }
    }
    (g, r)
}

fn cell_from(device: Device, mode: SplitMode, env: String, eers: Vec<f64>, n_genuine: usize, n_replay: usize) -> Result<ReportCell> {
    let (mean, ci) = if eers.len() >= 2 {
        let s = summarize_runs(&eers)?;
        (s.mean, Some(s.ci_half_width))
    } else {
        (eers[0], None)
    };
    Ok(ReportCell {
        device,
        mode: mode.name().into(),
        environment: env,
        n_genuine,
        n_replay,
        eers,
        mean,
        ci_half_width: ci,
    })
}

/// EER cells from per-run test scores: one for the whole test side, one per
/// environment that holds both classes.
pub fn report_cells(
    device: Device,
    mode: SplitMode,
    run_scores: &[Vec<f64>],
    labels: &[usize],
    environments: &[Environment],
    warnings: &mut Vec<String>,
) -> Result<Vec<ReportCell>> {
    let mut cells = Vec::new();
    let (g, r) = class_split(&run_scores[0], labels, |_| true);
    let eers = run_scores
        .iter()
        .map(|s| {
            let (g, r) = class_split(s, labels, |_| true);
            compute_eer(&g, &r).map(|e| e.eer)
        })
        .collect::<Result<Vec<_>>>()?;
    cells.push(cell_from(device, mode, "all".into(), eers, g.len(), r.len())?);

    let mut by_env: BTreeMap<Environment, Vec<usize>> = BTreeMap::new();
    for (i, e) in environments.iter().enumerate() {
        by_env.entry(*e).or_default().push(i);
    }
    for (env, idx) in by_env {
        let member: std::collections::HashSet<usize> = idx.iter().copied().collect();
        let (g, r) = class_split(&run_scores[0], labels, |i| member.contains(&i));
        if g.is_empty() || r.is_empty() {
            warnings.push(format!(
                "{device} {env}: test side has {} genuine and {} replay entries, no EER",
                g.len(),
                r.len()
            ));
            continue;
        }
        let eers = run_scores
            .iter()
            .map(|s| {
                let (g, r) = class_split(s, labels, |i| member.contains(&i));
                compute_eer(&g, &r).map(|e| e.eer)
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(cell_from(device, mode, env.to_string(), eers, g.len(), r.len())?);
    }
    Ok(cells)
}

fn imbalance_warning(what: &str, counts: [usize; 2]) -> Option<String> {
    let (lo, hi) = (counts[0].min(counts[1]), counts[0].max(counts[1]));
    (hi > 0 && (lo as f64) < 0.25 * hi as f64).then(|| {
        format!("{what} is class-imbalanced ({} genuine, {} replay)", counts[GENUINE_CLASS], counts[1 - GENUINE_CLASS])
    })
}

/// Full protocol for one device: split, map, train `runs` models (seeds
/// `train.seed + i`), score the test side and summarize EERs.
pub fn evaluate(entries: &[ManifestEntry], manifest_dir: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.runs == 0 {
        return Err(Error::InvalidInput("runs must be ≥ 1".into()));
    }
    let (train_entries, test_entries) = make_splits(entries, Some(cfg.device), cfg.mode)?;
    let (train_set, pre_train) = extract_dataset(&train_entries, manifest_dir, &cfg.geometry, &cfg.map)?;
    let (test_set, pre_test) = extract_dataset(&test_entries, manifest_dir, &cfg.geometry, &cfg.map)?;
    pre_train.ensure_matches(&pre_test)?;
    let mut warnings: Vec<String> = [
        imbalance_warning("training side", train_set.class_counts()),
        imbalance_warning("test side", test_set.class_counts()),
    ]
    .into_iter()
    .flatten()
    .collect();
    let arch = train_set.architecture();
    let seeds: Vec<u64> = (0..cfg.runs).map(|i| run_seed(cfg.train.seed, i)).collect();
    let mut run_scores = Vec::with_capacity(cfg.runs);
    for &seed in &seeds {
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let out = train_model(&arch, &train_set, None, &tc)?;
        run_scores.push(dataset_scores(&out.params, &test_set)?);
    }
    let envs: Vec<Environment> = test_entries.iter().map(|e| e.environment).collect();
    let cells = report_cells(cfg.device, cfg.mode, &run_scores, &test_set.labels(), &envs, &mut warnings)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(EvalReport {
        beamformer: cfg.map.beamformer.label().into(),
        seeds,
        n_train: train_set.len(),
        n_test: test_set.len(),
        cells,
        warnings,
    })
}

/// Scores the test side with an already trained model (a single run).
pub fn evaluate_checkpoint(
    params: &ModelParams<f32>,
    checkpoint_pre: &Preprocessing,
    entries: &[ManifestEntry],
    manifest_dir: &Path,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let (_, test_entries) = make_splits(entries, Some(cfg.device), cfg.mode)?;
    let (test_set, pre) = extract_dataset(&test_entries, manifest_dir, &cfg.geometry, &cfg.map)?;
    checkpoint_pre.ensure_matches(&pre)?;
    let scores = dataset_scores(params, &test_set)?;
    let envs: Vec<Environment> = test_entries.iter().map(|e| e.environment).collect();
    let mut warnings: Vec<String> = imbalance_warning("test side", test_set.class_counts()).into_iter().collect();
    let cells = report_cells(cfg.device, cfg.mode, &[scores], &test_set.labels(), &envs, &mut warnings)?;
    Ok(EvalReport {
        beamformer: cfg.map.beamformer.label().into(),
        seeds: vec![],
        n_train: 0,
        n_test: test_set.len(),
        cells,
        warnings,
    })
}

/// Counts per (environment, label), for reporting.
pub fn manifest_summary(entries: &[ManifestEntry]) -> HashMap<(Device, Environment, Label), usize> {
    let mut m = HashMap::new();
    for e in entries {
        *m.entry((e.device, e.environment, e.label)).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive O(n²) sweep: FAR/FRR by direct counting at every candidate,
    /// then the first sign change of FAR − FRR, interpolated.
    fn brute_eer(genuine: &[f64], replay: &[f64]) -> f64 {
        let mut cands: Vec<f64> = genuine.iter().chain(replay).copied().collect();
        cands.push(f64::INFINITY);
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let far = |t: f64| replay.iter().filter(|&&s| s >= t).count() as f64 / replay.len() as f64;
        let frr = |t: f64| genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        for i in 0..cands.len() {
            let (a, b) = (far(cands[i]), frr(cands[i]));
            if a <= b {
                if i == 0 || a == b {
                    return a;
                }
                let (pa, pb) = (far(cands[i - 1]), frr(cands[i - 1]));
                let w = (pa - pb) / ((pa - pb) - (a - b));
                return pa + w * (a - pa);
            }
        }
        unreachable!()
    }

    fn entry(env: Environment, label: Label, split: Split, device: Device, i: usize) -> ManifestEntry {
        ManifestEntry {
            wav_path: format!("wav/{i}.wav"),
            label,
            device,
            environment: env,
            speaker_id: format!("s{}", i % 3),
            split,
        }
    }

    #[test]
    fn eer_examples() {
        assert_eq!(compute_eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap().eer, 0.0);
        assert_eq!(compute_eer(&[0.5; 4], &[0.5; 3]).unwrap().eer, 0.5);
        // one error each side of two: FAR = FRR = 1/2 at θ = 0.6
        let e = compute_eer(&[0.9, 0.4], &[0.6, 0.1]).unwrap();
        assert_eq!(e.eer, 0.5);
        assert_eq!(e.threshold, 0.6);
        assert_eq!(brute_eer(&[0.9, 0.4], &[0.6, 0.1]), 0.5);
        assert!(compute_eer(&[], &[0.1]).is_err());
        assert!(compute_eer(&[0.1], &[f64::NAN]).is_err());
    }

    #[test]
    fn eer_interpolates_between_sweep_points() {
        // θ = 0.3: FAR 1/2, FRR 1/3; θ = 0.7: FAR 0, FRR 1/3; crossing at w = 1/3
        let e = compute_eer(&[0.2, 0.7, 0.9], &[0.1, 0.3]).unwrap();
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-15, "{e:?}");
        assert!((e.threshold - (0.3 + 0.4 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn eer_matches_brute_force_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let ng = rng.gen_range(1..20);
            let nr = rng.gen_range(1..20);
            let quant = rng.gen_bool(0.5);
            let mut draw = |shift: f64| {
                let v: f64 = rng.gen::<f64>() + shift;
                if quant {
                    (v * 5.0).round() / 5.0
                } else {
                    v
                }
            };
            let g: Vec<f64> = (0..ng).map(|_| draw(0.3)).collect();
            let r: Vec<f64> = (0..nr).map(|_| draw(0.0)).collect();
            assert!((compute_eer(&g, &r).unwrap().eer - brute_eer(&g, &r)).abs() < 1e-9);
        }
    }

    #[test]
    fn roc_and_auc() {
        let pts = roc_points(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        assert!(pts.contains(&(0.0, 1.0)));
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let g: Vec<f64> = (0..rng.gen_range(1..15)).map(|_| (rng.gen::<f64>() * 4.0).round()).collect();
            let r: Vec<f64> = (0..rng.gen_range(1..15)).map(|_| (rng.gen::<f64>() * 3.0).round()).collect();
            let pts = roc_points(&g, &r).unwrap();
            for w in pts.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let mut pairs = 0.0;
            for &a in &g {
                for &b in &r {
                    pairs += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
            let oracle = pairs / (g.len() * r.len()) as f64;
            assert!((roc_auc(&pts) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn ci_arithmetic() {
        let s = summarize_runs(&[10.0, 10.0, 10.0, 10.0, 15.0]).unwrap();
        assert!((s.mean - 11.0).abs() < 1e-12);
        assert!((s.std_dev - 5f64.sqrt()).abs() < 1e-12);
        assert!((s.ci_half_width - 2.776).abs() < 1e-9);
        assert_eq!(summarize_runs(&[3.0; 5]).unwrap().ci_half_width, 0.0);
        assert!(summarize_runs(&[1.0]).is_err());
        assert!((t_quantile_95(30).unwrap() - t_quantile_95_expansion(30)).abs() < 1e-3);
        assert!(t_quantile_95(1000).unwrap() > 1.96 && t_quantile_95(1000).unwrap() < 1.963);
    }

    fn t_quantile_95_expansion(df: usize) -> f64 {
        let z: f64 = 1.959_963_984_540_054;
        let n = df as f64;
        z + (z.powi(3) + z) / (4.0 * n) + (5.0 * z.powi(5) + 16.0 * z.powi(3) + 3.0 * z) / (96.0 * n * n)
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let entries = vec![
            entry(Environment::EnvA, Label::Genuine, Split::Train, Device::D3, 0),
            entry(Environment::EnvD, Label::Replay, Split::Test, Device::D1, 1),
        ];
        write_manifest(&entries, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), entries);

        let bad = "wav_path,label,device,environment,speaker_id,split\na.wav,genuine,D1,EnvA,s,train\nb.wav,bogus,D1,EnvA,s,test\n";
        let err = read_manifest(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
        assert!(read_manifest("path,label\nx,genuine\n".as_bytes()).is_err());
        assert!(read_manifest("wav_path,label,device,environment,speaker_id,split\na.wav,genuine,D9,EnvA,s,train\n".as_bytes()).is_err());
    }

    #[test]
    fn env_independent_counts() {
        let mut entries = Vec::new();
        for (k, env) in Environment::ALL.iter().enumerate() {
            for i in 0..10 {
                let label = if i % 2 == 0 { Label::Genuine } else { Label::Replay };
                entries.push(entry(*env, label, Split::Train, Device::D3, k * 10 + i));
            }
        }
        let (train, test) = make_splits(&entries, Some(Device::D3), SplitMode::EnvIndependent(Environment::EnvD)).unwrap();
        assert_eq!((train.len(), test.len()), (30, 10));
        assert!(test.iter().all(|e| e.environment == Environment::EnvD));
        assert!(make_splits(&entries, Some(Device::D1), SplitMode::EnvDependent).is_err());
        assert!(make_splits(&entries, Some(Device::D3), SplitMode::EnvDependent).is_err(), "no test flags");
    }

    #[test]
    fn env_dependent_respects_flags() {
        let entries: Vec<ManifestEntry> = (0..12)
            .map(|i| {
                let split = if i % 3 == 0 { Split::Test } else { Split::Train };
                entry(Environment::ALL[i % 4], Label::Genuine, split, Device::D2, i)
            })
            .collect();
        let (train, test) = make_splits(&entries, None, SplitMode::EnvDependent).unwrap();
        assert!(train.iter().all(|e| e.split == Split::Train));
        assert!(test.iter().all(|e| e.split == Split::Test));
        assert_eq!(train.len() + test.len(), 12);
    }

    #[test]
    fn report_cells_per_environment() {
        let labels = vec![1, 0, 1, 0, 1, 1];
        let envs = vec![
            Environment::EnvA,
            Environment::EnvA,
            Environment::EnvB,
            Environment::EnvB,
            Environment::EnvC,
            Environment::EnvC,
        ];
        let runs = vec![vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.6], vec![0.2, 0.9, 0.8, 0.2, 0.7, 0.6]];
        let mut warnings = Vec::new();
        let cells = report_cells(Device::D3, SplitMode::EnvDependent, &runs, &labels, &envs, &mut warnings).unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].environment, "all");
        assert_eq!(cells[1].environment, "EnvA");
        assert_eq!(cells[1].eers, vec![0.0, 1.0]);
        assert!(cells[1].ci_half_width.unwrap() > 0.0);
        assert_eq!(warnings.len(), 1, "EnvC has no replay");
        let json = serde_json::to_value(&cells[0]).unwrap();
        for key in ["device", "mode", "environment", "eers", "mean", "ci_half_width"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["device"], "D3");
        assert_eq!(json["mode"], "env-dependent");
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_transform(
            g in prop::collection::vec(-5.0f64..5.0, 1..30),
            r in prop::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let base = compute_eer(&g, &r).unwrap().eer;
            let f = |v: &f64| (v * 0.7).exp() * 3.0 + 1.0;
            let g2: Vec<f64> = g.iter().map(f).collect();
            let r2: Vec<f64> = r.iter().map(f).collect();
            prop_assert!((compute_eer(&g2, &r2).unwrap().eer - base).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn eer_symmetric_under_negation_and_swap(
            g in prop::collection::hash_set(-1000i32..1000, 1..25),
            r in prop::collection::hash_set(1000i32..3000, 1..25),
            shift in -2000i32..2000,
        ) {
            // distinct scores (no ties across classes)
            let g: Vec<f64> = g.iter().map(|&v| v as f64).collect();
            let r: Vec<f64> = r.iter().map(|&v| (v + shift) as f64 + 0.5).collect();
            let a = compute_eer(&g, &r).unwrap().eer;
            let ng: Vec<f64> = r.iter().map(|v| -v).collect();
            let nr: Vec<f64> = g.iter().map(|v| -v).collect();
            prop_assert!((compute_eer(&ng, &nr).unwrap().eer - a).abs() < 1e-12);
        }

        #[test]
        fn eer_fixed_point(
            g in prop::collection::vec(0.0f64..1.0, 1..40),
            r in prop::collection::vec(0.0f64..1.0, 1..40),
        ) {
            let e = compute_eer(&g, &r).unwrap();
            let far = r.iter().filter(|&&s| s >= e.threshold).count() as f64 / r.len() as f64;
            let frr = g.iter().filter(|&&s| s < e.threshold).count() as f64 / g.len() as f64;
            let tol = 1.0 / g.len().min(r.len()) as f64 + 1e-12;
            prop_assert!((far - frr).abs() <= tol);
            prop_assert!((far - e.eer).abs() <= tol);
        }

        #[test]
        fn env_independent_splits_partition(
            spec in prop::collection::vec((0usize..4, any::<bool>()), 4..60),
        ) {
            let mut entries: Vec<ManifestEntry> = spec
                .iter()
                .enumerate()
                .map(|(i, &(env, gen))| entry(
                    Environment::ALL[env],
                    if gen { Label::Genuine } else { Label::Replay },
                    Split::Train,
                    Device::D4,
                    i,
                ))
                .collect();
            for (k, env) in Environment::ALL.iter().enumerate() {
                entries.push(entry(*env, Label::Genuine, Split::Train, Device::D4, 1000 + k));
            }
            let mut seen: HashMap<String, usize> = HashMap::new();
            for env in Environment::ALL {
                let (train, test) = make_splits(&entries, Some(Device::D4), SplitMode::EnvIndependent(*env)).unwrap();
                prop_assert_eq!(train.len() + test.len(), entries.len());
                for e in test {
                    *seen.entry(e.wav_path).or_insert(0) += 1;
                }
            }
            prop_assert_eq!(seen.len(), entries.len());
            prop_assert!(seen.values().all(|&c| c == 1));
        }
    }
}
