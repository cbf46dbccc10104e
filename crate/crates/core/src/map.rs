//! Band- and time-averaged acoustic maps.
//!
//! A map is a `K × A × E` tensor: for each frequency band, the mean directional power
//! over the band's STFT bins and over all frames of the segment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::MultiChannelSegment;
use crate::beamform::{BeamformerKind, NarrowbandPowerField, PreparedSegment};
use crate::error::{Error, Result};
use crate::geometry::{AngularGrid, MicArrayGeometry, SteeringField};
use crate::stft::{stft, StftConfig};

/// Half-open frequency interval `[low_hz, high_hz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Band {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Self {
        Self {
            name: name.into(),
            low_hz,
            high_hz,
        }
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        self.low_hz <= f_hz && f_hz < self.high_hz
    }

    /// True when clipping to Nyquist left nothing of the band.
    pub fn is_empty(&self) -> bool {
        self.low_hz >= self.high_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    bands: Vec<Band>,
}

impl BandConfig {
    /// Bands must be sorted, disjoint and each `low < high`.
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        let cfg = Self { bands };
        cfg.validate(false)?;
        Ok(cfg)
    }

    fn validate(&self, allow_empty_bands: bool) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::InvalidInput("at least one band is required".into()));
        }
        for b in &self.bands {
            let ordered = if allow_empty_bands {
                b.low_hz <= b.high_hz
            } else {
                b.low_hz < b.high_hz
            };
            if !(b.low_hz.is_finite() && b.high_hz.is_finite() && b.low_hz >= 0.0 && ordered) {
                return Err(Error::InvalidInput(format!(
                    "band '{}' [{}, {}) is invalid",
                    b.name, b.low_hz, b.high_hz
                )));
            }
        }
        for w in self.bands.windows(2) {
            if w[1].low_hz < w[0].high_hz && !(w[0].is_empty() || w[1].is_empty()) {
                return Err(Error::InvalidInput(format!(
                    "bands '{}' and '{}' overlap or are unsorted",
                    w[0].name, w[1].name
                )));
            }
            if w[1].low_hz < w[0].low_hz {
                return Err(Error::InvalidInput("bands must be sorted".into()));
            }
        }
        Ok(())
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Index of the band containing `f_hz`.
    pub fn band_of(&self, f_hz: f64) -> Option<usize> {
        self.bands.iter().position(|b| b.contains(f_hz))
    }
}

/// Low (100–500 Hz), Mid (500–3000 Hz), High (3000–8000 Hz) and Super-High
/// (8000–22050 Hz), clipped to `[0, fs/2]`. A band entirely above Nyquist is kept
/// as an empty interval so the band count stays four.
pub fn default_bands(sample_rate: u32) -> BandConfig {
    let nyquist = sample_rate as f64 / 2.0;
    let clip = |v: f64| v.min(nyquist);
    let bands = [
        ("low", 100.0, 500.0),
        ("mid", 500.0, 3000.0),
        ("high", 3000.0, 8000.0),
        ("super-high", 8000.0, 22050.0),
    ]
    .into_iter()
    .map(|(name, lo, hi)| Band::new(name, clip(lo), clip(hi)))
    .collect();
    BandConfig { bands }
}

/// Indices of frequencies (from `freqs`) that fall inside each band.
pub fn band_bins(bands: &BandConfig, freqs: &[f64]) -> Vec<Vec<usize>> {
    bands
        .bands()
        .iter()
        .map(|b| (0..freqs.len()).filter(|&k| b.contains(freqs[k])).collect())
        .collect()
}

/// Post-aggregation scaling applied before maps reach the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Normalization {
    None,
    /// Each band divided by its own maximum.
    PerBandMax,
    /// Per-band dB relative to the band maximum, clipped at `floor_db` and mapped to [0, 1].
    PerBandLog { floor_db: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::PerBandMax
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticMap {
    values: Vec<f64>,
    bands: BandConfig,
    grid: AngularGrid,
    beamformer: BeamformerKind,
    source_id: String,
    normalization: Normalization,
    warnings: Vec<String>,
}

impl AcousticMap {
    pub fn from_values(
        values: Vec<f64>,
        bands: BandConfig,
        grid: AngularGrid,
        beamformer: BeamformerKind,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != bands.len() * grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {} bands × {} grid points",
                values.len(),
                bands.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("map values must be finite".into()));
        }
        Ok(Self {
            values,
            bands,
            grid,
            beamformer,
            source_id: source_id.into(),
            normalization: Normalization::None,
            warnings: Vec::new(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bands(&self) -> &BandConfig {
        &self.bands
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn beamformer(&self) -> BeamformerKind {
        self.beamformer
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn set_normalization(&mut self, n: Normalization) {
        self.normalization = n;
    }

    /// `(K, A, E)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bands.len(), self.grid.n_azimuths(), self.grid.n_elevations())
    }

    pub fn get(&self, band: usize, a: usize, e: usize) -> f64 {
        let (_, na, ne) = self.shape();
        self.values[(band * na + a) * ne + e]
    }

    pub fn band_slice(&self, band: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[band * n..(band + 1) * n]
    }

    /// Grid indices of the largest value in `band` (first on ties).
    pub fn argmax(&self, band: usize) -> (usize, usize) {
        let slice = self.band_slice(band);
        let mut best = 0;
        for (i, &v) in slice.iter().enumerate() {
            if v > slice[best] {
                best = i;
            }
        }
        let ne = self.grid.n_elevations();
        (best / ne, best % ne)
    }

    /// Values as `f32` in `[band][az][el]` order.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// `M_m(a,e) = (1 / (|B_m|·T)) Σ_{f∈B_m} Σ_t P(f,t,a,e)`.
///
/// Bands without any frequency of `p` give an all-zero slice and a warning. The
/// result is exactly invariant to the order of frames in `p`.
pub fn aggregate(p: &NarrowbandPowerField, bands: &BandConfig) -> Result<AcousticMap> {
    let grid = p.grid().clone();
    let g = grid.len();
    let t_len = p.n_frames();
    let members = band_bins(bands, p.freqs_hz());
    if members.iter().all(|m| m.is_empty()) {
        return Err(Error::InvalidInput("no frequency falls inside any band".into()));
    }
    let mut values = vec![0.0; bands.len() * g];
    let mut warnings = Vec::new();
    let pv = p.values();
    for (m, bins) in members.iter().enumerate() {
        if bins.is_empty() {
            warnings.push(empty_band_warning(&bands.bands()[m]));
            continue;
        }
        let out = &mut values[m * g..(m + 1) * g];
        let mut frames = vec![0.0; t_len];
        for &fi in bins {
            for (gi, o) in out.iter_mut().enumerate() {
                for (t, slot) in frames.iter_mut().enumerate() {
                    *slot = pv[(fi * t_len + t) * g + gi];
                }
                // summing in sorted order makes the result independent of frame order
                frames.sort_unstable_by(f64::total_cmp);
                *o += frames.iter().sum::<f64>();
            }
        }
        let denom = (bins.len() * t_len) as f64;
        for o in out.iter_mut() {
            *o /= denom;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut map = AcousticMap::from_values(values, bands.clone(), grid, p.kind(), p.source_id())?;
    map.warnings = warnings;
    Ok(map)
}

fn empty_band_warning(b: &Band) -> String {
    format!(
        "band '{}' [{}, {}) Hz contains no STFT bins; slice left at zero",
        b.name, b.low_hz, b.high_hz
    )
}

/// Divides each band slice by its own maximum; all-zero slices are left alone.
pub fn normalize(m: &AcousticMap) -> AcousticMap {
    let mut out = m.clone();
    let g = out.grid.len();
    for slice in out.values.chunks_mut(g) {
        let peak = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak > 0.0 {
            for v in slice.iter_mut() {
                *v /= peak;
            }
        }
    }
    out.normalization = Normalization::PerBandMax;
    out
}

/// Per-band dB relative to the band maximum, clipped at `floor_db` (< 0) and rescaled to [0, 1].
pub fn log_compress(m: &AcousticMap, floor_db: f64) -> AcousticMap {
    let mut out = m.clone();
    let g = out.grid.len();
    for slice in out.values.chunks_mut(g) {
        let peak = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if peak > 0.0 {
            for v in slice.iter_mut() {
                let db = if *v > 0.0 {
                    (10.0 * (*v / peak).log10()).max(floor_db)
                } else {
                    floor_db
                };
                *v = (db - floor_db) / -floor_db;
            }
        }
    }
    out.normalization = Normalization::PerBandLog { floor_db };
    out
}

pub fn apply_normalization(m: &AcousticMap, n: Normalization) -> AcousticMap {
    match n {
        Normalization::None => m.clone(),
        Normalization::PerBandMax => normalize(m),
        Normalization::PerBandLog { floor_db } => log_compress(m, floor_db),
    }
}

/// Everything needed to turn a recording into a classifier-ready map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub stft: StftConfig,
    pub beamformer: BeamformerKind,
    pub n_azimuths: usize,
    pub n_elevations: usize,
    /// Explicit bands; the four default bands (clipped to Nyquist) when absent.
    pub bands: Option<BandConfig>,
    pub normalization: Normalization,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            beamformer: BeamformerKind::DelayAndSum,
            n_azimuths: crate::geometry::DEFAULT_AZIMUTHS,
            n_elevations: crate::geometry::DEFAULT_ELEVATIONS,
            bands: None,
            normalization: Normalization::PerBandMax,
        }
    }
}

impl MapConfig {
    pub fn grid(&self) -> Result<AngularGrid> {
        AngularGrid::uniform(self.n_azimuths, self.n_elevations)
    }

    pub fn bands_for(&self, sample_rate: u32) -> BandConfig {
        self.bands.clone().unwrap_or_else(|| default_bands(sample_rate))
    }
}

/// Reusable map extractor for one (geometry, sample rate, config).
///
/// Steering vectors for all in-band bins are computed once. Band sums are accumulated
/// per grid point directly, so the `F × T × A × E` power tensor is never materialized.
/// Agrees with `aggregate(power_field(..))` up to summation-order rounding.
pub struct AcousticMapper {
    config: MapConfig,
    sample_rate: u32,
    bands: BandConfig,
    steering: SteeringField,
    /// Band index of each steering frequency.
    band_of: Vec<usize>,
    bins_per_band: Vec<usize>,
}

impl AcousticMapper {
    pub fn new(geometry: &MicArrayGeometry, sample_rate: u32, config: MapConfig) -> Result<Self> {
        config.stft.validate()?;
        config.beamformer.validate()?;
        let grid = config.grid()?;
        let bands = config.bands_for(sample_rate);
        let freqs: Vec<f64> = (0..config.stft.n_bins())
            .map(|k| config.stft.bin_frequency(k, sample_rate))
            .collect();
        let mut selected = Vec::new();
        let mut band_of = Vec::new();
        let mut bins_per_band = vec![0; bands.len()];
        for &f in &freqs {
            if let Some(m) = bands.band_of(f) {
                selected.push(f);
                band_of.push(m);
                bins_per_band[m] += 1;
            }
        }
        if selected.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no STFT bin at {sample_rate} Hz falls inside any band"
            )));
        }
        for (b, &n) in bands.bands().iter().zip(&bins_per_band) {
            if n == 0 {
                log::warn!("{}", empty_band_warning(b));
            }
        }
        let steering = SteeringField::build(geometry, &grid, &selected)?;
        Ok(Self {
            config,
            sample_rate,
            bands,
            steering,
            band_of,
            bins_per_band,
        })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn bands(&self) -> &BandConfig {
        &self.bands
    }

    pub fn grid(&self) -> &AngularGrid {
        self.steering.grid()
    }

    pub fn steering(&self) -> &SteeringField {
        &self.steering
    }

    /// Un-normalized band/time-averaged map.
    pub fn raw_map(&self, seg: &MultiChannelSegment) -> Result<AcousticMap> {
        if seg.sample_rate() != self.sample_rate {
            return Err(Error::Mismatch(format!(
                "segment is {} Hz, mapper was built for {} Hz",
                seg.sample_rate(),
                self.sample_rate
            )));
        }
        if seg.channel_count() != self.steering.channel_count() {
            return Err(Error::Mismatch(format!(
                "segment has {} channels, geometry '{}' has {}",
                seg.channel_count(),
                self.steering.geometry().name(),
                self.steering.channel_count()
            )));
        }
        let x = stft(seg, &self.config.stft)?;
        let prep = PreparedSegment::new(&x, &self.steering, self.config.beamformer)?;
        let (nf, na, ne, _) = self.steering.shape();
        let k = self.bands.len();
        let t_len = prep.n_frames;

        // rows[a] holds K × E accumulators for azimuth a
        let mut rows = vec![0.0; na * k * ne];
        rows.par_chunks_mut(k * ne).enumerate().for_each(|(a, acc)| {
            for fi in 0..nf {
                let m = self.band_of[fi];
                for e in 0..ne {
                    let steer = self.steering.vector(fi, a, e);
                    let slot = &mut acc[m * ne + e];
                    prep.for_each_frame(fi, steer, |p| *slot += p);
                }
            }
        });

        let mut values = vec![0.0; k * na * ne];
        let mut warnings = Vec::new();
        for m in 0..k {
            let count = self.bins_per_band[m];
            if count == 0 {
                warnings.push(empty_band_warning(&self.bands.bands()[m]));
                continue;
            }
            let denom = (count * t_len) as f64;
            for a in 0..na {
                for e in 0..ne {
                    values[(m * na + a) * ne + e] = rows[(a * k + m) * ne + e] / denom;
                }
            }
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite map value {bad}")));
        }
        for w in &warnings {
            log::debug!("{}: {w}", seg.source_id());
        }
        let mut map = AcousticMap::from_values(
            values,
            self.bands.clone(),
            self.grid().clone(),
            self.config.beamformer,
            seg.source_id(),
        )?;
        map.warnings = warnings;
        Ok(map)
    }

    /// Map with the configured normalization applied.
    pub fn map(&self, seg: &MultiChannelSegment) -> Result<AcousticMap> {
        Ok(apply_normalization(&self.raw_map(seg)?, self.config.normalization))
    }

    /// The full narrowband power tensor for `seg` (memory heavy on large grids).
    pub fn power_field(&self, seg: &MultiChannelSegment) -> Result<NarrowbandPowerField> {
        let x = stft(seg, &self.config.stft)?;
        let p = crate::beamform::narrowband_power(&x, &self.steering, self.config.beamformer)?;
        NarrowbandPowerField::from_values(
            p.values().to_vec(),
            p.freqs_hz().to_vec(),
            p.n_frames(),
            p.grid().clone(),
            p.kind(),
            seg.source_id(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: Vec<f64>, freqs: Vec<f64>, t: usize, grid: AngularGrid) -> NarrowbandPowerField {
        NarrowbandPowerField::from_values(values, freqs, t, grid, BeamformerKind::DelayAndSum, "p").unwrap()
    }

    fn one_band(lo: f64, hi: f64) -> BandConfig {
        BandConfig::new(vec![Band::new("b", lo, hi)]).unwrap()
    }

    #[test]
    fn constant_power_averages_to_constant() {
        let grid = AngularGrid::uniform(3, 2).unwrap();
        let p = field(vec![2.5; 4 * 3 * 6], vec![100.0, 200.0, 300.0, 400.0], 3, grid);
        let m = aggregate(&p, &one_band(0.0, 1000.0)).unwrap();
        assert!(m.values().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn two_bins_average() {
        let grid = AngularGrid::uniform(1, 1).unwrap();
        let p = field(vec![2.0, 4.0], vec![100.0, 200.0], 1, grid);
        let m = aggregate(&p, &one_band(0.0, 1000.0)).unwrap();
        assert_eq!(m.values(), &[3.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = AngularGrid::uniform(4, 3).unwrap();
        let freqs: Vec<f64> = (0..12).map(|k| 50.0 + 700.0 * k as f64).collect();
        let t_len = 5;
        let values: Vec<f64> = (0..freqs.len() * t_len * grid.len()).map(|_| rng.gen()).collect();
        let p = field(values, freqs.clone(), t_len, grid.clone());
        let bands = default_bands(16000);
        let m = aggregate(&p, &bands).unwrap();
        for (bi, band) in bands.bands().iter().enumerate() {
            for a in 0..4 {
                for e in 0..3 {
                    let mut sum = 0.0;
                    let mut count = 0;
                    for (fi, f) in freqs.iter().enumerate() {
                        if band.low_hz <= *f && *f < band.high_hz {
                            count += 1;
                            for t in 0..t_len {
                                sum += p.get(fi, t, a, e);
                            }
                        }
                    }
                    let want = if count == 0 { 0.0 } else { sum / (count * t_len) as f64 };
                    assert!((m.get(bi, a, e) - want).abs() < 1e-12);
                }
            }
        }
        assert_eq!(m.warnings().len(), 2, "low band holds no bin, super-high clipped away");
    }

    #[test]
    fn frame_permutation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let grid = AngularGrid::uniform(3, 2).unwrap();
        let g = grid.len();
        let t_len = 7;
        let freqs = vec![300.0, 400.0, 900.0];
        let values: Vec<f64> = (0..freqs.len() * t_len * g).map(|_| rng.gen::<f64>() * 1e3).collect();
        let p = field(values.clone(), freqs.clone(), t_len, grid.clone());
        let bands = one_band(0.0, 1000.0);
        let base = aggregate(&p, &bands).unwrap();
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..t_len).collect();
            for i in (1..t_len).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let mut shuffled = vec![0.0; values.len()];
            for f in 0..freqs.len() {
                for (t_new, &t_old) in perm.iter().enumerate() {
                    let dst = (f * t_len + t_new) * g;
                    let src = (f * t_len + t_old) * g;
                    shuffled[dst..dst + g].copy_from_slice(&values[src..src + g]);
                }
            }
            let q = field(shuffled, freqs.clone(), t_len, grid.clone());
            assert_eq!(aggregate(&q, &bands).unwrap().values(), base.values());
        }
    }

    #[test]
    fn aggregate_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let grid = AngularGrid::uniform(2, 3).unwrap();
        let n = 2 * 3 * grid.len();
        let x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let (a, b) = (0.3, 2.0);
        let z: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let bands = one_band(0.0, 1000.0);
        let freqs = vec![200.0, 700.0];
        let mx = aggregate(&field(x, freqs.clone(), 3, grid.clone()), &bands).unwrap();
        let my = aggregate(&field(y, freqs.clone(), 3, grid.clone()), &bands).unwrap();
        let mz = aggregate(&field(z, freqs, 3, grid), &bands).unwrap();
        for ((u, v), w) in mx.values().iter().zip(my.values()).zip(mz.values()) {
            assert!((a * u + b * v - w).abs() < 1e-12);
        }
    }

    #[test]
    fn all_bands_empty_is_an_error() {
        let grid = AngularGrid::uniform(1, 1).unwrap();
        let p = field(vec![1.0], vec![50.0], 1, grid);
        assert!(aggregate(&p, &one_band(100.0, 200.0)).is_err());
    }

    #[test]
    fn default_band_edges() {
        let b = default_bands(44100);
        let edges: Vec<(f64, f64)> = b.bands().iter().map(|b| (b.low_hz, b.high_hz)).collect();
        assert_eq!(edges, vec![(100.0, 500.0), (500.0, 3000.0), (3000.0, 8000.0), (8000.0, 22050.0)]);

        let b = default_bands(16000);
        assert!(b.bands()[3].is_empty());
        assert!(!b.bands()[2].is_empty());

        let b = default_bands(8000);
        assert_eq!((b.bands()[2].low_hz, b.bands()[2].high_hz), (3000.0, 4000.0));
        assert!(b.bands()[3].is_empty());
    }

    #[test]
    fn band_config_validation() {
        assert!(BandConfig::new(vec![]).is_err());
        assert!(BandConfig::new(vec![Band::new("a", 500.0, 100.0)]).is_err());
        assert!(BandConfig::new(vec![Band::new("a", 100.0, 600.0), Band::new("b", 500.0, 900.0)]).is_err());
        assert!(BandConfig::new(vec![Band::new("a", 100.0, 500.0), Band::new("b", 500.0, 900.0)]).is_ok());
        let b = BandConfig::new(vec![Band::new("a", 100.0, 500.0), Band::new("b", 500.0, 900.0)]).unwrap();
        assert_eq!(b.band_of(500.0), Some(1));
        assert_eq!(b.band_of(499.9), Some(0));
        assert_eq!(b.band_of(900.0), None);
    }

    fn map_of(values: Vec<f64>, k: usize, grid: AngularGrid) -> AcousticMap {
        let bands = BandConfig::new(
            (0..k).map(|i| Band::new(format!("b{i}"), 100.0 * (i + 1) as f64, 100.0 * (i + 2) as f64)).collect(),
        )
        .unwrap();
        AcousticMap::from_values(values, bands, grid, BeamformerKind::DelayAndSum, "m").unwrap()
    }

    #[test]
    fn normalize_per_band() {
        let grid = AngularGrid::uniform(2, 2).unwrap();
        let m = map_of(vec![1.0, 5.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0], 2, grid);
        let n = normalize(&m);
        assert_eq!(&n.values()[..4], &[0.2, 1.0, 0.4, 0.6]);
        assert_eq!(&n.values()[4..], &[0.0; 4]);
        assert_eq!(n.argmax(0), m.argmax(0));
        assert_eq!(normalize(&n).values(), n.values());
        assert_eq!(n.normalization(), Normalization::PerBandMax);
    }

    #[test]
    fn log_compress_range() {
        let grid = AngularGrid::uniform(2, 2).unwrap();
        let m = map_of(vec![1.0, 10.0, 0.0, 1e-9], 1, grid);
        let l = log_compress(&m, -60.0);
        assert!((l.values()[0] - 50.0 / 60.0).abs() < 1e-12);
        assert_eq!(l.values()[1], 1.0);
        assert_eq!(l.values()[2], 0.0);
        assert_eq!(l.values()[3], 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let grid = AngularGrid::uniform(2, 2).unwrap();
        let bands = one_band(0.0, 10.0);
        assert!(AcousticMap::from_values(vec![0.0; 3], bands, grid, BeamformerKind::DelayAndSum, "x").is_err());
    }
}
