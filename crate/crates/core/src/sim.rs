//! Far-field plane-wave recordings with a known direction of arrival.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::MultiChannelSegment;
use crate::error::{Error, Result};
use crate::geometry::{propagation_delay, resolve_geometry, Direction, MicArrayGeometry};
use crate::map::{AcousticMap, AcousticMapper, MapConfig};
use crate::stft::{StftConfig, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceSignal {
    Tone { f_hz: f64 },
    BandlimitedNoise { low_hz: f64, high_hz: f64 },
    /// Harmonic stack `Σ_h (1/h) cos(2π h f0 t + φ_h)` below Nyquist.
    SpeechLike { f0_hz: f64, harmonics: usize },
}

impl FromStr for SourceSignal {
    type Err = Error;

    /// `tone:<hz>`, `noise:<low>-<high>` or `speech:<f0>[:<harmonics>]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse signal '{s}'"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "tone" => Ok(SourceSignal::Tone { f_hz: num(rest)? }),
            "noise" => {
                let (lo, hi) = rest.split_once('-').ok_or_else(bad)?;
                Ok(SourceSignal::BandlimitedNoise {
                    low_hz: num(lo)?,
                    high_hz: num(hi)?,
                })
            }
            "speech" => {
                let (f0, h) = match rest.split_once(':') {
                    Some((f0, h)) => (num(f0)?, h.trim().parse().map_err(|_| bad())?),
                    None => (num(rest)?, 20),
                };
                Ok(SourceSignal::SpeechLike {
                    f0_hz: f0,
                    harmonics: h,
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneWaveSpec {
    pub direction: Direction,
    pub signal: SourceSignal,
    pub amplitude: f64,
    /// White noise added per channel at this SNR; noise-free when absent.
    pub snr_db: Option<f64>,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl PlaneWaveSpec {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::InvalidInput("duration must be positive".into()));
        }
        if self.sample_rate == 0 || !self.amplitude.is_finite() {
            return Err(Error::InvalidInput("sample rate and amplitude must be valid".into()));
        }
        match self.signal {
            SourceSignal::Tone { f_hz } if !(f_hz >= 0.0 && f_hz < nyquist) => Err(Error::InvalidInput(format!(
                "tone {f_hz} Hz must be below Nyquist {nyquist} Hz"
            ))),
            SourceSignal::BandlimitedNoise { low_hz, high_hz }
                if !(low_hz >= 0.0 && low_hz < high_hz && high_hz <= nyquist) =>
            {
                Err(Error::InvalidInput(format!(
                    "noise band [{low_hz}, {high_hz}] must lie within [0, {nyquist}] Hz"
                )))
            }
            SourceSignal::SpeechLike { f0_hz, harmonics } if !(f0_hz > 0.0 && f0_hz < nyquist && harmonics > 0) => {
                Err(Error::InvalidInput("speech-like source needs 0 < f0 < Nyquist and harmonics > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Delays `x` by `delay` samples (any real value) with a phase ramp on a zero-padded
/// FFT buffer. Output has the same length as `x`.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    let pad = delay.abs().ceil() as usize + 1;
    let m = (x.len() + 2 * pad).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    // place the signal after `pad` zeros so negative delays do not wrap either
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (b, &v) in buf[pad..].iter_mut().zip(x) {
        *b = Complex64::new(v, 0.0);
    }
    fwd.process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let signed = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
        let ramp = Complex64::cis(-2.0 * PI * signed * delay / m as f64);
        // the Nyquist bin must stay real for a real output
        *z *= if 2 * k == m { Complex64::new(ramp.re, 0.0) } else { ramp };
    }
    inv.process(&mut buf);
    buf[pad..pad + x.len()].iter().map(|z| z.re / m as f64).collect()
}

fn bandlimited_noise(len: usize, low_hz: f64, high_hz: f64, fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let m = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(m).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let signed = if k <= m / 2 { k as f64 } else { m as f64 - k as f64 };
        let f = signed * fs / m as f64;
        if !(low_hz <= f && f <= high_hz) {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let mut out: Vec<f64> = buf[..len].iter().map(|z| z.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v /= rms;
        }
    }
    out
}

/// Multi-channel recording of a single far-field source.
///
/// Channel `i` is the source delayed by `τ_i = <p_i, u>/c`, the same delay that
/// defines the steering vectors, so delay-and-sum peaks at `spec.direction`.
/// Tones and harmonic stacks are evaluated in closed form at `t - τ_i`; noise is
/// delayed with [`fractional_delay`].
pub fn simulate_plane_wave(g: &MicArrayGeometry, spec: &PlaneWaveSpec, rng: &mut impl Rng) -> Result<MultiChannelSegment> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let len = (spec.duration_s * fs).round().max(1.0) as usize;
    let u = spec.direction.unit_vector();
    let delays: Vec<f64> = g.positions().iter().map(|p| propagation_delay(p, &u)).collect();
    let amp = spec.amplitude;

    let mut channels: Vec<Vec<f64>> = match spec.signal {
        SourceSignal::Tone { f_hz } => delays
            .iter()
            .map(|&tau| {
                (0..len)
                    .map(|n| amp * (2.0 * PI * f_hz * (n as f64 / fs - tau)).cos())
                    .collect()
            })
            .collect(),
        SourceSignal::SpeechLike { f0_hz, harmonics } => {
            let nyquist = fs / 2.0;
            let partials: Vec<(f64, f64, f64)> = (1..=harmonics)
                .map(|h| (h as f64 * f0_hz, 1.0 / h as f64, rng.gen_range(0.0..2.0 * PI)))
                .filter(|(f, _, _)| *f < nyquist)
                .collect();
            let norm: f64 = partials.iter().map(|p| p.1).sum();
            delays
                .iter()
                .map(|&tau| {
                    (0..len)
                        .map(|n| {
                            let t = n as f64 / fs - tau;
                            let s: f64 = partials
                                .iter()
                                .map(|(f, w, phi)| w * (2.0 * PI * f * t + phi).cos())
                                .sum();
                            amp * s / norm
                        })
                        .collect()
                })
                .collect()
        }
        SourceSignal::BandlimitedNoise { low_hz, high_hz } => {
            let margin = delays.iter().map(|d| (d.abs() * fs).ceil() as usize).max().unwrap_or(0) + 16;
            let source = bandlimited_noise(len + 2 * margin, low_hz, high_hz, fs, rng);
            let scale = amp / 2f64.sqrt();
            delays
                .iter()
                .map(|&tau| {
                    fractional_delay(&source, tau * fs)[margin..margin + len]
                        .iter()
                        .map(|v| v * scale)
                        .collect()
                })
                .collect()
        }
    };

    if let Some(snr_db) = spec.snr_db {
        let power = channels.iter().flatten().map(|v| v * v).sum::<f64>() / (channels.len() * len) as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for ch in &mut channels {
            for v in ch.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    MultiChannelSegment::new(channels, spec.sample_rate, "simulated")
}

/// Settings of the synthetic two-class (left vs right hemisphere) dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub geometry: String,
    pub spacing_m: f64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub snr_db: f64,
    /// Absolute azimuth range of the source, degrees.
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub map: MapConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            geometry: "hex-6".into(),
            spacing_m: 0.05,
            sample_rate: 16000,
            duration_s: 0.05,
            snr_db: 20.0,
            azimuth_range: (10.0, 80.0),
            elevation_range: (-40.0, 40.0),
            map: MapConfig {
                stft: StftConfig {
                    n_fft: 256,
                    hop: 128,
                    window: Window::Hann,
                },
                ..MapConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledMap {
    pub map: AcousticMap,
    /// 1 for sources at positive azimuth, 0 for negative.
    pub label: usize,
}

/// Synthetic recording with its hemisphere label.
#[derive(Debug, Clone)]
pub struct LabeledRecording {
    pub segment: MultiChannelSegment,
    /// 1 for sources at positive azimuth, 0 for negative.
    pub label: usize,
    pub direction: Direction,
}

/// `2 · n_per_class` recordings alternating class 0 (azimuth < 0) and class 1
/// (azimuth > 0). Each item draws its own seed from `rng` up front, so the output
/// does not depend on the worker count.
pub fn synthetic_recordings(n_per_class: usize, rng: &mut impl Rng, cfg: &SyntheticConfig) -> Result<Vec<LabeledRecording>> {
    let g = resolve_geometry(&cfg.geometry, cfg.spacing_m)?;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let seeds: Vec<u64> = (0..2 * n_per_class).map(|_| rng.gen()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let label = i % 2;
            let mut item_rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = cfg.azimuth_range;
            let mag = item_rng.gen_range(lo..=hi);
            let az = if label == 1 { mag } else { -mag };
            let (el_lo, el_hi) = cfg.elevation_range;
            let el = item_rng.gen_range(el_lo..=el_hi);
            let signal = if item_rng.gen_bool(0.5) {
                SourceSignal::SpeechLike {
                    f0_hz: item_rng.gen_range(100.0..250.0),
                    harmonics: 40,
                }
            } else {
                SourceSignal::BandlimitedNoise {
                    low_hz: 150.0,
                    high_hz: (0.9 * nyquist).min(7000.0),
                }
            };
            let direction = Direction::new(az, el)?;
            let spec = PlaneWaveSpec {
                direction,
                signal,
                amplitude: item_rng.gen_range(0.1..0.8),
                snr_db: Some(cfg.snr_db),
                duration_s: cfg.duration_s,
                sample_rate: cfg.sample_rate,
            };
            let segment = simulate_plane_wave(&g, &spec, &mut item_rng)?.with_source_id(format!("synthetic-{i}"));
            Ok(LabeledRecording { segment, label, direction })
        })
        .collect()
}

/// [`synthetic_recordings`] turned into maps with `cfg.map`.
pub fn make_synthetic_dataset(n_per_class: usize, rng: &mut impl Rng, cfg: &SyntheticConfig) -> Result<Vec<LabeledMap>> {
    let g = resolve_geometry(&cfg.geometry, cfg.spacing_m)?;
    let mapper = AcousticMapper::new(&g, cfg.sample_rate, cfg.map.clone())?;
    synthetic_recordings(n_per_class, rng, cfg)?
        .par_iter()
        .map(|r| {
            Ok(LabeledMap {
                map: mapper.map(&r.segment)?,
                label: r.label,
            })
        })
        .collect()
}
